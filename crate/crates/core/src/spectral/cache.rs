//! On-disk cache of partial spectra keyed by (graph hash, cutoff, seed).
//!
//! Layout (little endian): magic `LPSPEC01`, u64 rows, u64 cutoff,
//! u64 seed, u64 hash length, hash bytes, cutoff f64 eigenvalues, then the
//! eigenvector matrix column-major.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use super::{graph_spectrum, PartialSpectrum};
use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;

const MAGIC: &[u8; 8] = b"LPSPEC01";

pub fn cache_path(dir: &Path, graph_hash: &str, phi: usize, seed: u64) -> PathBuf {
    let short = &graph_hash[..graph_hash.len().min(16)];
    dir.join(format!("spectrum-{short}-phi{phi}-seed{seed}.bin"))
}

pub fn save_spectrum(path: &Path, spec: &PartialSpectrum, graph_hash: &str, seed: u64) -> Result<()> {
    let mut buf = Vec::with_capacity(48 + 8 * spec.cutoff() * (spec.dim() + 1));
    buf.extend_from_slice(MAGIC);
    for v in [spec.dim() as u64, spec.cutoff() as u64, seed, graph_hash.len() as u64] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(graph_hash.as_bytes());
    for v in spec.eigenvalues() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in spec.eigenvectors().as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    fs::File::create(&tmp)?.write_all(&buf)?;
    fs::rename(tmp, path)?;
    Ok(())
}

/// Loads a cached spectrum; the stored hash and seed must match.
pub fn load_spectrum(path: &Path, graph_hash: &str, seed: u64) -> Result<PartialSpectrum> {
    let bad = |message: &str| Error::Format {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 40 || &bytes[..8] != MAGIC {
        return Err(bad("not a spectrum cache file"));
    }
    let word = |k: usize| u64::from_le_bytes(bytes[8 + 8 * k..16 + 8 * k].try_into().unwrap());
    let (rows, cutoff, stored_seed, hash_len) = (word(0) as usize, word(1) as usize, word(2), word(3) as usize);
    let body = 40 + hash_len;
    let want = body + 8 * cutoff * (rows + 1);
    if bytes.len() != want {
        return Err(bad("truncated file"));
    }
    if &bytes[40..body] != graph_hash.as_bytes() || stored_seed != seed {
        return Err(bad("cache key mismatch"));
    }
    let floats: Vec<f64> = bytes[body..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let values = floats[..cutoff].to_vec();
    let vectors = DMatrix::from_column_slice(rows, cutoff, &floats[cutoff..]);
    PartialSpectrum::from_parts(values, vectors)
}

/// Returns the cached spectrum for `g` if present, otherwise computes and
/// stores it.
pub fn load_or_compute(dir: &Path, g: &BipartiteGraph, phi: usize, seed: u64) -> Result<PartialSpectrum> {
    let hash = g.content_hash();
    let path = cache_path(dir, &hash, phi, seed);
    if path.exists() {
        if let Ok(spec) = load_spectrum(&path, &hash, seed) {
            return Ok(spec);
        }
    }
    let spec = graph_spectrum(g, phi, seed)?;
    save_spectrum(&path, &spec, &hash, seed)?;
    Ok(spec)
}
