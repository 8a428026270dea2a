//! Binary encoding of model parameters.
//!
//! All integers are u64 and all reals f64, little endian. A parameter block
//! is: rows, embed dim, layer count, cutoff, then the four MLPs (layer count
//! followed by each layer's in/out dims), then every tensor in
//! `ModelParams::tensors` order.

use std::io::{Read, Write};

use nalgebra::DMatrix;

use super::mlp::{Layer, MlpParams};
use super::state::ModelParams;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u64 = 1;

pub(crate) fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn put_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn get_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn get_len<R: Read>(r: &mut R) -> Result<usize> {
    let v = get_u64(r)?;
    if v > (1 << 32) {
        return Err(Error::ShapeMismatch(format!("implausible size {v} in checkpoint")));
    }
    Ok(v as usize)
}

pub(crate) fn put_mlp_shape<W: Write>(w: &mut W, m: &MlpParams) -> Result<()> {
    put_u64(w, m.layers.len() as u64)?;
    for l in &m.layers {
        put_u64(w, l.weight.nrows() as u64)?;
        put_u64(w, l.weight.ncols() as u64)?;
    }
    Ok(())
}

pub(crate) fn get_mlp_shape<R: Read>(r: &mut R) -> Result<MlpParams> {
    let n = get_len(r)?;
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let (i, o) = (get_len(r)?, get_len(r)?);
        layers.push(Layer {
            weight: DMatrix::zeros(i, o),
            bias: vec![0.0; o],
        });
    }
    Ok(MlpParams { layers })
}

/// Shape header followed by the tensors of one network.
pub fn write_mlp<W: Write>(w: &mut W, m: &MlpParams) -> Result<()> {
    put_mlp_shape(w, m)?;
    for t in m.tensors() {
        for &v in t {
            put_f64(w, v)?;
        }
    }
    Ok(())
}

pub fn read_mlp<R: Read>(r: &mut R) -> Result<MlpParams> {
    let mut m = get_mlp_shape(r)?;
    for t in m.tensors_mut() {
        for v in t.iter_mut() {
            *v = get_f64(r)?;
        }
    }
    Ok(m)
}

pub fn write_params<W: Write>(w: &mut W, p: &ModelParams) -> Result<()> {
    put_u64(w, p.embeddings.nrows() as u64)?;
    put_u64(w, p.embeddings.ncols() as u64)?;
    put_u64(w, p.layer_kernels.len() as u64)?;
    put_u64(w, p.layer_kernels.first().map_or(0, |k| k.len()) as u64)?;
    for m in [&p.pooling, &p.predictive, &p.user_bias, &p.item_bias] {
        put_mlp_shape(w, m)?;
    }
    for t in p.tensors() {
        for &v in t {
            put_f64(w, v)?;
        }
    }
    Ok(())
}

pub fn read_params<R: Read>(r: &mut R) -> Result<ModelParams> {
    let (rows, dim, layers, cutoff) = (get_len(r)?, get_len(r)?, get_len(r)?, get_len(r)?);
    let mut p = ModelParams {
        embeddings: DMatrix::zeros(rows, dim),
        layer_kernels: vec![vec![0.0; cutoff]; layers],
        pooling: get_mlp_shape(r)?,
        predictive: get_mlp_shape(r)?,
        user_bias: get_mlp_shape(r)?,
        item_bias: get_mlp_shape(r)?,
    };
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v = get_f64(r)?;
        }
    }
    Ok(p)
}
