//! Versioned binary checkpoint of a whole federation.
//!
//! Layout: magic, u64 version, u64 completed rounds, u64 seed, server
//! pooling and predictive networks, f64 global margin, u64 client count,
//! then per client: u64 id, f64 local margin, u64 flag + f64 received
//! margin, parameters, optimizer accumulators.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::ServerState;
use crate::error::{Error, Result};
use crate::model::{
    get_f64, get_u64, put_f64, put_u64, read_mlp, read_params, write_mlp, write_params, ClientState, ModelParams,
    CHECKPOINT_VERSION,
};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LPFRCKPT";

pub fn save_checkpoint(path: &Path, server: &ServerState, clients: &[ClientState]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u64(&mut w, CHECKPOINT_VERSION)?;
    put_u64(&mut w, server.round as u64)?;
    put_u64(&mut w, server.rng_seed)?;
    write_mlp(&mut w, &server.global.pooling)?;
    write_mlp(&mut w, &server.global.predictive)?;
    put_f64(&mut w, server.global.margin)?;
    put_u64(&mut w, clients.len() as u64)?;
    for c in clients {
        put_u64(&mut w, c.id as u64)?;
        put_f64(&mut w, c.local_margin_avg)?;
        put_u64(&mut w, c.received_global_margin.is_some() as u64)?;
        put_f64(&mut w, c.received_global_margin.unwrap_or(0.0))?;
        write_params(&mut w, &c.params)?;
        write_params(&mut w, &c.optimizer_state)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-client part of a checkpoint.
pub struct ClientCheckpoint {
    pub id: usize,
    pub local_margin_avg: f64,
    pub received_global_margin: Option<f64>,
    pub params: ModelParams,
    pub optimizer_state: ModelParams,
}

/// Restores the server state and overwrites the trainable state of
/// `clients` (which must match the checkpoint in number, order and shape).
pub fn load_checkpoint(path: &Path, server: &mut ServerState, clients: &mut [ClientState]) -> Result<()> {
    let bad = |m: String| Error::Format {
        path: path.to_path_buf(),
        message: m,
    };
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let version = get_u64(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    server.round = get_u64(&mut r)? as usize;
    server.rng_seed = get_u64(&mut r)?;
    server.global.pooling = read_mlp(&mut r)?;
    server.global.predictive = read_mlp(&mut r)?;
    server.global.margin = get_f64(&mut r)?;
    let count = get_u64(&mut r)? as usize;
    if count != clients.len() {
        return Err(Error::ShapeMismatch(format!("checkpoint has {count} clients, configuration has {}", clients.len())));
    }
    for c in clients.iter_mut() {
        let cp = ClientCheckpoint {
            id: get_u64(&mut r)? as usize,
            local_margin_avg: get_f64(&mut r)?,
            received_global_margin: {
                let flag = get_u64(&mut r)?;
                let v = get_f64(&mut r)?;
                (flag == 1).then_some(v)
            },
            params: read_params(&mut r)?,
            optimizer_state: read_params(&mut r)?,
        };
        if cp.id != c.id {
            return Err(Error::ShapeMismatch(format!("checkpoint client {} where {} expected", cp.id, c.id)));
        }
        let restored = c.clone().with_params(cp.params)?;
        *c = restored;
        c.optimizer_state = cp.optimizer_state;
        c.local_margin_avg = cp.local_margin_avg;
        c.received_global_margin = cp.received_global_margin;
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(bad("trailing bytes".into()));
    }
    Ok(())
}
