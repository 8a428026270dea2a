use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ClientStats;
use crate::error::{Error, Result};
use crate::graph::{graph_laplacian, BipartiteGraph};
use crate::spectral::{effective_cutoff, lanczos_partial_eigs, SpectralKernel};

/// Random bipartite graph family for the reference graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceModel {
    /// Every user-item pair independently with `p = edges/(users·items)`.
    Er,
    /// Exactly `edges` distinct uniform user-item pairs.
    Gnmk,
}

impl fmt::Display for ReferenceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReferenceModel::Er => "er",
            ReferenceModel::Gnmk => "gnmk",
        })
    }
}

impl FromStr for ReferenceModel {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "er" => Ok(ReferenceModel::Er),
            "gnmk" => Ok(ReferenceModel::Gnmk),
            other => Err(format!("unknown reference model `{other}` (expected er or gnmk)")),
        }
    }
}

pub fn generate_reference_graph(stats: ClientStats, model: ReferenceModel, seed: u64) -> Result<BipartiteGraph> {
    let (m, n, e) = (stats.num_users, stats.num_items, stats.num_edges);
    if m == 0 || n == 0 || e == 0 {
        return Err(Error::InvalidArgument(format!("reference statistics must be positive: {stats:?}")));
    }
    let pairs = m.checked_mul(n).ok_or_else(|| Error::InvalidArgument("reference graph too large".into()))?;
    if e > pairs {
        return Err(Error::InvalidArgument(format!("{e} edges requested but only {pairs} user-item pairs exist")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges: Vec<(usize, usize)> = match model {
        ReferenceModel::Gnmk => sample(&mut rng, pairs, e).into_iter().map(|k| (k / n, k % n)).collect(),
        ReferenceModel::Er => {
            let p = e as f64 / pairs as f64;
            (0..pairs).filter(|_| rng.random::<f64>() < p).map(|k| (k / n, k % n)).collect()
        }
    };
    BipartiteGraph::new(m, n, edges)
}

/// Kernel of the reference graph's normalized Laplacian; isolated nodes
/// must already be removed.
pub fn compute_reference_kernel(g_r: &BipartiteGraph, phi: usize, seed: u64, epsilon: f64) -> Result<SpectralKernel> {
    let l = graph_laplacian(g_r)?;
    let spec = lanczos_partial_eigs(&l, effective_cutoff(g_r.num_nodes(), phi), seed)?;
    SpectralKernel::extract(&spec, epsilon)
}
