//! Seeded interaction generator with communities, latent tastes and a
//! popularity skew, for runs without a downloaded dataset.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::RawInteractions;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub users: usize,
    pub items: usize,
    pub communities: usize,
    pub mean_degree: f64,
    pub min_degree: usize,
    pub latent_dim: usize,
    /// Weight of the taste match `x_u·y_i` in the choice logits.
    pub affinity: f64,
    /// Zipf exponent of item popularity; enters the logits as `skew·log p_i`.
    pub popularity_skew: f64,
    /// Community sizes fall off as `(k+1)^-spread`.
    pub size_spread: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            users: 600,
            items: 800,
            communities: 4,
            mean_degree: 24.0,
            min_degree: 5,
            latent_dim: 8,
            affinity: 1.5,
            popularity_skew: 0.8,
            size_spread: 0.7,
            seed: 0,
        }
    }
}

fn pick<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let mut t = rng.random::<f64>() * weights.iter().sum::<f64>();
    for (k, w) in weights.iter().enumerate() {
        if t < *w {
            return k;
        }
        t -= w;
    }
    weights.len() - 1
}

pub fn synthetic_interactions(cfg: &SyntheticConfig) -> Result<RawInteractions> {
    if cfg.users == 0 || cfg.items < 2 || cfg.communities == 0 || cfg.latent_dim == 0 || cfg.mean_degree <= 0.0 {
        return Err(Error::Generation(format!("invalid synthetic configuration {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.communities;
    let d = cfg.latent_dim;
    let sizes: Vec<f64> = (0..k).map(|c| ((c + 1) as f64).powf(-cfg.size_spread)).collect();
    let mean_size = sizes.iter().sum::<f64>() / k as f64;
    let density: Vec<f64> = sizes.iter().map(|s| (s / mean_size).sqrt()).collect();

    let centers = DMatrix::from_fn(k, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let latent = |count: usize, rng: &mut ChaCha8Rng| {
        let comm: Vec<usize> = (0..count).map(|_| pick(&sizes, rng)).collect();
        let m = DMatrix::from_fn(count, d, |r, c| centers[(comm[r], c)] + 0.6 * rng.sample::<f64, _>(StandardNormal));
        (comm, m)
    };
    let (user_comm, x) = latent(cfg.users, &mut rng);
    let (_, y) = latent(cfg.items, &mut rng);

    let mut rank: Vec<usize> = (0..cfg.items).collect();
    for r in (1..rank.len()).rev() {
        rank.swap(r, rng.random_range(0..=r));
    }
    let log_pop: Vec<f64> = rank.iter().map(|&r| -cfg.popularity_skew * ((r + 1) as f64).ln()).collect();

    let scale = 1.0 / (d as f64).sqrt();
    let max_degree = (cfg.items / 2).max(1);
    let mut pairs = Vec::new();
    for u in 0..cfg.users {
        let mean = cfg.mean_degree * density[user_comm[u]];
        let dist = LogNormal::new(mean.ln() - 0.125, 0.5).map_err(|e| Error::Generation(e.to_string()))?;
        let deg = (dist.sample(&mut rng).round() as usize).clamp(cfg.min_degree.min(max_degree), max_degree);
        // Gumbel top-k draws `deg` distinct items from softmax(logits)
        let mut keyed: Vec<(f64, usize)> = (0..cfg.items)
            .map(|i| {
                let logit = cfg.affinity * scale * x.row(u).dot(&y.row(i)) + log_pop[i];
                let g = -(-rng.random::<f64>().max(f64::MIN_POSITIVE).ln()).ln();
                (logit + g, i)
            })
            .collect();
        keyed.select_nth_unstable_by(deg - 1, |a, b| b.0.total_cmp(&a.0));
        for &(_, i) in &keyed[..deg] {
            pairs.push((format!("u{u}"), format!("i{i}")));
        }
    }
    Ok(RawInteractions::from_pairs(pairs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_sized() {
        let cfg = SyntheticConfig {
            users: 100,
            items: 120,
            ..SyntheticConfig::default()
        };
        let a = synthetic_interactions(&cfg).unwrap();
        assert_eq!(a, synthetic_interactions(&cfg).unwrap());
        assert_eq!(a.num_users(), 100);
        assert!(a.num_items() <= 120);
        let mean = a.num_edges() as f64 / 100.0;
        assert!(mean > 10.0 && mean < 50.0, "{mean}");
        let b = synthetic_interactions(&SyntheticConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, b);
    }
}
