//! Scoring many user-item pairs at once, for ranking and margin averages.

use nalgebra::DMatrix;
use rand::Rng;

use super::loss::adaptive_margin;
use super::mlp::MlpParams;
use super::state::{ClientState, MIN_BIAS_NORM};
use crate::error::{Error, Result};
use crate::spectral::EmbeddingMatrix;

/// Evaluates the predictive MLP on `[U_u, V_i, U_u ⊙ V_i]` for whole rows of
/// items by splitting its first layer into the three input blocks.
pub struct PairScorer<'a> {
    mlp: &'a MlpParams,
    users: DMatrix<f64>,
    items: DMatrix<f64>,
    user_part: DMatrix<f64>,
    item_part: DMatrix<f64>,
}

impl<'a> PairScorer<'a> {
    pub fn new(state: &'a ClientState, pooled: &EmbeddingMatrix) -> Result<Self> {
        let (m, n) = (state.num_users(), state.num_items());
        if pooled.nrows() != m + n {
            return Err(Error::DimensionMismatch {
                expected: m + n,
                actual: pooled.nrows(),
            });
        }
        let mlp = &state.params.predictive;
        let d = pooled.ncols();
        let first = &mlp.layers[0];
        let users = pooled.rows(0, m).into_owned();
        let items = pooled.rows(m, n).into_owned();
        let user_part = &users * first.weight.rows(0, d);
        let mut item_part = &items * first.weight.rows(d, d);
        for mut row in item_part.row_iter_mut() {
            for (v, b) in row.iter_mut().zip(&first.bias) {
                *v += b;
            }
        }
        Ok(Self {
            mlp,
            users,
            items,
            user_part,
            item_part,
        })
    }

    pub fn num_items(&self) -> usize {
        self.items.nrows()
    }

    /// Predictive logits of user `u` against every item.
    pub fn user_logits(&self, u: usize) -> Vec<f64> {
        let d = self.users.ncols();
        let wc = self.mlp.layers[0].weight.rows(2 * d, d);
        let mut scaled = wc.into_owned();
        for (r, mut row) in scaled.row_iter_mut().enumerate() {
            row *= self.users[(u, r)];
        }
        let mut h = &self.items * scaled + &self.item_part;
        let up = self.user_part.row(u);
        for mut row in h.row_iter_mut() {
            row += &up;
        }
        self.finish(h)
    }

    /// Predictive logits for arbitrary pairs.
    pub fn pair_logits(&self, pairs: &[(usize, usize)]) -> Vec<f64> {
        let d = self.users.ncols();
        let wc = self.mlp.layers[0].weight.rows(2 * d, d);
        let prod = DMatrix::from_fn(pairs.len(), d, |p, c| {
            let (u, i) = pairs[p];
            self.users[(u, c)] * self.items[(i, c)]
        });
        let mut h = prod * wc;
        for (p, mut row) in h.row_iter_mut().enumerate() {
            let (u, i) = pairs[p];
            row += self.user_part.row(u);
            row += self.item_part.row(i);
        }
        self.finish(h)
    }

    fn finish(&self, mut h: DMatrix<f64>) -> Vec<f64> {
        if self.mlp.layers.len() == 1 {
            return h.as_slice().to_vec();
        }
        MlpParams::activate(&mut h);
        self.mlp.forward_from(1, h).as_slice().to_vec()
    }
}

/// Which `(u, i)` pairs enter the average margin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginAveraging {
    /// Every user-item pair.
    Exact,
    /// Uniform sample of this many pairs, with replacement.
    Sampled(usize),
    /// Only the client's training interactions.
    Observed,
}

/// Pair budget above which the full average switches to sampling.
pub const MARGIN_PAIR_CAP: usize = 1_000_000;

impl MarginAveraging {
    /// Exact when `users·items` fits the cap, sampled otherwise.
    pub fn for_size(users: usize, items: usize, observed_only: bool) -> Self {
        if observed_only {
            MarginAveraging::Observed
        } else if users * items <= MARGIN_PAIR_CAP {
            MarginAveraging::Exact
        } else {
            MarginAveraging::Sampled(MARGIN_PAIR_CAP)
        }
    }
}

fn normalized_rows(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        let n = row.norm();
        if n < MIN_BIAS_NORM {
            return Err(Error::DegenerateBiasEmbedding);
        }
        row /= n;
    }
    Ok(out)
}

/// Per-pair margins `min(γ·ξ̂, π − R̂)` with their mean.
pub struct MarginSummary {
    pub mean: f64,
    pub count: usize,
    /// Sample standard deviation of the pair margins.
    pub std: f64,
}

/// Mean of the adaptive margin over the pairs chosen by `mode`.
pub fn average_margin<R: Rng>(state: &ClientState, gamma: f64, mode: MarginAveraging, rng: &mut R) -> Result<MarginSummary> {
    let pooled = state.pooled_embeddings()?;
    let scorer = PairScorer::new(state, &pooled)?;
    let (eu, ei) = state.bias_embeddings()?;
    let (eu, ei) = (normalized_rows(&eu)?, normalized_rows(&ei)?);
    let margin = |cos_bias: f64, logit: f64| {
        let xi = cos_bias.clamp(-1.0, 1.0).acos();
        let r = logit.tanh().clamp(-1.0, 1.0).acos();
        adaptive_margin(gamma, xi, r)
    };

    let (m, n) = (state.num_users(), state.num_items());
    let mut values = Vec::new();
    match mode {
        MarginAveraging::Exact => {
            let cos = &eu * ei.transpose();
            values.reserve(m * n);
            for u in 0..m {
                let logits = scorer.user_logits(u);
                values.extend(logits.iter().enumerate().map(|(i, &s)| margin(cos[(u, i)], s)));
            }
        }
        MarginAveraging::Sampled(count) => {
            let pairs: Vec<(usize, usize)> = (0..count).map(|_| (rng.random_range(0..m), rng.random_range(0..n))).collect();
            for chunk in pairs.chunks(8192) {
                let logits = scorer.pair_logits(chunk);
                values.extend(chunk.iter().zip(logits).map(|(&(u, i), s)| margin(eu.row(u).dot(&ei.row(i)), s)));
            }
        }
        MarginAveraging::Observed => {
            let pairs: Vec<(usize, usize)> = state.graph().edges().collect();
            for chunk in pairs.chunks(8192) {
                let logits = scorer.pair_logits(chunk);
                values.extend(chunk.iter().zip(logits).map(|(&(u, i), s)| margin(eu.row(u).dot(&ei.row(i)), s)));
            }
        }
    }
    let count = values.len();
    if count == 0 {
        return Ok(MarginSummary { mean: 0.0, count, std: 0.0 });
    }
    let mean = values.iter().sum::<f64>() / count as f64;
    let var = if count > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count - 1) as f64
    } else {
        0.0
    };
    Ok(MarginSummary {
        mean: mean.clamp(0.0, std::f64::consts::PI),
        count,
        std: var.sqrt(),
    })
}
