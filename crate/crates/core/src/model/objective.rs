//! Batched forward pass, losses and hand-derived gradients.
//!
//! The convolution is evaluated in the spectral domain: with orthonormal
//! `P̄`, `Z^(l) = P̄·C_l` where `C_0 = P̄ᵀZ⁰` and `C_l = k_l ⊙ C_{l−1}`, so
//! only the rows of `P̄` touched by the batch are needed per layer.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::loss::{adaptive_margin, bpr_pair, refined_margin, softmax_contrastive};
use super::mlp::MlpCache;
use super::state::{angle_from_logit, ClientState, ModelParams, MIN_BIAS_NORM};
use crate::error::{Error, Result};

/// Positive user-item pairs, each with its sampled negative items.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<Vec<usize>>,
}

impl Batch {
    pub fn new(positives: Vec<(usize, usize)>, negatives: Vec<Vec<usize>>) -> Result<Self> {
        if positives.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if positives.len() != negatives.len() {
            return Err(Error::DimensionMismatch {
                expected: positives.len(),
                actual: negatives.len(),
            });
        }
        if negatives.iter().any(|n| n.is_empty()) {
            return Err(Error::InvalidArgument("every positive needs at least one negative".into()));
        }
        Ok(Self { positives, negatives })
    }

    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }
}

/// Ranking term of the objective.
#[derive(Debug, Clone, Copy)]
pub enum RankingLoss<'a> {
    None,
    /// Margin-penalized contrastive loss, one margin per positive.
    Contrastive { margins: &'a [f64] },
    Bpr,
}

#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub ranking: RankingLoss<'a>,
    pub bias_weight: f64,
    pub tau: f64,
}

/// Summed (not averaged) loss components of one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub ranking: f64,
    pub bias: f64,
}

impl LossBreakdown {
    pub fn total(&self, bias_weight: f64) -> f64 {
        self.ranking + bias_weight * self.bias
    }
}

pub struct ForwardPass {
    /// Global node id of each batch-local row.
    nodes: Vec<usize>,
    coeffs: Vec<DMatrix<f64>>,
    basis_rows: DMatrix<f64>,
    pool_cache: MlpCache,
    pooled: DMatrix<f64>,
    /// Batch-local (user row, item row) of every scored pair.
    pair_rows: Vec<(usize, usize)>,
    /// Pairs of positive `k` are `offsets[k]..offsets[k+1]`, positive first.
    offsets: Vec<usize>,
    pred_cache: MlpCache,
    logits: Vec<f64>,
    user_cache: MlpCache,
    item_cache: MlpCache,
    user_codes: DMatrix<f64>,
    item_codes: DMatrix<f64>,
    /// (user code row, item code row) per pair.
    pair_codes: Vec<(usize, usize)>,
    cos_bias: Vec<f64>,
}

fn dedup_index(slot: &mut [usize], list: &mut Vec<usize>, key: usize) -> usize {
    if slot[key] == usize::MAX {
        slot[key] = list.len();
        list.push(key);
    }
    slot[key]
}

impl ForwardPass {
    pub fn new(state: &ClientState, batch: &Batch) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let m = state.num_users();
        let n_items = state.num_items();
        let n = m + n_items;
        let mut node_slot = vec![usize::MAX; n];
        let mut user_slot = vec![usize::MAX; m];
        let mut item_slot = vec![usize::MAX; n_items];
        let (mut nodes, mut users, mut items) = (Vec::new(), Vec::new(), Vec::new());
        let (mut pair_rows, mut pair_codes, mut offsets) = (Vec::new(), Vec::new(), vec![0]);
        for (&(u, i), negs) in batch.positives.iter().zip(&batch.negatives) {
            for &item in std::iter::once(&i).chain(negs) {
                if u >= m || item >= n_items {
                    return Err(Error::IndexOutOfRange {
                        index: if u >= m { u } else { item },
                        len: if u >= m { m } else { n_items },
                    });
                }
                let ur = dedup_index(&mut node_slot, &mut nodes, u);
                let ir = dedup_index(&mut node_slot, &mut nodes, m + item);
                pair_rows.push((ur, ir));
                pair_codes.push((
                    dedup_index(&mut user_slot, &mut users, u),
                    dedup_index(&mut item_slot, &mut items, item),
                ));
            }
            offsets.push(pair_rows.len());
        }

        let params = &state.params;
        let d = params.embeddings.ncols();
        let layers = params.layer_kernels.len();
        let coeffs = state.layer_coefficients()?;
        let basis = state.spectrum().eigenvectors();
        let basis_rows = basis.select_rows(&nodes);
        let mut x = DMatrix::zeros(nodes.len(), (layers + 1) * d);
        x.columns_mut(0, d).copy_from(&params.embeddings.select_rows(&nodes));
        for l in 1..=layers {
            x.columns_mut(l * d, d).copy_from(&(&basis_rows * &coeffs[l]));
        }
        let (pooled, pool_cache) = params.pooling.forward_cached(&x)?;

        let mut pin = DMatrix::zeros(pair_rows.len(), 3 * d);
        for (p, &(ur, ir)) in pair_rows.iter().enumerate() {
            for c in 0..d {
                let (a, b) = (pooled[(ur, c)], pooled[(ir, c)]);
                pin[(p, c)] = a;
                pin[(p, d + c)] = b;
                pin[(p, 2 * d + c)] = a * b;
            }
        }
        let (out, pred_cache) = params.predictive.forward_cached(&pin)?;
        let logits = out.as_slice().to_vec();

        let pop = state.popularity();
        let pu = DMatrix::from_iterator(users.len(), 1, users.iter().map(|&u| pop.user_pop[u]));
        let pi = DMatrix::from_iterator(items.len(), 1, items.iter().map(|&i| pop.item_pop[i]));
        let (user_codes, user_cache) = params.user_bias.forward_cached(&pu)?;
        let (item_codes, item_cache) = params.item_bias.forward_cached(&pi)?;
        let unorm: Vec<f64> = user_codes.row_iter().map(|r| r.norm()).collect();
        let inorm: Vec<f64> = item_codes.row_iter().map(|r| r.norm()).collect();
        if unorm.iter().chain(&inorm).any(|&v| v < MIN_BIAS_NORM) {
            return Err(Error::DegenerateBiasEmbedding);
        }
        let cos_bias = pair_codes
            .iter()
            .map(|&(a, b)| {
                let dot = user_codes.row(a).dot(&item_codes.row(b));
                (dot / (unorm[a] * inorm[b])).clamp(-1.0, 1.0)
            })
            .collect();

        Ok(Self {
            nodes,
            coeffs,
            basis_rows,
            pool_cache,
            pooled,
            pair_rows,
            offsets,
            pred_cache,
            logits,
            user_cache,
            item_cache,
            user_codes,
            item_codes,
            pair_codes,
            cos_bias,
        })
    }

    pub fn num_positives(&self) -> usize {
        self.offsets.len() - 1
    }

    fn group(&self, k: usize) -> std::ops::Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    /// Predictive logit of the positive of group `k`.
    pub fn positive_logit(&self, k: usize) -> f64 {
        self.logits[self.offsets[k]]
    }

    /// Preference angles `R̂` of every positive.
    pub fn positive_angles(&self) -> Vec<f64> {
        (0..self.num_positives()).map(|k| angle_from_logit(self.positive_logit(k))).collect()
    }

    /// Popularity angles `ξ̂` of every positive.
    pub fn positive_bias_angles(&self) -> Vec<f64> {
        (0..self.num_positives()).map(|k| self.cos_bias[self.offsets[k]].acos()).collect()
    }

    /// Refined margin of each positive; treated as a constant by the loss.
    pub fn margins(&self, gamma: f64, omega: f64, global: Option<f64>) -> Vec<f64> {
        self.positive_angles()
            .into_iter()
            .zip(self.positive_bias_angles())
            .map(|(r, xi)| {
                let local = adaptive_margin(gamma, xi, r);
                global.map_or(local, |g| refined_margin(local, g, omega))
            })
            .collect()
    }

    /// Loss values and per-pair derivatives w.r.t. logits and bias cosines.
    fn evaluate(&self, obj: &Objective) -> Result<(LossBreakdown, Vec<f64>, Vec<f64>)> {
        let np = self.logits.len();
        let mut d_logit = vec![0.0; np];
        let mut d_cos = vec![0.0; np];
        let mut out = LossBreakdown::default();
        let tau = obj.tau;
        if let RankingLoss::Contrastive { margins } = obj.ranking {
            if margins.len() != self.num_positives() {
                return Err(Error::DimensionMismatch {
                    expected: self.num_positives(),
                    actual: margins.len(),
                });
            }
        }
        for k in 0..self.num_positives() {
            let g = self.group(k);
            let (p, negs) = (g.start, g.start + 1..g.end);
            let t: Vec<f64> = self.logits[g.clone()].iter().map(|s| s.tanh()).collect();
            match obj.ranking {
                RankingLoss::None => {}
                RankingLoss::Contrastive { margins } => {
                    let theta = (t[0].clamp(-1.0, 1.0).acos() + margins[k]).clamp(0.0, PI);
                    let neg_logits: Vec<f64> = t[1..].iter().map(|v| v / tau).collect();
                    let (l, dpos, dneg) = softmax_contrastive(theta.cos() / tau, &neg_logits);
                    out.ranking += l;
                    // d cos(θ)/ds = sin(θ)·sech(s) while θ is inside (0, π)
                    let s = self.logits[p];
                    let dtheta = if theta < PI { theta.sin() } else { 0.0 };
                    d_logit[p] += dpos * dtheta / s.cosh() / tau;
                    for (j, q) in negs.clone().enumerate() {
                        d_logit[q] += dneg[j] * (1.0 - t[j + 1] * t[j + 1]) / tau;
                    }
                }
                RankingLoss::Bpr => {
                    for (j, q) in negs.clone().enumerate() {
                        let (l, d) = bpr_pair(t[0], t[j + 1]);
                        out.ranking += l;
                        d_logit[p] += d * (1.0 - t[0] * t[0]);
                        d_logit[q] -= d * (1.0 - t[j + 1] * t[j + 1]);
                    }
                }
            }
            let neg_cos: Vec<f64> = self.cos_bias[negs.clone()].iter().map(|c| c / tau).collect();
            let (l, dpos, dneg) = softmax_contrastive(self.cos_bias[p] / tau, &neg_cos);
            out.bias += l;
            d_cos[p] = dpos / tau;
            for (j, q) in negs.enumerate() {
                d_cos[q] = dneg[j] / tau;
            }
        }
        Ok((out, d_logit, d_cos))
    }

    pub fn loss(&self, obj: &Objective) -> Result<LossBreakdown> {
        Ok(self.evaluate(obj)?.0)
    }

    /// Loss values and the gradient of `scale·(ranking + bias_weight·bias)`.
    pub fn loss_and_grad(&self, state: &ClientState, obj: &Objective, scale: f64) -> Result<(LossBreakdown, ModelParams)> {
        let (losses, mut d_logit, mut d_cos) = self.evaluate(obj)?;
        d_logit.iter_mut().for_each(|v| *v *= scale);
        d_cos.iter_mut().for_each(|v| *v *= scale * obj.bias_weight);
        let params = &state.params;
        let mut grad = params.zeros_like();
        let d = params.embeddings.ncols();
        let layers = params.layer_kernels.len();

        // predictive MLP and pooled embeddings
        let dl = DMatrix::from_column_slice(d_logit.len(), 1, &d_logit);
        let dpin = params.predictive.backward(&self.pred_cache, &dl, &mut grad.predictive);
        let mut dpooled = DMatrix::zeros(self.pooled.nrows(), d);
        for (p, &(ur, ir)) in self.pair_rows.iter().enumerate() {
            for c in 0..d {
                let g = dpin[(p, 2 * d + c)];
                dpooled[(ur, c)] += dpin[(p, c)] + g * self.pooled[(ir, c)];
                dpooled[(ir, c)] += dpin[(p, d + c)] + g * self.pooled[(ur, c)];
            }
        }
        let dx = params.pooling.backward(&self.pool_cache, &dpooled, &mut grad.pooling);

        // convolution layers, walked back through the spectral coefficients
        for (r, &node) in self.nodes.iter().enumerate() {
            for c in 0..d {
                grad.embeddings[(node, c)] += dx[(r, c)];
            }
        }
        if layers > 0 {
            let basis_t = self.basis_rows.transpose();
            let mut dc: Vec<DMatrix<f64>> = (0..=layers)
                .map(|l| {
                    if l == 0 {
                        DMatrix::zeros(self.coeffs[0].nrows(), d)
                    } else {
                        &basis_t * dx.columns(l * d, d)
                    }
                })
                .collect();
            for l in (1..=layers).rev() {
                let kernel = &params.layer_kernels[l - 1];
                let (head, tail) = dc.split_at_mut(l);
                let cur = &tail[0];
                for (phi, k) in kernel.iter().enumerate() {
                    grad.layer_kernels[l - 1][phi] += cur.row(phi).dot(&self.coeffs[l - 1].row(phi));
                    let mut prev = head[l - 1].row_mut(phi);
                    prev += cur.row(phi) * *k;
                }
            }
            grad.embeddings += state.spectrum().eigenvectors() * &dc[0];
        }

        // popularity encoders through the cosine
        let mut du = DMatrix::zeros(self.user_codes.nrows(), d);
        let mut di = DMatrix::zeros(self.item_codes.nrows(), d);
        for (p, &(a, b)) in self.pair_codes.iter().enumerate() {
            if d_cos[p] == 0.0 {
                continue;
            }
            let (eu, ei) = (self.user_codes.row(a), self.item_codes.row(b));
            let (nu, ni) = (eu.norm(), ei.norm());
            let c = self.cos_bias[p];
            let gu = (ei / (nu * ni) - eu * (c / (nu * nu))) * d_cos[p];
            let gi = (eu / (nu * ni) - ei * (c / (ni * ni))) * d_cos[p];
            let mut ru = du.row_mut(a);
            ru += gu;
            let mut ri = di.row_mut(b);
            ri += gi;
        }
        params.user_bias.backward(&self.user_cache, &du, &mut grad.user_bias);
        params.item_bias.backward(&self.item_cache, &di, &mut grad.item_bias);
        Ok((losses, grad))
    }
}

/// Summed popularity contrastive loss over the batch.
pub fn bias_contrastive_loss(state: &ClientState, batch: &Batch, tau: f64) -> Result<f64> {
    let fp = ForwardPass::new(state, batch)?;
    Ok(fp
        .loss(&Objective {
            ranking: RankingLoss::None,
            bias_weight: 1.0,
            tau,
        })?
        .bias)
}

/// Summed margin-penalized contrastive ranking loss.
pub fn bc_loss(state: &ClientState, batch: &Batch, margins: &[f64], tau: f64) -> Result<f64> {
    let fp = ForwardPass::new(state, batch)?;
    Ok(fp
        .loss(&Objective {
            ranking: RankingLoss::Contrastive { margins },
            bias_weight: 0.0,
            tau,
        })?
        .ranking)
}

/// Summed pairwise ranking loss over every (positive, negative) pair.
pub fn bpr_loss(state: &ClientState, batch: &Batch) -> Result<f64> {
    let fp = ForwardPass::new(state, batch)?;
    Ok(fp
        .loss(&Objective {
            ranking: RankingLoss::Bpr,
            bias_weight: 0.0,
            tau: 1.0,
        })?
        .ranking)
}
