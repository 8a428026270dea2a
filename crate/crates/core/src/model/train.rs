use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use super::objective::{Batch, ForwardPass, Objective, RankingLoss};
use super::optim::RmsProp;
use super::scoring::{average_margin, MarginAveraging};
use super::state::ClientState;
use super::{LossMode, TrainingConfig};
use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;

/// Mean per-positive losses of one local epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLoss {
    pub client: usize,
    pub round: usize,
    pub epoch: usize,
    pub ranking: f64,
    pub bias: f64,
    pub total: f64,
    pub frozen: bool,
}

/// `count` items drawn uniformly (with replacement) from those user `u` has
/// not interacted with; `None` if there are none.
pub fn sample_negatives<R: Rng>(g: &BipartiteGraph, u: usize, count: usize, rng: &mut R) -> Option<Vec<usize>> {
    let n = g.num_items();
    let deg = g.user_degree(u);
    if deg >= n {
        return None;
    }
    if 2 * deg > n {
        let seen = g.user_items(u);
        let pool: Vec<usize> = (0..n).filter(|i| seen.binary_search(i).is_err()).collect();
        return Some((0..count).map(|_| pool[rng.random_range(0..pool.len())]).collect());
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let j = rng.random_range(0..n);
        if !g.has_edge(u, j) {
            out.push(j);
        }
    }
    Some(out)
}

/// Pairs each positive with sampled negatives, dropping positives whose user
/// has interacted with every item.
pub fn sample_batch<R: Rng>(g: &BipartiteGraph, positives: &[(usize, usize)], count: usize, rng: &mut R) -> Result<Batch> {
    let mut pos = Vec::with_capacity(positives.len());
    let mut negs = Vec::with_capacity(positives.len());
    for &(u, i) in positives {
        if let Some(n) = sample_negatives(g, u, count, rng) {
            pos.push((u, i));
            negs.push(n);
        }
    }
    Batch::new(pos, negs)
}

/// Runs the configured number of local epochs over the client's training
/// interactions. During the first `freeze_rounds` rounds losses are computed
/// but parameters are left untouched. Afterwards the client's average margin
/// is refreshed.
pub fn local_train<R: Rng>(state: &mut ClientState, cfg: &TrainingConfig, round: usize, rng: &mut R) -> Result<Vec<EpochLoss>> {
    let frozen = round < cfg.freeze_rounds;
    let opt = RmsProp::new(cfg.learning_rate);
    let graph = state.graph().clone();
    let mut edges: Vec<(usize, usize)> = graph.edges().collect();
    let bias_weight = match cfg.loss_mode {
        LossMode::Bc => cfg.bias_loss_weight,
        LossMode::Bpr => 0.0,
    };
    let mut history = Vec::with_capacity(cfg.local_epochs);

    for epoch in 0..cfg.local_epochs {
        edges.shuffle(rng);
        let (mut ranking, mut bias, mut seen) = (0.0, 0.0, 0usize);
        for chunk in edges.chunks(cfg.batch_size) {
            let batch = match sample_batch(&graph, chunk, cfg.negatives_per_positive, rng) {
                Ok(b) => b,
                Err(Error::EmptyBatch) => continue,
                Err(e) => return Err(e),
            };
            let fp = ForwardPass::new(state, &batch)?;
            let margins = match cfg.loss_mode {
                LossMode::Bc => fp.margins(cfg.gamma, cfg.omega, state.received_global_margin),
                LossMode::Bpr => Vec::new(),
            };
            let obj = Objective {
                ranking: match cfg.loss_mode {
                    LossMode::Bc => RankingLoss::Contrastive { margins: &margins },
                    LossMode::Bpr => RankingLoss::Bpr,
                },
                bias_weight,
                tau: cfg.tau,
            };
            let losses = if frozen {
                fp.loss(&obj)?
            } else {
                let (losses, grad) = fp.loss_and_grad(state, &obj, 1.0 / batch.len() as f64)?;
                if !grad.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        round,
                        epoch,
                        detail: "non-finite gradient".into(),
                    });
                }
                drop(fp);
                opt.step(&mut state.params, &mut state.optimizer_state, &grad);
                losses
            };
            if !losses.ranking.is_finite() || !losses.bias.is_finite() {
                return Err(Error::NonFiniteLoss {
                    round,
                    epoch,
                    detail: format!("ranking {} bias {}", losses.ranking, losses.bias),
                });
            }
            ranking += losses.ranking;
            bias += losses.bias;
            seen += batch.len();
        }
        let denom = seen.max(1) as f64;
        history.push(EpochLoss {
            client: state.id,
            round,
            epoch,
            ranking: ranking / denom,
            bias: bias / denom,
            total: (ranking + bias_weight * bias) / denom,
            frozen,
        });
    }

    if cfg.loss_mode == LossMode::Bc {
        let mode = MarginAveraging::for_size(state.num_users(), state.num_items(), cfg.margin_observed_only);
        state.local_margin_avg = average_margin(state, cfg.gamma, mode, rng)?.mean;
    }
    Ok(history)
}
