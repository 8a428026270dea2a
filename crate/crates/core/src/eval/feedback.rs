//! Simulated recommendation acceptance and the paired-user Jaccard index.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{jaccard, top_k};
use crate::error::Result;
use crate::graph::BipartiteGraph;
use crate::model::{local_train, ClientState, PairScorer, TrainingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackOptions {
    pub iterations: usize,
    /// Recommendations accepted per user and iteration.
    pub top_k: usize,
    /// Re-pair users after every iteration; otherwise the initial pairing
    /// is kept.
    pub refresh_pairs: bool,
}

impl Default for FeedbackOptions {
    fn default() -> Self {
        Self {
            iterations: 5,
            top_k: 5,
            refresh_pairs: true,
        }
    }
}

/// For each user, the other user whose pooled embedding has the highest
/// cosine similarity (ties to the smaller index).
pub fn most_similar_users(state: &ClientState) -> Result<Vec<usize>> {
    let pooled = state.pooled_embeddings()?;
    let m = state.num_users();
    let mut users = pooled.rows(0, m).into_owned();
    for mut row in users.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
    let sim = &users * users.transpose();
    Ok((0..m)
        .map(|u| {
            let mut best = if u == 0 { 1.min(m - 1) } else { 0 };
            for v in 0..m {
                if v != u && sim[(u, v)] > sim[(u, best)] {
                    best = v;
                }
            }
            best
        })
        .collect())
}

/// Mean of `J(D_u, D_pair(u))` over users.
pub fn mean_paired_jaccard(histories: &[Vec<usize>], pairs: &[usize]) -> f64 {
    if histories.is_empty() {
        return 0.0;
    }
    let total: f64 = histories.iter().zip(pairs).map(|(h, &v)| jaccard(h, &histories[v])).sum();
    total / histories.len() as f64
}

/// Runs `opts.iterations` rounds of: every user accepts their top
/// recommendations, the model fine-tunes one local epoch on the grown
/// histories, and the mean paired Jaccard is recorded. Entry 0 is the
/// Jaccard of the starting histories. The spectrum stays the one computed
/// for the original graph.
pub fn simulate_feedback_loop<R: Rng>(
    state: &mut ClientState,
    cfg: &TrainingConfig,
    opts: &FeedbackOptions,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let (m, n) = (state.num_users(), state.num_items());
    let mut histories: Vec<Vec<usize>> = (0..m).map(|u| state.graph().user_items(u).to_vec()).collect();
    let mut pairs = most_similar_users(state)?;
    let mut trajectory = vec![mean_paired_jaccard(&histories, &pairs)];
    let tune = TrainingConfig {
        local_epochs: 1,
        ..cfg.clone()
    };
    for _ in 0..opts.iterations {
        let pooled = state.pooled_embeddings()?;
        let scorer = PairScorer::new(state, &pooled)?;
        for (u, h) in histories.iter_mut().enumerate() {
            let recs = top_k(&scorer.user_logits(u), h, opts.top_k);
            h.extend(recs);
            h.sort_unstable();
        }
        drop(scorer);
        let edges: Vec<(usize, usize)> = histories.iter().enumerate().flat_map(|(u, h)| h.iter().map(move |&i| (u, i))).collect();
        state.replace_graph(Arc::new(BipartiteGraph::new(m, n, edges)?))?;
        local_train(state, &tune, tune.freeze_rounds, rng)?;
        if opts.refresh_pairs {
            pairs = most_similar_users(state)?;
        }
        trajectory.push(mean_paired_jaccard(&histories, &pairs));
    }
    Ok(trajectory)
}
