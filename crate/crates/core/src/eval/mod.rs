//! Ranking metrics, popularity-bucket breakdowns and the feedback-loop
//! simulation.

mod feedback;

pub use feedback::{mean_paired_jaccard, most_similar_users, simulate_feedback_loop, FeedbackOptions};

use serde::{Deserialize, Serialize};

use crate::data::PopularityGroup;
use crate::error::Result;
use crate::model::{ClientState, PairScorer};

/// Top-`k` items for one user, best first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedList {
    pub user: usize,
    pub items: Vec<usize>,
    pub k: usize,
}

/// Indices of the `k` highest scores, skipping `exclude` (sorted). Ties go
/// to the smaller index.
pub fn top_k(scores: &[f64], exclude: &[usize], k: usize) -> Vec<usize> {
    let mut cand: Vec<usize> = (0..scores.len()).filter(|i| exclude.binary_search(i).is_err()).collect();
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if k < cand.len() {
        cand.select_nth_unstable_by(k, cmp);
        cand.truncate(k);
    }
    cand.sort_by(cmp);
    cand
}

/// `|top-k ∩ relevant| / |relevant|`; `relevant` must be sorted.
pub fn recall_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let hits = ranked.iter().take(k).filter(|i| relevant.binary_search(i).is_ok()).count();
    hits as f64 / relevant.len() as f64
}

/// Binary-gain NDCG with discount `1/log₂(rank+1)`; `relevant` must be
/// sorted.
pub fn ndcg_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.binary_search(i).is_ok())
        .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..k.min(relevant.len())).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    dcg / ideal
}

/// Running sums of per-user metrics.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricSums {
    pub users: usize,
    pub recall: f64,
    pub ndcg: f64,
}

impl MetricSums {
    pub fn add(&mut self, recall: f64, ndcg: f64) {
        self.users += 1;
        self.recall += recall;
        self.ndcg += ndcg;
    }

    pub fn merge(&mut self, other: &MetricSums) {
        self.users += other.users;
        self.recall += other.recall;
        self.ndcg += other.ndcg;
    }

    pub fn mean_recall(&self) -> f64 {
        if self.users == 0 {
            0.0
        } else {
            self.recall / self.users as f64
        }
    }

    pub fn mean_ndcg(&self) -> f64 {
        if self.users == 0 {
            0.0
        } else {
            self.ndcg / self.users as f64
        }
    }
}

/// Overall sums plus one set per popularity bucket (Head, Mid, Tail).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Evaluation {
    pub overall: MetricSums,
    pub buckets: [MetricSums; 3],
}

impl Evaluation {
    pub fn merge(&mut self, other: &Evaluation) {
        self.overall.merge(&other.overall);
        for (a, b) in self.buckets.iter_mut().zip(&other.buckets) {
            a.merge(b);
        }
    }

    pub fn report(&self, k: usize) -> MetricReport {
        let bucket = |g: PopularityGroup| {
            let s = &self.buckets[bucket_index(g)];
            BucketMetric {
                group: g,
                users: s.users,
                recall: s.mean_recall(),
                ndcg: s.mean_ndcg(),
            }
        };
        MetricReport {
            k,
            users: self.overall.users,
            recall: self.overall.mean_recall(),
            ndcg: self.overall.mean_ndcg(),
            buckets: [PopularityGroup::Head, PopularityGroup::Mid, PopularityGroup::Tail].map(bucket).to_vec(),
        }
    }
}

fn bucket_index(g: PopularityGroup) -> usize {
    match g {
        PopularityGroup::Head => 0,
        PopularityGroup::Mid => 1,
        PopularityGroup::Tail => 2,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketMetric {
    pub group: PopularityGroup,
    pub users: usize,
    pub recall: f64,
    pub ndcg: f64,
}

/// User-averaged metrics at cutoff `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub k: usize,
    pub users: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub buckets: Vec<BucketMetric>,
}

impl MetricReport {
    pub fn bucket(&self, g: PopularityGroup) -> Option<&BucketMetric> {
        self.buckets.iter().find(|b| b.group == g)
    }
}

/// How popularity buckets enter the metrics.
#[derive(Debug, Clone, Copy)]
pub enum Buckets<'a> {
    None,
    /// Bucket of each local item; a user's bucket metric only counts that
    /// bucket's relevant items.
    Items(&'a [PopularityGroup]),
    /// Bucket of each local user.
    Users(&'a [PopularityGroup]),
}

/// Full-ranking evaluation of one client against held-out items per local
/// user (sorted local item ids). Train items are excluded from the
/// candidates; users without held-out items are skipped.
pub fn evaluate_client(state: &ClientState, holdout: &[Vec<usize>], k: usize, buckets: Buckets<'_>) -> Result<Evaluation> {
    let pooled = state.pooled_embeddings()?;
    let scorer = PairScorer::new(state, &pooled)?;
    let mut out = Evaluation::default();
    let g = state.graph();
    for (u, relevant) in holdout.iter().enumerate() {
        if relevant.is_empty() {
            continue;
        }
        let scores = scorer.user_logits(u);
        let ranked = top_k(&scores, g.user_items(u), k);
        out.overall.add(recall_at_k(&ranked, relevant, k), ndcg_at_k(&ranked, relevant, k));
        match buckets {
            Buckets::None => {}
            Buckets::Users(groups) => {
                out.buckets[bucket_index(groups[u])].add(recall_at_k(&ranked, relevant, k), ndcg_at_k(&ranked, relevant, k));
            }
            Buckets::Items(groups) => {
                for grp in [PopularityGroup::Head, PopularityGroup::Mid, PopularityGroup::Tail] {
                    let sub: Vec<usize> = relevant.iter().copied().filter(|&i| groups[i] == grp).collect();
                    if !sub.is_empty() {
                        out.buckets[bucket_index(grp)].add(recall_at_k(&ranked, &sub, k), ndcg_at_k(&ranked, &sub, k));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `|a ∩ b| / |a ∪ b|` of two sorted, deduplicated sets; 0 when both are
/// empty.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn recall_examples() {
        assert_eq!(recall_at_k(&[3, 1, 2], &[1, 2, 3], 20), 1.0);
        assert_eq!(recall_at_k(&[4, 5], &[1, 2], 20), 0.0);
        let ranked: Vec<usize> = (10..30).chain([0, 1]).collect();
        assert_eq!(recall_at_k(&ranked, &[0, 1, 10, 11], 20), 0.5);
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(&[7, 1, 2], &[7], 20), 1.0);
        assert!((ndcg_at_k(&[1, 7, 2], &[7], 20) - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert!((ndcg_at_k(&[1, 7, 2], &[7], 20) - 0.63093).abs() < 1e-5);
        assert_eq!(ndcg_at_k(&[1, 2], &[7], 20), 0.0);
        assert!((ndcg_at_k(&[2, 1, 9], &[1, 2], 20) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn top_k_ties_by_index() {
        assert_eq!(top_k(&[0.5, 0.9, 0.5, 0.9, 0.1], &[], 3), vec![1, 3, 0]);
        assert_eq!(top_k(&[0.5, 0.9, 0.5, 0.9, 0.1], &[1], 3), vec![3, 0, 2]);
        assert_eq!(top_k(&[0.5, 0.9], &[], 5), vec![1, 0]);
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard(&[1, 2, 3], &[1, 2, 3]), 1.0);
        assert_eq!(jaccard(&[1, 2], &[3, 4]), 0.0);
        assert_eq!(jaccard(&[1, 2, 3], &[2, 3, 4]), 0.5);
    }

    fn sorted_set() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::btree_set(0usize..40, 0..15).prop_map(|s| s.into_iter().collect())
    }

    proptest! {
        #[test]
        fn metrics_in_unit_interval(scores in prop::collection::vec(-3.0f64..3.0, 40), rel in sorted_set(), k in 1usize..25) {
            let ranked = top_k(&scores, &[], k);
            let r = recall_at_k(&ranked, &rel, k);
            let n = ndcg_at_k(&ranked, &rel, k);
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert!((0.0..=1.0 + 1e-12).contains(&n));
        }

        #[test]
        fn ideal_ranking_scores_one(rel in sorted_set(), k in 1usize..25) {
            prop_assume!(!rel.is_empty());
            let mut ranked = rel.clone();
            ranked.reverse();
            ranked.extend((40..80).filter(|i| !rel.contains(i)));
            prop_assert!((ndcg_at_k(&ranked, &rel, k) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn jaccard_symmetric(a in sorted_set(), b in sorted_set()) {
            prop_assert_eq!(jaccard(&a, &b), jaccard(&b, &a));
        }
    }
}
