mod common;

use std::collections::BTreeSet;

use common::{client_from_graph, random_bipartite};
use lowpass_fedrec::eval::*;
use lowpass_fedrec::model::{PairScorer, TrainingConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn log2(x: f64) -> f64 {
    x.ln() / 2f64.ln()
}

#[test]
fn metric_examples() {
    let ranked = [3, 1, 2];
    assert_eq!(recall_at_k(&ranked, &[1, 5], 2), 0.5);
    let want = (1.0 / log2(3.0)) / (1.0 + 1.0 / log2(3.0));
    assert!((ndcg_at_k(&ranked, &[1, 5], 2) - want).abs() < 1e-15);
    assert_eq!(ndcg_at_k(&[4, 7], &[4, 7], 2), 1.0);
    assert_eq!(ndcg_at_k(&[0, 1], &[], 2), 0.0);
    assert_eq!(recall_at_k(&[0, 1], &[9], 2), 0.0);
}

#[test]
fn top_k_excludes_and_breaks_ties_by_index() {
    let scores = [0.5, 0.9, 0.9, 0.1, 0.7];
    assert_eq!(top_k(&scores, &[], 3), vec![1, 2, 4]);
    assert_eq!(top_k(&scores, &[1], 3), vec![2, 4, 0]);
    assert_eq!(top_k(&scores, &[0, 1, 2, 3, 4], 3), Vec::<usize>::new());
    assert_eq!(top_k(&scores, &[], 10).len(), 5);
}

#[test]
fn jaccard_examples() {
    assert_eq!(jaccard(&[1, 2, 3], &[2, 3, 4]), 0.5);
    assert_eq!(jaccard(&[], &[]), 0.0);
    assert_eq!(jaccard(&[1], &[1]), 1.0);
    assert_eq!(mean_paired_jaccard(&[vec![1, 2], vec![2, 3], vec![1, 2]], &[2, 0, 0]), (1.0 + 1.0 / 3.0 + 1.0) / 3.0);
}

#[test]
fn client_evaluation_matches_direct_ranking() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let g = random_bipartite(15, 25, 0.15, &mut rng);
    let c = client_from_graph(0, g.clone(), 16, 8, 3);
    // hold out the first non-neighbour of every other user
    let holdout: Vec<Vec<usize>> = (0..g.num_users())
        .map(|u| if u % 2 == 0 { (0..g.num_items()).filter(|&i| !g.has_edge(u, i)).take(2).collect() } else { vec![] })
        .collect();
    let ev = evaluate_client(&c, &holdout, 5, Buckets::None).unwrap();
    let pooled = c.pooled_embeddings().unwrap();
    let scorer = PairScorer::new(&c, &pooled).unwrap();
    let (mut r, mut n, mut users) = (0.0, 0.0, 0);
    for (u, rel) in holdout.iter().enumerate().filter(|(_, r)| !r.is_empty()) {
        // full sort oracle over unobserved items
        let logits = scorer.user_logits(u);
        let mut cand: Vec<usize> = (0..g.num_items()).filter(|&i| !g.has_edge(u, i)).collect();
        cand.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
        cand.truncate(5);
        r += recall_at_k(&cand, rel, 5);
        n += ndcg_at_k(&cand, rel, 5);
        users += 1;
    }
    let rep = ev.report(5);
    assert_eq!(rep.users, users);
    assert!((rep.recall - r / users as f64).abs() < 1e-15);
    assert!((rep.ndcg - n / users as f64).abs() < 1e-15);
}

#[test]
fn feedback_loop_trajectory_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let g = random_bipartite(12, 30, 0.1, &mut rng);
    let base = client_from_graph(0, g, 16, 8, 4);
    let cfg = TrainingConfig {
        freeze_rounds: 0,
        batch_size: 32,
        ..TrainingConfig::default()
    };
    let opts = FeedbackOptions {
        iterations: 3,
        top_k: 2,
        refresh_pairs: true,
    };
    let run = || {
        let mut c = base.clone();
        let t = simulate_feedback_loop(&mut c, &cfg, &opts, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        (t, c)
    };
    let (t, after) = run();
    assert_eq!(t.len(), 4);
    assert!(t.iter().all(|j| (0.0..=1.0).contains(j)));
    assert_eq!(t, run().0);
    for u in 0..after.num_users() {
        assert_eq!(after.graph().user_degree(u), base.graph().user_degree(u) + 3 * 2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn metrics_are_bounded_and_match_set_oracles(
        scores in prop::collection::vec(-5.0f64..5.0, 5..40),
        rel in prop::collection::btree_set(0usize..40, 0..10),
        k in 1usize..15,
    ) {
        let rel: Vec<usize> = rel.into_iter().filter(|&i| i < scores.len()).collect();
        let ranked = top_k(&scores, &[], k);
        let mut oracle: Vec<usize> = (0..scores.len()).collect();
        oracle.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        oracle.truncate(k);
        prop_assert_eq!(&ranked, &oracle);
        let r = recall_at_k(&ranked, &rel, k);
        let n = ndcg_at_k(&ranked, &rel, k);
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&n));
        let hits = ranked.iter().filter(|i| rel.contains(i)).count();
        if !rel.is_empty() {
            prop_assert_eq!(r, hits as f64 / rel.len() as f64);
            let perfect = ranked.iter().take(k.min(rel.len())).all(|i| rel.contains(i));
            prop_assert_eq!((n - 1.0).abs() < 1e-12, perfect);
        }
    }

    #[test]
    fn jaccard_matches_set_oracle(a in prop::collection::btree_set(0usize..30, 0..20), b in prop::collection::btree_set(0usize..30, 0..20)) {
        let va: Vec<usize> = a.iter().copied().collect();
        let vb: Vec<usize> = b.iter().copied().collect();
        let union: BTreeSet<_> = a.union(&b).collect();
        let want = if union.is_empty() { 0.0 } else { a.intersection(&b).count() as f64 / union.len() as f64 };
        prop_assert_eq!(jaccard(&va, &vb), want);
        prop_assert_eq!(jaccard(&va, &vb), jaccard(&vb, &va));
    }
}
