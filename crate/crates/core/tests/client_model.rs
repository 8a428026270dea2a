mod common;

use common::{gradient_error, micro_batch, micro_client, random_margins, Which};
use lowpass_fedrec::model::{
    average_margin, bc_loss, bias_contrastive_loss, bpr_loss, local_train, Batch, LossMode, MarginAveraging,
    TrainingConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..6 {
        let mut c = micro_client(seed);
        let batch = micro_batch(&c, seed);
        let margins = random_margins(batch.len(), seed);
        for which in [Which::Contrastive, Which::Bias, Which::Bpr] {
            let (err, name) = gradient_error(&mut c, &batch, which, &margins);
            assert!(err < 1e-4, "seed {seed} {which:?}: {name} rel err {err:e}");
        }
    }
}

#[test]
fn zero_margin_equals_plain_contrastive() {
    let c = micro_client(3);
    let batch = micro_batch(&c, 3);
    let zeros = vec![0.0; batch.len()];
    let with = bc_loss(&c, &batch, &zeros, 0.1).unwrap();
    let larger = bc_loss(&c, &batch, &vec![0.3; batch.len()], 0.1).unwrap();
    assert!(larger > with);

    // one positive vs one negative with identical scores gives ln 2
    let g = c.graph();
    let u = 0;
    let i = g.user_items(u)[0];
    let j = (0..g.num_items()).find(|j| !g.has_edge(u, *j)).unwrap();
    let same = Batch::new(vec![(u, i)], vec![vec![i]]).unwrap();
    assert!((bc_loss(&c, &same, &[0.0], 0.1).unwrap() - 2f64.ln()).abs() < 1e-12);
    assert!((bpr_loss(&c, &same).unwrap() - 2f64.ln()).abs() < 1e-12);
    assert!((bias_contrastive_loss(&c, &same, 0.1).unwrap() - 2f64.ln()).abs() < 1e-12);
    let real = Batch::new(vec![(u, i)], vec![vec![j]]).unwrap();
    assert!(bc_loss(&c, &real, &[0.0], 0.1).unwrap() >= 0.0);
    assert!(Batch::new(vec![], vec![]).is_err());
}

fn tiny_config() -> TrainingConfig {
    TrainingConfig {
        freeze_rounds: 0,
        batch_size: 16,
        learning_rate: 0.01,
        ..TrainingConfig::default()
    }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let mut c = micro_client(5);
    let before = c.params.clone();
    let cfg = TrainingConfig {
        learning_rate: 0.0,
        ..tiny_config()
    };
    let losses = local_train(&mut c, &cfg, 0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(losses.len(), cfg.local_epochs);
    assert_eq!(c.params, before);
}

#[test]
fn freeze_keeps_parameters_and_reports_losses() {
    let mut c = micro_client(6);
    let before = c.params.clone();
    let cfg = TrainingConfig {
        freeze_rounds: 2,
        ..tiny_config()
    };
    let losses = local_train(&mut c, &cfg, 1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(c.params, before);
    assert!(losses.iter().all(|l| l.frozen && l.total.is_finite() && l.total > 0.0));
    let losses = local_train(&mut c, &cfg, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert!(losses.iter().all(|l| !l.frozen));
    assert_ne!(c.params, before);
}

#[test]
fn training_is_deterministic() {
    let run = |mode| {
        let mut c = micro_client(8);
        let cfg = TrainingConfig {
            loss_mode: mode,
            ..tiny_config()
        };
        let l = local_train(&mut c, &cfg, 0, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        (c.params, l, c.local_margin_avg)
    };
    for mode in [LossMode::Bc, LossMode::Bpr] {
        let (a, la, ma) = run(mode);
        let (b, lb, mb) = run(mode);
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert_eq!(ma.to_bits(), mb.to_bits());
    }
}

#[test]
fn angles_and_margins_stay_in_range() {
    let mut c = micro_client(9);
    let cfg = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for round in 0..3 {
        local_train(&mut c, &cfg, round, &mut rng).unwrap();
        assert!((0.0..=std::f64::consts::PI).contains(&c.local_margin_avg));
        let pooled = c.pooled_embeddings().unwrap();
        for u in 0..c.num_users() {
            for i in 0..c.num_items() {
                let r = c.predict_angle(u, i, &pooled).unwrap();
                let xi = c.bias_angle(u, i).unwrap();
                assert!((0.0..=std::f64::consts::PI).contains(&r));
                assert!((0.0..=std::f64::consts::PI).contains(&xi));
            }
        }
    }
}

#[test]
fn average_margin_examples() {
    let c = micro_client(11);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let zero = average_margin(&c, 0.0, MarginAveraging::Exact, &mut rng).unwrap();
    assert_eq!(zero.mean, 0.0);
    let exact = average_margin(&c, 0.8, MarginAveraging::Exact, &mut rng).unwrap();
    assert_eq!(exact.count, c.num_users() * c.num_items());
    // brute force oracle through the single-pair API
    let pooled = c.pooled_embeddings().unwrap();
    let mut sum = 0.0;
    for u in 0..c.num_users() {
        for i in 0..c.num_items() {
            let r = c.predict_angle(u, i, &pooled).unwrap();
            let xi = c.bias_angle(u, i).unwrap();
            sum += lowpass_fedrec::model::adaptive_margin(0.8, xi, r);
        }
    }
    let oracle = sum / exact.count as f64;
    assert!((exact.mean - oracle).abs() < 1e-12);

    let n = 20_000;
    let sampled = average_margin(&c, 0.8, MarginAveraging::Sampled(n), &mut rng).unwrap();
    let se = exact.std / (n as f64).sqrt();
    assert!((sampled.mean - exact.mean).abs() <= 3.0 * se + 1e-12, "{} vs {}", sampled.mean, exact.mean);
}
