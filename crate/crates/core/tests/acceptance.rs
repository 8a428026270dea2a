//! Acceptance criteria 1–8. Each test prints one `criterion N: PASS|FAIL`
//! line and then asserts it. Criteria 5 and 6 train 15 desk-scale models
//! (about 20 minutes on one core) and are ignored by default:
//!
//! ```text
//! cargo test --release -p lowpass-fedrec --test acceptance -- --include-ignored --nocapture
//! ```

mod common;

use std::time::Instant;

use common::{client_from_graph, gradient_error, micro_batch, micro_client, random_bipartite, random_connected, random_margins, Which};
use lowpass_fedrec::cli::cmd_train;
use lowpass_fedrec::config::ExperimentConfig;
use lowpass_fedrec::data::PopularityGroup;
use lowpass_fedrec::experiment::{client_spectra, prepare_data, run, RunOutcome};
use lowpass_fedrec::federation::{
    aggregate, client_seed, initialize, normalize_similarities, personalize, Federation, FederationConfig, Message, Uplink,
};
use lowpass_fedrec::graph::graph_laplacian;
use lowpass_fedrec::model::{local_train, ClientState, LossMode, MlpParams, TrainingConfig};
use lowpass_fedrec::spectral::lanczos_partial_eigs;
use lowpass_fedrec::theory::TheoryBattery;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(n: usize, pass: bool, detail: &str) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} failed: {detail}");
}

#[test]
fn criterion_1_spectral_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xc1);
    let (mut worst_eig, mut worst_idem, mut worst_allpass) = (0.0f64, 0.0f64, 0.0f64);
    for t in 0..50u64 {
        let n = rng.random_range(30..=300);
        let g = random_connected(n, rng.random_range(0.3..3.0), &mut rng);
        let l = graph_laplacian(&g).unwrap();
        let phi = rng.random_range(2..=n.min(128));
        let spec = lanczos_partial_eigs(&l, phi, t).unwrap();
        let mut dense: Vec<f64> = l.to_dense().symmetric_eigen().eigenvalues.iter().copied().collect();
        dense.sort_by(f64::total_cmp);
        for (a, b) in spec.eigenvalues().iter().zip(&dense) {
            worst_eig = worst_eig.max((a - b).abs());
        }
        let p = spec.eigenvectors();
        let lcf = p * p.transpose();
        worst_idem = worst_idem.max((&lcf * &lcf - &lcf).norm());
        if t % 5 == 0 {
            let full = lanczos_partial_eigs(&l, n, t).unwrap();
            let z = DMatrix::from_fn(n, 4, |_, _| rng.random_range(-1.0..1.0));
            worst_allpass = worst_allpass.max((full.lcf(&z).unwrap() - &z).abs().max());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        worst_eig < 1e-6 && worst_idem < 1e-10 && worst_allpass < 1e-8 && secs < 60.0,
        &format!("max |λ−λ_dense| {worst_eig:.2e}, max ‖LCF²−LCF‖_F {worst_idem:.2e}, max all-pass error {worst_allpass:.2e}, {secs:.1}s"),
    );
}

#[test]
fn criterion_2_gradient_correctness() {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    for seed in 0..20 {
        let mut c = micro_client(1000 + seed);
        assert!(c.num_users() <= 10 && c.num_items() <= 10);
        let batch = micro_batch(&c, seed);
        let margins = random_margins(batch.len(), seed);
        for which in [Which::Contrastive, Which::Bias, Which::Bpr] {
            let (err, name) = gradient_error(&mut c, &batch, which, &margins);
            if err > worst.0 {
                worst = (err, format!("{which:?} {name} client {seed}"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(2, worst.0 < 1e-4 && secs < 120.0, &format!("max relative error {:.2e} ({}), {secs:.1}s", worst.0, worst.1));
}

fn quick_clients(count: usize, seed: u64) -> Vec<ClientState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|id| client_from_graph(id, random_bipartite(rng.random_range(12..20), rng.random_range(12..20), 0.15, &mut rng), 16, 8, seed))
        .collect()
}

fn quick_training() -> TrainingConfig {
    TrainingConfig {
        local_epochs: 1,
        freeze_rounds: 0,
        batch_size: 64,
        learning_rate: 0.005,
        ..TrainingConfig::default()
    }
}

fn mlp_mean(ms: &[&MlpParams]) -> MlpParams {
    let mut out = ms[0].clone();
    let n = ms.len() as f64;
    for (ti, slot) in out.tensors_mut().into_iter().enumerate() {
        for (j, v) in slot.iter_mut().enumerate() {
            *v = ms.iter().map(|m| m.tensors()[ti][j]).sum::<f64>() / n;
        }
    }
    out
}

#[test]
fn criterion_3_protocol_algebra() {
    let mut checks: Vec<(&str, bool)> = Vec::new();
    checks.push(("normalization {1,2,3}", normalize_similarities(&[1.0, 2.0, 3.0]) == [1.0, 0.5, 0.0]));
    checks.push(("degenerate all-equal", normalize_similarities(&[5.0, 5.0, 5.0]) == [1.0, 1.0, 1.0]));

    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut cs = quick_clients(3, 1);
    for c in cs.iter_mut() {
        for t in c.params.pooling.tensors_mut().into_iter().chain(c.params.predictive.tensors_mut()) {
            t.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        }
        c.local_margin_avg = rng.random_range(0.0..1.0);
    }
    let ups: Vec<Uplink> = cs.iter().map(|c| Uplink::from_client(c, 0.0)).collect();
    let global = aggregate(&ups).unwrap();
    let pools: Vec<&MlpParams> = cs.iter().map(|c| &c.params.pooling).collect();
    let preds: Vec<&MlpParams> = cs.iter().map(|c| &c.params.predictive).collect();
    let close = |a: &MlpParams, b: &MlpParams| a.tensors().iter().zip(b.tensors()).all(|(x, y)| x.iter().zip(y.iter()).all(|(p, q)| (p - q).abs() < 1e-12));
    let margin = cs.iter().map(|c| c.local_margin_avg).sum::<f64>() / 3.0;
    checks.push((
        "aggregate equals direct mean",
        close(&global.pooling, &mlp_mean(&pools)) && close(&global.predictive, &mlp_mean(&preds)) && (global.margin - margin).abs() < 1e-12,
    ));
    let one = personalize(&global, &ups[0], 1.0).unwrap();
    let zero = personalize(&global, &ups[0], 0.0).unwrap();
    checks.push((
        "blend endpoints",
        one.pooling == global.pooling && one.predictive == global.predictive && zero.pooling == ups[0].pooling && zero.predictive == ups[0].predictive,
    ));
    let mut single = quick_clients(1, 2);
    initialize(&mut single, 4).unwrap();
    checks.push(("single client degenerate", normalize_similarities(&[0.7]) == [1.0]));

    // personalization and bias-awareness off: plain federated averaging
    let training = quick_training();
    let config = FederationConfig {
        phi: 16,
        personalization: false,
        bias_aware: false,
        ..FederationConfig::default()
    };
    let mut fed = Federation::new(quick_clients(3, 7), training.clone(), config, 21).unwrap();
    let mut plain = fed.clients.clone();
    let bpr = TrainingConfig {
        loss_mode: LossMode::Bpr,
        ..training
    };
    let mut bitwise = true;
    for round in 0..3 {
        fed.global_round().unwrap();
        for c in plain.iter_mut() {
            let mut r = ChaCha8Rng::seed_from_u64(client_seed(21, round, c.id));
            local_train(c, &bpr, round, &mut r).unwrap();
        }
        let pool = mlp_mean(&plain.iter().map(|c| &c.params.pooling).collect::<Vec<_>>());
        let pred = mlp_mean(&plain.iter().map(|c| &c.params.predictive).collect::<Vec<_>>());
        for c in plain.iter_mut() {
            c.params.pooling = pool.clone();
            c.params.predictive = pred.clone();
        }
        bitwise &= fed.clients.iter().zip(&plain).all(|(a, b)| a.params == b.params);
    }
    checks.push(("plain federated averaging, 3 rounds bitwise", bitwise));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    verdict(3, failed.is_empty(), &format!("{} checks, failed: {failed:?}", checks.len()));
}

#[test]
fn criterion_4_bound_checks() {
    let start = Instant::now();
    let report = TheoryBattery::new(0, 20).run().unwrap();
    let verdicts = report.verdicts();
    println!("{}", report.table());
    let wanted = |v: &&lowpass_fedrec::theory::Verdict| v.name == "projection" || v.name == "smoothness" || v.name.starts_with("kl-concentration");
    let relevant: Vec<_> = verdicts.iter().filter(wanted).collect();
    let secs = start.elapsed().as_secs_f64();
    let pass = relevant.len() == 4 && relevant.iter().all(|v| v.passed) && secs < 300.0;
    let detail = relevant.iter().map(|v| format!("{}={}", v.name, if v.passed { "ok" } else { "fail" })).collect::<Vec<_>>().join(", ");
    verdict(4, pass, &format!("{detail}, {secs:.1}s"));
}

#[test]
fn criterion_7_privacy_invariant() {
    let mut fed = Federation::new(quick_clients(3, 13), quick_training(), FederationConfig { phi: 16, ..FederationConfig::default() }, 3).unwrap();
    fed.enable_capture();
    for _ in 0..5 {
        fed.global_round().unwrap();
    }
    let log = fed.captured.clone().unwrap();
    let mut local: Vec<u64> = Vec::new();
    for c in &fed.clients {
        local.extend(c.params.embeddings.iter().map(|v| v.to_bits()));
        local.extend(c.spectrum().eigenvalues().iter().map(|v| v.to_bits()));
        local.extend(c.params.layer_kernels.iter().flatten().map(|v| v.to_bits()));
        for (u, i) in c.graph().edges() {
            local.push((u as f64).to_bits() ^ (i as f64).to_bits().rotate_left(1));
        }
    }
    local.retain(|&b| b != 0f64.to_bits() && b != 1f64.to_bits());
    local.sort_unstable();
    let mut counts = [0usize; 3];
    let mut ok = true;
    for m in &log {
        let (slot, want): (usize, &[&str]) = match m {
            Message::Broadcast(_) => (0, &["reference_kernel"]),
            Message::Uplink(_) => (1, &["pooling", "predictive", "margin", "divergence"]),
            Message::Downlink(_) => (2, &["pooling", "predictive", "margin"]),
        };
        counts[slot] += 1;
        ok &= m.payload_fields() == want;
        ok &= m.numbers().iter().all(|v| local.binary_search(&v.to_bits()).is_err());
    }
    ok &= counts == [5, 15, 15];
    verdict(7, ok, &format!("{} messages over 5 rounds (broadcast/uplink/downlink {counts:?})", log.len()));
}

#[test]
fn criterion_8_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = |d: &str| ExperimentConfig {
        synthetic_users: 120,
        synthetic_items: 160,
        phi: 32,
        global_rounds: 3,
        output_dir: tmp.path().join(d),
        ..ExperimentConfig::default()
    };
    cmd_train(&cfg("a")).unwrap();
    cmd_train(&cfg("b")).unwrap();
    let same = ["best.ckpt", "log.ndjson", "metrics.json"].iter().all(|f| std::fs::read(tmp.path().join("a").join(f)).unwrap() == std::fs::read(tmp.path().join("b").join(f)).unwrap());
    verdict(8, same, "checkpoint, round log and metrics compared byte for byte");
}

fn desk_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        synthetic_users: 400,
        synthetic_items: 500,
        synthetic_mean_degree: 20.0,
        num_clients: 4,
        seed,
        ..ExperimentConfig::default()
    }
}

fn desk_run(cfg: &ExperimentConfig) -> RunOutcome {
    let start = Instant::now();
    let data = prepare_data(cfg).unwrap();
    let spectra = client_spectra(&data, cfg.phi, cfg.seed).unwrap();
    let o = run(cfg, &data, &spectra, None).unwrap();
    println!(
        "  seed {} per={} bias={} gamma={}: best round {}, test ndcg {:.4}, tail ndcg {:.4}, jaccard {:?} ({:.0}s)",
        cfg.seed,
        cfg.personalization,
        cfg.bias_aware,
        cfg.gamma,
        o.best_round,
        o.test.overall.ndcg,
        o.test.overall.bucket(PopularityGroup::Tail).map_or(f64::NAN, |b| b.ndcg),
        o.feedback.as_ref().and_then(|f| f.last()),
        start.elapsed().as_secs_f64()
    );
    o
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
#[ignore = "trains 15 desk-scale models; run with --include-ignored"]
fn criteria_5_and_6_desk_scale_directions() {
    let seeds = [0u64, 1, 2];
    let variants = [("full", true, true), ("w/o per", false, true), ("w/o bias-aware", true, false), ("w/o per & bias-aware", false, false)];
    let mut ndcg = vec![Vec::new(); variants.len()];
    let mut full_runs = Vec::new();
    for &seed in &seeds {
        for (k, &(_, per, bias)) in variants.iter().enumerate() {
            let cfg = ExperimentConfig {
                personalization: per,
                bias_aware: bias,
                feedback_iterations: if per && bias { 5 } else { 0 },
                ..desk_config(seed)
            };
            let o = desk_run(&cfg);
            ndcg[k].push(o.test.overall.ndcg);
            if per && bias {
                full_runs.push(o);
            }
        }
    }
    let m: Vec<f64> = ndcg.iter().map(|v| mean(v)).collect();
    let summary = variants.iter().zip(&m).map(|(v, x)| format!("{} {x:.4}", v.0)).collect::<Vec<_>>().join(", ");
    let pass5 = m[0] > m[3] && m[1] <= m[0] && m[2] <= m[0];

    let mut zero_runs = Vec::new();
    for &seed in &seeds {
        let cfg = ExperimentConfig {
            gamma: 0.0,
            feedback_iterations: 5,
            ..desk_config(seed)
        };
        zero_runs.push(desk_run(&cfg));
    }
    let last_jaccard = |rs: &[RunOutcome]| mean(&rs.iter().map(|o| *o.feedback.as_ref().unwrap().last().unwrap()).collect::<Vec<_>>());
    let tail = |rs: &[RunOutcome]| mean(&rs.iter().map(|o| o.test.overall.bucket(PopularityGroup::Tail).unwrap().ndcg).collect::<Vec<_>>());
    let (j1, j0) = (last_jaccard(&full_runs), last_jaccard(&zero_runs));
    let (t1, t0) = (tail(&full_runs), tail(&zero_runs));
    let pass6 = j1 <= j0 && t1 >= t0;

    let line5 = format!("criterion 5: {} mean test NDCG@20 over seeds {seeds:?}: {summary}", if pass5 { "PASS" } else { "FAIL" });
    let line6 = format!(
        "criterion 6: {} final paired Jaccard gamma=1 {j1:.4} vs gamma=0 {j0:.4}; tail NDCG@20 gamma=1 {t1:.4} vs gamma=0 {t0:.4}",
        if pass6 { "PASS" } else { "FAIL" }
    );
    println!("{line5}\n{line6}");
    assert!(pass5 && pass6, "{line5}\n{line6}");
}
