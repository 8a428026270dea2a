use lowpass_fedrec::theory::*;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn sbm(k: usize, n: usize, intra: f64, inter: f64, bipartite: bool, seed: u64) -> SbmSpec {
    SbmSpec::equal(k, n, intra, inter, bipartite, seed)
}

/// Dense normalized Laplacian of the expected adjacency, built pair by pair.
fn dense_expected_laplacian(spec: &SbmSpec) -> DMatrix<f64> {
    let labels: Vec<usize> = if spec.bipartite {
        let users = spec.sizes.iter().enumerate().flat_map(|(c, &s)| vec![c; s.div_ceil(2)]);
        let items = spec.sizes.iter().enumerate().flat_map(|(c, &s)| vec![c; s / 2]);
        users.chain(items).collect()
    } else {
        spec.sizes.iter().enumerate().flat_map(|(c, &s)| vec![c; s]).collect()
    };
    let n = labels.len();
    let m: usize = spec.sizes.iter().map(|s| s.div_ceil(2)).sum();
    let mut a = DMatrix::zeros(n, n);
    for x in 0..n {
        for y in 0..n {
            let admissible = if spec.bipartite { (x < m) != (y < m) } else { x != y };
            if admissible {
                a[(x, y)] = if labels[x] == labels[y] { spec.intra_p } else { spec.inter_p };
            }
        }
    }
    let d: Vec<f64> = (0..n).map(|x| a.row(x).sum()).collect();
    DMatrix::from_fn(n, n, |x, y| f64::from(u8::from(x == y)) - a[(x, y)] / (d[x] * d[y]).sqrt())
}

#[test]
fn complete_blocks_when_forced() {
    let g = generate_sbm(&sbm(2, 20, 1.0, 0.0, true, 3)).unwrap();
    let b = g.bipartite.as_ref().unwrap();
    assert_eq!(b.num_users(), 10);
    assert_eq!(b.num_items(), 10);
    assert_eq!(g.num_edges(), 2 * 5 * 5);
    assert_eq!(g.components(), 2);
    for (u, i) in b.edges() {
        assert_eq!(g.labels[u], g.labels[10 + i]);
    }
}

#[test]
fn edge_counts_within_four_sigma() {
    for bipartite in [true, false] {
        let spec = sbm(3, 90, 0.3, 0.05, bipartite, 0);
        let labels = generate_sbm(&spec).unwrap().labels;
        let m: usize = spec.sizes.iter().map(|s| s.div_ceil(2)).sum();
        let (mut mean, mut var) = (0.0, 0.0);
        for x in 0..labels.len() {
            for y in x + 1..labels.len() {
                if bipartite && (x < m) == (y < m) {
                    continue;
                }
                let p = if labels[x] == labels[y] { 0.3 } else { 0.05 };
                mean += p;
                var += p * (1.0 - p);
            }
        }
        assert!((spec.expected_edges() - mean).abs() < 1e-9);
        for seed in 0..20 {
            let e = generate_sbm(&spec.with_seed(seed)).unwrap().num_edges() as f64;
            assert!((e - mean).abs() <= 4.0 * var.sqrt(), "{e} vs {mean} ± {}", var.sqrt());
        }
    }
}

#[test]
fn same_seed_same_graph() {
    let s = sbm(3, 60, 0.4, 0.05, false, 11);
    let (a, b) = (generate_sbm(&s).unwrap(), generate_sbm(&s).unwrap());
    assert_eq!(a.adjacency, b.adjacency);
    assert_eq!(a.labels, b.labels);
    assert_ne!(generate_sbm(&s.with_seed(12)).unwrap().adjacency, a.adjacency);
}

#[test]
fn unreachable_connectivity_is_an_error() {
    assert!(generate_sbm(&sbm(2, 40, 0.01, 0.0, true, 0)).is_err());
}

#[test]
fn expected_spectrum_matches_dense_oracle() {
    let specs = [
        SbmSpec { sizes: vec![9, 12, 7], intra_p: 0.6, inter_p: 0.1, bipartite: true, seed: 0 },
        SbmSpec { sizes: vec![9, 12, 7], intra_p: 0.6, inter_p: 0.1, bipartite: false, seed: 0 },
        sbm(2, 20, 1.0, 0.0, true, 0),
        sbm(4, 30, 0.9, 0.3, false, 0),
    ];
    for spec in &specs {
        let got = expected_spectrum(spec).unwrap();
        let mut want: Vec<f64> = dense_expected_laplacian(spec).symmetric_eigen().eigenvalues.iter().copied().collect();
        want.sort_by(f64::total_cmp);
        assert_eq!(got.len(), want.len());
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-10, "{spec:?}: {a} vs {b}");
        }
    }
}

#[test]
fn projection_exact_on_disconnected_blocks() {
    let g = generate_sbm(&sbm(2, 80, 0.5, 0.0, true, 1)).unwrap();
    let r = check_projection(&g, 2, 2, 0).unwrap();
    assert!(r.measured < 1e-8, "{}", r.measured);
    assert!(r.bound.is_finite());
    assert!(r.satisfied);
}

#[test]
fn projection_holds_on_separated_sbm() {
    for seed in 0..20 {
        let g = generate_sbm(&sbm(3, 300, 0.3, 0.01, true, seed)).unwrap();
        let r = check_projection(&g, 3, 3, seed).unwrap();
        assert!(r.satisfied, "{r:?}");
        assert!(r.delta >= 0.1);
    }
}

#[test]
fn projection_bound_grows_as_gap_closes() {
    let mut prev = 0.0;
    for inter in [0.01, 0.04, 0.08, 0.12] {
        let mean: f64 = (0..5)
            .map(|seed| check_projection(&generate_sbm(&sbm(2, 300, 0.3, inter, true, seed)).unwrap(), 2, 2, seed).unwrap().bound)
            .sum::<f64>()
            / 5.0;
        assert!(mean > prev, "inter {inter}: {mean} <= {prev}");
        prev = mean;
    }
}

#[test]
fn projection_rejects_bad_cutoff() {
    let g = generate_sbm(&sbm(2, 40, 0.5, 0.05, true, 0)).unwrap();
    assert!(check_projection(&g, 2, 3, 0).is_err());
    assert!(check_projection(&g, 3, 3, 0).is_err());
}

#[test]
fn smoothness_exact_on_disconnected_blocks() {
    let g = generate_sbm(&sbm(2, 80, 0.5, 0.0, false, 2)).unwrap();
    let r = check_smoothness(&g, 2, 2, 1.0, 0).unwrap();
    assert!(r.measured < 1e-8, "{}", r.measured);
}

#[test]
fn smoothness_holds_on_separated_sbm() {
    for seed in 0..20 {
        let g = generate_sbm(&sbm(2, 200, 0.4, 0.02, true, seed)).unwrap();
        let r = check_smoothness(&g, 2, 2, 1.0, seed).unwrap();
        assert!(r.satisfied, "{r:?}");
    }
}

#[test]
fn smoothness_scales_quadratically_in_r() {
    let g = generate_sbm(&sbm(2, 200, 0.4, 0.02, true, 5)).unwrap();
    let one = check_smoothness(&g, 2, 2, 1.0, 9).unwrap();
    let two = check_smoothness(&g, 2, 2, 2.0, 9).unwrap();
    assert!(two.measured <= 4.0 * one.measured * (1.0 + 1e-12));
    assert!((two.measured - 4.0 * one.measured).abs() < 1e-9 * two.measured.max(1.0));
    assert_eq!(two.bound, 4.0 * one.bound);
    let delta = one.delta;
    assert!((one.bound - (32.0 * 2f64.sqrt() / delta + 256.0 / (delta * delta))).abs() < 1e-9 * one.bound);
}

#[test]
fn identical_specs_have_zero_kl() {
    let s = sbm(2, 120, 0.3, 0.02, true, 0);
    assert_eq!(pair_kl(&s, &s, 8, 77).unwrap(), 0.0);
}

#[test]
fn kl_concentrates_with_size() {
    let battery = TheoryBattery::new(0, 20);
    for (a, b) in &battery.convergence_pairs {
        let rows = check_kl_concentration(a, b, &[100, 200, 400, 800], 20, 8).unwrap();
        assert!(rows[3].std_kl < rows[0].std_kl, "{rows:?}");
        let late = (rows[3].mean_kl - rows[2].mean_kl).abs();
        let early = (rows[1].mean_kl - rows[0].mean_kl).abs();
        assert!(late < early, "{rows:?}");
    }
}

#[test]
fn preservation_identical_specs() {
    let s = sbm(2, 100, 0.3, 0.05, true, 4);
    let r = check_kl_preservation(&s, &s, 8, 1.0).unwrap();
    assert_eq!(r.structural_kl, 0.0);
    assert_eq!(r.check.measured, 0.0);
}

#[test]
fn preservation_exact_for_deterministic_graphs() {
    for bipartite in [true, false] {
        let a = sbm(2, 40, 1.0, 0.0, bipartite, 0);
        let b = sbm(4, 40, 1.0, 0.0, bipartite, 0);
        let r = check_kl_preservation(&a, &b, 8, 1.0).unwrap();
        assert!(r.structural_kl > 0.0);
        assert!(r.check.measured < 1e-8, "{r:?}");
    }
}

#[test]
fn preservation_bound_holds_across_gaps() {
    let mut prev_gap = f64::INFINITY;
    for inter in [0.005, 0.05, 0.15] {
        let a = sbm(2, 240, 0.3, inter, true, 0);
        let b = sbm(3, 240, 0.3, inter, true, 0);
        let s = preservation_series(&a, &b, 10, 8, 1.0).unwrap();
        assert!(s.results.iter().all(|r| r.check.satisfied), "inter {inter}: {s:?}");
        assert!(s.mean_min_delta < prev_gap);
        prev_gap = s.mean_min_delta;
    }
}

#[test]
fn battery_is_deterministic() {
    let mut battery = TheoryBattery::new(3, 2);
    battery.convergence_sizes = vec![60, 120];
    let a = battery.run().unwrap();
    let b = battery.run().unwrap();
    assert_eq!(a, b);
    assert_eq!(a.projection.len(), 4);
    assert!(a.table().contains("projection"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn samples_respect_structure(k in 1usize..4, per in 4usize..12, intra in 0.3f64..1.0, frac in 0.0f64..0.9, bipartite: bool, seed: u64) {
        let spec = SbmSpec::equal(k, k * per, intra, intra * frac, bipartite, seed);
        if let Ok(g) = generate_sbm(&spec) {
            prop_assert_eq!(g.labels.len(), k * per);
            prop_assert!(g.adjacency.is_symmetric());
            let m: usize = spec.sizes.iter().map(|s| s.div_ceil(2)).sum();
            for (x, y, _) in g.adjacency.entries() {
                prop_assert!(x != y);
                if bipartite {
                    prop_assert!((x < m) != (y < m));
                }
                if spec.inter_p == 0.0 {
                    prop_assert_eq!(g.labels[x], g.labels[y]);
                }
            }
            let basis = g.community_basis();
            let gram = basis.transpose() * &basis;
            prop_assert!((gram - DMatrix::<f64>::identity(k, k)).abs().max() < 1e-12);
        }
    }

    #[test]
    fn satisfied_flag_matches_comparison(seed in 0u64..1000) {
        let g = generate_sbm(&SbmSpec::equal(2, 60, 0.5, 0.05, true, seed)).unwrap();
        let r = check_projection(&g, 2, 2, seed).unwrap();
        prop_assert_eq!(r.satisfied, r.measured <= r.bound);
        let r = check_smoothness(&g, 2, 2, 1.5, seed).unwrap();
        prop_assert_eq!(r.satisfied, r.measured <= r.bound);
    }
}
