use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use super::sbm::{expected_spectrum, generate_sbm, SbmGraph, SbmSpec};
use crate::error::{Error, Result};
use crate::federation::mix;
use crate::spectral::{aligned_kl, lanczos_partial_eigs, PartialSpectrum, SpectralKernel, DEFAULT_EPSILON};

/// Random directions tried per bound check.
pub const PROBE_VECTORS: usize = 100;

/// Eigengaps at or below this are rejected.
pub const MIN_EIGENGAP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheckResult {
    pub check: String,
    pub measured: f64,
    pub bound: f64,
    pub satisfied: bool,
    pub n: usize,
    pub k: usize,
    pub delta: f64,
    pub phi: usize,
    pub r: Option<f64>,
    pub seed: u64,
}

impl BoundCheckResult {
    fn new(check: &str, measured: f64, bound: f64, n: usize, k: usize, delta: f64, phi: usize, r: Option<f64>, seed: u64) -> Self {
        Self {
            check: check.to_string(),
            measured,
            bound,
            satisfied: measured <= bound,
            n,
            k,
            delta,
            phi,
            r,
            seed,
        }
    }
}

/// Lowest `k + 1` eigenpairs and the gap `λ_{k+1} − λ_k`.
fn spectrum_with_gap(g: &SbmGraph, k: usize, seed: u64) -> Result<(PartialSpectrum, f64)> {
    if k == 0 || k + 1 >= g.num_nodes() {
        return Err(Error::InvalidArgument(format!("k = {k} on {} nodes", g.num_nodes())));
    }
    let spec = lanczos_partial_eigs(&g.laplacian()?, k + 1, seed)?;
    let delta = spec.eigengap(k)?;
    if delta <= MIN_EIGENGAP {
        return Err(Error::EigengapTooSmall(delta));
    }
    Ok((spec, delta))
}

fn check_cutoff(g: &SbmGraph, k: usize, phi: usize) -> Result<()> {
    if k != g.communities {
        return Err(Error::InvalidArgument(format!("k = {k} but the graph has {} planted communities", g.communities)));
    }
    if phi != k {
        return Err(Error::InvalidArgument(format!("cutoff must sit between λ_k and λ_(k+1): phi {phi} != k {k}")));
    }
    Ok(())
}

fn project(basis: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    basis * (basis.transpose() * x)
}

fn probes(n: usize, scale: f64, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ 0x7072_6f62));
    (0..PROBE_VECTORS)
        .map(|_| {
            let v = DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let norm = v.norm();
            v * (scale / norm)
        })
        .collect()
}

/// Largest `‖P_k P_kᵀ x − Π x‖₂` over random unit vectors, against
/// `8√k / δ`.
pub fn check_projection(g: &SbmGraph, k: usize, phi: usize, seed: u64) -> Result<BoundCheckResult> {
    check_cutoff(g, k, phi)?;
    let (spec, delta) = spectrum_with_gap(g, k, seed)?;
    let low = spec.truncated(k)?;
    let basis = g.community_basis();
    let measured = probes(g.num_nodes(), 1.0, seed)
        .iter()
        .map(|x| (project(low.eigenvectors(), x) - project(&basis, x)).norm())
        .fold(0.0, f64::max);
    let bound = 8.0 * (k as f64).sqrt() / delta;
    Ok(BoundCheckResult::new("projection", measured, bound, g.num_nodes(), k, delta, phi, None, seed))
}

/// `32√k r²/δ + 128 k r²/δ²`.
pub fn smoothness_bound(k: usize, r: f64, delta: f64) -> f64 {
    let k = k as f64;
    32.0 * k.sqrt() * r * r / delta + 128.0 * k * r * r / (delta * delta)
}

/// Largest gap in Dirichlet energy `vᵀLv` between the low-pass output and
/// the planted-community projection, over random `x` with `‖x‖ = r`.
pub fn check_smoothness(g: &SbmGraph, k: usize, phi: usize, r: f64, seed: u64) -> Result<BoundCheckResult> {
    check_cutoff(g, k, phi)?;
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!("norm bound r = {r} must be positive")));
    }
    let (spec, delta) = spectrum_with_gap(g, k, seed)?;
    let low = spec.truncated(k)?;
    let basis = g.community_basis();
    let l = g.laplacian()?;
    let measured = probes(g.num_nodes(), r, seed)
        .iter()
        .map(|x| {
            let z = project(low.eigenvectors(), x);
            let zs = project(&basis, x);
            (l.quadratic_form(z.as_slice()) - l.quadratic_form(zs.as_slice())).abs()
        })
        .fold(0.0, f64::max);
    let bound = smoothness_bound(k, r, delta);
    Ok(BoundCheckResult::new("smoothness", measured, bound, g.num_nodes(), k, delta, phi, Some(r), seed))
}

fn graph_kernel(g: &SbmGraph, phi: usize, seed: u64) -> Result<SpectralKernel> {
    let count = phi.min(g.num_nodes() - 1);
    let spec = lanczos_partial_eigs(&g.laplacian()?, count, seed)?;
    SpectralKernel::extract(&spec, DEFAULT_EPSILON)
}

/// Seed of the `index`-th sample in a battery.
pub fn sample_seed(base: u64, index: usize) -> u64 {
    mix(base ^ mix(index as u64 + 1))
}

/// `KL(K¹ ‖ K²)` for one pair of samples drawn with the same seed.
pub fn pair_kl(a: &SbmSpec, b: &SbmSpec, phi: usize, seed: u64) -> Result<f64> {
    let ga = generate_sbm(&a.with_seed(seed))?;
    let gb = generate_sbm(&b.with_seed(seed))?;
    aligned_kl(&graph_kernel(&ga, phi, seed)?, &graph_kernel(&gb, phi, seed)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub mean_kl: f64,
    pub std_kl: f64,
    pub samples: usize,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (v.len() - 1) as f64
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Mean and sample standard deviation of the pair KL at each size, with both
/// specs rescaled to `n` nodes. Sample `s` uses the same seed at every size.
pub fn check_kl_concentration(a: &SbmSpec, b: &SbmSpec, sizes: &[usize], seeds: usize, phi: usize) -> Result<Vec<ConvergenceRow>> {
    if seeds == 0 || sizes.is_empty() {
        return Err(Error::InvalidArgument("convergence check needs sizes and seeds".into()));
    }
    sizes
        .iter()
        .map(|&n| {
            let (sa, sb) = (a.resized(n), b.resized(n));
            let kls = (0..seeds)
                .into_par_iter()
                .map(|s| pair_kl(&sa, &sb, phi, sample_seed(a.seed, s)))
                .collect::<Result<Vec<f64>>>()?;
            let (mean_kl, std_kl) = mean_std(&kls);
            Ok(ConvergenceRow {
                n,
                mean_kl,
                std_kl,
                samples: seeds,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreservationResult {
    pub check: BoundCheckResult,
    pub empirical_kl: f64,
    pub structural_kl: f64,
    /// `measured · min(δ₁, δ₂)`.
    pub ratio: f64,
}

/// `|KL(K¹‖K²) − KL(K¹_struct‖K²_struct)|` for one sampled pair, where the
/// structural kernels come from the expected-adjacency spectra. The bound is
/// `constant / min(δ₁, δ₂)` with the empirical eigengaps at each spec's own
/// community count.
pub fn check_kl_preservation(a: &SbmSpec, b: &SbmSpec, phi: usize, constant: f64) -> Result<PreservationResult> {
    let ga = generate_sbm(a)?;
    let gb = generate_sbm(b)?;
    let (_, da) = spectrum_with_gap(&ga, a.communities(), a.seed)?;
    let (_, db) = spectrum_with_gap(&gb, b.communities(), b.seed)?;
    let empirical_kl = aligned_kl(&graph_kernel(&ga, phi, a.seed)?, &graph_kernel(&gb, phi, b.seed)?)?;
    let structural = |s: &SbmSpec| -> Result<SpectralKernel> {
        let values = expected_spectrum(s)?;
        let count = phi.min(values.len() - 1);
        SpectralKernel::from_eigenvalues(&values[..count], DEFAULT_EPSILON)
    };
    let structural_kl = aligned_kl(&structural(a)?, &structural(b)?)?;
    let measured = (empirical_kl - structural_kl).abs();
    let delta = da.min(db);
    let k = a.communities().max(b.communities());
    let n = ga.num_nodes().min(gb.num_nodes());
    Ok(PreservationResult {
        check: BoundCheckResult::new("kl-preservation", measured, constant / delta, n, k, delta, phi, None, a.seed),
        empirical_kl,
        structural_kl,
        ratio: measured * delta,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreservationSeries {
    pub mean_measured: f64,
    pub mean_min_delta: f64,
    pub mean_ratio: f64,
    pub results: Vec<PreservationResult>,
}

/// Preservation over `seeds` independent pairs; both specs of sample `s`
/// share the seed.
pub fn preservation_series(a: &SbmSpec, b: &SbmSpec, seeds: usize, phi: usize, constant: f64) -> Result<PreservationSeries> {
    if seeds == 0 {
        return Err(Error::InvalidArgument("preservation series needs seeds".into()));
    }
    let results = (0..seeds)
        .into_par_iter()
        .map(|s| {
            let seed = sample_seed(a.seed, s);
            check_kl_preservation(&a.with_seed(seed), &b.with_seed(seed), phi, constant)
        })
        .collect::<Result<Vec<_>>>()?;
    let avg = |f: &dyn Fn(&PreservationResult) -> f64| results.iter().map(f).sum::<f64>() / results.len() as f64;
    Ok(PreservationSeries {
        mean_measured: avg(&|r| r.check.measured),
        mean_min_delta: avg(&|r| r.check.delta),
        mean_ratio: avg(&|r| r.ratio),
        results,
    })
}
