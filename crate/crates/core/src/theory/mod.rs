//! Empirical checks of the projection, concentration, preservation and
//! smoothness bounds on planted-partition graphs.

mod checks;
mod sbm;

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

pub use checks::{
    check_projection, check_kl_concentration, check_kl_preservation, check_smoothness, pair_kl, preservation_series,
    sample_seed, smoothness_bound, BoundCheckResult, ConvergenceRow, PreservationResult, PreservationSeries, MIN_EIGENGAP,
    PROBE_VECTORS,
};
pub use sbm::{expected_spectrum, generate_sbm, SbmGraph, SbmSpec};

use crate::error::Result;

/// Configured SBMs and sizes for the full set of checks.
#[derive(Debug, Clone, Serialize)]
pub struct TheoryBattery {
    pub seeds: usize,
    pub base_seed: u64,
    pub projection_specs: Vec<SbmSpec>,
    pub smoothness_specs: Vec<SbmSpec>,
    pub smoothness_r: f64,
    pub convergence_pairs: Vec<(SbmSpec, SbmSpec)>,
    pub convergence_sizes: Vec<usize>,
    /// Eigenvalues per kernel in the KL-based checks.
    pub kernel_phi: usize,
    pub separated_pair: (SbmSpec, SbmSpec),
    pub degenerate_pair: (SbmSpec, SbmSpec),
    pub preservation_constant: f64,
    /// Smallest eigengap counted as well separated.
    pub separation: f64,
}

impl TheoryBattery {
    pub fn new(base_seed: u64, seeds: usize) -> Self {
        let sbm = SbmSpec::equal;
        Self {
            seeds,
            base_seed,
            projection_specs: vec![sbm(3, 300, 0.3, 0.01, true, 0), sbm(3, 300, 0.3, 0.01, false, 0)],
            smoothness_specs: vec![sbm(2, 200, 0.4, 0.02, true, 0), sbm(2, 200, 0.4, 0.02, false, 0)],
            smoothness_r: 1.0,
            convergence_pairs: vec![
                (sbm(2, 100, 0.3, 0.02, true, 0), sbm(2, 100, 0.3, 0.08, true, 0)),
                (sbm(3, 100, 0.35, 0.02, true, 0), sbm(2, 100, 0.25, 0.05, true, 0)),
            ],
            convergence_sizes: vec![100, 200, 400, 800],
            kernel_phi: 8,
            separated_pair: (sbm(2, 240, 0.3, 0.02, true, 0), sbm(3, 240, 0.3, 0.02, true, 0)),
            degenerate_pair: (sbm(2, 240, 0.3, 0.15, true, 0), sbm(3, 240, 0.3, 0.15, true, 0)),
            preservation_constant: 1.0,
            separation: 0.1,
        }
    }

    fn seeded(&self, spec: &SbmSpec, family: usize) -> SbmSpec {
        spec.with_seed(sample_seed(self.base_seed, 1000 * (family + 1)))
    }

    pub fn run(&self) -> Result<TheoryReport> {
        let bound_runs = |specs: &[SbmSpec], offset: usize, f: &(dyn Fn(&SbmGraph, u64) -> Result<BoundCheckResult> + Sync)| {
            let jobs: Vec<(SbmSpec, u64)> = specs
                .iter()
                .enumerate()
                .flat_map(|(x, s)| (0..self.seeds).map(move |k| (s.clone(), sample_seed(self.base_seed ^ (offset + x) as u64, k))))
                .collect();
            jobs.par_iter()
                .map(|(s, seed)| f(&generate_sbm(&s.with_seed(*seed))?, *seed))
                .collect::<Result<Vec<_>>>()
        };
        let projection = bound_runs(&self.projection_specs, 100, &|g, seed| check_projection(g, g.communities, g.communities, seed))?;
        let r = self.smoothness_r;
        let smoothness = bound_runs(&self.smoothness_specs, 200, &|g, seed| check_smoothness(g, g.communities, g.communities, r, seed))?;
        let convergence = self
            .convergence_pairs
            .iter()
            .enumerate()
            .map(|(x, (a, b))| {
                let rows = check_kl_concentration(&self.seeded(a, x), b, &self.convergence_sizes, self.seeds, self.kernel_phi)?;
                Ok(ConvergenceTable { pair: x, rows })
            })
            .collect::<Result<Vec<_>>>()?;
        let (sa, sb) = &self.separated_pair;
        let separated = preservation_series(&self.seeded(sa, 10), sb, self.seeds, self.kernel_phi, self.preservation_constant)?;
        let (da, db) = &self.degenerate_pair;
        let degenerate = preservation_series(&self.seeded(da, 11), db, self.seeds, self.kernel_phi, self.preservation_constant)?;
        Ok(TheoryReport {
            projection,
            smoothness,
            convergence,
            separated,
            degenerate,
            separation: self.separation,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub pair: usize,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    /// Standard deviation at the largest size is below that at the smallest.
    pub fn concentrates(&self) -> bool {
        match (self.rows.first(), self.rows.last()) {
            (Some(a), Some(b)) if self.rows.len() > 1 => b.std_kl < a.std_kl,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryReport {
    pub projection: Vec<BoundCheckResult>,
    pub smoothness: Vec<BoundCheckResult>,
    pub convergence: Vec<ConvergenceTable>,
    pub separated: PreservationSeries,
    pub degenerate: PreservationSeries,
    pub separation: f64,
}

impl TheoryReport {
    fn bound_verdict(&self, name: &str, results: &[BoundCheckResult]) -> Verdict {
        let separated = results.iter().filter(|r| r.delta >= self.separation).count();
        let satisfied = results.iter().filter(|r| r.satisfied).count();
        let worst = results.iter().map(|r| r.measured / r.bound).fold(0.0, f64::max);
        let min_delta = results.iter().map(|r| r.delta).fold(f64::INFINITY, f64::min);
        Verdict {
            name: name.to_string(),
            passed: !results.is_empty() && separated == results.len() && satisfied == results.len(),
            detail: format!(
                "{satisfied}/{} satisfied, {separated} with gap >= {}, min gap {min_delta:.4}, max measured/bound {worst:.3e}",
                results.len(),
                self.separation
            ),
        }
    }

    pub fn verdicts(&self) -> Vec<Verdict> {
        let mut out = vec![self.bound_verdict("projection", &self.projection), self.bound_verdict("smoothness", &self.smoothness)];
        for t in &self.convergence {
            let (a, b) = (t.rows.first(), t.rows.last());
            out.push(Verdict {
                name: format!("kl-concentration pair {}", t.pair),
                passed: t.concentrates(),
                detail: match (a, b) {
                    (Some(a), Some(b)) => format!("std {:.3e} at n={} vs {:.3e} at n={}", a.std_kl, a.n, b.std_kl, b.n),
                    _ => "no rows".into(),
                },
            });
        }
        let all: Vec<&BoundCheckResult> = self.separated.results.iter().chain(&self.degenerate.results).map(|r| &r.check).collect();
        let held = all.iter().filter(|r| r.satisfied).count();
        out.push(Verdict {
            name: "kl-preservation bound".into(),
            passed: !all.is_empty() && held == all.len(),
            detail: format!(
                "{held}/{} within C/min(gap), max measured*gap {:.3e}",
                all.len(),
                all.iter().map(|r| r.measured * r.delta).fold(0.0, f64::max)
            ),
        });
        out.push(Verdict {
            name: "kl-preservation trend".into(),
            passed: self.separated.mean_measured < self.degenerate.mean_measured
                && self.separated.mean_min_delta > self.degenerate.mean_min_delta,
            detail: format!(
                "mean deviation {:.3e} at mean gap {:.3} vs {:.3e} at mean gap {:.3}",
                self.separated.mean_measured,
                self.separated.mean_min_delta,
                self.degenerate.mean_measured,
                self.degenerate.mean_min_delta
            ),
        });
        out
    }

    /// Plain-text verdict table followed by the convergence tables.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<34} {:<6} detail", "check", "result");
        for v in self.verdicts() {
            let _ = writeln!(s, "{:<34} {:<6} {}", v.name, if v.passed { "PASS" } else { "FAIL" }, v.detail);
        }
        for t in &self.convergence {
            let _ = writeln!(s, "\nconvergence pair {}\n{:>6} {:>12} {:>12}", t.pair, "n", "mean_kl", "std_kl");
            for r in &t.rows {
                let _ = writeln!(s, "{:>6} {:>12.4e} {:>12.4e}", r.n, r.mean_kl, r.std_kl);
            }
        }
        s
    }
}
