//! Lanczos iteration for the smallest eigenpairs of a sparse symmetric
//! matrix, with full reorthogonalization.
//!
//! A single start vector only ever sees one direction per eigenspace, so
//! repeated eigenvalues need two extra mechanisms:
//!
//! * when the Krylov space becomes invariant (`beta ≈ 0`) a fresh random
//!   vector orthogonal to the current basis starts a new segment, and the
//!   tridiagonal matrix gets a zero coupling at the boundary;
//! * after the wanted pairs converge, a probe run on the orthogonal
//!   complement of the converged vectors looks for Ritz values below the
//!   current cutoff. Ritz values bound the true ones from above, so any hit
//!   is a genuinely missed eigenvalue.
//!
//! A run that hits the step cap locks its converged Ritz pairs and restarts
//! from the sum of the unconverged wanted Ritz vectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::tridiag::{tridiagonal_eigen, Track};
use crate::error::{Error, Result};
use crate::graph::SparseSymmetricMatrix;

const BREAKDOWN: f64 = 1e-10;
const MAX_PROBES: usize = 64;
const MAX_RESTARTS: usize = 50;

#[derive(Debug, Clone, Copy)]
pub struct LanczosOptions {
    /// Ritz residual `‖Ly − θy‖` required for convergence.
    pub tol: f64,
    /// Cap on Krylov steps per run (restarts start a new run); `None` means
    /// `10·Φ + 50`.
    pub max_iter: Option<usize>,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: None,
        }
    }
}

pub(crate) struct Eigenpairs {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

enum Goal {
    Lowest(usize),
    Below(f64),
}

struct RunOutput {
    pairs: Eigenpairs,
    /// The run plus the locked vectors span the whole space.
    complete: bool,
    /// Set when the step cap was reached before every wanted pair converged;
    /// `pairs` then holds only the converged ones.
    restart: Option<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn orthogonalize(w: &mut [f64], locked: &[Vec<f64>], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for q in locked.iter().chain(basis) {
            let c = dot(q, w);
            axpy(w, -c, q);
        }
    }
}

fn random_orthogonal(
    n: usize,
    locked: &[Vec<f64>],
    basis: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
) -> Option<Vec<f64>> {
    for _ in 0..4 {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let before = norm(&v);
        orthogonalize(&mut v, locked, basis);
        let after = norm(&v);
        if after > 1e-8 * before {
            v.iter_mut().for_each(|x| *x /= after);
            return Some(v);
        }
    }
    None
}

fn krylov_run(
    op: &SparseSymmetricMatrix,
    locked: &[Vec<f64>],
    start: Option<Vec<f64>>,
    goal: Goal,
    max_steps: usize,
    tol: f64,
    rng: &mut ChaCha8Rng,
) -> Result<RunOutput> {
    let n = op.dim();
    let avail = n - locked.len().min(n);
    let max_dim = max_steps.min(avail);
    let empty = || RunOutput {
        pairs: Eigenpairs {
            values: Vec::new(),
            vectors: Vec::new(),
        },
        complete: true,
        restart: None,
    };
    if max_dim == 0 {
        return Ok(empty());
    }
    let seeded = start.and_then(|mut v| {
        orthogonalize(&mut v, locked, &[]);
        let nv = norm(&v);
        (nv > BREAKDOWN).then(|| v.into_iter().map(|x| x / nv).collect::<Vec<f64>>())
    });
    let Some(v0) = seeded.or_else(|| random_orthogonal(n, locked, &[], rng)) else {
        return Ok(empty());
    };

    let (check_start, interval) = match goal {
        Goal::Lowest(want) => (want, (want / 10).max(10)),
        Goal::Below(_) => (1, 10),
    };

    let mut basis = vec![v0];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];

    loop {
        let j = basis.len() - 1;
        op.mul_vec(&basis[j], &mut w);
        let a = dot(&basis[j], &w);
        alpha.push(a);
        axpy(&mut w, -a, &basis[j]);
        if j > 0 && beta[j - 1] != 0.0 {
            axpy(&mut w, -beta[j - 1], &basis[j - 1]);
        }
        orthogonalize(&mut w, locked, &basis);
        let b = norm(&w);
        let m = j + 1;

        let mut next = None;
        let breakdown = b <= BREAKDOWN;
        if m < avail {
            if breakdown {
                beta.push(0.0);
                next = random_orthogonal(n, locked, &basis, rng);
            } else {
                beta.push(b);
                next = Some(w.iter().map(|x| x / b).collect::<Vec<f64>>());
            }
        } else {
            beta.push(0.0);
        }
        let exhausted = next.is_none();
        let capped = m >= max_dim;

        let due = m >= check_start && (m - check_start) % interval == 0;
        if exhausted || capped || breakdown || due {
            let te = tridiagonal_eigen(&alpha, &beta[..m - 1], Track::LastRow)?;
            let coupling = beta[m - 1].abs();
            let residual = |k: usize| coupling * te.rows[0][k].abs();

            let mut restart_from = None;
            let selected: Option<Vec<usize>> = match goal {
                Goal::Lowest(want) => {
                    let take = want.min(m);
                    let worst = (0..take).map(residual).fold(0.0, f64::max);
                    if (m >= want || exhausted) && worst < tol {
                        Some((0..take).collect())
                    } else if exhausted && !breakdown {
                        return Err(Error::NoConvergence {
                            iterations: m,
                            residual: worst,
                        });
                    } else if capped || exhausted {
                        let (done, open): (Vec<usize>, Vec<usize>) = (0..take).partition(|&k| residual(k) < tol);
                        restart_from = Some(open);
                        Some(done)
                    } else {
                        None
                    }
                }
                Goal::Below(threshold) => {
                    let hits: Vec<usize> = (0..m).filter(|&k| te.values[k] < threshold).collect();
                    let settled = hits.iter().all(|&k| residual(k) < tol);
                    if (!hits.is_empty() && settled) || exhausted || capped {
                        Some(hits.into_iter().filter(|&k| residual(k) < tol).collect())
                    } else {
                        None
                    }
                }
            };

            if let Some(keep) = selected {
                let full = tridiagonal_eigen(&alpha, &beta[..m - 1], Track::Full)?;
                let ritz = |k: usize| {
                    let mut y = vec![0.0; n];
                    for (r, q) in basis.iter().enumerate() {
                        axpy(&mut y, full.rows[r][k], q);
                    }
                    y
                };
                let values = keep.iter().map(|&k| full.values[k]).collect();
                let vectors = keep.iter().map(|&k| ritz(k)).collect();
                let restart = restart_from.map(|open| {
                    let mut v = vec![0.0; n];
                    for k in open {
                        axpy(&mut v, 1.0, &ritz(k));
                    }
                    v
                });
                return Ok(RunOutput {
                    pairs: Eigenpairs { values, vectors },
                    complete: restart.is_none() && exhausted && m + locked.len() >= n,
                    restart,
                });
            }
        }

        match next {
            Some(v) => basis.push(v),
            None => unreachable!("exhausted runs always return"),
        }
    }
}

/// The `phi` smallest eigenpairs of `op`, ascending, deterministic in `seed`.
pub(crate) fn smallest_eigenpairs(
    op: &SparseSymmetricMatrix,
    phi: usize,
    seed: u64,
    opts: LanczosOptions,
) -> Result<Eigenpairs> {
    let n = op.dim();
    if phi == 0 || phi > n {
        return Err(Error::InvalidArgument(format!(
            "cutoff {phi} must be in 1..={n}"
        )));
    }
    let max_iter = opts.max_iter.unwrap_or(10 * phi + 50);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut pairs = Eigenpairs {
        values: Vec::new(),
        vectors: Vec::new(),
    };
    let mut start = None;
    let mut restarts = 0;
    loop {
        let run = krylov_run(op, &pairs.vectors, start.take(), Goal::Lowest(phi - pairs.values.len()), max_iter, opts.tol, &mut rng)?;
        pairs.values.extend(run.pairs.values);
        pairs.vectors.extend(run.pairs.vectors);
        match run.restart {
            None if run.complete && pairs.values.len() >= phi => {
                sort_pairs(&mut pairs, phi);
                return Ok(pairs);
            }
            None => break,
            Some(_) if restarts == MAX_RESTARTS => {
                return Err(Error::NoConvergence {
                    iterations: max_iter * (restarts + 1),
                    residual: f64::NAN,
                });
            }
            Some(v) => {
                start = Some(v);
                restarts += 1;
            }
        }
    }
    sort_pairs(&mut pairs, phi);
    if pairs.values.len() == n {
        return Ok(pairs);
    }

    let probe_steps = max_iter.min((phi / 2).max(50));
    for _ in 0..MAX_PROBES {
        let cutoff = pairs.values[phi - 1] - opts.tol;
        let probe = krylov_run(
            op,
            &pairs.vectors,
            None,
            Goal::Below(cutoff),
            probe_steps,
            opts.tol,
            &mut rng,
        )?;
        if probe.pairs.values.is_empty() {
            break;
        }
        pairs.values.extend(probe.pairs.values);
        pairs.vectors.extend(probe.pairs.vectors);
        sort_pairs(&mut pairs, phi);
    }
    Ok(pairs)
}

fn sort_pairs(pairs: &mut Eigenpairs, keep: usize) {
    let mut merged: Vec<(f64, Vec<f64>)> = pairs.values.drain(..).zip(pairs.vectors.drain(..)).collect();
    merged.sort_by(|a, b| a.0.total_cmp(&b.0));
    merged.truncate(keep);
    (pairs.values, pairs.vectors) = merged.into_iter().unzip();
}
