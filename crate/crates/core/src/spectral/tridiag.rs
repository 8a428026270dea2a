//! Implicit QL iteration for symmetric tridiagonal matrices.

use crate::error::{Error, Result};

/// Which rows of the eigenvector matrix to accumulate.
pub(crate) enum Track {
    /// Eigenvalues only.
    #[allow(dead_code)]
    None,
    /// Only the last row (enough for Lanczos residual estimates).
    LastRow,
    /// The full eigenvector matrix.
    Full,
}

/// Eigen-decomposition of a symmetric tridiagonal matrix.
pub(crate) struct TridiagEigen {
    /// Ascending eigenvalues.
    pub values: Vec<f64>,
    /// Tracked rows, row-major; row `r` holds component `r` of each
    /// eigenvector in the same order as `values`.
    pub rows: Vec<Vec<f64>>,
}

/// `diag` has length n, `off` has length n-1 (`off[i]` couples i and i+1).
pub(crate) fn tridiagonal_eigen(diag: &[f64], off: &[f64], track: Track) -> Result<TridiagEigen> {
    let n = diag.len();
    if n == 0 {
        return Ok(TridiagEigen {
            values: Vec::new(),
            rows: Vec::new(),
        });
    }
    debug_assert_eq!(off.len() + 1, n);
    let mut d = diag.to_vec();
    let mut e = vec![0.0; n];
    e[..n - 1].copy_from_slice(off);

    let mut z: Vec<Vec<f64>> = match track {
        Track::None => Vec::new(),
        Track::LastRow => {
            let mut row = vec![0.0; n];
            row[n - 1] = 1.0;
            vec![row]
        }
        Track::Full => (0..n)
            .map(|r| {
                let mut row = vec![0.0; n];
                row[r] = 1.0;
                row
            })
            .collect(),
    };

    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 100 {
                return Err(Error::NoConvergence {
                    iterations: iter,
                    residual: e[l].abs(),
                });
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for row in z.iter_mut() {
                    let f = row[i + 1];
                    row[i + 1] = s * row[i] + c * f;
                    row[i] = c * row[i] - s * f;
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let values = order.iter().map(|&k| d[k]).collect();
    let rows = z
        .into_iter()
        .map(|row| order.iter().map(|&k| row[k]).collect())
        .collect();
    Ok(TridiagEigen { values, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn dense(diag: &[f64], off: &[f64]) -> DMatrix<f64> {
        let n = diag.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = diag[i];
            if i + 1 < n {
                m[(i, i + 1)] = off[i];
                m[(i + 1, i)] = off[i];
            }
        }
        m
    }

    #[test]
    fn matches_dense_solver() {
        let diag = [2.0, -1.0, 0.5, 3.0, 1.25, 0.0];
        let off = [0.3, 1.1, -0.7, 0.05, 2.0];
        let te = tridiagonal_eigen(&diag, &off, Track::Full).unwrap();
        let mut want: Vec<f64> = dense(&diag, &off).symmetric_eigen().eigenvalues.iter().copied().collect();
        want.sort_by(f64::total_cmp);
        for (a, b) in te.values.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        // columns are eigenvectors
        let t = dense(&diag, &off);
        let n = diag.len();
        for k in 0..n {
            let v = nalgebra::DVector::from_fn(n, |r, _| te.rows[r][k]);
            let res = &t * &v - &v * te.values[k];
            assert!(res.norm() < 1e-12);
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn last_row_matches_full() {
        let diag = [1.0, 2.0, 3.0, 4.0];
        let off = [0.5, 0.0, 0.25];
        let full = tridiagonal_eigen(&diag, &off, Track::Full).unwrap();
        let last = tridiagonal_eigen(&diag, &off, Track::LastRow).unwrap();
        for k in 0..4 {
            assert!((full.rows[3][k] - last.rows[0][k]).abs() < 1e-14);
        }
    }

    #[test]
    fn single_entry() {
        let te = tridiagonal_eigen(&[5.0], &[], Track::Full).unwrap();
        assert_eq!(te.values, vec![5.0]);
        assert_eq!(te.rows, vec![vec![1.0]]);
    }
}
