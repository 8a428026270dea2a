//! Partial spectra of normalized Laplacians and the low-pass operators built
//! on them: graph Fourier transform, low-pass collaborative filter and
//! low-pass convolution.

mod cache;
mod kernel;
mod lanczos;
mod tridiag;

use nalgebra::DMatrix;

pub use cache::{cache_path, load_spectrum, load_or_compute, save_spectrum};
pub use kernel::{aligned_kl, kl_divergence, SpectralKernel, DEFAULT_EPSILON};
pub use lanczos::LanczosOptions;

use crate::error::{Error, Result};
use crate::graph::{graph_laplacian, BipartiteGraph, SparseSymmetricMatrix};

/// Dense node-by-feature matrix (`(M+N) × D`), or spectral coefficients
/// (`Φ × D`).
pub type EmbeddingMatrix = DMatrix<f64>;

/// The `Φ` smallest eigenpairs of a normalized Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialSpectrum {
    eigenvalues: Vec<f64>,
    /// `n × Φ`, orthonormal columns.
    eigenvectors: DMatrix<f64>,
}

impl PartialSpectrum {
    /// Wraps precomputed eigenpairs, sorting them ascending and fixing signs.
    pub fn from_parts(eigenvalues: Vec<f64>, eigenvectors: DMatrix<f64>) -> Result<Self> {
        if eigenvalues.len() != eigenvectors.ncols() {
            return Err(Error::DimensionMismatch {
                expected: eigenvalues.len(),
                actual: eigenvectors.ncols(),
            });
        }
        let mut order: Vec<usize> = (0..eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eigenvalues[a].total_cmp(&eigenvalues[b]));
        let values: Vec<f64> = order.iter().map(|&k| eigenvalues[k]).collect();
        let mut vectors = DMatrix::zeros(eigenvectors.nrows(), order.len());
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eigenvectors.column(src));
        }
        fix_signs(&mut vectors);
        Ok(Self {
            eigenvalues: values,
            eigenvectors: vectors,
        })
    }

    /// Number of retained eigenpairs (`Φ`).
    pub fn cutoff(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Number of graph nodes.
    pub fn dim(&self) -> usize {
        self.eigenvectors.nrows()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// `‖L·P̄ − P̄·diag(Λ)‖_F / ‖P̄‖_F`.
    pub fn relative_residual(&self, l: &SparseSymmetricMatrix) -> f64 {
        let lp = l.mul_dense(&self.eigenvectors);
        let mut r = lp;
        for (k, lambda) in self.eigenvalues.iter().enumerate() {
            let col = self.eigenvectors.column(k) * *lambda;
            let mut rc = r.column_mut(k);
            rc -= col;
        }
        r.norm() / self.eigenvectors.norm()
    }

    /// Largest deviation of the Gram matrix `P̄ᵀP̄` from identity.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.eigenvectors.transpose() * &self.eigenvectors;
        let id = DMatrix::<f64>::identity(g.nrows(), g.ncols());
        (g - id).abs().max()
    }

    fn check_rows(&self, z: &EmbeddingMatrix) -> Result<()> {
        if z.nrows() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: z.nrows(),
            });
        }
        Ok(())
    }

    /// Graph Fourier transform restricted to the retained basis: `P̄ᵀZ`.
    pub fn gft(&self, z: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        self.check_rows(z)?;
        Ok(self.eigenvectors.transpose() * z)
    }

    /// `P̄·C` for spectral coefficients `C` (`Φ × D`).
    pub fn inverse_gft(&self, coeffs: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        if coeffs.nrows() != self.cutoff() {
            return Err(Error::DimensionMismatch {
                expected: self.cutoff(),
                actual: coeffs.nrows(),
            });
        }
        Ok(&self.eigenvectors * coeffs)
    }

    /// Low-pass collaborative filter `P̄P̄ᵀZ`.
    pub fn lcf(&self, z: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        let c = self.gft(z)?;
        self.inverse_gft(&c)
    }

    /// Low-pass convolution `P̄·diag(k)·P̄ᵀ·Z`.
    pub fn low_pass_convolution(&self, kernel: &[f64], z: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        if kernel.len() != self.cutoff() {
            return Err(Error::DimensionMismatch {
                expected: self.cutoff(),
                actual: kernel.len(),
            });
        }
        let mut c = self.gft(z)?;
        scale_rows(&mut c, kernel);
        self.inverse_gft(&c)
    }

    /// `λ_{k+1} − λ_k` with 1-based `k`.
    pub fn eigengap(&self, k: usize) -> Result<f64> {
        if k == 0 || k + 1 > self.cutoff() {
            return Err(Error::IndexOutOfRange {
                index: k,
                len: self.cutoff(),
            });
        }
        Ok((self.eigenvalues[k] - self.eigenvalues[k - 1]).max(0.0))
    }

    /// The first `k` eigenpairs.
    pub fn truncated(&self, k: usize) -> Result<PartialSpectrum> {
        if k == 0 || k > self.cutoff() {
            return Err(Error::IndexOutOfRange {
                index: k,
                len: self.cutoff(),
            });
        }
        Ok(PartialSpectrum {
            eigenvalues: self.eigenvalues[..k].to_vec(),
            eigenvectors: self.eigenvectors.columns(0, k).into_owned(),
        })
    }
}

/// Multiplies row `r` of `m` by `scale[r]`.
pub(crate) fn scale_rows(m: &mut DMatrix<f64>, scale: &[f64]) {
    for (r, s) in scale.iter().enumerate() {
        let mut row = m.row_mut(r);
        row *= *s;
    }
}

/// Makes the first non-negligible component of each column positive.
fn fix_signs(vectors: &mut DMatrix<f64>) {
    for mut col in vectors.column_iter_mut() {
        if let Some(first) = col.iter().copied().find(|x| x.abs() > 1e-12) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
}

/// First `phi` eigenpairs of a sparse symmetric matrix via Lanczos.
pub fn lanczos_partial_eigs(l: &SparseSymmetricMatrix, phi: usize, seed: u64) -> Result<PartialSpectrum> {
    lanczos_partial_eigs_with(l, phi, seed, LanczosOptions::default())
}

pub fn lanczos_partial_eigs_with(
    l: &SparseSymmetricMatrix,
    phi: usize,
    seed: u64,
    opts: LanczosOptions,
) -> Result<PartialSpectrum> {
    let pairs = lanczos::smallest_eigenpairs(l, phi, seed, opts)?;
    let n = l.dim();
    let mut vectors = DMatrix::zeros(n, pairs.values.len());
    for (k, v) in pairs.vectors.iter().enumerate() {
        vectors.set_column(k, &nalgebra::DVector::from_column_slice(v));
    }
    let spectrum = PartialSpectrum::from_parts(pairs.values, vectors)?;
    let residual = spectrum.relative_residual(l);
    if !(residual < 1e-6) {
        return Err(Error::NoConvergence {
            iterations: opts.max_iter.unwrap_or(10 * phi + 50),
            residual,
        });
    }
    Ok(spectrum)
}

/// Cutoff actually used for a graph with `nodes` nodes when `phi` is
/// requested: graphs with fewer than `phi` nodes keep `nodes − 1`
/// eigenpairs.
pub fn effective_cutoff(nodes: usize, phi: usize) -> usize {
    if nodes < phi {
        nodes.saturating_sub(1).max(1)
    } else {
        phi
    }
}

/// Normalized-Laplacian spectrum of a bipartite graph at cutoff
/// `effective_cutoff(nodes, phi)`.
pub fn graph_spectrum(g: &BipartiteGraph, phi: usize, seed: u64) -> Result<PartialSpectrum> {
    let l = graph_laplacian(g)?;
    lanczos_partial_eigs(&l, effective_cutoff(g.num_nodes(), phi), seed)
}
