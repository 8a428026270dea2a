//! Normalized low-pass eigenvalue distributions and their KL divergence.

use crate::error::{Error, Result};

use super::PartialSpectrum;

pub const DEFAULT_EPSILON: f64 = 1e-10;

/// Eigenvalues below this are treated as zero when deciding degeneracy.
const ZERO_SPECTRUM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralKernel {
    probs: Vec<f64>,
    epsilon: f64,
}

impl SpectralKernel {
    /// Builds a kernel from raw eigenvalues: each entry is floored at
    /// `epsilon · Σλ`, then the vector is renormalized.
    pub fn from_eigenvalues(eigenvalues: &[f64], epsilon: f64) -> Result<Self> {
        if eigenvalues.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "kernel needs at least 2 eigenvalues, got {}",
                eigenvalues.len()
            )));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidArgument(format!("epsilon {epsilon} must be in (0,1)")));
        }
        if eigenvalues.iter().all(|&l| l < ZERO_SPECTRUM) {
            return Err(Error::DegenerateSpectrum);
        }
        let values: Vec<f64> = eigenvalues.iter().map(|&l| l.max(0.0)).collect();
        let total: f64 = values.iter().sum();
        Ok(Self::smoothed(values.iter().map(|&l| l / total).collect(), epsilon))
    }

    /// Floors a probability vector at `epsilon` of its mass and renormalizes.
    fn smoothed(probs: Vec<f64>, epsilon: f64) -> Self {
        let total: f64 = probs.iter().sum();
        let floor = epsilon * total;
        let floored: Vec<f64> = probs.iter().map(|&p| p.max(floor)).collect();
        let sum: f64 = floored.iter().sum();
        Self {
            probs: floored.into_iter().map(|p| p / sum).collect(),
            epsilon,
        }
    }

    pub fn extract(spec: &PartialSpectrum, epsilon: f64) -> Result<Self> {
        Self::from_eigenvalues(spec.eigenvalues(), epsilon)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// First `len` entries, re-smoothed and renormalized.
    pub fn truncated(&self, len: usize) -> Result<Self> {
        if len < 2 || len > self.probs.len() {
            return Err(Error::IndexOutOfRange {
                index: len,
                len: self.probs.len(),
            });
        }
        Ok(Self::smoothed(self.probs[..len].to_vec(), self.epsilon))
    }
}

/// `Σ p(i) ln(p(i)/q(i))` for equal-length kernels.
pub fn kl_divergence(reference: &SpectralKernel, client: &SpectralKernel) -> Result<f64> {
    if reference.len() != client.len() {
        return Err(Error::DimensionMismatch {
            expected: reference.len(),
            actual: client.len(),
        });
    }
    let kl = reference
        .probs
        .iter()
        .zip(&client.probs)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| p * (p / q).ln())
        .sum::<f64>();
    Ok(kl.max(0.0))
}

/// KL divergence after truncating the longer kernel to the shorter length.
pub fn aligned_kl(reference: &SpectralKernel, client: &SpectralKernel) -> Result<f64> {
    let n = reference.len().min(client.len());
    let r = if reference.len() > n { reference.truncated(n)? } else { reference.clone() };
    let c = if client.len() > n { client.truncated(n)? } else { client.clone() };
    kl_divergence(&r, &c)
}
