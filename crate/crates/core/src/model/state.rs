use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::mlp::MlpParams;
use crate::error::{Error, Result};
use crate::graph::{compute_popularity, BipartiteGraph, PopularityScores};
use crate::spectral::{EmbeddingMatrix, PartialSpectrum};

/// Shape of a client model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub embed_dim: usize,
    pub gcn_layers: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            gcn_layers: 2,
        }
    }
}

/// Standard deviation of the initial node embeddings.
pub const EMBEDDING_INIT_SCALE: f64 = 0.1;

/// Every trainable tensor of a client. Also used, with the same shapes, for
/// gradients and optimizer accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `(M+N) × D`, users first.
    pub embeddings: DMatrix<f64>,
    /// One length-`Φ` kernel per convolution layer.
    pub layer_kernels: Vec<Vec<f64>>,
    /// `(L+1)·D → D → D`.
    pub pooling: MlpParams,
    /// `3·D → D → 1`.
    pub predictive: MlpParams,
    /// `1 → D → D`.
    pub user_bias: MlpParams,
    pub item_bias: MlpParams,
}

impl ModelParams {
    pub fn random<R: Rng>(nodes: usize, cutoff: usize, dims: ModelDims, rng: &mut R) -> Self {
        let d = dims.embed_dim;
        let embeddings = DMatrix::from_fn(nodes, d, |_, _| {
            EMBEDDING_INIT_SCALE * rng.sample::<f64, _>(StandardNormal)
        });
        Self {
            embeddings,
            layer_kernels: vec![vec![1.0; cutoff]; dims.gcn_layers],
            pooling: MlpParams::random(&[(dims.gcn_layers + 1) * d, d, d], rng),
            predictive: MlpParams::random(&[3 * d, d, 1], rng),
            user_bias: MlpParams::random(&[1, d, d], rng),
            item_bias: MlpParams::random(&[1, d, d], rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            embeddings: DMatrix::zeros(self.embeddings.nrows(), self.embeddings.ncols()),
            layer_kernels: self.layer_kernels.iter().map(|k| vec![0.0; k.len()]).collect(),
            pooling: self.pooling.zeros_like(),
            predictive: self.predictive.zeros_like(),
            user_bias: self.user_bias.zeros_like(),
            item_bias: self.item_bias.zeros_like(),
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![self.embeddings.as_slice()];
        out.extend(self.layer_kernels.iter().map(|k| k.as_slice()));
        for m in [&self.pooling, &self.predictive, &self.user_bias, &self.item_bias] {
            out.extend(m.tensors());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.embeddings.as_mut_slice()];
        out.extend(self.layer_kernels.iter_mut().map(|k| k.as_mut_slice()));
        for m in [&mut self.pooling, &mut self.predictive, &mut self.user_bias, &mut self.item_bias] {
            out.extend(m.tensors_mut());
        }
        out
    }

    /// Human-readable tensor names in `tensors()` order.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = vec!["embeddings".to_string()];
        out.extend((0..self.layer_kernels.len()).map(|l| format!("layer_kernel[{l}]")));
        for (name, m) in [
            ("pooling", &self.pooling),
            ("predictive", &self.predictive),
            ("user_bias", &self.user_bias),
            ("item_bias", &self.item_bias),
        ] {
            for k in 0..m.layers.len() {
                out.push(format!("{name}.w{k}"));
                out.push(format!("{name}.b{k}"));
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// One client's model together with its local graph and spectrum.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub params: ModelParams,
    /// Optimizer accumulators, shaped like `params`.
    pub optimizer_state: ModelParams,
    /// Average margin from the latest local training.
    pub local_margin_avg: f64,
    /// Blended margin received from the server, if any.
    pub received_global_margin: Option<f64>,
    graph: Arc<BipartiteGraph>,
    spectrum: Arc<PartialSpectrum>,
    popularity: Arc<PopularityScores>,
}

impl ClientState {
    pub fn new<R: Rng>(
        id: usize,
        graph: Arc<BipartiteGraph>,
        spectrum: Arc<PartialSpectrum>,
        dims: ModelDims,
        rng: &mut R,
    ) -> Result<Self> {
        if spectrum.dim() != graph.num_nodes() {
            return Err(Error::DimensionMismatch {
                expected: graph.num_nodes(),
                actual: spectrum.dim(),
            });
        }
        let popularity = Arc::new(compute_popularity(&graph)?);
        let params = ModelParams::random(graph.num_nodes(), spectrum.cutoff(), dims, rng);
        let optimizer_state = params.zeros_like();
        Ok(Self {
            id,
            params,
            optimizer_state,
            local_margin_avg: 0.0,
            received_global_margin: None,
            graph,
            spectrum,
            popularity,
        })
    }

    /// Replaces the parameters, checking shapes.
    pub fn with_params(mut self, params: ModelParams) -> Result<Self> {
        let same = params.tensors().iter().map(|t| t.len()).eq(self.params.tensors().iter().map(|t| t.len()));
        if !same || params.embeddings.nrows() != self.params.embeddings.nrows() {
            return Err(Error::ShapeMismatch("checkpoint parameters do not fit this client".into()));
        }
        self.params = params;
        Ok(self)
    }

    /// Swaps in a graph over the same users and items, keeping the
    /// spectrum. Popularity is recomputed from the new edges.
    pub fn replace_graph(&mut self, graph: Arc<BipartiteGraph>) -> Result<()> {
        if graph.num_users() != self.graph.num_users() || graph.num_items() != self.graph.num_items() {
            return Err(Error::ShapeMismatch(format!(
                "replacement graph is {}x{}, client graph is {}x{}",
                graph.num_users(),
                graph.num_items(),
                self.graph.num_users(),
                self.graph.num_items()
            )));
        }
        self.popularity = Arc::new(compute_popularity(&graph)?);
        self.graph = graph;
        Ok(())
    }

    pub fn graph(&self) -> &BipartiteGraph {
        &self.graph
    }

    pub fn spectrum(&self) -> &PartialSpectrum {
        &self.spectrum
    }

    pub fn popularity(&self) -> &PopularityScores {
        &self.popularity
    }

    pub fn num_users(&self) -> usize {
        self.graph.num_users()
    }

    pub fn num_items(&self) -> usize {
        self.graph.num_items()
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            embed_dim: self.params.embeddings.ncols(),
            gcn_layers: self.params.layer_kernels.len(),
        }
    }

    /// Spectral coefficients of every layer: `C₀ = P̄ᵀZ⁰`, `C_l = k_l ⊙ C_{l−1}`.
    pub(crate) fn layer_coefficients(&self) -> Result<Vec<DMatrix<f64>>> {
        let mut coeffs = vec![self.spectrum.gft(&self.params.embeddings)?];
        for (l, kernel) in self.params.layer_kernels.iter().enumerate() {
            let mut c = coeffs[l].clone();
            crate::spectral::scale_rows(&mut c, kernel);
            if c.iter().any(|x| !x.is_finite()) {
                return Err(Error::NumericalBlowUp(l + 1));
            }
            coeffs.push(c);
        }
        Ok(coeffs)
    }

    /// All layer outputs `[Z⁰, Z¹, …, Z^L]`, each the low-pass convolution
    /// of the previous one with its layer kernel.
    pub fn forward_lgcn(&self) -> Result<Vec<EmbeddingMatrix>> {
        let coeffs = self.layer_coefficients()?;
        let mut out = vec![self.params.embeddings.clone()];
        for c in &coeffs[1..] {
            out.push(self.spectrum.inverse_gft(c)?);
        }
        Ok(out)
    }

    /// Row-wise pooling MLP over the concatenated layer outputs.
    pub fn pool(&self, layer_outputs: &[EmbeddingMatrix]) -> Result<EmbeddingMatrix> {
        let d = self.params.embeddings.ncols();
        if layer_outputs.len() != self.params.layer_kernels.len() + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.params.layer_kernels.len() + 1,
                actual: layer_outputs.len(),
            });
        }
        let rows = layer_outputs[0].nrows();
        let mut x = DMatrix::zeros(rows, d * layer_outputs.len());
        for (l, z) in layer_outputs.iter().enumerate() {
            if z.nrows() != rows || z.ncols() != d {
                return Err(Error::ShapeMismatch(format!("layer {l} output is {}x{}", z.nrows(), z.ncols())));
            }
            x.columns_mut(l * d, d).copy_from(z);
        }
        self.params.pooling.forward(&x)
    }

    /// Pooled embeddings of all nodes (users first).
    pub fn pooled_embeddings(&self) -> Result<EmbeddingMatrix> {
        let layers = self.forward_lgcn()?;
        self.pool(&layers)
    }

    fn check_pair(&self, u: usize, i: usize) -> Result<()> {
        if u >= self.num_users() {
            return Err(Error::IndexOutOfRange {
                index: u,
                len: self.num_users(),
            });
        }
        if i >= self.num_items() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.num_items(),
            });
        }
        Ok(())
    }

    /// Raw predictive-MLP output for a user-item pair.
    pub fn predict_logit(&self, u: usize, i: usize, pooled: &EmbeddingMatrix) -> Result<f64> {
        self.check_pair(u, i)?;
        let d = pooled.ncols();
        let m = self.num_users();
        let mut x = DMatrix::zeros(1, 3 * d);
        for c in 0..d {
            let (a, b) = (pooled[(u, c)], pooled[(m + i, c)]);
            x[(0, c)] = a;
            x[(0, d + c)] = b;
            x[(0, 2 * d + c)] = a * b;
        }
        Ok(self.params.predictive.forward(&x)?[(0, 0)])
    }

    /// Preference angle `arccos(tanh(s))` in `[0, π]`; smaller is preferred.
    pub fn predict_angle(&self, u: usize, i: usize, pooled: &EmbeddingMatrix) -> Result<f64> {
        Ok(angle_from_logit(self.predict_logit(u, i, pooled)?))
    }

    /// Encoded popularity vectors for all users and all items.
    pub fn bias_embeddings(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let pu = DMatrix::from_column_slice(self.num_users(), 1, &self.popularity.user_pop);
        let pi = DMatrix::from_column_slice(self.num_items(), 1, &self.popularity.item_pop);
        Ok((self.params.user_bias.forward(&pu)?, self.params.item_bias.forward(&pi)?))
    }

    /// Popularity angle between the encoded user and item popularity.
    pub fn bias_angle(&self, u: usize, i: usize) -> Result<f64> {
        self.check_pair(u, i)?;
        let pu = DMatrix::from_element(1, 1, self.popularity.user_pop[u]);
        let pi = DMatrix::from_element(1, 1, self.popularity.item_pop[i]);
        let eu = self.params.user_bias.forward(&pu)?;
        let ei = self.params.item_bias.forward(&pi)?;
        Ok(cosine(eu.as_slice(), ei.as_slice())?.acos())
    }
}

pub fn angle_from_logit(s: f64) -> f64 {
    s.tanh().clamp(-1.0, 1.0).acos()
}

pub(crate) const MIN_BIAS_NORM: f64 = 1e-12;

/// Cosine similarity clamped to `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < MIN_BIAS_NORM || nb < MIN_BIAS_NORM {
        return Err(Error::DegenerateBiasEmbedding);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}
