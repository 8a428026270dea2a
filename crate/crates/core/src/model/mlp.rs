use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;

/// One affine layer; `weight` is `in × out` so a batch `X` maps to `X·W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: DMatrix<f64>,
    pub bias: Vec<f64>,
}

/// Fully connected network with leaky-ReLU hidden layers and a linear
/// output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

/// Activations kept from a forward pass for the backward pass.
pub struct MlpCache {
    /// Input to each layer.
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<DMatrix<f64>>,
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

impl MlpParams {
    /// Uniform `±1/√fan_in` initialization for weights and biases.
    pub fn random<R: Rng>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
        let layers = dims
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Layer {
                    weight: DMatrix::from_fn(w[0], w[1], |_, _| rng.random_range(-bound..bound)),
                    bias: (0..w[1]).map(|_| rng.random_range(-bound..bound)).collect(),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: DMatrix::zeros(l.weight.nrows(), l.weight.ncols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.ncols())
    }

    /// Layer dimensions `[in, h1, ..., out]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.weight.ncols()));
        d
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.dims() == other.dims()
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, MlpCache)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.ncols(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len().saturating_sub(1));
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut out = &h * &layer.weight;
            for mut row in out.row_iter_mut() {
                for (v, b) in row.iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            inputs.push(h);
            if k < last {
                pre.push(out.clone());
                out.apply(|v| *v = leaky(*v));
            }
            h = out;
        }
        Ok((h, MlpCache { inputs, pre }))
    }

    /// Applies `layers[start..]` to `x`, which must already be the
    /// (activated) input of layer `start`.
    pub fn forward_from(&self, start: usize, mut x: DMatrix<f64>) -> DMatrix<f64> {
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate().skip(start) {
            let mut out = &x * &layer.weight;
            for mut row in out.row_iter_mut() {
                for (v, b) in row.iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            if k < last {
                out.apply(|v| *v = leaky(*v));
            }
            x = out;
        }
        x
    }

    pub(crate) fn activate(x: &mut DMatrix<f64>) {
        x.apply(|v| *v = leaky(*v));
    }

    /// Accumulates parameter gradients into `grad` and returns `∂/∂X`.
    pub fn backward(&self, cache: &MlpCache, d_out: &DMatrix<f64>, grad: &mut MlpParams) -> DMatrix<f64> {
        let mut d = d_out.clone();
        for k in (0..self.layers.len()).rev() {
            if k < self.layers.len() - 1 {
                d.zip_apply(&cache.pre[k], |g, z| {
                    if z <= 0.0 {
                        *g *= LEAKY_SLOPE
                    }
                });
            }
            let layer = &self.layers[k];
            let g = &mut grad.layers[k];
            g.weight += cache.inputs[k].transpose() * &d;
            for row in d.row_iter() {
                for (b, v) in g.bias.iter_mut().zip(row.iter()) {
                    *b += v;
                }
            }
            d = &d * layer.weight.transpose();
        }
        d
    }

    /// Elementwise mean of several same-shaped networks.
    pub fn mean(models: &[&MlpParams]) -> Result<MlpParams> {
        let first = models.first().ok_or(Error::EmptyInput("no models to average".into()))?;
        let mut acc = first.zeros_like();
        for m in models {
            if !m.same_shape(first) {
                return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", m.dims(), first.dims())));
            }
            for (a, t) in acc.tensors_mut().into_iter().zip(m.tensors()) {
                for (x, y) in a.iter_mut().zip(t) {
                    *x += y;
                }
            }
        }
        let c = models.len() as f64;
        for a in acc.tensors_mut() {
            a.iter_mut().for_each(|x| *x /= c);
        }
        Ok(acc)
    }

    /// `global·w + local·(1−w)`, exact at the endpoints.
    pub fn blend(global: &MlpParams, local: &MlpParams, w: f64) -> Result<MlpParams> {
        if !global.same_shape(local) {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", global.dims(), local.dims())));
        }
        if w == 1.0 {
            return Ok(global.clone());
        }
        if w == 0.0 {
            return Ok(local.clone());
        }
        let mut out = local.clone();
        for (o, g) in out.tensors_mut().into_iter().zip(global.tensors()) {
            for (x, y) in o.iter_mut().zip(g) {
                *x = y * w + *x * (1.0 - w);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loss(m: &MlpParams, x: &DMatrix<f64>, target: &DMatrix<f64>) -> f64 {
        let y = m.forward(x).unwrap();
        y.component_mul(target).sum()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = MlpParams::random(&[4, 5, 3], &mut rng);
        let x = DMatrix::from_fn(6, 4, |_, _| rng.random_range(-1.0..1.0));
        let t = DMatrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
        let (_, cache) = m.forward_cached(&x).unwrap();
        let mut g = m.zeros_like();
        let dx = m.backward(&cache, &t, &mut g);

        let h = 1e-5;
        let grads: Vec<Vec<f64>> = g.tensors().iter().map(|s| s.to_vec()).collect();
        for (ti, gt) in grads.iter().enumerate() {
            for j in 0..gt.len() {
                let orig = m.tensors()[ti][j];
                m.tensors_mut()[ti][j] = orig + h;
                let up = loss(&m, &x, &t);
                m.tensors_mut()[ti][j] = orig - h;
                let down = loss(&m, &x, &t);
                m.tensors_mut()[ti][j] = orig;
                let fd = (up - down) / (2.0 * h);
                assert!((fd - gt[j]).abs() <= 1e-6 * (1.0 + fd.abs()), "{ti} {j}: {fd} vs {}", gt[j]);
            }
        }
        let mut xp = x.clone();
        for j in 0..x.len() {
            let orig = xp.as_slice()[j];
            xp.as_mut_slice()[j] = orig + h;
            let up = loss(&m, &xp, &t);
            xp.as_mut_slice()[j] = orig - h;
            let down = loss(&m, &xp, &t);
            xp.as_mut_slice()[j] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - dx.as_slice()[j]).abs() <= 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn zero_input_gives_propagated_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = MlpParams::random(&[3, 4, 2], &mut rng);
        let y = m.forward(&DMatrix::zeros(1, 3)).unwrap();
        let h: Vec<f64> = m.layers[0].bias.iter().map(|&b| leaky(b)).collect();
        for c in 0..2 {
            let want: f64 = m.layers[1].bias[c] + (0..4).map(|r| h[r] * m.layers[1].weight[(r, c)]).sum::<f64>();
            assert!((y[(0, c)] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn mean_and_blend() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = MlpParams::random(&[2, 3, 1], &mut rng);
        let mut neg = a.clone();
        neg.tensors_mut().into_iter().for_each(|t| t.iter_mut().for_each(|x| *x = -*x));
        let m = MlpParams::mean(&[&a, &neg]).unwrap();
        assert!(m.tensors().iter().all(|t| t.iter().all(|&x| x == 0.0)));
        assert_eq!(MlpParams::mean(&[&a, &a]).unwrap(), a);
        assert_eq!(MlpParams::blend(&a, &neg, 1.0).unwrap(), a);
        assert_eq!(MlpParams::blend(&a, &neg, 0.0).unwrap(), neg);
        let other = MlpParams::random(&[2, 4, 1], &mut rng);
        assert!(MlpParams::mean(&[&a, &other]).is_err());
    }
}
