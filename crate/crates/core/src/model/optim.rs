use super::state::ModelParams;

/// Root-mean-square propagation:
/// `v ← ρ·v + (1−ρ)·g²`, `θ ← θ − η·g / (√v + ε)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub decay: f64,
    pub eps: f64,
}

impl RmsProp {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            decay: 0.9,
            eps: 1e-8,
        }
    }

    pub fn step(&self, params: &mut ModelParams, accum: &mut ModelParams, grad: &ModelParams) {
        for ((p, v), g) in params
            .tensors_mut()
            .into_iter()
            .zip(accum.tensors_mut())
            .zip(grad.tensors())
        {
            for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = self.decay * *v + (1.0 - self.decay) * g * g;
                *p -= self.learning_rate * g / (v.sqrt() + self.eps);
            }
        }
    }
}
