//! Scalar pieces of the training objectives.

use std::f64::consts::PI;

/// `min(γ·ξ, π − R̂)`, clamped to `[0, π]`.
pub fn adaptive_margin(gamma: f64, xi: f64, r_hat: f64) -> f64 {
    (gamma * xi).min(PI - r_hat).clamp(0.0, PI)
}

/// `ω·global + (1−ω)·local`.
pub fn refined_margin(local: f64, global: f64, omega: f64) -> f64 {
    omega * global + (1.0 - omega) * local
}

/// `−log softmax` of the positive logit against the negatives, with its
/// gradient w.r.t. the positive and each negative logit.
pub fn softmax_contrastive(pos: f64, negs: &[f64]) -> (f64, f64, Vec<f64>) {
    let max = negs.iter().copied().fold(pos, f64::max);
    let ep = (pos - max).exp();
    let en: Vec<f64> = negs.iter().map(|n| (n - max).exp()).collect();
    let z = ep + en.iter().sum::<f64>();
    let loss = z.ln() + max - pos;
    let dpos = ep / z - 1.0;
    let dneg = en.into_iter().map(|e| e / z).collect();
    (loss, dpos, dneg)
}

/// `−log σ(pos − neg)` and its derivative w.r.t. `pos`.
pub fn bpr_pair(pos: f64, neg: f64) -> (f64, f64) {
    let x = pos - neg;
    // softplus(−x), computed stably
    let loss = if x > 0.0 { (-x).exp().ln_1p() } else { -x + x.exp().ln_1p() };
    let d = -1.0 / (1.0 + x.exp());
    (loss, d)
}
