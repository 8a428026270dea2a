//! A single client's model: spectral graph convolution, pooling and
//! predictive MLPs, popularity encoders, margins, losses and local training.

mod checkpoint;
mod loss;
mod mlp;
mod objective;
mod optim;
mod scoring;
mod state;
mod train;

pub use checkpoint::{read_mlp, read_params, write_mlp, write_params, CHECKPOINT_VERSION};
pub(crate) use checkpoint::{get_f64, get_u64, put_f64, put_u64};
pub use loss::{adaptive_margin, bpr_pair, refined_margin, softmax_contrastive};
pub use mlp::{Layer, MlpParams, LEAKY_SLOPE};
pub use objective::{bc_loss, bias_contrastive_loss, bpr_loss, Batch, ForwardPass, LossBreakdown, Objective, RankingLoss};
pub use optim::RmsProp;
pub use scoring::{average_margin, MarginAveraging, MarginSummary, PairScorer, MARGIN_PAIR_CAP};
pub use state::{angle_from_logit, cosine, ClientState, ModelDims, ModelParams, EMBEDDING_INIT_SCALE};
pub use train::{local_train, sample_batch, sample_negatives, EpochLoss};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// Margin-penalized contrastive loss plus the popularity loss.
    Bc,
    /// Pairwise ranking loss; no margins and no popularity loss.
    Bpr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub gamma: f64,
    pub tau: f64,
    pub omega: f64,
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub negatives_per_positive: usize,
    pub loss_mode: LossMode,
    pub bias_loss_weight: f64,
    pub freeze_rounds: usize,
    pub batch_size: usize,
    /// Average margins over observed interactions only.
    pub margin_observed_only: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            tau: 0.1,
            omega: 0.25,
            learning_rate: 0.0005,
            local_epochs: 5,
            negatives_per_positive: 4,
            loss_mode: LossMode::Bc,
            bias_loss_weight: 1.0,
            freeze_rounds: 2,
            batch_size: 256,
            margin_observed_only: false,
        }
    }
}

impl TrainingConfig {
    /// All violated constraints, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.gamma >= 0.0) {
            out.push(format!("gamma must be >= 0 (got {})", self.gamma));
        }
        if !(self.tau > 0.0) {
            out.push(format!("tau must be > 0 (got {})", self.tau));
        }
        if !(0.0..=1.0).contains(&self.omega) {
            out.push(format!("omega must be in [0,1] (got {})", self.omega));
        }
        if !(self.learning_rate >= 0.0) {
            out.push(format!("learning_rate must be >= 0 (got {})", self.learning_rate));
        }
        if self.negatives_per_positive == 0 {
            out.push("negatives_per_positive must be >= 1".into());
        }
        if self.batch_size == 0 {
            out.push("batch_size must be >= 1".into());
        }
        if !(self.bias_loss_weight >= 0.0) {
            out.push(format!("bias_loss_weight must be >= 0 (got {})", self.bias_loss_weight));
        }
        out
    }
}
