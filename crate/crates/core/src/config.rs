//! Flat `key = value` experiment configuration.
//!
//! Values are parsed according to the type of the key's default, so the
//! accepted keys are exactly the fields of [`ExperimentConfig`]. Blank lines
//! and `#` comments are ignored.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::{Delimiter, GroupingSide, SyntheticConfig};
use crate::error::{Error, Result};
use crate::federation::{ClientStats, FederationConfig, ReferenceModel};
use crate::model::{LossMode, ModelDims, TrainingConfig};
use crate::spectral::DEFAULT_EPSILON;

/// `dataset` value that selects the built-in generator.
pub const SYNTHETIC: &str = "synthetic";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Interaction file, or `synthetic`.
    pub dataset: String,
    pub delimiter: Delimiter,
    pub synthetic_users: usize,
    pub synthetic_items: usize,
    pub synthetic_communities: usize,
    pub synthetic_mean_degree: f64,
    pub synthetic_popularity_skew: f64,
    pub synthetic_affinity: f64,
    pub num_clients: usize,
    pub split_train: f64,
    pub split_val: f64,
    pub split_test: f64,
    pub edge_jitter: bool,
    pub jitter_low: f64,
    pub jitter_high: f64,
    pub phi: usize,
    pub gcn_layers: usize,
    pub embed_dim: usize,
    pub loss_mode: LossMode,
    pub gamma: f64,
    pub tau: f64,
    pub omega: f64,
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub global_rounds: usize,
    pub negatives_per_positive: usize,
    pub bias_loss_weight: f64,
    pub freeze_rounds: usize,
    pub batch_size: usize,
    pub margin_observed_only: bool,
    pub reference_model: ReferenceModel,
    pub personalization: bool,
    pub bias_aware: bool,
    pub use_client_stats: bool,
    pub reference_users: usize,
    pub reference_items: usize,
    pub reference_edges: usize,
    pub kernel_epsilon: f64,
    pub eval_k: usize,
    pub popularity_side: GroupingSide,
    pub feedback_iterations: usize,
    pub feedback_top_k: usize,
    pub feedback_refresh_pairs: bool,
    pub seed: u64,
    /// Worker threads for the client phase; 0 uses every core.
    pub threads: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainingConfig::default();
        let f = FederationConfig::default();
        let s = SyntheticConfig::default();
        let d = ModelDims::default();
        Self {
            dataset: SYNTHETIC.into(),
            delimiter: Delimiter::Whitespace,
            synthetic_users: s.users,
            synthetic_items: s.items,
            synthetic_communities: s.communities,
            synthetic_mean_degree: s.mean_degree,
            synthetic_popularity_skew: s.popularity_skew,
            synthetic_affinity: s.affinity,
            num_clients: 4,
            split_train: 0.8,
            split_val: 0.1,
            split_test: 0.1,
            edge_jitter: false,
            jitter_low: 0.8,
            jitter_high: 1.0,
            phi: f.phi,
            gcn_layers: d.gcn_layers,
            embed_dim: d.embed_dim,
            loss_mode: t.loss_mode,
            gamma: t.gamma,
            tau: t.tau,
            omega: t.omega,
            learning_rate: t.learning_rate,
            local_epochs: t.local_epochs,
            global_rounds: 40,
            negatives_per_positive: t.negatives_per_positive,
            bias_loss_weight: t.bias_loss_weight,
            freeze_rounds: t.freeze_rounds,
            batch_size: t.batch_size,
            margin_observed_only: t.margin_observed_only,
            reference_model: f.reference_model,
            personalization: f.personalization,
            bias_aware: f.bias_aware,
            use_client_stats: f.use_client_stats,
            reference_users: f.default_stats.num_users,
            reference_items: f.default_stats.num_items,
            reference_edges: f.default_stats.num_edges,
            kernel_epsilon: DEFAULT_EPSILON,
            eval_k: 20,
            popularity_side: GroupingSide::Items,
            feedback_iterations: 0,
            feedback_top_k: 5,
            feedback_refresh_pairs: true,
            seed: 0,
            threads: 0,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

fn defaults_object() -> Map<String, Value> {
    match serde_json::to_value(ExperimentConfig::default()) {
        Ok(Value::Object(m)) => m,
        _ => unreachable!("config serializes to an object"),
    }
}

fn parse_value(template: &Value, raw: &str) -> std::result::Result<Value, String> {
    match template {
        Value::Bool(_) => match raw.to_ascii_lowercase().as_str() {
            "true" | "yes" | "on" | "1" => Ok(Value::Bool(true)),
            "false" | "no" | "off" | "0" => Ok(Value::Bool(false)),
            _ => Err(format!("expected a boolean, got `{raw}`")),
        },
        Value::Number(n) if n.is_u64() => raw.parse::<u64>().map(Value::from).map_err(|_| format!("expected a non-negative integer, got `{raw}`")),
        Value::Number(_) => raw
            .parse::<f64>()
            .ok()
            .and_then(serde_json::Number::from_f64)
            .map(Value::Number)
            .ok_or_else(|| format!("expected a number, got `{raw}`")),
        _ => Ok(Value::String(raw.to_ascii_lowercase().eq(SYNTHETIC).then(|| SYNTHETIC.to_owned()).unwrap_or_else(|| raw.to_owned()))),
    }
}

impl ExperimentConfig {
    /// Every accepted key, in declaration order.
    pub fn keys() -> Vec<&'static str> {
        vec![
            "dataset", "delimiter", "synthetic_users", "synthetic_items", "synthetic_communities",
            "synthetic_mean_degree", "synthetic_popularity_skew", "synthetic_affinity", "num_clients",
            "split_train", "split_val", "split_test", "edge_jitter", "jitter_low", "jitter_high", "phi",
            "gcn_layers", "embed_dim", "loss_mode", "gamma", "tau", "omega", "learning_rate", "local_epochs",
            "global_rounds", "negatives_per_positive", "bias_loss_weight", "freeze_rounds", "batch_size",
            "margin_observed_only", "reference_model", "personalization", "bias_aware", "use_client_stats",
            "reference_users", "reference_items", "reference_edges", "kernel_epsilon", "eval_k",
            "popularity_side", "feedback_iterations", "feedback_top_k", "feedback_refresh_pairs", "seed",
            "threads", "output_dir",
        ]
    }

    /// Applies `key = value` pairs on top of `self`. All problems are
    /// collected before returning.
    pub fn with_overrides<I, K, V>(&self, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let defaults = defaults_object();
        let mut obj = match serde_json::to_value(self)? {
            Value::Object(m) => m,
            _ => unreachable!(),
        };
        let mut problems = Vec::new();
        for (k, v) in pairs {
            let key = k.as_ref().trim().replace('-', "_");
            let raw = v.as_ref().trim();
            match defaults.get(&key) {
                None => problems.push(format!("unknown key `{key}`")),
                Some(t) => match parse_value(t, raw) {
                    Ok(v) => {
                        obj.insert(key, v);
                    }
                    Err(e) => problems.push(format!("{key}: {e}")),
                },
            }
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        serde_json::from_value(Value::Object(obj)).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        *self = self.with_overrides([(key, value)])?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut problems = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => pairs.push((k.trim().to_owned(), v.trim().to_owned())),
                None => problems.push(format!("line {}: expected `key = value`", n + 1)),
            }
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        Self::default().with_overrides(pairs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Every key with its resolved value, one per line.
    pub fn to_text(&self) -> String {
        let obj = match serde_json::to_value(self) {
            Ok(Value::Object(m)) => m,
            _ => unreachable!(),
        };
        let mut s = String::new();
        for key in Self::keys() {
            let v = match &obj[key] {
                Value::String(x) => x.clone(),
                other => other.to_string(),
            };
            s.push_str(&format!("{key} = {v}\n"));
        }
        s
    }

    pub fn problems(&self) -> Vec<String> {
        let mut p = self.training().problems();
        let split = self.split_train + self.split_val + self.split_test;
        if (split - 1.0).abs() > 1e-9 || [self.split_train, self.split_val, self.split_test].iter().any(|r| *r < 0.0) {
            p.push(format!("split ratios must be non-negative and sum to 1 (got {split})"));
        }
        if self.num_clients == 0 {
            p.push("num_clients must be at least 1".into());
        }
        if self.phi < 2 {
            p.push("phi must be at least 2".into());
        }
        if self.embed_dim == 0 {
            p.push("embed_dim must be positive".into());
        }
        if self.eval_k == 0 {
            p.push("eval_k must be positive".into());
        }
        if !(self.kernel_epsilon > 0.0 && self.kernel_epsilon < 1e-3) {
            p.push("kernel_epsilon must lie in (0, 1e-3)".into());
        }
        if self.edge_jitter && !(0.0 < self.jitter_low && self.jitter_low <= self.jitter_high && self.jitter_high <= 1.0) {
            p.push("jitter range must satisfy 0 < jitter_low <= jitter_high <= 1".into());
        }
        if !self.use_client_stats && (self.reference_users == 0 || self.reference_items == 0 || self.reference_edges == 0) {
            p.push("reference_users/items/edges must be positive".into());
        }
        if self.reference_edges > self.reference_users.saturating_mul(self.reference_items) {
            p.push("reference_edges exceeds reference_users * reference_items".into());
        }
        if self.feedback_iterations > 0 && self.feedback_top_k == 0 {
            p.push("feedback_top_k must be positive".into());
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            gamma: self.gamma,
            tau: self.tau,
            omega: self.omega,
            learning_rate: self.learning_rate,
            local_epochs: self.local_epochs,
            negatives_per_positive: self.negatives_per_positive,
            loss_mode: if self.bias_aware { self.loss_mode } else { LossMode::Bpr },
            bias_loss_weight: self.bias_loss_weight,
            freeze_rounds: self.freeze_rounds,
            batch_size: self.batch_size,
            margin_observed_only: self.margin_observed_only,
        }
    }

    pub fn federation(&self) -> FederationConfig {
        FederationConfig {
            phi: self.phi,
            reference_model: self.reference_model,
            personalization: self.personalization,
            bias_aware: self.bias_aware,
            use_client_stats: self.use_client_stats,
            default_stats: ClientStats {
                num_users: self.reference_users,
                num_items: self.reference_items,
                num_edges: self.reference_edges,
            },
            kernel_epsilon: self.kernel_epsilon,
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            embed_dim: self.embed_dim,
            gcn_layers: self.gcn_layers,
        }
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            users: self.synthetic_users,
            items: self.synthetic_items,
            communities: self.synthetic_communities,
            mean_degree: self.synthetic_mean_degree,
            popularity_skew: self.synthetic_popularity_skew,
            affinity: self.synthetic_affinity,
            seed: self.seed,
            ..SyntheticConfig::default()
        }
    }

    pub fn is_synthetic(&self) -> bool {
        self.dataset == SYNTHETIC
    }
}
