//! Everything that crosses the client/server boundary.

use crate::error::Result;
use crate::model::{ClientState, MlpParams};
use crate::spectral::SpectralKernel;

/// Client to server, once per round.
#[derive(Debug, Clone, PartialEq)]
pub struct Uplink {
    pub client: usize,
    pub pooling: MlpParams,
    pub predictive: MlpParams,
    pub margin: f64,
    /// Divergence of the client's kernel from the reference kernel.
    pub divergence: f64,
}

impl Uplink {
    pub fn from_client(c: &ClientState, divergence: f64) -> Self {
        Self {
            client: c.id,
            pooling: c.params.pooling.clone(),
            predictive: c.params.predictive.clone(),
            margin: c.local_margin_avg,
            divergence,
        }
    }
}

/// Server to client, once per round.
#[derive(Debug, Clone, PartialEq)]
pub struct Downlink {
    pub client: usize,
    pub pooling: MlpParams,
    pub predictive: MlpParams,
    pub margin: f64,
}

impl Downlink {
    pub fn apply(&self, c: &mut ClientState) -> Result<()> {
        if !self.pooling.same_shape(&c.params.pooling) || !self.predictive.same_shape(&c.params.predictive) {
            return Err(crate::error::Error::ShapeMismatch(format!("downlink does not fit client {}", c.id)));
        }
        c.params.pooling = self.pooling.clone();
        c.params.predictive = self.predictive.clone();
        c.received_global_margin = Some(self.margin);
        Ok(())
    }
}

/// Server to all clients at the start of a round.
#[derive(Debug, Clone, PartialEq)]
pub struct Broadcast {
    pub round: usize,
    pub reference_kernel: SpectralKernel,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Broadcast(Broadcast),
    Uplink(Uplink),
    Downlink(Downlink),
}

impl Message {
    /// Names of the payload fields (addressing fields excluded).
    pub fn payload_fields(&self) -> &'static [&'static str] {
        match self {
            Message::Broadcast(_) => &["reference_kernel"],
            Message::Uplink(_) => &["pooling", "predictive", "margin", "divergence"],
            Message::Downlink(_) => &["pooling", "predictive", "margin"],
        }
    }

    /// Every real number carried by the message.
    pub fn numbers(&self) -> Vec<f64> {
        let mlps = |a: &MlpParams, b: &MlpParams| -> Vec<f64> {
            a.tensors().into_iter().chain(b.tensors()).flatten().copied().collect()
        };
        match self {
            Message::Broadcast(b) => b.reference_kernel.probs().to_vec(),
            Message::Uplink(u) => {
                let mut v = mlps(&u.pooling, &u.predictive);
                v.extend([u.margin, u.divergence]);
                v
            }
            Message::Downlink(d) => {
                let mut v = mlps(&d.pooling, &d.predictive);
                v.push(d.margin);
                v
            }
        }
    }
}
