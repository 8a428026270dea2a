//! Server side of the protocol: reference graphs, structural similarity,
//! aggregation, personalized distribution and the global round loop.

mod checkpoint;
mod messages;
mod reference;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use messages::{Broadcast, Downlink, Message, Uplink};
pub use reference::{compute_reference_kernel, generate_reference_graph, ReferenceModel};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;
use crate::model::{local_train, ClientState, EpochLoss, LossMode, MlpParams, TrainingConfig};
use crate::spectral::{aligned_kl, SpectralKernel, DEFAULT_EPSILON};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientStats {
    pub num_users: usize,
    pub num_items: usize,
    pub num_edges: usize,
}

impl ClientStats {
    pub fn of(g: &BipartiteGraph) -> Self {
        Self {
            num_users: g.num_users(),
            num_items: g.num_items(),
            num_edges: g.num_edges(),
        }
    }

    /// Per-field means, rounded to the nearest count.
    pub fn mean(stats: &[ClientStats]) -> Result<Self> {
        if stats.is_empty() {
            return Err(Error::EmptyInput("no client statistics".into()));
        }
        let c = stats.len() as f64;
        let avg = |f: fn(&ClientStats) -> usize| (stats.iter().map(|s| f(s) as f64).sum::<f64>() / c).round() as usize;
        Ok(Self {
            num_users: avg(|s| s.num_users),
            num_items: avg(|s| s.num_items),
            num_edges: avg(|s| s.num_edges),
        })
    }
}

/// Statistics used for the reference graph when client statistics are
/// switched off.
pub const DEFAULT_REFERENCE_STATS: ClientStats = ClientStats {
    num_users: 1000,
    num_items: 1000,
    num_edges: 10000,
};

/// Shared global parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub pooling: MlpParams,
    pub predictive: MlpParams,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub global: GlobalModel,
    pub avg_stats: ClientStats,
    /// Number of completed global rounds.
    pub round: usize,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub phi: usize,
    pub reference_model: ReferenceModel,
    pub personalization: bool,
    pub bias_aware: bool,
    pub use_client_stats: bool,
    pub default_stats: ClientStats,
    pub kernel_epsilon: f64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            phi: 128,
            reference_model: ReferenceModel::Gnmk,
            personalization: true,
            bias_aware: true,
            use_client_stats: true,
            default_stats: DEFAULT_REFERENCE_STATS,
            kernel_epsilon: DEFAULT_EPSILON,
        }
    }
}

/// `ρ_c = KL(K^R ‖ K^c)`, reference first.
pub fn compute_similarity(reference: &SpectralKernel, client: &SpectralKernel) -> Result<f64> {
    aligned_kl(reference, client)
}

/// Min-max maps divergences to `[0,1]` with the smallest divergence at 1.
/// When all divergences are equal every client gets 1.
pub fn normalize_similarities(raw: &[f64]) -> Vec<f64> {
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if raw.is_empty() || max == min {
        return vec![1.0; raw.len()];
    }
    raw.iter().map(|r| 1.0 - (r - min) / (max - min)).collect()
}

/// Unweighted means of the uploaded networks and margins.
pub fn aggregate(uplinks: &[Uplink]) -> Result<GlobalModel> {
    if uplinks.is_empty() {
        return Err(Error::EmptyInput("no client uploads".into()));
    }
    let pools: Vec<&MlpParams> = uplinks.iter().map(|u| &u.pooling).collect();
    let preds: Vec<&MlpParams> = uplinks.iter().map(|u| &u.predictive).collect();
    Ok(GlobalModel {
        pooling: MlpParams::mean(&pools)?,
        predictive: MlpParams::mean(&preds)?,
        margin: uplinks.iter().map(|u| u.margin).sum::<f64>() / uplinks.len() as f64,
    })
}

/// Server-side blend `ρ̄·global + (1−ρ̄)·local` for one client.
pub fn personalize(global: &GlobalModel, uplink: &Uplink, rho_bar: f64) -> Result<Downlink> {
    if !(0.0..=1.0).contains(&rho_bar) {
        return Err(Error::InvalidArgument(format!("similarity weight {rho_bar} outside [0,1]")));
    }
    let margin = if rho_bar == 1.0 {
        global.margin
    } else if rho_bar == 0.0 {
        uplink.margin
    } else {
        global.margin * rho_bar + uplink.margin * (1.0 - rho_bar)
    };
    Ok(Downlink {
        client: uplink.client,
        pooling: MlpParams::blend(&global.pooling, &uplink.pooling, rho_bar)?,
        predictive: MlpParams::blend(&global.predictive, &uplink.predictive, rho_bar)?,
        margin,
    })
}

/// Blends the global model into one client in place.
pub fn distribute(server: &ServerState, client: &mut ClientState, rho_bar: f64) -> Result<()> {
    let up = Uplink::from_client(client, 0.0);
    let down = personalize(&server.global, &up, rho_bar)?;
    down.apply(client)
}

/// Seed for one client in one round.
pub fn client_seed(base: u64, round: usize, client: usize) -> u64 {
    mix(mix(base ^ 0x9e37_79b9_7f4a_7c15) ^ ((round as u64) << 32 | client as u64))
}

pub(crate) fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the server's reference graph in one round.
pub fn reference_seed(base: u64, round: usize) -> u64 {
    client_seed(base, round, usize::MAX >> 32)
}

/// Draws one set of shared networks and copies it to every client.
pub fn initialize(clients: &mut [ClientState], seed: u64) -> Result<ServerState> {
    let first = clients.first().ok_or(Error::EmptyInput("no clients".into()))?;
    let dims = first.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed));
    let template = crate::model::ModelParams::random(0, 0, dims, &mut rng);
    for c in clients.iter_mut() {
        if c.dims() != dims {
            return Err(Error::ShapeMismatch(format!("client {} has dims {:?}, expected {:?}", c.id, c.dims(), dims)));
        }
        c.params.pooling = template.pooling.clone();
        c.params.predictive = template.predictive.clone();
        c.params.user_bias = template.user_bias.clone();
        c.params.item_bias = template.item_bias.clone();
    }
    let stats: Vec<ClientStats> = clients.iter().map(|c| ClientStats::of(c.graph())).collect();
    Ok(ServerState {
        global: GlobalModel {
            pooling: template.pooling,
            predictive: template.predictive,
            margin: 0.0,
        },
        avg_stats: ClientStats::mean(&stats)?,
        round: 0,
        rng_seed: seed,
    })
}

/// What happened in one global round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundReport {
    pub round: usize,
    pub reference_nodes: usize,
    pub reference_edges: usize,
    pub divergence: Vec<f64>,
    pub similarity: Vec<f64>,
    pub margins: Vec<f64>,
    pub global_margin: f64,
    pub losses: Vec<Vec<EpochLoss>>,
}

/// In-process simulation of the server and its clients.
pub struct Federation {
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    /// Client kernels; they never leave the client side.
    kernels: Vec<SpectralKernel>,
    pub training: TrainingConfig,
    pub config: FederationConfig,
    /// Every message exchanged, when capture is enabled.
    pub captured: Option<Vec<Message>>,
}

impl Federation {
    pub fn new(mut clients: Vec<ClientState>, training: TrainingConfig, config: FederationConfig, seed: u64) -> Result<Self> {
        let mut training = training;
        if !config.bias_aware {
            training.loss_mode = LossMode::Bpr;
        }
        let problems = training.problems();
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let server = initialize(&mut clients, seed)?;
        let kernels = clients
            .iter()
            .map(|c| SpectralKernel::extract(c.spectrum(), config.kernel_epsilon).map_err(|e| client_err(c.id, e)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            server,
            clients,
            kernels,
            training,
            config,
            captured: None,
        })
    }

    /// Rebuilds a federation around restored server and client state.
    pub fn restore(server: ServerState, clients: Vec<ClientState>, training: TrainingConfig, config: FederationConfig) -> Result<Self> {
        let mut training = training;
        if !config.bias_aware {
            training.loss_mode = LossMode::Bpr;
        }
        let kernels = clients
            .iter()
            .map(|c| SpectralKernel::extract(c.spectrum(), config.kernel_epsilon))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            server,
            clients,
            kernels,
            training,
            config,
            captured: None,
        })
    }

    pub fn enable_capture(&mut self) {
        self.captured = Some(Vec::new());
    }

    fn record(&mut self, m: Message) {
        if let Some(log) = self.captured.as_mut() {
            log.push(m);
        }
    }

    /// One round: reference kernel, local training, divergences,
    /// aggregation, normalization, personalized distribution.
    pub fn global_round(&mut self) -> Result<RoundReport> {
        let round = self.server.round;
        let seed = self.server.rng_seed;

        // (1) reference graph and its kernel
        let stats = if self.config.use_client_stats {
            self.server.avg_stats
        } else {
            self.config.default_stats
        };
        let g_r = generate_reference_graph(stats, self.config.reference_model, reference_seed(seed, round))?;
        let (g_r, _, _) = g_r.drop_isolated();
        let k_r = compute_reference_kernel(&g_r, self.config.phi, reference_seed(seed, round), self.config.kernel_epsilon)?;
        self.record(Message::Broadcast(Broadcast {
            round,
            reference_kernel: k_r.clone(),
        }));

        // (2) local training, (3) client-side divergence
        let training = &self.training;
        let kernels = &self.kernels;
        let results: Vec<Result<(Vec<EpochLoss>, Uplink)>> = self
            .clients
            .par_iter_mut()
            .zip(kernels.par_iter())
            .map(|(c, k_c)| {
                let mut rng = ChaCha8Rng::seed_from_u64(client_seed(seed, round, c.id));
                let losses = local_train(c, training, round, &mut rng).map_err(|e| client_err(c.id, e))?;
                let rho = compute_similarity(&k_r, k_c).map_err(|e| client_err(c.id, e))?;
                Ok((losses, Uplink::from_client(c, rho)))
            })
            .collect();
        let mut losses = Vec::with_capacity(results.len());
        let mut uplinks = Vec::with_capacity(results.len());
        for r in results {
            let (l, u) = r?;
            losses.push(l);
            uplinks.push(u);
        }
        for u in &uplinks {
            self.record(Message::Uplink(u.clone()));
        }

        // (4) aggregate, (5) normalize
        let global = aggregate(&uplinks)?;
        let divergence: Vec<f64> = uplinks.iter().map(|u| u.divergence).collect();
        let similarity = if self.config.personalization {
            normalize_similarities(&divergence)
        } else {
            vec![1.0; uplinks.len()]
        };

        // (6) distribute
        let mut downlinks = Vec::with_capacity(uplinks.len());
        for (u, &w) in uplinks.iter().zip(&similarity) {
            downlinks.push(personalize(&global, u, w)?);
        }
        for (c, d) in self.clients.iter_mut().zip(&downlinks) {
            d.apply(c)?;
        }
        for d in downlinks {
            self.record(Message::Downlink(d));
        }

        self.server.global = global;
        self.server.round += 1;
        Ok(RoundReport {
            round,
            reference_nodes: g_r.num_nodes(),
            reference_edges: g_r.num_edges(),
            margins: uplinks.iter().map(|u| u.margin).collect(),
            divergence,
            similarity,
            global_margin: self.server.global.margin,
            losses,
        })
    }
}

fn client_err(client: usize, e: Error) -> Error {
    Error::Client {
        client,
        source: Box::new(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_similarities(&[1.0, 2.0, 3.0]), vec![1.0, 0.5, 0.0]);
        assert_eq!(normalize_similarities(&[5.0, 5.0, 5.0]), vec![1.0; 3]);
        assert_eq!(normalize_similarities(&[0.2, 0.7]), vec![1.0, 0.0]);
        assert_eq!(normalize_similarities(&[0.4]), vec![1.0]);
    }

    #[test]
    fn mean_stats() {
        let s = [
            ClientStats { num_users: 10, num_items: 20, num_edges: 50 },
            ClientStats { num_users: 30, num_items: 40, num_edges: 150 },
        ];
        assert_eq!(ClientStats::mean(&s).unwrap(), ClientStats { num_users: 20, num_items: 30, num_edges: 100 });
    }

    #[test]
    fn seeds_differ() {
        assert_ne!(client_seed(1, 0, 0), client_seed(1, 0, 1));
        assert_ne!(client_seed(1, 0, 0), client_seed(1, 1, 0));
        assert_ne!(reference_seed(1, 0), client_seed(1, 0, 0));
    }

    proptest! {
        #[test]
        fn normalization_affine_invariant(raw in prop::collection::vec(0.0f64..10.0, 1..8), a in 0.1f64..10.0, b in -5.0f64..5.0) {
            let base = normalize_similarities(&raw);
            let moved: Vec<f64> = raw.iter().map(|r| a * r + b).collect();
            let other = normalize_similarities(&moved);
            for (x, y) in base.iter().zip(&other) {
                prop_assert!((x - y).abs() < 1e-9);
                prop_assert!((0.0..=1.0).contains(x));
            }
        }
    }
}
