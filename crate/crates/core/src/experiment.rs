//! End-to-end runs: data preparation, client construction, the round loop
//! with best-validation selection, and test evaluation.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::data::{
    item_popularity_groups, jitter_edges, label_groups, load_interactions, spectral_partition, split_holdout,
    synthetic_interactions, user_popularity_groups, write_manifest, ClientPartition, ClientSubgraph, GroupLabel,
    GroupThresholds, GroupingSide, PopularityGroup, RawInteractions,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_client, simulate_feedback_loop, Buckets, Evaluation, FeedbackOptions, MetricReport};
use crate::federation::{client_seed, load_checkpoint, save_checkpoint, Federation, RoundReport, ServerState};
use crate::graph::BipartiteGraph;
use crate::model::{ClientState, ModelParams};
use crate::spectral::{graph_spectrum, PartialSpectrum};

/// Everything one client holds besides its model.
#[derive(Debug, Clone)]
pub struct ClientData {
    pub subgraph: ClientSubgraph,
    /// Validation items per local user, sorted local ids.
    pub val: Vec<Vec<usize>>,
    pub test: Vec<Vec<usize>>,
    pub item_groups: Vec<PopularityGroup>,
    pub user_groups: Vec<PopularityGroup>,
    pub label: GroupLabel,
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub raw_users: usize,
    pub raw_items: usize,
    pub raw_edges: usize,
    /// Training graph after removing nodes with no training edge.
    pub train_graph: BipartiteGraph,
    pub partition: ClientPartition,
    pub clients: Vec<ClientData>,
    /// Held-out pairs whose item is unknown to the user's client.
    pub dropped_holdout: usize,
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<RawInteractions> {
    if cfg.is_synthetic() {
        synthetic_interactions(&cfg.synthetic())
    } else {
        load_interactions(Path::new(&cfg.dataset), cfg.delimiter)
    }
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    prepare_from_raw(cfg, &load_dataset(cfg)?)
}

pub fn prepare_from_raw(cfg: &ExperimentConfig, raw: &RawInteractions) -> Result<PreparedData> {
    let split = split_holdout(&raw.edges, [cfg.split_train, cfg.split_val, cfg.split_test], cfg.seed)?;
    let full = BipartiteGraph::new(raw.num_users(), raw.num_items(), split.train.clone())?;
    let (g, kept_users, kept_items) = full.drop_isolated();
    let user_map: HashMap<usize, usize> = kept_users.iter().enumerate().map(|(n, &o)| (o, n)).collect();
    let item_map: HashMap<usize, usize> = kept_items.iter().enumerate().map(|(n, &o)| (o, n)).collect();

    let mut partition = spectral_partition(&g, cfg.num_clients, cfg.seed)?;
    if cfg.edge_jitter {
        partition = jitter_edges(&partition, cfg.jitter_low, cfg.jitter_high, cfg.seed ^ 0x6a17)?;
    }
    let train_edges: Vec<(usize, usize)> = g.edges().collect();
    let item_groups = item_popularity_groups(&train_edges, g.num_items());
    let user_groups = user_popularity_groups(&train_edges, g.num_users());
    let labels = label_groups(&partition, &GroupThresholds::scaled(g.num_nodes()));

    let mut dropped = 0usize;
    let mut holdout = |edges: &[(usize, usize)]| -> Vec<Vec<Vec<usize>>> {
        let mut out: Vec<Vec<Vec<usize>>> = partition.clients.iter().map(|c| vec![Vec::new(); c.users.len()]).collect();
        for &(u, i) in edges {
            let (Some(&u), Some(&i)) = (user_map.get(&u), item_map.get(&i)) else {
                dropped += 1;
                continue;
            };
            let c = partition.assignment[u];
            let sub = &partition.clients[c];
            match (sub.local_user(u), sub.local_item(i)) {
                (Some(lu), Some(li)) => out[c][lu].push(li),
                _ => dropped += 1,
            }
        }
        out.iter_mut().flatten().for_each(|v| v.sort_unstable());
        out
    };
    let val = holdout(&split.val);
    let test = holdout(&split.test);

    let clients = partition
        .clients
        .iter()
        .zip(val)
        .zip(test)
        .zip(&labels)
        .map(|(((sub, val), test), &label)| ClientData {
            subgraph: sub.clone(),
            val,
            test,
            item_groups: sub.items.iter().map(|&i| item_groups[i]).collect(),
            user_groups: sub.users.iter().map(|&u| user_groups[u]).collect(),
            label,
        })
        .collect();
    Ok(PreparedData {
        raw_users: raw.num_users(),
        raw_items: raw.num_items(),
        raw_edges: raw.num_edges(),
        train_graph: g,
        partition,
        clients,
        dropped_holdout: dropped,
    })
}

/// Client spectra at cutoff `phi`, one per client.
pub fn client_spectra(data: &PreparedData, phi: usize, seed: u64) -> Result<Vec<Arc<PartialSpectrum>>> {
    data.clients
        .par_iter()
        .map(|c| {
            graph_spectrum(&c.subgraph.graph, phi, seed.wrapping_add(c.subgraph.id as u64))
                .map(Arc::new)
                .map_err(|e| Error::Client {
                    client: c.subgraph.id,
                    source: Box::new(e),
                })
        })
        .collect()
}

pub fn build_clients(cfg: &ExperimentConfig, data: &PreparedData, spectra: &[Arc<PartialSpectrum>]) -> Result<Vec<ClientState>> {
    data.clients
        .iter()
        .zip(spectra)
        .map(|(c, spec)| {
            let id = c.subgraph.id;
            let mut rng = ChaCha8Rng::seed_from_u64(client_seed(cfg.seed ^ 0x1a17, 0, id));
            ClientState::new(id, Arc::new(c.subgraph.graph.clone()), spec.clone(), cfg.dims(), &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HoldoutSet {
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientMetrics {
    pub client: usize,
    pub label: GroupLabel,
    pub report: MetricReport,
}

/// Client-averaged metrics over one structural group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupMetrics {
    pub label: GroupLabel,
    pub clients: usize,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    /// Mean over all evaluated users of all clients.
    pub overall: MetricReport,
    /// Mean over clients.
    pub client_mean_recall: f64,
    pub client_mean_ndcg: f64,
    pub groups: Vec<GroupMetrics>,
    pub clients: Vec<ClientMetrics>,
}

pub fn evaluate(
    clients: &[ClientState],
    data: &PreparedData,
    which: HoldoutSet,
    k: usize,
    side: GroupingSide,
) -> Result<EvalSummary> {
    let evals: Vec<Evaluation> = clients
        .par_iter()
        .zip(&data.clients)
        .map(|(state, cd)| {
            let holdout = match which {
                HoldoutSet::Validation => &cd.val,
                HoldoutSet::Test => &cd.test,
            };
            let buckets = match side {
                GroupingSide::Items => Buckets::Items(&cd.item_groups),
                GroupingSide::Users => Buckets::Users(&cd.user_groups),
            };
            evaluate_client(state, holdout, k, buckets)
        })
        .collect::<Result<_>>()?;
    let mut total = Evaluation::default();
    evals.iter().for_each(|e| total.merge(e));
    let per_client: Vec<ClientMetrics> = evals
        .iter()
        .zip(&data.clients)
        .map(|(e, cd)| ClientMetrics {
            client: cd.subgraph.id,
            label: cd.label,
            report: e.report(k),
        })
        .collect();
    let mut by_label: BTreeMap<GroupLabel, Vec<&ClientMetrics>> = BTreeMap::new();
    for c in &per_client {
        by_label.entry(c.label).or_default().push(c);
    }
    let mean = |v: &[&ClientMetrics], f: fn(&MetricReport) -> f64| v.iter().map(|c| f(&c.report)).sum::<f64>() / v.len() as f64;
    let groups = by_label
        .iter()
        .map(|(&label, v)| GroupMetrics {
            label,
            clients: v.len(),
            recall: mean(v, |r| r.recall),
            ndcg: mean(v, |r| r.ndcg),
        })
        .collect();
    let all: Vec<&ClientMetrics> = per_client.iter().collect();
    Ok(EvalSummary {
        overall: total.report(k),
        client_mean_recall: mean(&all, |r| r.recall),
        client_mean_ndcg: mean(&all, |r| r.ndcg),
        groups,
        clients: per_client,
    })
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundLog {
    pub round: usize,
    pub reference_nodes: usize,
    pub reference_edges: usize,
    pub divergence: Vec<f64>,
    pub similarity: Vec<f64>,
    pub margins: Vec<f64>,
    pub global_margin: f64,
    /// Mean epoch loss per client.
    pub train_loss: Vec<f64>,
    pub val_recall: f64,
    pub val_ndcg: f64,
}

impl RoundLog {
    fn new(r: &RoundReport, val: &EvalSummary) -> Self {
        Self {
            round: r.round,
            reference_nodes: r.reference_nodes,
            reference_edges: r.reference_edges,
            divergence: r.divergence.clone(),
            similarity: r.similarity.clone(),
            margins: r.margins.clone(),
            global_margin: r.global_margin,
            train_loss: r
                .losses
                .iter()
                .map(|l| l.iter().map(|e| e.total).sum::<f64>() / l.len().max(1) as f64)
                .collect(),
            val_recall: val.overall.recall,
            val_ndcg: val.overall.ndcg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutcome {
    /// Completed rounds at the selected state.
    pub best_round: usize,
    pub validation: EvalSummary,
    pub test: EvalSummary,
    pub rounds: Vec<RoundLog>,
    /// Mean paired Jaccard per feedback iteration, entry 0 before any
    /// simulated acceptance.
    pub feedback: Option<Vec<f64>>,
}

struct Snapshot {
    server: ServerState,
    params: Vec<ModelParams>,
    optimizer: Vec<ModelParams>,
    margins: Vec<(f64, Option<f64>)>,
}

impl Snapshot {
    fn take(fed: &Federation) -> Self {
        Self {
            server: fed.server.clone(),
            params: fed.clients.iter().map(|c| c.params.clone()).collect(),
            optimizer: fed.clients.iter().map(|c| c.optimizer_state.clone()).collect(),
            margins: fed.clients.iter().map(|c| (c.local_margin_avg, c.received_global_margin)).collect(),
        }
    }

    fn restore(self, fed: &mut Federation) {
        fed.server = self.server;
        for (((c, p), o), (m, g)) in fed.clients.iter_mut().zip(self.params).zip(self.optimizer).zip(self.margins) {
            c.params = p;
            c.optimizer_state = o;
            c.local_margin_avg = m;
            c.received_global_margin = g;
        }
    }
}

pub const CONFIG_FILE: &str = "config.txt";
pub const LOG_FILE: &str = "log.ndjson";
pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const METRICS_FILE: &str = "metrics.json";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const MANIFEST_FILE: &str = "partition.txt";
pub const FEEDBACK_FILE: &str = "feedback.tsv";

/// Trains for `cfg.global_rounds` rounds, keeps the state with the best
/// validation NDCG (initial state included), and reports test metrics for
/// it. Files are written to `out` when given.
pub fn run(cfg: &ExperimentConfig, data: &PreparedData, spectra: &[Arc<PartialSpectrum>], out: Option<&Path>) -> Result<RunOutcome> {
    cfg.validate()?;
    let clients = build_clients(cfg, data, spectra)?;
    let mut fed = Federation::new(clients, cfg.training(), cfg.federation(), cfg.seed)?;
    let mut log = match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(CONFIG_FILE), cfg.to_text())?;
            write_manifest(&dir.join(MANIFEST_FILE), &data.partition)?;
            Some(std::io::BufWriter::new(fs::File::create(dir.join(LOG_FILE))?))
        }
        None => None,
    };

    let k = cfg.eval_k;
    let mut best_val = evaluate(&fed.clients, data, HoldoutSet::Validation, k, cfg.popularity_side)?;
    let mut best = Snapshot::take(&fed);
    let mut rounds = Vec::with_capacity(cfg.global_rounds);
    for _ in 0..cfg.global_rounds {
        let report = fed.global_round()?;
        let val = evaluate(&fed.clients, data, HoldoutSet::Validation, k, cfg.popularity_side)?;
        let entry = RoundLog::new(&report, &val);
        if let Some(w) = log.as_mut() {
            serde_json::to_writer(&mut *w, &entry)?;
            w.write_all(b"\n")?;
        }
        rounds.push(entry);
        if val.overall.ndcg > best_val.overall.ndcg {
            best_val = val;
            best = Snapshot::take(&fed);
        }
    }
    if let Some(mut w) = log {
        w.flush()?;
    }
    best.restore(&mut fed);
    let best_round = fed.server.round;
    let test = evaluate(&fed.clients, data, HoldoutSet::Test, k, cfg.popularity_side)?;

    let feedback = if cfg.feedback_iterations > 0 {
        Some(feedback_trajectory(cfg, &fed.clients)?)
    } else {
        None
    };

    let outcome = RunOutcome {
        best_round,
        validation: best_val,
        test,
        rounds,
        feedback,
    };
    if let Some(dir) = out {
        save_checkpoint(&dir.join(CHECKPOINT_FILE), &fed.server, &fed.clients)?;
        fs::write(dir.join(METRICS_FILE), serde_json::to_string_pretty(&outcome.test)? + "\n")?;
        fs::write(dir.join(SUMMARY_FILE), summary_text(cfg, data, &outcome))?;
        if let Some(traj) = &outcome.feedback {
            let mut s = String::from("iteration\tjaccard\n");
            for (t, j) in traj.iter().enumerate() {
                s.push_str(&format!("{t}\t{j}\n"));
            }
            fs::write(dir.join(FEEDBACK_FILE), s)?;
        }
    }
    Ok(outcome)
}

/// User-weighted mean of the per-client feedback-loop trajectories.
pub fn feedback_trajectory(cfg: &ExperimentConfig, clients: &[ClientState]) -> Result<Vec<f64>> {
    let opts = FeedbackOptions {
        iterations: cfg.feedback_iterations,
        top_k: cfg.feedback_top_k,
        refresh_pairs: cfg.feedback_refresh_pairs,
    };
    let training = cfg.training();
    let per_client: Vec<(usize, Vec<f64>)> = clients
        .par_iter()
        .map(|c| {
            let mut local = c.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(client_seed(cfg.seed ^ 0xfeed, 0, c.id));
            Ok((c.num_users(), simulate_feedback_loop(&mut local, &training, &opts, &mut rng)?))
        })
        .collect::<Result<_>>()?;
    let users: usize = per_client.iter().map(|(n, _)| n).sum();
    let mut out = vec![0.0; opts.iterations + 1];
    for (n, traj) in &per_client {
        for (o, j) in out.iter_mut().zip(traj) {
            *o += j * *n as f64 / users as f64;
        }
    }
    Ok(out)
}

/// Evaluates a saved checkpoint at each cutoff in `ks`.
pub fn evaluate_checkpoint(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    spectra: &[Arc<PartialSpectrum>],
    checkpoint: &Path,
    ks: &[usize],
) -> Result<Vec<EvalSummary>> {
    if !checkpoint.exists() {
        return Err(Error::Format {
            path: checkpoint.to_path_buf(),
            message: "checkpoint not found".into(),
        });
    }
    let clients = build_clients(cfg, data, spectra)?;
    let mut fed = Federation::new(clients, cfg.training(), cfg.federation(), cfg.seed)?;
    load_checkpoint(checkpoint, &mut fed.server, &mut fed.clients)?;
    ks.iter()
        .map(|&k| evaluate(&fed.clients, data, HoldoutSet::Test, k, cfg.popularity_side))
        .collect()
}

pub fn summary_text(cfg: &ExperimentConfig, data: &PreparedData, o: &RunOutcome) -> String {
    let k = cfg.eval_k;
    let mut s = String::new();
    s.push_str(&format!(
        "dataset {} users {} items {} interactions {}\n",
        cfg.dataset, data.raw_users, data.raw_items, data.raw_edges
    ));
    s.push_str(&format!("selected state after {} of {} rounds\n\n", o.best_round, cfg.global_rounds));
    s.push_str(&format!("client  group  users  items  edges  recall@{k}  ndcg@{k}\n"));
    for (c, cd) in o.test.clients.iter().zip(&data.clients) {
        s.push_str(&format!(
            "{:>6}  {:>5}  {:>5}  {:>5}  {:>5}  {:>9.4}  {:>7.4}\n",
            c.client,
            c.label.short(),
            cd.subgraph.users.len(),
            cd.subgraph.items.len(),
            cd.subgraph.graph.num_edges(),
            c.report.recall,
            c.report.ndcg
        ));
    }
    s.push('\n');
    for g in &o.test.groups {
        s.push_str(&format!("group {} ({} clients): recall {:.4} ndcg {:.4}\n", g.label.short(), g.clients, g.recall, g.ndcg));
    }
    for b in &o.test.overall.buckets {
        s.push_str(&format!("{} bucket ({} users): recall {:.4} ndcg {:.4}\n", b.group, b.users, b.recall, b.ndcg));
    }
    s.push_str(&format!(
        "overall (user mean): recall {:.4} ndcg {:.4}\noverall (client mean): recall {:.4} ndcg {:.4}\n",
        o.test.overall.recall, o.test.overall.ndcg, o.test.client_mean_recall, o.test.client_mean_ndcg
    ));
    if let Some(f) = &o.feedback {
        s.push_str(&format!("paired jaccard: {}\n", f.iter().map(|j| format!("{j:.4}")).collect::<Vec<_>>().join(" ")));
    }
    s
}

/// Resolves `cfg.output_dir` against `root` when it is relative.
pub fn output_path(cfg: &ExperimentConfig, root: Option<&Path>) -> PathBuf {
    match root {
        Some(r) if cfg.output_dir.is_relative() => r.join(&cfg.output_dir),
        _ => cfg.output_dir.clone(),
    }
}
