//! Command-line front end: `partition`, `train`, `eval`, `sweep`, `theory`.
//!
//! Every subcommand accepts `--config FILE` plus `--<key> <value>` (or
//! `--<key>=<value>`) for any [`ExperimentConfig`] key; flags win over the
//! file. Relative output directories resolve against `$LOWPASS_FEDREC_OUTPUT_ROOT`
//! when it is set.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::data::{write_manifest, PopularityGroup};
use crate::error::{Error, Result};
use crate::experiment::{
    client_spectra, evaluate_checkpoint, output_path, prepare_data, run, EvalSummary, PreparedData, RunOutcome,
    CHECKPOINT_FILE, CONFIG_FILE, MANIFEST_FILE,
};
use crate::theory::TheoryBattery;

pub const OUTPUT_ROOT_ENV: &str = "LOWPASS_FEDREC_OUTPUT_ROOT";

#[derive(Debug, Parser)]
#[command(name = "lowpass-fedrec", version, about = "Federated recommendation with low-pass spectral clients")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split the dataset into clients and write the manifest and edge files.
    Partition(Common),
    /// Run the federated training loop.
    Train(Common),
    /// Evaluate a checkpoint on the test split.
    Eval {
        /// Checkpoint file; defaults to the run directory's checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated cutoffs.
        #[arg(long, value_delimiter = ',', default_value = "20")]
        k: Vec<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// One training run per value of a config key, sharing the partition.
    Sweep {
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Bound checks on planted-partition graphs.
    Theory {
        /// Samples per configuration.
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `--<key> <value>` overrides for config keys.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    pub overrides: Vec<String>,
}

/// Pairs `--key value` and `--key=value` tokens.
pub fn parse_overrides(tokens: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = tokens.iter();
    while let Some(tok) = it.next() {
        let Some(flag) = tok.strip_prefix("--") else {
            return Err(Error::InvalidArgument(format!("expected `--key value`, got `{tok}`")));
        };
        match flag.split_once('=') {
            Some((k, v)) => out.push((k.to_owned(), v.to_owned())),
            None => match it.next() {
                Some(v) => out.push((flag.to_owned(), v.clone())),
                None => return Err(Error::InvalidArgument(format!("missing value for `--{flag}`"))),
            },
        }
    }
    Ok(out)
}

impl Common {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let base = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        let cfg = base.with_overrides(parse_overrides(&self.overrides)?)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn output_root() -> Option<PathBuf> {
    std::env::var_os(OUTPUT_ROOT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn install_threads(cfg: &ExperimentConfig) {
    // a second build attempt fails harmlessly when the pool already exists
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Output goes to `out`, diagnostics to stderr.
pub fn main_with<I, T>(args: I, out: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(text) => {
            let _ = out.write_all(text.as_bytes());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command) -> Result<String> {
    match command {
        Command::Partition(c) => cmd_partition(&c.resolve()?),
        Command::Train(c) => cmd_train(&c.resolve()?).map(|(text, _)| text),
        Command::Eval { checkpoint, k, common } => cmd_eval(&common.resolve()?, checkpoint.as_deref(), k),
        Command::Sweep { param, values, common } => cmd_sweep(&common.resolve()?, param, values),
        Command::Theory { samples, common } => cmd_theory(&common.resolve()?, *samples),
    }
}

fn run_dir(cfg: &ExperimentConfig) -> PathBuf {
    output_path(cfg, output_root().as_deref())
}

pub fn partition_summary(data: &PreparedData) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{} clients, {} users, {} items, {} training edges", data.clients.len(), data.train_graph.num_users(), data.train_graph.num_items(), data.train_graph.num_edges());
    let _ = writeln!(s, "client  group  users  items  edges  mean_user_degree");
    for c in &data.clients {
        let g = &c.subgraph.graph;
        let _ = writeln!(
            s,
            "{:>6}  {:>5}  {:>5}  {:>5}  {:>5}  {:>16.2}",
            c.subgraph.id,
            c.label.short(),
            g.num_users(),
            g.num_items(),
            g.num_edges(),
            g.num_edges() as f64 / g.num_users().max(1) as f64
        );
    }
    let _ = writeln!(s, "held-out pairs dropped: {}", data.dropped_holdout);
    s
}

pub fn cmd_partition(cfg: &ExperimentConfig) -> Result<String> {
    install_threads(cfg);
    let data = prepare_data(cfg)?;
    let dir = run_dir(cfg);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_text())?;
    write_manifest(&dir.join(MANIFEST_FILE), &data.partition)?;
    for c in &data.partition.clients {
        let mut s = String::new();
        for (u, i) in c.global_edges() {
            let _ = writeln!(s, "{u}\t{i}");
        }
        fs::write(dir.join(format!("client_{}.tsv", c.id)), s)?;
    }
    let summary = partition_summary(&data);
    fs::write(dir.join("partition_summary.txt"), &summary)?;
    Ok(summary)
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<(String, RunOutcome)> {
    install_threads(cfg);
    let data = prepare_data(cfg)?;
    let spectra = client_spectra(&data, cfg.phi, cfg.seed)?;
    let dir = run_dir(cfg);
    let outcome = run(cfg, &data, &spectra, Some(&dir))?;
    let text = crate::experiment::summary_text(cfg, &data, &outcome);
    Ok((text, outcome))
}

fn report_text(e: &EvalSummary) -> String {
    let k = e.overall.k;
    let mut s = format!("k={k} recall {:.4} ndcg {:.4} (client mean recall {:.4} ndcg {:.4})\n", e.overall.recall, e.overall.ndcg, e.client_mean_recall, e.client_mean_ndcg);
    for g in &e.groups {
        let _ = writeln!(s, "  group {} ({} clients): recall {:.4} ndcg {:.4}", g.label.short(), g.clients, g.recall, g.ndcg);
    }
    for b in &e.overall.buckets {
        let _ = writeln!(s, "  {} bucket ({} users): recall {:.4} ndcg {:.4}", b.group, b.users, b.recall, b.ndcg);
    }
    s
}

pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: Option<&Path>, ks: &[usize]) -> Result<String> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidArgument("cutoffs must be positive".into()));
    }
    install_threads(cfg);
    let dir = run_dir(cfg);
    let ckpt = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| dir.join(CHECKPOINT_FILE));
    let data = prepare_data(cfg)?;
    let spectra = client_spectra(&data, cfg.phi, cfg.seed)?;
    let reports = evaluate_checkpoint(cfg, &data, &spectra, &ckpt, ks)?;
    fs::create_dir_all(&dir)?;
    let mut text = String::new();
    for r in &reports {
        fs::write(dir.join(format!("eval_k{}.json", r.overall.k)), serde_json::to_string_pretty(r)? + "\n")?;
        text.push_str(&report_text(r));
    }
    Ok(text)
}

/// Keys whose change alters the prepared data or the spectra.
const DATA_KEYS: &[&str] = &[
    "dataset", "delimiter", "synthetic_users", "synthetic_items", "synthetic_communities", "synthetic_mean_degree",
    "synthetic_popularity_skew", "synthetic_affinity", "num_clients", "split_train", "split_val", "split_test",
    "edge_jitter", "jitter_low", "jitter_high", "seed",
];

#[derive(Debug, Clone, serde::Serialize)]
pub struct SweepPoint {
    pub value: String,
    pub best_round: usize,
    pub val_ndcg: f64,
    pub test_recall: f64,
    pub test_ndcg: f64,
    pub tail_ndcg: Option<f64>,
    pub final_jaccard: Option<f64>,
}

pub fn cmd_sweep(cfg: &ExperimentConfig, param: &str, values: &[String]) -> Result<String> {
    let key = param.trim().replace('-', "_");
    if !ExperimentConfig::keys().contains(&key.as_str()) || key == "output_dir" {
        return Err(Error::InvalidArgument(format!("cannot sweep `{param}`")));
    }
    if values.is_empty() {
        return Err(Error::InvalidArgument("sweep grid is empty".into()));
    }
    let points: Vec<ExperimentConfig> = values
        .iter()
        .map(|v| {
            let mut c = cfg.with_overrides([(key.as_str(), v.as_str())])?;
            c.output_dir = cfg.output_dir.join(format!("{key}={}", v.trim()));
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<_>>()?;
    install_threads(cfg);
    let dir = run_dir(cfg);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_text())?;

    let shared = if DATA_KEYS.contains(&key.as_str()) { None } else { Some(prepare_data(cfg)?) };
    let mut spectra_cache = None;
    let mut rows = Vec::new();
    let mut jaccard = String::new();
    for (value, pc) in values.iter().zip(&points) {
        let owned;
        let data = match &shared {
            Some(d) => d,
            None => {
                owned = prepare_data(pc)?;
                &owned
            }
        };
        let spectra = match (&shared, key.as_str(), &spectra_cache) {
            (Some(_), k, Some(s)) if k != "phi" => std::sync::Arc::clone(s),
            _ => {
                let s = std::sync::Arc::new(client_spectra(data, pc.phi, pc.seed)?);
                if shared.is_some() && key != "phi" {
                    spectra_cache = Some(std::sync::Arc::clone(&s));
                }
                s
            }
        };
        let o = run(pc, data, &spectra, Some(&run_dir(pc)))?;
        if let Some(t) = &o.feedback {
            let _ = writeln!(jaccard, "{}\t{}", value.trim(), t.iter().map(|j| j.to_string()).collect::<Vec<_>>().join("\t"));
        }
        rows.push(SweepPoint {
            value: value.trim().to_owned(),
            best_round: o.best_round,
            val_ndcg: o.validation.overall.ndcg,
            test_recall: o.test.overall.recall,
            test_ndcg: o.test.overall.ndcg,
            tail_ndcg: o.test.overall.bucket(PopularityGroup::Tail).map(|b| b.ndcg),
            final_jaccard: o.feedback.as_ref().and_then(|t| t.last().copied()),
        });
    }
    let opt = |x: Option<f64>| x.map_or_else(|| "nan".to_owned(), |v| v.to_string());
    let mut tsv = format!("{key}\tbest_round\tval_ndcg\ttest_recall\ttest_ndcg\ttail_ndcg\tfinal_jaccard\n");
    for r in &rows {
        let _ = writeln!(tsv, "{}\t{}\t{}\t{}\t{}\t{}\t{}", r.value, r.best_round, r.val_ndcg, r.test_recall, r.test_ndcg, opt(r.tail_ndcg), opt(r.final_jaccard));
    }
    fs::write(dir.join(format!("sweep_{key}.tsv")), &tsv)?;
    if !jaccard.is_empty() {
        fs::write(dir.join(format!("jaccard_{key}.tsv")), &jaccard)?;
    }
    Ok(tsv)
}

pub fn cmd_theory(cfg: &ExperimentConfig, samples: usize) -> Result<String> {
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be positive".into()));
    }
    install_threads(cfg);
    let battery = TheoryBattery::new(cfg.seed, samples);
    let report = battery.run()?;
    let dir = run_dir(cfg);
    fs::create_dir_all(&dir)?;
    let table = report.table();
    fs::write(dir.join("theory.txt"), &table)?;
    let mut records = String::new();
    for r in report.projection.iter().chain(&report.smoothness) {
        records.push_str(&serde_json::to_string(r)?);
        records.push('\n');
    }
    for r in report.separated.results.iter().chain(&report.degenerate.results) {
        records.push_str(&serde_json::to_string(r)?);
        records.push('\n');
    }
    fs::write(dir.join("theory_records.ndjson"), records)?;
    fs::write(dir.join("theory_report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(table)
}
