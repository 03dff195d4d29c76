//! Command-line front end. Every command writes its artifacts and a
//! `run_manifest.json` under one output directory; identical inputs give
//! byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::dataio::{gen_synthetic, load_config, load_dataset, save_dataset, RunConfig, SyntheticSpec};
use crate::networks::{build_model, load_checkpoint, save_checkpoint, train_from, TrainState, Variant};
use crate::numerics::DenseMatrix;
use crate::objectives::{gradcheck_suite, GradcheckConfig};
use crate::robustness::{
    cluster_count, cluster_trained, corrupt, fit_classifier, classify_dataset, normalize_max, perturbation_report,
    run_pipeline, Corruption, Experiment, ExperimentReport, PerturbationReport,
};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Parser)]
#[command(name = "drogsure", version, about = "Multimodal deep subspace clustering")]
pub struct Cli {
    /// Seed overriding the configuration seed (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; defaults to the configuration's `out`, else `out`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic union-of-subspaces dataset.
    Gen(GenArgs),
    /// Train a network variant and write a checkpoint and loss trace.
    Train(TrainArgs),
    /// Cluster a dataset with a trained checkpoint.
    Cluster(ClusterArgs),
    /// Run the configured robustness scenarios.
    Experiment(ExperimentArgs),
    /// Compare a clean and a perturbed affinity against the perturbation bounds.
    Bounds(BoundsArgs),
    /// Check analytic gradients against finite differences on a toy model.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Fixture,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum, default_value = "fixture")]
    pub preset: Preset,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub per_cluster: Option<usize>,
    #[arg(long)]
    pub side: Option<usize>,
    #[arg(long)]
    pub modalities: Option<usize>,
    #[arg(long)]
    pub shared_dim: Option<usize>,
    #[arg(long)]
    pub private_dim: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Continue from a checkpoint up to the configured epoch counts.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Held-out split classified with the fitted subspaces.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    /// Configuration supplying clustering options and the cluster count.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub clusters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Parallel trainings; overrides the configuration.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CorruptionKind {
    Shuffle,
    Gaussian,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    /// Clean affinity as CSV (one row per line).
    #[arg(long, conflicts_with = "config")]
    pub clean: Option<PathBuf>,
    /// Perturbed affinity as CSV.
    #[arg(long, requires = "clean", conflicts_with = "random")]
    pub perturbed: Option<PathBuf>,
    /// Number of random symmetric perturbations of the clean affinity.
    #[arg(long, requires = "clean")]
    pub random: Option<usize>,
    /// Largest perturbation entry relative to the largest clean entry.
    #[arg(long, default_value_t = 0.05)]
    pub scale: f64,
    /// Train clean and corrupted models from this configuration instead.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, requires = "config")]
    pub corruption: Option<CorruptionKind>,
    #[arg(long, default_value_t = 10.0)]
    pub snr_db: f64,
    /// Corrupted modalities, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub targets: Vec<usize>,
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Cluster count `P`.
    #[arg(long)]
    pub clusters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// JSON gradcheck configuration; defaults to the built-in toy problem.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Corrupt one analytic gradient block (negative control).
    #[arg(long, hide = true)]
    pub inject_bug: bool,
}

/// Result of one command.
#[derive(Clone, Debug, PartialEq)]
pub struct CommandOutcome {
    pub exit_code: i32,
    pub artifacts: Vec<PathBuf>,
    pub summary: String,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    version: &'a str,
    config_hash: Option<String>,
    seed: u64,
    artifacts: Vec<String>,
    summary: &'a str,
    warnings: &'a [String],
}

/// Output files of a command, recorded in its manifest.
struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Outputs { dir, written: Vec::new() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, bytes)?;
        self.written.push(path);
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text)
    }

    fn record(&mut self, path: PathBuf) {
        self.written.push(path);
    }

    fn relative(&self, p: &Path) -> String {
        p.strip_prefix(&self.dir).unwrap_or(p).to_string_lossy().into_owned()
    }

    /// Writes the manifest and returns the successful outcome.
    fn finish(mut self, m: ManifestInfo, summary: String, exit_code: i32) -> Result<CommandOutcome> {
        let artifacts: Vec<String> = self.written.iter().map(|p| self.relative(p)).collect();
        let manifest = RunManifest {
            command: m.command,
            version: env!("CARGO_PKG_VERSION"),
            config_hash: m.config_hash,
            seed: m.seed,
            artifacts,
            summary: &summary,
            warnings: &m.warnings,
        };
        self.write_json(MANIFEST_FILE, &manifest)?;
        Ok(CommandOutcome {
            exit_code,
            artifacts: self.written,
            summary,
        })
    }
}

struct ManifestInfo {
    command: &'static str,
    config_hash: Option<String>,
    seed: u64,
    warnings: Vec<String>,
}

/// SHA-256 of the configuration file bytes.
fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Loads a configuration and applies the seed precedence CLI > config.
fn config_with_seed(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = load_config(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn fmt_row(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// One matrix row per line, comma separated.
pub fn matrix_to_csv(m: &DenseMatrix) -> String {
    let mut s = String::new();
    for i in 0..m.nrows() {
        writeln!(s, "{}", fmt_row(m.row(i).iter().copied())).expect("writing to a String");
    }
    s
}

/// Parses a square matrix written by [`matrix_to_csv`].
pub fn matrix_from_csv(text: &str) -> Result<DenseMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Format(format!("expected a square matrix, got {n} rows of varying length")));
    }
    Ok(DenseMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn read_matrix(path: &Path) -> Result<DenseMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    matrix_from_csv(&text)
}

fn labels_csv(labels: &[usize]) -> String {
    let mut s = String::from("sample_id,label\n");
    for (i, l) in labels.iter().enumerate() {
        writeln!(s, "{i},{l}").expect("writing to a String");
    }
    s
}

fn loss_trace_csv(trace: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in trace.iter().enumerate() {
        writeln!(s, "{i},{l}").expect("writing to a String");
    }
    s
}

fn load_split(path: &Path, what: &str) -> Result<crate::dataio::ModalityDataset> {
    if !path.is_dir() {
        return Err(Error::Config(format!("{what} directory {} does not exist", path.display())));
    }
    load_dataset(path)
}

/// Runs one parsed command line.
pub fn run(cli: &Cli) -> Result<CommandOutcome> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(cli, a),
        Command::Train(a) => cmd_train(cli, a),
        Command::Cluster(a) => cmd_cluster(cli, a),
        Command::Experiment(a) => cmd_experiment(cli, a),
        Command::Bounds(a) => cmd_bounds(cli, a),
        Command::Gradcheck(a) => cmd_gradcheck(cli, a),
    }
}

fn out_dir(cli: &Cli, cfg: Option<&RunConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.map(|c| c.out.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn cmd_gen(cli: &Cli, a: &GenArgs) -> Result<CommandOutcome> {
    let seed = cli.seed.unwrap_or(0);
    let mut spec = match a.preset {
        Preset::Fixture => SyntheticSpec::fixture(seed),
    };
    let set = |slot: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut spec.clusters, a.clusters);
    set(&mut spec.per_cluster, a.per_cluster);
    set(&mut spec.side, a.side);
    set(&mut spec.modalities, a.modalities);
    set(&mut spec.shared_dim, a.shared_dim);
    set(&mut spec.private_dim, a.private_dim);
    if let Some(s) = a.sigma {
        spec.sigma = s;
    }
    spec.validate()?;
    let splits = gen_synthetic(&spec)?;
    let mut out = Outputs::new(out_dir(cli, None))?;
    let mut checksums = Vec::new();
    for (name, ds) in [("learning", &splits.learning), ("validation", &splits.validation)] {
        let dir = out.path(name);
        let manifest = save_dataset(ds, &dir)?;
        out.record(dir.join("manifest.json"));
        checksums.push(json!({ "split": name, "files": manifest.files, "labels": manifest.label_sha256 }));
    }
    out.write_json("spec.json", &json!({ "spec": spec, "checksums": checksums }))?;
    let summary = format!(
        "generated {} learning and {} validation samples in {} modalities",
        splits.learning.samples(),
        splits.validation.samples(),
        spec.modalities
    );
    let info = ManifestInfo {
        command: "gen",
        config_hash: None,
        seed,
        warnings: Vec::new(),
    };
    out.finish(info, summary, 0)
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<CommandOutcome> {
    let cfg = config_with_seed(&a.config, cli.seed)?;
    let learning = load_split(&cfg.dataset, "dataset")?;
    let model_cfg = cfg.model_config(cfg.variant, learning.modality_count(), learning.height(), learning.width());
    model_cfg.validate()?;
    let state = match &a.resume {
        None => TrainState::new(build_model(&model_cfg, learning.samples())?),
        Some(path) => {
            let mut state = load_checkpoint(path)?;
            let saved = &state.model.config;
            let same = saved.variant == model_cfg.variant
                && saved.modalities == model_cfg.modalities
                && saved.encoder_layers == model_cfg.encoder_layers
                && (saved.height, saved.width) == (model_cfg.height, model_cfg.width)
                && saved.hyper == model_cfg.hyper
                && state.model.samples == learning.samples();
            if !same {
                return Err(Error::Config(format!(
                    "checkpoint {} does not match the configured model or dataset",
                    path.display()
                )));
            }
            state.model.config.pretrain_epochs = model_cfg.pretrain_epochs;
            state.model.config.finetune_epochs = model_cfg.finetune_epochs;
            state
        }
    };
    let resumed_at = state.epochs_done();
    let report = train_from(state, &learning.modalities)?;
    let mut out = Outputs::new(out_dir(cli, Some(&cfg)))?;
    let ckpt = out.path("checkpoint.bin");
    save_checkpoint(&ckpt, &report.state)?;
    out.record(ckpt);
    out.write("loss_trace.csv", loss_trace_csv(&report.state.loss_trace))?;
    let epochs = report.state.epochs_done();
    let summary = format!(
        "trained {} for epochs {resumed_at}..{epochs}, final loss {}",
        cfg.variant.name(),
        report.final_loss.total
    );
    let info = ManifestInfo {
        command: "train",
        config_hash: Some(hash_file(&a.config)?),
        seed: cfg.seed,
        warnings: report.warnings,
    };
    out.finish(info, summary, 0)
}

fn cmd_cluster(cli: &Cli, a: &ClusterArgs) -> Result<CommandOutcome> {
    let cfg = a.config.as_deref().map(|p| config_with_seed(p, cli.seed)).transpose()?;
    let seed = cli.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
    if !a.checkpoint.is_file() {
        return Err(Error::Config(format!("checkpoint {} does not exist", a.checkpoint.display())));
    }
    let state = load_checkpoint(&a.checkpoint)?;
    let learning = load_split(&a.dataset, "dataset")?;
    let options = cfg.as_ref().map(|c| c.clustering.clone()).unwrap_or_default();
    let p = match (a.clusters, &cfg) {
        (Some(p), _) => p,
        (None, Some(c)) => cluster_count(c, &learning)?,
        (None, None) => learning
            .cluster_count()
            .ok_or_else(|| Error::Config("unlabelled dataset: pass --clusters".into()))?,
    };
    let outcome = cluster_trained(&state.model, &learning, p, &options, seed)?;
    let mut out = Outputs::new(out_dir(cli, cfg.as_ref()))?;
    out.write("labels.csv", labels_csv(&outcome.labels))?;
    out.write("affinity.csv", matrix_to_csv(&outcome.affinity))?;
    let validation = a.validation.clone().or(cfg.as_ref().and_then(|c| c.validation.clone()));
    let mut val_metrics = None;
    if let Some(vpath) = validation {
        let val = load_split(&vpath, "validation")?;
        let subspaces = fit_classifier(&state.model, &learning, &outcome.labels, &options)?;
        let all: Vec<usize> = (0..val.modality_count()).collect();
        let pred = classify_dataset(&state.model, &subspaces, &val, &all, options.use_latent)?;
        out.write("validation_labels.csv", labels_csv(&pred))?;
        val_metrics = val
            .labels
            .as_ref()
            .map(|l| crate::clustering::MetricSet::score(&pred, l))
            .transpose()?;
    }
    let metrics = json!({
        "clusters": p,
        "samples": learning.samples(),
        "learning": outcome.metrics,
        "validation": val_metrics,
    });
    out.write_json("metrics.json", &metrics)?;
    let summary = match outcome.metrics {
        Some(m) => format!("clustered {} samples into {p} groups: acc {} ari {} nmi {}", learning.samples(), m.acc, m.ari, m.nmi),
        None => format!("clustered {} samples into {p} groups", learning.samples()),
    };
    let info = ManifestInfo {
        command: "cluster",
        config_hash: a.config.as_deref().map(hash_file).transpose()?,
        seed,
        warnings: Vec::new(),
    };
    out.finish(info, summary, 0)
}

fn cmd_experiment(cli: &Cli, a: &ExperimentArgs) -> Result<CommandOutcome> {
    let mut cfg = config_with_seed(&a.config, cli.seed)?;
    if let Some(j) = a.jobs {
        if j == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        cfg.jobs = j;
    }
    let mut report = ExperimentReport::default();
    if !cfg.scenarios.is_empty() {
        let learning = load_split(&cfg.dataset, "dataset")?;
        let validation = cfg.validation.as_deref().map(|p| load_split(p, "validation")).transpose()?;
        let mut ex = Experiment::new(&cfg, &learning, validation.as_ref());
        for sc in &cfg.scenarios {
            report.extend(ex.run_scenario(sc)?);
        }
    }
    let mut out = Outputs::new(out_dir(cli, Some(&cfg)))?;
    out.write("report.csv", report.to_csv())?;
    out.write_json("report.json", &report.to_json())?;
    let summary = format!("{} scenarios, {} result rows", cfg.scenarios.len(), report.rows.len());
    let info = ManifestInfo {
        command: "experiment",
        config_hash: Some(hash_file(&a.config)?),
        seed: cfg.seed,
        warnings: Vec::new(),
    };
    out.finish(info, summary, 0)
}

fn random_perturbation(a: &DenseMatrix, scale: f64, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let n = a.nrows();
    let amp = scale * a.abs().max().max(f64::MIN_POSITIVE);
    let mut b = a.clone();
    for i in 0..n {
        for j in 0..i {
            let d = amp * rng.random_range(-1.0..1.0);
            b[(i, j)] += d;
            b[(j, i)] += d;
        }
    }
    b
}

fn cmd_bounds(cli: &Cli, a: &BoundsArgs) -> Result<CommandOutcome> {
    let seed = cli.seed.unwrap_or(0);
    let mut reports: Vec<(String, PerturbationReport)> = Vec::new();
    let mut config_hash = None;
    let mut out_cfg = None;
    if let Some(clean_path) = &a.clean {
        let clean = read_matrix(clean_path)?;
        let p = a
            .clusters
            .ok_or_else(|| Error::Config("--clusters is required with --clean".into()))?;
        match (&a.perturbed, a.random) {
            (Some(pp), _) => reports.push(("file".into(), perturbation_report(&clean, &read_matrix(pp)?, p)?)),
            (None, Some(k)) => {
                if !(a.scale >= 0.0 && a.scale.is_finite()) {
                    return Err(Error::Config(format!("--scale must be a nonnegative number, got {}", a.scale)));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for i in 0..k {
                    let b = random_perturbation(&clean, a.scale, &mut rng);
                    reports.push((format!("random{i}"), perturbation_report(&clean, &b, p)?));
                }
            }
            (None, None) => return Err(Error::Config("pass --perturbed or --random with --clean".into())),
        }
    } else if let Some(cfg_path) = &a.config {
        let cfg = config_with_seed(cfg_path, cli.seed)?;
        let learning = load_split(&cfg.dataset, "dataset")?;
        let corruption = match a.corruption {
            Some(CorruptionKind::Shuffle) => Corruption::Shuffle,
            Some(CorruptionKind::Gaussian) => Corruption::GaussianSnr { snr_db: a.snr_db },
            None => return Err(Error::Config("--corruption is required with --config".into())),
        };
        if let Some(t) = a.targets.iter().find(|&&t| t >= learning.modality_count()) {
            return Err(Error::Config(format!("target modality {t} out of range")));
        }
        let variant = a.variant.unwrap_or(cfg.variant);
        let mut cfg = cfg;
        if let Some(p) = a.clusters {
            cfg.clusters = Some(p);
        }
        let p = cluster_count(&cfg, &learning)?;
        let clean = run_pipeline(&cfg, variant, &learning, cfg.seed)?;
        let corrupted_data = corrupt(&learning, corruption, &a.targets, cfg.seed)?;
        let corrupted = run_pipeline(&cfg, variant, &corrupted_data, cfg.seed)?;
        let (ca, ka) = (normalize_max(&clean.clustering.affinity)?, normalize_max(&corrupted.clustering.affinity)?);
        reports.push((variant.name().into(), perturbation_report(&ca, &ka, p)?));
        config_hash = Some(hash_file(cfg_path)?);
        out_cfg = Some(cfg);
    } else {
        return Err(Error::Config("pass --clean or --config".into()));
    }
    let consistent = reports.iter().all(|(_, r)| r.consistent());
    let degenerate = reports.iter().filter(|(_, r)| r.gap_degenerate).count();
    let body: Vec<Value> = reports.iter().map(|(name, r)| json!({ "name": name, "report": r })).collect();
    let mut out = Outputs::new(out_dir(cli, out_cfg.as_ref()))?;
    out.write_json("bounds.json", &json!({ "consistent": consistent, "reports": body }))?;
    let summary = format!(
        "{} comparisons, {} with a degenerate gap, bounds {}",
        reports.len(),
        degenerate,
        if consistent { "hold" } else { "VIOLATED" }
    );
    let info = ManifestInfo {
        command: "bounds",
        config_hash,
        seed,
        warnings: Vec::new(),
    };
    out.finish(info, summary, if consistent { 0 } else { 2 })
}

fn cmd_gradcheck(cli: &Cli, a: &GradcheckArgs) -> Result<CommandOutcome> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str::<GradcheckConfig>(&text).map_err(|e| Error::Config(format!("gradcheck config: {e}")))?
        }
        None => GradcheckConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let report = gradcheck_suite(&cfg, a.inject_bug)?;
    let mut out = Outputs::new(out_dir(cli, None))?;
    out.write_json("gradcheck.json", &report)?;
    let failed = report.blocks.iter().filter(|b| !b.passed).count();
    let summary = format!(
        "{} blocks checked, {failed} above tolerance {}, worst relative error {:e}",
        report.blocks.len(),
        report.tolerance,
        report.worst()
    );
    let info = ManifestInfo {
        command: "gradcheck",
        config_hash: a.config.as_deref().map(hash_file).transpose()?,
        seed: cfg.seed,
        warnings: Vec::new(),
    };
    out.finish(info, summary, if failed == 0 { 0 } else { 2 })
}
