use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::networks::{Hyper, LayerSpec, ModelConfig, Variant};
use crate::numerics::AdamConfig;
use crate::robustness::Scenario;
use crate::{Error, Result};

/// Options of the clustering and classification stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterOptions {
    /// Principal components per cluster and modality; `None` picks the
    /// smallest count explaining `variance` of the cluster's variance.
    pub subspace_dim: Option<usize>,
    pub variance: f64,
    /// Keep only the `q` largest coefficients per column before building the
    /// affinity. Off by default.
    pub top_q: Option<usize>,
    /// Fit classifier subspaces on latent codes instead of raw pixels.
    pub use_latent: bool,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        ClusterOptions {
            subspace_dim: None,
            variance: 0.9,
            top_q: None,
            use_latent: false,
        }
    }
}

pub const DEFAULT_PRETRAIN_EPOCHS: usize = 200;
pub const DEFAULT_FINETUNE_EPOCHS: usize = 300;

/// Sparsity weights sized for latent codes of a few units of norm; at 1.0 the
/// l1 and group terms outweigh self-expression and drive every coefficient to
/// zero.
fn default_hyper() -> Hyper {
    Hyper {
        rho: 0.01,
        lambda_group: 0.01,
        ..Hyper::default()
    }
}

/// The coefficient blocks take a larger step than the network weights: one
/// Adam step per epoch at 1e-3 cannot move a 160×160 matrix far enough.
fn default_optimizer() -> AdamConfig {
    AdamConfig {
        coeff_learning_rate: Some(1e-2),
        ..AdamConfig::default()
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_encoder() -> Vec<LayerSpec> {
    RunConfig::fixture_encoder()
}

fn default_variants() -> Vec<Variant> {
    vec![Variant::Drogsure, Variant::Dmsc]
}

fn default_pretrain() -> usize {
    DEFAULT_PRETRAIN_EPOCHS
}

fn default_finetune() -> usize {
    DEFAULT_FINETUNE_EPOCHS
}

fn default_jobs() -> usize {
    1
}

/// A run description: model settings plus the data and output locations.
/// Image size and modality count come from the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub variant: Variant,
    pub dataset: PathBuf,
    #[serde(default)]
    pub validation: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_encoder")]
    pub encoder_layers: Vec<LayerSpec>,
    #[serde(default = "default_hyper")]
    pub hyper: Hyper,
    #[serde(default = "default_pretrain")]
    pub pretrain_epochs: usize,
    #[serde(default = "default_finetune")]
    pub finetune_epochs: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: AdamConfig,
    #[serde(default)]
    pub seed: u64,
    /// Number of clusters; defaults to the number of distinct labels.
    #[serde(default)]
    pub clusters: Option<usize>,
    #[serde(default)]
    pub clustering: ClusterOptions,
    #[serde(default)]
    pub scenarios: Vec<Scenario>,
    /// Variants compared by `experiment`.
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

impl RunConfig {
    /// Small two-layer encoder used on the 8×8 synthetic fixture. Narrower
    /// banks tend to lose whole modalities to dead ReLUs.
    pub fn fixture_encoder() -> Vec<LayerSpec> {
        vec![LayerSpec::new(5, 3), LayerSpec::new(5, 3)]
    }

    pub fn new(variant: Variant, dataset: PathBuf) -> Self {
        RunConfig {
            variant,
            dataset,
            validation: None,
            out: default_out(),
            encoder_layers: default_encoder(),
            hyper: default_hyper(),
            pretrain_epochs: default_pretrain(),
            finetune_epochs: default_finetune(),
            optimizer: default_optimizer(),
            seed: 0,
            clusters: None,
            clustering: ClusterOptions::default(),
            scenarios: Vec::new(),
            variants: default_variants(),
            jobs: 1,
        }
    }

    /// Model configuration for a dataset with the given shape.
    pub fn model_config(&self, variant: Variant, modalities: usize, height: usize, width: usize) -> ModelConfig {
        ModelConfig {
            variant,
            modalities,
            encoder_layers: self.encoder_layers.clone(),
            height,
            width,
            hyper: self.hyper,
            pretrain_epochs: self.pretrain_epochs,
            finetune_epochs: self.finetune_epochs,
            optimizer: self.optimizer,
            seed: self.seed,
        }
    }

    /// Every problem with the configuration, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut out = self.model_config(self.variant, 1, 1, 1).violations();
        if self.clusters.is_some_and(|p| p < 2) {
            out.push("clusters must be at least 2".into());
        }
        let c = &self.clustering;
        if !(c.variance > 0.0 && c.variance <= 1.0) {
            out.push(format!("clustering.variance must lie in (0, 1], got {}", c.variance));
        }
        if c.subspace_dim == Some(0) {
            out.push("clustering.subspace_dim must be positive".into());
        }
        if c.top_q == Some(0) {
            out.push("clustering.top_q must be positive".into());
        }
        if self.variants.is_empty() {
            out.push("variants must not be empty".into());
        }
        if self.jobs == 0 {
            out.push("jobs must be at least 1".into());
        }
        for (i, s) in self.scenarios.iter().enumerate() {
            out.extend(s.violations().into_iter().map(|v| format!("scenarios[{i}]: {v}")));
        }
        if !self.dataset.exists() {
            out.push(format!("dataset {} does not exist", self.dataset.display()));
        }
        if let Some(v) = &self.validation {
            if !v.exists() {
                out.push(format!("validation {} does not exist", v.display()));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v.join("; ")))
        }
    }
}

/// Parses a JSON configuration; relative paths are taken relative to `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<RunConfig> {
    let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
    let resolve = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    resolve(&mut cfg.dataset);
    if let Some(v) = cfg.validation.as_mut() {
        resolve(v);
    }
    resolve(&mut cfg.out);
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_config(&text, base)
}
