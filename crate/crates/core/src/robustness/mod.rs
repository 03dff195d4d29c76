//! Corruption operators, the train-cluster-classify pipeline, scenario sweeps
//! and empirical perturbation bounds.

mod bounds;
mod pipeline;
mod scenario;

pub use bounds::{normalize_max, perturbation_report, PerturbationReport, GAP_EPS, LITERAL_REGIME};
pub use pipeline::{
    classify_dataset, cluster_count, cluster_trained, features_for, fit_classifier, run_pipeline, ClusterOutcome, PipelineRun,
};
pub use scenario::{
    mean_square_perturbation, resilience_comparison, run_scenario, spearman, Experiment, ExperimentReport, ExperimentRow,
    ResilienceReport, VariantResilience, CSV_HEADER,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::ModalityDataset;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Corruption {
    None,
    Shuffle,
    GaussianSnr { snr_db: f64 },
}

/// When the corruption is applied: to the sensor data used for training (and
/// therefore also to later validation data) or to validation data only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Test,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub corruption: Corruption,
    /// Corrupted modalities.
    #[serde(default)]
    pub targets: Vec<usize>,
    pub phase: Phase,
    /// Modalities available to the classifier; `None` means all.
    #[serde(default)]
    pub available: Option<Vec<usize>>,
    /// Evaluate the classifier on every non-empty modality subset.
    #[serde(default)]
    pub subset_sweep: bool,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

impl Scenario {
    pub fn clean(name: &str, seeds: Vec<u64>) -> Self {
        Scenario {
            name: name.into(),
            corruption: Corruption::None,
            targets: Vec::new(),
            phase: Phase::Train,
            available: None,
            subset_sweep: false,
            seeds,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.name.is_empty() {
            out.push("name must not be empty".into());
        }
        if self.seeds.is_empty() {
            out.push("seeds must not be empty".into());
        }
        if matches!(self.available, Some(ref a) if a.is_empty()) {
            out.push("available modalities must not be empty".into());
        }
        match self.corruption {
            Corruption::None => {}
            Corruption::Shuffle | Corruption::GaussianSnr { .. } if self.targets.is_empty() => {
                out.push("a corruption needs at least one target modality".into());
            }
            _ => {}
        }
        if let Corruption::GaussianSnr { snr_db } = self.corruption {
            if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
                out.push(format!("snr_db must be a real or +inf, got {snr_db}"));
            }
        }
        out
    }

    /// Checks modality indices against a dataset with `t` modalities.
    pub fn check_modalities(&self, t: usize) -> Result<()> {
        let bad = self
            .targets
            .iter()
            .chain(self.available.iter().flatten())
            .find(|&&i| i >= t);
        match bad {
            Some(i) => Err(Error::Config(format!("scenario {}: modality {i} out of range 0..{t}", self.name))),
            None => Ok(()),
        }
    }
}

fn check_target(ds: &ModalityDataset, t: usize) -> Result<()> {
    if t >= ds.modality_count() {
        return Err(Error::Config(format!("modality {t} out of range 0..{}", ds.modality_count())));
    }
    Ok(())
}

/// Scrambles every image of modality `t` with its own seeded pixel
/// permutation. A single shared permutation would be an orthogonal change of
/// pixel basis and leave the subspace structure intact.
pub fn shuffle_pixels(ds: &ModalityDataset, t: usize, seed: u64) -> Result<ModalityDataset> {
    check_target(ds, t)?;
    let mut out = ds.clone();
    let m = &mut out.modalities[t];
    let len = m.sample_len();
    let mut perm: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..m.batch {
        perm.shuffle(&mut rng);
        let src = ds.modalities[t].sample(i);
        let dst = &mut m.data[i * len..(i + 1) * len];
        for (d, &p) in dst.iter_mut().zip(&perm) {
            *d = src[p];
        }
    }
    Ok(out)
}

/// Adds i.i.d. Gaussian noise to modality `t` with variance
/// `P_signal / 10^(snr_db / 10)`, where `P_signal` is the mean squared pixel
/// value. `snr_db = +inf` leaves the data unchanged.
pub fn add_gaussian_snr(ds: &ModalityDataset, t: usize, snr_db: f64, seed: u64) -> Result<ModalityDataset> {
    check_target(ds, t)?;
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::Config(format!("snr_db must be a real or +inf, got {snr_db}")));
    }
    let m = &ds.modalities[t];
    let power = m.data.iter().map(|v| v * v).sum::<f64>() / m.data.len() as f64;
    if power == 0.0 {
        return Err(Error::Degenerate(format!("modality {t} has zero signal power")));
    }
    if snr_db == f64::INFINITY {
        return Ok(ds.clone());
    }
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ds.clone();
    out.modalities[t].data.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    Ok(out)
}

/// Applies `corruption` to every target modality; each target gets its own
/// stream derived from `seed`.
pub fn corrupt(ds: &ModalityDataset, corruption: Corruption, targets: &[usize], seed: u64) -> Result<ModalityDataset> {
    let mut out = ds.clone();
    for &t in targets {
        let sub_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(t as u64);
        out = match corruption {
            Corruption::None => out,
            Corruption::Shuffle => shuffle_pixels(&out, t, sub_seed)?,
            Corruption::GaussianSnr { snr_db } => add_gaussian_snr(&out, t, snr_db, sub_seed)?,
        };
    }
    Ok(out)
}

/// Every non-empty subset of `0..t`, by size then lexicographically.
pub fn modality_subsets(t: usize) -> Vec<Vec<usize>> {
    let mut subsets: Vec<Vec<usize>> = (1u32..(1 << t))
        .map(|mask| (0..t).filter(|i| mask & (1 << i) != 0).collect())
        .collect();
    subsets.sort_by(|a, b| a.len().cmp(&b.len()).then(a.cmp(b)));
    subsets
}
