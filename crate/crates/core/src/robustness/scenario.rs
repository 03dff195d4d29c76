use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{corrupt, modality_subsets, normalize_max, run_pipeline, Corruption, Phase, PipelineRun, Scenario};
use crate::dataio::{ModalityDataset, RunConfig};
use crate::networks::Variant;
use crate::{Error, Result};

/// Mixed into the run seed for corruption drawn on the validation split, so
/// that its noise and permutations differ from the learning-split ones.
const VALIDATION_STREAM: u64 = 0x5EED0F7E57;

/// One flattened result line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub scenario: String,
    pub variant: Variant,
    pub seed: u64,
    /// Evaluated split: `learning` (clustering) or `validation` (classifier).
    pub phase: String,
    /// Modalities used, joined by `|`.
    pub modalities_available: String,
    pub acc: f64,
    pub ari: f64,
    pub nmi: f64,
    /// Clean accuracy of the same variant, seed, split and modalities minus
    /// `acc`.
    pub acc_drop: f64,
}

impl ExperimentRow {
    pub fn modality_count(&self) -> usize {
        self.modalities_available.split('|').count()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ExperimentRow>,
}

pub const CSV_HEADER: &str = "scenario,variant,seed,phase,modalities_available,acc,ari,nmi,acc_drop";

impl ExperimentReport {
    pub fn extend(&mut self, other: ExperimentReport) {
        self.rows.extend(other.rows);
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.scenario,
                r.variant.name(),
                r.seed,
                r.phase,
                r.modalities_available,
                r.acc,
                r.ari,
                r.nmi,
                r.acc_drop
            )
            .expect("writing to a String");
        }
        s
    }

    /// Rows nested by scenario, variant and seed, in first-appearance order.
    pub fn to_json(&self) -> Value {
        let mut scenarios: Vec<(String, Vec<(Variant, Vec<(u64, Vec<Value>)>)>)> = Vec::new();
        for r in &self.rows {
            let si = match scenarios.iter().position(|s| s.0 == r.scenario) {
                Some(i) => i,
                None => {
                    scenarios.push((r.scenario.clone(), Vec::new()));
                    scenarios.len() - 1
                }
            };
            let variants = &mut scenarios[si].1;
            let vi = match variants.iter().position(|v| v.0 == r.variant) {
                Some(i) => i,
                None => {
                    variants.push((r.variant, Vec::new()));
                    variants.len() - 1
                }
            };
            let seeds = &mut variants[vi].1;
            let ki = match seeds.iter().position(|k| k.0 == r.seed) {
                Some(i) => i,
                None => {
                    seeds.push((r.seed, Vec::new()));
                    seeds.len() - 1
                }
            };
            seeds[ki].1.push(json!({
                "phase": r.phase,
                "modalities_available": r.modalities_available,
                "acc": r.acc,
                "ari": r.ari,
                "nmi": r.nmi,
                "acc_drop": r.acc_drop,
            }));
        }
        let scenarios: Vec<Value> = scenarios
            .into_iter()
            .map(|(name, variants)| {
                let variants: Vec<Value> = variants
                    .into_iter()
                    .map(|(v, seeds)| {
                        let seeds: Vec<Value> =
                            seeds.into_iter().map(|(seed, rows)| json!({"seed": seed, "results": rows})).collect();
                        json!({"variant": v, "seeds": seeds})
                    })
                    .collect();
                json!({"scenario": name, "variants": variants})
            })
            .collect();
        json!({ "scenarios": scenarios })
    }

    /// Mean of `f` over the rows selected by `keep`; `None` if none match.
    pub fn mean_of(&self, keep: impl Fn(&ExperimentRow) -> bool, f: impl Fn(&ExperimentRow) -> f64) -> Option<f64> {
        let vals: Vec<f64> = self.rows.iter().filter(|r| keep(r)).map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

fn join_modalities(m: &[usize]) -> String {
    m.iter().map(|t| t.to_string()).collect::<Vec<_>>().join("|")
}

/// Which data a model was trained on.
#[derive(Clone, Debug, PartialEq)]
struct TrainingData {
    corruption: Corruption,
    targets: Vec<usize>,
}

impl TrainingData {
    fn clean() -> Self {
        TrainingData {
            corruption: Corruption::None,
            targets: Vec::new(),
        }
    }

    fn key(&self) -> String {
        if self.corruption == Corruption::None || self.targets.is_empty() {
            "clean".into()
        } else {
            format!("{}:{}", serde_json::to_string(&self.corruption).expect("plain enum"), join_modalities(&self.targets))
        }
    }
}

fn corrupt_split(ds: &ModalityDataset, c: Corruption, targets: &[usize], seed: u64, validation: bool) -> Result<ModalityDataset> {
    let seed = match (c, validation) {
        (Corruption::GaussianSnr { .. } | Corruption::Shuffle, true) => seed ^ VALIDATION_STREAM,
        _ => seed,
    };
    corrupt(ds, c, targets, seed)
}

/// Runs scenarios against one learning/validation pair, training each
/// (data, variant, seed) combination at most once.
pub struct Experiment<'a> {
    cfg: &'a RunConfig,
    learning: &'a ModalityDataset,
    validation: Option<&'a ModalityDataset>,
    runs: BTreeMap<(String, &'static str, u64), PipelineRun>,
}

impl<'a> Experiment<'a> {
    pub fn new(cfg: &'a RunConfig, learning: &'a ModalityDataset, validation: Option<&'a ModalityDataset>) -> Self {
        Experiment {
            cfg,
            learning,
            validation,
            runs: BTreeMap::new(),
        }
    }

    /// Trains every missing (data, variant, seed) combination, in parallel
    /// over at most `cfg.jobs` threads.
    fn ensure(&mut self, wanted: &[(TrainingData, Variant, u64)]) -> Result<()> {
        let mut todo: Vec<(TrainingData, Variant, u64)> = Vec::new();
        for (d, v, s) in wanted {
            let key = (d.key(), v.name(), *s);
            if !self.runs.contains_key(&key) && !todo.iter().any(|(d2, v2, s2)| (d2.key(), v2.name(), *s2) == key) {
                todo.push((d.clone(), *v, *s));
            }
        }
        if todo.is_empty() {
            return Ok(());
        }
        let (cfg, learning) = (self.cfg, self.learning);
        let work = |(d, v, s): &(TrainingData, Variant, u64)| -> Result<PipelineRun> {
            let data = corrupt_split(learning, d.corruption, &d.targets, *s, false)?;
            run_pipeline(cfg, *v, &data, *s)
        };
        let results: Vec<Result<PipelineRun>> = if cfg.jobs > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.jobs)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(|| todo.par_iter().map(work).collect())
        } else {
            todo.iter().map(work).collect()
        };
        for ((d, v, s), r) in todo.iter().zip(results) {
            self.runs.insert((d.key(), v.name(), *s), r?);
        }
        Ok(())
    }

    fn run(&self, d: &TrainingData, v: Variant, seed: u64) -> &PipelineRun {
        &self.runs[&(d.key(), v.name(), seed)]
    }

    /// A trained run, training it first if needed.
    pub fn clean_run(&mut self, variant: Variant, seed: u64) -> Result<&PipelineRun> {
        self.ensure(&[(TrainingData::clean(), variant, seed)])?;
        Ok(self.run(&TrainingData::clean(), variant, seed))
    }

    pub fn run_scenario(&mut self, scenario: &Scenario) -> Result<ExperimentReport> {
        let violations = scenario.violations();
        if !violations.is_empty() {
            return Err(Error::Config(format!("scenario {}: {}", scenario.name, violations.join("; "))));
        }
        let t_count = self.learning.modality_count();
        scenario.check_modalities(t_count)?;
        let corrupted = TrainingData {
            corruption: scenario.corruption,
            targets: scenario.targets.clone(),
        };
        let trained_on = match scenario.phase {
            Phase::Train => corrupted.clone(),
            Phase::Test => TrainingData::clean(),
        };
        let variants = self.cfg.variants.clone();
        let mut wanted = Vec::new();
        for &v in &variants {
            for &s in &scenario.seeds {
                wanted.push((TrainingData::clean(), v, s));
                wanted.push((trained_on.clone(), v, s));
            }
        }
        self.ensure(&wanted)?;

        let subsets: Vec<Vec<usize>> = if scenario.subset_sweep {
            modality_subsets(t_count)
        } else {
            vec![scenario.available.clone().unwrap_or_else(|| (0..t_count).collect())]
        };
        let all = join_modalities(&(0..t_count).collect::<Vec<_>>());
        let mut report = ExperimentReport::default();
        for &v in &variants {
            for &seed in &scenario.seeds {
                let clean = self.run(&TrainingData::clean(), v, seed);
                let run = self.run(&trained_on, v, seed);
                if let (Some(m), Some(c)) = (run.clustering.metrics, clean.clustering.metrics) {
                    report.rows.push(ExperimentRow {
                        scenario: scenario.name.clone(),
                        variant: v,
                        seed,
                        phase: "learning".into(),
                        modalities_available: all.clone(),
                        acc: m.acc,
                        ari: m.ari,
                        nmi: m.nmi,
                        acc_drop: c.acc - m.acc,
                    });
                }
                let Some(val) = self.validation.filter(|d| d.labels.is_some()) else {
                    continue;
                };
                let val_corrupted = corrupt_split(val, corrupted.corruption, &corrupted.targets, seed, true)?;
                for subset in &subsets {
                    let (_, m) = run.evaluate(&val_corrupted, subset)?;
                    let (_, c) = clean.evaluate(val, subset)?;
                    let (m, c) = (m.expect("labelled"), c.expect("labelled"));
                    report.rows.push(ExperimentRow {
                        scenario: scenario.name.clone(),
                        variant: v,
                        seed,
                        phase: "validation".into(),
                        modalities_available: join_modalities(subset),
                        acc: m.acc,
                        ari: m.ari,
                        nmi: m.nmi,
                        acc_drop: c.acc - m.acc,
                    });
                }
            }
        }
        Ok(report)
    }

    /// Clean versus train-time-corrupted clustering for every configured
    /// variant.
    pub fn resilience(&mut self, corruption: Corruption, targets: &[usize], seeds: &[u64]) -> Result<ResilienceReport> {
        let variants = self.cfg.variants.clone();
        if variants.len() < 2 {
            return Err(Error::Config("resilience comparison needs at least 2 variants".into()));
        }
        if seeds.len() < 3 {
            return Err(Error::Config("resilience comparison needs at least 3 seeds".into()));
        }
        if self.learning.labels.is_none() {
            return Err(Error::Config("resilience comparison needs a labelled dataset".into()));
        }
        let t_count = self.learning.modality_count();
        if let Some(t) = targets.iter().find(|&&t| t >= t_count) {
            return Err(Error::Config(format!("modality {t} out of range 0..{t_count}")));
        }
        let corrupted = TrainingData {
            corruption,
            targets: targets.to_vec(),
        };
        let mut wanted = Vec::new();
        for &v in &variants {
            for &s in seeds {
                wanted.push((TrainingData::clean(), v, s));
                wanted.push((corrupted.clone(), v, s));
            }
        }
        self.ensure(&wanted)?;
        let mut out = Vec::new();
        for &v in &variants {
            let mut clean_acc = Vec::new();
            let mut corrupted_acc = Vec::new();
            let mut sq = Vec::new();
            for &s in seeds {
                let c = self.run(&TrainingData::clean(), v, s);
                let k = self.run(&corrupted, v, s);
                clean_acc.push(c.clustering.metrics.expect("labelled").acc);
                corrupted_acc.push(k.clustering.metrics.expect("labelled").acc);
                sq.push(mean_square_perturbation(&c.clustering.affinity, &k.clustering.affinity)?);
            }
            let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
            let drops: Vec<f64> = clean_acc.iter().zip(&corrupted_acc).map(|(a, b)| a - b).collect();
            out.push(VariantResilience {
                variant: v,
                clean_acc: mean(&clean_acc),
                corrupted_acc: mean(&corrupted_acc),
                mean_drop: mean(&drops),
                drops,
                mean_sq_affinity_perturbation: mean(&sq),
            });
        }
        let find = |v: Variant| out.iter().find(|r| r.variant == v);
        let claim_applies = !targets.is_empty() && targets.len() < t_count;
        let (drop_ordering_holds, perturbation_ordering_holds, perturbation_ratio) =
            match (find(Variant::Drogsure), find(Variant::Dmsc)) {
                (Some(d), Some(s)) => (
                    Some(d.mean_drop <= s.mean_drop),
                    Some(d.mean_sq_affinity_perturbation < s.mean_sq_affinity_perturbation),
                    (d.mean_sq_affinity_perturbation > 0.0)
                        .then(|| s.mean_sq_affinity_perturbation / d.mean_sq_affinity_perturbation),
                ),
                _ => (None, None, None),
            };
        Ok(ResilienceReport {
            corruption,
            targets: targets.to_vec(),
            seeds: seeds.to_vec(),
            claim_applies,
            drop_ordering_holds,
            perturbation_ordering_holds,
            perturbation_ratio,
            variants: out,
        })
    }
}

/// Mean of the squared entrywise difference of two affinities, each first
/// scaled to a largest entry of 1.
pub fn mean_square_perturbation(a: &crate::numerics::DenseMatrix, b: &crate::numerics::DenseMatrix) -> Result<f64> {
    let d = normalize_max(b)? - normalize_max(a)?;
    Ok(d.norm_squared() / d.len() as f64)
}

/// Trains the configured variants on clean and corrupted data and reports
/// per-row metrics.
pub fn run_scenario(
    cfg: &RunConfig,
    learning: &ModalityDataset,
    validation: Option<&ModalityDataset>,
    scenario: &Scenario,
) -> Result<ExperimentReport> {
    Experiment::new(cfg, learning, validation).run_scenario(scenario)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantResilience {
    pub variant: Variant,
    pub clean_acc: f64,
    pub corrupted_acc: f64,
    /// Per seed, clean minus corrupted clustering accuracy.
    pub drops: Vec<f64>,
    pub mean_drop: f64,
    /// Mean over seeds of the mean squared clean-to-corrupted affinity change.
    pub mean_sq_affinity_perturbation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResilienceReport {
    pub corruption: Corruption,
    pub targets: Vec<usize>,
    pub seeds: Vec<u64>,
    /// False when no modality or every modality is corrupted; the orderings
    /// are then reported but not claimed.
    pub claim_applies: bool,
    /// `drogsure` mean drop ≤ `dmsc` mean drop.
    pub drop_ordering_holds: Option<bool>,
    /// `drogsure` mean-square affinity change < the `dmsc` one.
    pub perturbation_ordering_holds: Option<bool>,
    /// `dmsc` over `drogsure` mean-square affinity change.
    pub perturbation_ratio: Option<f64>,
    pub variants: Vec<VariantResilience>,
}

pub fn resilience_comparison(
    cfg: &RunConfig,
    learning: &ModalityDataset,
    corruption: Corruption,
    targets: &[usize],
    seeds: &[u64],
) -> Result<ResilienceReport> {
    Experiment::new(cfg, learning, None).resilience(corruption, targets, seeds)
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties; `None` when either
/// input is constant or the lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}
