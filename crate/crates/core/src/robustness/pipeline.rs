use crate::clustering::{
    build_affinity, classify, fit_cluster_subspaces, fuse_coefficients, keep_top_q, spectral_cluster, ClusterSubspaces,
    MetricSet, SubspaceDim,
};
use crate::dataio::{ClusterOptions, ModalityDataset, RunConfig};
use crate::networks::{encode, train, MultiBranchAutoencoder, Variant};
use crate::numerics::DenseMatrix;
use crate::{Error, Result};

/// Spectral clustering of the learning split from a trained model.
#[derive(Clone, Debug)]
pub struct ClusterOutcome {
    pub labels: Vec<usize>,
    pub affinity: DenseMatrix,
    /// Present when the dataset is labelled.
    pub metrics: Option<MetricSet>,
}

/// One trained model with its clustering and the classifier fitted on it.
#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub variant: Variant,
    pub seed: u64,
    pub model: MultiBranchAutoencoder,
    pub loss_trace: Vec<f64>,
    pub warnings: Vec<String>,
    pub clustering: ClusterOutcome,
    pub subspaces: ClusterSubspaces,
    pub use_latent: bool,
}

impl PipelineRun {
    /// Classifies `ds` with only the `available` modalities and scores it
    /// against the dataset labels, if any.
    pub fn evaluate(&self, ds: &ModalityDataset, available: &[usize]) -> Result<(Vec<usize>, Option<MetricSet>)> {
        let pred = classify_dataset(&self.model, &self.subspaces, ds, available, self.use_latent)?;
        let metrics = ds.labels.as_ref().map(|l| MetricSet::score(&pred, l)).transpose()?;
        Ok((pred, metrics))
    }
}

/// Per-modality feature matrices with one sample per row: raw pixels, or the
/// latent codes of `model` when `use_latent` is set.
pub fn features_for(model: &MultiBranchAutoencoder, ds: &ModalityDataset, use_latent: bool) -> Result<Vec<DenseMatrix>> {
    ds.modalities
        .iter()
        .enumerate()
        .map(|(t, m)| {
            if use_latent {
                encode(model, t, m)
            } else {
                Ok(DenseMatrix::from_row_slice(m.batch, m.sample_len(), &m.data))
            }
        })
        .collect()
}

/// The configured cluster count, else the number of distinct labels.
pub fn cluster_count(cfg: &RunConfig, ds: &ModalityDataset) -> Result<usize> {
    cfg.clusters
        .or_else(|| ds.cluster_count())
        .ok_or_else(|| Error::Config("unlabelled dataset: set `clusters` in the config".into()))
}

/// Fuses the model's coefficient matrices, builds the affinity and runs
/// spectral clustering into `p` groups.
pub fn cluster_trained(
    model: &MultiBranchAutoencoder,
    ds: &ModalityDataset,
    p: usize,
    options: &ClusterOptions,
    seed: u64,
) -> Result<ClusterOutcome> {
    if model.samples != ds.samples() {
        return Err(Error::Dimension(format!(
            "model was trained on {} samples, dataset has {}",
            model.samples,
            ds.samples()
        )));
    }
    let mut fused = fuse_coefficients(&model.coeffs)?;
    if let Some(q) = options.top_q {
        fused = keep_top_q(&fused, q);
    }
    let affinity = build_affinity(&fused)?;
    let labels = spectral_cluster(&affinity, p, seed)?;
    let metrics = ds.labels.as_ref().map(|l| MetricSet::score(&labels, l)).transpose()?;
    Ok(ClusterOutcome {
        labels,
        affinity,
        metrics,
    })
}

/// Predicted cluster of every sample of `ds` using the `available` modalities.
pub fn classify_dataset(
    model: &MultiBranchAutoencoder,
    subspaces: &ClusterSubspaces,
    ds: &ModalityDataset,
    available: &[usize],
    use_latent: bool,
) -> Result<Vec<usize>> {
    let feats = features_for(model, ds, use_latent)?;
    let rows: Vec<Vec<Vec<f64>>> = feats
        .iter()
        .map(|f| (0..f.nrows()).map(|i| f.row(i).iter().copied().collect()).collect())
        .collect();
    (0..ds.samples())
        .map(|i| {
            let sample: Vec<&[f64]> = rows.iter().map(|r| r[i].as_slice()).collect();
            classify(&sample, subspaces, available)
        })
        .collect()
}

fn subspace_dim(options: &ClusterOptions) -> SubspaceDim {
    match options.subspace_dim {
        Some(d) => SubspaceDim::Fixed(d),
        None => SubspaceDim::Variance(options.variance),
    }
}

/// Fits the per-cluster principal subspaces of the classifier on `ds` grouped
/// by `labels`.
pub fn fit_classifier(
    model: &MultiBranchAutoencoder,
    ds: &ModalityDataset,
    labels: &[usize],
    options: &ClusterOptions,
) -> Result<ClusterSubspaces> {
    let feats = features_for(model, ds, options.use_latent)?;
    fit_cluster_subspaces(&feats, labels, subspace_dim(options))
}

/// Trains `variant` on `learning`, clusters it and fits the classifier on the
/// predicted clusters. `seed` replaces the configuration seed.
pub fn run_pipeline(cfg: &RunConfig, variant: Variant, learning: &ModalityDataset, seed: u64) -> Result<PipelineRun> {
    learning.validate()?;
    let p = cluster_count(cfg, learning)?;
    let mut model_cfg = cfg.model_config(variant, learning.modality_count(), learning.height(), learning.width());
    model_cfg.seed = seed;
    let report = train(&model_cfg, &learning.modalities)?;
    let model = report.state.model;
    let clustering = cluster_trained(&model, learning, p, &cfg.clustering, seed)?;
    let subspaces = fit_classifier(&model, learning, &clustering.labels, &cfg.clustering)?;
    Ok(PipelineRun {
        variant,
        seed,
        model,
        loss_trace: report.state.loss_trace,
        warnings: report.warnings,
        clustering,
        subspaces,
        use_latent: cfg.clustering.use_latent,
    })
}
