use super::model::{build_model, forward_impl, MultiBranchAutoencoder};
use super::{ModelConfig, Variant};
use crate::numerics::{adam_step, DenseMatrix, FeatureMap, OptimizerState};
use crate::objectives::{backprop_target, model_loss, pretrain_loss, GradTarget, LayerGrads, LossBreakdown};
use crate::{Error, Result};

/// Length of the trailing window used to flag a stalled loss.
pub const STALL_WINDOW: usize = 20;

/// Parameters, optimizer moments and the per-epoch loss history.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: MultiBranchAutoencoder,
    /// One optimizer per parameter block, aligned with `model.param_blocks()`.
    pub optimizers: Vec<OptimizerState>,
    pub loss_trace: Vec<f64>,
}

impl TrainState {
    pub fn new(model: MultiBranchAutoencoder) -> Self {
        let cfg = model.config.optimizer;
        let coeff_cfg = cfg.for_coefficients();
        let first_coeff = model.param_blocks().len() - model.coeffs.len();
        let optimizers = model
            .param_blocks()
            .iter()
            .enumerate()
            .map(|(i, b)| OptimizerState::new(b.len, if i >= first_coeff { coeff_cfg } else { cfg }))
            .collect();
        TrainState {
            model,
            optimizers,
            loss_trace: Vec::new(),
        }
    }

    pub fn epochs_done(&self) -> usize {
        self.loss_trace.len()
    }

    /// Total epochs the configuration asks for.
    pub fn epochs_planned(&self) -> usize {
        self.model.config.pretrain_epochs + self.model.config.finetune_epochs
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub state: TrainState,
    pub final_loss: LossBreakdown,
    /// Non-fatal observations, e.g. a loss that stopped decreasing.
    pub warnings: Vec<String>,
}

/// Builds a model sized for `data` and trains it from scratch.
pub fn train(config: &ModelConfig, data: &[FeatureMap]) -> Result<TrainReport> {
    let samples = data
        .first()
        .map(|x| x.batch)
        .ok_or_else(|| Error::Config("dataset has no modalities".into()))?;
    let model = build_model(config, samples)?;
    train_from(TrainState::new(model), data)
}

/// Runs the remaining epochs of `state` (pretraining first, then fine-tuning).
/// Each epoch visits the blocks one at a time with a fresh gradient per step:
/// encoder, self-expressive matrix, decoder for every modality in turn. A
/// shared matrix is stepped once after all modalities.
pub fn train_from(mut state: TrainState, data: &[FeatureMap]) -> Result<TrainReport> {
    let planned = state.epochs_planned();
    let pretrain_epochs = state.model.config.pretrain_epochs;
    let mut warnings = Vec::new();
    for epoch in state.epochs_done()..planned {
        let pretrain = epoch < pretrain_epochs;
        let abort = |e: Error| Error::Training {
            epoch,
            reason: e.to_string(),
        };
        for target in schedule(&state.model.config, pretrain) {
            step(&mut state, data, target, pretrain).map_err(abort)?;
        }
        let loss = epoch_loss(&state.model, data, pretrain).map_err(abort)?;
        state.loss_trace.push(loss.total);
        let phase_start = if pretrain { 0 } else { pretrain_epochs };
        if let Some(w) = stall_warning(&state.loss_trace[phase_start..], phase_start) {
            warnings.push(w);
        }
    }
    let pretrain = state.model.config.finetune_epochs == 0;
    let final_loss = epoch_loss(&state.model, data, pretrain)?;
    Ok(TrainReport {
        state,
        final_loss,
        warnings,
    })
}

fn schedule(cfg: &ModelConfig, pretrain: bool) -> Vec<GradTarget> {
    let mut out = Vec::new();
    for t in 0..cfg.modalities {
        out.push(GradTarget::Encoder(t));
        if !pretrain && cfg.variant == Variant::Drogsure {
            out.push(GradTarget::Coeff(t));
        }
        out.push(GradTarget::Decoder(t));
    }
    if !pretrain && cfg.variant != Variant::Drogsure {
        out.push(GradTarget::Coeff(0));
    }
    out
}

fn epoch_loss(model: &MultiBranchAutoencoder, data: &[FeatureMap], pretrain: bool) -> Result<LossBreakdown> {
    let cache = forward_impl(model, data, pretrain)?;
    if pretrain {
        pretrain_loss(&cache, data, &model.config.hyper)
    } else {
        model_loss(model, &cache, data)
    }
}

/// Warns at each full window boundary where the window mean did not improve on
/// the previous window.
fn stall_warning(trace: &[f64], offset: usize) -> Option<String> {
    let len = trace.len();
    if len < 2 * STALL_WINDOW || !len.is_multiple_of(STALL_WINDOW) {
        return None;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let recent = mean(&trace[len - STALL_WINDOW..]);
    let before = mean(&trace[len - 2 * STALL_WINDOW..len - STALL_WINDOW]);
    (recent >= before).then(|| {
        format!(
            "loss did not decrease over epochs {}..{} (window mean {recent:.6e} vs {before:.6e})",
            offset + len - STALL_WINDOW,
            offset + len
        )
    })
}

fn step(state: &mut TrainState, data: &[FeatureMap], target: GradTarget, pretrain: bool) -> Result<()> {
    let grads = backprop_target(&state.model, data, target, pretrain)?;
    let layers = state.model.config.encoder_layers.len();
    let per_branch = 4 * layers;
    let model = &mut state.model;
    let opts = &mut state.optimizers;
    match target {
        GradTarget::Encoder(t) => {
            let base = t * per_branch;
            for (l, (layer, g)) in model.branches[t].encoder.iter_mut().zip(&grads.branches[t].encoder).enumerate() {
                apply_layer(&mut layer.kernel.weights, &mut layer.bias, g, opts, base + 2 * l, &format!("enc{t}.{l}"))?;
            }
        }
        GradTarget::Decoder(t) => {
            let base = t * per_branch + 2 * layers;
            for (l, (layer, g)) in model.branches[t].decoder.iter_mut().zip(&grads.branches[t].decoder).enumerate() {
                apply_layer(&mut layer.kernel.weights, &mut layer.bias, g, opts, base + 2 * l, &format!("dec{t}.{l}"))?;
            }
        }
        GradTarget::Coeff(t) => {
            let idx = if model.config.variant == Variant::Drogsure { t } else { 0 };
            let slot = model.modalities() * per_branch + idx;
            let w = &mut model.coeffs[idx];
            let n = w.nrows();
            let mut values = w.transpose().as_slice().to_vec();
            let g = grads.coeffs[idx].transpose();
            adam_step(&mut values, g.as_slice(), &mut opts[slot], &format!("coeff{idx}"))?;
            *w = DenseMatrix::from_row_slice(n, n, &values);
            w.fill_diagonal(0.0);
        }
        GradTarget::All => unreachable!("the schedule steps one block at a time"),
    }
    Ok(())
}

fn apply_layer(
    kernel: &mut [f64],
    bias: &mut [f64],
    g: &LayerGrads,
    opts: &mut [OptimizerState],
    slot: usize,
    name: &str,
) -> Result<()> {
    adam_step(kernel, &g.kernel, &mut opts[slot], &format!("{name}.kernel"))?;
    adam_step(bias, &g.bias, &mut opts[slot + 1], &format!("{name}.bias"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::LayerSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(variant: Variant, pre: usize, fine: usize) -> (ModelConfig, Vec<FeatureMap>) {
        let mut cfg = ModelConfig::new(variant, 2, vec![LayerSpec::new(2, 3), LayerSpec::new(2, 1)], 4, 4);
        cfg.pretrain_epochs = pre;
        cfg.finetune_epochs = fine;
        cfg.optimizer.learning_rate = 1e-2;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = (0..2)
            .map(|_| {
                let d = (0..6 * 16).map(|_| rng.random_range(0.0..1.0)).collect();
                FeatureMap::from_vec(6, 4, 4, 1, d).unwrap()
            })
            .collect();
        (cfg, data)
    }

    #[test]
    fn trace_length_and_diagonals() {
        for variant in [Variant::Drogsure, Variant::Dmsc, Variant::Concat] {
            let (cfg, data) = toy(variant, 3, 4);
            let report = train(&cfg, &data).unwrap();
            assert_eq!(report.state.loss_trace.len(), 7);
            for w in &report.state.model.coeffs {
                assert!((0..6).all(|i| w[(i, i)] == 0.0));
            }
        }
    }

    #[test]
    fn pretraining_reduces_reconstruction() {
        let (cfg, data) = toy(Variant::Drogsure, 60, 0);
        let report = train(&cfg, &data).unwrap();
        let trace = &report.state.loss_trace;
        assert!(trace.last().unwrap() < &trace[0]);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (cfg, data) = toy(Variant::Drogsure, 2, 6);
        let full = train(&cfg, &data).unwrap();
        let mut short = cfg.clone();
        short.finetune_epochs = 3;
        let mut partial = train(&short, &data).unwrap().state;
        partial.model.config.finetune_epochs = 6;
        let resumed = train_from(partial, &data).unwrap();
        assert_eq!(resumed.state.loss_trace, full.state.loss_trace);
        assert_eq!(resumed.state.model, full.state.model);
    }

    #[test]
    fn same_seed_same_result() {
        let (cfg, data) = toy(Variant::Dmsc, 2, 2);
        let a = train(&cfg, &data).unwrap();
        let b = train(&cfg, &data).unwrap();
        assert_eq!(a.state, b.state);
    }

    #[test]
    fn non_finite_input_aborts_with_epoch() {
        let (cfg, mut data) = toy(Variant::Drogsure, 1, 1);
        data[1].data[5] = f64::NAN;
        match train(&cfg, &data) {
            Err(Error::Training { epoch, .. }) => assert_eq!(epoch, 0),
            other => panic!("expected a training error, got {other:?}"),
        }
    }

    #[test]
    fn stall_detection() {
        let flat = vec![1.0; 2 * STALL_WINDOW];
        assert!(stall_warning(&flat, 0).is_some());
        let falling: Vec<f64> = (0..2 * STALL_WINDOW).map(|i| 1.0 / (i + 1) as f64).collect();
        assert!(stall_warning(&falling, 0).is_none());
        assert!(stall_warning(&flat[..2 * STALL_WINDOW - 1], 0).is_none());
    }

    #[test]
    fn schedule_visits_each_block() {
        let cfg = ModelConfig::new(Variant::Drogsure, 2, vec![LayerSpec::new(2, 3); 2], 4, 4);
        assert_eq!(
            schedule(&cfg, false),
            vec![
                GradTarget::Encoder(0),
                GradTarget::Coeff(0),
                GradTarget::Decoder(0),
                GradTarget::Encoder(1),
                GradTarget::Coeff(1),
                GradTarget::Decoder(1)
            ]
        );
        let mut shared = cfg.clone();
        shared.variant = Variant::Dmsc;
        assert_eq!(schedule(&shared, false).last(), Some(&GradTarget::Coeff(0)));
        assert!(!schedule(&shared, true).contains(&GradTarget::Coeff(0)));
    }
}
