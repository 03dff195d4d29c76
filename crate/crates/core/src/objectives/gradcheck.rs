use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{backprop, model_loss};
use crate::networks::{build_model, forward, LayerSpec, ModelConfig, MultiBranchAutoencoder, Variant};
use crate::numerics::{finite_diff_grad, DenseMatrix, FeatureMap};
use crate::{Error, Result};

/// Toy problem on which analytic gradients are compared with central
/// differences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub variants: Vec<Variant>,
    pub modalities: usize,
    pub samples: usize,
    pub side: usize,
    pub encoder_layers: Vec<LayerSpec>,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            variants: vec![Variant::Drogsure, Variant::Dmsc, Variant::Concat],
            modalities: 2,
            samples: 4,
            side: 6,
            encoder_layers: vec![LayerSpec::new(2, 3), LayerSpec::new(2, 1)],
            seed: 0,
            step: 1e-6,
            tolerance: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockCheck {
    pub variant: Variant,
    pub block: String,
    /// Coordinates compared; coefficient diagonals are excluded.
    pub coordinates: usize,
    pub relative_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub blocks: Vec<BlockCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.passed)
    }

    pub fn worst(&self) -> f64 {
        self.blocks.iter().fold(0.0, |m, b| m.max(b.relative_error))
    }
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Random toy model and data. Biases are positive so that few ReLUs sit at
/// their kink, and coefficients are dense so every loss term is active.
pub fn toy_problem(cfg: &GradcheckConfig, variant: Variant) -> Result<(MultiBranchAutoencoder, Vec<FeatureMap>)> {
    let mut mc = ModelConfig::new(variant, cfg.modalities, cfg.encoder_layers.clone(), cfg.side, cfg.side);
    mc.seed = cfg.seed;
    mc.hyper.gamma = 1.3;
    mc.hyper.mu = 0.7;
    mc.hyper.rho = 0.2;
    mc.hyper.lambda_group = 0.3;
    mc.hyper.lambda_comm = 0.5;
    mc.hyper.lambda_frob = 0.4;
    let n = cfg.samples;
    let mut model = build_model(&mc, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(100));
    for w in &mut model.coeffs {
        *w = DenseMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { rng.random_range(-0.5..0.5) });
    }
    for b in &mut model.branches {
        for l in b.encoder.iter_mut().chain(b.decoder.iter_mut()) {
            l.bias.iter_mut().for_each(|v| *v = rng.random_range(0.05..0.2));
        }
    }
    let pixels = cfg.side * cfg.side;
    let data = (0..cfg.modalities)
        .map(|_| {
            let d = (0..n * pixels).map(|_| rng.random_range(0.0..1.0)).collect();
            FeatureMap::from_vec(n, cfg.side, cfg.side, 1, d)
        })
        .collect::<Result<_>>()?;
    Ok((model, data))
}

/// Compares backpropagation with central differences for every parameter
/// block of every configured variant. `inject_bug` scales the first analytic
/// block by 1.01, which the check must catch.
pub fn gradcheck_suite(cfg: &GradcheckConfig, inject_bug: bool) -> Result<GradcheckReport> {
    if cfg.variants.is_empty() {
        return Err(Error::Config("gradcheck needs at least one variant".into()));
    }
    if cfg.samples < 2 || cfg.side == 0 || cfg.modalities == 0 {
        return Err(Error::Config("gradcheck needs at least 2 samples, 1 modality and a positive side".into()));
    }
    let mut blocks = Vec::new();
    for &variant in &cfg.variants {
        let (model, data) = toy_problem(cfg, variant)?;
        let (_, grads) = backprop(&model, &data)?;
        let mut analytic = grads.blocks();
        if inject_bug {
            analytic[0].iter_mut().for_each(|g| *g *= 1.01);
        }
        let base = model.param_values();
        let n = model.samples;
        for (bi, block) in model.param_blocks().iter().enumerate() {
            // The self-expression rejects nonzero diagonals, so coefficient
            // blocks are checked off the diagonal only.
            let is_coeff = block.name.starts_with("coeff");
            let coords: Vec<usize> = (0..block.len).filter(|&k| !is_coeff || k / n != k % n).collect();
            let mut sub: Vec<f64> = coords.iter().map(|&k| base[bi][k]).collect();
            let fd = finite_diff_grad(
                |p| {
                    let mut values = base.clone();
                    for (c, v) in coords.iter().zip(p) {
                        values[bi][*c] = *v;
                    }
                    let mut m = model.clone();
                    m.set_param_values(&values)?;
                    let cache = forward(&m, &data)?;
                    Ok(model_loss(&m, &cache, &data)?.total)
                },
                &mut sub,
                cfg.step,
            )?;
            let an: Vec<f64> = coords.iter().map(|&k| analytic[bi][k]).collect();
            let e = relative_error(&an, &fd);
            blocks.push(BlockCheck {
                variant,
                block: block.name.clone(),
                coordinates: coords.len(),
                relative_error: e,
                passed: e <= cfg.tolerance,
            });
        }
    }
    Ok(GradcheckReport {
        tolerance: cfg.tolerance,
        blocks,
    })
}
