use super::{model_loss, LossBreakdown};
use crate::networks::{
    branch_forward, concat_codes, decode_map, decode_map_adjoint, forward, rows_to_map,
    run_decoder, self_express, split_codes, ConvLayer, MultiBranchAutoencoder, Variant,
};
use crate::numerics::{
    conv2d_backward, conv2d_transpose_backward, relu_backward, Activation, DenseMatrix, FeatureMap,
    Padding,
};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchGrads {
    pub encoder: Vec<LayerGrads>,
    pub decoder: Vec<LayerGrads>,
}

/// Gradients laid out like the model. Blocks that were not requested are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub branches: Vec<BranchGrads>,
    pub coeffs: Vec<DenseMatrix>,
}

impl ModelGrads {
    fn zeros_like(model: &MultiBranchAutoencoder) -> Self {
        let zeros = |layers: &[ConvLayer]| {
            layers
                .iter()
                .map(|l| LayerGrads {
                    kernel: vec![0.0; l.kernel.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect()
        };
        ModelGrads {
            branches: model
                .branches
                .iter()
                .map(|b| BranchGrads {
                    encoder: zeros(&b.encoder),
                    decoder: zeros(&b.decoder),
                })
                .collect(),
            coeffs: model.coeffs.iter().map(|w| DenseMatrix::zeros(w.nrows(), w.ncols())).collect(),
        }
    }

    /// Flattened gradient blocks in the order of `MultiBranchAutoencoder::param_blocks`.
    pub fn blocks(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for b in &self.branches {
            for l in b.encoder.iter().chain(&b.decoder) {
                out.push(l.kernel.clone());
                out.push(l.bias.clone());
            }
        }
        for w in &self.coeffs {
            out.push(w.transpose().as_slice().to_vec());
        }
        out
    }
}

/// Which parameters a gradient evaluation must produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradTarget {
    All,
    Encoder(usize),
    Decoder(usize),
    /// The coefficient block used by modality `t` (the shared matrix for
    /// single-matrix variants).
    Coeff(usize),
}

impl GradTarget {
    fn encoder(self, t: usize) -> bool {
        matches!(self, GradTarget::All) || self == GradTarget::Encoder(t)
    }

    fn decoder(self, t: usize) -> bool {
        matches!(self, GradTarget::All) || self == GradTarget::Decoder(t)
    }

    fn coeff(self) -> bool {
        matches!(self, GradTarget::All | GradTarget::Coeff(_))
    }
}

/// Analytic gradients of the variant's total loss with respect to every
/// parameter block, together with the loss at the current parameters.
///
/// The diagonal entries of the coefficient gradients are reported as computed;
/// the trainer projects them away after each step.
pub fn backprop(model: &MultiBranchAutoencoder, data: &[FeatureMap]) -> Result<(LossBreakdown, ModelGrads)> {
    let cache = forward(model, data)?;
    let loss = model_loss(model, &cache, data)?;
    let grads = backprop_target(model, data, GradTarget::All, false)?;
    Ok((loss, grads))
}

fn encoder_backward(
    layers: &[ConvLayer],
    input: &FeatureMap,
    outs: &[FeatureMap],
    grad_latent: FeatureMap,
) -> Result<Vec<LayerGrads>> {
    let mut grads = Vec::with_capacity(layers.len());
    let mut g = grad_latent;
    for i in (0..layers.len()).rev() {
        if layers[i].activation == Activation::Relu {
            relu_backward(&outs[i], &mut g);
        }
        let layer_in = if i == 0 { input } else { &outs[i - 1] };
        let cg = conv2d_backward(layer_in, &layers[i].kernel, 1, Padding::Same, &g, i > 0)?;
        grads.push(LayerGrads {
            kernel: cg.kernel,
            bias: cg.bias,
        });
        if let Some(next) = cg.input {
            g = next;
        }
    }
    grads.reverse();
    Ok(grads)
}

/// Returns parameter gradients (when `want_params`) and the gradient with
/// respect to the decoder input (when `want_input`).
fn decoder_backward(
    layers: &[ConvLayer],
    input: &FeatureMap,
    outs: &[FeatureMap],
    grad_out: FeatureMap,
    want_params: bool,
    want_input: bool,
) -> Result<(Option<Vec<LayerGrads>>, Option<FeatureMap>)> {
    let mut grads = Vec::with_capacity(layers.len());
    let mut g = grad_out;
    for i in (0..layers.len()).rev() {
        if layers[i].activation == Activation::Relu {
            relu_backward(&outs[i], &mut g);
        }
        let layer_in = if i == 0 { input } else { &outs[i - 1] };
        let need_input = i > 0 || want_input;
        let cg = conv2d_transpose_backward(layer_in, &layers[i].kernel, 1, Padding::Same, &g, need_input)?;
        grads.push(LayerGrads {
            kernel: cg.kernel,
            bias: cg.bias,
        });
        match cg.input {
            Some(next) => g = next,
            None => {
                grads.reverse();
                return Ok((want_params.then_some(grads), None));
            }
        }
    }
    grads.reverse();
    Ok((want_params.then_some(grads), Some(g)))
}

fn recon_grad(recon: &FeatureMap, x: &FeatureMap, gamma: f64) -> FeatureMap {
    let mut g = recon.clone();
    for (v, xv) in g.data.iter_mut().zip(&x.data) {
        *v = gamma * (*v - xv);
    }
    g
}

/// Gradient of the ordered-pair commutator penalty with respect to `W(t)`.
pub(crate) fn commutator_grad(ws: &[DenseMatrix], t: usize) -> DenseMatrix {
    let wt = &ws[t];
    let mut g = DenseMatrix::zeros(wt.nrows(), wt.ncols());
    for (m, wm) in ws.iter().enumerate() {
        if m == t {
            continue;
        }
        let c = wt * wm - wm * wt;
        g += (&c * wm.transpose() - wm.tr_mul(&c)) * 4.0;
    }
    g
}

/// Gradient of the group norm with respect to `W(t)`; zero where the whole
/// cross-modality group is zero.
pub(crate) fn group_grad(ws: &[DenseMatrix], t: usize) -> DenseMatrix {
    let wt = &ws[t];
    DenseMatrix::from_fn(wt.nrows(), wt.ncols(), |i, j| {
        let g: f64 = ws.iter().map(|w| w[(i, j)] * w[(i, j)]).sum::<f64>().sqrt();
        if g > 0.0 {
            wt[(i, j)] / g
        } else {
            0.0
        }
    })
}

fn sign(w: &DenseMatrix) -> DenseMatrix {
    w.map(|v| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    })
}

/// Gradients for the requested blocks only, skipping work that cannot reach
/// them. With `pretrain` the self-expressive layers are bypassed and the loss
/// is reconstruction only.
pub fn backprop_target(
    model: &MultiBranchAutoencoder,
    data: &[FeatureMap],
    target: GradTarget,
    pretrain: bool,
) -> Result<ModelGrads> {
    let t_count = model.modalities();
    if data.len() != t_count {
        return Err(Error::Dimension(format!(
            "model has {t_count} modalities, dataset has {}",
            data.len()
        )));
    }
    let mut grads = ModelGrads::zeros_like(model);
    match model.config.variant {
        Variant::Concat => concat_backward(model, data, target, pretrain, &mut grads)?,
        Variant::Drogsure | Variant::Dmsc => per_branch_backward(model, data, target, pretrain, &mut grads)?,
    }
    if target.coeff() && !pretrain {
        add_coefficient_terms(model, target, &mut grads);
    }
    for b in &grads.branches {
        for l in b.encoder.iter().chain(&b.decoder) {
            if !l.kernel.iter().chain(&l.bias).all(|v| v.is_finite()) {
                return Err(Error::NonFinite("network gradient".into()));
            }
        }
    }
    if grads.coeffs.iter().any(|w| !w.iter().all(|v| v.is_finite())) {
        return Err(Error::NonFinite("coefficient gradient".into()));
    }
    Ok(grads)
}

fn per_branch_backward(
    model: &MultiBranchAutoencoder,
    data: &[FeatureMap],
    target: GradTarget,
    pretrain: bool,
    grads: &mut ModelGrads,
) -> Result<()> {
    let cfg = &model.config;
    let hyper = &cfg.hyper;
    let shared = cfg.variant == Variant::Dmsc;
    let branches: Vec<usize> = match target {
        GradTarget::All => (0..data.len()).collect(),
        GradTarget::Coeff(_) if shared => (0..data.len()).collect(),
        GradTarget::Encoder(t) | GradTarget::Decoder(t) | GradTarget::Coeff(t) => vec![t],
    };
    for t in branches {
        if t >= data.len() {
            return Err(Error::Dimension(format!("modality {t} out of range")));
        }
        let branch = &model.branches[t];
        let (enc_out, latent) = branch_forward(model, t, &data[t])?;
        let coeff = model.coeff_for(t);
        let z = if pretrain {
            latent.clone()
        } else {
            self_express(&latent, coeff)?
        };
        let dec_input = rows_to_map(&z, cfg.height, cfg.width);
        let dec_out = run_decoder(branch, &dec_input)?;
        let recon = dec_out.last().expect("decoder has layers");
        let want_enc = target.encoder(t);
        let want_coeff = target.coeff() && !pretrain;
        let (dec_grads, d_input) = decoder_backward(
            &branch.decoder,
            &dec_input,
            &dec_out,
            recon_grad(recon, &data[t], hyper.gamma),
            target.decoder(t),
            want_enc || want_coeff,
        )?;
        if let Some(g) = dec_grads {
            grads.branches[t].decoder = g;
        }
        let Some(d_input) = d_input else { continue };
        let dz = DenseMatrix::from_row_slice(z.nrows(), z.ncols(), &d_input.data);
        let d_latent = if pretrain {
            dz
        } else {
            let dr = (&latent - &z) * hyper.mu;
            let diff = &dz - &dr;
            if want_coeff {
                let idx = if shared { 0 } else { t };
                grads.coeffs[idx] += &latent * diff.transpose();
            }
            coeff * &diff + dr
        };
        if want_enc {
            let gmap = rows_to_map(&d_latent, cfg.height, cfg.width);
            grads.branches[t].encoder = encoder_backward(&branch.encoder, &data[t], &enc_out, gmap)?;
        }
    }
    Ok(())
}

fn concat_backward(
    model: &MultiBranchAutoencoder,
    data: &[FeatureMap],
    target: GradTarget,
    pretrain: bool,
    grads: &mut ModelGrads,
) -> Result<()> {
    let cfg = &model.config;
    let hyper = &cfg.hyper;
    let t_count = data.len();
    let encoded: Vec<(Vec<FeatureMap>, DenseMatrix)> = (0..t_count)
        .map(|t| branch_forward(model, t, &data[t]))
        .collect::<Result<_>>()?;
    let latents: Vec<DenseMatrix> = encoded.iter().map(|(_, l)| l.clone()).collect();
    let stacked = concat_codes(&latents);
    let coeff = &model.coeffs[0];
    let z = if pretrain {
        stacked.clone()
    } else {
        self_express(&stacked, coeff)?
    };
    let channels = vec![cfg.latent_channels(); t_count];
    let dec_input = decode_map(&z, cfg.height, cfg.width, &channels);
    let want_any_enc = (0..t_count).any(|t| target.encoder(t));
    let want_coeff = target.coeff() && !pretrain;
    let mut dz = DenseMatrix::zeros(z.nrows(), z.ncols());
    for t in 0..t_count {
        let branch = &model.branches[t];
        let dec_out = run_decoder(branch, &dec_input)?;
        let recon = dec_out.last().expect("decoder has layers");
        let (dec_grads, d_input) = decoder_backward(
            &branch.decoder,
            &dec_input,
            &dec_out,
            recon_grad(recon, &data[t], hyper.gamma),
            target.decoder(t),
            want_any_enc || want_coeff,
        )?;
        if let Some(g) = dec_grads {
            grads.branches[t].decoder = g;
        }
        if let Some(d) = d_input {
            dz += decode_map_adjoint(&d, &channels);
        }
    }
    if !(want_any_enc || want_coeff) {
        return Ok(());
    }
    let d_stacked = if pretrain {
        dz
    } else {
        let dr = (&stacked - &z) * hyper.mu;
        let diff = &dz - &dr;
        if want_coeff {
            grads.coeffs[0] += &stacked * diff.transpose();
        }
        coeff * &diff + dr
    };
    if want_any_enc {
        let widths: Vec<usize> = latents.iter().map(|l| l.ncols()).collect();
        for (t, dl) in split_codes(&d_stacked, &widths).into_iter().enumerate() {
            if !target.encoder(t) {
                continue;
            }
            let gmap = rows_to_map(&dl, cfg.height, cfg.width);
            let (enc_out, _) = &encoded[t];
            grads.branches[t].encoder = encoder_backward(&model.branches[t].encoder, &data[t], enc_out, gmap)?;
        }
    }
    Ok(())
}

/// Terms of the loss that depend on the coefficient matrices alone.
fn add_coefficient_terms(model: &MultiBranchAutoencoder, target: GradTarget, grads: &mut ModelGrads) {
    let h = &model.config.hyper;
    let ws = &model.coeffs;
    match model.config.variant {
        Variant::Drogsure => {
            let wanted: Vec<usize> = match target {
                GradTarget::Coeff(t) => vec![t],
                _ => (0..ws.len()).collect(),
            };
            for t in wanted {
                let mut g = sign(&ws[t]) * h.rho;
                if h.lambda_group != 0.0 {
                    g += group_grad(ws, t) * h.lambda_group;
                }
                if h.lambda_comm != 0.0 && ws.len() > 1 {
                    g += commutator_grad(ws, t) * h.lambda_comm;
                }
                grads.coeffs[t] += g;
            }
        }
        Variant::Dmsc => {
            let norm = ws[0].norm();
            if norm > 0.0 {
                grads.coeffs[0] += &ws[0] * (h.lambda_frob / norm);
            }
        }
        Variant::Concat => {
            grads.coeffs[0] += sign(&ws[0]) * h.rho;
        }
    }
}
