//! Loss terms for the three network variants and their gradients.
//!
//! Conventions: latent codes are stored one sample per row, so the
//! self-expression residual of modality `t` is `L(t) - W(t)ᵀ L(t)`.

mod backprop;
mod gradcheck;

pub use backprop::{backprop, backprop_target, BranchGrads, GradTarget, LayerGrads, ModelGrads};
pub use gradcheck::{gradcheck_suite, relative_error, toy_problem, BlockCheck, GradcheckConfig, GradcheckReport};
pub(crate) use backprop::commutator_grad;

use serde::{Deserialize, Serialize};

use crate::networks::{ForwardCache, Hyper, MultiBranchAutoencoder, Variant};
use crate::numerics::{DenseMatrix, FeatureMap};
use crate::{Error, Result};

/// The per-modality self-expressive matrices `{W(t)}`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoeffGroup(Vec<DenseMatrix>);

impl CoeffGroup {
    /// Checks that all matrices are square, share one side and have an
    /// exactly zero diagonal.
    pub fn new(matrices: Vec<DenseMatrix>) -> Result<Self> {
        check_group(&matrices)?;
        Ok(CoeffGroup(matrices))
    }

    pub fn matrices(&self) -> &[DenseMatrix] {
        &self.0
    }

    pub fn into_matrices(self) -> Vec<DenseMatrix> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn side(&self) -> usize {
        self.0.first().map_or(0, |w| w.nrows())
    }
}

pub(crate) fn check_group(matrices: &[DenseMatrix]) -> Result<()> {
    let Some(first) = matrices.first() else {
        return Err(Error::Dimension("coefficient group is empty".into()));
    };
    let n = first.nrows();
    for (t, w) in matrices.iter().enumerate() {
        if w.nrows() != n || w.ncols() != n {
            return Err(Error::Dimension(format!(
                "W({t}) is {}x{}, expected {n}x{n}",
                w.nrows(),
                w.ncols()
            )));
        }
        if let Some(i) = (0..n).find(|&i| w[(i, i)] != 0.0) {
            return Err(Error::Invariant(format!("W({t}) has nonzero diagonal at {i}")));
        }
    }
    Ok(())
}

/// Individual loss terms (unweighted) and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub commutator_term: f64,
    pub group_term: f64,
    pub recon_term: f64,
    pub l1_term: f64,
    pub selfexpr_term: f64,
    /// `||W||_F`, used only by the shared-matrix baseline.
    pub frobenius_term: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn weighted_total(&self, h: &Hyper) -> f64 {
        h.lambda_comm * self.commutator_term
            + h.lambda_group * self.group_term
            + 0.5 * h.gamma * self.recon_term
            + h.rho * self.l1_term
            + 0.5 * h.mu * self.selfexpr_term
            + h.lambda_frob * self.frobenius_term
    }

    fn finish(mut self, h: &Hyper) -> Result<Self> {
        let terms = [
            ("commutator", self.commutator_term),
            ("group", self.group_term),
            ("reconstruction", self.recon_term),
            ("l1", self.l1_term),
            ("self-expression", self.selfexpr_term),
            ("frobenius", self.frobenius_term),
        ];
        for (name, v) in terms {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("{name} loss term")));
            }
        }
        self.total = self.weighted_total(h);
        Ok(self)
    }
}

pub(crate) fn group_norm_of(ws: &[DenseMatrix]) -> f64 {
    let n = ws[0].nrows();
    let mut acc = 0.0;
    for j in 0..n {
        for k in 0..n {
            let sq: f64 = ws.iter().map(|w| w[(k, j)] * w[(k, j)]).sum();
            acc += sq.sqrt();
        }
    }
    acc
}

/// `Σ_{k,j} sqrt(Σ_t w_kj(t)²)`.
pub fn group_l12_norm(omega: &CoeffGroup) -> f64 {
    group_norm_of(omega.matrices())
}

/// `W1·W2 − W2·W1`.
pub fn commutator(w1: &DenseMatrix, w2: &DenseMatrix) -> Result<DenseMatrix> {
    if !w1.is_square() || w1.shape() != w2.shape() {
        return Err(Error::Dimension(format!(
            "commutator needs equal square matrices, got {:?} and {:?}",
            w1.shape(),
            w2.shape()
        )));
    }
    Ok(w1 * w2 - w2 * w1)
}

pub(crate) fn commutator_penalty_of(ws: &[DenseMatrix]) -> f64 {
    let mut acc = 0.0;
    for a in 0..ws.len() {
        for b in (a + 1)..ws.len() {
            let c = &ws[a] * &ws[b] - &ws[b] * &ws[a];
            acc += c.norm_squared();
        }
    }
    // ordered pairs: (a, b) and (b, a) have the same norm
    2.0 * acc
}

/// `Σ_{t1≠t2} ||[W(t1), W(t2)]||²_F` over ordered pairs.
pub fn commutator_penalty(omega: &CoeffGroup) -> f64 {
    commutator_penalty_of(omega.matrices())
}

fn l1(w: &DenseMatrix) -> f64 {
    w.iter().map(|v| v.abs()).sum()
}

fn recon_term(data: &[FeatureMap], recon: &[FeatureMap]) -> Result<f64> {
    if data.len() != recon.len() {
        return Err(Error::Dimension(format!(
            "{} modalities but {} reconstructions",
            data.len(),
            recon.len()
        )));
    }
    let mut acc = 0.0;
    for (t, (x, r)) in data.iter().zip(recon).enumerate() {
        if x.shape() != r.shape() {
            return Err(Error::Dimension(format!(
                "modality {t}: input {:?} vs reconstruction {:?}",
                x.shape(),
                r.shape()
            )));
        }
        acc += x.data.iter().zip(&r.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(acc)
}

fn selfexpr_residual(latent: &DenseMatrix, coeff: &DenseMatrix) -> Result<f64> {
    if coeff.nrows() != latent.nrows() || !coeff.is_square() {
        return Err(Error::Dimension(format!(
            "coefficient {:?} does not match latent with {} rows",
            coeff.shape(),
            latent.nrows()
        )));
    }
    Ok((latent - coeff.tr_mul(latent)).norm_squared())
}

/// Group-sparse commuting loss over per-modality coefficient matrices.
pub fn drogsure_loss(cache: &ForwardCache, omega: &CoeffGroup, data: &[FeatureMap], hyper: &Hyper) -> Result<LossBreakdown> {
    let ws = omega.matrices();
    if ws.len() != cache.latents.len() {
        return Err(Error::Dimension(format!(
            "{} coefficient matrices for {} modalities",
            ws.len(),
            cache.latents.len()
        )));
    }
    let mut selfexpr = 0.0;
    for (l, w) in cache.latents.iter().zip(ws) {
        selfexpr += selfexpr_residual(l, w)?;
    }
    LossBreakdown {
        commutator_term: commutator_penalty_of(ws),
        group_term: group_norm_of(ws),
        recon_term: recon_term(data, &cache.reconstructions)?,
        l1_term: ws.iter().map(l1).sum(),
        selfexpr_term: selfexpr,
        ..Default::default()
    }
    .finish(hyper)
}

/// Shared-matrix loss: `λ_frob ||W||_F + γ/2 Σ||X−X_r||² + μ/2 Σ||L − WᵀL||²`.
pub fn dmsc_loss(cache: &ForwardCache, coeff: &DenseMatrix, data: &[FeatureMap], hyper: &Hyper) -> Result<LossBreakdown> {
    check_group(std::slice::from_ref(coeff))?;
    let mut selfexpr = 0.0;
    for l in &cache.latents {
        selfexpr += selfexpr_residual(l, coeff)?;
    }
    LossBreakdown {
        recon_term: recon_term(data, &cache.reconstructions)?,
        selfexpr_term: selfexpr,
        frobenius_term: coeff.norm(),
        ..Default::default()
    }
    .finish(hyper)
}

/// Concatenation-network loss: `ρ||W||_1 + γ/2 Σ||X−X_r||² + μ/2 ||N − WᵀN||²`.
pub fn concat_loss(cache: &ForwardCache, coeff: &DenseMatrix, data: &[FeatureMap], hyper: &Hyper) -> Result<LossBreakdown> {
    check_group(std::slice::from_ref(coeff))?;
    let stacked = cache
        .stacked
        .as_ref()
        .ok_or_else(|| Error::Dimension("forward cache has no stacked code".into()))?;
    LossBreakdown {
        recon_term: recon_term(data, &cache.reconstructions)?,
        selfexpr_term: selfexpr_residual(stacked, coeff)?,
        l1_term: l1(coeff),
        ..Default::default()
    }
    .finish(hyper)
}

/// Reconstruction-only loss used while pretraining.
pub fn pretrain_loss(cache: &ForwardCache, data: &[FeatureMap], hyper: &Hyper) -> Result<LossBreakdown> {
    LossBreakdown {
        recon_term: recon_term(data, &cache.reconstructions)?,
        ..Default::default()
    }
    .finish(hyper)
}

/// Loss of whichever variant `model` is.
pub fn model_loss(model: &MultiBranchAutoencoder, cache: &ForwardCache, data: &[FeatureMap]) -> Result<LossBreakdown> {
    let h = &model.config.hyper;
    match model.config.variant {
        Variant::Drogsure => drogsure_loss(cache, &CoeffGroup::new(model.coeffs.clone())?, data, h),
        Variant::Dmsc => dmsc_loss(cache, &model.coeffs[0], data, h),
        Variant::Concat => concat_loss(cache, &model.coeffs[0], data, h),
    }
}
