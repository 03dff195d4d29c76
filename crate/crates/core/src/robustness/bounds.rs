use serde::{Deserialize, Serialize};

use crate::numerics::{symmetric_eigen_desc, DenseMatrix};
use crate::{Error, Result};

/// Gaps at or below this are treated as zero.
pub const GAP_EPS: f64 = 1e-8;

/// `‖Δ‖₂ ≤ LITERAL_REGIME · α` is the regime where the `√2/α` projector bound
/// is guaranteed by the Davis–Kahan argument.
pub const LITERAL_REGIME: f64 = 1.0 - std::f64::consts::FRAC_1_SQRT_2;

/// Distances between a clean and a perturbed affinity and the checks of the
/// entrywise and projector bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub n: usize,
    pub clusters: usize,
    /// `‖Ã − A‖_F`.
    pub frob_distance: f64,
    /// `max |Δ_ij|`.
    pub max_entry_delta: f64,
    pub bound_n_eps: f64,
    pub n_eps_holds: bool,
    /// `‖Δ‖₂`.
    pub delta_spectral_norm: f64,
    /// `‖P − P̃‖_F` between the rank-`clusters` eigenprojectors.
    pub projector_distance: f64,
    /// `|λ_P − λ_{P+1}|` of the clean affinity.
    pub spectral_gap: f64,
    pub gap_degenerate: bool,
    /// `√2/α · ‖Δ‖_F`.
    pub bound_rhs: f64,
    /// Literal comparison `projector_distance ≤ bound_rhs`; `None` when the
    /// gap is degenerate.
    pub bound_holds: Option<bool>,
    /// Whether `‖Δ‖₂ ≤ (1 − 1/√2)·α`, where `bound_holds` must be true.
    pub in_regime: Option<bool>,
    /// `2√2/α · ‖Δ‖_F`, valid for any perturbation size.
    pub rigorous_rhs: f64,
    pub rigorous_holds: Option<bool>,
}

impl PerturbationReport {
    /// True when no check that is expected to hold failed.
    pub fn consistent(&self) -> bool {
        self.n_eps_holds
            && self.rigorous_holds != Some(false)
            && !(self.in_regime == Some(true) && self.bound_holds == Some(false))
    }
}

fn check_affinity(a: &DenseMatrix, what: &str) -> Result<()> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("{what} must be square, got {:?}", a.shape())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{what} has non-finite entries")));
    }
    let asym = (a - a.transpose()).abs().max();
    if asym > 1e-9 * a.abs().max().max(1.0) {
        return Err(Error::Invariant(format!("{what} is not symmetric (max asymmetry {asym:e})")));
    }
    Ok(())
}

fn top_projector(a: &DenseMatrix, p: usize) -> (Vec<f64>, DenseMatrix) {
    let sym = (a + a.transpose()) * 0.5;
    let (vals, vecs) = symmetric_eigen_desc(&sym);
    let v = vecs.columns(0, p);
    (vals, v * v.transpose())
}

/// Compares a clean affinity `a` with a perturbed one for rank-`p` spectral
/// clustering.
pub fn perturbation_report(a: &DenseMatrix, perturbed: &DenseMatrix, p: usize) -> Result<PerturbationReport> {
    check_affinity(a, "clean affinity")?;
    check_affinity(perturbed, "perturbed affinity")?;
    if a.shape() != perturbed.shape() {
        return Err(Error::Dimension(format!(
            "affinities differ in shape: {:?} vs {:?}",
            a.shape(),
            perturbed.shape()
        )));
    }
    let n = a.nrows();
    if p < 2 || p >= n {
        return Err(Error::Config(format!("cluster count {p} must lie in 2..{n}")));
    }
    let delta = perturbed - a;
    let frob = delta.norm();
    let eps = delta.abs().max();
    let bound_n_eps = n as f64 * eps;
    let (vals, proj) = top_projector(a, p);
    let (_, proj_tilde) = top_projector(perturbed, p);
    let projector_distance = (&proj - &proj_tilde).norm();
    let gap = (vals[p - 1] - vals[p]).abs();
    let (delta_vals, _) = symmetric_eigen_desc(&((&delta + delta.transpose()) * 0.5));
    let delta_spectral_norm = delta_vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gap_degenerate = gap <= GAP_EPS;
    let (bound_rhs, rigorous_rhs) = if gap_degenerate {
        (f64::INFINITY, f64::INFINITY)
    } else {
        (std::f64::consts::SQRT_2 * frob / gap, 2.0 * std::f64::consts::SQRT_2 * frob / gap)
    };
    // A tiny slack absorbs eigensolver rounding when Δ = 0.
    let slack = 1e-9;
    let check = |rhs: f64| (!gap_degenerate).then_some(projector_distance <= rhs + slack);
    Ok(PerturbationReport {
        n,
        clusters: p,
        frob_distance: frob,
        max_entry_delta: eps,
        bound_n_eps,
        n_eps_holds: frob <= bound_n_eps,
        delta_spectral_norm,
        projector_distance,
        spectral_gap: gap,
        gap_degenerate,
        bound_rhs,
        bound_holds: check(bound_rhs),
        in_regime: (!gap_degenerate).then_some(delta_spectral_norm <= LITERAL_REGIME * gap),
        rigorous_rhs,
        rigorous_holds: check(rigorous_rhs),
    })
}

/// Scales a nonnegative affinity so that its largest entry is 1.
pub fn normalize_max(a: &DenseMatrix) -> Result<DenseMatrix> {
    let m = a.abs().max();
    if m == 0.0 || !m.is_finite() {
        return Err(Error::Degenerate(format!("cannot normalize an affinity with max entry {m}")));
    }
    Ok(a / m)
}
