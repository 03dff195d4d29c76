use crate::{Error, Result};

/// Central finite-difference gradient of `loss` at `params`.
///
/// Each coordinate is perturbed by `±h` in turn; the parameter vector is
/// restored before returning.
pub fn finite_diff_grad<F>(mut loss: F, params: &mut [f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let original = params[i];
        params[i] = original + h;
        let plus = loss(params);
        params[i] = original - h;
        let minus = loss(params);
        params[i] = original;
        let (plus, minus) = (plus?, minus?);
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("loss near coordinate {i}")));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let mut x = vec![3.0];
        let g = finite_diff_grad(|p| Ok(p[0] * p[0]), &mut x, 1e-4).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
        assert_eq!(x, vec![3.0]);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let mut x = vec![1.0, -4.0];
        let g = finite_diff_grad(|_| Ok(7.5), &mut x, 1e-3).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn non_finite_loss_is_error() {
        let mut x = vec![0.0];
        let r = finite_diff_grad(|p| Ok(1.0 / p[0].abs().min(0.0)), &mut x, 1e-3);
        assert!(r.is_err());
        assert!(finite_diff_grad(|_| Ok(0.0), &mut x, 0.0).is_err());
    }
}
