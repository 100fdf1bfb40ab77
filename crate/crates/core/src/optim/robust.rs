use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Geman-McClure kernel on squared residuals: `ρ(e) = σ² e / (e + σ²)`.
///
/// Returns `(ρ(e), ρ'(e))`.
pub fn geman_mcclure(squared_residual: f64, sigma: f64) -> Result<(f64, f64)> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "robust scale must be positive, got {sigma}"
        )));
    }
    Ok(GemanMcClure { sigma }.eval(squared_residual))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GemanMcClure {
    pub sigma: f64,
}

impl GemanMcClure {
    pub fn new(sigma: f64) -> Result<Self> {
        geman_mcclure(0.0, sigma)?;
        Ok(Self { sigma })
    }

    #[inline]
    pub fn eval(&self, e: f64) -> (f64, f64) {
        let s2 = self.sigma * self.sigma;
        let d = e + s2;
        (s2 * e / d, s2 * s2 / (d * d))
    }

    #[inline]
    pub fn value(&self, e: f64) -> f64 {
        self.eval(e).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn closed_form_points() {
        assert_eq!(geman_mcclure(0.0, 2.0).unwrap(), (0.0, 1.0));
        let sigma: f64 = 0.7;
        let (v, _) = geman_mcclure(sigma * sigma, sigma).unwrap();
        assert!((v - sigma * sigma / 2.0).abs() < 1e-15);
        let (v, _) = geman_mcclure(1e12 * sigma * sigma, sigma).unwrap();
        assert!((v - sigma * sigma).abs() / (sigma * sigma) < 1e-6);
        assert!(geman_mcclure(1.0, 0.0).is_err());
        assert!(geman_mcclure(1.0, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn derivative_matches_finite_differences(e in 1e-3..50.0f64, sigma in 0.05..5.0f64) {
            let k = GemanMcClure { sigma };
            let h = 1e-6 * e.max(1.0);
            let fd = (k.value(e + h) - k.value(e - h)) / (2.0 * h);
            prop_assert!((fd - k.eval(e).1).abs() < 1e-8);
        }

        #[test]
        fn bounded_and_monotone(a in 0.0..100.0f64, b in 0.0..100.0f64, sigma in 0.05..5.0f64) {
            let k = GemanMcClure { sigma };
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(k.value(lo) <= k.value(hi));
            prop_assert!(k.value(hi) <= sigma * sigma);
        }
    }
}
