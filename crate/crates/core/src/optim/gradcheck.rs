use super::Objective;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientReport {
    pub max_relative_error: f64,
    pub worst_coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Central-difference check of every coordinate of `f`'s gradient at `x`.
///
/// The relative error uses `max(1, |analytic|)` as denominator.
pub fn check_gradient(f: &dyn Objective, x: &[f64], eps: f64) -> Result<GradientReport> {
    let coords: Vec<usize> = (0..x.len()).collect();
    check_gradient_coords(f, x, eps, &coords)
}

/// As [`check_gradient`], restricted to `coords`.
pub fn check_gradient_coords(
    f: &dyn Objective,
    x: &[f64],
    eps: f64,
    coords: &[usize],
) -> Result<GradientReport> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step must be positive, got {eps}"
        )));
    }
    let n = f.dimension();
    if x.len() != n {
        return Err(Error::Dimension {
            what: "gradient check point",
            expected: n,
            got: x.len(),
        });
    }
    let mut grad = vec![0.0; n];
    let v0 = f.evaluate(x, &mut grad);
    let finite = |v: f64, detail: &str| {
        if v.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite {
                iteration: 0,
                detail: detail.to_string(),
            })
        }
    };
    finite(v0, "value at check point")?;
    let mut scratch = vec![0.0; n];
    let mut xp = x.to_vec();
    let mut report = GradientReport {
        max_relative_error: 0.0,
        worst_coordinate: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for &i in coords {
        finite(grad[i], "analytic gradient")?;
        xp[i] = x[i] + eps;
        let fp = f.evaluate(&xp, &mut scratch);
        xp[i] = x[i] - eps;
        let fm = f.evaluate(&xp, &mut scratch);
        xp[i] = x[i];
        finite(fp, "forward evaluation")?;
        finite(fm, "backward evaluation")?;
        let numeric = (fp - fm) / (2.0 * eps);
        let err = (grad[i] - numeric).abs() / grad[i].abs().max(1.0);
        if err >= report.max_relative_error {
            report = GradientReport {
                max_relative_error: err,
                worst_coordinate: i,
                analytic: grad[i],
                numeric,
            };
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::FnObjective;

    fn sq(scale: f64) -> impl Objective {
        FnObjective::new(3, move |x: &[f64], g: &mut [f64]| {
            for i in 0..3 {
                g[i] = scale * 2.0 * x[i];
            }
            x.iter().map(|v| v * v).sum()
        })
    }

    #[test]
    fn exact_quadratic_passes() {
        let r = check_gradient(&sq(1.0), &[0.3, -2.0, 5.0], 1e-5).unwrap();
        assert!(r.max_relative_error < 1e-9, "{r:?}");
    }

    #[test]
    fn planted_bug_is_detected() {
        let r = check_gradient(&sq(1.1), &[0.3, -2.0, 5.0], 1e-5).unwrap();
        assert!((r.max_relative_error - 0.1).abs() < 0.02, "{r:?}");
    }

    #[test]
    fn rejects_bad_step() {
        assert!(check_gradient(&sq(1.0), &[0.0; 3], 0.0).is_err());
    }
}
