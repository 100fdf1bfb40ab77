//! Smooth unconstrained minimization and its helpers.

mod gradcheck;
mod lbfgs;
mod robust;

pub use gradcheck::{check_gradient, check_gradient_coords, GradientReport};
pub use lbfgs::{minimize, IterationRecord, Minimum, SolverConfig, Termination};
pub use robust::{geman_mcclure, GemanMcClure};

/// A differentiable scalar function of a flat parameter vector.
pub trait Objective {
    fn dimension(&self) -> usize;

    /// Writes the gradient into `grad` (length `dimension()`) and returns the value.
    fn evaluate(&self, x: &[f64], grad: &mut [f64]) -> f64;

    fn value(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dimension()];
        self.evaluate(x, &mut g)
    }
}

/// Adapts a closure `(x, grad) -> value` into an [`Objective`].
pub struct FnObjective<F> {
    dimension: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64]) -> f64> FnObjective<F> {
    pub fn new(dimension: usize, f: F) -> Self {
        Self { dimension, f }
    }
}

impl<F: Fn(&[f64], &mut [f64]) -> f64> Objective for FnObjective<F> {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn evaluate(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        (self.f)(x, grad)
    }
}

impl<T: Objective + ?Sized> Objective for &T {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn evaluate(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        (**self).evaluate(x, grad)
    }
}

/// `f` expressed in scaled variables `y` with `x = scale * y` (elementwise).
///
/// Rescaling variables to comparable units improves the conditioning seen by
/// quasi-Newton methods without changing the minimizer.
pub struct Scaled<'a, T: ?Sized> {
    inner: &'a T,
    scale: Vec<f64>,
}

impl<'a, T: Objective + ?Sized> Scaled<'a, T> {
    pub fn new(inner: &'a T, scale: Vec<f64>) -> Self {
        assert_eq!(scale.len(), inner.dimension(), "one scale per variable");
        Self { inner, scale }
    }

    pub fn to_scaled(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.scale).map(|(v, s)| v / s).collect()
    }

    pub fn to_original(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.scale).map(|(v, s)| v * s).collect()
    }
}

impl<T: Objective + ?Sized> Objective for Scaled<'_, T> {
    fn dimension(&self) -> usize {
        self.scale.len()
    }

    fn evaluate(&self, y: &[f64], grad: &mut [f64]) -> f64 {
        let x = self.to_original(y);
        let v = self.inner.evaluate(&x, grad);
        for (g, s) in grad.iter_mut().zip(&self.scale) {
            *g *= s;
        }
        v
    }

    fn value(&self, y: &[f64]) -> f64 {
        self.inner.value(&self.to_original(y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_objective_chains_gradient() {
        let f = FnObjective::new(2, |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * x[0];
            g[1] = 6.0 * x[1];
            x[0] * x[0] + 3.0 * x[1] * x[1]
        });
        let s = Scaled::new(&f, vec![2.0, 0.5]);
        let y = [1.0, 4.0];
        let report = check_gradient(&s, &y, 1e-6).unwrap();
        assert!(report.max_relative_error < 1e-8);
        assert_eq!(s.to_original(&s.to_scaled(&[3.0, 5.0])), vec![3.0, 5.0]);
        assert!((s.value(&y) - f.value(&[2.0, 2.0])).abs() < 1e-15);
    }
}
