//! Limited-memory BFGS with a backtracking Armijo line search.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::Objective;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Stop once the gradient 2-norm falls below this.
    pub gradient_tolerance: f64,
    /// Stop once an accepted step is shorter than `step_tolerance * (1 + |x|)`.
    pub step_tolerance: f64,
    /// Stop once the relative decrease of one iteration falls below this.
    pub value_tolerance: f64,
    pub memory: usize,
    pub armijo: f64,
    pub backtrack: f64,
    pub max_line_search: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-8,
            step_tolerance: 1e-12,
            value_tolerance: 0.0,
            memory: 10,
            armijo: 1e-4,
            backtrack: 0.5,
            max_line_search: 40,
        }
    }
}

impl SolverConfig {
    pub fn with_max_iterations(mut self, n: usize) -> Self {
        self.max_iterations = n;
        self
    }

    pub fn with_value_tolerance(mut self, tol: f64) -> Self {
        self.value_tolerance = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.gradient_tolerance > 0.0
            && self.step_tolerance > 0.0
            && self.value_tolerance >= 0.0
            && self.memory > 0
            && self.armijo > 0.0
            && self.armijo < 1.0
            && self.backtrack > 0.0
            && self.backtrack < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid solver configuration {self:?}"
            )))
        }
    }
}

/// One line of the iteration log, emitted as JSON lines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub value: f64,
    pub grad_norm: f64,
    pub step_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    GradientTolerance,
    StepTolerance,
    ValueTolerance,
    IterationBudget,
    LineSearchStalled,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub log: Vec<IterationRecord>,
}

impl Minimum {
    pub fn log_json_lines(&self) -> String {
        self.log
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_finite(iteration: usize, x: &[f64], value: f64, grad: &[f64]) -> Result<()> {
    if value.is_nan() || value == f64::NEG_INFINITY || grad.iter().any(|g| !g.is_finite()) {
        let preview: Vec<String> = x.iter().take(12).map(|v| format!("{v:.6e}")).collect();
        return Err(Error::NonFinite {
            iteration,
            detail: format!(
                "value {value}, iterate [{}{}]",
                preview.join(", "),
                if x.len() > 12 { ", ..." } else { "" }
            ),
        });
    }
    Ok(())
}

/// Minimize `f` from `x0`.
///
/// A trial point whose value is `+inf` is treated as infeasible and the line
/// search backtracks; NaN values or non-finite gradients abort.
pub fn minimize(f: &dyn Objective, x0: &[f64], config: &SolverConfig) -> Result<Minimum> {
    config.validate()?;
    let n = f.dimension();
    if x0.len() != n {
        return Err(Error::Dimension {
            what: "initial point",
            expected: n,
            got: x0.len(),
        });
    }
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut value = f.evaluate(&x, &mut g);
    if !value.is_finite() {
        check_finite(0, &x, f64::NAN, &g)?;
    }
    check_finite(0, &x, value, &g)?;

    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(config.memory);
    let mut log = Vec::new();
    let mut trial = vec![0.0; n];
    let mut g_trial = vec![0.0; n];
    let mut dir = vec![0.0; n];
    let mut alpha_buf = vec![0.0; config.memory];

    let mut termination = Termination::IterationBudget;
    let mut iterations = 0;
    let mut gnorm = norm(&g);
    if gnorm < config.gradient_tolerance {
        return Ok(Minimum {
            x,
            value,
            iterations: 0,
            termination: Termination::GradientTolerance,
            log,
        });
    }

    while iterations < config.max_iterations {
        // Two-loop recursion.
        dir.copy_from_slice(&g);
        for (k, (s, y, rho)) in history.iter().enumerate().rev() {
            let a = rho * dot(s, &dir);
            alpha_buf[k] = a;
            for (d, yi) in dir.iter_mut().zip(y) {
                *d -= a * yi;
            }
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            dir.iter_mut().for_each(|d| *d *= gamma);
        } else {
            let scale = 1.0 / gnorm.max(1.0);
            dir.iter_mut().for_each(|d| *d *= scale);
        }
        for (k, (s, y, rho)) in history.iter().enumerate() {
            let b = rho * dot(y, &dir);
            for (d, si) in dir.iter_mut().zip(s) {
                *d += (alpha_buf[k] - b) * si;
            }
        }
        dir.iter_mut().for_each(|d| *d = -*d);

        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            history.clear();
            let scale = 1.0 / gnorm.max(1.0);
            for (d, gi) in dir.iter_mut().zip(&g) {
                *d = -gi * scale;
            }
            slope = dot(&g, &dir);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..config.max_line_search {
            for i in 0..n {
                trial[i] = x[i] + step * dir[i];
            }
            let v = f.evaluate(&trial, &mut g_trial);
            if v.is_nan() {
                check_finite(iterations + 1, &trial, v, &g_trial)?;
            }
            if v.is_finite() && v <= value + config.armijo * step * slope {
                check_finite(iterations + 1, &trial, v, &g_trial)?;
                accepted = Some(v);
                break;
            }
            step *= config.backtrack;
        }
        let Some(new_value) = accepted else {
            if history.is_empty() {
                termination = Termination::LineSearchStalled;
                break;
            }
            // Retry from steepest descent with a fresh memory.
            history.clear();
            continue;
        };
        iterations += 1;

        let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_trial.iter().zip(&g).map(|(a, b)| a - b).collect();
        let step_norm = norm(&s);
        let sy = dot(&s, &y);
        if sy > 1e-12 * step_norm * norm(&y) && sy > 0.0 {
            if history.len() == config.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let decrease = value - new_value;
        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut g, &mut g_trial);
        let previous = value;
        value = new_value;
        gnorm = norm(&g);
        log.push(IterationRecord {
            iter: iterations,
            value,
            grad_norm: gnorm,
            step_norm,
        });

        if gnorm < config.gradient_tolerance {
            termination = Termination::GradientTolerance;
            break;
        }
        if step_norm < config.step_tolerance * (1.0 + norm(&x)) {
            termination = Termination::StepTolerance;
            break;
        }
        if decrease <= config.value_tolerance * previous.abs().max(value.abs()).max(1e-300) {
            termination = Termination::ValueTolerance;
            break;
        }
    }

    Ok(Minimum {
        x,
        value,
        iterations,
        termination,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::FnObjective;

    fn bowl(c: Vec<f64>) -> impl Objective {
        FnObjective::new(c.len(), move |x: &[f64], g: &mut [f64]| {
            let mut v = 0.0;
            for i in 0..x.len() {
                let d = x[i] - c[i];
                g[i] = 2.0 * d;
                v += d * d;
            }
            v
        })
    }

    fn rosenbrock() -> impl Objective {
        FnObjective::new(2, |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        })
    }

    #[test]
    fn quadratic_bowl() {
        let c = vec![1.5, -2.0, 0.25, 7.0];
        let f = bowl(c.clone());
        let m = minimize(&f, &[0.0; 4], &SolverConfig::default()).unwrap();
        for (a, b) in m.x.iter().zip(&c) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn rosenbrock_from_standard_start() {
        let config = SolverConfig::default().with_max_iterations(2000);
        let m = minimize(&rosenbrock(), &[-1.2, 1.0], &config).unwrap();
        assert!(
            (m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4,
            "{:?}",
            m.x
        );
        assert!(m.value <= 24.2);
    }

    #[test]
    fn early_exit_at_stationary_point() {
        let f = bowl(vec![3.0, 4.0]);
        let m = minimize(&f, &[3.0, 4.0], &SolverConfig::default()).unwrap();
        assert_eq!(m.iterations, 0);
        assert_eq!(m.x, vec![3.0, 4.0]);
        assert!(m.log.is_empty());
    }

    #[test]
    fn aborts_on_nan() {
        let f = FnObjective::new(1, |x: &[f64], g: &mut [f64]| {
            g[0] = 1.0;
            if x[0] < -0.5 {
                f64::NAN
            } else {
                x[0]
            }
        });
        let err = minimize(&f, &[0.0], &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
        assert!(err.to_string().contains("iterate"));
    }

    #[test]
    fn infinite_trials_backtrack() {
        // Barrier at x = 1: values beyond are infeasible.
        let f = FnObjective::new(1, |x: &[f64], g: &mut [f64]| {
            if x[0] >= 1.0 {
                g[0] = 0.0;
                return f64::INFINITY;
            }
            g[0] = -1.0 + 0.01 / (1.0 - x[0]);
            -x[0] - 0.01 * (1.0 - x[0]).ln()
        });
        let m = minimize(&f, &[0.0], &SolverConfig::default()).unwrap();
        assert!((m.x[0] - 0.99).abs() < 1e-6);
    }

    #[test]
    fn appending_constant_parameters_changes_nothing() {
        let small = minimize(&rosenbrock(), &[-1.2, 1.0], &SolverConfig::default()).unwrap();
        let padded = FnObjective::new(4, |x: &[f64], g: &mut [f64]| {
            let v = rosenbrock().evaluate(&x[..2], &mut g[..2]);
            g[2] = 0.0;
            g[3] = 0.0;
            v
        });
        let big = minimize(&padded, &[-1.2, 1.0, 5.0, -3.0], &SolverConfig::default()).unwrap();
        assert_eq!(&big.x[..2], &small.x[..]);
        assert_eq!(&big.x[2..], &[5.0, -3.0]);
        assert_eq!(big.iterations, small.iterations);
    }

    #[test]
    fn log_is_json_lines() {
        let m = minimize(&bowl(vec![1.0, 2.0]), &[0.0, 0.0], &SolverConfig::default()).unwrap();
        let lines = m.log_json_lines();
        let first: IterationRecord = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
        assert_eq!(first.iter, 1);
    }
}
