//! Damped Newton minimization of regularized risks.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, inv_quad};
use crate::objective::{Objective, WeightedRisk};
use crate::scloss::{LossModel, Sample};

/// Backtracking parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LineSearch {
    pub shrink: f64,
    pub sufficient_decrease: f64,
    pub max_halvings: usize,
}

impl Default for LineSearch {
    fn default() -> Self {
        LineSearch {
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            max_halvings: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Stop once the Newton decrement falls to this value.
    pub tol: f64,
    pub max_iter: usize,
    pub line_search: LineSearch,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-10,
            max_iter: 200,
            line_search: LineSearch::default(),
        }
    }
}

impl SolverConfig {
    pub fn with_tol(tol: f64) -> Self {
        SolverConfig {
            tol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument("solver tol must be > 0".into()));
        }
        if self.max_iter < 1 {
            return Err(Error::InvalidArgument(
                "solver max_iter must be >= 1".into(),
            ));
        }
        let ls = &self.line_search;
        if !(ls.shrink > 0.0 && ls.shrink < 1.0)
            || !(ls.sufficient_decrease > 0.0 && ls.sufficient_decrease < 0.5)
        {
            return Err(Error::InvalidArgument(
                "line search parameters out of range".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub theta_hat: DVector<f64>,
    /// Newton decrement at each visited iterate, the last one included.
    pub decrement_trace: Vec<f64>,
    /// Number of Newton steps taken.
    pub iterations: usize,
    pub converged: bool,
}

impl SolveResult {
    pub fn final_decrement(&self) -> f64 {
        *self.decrement_trace.last().unwrap_or(&f64::INFINITY)
    }
}

/// Parameters beyond this norm are treated as escaping to infinity.
const DIVERGENCE_NORM: f64 = 1e8;

/// Damped Newton from `start` until the decrement drops to `config.tol`.
pub fn minimize<O: Objective>(
    objective: &O,
    start: DVector<f64>,
    config: &SolverConfig,
) -> Result<SolveResult> {
    config.validate()?;
    let ls = config.line_search;
    let mut theta = start;
    let mut trace = Vec::new();
    for iter in 0..=config.max_iter {
        let (value, grad, hess) = objective.second_order(&theta)?;
        let chol = cholesky(&hess).map_err(|_| Error::Divergence {
            reason: format!("Hessian lost positive definiteness at iteration {iter}"),
            trace: trace.clone(),
        })?;
        let step = -chol.solve(&grad);
        let decrement = (-grad.dot(&step)).max(0.0).sqrt();
        if !decrement.is_finite() {
            return Err(Error::Divergence {
                reason: "non-finite Newton decrement".into(),
                trace,
            });
        }
        trace.push(decrement);
        if decrement <= config.tol {
            return Ok(SolveResult {
                theta_hat: theta,
                decrement_trace: trace,
                iterations: iter,
                converged: true,
            });
        }
        if iter == config.max_iter {
            break;
        }

        // Below the rounding resolution of the objective, Armijo compares noise and
        // would shrink good steps; the iterate is deep in the quadratic region there, so
        // the full step is judged by the gradient it leaves behind.
        let resolvable = decrement * decrement > 1e3 * f64::EPSILON * value.abs().max(1.0);
        if !resolvable {
            let candidate = &theta + &step;
            if let Ok((v, g, _)) = objective.second_order(&candidate) {
                let shrinks = inv_quad(&chol, &g).sqrt() < decrement;
                if v.is_finite() && (shrinks || v <= value + 4.0 * f64::EPSILON * value.abs()) {
                    theta = candidate;
                    continue;
                }
            }
        }
        let target = ls.sufficient_decrease * decrement * decrement;
        let mut t = 1.0;
        let mut accepted = None;
        let mut full_step = None;
        for _ in 0..=ls.max_halvings {
            let candidate = &theta + &step * t;
            if let Ok(v) = objective.value(&candidate) {
                if v.is_finite() {
                    if full_step.is_none() {
                        full_step = Some((candidate.clone(), v));
                    }
                    if v <= value - t * target {
                        accepted = Some(candidate);
                        break;
                    }
                }
            }
            t *= ls.shrink;
        }
        let next = match (accepted, full_step) {
            (Some(c), _) => c,
            // Armijo can fail purely from rounding when the decrement is tiny.
            (None, Some((c, v))) if v <= value + 4.0 * f64::EPSILON * value.abs() => c,
            _ => {
                return Err(Error::NonConvergence {
                    iterations: iter,
                    last: decrement,
                    trace,
                })
            }
        };
        if next == theta {
            return Err(Error::NonConvergence {
                iterations: iter,
                last: decrement,
                trace,
            });
        }
        theta = next;
        if theta.norm() > DIVERGENCE_NORM {
            return Err(Error::Divergence {
                reason: "iterates escape to infinity; the infimum is not attained".into(),
                trace,
            });
        }
    }
    let last = *trace.last().unwrap_or(&f64::INFINITY);
    Err(Error::NonConvergence {
        iterations: config.max_iter,
        last,
        trace,
    })
}

fn normalized(weights: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidArgument(
            "weights must be nonnegative with positive finite sum".into(),
        ));
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

fn require_positive(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be > 0, got {lambda}"
        )));
    }
    Ok(())
}

/// Minimizer of the weighted regularized empirical risk, started at the origin.
pub fn solve_erm(
    samples: &[Sample],
    weights: &[f64],
    loss: &LossModel,
    lambda: f64,
    config: &SolverConfig,
) -> Result<SolveResult> {
    require_positive(lambda)?;
    let w = normalized(weights)?;
    let risk = WeightedRisk::new(samples, &w, loss, lambda)?;
    minimize(&risk, DVector::zeros(samples[0].dim()), config)
}

/// `||grad||` in the inverse regularized-Hessian norm of the empirical risk.
pub fn decrement(
    samples: &[Sample],
    weights: &[f64],
    loss: &LossModel,
    lambda: f64,
    theta: &DVector<f64>,
) -> Result<f64> {
    require_positive(lambda)?;
    let w = normalized(weights)?;
    let risk = WeightedRisk::new(samples, &w, loss, lambda)?;
    let (_, g, h) = risk.second_order(theta)?;
    let chol = cholesky(&h)?;
    Ok(inv_quad(&chol, &g).sqrt())
}
