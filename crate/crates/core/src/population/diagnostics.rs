use serde::Serialize;

use super::{require_positive, FinitePopulation, LocalConstants, PopulationSolution};
use crate::constants::Constants;
use crate::error::{Error, Result};
use crate::solver::SolverConfig;
use crate::stats::loglog_fit;

/// Geometric default grid `{2^-k : k = 0..16}` restricted to `(0, cap]`.
pub fn default_lambda_grid(cap: f64) -> Vec<f64> {
    (0..=16)
        .map(|k| 2f64.powi(-k))
        .filter(|l| *l <= cap)
        .collect()
}

impl FinitePopulation {
    /// `sup_z sup_{g in phi(z)} |(theta*_lambda - theta*) . g|`.
    pub fn t_lambda(
        &self,
        sol: &mut PopulationSolution,
        lambda: f64,
        config: &SolverConfig,
    ) -> Result<f64> {
        let theta_lambda = sol.ensure_regularized(self, lambda, config)?.clone();
        let gap = theta_lambda - &sol.theta_star;
        Ok(self.certificate_seminorm(&gap))
    }

    /// `Bias_lambda / r_lambda(theta*)`, zero when the radius is infinite.
    pub fn t_tilde(&self, sol: &PopulationSolution, lambda: f64) -> Result<f64> {
        let radius = self.dikin_radius(&sol.theta_star, lambda)?;
        Ok(sol.bias(lambda)? / radius)
    }

    pub fn constants_at(
        &self,
        sol: &mut PopulationSolution,
        lambda: f64,
        config: &SolverConfig,
    ) -> Result<Constants> {
        let t = self.t_lambda(sol, lambda, config)?;
        let t_tilde = self.t_tilde(sol, lambda)?;
        Ok(Constants::evaluate(t, t_tilde))
    }

    /// Smallest `Q^2` with `df_lambda <= Q^2 lambda^{-1/alpha}` on `(0, 1]`, from a dense
    /// geometric scan followed by golden-section refinement around the best point.
    pub fn capacity_constant_sq(&self, sol: &PopulationSolution, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0) {
            return Err(Error::InvalidArgument("alpha must be > 0".into()));
        }
        let f = |log_l: f64| -> f64 {
            let l = log_l.exp();
            sol.df(l).unwrap_or(0.0) * l.powf(1.0 / alpha)
        };
        let lo = (1e-14f64).ln();
        let steps = 4000;
        let step = -lo / steps as f64;
        let mut best = (0.0, f64::NEG_INFINITY);
        for i in 0..=steps {
            let x = lo + i as f64 * step;
            let v = f(x);
            if v > best.1 {
                best = (x, v);
            }
        }
        let (mut a, mut b) = ((best.0 - step).max(lo), (best.0 + step).min(0.0));
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..80 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if f(c) > f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        Ok(best.1.max(f(0.5 * (a + b))))
    }

    /// Exact diagnostics over a grid of `lambda` values.
    pub fn diagnose(
        &self,
        sol: &mut PopulationSolution,
        lambda_grid: &[f64],
        config: &SolverConfig,
    ) -> Result<DiagnosticsReport> {
        let mut grid = lambda_grid.to_vec();
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        grid.dedup();
        let mut report = DiagnosticsReport {
            dim: self.dim(),
            local: LocalSummary::from(sol.local),
            theta_star_norm: sol.theta_star.norm(),
            lambda_grid: grid.clone(),
            bias: Vec::new(),
            df: Vec::new(),
            dikin_radius: Vec::new(),
            t_lambda: Vec::new(),
            constants: Vec::new(),
            fitted_r: None,
            fitted_alpha: None,
        };
        for &lambda in &grid {
            require_positive(lambda)?;
            report.bias.push(sol.bias(lambda)?);
            report.df.push(sol.df(lambda)?);
            report
                .dikin_radius
                .push(self.dikin_radius(&sol.theta_star, lambda)?);
            let c = self.constants_at(sol, lambda, config)?;
            report.t_lambda.push(c.t);
            report.constants.push(c);
        }
        report.fitted_r = estimate_source_exponent(&report).ok();
        report.fitted_alpha = estimate_capacity_exponent(&report).ok();
        Ok(report)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalSummary {
    pub b1_star: f64,
    pub b2_star: f64,
    pub q_star_sq: f64,
    pub r: f64,
}

impl From<LocalConstants> for LocalSummary {
    fn from(c: LocalConstants) -> Self {
        LocalSummary {
            b1_star: c.b1_star,
            b2_star: c.b2_star,
            q_star_sq: c.q_star_sq,
            r: c.r,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    pub dim: usize,
    pub local: LocalSummary,
    pub theta_star_norm: f64,
    pub lambda_grid: Vec<f64>,
    pub bias: Vec<f64>,
    pub df: Vec<f64>,
    /// `r_lambda(theta*)`; infinite for the square loss.
    pub dikin_radius: Vec<f64>,
    pub t_lambda: Vec<f64>,
    pub constants: Vec<Constants>,
    pub fitted_r: Option<ExponentFit>,
    pub fitted_alpha: Option<ExponentFit>,
}

/// A fitted exponent with the quality of its log-log fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentFit {
    pub value: f64,
    pub slope: f64,
    /// Root-mean-square residual of the log-log fit.
    pub residual: f64,
    pub points: usize,
    /// Set when the usable points are too few or too narrow for a trustworthy fit.
    pub flagged: bool,
}

fn distinct_count(grid: &[f64]) -> usize {
    let mut g = grid.to_vec();
    g.sort_by(|a, b| a.partial_cmp(b).unwrap());
    g.dedup();
    g.len()
}

fn span_decades(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    (max / min).log10()
}

/// `r` from the slope `(1 + 2r)/2` of `log Bias` against `log lambda`.
pub fn estimate_source_exponent(report: &DiagnosticsReport) -> Result<ExponentFit> {
    if distinct_count(&report.lambda_grid) < 3 {
        return Err(Error::InvalidArgument(
            "fewer than 3 distinct lambda values".into(),
        ));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = report
        .lambda_grid
        .iter()
        .zip(&report.bias)
        .filter(|(l, b)| **l <= report.local.b2_star && **b > 0.0)
        .map(|(l, b)| (*l, *b))
        .unzip();
    let Some((slope, _, residual)) = loglog_fit(&xs, &ys) else {
        return Err(Error::InvalidArgument("bias fit is degenerate".into()));
    };
    Ok(ExponentFit {
        value: slope - 0.5,
        slope,
        residual,
        points: xs.len(),
        flagged: xs.len() < 5 || span_decades(&xs) < 2.0,
    })
}

/// `alpha` from the slope `-1/alpha` of `log df` against `log lambda`.
///
/// Grid points where `df` exceeds half the dimension are dropped: there the finite rank
/// saturates `df` towards `d` and the power law no longer applies.
pub fn estimate_capacity_exponent(report: &DiagnosticsReport) -> Result<ExponentFit> {
    if distinct_count(&report.lambda_grid) < 3 {
        return Err(Error::InvalidArgument(
            "fewer than 3 distinct lambda values".into(),
        ));
    }
    let cap = report.dim as f64 / 2.0;
    let (xs, ys): (Vec<f64>, Vec<f64>) = report
        .lambda_grid
        .iter()
        .zip(&report.df)
        .filter(|(l, df)| **l <= report.local.b2_star && **df > 0.0 && **df <= cap)
        .map(|(l, df)| (*l, *df))
        .unzip();
    let unusable = ExponentFit {
        value: f64::INFINITY,
        slope: 0.0,
        residual: f64::NAN,
        points: xs.len(),
        flagged: true,
    };
    if xs.len() < 3 {
        return Ok(unusable);
    }
    let Some((slope, _, residual)) = loglog_fit(&xs, &ys) else {
        return Ok(unusable);
    };
    if slope >= 0.0 {
        return Ok(ExponentFit {
            slope,
            residual,
            ..unusable
        });
    }
    Ok(ExponentFit {
        value: -1.0 / slope,
        slope,
        residual,
        points: xs.len(),
        flagged: xs.len() < 5 || span_decades(&xs) < 2.0,
    })
}
