//! Monte Carlo checks of the statistical results: regularization schedules, rate
//! exponents, bound frequencies and the two concentration lemmas.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::Constants;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, inv_quad, max_generalized_eigenvalue};
use crate::objective::WeightedRisk;
use crate::population::{FinitePopulation, PopulationSolution};
use crate::sampling::{derive_seed, draw_counts};
use crate::solver::{solve_erm, SolverConfig};
use crate::stats::{binomial_sigma, loglog_fit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    None,
    Source,
    SourceCapacity,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::None => "none",
            Regime::Source => "source",
            Regime::SourceCapacity => "source_capacity",
        }
    }
}

/// Problem constants the schedules and thresholds read. Each regime uses a subset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegimeParams {
    /// `sup ||grad l_z(theta)||` over `||theta|| <= ||theta*||`.
    pub b1_bar: Option<f64>,
    /// `sup Tr hess l_z(theta)` over `||theta|| <= ||theta*||`.
    pub b2_bar: Option<f64>,
    /// Certificate radius `R`.
    pub r_cert: Option<f64>,
    pub theta_norm: Option<f64>,
    pub b1_star: Option<f64>,
    pub b2_star: Option<f64>,
    pub q_star_sq: Option<f64>,
    /// `||v||` with `theta* = H(theta*)^r v`.
    pub l_norm: Option<f64>,
    /// Capacity constant `Q` with `df_lambda <= Q^2 lambda^{-1/alpha}`.
    pub q: Option<f64>,
    pub r: Option<f64>,
    pub alpha: Option<f64>,
}

fn need(value: Option<f64>, name: &str, regime: Regime) -> Result<f64> {
    match value {
        Some(v) if v.is_finite() && v >= 0.0 => Ok(v),
        Some(v) => Err(Error::InvalidArgument(format!(
            "parameter {name} = {v} is invalid for the {} regime",
            regime.name()
        ))),
        None => Err(Error::InvalidArgument(format!(
            "missing parameter {name} for the {} regime",
            regime.name()
        ))),
    }
}

fn need_positive(value: Option<f64>, name: &str, regime: Regime) -> Result<f64> {
    let v = need(value, name, regime)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(Error::InvalidArgument(format!(
            "parameter {name} must be > 0 for the {} regime",
            regime.name()
        )))
    }
}

fn source_exponent(params: &RegimeParams, regime: Regime) -> Result<f64> {
    let r = need(params.r, "r", regime)?;
    if !(r > 0.0 && r <= 0.5) {
        return Err(Error::InvalidArgument(format!(
            "source exponent r = {r} must lie in (0, 0.5]"
        )));
    }
    Ok(r)
}

fn capacity_exponent(params: &RegimeParams, regime: Regime) -> Result<f64> {
    let alpha = need_positive(params.alpha, "alpha", regime)?;
    if alpha < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "capacity exponent alpha = {alpha} must be >= 1"
        )));
    }
    Ok(alpha)
}

pub fn validate_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta <= 0.5) {
        return Err(Error::InvalidArgument(
            "delta must lie in (0, 0.5]".into(),
        ));
    }
    Ok(())
}

impl RegimeParams {
    /// Read every constant off a solved population. `r`/`alpha` describe the assumed
    /// source and capacity exponents; `L` and `Q` are computed exactly for them.
    pub fn from_solution(
        pop: &FinitePopulation,
        sol: &PopulationSolution,
        r: Option<f64>,
        alpha: Option<f64>,
    ) -> Result<Self> {
        let theta_norm = sol.theta_star.norm();
        let bar = pop.sup_constants(theta_norm)?;
        let mut params = RegimeParams {
            b1_bar: Some(bar.b1),
            b2_bar: Some(bar.b2),
            r_cert: Some(sol.local.r),
            theta_norm: Some(theta_norm),
            b1_star: Some(sol.local.b1_star),
            b2_star: Some(sol.local.b2_star),
            q_star_sq: Some(sol.local.q_star_sq),
            r,
            alpha,
            ..Default::default()
        };
        if let Some(r) = r {
            params.l_norm = Some(sol.source_norm(r)?);
        }
        if let Some(alpha) = alpha {
            params.q = Some(pop.capacity_constant_sq(sol, alpha)?.sqrt());
        }
        Ok(params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScheduledLambda {
    pub lambda: f64,
    /// The corollary's value before clamping to `(0, B2*]`.
    pub unclamped: f64,
    pub clamped: bool,
}

/// The corollary's `lambda` for sample size `n`, clamped to `(0, B2*]` when `B2*` is known.
pub fn lambda_schedule(
    regime: Regime,
    n: u64,
    params: &RegimeParams,
    delta: f64,
) -> Result<ScheduledLambda> {
    validate_delta(delta)?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let c0 = schedule_base(regime, params)?;
    let nf = n as f64;
    let unclamped = match regime {
        Regime::None => c0 * ((2.0 / delta).ln() / nf).sqrt(),
        Regime::Source => {
            let r = source_exponent(params, regime)?;
            (c0 / nf).powf(1.0 / (2.0 + 2.0 * r))
        }
        Regime::SourceCapacity => (c0 / nf).powf(beta(params, regime)?),
    };
    if !(unclamped > 0.0 && unclamped.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "schedule produced lambda = {unclamped}"
        )));
    }
    let (lambda, clamped) = match params.b2_star {
        Some(cap) if cap > 0.0 && unclamped > cap => (cap, true),
        _ => (unclamped, false),
    };
    Ok(ScheduledLambda {
        lambda,
        unclamped,
        clamped,
    })
}

fn schedule_base(regime: Regime, params: &RegimeParams) -> Result<f64> {
    Ok(match regime {
        Regime::None => {
            16.0 * need(params.b1_bar, "b1_bar", regime)?
                * need(params.r_cert, "r_cert", regime)?.max(1.0)
        }
        Regime::Source => {
            let b1 = need(params.b1_star, "b1_star", regime)?;
            let l = need_positive(params.l_norm, "l_norm", regime)?;
            256.0 * (b1 / l).powi(2)
        }
        Regime::SourceCapacity => {
            let q = need(params.q, "q", regime)?;
            let l = need_positive(params.l_norm, "l_norm", regime)?;
            256.0 * (q / l).powi(2)
        }
    })
}

/// Exponent of `C0/n` in the refined schedules: `alpha / (1 + alpha (1 + 2r))`.
fn beta(params: &RegimeParams, regime: Regime) -> Result<f64> {
    let r = source_exponent(params, regime)?;
    let alpha = match regime {
        Regime::SourceCapacity => capacity_exponent(params, regime)?,
        _ => 1.0,
    };
    Ok(alpha / (1.0 + alpha * (1.0 + 2.0 * r)))
}

/// Exponent `gamma` of the optimal rate `n^{-gamma}`.
pub fn theoretical_rate(regime: Regime, r: f64, alpha: f64) -> Result<f64> {
    match regime {
        Regime::None => Ok(0.5),
        Regime::Source => {
            if !(r > 0.0 && r <= 0.5) {
                return Err(Error::InvalidArgument(format!(
                    "source exponent r = {r} must lie in (0, 0.5]"
                )));
            }
            Ok((2.0 * r + 1.0) / (2.0 * r + 2.0))
        }
        Regime::SourceCapacity => {
            if !(r > 0.0 && r <= 0.5) {
                return Err(Error::InvalidArgument(format!(
                    "source exponent r = {r} must lie in (0, 0.5]"
                )));
            }
            if alpha == f64::INFINITY {
                return Ok(1.0);
            }
            if !(alpha >= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "capacity exponent alpha = {alpha} must be >= 1"
                )));
            }
            let a = alpha * (1.0 + 2.0 * r);
            Ok(a / (a + 1.0))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateConstants {
    pub c0: f64,
    pub c1: f64,
    /// Sample threshold `N`; reported, never enforced.
    pub n_threshold: Option<f64>,
    /// Why `N` is unavailable, when it is.
    pub threshold_note: Option<String>,
}

/// The corollary's `(C0, C1, N)` evaluated literally.
pub fn rate_constants(regime: Regime, params: &RegimeParams, delta: f64) -> Result<RateConstants> {
    validate_delta(delta)?;
    let log2d = (2.0 / delta).ln();
    let c0 = schedule_base(regime, params)?;
    match regime {
        Regime::None => {
            let b1 = need(params.b1_bar, "b1_bar", regime)?;
            let b2 = need(params.b2_bar, "b2_bar", regime)?;
            let r = need(params.r_cert, "r_cert", regime)?;
            let norm = need(params.theta_norm, "theta_norm", regime)?;
            let c1 = 48.0 * b1 * r.max(1.0) * (norm * norm).max(1.0);
            let (n_threshold, threshold_note) = if b1 > 0.0 && b2 > 0.0 {
                let a = b2 / b1;
                let n = (36.0 * a * a * (6.0 * a * a / delta).ln().powi(2))
                    .max(256.0 / (a * a) * log2d)
                    .max(512.0 * (norm * norm * r * r).max(1.0) * log2d);
                (Some(n), None)
            } else {
                (None, Some("B1bar or B2bar vanishes".to_string()))
            };
            Ok(RateConstants {
                c0,
                c1,
                n_threshold,
                threshold_note,
            })
        }
        Regime::Source | Regime::SourceCapacity => {
            let r = source_exponent(params, regime)?;
            let alpha = match regime {
                Regime::SourceCapacity => capacity_exponent(params, regime)?,
                _ => 1.0,
            };
            let q = match regime {
                Regime::SourceCapacity => need(params.q, "q", regime)?,
                _ => need(params.b1_star, "b1_star", regime)?,
            };
            let l = need_positive(params.l_norm, "l_norm", regime)?;
            let a_exp = alpha * (1.0 + 2.0 * r);
            let gamma = a_exp / (1.0 + a_exp);
            let c1 = 8.0 * 256f64.powf(gamma) * (q.powf(gamma) * l.powf(1.0 - gamma)).powi(2);
            let (n_threshold, threshold_note) = refined_threshold(params, regime, r, alpha, q, l, delta)?;
            Ok(RateConstants {
                c0,
                c1,
                n_threshold,
                threshold_note,
            })
        }
    }
}

fn refined_threshold(
    params: &RegimeParams,
    regime: Regime,
    r: f64,
    alpha: f64,
    q: f64,
    l: f64,
    delta: f64,
) -> Result<(Option<f64>, Option<String>)> {
    let b2 = need(params.b2_star, "b2_star", regime)?;
    let r_cert = need(params.r_cert, "r_cert", regime)?;
    let q_star = need(params.q_star_sq, "q_star_sq", regime)?.sqrt();
    if q <= 0.0 {
        return Ok((None, Some("capacity constant Q vanishes".into())));
    }
    let beta = alpha / (1.0 + alpha * (1.0 + 2.0 * r));
    let log2d = (2.0 / delta).ln();
    let lambda0 = if r_cert == 0.0 {
        1.0
    } else {
        (2.0 * l * r_cert * log2d).powf(-1.0 / r).min(1.0)
    };
    let lambda1 = if q_star > 0.0 {
        (q / q_star).powf(2.0 * alpha)
    } else {
        f64::INFINITY
    };
    let a = b2 * l.powf(2.0 * beta) / q.powf(2.0 * beta);
    let first = 256.0 * q * q / (l * l) * b2.min(lambda0).min(lambda1).powf(-1.0 / beta);
    let k = 1.0 / (1.0 - beta);
    let second = (1296.0 * k * a * (5184.0 * k * a * a / delta).ln()).powf(k);
    Ok((Some(first.max(second)), None))
}

/// What a rate experiment draws and where.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub population: FinitePopulation,
    pub regime: Regime,
    pub params: RegimeParams,
    pub n_grid: Vec<u64>,
    pub replicates: usize,
    pub delta: f64,
    pub seed: u64,
    pub lambda_override: Option<Vec<f64>>,
    /// Smallest grid points left out of the slope fit.
    pub burn_in: usize,
    pub solver: SolverConfig,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        validate_delta(self.delta)?;
        if self.n_grid.is_empty() || self.n_grid[0] == 0 {
            return Err(Error::InvalidArgument(
                "n_grid must be nonempty with n >= 1".into(),
            ));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "n_grid must be strictly increasing".into(),
            ));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidArgument("replicates must be >= 1".into()));
        }
        if let Some(lambdas) = &self.lambda_override {
            if lambdas.len() != self.n_grid.len() {
                return Err(Error::InvalidArgument(format!(
                    "lambda_override has {} entries for {} grid points",
                    lambdas.len(),
                    self.n_grid.len()
                )));
            }
            if lambdas.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
                return Err(Error::InvalidArgument(
                    "lambda_override entries must be > 0".into(),
                ));
            }
        }
        self.solver.validate()
    }
}

/// Exact population-side quantities at one `(n, lambda)` grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub n: u64,
    pub lambda: f64,
    pub lambda_clamped: bool,
    pub bias: f64,
    pub df: f64,
    pub dikin_radius: f64,
    pub constants: Constants,
    /// `Bias <= r_lambda(theta*)/2`; the small-constant branch, taken at equality.
    pub small_branch: bool,
    /// `n` required by the first and second sample-size conditions of the general bound.
    pub guard_hessian: f64,
    pub guard_variance: f64,
    pub guard_ok: bool,
    pub bound_rhs: f64,
}

/// General bound at `(n, lambda)`:
/// `C_bias Bias^2 + C_var (df v Q*^2)/n log(2/delta)`, with its sample-size guards.
pub fn general_bound(
    pop: &FinitePopulation,
    sol: &mut PopulationSolution,
    n: u64,
    lambda: f64,
    delta: f64,
    config: &SolverConfig,
) -> Result<GridPoint> {
    validate_delta(delta)?;
    let constants = pop.constants_at(sol, lambda, config)?;
    let bias = sol.bias(lambda)?;
    let df = sol.df(lambda)?;
    let dikin_radius = pop.dikin_radius(&sol.theta_star, lambda)?;
    let b2 = sol.local.b2_star;
    let spread = df.max(sol.local.q_star_sq);
    let log2d = (2.0 / delta).ln();
    let guard_hessian = constants.tri1 * b2 / lambda
        * (8.0 * constants.box1 * constants.box1 * b2 / (lambda * delta)).ln();
    let guard_variance = if dikin_radius.is_infinite() {
        0.0
    } else {
        constants.tri2 * spread / (dikin_radius * dikin_radius) * log2d
    };
    let nf = n as f64;
    Ok(GridPoint {
        n,
        lambda,
        lambda_clamped: false,
        bias,
        df,
        dikin_radius,
        small_branch: bias <= dikin_radius / 2.0,
        guard_ok: lambda <= b2 && nf >= guard_hessian && nf >= guard_variance,
        guard_hessian,
        guard_variance,
        bound_rhs: constants.c_bias * bias * bias + constants.c_var * spread / nf * log2d,
        constants,
    })
}

/// One `(n, replicate)` draw.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellRecord {
    pub n: u64,
    pub replicate: usize,
    pub lambda: f64,
    /// `L(theta_hat) - L(theta*)`; NaN when the solve failed.
    pub excess_risk: f64,
    pub bound_rhs: f64,
    pub guard_ok: bool,
    pub seed: u64,
    pub error: Option<String>,
}

impl CellRecord {
    pub fn violates(&self) -> bool {
        self.error.is_none() && self.excess_risk > self.bound_rhs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NSummary {
    pub point: GridPoint,
    pub mean_excess_risk: f64,
    pub solved: usize,
    pub failures: usize,
    pub violations: usize,
    pub violation_freq: f64,
    /// `2 delta + 3 sigma`; asserted only where `guard_ok`.
    pub violation_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub regime: Regime,
    pub delta: f64,
    pub replicates: usize,
    pub theoretical_exponent: f64,
    /// Minus the slope of log mean excess risk against log n; absent with fewer than
    /// two usable grid points.
    pub fitted_exponent: Option<f64>,
    pub fit_residual: Option<f64>,
    pub fit_points: usize,
    pub burn_in: usize,
    pub constants: RateConstants,
    pub per_n: Vec<NSummary>,
    pub cells: Vec<CellRecord>,
    pub failures: usize,
}

impl RateReport {
    /// Grid points where the guard holds but violations exceed `2 delta + 3 sigma`.
    pub fn guarded_frequency_failures(&self) -> Vec<u64> {
        self.per_n
            .iter()
            .filter(|s| s.point.guard_ok && s.violation_freq > s.violation_tolerance)
            .map(|s| s.point.n)
            .collect()
    }
}

fn empirical_weights(counts: &[u64]) -> Vec<f64> {
    counts.iter().map(|c| *c as f64).collect()
}

fn run_cell(
    plan: &ExperimentPlan,
    point: &GridPoint,
    n_index: usize,
    replicate: usize,
    optimum: f64,
) -> Result<CellRecord> {
    let seed = derive_seed(plan.seed, n_index as u64, replicate as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pop = &plan.population;
    let counts = draw_counts(pop.weights(), point.n, &mut rng)?;
    let weights = empirical_weights(&counts);
    let mut record = CellRecord {
        n: point.n,
        replicate,
        lambda: point.lambda,
        excess_risk: f64::NAN,
        bound_rhs: point.bound_rhs,
        guard_ok: point.guard_ok,
        seed,
        error: None,
    };
    match solve_erm(pop.atoms(), &weights, pop.loss(), point.lambda, &plan.solver) {
        Ok(result) => record.excess_risk = pop.risk(&result.theta_hat, 0.0)? - optimum,
        Err(e @ (Error::NonConvergence { .. } | Error::Divergence { .. })) => {
            record.error = Some(e.to_string())
        }
        Err(e) => return Err(e),
    }
    Ok(record)
}

/// Draw, solve and compare every `(n, replicate)` cell of the plan.
///
/// Cells run in parallel with seeds derived from `(seed, n index, replicate)` and are
/// assembled by key, so the report is bitwise reproducible.
pub fn run_rate_experiment(plan: &ExperimentPlan) -> Result<RateReport> {
    plan.validate()?;
    let pop = &plan.population;
    let mut sol = pop.solve(&plan.solver)?;
    let optimum = pop.risk(&sol.theta_star, 0.0)?;

    let mut points = Vec::with_capacity(plan.n_grid.len());
    for (i, &n) in plan.n_grid.iter().enumerate() {
        let (lambda, clamped) = match &plan.lambda_override {
            Some(l) => (l[i], false),
            None => {
                let s = lambda_schedule(plan.regime, n, &plan.params, plan.delta)?;
                (s.lambda, s.clamped)
            }
        };
        let mut point = general_bound(pop, &mut sol, n, lambda, plan.delta, &plan.solver)?;
        point.lambda_clamped = clamped;
        points.push(point);
    }

    let keys: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|i| (0..plan.replicates).map(move |r| (i, r)))
        .collect();
    let cells: Vec<CellRecord> = keys
        .par_iter()
        .map(|&(i, r)| run_cell(plan, &points[i], i, r, optimum))
        .collect::<Result<_>>()?;

    let p = (2.0 * plan.delta).min(1.0);
    let sigma = binomial_sigma(p, plan.replicates);
    let mut per_n = Vec::with_capacity(points.len());
    for (i, point) in points.into_iter().enumerate() {
        let row = &cells[i * plan.replicates..(i + 1) * plan.replicates];
        let solved: Vec<&CellRecord> = row.iter().filter(|c| c.error.is_none()).collect();
        let violations = solved.iter().filter(|c| c.violates()).count();
        let mean = if solved.is_empty() {
            f64::NAN
        } else {
            solved.iter().map(|c| c.excess_risk).sum::<f64>() / solved.len() as f64
        };
        per_n.push(NSummary {
            point,
            mean_excess_risk: mean,
            solved: solved.len(),
            failures: row.len() - solved.len(),
            violations,
            violation_freq: if solved.is_empty() {
                f64::NAN
            } else {
                violations as f64 / solved.len() as f64
            },
            violation_tolerance: p + 3.0 * sigma,
        });
    }

    let (xs, ys): (Vec<f64>, Vec<f64>) = per_n
        .iter()
        .skip(plan.burn_in)
        .filter(|s| s.mean_excess_risk > 0.0 && s.mean_excess_risk.is_finite())
        .map(|s| (s.point.n as f64, s.mean_excess_risk))
        .unzip();
    let fit = loglog_fit(&xs, &ys);

    let (r, alpha) = (plan.params.r.unwrap_or(0.5), plan.params.alpha.unwrap_or(1.0));
    let theoretical_exponent = match plan.regime {
        Regime::None => 0.5,
        Regime::Source => theoretical_rate(Regime::Source, r, 1.0)?,
        Regime::SourceCapacity => theoretical_rate(Regime::SourceCapacity, r, alpha)?,
    };
    let failures = cells.iter().filter(|c| c.error.is_some()).count();
    Ok(RateReport {
        regime: plan.regime,
        delta: plan.delta,
        replicates: plan.replicates,
        theoretical_exponent,
        fitted_exponent: fit.map(|f| -f.0),
        fit_residual: fit.map(|f| f.2),
        fit_points: xs.len(),
        burn_in: plan.burn_in,
        constants: rate_constants(plan.regime, &plan.params, plan.delta)?,
        per_n,
        cells,
        failures,
    })
}

/// Outcome of a concentration experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrequencyRecord {
    pub n: u64,
    pub lambda: f64,
    pub delta: f64,
    pub replicates: usize,
    /// Smallest `n` the lemma's premise admits.
    pub premise_threshold: f64,
    /// Set when `n` is below the premise or other preconditions fail; nothing was drawn.
    pub skipped: Option<String>,
    pub successes: usize,
    pub frequency: f64,
    /// `1 - delta - 3 sigma`.
    pub required: f64,
    /// Largest observed left-hand side over the replicates.
    pub worst_statistic: f64,
}

impl FrequencyRecord {
    pub fn passed(&self) -> bool {
        self.skipped.is_none() && self.frequency >= self.required
    }

    fn skipped(n: u64, lambda: f64, delta: f64, replicates: usize, threshold: f64, why: String) -> Self {
        FrequencyRecord {
            n,
            lambda,
            delta,
            replicates,
            premise_threshold: threshold,
            skipped: Some(why),
            successes: 0,
            frequency: f64::NAN,
            required: f64::NAN,
            worst_statistic: f64::NAN,
        }
    }
}

fn check_frequency_inputs(n: u64, lambda: f64, replicates: usize, delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidArgument("delta must lie in (0, 1]".into()));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be > 0, got {lambda}"
        )));
    }
    if n == 0 || replicates == 0 {
        return Err(Error::InvalidArgument(
            "n and replicates must be >= 1".into(),
        ));
    }
    Ok(())
}

/// `||H_lambda^{1/2} Hhat_lambda^{-1/2}||^2` at `theta` for empirical `weights` over the
/// population atoms.
pub fn hessian_ratio(
    pop: &FinitePopulation,
    theta: &DVector<f64>,
    lambda: f64,
    weights: &[f64],
) -> Result<f64> {
    let total: f64 = weights.iter().sum();
    let w: Vec<f64> = weights.iter().map(|x| x / total).collect();
    let hess = pop.hessian(theta, lambda)?;
    let hess_hat = WeightedRisk::new(pop.atoms(), &w, pop.loss(), lambda)?.hessian(theta)?;
    max_generalized_eigenvalue(&hess, &hess_hat)
}

fn frequency(successes: usize, replicates: usize, delta: f64) -> (f64, f64) {
    let freq = successes as f64 / replicates as f64;
    (freq, 1.0 - delta - 3.0 * binomial_sigma(1.0 - delta, replicates))
}

/// Frequency of `H_lambda(theta) <= 2 Hhat_lambda(theta)` over `replicates` draws of size
/// `n`, at `n >= 24 B2(theta)/lambda log(8 B2(theta)/(lambda delta))`.
pub fn hessian_concentration_experiment(
    pop: &FinitePopulation,
    theta: &DVector<f64>,
    lambda: f64,
    n: u64,
    replicates: usize,
    delta: f64,
    seed: u64,
) -> Result<FrequencyRecord> {
    check_frequency_inputs(n, lambda, replicates, delta)?;
    let b2 = pop
        .atoms()
        .iter()
        .map(|z| pop.loss().hessian(z, theta).map(|h| h.trace()))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let threshold = 24.0 * b2 / lambda * (8.0 * b2 / (lambda * delta)).ln().max(0.0);
    if (n as f64) < threshold {
        return Ok(FrequencyRecord::skipped(
            n,
            lambda,
            delta,
            replicates,
            threshold,
            format!("n = {n} is below the premise threshold {threshold:.6e}"),
        ));
    }
    let stats: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, rep as u64));
            let counts = draw_counts(pop.weights(), n, &mut rng)?;
            hessian_ratio(pop, theta, lambda, &empirical_weights(&counts))
        })
        .collect::<Result<_>>()?;
    let successes = stats.iter().filter(|s| **s <= 2.0).count();
    let (freq, required) = frequency(successes, replicates, delta);
    Ok(FrequencyRecord {
        n,
        lambda,
        delta,
        replicates,
        premise_threshold: threshold,
        skipped: None,
        successes,
        frequency: freq,
        required,
        worst_statistic: stats.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// `||grad Lhat_lambda(theta*_lambda)||_{H_lambda^{-1}(theta*_lambda)}` for empirical
/// `weights` over the population atoms.
pub fn gradient_deviation(
    pop: &FinitePopulation,
    theta_lambda: &DVector<f64>,
    lambda: f64,
    weights: &[f64],
) -> Result<f64> {
    let total: f64 = weights.iter().sum();
    let w: Vec<f64> = weights.iter().map(|x| x / total).collect();
    let chol = cholesky(&pop.hessian(theta_lambda, lambda)?)?;
    let grad_hat = WeightedRisk::new(pop.atoms(), &w, pop.loss(), lambda)?.gradient(theta_lambda)?;
    Ok(inv_quad(&chol, &grad_hat).sqrt())
}

/// Frequency of
/// `||grad Lhat_lambda(theta*_lambda)||_{H^{-1}} <= 2 sqrt(3)/k Bias + 2 box1 sqrt((df v Q*^2) log(2/delta) / n)`
/// at `n >= k^2 box2^2 B2*/lambda log(2/delta)`, `k >= 4`, `lambda <= B2*`.
#[allow(clippy::too_many_arguments)]
pub fn gradient_concentration_experiment(
    pop: &FinitePopulation,
    sol: &mut PopulationSolution,
    lambda: f64,
    k: f64,
    n: u64,
    replicates: usize,
    delta: f64,
    seed: u64,
    config: &SolverConfig,
) -> Result<FrequencyRecord> {
    check_frequency_inputs(n, lambda, replicates, delta)?;
    if !(k >= 4.0 && k.is_finite()) {
        return Err(Error::InvalidArgument(format!("k = {k} must be >= 4")));
    }
    let c = pop.constants_at(sol, lambda, config)?;
    let b2 = sol.local.b2_star;
    let log2d = (2.0 / delta).ln();
    let threshold = k * k * c.box2 * c.box2 * b2 / lambda * log2d;
    if lambda > b2 {
        return Ok(FrequencyRecord::skipped(
            n,
            lambda,
            delta,
            replicates,
            threshold,
            format!("lambda = {lambda} exceeds B2* = {b2}"),
        ));
    }
    if (n as f64) < threshold {
        return Ok(FrequencyRecord::skipped(
            n,
            lambda,
            delta,
            replicates,
            threshold,
            format!("n = {n} is below the premise threshold {threshold:.6e}"),
        ));
    }
    let theta_lambda = sol.ensure_regularized(pop, lambda, config)?.clone();
    let spread = sol.df(lambda)?.max(sol.local.q_star_sq);
    let rhs = 2.0 * 3f64.sqrt() / k * sol.bias(lambda)?
        + 2.0 * c.box1 * (spread * log2d / n as f64).sqrt();
    let stats: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1, rep as u64));
            let counts = draw_counts(pop.weights(), n, &mut rng)?;
            gradient_deviation(pop, &theta_lambda, lambda, &empirical_weights(&counts))
        })
        .collect::<Result<_>>()?;
    let successes = stats.iter().filter(|s| **s <= rhs).count();
    let (freq, required) = frequency(successes, replicates, delta);
    Ok(FrequencyRecord {
        n,
        lambda,
        delta,
        replicates,
        premise_threshold: threshold,
        skipped: None,
        successes,
        frequency: freq,
        required,
        worst_statistic: stats.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scloss::{LossModel, Sample};
    use approx::assert_relative_eq;

    fn p1() -> FinitePopulation {
        FinitePopulation::new(
            vec![Sample::scalar(&[1.0], 0.0), Sample::scalar(&[1.0], 2.0)],
            vec![0.5, 0.5],
            LossModel::Square,
        )
        .unwrap()
    }

    fn p2() -> FinitePopulation {
        FinitePopulation::new(
            vec![Sample::scalar(&[1.0], 1.0), Sample::scalar(&[1.0], -1.0)],
            vec![0.75, 0.25],
            LossModel::Logistic,
        )
        .unwrap()
    }

    #[test]
    fn basic_schedule_example() {
        let params = RegimeParams {
            b1_bar: Some(1.0),
            r_cert: Some(1.0),
            ..Default::default()
        };
        let s = lambda_schedule(Regime::None, 1024, &params, 0.25).unwrap();
        let expected = 16.0 * (8f64.ln() / 1024.0).sqrt();
        assert_relative_eq!(s.lambda, expected, epsilon = 1e-15);
        assert!((s.lambda - 0.72101344330044).abs() < 1e-12);
        // The quoted 0.7207 is accurate to about 3e-4.
        assert!((s.lambda - 0.7207).abs() < 5e-4);
        assert!(!s.clamped);
    }

    #[test]
    fn source_schedule_unit_base() {
        // C0 = 256 (B1*/L)^2 = n makes the base exactly one.
        let params = RegimeParams {
            b1_star: Some(1.0),
            l_norm: Some(16.0),
            r: Some(0.5),
            ..Default::default()
        };
        assert_eq!(lambda_schedule(Regime::Source, 1, &params, 0.1).unwrap().lambda, 1.0);
    }

    #[test]
    fn capacity_schedule_exponent_tends_to_half() {
        let params = RegimeParams {
            q: Some(1.0),
            l_norm: Some(16.0),
            r: Some(0.5),
            alpha: Some(1e9),
            ..Default::default()
        };
        let n = 1u64 << 20;
        let s = lambda_schedule(Regime::SourceCapacity, n, &params, 0.1).unwrap();
        assert_relative_eq!(s.lambda, (1.0 / n as f64).sqrt(), max_relative = 1e-6);
    }

    #[test]
    fn schedule_is_clamped_and_decreasing() {
        let params = RegimeParams {
            b1_star: Some(50.0),
            b2_star: Some(1.0),
            l_norm: Some(1.0),
            r: Some(0.25),
            ..Default::default()
        };
        let small = lambda_schedule(Regime::Source, 2, &params, 0.1).unwrap();
        assert!(small.clamped && small.lambda == 1.0 && small.unclamped > 1.0);
        for regime in [Regime::None, Regime::Source, Regime::SourceCapacity] {
            let params = RegimeParams {
                b1_bar: Some(0.3),
                r_cert: Some(2.0),
                b1_star: Some(0.3),
                q: Some(0.7),
                l_norm: Some(2.0),
                r: Some(0.5),
                alpha: Some(2.0),
                ..Default::default()
            };
            let mut prev = f64::INFINITY;
            for k in 1..30 {
                let l = lambda_schedule(regime, 1 << k, &params, 0.1).unwrap().lambda;
                assert!(l < prev);
                prev = l;
            }
        }
    }

    #[test]
    fn missing_params_are_reported() {
        let err = lambda_schedule(Regime::Source, 10, &RegimeParams::default(), 0.1).unwrap_err();
        assert!(err.to_string().contains("missing parameter"));
        assert!(lambda_schedule(Regime::None, 10, &RegimeParams::default(), 0.7)
            .unwrap_err()
            .to_string()
            .contains("delta must lie in (0, 0.5]"));
    }

    #[test]
    fn theoretical_rates() {
        assert_eq!(theoretical_rate(Regime::None, 0.0, 1.0).unwrap(), 0.5);
        assert_relative_eq!(theoretical_rate(Regime::Source, 0.5, 1.0).unwrap(), 2.0 / 3.0);
        assert_relative_eq!(
            theoretical_rate(Regime::SourceCapacity, 0.5, 4.0).unwrap(),
            8.0 / 9.0
        );
        assert_relative_eq!(
            theoretical_rate(Regime::SourceCapacity, 0.5, 2.0).unwrap(),
            0.8
        );
        assert!(theoretical_rate(Regime::Source, 0.8, 1.0).is_err());
    }

    #[test]
    fn corollary_constants() {
        let basic = RegimeParams {
            b1_bar: Some(1.0),
            b2_bar: Some(1.0),
            r_cert: Some(1.0),
            theta_norm: Some(1.0),
            ..Default::default()
        };
        let c = rate_constants(Regime::None, &basic, 0.1).unwrap();
        assert_eq!((c.c0, c.c1), (16.0, 48.0));
        assert!(c.n_threshold.unwrap() > 0.0);

        let source = RegimeParams {
            b1_star: Some(1.0),
            b2_star: Some(1.0),
            q_star_sq: Some(1.0),
            l_norm: Some(1.0),
            r_cert: Some(0.0),
            r: Some(0.5),
            ..Default::default()
        };
        let c = rate_constants(Regime::Source, &source, 0.1).unwrap();
        assert_relative_eq!(c.c1, 8.0 * 256f64.powf(2.0 / 3.0), epsilon = 1e-12);
        assert!((c.c1 - 322.5397887730875).abs() < 1e-9);
        // The quoted 323.0 is accurate to about 0.15%.
        assert!((c.c1 / 323.0 - 1.0).abs() < 2e-3);
        // With R = 0 the first term uses lambda_0 = 1: 256 (1 ^ 1 ^ 1)^{-3} = 256.
        let beta: f64 = 1.0 / 3.0;
        let k = 1.0 / (1.0 - beta);
        let second = (1296.0 * k * (5184.0 * k / 0.1).ln()).powf(k);
        assert_relative_eq!(c.n_threshold.unwrap(), second.max(256.0), epsilon = 1e-9);
    }

    fn plan(pop: FinitePopulation, n_grid: Vec<u64>, replicates: usize) -> ExperimentPlan {
        let sol = pop.solve(&SolverConfig::default()).unwrap();
        let params = RegimeParams::from_solution(&pop, &sol, Some(0.5), Some(1.0)).unwrap();
        ExperimentPlan {
            population: pop,
            regime: Regime::Source,
            params,
            n_grid,
            replicates,
            delta: 0.1,
            seed: 7,
            lambda_override: Some(vec![0.1; 1]),
            burn_in: 0,
            solver: SolverConfig::default(),
        }
    }

    #[test]
    fn single_cell_report() {
        let report = run_rate_experiment(&plan(p2(), vec![50], 1)).unwrap();
        assert_eq!(report.cells.len(), 1);
        assert_eq!(report.per_n.len(), 1);
        assert!(report.fitted_exponent.is_none());
        assert!(report.cells[0].excess_risk >= -1e-12);
    }

    #[test]
    fn experiments_are_reproducible() {
        let mut p = plan(p2(), vec![16, 64, 256], 20);
        p.lambda_override = None;
        let a = run_rate_experiment(&p).unwrap();
        let b = run_rate_experiment(&p).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        assert!(a.cells.iter().all(|c| c.excess_risk >= -1e-12));
        assert!(a.fitted_exponent.unwrap().is_finite());
    }

    #[test]
    fn plan_validation() {
        let mut p = plan(p1(), vec![4, 4], 1);
        p.lambda_override = None;
        assert!(run_rate_experiment(&p).is_err());
        p.n_grid = vec![4, 8];
        p.delta = 0.7;
        assert!(run_rate_experiment(&p).is_err());
    }

    #[test]
    fn exact_measure_makes_concentration_trivial() {
        let pop = p2();
        let theta = DVector::from_vec(vec![0.4]);
        assert_relative_eq!(
            hessian_ratio(&pop, &theta, 0.3, pop.weights()).unwrap(),
            1.0,
            epsilon = 1e-14
        );
        let theta_lambda = pop.minimize(0.3, &SolverConfig::with_tol(1e-12)).unwrap();
        assert!(gradient_deviation(&pop, &theta_lambda, 0.3, pop.weights()).unwrap() < 1e-10);
    }

    #[test]
    fn heavy_regularization_always_concentrates() {
        // lambda >= B2 bounds the ratio by (B2 + lambda)/lambda <= 2.
        let pop = p2();
        let theta = DVector::from_vec(vec![0.0]);
        let rec = hessian_concentration_experiment(&pop, &theta, 0.5, 2000, 200, 0.1, 1).unwrap();
        assert!(rec.skipped.is_none());
        assert_eq!(rec.successes, 200);
        assert!(rec.passed());
    }

    #[test]
    fn premise_shortfall_is_skipped() {
        let pop = p2();
        let theta = DVector::from_vec(vec![0.0]);
        let rec = hessian_concentration_experiment(&pop, &theta, 1e-3, 10, 5, 0.1, 1).unwrap();
        assert!(rec.skipped.is_some() && !rec.passed());
        assert!(rec.premise_threshold > 10.0);
    }

    #[test]
    fn gradient_lemma_on_square_population() {
        let pop = p1();
        let cfg = SolverConfig::with_tol(1e-12);
        let mut sol = pop.solve(&cfg).unwrap();
        let lambda = 0.25;
        let k = 4.0;
        // box2 = 2 at t = 0, B2* = 1.
        let n = (k * k * 4.0 / lambda * 20f64.ln()).ceil() as u64;
        let rec = gradient_concentration_experiment(&pop, &mut sol, lambda, k, n, 500, 0.1, 3, &cfg)
            .unwrap();
        assert!(rec.passed(), "{rec:?}");
    }
}
