//! Property checks of the self-concordance inequalities and the localization results,
//! on arbitrary measures and parameter pairs, plus randomized suites over them.

use std::f64::consts::LN_2;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::Constants;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, inv_quad, max_generalized_eigenvalue, quad};
use crate::objective::{Objective, WeightedRisk};
use crate::population::{FinitePopulation, PopulationSolution};
use crate::sampling::{derive_seed, draw_counts};
use crate::scloss::{LossKind, LossModel, Sample};
use crate::solver::{solve_erm, SolverConfig};
use crate::special::{phi_lower, phi_upper, psi};

/// Tolerance on the normalized margin.
pub const RELATIVE_SLACK: f64 = 1e-9;

/// The inequality `lhs <= rhs`, with its margin normalized by `max(1, |lhs|, |rhs|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Comparison {
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
}

impl Comparison {
    pub fn new(lhs: f64, rhs: f64) -> Self {
        let margin = if rhs == f64::INFINITY && lhs.is_finite() {
            1.0
        } else {
            (rhs - lhs) / 1f64.max(lhs.abs()).max(rhs.abs())
        };
        Comparison { lhs, rhs, margin }
    }

    /// False for NaN margins.
    pub fn holds(&self) -> bool {
        self.margin >= -RELATIVE_SLACK
    }
}

static UNIT_WEIGHT: [f64; 1] = [1.0];

/// A probability measure on finitely many atoms: a population, one sample, or an
/// empirical measure.
#[derive(Debug, Clone, Copy)]
pub struct Measure<'a> {
    atoms: &'a [Sample],
    weights: &'a [f64],
    loss: &'a LossModel,
}

impl<'a> Measure<'a> {
    pub fn population(pop: &'a FinitePopulation) -> Self {
        Measure {
            atoms: pop.atoms(),
            weights: pop.weights(),
            loss: pop.loss(),
        }
    }

    pub fn single(z: &'a Sample, loss: &'a LossModel) -> Self {
        Measure {
            atoms: std::slice::from_ref(z),
            weights: &UNIT_WEIGHT,
            loss,
        }
    }

    /// Weights must be nonnegative and sum to one; zero-weight atoms are ignored.
    pub fn weighted(atoms: &'a [Sample], weights: &'a [f64], loss: &'a LossModel) -> Result<Self> {
        WeightedRisk::new(atoms, weights, loss, 0.0)?;
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "weights sum to {total}, not 1"
            )));
        }
        Ok(Measure {
            atoms,
            weights,
            loss,
        })
    }

    fn risk(&self, lambda: f64) -> Result<WeightedRisk<'a>> {
        WeightedRisk::new(self.atoms, self.weights, self.loss, lambda)
    }

    /// `sup_{z in supp} sup_{g in phi(z)} |direction . g|`.
    pub fn seminorm(&self, direction: &DVector<f64>) -> f64 {
        self.atoms
            .iter()
            .zip(self.weights)
            .filter(|(_, w)| **w > 0.0)
            .map(|(z, _)| self.loss.sc_factor_unchecked(z, direction))
            .fold(0.0, f64::max)
    }

    fn check_pair(&self, theta0: &DVector<f64>, theta1: &DVector<f64>) -> Result<DVector<f64>> {
        let d = self.atoms[0].dim();
        for theta in [theta0, theta1] {
            if theta.len() != d {
                return Err(Error::Dimension {
                    expected: d,
                    got: theta.len(),
                });
            }
        }
        Ok(theta1 - theta0)
    }
}

fn require_nonnegative(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    Ok(())
}

fn require_positive(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be > 0, got {lambda}"
        )));
    }
    Ok(())
}

/// `H_lambda(theta1) <= exp(m) H_lambda(theta0)`, as `mu_max(H1, H0) <= exp(m)`.
pub fn check_hess_control(
    measure: &Measure<'_>,
    theta0: &DVector<f64>,
    theta1: &DVector<f64>,
    lambda: f64,
) -> Result<Comparison> {
    require_nonnegative(lambda)?;
    let step = measure.check_pair(theta0, theta1)?;
    let risk = measure.risk(lambda)?;
    let h0 = risk.hessian(theta0)?;
    let h1 = risk.hessian(theta1)?;
    let mu = max_generalized_eigenvalue(&h1, &h0)?;
    Ok(Comparison::new(mu, measure.seminorm(&step).exp()))
}

/// `(||grad(theta1) - grad(theta0)||_{H0^{-1}}, ||theta1 - theta0||_{H0}, m)`.
fn gradient_gap(
    measure: &Measure<'_>,
    theta0: &DVector<f64>,
    theta1: &DVector<f64>,
    lambda: f64,
) -> Result<(f64, f64, f64)> {
    require_positive(lambda)?;
    let step = measure.check_pair(theta0, theta1)?;
    let risk = measure.risk(lambda)?;
    let (_, g0, h0) = risk.second_order(theta0)?;
    let g1 = risk.gradient(theta1)?;
    let chol = cholesky(&h0)?;
    let gap = inv_quad(&chol, &(g1 - g0)).sqrt();
    let dist = quad(&h0, &step).max(0.0).sqrt();
    Ok((gap, dist, measure.seminorm(&step)))
}

/// `phi_lower(m) ||theta1 - theta0||_{H0} <= ||grad gap||_{H0^{-1}}`.
pub fn check_grad_lower(
    measure: &Measure<'_>,
    theta0: &DVector<f64>,
    theta1: &DVector<f64>,
    lambda: f64,
) -> Result<Comparison> {
    let (gap, dist, m) = gradient_gap(measure, theta0, theta1, lambda)?;
    Ok(Comparison::new(phi_lower(m) * dist, gap))
}

/// `||grad gap||_{H0^{-1}} <= phi_upper(m) ||theta1 - theta0||_{H0}`.
pub fn check_grad_upper(
    measure: &Measure<'_>,
    theta0: &DVector<f64>,
    theta1: &DVector<f64>,
    lambda: f64,
) -> Result<Comparison> {
    let (gap, dist, m) = gradient_gap(measure, theta0, theta1, lambda)?;
    Ok(Comparison::new(gap, phi_upper(m) * dist))
}

/// Bregman gap `L(theta1) - L(theta0) - grad(theta0).(theta1 - theta0)` against
/// `psi(m) ||theta1 - theta0||^2_{H0}`.
pub fn check_value_bound(
    measure: &Measure<'_>,
    theta0: &DVector<f64>,
    theta1: &DVector<f64>,
    lambda: f64,
) -> Result<Comparison> {
    require_nonnegative(lambda)?;
    let step = measure.check_pair(theta0, theta1)?;
    let risk = measure.risk(lambda)?;
    let (v0, g0, h0) = risk.second_order(theta0)?;
    let v1 = risk.value(theta1)?;
    let bregman = v1 - v0 - g0.dot(&step);
    let m = measure.seminorm(&step);
    Ok(Comparison::new(bregman, psi(m) * quad(&h0, &step)))
}

/// `premise => conclusion`. The premise is decided exactly, the conclusion with slack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Implication {
    pub premise: Comparison,
    pub conclusion: Comparison,
}

impl Implication {
    pub fn premise_holds(&self) -> bool {
        self.premise.lhs <= self.premise.rhs
    }

    pub fn holds(&self) -> bool {
        !self.premise_holds() || self.conclusion.holds()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalizationRecord {
    pub population: Implication,
    pub empirical: Option<Implication>,
}

impl LocalizationRecord {
    pub fn holds(&self) -> bool {
        self.population.holds() && self.empirical.is_none_or(|e| e.holds())
    }
}

fn normalized_over(pop: &FinitePopulation, weights: &[f64]) -> Result<Vec<f64>> {
    if weights.len() != pop.atoms().len() {
        return Err(Error::Dimension {
            expected: pop.atoms().len(),
            got: weights.len(),
        });
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidArgument(
            "empirical weights must be nonnegative with positive sum".into(),
        ));
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

/// Localization at `theta`:
/// `||grad L_lambda(theta)||_{H^{-1}} <= r_lambda(theta)/2` implies
/// `t(theta - theta*_lambda) <= log 2`.
///
/// With `empirical` weights over the population atoms (for instance draw counts), also
/// checks the empirical version, whose premise carries the factor
/// `||Hhat^{-1/2} H^{1/2}||^2` and whose conclusion concerns the empirical minimizer.
/// Both seminorms are taken over the population support.
pub fn check_localization(
    pop: &FinitePopulation,
    theta: &DVector<f64>,
    lambda: f64,
    empirical: Option<&[f64]>,
    config: &SolverConfig,
) -> Result<LocalizationRecord> {
    require_positive(lambda)?;
    let (_, grad, hess) = pop.objective(lambda)?.second_order(theta)?;
    let chol = cholesky(&hess)?;
    let half_radius = pop.dikin_radius(theta, lambda)? / 2.0;
    let target = pop.minimize(lambda, config)?;
    let population = Implication {
        premise: Comparison::new(inv_quad(&chol, &grad).sqrt(), half_radius),
        conclusion: Comparison::new(pop.certificate_seminorm(&(theta - target)), LN_2),
    };
    let empirical = match empirical {
        None => None,
        Some(weights) => {
            let w = normalized_over(pop, weights)?;
            let risk = WeightedRisk::new(pop.atoms(), &w, pop.loss(), lambda)?;
            let (_, grad_hat, hess_hat) = risk.second_order(theta)?;
            let spread = max_generalized_eigenvalue(&hess, &hess_hat)?;
            let theta_hat = solve_erm(pop.atoms(), &w, pop.loss(), lambda, config)?.theta_hat;
            Some(Implication {
                premise: Comparison::new(inv_quad(&chol, &grad_hat).sqrt() * spread, half_radius),
                conclusion: Comparison::new(
                    pop.certificate_seminorm(&(theta - theta_hat)),
                    LN_2,
                ),
            })
        }
    };
    Ok(LocalizationRecord {
        population,
        empirical,
    })
}

/// The two cases bounding `t_lambda` and `t_tilde`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaRecord {
    pub lambda: f64,
    pub t: f64,
    pub t_tilde: f64,
    pub small_branch: bool,
    /// `R ||theta*||`.
    pub r_theta: f64,
    pub checks: Vec<Comparison>,
}

impl LemmaRecord {
    pub fn holds(&self) -> bool {
        self.checks.iter().all(Comparison::holds)
    }
}

/// If `t_tilde <= 1/2` then `t <= log 2`; otherwise `t_tilde <= R||theta*||` and
/// `t <= 2 R ||theta*||`.
pub fn check_lemma_tla(
    pop: &FinitePopulation,
    sol: &mut PopulationSolution,
    lambda: f64,
    config: &SolverConfig,
) -> Result<LemmaRecord> {
    let t = pop.t_lambda(sol, lambda, config)?;
    let t_tilde = pop.t_tilde(sol, lambda)?;
    let r_theta = sol.local.r * sol.theta_star.norm();
    let small_branch = t_tilde <= 0.5;
    let checks = if small_branch {
        vec![Comparison::new(t, LN_2)]
    } else {
        vec![
            Comparison::new(t_tilde, r_theta),
            Comparison::new(t, 2.0 * r_theta),
        ]
    };
    Ok(LemmaRecord {
        lambda,
        t,
        t_tilde,
        small_branch,
        r_theta,
        checks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecompositionRecord {
    pub lambda: f64,
    /// `||H^{1/2} Hhat^{-1/2}||^2 ||grad Lhat_lambda(theta*_lambda)||_{H^{-1}}`, all at
    /// `theta*_lambda`.
    pub var_hat: f64,
    /// `var_hat <= r_lambda(theta*_lambda) / 2`.
    pub guard: Comparison,
    pub applicable: bool,
    pub t_lambda: f64,
    /// Excess risk against `K_bias Bias^2 + K_var var_hat^2`; absent when not applicable.
    pub bound: Option<Comparison>,
}

impl DecompositionRecord {
    /// Not-applicable records never fail.
    pub fn holds(&self) -> bool {
        self.bound.is_none_or(|b| b.holds())
    }
}

/// Excess risk of `theta_hat`, the minimizer for the empirical `weights` over the
/// population atoms, against the analytic bias/variance decomposition.
pub fn check_decomposition_bound(
    pop: &FinitePopulation,
    sol: &mut PopulationSolution,
    lambda: f64,
    weights: &[f64],
    theta_hat: &DVector<f64>,
    config: &SolverConfig,
) -> Result<DecompositionRecord> {
    require_positive(lambda)?;
    let w = normalized_over(pop, weights)?;
    let theta_lambda = sol.ensure_regularized(pop, lambda, config)?.clone();
    let (_, _, hess) = pop.objective(lambda)?.second_order(&theta_lambda)?;
    let chol = cholesky(&hess)?;
    let risk = WeightedRisk::new(pop.atoms(), &w, pop.loss(), lambda)?;
    let (_, grad_hat, hess_hat) = risk.second_order(&theta_lambda)?;
    let var_hat =
        max_generalized_eigenvalue(&hess, &hess_hat)? * inv_quad(&chol, &grad_hat).sqrt();
    let guard = Comparison::new(var_hat, pop.dikin_radius(&theta_lambda, lambda)? / 2.0);
    let applicable = guard.lhs <= guard.rhs;
    let t_lambda = pop.t_lambda(sol, lambda, config)?;
    let bound = if applicable {
        let c = Constants::evaluate(t_lambda, pop.t_tilde(sol, lambda)?);
        let excess = pop.risk(theta_hat, 0.0)? - pop.risk(&sol.theta_star, 0.0)?;
        let bias = sol.bias(lambda)?;
        Some(Comparison::new(
            excess,
            c.k_bias * bias * bias + c.k_var * var_hat * var_hat,
        ))
    } else {
        None
    };
    Ok(DecompositionRecord {
        lambda,
        var_hat,
        guard,
        applicable,
        t_lambda,
        bound,
    })
}

fn gaussian_vector<R: Rng>(d: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Uniform draw from the ball of the given radius.
pub fn uniform_in_ball<R: Rng>(d: usize, radius: f64, rng: &mut R) -> DVector<f64> {
    let g = loop {
        let g = gaussian_vector(d, rng);
        if g.norm() > 1e-12 {
            break g;
        }
    };
    let scale = radius * rng.random::<f64>().powf(1.0 / d as f64);
    &g * (scale / g.norm())
}

/// Random population of at most 16 atoms, built so that the unregularized minimizer
/// exists: every context carries two labels (both signs for the logistic loss, every
/// label for the GLM) and there are at least `d` contexts.
pub fn random_population<R: Rng>(
    kind: LossKind,
    max_dim: usize,
    rng: &mut R,
) -> Result<FinitePopulation> {
    if !(1..=8).contains(&max_dim) {
        return Err(Error::InvalidArgument("max_dim must lie in 1..=8".into()));
    }
    let d = rng.random_range(1..=max_dim);
    let mut atoms = Vec::new();
    let loss = match kind {
        LossKind::SoftmaxGlm => {
            let labels = rng.random_range(2..=3usize);
            let contexts = rng.random_range(d..=d.max(16 / labels));
            for _ in 0..contexts {
                let features: Vec<DVector<f64>> =
                    (0..labels).map(|_| gaussian_vector(d, rng)).collect();
                for label in 0..labels {
                    atoms.push(Sample::Categorical {
                        features: features.clone(),
                        label,
                    });
                }
            }
            LossModel::softmax_uniform(labels)
        }
        scalar => {
            let contexts = rng.random_range(d..=8);
            for _ in 0..contexts {
                let features = gaussian_vector(d, rng);
                let labels = if scalar == LossKind::Logistic {
                    [1.0, -1.0]
                } else {
                    [
                        2.0 * rng.sample::<f64, _>(StandardNormal),
                        2.0 * rng.sample::<f64, _>(StandardNormal),
                    ]
                };
                for label in labels {
                    atoms.push(Sample::Scalar {
                        features: features.clone(),
                        label,
                    });
                }
            }
            match scalar {
                LossKind::Square => LossModel::Square,
                LossKind::HuberSqrt => LossModel::HuberSqrt,
                LossKind::HuberLogCosh => LossModel::HuberLogCosh,
                _ => LossModel::Logistic,
            }
        }
    };
    let raw: Vec<f64> = atoms.iter().map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / total).collect();
    FinitePopulation::new(atoms, weights, loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    /// Trials with `lambda` log-uniform in `[1e-3, 1]`, per loss kind.
    pub trials: usize,
    /// Additional `lambda = 0` trials on population measures (Hessian and value checks).
    pub zero_lambda_trials: usize,
    pub seed: u64,
    pub max_dim: usize,
    pub theta_radius: f64,
    pub keep_log: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            trials: 10_000,
            zero_lambda_trials: 2_000,
            seed: 0,
            max_dim: 4,
            theta_radius: 3.0,
            keep_log: false,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials + self.zero_lambda_trials == 0 {
            return Err(Error::InvalidArgument("suite needs at least one trial".into()));
        }
        if !(1..=8).contains(&self.max_dim) {
            return Err(Error::InvalidArgument("max_dim must lie in 1..=8".into()));
        }
        if !(self.theta_radius > 0.0 && self.theta_radius.is_finite()) {
            return Err(Error::InvalidArgument("theta_radius must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    Population,
    Single,
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub seed: u64,
    pub lambda: f64,
    pub measure: MeasureKind,
    pub comparison: Comparison,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub trials: usize,
    pub violations: usize,
    /// Trials whose inputs were rejected (a singular Hessian at `lambda = 0`).
    pub skipped: usize,
    /// Minimum normalized margin.
    pub worst_margin: f64,
    pub max_abs_margin: f64,
    pub per_trial_log: Option<Vec<TrialRecord>>,
}

impl CheckReport {
    fn collect(records: impl Iterator<Item = Option<TrialRecord>>, keep_log: bool) -> Self {
        let mut report = CheckReport {
            trials: 0,
            violations: 0,
            skipped: 0,
            worst_margin: f64::INFINITY,
            max_abs_margin: 0.0,
            per_trial_log: keep_log.then(Vec::new),
        };
        for record in records {
            let Some(r) = record else {
                report.skipped += 1;
                continue;
            };
            report.trials += 1;
            if !r.comparison.holds() {
                report.violations += 1;
            }
            let m = r.comparison.margin;
            report.worst_margin = if m.is_nan() { m } else { report.worst_margin.min(m) };
            report.max_abs_margin = report.max_abs_margin.max(m.abs());
            if let Some(log) = report.per_trial_log.as_mut() {
                log.push(r);
            }
        }
        report
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub loss: LossKind,
    pub hess_control: CheckReport,
    pub grad_lower: CheckReport,
    pub grad_upper: CheckReport,
    pub value_bound: CheckReport,
}

impl SuiteReport {
    pub fn checks(&self) -> [(&'static str, &CheckReport); 4] {
        [
            ("hess_control", &self.hess_control),
            ("grad_lower", &self.grad_lower),
            ("grad_upper", &self.grad_upper),
            ("value_bound", &self.value_bound),
        ]
    }

    pub fn violations(&self) -> usize {
        self.checks().iter().map(|(_, c)| c.violations).sum()
    }
}

struct TrialOutcome {
    hess: Option<TrialRecord>,
    lower: Option<TrialRecord>,
    upper: Option<TrialRecord>,
    value: Option<TrialRecord>,
}

fn kind_index(kind: LossKind) -> u64 {
    LossKind::ALL.iter().position(|k| *k == kind).unwrap() as u64
}

fn run_trial(kind: LossKind, cfg: &SuiteConfig, trial: u64) -> Result<TrialOutcome> {
    let seed = derive_seed(cfg.seed, kind_index(kind), trial);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pop = random_population(kind, cfg.max_dim, &mut rng)?;
    let zero_lambda = trial >= cfg.trials as u64;
    let lambda = if zero_lambda {
        0.0
    } else {
        10f64.powf(rng.random_range(-3.0..=0.0))
    };
    let d = pop.dim();
    let theta0 = uniform_in_ball(d, cfg.theta_radius, &mut rng);
    let theta1 = uniform_in_ball(d, cfg.theta_radius, &mut rng);

    let choice: f64 = rng.random();
    let empirical_weights;
    let (measure, measure_kind) = if zero_lambda || choice < 0.5 {
        (Measure::population(&pop), MeasureKind::Population)
    } else if choice < 0.75 {
        let i = rng.random_range(0..pop.atoms().len());
        (
            Measure::single(&pop.atoms()[i], pop.loss()),
            MeasureKind::Single,
        )
    } else {
        let n = rng.random_range(1..=20u64);
        let counts = draw_counts(pop.weights(), n, &mut rng)?;
        empirical_weights = counts
            .iter()
            .map(|c| *c as f64 / n as f64)
            .collect::<Vec<_>>();
        (
            Measure::weighted(pop.atoms(), &empirical_weights, pop.loss())?,
            MeasureKind::Empirical,
        )
    };

    let record = |c: Result<Comparison>| -> Result<Option<TrialRecord>> {
        match c {
            Ok(comparison) => Ok(Some(TrialRecord {
                trial,
                seed,
                lambda,
                measure: measure_kind,
                comparison,
            })),
            Err(Error::NotPositiveDefinite) if lambda == 0.0 => Ok(None),
            Err(e) => Err(e),
        }
    };
    // Both directions: the exponent is symmetric in the pair.
    let hess = match (
        check_hess_control(&measure, &theta0, &theta1, lambda),
        check_hess_control(&measure, &theta1, &theta0, lambda),
    ) {
        (Ok(a), Ok(b)) => Ok(if a.margin <= b.margin { a } else { b }),
        (Err(e), _) | (_, Err(e)) => Err(e),
    };
    let (lower, upper) = if zero_lambda {
        (None, None)
    } else {
        (
            record(check_grad_lower(&measure, &theta0, &theta1, lambda))?,
            record(check_grad_upper(&measure, &theta0, &theta1, lambda))?,
        )
    };
    Ok(TrialOutcome {
        hess: record(hess)?,
        lower,
        upper,
        value: record(check_value_bound(&measure, &theta0, &theta1, lambda))?,
    })
}

/// The four inequality checks on `cfg.trials + cfg.zero_lambda_trials` random instances.
/// Trials run in parallel; each derives its own seed, so the report does not depend on
/// scheduling.
pub fn run_inequality_suite(kind: LossKind, cfg: &SuiteConfig) -> Result<SuiteReport> {
    cfg.validate()?;
    let total = (cfg.trials + cfg.zero_lambda_trials) as u64;
    let outcomes: Vec<TrialOutcome> = (0..total)
        .into_par_iter()
        .map(|t| run_trial(kind, cfg, t))
        .collect::<Result<_>>()?;
    let positive = &outcomes[..cfg.trials];
    Ok(SuiteReport {
        loss: kind,
        hess_control: CheckReport::collect(outcomes.iter().map(|o| o.hess), cfg.keep_log),
        grad_lower: CheckReport::collect(positive.iter().map(|o| o.lower), cfg.keep_log),
        grad_upper: CheckReport::collect(positive.iter().map(|o| o.upper), cfg.keep_log),
        value_bound: CheckReport::collect(outcomes.iter().map(|o| o.value), cfg.keep_log),
    })
}

pub fn run_inequality_suites(cfg: &SuiteConfig) -> Result<Vec<SuiteReport>> {
    LossKind::ALL
        .iter()
        .map(|k| run_inequality_suite(*k, cfg))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalizationConfig {
    pub populations: usize,
    pub seed: u64,
    pub max_dim: usize,
    /// Perturbation sizes around `theta*_lambda`.
    #[serde(skip)]
    pub scales: [f64; 7],
    /// Sample sizes for the empirical variant.
    #[serde(skip)]
    pub sample_sizes: [u64; 4],
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        LocalizationConfig {
            populations: 40,
            seed: 0,
            max_dim: 4,
            scales: [0.0, 1e-3, 1e-2, 0.1, 0.3, 1.0, 3.0],
            sample_sizes: [8, 64, 512, 4096],
        }
    }
}

/// Counts for one implication over a suite.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ImplicationCount {
    pub trials: usize,
    pub premise_held: usize,
    pub counterexamples: usize,
}

impl ImplicationCount {
    fn add(&mut self, premise: bool, holds: bool) {
        self.trials += 1;
        self.premise_held += premise as usize;
        self.counterexamples += (!holds) as usize;
    }

    fn merge(&mut self, other: &Self) {
        self.trials += other.trials;
        self.premise_held += other.premise_held;
        self.counterexamples += other.counterexamples;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LocalizationReport {
    pub loss: Option<LossKind>,
    pub populations: usize,
    /// Populations whose minimizer could not be certified (never counted as passes).
    pub skipped_populations: usize,
    pub population_variant: ImplicationCount,
    pub empirical_variant: ImplicationCount,
    pub lemma: ImplicationCount,
    pub decomposition: ImplicationCount,
}

impl LocalizationReport {
    pub fn counterexamples(&self) -> usize {
        self.population_variant.counterexamples
            + self.empirical_variant.counterexamples
            + self.lemma.counterexamples
            + self.decomposition.counterexamples
    }

    fn merge(&mut self, other: &Self) {
        self.populations += other.populations;
        self.skipped_populations += other.skipped_populations;
        self.population_variant.merge(&other.population_variant);
        self.empirical_variant.merge(&other.empirical_variant);
        self.lemma.merge(&other.lemma);
        self.decomposition.merge(&other.decomposition);
    }
}

const LOCALIZATION_LAMBDAS: [f64; 6] = [1.0, 0.25, 0.0625, 0.015625, 0.00390625, 0.0009765625];

fn localization_for_population(
    kind: LossKind,
    cfg: &LocalizationConfig,
    index: u64,
) -> Result<LocalizationReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 16 + kind_index(kind), index));
    let pop = random_population(kind, cfg.max_dim, &mut rng)?;
    let solver = SolverConfig::default();
    let mut report = LocalizationReport {
        loss: Some(kind),
        populations: 1,
        ..Default::default()
    };
    let mut sol = match pop.solve(&solver) {
        Ok(sol) => sol,
        Err(Error::Divergence { .. } | Error::NonConvergence { .. }) => {
            report.skipped_populations = 1;
            return Ok(report);
        }
        Err(e) => return Err(e),
    };
    for &lambda in &LOCALIZATION_LAMBDAS {
        let lemma = check_lemma_tla(&pop, &mut sol, lambda, &solver)?;
        report.lemma.add(lemma.small_branch, lemma.holds());
        let centre = sol.ensure_regularized(&pop, lambda, &solver)?.clone();
        for &scale in &cfg.scales {
            let theta = &centre + uniform_in_ball(pop.dim(), 1.0, &mut rng).normalize() * scale;
            let n = cfg.sample_sizes[rng.random_range(0..cfg.sample_sizes.len())];
            let counts: Vec<f64> = draw_counts(pop.weights(), n, &mut rng)?
                .iter()
                .map(|c| *c as f64)
                .collect();
            let rec = check_localization(&pop, &theta, lambda, Some(&counts), &solver)?;
            report
                .population_variant
                .add(rec.population.premise_holds(), rec.population.holds());
            let emp = rec.empirical.expect("empirical variant requested");
            report.empirical_variant.add(emp.premise_holds(), emp.holds());
        }
        let n = cfg.sample_sizes[rng.random_range(0..cfg.sample_sizes.len())];
        let counts: Vec<f64> = draw_counts(pop.weights(), n, &mut rng)?
            .iter()
            .map(|c| *c as f64)
            .collect();
        let theta_hat = solve_erm(pop.atoms(), &counts, pop.loss(), lambda, &solver)?.theta_hat;
        let dec = check_decomposition_bound(&pop, &mut sol, lambda, &counts, &theta_hat, &solver)?;
        report.decomposition.add(dec.applicable, dec.holds());
    }
    Ok(report)
}

/// Localization (population and empirical), the `t_lambda` lemma and the analytic
/// decomposition on random populations with attained minimizers.
pub fn run_localization_suite(kind: LossKind, cfg: &LocalizationConfig) -> Result<LocalizationReport> {
    if cfg.populations == 0 {
        return Err(Error::InvalidArgument("suite needs at least one population".into()));
    }
    let parts: Vec<LocalizationReport> = (0..cfg.populations as u64)
        .into_par_iter()
        .map(|i| localization_for_population(kind, cfg, i))
        .collect::<Result<_>>()?;
    let mut total = LocalizationReport {
        loss: Some(kind),
        ..Default::default()
    };
    for p in &parts {
        total.merge(p);
    }
    Ok(total)
}
