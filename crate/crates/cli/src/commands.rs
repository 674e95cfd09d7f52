use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use screg::population::default_lambda_grid;
use screg::rates::{
    gradient_concentration_experiment, hessian_concentration_experiment, run_rate_experiment,
    ExperimentPlan, FrequencyRecord, RateConstants, Regime, RegimeParams,
};
use screg::sampling::{derive_seed, draw_counts};
use screg::scverify::{
    run_inequality_suite, run_localization_suite, ImplicationCount, LocalizationConfig,
    SuiteConfig,
};
use screg::solver::solve_erm;
use screg::{FinitePopulation, LossKind, PopulationSolution};

use crate::config::{Lemma, RunConfig};
use crate::output::{Artifacts, Table};
use crate::CliError;

/// What a finished command reports back: pass/fail and a one-line digest.
pub struct Outcome {
    pub passed: bool,
    pub digest: String,
}

fn population(cfg: &RunConfig) -> Result<FinitePopulation, CliError> {
    let spec = cfg
        .population
        .as_ref()
        .ok_or_else(|| CliError::Run("population missing".into()))?;
    Ok(spec.build()?)
}

fn solve_population(cfg: &RunConfig, pop: &FinitePopulation) -> Result<PopulationSolution, CliError> {
    pop.solve(&cfg.solver)
        .map_err(|e| CliError::Run(format!("population minimizer: {e}")))
}

pub fn solve(cfg: &RunConfig, out: &mut Artifacts) -> Result<Outcome, CliError> {
    let pop = population(cfg)?;
    let spec = cfg.solve.clone().unwrap_or_default();
    let star = pop.solve(&cfg.solver);
    let lambdas = match (&spec.lambdas, &star) {
        (Some(l), _) => l.clone(),
        (None, Ok(sol)) => default_lambda_grid(sol.local.b2_star),
        (None, Err(e)) => {
            return Err(CliError::Run(format!(
                "no lambdas given and the population minimizer is unavailable: {e}"
            )))
        }
    };
    let optimum = match &star {
        Ok(sol) => Some(pop.risk(&sol.theta_star, 0.0)?),
        Err(_) => None,
    };
    let weights = match spec.n {
        Some(n) => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(out.stamp.seed, 0, 0));
            draw_counts(pop.weights(), n, &mut rng)?
                .into_iter()
                .map(|c| c as f64)
                .collect()
        }
        None => pop.weights().to_vec(),
    };
    let mut table = Table::new(&[
        "lambda",
        "iterations",
        "converged",
        "final_decrement",
        "population_risk",
        "excess_risk",
        "theta_norm",
    ]);
    let mut thetas = Table::new(&["lambda", "coordinate", "value"]);
    let mut converged = 0;
    for &lambda in &lambdas {
        let result = solve_erm(pop.atoms(), &weights, pop.loss(), lambda, &cfg.solver)?;
        let risk = pop.risk(&result.theta_hat, 0.0)?;
        converged += usize::from(result.converged);
        table.push(vec![
            lambda.into(),
            result.iterations.into(),
            result.converged.into(),
            result.final_decrement().into(),
            risk.into(),
            optimum.map_or(f64::NAN, |o| risk - o).into(),
            result.theta_hat.norm().into(),
        ]);
        for (j, v) in result.theta_hat.iter().enumerate() {
            thetas.push(vec![lambda.into(), j.into(), (*v).into()]);
        }
    }
    out.table("solve.csv", &table);
    out.table("solve_theta.csv", &thetas);

    #[derive(Serialize)]
    struct Body {
        loss: LossKind,
        dim: usize,
        sample_size: Option<u64>,
        lambdas: usize,
        converged: usize,
        population_optimum: Option<f64>,
        theta_star: Option<Vec<f64>>,
    }
    out.summary(&Body {
        loss: pop.loss().kind(),
        dim: pop.dim(),
        sample_size: spec.n,
        lambdas: lambdas.len(),
        converged,
        population_optimum: optimum,
        theta_star: star.as_ref().ok().map(|s| s.theta_star.iter().copied().collect()),
    })?;
    Ok(Outcome {
        passed: converged == lambdas.len(),
        digest: format!("solve: {converged}/{} solves converged", lambdas.len()),
    })
}

pub fn diagnose(cfg: &RunConfig, out: &mut Artifacts) -> Result<Outcome, CliError> {
    let pop = population(cfg)?;
    let mut sol = solve_population(cfg, &pop)?;
    let lambdas = cfg
        .diagnose
        .as_ref()
        .and_then(|d| d.lambdas.clone())
        .unwrap_or_else(|| default_lambda_grid(sol.local.b2_star));
    let report = pop.diagnose(&mut sol, &lambdas, &cfg.solver)?;
    let mut table = Table::new(&[
        "lambda",
        "bias",
        "df",
        "dikin_radius",
        "t_lambda",
        "t_tilde",
        "k_bias",
        "k_var",
        "box1",
        "box2",
        "tri1",
        "tri2",
        "c_bias",
        "c_var",
    ]);
    for (i, &lambda) in report.lambda_grid.iter().enumerate() {
        let c = &report.constants[i];
        table.push(vec![
            lambda.into(),
            report.bias[i].into(),
            report.df[i].into(),
            report.dikin_radius[i].into(),
            report.t_lambda[i].into(),
            c.t_tilde.into(),
            c.k_bias.into(),
            c.k_var.into(),
            c.box1.into(),
            c.box2.into(),
            c.tri1.into(),
            c.tri2.into(),
            c.c_bias.into(),
            c.c_var.into(),
        ]);
    }
    out.table("diagnose.csv", &table);

    #[derive(Serialize)]
    struct Body<'a> {
        loss: LossKind,
        dim: usize,
        theta_star_norm: f64,
        local: &'a screg::population::LocalSummary,
        fitted_r: Option<screg::population::ExponentFit>,
        fitted_alpha: Option<screg::population::ExponentFit>,
    }
    out.summary(&Body {
        loss: pop.loss().kind(),
        dim: report.dim,
        theta_star_norm: report.theta_star_norm,
        local: &report.local,
        fitted_r: report.fitted_r,
        fitted_alpha: report.fitted_alpha,
    })?;
    let show = |f: Option<screg::population::ExponentFit>| {
        f.map_or("n/a".to_string(), |f| format!("{:.4}", f.value))
    };
    Ok(Outcome {
        passed: true,
        digest: format!(
            "diagnose: {} lambdas, fitted r {}, fitted alpha {}",
            report.lambda_grid.len(),
            show(report.fitted_r),
            show(report.fitted_alpha)
        ),
    })
}

pub fn verify(cfg: &RunConfig, out: &mut Artifacts) -> Result<Outcome, CliError> {
    let spec = cfg.verify.clone().unwrap_or_default();
    let seed = out.stamp.seed;
    let suite_cfg = SuiteConfig {
        trials: spec.trials,
        zero_lambda_trials: spec.zero_lambda_trials,
        seed,
        max_dim: spec.max_dim,
        theta_radius: spec.theta_radius,
        keep_log: false,
    };
    let loc_cfg = LocalizationConfig {
        populations: spec.localization_populations,
        seed,
        max_dim: spec.max_dim,
        ..LocalizationConfig::default()
    };
    let mut checks = Table::new(&[
        "loss",
        "check",
        "trials",
        "violations",
        "skipped",
        "worst_margin",
        "max_abs_margin",
    ]);
    let mut implications = Table::new(&[
        "loss",
        "implication",
        "trials",
        "premise_held",
        "counterexamples",
    ]);
    let mut violations = 0;
    let mut counterexamples = 0;
    for &kind in &spec.losses {
        let suite = run_inequality_suite(kind, &suite_cfg)?;
        let name = loss_name(kind);
        for (check, report) in suite.checks() {
            checks.push(vec![
                name.into(),
                check.into(),
                report.trials.into(),
                report.violations.into(),
                report.skipped.into(),
                report.worst_margin.into(),
                report.max_abs_margin.into(),
            ]);
        }
        violations += suite.violations();
        if spec.localization_populations > 0 {
            let loc = run_localization_suite(kind, &loc_cfg)?;
            let rows: [(&str, &ImplicationCount); 4] = [
                ("localization_population", &loc.population_variant),
                ("localization_empirical", &loc.empirical_variant),
                ("bias_lemma", &loc.lemma),
                ("decomposition", &loc.decomposition),
            ];
            for (label, count) in rows {
                implications.push(vec![
                    name.into(),
                    label.into(),
                    count.trials.into(),
                    count.premise_held.into(),
                    count.counterexamples.into(),
                ]);
            }
            counterexamples += loc.counterexamples();
        }
    }
    out.table("verify.csv", &checks);
    out.table("localization.csv", &implications);

    #[derive(Serialize)]
    struct Body {
        losses: Vec<LossKind>,
        trials_per_check: usize,
        zero_lambda_trials: usize,
        violations: usize,
        counterexamples: usize,
    }
    out.summary(&Body {
        losses: spec.losses.clone(),
        trials_per_check: spec.trials,
        zero_lambda_trials: spec.zero_lambda_trials,
        violations,
        counterexamples,
    })?;
    Ok(Outcome {
        passed: violations == 0 && counterexamples == 0,
        digest: format!(
            "verify: {violations} violations, {counterexamples} counterexamples over {} losses",
            spec.losses.len()
        ),
    })
}

fn loss_name(kind: LossKind) -> &'static str {
    match kind {
        LossKind::Square => "square",
        LossKind::HuberSqrt => "huber_sqrt",
        LossKind::HuberLogCosh => "huber_log_cosh",
        LossKind::Logistic => "logistic",
        LossKind::SoftmaxGlm => "softmax_glm",
    }
}

pub fn rates(cfg: &RunConfig, out: &mut Artifacts) -> Result<Outcome, CliError> {
    let spec = cfg
        .rates
        .as_ref()
        .ok_or_else(|| CliError::Run("rates section missing".into()))?;
    let pop = population(cfg)?;
    let sol = solve_population(cfg, &pop)?;
    let (r, alpha) = cfg.exponents(spec);
    let params = RegimeParams::from_solution(&pop, &sol, r, alpha)?;
    let plan = ExperimentPlan {
        population: pop,
        regime: spec.regime,
        params,
        n_grid: spec.grid().map_err(CliError::Run)?,
        replicates: spec.replicates,
        delta: spec.delta,
        seed: out.stamp.seed,
        lambda_override: spec.lambda_override.clone(),
        burn_in: spec.burn_in,
        solver: cfg.solver,
    };
    let report = run_rate_experiment(&plan)?;

    let mut cells = Table::new(&[
        "n",
        "replicate",
        "lambda",
        "excess_risk",
        "bound_rhs",
        "guard_ok",
        "seed",
        "error",
    ]);
    for c in &report.cells {
        cells.push(vec![
            c.n.into(),
            c.replicate.into(),
            c.lambda.into(),
            c.excess_risk.into(),
            c.bound_rhs.into(),
            c.guard_ok.into(),
            c.seed.into(),
            c.error.clone().unwrap_or_default().into(),
        ]);
    }
    let mut per_n = Table::new(&[
        "n",
        "lambda",
        "lambda_clamped",
        "bias",
        "df",
        "dikin_radius",
        "small_branch",
        "guard_hessian",
        "guard_variance",
        "guard_ok",
        "bound_rhs",
        "mean_excess_risk",
        "solved",
        "failures",
        "violations",
        "violation_freq",
        "violation_tolerance",
    ]);
    for s in &report.per_n {
        let p = &s.point;
        per_n.push(vec![
            p.n.into(),
            p.lambda.into(),
            p.lambda_clamped.into(),
            p.bias.into(),
            p.df.into(),
            p.dikin_radius.into(),
            p.small_branch.into(),
            p.guard_hessian.into(),
            p.guard_variance.into(),
            p.guard_ok.into(),
            p.bound_rhs.into(),
            s.mean_excess_risk.into(),
            s.solved.into(),
            s.failures.into(),
            s.violations.into(),
            s.violation_freq.into(),
            s.violation_tolerance.into(),
        ]);
    }
    out.table("rates_cells.csv", &cells);
    out.table("rates_summary.csv", &per_n);

    let gap = report
        .fitted_exponent
        .map(|f| (f - report.theoretical_exponent).abs());
    let within = gap.is_some_and(|g| g <= spec.tolerance);
    let frequency_failures = report.guarded_frequency_failures();

    #[derive(Serialize)]
    struct Body<'a> {
        regime: Regime,
        delta: f64,
        replicates: usize,
        fitted_exponent: Option<f64>,
        theoretical_exponent: f64,
        tolerance: f64,
        within_tolerance: bool,
        fit_points: usize,
        burn_in: usize,
        params: &'a RegimeParams,
        constants: &'a RateConstants,
        guarded_points: usize,
        guarded_frequency_failures: &'a [u64],
        solver_failures: usize,
    }
    out.summary(&Body {
        regime: report.regime,
        delta: report.delta,
        replicates: report.replicates,
        fitted_exponent: report.fitted_exponent,
        theoretical_exponent: report.theoretical_exponent,
        tolerance: spec.tolerance,
        within_tolerance: within,
        fit_points: report.fit_points,
        burn_in: report.burn_in,
        params: &plan.params,
        constants: &report.constants,
        guarded_points: report.per_n.iter().filter(|s| s.point.guard_ok).count(),
        guarded_frequency_failures: &frequency_failures,
        solver_failures: report.failures,
    })?;
    Ok(Outcome {
        passed: within && frequency_failures.is_empty(),
        digest: format!(
            "rates: fitted exponent {} vs {:.4} (tolerance {}), {} guarded frequency failures",
            report
                .fitted_exponent
                .map_or("n/a".to_string(), |f| format!("{f:.4}")),
            report.theoretical_exponent,
            spec.tolerance,
            frequency_failures.len()
        ),
    })
}

pub fn concentration(cfg: &RunConfig, out: &mut Artifacts) -> Result<Outcome, CliError> {
    let spec = cfg
        .concentration
        .as_ref()
        .ok_or_else(|| CliError::Run("concentration section missing".into()))?;
    let pop = population(cfg)?;
    let mut sol = solve_population(cfg, &pop)?;
    let seed = out.stamp.seed;
    let mut records: Vec<(Lemma, FrequencyRecord)> = Vec::new();
    for &lemma in &spec.lemmas {
        let record = match lemma {
            Lemma::Hessian => {
                let theta = spec
                    .theta
                    .as_ref()
                    .map_or_else(|| sol.theta_star.clone(), |t| DVector::from_column_slice(t));
                hessian_concentration_experiment(
                    &pop,
                    &theta,
                    spec.lambda,
                    spec.n,
                    spec.replicates,
                    spec.delta,
                    seed,
                )?
            }
            Lemma::Gradient => gradient_concentration_experiment(
                &pop,
                &mut sol,
                spec.lambda,
                spec.k,
                spec.n,
                spec.replicates,
                spec.delta,
                seed,
                &cfg.solver,
            )?,
        };
        records.push((lemma, record));
    }
    let mut table = Table::new(&[
        "lemma",
        "n",
        "lambda",
        "delta",
        "replicates",
        "premise_threshold",
        "skipped",
        "successes",
        "frequency",
        "required",
        "worst_statistic",
        "passed",
    ]);
    for (lemma, r) in &records {
        table.push(vec![
            lemma_name(*lemma).into(),
            r.n.into(),
            r.lambda.into(),
            r.delta.into(),
            r.replicates.into(),
            r.premise_threshold.into(),
            r.skipped.clone().unwrap_or_default().into(),
            r.successes.into(),
            r.frequency.into(),
            r.required.into(),
            r.worst_statistic.into(),
            r.passed().into(),
        ]);
    }
    out.table("concentration.csv", &table);
    let failed = records
        .iter()
        .filter(|(_, r)| r.skipped.is_none() && !r.passed())
        .count();
    let skipped = records.iter().filter(|(_, r)| r.skipped.is_some()).count();

    #[derive(Serialize)]
    struct Entry<'a> {
        lemma: &'static str,
        #[serde(flatten)]
        record: &'a FrequencyRecord,
    }
    #[derive(Serialize)]
    struct Body<'a> {
        records: Vec<Entry<'a>>,
        failed: usize,
        skipped: usize,
    }
    out.summary(&Body {
        records: records
            .iter()
            .map(|(l, r)| Entry {
                lemma: lemma_name(*l),
                record: r,
            })
            .collect(),
        failed,
        skipped,
    })?;
    Ok(Outcome {
        passed: failed == 0,
        digest: format!(
            "concentration: {} run, {failed} failed, {skipped} skipped",
            records.len() - skipped
        ),
    })
}

fn lemma_name(lemma: Lemma) -> &'static str {
    match lemma {
        Lemma::Hessian => "hessian",
        Lemma::Gradient => "gradient",
    }
}
