//! Run configuration: a TOML document parsed strictly, then validated as a whole.

use std::fmt;
use std::path::PathBuf;

use screg::population::{make_logistic_population, make_softmax_population, SourceDesign};
use screg::rates::Regime;
use screg::{FinitePopulation, LossKind, LossModel, Sample, SolverConfig};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Solve,
    Diagnose,
    Verify,
    Rates,
    Concentration,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Diagnose => "diagnose",
            Command::Verify => "verify",
            Command::Rates => "rates",
            Command::Concentration => "concentration",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` takes precedence.
    pub output: Option<PathBuf>,
    pub population: Option<PopulationSpec>,
    #[serde(default)]
    pub solver: SolverConfig,
    pub solve: Option<SolveSpec>,
    pub diagnose: Option<DiagnoseSpec>,
    pub verify: Option<VerifySpec>,
    pub rates: Option<RatesSpec>,
    pub concentration: Option<ConcentrationSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PopulationSpec {
    Source(SourceDesign),
    Logistic {
        d: usize,
        contexts: usize,
        theta_norm: f64,
        seed: u64,
    },
    Softmax {
        d: usize,
        labels: usize,
        contexts: usize,
        seed: u64,
    },
    Inline {
        loss: LossKind,
        /// Softmax base measure; uniform when absent.
        base_measure: Option<Vec<f64>>,
        atoms: Vec<AtomSpec>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Features {
    Vector(Vec<f64>),
    PerLabel(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpec {
    pub x: Features,
    /// Real label, or the observed label index for the softmax GLM.
    pub y: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSpec {
    /// Defaults to `2^-k` up to `B2*`.
    pub lambdas: Option<Vec<f64>>,
    /// Draw a sample of this size and solve its ERM; the population risk otherwise.
    pub n: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseSpec {
    pub lambdas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySpec {
    pub losses: Vec<LossKind>,
    pub trials: usize,
    pub zero_lambda_trials: usize,
    pub max_dim: usize,
    pub theta_radius: f64,
    pub localization_populations: usize,
}

impl Default for VerifySpec {
    fn default() -> Self {
        let suite = screg::scverify::SuiteConfig::default();
        VerifySpec {
            losses: LossKind::ALL.to_vec(),
            trials: suite.trials,
            zero_lambda_trials: suite.zero_lambda_trials,
            max_dim: suite.max_dim,
            theta_radius: suite.theta_radius,
            localization_populations: screg::scverify::LocalizationConfig::default().populations,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesSpec {
    pub regime: Regime,
    pub n_grid: Option<Vec<u64>>,
    /// Inclusive `[lo, hi]`: the grid `2^lo, ..., 2^hi`.
    pub log2_n_range: Option<[u32; 2]>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub burn_in: usize,
    /// Source exponent; taken from a source generator when absent.
    pub r: Option<f64>,
    /// Capacity exponent; taken from a source generator when absent.
    pub alpha: Option<f64>,
    pub lambda_override: Option<Vec<f64>>,
    /// Allowed `|fitted - theoretical|` exponent gap.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_replicates() -> usize {
    200
}

fn default_delta() -> f64 {
    0.1
}

fn default_tolerance() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lemma {
    Hessian,
    Gradient,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcentrationSpec {
    pub lemmas: Vec<Lemma>,
    pub lambda: f64,
    pub n: u64,
    #[serde(default = "default_concentration_replicates")]
    pub replicates: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Gradient lemma's `k`.
    #[serde(default = "default_k")]
    pub k: f64,
    /// Point for the Hessian lemma; `theta*` when absent.
    pub theta: Option<Vec<f64>>,
}

fn default_concentration_replicates() -> usize {
    500
}

fn default_k() -> f64 {
    4.0
}

/// Every problem found in a document, each prefixed by its key path.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaErrors(pub Vec<String>);

impl fmt::Display for SchemaErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration:")?;
        for e in &self.0 {
            write!(f, "\n  {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for SchemaErrors {}

pub fn parse_config(document: &str) -> Result<RunConfig, SchemaErrors> {
    let config: RunConfig =
        toml::from_str(document).map_err(|e| SchemaErrors(vec![e.to_string().trim_end().to_string()]))?;
    let mut errors = Vec::new();
    config.check(&mut errors);
    if errors.is_empty() {
        Ok(config)
    } else {
        Err(SchemaErrors(errors))
    }
}

fn check_delta(path: &str, delta: f64, errors: &mut Vec<String>) {
    if !(delta > 0.0 && delta <= 0.5) {
        errors.push(format!("{path}: delta must lie in (0, 0.5], got {delta}"));
    }
}

fn check_source_r(path: &str, r: f64, allow_zero: bool, errors: &mut Vec<String>) {
    let ok = if allow_zero {
        (0.0..=0.5).contains(&r)
    } else {
        r > 0.0 && r <= 0.5
    };
    if !ok {
        let range = if allow_zero { "[0, 0.5]" } else { "(0, 0.5]" };
        errors.push(format!(
            "{path}: source condition exponent r must lie in {range}, got {r}"
        ));
    }
}

fn check_alpha(path: &str, alpha: f64, errors: &mut Vec<String>) {
    if !(alpha >= 1.0 && alpha.is_finite()) {
        errors.push(format!(
            "{path}: capacity exponent alpha must be >= 1, got {alpha}"
        ));
    }
}

fn check_lambdas(path: &str, lambdas: &[f64], errors: &mut Vec<String>) {
    if lambdas.is_empty() {
        errors.push(format!("{path}: must not be empty"));
    }
    for (i, l) in lambdas.iter().enumerate() {
        if !(*l > 0.0 && l.is_finite()) {
            errors.push(format!("{path}[{i}]: lambda must be > 0, got {l}"));
        }
    }
}

impl RunConfig {
    fn check(&self, errors: &mut Vec<String>) {
        if let Err(e) = self.solver.validate() {
            errors.push(format!("solver: {e}"));
        }
        if let Some(pop) = &self.population {
            pop.check(errors);
        }
        let needs_population = !matches!(self.command, Command::Verify);
        if needs_population && self.population.is_none() {
            errors.push(format!(
                "population: required by the {} command",
                self.command.name()
            ));
        }
        match self.command {
            Command::Solve => {
                if let Some(spec) = &self.solve {
                    if let Some(l) = &spec.lambdas {
                        check_lambdas("solve.lambdas", l, errors);
                    }
                    if spec.n == Some(0) {
                        errors.push("solve.n: must be >= 1".into());
                    }
                }
            }
            Command::Diagnose => {
                if let Some(l) = self.diagnose.as_ref().and_then(|d| d.lambdas.as_ref()) {
                    check_lambdas("diagnose.lambdas", l, errors);
                }
            }
            Command::Verify => {
                let spec = self.verify.clone().unwrap_or_default();
                if spec.losses.is_empty() {
                    errors.push("verify.losses: must not be empty".into());
                }
                if spec.trials == 0 {
                    errors.push("verify.trials: must be >= 1".into());
                }
                if spec.max_dim == 0 {
                    errors.push("verify.max_dim: must be >= 1".into());
                }
                if !(spec.theta_radius > 0.0 && spec.theta_radius.is_finite()) {
                    errors.push("verify.theta_radius: must be > 0".into());
                }
            }
            Command::Rates => match &self.rates {
                None => errors.push("rates: section required by the rates command".into()),
                Some(spec) => self.check_rates(spec, errors),
            },
            Command::Concentration => match &self.concentration {
                None => errors.push(
                    "concentration: section required by the concentration command".into(),
                ),
                Some(spec) => {
                    if spec.lemmas.is_empty() {
                        errors.push("concentration.lemmas: must not be empty".into());
                    }
                    check_lambdas("concentration.lambda", &[spec.lambda], errors);
                    check_delta("concentration.delta", spec.delta, errors);
                    if spec.n == 0 || spec.replicates == 0 {
                        errors.push("concentration: n and replicates must be >= 1".into());
                    }
                    if !(spec.k >= 4.0 && spec.k.is_finite()) {
                        errors.push(format!("concentration.k: must be >= 4, got {}", spec.k));
                    }
                    if let (Some(theta), Some(d)) = (&spec.theta, self.population_dim()) {
                        if theta.len() != d {
                            errors.push(format!(
                                "concentration.theta: has {} entries for dimension {d}",
                                theta.len()
                            ));
                        }
                    }
                }
            },
        }
    }

    fn check_rates(&self, spec: &RatesSpec, errors: &mut Vec<String>) {
        check_delta("rates.delta", spec.delta, errors);
        match (&spec.n_grid, spec.log2_n_range) {
            (Some(_), Some(_)) => {
                errors.push("rates: give either n_grid or log2_n_range, not both".into())
            }
            (None, None) => errors.push("rates.n_grid: missing (or give log2_n_range)".into()),
            (Some(grid), None) => {
                if grid.is_empty() || grid[0] == 0 {
                    errors.push("rates.n_grid: must be nonempty with n >= 1".into());
                }
                if grid.windows(2).any(|w| w[0] >= w[1]) {
                    errors.push("rates.n_grid: must be strictly increasing".into());
                }
            }
            (None, Some([lo, hi])) => {
                if lo > hi || hi > 62 {
                    errors.push(format!(
                        "rates.log2_n_range: need lo <= hi <= 62, got [{lo}, {hi}]"
                    ));
                }
            }
        }
        if spec.replicates == 0 {
            errors.push("rates.replicates: must be >= 1".into());
        }
        if !(spec.tolerance >= 0.0) {
            errors.push("rates.tolerance: must be >= 0".into());
        }
        let (r, alpha) = self.exponents(spec);
        if spec.regime != Regime::None {
            match r {
                Some(r) => check_source_r("rates.r", r, false, errors),
                None => errors.push("rates.r: required by the source regimes".into()),
            }
        }
        if spec.regime == Regime::SourceCapacity {
            match alpha {
                Some(a) => check_alpha("rates.alpha", a, errors),
                None => errors.push("rates.alpha: required by the source_capacity regime".into()),
            }
        }
        if let Some(l) = &spec.lambda_override {
            check_lambdas("rates.lambda_override", l, errors);
            if let Ok(n) = spec.grid() {
                if l.len() != n.len() {
                    errors.push(format!(
                        "rates.lambda_override: has {} entries for {} grid points",
                        l.len(),
                        n.len()
                    ));
                }
            }
        }
    }

    /// Source and capacity exponents for a rate run: explicit values first, then the
    /// source generator's.
    pub fn exponents(&self, spec: &RatesSpec) -> (Option<f64>, Option<f64>) {
        let design = match &self.population {
            Some(PopulationSpec::Source(d)) => Some(d),
            _ => None,
        };
        let r = spec.r.or(design.map(|d| d.r));
        let alpha = spec.alpha.or(design.map(|d| d.alpha));
        match spec.regime {
            Regime::None => (None, None),
            Regime::Source => (r, None),
            Regime::SourceCapacity => (r, alpha),
        }
    }

    fn population_dim(&self) -> Option<usize> {
        match self.population.as_ref()? {
            PopulationSpec::Source(d) => Some(d.d),
            PopulationSpec::Logistic { d, .. } | PopulationSpec::Softmax { d, .. } => Some(*d),
            PopulationSpec::Inline { atoms, .. } => atoms.first().map(|a| match &a.x {
                Features::Vector(v) => v.len(),
                Features::PerLabel(v) => v.first().map_or(0, |f| f.len()),
            }),
        }
    }
}

impl RatesSpec {
    pub fn grid(&self) -> Result<Vec<u64>, String> {
        match (&self.n_grid, self.log2_n_range) {
            (Some(g), None) => Ok(g.clone()),
            (None, Some([lo, hi])) if lo <= hi && hi <= 62 => Ok((lo..=hi).map(|k| 1u64 << k).collect()),
            _ => Err("rates: invalid n grid".into()),
        }
    }
}

impl PopulationSpec {
    fn check(&self, errors: &mut Vec<String>) {
        match self {
            PopulationSpec::Source(design) => {
                if design.d < 2 {
                    errors.push("population.d: must be >= 2".into());
                }
                check_source_r("population.r", design.r, true, errors);
                check_alpha("population.alpha", design.alpha, errors);
                for (name, v) in [("signal", design.signal), ("noise", design.noise)] {
                    if !(v > 0.0 && v.is_finite()) {
                        errors.push(format!("population.{name}: must be > 0"));
                    }
                }
                if !design.decay.is_finite() {
                    errors.push("population.decay: must be finite".into());
                }
            }
            PopulationSpec::Logistic {
                d,
                contexts,
                theta_norm,
                ..
            } => {
                if *d < 1 || contexts < d {
                    errors.push("population: need d >= 1 and contexts >= d".into());
                }
                if !(*theta_norm >= 0.0 && theta_norm.is_finite()) {
                    errors.push("population.theta_norm: must be finite and >= 0".into());
                }
            }
            PopulationSpec::Softmax {
                d,
                labels,
                contexts,
                ..
            } => {
                if *d < 1 || *labels < 2 || *contexts < 1 {
                    errors.push(
                        "population: need d >= 1, labels >= 2 and contexts >= 1".into(),
                    );
                }
            }
            PopulationSpec::Inline {
                loss,
                base_measure,
                atoms,
            } => {
                if atoms.is_empty() {
                    errors.push("population.atoms: must not be empty".into());
                }
                if base_measure.is_some() && *loss != LossKind::SoftmaxGlm {
                    errors.push("population.base_measure: only valid for softmax_glm".into());
                }
                for (i, atom) in atoms.iter().enumerate() {
                    if !(atom.weight > 0.0 && atom.weight.is_finite()) {
                        errors.push(format!("population.atoms[{i}].weight: must be > 0"));
                    }
                    match (&atom.x, *loss == LossKind::SoftmaxGlm) {
                        (Features::Vector(_), true) => errors.push(format!(
                            "population.atoms[{i}].x: softmax_glm needs one feature vector per label"
                        )),
                        (Features::PerLabel(_), false) => errors.push(format!(
                            "population.atoms[{i}].x: expected a single feature vector"
                        )),
                        (Features::PerLabel(f), true) => {
                            if !(atom.y >= 0.0 && atom.y.fract() == 0.0 && (atom.y as usize) < f.len()) {
                                errors.push(format!(
                                    "population.atoms[{i}].y: must be a label index below {}",
                                    f.len()
                                ));
                            }
                        }
                        (Features::Vector(_), false) => {}
                    }
                }
                if errors.is_empty() {
                    if let Err(e) = self.build() {
                        errors.push(format!("population: {e}"));
                    }
                }
            }
        }
    }

    pub fn build(&self) -> screg::Result<FinitePopulation> {
        match self {
            PopulationSpec::Source(design) => Ok(design.build()?.population),
            PopulationSpec::Logistic {
                d,
                contexts,
                theta_norm,
                seed,
            } => Ok(make_logistic_population(*d, *contexts, *theta_norm, *seed)?.0),
            PopulationSpec::Softmax {
                d,
                labels,
                contexts,
                seed,
            } => Ok(make_softmax_population(*d, *labels, *contexts, *seed)?.0),
            PopulationSpec::Inline {
                loss,
                base_measure,
                atoms,
            } => {
                let samples = atoms
                    .iter()
                    .map(|a| match &a.x {
                        Features::Vector(x) => Sample::scalar(x, a.y),
                        Features::PerLabel(x) => Sample::categorical(x, a.y as usize),
                    })
                    .collect();
                let weights = atoms.iter().map(|a| a.weight).collect();
                let model = match loss {
                    LossKind::Square => LossModel::Square,
                    LossKind::HuberSqrt => LossModel::HuberSqrt,
                    LossKind::HuberLogCosh => LossModel::HuberLogCosh,
                    LossKind::Logistic => LossModel::Logistic,
                    LossKind::SoftmaxGlm => {
                        let labels = match atoms.first().map(|a| &a.x) {
                            Some(Features::PerLabel(f)) => f.len(),
                            _ => 0,
                        };
                        LossModel::SoftmaxGlm {
                            base_measure: base_measure.clone().unwrap_or(vec![1.0; labels]),
                        }
                    }
                };
                FinitePopulation::new(samples, weights, model)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
command = "diagnose"
[population]
kind = "inline"
loss = "logistic"
atoms = [
  { x = [1.0], y = 1.0, weight = 0.75 },
  { x = [1.0], y = -1.0, weight = 0.25 },
]
[diagnose]
lambdas = [0.5, 0.25]
"#;

    #[test]
    fn minimal_diagnose_config() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.command, Command::Diagnose);
        assert_eq!(cfg.population.unwrap().build().unwrap().atoms().len(), 2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let doc = MINIMAL.replace("[diagnose]", "[diagnose]\nlambda_grid = [1.0]");
        let err = parse_config(&doc).unwrap_err().to_string();
        assert!(err.contains("lambda_grid"), "{err}");
        let doc = MINIMAL.replace("kind = \"inline\"", "kind = \"inline\"\nextra = 1");
        assert!(parse_config(&doc).is_err());
    }

    #[test]
    fn delta_out_of_range() {
        let doc = r#"
command = "rates"
[population]
kind = "source"
d = 8
r = 0.5
alpha = 1.0
seed = 1
[rates]
regime = "source"
n_grid = [16, 32]
delta = 0.7
"#;
        let err = parse_config(doc).unwrap_err().to_string();
        assert!(err.contains("delta must lie in (0, 0.5]"), "{err}");
    }

    #[test]
    fn source_exponent_out_of_range() {
        let doc = r#"
command = "diagnose"
[population]
kind = "source"
d = 8
r = 0.8
alpha = 1.0
seed = 1
"#;
        let err = parse_config(doc).unwrap_err();
        assert!(err.0.iter().any(|e| e.contains("source condition") && e.contains("population.r")));
    }

    #[test]
    fn all_errors_are_listed_with_paths() {
        let doc = r#"
command = "rates"
[population]
kind = "inline"
loss = "square"
atoms = [{ x = [1.0], y = 0.0, weight = -1.0 }]
[rates]
regime = "source_capacity"
n_grid = [32, 16]
delta = 0.0
"#;
        let err = parse_config(doc).unwrap_err();
        for needle in [
            "population.atoms[0].weight",
            "rates.n_grid",
            "rates.delta",
            "rates.r",
            "rates.alpha",
        ] {
            assert!(err.0.iter().any(|e| e.starts_with(needle)), "{needle}: {err}");
        }
    }

    #[test]
    fn exponents_default_to_the_generator() {
        let doc = r#"
command = "rates"
[population]
kind = "source"
d = 8
r = 0.25
alpha = 2.0
seed = 1
[rates]
regime = "source_capacity"
log2_n_range = [4, 6]
"#;
        let cfg = parse_config(doc).unwrap();
        let spec = cfg.rates.as_ref().unwrap();
        assert_eq!(cfg.exponents(spec), (Some(0.25), Some(2.0)));
        assert_eq!(spec.grid().unwrap(), vec![16, 32, 64]);
    }

    #[test]
    fn verify_needs_no_population() {
        let cfg = parse_config("command = \"verify\"\n[verify]\ntrials = 10\n").unwrap();
        assert!(cfg.population.is_none());
        assert!(parse_config("command = \"solve\"").is_err());
    }
}
