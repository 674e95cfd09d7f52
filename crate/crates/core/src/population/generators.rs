use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::FinitePopulation;
use crate::error::{Error, Result};
use crate::scloss::{LossModel, Sample};
use crate::special::sigmoid;

/// Square-loss population with prescribed source and capacity exponents.
///
/// Features are the rows of a Sylvester Hadamard matrix (first `d` columns) scaled by
/// `sqrt(j^-alpha)`, so the covariance is exactly `diag(j^-alpha)`. The target is
/// `theta* = C^r v` with `||v|| = signal` and `|v_j| ~ j^-decay`; labels add `+-noise`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceDesign {
    pub d: usize,
    pub r: f64,
    pub alpha: f64,
    pub seed: u64,
    #[serde(default = "one")]
    pub signal: f64,
    #[serde(default = "one")]
    pub noise: f64,
    #[serde(default = "one")]
    pub decay: f64,
}

fn one() -> f64 {
    1.0
}

/// A generated source population together with its ground truth.
#[derive(Debug, Clone)]
pub struct SourcePopulation {
    pub population: FinitePopulation,
    pub theta_star: DVector<f64>,
    /// `v` with `theta* = C^r v`.
    pub source: DVector<f64>,
    /// Eigenvalues `j^-alpha` of the covariance.
    pub spectrum: Vec<f64>,
}

impl SourceDesign {
    pub fn new(d: usize, r: f64, alpha: f64, seed: u64) -> Self {
        SourceDesign {
            d,
            r,
            alpha,
            seed,
            signal: 1.0,
            noise: 1.0,
            decay: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::InvalidArgument(
                "source population needs d >= 2".into(),
            ));
        }
        if !(0.0..=0.5).contains(&self.r) {
            return Err(Error::InvalidArgument(format!(
                "source exponent r = {} must lie in [0, 0.5]",
                self.r
            )));
        }
        if !(self.alpha >= 1.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "capacity exponent alpha = {} must be >= 1",
                self.alpha
            )));
        }
        for (name, v) in [("signal", self.signal), ("noise", self.noise)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be > 0")));
            }
        }
        if !self.decay.is_finite() {
            return Err(Error::InvalidArgument("decay must be finite".into()));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<SourcePopulation> {
        self.validate()?;
        let d = self.d;
        let m = d.next_power_of_two();
        let spectrum: Vec<f64> = (1..=d).map(|j| (j as f64).powf(-self.alpha)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut source = DVector::from_fn(d, |j, _| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            sign * ((j + 1) as f64).powf(-self.decay)
        });
        source *= self.signal / source.norm();
        let theta_star = DVector::from_fn(d, |j, _| spectrum[j].powf(self.r) * source[j]);
        let scale: Vec<f64> = spectrum.iter().map(|e| e.sqrt()).collect();

        let mut atoms = Vec::with_capacity(2 * m);
        for row in 0..m {
            let features = DVector::from_fn(d, |j, _| {
                let sign = if (row & j).count_ones() % 2 == 0 {
                    1.0
                } else {
                    -1.0
                };
                sign * scale[j]
            });
            let mean = theta_star.dot(&features);
            for eps in [self.noise, -self.noise] {
                atoms.push(Sample::Scalar {
                    features: features.clone(),
                    label: mean + eps,
                });
            }
        }
        let weights = vec![1.0 / (2 * m) as f64; 2 * m];
        Ok(SourcePopulation {
            population: FinitePopulation::new(atoms, weights, LossModel::Square)?,
            theta_star,
            source,
            spectrum,
        })
    }
}

/// Unit-signal, unit-noise source population.
pub fn make_source_population(d: usize, r: f64, alpha: f64, seed: u64) -> Result<FinitePopulation> {
    Ok(SourceDesign::new(d, r, alpha, seed).build()?.population)
}

/// Well-specified logistic population: `contexts` unit feature vectors, each carrying
/// labels `+1`/`-1` with probabilities `sigmoid(+-theta* . features)`.
pub fn make_logistic_population(
    d: usize,
    contexts: usize,
    theta_norm: f64,
    seed: u64,
) -> Result<(FinitePopulation, DVector<f64>)> {
    if d < 1 || contexts < d {
        return Err(Error::InvalidArgument(
            "need d >= 1 and at least d contexts".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = |rng: &mut ChaCha8Rng| loop {
        let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-8 {
            break v / n;
        }
    };
    let theta_star = unit(&mut rng) * theta_norm;
    let mut atoms = Vec::with_capacity(2 * contexts);
    let mut weights = Vec::with_capacity(2 * contexts);
    for _ in 0..contexts {
        let features = unit(&mut rng);
        let p = sigmoid(theta_star.dot(&features));
        for (label, prob) in [(1.0, p), (-1.0, 1.0 - p)] {
            atoms.push(Sample::Scalar {
                features: features.clone(),
                label,
            });
            weights.push(prob / contexts as f64);
        }
    }
    Ok((
        FinitePopulation::new(atoms, weights, LossModel::Logistic)?,
        theta_star,
    ))
}

/// Well-specified softmax GLM with uniform base measure over `labels` outcomes.
pub fn make_softmax_population(
    d: usize,
    labels: usize,
    contexts: usize,
    seed: u64,
) -> Result<(FinitePopulation, DVector<f64>)> {
    if d < 1 || labels < 2 || contexts < 1 {
        return Err(Error::InvalidArgument(
            "need d >= 1, at least 2 labels and 1 context".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta_star = DVector::from_fn(d, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
    let loss = LossModel::softmax_uniform(labels);
    let mut atoms = Vec::new();
    let mut weights = Vec::new();
    for _ in 0..contexts {
        let features: Vec<DVector<f64>> = (0..labels)
            .map(|_| DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let scores: Vec<f64> = features.iter().map(|f| theta_star.dot(f)).collect();
        let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = scores.iter().map(|s| (s - top).exp()).sum();
        for (label, s) in scores.iter().enumerate() {
            atoms.push(Sample::Categorical {
                features: features.clone(),
                label,
            });
            weights.push((s - top).exp() / total / contexts as f64);
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok((FinitePopulation::new(atoms, weights, loss)?, theta_star))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::SolverConfig;
    use approx::assert_relative_eq;

    #[test]
    fn covariance_is_diagonal_power_law() {
        let sp = SourceDesign::new(12, 0.5, 2.0, 3).build().unwrap();
        let h = sp.population.hessian(&DVector::zeros(12), 0.0).unwrap();
        for i in 0..12 {
            for j in 0..12 {
                let expect = if i == j { sp.spectrum[i] } else { 0.0 };
                assert!((h[(i, j)] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn theta_star_is_the_minimizer() {
        let sp = SourceDesign::new(10, 0.25, 1.5, 5).build().unwrap();
        let g = sp.population.gradient(&sp.theta_star, 0.0).unwrap();
        assert!(g.norm() < 1e-14);
        let solved = sp
            .population
            .minimize(0.0, &SolverConfig::with_tol(1e-12))
            .unwrap();
        assert_relative_eq!(solved, sp.theta_star, epsilon = 1e-10);
        assert_relative_eq!(sp.source.norm(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn range_errors() {
        assert!(make_source_population(1, 0.5, 2.0, 0).is_err());
        assert!(make_source_population(8, 0.8, 2.0, 0).is_err());
        assert!(make_source_population(8, 0.5, 0.5, 0).is_err());
    }

    #[test]
    fn logistic_population_is_well_specified() {
        let (pop, theta) = make_logistic_population(3, 6, 1.5, 11).unwrap();
        assert!(pop.gradient(&theta, 0.0).unwrap().norm() < 1e-15);
        assert_relative_eq!(theta.norm(), 1.5, epsilon = 1e-14);
    }

    #[test]
    fn softmax_population_is_well_specified() {
        let (pop, theta) = make_softmax_population(3, 4, 5, 2).unwrap();
        assert!(pop.gradient(&theta, 0.0).unwrap().norm() < 1e-14);
    }
}
