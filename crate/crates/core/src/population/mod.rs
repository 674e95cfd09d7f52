//! Finitely supported distributions: exact risks, minimizers and diagnostics.

mod diagnostics;
mod generators;

pub use diagnostics::{
    default_lambda_grid, estimate_capacity_exponent, estimate_source_exponent, DiagnosticsReport,
    ExponentFit, LocalSummary,
};
pub use generators::{
    make_logistic_population, make_softmax_population, make_source_population, SourceDesign,
    SourcePopulation,
};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, inv_quad, Spectrum};
use crate::objective::{Objective, WeightedRisk};
use crate::scloss::{LossModel, Sample, SupConstants};
use crate::solver::{minimize, SolverConfig};

/// Weighted atoms with a loss; every expectation is an exact finite sum.
#[derive(Debug, Clone, PartialEq)]
pub struct FinitePopulation {
    atoms: Vec<Sample>,
    weights: Vec<f64>,
    loss: LossModel,
}

impl FinitePopulation {
    pub fn new(atoms: Vec<Sample>, weights: Vec<f64>, loss: LossModel) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::EmptySupport);
        }
        if atoms.len() != weights.len() {
            return Err(Error::Dimension {
                expected: atoms.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument(
                "weights must be strictly positive".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "weights sum to {total}, not 1"
            )));
        }
        let d = atoms[0].dim();
        let origin = DVector::zeros(d);
        for z in &atoms {
            loss.check(z, &origin)?;
        }
        Ok(FinitePopulation {
            atoms,
            weights,
            loss,
        })
    }

    pub fn atoms(&self) -> &[Sample] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn loss(&self) -> &LossModel {
        &self.loss
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].dim()
    }

    pub(crate) fn objective(&self, lambda: f64) -> Result<WeightedRisk<'_>> {
        WeightedRisk::new(&self.atoms, &self.weights, &self.loss, lambda)
    }

    /// `L(theta) + lambda/2 ||theta||^2`.
    pub fn risk(&self, theta: &DVector<f64>, lambda: f64) -> Result<f64> {
        self.objective(lambda)?.value(theta)
    }

    pub fn gradient(&self, theta: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
        self.objective(lambda)?.gradient(theta)
    }

    /// `H(theta) + lambda I`.
    pub fn hessian(&self, theta: &DVector<f64>, lambda: f64) -> Result<DMatrix<f64>> {
        self.objective(lambda)?.hessian(theta)
    }

    /// Minimizer of the regularized risk. At `lambda = 0` the infimum must be attained;
    /// a vanishing curvature along the iterates is reported as divergence.
    pub fn minimize(&self, lambda: f64, config: &SolverConfig) -> Result<DVector<f64>> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be >= 0, got {lambda}"
            )));
        }
        let objective = self.objective(lambda)?;
        let result = minimize(&objective, DVector::zeros(self.dim()), config)?;
        let theta = result.theta_hat;
        let (_, grad, hess) = objective.second_order(&theta)?;
        if lambda == 0.0 {
            let spectrum = Spectrum::new(&hess);
            let smallest = spectrum
                .values
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            if smallest <= 1e-12 * hess.trace().max(1.0) {
                return Err(Error::Divergence {
                    reason: "curvature vanishes: the unregularized infimum is not attained".into(),
                    trace: result.decrement_trace,
                });
            }
        }
        if grad.norm() > config.tol.max(1e-12) * 10.0 {
            return Err(Error::NonConvergence {
                iterations: result.iterations,
                last: grad.norm(),
                trace: result.decrement_trace,
            });
        }
        Ok(theta)
    }

    pub fn sup_constants(&self, radius: f64) -> Result<SupConstants> {
        self.loss.sup_constants(&self.atoms, radius)
    }

    /// `sup_z sup_{g in phi(z)} |direction . g|`.
    pub fn certificate_seminorm(&self, direction: &DVector<f64>) -> f64 {
        self.atoms
            .iter()
            .map(|z| self.loss.sc_factor_unchecked(z, direction))
            .fold(0.0, f64::max)
    }

    /// Radius `R = sup_z sup_{g in phi(z)} ||g||`.
    pub fn certificate_radius(&self) -> f64 {
        self.atoms
            .iter()
            .map(|z| self.loss.certificate_norm(z))
            .fold(0.0, f64::max)
    }

    /// Radius of the Dikin ellipsoid at `theta`; infinite when every certificate vanishes.
    pub fn dikin_radius(&self, theta: &DVector<f64>, lambda: f64) -> Result<f64> {
        require_positive(lambda)?;
        let chol = cholesky(&self.hessian(theta, lambda)?)?;
        let worst = self
            .atoms
            .iter()
            .flat_map(|z| self.loss.certificates(z))
            .map(|g| inv_quad(&chol, &g))
            .fold(0.0, f64::max);
        Ok(if worst > 0.0 {
            1.0 / worst.sqrt()
        } else {
            f64::INFINITY
        })
    }

    /// `E[grad l_z(theta) grad l_z(theta)^T]`.
    pub fn score_covariance(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let mut out = DMatrix::zeros(d, d);
        for (z, w) in self.atoms.iter().zip(&self.weights) {
            let g = self.loss.gradient(z, theta)?;
            out.ger(*w, &g, &g, 1.0);
        }
        Ok(out)
    }

    /// Solve for `theta*` and prepare the quantities diagnostics reuse across `lambda`.
    pub fn solve(&self, config: &SolverConfig) -> Result<PopulationSolution> {
        let theta_star = self.minimize(0.0, config)?;
        PopulationSolution::at(self, theta_star)
    }
}

fn require_positive(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be > 0, got {lambda}"
        )));
    }
    Ok(())
}

/// Derivative bounds localized at `theta*`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalConstants {
    /// `sup_z ||grad l_z(theta*)||`.
    pub b1_star: f64,
    /// `sup_z Tr hess l_z(theta*)`.
    pub b2_star: f64,
    /// `B1*^2 / B2*`.
    pub q_star_sq: f64,
    /// Certificate radius `R`.
    pub r: f64,
}

/// `theta*` with the spectral data of `H(theta*)` and cached regularized minimizers.
#[derive(Debug, Clone)]
pub struct PopulationSolution {
    pub theta_star: DVector<f64>,
    pub hessian_at_star: DMatrix<f64>,
    pub spectrum: Spectrum,
    pub local: LocalConstants,
    /// `sum_z w_z (u_j . grad l_z(theta*))^2` for each eigenvector `u_j`.
    score_energy: DVector<f64>,
    regularized: Vec<(f64, DVector<f64>)>,
}

impl PopulationSolution {
    /// Build from a known minimizer of the unregularized risk.
    pub fn at(pop: &FinitePopulation, theta_star: DVector<f64>) -> Result<Self> {
        let hessian_at_star = pop.hessian(&theta_star, 0.0)?;
        let spectrum = Spectrum::new(&hessian_at_star);
        let mut score_energy = DVector::zeros(pop.dim());
        let mut b1_star: f64 = 0.0;
        let mut b2_star: f64 = 0.0;
        for (z, w) in pop.atoms.iter().zip(&pop.weights) {
            let g = pop.loss.gradient(z, &theta_star)?;
            let h = pop.loss.hessian(z, &theta_star)?;
            b1_star = b1_star.max(g.norm());
            b2_star = b2_star.max(h.trace());
            let c = spectrum.vectors.tr_mul(&g);
            score_energy += c.map(|x| x * x) * *w;
        }
        let q_star_sq = if b2_star > 0.0 {
            b1_star * b1_star / b2_star
        } else {
            0.0
        };
        Ok(PopulationSolution {
            theta_star,
            hessian_at_star,
            spectrum,
            local: LocalConstants {
                b1_star,
                b2_star,
                q_star_sq,
                r: pop.certificate_radius(),
            },
            score_energy,
            regularized: Vec::new(),
        })
    }

    /// `lambda ||H_lambda(theta*)^{-1/2} theta*||`.
    pub fn bias(&self, lambda: f64) -> Result<f64> {
        require_positive(lambda)?;
        Ok(lambda * self.spectrum.inv_norm_sq(&self.theta_star, lambda).sqrt())
    }

    /// `E ||H_lambda(theta*)^{-1/2} grad l_z(theta*)||^2`.
    pub fn df(&self, lambda: f64) -> Result<f64> {
        require_positive(lambda)?;
        Ok(self
            .score_energy
            .iter()
            .zip(self.spectrum.values.iter())
            .map(|(s, e)| s / (e + lambda))
            .sum())
    }

    /// `L = ||v||` for `theta* = H(theta*)^r v`; infinite when `theta*` has weight on the
    /// null space of `H(theta*)` and `r > 0`.
    pub fn source_norm(&self, r: f64) -> Result<f64> {
        if !(0.0..=0.5).contains(&r) {
            return Err(Error::InvalidArgument(format!(
                "source exponent r = {r} must lie in [0, 0.5]"
            )));
        }
        let coords = self.spectrum.vectors.tr_mul(&self.theta_star);
        let floor = 1e-13 * self.spectrum.max_value().max(1e-300);
        let mut total = 0.0;
        for (c, e) in coords.iter().zip(self.spectrum.values.iter()) {
            if *e > floor {
                total += c * c * e.powf(-2.0 * r);
            } else if r > 0.0 && c.abs() > 1e-12 * self.theta_star.norm().max(1.0) {
                return Ok(f64::INFINITY);
            } else {
                total += c * c;
            }
        }
        Ok(total.sqrt())
    }

    /// Cached `theta*_lambda`, if solved.
    pub fn regularized(&self, lambda: f64) -> Option<&DVector<f64>> {
        self.regularized
            .iter()
            .find(|(l, _)| *l == lambda)
            .map(|(_, t)| t)
    }

    /// Solve and cache `theta*_lambda`.
    pub fn ensure_regularized(
        &mut self,
        pop: &FinitePopulation,
        lambda: f64,
        config: &SolverConfig,
    ) -> Result<&DVector<f64>> {
        require_positive(lambda)?;
        if let Some(i) = self.regularized.iter().position(|(l, _)| *l == lambda) {
            return Ok(&self.regularized[i].1);
        }
        let theta = pop.minimize(lambda, config)?;
        self.regularized.push((lambda, theta));
        Ok(&self.regularized.last().unwrap().1)
    }

    pub fn insert_regularized(&mut self, lambda: f64, theta: DVector<f64>) {
        self.regularized.retain(|(l, _)| *l != lambda);
        self.regularized.push((lambda, theta));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
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

    fn s(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn exact_oracle_examples() {
        assert_relative_eq!(p1().risk(&s(0.0), 0.0).unwrap(), 1.0);
        assert_relative_eq!(p1().hessian(&s(0.4), 0.0).unwrap()[(0, 0)], 1.0);
        let h = p2().hessian(&s(3f64.ln()), 0.0).unwrap();
        assert_relative_eq!(h[(0, 0)], 0.1875, epsilon = 1e-15);
        let h = p2().hessian(&s(0.0), 0.3).unwrap();
        assert!(h[(0, 0)] >= 0.3);
    }

    #[test]
    fn minimizer_examples() {
        let cfg = SolverConfig::with_tol(1e-12);
        assert_relative_eq!(p1().minimize(0.0, &cfg).unwrap()[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(p1().minimize(1.0, &cfg).unwrap()[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(
            p2().minimize(0.0, &cfg).unwrap()[0],
            3f64.ln(),
            epsilon = 1e-10
        );
    }

    #[test]
    fn unattained_infimum_is_divergence() {
        let pop = FinitePopulation::new(
            vec![Sample::scalar(&[1.0], 1.0)],
            vec![1.0],
            LossModel::Logistic,
        )
        .unwrap();
        let err = pop.minimize(0.0, &SolverConfig::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::Divergence { .. } | Error::NonConvergence { .. }
        ));
    }

    #[test]
    fn bias_and_df_examples() {
        let sol = p1().solve(&SolverConfig::with_tol(1e-12)).unwrap();
        assert_relative_eq!(sol.bias(1.0).unwrap(), 0.5f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(sol.bias(3.0).unwrap(), 1.5, epsilon = 1e-12);
        assert_relative_eq!(sol.df(1.0).unwrap(), 0.5, epsilon = 1e-12);
        let sol = p2().solve(&SolverConfig::with_tol(1e-12)).unwrap();
        assert_relative_eq!(sol.df(3.0 / 16.0).unwrap(), 0.5, epsilon = 1e-10);
        let huge = 1e6 * sol.local.b2_star;
        assert!(sol.df(huge).unwrap() < 1e-4);
        assert!(sol.bias(0.0).is_err());
    }

    #[test]
    fn dikin_examples() {
        let pop = p1();
        assert_eq!(pop.dikin_radius(&s(0.3), 1.0).unwrap(), f64::INFINITY);
        let pop = p2();
        let r = pop.dikin_radius(&s(3f64.ln()), 1.0 / 16.0).unwrap();
        assert_relative_eq!(r, 0.5, epsilon = 1e-12);
        let lambda = 1e6;
        let r = pop.dikin_radius(&s(3f64.ln()), lambda).unwrap();
        assert_relative_eq!(r / lambda.sqrt(), 1.0, epsilon = 1e-6);
        assert!(pop.dikin_radius(&s(0.0), 0.0).is_err());
    }

    #[test]
    fn localized_constants() {
        let sol = p2().solve(&SolverConfig::with_tol(1e-12)).unwrap();
        // grad at theta* = -y sigma(-y theta*): |.| = 1/4 for y=+1, 3/4 for y=-1
        assert_relative_eq!(sol.local.b1_star, 0.75, epsilon = 1e-12);
        assert_relative_eq!(sol.local.b2_star, 0.1875, epsilon = 1e-12);
        assert_relative_eq!(sol.local.q_star_sq, 3.0, epsilon = 1e-10);
        assert_eq!(sol.local.r, 1.0);
    }

    #[test]
    fn construction_errors() {
        let a = vec![Sample::scalar(&[1.0], 0.0)];
        assert!(FinitePopulation::new(a.clone(), vec![0.9], LossModel::Square).is_err());
        assert!(FinitePopulation::new(a.clone(), vec![0.5, 0.5], LossModel::Square).is_err());
        assert!(FinitePopulation::new(vec![], vec![], LossModel::Square).is_err());
        let mixed = vec![
            Sample::scalar(&[1.0], 0.0),
            Sample::scalar(&[1.0, 2.0], 0.0),
        ];
        assert!(FinitePopulation::new(mixed, vec![0.5, 0.5], LossModel::Square).is_err());
    }
}
