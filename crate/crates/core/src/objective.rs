//! Weighted regularized risk `sum_i w_i l_{z_i}(theta) + lambda/2 ||theta||^2`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scloss::{LossModel, Sample};

/// A smooth convex objective the Newton solver can minimize.
pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, theta: &DVector<f64>) -> Result<f64>;
    /// Value, gradient and Hessian at `theta`.
    fn second_order(&self, theta: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>)>;
}

/// Regularized risk of a weighted atom set. Weights are used as given.
#[derive(Debug, Clone, Copy)]
pub struct WeightedRisk<'a> {
    pub atoms: &'a [Sample],
    pub weights: &'a [f64],
    pub loss: &'a LossModel,
    pub lambda: f64,
}

impl<'a> WeightedRisk<'a> {
    pub fn new(
        atoms: &'a [Sample],
        weights: &'a [f64],
        loss: &'a LossModel,
        lambda: f64,
    ) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::EmptySupport);
        }
        if atoms.len() != weights.len() {
            return Err(Error::Dimension {
                expected: atoms.len(),
                got: weights.len(),
            });
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda {lambda} must be >= 0"
            )));
        }
        let d = atoms[0].dim();
        let origin = DVector::zeros(d);
        for (z, w) in atoms.iter().zip(weights) {
            if !(*w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidArgument(format!("weight {w} must be >= 0")));
            }
            loss.check(z, &origin)?;
        }
        Ok(WeightedRisk {
            atoms,
            weights,
            loss,
            lambda,
        })
    }

    fn check_theta(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn gradient(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_theta(theta)?;
        let mut g = theta * self.lambda;
        for (z, w) in self.active() {
            self.loss.accumulate(z, theta, w, &mut g, None);
        }
        Ok(g)
    }

    pub fn hessian(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.second_order(theta)?.2)
    }

    fn active(&self) -> impl Iterator<Item = (&Sample, f64)> {
        self.atoms
            .iter()
            .zip(self.weights.iter().copied())
            .filter(|(_, w)| *w > 0.0)
    }
}

impl Objective for WeightedRisk<'_> {
    fn dim(&self) -> usize {
        self.atoms[0].dim()
    }

    fn value(&self, theta: &DVector<f64>) -> Result<f64> {
        self.check_theta(theta)?;
        // Same summation order as `second_order`, so both report identical values.
        let mut value = 0.5 * self.lambda * theta.norm_squared();
        for (z, w) in self.active() {
            value += w * self.loss.value_unchecked(z, theta);
        }
        Ok(value)
    }

    fn second_order(&self, theta: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        self.check_theta(theta)?;
        let d = self.dim();
        let mut g = theta * self.lambda;
        let mut value = 0.5 * self.lambda * theta.norm_squared();
        let mut h = if let LossModel::SoftmaxGlm { .. } = self.loss {
            let mut h = DMatrix::zeros(d, d);
            for (z, w) in self.active() {
                value += w * self.loss.accumulate(z, theta, w, &mut g, Some(&mut h));
            }
            h
        } else {
            // Factored form: H = X^T X with rows sqrt(w l'') features.
            let active: Vec<_> = self.active().collect();
            let mut x = DMatrix::zeros(active.len(), d);
            for (row, (z, w)) in active.iter().enumerate() {
                let Sample::Scalar { features, label } = z else {
                    unreachable!()
                };
                let (val, d1, d2) = self.loss.scalar_curvature(theta.dot(features), *label);
                value += w * val;
                g.axpy(w * d1, features, 1.0);
                let scale = (w * d2).sqrt();
                x.row_mut(row).copy_from(&(features.transpose() * scale));
            }
            x.tr_mul(&x)
        };
        for i in 0..d {
            h[(i, i)] += self.lambda;
        }
        Ok((value, g, h))
    }
}
