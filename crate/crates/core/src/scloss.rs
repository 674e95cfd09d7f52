//! Generalized self-concordant losses with analytic derivatives and certificate sets.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{sigmoid, softplus};

/// One observation.
///
/// Scalar losses use a single feature vector and a real label. The softmax GLM
/// uses one feature vector per label and the index of the observed label.
#[derive(Debug, Clone, PartialEq)]
pub enum Sample {
    Scalar {
        features: DVector<f64>,
        label: f64,
    },
    Categorical {
        features: Vec<DVector<f64>>,
        label: usize,
    },
}

impl Sample {
    pub fn scalar(features: &[f64], label: f64) -> Self {
        Sample::Scalar {
            features: DVector::from_column_slice(features),
            label,
        }
    }

    pub fn categorical(features: &[Vec<f64>], label: usize) -> Self {
        Sample::Categorical {
            features: features
                .iter()
                .map(|f| DVector::from_column_slice(f))
                .collect(),
            label,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Sample::Scalar { features, .. } => features.len(),
            Sample::Categorical { features, .. } => features.first().map_or(0, |f| f.len()),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Sample::Scalar { features, label } => {
                if features.is_empty() {
                    return Err(Error::InvalidArgument("empty feature vector".into()));
                }
                if !label.is_finite() || features.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Domain("non-finite sample".into()));
                }
            }
            Sample::Categorical { features, label } => {
                let d = self.dim();
                if d == 0 {
                    return Err(Error::InvalidArgument("empty feature vector".into()));
                }
                if *label >= features.len() {
                    return Err(Error::InvalidArgument(format!(
                        "label index {label} outside [0, {})",
                        features.len()
                    )));
                }
                for f in features {
                    if f.len() != d {
                        return Err(Error::Dimension {
                            expected: d,
                            got: f.len(),
                        });
                    }
                    if f.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Domain("non-finite sample".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Loss family names, as used in configuration documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Square,
    HuberSqrt,
    HuberLogCosh,
    Logistic,
    SoftmaxGlm,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Square,
        LossKind::HuberSqrt,
        LossKind::HuberLogCosh,
        LossKind::Logistic,
        LossKind::SoftmaxGlm,
    ];
}

/// A loss family. The GLM carries positive base weights over its label set.
#[derive(Debug, Clone, PartialEq)]
pub enum LossModel {
    Square,
    HuberSqrt,
    HuberLogCosh,
    Logistic,
    SoftmaxGlm { base_measure: Vec<f64> },
}

/// Suprema of derivative norms over a support and a parameter ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupConstants {
    pub b1: f64,
    pub b2: f64,
    pub r: f64,
    /// False when `b1`/`b2` come from the direction grid rather than a closed form.
    pub closed_form: bool,
}

/// Value and first two derivatives of a scalar loss in the margin `m = theta . features`.
#[derive(Debug, Clone, Copy)]
struct MarginDerivs {
    value: f64,
    d1: f64,
    d2: f64,
}

impl LossModel {
    pub fn kind(&self) -> LossKind {
        match self {
            LossModel::Square => LossKind::Square,
            LossModel::HuberSqrt => LossKind::HuberSqrt,
            LossModel::HuberLogCosh => LossKind::HuberLogCosh,
            LossModel::Logistic => LossKind::Logistic,
            LossModel::SoftmaxGlm { .. } => LossKind::SoftmaxGlm,
        }
    }

    /// Softmax GLM with a uniform base measure over `labels` outcomes.
    pub fn softmax_uniform(labels: usize) -> Self {
        LossModel::SoftmaxGlm {
            base_measure: vec![1.0; labels],
        }
    }

    /// Check that the loss accepts this sample and that `theta` matches its dimension.
    pub fn check(&self, z: &Sample, theta: &DVector<f64>) -> Result<()> {
        z.validate()?;
        if theta.len() != z.dim() {
            return Err(Error::Dimension {
                expected: z.dim(),
                got: theta.len(),
            });
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite parameter".into()));
        }
        self.check_sample_kind(z)
    }

    fn check_sample_kind(&self, z: &Sample) -> Result<()> {
        match (self, z) {
            (LossModel::SoftmaxGlm { base_measure }, Sample::Categorical { features, .. }) => {
                if base_measure.len() != features.len() {
                    return Err(Error::InvalidArgument(format!(
                        "sample has {} labels, base measure has {}",
                        features.len(),
                        base_measure.len()
                    )));
                }
                if base_measure.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
                    return Err(Error::InvalidArgument(
                        "base measure weights must be positive".into(),
                    ));
                }
                Ok(())
            }
            (LossModel::SoftmaxGlm { .. }, Sample::Scalar { .. }) => Err(Error::InvalidArgument(
                "softmax GLM needs a categorical sample".into(),
            )),
            (_, Sample::Categorical { .. }) => Err(Error::InvalidArgument(
                "scalar loss needs a scalar sample".into(),
            )),
            _ => Ok(()),
        }
    }

    fn margin_derivs(&self, m: f64, y: f64) -> MarginDerivs {
        match self {
            LossModel::Square => {
                let t = m - y;
                MarginDerivs {
                    value: 0.5 * t * t,
                    d1: t,
                    d2: 1.0,
                }
            }
            LossModel::HuberSqrt => {
                let t = y - m;
                let s = t.hypot(1.0);
                MarginDerivs {
                    value: t * t / (s + 1.0),
                    d1: -t / s,
                    d2: 1.0 / (s * s * s),
                }
            }
            LossModel::HuberLogCosh => {
                let t = y - m;
                let a = t.abs();
                let sech = 1.0 / t.cosh();
                MarginDerivs {
                    value: a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2,
                    d1: -t.tanh(),
                    d2: sech * sech,
                }
            }
            LossModel::Logistic => {
                let u = y * m;
                MarginDerivs {
                    value: softplus(-u),
                    d1: -y * sigmoid(-u),
                    d2: y * y * sigmoid(u) * sigmoid(-u),
                }
            }
            LossModel::SoftmaxGlm { .. } => unreachable!("GLM has no scalar margin"),
        }
    }

    /// Softmax probabilities and log-partition for a categorical sample.
    fn softmax(&self, features: &[DVector<f64>], theta: &DVector<f64>) -> (Vec<f64>, f64) {
        let LossModel::SoftmaxGlm { base_measure } = self else {
            unreachable!()
        };
        let scores: Vec<f64> = features
            .iter()
            .zip(base_measure)
            .map(|(f, mu)| theta.dot(f) + mu.ln())
            .collect();
        let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
        let total: f64 = exps.iter().sum();
        let probs = exps.iter().map(|e| e / total).collect();
        (probs, top + total.ln())
    }

    /// `l_z(theta)`.
    pub fn value(&self, z: &Sample, theta: &DVector<f64>) -> Result<f64> {
        self.check(z, theta)?;
        Ok(self.value_unchecked(z, theta))
    }

    pub(crate) fn value_unchecked(&self, z: &Sample, theta: &DVector<f64>) -> f64 {
        match z {
            Sample::Scalar { features, label } => {
                self.margin_derivs(theta.dot(features), *label).value
            }
            Sample::Categorical { features, label } => {
                let (_, log_partition) = self.softmax(features, theta);
                log_partition - theta.dot(&features[*label])
            }
        }
    }

    /// Gradient of `l_z` at `theta`.
    pub fn gradient(&self, z: &Sample, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(z, theta)?;
        let mut g = DVector::zeros(theta.len());
        self.accumulate(z, theta, 1.0, &mut g, None);
        Ok(g)
    }

    /// Hessian of `l_z` at `theta`.
    pub fn hessian(&self, z: &Sample, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check(z, theta)?;
        let d = theta.len();
        let mut g = DVector::zeros(d);
        let mut h = DMatrix::zeros(d, d);
        self.accumulate(z, theta, 1.0, &mut g, Some(&mut h));
        Ok(h)
    }

    /// Adds `weight * grad` and optionally `weight * hess` into the buffers; returns the value.
    pub(crate) fn accumulate(
        &self,
        z: &Sample,
        theta: &DVector<f64>,
        weight: f64,
        grad: &mut DVector<f64>,
        hess: Option<&mut DMatrix<f64>>,
    ) -> f64 {
        match z {
            Sample::Scalar { features, label } => {
                let md = self.margin_derivs(theta.dot(features), *label);
                grad.axpy(weight * md.d1, features, 1.0);
                if let Some(h) = hess {
                    h.ger(weight * md.d2, features, features, 1.0);
                }
                md.value
            }
            Sample::Categorical { features, label } => {
                let (probs, log_partition) = self.softmax(features, theta);
                let mut mean = DVector::zeros(theta.len());
                for (p, f) in probs.iter().zip(features) {
                    mean.axpy(*p, f, 1.0);
                }
                grad.axpy(weight, &mean, 1.0);
                grad.axpy(-weight, &features[*label], 1.0);
                if let Some(h) = hess {
                    for (p, f) in probs.iter().zip(features) {
                        h.ger(weight * p, f, f, 1.0);
                    }
                    h.ger(-weight, &mean, &mean, 1.0);
                }
                log_partition - theta.dot(&features[*label])
            }
        }
    }

    /// Curvature weight `l''(m)` for scalar losses, used for factored Hessians.
    pub(crate) fn scalar_curvature(&self, m: f64, y: f64) -> (f64, f64, f64) {
        let md = self.margin_derivs(m, y);
        (md.value, md.d1, md.d2)
    }

    /// The nonzero points of the certificate set of `z` (empty for the square loss).
    pub fn certificates(&self, z: &Sample) -> Vec<DVector<f64>> {
        match (self, z) {
            (LossModel::Square, _) => Vec::new(),
            (LossModel::HuberSqrt, Sample::Scalar { features, .. }) => vec![features * 3.0],
            (LossModel::HuberLogCosh, Sample::Scalar { features, .. }) => vec![features * 2.0],
            (LossModel::Logistic, Sample::Scalar { features, label }) => vec![features * *label],
            (LossModel::SoftmaxGlm { .. }, Sample::Categorical { features, .. }) => {
                features.iter().map(|f| f * 2.0).collect()
            }
            _ => Vec::new(),
        }
    }

    /// `sup_{g in phi(z)} |k . g|`.
    pub fn sc_factor(&self, z: &Sample, direction: &DVector<f64>) -> Result<f64> {
        z.validate()?;
        if direction.len() != z.dim() {
            return Err(Error::Dimension {
                expected: z.dim(),
                got: direction.len(),
            });
        }
        self.check_sample_kind(z)?;
        Ok(self.sc_factor_unchecked(z, direction))
    }

    pub(crate) fn sc_factor_unchecked(&self, z: &Sample, direction: &DVector<f64>) -> f64 {
        match (self, z) {
            (LossModel::Square, _) => 0.0,
            (LossModel::HuberSqrt, Sample::Scalar { features, .. }) => {
                3.0 * direction.dot(features).abs()
            }
            (LossModel::HuberLogCosh, Sample::Scalar { features, .. }) => {
                2.0 * direction.dot(features).abs()
            }
            (LossModel::Logistic, Sample::Scalar { features, label }) => {
                (label * direction.dot(features)).abs()
            }
            (LossModel::SoftmaxGlm { .. }, Sample::Categorical { features, .. }) => features
                .iter()
                .map(|f| 2.0 * direction.dot(f).abs())
                .fold(0.0, f64::max),
            _ => 0.0,
        }
    }

    /// `sup_{g in phi(z)} ||g||`.
    pub fn certificate_norm(&self, z: &Sample) -> f64 {
        self.certificates(z)
            .iter()
            .map(|g| g.norm())
            .fold(0.0, f64::max)
    }

    /// Bounds `B1 >= sup ||grad||`, `B2 >= sup Tr hess` over `support` and the ball of
    /// radius `radius`, and the exact certificate radius `R`.
    pub fn sup_constants(&self, support: &[Sample], radius: f64) -> Result<SupConstants> {
        if support.is_empty() {
            return Err(Error::EmptySupport);
        }
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "radius {radius} must be finite and >= 0"
            )));
        }
        let d = support[0].dim();
        for z in support {
            self.check(z, &DVector::zeros(d))?;
        }
        let r = support
            .iter()
            .map(|z| self.certificate_norm(z))
            .fold(0.0, f64::max);

        if let LossModel::SoftmaxGlm { .. } = self {
            let (b1, b2) = self.grid_sups(support, radius, d);
            return Ok(SupConstants {
                b1,
                b2,
                r,
                closed_form: false,
            });
        }

        let mut b1: f64 = 0.0;
        let mut b2: f64 = 0.0;
        for z in support {
            let Sample::Scalar { features, label } = z else {
                unreachable!()
            };
            let f = features.norm();
            let y = label.abs();
            // Residual range over the ball: |y - m| in [max(0, |y| - rho f), |y| + rho f].
            let far = y + radius * f;
            let near = (y - radius * f).max(0.0);
            let (g, h) = match self {
                LossModel::Square => (far * f, f * f),
                LossModel::HuberSqrt => (far / far.hypot(1.0) * f, f * f / near.hypot(1.0).powi(3)),
                LossModel::HuberLogCosh => {
                    let sech = 1.0 / near.cosh();
                    (far.tanh() * f, sech * sech * f * f)
                }
                LossModel::Logistic => (y * f, y * y * f * f / 4.0),
                LossModel::SoftmaxGlm { .. } => unreachable!(),
            };
            b1 = b1.max(g);
            b2 = b2.max(h);
        }
        Ok(SupConstants {
            b1,
            b2,
            r,
            closed_form: true,
        })
    }

    /// Deterministic search over 64 directions and 32 radii, including the origin.
    fn grid_sups(&self, support: &[Sample], radius: f64, d: usize) -> (f64, f64) {
        const DIRECTIONS: usize = 64;
        const RADII: usize = 32;
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_d1ec);
        let mut b1: f64 = 0.0;
        let mut b2: f64 = 0.0;
        let mut probe = |theta: &DVector<f64>| {
            for z in support {
                let mut g = DVector::zeros(d);
                let mut h = DMatrix::zeros(d, d);
                self.accumulate(z, theta, 1.0, &mut g, Some(&mut h));
                b1 = b1.max(g.norm());
                b2 = b2.max(h.trace());
            }
        };
        probe(&DVector::zeros(d));
        for _ in 0..DIRECTIONS {
            let mut u = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let n = u.norm();
            if n == 0.0 {
                continue;
            }
            u /= n;
            for k in 1..=RADII {
                probe(&(&u * (radius * k as f64 / RADII as f64)));
            }
        }
        (b1, b2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn value_examples() {
        let z = Sample::scalar(&[1.0], 1.0);
        let zero = v(&[0.0]);
        assert_relative_eq!(LossModel::Logistic.value(&z, &zero).unwrap(), 2f64.ln());
        assert_relative_eq!(LossModel::Square.value(&z, &zero).unwrap(), 0.5);
        let z = Sample::scalar(&[1.0], 3f64.sqrt());
        assert_relative_eq!(
            LossModel::HuberSqrt.value(&z, &zero).unwrap(),
            1.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn gradient_examples() {
        let z = Sample::scalar(&[1.0, 0.0], 1.0);
        let g = LossModel::Logistic.gradient(&z, &v(&[0.0, 0.0])).unwrap();
        assert_eq!(g, v(&[-0.5, 0.0]));
        let z = Sample::scalar(&[1.0], 1.0);
        assert_eq!(
            LossModel::Square.gradient(&z, &v(&[0.0])).unwrap(),
            v(&[-1.0])
        );
        let z = Sample::categorical(&[vec![1.0, 0.0], vec![0.0, 1.0]], 0);
        let g = LossModel::softmax_uniform(2)
            .gradient(&z, &v(&[0.0, 0.0]))
            .unwrap();
        assert_relative_eq!(g, v(&[-0.5, 0.5]), epsilon = 1e-15);
    }

    #[test]
    fn hessian_examples() {
        let z = Sample::scalar(&[1.0], 1.0);
        let h = LossModel::Logistic.hessian(&z, &v(&[0.0])).unwrap();
        assert_relative_eq!(h[(0, 0)], 0.25);
        let h = LossModel::Square.hessian(&z, &v(&[3.7])).unwrap();
        assert_eq!(h[(0, 0)], 1.0);
        // residual zero: y = theta . features
        let z = Sample::scalar(&[1.0], 0.4);
        let h = LossModel::HuberSqrt.hessian(&z, &v(&[0.4])).unwrap();
        assert_relative_eq!(h[(0, 0)], 1.0);
    }

    #[test]
    fn sc_factor_examples() {
        let z = Sample::scalar(&[2.0, 1.0], 5.0);
        assert_eq!(
            LossModel::Square.sc_factor(&z, &v(&[1.0, 1.0])).unwrap(),
            0.0
        );
        let z = Sample::scalar(&[0.3], -1.0);
        assert_relative_eq!(LossModel::Logistic.sc_factor(&z, &v(&[1.0])).unwrap(), 0.3);
        let z = Sample::categorical(&[vec![0.1], vec![-0.4], vec![0.2]], 1);
        assert_relative_eq!(
            LossModel::softmax_uniform(3)
                .sc_factor(&z, &v(&[1.0]))
                .unwrap(),
            0.8
        );
    }

    #[test]
    fn sup_constant_examples() {
        let support = vec![Sample::scalar(&[1.0], 1.0)];
        let c = LossModel::Logistic.sup_constants(&support, 1.0).unwrap();
        assert_eq!(c.r, 1.0);
        assert_eq!(c.b1, 1.0);
        assert!(c.closed_form);
        let c = LossModel::Logistic.sup_constants(&support, 50.0).unwrap();
        assert_eq!(c.b1, 1.0);
        let c = LossModel::Square.sup_constants(&support, 2.0).unwrap();
        assert_eq!(c.r, 0.0);
        assert!(LossModel::Square.sup_constants(&[], 1.0).is_err());
    }

    #[test]
    fn logistic_b1_dominates_brute_force_grid() {
        let support = vec![Sample::scalar(&[1.0], 1.0), Sample::scalar(&[1.0], -1.0)];
        let c = LossModel::Logistic.sup_constants(&support, 5.0).unwrap();
        for i in -500..=500 {
            let theta = v(&[i as f64 * 0.01]);
            for z in &support {
                let g = LossModel::Logistic.gradient(z, &theta).unwrap().norm();
                assert!(g <= c.b1);
            }
        }
    }

    #[test]
    fn closed_form_sups_dominate_sampled_points() {
        let support = vec![
            Sample::scalar(&[0.6, -0.8], 0.5),
            Sample::scalar(&[1.5, 0.2], -2.0),
        ];
        let radius = 1.3;
        for loss in [
            LossModel::Square,
            LossModel::HuberSqrt,
            LossModel::HuberLogCosh,
        ] {
            let c = loss.sup_constants(&support, radius).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            for _ in 0..2000 {
                let angle: f64 = rng.random::<f64>() * std::f64::consts::TAU;
                let rho: f64 = radius * rng.random::<f64>();
                let theta = v(&[rho * angle.cos(), rho * angle.sin()]);
                for z in &support {
                    assert!(loss.gradient(z, &theta).unwrap().norm() <= c.b1 * (1.0 + 1e-12));
                    assert!(loss.hessian(z, &theta).unwrap().trace() <= c.b2 * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn glm_sups_are_flagged_estimated() {
        let support = vec![Sample::categorical(&[vec![1.0, 0.0], vec![0.0, 1.0]], 0)];
        let c = LossModel::softmax_uniform(2)
            .sup_constants(&support, 1.0)
            .unwrap();
        assert!(!c.closed_form);
        assert_relative_eq!(c.r, 2.0);
        assert!(c.b1 >= 0.5f64.sqrt() - 1e-12);
    }

    #[test]
    fn errors_are_reported() {
        let z = Sample::scalar(&[1.0, 2.0], 1.0);
        assert!(matches!(
            LossModel::Square.value(&z, &v(&[1.0])),
            Err(Error::Dimension { .. })
        ));
        let z = Sample::scalar(&[f64::NAN], 1.0);
        assert!(matches!(
            LossModel::Square.value(&z, &v(&[1.0])),
            Err(Error::Domain(_))
        ));
        let z = Sample::categorical(&[vec![1.0], vec![2.0]], 2);
        assert!(LossModel::softmax_uniform(2).value(&z, &v(&[1.0])).is_err());
        let z = Sample::categorical(&[vec![1.0], vec![2.0]], 1);
        assert!(LossModel::Logistic.value(&z, &v(&[1.0])).is_err());
    }

    #[test]
    fn stable_at_extreme_margins() {
        let z = Sample::scalar(&[1.0], 1.0);
        for loss in [
            LossModel::Logistic,
            LossModel::HuberLogCosh,
            LossModel::HuberSqrt,
        ] {
            for m in [-1e4, 1e4] {
                let theta = v(&[m]);
                assert!(loss.value(&z, &theta).unwrap().is_finite());
                assert!(loss.hessian(&z, &theta).unwrap()[(0, 0)].is_finite());
            }
        }
        let z = Sample::categorical(&[vec![1000.0], vec![-1000.0]], 1);
        let val = LossModel::softmax_uniform(2).value(&z, &v(&[1.0])).unwrap();
        assert_relative_eq!(val, 2000.0, max_relative = 1e-12);
    }
}
