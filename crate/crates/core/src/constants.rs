//! Constants of the risk bounds as functions of `t` (the certificate seminorm of
//! `theta*_lambda - theta*`) and `t_tilde = Bias / r_lambda(theta*)`.

use serde::Serialize;

use crate::special::{phi_lower, psi};

const LN2: f64 = std::f64::consts::LN_2;

/// Constants of the simplified (slow-rate) analysis; they do not depend on the problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimplifiedConstants {
    pub k_var: f64,
    pub triangle: f64,
    pub c_bias: f64,
    pub c_var: f64,
}

impl SimplifiedConstants {
    pub fn new() -> Self {
        let k_var = (1.0 + psi(LN2)) / phi_lower(LN2).powi(2);
        let triangle = 2.0 * 2f64.sqrt() * (1.0 + 1.0 / (2.0 * 3f64.sqrt()));
        SimplifiedConstants {
            k_var,
            triangle,
            c_bias: 1.0 + k_var / 8.0,
            c_var: 2.0 * k_var * triangle * triangle,
        }
    }
}

impl Default for SimplifiedConstants {
    fn default() -> Self {
        Self::new()
    }
}

/// Problem-dependent constants at one regularization level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Constants {
    pub t: f64,
    pub t_tilde: f64,
    pub k_bias: f64,
    pub k_var: f64,
    pub box1: f64,
    pub box2: f64,
    pub tri1: f64,
    pub tri2: f64,
    pub c_bias: f64,
    pub c_var: f64,
    pub simplified: SimplifiedConstants,
}

impl Constants {
    pub fn evaluate(t: f64, t_tilde: f64) -> Self {
        let p = psi(t + LN2);
        let low_t = phi_lower(t);
        let low_l2 = phi_lower(LN2).powi(2);
        let box1 = (t / 2.0).exp();
        let box2 = box1 * (1.0 + t.exp());
        Constants {
            t,
            t_tilde,
            k_bias: 2.0 * p / (low_t * low_t),
            k_var: 2.0 * p * t.exp() / low_l2,
            box1,
            box2,
            tri1: 576.0 * box1.powi(2) * box2.powi(2) * t_tilde.max(0.5).powi(2),
            tri2: 256.0 * box1.powi(4),
            c_bias: p * (2.0 / low_t + t.exp() / low_l2),
            c_var: 64.0 * p * (2.0 * t).exp() / low_l2,
            simplified: SimplifiedConstants::new(),
        }
    }

    /// True when the bias sits within half the Dikin radius.
    pub fn small_branch(&self) -> bool {
        self.t_tilde <= 0.5
    }

    /// Upper bounds on each constant: universal ones on the small branch, exponential in
    /// `R ||theta*||` otherwise. Order matches [`Constants::values`].
    pub fn bounds(&self, r_norm: f64) -> [f64; 8] {
        if self.small_branch() {
            [4.0, 7.0, 2.0, 5.0, 5184.0, 1024.0, 6.0, 414.0]
        } else {
            let e = |k: f64| (k * r_norm).exp();
            [
                2.0 * e(6.0),
                8.0 * e(4.0),
                e(1.0),
                2.0 * e(3.0),
                2304.0 * r_norm.max(0.5).powi(2) * e(8.0),
                256.0 * e(4.0),
                6.0 * e(4.0),
                256.0 * e(6.0),
            ]
        }
    }

    /// Bounds in terms of `t` alone, valid for every `t >= 0`.
    pub fn exponential_bounds(&self) -> [f64; 8] {
        let e = |k: f64| (k * self.t).exp();
        [
            2.0 * e(3.0),
            8.0 * e(2.0),
            e(0.5),
            2.0 * e(1.5),
            2304.0 * e(4.0) * self.t_tilde.max(0.5).powi(2),
            256.0 * e(2.0),
            6.0 * e(2.0),
            256.0 * e(3.0),
        ]
    }

    pub fn values(&self) -> [f64; 8] {
        [
            self.k_bias,
            self.k_var,
            self.box1,
            self.box2,
            self.tri1,
            self.tri2,
            self.c_bias,
            self.c_var,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn k_bias_at_zero() {
        // 2 psi(log 2) with psi(log 2) = (1 - log 2) / log^2 2
        let expected = 2.0 * (1.0 - LN2) / (LN2 * LN2);
        let c = Constants::evaluate(0.0, 0.0);
        assert!((c.k_bias - expected).abs() < 1e-14);
        assert!((c.k_bias - 1.277_35).abs() < 1e-5);
    }

    #[test]
    fn k_var_at_log2() {
        let c = Constants::evaluate(LN2, 0.5);
        let direct = 2.0 * psi(2.0 * LN2) * 2.0 / phi_lower(LN2).powi(2);
        assert!((c.k_var - direct).abs() < 1e-13);
        assert!((c.k_var - 6.455).abs() < 1e-3);
        assert!(c.k_var <= 7.0);
    }

    #[test]
    fn small_branch_bounds_hold_at_the_edge() {
        let c = Constants::evaluate(LN2, 0.5);
        for (v, b) in c.values().iter().zip(c.bounds(10.0)) {
            assert!(*v <= b * (1.0 + 1e-12), "{v} > {b}");
        }
        assert!((c.tri1 - 5184.0).abs() < 1e-9);
        assert!((c.tri2 - 1024.0).abs() < 1e-9);
    }

    #[test]
    fn simplified_constants() {
        let s = SimplifiedConstants::new();
        assert!(s.k_var <= 4.0 && (s.k_var - 3.149).abs() < 1e-3);
        assert!(s.triangle <= 4.0);
        assert!(s.c_bias <= 2.0);
        assert!(s.c_var <= 84.0);
    }

    proptest! {
        #[test]
        fn exponential_bounds_hold(t in 0.0f64..6.0, tt in 0.0f64..4.0) {
            let c = Constants::evaluate(t, tt);
            for (v, b) in c.values().iter().zip(c.exponential_bounds()) {
                prop_assert!(*v <= b * (1.0 + 1e-12), "{} > {}", v, b);
            }
        }

        #[test]
        fn constants_increase_in_t(t in 0.0f64..5.0, dt in 1e-3f64..1.0) {
            let a = Constants::evaluate(t, 1.0);
            let b = Constants::evaluate(t + dt, 1.0);
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!(*x <= y);
            }
        }

        #[test]
        fn branch_bounds_follow_localization(rn in 0.0f64..2.0, frac in 0.0f64..1.0, tt in 0.51f64..2.0) {
            // Off the small branch: t <= 2 R||theta*|| and t_tilde <= R||theta*||.
            let t = frac * 2.0 * rn;
            let c = Constants::evaluate(t, tt.min(rn.max(0.51)));
            let bound_rn = rn.max(c.t_tilde);
            for (v, b) in c.values().iter().zip(c.bounds(bound_rn)) {
                prop_assert!(*v <= b * (1.0 + 1e-12), "{} > {}", v, b);
            }
        }
    }
}
