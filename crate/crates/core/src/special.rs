//! Auxiliary scalar functions appearing in the self-concordance bounds.

const SERIES_CUTOFF: f64 = 1e-4;

/// `(e^t - t - 1) / t^2`, equal to 1/2 at zero.
pub fn psi(t: f64) -> f64 {
    if t.abs() < SERIES_CUTOFF {
        0.5 + t * (1.0 / 6.0 + t * (1.0 / 24.0 + t * (1.0 / 120.0 + t / 720.0)))
    } else {
        (t.exp_m1() - t) / (t * t)
    }
}

/// `(1 - e^{-t}) / t`, equal to 1 at zero.
pub fn phi_lower(t: f64) -> f64 {
    if t.abs() < SERIES_CUTOFF {
        1.0 + t * (-0.5 + t * (1.0 / 6.0 + t * (-1.0 / 24.0 + t / 120.0)))
    } else {
        -(-t).exp_m1() / t
    }
}

/// `(e^t - 1) / t`, equal to 1 at zero.
pub fn phi_upper(t: f64) -> f64 {
    if t.abs() < SERIES_CUTOFF {
        1.0 + t * (0.5 + t * (1.0 / 6.0 + t * (1.0 / 24.0 + t / 120.0)))
    } else {
        t.exp_m1() / t
    }
}

/// Logistic sigmoid without overflow.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn limits_at_zero() {
        assert_eq!(psi(0.0), 0.5);
        assert_eq!(phi_lower(0.0), 1.0);
        assert_eq!(phi_upper(0.0), 1.0);
    }

    #[test]
    fn series_matches_closed_form_near_cutoff() {
        for &t in &[9.9e-5f64, -9.9e-5, 1.01e-4, -1.01e-4, 5e-5] {
            let closed_psi = (t.exp_m1() - t) / (t * t);
            assert!((psi(t) - closed_psi).abs() < 1e-7, "psi {t}");
            assert!((phi_lower(t) + (-t).exp_m1() / t).abs() < 1e-13);
            assert!((phi_upper(t) - t.exp_m1() / t).abs() < 1e-13);
        }
    }

    #[test]
    fn psi_at_log2() {
        let l2 = std::f64::consts::LN_2;
        let expected = (2.0 - l2 - 1.0) / (l2 * l2);
        assert!((psi(l2) - expected).abs() < 1e-15);
        assert!((psi(l2) - 0.638_674_4).abs() < 1e-6);
    }

    #[test]
    fn sigmoid_and_softplus_are_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) == 1.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
    }

    #[test]
    fn phi_ordering() {
        for i in 0..=50 {
            let t = i as f64 * 0.2;
            assert!(phi_lower(t) <= phi_upper(t) + 1e-15);
            assert!(psi(t) > 0.0);
        }
    }
}
