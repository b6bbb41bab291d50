//! Scalar special functions shared by the fitting and inference code.

use statrs::function::erf::{erfc, erfc_inv};

/// Logistic function, numerically stable for large |x|.
pub(crate) fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Standard normal CDF via the complementary error function.
pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub(crate) fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal quantile.
pub(crate) fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile level must be in (0,1)");
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// z_{1-alpha/2} for a two-sided interval at level alpha.
pub(crate) fn z_two_sided(alpha: f64) -> f64 {
    normal_quantile(1.0 - alpha / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expit_matches_reference_points() {
        assert!((expit(0.0) - 0.5).abs() < 1e-15);
        assert!((expit(30.0) - 1.0).abs() < 1e-12);
        assert!(expit(-710.0) >= 0.0);
        assert!((expit(1.0) - 0.731_058_578_630_004_9).abs() < 1e-15);
    }

    #[test]
    fn normal_cdf_symmetry_and_tails() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        for x in [-3.0, -1.0, -0.2, 0.7, 2.5] {
            assert!((normal_cdf(x) + normal_cdf(-x) - 1.0).abs() < 1e-14);
        }
        // erfc carries a few 1e-12 of absolute error in the tails.
        assert!((normal_cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-10);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for p in [0.025, 0.1, 0.5, 0.9, 0.975] {
            let x = normal_quantile(p);
            assert!((normal_cdf(x) - p).abs() < 1e-10);
        }
        assert!((z_two_sided(0.05) - 1.959_963_984_540_054).abs() < 1e-12);
    }
}
