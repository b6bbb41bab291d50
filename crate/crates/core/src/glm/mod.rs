//! Generalized linear model fitting by iteratively reweighted least squares.
//!
//! Three families cover the whole estimator stack: Bernoulli-logit,
//! Bernoulli-probit and Gaussian-identity, all with optional strictly
//! positive prior observation weights. A fit exposes the coefficient vector,
//! the inverse (weighted) Fisher information as its covariance, and supports
//! drawing coefficient vectors from the asymptotic normal approximation.

pub(crate) mod linalg;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::special::{expit, normal_cdf, normal_pdf, normal_quantile};

/// Maximum IRLS iterations before giving up.
const MAX_ITERATIONS: usize = 100;
/// Relative deviance change declaring convergence.
const DEVIANCE_TOL: f64 = 1e-10;
/// Max absolute score component tolerated in a converged fit.
const SCORE_TOL: f64 = 1e-6;
/// Coefficient magnitude treated as quasi-complete separation for Bernoulli
/// families; expit(30) is 1 to machine precision.
const SEPARATION_BOUND: f64 = 30.0;
/// Mean clamp used for working weights/responses only.
const MEAN_EPS: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum GlmError {
    #[error("IRLS failed to converge in {iterations} iterations (max |score| = {score_max:.3e})")]
    NonConvergence { iterations: usize, score_max: f64 },
    #[error("quasi-complete separation detected (|coefficient| exceeded {SEPARATION_BOUND})")]
    SeparationDetected,
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("covariance matrix is not positive semi-definite")]
    CovarianceNotPsd,
    #[error("dimension mismatch: expected {expected} columns, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Model family: distribution plus link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    BernoulliLogit,
    BernoulliProbit,
    GaussianIdentity,
}

impl Family {
    /// Inverse link applied to a linear predictor.
    pub fn inverse_link(self, eta: f64) -> f64 {
        match self {
            Family::BernoulliLogit => expit(eta),
            Family::BernoulliProbit => normal_cdf(eta),
            Family::GaussianIdentity => eta,
        }
    }

    /// Link function (used for initialization only).
    fn link(self, mu: f64) -> f64 {
        match self {
            Family::BernoulliLogit => (mu / (1.0 - mu)).ln(),
            Family::BernoulliProbit => normal_quantile(mu),
            Family::GaussianIdentity => mu,
        }
    }

    fn is_bernoulli(self) -> bool {
        matches!(self, Family::BernoulliLogit | Family::BernoulliProbit)
    }
}

/// A fitted GLM.
#[derive(Debug, Clone)]
pub struct ModelFit {
    /// Coefficients, intercept first (column order of the design).
    pub coefficients: Array1<f64>,
    /// Inverse of the weighted Fisher information at the optimum; for
    /// Gaussian-identity, scaled by the estimated dispersion.
    pub covariance: Array2<f64>,
    pub family: Family,
    pub converged: bool,
    pub iterations: usize,
    pub deviance: f64,
}

/// Fit a GLM by IRLS.
///
/// `design` must carry the intercept as its first column and have full column
/// rank; `prior_weights`, when supplied, must be strictly positive.
pub fn fit_glm(
    design: &Array2<f64>,
    response: &[f64],
    family: Family,
    prior_weights: Option<&[f64]>,
) -> Result<ModelFit, GlmError> {
    let n = design.nrows();
    let p = design.ncols();
    if response.len() != n {
        return Err(GlmError::DimensionMismatch { expected: n, actual: response.len() });
    }
    if n <= p {
        return Err(GlmError::InvalidInput(format!(
            "need more observations ({n}) than parameters ({p})"
        )));
    }
    if let Some(w) = prior_weights {
        if w.len() != n {
            return Err(GlmError::DimensionMismatch { expected: n, actual: w.len() });
        }
        if w.iter().any(|v| !(*v > 0.0)) {
            return Err(GlmError::InvalidInput("prior weights must be strictly positive".into()));
        }
    }
    let omega: Vec<f64> = prior_weights.map(|w| w.to_vec()).unwrap_or_else(|| vec![1.0; n]);

    // Initialize at zero with the intercept at link(adjusted marginal mean);
    // the adjustment keeps the link finite for all-0 or all-1 responses.
    let wsum: f64 = omega.iter().sum();
    let wmean = omega.iter().zip(response).map(|(w, y)| w * y).sum::<f64>() / wsum;
    let adjusted = (wmean * n as f64 + 0.5) / (n as f64 + 1.0);
    let mut beta = Array1::<f64>::zeros(p);
    beta[0] = family.link(adjusted);

    let mut eta = design.dot(&beta);
    let mut deviance = compute_deviance(family, response, &omega, &eta);
    let mut iterations = 0;
    let mut deviance_met = false;
    let mut polish_done = false;

    let mut weighted_x = Array2::<f64>::zeros((n, p));
    let mut working = Array1::<f64>::zeros(n);
    let mut irls_w = vec![0.0_f64; n];

    while iterations < MAX_ITERATIONS {
        for i in 0..n {
            let (w, z) = working_point(family, eta[i], response[i]);
            irls_w[i] = omega[i] * w;
            working[i] = z;
        }
        for i in 0..n {
            let wi = irls_w[i];
            for j in 0..p {
                weighted_x[[i, j]] = design[[i, j]] * wi;
            }
        }
        let hessian = design.t().dot(&weighted_x);
        let rhs = weighted_x.t().dot(&working);
        beta = solve_step(&hessian, &rhs)?;
        iterations += 1;

        if family.is_bernoulli() && beta.iter().any(|b| b.abs() > SEPARATION_BOUND) {
            return Err(GlmError::SeparationDetected);
        }

        eta = design.dot(&beta);
        let new_deviance = compute_deviance(family, response, &omega, &eta);
        let rel = (deviance - new_deviance).abs() / (new_deviance.abs() + 0.1);
        deviance = new_deviance;
        if rel < DEVIANCE_TOL {
            deviance_met = true;
            if polish_done {
                break;
            }
            // One extra Newton step: quadratic convergence collapses the
            // score to machine level once the deviance has stabilized.
            polish_done = true;
            continue;
        }
    }

    let score_max = score_max_abs(design, response, &omega, &eta, family);
    if !deviance_met && score_max > SCORE_TOL {
        return Err(GlmError::NonConvergence { iterations, score_max });
    }
    let converged = score_max < SCORE_TOL;

    // Information matrix at the optimum (weighted by the final IRLS weights).
    for i in 0..n {
        let (w, _) = working_point(family, eta[i], response[i]);
        irls_w[i] = omega[i] * w;
    }
    for i in 0..n {
        let wi = irls_w[i];
        for j in 0..p {
            weighted_x[[i, j]] = design[[i, j]] * wi;
        }
    }
    let information = design.t().dot(&weighted_x);
    let mut covariance = invert_information(&information)?;
    if family == Family::GaussianIdentity {
        let rss: f64 = (0..n).map(|i| omega[i] * (response[i] - eta[i]).powi(2)).sum();
        let dispersion = rss / (n - p) as f64;
        covariance.mapv_inplace(|v| v * dispersion);
    }

    Ok(ModelFit { coefficients: beta, covariance, family, converged, iterations, deviance })
}

/// Apply the fit's inverse link to new design rows.
pub fn predict_mean(fit: &ModelFit, design_rows: &Array2<f64>) -> Result<Array1<f64>, GlmError> {
    if design_rows.ncols() != fit.coefficients.len() {
        return Err(GlmError::DimensionMismatch {
            expected: fit.coefficients.len(),
            actual: design_rows.ncols(),
        });
    }
    let eta = design_rows.dot(&fit.coefficients);
    Ok(eta.mapv(|e| fit.family.inverse_link(e)))
}

/// Draw one coefficient vector from N(coefficients, covariance).
///
/// The covariance is factored by a PSD-tolerant Cholesky; when that fails, an
/// escalating diagonal ridge (1e-12 up to 1e-8) is applied before erroring.
/// A zero covariance returns the coefficients exactly.
pub fn sample_coefficients<R: Rng + ?Sized>(
    fit: &ModelFit,
    rng: &mut R,
) -> Result<Array1<f64>, GlmError> {
    if !fit.converged {
        return Err(GlmError::InvalidInput("cannot sample from an unconverged fit".into()));
    }
    let p = fit.coefficients.len();
    let factor = psd_factor_with_ridge(&fit.covariance).ok_or(GlmError::CovarianceNotPsd)?;
    let z = Array1::from_shape_fn(p, |_| StandardNormal.sample(rng));
    Ok(&fit.coefficients + &factor.dot(&z))
}

fn psd_factor_with_ridge(covariance: &Array2<f64>) -> Option<Array2<f64>> {
    if let Some(l) = linalg::cholesky_psd(covariance, 1e-12) {
        return Some(l);
    }
    let p = covariance.nrows();
    let mut ridge = 1e-12;
    while ridge <= 1e-8 {
        let mut repaired = covariance.clone();
        for i in 0..p {
            repaired[[i, i]] += ridge;
        }
        if let Some(l) = linalg::cholesky_psd(&repaired, 1e-12) {
            return Some(l);
        }
        ridge *= 10.0;
    }
    None
}

/// Working weight and working response at one observation.
fn working_point(family: Family, eta: f64, y: f64) -> (f64, f64) {
    match family {
        Family::BernoulliLogit => {
            let mu = expit(eta).clamp(MEAN_EPS, 1.0 - MEAN_EPS);
            let v = mu * (1.0 - mu);
            (v, eta + (y - mu) / v)
        }
        Family::BernoulliProbit => {
            let mu = normal_cdf(eta).clamp(MEAN_EPS, 1.0 - MEAN_EPS);
            let d = normal_pdf(eta).max(MEAN_EPS);
            (d * d / (mu * (1.0 - mu)), eta + (y - mu) / d)
        }
        Family::GaussianIdentity => (1.0, y),
    }
}

fn compute_deviance(family: Family, response: &[f64], omega: &[f64], eta: &Array1<f64>) -> f64 {
    match family {
        Family::GaussianIdentity => response
            .iter()
            .zip(eta)
            .zip(omega)
            .map(|((y, e), w)| w * (y - e) * (y - e))
            .sum(),
        Family::BernoulliLogit | Family::BernoulliProbit => {
            let mut dev = 0.0;
            for ((y, e), w) in response.iter().zip(eta).zip(omega) {
                let mu = family.inverse_link(*e);
                if *y > 0.0 {
                    dev -= 2.0 * w * y * mu.max(1e-300).ln();
                }
                if *y < 1.0 {
                    dev -= 2.0 * w * (1.0 - y) * (1.0 - mu).max(1e-300).ln();
                }
            }
            dev
        }
    }
}

/// Max absolute component of the weighted score dl/dbeta.
fn score_max_abs(
    design: &Array2<f64>,
    response: &[f64],
    omega: &[f64],
    eta: &Array1<f64>,
    family: Family,
) -> f64 {
    let n = design.nrows();
    let mut residual = Array1::<f64>::zeros(n);
    for i in 0..n {
        let e = eta[i];
        residual[i] = match family {
            // Canonical links: score = X' Omega (y - mu).
            Family::BernoulliLogit | Family::GaussianIdentity => {
                omega[i] * (response[i] - family.inverse_link(e))
            }
            Family::BernoulliProbit => {
                let mu = normal_cdf(e).clamp(MEAN_EPS, 1.0 - MEAN_EPS);
                omega[i] * (response[i] - mu) * normal_pdf(e) / (mu * (1.0 - mu))
            }
        };
    }
    let score = design.t().dot(&residual);
    score.iter().fold(0.0_f64, |m, s| m.max(s.abs()))
}

fn solve_step(hessian: &Array2<f64>, rhs: &Array1<f64>) -> Result<Array1<f64>, GlmError> {
    if let Some(beta) = linalg::cholesky_solve(hessian, rhs) {
        return Ok(beta);
    }
    // A vanishing working weight can make the step matrix numerically
    // semi-definite even for a full-rank design; retry once with a ridge
    // proportional to the trace before declaring rank deficiency.
    let p = hessian.nrows();
    let trace: f64 = (0..p).map(|i| hessian[[i, i]]).sum();
    let mut repaired = hessian.clone();
    for i in 0..p {
        repaired[[i, i]] += 1e-10 * (trace / p as f64).max(1e-300);
    }
    linalg::cholesky_solve(&repaired, rhs).ok_or(GlmError::RankDeficient)
}

fn invert_information(information: &Array2<f64>) -> Result<Array2<f64>, GlmError> {
    if let Some(inv) = linalg::invert_spd(information) {
        return Ok(inv);
    }
    let p = information.nrows();
    let trace: f64 = (0..p).map(|i| information[[i, i]]).sum();
    let mut repaired = information.clone();
    for i in 0..p {
        repaired[[i, i]] += 1e-10 * (trace / p as f64).max(1e-300);
    }
    linalg::invert_spd(&repaired).ok_or(GlmError::RankDeficient)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn intercept_only(n: usize) -> Array2<f64> {
        Array2::from_elem((n, 1), 1.0)
    }

    #[test]
    fn intercept_only_logit_balanced_response() {
        let design = intercept_only(8);
        let response = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let fit = fit_glm(&design, &response, Family::BernoulliLogit, None).unwrap();
        assert!(fit.converged);
        assert!(fit.coefficients[0].abs() < 1e-10);
        let mu = predict_mean(&fit, &design).unwrap();
        assert!((mu[0] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn gaussian_intercept_only_mean_and_variance() {
        let design = intercept_only(3);
        let response = [1.0, 2.0, 3.0];
        let fit = fit_glm(&design, &response, Family::GaussianIdentity, None).unwrap();
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-12);
        // sample variance 1.0, divided by n=3.
        assert!((fit.covariance[[0, 0]] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_separation_is_detected() {
        // Response is exactly indicator(x > 0): the MLE diverges.
        let x = [-2.1, -1.4, -0.9, -0.45, -0.2, 0.15, 0.4, 0.8, 1.3, 2.2];
        let design =
            Array2::from_shape_fn((x.len(), 2), |(i, j)| if j == 0 { 1.0 } else { x[i] });
        let response: Vec<f64> = x.iter().map(|v| if *v > 0.0 { 1.0 } else { 0.0 }).collect();
        let err = fit_glm(&design, &response, Family::BernoulliLogit, None).unwrap_err();
        assert!(matches!(err, GlmError::SeparationDetected));
    }

    #[test]
    fn predict_mean_trivial_points() {
        let design = intercept_only(4);
        let response = [0.0, 1.0, 0.0, 1.0];
        for family in [Family::BernoulliLogit, Family::BernoulliProbit] {
            let mut fit = fit_glm(&design, &response, family, None).unwrap();
            fit.coefficients.fill(0.0);
            let mu = predict_mean(&fit, &design).unwrap();
            assert!((mu[0] - 0.5).abs() < 1e-12, "{family:?}");
        }
        let fit = ModelFit {
            coefficients: array![1.0, 2.0],
            covariance: Array2::zeros((2, 2)),
            family: Family::GaussianIdentity,
            converged: true,
            iterations: 1,
            deviance: 0.0,
        };
        let rows = array![[1.0, 3.0]];
        let mu = predict_mean(&fit, &rows).unwrap();
        assert!((mu[0] - 7.0).abs() < 1e-12);
    }

    #[test]
    fn predict_mean_rejects_wrong_width() {
        let design = intercept_only(4);
        let fit = fit_glm(&design, &[0.0, 1.0, 0.0, 1.0], Family::BernoulliLogit, None).unwrap();
        let wide = Array2::<f64>::zeros((2, 3));
        assert!(matches!(
            predict_mean(&fit, &wide),
            Err(GlmError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn gaussian_irls_matches_normal_equations() {
        let n = 40;
        let design = Array2::from_shape_fn((n, 3), |(i, j)| match j {
            0 => 1.0,
            1 => (i as f64 * 0.61).sin(),
            _ => (i as f64 * 0.17).cos(),
        });
        let response: Vec<f64> =
            (0..n).map(|i| 0.4 + 1.3 * design[[i, 1]] - 0.7 * design[[i, 2]] + ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let weights: Vec<f64> = (0..n).map(|i| 0.5 + (i % 4) as f64).collect();
        let fit =
            fit_glm(&design, &response, Family::GaussianIdentity, Some(&weights)).unwrap();

        // Oracle: weighted normal equations solved directly.
        let mut xtwx = Array2::<f64>::zeros((3, 3));
        let mut xtwy = Array1::<f64>::zeros(3);
        for i in 0..n {
            for a in 0..3 {
                for b in 0..3 {
                    xtwx[[a, b]] += weights[i] * design[[i, a]] * design[[i, b]];
                }
                xtwy[a] += weights[i] * design[[i, a]] * response[i];
            }
        }
        let oracle = linalg::cholesky_solve(&xtwx, &xtwy).unwrap();
        for (est, exact) in fit.coefficients.iter().zip(oracle.iter()) {
            assert!((est - exact).abs() <= 1e-8 * exact.abs().max(1.0));
        }
    }

    #[test]
    fn logit_score_vanishes_at_optimum() {
        let n = 500;
        let design = Array2::from_shape_fn((n, 3), |(i, j)| match j {
            0 => 1.0,
            1 => ((i * 7919 % 1000) as f64) / 500.0 - 1.0,
            _ => ((i * 104729 % 1000) as f64) / 500.0 - 1.0,
        });
        let response: Vec<f64> = (0..n)
            .map(|i| {
                let eta = 0.3 + 0.8 * design[[i, 1]] - 0.5 * design[[i, 2]];
                if expit(eta) > ((i * 31 % 100) as f64 + 0.5) / 100.0 { 1.0 } else { 0.0 }
            })
            .collect();
        let fit = fit_glm(&design, &response, Family::BernoulliLogit, None).unwrap();
        assert!(fit.converged);
        let eta = design.dot(&fit.coefficients);
        let omega = vec![1.0; n];
        let s = score_max_abs(&design, &response, &omega, &eta, Family::BernoulliLogit);
        assert!(s < 1e-6, "score max {s}");
    }

    #[test]
    fn probit_and_logit_agree_on_marginal_rate() {
        let design = intercept_only(10);
        let response = [1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let rate = response.iter().sum::<f64>() / 10.0;
        for family in [Family::BernoulliLogit, Family::BernoulliProbit] {
            let fit = fit_glm(&design, &response, family, None).unwrap();
            let mu = predict_mean(&fit, &design).unwrap();
            let mean_fitted = mu.sum() / 10.0;
            assert!((mean_fitted - rate).abs() < 1e-6, "{family:?}: {mean_fitted} vs {rate}");
        }
    }

    #[test]
    fn sample_coefficients_zero_covariance_returns_mle() {
        let design = intercept_only(6);
        let mut fit =
            fit_glm(&design, &[0.0, 1.0, 1.0, 0.0, 1.0, 0.0], Family::BernoulliLogit, None)
                .unwrap();
        fit.covariance.fill(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draw = sample_coefficients(&fit, &mut rng).unwrap();
        assert_eq!(draw[0], fit.coefficients[0]);
    }

    #[test]
    fn sample_coefficients_is_deterministic_per_seed() {
        let design = Array2::from_shape_fn((30, 2), |(i, j)| if j == 0 { 1.0 } else { i as f64 / 10.0 });
        let response: Vec<f64> = (0..30).map(|i| (i % 2) as f64).collect();
        let fit = fit_glm(&design, &response, Family::BernoulliLogit, None).unwrap();
        let a = sample_coefficients(&fit, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample_coefficients(&fit, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_coefficients_mean_approaches_mle() {
        let design = Array2::from_shape_fn((60, 2), |(i, j)| if j == 0 { 1.0 } else { (i as f64 / 30.0) - 1.0 });
        let response: Vec<f64> = (0..60).map(|i| ((i * 13) % 3 == 0) as u8 as f64).collect();
        let fit = fit_glm(&design, &response, Family::BernoulliLogit, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let draws = 10_000;
        let mut mean = Array1::<f64>::zeros(2);
        for _ in 0..draws {
            mean += &sample_coefficients(&fit, &mut rng).unwrap();
        }
        mean /= draws as f64;
        for j in 0..2 {
            let se = (fit.covariance[[j, j]] / draws as f64).sqrt();
            assert!(
                (mean[j] - fit.coefficients[j]).abs() < 4.0 * se,
                "component {j}: {} vs {}",
                mean[j],
                fit.coefficients[j]
            );
        }
    }

    #[test]
    fn sample_covariance_matches_fit_covariance() {
        let design = Array2::from_shape_fn((200, 3), |(i, j)| match j {
            0 => 1.0,
            1 => ((i * 17 % 41) as f64) / 20.0 - 1.0,
            _ => ((i * 29 % 37) as f64) / 18.0 - 1.0,
        });
        let response: Vec<f64> = (0..200).map(|i| ((i * 7) % 5 < 2) as u8 as f64).collect();
        let fit = fit_glm(&design, &response, Family::BernoulliLogit, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let draws = 50_000;
        let mut sum = Array1::<f64>::zeros(3);
        let mut cross = Array2::<f64>::zeros((3, 3));
        for _ in 0..draws {
            let d = sample_coefficients(&fit, &mut rng).unwrap();
            sum += &d;
            for a in 0..3 {
                for b in 0..3 {
                    cross[[a, b]] += d[a] * d[b];
                }
            }
        }
        let mean = &sum / draws as f64;
        let mut emp = Array2::<f64>::zeros((3, 3));
        for a in 0..3 {
            for b in 0..3 {
                emp[[a, b]] = cross[[a, b]] / draws as f64 - mean[a] * mean[b];
            }
        }
        let diff_f: f64 = (&emp - &fit.covariance).iter().map(|v| v * v).sum::<f64>().sqrt();
        let ref_f: f64 = fit.covariance.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(diff_f / ref_f < 0.05, "relative Frobenius error {}", diff_f / ref_f);
    }

    #[test]
    fn rejects_nonpositive_weights_and_small_n() {
        let design = intercept_only(4);
        let response = [0.0, 1.0, 0.0, 1.0];
        let err =
            fit_glm(&design, &response, Family::BernoulliLogit, Some(&[1.0, 0.0, 1.0, 1.0]))
                .unwrap_err();
        assert!(matches!(err, GlmError::InvalidInput(_)));
        let tiny = intercept_only(1);
        assert!(fit_glm(&tiny, &[1.0], Family::GaussianIdentity, None).is_err());
    }
}
