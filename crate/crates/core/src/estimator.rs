//! Doubly robust standardized effect estimation for covariate subsets.
//!
//! For a subset L of covariates, the exposure model is a logit of A on
//! (1, L) and the outcome model is a weighted GLM of Y on (1, A, L) with
//! inverse-probability-of-exposure weights. The marginal effect estimator is
//!
//! ```text
//! psi_hat = n^-1 sum_i (2A_i - 1) W_i (Y_i - m(A_i, L_i)) + m(1, L_i) - m(0, L_i)
//! ```
//!
//! with per-individual influence values obtained by centering the summands at
//! the estimate. The influence values carry all variance information: the
//! variance of one estimate, of a difference of two estimates, and the
//! debiased squared gap driving covariate elimination are all plug-in
//! functionals of them.

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::data::{Dataset, OutcomeKind};
use crate::glm::{fit_glm, Family, GlmError, ModelFit};
use crate::special::{expit, z_two_sided};

/// Propensities are clipped into [CLIP, 1-CLIP] before weighting.
pub const PROPENSITY_CLIP: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("{model} model failed for subset {{{}}}: {source}", subset.join(", "))]
    ModelFitFailed {
        model: &'static str,
        subset: Vec<String>,
        #[source]
        source: GlmError,
    },
    #[error("influence vectors have different lengths ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("unknown covariate {0:?}")]
    UnknownCovariate(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Effect estimate for one covariate subset (one orbit member).
#[derive(Debug, Clone)]
pub struct OrbitEstimate {
    /// Covariate names adjusted for (intercept implicit).
    pub subset: Vec<String>,
    pub estimate: f64,
    /// Estimated influence values, mean zero by construction.
    pub influence: Vec<f64>,
    /// Influence-function plug-in variance of the estimate.
    pub variance: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    /// Whether the outcome coefficients were a random draw.
    pub perturbed: bool,
}

/// Inverse probability of exposure weights W_i = A_i/p_i + (1-A_i)/(1-p_i).
///
/// Propensities are clipped to [`PROPENSITY_CLIP`] away from 0 and 1, so the
/// weights are finite and always at least 1.
pub fn exposure_weights(propensity: &[f64], exposure: &[f64]) -> Vec<f64> {
    propensity
        .iter()
        .zip(exposure)
        .map(|(p, a)| {
            let p = p.clamp(PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP);
            if *a == 1.0 {
                1.0 / p
            } else {
                1.0 / (1.0 - p)
            }
        })
        .collect()
}

/// Variance of a difference of two estimates from their influence values:
/// (n(n-1))^-1 sum_i (phi_j_i - phi_k_i)^2.
pub fn variance_of_difference(
    influence_j: &[f64],
    influence_k: &[f64],
) -> Result<f64, EstimatorError> {
    let n = influence_j.len();
    if influence_k.len() != n {
        return Err(EstimatorError::LengthMismatch { left: n, right: influence_k.len() });
    }
    if n < 2 {
        return Err(EstimatorError::InvalidInput("need at least two observations".into()));
    }
    let sum: f64 = influence_j.iter().zip(influence_k).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / (n as f64 * (n as f64 - 1.0)))
}

/// Debiased squared gap between two orbit estimates, clamped at zero.
pub fn debiased_gap(estimate_j: f64, estimate_k: f64, var_diff: f64) -> f64 {
    let gap = estimate_j - estimate_k;
    (gap * gap - var_diff).max(0.0)
}

/// Fitted exposure and outcome models for one covariate subset.
///
/// Fitting is the expensive step; one `OrbitModels` can be evaluated at the
/// MLE outcome coefficients or at any drawn coefficient vector, which is how
/// the perturbation path reuses fits.
#[derive(Debug)]
pub struct OrbitModels {
    subset_indices: Vec<usize>,
    subset_names: Vec<String>,
    pub exposure_fit: ModelFit,
    /// Estimated inverse-probability weights from the MLE exposure fit.
    pub weights: Vec<f64>,
    pub outcome_fit: ModelFit,
}

impl OrbitModels {
    /// Fit both models for the named covariates.
    pub fn fit(data: &Dataset, subset: &[&str]) -> Result<Self, EstimatorError> {
        let mut indices = Vec::with_capacity(subset.len());
        for name in subset {
            let idx = data
                .covariate_index(name)
                .ok_or_else(|| EstimatorError::UnknownCovariate((*name).to_string()))?;
            indices.push(idx);
        }
        Self::fit_by_indices(data, &indices)
    }

    /// Fit both models for the covariates at the given column indices.
    pub fn fit_by_indices(data: &Dataset, indices: &[usize]) -> Result<Self, EstimatorError> {
        let n = data.n();
        let s = indices.len();
        let subset_names: Vec<String> =
            indices.iter().map(|&k| data.covariate(k).name.clone()).collect();
        let named_failure = |model: &'static str, source: GlmError| EstimatorError::ModelFitFailed {
            model,
            subset: subset_names.clone(),
            source,
        };

        let mut exposure_design = Array2::<f64>::zeros((n, s + 1));
        for i in 0..n {
            exposure_design[[i, 0]] = 1.0;
        }
        for (col, &k) in indices.iter().enumerate() {
            let values = &data.covariate(k).values;
            for i in 0..n {
                exposure_design[[i, col + 1]] = values[i];
            }
        }
        let exposure_fit =
            fit_glm(&exposure_design, data.exposure(), Family::BernoulliLogit, None)
                .map_err(|e| named_failure("exposure", e))?;
        let eta = exposure_design.dot(&exposure_fit.coefficients);
        let propensity: Vec<f64> = eta.iter().map(|e| expit(*e)).collect();
        let weights = exposure_weights(&propensity, data.exposure());

        let mut outcome_design = Array2::<f64>::zeros((n, s + 2));
        for i in 0..n {
            outcome_design[[i, 0]] = 1.0;
            outcome_design[[i, 1]] = data.exposure()[i];
        }
        for (col, &k) in indices.iter().enumerate() {
            let values = &data.covariate(k).values;
            for i in 0..n {
                outcome_design[[i, col + 2]] = values[i];
            }
        }
        let outcome_family = match data.outcome_kind() {
            OutcomeKind::Binary => Family::BernoulliLogit,
            OutcomeKind::Continuous => Family::GaussianIdentity,
        };
        let outcome_fit = fit_glm(&outcome_design, data.outcome(), outcome_family, Some(&weights))
            .map_err(|e| named_failure("outcome", e))?;

        Ok(Self { subset_indices: indices.to_vec(), subset_names, exposure_fit, weights, outcome_fit })
    }

    pub fn subset_names(&self) -> &[String] {
        &self.subset_names
    }

    pub fn subset_indices(&self) -> &[usize] {
        &self.subset_indices
    }

    /// Evaluate the effect estimator at the MLE outcome coefficients or at a
    /// supplied (drawn) coefficient vector, using the MLE exposure weights in
    /// both cases.
    pub fn evaluate(
        &self,
        data: &Dataset,
        outcome_coefficients: Option<&Array1<f64>>,
        alpha: f64,
    ) -> Result<OrbitEstimate, EstimatorError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(EstimatorError::InvalidInput(format!("alpha must be in (0,1), got {alpha}")));
        }
        let coefficients = outcome_coefficients.unwrap_or(&self.outcome_fit.coefficients);
        let expected = self.subset_indices.len() + 2;
        if coefficients.len() != expected {
            return Err(EstimatorError::InvalidInput(format!(
                "outcome coefficient override has length {}, expected {expected}",
                coefficients.len()
            )));
        }
        let n = data.n();
        let family = self.outcome_fit.family;

        // Linear predictor without the exposure term, built column-wise.
        let mut lp = vec![coefficients[0]; n];
        for (col, &k) in self.subset_indices.iter().enumerate() {
            let beta = coefficients[col + 2];
            for (l, v) in lp.iter_mut().zip(&data.covariate(k).values) {
                *l += beta * v;
            }
        }
        let beta_a = coefficients[1];

        let exposure = data.exposure();
        let outcome = data.outcome();
        let mut terms = vec![0.0_f64; n];
        let mut total = 0.0;
        for i in 0..n {
            let m0 = family.inverse_link(lp[i]);
            let m1 = family.inverse_link(lp[i] + beta_a);
            let (a, y, w) = (exposure[i], outcome[i], self.weights[i]);
            let fitted = if a == 1.0 { m1 } else { m0 };
            let term = (2.0 * a - 1.0) * w * (y - fitted) + m1 - m0;
            terms[i] = term;
            total += term;
        }
        let estimate = total / n as f64;
        let mut influence = terms;
        let mut sum_sq = 0.0;
        for t in influence.iter_mut() {
            *t -= estimate;
            sum_sq += *t * *t;
        }
        let variance = if n > 1 { sum_sq / (n as f64 * (n as f64 - 1.0)) } else { 0.0 };
        let half_width = z_two_sided(alpha) * variance.sqrt();

        Ok(OrbitEstimate {
            subset: self.subset_names.clone(),
            estimate,
            influence,
            variance,
            ci_lower: estimate - half_width,
            ci_upper: estimate + half_width,
            perturbed: outcome_coefficients.is_some(),
        })
    }
}

/// Doubly robust marginal effect for the named covariate subset.
///
/// With `outcome_coefficients`, the estimate and influence values are
/// evaluated at the supplied coefficient vector (the perturbation path);
/// exposure weights always come from the MLE exposure fit.
pub fn dr_effect(
    data: &Dataset,
    subset: &[&str],
    outcome_coefficients: Option<&[f64]>,
    alpha: f64,
) -> Result<OrbitEstimate, EstimatorError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(EstimatorError::InvalidInput(format!("alpha must be in (0,1), got {alpha}")));
    }
    let models = OrbitModels::fit(data, subset)?;
    let override_vec = outcome_coefficients.map(|c| Array1::from(c.to_vec()));
    models.evaluate(data, override_vec.as_ref(), alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Column;
    use proptest::prelude::*;

    fn dataset(
        exposure: &[f64],
        outcome: &[f64],
        kind: OutcomeKind,
        covariates: &[(&str, &[f64])],
    ) -> Dataset {
        Dataset::new(
            exposure.to_vec(),
            outcome.to_vec(),
            kind,
            covariates
                .iter()
                .map(|(name, values)| Column { name: (*name).to_string(), values: values.to_vec() })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn weights_match_closed_form() {
        let w = exposure_weights(&[0.5, 0.25], &[1.0, 0.0]);
        assert!((w[0] - 2.0).abs() < 1e-15);
        assert!((w[1] - 4.0 / 3.0).abs() < 1e-15);
        let symmetric = exposure_weights(&[0.5; 6], &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!(symmetric.iter().all(|w| (*w - 2.0).abs() < 1e-15));
        // Clipping keeps degenerate propensities finite and weights >= 1.
        let clipped = exposure_weights(&[0.0, 1.0], &[1.0, 0.0]);
        assert!(clipped.iter().all(|w| w.is_finite() && *w >= 1.0));
    }

    #[test]
    fn continuous_hand_enumeration() {
        // Intercept-only models: p_hat = 0.5, W = 2, augmentation cancels and
        // the estimate reduces to the difference in group means 3.5 - 1.5.
        let data = dataset(
            &[0.0, 0.0, 1.0, 1.0],
            &[1.0, 2.0, 3.0, 4.0],
            OutcomeKind::Continuous,
            &[("x", &[0.3, -0.1, 0.8, 0.4])],
        );
        let est = dr_effect(&data, &[], None, 0.05).unwrap();
        assert!((est.estimate - 2.0).abs() < 1e-10, "estimate {}", est.estimate);
        assert!(!est.perturbed);
        assert!(est.subset.is_empty());
    }

    #[test]
    fn binary_hand_enumeration() {
        let data = dataset(
            &[0.0, 0.0, 1.0, 1.0],
            &[0.0, 1.0, 1.0, 1.0],
            OutcomeKind::Binary,
            &[("x", &[0.3, -0.1, 0.8, 0.4])],
        );
        let est = dr_effect(&data, &[], None, 0.05).unwrap();
        assert!((est.estimate - 0.5).abs() < 1e-8, "estimate {}", est.estimate);
    }

    #[test]
    fn constant_outcome_degenerates_to_zero() {
        let data = dataset(
            &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0],
            &[1.37; 6],
            OutcomeKind::Continuous,
            &[("x", &[0.1, -0.4, 0.9, 0.2, -0.6, 0.5])],
        );
        let est = dr_effect(&data, &["x"], None, 0.05).unwrap();
        assert!(est.estimate.abs() < 1e-12);
        assert!(est.variance.abs() < 1e-24);
    }

    #[test]
    fn influence_is_centered_and_bounds_ordered() {
        let n = 60;
        let exposure: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let x: Vec<f64> = (0..n).map(|i| ((i * 37 % 19) as f64) / 9.0 - 1.0).collect();
        let outcome: Vec<f64> =
            (0..n).map(|i| 0.5 * exposure[i] + 0.8 * x[i] + ((i * 13 % 7) as f64 - 3.0) / 5.0).collect();
        let data = dataset(&exposure, &outcome, OutcomeKind::Continuous, &[("x", &x)]);
        let est = dr_effect(&data, &["x"], None, 0.05).unwrap();
        let mean: f64 = est.influence.iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 1e-8);
        assert!(est.variance >= 0.0);
        assert!(est.ci_lower <= est.estimate && est.estimate <= est.ci_upper);
    }

    #[test]
    fn variance_of_difference_examples() {
        assert_eq!(variance_of_difference(&[0.4, -0.4], &[0.4, -0.4]).unwrap(), 0.0);
        let v = variance_of_difference(&[1.0, -1.0], &[0.0, 0.0]).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        assert!(matches!(
            variance_of_difference(&[1.0, 2.0], &[1.0]),
            Err(EstimatorError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn variance_of_difference_against_zero_equals_single_variance() {
        let phi = [0.5, -0.25, 0.75, -1.0];
        let zero = [0.0; 4];
        let single: f64 =
            phi.iter().map(|p| p * p).sum::<f64>() / (phi.len() as f64 * (phi.len() - 1) as f64);
        let diff = variance_of_difference(&phi, &zero).unwrap();
        assert!((single - diff).abs() < 1e-15);
    }

    #[test]
    fn debiased_gap_examples() {
        assert!((debiased_gap(0.2, 0.0, 0.03) - 0.01).abs() < 1e-15);
        assert_eq!(debiased_gap(0.1, 0.0, 0.05), 0.0);
        assert_eq!(debiased_gap(0.7, 0.7, 0.2), 0.0);
    }

    #[test]
    fn override_at_mle_matches_plain_estimate() {
        let n = 80;
        let exposure: Vec<f64> = (0..n).map(|i| ((i * 7 % 10) < 5) as u8 as f64).collect();
        let x: Vec<f64> = (0..n).map(|i| ((i * 11 % 23) as f64) / 11.0 - 1.0).collect();
        let outcome: Vec<f64> = (0..n)
            .map(|i| ((0.4 * exposure[i] + 0.6 * x[i]) > ((i * 3 % 13) as f64 - 6.0) / 6.0) as u8 as f64)
            .collect();
        let data = dataset(&exposure, &outcome, OutcomeKind::Binary, &[("x", &x)]);
        let models = OrbitModels::fit(&data, &["x"]).unwrap();
        let plain = models.evaluate(&data, None, 0.05).unwrap();
        let mle = models.outcome_fit.coefficients.to_vec();
        let via_override = dr_effect(&data, &["x"], Some(&mle), 0.05).unwrap();
        assert!((plain.estimate - via_override.estimate).abs() < 1e-15);
        assert!(via_override.perturbed);
        assert!(!plain.perturbed);
    }

    #[test]
    fn model_failures_name_the_model() {
        // Exposure perfectly predicted by x: logit exposure model separates.
        let x: Vec<f64> = vec![-2.0, -1.2, -0.4, 0.3, 1.1, 2.2];
        let exposure: Vec<f64> = x.iter().map(|v| (*v > 0.0) as u8 as f64).collect();
        let outcome = vec![0.8, 0.1, 0.4, 0.9, 0.2, 0.7];
        let data = dataset(&exposure, &outcome, OutcomeKind::Continuous, &[("x", &x)]);
        let err = dr_effect(&data, &["x"], None, 0.05).unwrap_err();
        match err {
            EstimatorError::ModelFitFailed { model, subset, .. } => {
                assert_eq!(model, "exposure");
                assert_eq!(subset, vec!["x".to_string()]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unknown_covariate_is_reported() {
        let data = dataset(
            &[0.0, 1.0, 0.0, 1.0],
            &[0.0, 1.0, 1.0, 0.0],
            OutcomeKind::Binary,
            &[("x", &[0.4, 0.1, -0.2, 0.9])],
        );
        assert!(matches!(
            dr_effect(&data, &["nope"], None, 0.05),
            Err(EstimatorError::UnknownCovariate(_))
        ));
        assert!(matches!(
            dr_effect(&data, &["x"], None, 1.5),
            Err(EstimatorError::InvalidInput(_))
        ));
    }

    proptest! {
        #[test]
        fn debiased_gap_is_clamped_and_exact(
            a in -10.0_f64..10.0,
            b in -10.0_f64..10.0,
            v in 0.0_f64..5.0,
        ) {
            let g = debiased_gap(a, b, v);
            prop_assert!(g >= 0.0);
            let raw = (a - b) * (a - b) - v;
            if raw > 0.0 {
                prop_assert!((g - raw).abs() <= 1e-12 * raw.abs().max(1.0));
            } else {
                prop_assert_eq!(g, 0.0);
            }
        }
    }
}
