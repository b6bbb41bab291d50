//! Natural cubic spline extrapolation of effect trajectories.
//!
//! Each trajectory (estimates and both CI endpoints) is fitted with a natural
//! cubic spline over the orbit index 0..J and evaluated at J+q. Natural
//! boundary conditions make the fitted curve exactly linear beyond the
//! boundary knots, which is what justifies the extrapolation. Per horizon,
//! the extrapolated CI endpoints across the whole ensemble are combined into
//! an uncertainty interval via trimmed nearest-rank percentiles.

use rayon::prelude::*;
use thiserror::Error;

use crate::glm::linalg;
use crate::perturbation::TrajectoryEnsemble;

#[derive(Debug, Error)]
pub enum ExtrapolationError {
    #[error("{knots} interior knots need at least {} points, got {points}", knots + 2)]
    TooManyKnots { knots: usize, points: usize },
    #[error("predictor values must be strictly increasing")]
    DegenerateX,
    #[error("spline basis is numerically singular")]
    SingularBasis,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Natural cubic spline basis row [1, x, N_1(x), ..., N_K(x)].
///
/// Truncated-power construction with boundary knots pinned at the predictor
/// extremes: with all knots xi_1 = lo < interior... < xi_M = hi and
/// d_k(x) = [(x - xi_k)^3_+ - (x - xi_M)^3_+] / (xi_M - xi_k), the K natural
/// terms are d_k - d_{M-1} for k = 1..K.
pub fn natural_basis_row(x: f64, boundary: (f64, f64), interior: &[f64]) -> Vec<f64> {
    let k = interior.len();
    let mut row = Vec::with_capacity(k + 2);
    row.push(1.0);
    row.push(x);
    if k == 0 {
        return row;
    }
    let knots: Vec<f64> = std::iter::once(boundary.0)
        .chain(interior.iter().copied())
        .chain(std::iter::once(boundary.1))
        .collect();
    let m = knots.len();
    let d = |idx: usize| -> f64 {
        let cube = |t: f64| if t > 0.0 { t * t * t } else { 0.0 };
        (cube(x - knots[idx]) - cube(x - knots[m - 1])) / (knots[m - 1] - knots[idx])
    };
    let d_last = d(m - 2);
    for idx in 0..k {
        row.push(d(idx) - d_last);
    }
    row
}

/// Derivative of [`natural_basis_row`] with respect to x.
fn natural_basis_derivative_row(x: f64, boundary: (f64, f64), interior: &[f64]) -> Vec<f64> {
    let k = interior.len();
    let mut row = Vec::with_capacity(k + 2);
    row.push(0.0);
    row.push(1.0);
    if k == 0 {
        return row;
    }
    let knots: Vec<f64> = std::iter::once(boundary.0)
        .chain(interior.iter().copied())
        .chain(std::iter::once(boundary.1))
        .collect();
    let m = knots.len();
    let d = |idx: usize| -> f64 {
        let sq = |t: f64| if t > 0.0 { 3.0 * t * t } else { 0.0 };
        (sq(x - knots[idx]) - sq(x - knots[m - 1])) / (knots[m - 1] - knots[idx])
    };
    let d_last = d(m - 2);
    for idx in 0..k {
        row.push(d(idx) - d_last);
    }
    row
}

/// A fitted natural cubic spline.
#[derive(Debug, Clone)]
pub struct SplineFit {
    /// Number of interior knots K.
    pub interior_knots: usize,
    /// Boundary knots at the predictor extremes.
    pub boundary: (f64, f64),
    /// Evenly spaced interior knot locations.
    pub interior: Vec<f64>,
    /// Basis coefficients: intercept, linear, then K natural terms.
    pub coefficients: Vec<f64>,
}

impl SplineFit {
    /// Evaluate the fitted curve; beyond the boundary knots the value is the
    /// exact linear extension from the boundary (natural condition).
    pub fn predict(&self, x: f64) -> f64 {
        let (lo, hi) = self.boundary;
        if x > hi {
            self.value_at(hi) + self.slope_at(hi) * (x - hi)
        } else if x < lo {
            self.value_at(lo) + self.slope_at(lo) * (x - lo)
        } else {
            self.value_at(x)
        }
    }

    fn value_at(&self, x: f64) -> f64 {
        natural_basis_row(x, self.boundary, &self.interior)
            .iter()
            .zip(&self.coefficients)
            .map(|(b, c)| b * c)
            .sum()
    }

    fn slope_at(&self, x: f64) -> f64 {
        natural_basis_derivative_row(x, self.boundary, &self.interior)
            .iter()
            .zip(&self.coefficients)
            .map(|(b, c)| b * c)
            .sum()
    }
}

/// Least-squares natural cubic spline with K evenly spaced interior knots.
///
/// With K+2 basis functions and K+2 = length(x) the fit interpolates.
pub fn fit_natural_spline(
    x: &[f64],
    y: &[f64],
    interior_knots: usize,
) -> Result<SplineFit, ExtrapolationError> {
    let n = x.len();
    if y.len() != n {
        return Err(ExtrapolationError::InvalidInput(format!(
            "x has {n} points but y has {}",
            y.len()
        )));
    }
    if n < 2 {
        return Err(ExtrapolationError::InvalidInput("need at least two points".into()));
    }
    if x.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ExtrapolationError::DegenerateX);
    }
    if interior_knots + 2 > n {
        return Err(ExtrapolationError::TooManyKnots { knots: interior_knots, points: n });
    }
    let boundary = (x[0], x[n - 1]);
    let span = boundary.1 - boundary.0;
    let interior: Vec<f64> = (1..=interior_knots)
        .map(|i| boundary.0 + span * i as f64 / (interior_knots + 1) as f64)
        .collect();

    let p = interior_knots + 2;
    let mut design = ndarray::Array2::<f64>::zeros((n, p));
    for (i, xi) in x.iter().enumerate() {
        for (j, b) in natural_basis_row(*xi, boundary, &interior).into_iter().enumerate() {
            design[[i, j]] = b;
        }
    }
    let rhs = ndarray::Array1::from(y.to_vec());
    let coefficients =
        linalg::householder_lstsq(&design, &rhs).ok_or(ExtrapolationError::SingularBasis)?;

    Ok(SplineFit {
        interior_knots,
        boundary,
        interior,
        coefficients: coefficients.to_vec(),
    })
}

/// Select an interior-knot count by the ensemble cross-validation scheme:
/// fit each candidate to every perturbed sequence (training), score each
/// fit's per-orbit predictions against the observed sequence (test), and
/// return the candidate with the smallest mean squared prediction error,
/// breaking ties toward more knots.
pub fn select_knots_cv(
    ensemble: &TrajectoryEnsemble,
    candidate_knots: &[usize],
) -> Result<usize, ExtrapolationError> {
    if candidate_knots.is_empty() {
        return Err(ExtrapolationError::InvalidInput("no candidate knot counts".into()));
    }
    let j = ensemble.n_covariates();
    let x: Vec<f64> = (0..=j).map(|v| v as f64).collect();
    let observed = ensemble.observed.estimates();

    let mut candidates = candidate_knots.to_vec();
    candidates.sort_unstable();
    candidates.dedup();

    let mut best_k = candidates[0];
    let mut best_error = f64::INFINITY;
    for &k in &candidates {
        let mut total = 0.0;
        let mut count = 0usize;
        for trajectory in &ensemble.perturbed {
            let fit = fit_natural_spline(&x, &trajectory.estimates(), k)?;
            for (xi, obs) in x.iter().zip(&observed) {
                let e = fit.predict(*xi) - obs;
                total += e * e;
                count += 1;
            }
        }
        let mean = total / count as f64;
        // `<=` keeps the larger K on ties (candidates are ascending).
        if mean <= best_error {
            best_error = mean;
            best_k = k;
        }
    }
    Ok(best_k)
}

/// Uncertainty interval at one extrapolation horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyInterval {
    pub lower: f64,
    pub upper: f64,
}

impl UncertaintyInterval {
    pub fn excludes_zero(&self) -> bool {
        self.lower > 0.0 || self.upper < 0.0
    }
}

/// Extrapolated effects, CI endpoints and uncertainty intervals.
#[derive(Debug, Clone)]
pub struct ExtrapolationResult {
    /// Horizons, ascending.
    pub q_values: Vec<usize>,
    /// Predicted effect per trajectory (observed first) per horizon.
    pub predicted_effects: Vec<Vec<f64>>,
    /// Extrapolated (lower, upper) CI endpoints per trajectory per horizon.
    pub predicted_ci_bounds: Vec<Vec<(f64, f64)>>,
    /// Trimmed-percentile uncertainty interval per horizon.
    pub uncertainty_intervals: Vec<UncertaintyInterval>,
    /// Smallest horizon at which the uncertainty interval's zero
    /// classification differs from the full-adjustment CI's, if any.
    pub crossing_q: Option<usize>,
    /// Estimate splines per trajectory (observed first), for plotting.
    pub estimate_splines: Vec<SplineFit>,
}

/// Nearest-rank percentile: the ceil(p*m)-th order statistic.
fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let m = sorted.len();
    debug_assert!(m > 0);
    let rank = ((p * m as f64).ceil() as usize).clamp(1, m);
    sorted[rank - 1]
}

fn sorted(values: Vec<f64>) -> Vec<f64> {
    let mut v = values;
    v.sort_by(|a, b| a.partial_cmp(b).expect("endpoint values must not be NaN"));
    v
}

/// Extrapolate every trajectory in the ensemble to the given horizons.
///
/// For each trajectory, three natural cubic splines (estimate, CI lower, CI
/// upper) with `interior_knots` knots are fitted over orbits 0..J and
/// evaluated at J+q. Per horizon, the `trim` fraction of the lowest lower
/// endpoints and of the highest upper endpoints is discarded, then the
/// alpha/2 and 1-alpha/2 nearest-rank percentiles form the uncertainty
/// interval.
pub fn extrapolate_ensemble(
    ensemble: &TrajectoryEnsemble,
    interior_knots: usize,
    q_values: &[usize],
    trim: f64,
    alpha: f64,
) -> Result<ExtrapolationResult, ExtrapolationError> {
    if q_values.is_empty() {
        return Err(ExtrapolationError::InvalidInput("no extrapolation horizons".into()));
    }
    if q_values.iter().any(|q| *q == 0) {
        return Err(ExtrapolationError::InvalidInput("horizons must be positive".into()));
    }
    if !(0.0..0.5).contains(&trim) {
        return Err(ExtrapolationError::InvalidInput(format!("trim must be in [0, 0.5), got {trim}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ExtrapolationError::InvalidInput(format!("alpha must be in (0,1), got {alpha}")));
    }
    let mut horizons = q_values.to_vec();
    horizons.sort_unstable();
    horizons.dedup();

    let j = ensemble.n_covariates();
    let x: Vec<f64> = (0..=j).map(|v| v as f64).collect();
    let trajectories: Vec<&crate::elimination::Trajectory> = ensemble.trajectories().collect();

    struct PerTrajectory {
        effects: Vec<f64>,
        bounds: Vec<(f64, f64)>,
        spline: SplineFit,
    }
    let per_trajectory: Vec<PerTrajectory> = trajectories
        .par_iter()
        .map(|trajectory| -> Result<PerTrajectory, ExtrapolationError> {
            let estimates = trajectory.estimates();
            let lowers: Vec<f64> = trajectory.orbits.iter().map(|o| o.ci_lower).collect();
            let uppers: Vec<f64> = trajectory.orbits.iter().map(|o| o.ci_upper).collect();
            let estimate_spline = fit_natural_spline(&x, &estimates, interior_knots)?;
            let lower_spline = fit_natural_spline(&x, &lowers, interior_knots)?;
            let upper_spline = fit_natural_spline(&x, &uppers, interior_knots)?;
            let mut effects = Vec::with_capacity(horizons.len());
            let mut bounds = Vec::with_capacity(horizons.len());
            for q in &horizons {
                let target = (j + q) as f64;
                effects.push(estimate_spline.predict(target));
                bounds.push((lower_spline.predict(target), upper_spline.predict(target)));
            }
            Ok(PerTrajectory { effects, bounds, spline: estimate_spline })
        })
        .collect::<Result<_, _>>()?;

    let m = per_trajectory.len();
    let drop = (trim * m as f64).floor() as usize;
    let mut uncertainty_intervals = Vec::with_capacity(horizons.len());
    for qi in 0..horizons.len() {
        let lowers = sorted(per_trajectory.iter().map(|t| t.bounds[qi].0).collect());
        let uppers = sorted(per_trajectory.iter().map(|t| t.bounds[qi].1).collect());
        let kept_lowers = &lowers[drop..];
        let kept_uppers = &uppers[..m - drop];
        uncertainty_intervals.push(UncertaintyInterval {
            lower: nearest_rank(kept_lowers, alpha / 2.0),
            upper: nearest_rank(kept_uppers, 1.0 - alpha / 2.0),
        });
    }

    let full_ci = &ensemble.observed.orbits[j];
    let baseline_excludes = full_ci.ci_lower > 0.0 || full_ci.ci_upper < 0.0;
    let crossing_q = horizons
        .iter()
        .zip(&uncertainty_intervals)
        .find(|(_, interval)| interval.excludes_zero() != baseline_excludes)
        .map(|(q, _)| *q);

    Ok(ExtrapolationResult {
        q_values: horizons,
        predicted_effects: per_trajectory.iter().map(|t| t.effects.clone()).collect(),
        predicted_ci_bounds: per_trajectory.iter().map(|t| t.bounds.clone()).collect(),
        uncertainty_intervals,
        crossing_q,
        estimate_splines: per_trajectory.into_iter().map(|t| t.spline).collect(),
    })
}
