//! Greedy covariate elimination driven by the debiased squared gap.
//!
//! Starting from the full measured covariate set, each orbit removes the
//! candidate whose leave-one-out estimate minimizes
//! `max(0, (psi_candidate - psi_current)^2 - Var(psi_candidate - psi_current))`,
//! with exact ties (typically clamped zeros) broken uniformly at random. In
//! perturbed mode every candidate estimate is evaluated at outcome
//! coefficients drawn from their asymptotic distribution, one independent
//! stream per candidate, so the elimination order itself expresses sampling
//! uncertainty.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::data::Dataset;
use crate::estimator::{debiased_gap, variance_of_difference, EstimatorError, OrbitEstimate, OrbitModels};
use crate::glm::{sample_coefficients, GlmError, ModelFit};
use crate::seeds::{mix2, mix3};

/// Absolute tolerance on the gap for declaring a tie.
const TIE_TOL: f64 = 1e-12;

/// Seed-stream salts keeping draw, tie-break and top-orbit streams disjoint.
const SALT_DRAW: u64 = 0xd7a3;
const SALT_TIE: u64 = 0x71e5;
const SALT_TOP: u64 = 0x709c;

#[derive(Debug, Error)]
pub enum ElimError {
    #[error("orbit {orbit}: {source}")]
    Estimator {
        orbit: usize,
        #[source]
        source: EstimatorError,
    },
    #[error("orbit {orbit}: every leave-one-out candidate failed to fit")]
    AllCandidatesFailed { orbit: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Whether estimates use MLE coefficients or per-candidate coefficient draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryMode {
    Mle,
    Perturbed,
}

/// Tuning knobs for trajectory construction.
#[derive(Debug, Clone)]
pub struct TrajectoryOptions {
    /// Two-sided CI level for per-orbit intervals.
    pub alpha: f64,
    /// Scale applied to coefficient draws around the MLE; 1.0 is the nominal
    /// perturbation, 0.0 collapses every draw to the MLE (test hook).
    pub draw_scale: f64,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        Self { alpha: 0.05, draw_scale: 1.0 }
    }
}

/// A full elimination trajectory: orbit estimates for 0..=J covariates plus
/// the removal order that produced them.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `orbits[j]` adjusts for exactly j covariates; `orbits[J]` is the full
    /// set and `orbits[0]` the intercept-only analysis.
    pub orbits: Vec<OrbitEstimate>,
    /// Covariate names in removal order (first removed = weakest impact).
    pub elimination_order: Vec<String>,
    pub perturbed: bool,
    /// Seed of the stream that produced draws and tie-breaks.
    pub seed: u64,
    /// Leave-one-out estimator evaluations performed (J(J+1)/2).
    pub evaluations: usize,
}

impl Trajectory {
    /// Number of covariates J in the full orbit.
    pub fn n_covariates(&self) -> usize {
        self.orbits.len() - 1
    }

    /// Per-orbit point estimates, index j = j covariates adjusted.
    pub fn estimates(&self) -> Vec<f64> {
        self.orbits.iter().map(|o| o.estimate).collect()
    }
}

/// Concurrency-safe cache of fitted orbit models keyed by covariate subset.
///
/// Fits are pure functions of (dataset, subset), so sharing them across the
/// observed and all perturbed trajectories is free speedup without affecting
/// any output. The cache stops inserting beyond a memory budget; lookups then
/// fall through to fresh fits with identical results.
pub struct FitCache {
    map: RwLock<HashMap<Vec<u16>, Arc<OrbitModels>>>,
    cached_floats: AtomicUsize,
    budget_floats: usize,
}

impl Default for FitCache {
    fn default() -> Self {
        Self::new()
    }
}

impl FitCache {
    /// Cache with the default ~800 MB budget.
    pub fn new() -> Self {
        Self::with_budget(100_000_000)
    }

    /// Cache bounded to roughly `budget_floats` stored f64 values.
    pub fn with_budget(budget_floats: usize) -> Self {
        Self { map: RwLock::new(HashMap::new()), cached_floats: AtomicUsize::new(0), budget_floats }
    }

    pub fn len(&self) -> usize {
        self.map.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get_or_fit(&self, data: &Dataset, indices: &[usize]) -> Result<Arc<OrbitModels>, EstimatorError> {
        let key: Vec<u16> = indices.iter().map(|&i| i as u16).collect();
        if let Some(hit) = self.map.read().unwrap().get(&key) {
            return Ok(Arc::clone(hit));
        }
        let models = Arc::new(OrbitModels::fit_by_indices(data, indices)?);
        let p = indices.len() + 2;
        let entry_floats = data.n() + 2 * p * p + 2 * p;
        if self.cached_floats.load(Ordering::Relaxed) + entry_floats <= self.budget_floats {
            let mut map = self.map.write().unwrap();
            if !map.contains_key(&key) {
                self.cached_floats.fetch_add(entry_floats, Ordering::Relaxed);
                map.insert(key, Arc::clone(&models));
            }
        }
        Ok(models)
    }
}

fn draw_outcome_coefficients<R: Rng + ?Sized>(
    fit: &ModelFit,
    rng: &mut R,
    scale: f64,
) -> Result<Array1<f64>, GlmError> {
    if scale == 0.0 {
        return Ok(fit.coefficients.clone());
    }
    let draw = sample_coefficients(fit, rng)?;
    if scale == 1.0 {
        Ok(draw)
    } else {
        Ok(&fit.coefficients + &((&draw - &fit.coefficients) * scale))
    }
}

/// Build one elimination trajectory with default options and a private cache.
pub fn build_trajectory(
    data: &Dataset,
    mode: TrajectoryMode,
    seed: u64,
    alpha: f64,
) -> Result<Trajectory, ElimError> {
    let options = TrajectoryOptions { alpha, ..TrajectoryOptions::default() };
    build_trajectory_with(data, mode, seed, &options, &FitCache::new())
}

/// Build one elimination trajectory against a shared fit cache.
pub fn build_trajectory_with(
    data: &Dataset,
    mode: TrajectoryMode,
    seed: u64,
    options: &TrajectoryOptions,
    cache: &FitCache,
) -> Result<Trajectory, ElimError> {
    let j_total = data.n_covariates();
    if j_total < 1 {
        return Err(ElimError::InvalidInput("at least one covariate is required".into()));
    }
    if !(options.alpha > 0.0 && options.alpha < 1.0) {
        return Err(ElimError::InvalidInput(format!("alpha must be in (0,1), got {}", options.alpha)));
    }
    let perturbed = mode == TrajectoryMode::Perturbed;

    let full: Vec<usize> = (0..j_total).collect();
    let top_models = cache
        .get_or_fit(data, &full)
        .map_err(|source| ElimError::Estimator { orbit: j_total, source })?;
    let mut current = evaluate_candidate(data, &top_models, mode, options, {
        let mut rng = ChaCha8Rng::seed_from_u64(mix2(seed, SALT_TOP));
        move |fit, scale| draw_outcome_coefficients(fit, &mut rng, scale)
    })
    .map_err(|source| ElimError::Estimator { orbit: j_total, source })?;

    let mut remaining = full;
    let mut elimination_order = Vec::with_capacity(j_total);
    let mut orbits_desc = vec![current.clone()];
    let mut evaluations = 0usize;

    while !remaining.is_empty() {
        let orbit = remaining.len();
        let reference = current.clone();
        let candidates: Vec<(usize, Vec<usize>)> = remaining
            .iter()
            .map(|&k| (k, remaining.iter().copied().filter(|&x| x != k).collect()))
            .collect();

        let evaluate_one = |(k, subset): &(usize, Vec<usize>)| -> Result<(OrbitEstimate, f64), EstimatorError> {
            let models = cache.get_or_fit(data, subset)?;
            let mut rng = ChaCha8Rng::seed_from_u64(mix3(mix2(seed, SALT_DRAW), orbit as u64, *k as u64));
            let estimate = evaluate_candidate(data, &models, mode, options, move |fit, scale| {
                draw_outcome_coefficients(fit, &mut rng, scale)
            })?;
            let var = variance_of_difference(&estimate.influence, &reference.influence)?;
            let gap = debiased_gap(estimate.estimate, reference.estimate, var);
            Ok((estimate, gap))
        };
        let results: Vec<Result<(OrbitEstimate, f64), EstimatorError>> = if candidates.len() > 1 {
            candidates.par_iter().map(evaluate_one).collect()
        } else {
            candidates.iter().map(evaluate_one).collect()
        };
        evaluations += candidates.len();

        let mut gaps = Vec::with_capacity(results.len());
        let mut estimates = Vec::with_capacity(results.len());
        for ((k, _), result) in candidates.iter().zip(results) {
            match result {
                Ok((estimate, gap)) => {
                    gaps.push(gap);
                    estimates.push(Some(estimate));
                }
                Err(source) => {
                    log::warn!(
                        "orbit {orbit}: candidate {:?} failed and was assigned an infinite gap: {source}",
                        data.covariate(*k).name
                    );
                    gaps.push(f64::INFINITY);
                    estimates.push(None);
                }
            }
        }

        let min_gap = gaps.iter().copied().fold(f64::INFINITY, f64::min);
        if !min_gap.is_finite() {
            return Err(ElimError::AllCandidatesFailed { orbit });
        }
        let tied: Vec<usize> =
            (0..gaps.len()).filter(|&i| gaps[i] <= min_gap + TIE_TOL).collect();
        let winner = if tied.len() == 1 {
            tied[0]
        } else {
            let mut tie_rng =
                ChaCha8Rng::seed_from_u64(mix3(mix2(seed, SALT_TIE), orbit as u64, 0));
            tied[tie_rng.random_range(0..tied.len())]
        };

        current = estimates[winner].take().expect("winner has a finite gap, so it evaluated");
        elimination_order.push(data.covariate(remaining[winner]).name.clone());
        remaining.remove(winner);
        orbits_desc.push(current.clone());
    }

    orbits_desc.reverse();
    let trajectory = Trajectory {
        orbits: orbits_desc,
        elimination_order,
        perturbed,
        seed,
        evaluations,
    };
    debug_assert!(trajectory_is_nested(&trajectory));
    Ok(trajectory)
}

fn evaluate_candidate<F>(
    data: &Dataset,
    models: &OrbitModels,
    mode: TrajectoryMode,
    options: &TrajectoryOptions,
    mut draw: F,
) -> Result<OrbitEstimate, EstimatorError>
where
    F: FnMut(&ModelFit, f64) -> Result<Array1<f64>, GlmError>,
{
    match mode {
        TrajectoryMode::Mle => models.evaluate(data, None, options.alpha),
        TrajectoryMode::Perturbed => {
            let coefficients =
                draw(&models.outcome_fit, options.draw_scale).map_err(|source| {
                    EstimatorError::ModelFitFailed {
                        model: "outcome",
                        subset: models.subset_names().to_vec(),
                        source,
                    }
                })?;
            models.evaluate(data, Some(&coefficients), options.alpha)
        }
    }
}

fn trajectory_is_nested(trajectory: &Trajectory) -> bool {
    for j in 0..trajectory.orbits.len() - 1 {
        let small = &trajectory.orbits[j].subset;
        let large = &trajectory.orbits[j + 1].subset;
        if small.len() + 1 != large.len() || !small.iter().all(|name| large.contains(name)) {
            return false;
        }
    }
    true
}
