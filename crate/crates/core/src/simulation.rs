//! Data-generating processes and the replicate harness for the two
//! simulation studies.
//!
//! Study 1: standard-normal confounders, Bernoulli-logit exposure and
//! outcome, beta_k = alpha_k ~ Uniform(-1, 1). Study 2: probit or logit
//! exposure, Gaussian outcome with variance p+q and independent
//! alpha_k ~ Uniform(-0.25, 0.25), beta_k ~ Uniform(-4, 4). A single
//! population of size N is generated per scenario; q confounders are
//! designated unmeasured by population-level elimination; each replicate
//! samples n individuals without replacement and runs the full pipeline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::data::{write_table, Column, DataError, Dataset, OutcomeKind};
use crate::elimination::{build_trajectory, ElimError, TrajectoryMode};
use crate::estimator::dr_effect;
use crate::extrapolation::{extrapolate_ensemble, ExtrapolationError};
use crate::perturbation::build_ensemble;
use crate::seeds::mix2;
use crate::special::expit;

/// Seed domain separators within one scenario.
const SALT_POPULATION: u64 = 0x1001;
const SALT_REPLICATE: u64 = 0x2002;
const SALT_ENSEMBLE: u64 = 0x3003;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("population construction failed: {0}")]
    Population(#[from] DataError),
    #[error("population-level elimination failed: {0}")]
    Elimination(#[from] ElimError),
    #[error("{failures} of {replicates} replicates failed, exceeding the 5% budget")]
    ReplicateBudgetExceeded { failures: usize, replicates: usize },
    #[error("extrapolation failed: {0}")]
    Extrapolation(#[from] ExtrapolationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    One,
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExposureLink {
    Logit,
    Probit,
}

/// One simulation setting.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub study: Study,
    /// Measured confounder count p.
    pub p: usize,
    /// Unmeasured confounder count q.
    pub q: usize,
    /// Conditional exposure coefficient delta.
    pub delta: f64,
    /// Exposure-model link for Study 2 generation (Study 1 is always logit).
    pub exposure_link: ExposureLink,
    /// Population size N.
    pub population: usize,
    /// Sample size n per replicate.
    pub n: usize,
    pub replicates: usize,
    /// Perturbation count B per replicate.
    pub b: usize,
    pub seed: u64,
}

impl Scenario {
    fn validate(&self) -> Result<(), SimError> {
        if self.p < 1 {
            return Err(SimError::Invalid("p must be at least 1".into()));
        }
        if self.population < self.n {
            return Err(SimError::Invalid(format!(
                "population {} smaller than sample size {}",
                self.population, self.n
            )));
        }
        if self.n <= self.p + self.q + 2 {
            return Err(SimError::Invalid("sample size too small for the full model".into()));
        }
        if self.replicates < 1 {
            return Err(SimError::Invalid("at least one replicate is required".into()));
        }
        if self.b < 1 {
            return Err(SimError::Invalid("B must be at least 1".into()));
        }
        Ok(())
    }
}

/// The coefficients behind a generated population and its exact effect.
#[derive(Debug, Clone)]
pub struct PopulationTruth {
    /// Exposure slopes (intercept fixed at 0).
    pub alpha: Vec<f64>,
    /// Outcome slopes (intercept fixed at 0; delta enters separately).
    pub beta: Vec<f64>,
    /// Finite-population marginal effect: mean of Y1 - Y0 over all members.
    pub true_psi: f64,
}

/// Generate one population with freshly drawn coefficient vectors.
pub fn generate_population<R: Rng + ?Sized>(
    scenario: &Scenario,
    rng: &mut R,
) -> Result<(Dataset, PopulationTruth), SimError> {
    let total = scenario.p + scenario.q;
    let (alpha, beta): (Vec<f64>, Vec<f64>) = match scenario.study {
        Study::One => {
            let alpha: Vec<f64> = (0..total).map(|_| rng.random_range(-1.0..1.0)).collect();
            (alpha.clone(), alpha)
        }
        Study::Two => {
            let alpha = (0..total).map(|_| rng.random_range(-0.25..0.25)).collect();
            let beta = (0..total).map(|_| rng.random_range(-4.0..4.0)).collect();
            (alpha, beta)
        }
    };
    let (dataset, true_psi) = generate_population_with(scenario, &alpha, &beta, rng)?;
    Ok((dataset, PopulationTruth { alpha, beta, true_psi }))
}

/// Generate a population from fixed coefficient vectors (test hook and the
/// workhorse behind [`generate_population`]).
///
/// Potential outcomes are rank-preserving: one shared uniform (Study 1) or
/// one shared Gaussian error (Study 2) per individual generates both arms, so
/// the finite-population effect is exact (identically 0 when delta = 0 in
/// Study 1, identically delta in Study 2).
pub fn generate_population_with<R: Rng + ?Sized>(
    scenario: &Scenario,
    alpha: &[f64],
    beta: &[f64],
    rng: &mut R,
) -> Result<(Dataset, f64), SimError> {
    let total = scenario.p + scenario.q;
    if alpha.len() != total || beta.len() != total {
        return Err(SimError::Invalid(format!(
            "coefficient vectors must have length p+q = {total}"
        )));
    }
    let n = scenario.population;
    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(n); total];
    let mut exposure = Vec::with_capacity(n);
    let mut outcome = Vec::with_capacity(n);
    let mut y0_sum = 0.0;
    let mut y1_sum = 0.0;
    let outcome_sd = match scenario.study {
        Study::One => 0.0,
        Study::Two => (total as f64).sqrt(),
    };

    for _ in 0..n {
        let mut lp_a = 0.0;
        let mut lp_y = 0.0;
        for k in 0..total {
            let l: f64 = StandardNormal.sample(rng);
            lp_a += alpha[k] * l;
            lp_y += beta[k] * l;
            columns[k].push(l);
        }
        let p_exposed = match (scenario.study, scenario.exposure_link) {
            (Study::One, _) | (Study::Two, ExposureLink::Logit) => expit(lp_a),
            (Study::Two, ExposureLink::Probit) => crate::special::normal_cdf(lp_a),
        };
        let a = if rng.random::<f64>() < p_exposed { 1.0 } else { 0.0 };
        let (y0, y1) = match scenario.study {
            Study::One => {
                let u: f64 = rng.random();
                let y0 = f64::from(u < expit(lp_y));
                let y1 = f64::from(u < expit(scenario.delta + lp_y));
                (y0, y1)
            }
            Study::Two => {
                let noise: f64 = StandardNormal.sample(rng);
                let e = outcome_sd * noise;
                (lp_y + e, scenario.delta + lp_y + e)
            }
        };
        y0_sum += y0;
        y1_sum += y1;
        exposure.push(a);
        outcome.push(if a == 1.0 { y1 } else { y0 });
    }

    let kind = match scenario.study {
        Study::One => OutcomeKind::Binary,
        Study::Two => OutcomeKind::Continuous,
    };
    let covariates = columns
        .into_iter()
        .enumerate()
        .map(|(k, values)| Column { name: format!("L{}", k + 1), values })
        .collect();
    let dataset = Dataset::new(exposure, outcome, kind, covariates)?;
    let true_psi = (y1_sum - y0_sum) / n as f64;
    Ok((dataset, true_psi))
}

/// Designate the q weakest-impact confounders as unmeasured by running
/// MLE-mode elimination on the whole population and taking the first q
/// removals. Deterministic given the population.
pub fn designate_unmeasured(population: &Dataset, q: usize) -> Result<Vec<String>, ElimError> {
    if q == 0 {
        return Ok(Vec::new());
    }
    if q > population.n_covariates() {
        return Err(ElimError::InvalidInput(format!(
            "q = {q} exceeds the {} covariates",
            population.n_covariates()
        )));
    }
    let trajectory = build_trajectory(population, TrajectoryMode::Mle, 0, 0.05)?;
    Ok(trajectory.elimination_order[..q].to_vec())
}

/// Aggregates for one method column (All, Measured or Predicted).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodSummary {
    pub mean_estimate: f64,
    pub empirical_sd: f64,
    /// sqrt(bias^2 + empirical variance).
    pub root_mse: f64,
    /// Empirical frequency of the interval covering the true effect.
    pub coverage: f64,
}

fn summarize(estimates: &[f64], covered: &[bool], true_psi: f64) -> MethodSummary {
    let r = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / r;
    let variance = if estimates.len() > 1 {
        estimates.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (r - 1.0)
    } else {
        0.0
    };
    let bias = mean - true_psi;
    MethodSummary {
        mean_estimate: mean,
        empirical_sd: variance.sqrt(),
        root_mse: (bias * bias + variance).sqrt(),
        coverage: covered.iter().filter(|c| **c).count() as f64 / r,
    }
}

/// Study results in the layout of the paper's tables.
#[derive(Debug, Clone)]
pub struct SimReport {
    pub all: MethodSummary,
    pub measured: MethodSummary,
    pub predicted: MethodSummary,
    pub true_psi: f64,
    pub unmeasured_names: Vec<String>,
    pub replicates_completed: usize,
    pub failures: usize,
}

struct ReplicateOutcome {
    all: (f64, bool),
    measured: (f64, bool),
    predicted: (f64, bool),
}

/// Run one full scenario: population, designation, replicates, aggregation.
///
/// Replicate-level failures are logged and excluded; the run aborts when more
/// than 5% of replicates fail.
pub fn run_study(scenario: &Scenario) -> Result<SimReport, SimError> {
    scenario.validate()?;
    let mut population_rng = ChaCha8Rng::seed_from_u64(mix2(scenario.seed, SALT_POPULATION));
    let (population, truth) = generate_population(scenario, &mut population_rng)?;
    let unmeasured = designate_unmeasured(&population, scenario.q)?;
    let measured: Vec<String> = population
        .covariate_names()
        .iter()
        .filter(|name| !unmeasured.iter().any(|u| u == *name))
        .map(|s| s.to_string())
        .collect();
    debug_assert_eq!(measured.len(), scenario.p);
    let all_names: Vec<String> =
        population.covariate_names().iter().map(|s| s.to_string()).collect();
    let horizon = if scenario.q == 0 { 2 } else { scenario.q };
    let max_knots = scenario.p - 1;
    let alpha = 0.05;

    let outcomes: Vec<Result<ReplicateOutcome, String>> = (0..scenario.replicates)
        .into_par_iter()
        .map(|replicate| {
            let seed = mix2(scenario.seed, SALT_REPLICATE + replicate as u64);
            run_replicate(
                &population, &truth, &all_names, &measured, scenario, horizon, max_knots, alpha,
                seed,
            )
            .map_err(|e| format!("replicate {replicate}: {e}"))
        })
        .collect();

    let mut all_est = Vec::new();
    let mut all_cov = Vec::new();
    let mut measured_est = Vec::new();
    let mut measured_cov = Vec::new();
    let mut predicted_est = Vec::new();
    let mut predicted_cov = Vec::new();
    let mut failures = 0usize;
    for outcome in outcomes {
        match outcome {
            Ok(rep) => {
                all_est.push(rep.all.0);
                all_cov.push(rep.all.1);
                measured_est.push(rep.measured.0);
                measured_cov.push(rep.measured.1);
                predicted_est.push(rep.predicted.0);
                predicted_cov.push(rep.predicted.1);
            }
            Err(message) => {
                log::warn!("excluding failed replicate: {message}");
                failures += 1;
            }
        }
    }
    if failures as f64 > 0.05 * scenario.replicates as f64 {
        return Err(SimError::ReplicateBudgetExceeded { failures, replicates: scenario.replicates });
    }

    Ok(SimReport {
        all: summarize(&all_est, &all_cov, truth.true_psi),
        measured: summarize(&measured_est, &measured_cov, truth.true_psi),
        predicted: summarize(&predicted_est, &predicted_cov, truth.true_psi),
        true_psi: truth.true_psi,
        unmeasured_names: unmeasured,
        replicates_completed: all_est.len(),
        failures,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_replicate(
    population: &Dataset,
    truth: &PopulationTruth,
    all_names: &[String],
    measured: &[String],
    scenario: &Scenario,
    horizon: usize,
    max_knots: usize,
    alpha: f64,
    seed: u64,
) -> Result<ReplicateOutcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices = rand::seq::index::sample(&mut rng, scenario.population, scenario.n).into_vec();
    debug_assert!({
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        sorted.len() == scenario.n
    });
    let sample = population.sample_rows(&indices).map_err(|e| e.to_string())?;

    let covers = |lower: f64, upper: f64| lower <= truth.true_psi && truth.true_psi <= upper;

    let all_refs: Vec<&str> = all_names.iter().map(|s| s.as_str()).collect();
    let all_fit = dr_effect(&sample, &all_refs, None, alpha).map_err(|e| e.to_string())?;

    let measured_refs: Vec<&str> = measured.iter().map(|s| s.as_str()).collect();
    let measured_fit = dr_effect(&sample, &measured_refs, None, alpha).map_err(|e| e.to_string())?;

    let analysis = sample.restrict(&measured_refs).map_err(|e| e.to_string())?;
    let ensemble = build_ensemble(&analysis, scenario.b, mix2(seed, SALT_ENSEMBLE), alpha)
        .map_err(|e| e.to_string())?;
    let extrapolation = extrapolate_ensemble(&ensemble, max_knots, &[horizon], 0.0, alpha)
        .map_err(|e| e.to_string())?;
    let predicted = extrapolation.predicted_effects[0][0];
    let interval = extrapolation.uncertainty_intervals[0];

    Ok(ReplicateOutcome {
        all: (all_fit.estimate, covers(all_fit.ci_lower, all_fit.ci_upper)),
        measured: (measured_fit.estimate, covers(measured_fit.ci_lower, measured_fit.ci_upper)),
        predicted: (predicted, covers(interval.lower, interval.upper)),
    })
}

/// Write the report as a single-row CSV in the table layout of the paper.
pub fn write_report_csv(
    report: &SimReport,
    scenario: &Scenario,
    path: impl AsRef<std::path::Path>,
) -> Result<(), DataError> {
    let columns = [
        "q",
        "true_psi",
        "p",
        "est_all",
        "sd_all",
        "rmse_all",
        "cover_all",
        "est_measured",
        "sd_measured",
        "rmse_measured",
        "cover_measured",
        "est_predicted",
        "sd_predicted",
        "rmse_predicted",
        "cover_predicted",
        "replicates",
        "failures",
    ];
    let row = vec![
        scenario.q as f64,
        report.true_psi,
        scenario.p as f64,
        report.all.mean_estimate,
        report.all.empirical_sd,
        report.all.root_mse,
        report.all.coverage,
        report.measured.mean_estimate,
        report.measured.empirical_sd,
        report.measured.root_mse,
        report.measured.coverage,
        report.predicted.mean_estimate,
        report.predicted.empirical_sd,
        report.predicted.root_mse,
        report.predicted.coverage,
        report.replicates_completed as f64 + report.failures as f64,
        report.failures as f64,
    ];
    write_table(&columns, &[row], path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_scenario(study: Study) -> Scenario {
        Scenario {
            study,
            p: 3,
            q: 0,
            delta: 0.0,
            exposure_link: ExposureLink::Logit,
            population: 2000,
            n: 400,
            replicates: 4,
            b: 4,
            seed: 77,
        }
    }

    #[test]
    fn study_one_zero_delta_has_exactly_zero_effect() {
        let scenario = base_scenario(Study::One);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (_, truth) = generate_population(&scenario, &mut rng).unwrap();
        assert_eq!(truth.true_psi, 0.0);
        assert_eq!(truth.alpha, truth.beta);
    }

    #[test]
    fn study_two_effect_is_exactly_delta() {
        let mut scenario = base_scenario(Study::Two);
        scenario.delta = 2.0;
        for link in [ExposureLink::Logit, ExposureLink::Probit] {
            scenario.exposure_link = link;
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let (data, truth) = generate_population(&scenario, &mut rng).unwrap();
            assert!((truth.true_psi - 2.0).abs() < 1e-12);
            assert_eq!(data.outcome_kind(), OutcomeKind::Continuous);
        }
    }

    #[test]
    fn zero_coefficients_give_balanced_exposure() {
        let mut scenario = base_scenario(Study::One);
        scenario.population = 50_000;
        let zeros = vec![0.0; 3];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (data, _) = generate_population_with(&scenario, &zeros, &zeros, &mut rng).unwrap();
        let rate = data.exposure().iter().sum::<f64>() / data.n() as f64;
        assert!((rate - 0.5).abs() < 0.01, "exposure rate {rate}");
    }

    #[test]
    fn designate_unmeasured_boundary_cases() {
        let scenario = base_scenario(Study::One);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (population, _) = generate_population(&scenario, &mut rng).unwrap();
        assert!(designate_unmeasured(&population, 0).unwrap().is_empty());
        let full = designate_unmeasured(&population, 3).unwrap();
        let mut sorted = full.clone();
        sorted.sort();
        assert_eq!(sorted, vec!["L1".to_string(), "L2".into(), "L3".into()]);
        assert!(designate_unmeasured(&population, 4).is_err());
    }

    #[test]
    fn noise_covariate_is_designated_first() {
        // L1 is a real confounder, L2 pure noise; population elimination
        // should pick L2 as the unmeasured one almost always.
        let scenario = Scenario { p: 1, q: 1, population: 5000, ..base_scenario(Study::One) };
        let alpha = vec![0.8, 0.0];
        let mut hits = 0;
        let seeds = 50;
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let (population, _) =
                generate_population_with(&scenario, &alpha, &alpha, &mut rng).unwrap();
            let unmeasured = designate_unmeasured(&population, 1).unwrap();
            if unmeasured == ["L2"] {
                hits += 1;
            }
        }
        assert!(hits * 100 >= 90 * seeds, "noise covariate selected in {hits}/{seeds} populations");
    }

    #[test]
    fn report_identity_and_column_equality_when_q_is_zero() {
        let scenario = base_scenario(Study::One);
        let report = run_study(&scenario).unwrap();
        assert_eq!(report.failures, 0);
        assert_eq!(report.replicates_completed, 4);
        // q = 0: All and Measured analyze the same subset, replicate by replicate.
        assert_eq!(report.all.mean_estimate.to_bits(), report.measured.mean_estimate.to_bits());
        assert_eq!(report.all.coverage, report.measured.coverage);
        for summary in [report.all, report.measured, report.predicted] {
            let bias = summary.mean_estimate - report.true_psi;
            let identity = bias * bias + summary.empirical_sd * summary.empirical_sd;
            assert!((summary.root_mse * summary.root_mse - identity).abs() < 1e-10);
        }
    }

    #[test]
    fn run_study_is_reproducible() {
        let scenario = base_scenario(Study::One);
        let a = run_study(&scenario).unwrap();
        let b = run_study(&scenario).unwrap();
        assert_eq!(a.all.mean_estimate.to_bits(), b.all.mean_estimate.to_bits());
        assert_eq!(a.predicted.root_mse.to_bits(), b.predicted.root_mse.to_bits());
        assert_eq!(a.unmeasured_names, b.unmeasured_names);
    }

    #[test]
    fn scenario_validation_rejects_nonsense() {
        let mut s = base_scenario(Study::One);
        s.p = 0;
        assert!(matches!(run_study(&s), Err(SimError::Invalid(_))));
        let mut s = base_scenario(Study::One);
        s.n = 5000;
        assert!(matches!(run_study(&s), Err(SimError::Invalid(_))));
        let mut s = base_scenario(Study::One);
        s.b = 0;
        assert!(matches!(run_study(&s), Err(SimError::Invalid(_))));
    }

    #[test]
    fn report_csv_is_single_row(){
        let scenario = base_scenario(Study::One);
        let report = run_study(&scenario).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        write_report_csv(&report, &scenario, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("q,true_psi,p,"));
    }
}
