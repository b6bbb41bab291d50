//! Ensembles of perturbed elimination trajectories.
//!
//! One observed (MLE) trajectory plus B coefficient-perturbed replicates,
//! with per-replicate seeds split deterministically from a master seed.
//! Replicates are embarrassingly parallel and positionally seeded, so
//! execution order never affects any output.

use rayon::prelude::*;

use crate::data::Dataset;
use crate::elimination::{
    build_trajectory_with, ElimError, FitCache, Trajectory, TrajectoryMode, TrajectoryOptions,
};
use crate::seeds::mix2;

/// Options shared by every trajectory in an ensemble.
#[derive(Debug, Clone)]
pub struct EnsembleOptions {
    pub alpha: f64,
    /// Draw scale passed through to perturbed trajectories (test hook).
    pub draw_scale: f64,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self { alpha: 0.05, draw_scale: 1.0 }
    }
}

/// The observed trajectory together with its B perturbed replicates.
#[derive(Debug, Clone)]
pub struct TrajectoryEnsemble {
    pub observed: Trajectory,
    pub perturbed: Vec<Trajectory>,
    pub master_seed: u64,
}

impl TrajectoryEnsemble {
    /// Number of perturbed replicates B.
    pub fn b(&self) -> usize {
        self.perturbed.len()
    }

    /// Number of covariates J shared by every trajectory.
    pub fn n_covariates(&self) -> usize {
        self.observed.n_covariates()
    }

    /// All trajectories, observed first.
    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        std::iter::once(&self.observed).chain(self.perturbed.iter())
    }
}

/// Build an ensemble with default options.
pub fn build_ensemble(
    data: &Dataset,
    b: usize,
    master_seed: u64,
    alpha: f64,
) -> Result<TrajectoryEnsemble, ElimError> {
    build_ensemble_with(data, b, master_seed, &EnsembleOptions { alpha, ..Default::default() })
}

/// Build an ensemble of one observed and `b` perturbed trajectories.
pub fn build_ensemble_with(
    data: &Dataset,
    b: usize,
    master_seed: u64,
    options: &EnsembleOptions,
) -> Result<TrajectoryEnsemble, ElimError> {
    if b < 1 {
        return Err(ElimError::InvalidInput("B must be at least 1".into()));
    }
    let trajectory_options =
        TrajectoryOptions { alpha: options.alpha, draw_scale: options.draw_scale };
    let cache = FitCache::new();
    let observed = build_trajectory_with(
        data,
        TrajectoryMode::Mle,
        mix2(master_seed, 0),
        &trajectory_options,
        &cache,
    )?;
    let perturbed: Vec<Trajectory> = (0..b)
        .into_par_iter()
        .map(|replicate| {
            build_trajectory_with(
                data,
                TrajectoryMode::Perturbed,
                mix2(master_seed, replicate as u64 + 1),
                &trajectory_options,
                &cache,
            )
        })
        .collect::<Result<_, _>>()?;
    debug_assert!(perturbed.iter().all(|t| t.orbits.len() == observed.orbits.len()));
    Ok(TrajectoryEnsemble { observed, perturbed, master_seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Column, OutcomeKind};

    fn toy_dataset() -> Dataset {
        let n = 60;
        let x1: Vec<f64> = (0..n).map(|i| ((i * 17 % 23) as f64) / 11.0 - 1.0).collect();
        let x2: Vec<f64> = (0..n).map(|i| ((i * 29 % 19) as f64) / 9.0 - 1.0).collect();
        let exposure: Vec<f64> =
            (0..n).map(|i| ((x1[i] * 0.4 + ((i * 7 % 13) as f64 - 6.0) / 6.0) > 0.0) as u8 as f64).collect();
        let outcome: Vec<f64> =
            (0..n).map(|i| 0.4 * exposure[i] + 0.9 * x1[i] - 0.3 * x2[i] + ((i * 5 % 11) as f64 - 5.0) / 8.0).collect();
        Dataset::new(
            exposure,
            outcome,
            OutcomeKind::Continuous,
            vec![
                Column { name: "x1".into(), values: x1 },
                Column { name: "x2".into(), values: x2 },
            ],
        )
        .unwrap()
    }

    #[test]
    fn rejects_zero_replicates() {
        let data = toy_dataset();
        assert!(matches!(
            build_ensemble(&data, 0, 1, 0.05),
            Err(ElimError::InvalidInput(_))
        ));
    }

    #[test]
    fn ensemble_shape_and_distinct_seeds() {
        let data = toy_dataset();
        let ensemble = build_ensemble(&data, 8, 99, 0.05).unwrap();
        assert_eq!(ensemble.b(), 8);
        assert!(!ensemble.observed.perturbed);
        assert!(ensemble.perturbed.iter().all(|t| t.perturbed));
        assert!(ensemble.trajectories().all(|t| t.orbits.len() == 3));
        let mut seeds: Vec<u64> = ensemble.perturbed.iter().map(|t| t.seed).collect();
        seeds.push(ensemble.observed.seed);
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 9, "per-trajectory seeds must be distinct");
    }

    #[test]
    fn same_master_seed_reproduces_ensemble() {
        let data = toy_dataset();
        let a = build_ensemble(&data, 6, 1234, 0.05).unwrap();
        let b = build_ensemble(&data, 6, 1234, 0.05).unwrap();
        for (ta, tb) in a.trajectories().zip(b.trajectories()) {
            assert_eq!(ta.elimination_order, tb.elimination_order);
            for (oa, ob) in ta.orbits.iter().zip(&tb.orbits) {
                assert_eq!(oa.estimate.to_bits(), ob.estimate.to_bits());
                assert_eq!(oa.ci_upper.to_bits(), ob.ci_upper.to_bits());
            }
        }
    }

    #[test]
    fn zero_covariance_hook_collapses_to_observed() {
        let data = toy_dataset();
        let options = EnsembleOptions { alpha: 0.05, draw_scale: 0.0 };
        let ensemble = build_ensemble_with(&data, 1, 5, &options).unwrap();
        for (p, o) in ensemble.perturbed[0].orbits.iter().zip(&ensemble.observed.orbits) {
            assert_eq!(p.estimate.to_bits(), o.estimate.to_bits());
        }
    }
}
