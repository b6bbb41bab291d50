//! The `analyze` subcommand: load a CSV, build the trajectory ensemble,
//! extrapolate, and emit orbits.csv, extrapolation.csv, trajectory.svg and a
//! run.json manifest.

use std::path::{Path, PathBuf};

use confsens_core::{
    build_ensemble, extrapolate_ensemble, load_csv, select_knots_cv, write_table, ColumnRole,
    ColumnSpec, ExtrapolationResult, TrajectoryEnsemble,
};
use serde::Serialize;

use crate::config::{AnalyzeConfig, CovariateSelection, KnotPolicy};
use crate::svg;
use crate::CliError;

#[derive(Serialize)]
struct AnalyzeManifest<'a> {
    command: &'static str,
    version: &'static str,
    seed: u64,
    data: String,
    exposure: &'a str,
    outcome: &'a str,
    outcome_kind: String,
    covariates: Vec<String>,
    n: usize,
    dropped_rows: usize,
    b: usize,
    alpha: f64,
    trim: f64,
    knot_policy: String,
    selected_knots: usize,
    q_values: &'a [usize],
    crossing_q: Option<usize>,
    elimination_order: &'a [String],
    outputs: Vec<String>,
}

pub fn run(config: &AnalyzeConfig) -> Result<(), CliError> {
    let specs = build_specs(config)?;
    let loaded = load_csv(&config.data, &specs, !config.keep_incomplete)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let dataset = loaded.dataset;
    let j = dataset.n_covariates();
    log::info!(
        "loaded {} rows ({} dropped), {} covariates",
        dataset.n(),
        loaded.dropped_rows,
        j
    );

    let ensemble = build_ensemble(&dataset, config.b, config.seed, config.alpha)
        .map_err(|e| CliError::Numeric(e.to_string()))?;

    let selected_knots = match config.knots {
        KnotPolicy::Max => j - 1,
        KnotPolicy::Fixed(k) => {
            if k > j - 1 {
                return Err(CliError::Usage(format!(
                    "--knots {k} exceeds the maximum {} for {j} covariates",
                    j - 1
                )));
            }
            k
        }
        KnotPolicy::Cv => {
            let candidates: Vec<usize> = (0..j).collect();
            select_knots_cv(&ensemble, &candidates).map_err(|e| CliError::Numeric(e.to_string()))?
        }
    };

    let q_max = config.q_max.unwrap_or_else(|| j.div_ceil(2));
    let q_values: Vec<usize> = (1..=q_max).collect();
    let extrapolation =
        extrapolate_ensemble(&ensemble, selected_knots, &q_values, config.trim, config.alpha)
            .map_err(|e| CliError::Numeric(e.to_string()))?;

    std::fs::create_dir_all(&config.out).map_err(|e| CliError::Data(e.to_string()))?;
    let outputs = OutputSet::new(&config.out);
    outputs.write_all(|| {
        write_orbits_csv(&ensemble, &outputs.orbits)?;
        write_extrapolation_csv(&extrapolation, &outputs.extrapolation)?;
        std::fs::write(&outputs.svg, svg::render(&ensemble, &extrapolation))
            .map_err(|e| CliError::Data(e.to_string()))?;
        let manifest = AnalyzeManifest {
            command: "analyze",
            version: env!("CARGO_PKG_VERSION"),
            seed: config.seed,
            data: config.data.display().to_string(),
            exposure: &config.exposure,
            outcome: &config.outcome,
            outcome_kind: dataset.outcome_kind().to_string(),
            covariates: dataset.covariate_names().iter().map(|s| s.to_string()).collect(),
            n: dataset.n(),
            dropped_rows: loaded.dropped_rows,
            b: config.b,
            alpha: config.alpha,
            trim: config.trim,
            knot_policy: knot_policy_label(config.knots),
            selected_knots,
            q_values: &extrapolation.q_values,
            crossing_q: extrapolation.crossing_q,
            elimination_order: &ensemble.observed.elimination_order,
            outputs: outputs.names(),
        };
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Data(e.to_string()))?;
        std::fs::write(&outputs.manifest, json + "\n").map_err(|e| CliError::Data(e.to_string()))?;
        Ok(())
    })?;

    let full = &ensemble.observed.orbits[j];
    println!(
        "full-adjustment estimate {:.4} ({:.0}% CI {:.4} to {:.4}); {} interior knots; crossing_q = {}",
        full.estimate,
        (1.0 - config.alpha) * 100.0,
        full.ci_lower,
        full.ci_upper,
        selected_knots,
        extrapolation
            .crossing_q
            .map(|q| q.to_string())
            .unwrap_or_else(|| format!("none through {q_max}")),
    );
    println!("outputs written to {}", config.out.display());
    Ok(())
}

fn knot_policy_label(policy: KnotPolicy) -> String {
    match policy {
        KnotPolicy::Cv => "cv".into(),
        KnotPolicy::Max => "max".into(),
        KnotPolicy::Fixed(k) => k.to_string(),
    }
}

fn build_specs(config: &AnalyzeConfig) -> Result<Vec<ColumnSpec>, CliError> {
    let mut exposure = ColumnSpec::new(config.exposure.clone(), ColumnRole::Exposure);
    exposure.outcome_kind = None;
    let mut outcome = ColumnSpec::new(config.outcome.clone(), ColumnRole::Outcome);
    outcome.outcome_kind = config.outcome_kind;
    let mut specs = vec![exposure, outcome];

    let covariate_names: Vec<String> = match &config.covariates {
        CovariateSelection::List(names) => {
            if names.iter().any(|n| *n == config.exposure || *n == config.outcome) {
                return Err(CliError::Usage(
                    "covariate list must not contain the exposure or outcome column".into(),
                ));
            }
            names.clone()
        }
        CovariateSelection::AllOthers => {
            let mut reader = csv::Reader::from_path(&config.data)
                .map_err(|e| CliError::Data(e.to_string()))?;
            let headers = reader.headers().map_err(|e| CliError::Data(e.to_string()))?;
            headers
                .iter()
                .filter(|h| *h != config.exposure && *h != config.outcome)
                .map(String::from)
                .collect()
        }
    };
    if covariate_names.is_empty() {
        return Err(CliError::Usage("no covariate columns selected".into()));
    }
    specs.extend(covariate_names.into_iter().map(|n| ColumnSpec::new(n, ColumnRole::Covariate)));
    Ok(specs)
}

/// Output paths for one analysis run; partial outputs are removed on failure.
pub struct OutputSet {
    pub orbits: PathBuf,
    pub extrapolation: PathBuf,
    pub svg: PathBuf,
    pub manifest: PathBuf,
}

impl OutputSet {
    fn new(dir: &Path) -> Self {
        Self {
            orbits: dir.join("orbits.csv"),
            extrapolation: dir.join("extrapolation.csv"),
            svg: dir.join("trajectory.svg"),
            manifest: dir.join("run.json"),
        }
    }

    fn names(&self) -> Vec<String> {
        ["orbits.csv", "extrapolation.csv", "trajectory.svg", "run.json"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    fn write_all(&self, writer: impl FnOnce() -> Result<(), CliError>) -> Result<(), CliError> {
        let result = writer();
        if result.is_err() {
            for path in [&self.orbits, &self.extrapolation, &self.svg, &self.manifest] {
                let _ = std::fs::remove_file(path);
            }
        }
        result
    }
}

fn write_orbits_csv(ensemble: &TrajectoryEnsemble, path: &Path) -> Result<(), CliError> {
    let observed = &ensemble.observed;
    let j = observed.n_covariates();
    let mut writer = csv::Writer::from_path(path).map_err(|e| CliError::Data(e.to_string()))?;
    writer
        .write_record(["orbit", "estimate", "variance", "ci_lower", "ci_upper", "eliminated"])
        .map_err(|e| CliError::Data(e.to_string()))?;
    for (orbit_index, orbit) in observed.orbits.iter().enumerate() {
        // The covariate whose removal produced this orbit from the one above.
        let eliminated = if orbit_index == j {
            ""
        } else {
            observed.elimination_order[j - 1 - orbit_index].as_str()
        };
        writer
            .write_record([
                orbit_index.to_string(),
                orbit.estimate.to_string(),
                orbit.variance.to_string(),
                orbit.ci_lower.to_string(),
                orbit.ci_upper.to_string(),
                eliminated.to_string(),
            ])
            .map_err(|e| CliError::Data(e.to_string()))?;
    }
    writer.flush().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(())
}

fn write_extrapolation_csv(
    extrapolation: &ExtrapolationResult,
    path: &Path,
) -> Result<(), CliError> {
    let columns = [
        "q",
        "predicted_effect",
        "predicted_p2_5",
        "predicted_p97_5",
        "uncertainty_lower",
        "uncertainty_upper",
        "excludes_zero",
    ];
    let rank = |sorted: &[f64], p: f64| {
        let m = sorted.len();
        sorted[(((p * m as f64).ceil() as usize).clamp(1, m)) - 1]
    };
    let rows: Vec<Vec<f64>> = extrapolation
        .q_values
        .iter()
        .enumerate()
        .map(|(qi, q)| {
            let mut effects: Vec<f64> =
                extrapolation.predicted_effects.iter().map(|t| t[qi]).collect();
            effects.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let interval = extrapolation.uncertainty_intervals[qi];
            vec![
                *q as f64,
                extrapolation.predicted_effects[0][qi],
                rank(&effects, 0.025),
                rank(&effects, 0.975),
                interval.lower,
                interval.upper,
                f64::from(interval.excludes_zero()),
            ]
        })
        .collect();
    let column_refs: Vec<&str> = columns.to_vec();
    write_table(&column_refs, &rows, path).map_err(|e| CliError::Data(e.to_string()))
}
