//! Run configuration: CLI flags merged over an optional TOML config file.
//!
//! Every flag may instead be given as a key in the config file; flags win.
//! Seeds are always explicit so runs are reproducible by construction.

use std::path::PathBuf;
use std::str::FromStr;

use confsens_core::{ExposureLink, OutcomeKind, Scenario, Study};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// How interior knot counts are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum KnotPolicy {
    /// Cross-validate over 0..=J-1 interior knots.
    Cv,
    /// Largest admissible count, J-1.
    Max,
    /// A fixed count.
    Fixed(usize),
}

impl FromStr for KnotPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cv" => Ok(KnotPolicy::Cv),
            "max" => Ok(KnotPolicy::Max),
            other => other
                .parse::<usize>()
                .map(KnotPolicy::Fixed)
                .map_err(|_| format!("knots must be 'cv', 'max' or an integer, got {other:?}")),
        }
    }
}

/// Covariate selection for an analysis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CovariateSelection {
    /// Every header that is not the exposure or outcome.
    AllOthers,
    /// An explicit comma-separated list.
    List(Vec<String>),
}

impl FromStr for CovariateSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "all-others" {
            return Ok(CovariateSelection::AllOthers);
        }
        let names: Vec<String> =
            s.split(',').map(str::trim).filter(|n| !n.is_empty()).map(String::from).collect();
        if names.is_empty() {
            return Err("covariate list is empty".into());
        }
        Ok(CovariateSelection::List(names))
    }
}

fn parse_outcome_kind(s: &str) -> Result<OutcomeKind, String> {
    match s {
        "binary" => Ok(OutcomeKind::Binary),
        "continuous" => Ok(OutcomeKind::Continuous),
        other => Err(format!("outcome kind must be 'binary' or 'continuous', got {other:?}")),
    }
}

/// Keys accepted in a TOML config file for `analyze`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeFileConfig {
    pub data: Option<PathBuf>,
    pub exposure: Option<String>,
    pub outcome: Option<String>,
    pub outcome_kind: Option<String>,
    pub covariates: Option<String>,
    pub b: Option<usize>,
    pub alpha: Option<f64>,
    pub q_max: Option<usize>,
    pub trim: Option<f64>,
    pub knots: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub keep_incomplete: Option<bool>,
}

/// Fully resolved `analyze` configuration.
#[derive(Debug, Clone)]
pub struct AnalyzeConfig {
    pub data: PathBuf,
    pub exposure: String,
    pub outcome: String,
    pub outcome_kind: Option<OutcomeKind>,
    pub covariates: CovariateSelection,
    pub b: usize,
    pub alpha: f64,
    pub q_max: Option<usize>,
    pub trim: f64,
    pub knots: KnotPolicy,
    pub seed: u64,
    pub out: PathBuf,
    /// Keep rows with missing cells (error instead of dropping them).
    pub keep_incomplete: bool,
}

pub struct AnalyzeFlags {
    pub config: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub exposure: Option<String>,
    pub outcome: Option<String>,
    pub outcome_kind: Option<String>,
    pub covariates: Option<String>,
    pub b: Option<usize>,
    pub alpha: Option<f64>,
    pub q_max: Option<usize>,
    pub trim: Option<f64>,
    pub knots: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub keep_incomplete: bool,
}

fn load_file<T: for<'de> Deserialize<'de> + Default>(path: &Option<PathBuf>) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            toml::from_str(&text)
                .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", p.display())))
        }
    }
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("--{flag} is required (flag or config file)")))
}

impl AnalyzeConfig {
    pub fn resolve(flags: AnalyzeFlags) -> Result<Self, CliError> {
        let file: AnalyzeFileConfig = load_file(&flags.config)?;
        let usage = |e: String| CliError::Usage(e);

        let outcome_kind = flags
            .outcome_kind
            .or(file.outcome_kind)
            .map(|s| parse_outcome_kind(&s))
            .transpose()
            .map_err(usage)?;
        let covariates = flags
            .covariates
            .or(file.covariates)
            .map(|s| CovariateSelection::from_str(&s))
            .transpose()
            .map_err(usage)?
            .unwrap_or(CovariateSelection::AllOthers);
        let knots = flags
            .knots
            .or(file.knots)
            .map(|s| KnotPolicy::from_str(&s))
            .transpose()
            .map_err(usage)?
            .unwrap_or(KnotPolicy::Max);

        let config = Self {
            data: required(flags.data.or(file.data), "data")?,
            exposure: required(flags.exposure.or(file.exposure), "exposure")?,
            outcome: required(flags.outcome.or(file.outcome), "outcome")?,
            outcome_kind,
            covariates,
            b: flags.b.or(file.b).unwrap_or(500),
            alpha: flags.alpha.or(file.alpha).unwrap_or(0.05),
            q_max: flags.q_max.or(file.q_max),
            trim: flags.trim.or(file.trim).unwrap_or(0.05),
            knots,
            seed: required(flags.seed.or(file.seed), "seed")?,
            out: required(flags.out.or(file.out), "out")?,
            keep_incomplete: flags.keep_incomplete || file.keep_incomplete.unwrap_or(false),
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.b < 1 {
            return Err(CliError::Usage("--b must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CliError::Usage(format!("--alpha must be in (0,1), got {}", self.alpha)));
        }
        if !(0.0..0.5).contains(&self.trim) {
            return Err(CliError::Usage(format!("--trim must be in [0, 0.5), got {}", self.trim)));
        }
        if self.q_max == Some(0) {
            return Err(CliError::Usage("--q-max must be at least 1".into()));
        }
        Ok(())
    }
}

/// Keys accepted in a TOML config file for `simulate`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateFileConfig {
    pub study: Option<u8>,
    pub p: Option<usize>,
    pub q: Option<usize>,
    pub delta: Option<f64>,
    pub link: Option<String>,
    pub n: Option<usize>,
    pub population: Option<usize>,
    pub replicates: Option<usize>,
    pub b: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

pub struct SimulateFlags {
    pub config: Option<PathBuf>,
    pub study: Option<u8>,
    pub p: Option<usize>,
    pub q: Option<usize>,
    pub delta: Option<f64>,
    pub link: Option<String>,
    pub n: Option<usize>,
    pub population: Option<usize>,
    pub replicates: Option<usize>,
    pub b: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Fully resolved `simulate` configuration.
#[derive(Debug, Clone)]
pub struct SimulateConfig {
    pub scenario: Scenario,
    pub out: PathBuf,
}

impl SimulateConfig {
    pub fn resolve(flags: SimulateFlags) -> Result<Self, CliError> {
        let file: SimulateFileConfig = load_file(&flags.config)?;
        let study = match required(flags.study.or(file.study), "study")? {
            1 => Study::One,
            2 => Study::Two,
            other => return Err(CliError::Usage(format!("--study must be 1 or 2, got {other}"))),
        };
        let link = match flags.link.or(file.link).as_deref() {
            None | Some("logit") => ExposureLink::Logit,
            Some("probit") => ExposureLink::Probit,
            Some(other) => {
                return Err(CliError::Usage(format!(
                    "--link must be 'logit' or 'probit', got {other:?}"
                )))
            }
        };
        let scenario = Scenario {
            study,
            p: required(flags.p.or(file.p), "p")?,
            q: flags.q.or(file.q).unwrap_or(0),
            delta: flags.delta.or(file.delta).unwrap_or(0.0),
            exposure_link: link,
            population: flags.population.or(file.population).unwrap_or(50_000),
            n: flags.n.or(file.n).unwrap_or(1000),
            replicates: flags.replicates.or(file.replicates).unwrap_or(1000),
            b: flags.b.or(file.b).unwrap_or(500),
            seed: required(flags.seed.or(file.seed), "seed")?,
        };
        if scenario.b < 1 {
            return Err(CliError::Usage("--b must be at least 1".into()));
        }
        if scenario.replicates < 1 {
            return Err(CliError::Usage("--replicates must be at least 1".into()));
        }
        Ok(Self { scenario, out: required(flags.out.or(file.out), "out")? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_flags() -> AnalyzeFlags {
        AnalyzeFlags {
            config: None,
            data: Some(PathBuf::from("d.csv")),
            exposure: Some("a".into()),
            outcome: Some("y".into()),
            outcome_kind: None,
            covariates: None,
            b: None,
            alpha: None,
            q_max: None,
            trim: None,
            knots: None,
            seed: Some(7),
            out: Some(PathBuf::from("outdir")),
            keep_incomplete: false,
        }
    }

    #[test]
    fn defaults_fill_in() {
        let config = AnalyzeConfig::resolve(minimal_flags()).unwrap();
        assert_eq!(config.b, 500);
        assert_eq!(config.alpha, 0.05);
        assert_eq!(config.trim, 0.05);
        assert_eq!(config.knots, KnotPolicy::Max);
        assert_eq!(config.covariates, CovariateSelection::AllOthers);
    }

    #[test]
    fn missing_seed_is_a_usage_error() {
        let mut flags = minimal_flags();
        flags.seed = None;
        assert!(matches!(AnalyzeConfig::resolve(flags), Err(CliError::Usage(_))));
    }

    #[test]
    fn zero_b_rejected() {
        let mut flags = minimal_flags();
        flags.b = Some(0);
        assert!(matches!(AnalyzeConfig::resolve(flags), Err(CliError::Usage(_))));
    }

    #[test]
    fn knot_policy_parses() {
        assert_eq!(KnotPolicy::from_str("cv").unwrap(), KnotPolicy::Cv);
        assert_eq!(KnotPolicy::from_str("max").unwrap(), KnotPolicy::Max);
        assert_eq!(KnotPolicy::from_str("7").unwrap(), KnotPolicy::Fixed(7));
        assert!(KnotPolicy::from_str("wavelets").is_err());
    }

    #[test]
    fn covariate_selection_parses() {
        assert_eq!(
            CovariateSelection::from_str("x1, x2,x3").unwrap(),
            CovariateSelection::List(vec!["x1".into(), "x2".into(), "x3".into()])
        );
        assert_eq!(CovariateSelection::from_str("all-others").unwrap(), CovariateSelection::AllOthers);
    }

    #[test]
    fn config_file_fills_gaps_and_flags_win() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "b = 25\nalpha = 0.1\nseed = 99\n").unwrap();
        let mut flags = minimal_flags();
        flags.config = Some(path);
        flags.alpha = Some(0.2);
        let config = AnalyzeConfig::resolve(flags).unwrap();
        assert_eq!(config.b, 25);
        assert_eq!(config.alpha, 0.2, "flag must beat config file");
        assert_eq!(config.seed, 7, "flag must beat config file");
    }
}
