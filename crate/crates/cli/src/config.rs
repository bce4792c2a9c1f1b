//! Per-subcommand run configuration: defaults, an optional TOML file, then
//! command-line overrides. The resolved result is written next to the
//! outputs as `run_config.toml`.

use std::fs;
use std::path::{Path, PathBuf};

use ehrtraj::jsonl::write_atomic;
use ehrtraj::sequence::{Mode, DEFAULT_NO_EVENT_INTERVAL_DAYS};
use ehrtraj::train::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SNAPSHOT_FILE: &str = "run_config.toml";

/// Loads `path` into `T`, rejecting unknown keys; defaults when absent.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("--config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("--config {}: {e}", path.display())))
}

pub fn write_snapshot<T: Serialize>(out: &Path, command: &str, cfg: &T) -> Result<(), CliError> {
    let body = toml::to_string(cfg).map_err(|e| CliError::Data(format!("serializing config: {e}")))?;
    let text = format!("# resolved configuration of `ehrtraj {command}`\n{body}");
    let p = out.join(SNAPSHOT_FILE);
    write_atomic(&p, text.as_bytes()).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
}

pub fn required(v: &Option<PathBuf>, flag: &str) -> Result<PathBuf, CliError> {
    v.clone().ok_or_else(|| CliError::Usage(format!("missing {flag}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Hazard specification; the bundled demo when unset.
    pub spec: Option<PathBuf>,
    pub n_patients: usize,
    pub seed: u64,
    pub cutoff_min_years: f64,
    pub cutoff_max_years: f64,
    pub out: Option<PathBuf>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            spec: None,
            n_patients: 1000,
            seed: 0,
            cutoff_min_years: 20.0,
            cutoff_max_years: 87.0,
            out: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Strict,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildConfig {
    pub patients: Option<PathBuf>,
    /// ICD-9 to ICD-10 crosswalk; ICD-9 events are invalid without it.
    pub gem: Option<PathBuf>,
    pub mode: Mode,
    pub min_patients: usize,
    pub code_policy: Policy,
    pub no_event_interval_days: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            patients: None,
            gem: None,
            mode: Mode::FirstOcc,
            min_patients: 1000,
            code_policy: Policy::Drop,
            no_event_interval_days: DEFAULT_NO_EVENT_INTERVAL_DAYS,
            val_fraction: 0.1,
            test_fraction: 0.1,
            seed: 0,
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub n_layers: usize,
    pub n_heads: usize,
    pub embed_dim: usize,
    /// Defaults to the mode's window (93 or 445).
    pub context_len: Option<usize>,
    pub age_scale_days: f64,
    /// Seed for parameter initialisation; the training seed when unset.
    pub init_seed: Option<u64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            n_layers: 4,
            n_heads: 4,
            embed_dim: 64,
            context_len: None,
            age_scale_days: ehrtraj::model::DEFAULT_AGE_SCALE_DAYS,
            init_seed: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub model: ModelSection,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub split: String,
    pub horizons: Vec<String>,
    pub min_cases_per_stratum: usize,
    pub min_strata: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            checkpoint: None,
            data: None,
            split: "test".into(),
            horizons: ["next", "0.5y", "1y", "2y", "3y"].map(String::from).to_vec(),
            min_cases_per_stratum: 6,
            min_strata: 2,
            seed: 0,
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CutoffSection {
    /// CSV with `patient_id,cutoff_age_days`; drawn per patient when unset.
    pub file: Option<PathBuf>,
    pub min_years: f64,
    pub max_years: f64,
}

impl Default for CutoffSection {
    fn default() -> Self {
        CutoffSection {
            file: None,
            min_years: 20.0,
            max_years: 87.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProspectiveConfig {
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub split: String,
    pub cutoffs: CutoffSection,
    pub gap_days: f64,
    pub window_days: f64,
    pub min_cases: usize,
    pub min_cases_per_stratum: usize,
    pub min_strata: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for ProspectiveConfig {
    fn default() -> Self {
        let d = ehrtraj::eval::ProspectiveOptions::default();
        ProspectiveConfig {
            checkpoint: None,
            data: None,
            split: "test".into(),
            cutoffs: CutoffSection::default(),
            gap_days: d.gap_days,
            window_days: d.window_days,
            min_cases: d.min_cases,
            min_cases_per_stratum: d.min_cases_per_stratum,
            min_strata: d.min_strata,
            seed: 0,
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateConfig {
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub split: String,
    pub cutoffs: CutoffSection,
    pub window_days: f64,
    pub n_bins: usize,
    /// Replace observed outcomes by outcomes simulated from the model.
    pub sample_from_model: bool,
    pub min_events: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        CalibrateConfig {
            checkpoint: None,
            data: None,
            split: "test".into(),
            cutoffs: CutoffSection::default(),
            window_days: 365.0,
            n_bins: 10,
            sample_from_model: false,
            min_events: 50,
            seed: 0,
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub report: Option<PathBuf>,
    pub strata: Option<PathBuf>,
    pub grouping: String,
    pub out: Option<PathBuf>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            report: None,
            strata: None,
            grouping: "icd_chapter".into(),
            out: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, "n_patients = 5\ncolour = 3\n").unwrap();
        let err = load::<SynthConfig>(Some(&p)).unwrap_err();
        assert!(matches!(err, CliError::Usage(ref m) if m.contains("colour")), "{err}");

        fs::write(&p, "[train]\nmax_iters = 10\nlearning_rate = 1\n").unwrap();
        assert!(load::<TrainRunConfig>(Some(&p)).is_err());
    }

    #[test]
    fn snapshot_reloads_to_same_config() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = TrainRunConfig::default();
        cfg.train.max_iters = 7;
        cfg.model.context_len = Some(50);
        cfg.data = Some(dir.path().join("data"));
        write_snapshot(dir.path(), "train", &cfg).unwrap();
        let back: TrainRunConfig = load(Some(&dir.path().join(SNAPSHOT_FILE))).unwrap();
        assert_eq!(back, cfg);

        let e = EvaluateConfig::default();
        write_snapshot(dir.path(), "evaluate", &e).unwrap();
        assert_eq!(load::<EvaluateConfig>(Some(&dir.path().join(SNAPSHOT_FILE))).unwrap(), e);
    }
}
