//! Evaluation protocol: case-control sampling, age/sex-stratified AUC,
//! the demographic baseline, horizon sweeps, prospective evaluation,
//! calibration and grouped summaries.

mod auc;
mod baseline;
mod calibration;
mod case_control;
mod prospective;
mod report;
mod scorer;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::ModelError;
use crate::record::Sex;
use crate::synth::SynthError;
use crate::DAYS_PER_YEAR;

pub use auc::{auc, auc_brute_force, stratified_auc, StratumAuc};
pub use baseline::{demographic_baseline, DemographicBaseline};
pub use calibration::{
    calibration, calibration_bins, calibration_bins_csv, calibration_csv, log_log_slope, risk_predictions, sample_outcomes,
    CalibrationBin, CalibrationPoint, RiskPrediction,
};
pub use case_control::{build_case_control, evaluable_classes, PredictionPoint};
pub use prospective::{
    cutoff_context, cutoffs_csv, parse_cutoffs_csv, prospective_eval, prospective_label, prospective_points,
    synthetic_cutoffs, CutoffContext, CutoffMap, ProspectiveOptions,
};
pub use report::{
    evaluate, group_report, grouped_csv, horizon_sweep, long_format_csv, read_report_csv, read_strata_csv,
    report_csv, strata_csv, summarize, DiseaseResult, EvalOptions, EvalReport, GroupRow, Grouping,
    HorizonSummary, StratumRow,
};
pub use scorer::{ModelScorer, OracleScorer, ScoreVector, Scorer};

pub const MIN_EVAL_AGE_DAYS: f64 = 20.0 * DAYS_PER_YEAR;
pub const MAX_EVAL_AGE_DAYS: f64 = 90.0 * DAYS_PER_YEAR;
pub const AGE_BIN_YEARS: f64 = 5.0;
pub const N_AGE_BINS: usize = 14;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("AUC needs at least one case and one control")]
    EmptyGroup,
    #[error("unknown grouping {0:?} (expected icd_chapter, sex or age_group)")]
    UnknownGrouping(String),
    #[error("invalid horizon {0:?}")]
    InvalidHorizon(String),
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

/// Lead time between the prediction point and the outcome.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub enum Horizon {
    NextEvent,
    Days(f64),
}

impl Horizon {
    pub fn standard() -> Vec<Horizon> {
        ["next", "0.5y", "1y", "2y", "3y"]
            .iter()
            .map(|s| s.parse().expect("standard horizons parse"))
            .collect()
    }

    pub fn days(self) -> f64 {
        match self {
            Horizon::NextEvent => 0.0,
            Horizon::Days(d) => d,
        }
    }
}

impl fmt::Display for Horizon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Horizon::NextEvent => f.write_str("next_event"),
            Horizon::Days(d) => {
                let y = d / DAYS_PER_YEAR;
                if (y * 10.0).fract().abs() < 1e-9 {
                    write!(f, "{y}y")
                } else {
                    write!(f, "{d}d")
                }
            }
        }
    }
}

impl FromStr for Horizon {
    type Err = EvalError;

    /// Accepts `next`/`next_event`, `<years>y` and `<days>d`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let bad = || EvalError::InvalidHorizon(s.to_string());
        if t == "next" || t == "next_event" {
            return Ok(Horizon::NextEvent);
        }
        let (num, mult) = if let Some(y) = t.strip_suffix('y') {
            (y, DAYS_PER_YEAR)
        } else if let Some(d) = t.strip_suffix('d') {
            (d, 1.0)
        } else {
            return Err(bad());
        };
        let v: f64 = num.parse().map_err(|_| bad())?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(bad());
        }
        Ok(Horizon::Days(v * mult))
    }
}

/// Sex by 5-year age bin over [20, 90] years; age 90 falls in the last bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Stratum {
    pub sex: Sex,
    pub age_bin: u8,
}

impl Stratum {
    pub fn of(sex: Sex, age_days: f64) -> Option<Stratum> {
        if !in_eval_range(age_days) {
            return None;
        }
        let years = age_days / DAYS_PER_YEAR;
        let bin = (((years - 20.0) / AGE_BIN_YEARS).floor() as usize).min(N_AGE_BINS - 1);
        Some(Stratum {
            sex,
            age_bin: bin as u8,
        })
    }

    pub fn age_range_label(self) -> String {
        let lo = 20 + 5 * u32::from(self.age_bin);
        format!("{lo}-{}", lo + 5)
    }
}

pub fn in_eval_range(age_days: f64) -> bool {
    (MIN_EVAL_AGE_DAYS..=MAX_EVAL_AGE_DAYS).contains(&age_days)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Case,
    Control,
}

/// A scored prediction point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSample {
    pub patient_id: String,
    pub disease: String,
    pub label: Label,
    pub score: f64,
    pub stratum: Stratum,
    pub prediction_age_days: u32,
}
