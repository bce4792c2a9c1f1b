//! Running scorers over case-control samples, summaries, grouped tables and
//! the CSV layouts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::icd::Chapter;
use crate::model::ModelState;
use crate::record::Sex;
use crate::sequence::TokenSequence;
use crate::vocab::Vocabulary;

use super::auc::stratified_auc;
use super::case_control::{build_case_control, evaluable_classes, PredictionPoint};
use super::scorer::{ModelScorer, ScoreVector, Scorer};
use super::{EvalError, EvalSample, Horizon, Label};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub seed: u64,
    pub min_cases_per_stratum: usize,
    pub min_strata: usize,
    /// Restrict to these predictable classes (default: all evaluable ones).
    pub classes: Option<Vec<usize>>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            seed: 0,
            min_cases_per_stratum: 6,
            min_strata: 2,
            classes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumRow {
    pub disease: String,
    pub horizon: String,
    pub sex: Sex,
    pub age_bin: u8,
    pub n_cases: usize,
    pub n_controls: usize,
    pub auc_model: f64,
    pub auc_baseline: f64,
}

/// One (disease, horizon) line of a report.
#[derive(Debug, Clone, PartialEq)]
pub struct DiseaseResult {
    pub disease: String,
    pub chapter: String,
    pub horizon: String,
    pub n_cases: usize,
    pub n_controls: usize,
    pub n_strata: usize,
    pub auc_model: Option<f64>,
    pub auc_baseline: Option<f64>,
    pub strata: Vec<StratumRow>,
}

impl DiseaseResult {
    pub fn delta(&self) -> Option<f64> {
        Some(self.auc_model? - self.auc_baseline?)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<DiseaseResult>,
}

impl EvalReport {
    pub fn row(&self, disease: &str, horizon: &str) -> Option<&DiseaseResult> {
        self.rows.iter().find(|r| r.disease == disease && r.horizon == horizon)
    }

    pub fn horizons(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for r in &self.rows {
            if !seen.contains(&r.horizon) {
                seen.push(r.horizon.clone());
            }
        }
        seen
    }
}

pub(crate) fn chapter_name(label: &str) -> String {
    Chapter::of(label).map_or_else(|| "Unknown".to_string(), |c| c.name().to_string())
}

/// Scores every distinct (patient, position) once with both scorers.
pub(crate) fn score_points(
    model: &dyn Scorer,
    baseline: &dyn Scorer,
    seqs: &[TokenSequence],
    points: &[&PredictionPoint],
) -> Result<BTreeMap<(usize, usize), (ScoreVector, ScoreVector)>, EvalError> {
    let mut by_patient: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for p in points {
        by_patient.entry(p.patient).or_default().insert(p.position);
    }
    let work: Vec<(usize, Vec<usize>)> = by_patient.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect();
    let scored: Vec<Vec<((usize, usize), (ScoreVector, ScoreVector))>> = work
        .par_iter()
        .map(|(patient, positions)| {
            let seq = &seqs[*patient];
            let m = model.score_positions(seq, positions)?;
            let b = baseline.score_positions(seq, positions)?;
            Ok(positions
                .iter()
                .zip(m.into_iter().zip(b))
                .map(|(&pos, mb)| ((*patient, pos), mb))
                .collect())
        })
        .collect::<Result<_, EvalError>>()?;
    Ok(scored.into_iter().flatten().collect())
}

pub(crate) fn result_row(
    disease: &str,
    horizon_label: &str,
    model: &[EvalSample],
    baseline: &[EvalSample],
    min_cases: usize,
    min_strata: usize,
) -> DiseaseResult {
    let (am, sm) = stratified_auc(model, min_cases, min_strata);
    let (ab, sb) = stratified_auc(baseline, min_cases, min_strata);
    let strata = sm
        .iter()
        .zip(&sb)
        .map(|(m, b)| StratumRow {
            disease: disease.to_string(),
            horizon: horizon_label.to_string(),
            sex: m.stratum.sex,
            age_bin: m.stratum.age_bin,
            n_cases: m.n_cases,
            n_controls: m.n_controls,
            auc_model: m.auc,
            auc_baseline: b.auc,
        })
        .collect();
    DiseaseResult {
        disease: disease.to_string(),
        chapter: chapter_name(disease),
        horizon: horizon_label.to_string(),
        n_cases: model.iter().filter(|s| s.label == Label::Case).count(),
        n_controls: model.iter().filter(|s| s.label == Label::Control).count(),
        n_strata: sm.len(),
        auc_model: am,
        auc_baseline: ab,
        strata,
    }
}

pub(crate) fn to_samples(
    points: &[PredictionPoint],
    seqs: &[TokenSequence],
    disease: &str,
    score: impl Fn(&PredictionPoint) -> f64,
) -> Vec<EvalSample> {
    points
        .iter()
        .map(|p| EvalSample {
            patient_id: seqs[p.patient].patient_id.clone(),
            disease: disease.to_string(),
            label: p.label,
            score: score(p),
            stratum: p.stratum,
            prediction_age_days: p.age_days,
        })
        .collect()
}

/// Evaluates `model` against `baseline` on identical case-control samples for
/// each class and horizon.
pub fn evaluate(
    model: &dyn Scorer,
    baseline: &dyn Scorer,
    seqs: &[TokenSequence],
    vocab: &Vocabulary,
    horizons: &[Horizon],
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let classes: Vec<(usize, String)> = match &opts.classes {
        Some(sel) => evaluable_classes(vocab).into_iter().filter(|(k, _)| sel.contains(k)).collect(),
        None => evaluable_classes(vocab),
    };
    let tasks: Vec<(Horizon, usize, &str)> = horizons
        .iter()
        .flat_map(|&h| classes.iter().map(move |(k, l)| (h, *k, l.as_str())))
        .collect();
    let points: Vec<Vec<PredictionPoint>> = tasks
        .par_iter()
        .map(|&(h, k, _)| build_case_control(seqs, k, h, opts.seed))
        .collect();
    let all: Vec<&PredictionPoint> = points.iter().flatten().collect();
    let scores = score_points(model, baseline, seqs, &all)?;

    let rows = tasks
        .iter()
        .zip(&points)
        .map(|(&(h, k, label), pts)| {
            let hl = h.to_string();
            let m = to_samples(pts, seqs, label, |p| scores[&(p.patient, p.position)].0.score(k, h));
            let b = to_samples(pts, seqs, label, |p| scores[&(p.patient, p.position)].1.score(k, h));
            result_row(label, &hl, &m, &b, opts.min_cases_per_stratum, opts.min_strata)
        })
        .collect();
    Ok(EvalReport { rows })
}

/// Model-versus-baseline report across prediction horizons.
pub fn horizon_sweep(
    state: &ModelState<f32>,
    baseline: &dyn Scorer,
    seqs: &[TokenSequence],
    vocab: &Vocabulary,
    horizons: &[Horizon],
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    evaluate(&ModelScorer { state }, baseline, seqs, vocab, horizons, opts)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonSummary {
    pub horizon: String,
    pub n_diseases: usize,
    pub median_auc_model: f64,
    pub q1_auc_model: f64,
    pub q3_auc_model: f64,
    pub median_auc_baseline: f64,
    pub q1_auc_baseline: f64,
    pub q3_auc_baseline: f64,
    pub median_delta: f64,
    pub frac_model_better: f64,
}

/// Median and IQR per horizon over diseases with a defined AUC.
pub fn summarize(report: &EvalReport) -> Vec<HorizonSummary> {
    report
        .horizons()
        .into_iter()
        .map(|h| {
            let rows: Vec<&DiseaseResult> = report
                .rows
                .iter()
                .filter(|r| r.horizon == h && r.auc_model.is_some() && r.auc_baseline.is_some())
                .collect();
            let m = sorted(rows.iter().filter_map(|r| r.auc_model).collect());
            let b = sorted(rows.iter().filter_map(|r| r.auc_baseline).collect());
            let d = sorted(rows.iter().filter_map(|r| r.delta()).collect());
            let better = rows.iter().filter(|r| r.delta().unwrap_or(0.0) > 0.0).count();
            HorizonSummary {
                horizon: h,
                n_diseases: rows.len(),
                median_auc_model: quantile(&m, 0.5),
                q1_auc_model: quantile(&m, 0.25),
                q3_auc_model: quantile(&m, 0.75),
                median_auc_baseline: quantile(&b, 0.5),
                q1_auc_baseline: quantile(&b, 0.25),
                q3_auc_baseline: quantile(&b, 0.75),
                median_delta: quantile(&d, 0.5),
                frac_model_better: if rows.is_empty() { f64::NAN } else { better as f64 / rows.len() as f64 },
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    IcdChapter,
    Sex,
    AgeGroup,
}

impl FromStr for Grouping {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "icd_chapter" | "chapter" => Ok(Grouping::IcdChapter),
            "sex" => Ok(Grouping::Sex),
            "age_group" | "age" => Ok(Grouping::AgeGroup),
            other => Err(EvalError::UnknownGrouping(other.to_string())),
        }
    }
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grouping::IcdChapter => "icd_chapter",
            Grouping::Sex => "sex",
            Grouping::AgeGroup => "age_group",
        })
    }
}

/// Age groups over the 5-year strata bins.
const AGE_GROUPS: [(&str, u8, u8); 4] = [("20-40", 0, 3), ("40-60", 4, 7), ("60-80", 8, 11), ("80-90", 12, 13)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub grouping: String,
    pub group: String,
    pub horizon: String,
    pub n_diseases: usize,
    pub mean_auc_model: f64,
    pub median_auc_model: f64,
    pub mean_auc_baseline: f64,
    pub median_auc_baseline: f64,
    pub mean_delta: f64,
    pub frac_model_better: f64,
}

fn group_row(grouping: Grouping, group: &str, horizon: &str, pairs: &[(f64, f64)]) -> GroupRow {
    let n = pairs.len() as f64;
    let m = sorted(pairs.iter().map(|p| p.0).collect());
    let b = sorted(pairs.iter().map(|p| p.1).collect());
    GroupRow {
        grouping: grouping.to_string(),
        group: group.to_string(),
        horizon: horizon.to_string(),
        n_diseases: pairs.len(),
        mean_auc_model: m.iter().sum::<f64>() / n,
        median_auc_model: quantile(&m, 0.5),
        mean_auc_baseline: b.iter().sum::<f64>() / n,
        median_auc_baseline: quantile(&b, 0.5),
        mean_delta: pairs.iter().map(|p| p.0 - p.1).sum::<f64>() / n,
        frac_model_better: pairs.iter().filter(|p| p.0 > p.1).count() as f64 / n,
    }
}

/// Per-group means/medians. Chapter grouping uses per-disease AUCs; sex and
/// age grouping recompute each disease's AUC from its strata in the group.
pub fn group_report(report: &EvalReport, grouping: Grouping) -> Vec<GroupRow> {
    let mut out = Vec::new();
    for h in report.horizons() {
        let rows: Vec<&DiseaseResult> = report.rows.iter().filter(|r| r.horizon == h).collect();
        let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        match grouping {
            Grouping::IcdChapter => {
                for r in &rows {
                    if let (Some(m), Some(b)) = (r.auc_model, r.auc_baseline) {
                        groups.entry(r.chapter.clone()).or_default().push((m, b));
                    }
                }
            }
            Grouping::Sex | Grouping::AgeGroup => {
                let keys: Vec<(String, Box<dyn Fn(&StratumRow) -> bool>)> = if grouping == Grouping::Sex {
                    Sex::ALL
                        .iter()
                        .map(|&s| (s.to_string(), Box::new(move |r: &StratumRow| r.sex == s) as Box<dyn Fn(&StratumRow) -> bool>))
                        .collect()
                } else {
                    AGE_GROUPS
                        .iter()
                        .map(|&(name, lo, hi)| {
                            (
                                name.to_string(),
                                Box::new(move |r: &StratumRow| (lo..=hi).contains(&r.age_bin)) as Box<dyn Fn(&StratumRow) -> bool>,
                            )
                        })
                        .collect()
                };
                for r in &rows {
                    if r.auc_model.is_none() {
                        continue;
                    }
                    for (name, keep) in &keys {
                        let st: Vec<&StratumRow> = r.strata.iter().filter(|s| keep(s)).collect();
                        if st.is_empty() {
                            continue;
                        }
                        let n = st.len() as f64;
                        let m = st.iter().map(|s| s.auc_model).sum::<f64>() / n;
                        let b = st.iter().map(|s| s.auc_baseline).sum::<f64>() / n;
                        groups.entry(name.clone()).or_default().push((m, b));
                    }
                }
            }
        }
        for (g, pairs) in groups {
            out.push(group_row(grouping, &g, &h, &pairs));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// CSV

#[derive(Debug, Serialize, Deserialize)]
struct ReportCsvRow {
    disease: String,
    chapter: String,
    horizon: String,
    n_cases: usize,
    n_controls: usize,
    n_strata: usize,
    auc_model: Option<f64>,
    auc_baseline: Option<f64>,
    delta: Option<f64>,
}

fn write_csv<S: Serialize>(rows: impl IntoIterator<Item = S>, header_if_empty: &[&str]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(Vec::new());
    let mut any = false;
    for r in rows {
        w.serialize(r).expect("in-memory csv");
        any = true;
    }
    let mut bytes = w.into_inner().expect("in-memory csv");
    if !any {
        bytes = format!("{}\n", header_if_empty.join(",")).into_bytes();
    }
    String::from_utf8(bytes).expect("utf-8 csv")
}

pub fn report_csv(report: &EvalReport) -> String {
    write_csv(
        report.rows.iter().map(|r| ReportCsvRow {
            disease: r.disease.clone(),
            chapter: r.chapter.clone(),
            horizon: r.horizon.clone(),
            n_cases: r.n_cases,
            n_controls: r.n_controls,
            n_strata: r.n_strata,
            auc_model: r.auc_model,
            auc_baseline: r.auc_baseline,
            delta: r.delta(),
        }),
        &["disease", "chapter", "horizon", "n_cases", "n_controls", "n_strata", "auc_model", "auc_baseline", "delta"],
    )
}

pub fn strata_csv(report: &EvalReport) -> String {
    write_csv(
        report.rows.iter().flat_map(|r| r.strata.iter().cloned()),
        &["disease", "horizon", "sex", "age_bin", "n_cases", "n_controls", "auc_model", "auc_baseline"],
    )
}

pub fn grouped_csv(rows: &[GroupRow]) -> String {
    write_csv(
        rows.iter().cloned(),
        &[
            "grouping",
            "group",
            "horizon",
            "n_diseases",
            "mean_auc_model",
            "median_auc_model",
            "mean_auc_baseline",
            "median_auc_baseline",
            "mean_delta",
            "frac_model_better",
        ],
    )
}

#[derive(Debug, Serialize)]
struct LongRow<'a> {
    disease: &'a str,
    chapter: &'a str,
    horizon: &'a str,
    metric: &'static str,
    value: f64,
}

/// One row per (disease, horizon, metric) for plotting.
pub fn long_format_csv(report: &EvalReport) -> String {
    let mut rows = Vec::new();
    for r in &report.rows {
        let metrics: [(&'static str, Option<f64>); 5] = [
            ("auc_model", r.auc_model),
            ("auc_baseline", r.auc_baseline),
            ("delta", r.delta()),
            ("n_cases", Some(r.n_cases as f64)),
            ("n_controls", Some(r.n_controls as f64)),
        ];
        for (metric, v) in metrics {
            if let Some(value) = v {
                rows.push(LongRow {
                    disease: &r.disease,
                    chapter: &r.chapter,
                    horizon: &r.horizon,
                    metric,
                    value,
                });
            }
        }
    }
    write_csv(rows, &["disease", "chapter", "horizon", "metric", "value"])
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, EvalError> {
    let parse = |line: usize, msg: String| EvalError::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| parse(0, e.to_string()))?;
    let mut out = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        out.push(rec.map_err(|e: csv::Error| parse(i + 2, e.to_string()))?);
    }
    Ok(out)
}

/// Reads `report.csv` and, if given, the matching `strata.csv`.
pub fn read_report_csv(report: &Path, strata: Option<&Path>) -> Result<EvalReport, EvalError> {
    let rows: Vec<ReportCsvRow> = read_rows(report)?;
    let strata_rows: Vec<StratumRow> = match strata {
        Some(p) => read_strata_csv(p)?,
        None => Vec::new(),
    };
    Ok(EvalReport {
        rows: rows
            .into_iter()
            .map(|r| DiseaseResult {
                strata: strata_rows
                    .iter()
                    .filter(|s| s.disease == r.disease && s.horizon == r.horizon)
                    .cloned()
                    .collect(),
                disease: r.disease,
                chapter: r.chapter,
                horizon: r.horizon,
                n_cases: r.n_cases,
                n_controls: r.n_controls,
                n_strata: r.n_strata,
                auc_model: r.auc_model,
                auc_baseline: r.auc_baseline,
            })
            .collect(),
    })
}

pub fn read_strata_csv(path: &Path) -> Result<Vec<StratumRow>, EvalError> {
    read_rows(path)
}
