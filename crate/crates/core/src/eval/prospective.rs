//! Prospective evaluation: context up to a per-patient cutoff age, a gap
//! period that is ignored, then a target window.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed::{derive_seed, rng_from_seed};
use crate::sequence::TokenSequence;
use crate::vocab::{token_of_predictable, Vocabulary, DEATH, PADDING};
use crate::DAYS_PER_YEAR;

use super::case_control::{evaluable_classes, PredictionPoint};
use super::report::{result_row, score_points, EvalReport};
use super::scorer::Scorer;
use super::{EvalError, EvalSample, Label, Stratum};

/// Cutoff age in days per patient id.
pub type CutoffMap = BTreeMap<String, u32>;

#[derive(Debug, Clone, PartialEq)]
pub struct ProspectiveOptions {
    pub gap_days: f64,
    pub window_days: f64,
    /// Minimum number of cases over all strata.
    pub min_cases: usize,
    pub min_cases_per_stratum: usize,
    pub min_strata: usize,
    pub classes: Option<Vec<usize>>,
}

impl Default for ProspectiveOptions {
    fn default() -> Self {
        ProspectiveOptions {
            gap_days: 365.0,
            window_days: 365.0,
            min_cases: 25,
            min_cases_per_stratum: 1,
            min_strata: 1,
            classes: None,
        }
    }
}

/// A patient's history truncated at the cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct CutoffContext {
    pub patient: usize,
    pub cutoff: u32,
    /// Tokens with age up to the cutoff, ending in a token at the cutoff age.
    pub context: TokenSequence,
    pub stratum: Option<Stratum>,
}

/// Context at `cutoff`, or `None` if the patient died at or before it.
pub fn cutoff_context(seq: &TokenSequence, cutoff: u32) -> Option<TokenSequence> {
    let seq = seq.without_padding();
    let died = seq
        .token_ids
        .iter()
        .zip(&seq.ages)
        .any(|(&t, &a)| t == DEATH && a <= cutoff);
    if died || seq.is_empty() {
        return None;
    }
    let last = seq.ages.iter().rposition(|&a| a <= cutoff).unwrap_or(0);
    let mut ctx = seq.prefix(last);
    ctx.extend_to_age(cutoff);
    Some(ctx)
}

/// Contexts for every patient with a cutoff who is alive at it.
pub fn prospective_points(seqs: &[TokenSequence], cutoffs: &CutoffMap) -> Vec<CutoffContext> {
    seqs.iter()
        .enumerate()
        .filter_map(|(i, s)| {
            let &cutoff = cutoffs.get(&s.patient_id)?;
            let context = cutoff_context(s, cutoff)?;
            Some(CutoffContext {
                patient: i,
                cutoff,
                stratum: Stratum::of(s.sex(), f64::from(cutoff)),
                context,
            })
        })
        .collect()
}

/// Age of the first occurrence of `token`, if any.
pub(crate) fn first_age(seq: &TokenSequence, token: u32) -> Option<u32> {
    seq.token_ids
        .iter()
        .zip(&seq.ages)
        .find(|(&t, _)| t == token && t != PADDING)
        .map(|(_, &a)| a)
}

/// Case if the first occurrence falls inside the target window, excluded if
/// it falls at or before the cutoff or inside the gap, control otherwise.
pub fn prospective_label(seq: &TokenSequence, cutoff: u32, token: u32, gap_days: f64, window_days: f64) -> Option<Label> {
    let c = f64::from(cutoff);
    match first_age(seq, token).map(f64::from) {
        Some(f) if f <= c + gap_days => None,
        Some(f) if f <= c + gap_days + window_days => Some(Label::Case),
        _ => Some(Label::Control),
    }
}

/// Runs the prospective protocol for both scorers on identical samples. Rows
/// are emitted only for diseases with at least `min_cases` cases and at least
/// one control.
pub fn prospective_eval(
    model: &dyn Scorer,
    baseline: &dyn Scorer,
    seqs: &[TokenSequence],
    vocab: &Vocabulary,
    cutoffs: &CutoffMap,
    opts: &ProspectiveOptions,
) -> Result<EvalReport, EvalError> {
    let contexts: Vec<CutoffContext> = prospective_points(seqs, cutoffs)
        .into_iter()
        .filter(|c| c.stratum.is_some())
        .collect();
    let ctx_seqs: Vec<TokenSequence> = contexts.iter().map(|c| c.context.clone()).collect();
    let points: Vec<PredictionPoint> = contexts
        .iter()
        .enumerate()
        .map(|(j, c)| PredictionPoint {
            patient: j,
            position: c.context.len() - 1,
            age_days: c.cutoff,
            stratum: c.stratum.expect("filtered"),
            label: Label::Control,
        })
        .collect();
    let refs: Vec<&PredictionPoint> = points.iter().collect();
    let scores = score_points(model, baseline, &ctx_seqs, &refs)?;
    let horizon = super::Horizon::Days(opts.gap_days + opts.window_days);
    let horizon_label = "prospective";

    let mut rows = Vec::new();
    for (k, label) in evaluable_classes(vocab) {
        if opts.classes.as_ref().is_some_and(|sel| !sel.contains(&k)) {
            continue;
        }
        let token = token_of_predictable(k);
        let mut m = Vec::new();
        let mut b = Vec::new();
        for (c, p) in contexts.iter().zip(&points) {
            let Some(lab) = prospective_label(&seqs[c.patient], c.cutoff, token, opts.gap_days, opts.window_days) else {
                continue;
            };
            let (sm, sb) = &scores[&(p.patient, p.position)];
            for (out, s) in [(&mut m, sm), (&mut b, sb)] {
                out.push(EvalSample {
                    patient_id: c.context.patient_id.clone(),
                    disease: label.clone(),
                    label: lab,
                    score: s.score(k, horizon),
                    stratum: p.stratum,
                    prediction_age_days: c.cutoff,
                });
            }
        }
        let n_cases = m.iter().filter(|s| s.label == Label::Case).count();
        if n_cases < opts.min_cases || n_cases == m.len() {
            continue;
        }
        rows.push(result_row(&label, horizon_label, &m, &b, opts.min_cases_per_stratum, opts.min_strata));
    }
    Ok(EvalReport { rows })
}

/// One uniform cutoff age per patient between `lo_years` and `hi_years`,
/// seeded by patient id.
pub fn synthetic_cutoffs<'a>(
    patient_ids: impl IntoIterator<Item = &'a str>,
    seed: u64,
    lo_years: f64,
    hi_years: f64,
) -> CutoffMap {
    let lo = (lo_years * DAYS_PER_YEAR).round() as u32;
    let hi = (hi_years * DAYS_PER_YEAR).round() as u32;
    patient_ids
        .into_iter()
        .map(|id| {
            let mut rng = rng_from_seed(derive_seed(seed, &format!("cutoff/{id}")));
            (id.to_string(), rng.random_range(lo..=hi))
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct CutoffRow {
    patient_id: String,
    cutoff_age_days: u32,
}

pub fn cutoffs_csv(map: &CutoffMap) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["patient_id", "cutoff_age_days"]).expect("in-memory csv");
    for (id, &age) in map {
        w.write_record([id.as_str(), &age.to_string()]).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

pub fn parse_cutoffs_csv(text: &str, origin: &str) -> Result<CutoffMap, EvalError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut map = CutoffMap::new();
    for (i, row) in r.deserialize::<CutoffRow>().enumerate() {
        let row = row.map_err(|e| EvalError::Parse {
            path: origin.to_string(),
            line: i + 2,
            msg: e.to_string(),
        })?;
        map.insert(row.patient_id, row.cutoff_age_days);
    }
    Ok(map)
}
