//! Predicted versus observed incidence over a window after a cutoff.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{forward_many, horizon_risk, ModelState};
use crate::seed::{derive_seed, rng_from_seed};
use crate::sequence::{crop_to_window, Flag, TokenSequence};
use crate::vocab::{token_of_predictable, Vocabulary, DEATH};

use super::case_control::evaluable_classes;
use super::prospective::{first_age, prospective_points, CutoffContext, CutoffMap};
use super::scorer::Scorer;
use super::EvalError;

/// Window risk for one at-risk (patient, class) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskPrediction {
    /// Index into the cohort.
    pub patient: usize,
    pub class: usize,
    pub rate_per_day: f64,
    pub risk: f64,
    /// First occurrence within (cutoff, cutoff + window].
    pub observed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub disease: String,
    pub predicted_incidence: f64,
    pub observed_incidence: f64,
    pub n_patients: usize,
    pub n_events: usize,
    /// Both incidences are zero.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub disease: String,
    pub bin: usize,
    pub predicted_incidence: f64,
    pub observed_incidence: f64,
    pub n_patients: usize,
}

/// Window risks from `scorer` at each patient's cutoff, for the classes the
/// patient has not had by then.
pub fn risk_predictions(
    scorer: &dyn Scorer,
    seqs: &[TokenSequence],
    vocab: &Vocabulary,
    cutoffs: &CutoffMap,
    window_days: f64,
) -> Result<Vec<RiskPrediction>, EvalError> {
    let classes = evaluable_classes(vocab);
    let contexts = prospective_points(seqs, cutoffs);
    let per_patient: Vec<Vec<RiskPrediction>> = contexts
        .par_iter()
        .map(|c| {
            let sv = scorer
                .score_positions(&c.context, &[c.context.len() - 1])?
                .pop()
                .expect("one position");
            let seq = &seqs[c.patient];
            let cut = f64::from(c.cutoff);
            Ok(classes
                .iter()
                .filter_map(|&(k, _)| {
                    let first = first_age(seq, token_of_predictable(k)).map(f64::from);
                    if first.is_some_and(|f| f <= cut) {
                        return None;
                    }
                    let rate = sv.rates[k];
                    Some(RiskPrediction {
                        patient: c.patient,
                        class: k,
                        rate_per_day: rate,
                        risk: horizon_risk(rate, window_days),
                        observed: first.is_some_and(|f| f <= cut + window_days),
                    })
                })
                .collect())
        })
        .collect::<Result<_, EvalError>>()?;
    Ok(per_patient.into_iter().flatten().collect())
}

/// Mean predicted window risk and observed incidence per disease, in class
/// order.
pub fn calibration(preds: &[RiskPrediction], vocab: &Vocabulary) -> Vec<CalibrationPoint> {
    let mut acc: BTreeMap<usize, (f64, usize, usize)> = BTreeMap::new();
    for p in preds {
        let e = acc.entry(p.class).or_default();
        e.0 += p.risk;
        e.1 += 1;
        e.2 += usize::from(p.observed);
    }
    acc.into_iter()
        .map(|(k, (risk, n, events))| {
            let predicted = risk / n as f64;
            let observed = events as f64 / n as f64;
            CalibrationPoint {
                disease: class_label(vocab, k),
                predicted_incidence: predicted,
                observed_incidence: observed,
                n_patients: n,
                n_events: events,
                degenerate: predicted == 0.0 && observed == 0.0,
            }
        })
        .collect()
}

fn class_label(vocab: &Vocabulary, k: usize) -> String {
    vocab
        .label_of(token_of_predictable(k))
        .map_or_else(|_| format!("class{k}"), str::to_string)
}

/// Per-disease calibration in `n_bins` equal-count bins of predicted risk.
pub fn calibration_bins(preds: &[RiskPrediction], vocab: &Vocabulary, n_bins: usize) -> Vec<CalibrationBin> {
    let n_bins = n_bins.max(1);
    let mut by_class: BTreeMap<usize, Vec<&RiskPrediction>> = BTreeMap::new();
    for p in preds {
        by_class.entry(p.class).or_default().push(p);
    }
    let mut out = Vec::new();
    for (k, mut ps) in by_class {
        ps.sort_by(|a, b| a.risk.total_cmp(&b.risk).then(a.patient.cmp(&b.patient)));
        let n = ps.len();
        for bin in 0..n_bins.min(n) {
            let chunk = &ps[bin * n / n_bins.min(n)..(bin + 1) * n / n_bins.min(n)];
            let m = chunk.len() as f64;
            out.push(CalibrationBin {
                disease: class_label(vocab, k),
                bin,
                predicted_incidence: chunk.iter().map(|p| p.risk).sum::<f64>() / m,
                observed_incidence: chunk.iter().filter(|p| p.observed).count() as f64 / m,
                n_patients: chunk.len(),
            });
        }
    }
    out
}

/// OLS slope of ln(observed) on ln(predicted) over diseases with at least
/// `min_events` events and positive incidences. `None` with fewer than two
/// such diseases or no spread in predicted incidence.
pub fn log_log_slope(points: &[CalibrationPoint], min_events: usize) -> Option<f64> {
    let xy: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.n_events >= min_events && p.predicted_incidence > 0.0 && p.observed_incidence > 0.0)
        .map(|p| (p.predicted_incidence.ln(), p.observed_incidence.ln()))
        .collect();
    if xy.len() < 2 {
        return None;
    }
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

const MAX_SAMPLED_EVENTS: usize = 64;
const SAMPLE_CHUNK: usize = 256;

/// Replaces `observed` by outcomes simulated from the model itself: starting
/// at each patient's cutoff context, waiting times are drawn from the total
/// rate and events from the next-event distribution until the window ends or
/// death is drawn.
pub fn sample_outcomes(
    state: &ModelState<f32>,
    seqs: &[TokenSequence],
    cutoffs: &CutoffMap,
    preds: &[RiskPrediction],
    window_days: f64,
    seed: u64,
) -> Result<Vec<RiskPrediction>, EvalError> {
    let wanted: std::collections::BTreeSet<usize> = preds.iter().map(|p| p.patient).collect();
    let contexts: Vec<CutoffContext> = prospective_points(seqs, cutoffs)
        .into_iter()
        .filter(|c| wanted.contains(&c.patient))
        .collect();
    let ctx_len = state.config.context_len;

    let sampled: Vec<Vec<(usize, Vec<usize>)>> = contexts
        .par_chunks(SAMPLE_CHUNK)
        .map(|chunk| {
            let mut sims: Vec<Sim> = chunk
                .iter()
                .map(|c| Sim {
                    patient: c.patient,
                    cutoff: f64::from(c.cutoff),
                    elapsed: 0.0,
                    ctx: c.context.clone(),
                    rng: rng_from_seed(derive_seed(seed, &format!("outcomes/{}", c.context.patient_id))),
                    events: Vec::new(),
                    done: false,
                })
                .collect();
            for _ in 0..MAX_SAMPLED_EVENTS {
                let active: Vec<usize> = (0..sims.len()).filter(|&i| !sims[i].done).collect();
                if active.is_empty() {
                    break;
                }
                let windows: Vec<TokenSequence> = active
                    .iter()
                    .map(|&i| {
                        let c = &sims[i].ctx;
                        if c.len() > ctx_len {
                            crop_to_window(c, ctx_len, false)
                        } else {
                            c.clone()
                        }
                    })
                    .collect();
                let refs: Vec<&TokenSequence> = windows.iter().collect();
                let outs = forward_many(state, &refs)?;
                for (&i, out) in active.iter().zip(outs) {
                    sims[i].step(out.last().expect("non-empty context"), window_days);
                }
            }
            Ok(sims.into_iter().map(|s| (s.patient, s.events)).collect())
        })
        .collect::<Result<_, EvalError>>()?;
    let events: BTreeMap<usize, Vec<usize>> = sampled.into_iter().flatten().collect();

    Ok(preds
        .iter()
        .map(|p| RiskPrediction {
            observed: events.get(&p.patient).is_some_and(|e| e.contains(&p.class)),
            ..p.clone()
        })
        .collect())
}

struct Sim {
    patient: usize,
    cutoff: f64,
    elapsed: f64,
    ctx: TokenSequence,
    rng: rand_chacha::ChaCha8Rng,
    events: Vec<usize>,
    done: bool,
}

impl Sim {
    fn step(&mut self, out: &crate::model::PositionOutput, window_days: f64) {
        let total = out.total_rate();
        if total <= 0.0 || !total.is_finite() {
            self.done = true;
            return;
        }
        let dt = Exp::new(total).expect("positive rate").sample(&mut self.rng);
        self.elapsed += dt;
        if self.elapsed > window_days {
            self.done = true;
            return;
        }
        let probs = out.probabilities();
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        let mut class = probs.len() - 1;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                class = k;
                break;
            }
        }
        let token = token_of_predictable(class);
        let seen = self.ctx.token_ids.contains(&token);
        let age = (self.cutoff + self.elapsed).round() as u32;
        let age = age.max(*self.ctx.ages.last().expect("non-empty"));
        self.ctx.token_ids.push(token);
        self.ctx.ages.push(age);
        self.ctx.flags.push(if seen { Flag::Recurrent } else { Flag::NewOnset });
        self.ctx.target_mask.push(true);
        if !self.events.contains(&class) {
            self.events.push(class);
        }
        if token == DEATH {
            self.done = true;
        }
    }
}

pub fn calibration_csv(points: &[CalibrationPoint]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["disease", "predicted_incidence", "observed_incidence", "n_patients"])
        .expect("in-memory csv");
    for p in points {
        w.write_record([
            p.disease.clone(),
            p.predicted_incidence.to_string(),
            p.observed_incidence.to_string(),
            p.n_patients.to_string(),
        ])
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

pub fn calibration_bins_csv(bins: &[CalibrationBin]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["disease", "bin", "predicted_incidence", "observed_incidence", "n_patients"])
        .expect("in-memory csv");
    for b in bins {
        w.serialize((&b.disease, b.bin, b.predicted_incidence, b.observed_incidence, b.n_patients))
            .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}
