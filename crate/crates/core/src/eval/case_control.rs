//! Prediction points for cases and controls of one disease.

use crate::icd::Chapter;
use crate::seed::derive_seed;
use crate::sequence::TokenSequence;
use crate::vocab::{token_of_predictable, Vocabulary, DEATH, PADDING};

use rand::Rng;

use super::{Horizon, Label, Stratum};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictionPoint {
    /// Index into the evaluated cohort.
    pub patient: usize,
    pub position: usize,
    pub age_days: u32,
    pub stratum: Stratum,
    pub label: Label,
}

/// Predictable classes that enter evaluation (death included), with labels.
pub fn evaluable_classes(vocab: &Vocabulary) -> Vec<(usize, String)> {
    (0..vocab.n_predictable())
        .filter_map(|k| {
            let label = vocab.label_of(token_of_predictable(k)).ok()?;
            Chapter::of(label)
                .filter(|c| c.is_evaluable())
                .map(|_| (k, label.to_string()))
        })
        .collect()
}

fn first_position(seq: &TokenSequence, token: u32) -> Option<usize> {
    seq.token_ids.iter().position(|&t| t == token)
}

fn point(seq: &TokenSequence, patient: usize, position: usize, label: Label) -> Option<PredictionPoint> {
    let age = seq.ages[position];
    let stratum = Stratum::of(seq.sex(), f64::from(age))?;
    Some(PredictionPoint {
        patient,
        position,
        age_days: age,
        stratum,
        label,
    })
}

/// Case point before the first occurrence at `f`, or `None` when no context
/// position satisfies the horizon and age range.
fn case_point(seq: &TokenSequence, patient: usize, f: usize, horizon: Horizon) -> Option<PredictionPoint> {
    let pos = match horizon {
        Horizon::NextEvent => (0..f).rev().find(|&p| seq.token_ids[p] != PADDING)?,
        Horizon::Days(h) => {
            let limit = f64::from(seq.ages[f]) - h;
            (0..f)
                .rev()
                .find(|&p| seq.token_ids[p] != PADDING && f64::from(seq.ages[p]) <= limit)?
        }
    };
    point(seq, patient, pos, Label::Case)
}

/// Candidate control positions: in age range, not padding, not death.
fn control_candidates(seq: &TokenSequence) -> Vec<usize> {
    (0..seq.len())
        .filter(|&p| {
            let t = seq.token_ids[p];
            t != PADDING && t != DEATH && super::in_eval_range(f64::from(seq.ages[p]))
        })
        .collect()
}

/// Cases: patients with a first occurrence of class `class`; controls:
/// patients who never have it, with one seeded uniform position each.
pub fn build_case_control(seqs: &[TokenSequence], class: usize, horizon: Horizon, seed: u64) -> Vec<PredictionPoint> {
    let token = token_of_predictable(class);
    let mut out = Vec::new();
    for (i, seq) in seqs.iter().enumerate() {
        match first_position(seq, token) {
            Some(f) => {
                if let Some(p) = case_point(seq, i, f, horizon) {
                    out.push(p);
                }
            }
            None => {
                let cand = control_candidates(seq);
                if cand.is_empty() {
                    continue;
                }
                let mut rng = crate::seed::rng_from_seed(derive_seed(seed, &format!("control/{token}/{}", seq.patient_id)));
                let pos = cand[rng.random_range(0..cand.len())];
                if let Some(p) = point(seq, i, pos, Label::Control) {
                    out.push(p);
                }
            }
        }
    }
    out
}
