//! Scorers map context positions to per-class scores.

use crate::model::{disease_rate, forward, horizon_risk, ModelState, PositionOutput};
use crate::sequence::{crop_to_window, TokenSequence};
use crate::synth::{true_disease_rate, HazardSpec};
use crate::vocab::{predictable_index, TokenKind, Vocabulary, DEATH};

use super::{EvalError, Horizon};

/// Scores at one context position, indexed by predictable class.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    /// Score used for next-event evaluation.
    pub next_event: Vec<f64>,
    /// Rates in events/day, used for fixed horizons.
    pub rates: Vec<f64>,
}

impl ScoreVector {
    pub fn score(&self, class: usize, horizon: Horizon) -> f64 {
        match horizon {
            Horizon::NextEvent => self.next_event[class],
            Horizon::Days(h) => horizon_risk(self.rates[class], h),
        }
    }
}

pub trait Scorer: Sync {
    /// Score vectors for the given positions of one patient's sequence.
    fn score_positions(&self, seq: &TokenSequence, positions: &[usize]) -> Result<Vec<ScoreVector>, EvalError>;
}

/// Scores from a trained model: next-event probability and per-class rates.
pub struct ModelScorer<'a> {
    pub state: &'a ModelState<f32>,
}

impl ModelScorer<'_> {
    fn vector(out: &PositionOutput) -> ScoreVector {
        ScoreVector {
            next_event: out.probabilities(),
            rates: disease_rate(out),
        }
    }
}

impl Scorer for ModelScorer<'_> {
    fn score_positions(&self, seq: &TokenSequence, positions: &[usize]) -> Result<Vec<ScoreVector>, EvalError> {
        let ctx = self.state.config.context_len;
        if seq.len() <= ctx {
            let outs = forward(self.state, seq)?;
            return Ok(positions.iter().map(|&p| Self::vector(&outs[p])).collect());
        }
        positions
            .iter()
            .map(|&p| {
                let window = crop_to_window(&seq.prefix(p), ctx, false);
                let outs = forward(self.state, &window)?;
                Ok(Self::vector(outs.last().expect("non-empty window")))
            })
            .collect()
    }
}

/// Ground-truth scorer for synthetic cohorts: the true first-occurrence rates
/// given the history up to the position.
pub struct OracleScorer<'a> {
    pub spec: &'a HazardSpec,
    pub vocab: &'a Vocabulary,
}

impl Scorer for OracleScorer<'_> {
    fn score_positions(&self, seq: &TokenSequence, positions: &[usize]) -> Result<Vec<ScoreVector>, EvalError> {
        let k = self.vocab.n_predictable();
        let class_of: Vec<Option<usize>> = self
            .spec
            .diseases
            .iter()
            .map(|d| self.vocab.token_id(&d.category).ok().and_then(predictable_index))
            .collect();
        let sex = seq.sex();
        positions
            .iter()
            .map(|&p| {
                let history: Vec<&str> = (0..=p)
                    .filter(|&i| self.vocab.kind_of(seq.token_ids[i]) == Some(TokenKind::Disease))
                    .filter_map(|i| self.vocab.label_of(seq.token_ids[i]).ok())
                    .collect();
                let age = f64::from(seq.ages[p]).min(self.spec.censor_age_days);
                let true_rates = true_disease_rate(self.spec, &history, sex, age)?;
                let mut rates = vec![0.0; k];
                for (d, r) in true_rates.into_iter().enumerate() {
                    if let Some(c) = class_of[d] {
                        rates[c] = r;
                    }
                }
                if let Some(dc) = predictable_index(DEATH) {
                    rates[dc] = self.spec.death_rate(age)?;
                }
                // ranked by the true rate at every horizon, next event included
                Ok(ScoreVector {
                    next_event: rates.clone(),
                    rates,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{DiseaseHazard, Interaction};

    #[test]
    fn oracle_uses_history_and_maps_classes() {
        let spec = HazardSpec {
            age_bin_edges_days: vec![0.0, 40_000.0],
            censor_age_days: 40_000.0,
            diseases: vec![
                DiseaseHazard {
                    category: "E11".into(),
                    baseline: vec![1e-4],
                    sex_multiplier: None,
                    recurrence_rate: 0.0,
                },
                DiseaseHazard {
                    category: "N18".into(),
                    baseline: vec![1e-4],
                    sex_multiplier: None,
                    recurrence_rate: 0.0,
                },
            ],
            interactions: vec![Interaction {
                trigger: 0,
                target: 1,
                multiplier: 5.0,
                sex: None,
            }],
            death_baseline: vec![2e-4],
            female_fraction: 0.5,
        };
        let vocab = Vocabulary::with_diseases(["E11", "N18"]).unwrap();
        let e11 = vocab.token_id("E11").unwrap();
        let seq = TokenSequence {
            patient_id: "p".into(),
            token_ids: vec![2, 6, 9, e11],
            ages: vec![0, 0, 0, 10_000],
            flags: vec![crate::sequence::Flag::StaticOrNoEvent; 3]
                .into_iter()
                .chain([crate::sequence::Flag::NewOnset])
                .collect(),
            target_mask: vec![false, false, false, true],
        };
        let sc = OracleScorer { spec: &spec, vocab: &vocab };
        let v = sc.score_positions(&seq, &[2, 3]).unwrap();
        let n18 = predictable_index(vocab.token_id("N18").unwrap()).unwrap();
        assert!((v[0].rates[n18] - 1e-4).abs() < 1e-15);
        assert!((v[1].rates[n18] - 5e-4).abs() < 1e-15);
        assert!((v[1].rates[0] - 2e-4).abs() < 1e-15);
        assert_eq!(v[1].next_event, v[1].rates);
    }
}
