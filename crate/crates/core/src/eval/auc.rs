//! Mann–Whitney AUC and its stratified average.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EvalError, EvalSample, Label, Stratum};

/// Twice the Mann–Whitney count: 2·wins + ties.
fn doubled_wins(cases: &[f64], controls: &[f64]) -> u64 {
    let mut sorted = controls.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    cases
        .iter()
        .map(|&c| {
            let below = sorted.partition_point(|&x| x < c) as u64;
            let not_above = sorted.partition_point(|&x| x <= c) as u64;
            2 * below + (not_above - below)
        })
        .sum()
}

/// `(wins + 0.5·ties) / (n_cases · n_controls)`.
pub fn auc(case_scores: &[f64], control_scores: &[f64]) -> Result<f64, EvalError> {
    if case_scores.is_empty() || control_scores.is_empty() {
        return Err(EvalError::EmptyGroup);
    }
    let w = doubled_wins(case_scores, control_scores);
    Ok(w as f64 / (2 * case_scores.len() as u64 * control_scores.len() as u64) as f64)
}

/// O(n²) pair counting, kept as a reference implementation.
pub fn auc_brute_force(case_scores: &[f64], control_scores: &[f64]) -> Result<f64, EvalError> {
    if case_scores.is_empty() || control_scores.is_empty() {
        return Err(EvalError::EmptyGroup);
    }
    let mut w2 = 0u64;
    for &c in case_scores {
        for &k in control_scores {
            if c > k {
                w2 += 2;
            } else if c == k {
                w2 += 1;
            }
        }
    }
    Ok(w2 as f64 / (2 * case_scores.len() as u64 * control_scores.len() as u64) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumAuc {
    pub stratum: Stratum,
    pub n_cases: usize,
    pub n_controls: usize,
    pub auc: f64,
}

/// Per-stratum AUCs for strata with at least `min_cases` cases and one
/// control, and their unweighted mean (`None` when fewer than `min_strata`
/// strata qualify).
pub fn stratified_auc(samples: &[EvalSample], min_cases: usize, min_strata: usize) -> (Option<f64>, Vec<StratumAuc>) {
    let mut groups: BTreeMap<Stratum, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for s in samples {
        let g = groups.entry(s.stratum).or_default();
        match s.label {
            Label::Case => g.0.push(s.score),
            Label::Control => g.1.push(s.score),
        }
    }
    let valid: Vec<StratumAuc> = groups
        .into_iter()
        .filter(|(_, (cases, controls))| cases.len() >= min_cases.max(1) && !controls.is_empty())
        .map(|(stratum, (cases, controls))| StratumAuc {
            stratum,
            n_cases: cases.len(),
            n_controls: controls.len(),
            auc: auc(&cases, &controls).expect("non-empty groups"),
        })
        .collect();
    if valid.is_empty() || valid.len() < min_strata {
        return (None, valid);
    }
    let mean = valid.iter().map(|v| v.auc).sum::<f64>() / valid.len() as f64;
    (Some(mean), valid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::Sex;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(auc(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5], &[0.5]).unwrap(), 0.5);
        assert_eq!(auc(&[0.8, 0.4], &[0.6, 0.2]).unwrap(), 0.75);
        assert!(matches!(auc(&[], &[0.1]), Err(EvalError::EmptyGroup)));
    }

    fn sample(label: Label, score: f64, bin: u8) -> EvalSample {
        EvalSample {
            patient_id: String::new(),
            disease: "I50".into(),
            label,
            score,
            stratum: Stratum { sex: Sex::F, age_bin: bin },
            prediction_age_days: 0,
        }
    }

    #[test]
    fn stratified_rules() {
        let mut s = Vec::new();
        for i in 0..6 {
            s.push(sample(Label::Case, if i < 5 { 1.0 } else { 0.0 }, 0));
        }
        s.push(sample(Label::Control, 0.5, 0));
        for i in 0..6 {
            s.push(sample(Label::Case, if i < 3 { 1.0 } else { 0.0 }, 1));
        }
        s.push(sample(Label::Control, 0.5, 1));
        // six cases against one control: AUC 5/6 in bin 0, 3/6 in bin 1
        let (m, v) = stratified_auc(&s, 6, 2);
        assert_eq!(v.len(), 2);
        assert!((m.unwrap() - (5.0 / 6.0 + 0.5) / 2.0).abs() < 1e-12);

        // a five-case stratum is dropped, leaving one valid stratum
        let mut t = s.clone();
        t.remove(0);
        let (m, v) = stratified_auc(&t, 6, 2);
        assert_eq!(v.len(), 1);
        assert_eq!(m, None);
    }

    proptest! {
        #[test]
        fn matches_pair_counting(
            cases in prop::collection::vec(0u8..6, 1..30),
            controls in prop::collection::vec(0u8..6, 1..30),
        ) {
            let c: Vec<f64> = cases.iter().map(|&x| f64::from(x) / 5.0).collect();
            let k: Vec<f64> = controls.iter().map(|&x| f64::from(x) / 5.0).collect();
            prop_assert_eq!(auc(&c, &k).unwrap(), auc_brute_force(&c, &k).unwrap());
        }

        #[test]
        fn invariant_under_monotone_transform(
            scores in prop::collection::vec((0.0f64..1.0, any::<bool>(), 0u8..3), 1..80),
        ) {
            let a: Vec<EvalSample> = scores.iter()
                .map(|&(x, c, b)| sample(if c { Label::Case } else { Label::Control }, x, b))
                .collect();
            let b: Vec<EvalSample> = a.iter()
                .map(|s| EvalSample { score: (3.0 * s.score).exp() - 7.0, ..s.clone() })
                .collect();
            prop_assert_eq!(stratified_auc(&a, 1, 1).0, stratified_auc(&b, 1, 1).0);
        }
    }
}
