//! Patient records to model-ready token sequences.
//!
//! Every sequence starts with three static covariate tokens at age 0 (sex,
//! smoking, alcohol), followed by diagnosis tokens in age order, optional
//! no-event tokens and, when the patient died, a terminal death token.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::icd::Chapter;
use crate::record::{PatientRecord, Sex};
use crate::seed::{derive_seed, rng_from_seed};
use crate::vocab::{TokenId, TokenKind, Vocabulary, DEATH, NO_EVENT, PADDING};

pub const N_STATIC: usize = 3;
pub const FIRST_OCC_CONTEXT: usize = 93;
pub const ALL_OCC_CONTEXT: usize = 445;
pub const DEFAULT_NO_EVENT_INTERVAL_DAYS: f64 = 365.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "firstOcc")]
    FirstOcc,
    #[serde(rename = "allOcc")]
    AllOcc,
}

impl Mode {
    pub fn default_context_len(self) -> usize {
        match self {
            Mode::FirstOcc => FIRST_OCC_CONTEXT,
            Mode::AllOcc => ALL_OCC_CONTEXT,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::FirstOcc => "firstOcc",
            Mode::AllOcc => "allOcc",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "firstOcc" | "first" => Ok(Mode::FirstOcc),
            "allOcc" | "all" => Ok(Mode::AllOcc),
            _ => Err(format!("unknown mode {s:?} (expected firstOcc or allOcc)")),
        }
    }
}

/// Per-token flag; also the row of the flag embedding in all-occurrence mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Flag {
    StaticOrNoEvent = 0,
    NewOnset = 1,
    Recurrent = 2,
}

impl Flag {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: u8) -> Option<Flag> {
        match i {
            0 => Some(Flag::StaticOrNoEvent),
            1 => Some(Flag::NewOnset),
            2 => Some(Flag::Recurrent),
            _ => None,
        }
    }
}

impl Serialize for Flag {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(*self as u8)
    }
}

impl<'de> Deserialize<'de> for Flag {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        Flag::from_index(v).ok_or_else(|| serde::de::Error::custom(format!("bad flag {v}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenSequence {
    pub patient_id: String,
    #[serde(rename = "ids")]
    pub token_ids: Vec<TokenId>,
    pub ages: Vec<u32>,
    pub flags: Vec<Flag>,
    #[serde(rename = "targets")]
    pub target_mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SequenceError {
    #[error("patient {0}: no events left after vocabulary filtering")]
    EmptyHistory(String),
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn sex(&self) -> Sex {
        if self.token_ids.first() == Some(&3) {
            Sex::M
        } else {
            Sex::F
        }
    }

    pub fn is_padding(&self, i: usize) -> bool {
        self.token_ids[i] == PADDING
    }

    pub fn padding_mask(&self) -> Vec<bool> {
        self.token_ids.iter().map(|&t| t == PADDING).collect()
    }

    fn push(&mut self, id: TokenId, age: u32, flag: Flag, target: bool) {
        self.token_ids.push(id);
        self.ages.push(age);
        self.flags.push(flag);
        self.target_mask.push(target);
    }

    fn insert(&mut self, at: usize, id: TokenId, age: u32, flag: Flag, target: bool) {
        self.token_ids.insert(at, id);
        self.ages.insert(at, age);
        self.flags.insert(at, flag);
        self.target_mask.insert(at, target);
    }

    /// Copy without padding tokens.
    pub fn without_padding(&self) -> TokenSequence {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| !self.is_padding(i)).collect();
        self.select(&keep)
    }

    fn select(&self, idx: &[usize]) -> TokenSequence {
        TokenSequence {
            patient_id: self.patient_id.clone(),
            token_ids: idx.iter().map(|&i| self.token_ids[i]).collect(),
            ages: idx.iter().map(|&i| self.ages[i]).collect(),
            flags: idx.iter().map(|&i| self.flags[i]).collect(),
            target_mask: idx.iter().map(|&i| self.target_mask[i]).collect(),
        }
    }

    /// Prefix ending at (and including) position `pos`.
    pub fn prefix(&self, pos: usize) -> TokenSequence {
        let idx: Vec<usize> = (0..=pos).collect();
        self.select(&idx)
    }

    /// Appends a no-event token at `age` when the sequence ends earlier, so a
    /// prediction made at the end of the sequence conditions on that age.
    pub fn extend_to_age(&mut self, age: u32) {
        if self.ages.last().is_none_or(|&last| last < age) {
            self.push(NO_EVENT, age, Flag::StaticOrNoEvent, false);
        }
    }
}

/// Builds the sequence for one patient. `mean_no_event_interval_days` may be
/// infinite to disable no-event insertion.
pub fn build_sequence(
    patient: &PatientRecord,
    vocab: &Vocabulary,
    mode: Mode,
    mean_no_event_interval_days: f64,
    seed: u64,
) -> Result<TokenSequence, SequenceError> {
    let mut events: Vec<(u32, &str, TokenId)> = patient
        .events
        .iter()
        .filter_map(|e| {
            let id = vocab.token_id(e.code()).ok()?;
            (vocab.kind_of(id) == Some(TokenKind::Disease)).then_some((e.age_days(), e.code(), id))
        })
        .collect();
    if events.is_empty() {
        return Err(SequenceError::EmptyHistory(patient.patient_id.clone()));
    }
    events.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    events.dedup();

    let mut seq = TokenSequence {
        patient_id: patient.patient_id.clone(),
        token_ids: Vec::with_capacity(events.len() + 8),
        ages: Vec::with_capacity(events.len() + 8),
        flags: Vec::with_capacity(events.len() + 8),
        target_mask: Vec::with_capacity(events.len() + 8),
    };
    seq.push(vocab.sex_token(patient.sex), 0, Flag::StaticOrNoEvent, false);
    seq.push(vocab.smoking_token(patient.smoking), 0, Flag::StaticOrNoEvent, false);
    seq.push(vocab.alcohol_token(patient.alcohol), 0, Flag::StaticOrNoEvent, false);

    let mut seen: HashMap<TokenId, ()> = HashMap::new();
    for (age, _, id) in events {
        let first = seen.insert(id, ()).is_none();
        match (mode, first) {
            (_, true) => seq.push(id, age, Flag::NewOnset, true),
            (Mode::AllOcc, false) => seq.push(id, age, Flag::Recurrent, false),
            (Mode::FirstOcc, false) => {}
        }
    }

    // Death counts as the last event, so no-event tokens also fill the time
    // between the last diagnosis and death.
    if let Some(death) = patient.death_age_days {
        let death = death.max(*seq.ages.last().unwrap());
        seq.push(DEATH, death, Flag::NewOnset, true);
    }
    Ok(insert_no_event_tokens(seq, mean_no_event_interval_days, seed))
}

/// Inserts no-event tokens at the points of a homogeneous Poisson process
/// with the given mean interval over [first event age, last event age].
pub fn insert_no_event_tokens(
    mut seq: TokenSequence,
    mean_interval_days: f64,
    seed: u64,
) -> TokenSequence {
    assert!(mean_interval_days > 0.0, "mean interval must be positive");
    if !mean_interval_days.is_finite() {
        return seq;
    }
    let event_ages: Vec<u32> = (0..seq.len())
        .filter(|&i| seq.flags[i] != Flag::StaticOrNoEvent)
        .map(|i| seq.ages[i])
        .collect();
    let (Some(&first), Some(&last)) = (event_ages.first(), event_ages.last()) else {
        return seq;
    };
    let mut rng = rng_from_seed(seed);
    let mut t = f64::from(first);
    let mut inserts = Vec::new();
    loop {
        let u: f64 = rng.random::<f64>();
        t += -(1.0 - u).ln() * mean_interval_days;
        if t > f64::from(last) {
            break;
        }
        inserts.push(t.floor() as u32);
    }
    for age in inserts {
        // before any non-static token of equal or greater age
        let at = (N_STATIC..seq.len())
            .find(|&i| seq.ages[i] >= age && seq.token_ids[i] != PADDING)
            .unwrap_or(seq.len());
        seq.insert(at, NO_EVENT, age, Flag::StaticOrNoEvent, false);
    }
    seq
}

/// Keeps the statics and the most recent `max_len - 3` other tokens. With
/// `pad`, shorter sequences are filled up to `max_len` with padding tokens
/// placed between the statics and the history.
pub fn crop_to_window(seq: &TokenSequence, max_len: usize, pad: bool) -> TokenSequence {
    assert!(max_len > N_STATIC, "max_len must leave room for history");
    let statics = N_STATIC.min(seq.len());
    let rest: Vec<usize> = (statics..seq.len()).filter(|&i| !seq.is_padding(i)).collect();
    let keep_from = rest.len().saturating_sub(max_len - N_STATIC);
    let mut idx: Vec<usize> = (0..statics).collect();
    idx.extend_from_slice(&rest[keep_from..]);
    let mut out = seq.select(&idx);
    if pad {
        let missing = max_len - out.len();
        for _ in 0..missing {
            out.insert(statics, PADDING, 0, Flag::StaticOrNoEvent, false);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct SequenceOptions {
    pub mode: Mode,
    pub no_event_mean_interval_days: f64,
    pub seed: u64,
}

/// Sequences for a whole cohort; patients without vocabulary events are
/// skipped and counted. Per-patient seeds come from the patient id.
pub fn build_sequences(
    cohort: &[PatientRecord],
    vocab: &Vocabulary,
    opts: &SequenceOptions,
) -> (Vec<TokenSequence>, usize) {
    let built: Vec<Result<TokenSequence, SequenceError>> = cohort
        .par_iter()
        .map(|p| {
            build_sequence(
                p,
                vocab,
                opts.mode,
                opts.no_event_mean_interval_days,
                derive_seed(opts.seed, &p.patient_id),
            )
        })
        .collect();
    let mut skipped = 0;
    let mut out = Vec::with_capacity(built.len());
    for b in built {
        match b {
            Ok(s) => out.push(s),
            Err(_) => skipped += 1,
        }
    }
    (out, skipped)
}

/// Upper edges (days, inclusive) of the recurrence gap histogram; the last
/// bin is open-ended.
pub const GAP_BIN_EDGES: [u32; 8] = [1, 3, 7, 30, 90, 365, 1095, 3650];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChapterComposition {
    pub chapter: Chapter,
    pub new_onset: usize,
    pub recurrent: usize,
    pub fraction_recurrent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecurrenceStats {
    pub new_onset: usize,
    pub recurrent: usize,
    pub fraction_recurrent: f64,
    pub by_chapter: Vec<ChapterComposition>,
    /// Counts per gap bin; `gap_histogram[i]` covers `(edge[i-1], edge[i]]`.
    pub gap_histogram: Vec<usize>,
}

impl RecurrenceStats {
    pub fn fraction_gaps_within(&self, days: u32) -> f64 {
        let total: usize = self.gap_histogram.iter().sum();
        if total == 0 {
            return 0.0;
        }
        let n_bins = GAP_BIN_EDGES.iter().take_while(|&&e| e <= days).count();
        self.gap_histogram[..n_bins].iter().sum::<usize>() as f64 / total as f64
    }
}

fn gap_bin(gap: u32) -> usize {
    GAP_BIN_EDGES
        .iter()
        .position(|&e| gap <= e)
        .unwrap_or(GAP_BIN_EDGES.len())
}

/// Composition of disease tokens in all-occurrence sequences.
pub fn recurrence_stats(seqs: &[TokenSequence], vocab: &Vocabulary) -> RecurrenceStats {
    let mut by_chapter: BTreeMap<Chapter, (usize, usize)> = BTreeMap::new();
    let mut hist = vec![0usize; GAP_BIN_EDGES.len() + 1];
    for s in seqs {
        let mut last_seen: HashMap<TokenId, u32> = HashMap::new();
        for i in 0..s.len() {
            let id = s.token_ids[i];
            if vocab.kind_of(id) != Some(TokenKind::Disease) {
                continue;
            }
            let chapter = vocab
                .label_of(id)
                .ok()
                .and_then(Chapter::of)
                .expect("disease labels are categories");
            let slot = by_chapter.entry(chapter).or_default();
            match s.flags[i] {
                Flag::Recurrent => {
                    slot.1 += 1;
                    if let Some(prev) = last_seen.get(&id) {
                        hist[gap_bin(s.ages[i] - prev)] += 1;
                    }
                }
                _ => slot.0 += 1,
            }
            last_seen.insert(id, s.ages[i]);
        }
    }
    let frac = |n: usize, r: usize| {
        if n + r == 0 {
            0.0
        } else {
            r as f64 / (n + r) as f64
        }
    };
    let new_onset = by_chapter.values().map(|v| v.0).sum();
    let recurrent = by_chapter.values().map(|v| v.1).sum();
    RecurrenceStats {
        new_onset,
        recurrent,
        fraction_recurrent: frac(new_onset, recurrent),
        by_chapter: by_chapter
            .into_iter()
            .map(|(chapter, (n, r))| ChapterComposition {
                chapter,
                new_onset: n,
                recurrent: r,
                fraction_recurrent: frac(n, r),
            })
            .collect(),
        gap_histogram: hist,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::{Alcohol, Event, Smoking};

    fn vocab() -> Vocabulary {
        Vocabulary::with_diseases(["E11", "I50", "J44"]).unwrap()
    }

    fn patient(events: &[(u32, &str)], death: Option<u32>) -> PatientRecord {
        PatientRecord {
            patient_id: "p".into(),
            sex: Sex::M,
            smoking: Smoking::Former,
            alcohol: Alcohol::Yes,
            events: events.iter().map(|(a, c)| Event::icd10(*a, *c)).collect(),
            death_age_days: death,
        }
    }

    fn labels(v: &Vocabulary, s: &TokenSequence) -> Vec<String> {
        s.token_ids
            .iter()
            .map(|&t| v.label_of(t).unwrap().to_string())
            .collect()
    }

    #[test]
    fn first_occurrence_collapse_and_tie_order() {
        let v = vocab();
        let p = patient(&[(12000, "I50"), (13000, "I50"), (12000, "E11")], None);
        let s = build_sequence(&p, &v, Mode::FirstOcc, f64::INFINITY, 1).unwrap();
        assert_eq!(
            labels(&v, &s),
            ["sex:M", "smoking:former", "alcohol:yes", "E11", "I50"]
        );
        assert_eq!(s.ages, [0, 0, 0, 12000, 12000]);
        assert_eq!(s.target_mask, [false, false, false, true, true]);
        assert_eq!(s.sex(), Sex::M);
    }

    #[test]
    fn all_occurrence_flags_recurrence() {
        let v = vocab();
        let p = patient(&[(12000, "I50"), (13000, "I50"), (12000, "E11")], None);
        let s = build_sequence(&p, &v, Mode::AllOcc, f64::INFINITY, 1).unwrap();
        assert_eq!(&labels(&v, &s)[3..], ["E11", "I50", "I50"]);
        assert_eq!(s.flags[5], Flag::Recurrent);
        assert!(!s.target_mask[5]);
        assert_eq!(s.flags[4], Flag::NewOnset);
        assert!(s.target_mask[4]);
    }

    #[test]
    fn death_is_terminal_target() {
        let v = vocab();
        let p = patient(&[(12000, "I50")], Some(20000));
        let s = build_sequence(&p, &v, Mode::FirstOcc, 365.0, 3).unwrap();
        assert_eq!(*s.token_ids.last().unwrap(), DEATH);
        assert_eq!(*s.ages.last().unwrap(), 20000);
        assert!(*s.target_mask.last().unwrap());
        // the gap before death gets no-event tokens like any other gap
        assert!(s.token_ids.iter().zip(&s.ages).any(|(&t, &a)| t == NO_EVENT && a > 12000));
    }

    #[test]
    fn unknown_categories_dropped_and_empty_rejected() {
        let v = vocab();
        let p = patient(&[(100, "Z99"), (200, "J44")], None);
        let s = build_sequence(&p, &v, Mode::FirstOcc, f64::INFINITY, 0).unwrap();
        assert_eq!(s.len(), 4);
        let p = patient(&[(100, "Z99")], None);
        assert!(matches!(
            build_sequence(&p, &v, Mode::FirstOcc, f64::INFINITY, 0),
            Err(SequenceError::EmptyHistory(_))
        ));
    }

    #[test]
    fn zero_rate_no_event_is_identity() {
        let v = vocab();
        let p = patient(&[(100, "E11"), (5000, "J44")], None);
        let s = build_sequence(&p, &v, Mode::FirstOcc, f64::INFINITY, 0).unwrap();
        let again = insert_no_event_tokens(s.clone(), f64::INFINITY, 99);
        assert_eq!(again, s);
    }

    #[test]
    fn no_event_count_matches_poisson_mean() {
        let v = vocab();
        let p = patient(&[(10000, "E11"), (13650, "J44")], None);
        let base = build_sequence(&p, &v, Mode::FirstOcc, f64::INFINITY, 0).unwrap();
        let n_seeds = 10_000u64;
        let mut total = 0usize;
        for seed in 0..n_seeds {
            let s = insert_no_event_tokens(base.clone(), 365.0, seed);
            total += s.len() - base.len();
            assert!(s.ages.windows(2).all(|w| w[0] <= w[1]));
            for i in 0..s.len() {
                if s.token_ids[i] == NO_EVENT {
                    assert_eq!(s.flags[i], Flag::StaticOrNoEvent);
                    assert!(!s.target_mask[i]);
                }
            }
        }
        let mean = total as f64 / n_seeds as f64;
        assert!((mean - 10.0).abs() < 0.2, "mean insertions {mean}");
    }

    #[test]
    fn crop_keeps_statics_and_recent_history() {
        let mut s = TokenSequence {
            patient_id: "p".into(),
            token_ids: vec![2, 5, 9],
            ages: vec![0; 3],
            flags: vec![Flag::StaticOrNoEvent; 3],
            target_mask: vec![false; 3],
        };
        for i in 0..120u32 {
            s.push(12, 1000 + i, Flag::NewOnset, true);
        }
        let c = crop_to_window(&s, 93, false);
        assert_eq!(c.len(), 93);
        assert_eq!(&c.token_ids[..3], &[2, 5, 9]);
        assert_eq!(c.ages[3], 1030);
        assert_eq!(*c.ages.last().unwrap(), 1119);

        let short = s.prefix(12);
        let padded = crop_to_window(&short, 93, true);
        assert_eq!(padded.len(), 93);
        assert_eq!(padded.token_ids.iter().filter(|&&t| t == PADDING).count(), 80);
        assert_eq!(padded.without_padding(), short);
        assert_eq!(crop_to_window(&padded, 93, true), padded);
        assert_eq!(Mode::AllOcc.default_context_len(), 445);
        assert_eq!(Mode::FirstOcc.default_context_len(), 93);
    }

    #[test]
    fn recurrence_composition() {
        let v = vocab();
        let once = patient(&[(100, "E11"), (200, "J44")], None);
        let s = build_sequence(&once, &v, Mode::AllOcc, f64::INFINITY, 0).unwrap();
        let st = recurrence_stats(&[s], &v);
        assert_eq!(st.fraction_recurrent, 0.0);

        let twice = patient(&[(100, "E11"), (110, "E11"), (5000, "J44"), (5010, "J44")], None);
        let s = build_sequence(&twice, &v, Mode::AllOcc, f64::INFINITY, 0).unwrap();
        let st = recurrence_stats(&[s.clone(), s], &v);
        assert!((st.fraction_recurrent - 0.5).abs() < 1e-12);
        assert_eq!(st.gap_histogram[3], 4);
        assert_eq!(st.fraction_gaps_within(30), 1.0);
        assert_eq!(st.by_chapter.len(), 2);
    }

    #[test]
    fn jsonl_layout() {
        let v = vocab();
        let p = patient(&[(100, "E11")], None);
        let s = build_sequence(&p, &v, Mode::FirstOcc, f64::INFINITY, 0).unwrap();
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(
            j,
            r#"{"patient_id":"p","ids":[3,5,8,12],"ages":[0,0,0,100],"flags":[0,0,0,1],"targets":[false,false,false,true]}"#
        );
        assert_eq!(serde_json::from_str::<TokenSequence>(&j).unwrap(), s);
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use crate::record::{Alcohol, Event, Smoking};
    use proptest::prelude::*;

    const CATS: [&str; 4] = ["A01", "B02", "C03", "D04"];

    fn arb_patient() -> impl Strategy<Value = PatientRecord> {
        (
            prop::collection::vec((0u32..40_000, 0usize..4), 1..30),
            prop::option::of(0u32..5_000),
        )
            .prop_map(|(evs, death_extra)| {
                let max_age = evs.iter().map(|e| e.0).max().unwrap();
                PatientRecord {
                    patient_id: "x".into(),
                    sex: Sex::F,
                    smoking: Smoking::Current,
                    alcohol: Alcohol::No,
                    events: evs.into_iter().map(|(a, c)| Event::icd10(a, CATS[c])).collect(),
                    death_age_days: death_extra.map(|d| max_age + d),
                }
            })
    }

    proptest! {
        #[test]
        fn structural_invariants(p in arb_patient(), seed in 0u64..1000, all in any::<bool>()) {
            let v = Vocabulary::with_diseases(CATS).unwrap();
            let mode = if all { Mode::AllOcc } else { Mode::FirstOcc };
            let s = build_sequence(&p, &v, mode, 2000.0, seed).unwrap();
            prop_assert!(s.ages.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(s.flags.len(), s.len());
            prop_assert_eq!(s.target_mask.len(), s.len());
            prop_assert!(s.ages[..3].iter().all(|&a| a == 0));
            for i in 0..s.len() {
                let kind = v.kind_of(s.token_ids[i]).unwrap();
                let expect = kind.is_predictable() && s.flags[i] == Flag::NewOnset;
                prop_assert_eq!(s.target_mask[i], expect);
            }
            if mode == Mode::FirstOcc {
                let mut ids: Vec<_> = s.token_ids.iter().filter(|&&t| t > DEATH).collect();
                let n = ids.len();
                ids.sort();
                ids.dedup();
                prop_assert_eq!(ids.len(), n);
            }
            if p.death_age_days.is_some() {
                prop_assert_eq!(*s.token_ids.last().unwrap(), DEATH);
            }
            let again = build_sequence(&p, &v, mode, 2000.0, seed).unwrap();
            prop_assert_eq!(serde_json::to_string(&again).unwrap(), serde_json::to_string(&s).unwrap());
        }

        #[test]
        fn first_occ_is_new_onset_part_of_all_occ(p in arb_patient(), seed in 0u64..100) {
            let v = Vocabulary::with_diseases(CATS).unwrap();
            let f = build_sequence(&p, &v, Mode::FirstOcc, f64::INFINITY, seed).unwrap();
            let a = build_sequence(&p, &v, Mode::AllOcc, f64::INFINITY, seed).unwrap();
            let keep: Vec<(TokenId, u32)> = (0..a.len())
                .filter(|&i| a.flags[i] != Flag::Recurrent)
                .map(|i| (a.token_ids[i], a.ages[i]))
                .collect();
            let fo: Vec<(TokenId, u32)> = (0..f.len()).map(|i| (f.token_ids[i], f.ages[i])).collect();
            prop_assert_eq!(keep, fo);
        }

        #[test]
        fn crop_idempotent(p in arb_patient(), max_len in 4usize..20, pad in any::<bool>()) {
            let v = Vocabulary::with_diseases(CATS).unwrap();
            let s = build_sequence(&p, &v, Mode::AllOcc, 1500.0, 5).unwrap();
            let once = crop_to_window(&s, max_len, pad);
            prop_assert!(once.len() <= max_len);
            prop_assert_eq!(crop_to_window(&once, max_len, pad), once.clone());
            if p.death_age_days.is_some() {
                prop_assert_eq!(*once.token_ids.last().unwrap(), DEATH);
            }
        }
    }
}
