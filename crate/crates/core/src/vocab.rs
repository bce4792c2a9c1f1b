//! Diagnosis code normalisation and the token vocabulary.
//!
//! Raw ICD-9 codes are mapped to ICD-10 through a GEM crosswalk and every
//! code is truncated to its 3-character category. The vocabulary has a fixed
//! layout: eleven context-only tokens (padding, no-event, sex, smoking,
//! alcohol), then the death token, then disease categories in ascending label
//! order. Everything from the death token onwards is predictable.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::record::{Alcohol, CodeSystem, Event, PatientRecord, Sex, Smoking};

pub type TokenId = u32;

pub const PADDING: TokenId = 0;
pub const NO_EVENT: TokenId = 1;
pub const DEATH: TokenId = 11;
/// Number of tokens before the first predictable token (the death token).
pub const N_CONTEXT_ONLY: usize = 11;

pub const PADDING_LABEL: &str = "padding";
pub const NO_EVENT_LABEL: &str = "no_event";
pub const DEATH_LABEL: &str = "death";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VocabError {
    #[error("unknown ICD-9 code {0:?}: no GEM row")]
    UnknownCode(String),
    #[error("malformed diagnosis code {0:?}")]
    MalformedCode(String),
    #[error("cohort has no diagnosis events")]
    EmptyCohort,
    #[error("not in vocabulary: {0}")]
    NotInVocabulary(String),
    #[error("invalid vocabulary: {0}")]
    Invalid(String),
    #[error("{path}:{line}: {msg}")]
    GemParse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{0}")]
    Io(String),
}

/// ICD-9 to ICD-10 crosswalk. Keys are stored without dots, uppercase.
#[derive(Debug, Clone, Default)]
pub struct GemTable {
    rows: Vec<(String, String)>,
    index: HashMap<String, usize>,
}

fn squash(code: &str) -> String {
    code.trim()
        .chars()
        .filter(|c| *c != '.')
        .map(|c| c.to_ascii_uppercase())
        .collect()
}

impl GemTable {
    pub fn from_rows<I, A, B>(rows: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        let mut table = GemTable::default();
        for (src, dst) in rows {
            table.push(src.into(), dst.into());
        }
        table
    }

    fn push(&mut self, src: String, dst: String) {
        let key = squash(&src);
        let pos = self.rows.len();
        self.rows.push((src, dst));
        // first-listed row wins for duplicate source codes
        self.index.entry(key).or_insert(pos);
    }

    /// Parses a GEM file: two leading whitespace-separated columns (source,
    /// target); blank lines and `#` comments are skipped.
    pub fn parse(text: &str, origin: &str) -> Result<Self, VocabError> {
        let mut table = GemTable::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split_whitespace();
            match (cols.next(), cols.next()) {
                (Some(src), Some(dst)) => table.push(src.to_string(), dst.to_string()),
                _ => {
                    return Err(VocabError::GemParse {
                        path: origin.to_string(),
                        line: i + 1,
                        msg: "expected at least two columns".into(),
                    })
                }
            }
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, VocabError> {
        let text =
            fs::read_to_string(path).map_err(|e| VocabError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// The small crosswalk subset shipped with the crate.
    pub fn bundled_fixture() -> Self {
        Self::parse(include_str!("../data/gem_fixture.tsv"), "gem_fixture.tsv")
            .expect("bundled fixture parses")
    }

    pub fn lookup(&self, icd9: &str) -> Option<&str> {
        self.index
            .get(&squash(icd9))
            .map(|&i| self.rows[i].1.as_str())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn is_category(s: &str) -> bool {
    let b = s.as_bytes();
    b.len() == 3
        && b[0].is_ascii_uppercase()
        && b[1].is_ascii_alphanumeric()
        && b[2].is_ascii_alphanumeric()
}

fn truncate_category(code: &str, raw: &str) -> Result<String, VocabError> {
    let squashed = squash(code);
    let cat: String = squashed.chars().take(3).collect();
    if is_category(&cat) {
        Ok(cat)
    } else {
        Err(VocabError::MalformedCode(raw.to_string()))
    }
}

/// Maps a raw code to its uppercase 3-character ICD-10 category.
pub fn normalize_code(
    raw: &str,
    system: CodeSystem,
    gem: Option<&GemTable>,
) -> Result<String, VocabError> {
    if raw.trim().is_empty() {
        return Err(VocabError::MalformedCode(raw.to_string()));
    }
    match system {
        CodeSystem::Icd10 => truncate_category(raw, raw),
        CodeSystem::Icd9 => {
            let gem = gem.ok_or_else(|| VocabError::UnknownCode(raw.to_string()))?;
            let target = gem
                .lookup(raw)
                .ok_or_else(|| VocabError::UnknownCode(raw.to_string()))?;
            truncate_category(target, raw)
        }
    }
}

/// How [`normalize_cohort`] treats codes that fail to normalise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodePolicy {
    Strict,
    DropInvalid,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NormalizeStats {
    pub events_in: usize,
    pub events_dropped: usize,
    pub patients_dropped: usize,
}

/// Normalises every event to an ICD-10 category. Patients left without
/// events are dropped.
pub fn normalize_cohort(
    records: &[PatientRecord],
    gem: Option<&GemTable>,
    policy: CodePolicy,
) -> Result<(Vec<PatientRecord>, NormalizeStats), (String, VocabError)> {
    let mut stats = NormalizeStats::default();
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        let mut events = Vec::with_capacity(rec.events.len());
        for e in &rec.events {
            stats.events_in += 1;
            match normalize_code(e.code(), e.system(), gem) {
                Ok(cat) => events.push(Event::icd10(e.age_days(), cat)),
                Err(err) => match policy {
                    CodePolicy::Strict => return Err((rec.patient_id.clone(), err)),
                    CodePolicy::DropInvalid => stats.events_dropped += 1,
                },
            }
        }
        if events.is_empty() {
            stats.patients_dropped += 1;
            continue;
        }
        out.push(PatientRecord {
            events,
            ..rec.clone()
        });
    }
    Ok((out, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Disease,
    Death,
    Sex,
    Smoking,
    Alcohol,
    NoEvent,
    Padding,
}

impl TokenKind {
    pub fn is_predictable(self) -> bool {
        matches!(self, TokenKind::Disease | TokenKind::Death)
    }
}

/// One vocabulary row. Field order is alphabetical so the compact JSON
/// encoding is canonical.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabEntry {
    pub id: TokenId,
    pub kind: TokenKind,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    entries: Vec<VocabEntry>,
    by_label: HashMap<String, TokenId>,
}

pub fn sex_label(s: Sex) -> String {
    format!("sex:{}", s.as_str())
}

pub fn smoking_label(s: Smoking) -> String {
    format!("smoking:{}", s.as_str())
}

pub fn alcohol_label(a: Alcohol) -> String {
    format!("alcohol:{}", a.as_str())
}

fn special_entries() -> Vec<(TokenKind, String)> {
    let mut v = vec![
        (TokenKind::Padding, PADDING_LABEL.to_string()),
        (TokenKind::NoEvent, NO_EVENT_LABEL.to_string()),
    ];
    v.extend(Sex::ALL.iter().map(|&s| (TokenKind::Sex, sex_label(s))));
    v.extend(Smoking::ALL.iter().map(|&s| (TokenKind::Smoking, smoking_label(s))));
    v.extend(Alcohol::ALL.iter().map(|&a| (TokenKind::Alcohol, alcohol_label(a))));
    v.push((TokenKind::Death, DEATH_LABEL.to_string()));
    v
}

/// Removal statistics of the frequency filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RemovalStats {
    pub categories_observed: usize,
    pub categories_removed: usize,
    pub fraction_categories_removed: f64,
    pub fraction_events_removed: f64,
}

impl Vocabulary {
    /// Vocabulary with the special tokens and the given disease categories
    /// (deduplicated, ascending).
    pub fn with_diseases<I, S>(diseases: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let cats: BTreeSet<String> = diseases.into_iter().map(|s| s.as_ref().to_string()).collect();
        let mut entries: Vec<VocabEntry> = special_entries()
            .into_iter()
            .enumerate()
            .map(|(i, (kind, label))| VocabEntry {
                id: i as TokenId,
                kind,
                label,
            })
            .collect();
        for c in cats {
            if !is_category(&c) {
                return Err(VocabError::MalformedCode(c));
            }
            entries.push(VocabEntry {
                id: entries.len() as TokenId,
                kind: TokenKind::Disease,
                label: c,
            });
        }
        Self::from_entries(entries)
    }

    /// Validates the layout and id contiguity of a persisted entry list.
    pub fn from_entries(entries: Vec<VocabEntry>) -> Result<Self, VocabError> {
        let specials = special_entries();
        if entries.len() < specials.len() {
            return Err(VocabError::Invalid("missing special tokens".into()));
        }
        let mut by_label = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if e.id as usize != i {
                return Err(VocabError::Invalid(format!("id {} at position {i}", e.id)));
            }
            if let Some((kind, label)) = specials.get(i) {
                if e.kind != *kind || &e.label != label {
                    return Err(VocabError::Invalid(format!(
                        "position {i}: expected {label}, found {}",
                        e.label
                    )));
                }
            } else if e.kind != TokenKind::Disease || !is_category(&e.label) {
                return Err(VocabError::Invalid(format!("bad disease entry {}", e.label)));
            }
            if by_label.insert(e.label.clone(), e.id).is_some() {
                return Err(VocabError::Invalid(format!("duplicate label {}", e.label)));
            }
        }
        Ok(Vocabulary { entries, by_label })
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_predictable(&self) -> usize {
        self.entries.len() - N_CONTEXT_ONLY
    }

    pub fn n_diseases(&self) -> usize {
        self.entries.len() - N_CONTEXT_ONLY - 1
    }

    pub fn token_id(&self, label: &str) -> Result<TokenId, VocabError> {
        self.by_label
            .get(label)
            .copied()
            .ok_or_else(|| VocabError::NotInVocabulary(label.to_string()))
    }

    pub fn label_of(&self, id: TokenId) -> Result<&str, VocabError> {
        self.entries
            .get(id as usize)
            .map(|e| e.label.as_str())
            .ok_or_else(|| VocabError::NotInVocabulary(format!("id {id}")))
    }

    pub fn kind_of(&self, id: TokenId) -> Option<TokenKind> {
        self.entries.get(id as usize).map(|e| e.kind)
    }

    pub fn disease_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        (N_CONTEXT_ONLY as TokenId + 1..self.entries.len() as TokenId).map(|i| i)
    }

    /// Death followed by every disease.
    pub fn predictable_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        DEATH..self.entries.len() as TokenId
    }

    pub fn sex_token(&self, s: Sex) -> TokenId {
        2 + s.index() as TokenId
    }

    pub fn smoking_token(&self, s: Smoking) -> TokenId {
        4 + Smoking::ALL.iter().position(|x| *x == s).unwrap() as TokenId
    }

    pub fn alcohol_token(&self, a: Alcohol) -> TokenId {
        8 + Alcohol::ALL.iter().position(|x| *x == a).unwrap() as TokenId
    }

    /// Canonical compact JSON: an array of `{id, kind, label}`.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.entries).expect("vocab serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, VocabError> {
        let entries: Vec<VocabEntry> =
            serde_json::from_str(text).map_err(|e| VocabError::Invalid(e.to_string()))?;
        Self::from_entries(entries)
    }

    pub fn load(path: &Path) -> Result<Self, VocabError> {
        let text =
            fs::read_to_string(path).map_err(|e| VocabError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Predictable index (row of the event head) of a token id, if any.
pub fn predictable_index(id: TokenId) -> Option<usize> {
    (id >= DEATH).then(|| (id - DEATH) as usize)
}

pub fn token_of_predictable(index: usize) -> TokenId {
    DEATH + index as TokenId
}

/// Builds the vocabulary from a normalised cohort, keeping categories
/// recorded in at least `min_patients` distinct patients.
pub fn build_vocabulary(
    cohort: &[PatientRecord],
    min_patients: usize,
) -> Result<(Vocabulary, RemovalStats), VocabError> {
    assert!(min_patients >= 1, "min_patients must be positive");
    let mut patients_per_cat: BTreeMap<&str, usize> = BTreeMap::new();
    let mut events_per_cat: BTreeMap<&str, usize> = BTreeMap::new();
    let mut total_events = 0usize;
    for rec in cohort {
        let mut seen = BTreeSet::new();
        for e in &rec.events {
            total_events += 1;
            *events_per_cat.entry(e.code()).or_default() += 1;
            if seen.insert(e.code()) {
                *patients_per_cat.entry(e.code()).or_default() += 1;
            }
        }
    }
    if total_events == 0 {
        return Err(VocabError::EmptyCohort);
    }
    let kept: Vec<&str> = patients_per_cat
        .iter()
        .filter(|(_, &n)| n >= min_patients)
        .map(|(c, _)| *c)
        .collect();
    let removed_events: usize = events_per_cat
        .iter()
        .filter(|(c, _)| patients_per_cat[*c] < min_patients)
        .map(|(_, &n)| n)
        .sum();
    let observed = patients_per_cat.len();
    let removed = observed - kept.len();
    let vocab = Vocabulary::with_diseases(kept)?;
    Ok((
        vocab,
        RemovalStats {
            categories_observed: observed,
            categories_removed: removed,
            fraction_categories_removed: removed as f64 / observed as f64,
            fraction_events_removed: removed_events as f64 / total_events as f64,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::{Alcohol, Smoking};

    fn patient(id: &str, cats: &[&str]) -> PatientRecord {
        PatientRecord {
            patient_id: id.into(),
            sex: Sex::F,
            smoking: Smoking::Never,
            alcohol: Alcohol::No,
            events: cats
                .iter()
                .enumerate()
                .map(|(i, c)| Event::icd10(1000 + i as u32, *c))
                .collect(),
            death_age_days: None,
        }
    }

    #[test]
    fn icd10_truncation() {
        assert_eq!(normalize_code("I50.9", CodeSystem::Icd10, None).unwrap(), "I50");
        assert_eq!(normalize_code("e11", CodeSystem::Icd10, None).unwrap(), "E11");
        assert_eq!(normalize_code("C7A.0", CodeSystem::Icd10, None).unwrap(), "C7A");
        assert!(matches!(
            normalize_code("9I5", CodeSystem::Icd10, None),
            Err(VocabError::MalformedCode(_))
        ));
        assert!(matches!(
            normalize_code("I5", CodeSystem::Icd10, None),
            Err(VocabError::MalformedCode(_))
        ));
    }

    #[test]
    fn icd9_through_fixture() {
        let gem = GemTable::bundled_fixture();
        assert_eq!(normalize_code("428.0", CodeSystem::Icd9, Some(&gem)).unwrap(), "I50");
        assert_eq!(normalize_code("4280", CodeSystem::Icd9, Some(&gem)).unwrap(), "I50");
        assert_eq!(
            normalize_code("999.99", CodeSystem::Icd9, Some(&gem)),
            Err(VocabError::UnknownCode("999.99".into()))
        );
        assert!(matches!(
            normalize_code("428.0", CodeSystem::Icd9, None),
            Err(VocabError::UnknownCode(_))
        ));
    }

    #[test]
    fn gem_first_row_wins() {
        let gem = GemTable::parse("# comment\n250.00\tE11.9\n250.00\tE13.9\n\n", "t").unwrap();
        assert_eq!(gem.lookup("25000"), Some("E11.9"));
        assert_eq!(gem.len(), 2);
        assert!(GemTable::parse("onlyone\n", "t").is_err());
    }

    #[test]
    fn frequency_threshold() {
        let cohort = vec![
            patient("a", &["A01", "B02", "C03", "D04"]),
            patient("b", &["A01", "B02", "C03"]),
            patient("c", &["A01", "B02", "C03", "A01"]),
        ];
        let (v, stats) = build_vocabulary(&cohort, 2).unwrap();
        assert_eq!(v.n_diseases(), 3);
        assert!(v.token_id("D04").is_err());
        assert_eq!(stats.categories_removed, 1);
        assert!((stats.fraction_categories_removed - 0.25).abs() < 1e-12);
        assert!((stats.fraction_events_removed - 1.0 / 11.0).abs() < 1e-12);

        let (v1, s1) = build_vocabulary(&cohort, 1).unwrap();
        assert_eq!(v1.n_diseases(), 4);
        assert_eq!(s1.fraction_categories_removed, 0.0);
        assert_eq!(s1.fraction_events_removed, 0.0);

        let empty = vec![patient("z", &[])];
        assert_eq!(build_vocabulary(&empty, 1), Err(VocabError::EmptyCohort));
    }

    #[test]
    fn ids_and_labels() {
        let v = Vocabulary::with_diseases(["I50"]).unwrap();
        assert_eq!(v.len(), 13);
        for e in v.entries() {
            assert_eq!(v.token_id(&e.label).unwrap(), e.id);
            assert_eq!(v.label_of(e.id).unwrap(), e.label);
        }
        assert_eq!(v.token_id("no_event").unwrap(), NO_EVENT);
        assert_eq!(v.label_of(v.token_id("no_event").unwrap()).unwrap(), "no_event");
        assert!(matches!(
            v.label_of(v.len() as TokenId),
            Err(VocabError::NotInVocabulary(_))
        ));
        assert_eq!(v.token_id("death").unwrap(), DEATH);
        assert_eq!(v.label_of(v.sex_token(Sex::M)).unwrap(), "sex:M");
        assert_eq!(v.label_of(v.smoking_token(Smoking::Unknown)).unwrap(), "smoking:unknown");
        assert_eq!(v.label_of(v.alcohol_token(Alcohol::Yes)).unwrap(), "alcohol:yes");
        assert_eq!(predictable_index(DEATH), Some(0));
        assert_eq!(predictable_index(NO_EVENT), None);
        assert_eq!(v.predictable_ids().count(), v.n_predictable());
    }

    #[test]
    fn canonical_json() {
        let v = Vocabulary::with_diseases(["E11", "I50"]).unwrap();
        let s = v.to_json();
        assert!(s.starts_with(r#"[{"id":0,"kind":"padding","label":"padding"},{"id":1,"kind":"no_event""#));
        assert!(!s.contains(' '));
        let back = Vocabulary::from_json(&s).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.to_json(), s);

        let broken = s.replace(r#""id":12"#, r#""id":13"#);
        assert!(Vocabulary::from_json(&broken).is_err());
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use crate::record::{Alcohol, Smoking};
    use proptest::prelude::*;

    fn arb_category() -> impl Strategy<Value = String> {
        "[A-Z][0-9][0-9A-Z]"
    }

    fn arb_cohort() -> impl Strategy<Value = Vec<PatientRecord>> {
        prop::collection::vec(prop::collection::vec(arb_category(), 1..6), 1..12).prop_map(|pats| {
            pats.into_iter()
                .enumerate()
                .map(|(i, cats)| PatientRecord {
                    patient_id: format!("p{i}"),
                    sex: Sex::M,
                    smoking: Smoking::Unknown,
                    alcohol: Alcohol::Unknown,
                    events: cats.into_iter().map(|c| Event::icd10(100, c)).collect(),
                    death_age_days: None,
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn bijection(cohort in arb_cohort(), min in 1usize..4) {
            let (v, _) = build_vocabulary(&cohort, min).unwrap();
            for e in v.entries() {
                prop_assert_eq!(v.token_id(v.label_of(e.id).unwrap()).unwrap(), e.id);
                prop_assert_eq!(v.label_of(v.token_id(&e.label).unwrap()).unwrap(), e.label.as_str());
            }
        }

        #[test]
        fn filtering_is_monotone(cohort in arb_cohort(), min in 1usize..6) {
            let (a, _) = build_vocabulary(&cohort, min).unwrap();
            let (b, _) = build_vocabulary(&cohort, min + 1).unwrap();
            prop_assert!(b.n_diseases() <= a.n_diseases());
        }

        #[test]
        fn normalize_idempotent(raw in "[A-Za-z][0-9][0-9A-Za-z](\\.[0-9A-Z]{1,3})?") {
            let once = normalize_code(&raw, CodeSystem::Icd10, None).unwrap();
            let twice = normalize_code(&once, CodeSystem::Icd10, None).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
