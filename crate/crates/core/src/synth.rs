//! Synthetic cohorts drawn from a fully specified hazard model.
//!
//! Rates are piecewise constant on age bins. First occurrences, death and
//! censoring compete; the waiting time inside a bin is exponential with the
//! current total rate. After a first occurrence, repeat recordings of the same
//! category follow an independent Poisson stream.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::record::{Alcohol, Event, PatientRecord, Sex, Smoking};
use crate::seed::{derive_index_seed, rng_from_seed};
use crate::DAYS_PER_YEAR;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("age {age_days} days outside the covered range [0, {max_days}]")]
    AgeOutOfRange { age_days: f64, max_days: f64 },
    #[error("invalid hazard spec: {0}")]
    InvalidSpec(String),
    #[error("no patient with a non-empty history after {0} attempts")]
    DegenerateSpec(usize),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiseaseHazard {
    pub category: String,
    /// Events/day per age bin.
    pub baseline: Vec<f64>,
    /// Multiplier per sex, indexed by [`Sex::index`].
    pub sex_multiplier: Option<[f64; 2]>,
    /// Repeat recordings/day after the first occurrence.
    pub recurrence_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub trigger: usize,
    pub target: usize,
    pub multiplier: f64,
    /// Restricts the interaction to one sex.
    pub sex: Option<Sex>,
}

/// Resolved hazard model. All rates are events/day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardSpec {
    pub age_bin_edges_days: Vec<f64>,
    pub censor_age_days: f64,
    pub diseases: Vec<DiseaseHazard>,
    pub interactions: Vec<Interaction>,
    pub death_baseline: Vec<f64>,
    pub female_fraction: f64,
}

// ---------------------------------------------------------------------------
// File format

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RateUnit {
    #[default]
    PerDay,
    PerYear,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
enum RateCurve {
    Values(Vec<f64>),
    Constant {
        constant: f64,
    },
    Gompertz {
        rate_at_60: f64,
        doubling_years: f64,
        #[serde(default)]
        min_age_years: f64,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SexFactors {
    #[serde(rename = "F", default = "one")]
    f: f64,
    #[serde(rename = "M", default = "one")]
    m: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiseaseFile {
    category: String,
    rate: RateCurve,
    #[serde(default)]
    sex_multiplier: Option<SexFactors>,
    #[serde(default)]
    recurrence_rate: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct InteractionFile {
    trigger: String,
    target: String,
    multiplier: f64,
    #[serde(default)]
    sex: Option<Sex>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    censor_age_days: f64,
    #[serde(default)]
    age_bin_edges_days: Option<Vec<f64>>,
    #[serde(default)]
    age_bin_width_days: Option<f64>,
    #[serde(default)]
    rate_unit: RateUnit,
    #[serde(default = "half")]
    female_fraction: f64,
    death: RateCurve,
    #[serde(default, rename = "disease")]
    diseases: Vec<DiseaseFile>,
    #[serde(default, rename = "interaction")]
    interactions: Vec<InteractionFile>,
}

fn half() -> f64 {
    0.5
}

impl RateCurve {
    fn resolve(&self, edges: &[f64], unit: RateUnit) -> Result<Vec<f64>, SynthError> {
        let n = edges.len() - 1;
        let scale = match unit {
            RateUnit::PerDay => 1.0,
            RateUnit::PerYear => 1.0 / DAYS_PER_YEAR,
        };
        let v = match self {
            RateCurve::Values(v) => {
                if v.len() != n {
                    return Err(SynthError::InvalidSpec(format!(
                        "rate list has {} values for {n} age bins",
                        v.len()
                    )));
                }
                v.iter().map(|x| x * scale).collect()
            }
            RateCurve::Constant { constant } => vec![constant * scale; n],
            RateCurve::Gompertz {
                rate_at_60,
                doubling_years,
                min_age_years,
            } => edges
                .windows(2)
                .map(|w| {
                    let mid_years = 0.5 * (w[0] + w[1]) / DAYS_PER_YEAR;
                    if mid_years < *min_age_years {
                        0.0
                    } else {
                        rate_at_60 * scale * 2f64.powf((mid_years - 60.0) / doubling_years)
                    }
                })
                .collect(),
        };
        Ok(v)
    }
}

impl HazardSpec {
    /// Parses the TOML hazard file format (see `data/demo_spec.toml`).
    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        let file: SpecFile =
            toml::from_str(text).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
        let edges = match (&file.age_bin_edges_days, file.age_bin_width_days) {
            (Some(e), None) => e.clone(),
            (None, Some(w)) if w > 0.0 => {
                let mut e = vec![0.0];
                while *e.last().unwrap() < file.censor_age_days {
                    let next = (*e.last().unwrap() + w).min(file.censor_age_days);
                    e.push(next);
                }
                e
            }
            _ => {
                return Err(SynthError::InvalidSpec(
                    "give exactly one of age_bin_edges_days or a positive age_bin_width_days"
                        .into(),
                ))
            }
        };
        if edges.len() < 2 {
            return Err(SynthError::InvalidSpec("need at least one age bin".into()));
        }
        let index: BTreeMap<&str, usize> = file
            .diseases
            .iter()
            .enumerate()
            .map(|(i, d)| (d.category.as_str(), i))
            .collect();
        let find = |c: &str| {
            index
                .get(c)
                .copied()
                .ok_or_else(|| SynthError::InvalidSpec(format!("interaction names unknown disease {c}")))
        };
        let diseases = file
            .diseases
            .iter()
            .map(|d| {
                Ok(DiseaseHazard {
                    category: d.category.clone(),
                    baseline: d.rate.resolve(&edges, file.rate_unit)?,
                    sex_multiplier: d.sex_multiplier.as_ref().map(|s| [s.f, s.m]),
                    recurrence_rate: match file.rate_unit {
                        RateUnit::PerDay => d.recurrence_rate,
                        RateUnit::PerYear => d.recurrence_rate / DAYS_PER_YEAR,
                    },
                })
            })
            .collect::<Result<Vec<_>, SynthError>>()?;
        let interactions = file
            .interactions
            .iter()
            .map(|i| {
                Ok(Interaction {
                    trigger: find(&i.trigger)?,
                    target: find(&i.target)?,
                    multiplier: i.multiplier,
                    sex: i.sex,
                })
            })
            .collect::<Result<Vec<_>, SynthError>>()?;
        let spec = HazardSpec {
            death_baseline: file.death.resolve(&edges, file.rate_unit)?,
            age_bin_edges_days: edges,
            censor_age_days: file.censor_age_days,
            diseases,
            interactions,
            female_fraction: file.female_fraction,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let text = fs::read_to_string(path)
            .map_err(|e| SynthError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The bundled demo model: 20 diseases, four planted interactions.
    pub fn demo() -> Self {
        Self::from_toml(DEMO_SPEC_TOML).expect("bundled demo spec is valid")
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        let e = &self.age_bin_edges_days;
        if e.first() != Some(&0.0) {
            return bad("age bins must start at 0".into());
        }
        if e.windows(2).any(|w| w[1] <= w[0]) {
            return bad("age bin edges must increase strictly".into());
        }
        if !(self.censor_age_days > 0.0) || *e.last().unwrap() < self.censor_age_days {
            return bad("age bins must cover [0, censor_age_days]".into());
        }
        let n = e.len() - 1;
        let rates_ok = |v: &[f64]| v.len() == n && v.iter().all(|r| r.is_finite() && *r >= 0.0);
        if !rates_ok(&self.death_baseline) {
            return bad("death rates must be finite, non-negative, one per bin".into());
        }
        if !(0.0..=1.0).contains(&self.female_fraction) {
            return bad("female_fraction must lie in [0, 1]".into());
        }
        let mut seen = BTreeSet::new();
        for d in &self.diseases {
            if !seen.insert(d.category.as_str()) {
                return bad(format!("duplicate disease {}", d.category));
            }
            if crate::vocab::normalize_code(&d.category, crate::CodeSystem::Icd10, None).ok()
                .as_deref()
                != Some(d.category.as_str())
            {
                return bad(format!("{} is not a 3-character category", d.category));
            }
            if !rates_ok(&d.baseline) {
                return bad(format!("{}: rates must be finite, non-negative, one per bin", d.category));
            }
            if !(d.recurrence_rate.is_finite() && d.recurrence_rate >= 0.0) {
                return bad(format!("{}: recurrence rate must be non-negative", d.category));
            }
            if let Some(m) = d.sex_multiplier {
                if m.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                    return bad(format!("{}: sex multipliers must be non-negative", d.category));
                }
            }
        }
        for i in &self.interactions {
            if i.trigger >= self.diseases.len() || i.target >= self.diseases.len() {
                return bad("interaction index out of range".into());
            }
            if !(i.multiplier.is_finite() && i.multiplier > 0.0) {
                return bad("interaction multipliers must be positive".into());
            }
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.age_bin_edges_days.len() - 1
    }

    pub fn disease_index(&self, category: &str) -> Option<usize> {
        self.diseases.iter().position(|d| d.category == category)
    }

    pub fn bin_of(&self, age_days: f64) -> Result<usize, SynthError> {
        let e = &self.age_bin_edges_days;
        if !(age_days >= 0.0 && age_days <= self.censor_age_days) {
            return Err(SynthError::AgeOutOfRange {
                age_days,
                max_days: self.censor_age_days,
            });
        }
        Ok(e.partition_point(|&x| x <= age_days).saturating_sub(1).min(e.len() - 2))
    }

    /// Targets of at least one interaction.
    pub fn interaction_targets(&self) -> BTreeSet<usize> {
        self.interactions.iter().map(|i| i.target).collect()
    }

    /// Diseases that are neither interaction targets nor sex-modified.
    pub fn age_driven(&self) -> BTreeSet<usize> {
        let targets = self.interaction_targets();
        (0..self.diseases.len())
            .filter(|i| !targets.contains(i))
            .collect()
    }

    /// SHA-256 over the canonical JSON encoding of the resolved spec.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn rate_in_bin(&self, d: usize, bin: usize, history: &[bool], sex: Sex) -> f64 {
        if history[d] {
            return 0.0;
        }
        let dh = &self.diseases[d];
        let mut r = dh.baseline[bin];
        if let Some(m) = dh.sex_multiplier {
            r *= m[sex.index()];
        }
        for i in &self.interactions {
            if i.target == d && history[i.trigger] && i.sex.is_none_or(|s| s == sex) {
                r *= i.multiplier;
            }
        }
        r
    }

    pub fn death_rate(&self, age_days: f64) -> Result<f64, SynthError> {
        Ok(self.death_baseline[self.bin_of(age_days)?])
    }
}

/// Per-disease first-occurrence rates (events/day), in spec order, for a
/// patient with the given prior categories. Diseases already in the history
/// have rate 0.
pub fn true_disease_rate<S: AsRef<str>>(
    spec: &HazardSpec,
    history: &[S],
    sex: Sex,
    age_days: f64,
) -> Result<Vec<f64>, SynthError> {
    let bin = spec.bin_of(age_days)?;
    let mut had = vec![false; spec.diseases.len()];
    for c in history {
        if let Some(i) = spec.disease_index(c.as_ref()) {
            had[i] = true;
        }
    }
    Ok((0..spec.diseases.len())
        .map(|d| spec.rate_in_bin(d, bin, &had, sex))
        .collect())
}

// ---------------------------------------------------------------------------
// Sampling

const SMOKING_P: [f64; 4] = [0.15, 0.25, 0.45, 0.15];
const ALCOHOL_P: [f64; 3] = [0.45, 0.35, 0.20];

fn categorical(rng: &mut ChaCha8Rng, p: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

fn exp_draw(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}

/// Outcome of one simulation attempt. `record` is `None` when the draw had
/// no disease event and was rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientDraw {
    pub record: Option<PatientRecord>,
    /// Continuous first-occurrence times (days) per disease, for diagnostics.
    pub first_occurrence: Vec<Option<f64>>,
    pub end_age_days: f64,
}

impl PatientDraw {
    pub fn rejected(&self) -> bool {
        self.record.is_none()
    }
}

/// Simulates one life from birth to death or censoring.
pub fn sample_patient(spec: &HazardSpec, patient_id: &str, sex: Sex, seed: u64) -> PatientDraw {
    let mut rng = rng_from_seed(seed);
    let smoking = Smoking::ALL[categorical(&mut rng, &SMOKING_P)];
    let alcohol = Alcohol::ALL[categorical(&mut rng, &ALCOHOL_P)];

    let n = spec.diseases.len();
    let mut history = vec![false; n];
    let mut first: Vec<Option<f64>> = vec![None; n];
    let mut death: Option<f64> = None;
    let censor = spec.censor_age_days;
    let edges = &spec.age_bin_edges_days;
    let mut t = 0.0f64;
    let mut bin = 0usize;
    let mut rates = vec![0.0; n + 1];
    while t < censor {
        let bin_end = edges[bin + 1].min(censor);
        for (d, r) in rates.iter_mut().enumerate().take(n) {
            *r = spec.rate_in_bin(d, bin, &history, sex);
        }
        rates[n] = spec.death_baseline[bin];
        let total: f64 = rates.iter().sum();
        let wait = if total > 0.0 {
            exp_draw(&mut rng, total)
        } else {
            f64::INFINITY
        };
        if t + wait >= bin_end {
            t = bin_end;
            bin += 1;
            if bin >= spec.n_bins() {
                break;
            }
            continue;
        }
        t += wait;
        let mut u = rng.random::<f64>() * total;
        let mut which = n;
        for (i, r) in rates.iter().enumerate() {
            if u < *r {
                which = i;
                break;
            }
            u -= r;
        }
        if which == n || rates[which] == 0.0 {
            // numerical spill-over lands on the last non-zero rate
            which = rates.iter().rposition(|r| *r > 0.0).unwrap_or(n);
        }
        if which == n {
            death = Some(t);
            break;
        }
        history[which] = true;
        first[which] = Some(t);
    }
    let end = death.unwrap_or(censor);

    let mut events: Vec<Event> = Vec::new();
    for d in 0..n {
        let Some(t0) = first[d] else { continue };
        let cat = &spec.diseases[d].category;
        events.push(Event::icd10(t0.floor() as u32, cat.clone()));
        let rr = spec.diseases[d].recurrence_rate;
        if rr > 0.0 {
            let mut s = t0;
            loop {
                s += exp_draw(&mut rng, rr);
                if s >= end {
                    break;
                }
                events.push(Event::icd10(s.floor() as u32, cat.clone()));
            }
        }
    }
    events.sort_by(|a, b| (a.age_days(), a.code()).cmp(&(b.age_days(), b.code())));

    let record = (!events.is_empty()).then(|| PatientRecord {
        patient_id: patient_id.to_string(),
        sex,
        smoking,
        alcohol,
        events,
        death_age_days: death.map(|d| d.floor() as u32),
    });
    PatientDraw {
        record,
        first_occurrence: first,
        end_age_days: end,
    }
}

pub const MAX_ATTEMPTS: usize = 10_000;

pub fn patient_id_for(index: usize) -> String {
    format!("P{index:06}")
}

/// Sex and attempt seeds for the `index`-th patient of a cohort.
pub fn patient_sex(spec: &HazardSpec, seed: u64, index: usize) -> Sex {
    let mut rng = rng_from_seed(derive_index_seed(seed, index as u64));
    if rng.random::<f64>() < spec.female_fraction {
        Sex::F
    } else {
        Sex::M
    }
}

pub fn attempt_seed(seed: u64, index: usize, attempt: usize) -> u64 {
    derive_index_seed(derive_index_seed(seed, index as u64), attempt as u64 + 1)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCount {
    pub patients: usize,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub seed: u64,
    pub n_patients: usize,
    pub spec_digest: String,
    pub rejected_draws: usize,
    pub deaths: usize,
    pub counts: BTreeMap<String, CategoryCount>,
}

/// Draws `n_patients` valid records; empty draws are rejected and redrawn.
pub fn sample_cohort(
    spec: &HazardSpec,
    n_patients: usize,
    seed: u64,
) -> Result<(Vec<PatientRecord>, CohortManifest), SynthError> {
    assert!(n_patients >= 1, "n_patients must be at least 1");
    spec.validate()?;
    let draws: Vec<Result<(PatientRecord, usize), SynthError>> = (0..n_patients)
        .into_par_iter()
        .map(|i| {
            let sex = patient_sex(spec, seed, i);
            let id = patient_id_for(i);
            for attempt in 0..MAX_ATTEMPTS {
                let d = sample_patient(spec, &id, sex, attempt_seed(seed, i, attempt));
                if let Some(r) = d.record {
                    return Ok((r, attempt));
                }
            }
            Err(SynthError::DegenerateSpec(MAX_ATTEMPTS))
        })
        .collect();
    let mut records = Vec::with_capacity(n_patients);
    let mut rejected = 0;
    for d in draws {
        let (r, rej) = d?;
        rejected += rej;
        records.push(r);
    }
    let mut counts: BTreeMap<String, CategoryCount> = spec
        .diseases
        .iter()
        .map(|d| (d.category.clone(), CategoryCount::default()))
        .collect();
    for r in &records {
        let mut seen = BTreeSet::new();
        for e in &r.events {
            let c = counts.entry(e.code().to_string()).or_default();
            c.records += 1;
            if seen.insert(e.code()) {
                c.patients += 1;
            }
        }
    }
    let manifest = CohortManifest {
        seed,
        n_patients,
        spec_digest: spec.digest(),
        rejected_draws: rejected,
        deaths: records.iter().filter(|r| r.death_age_days.is_some()).count(),
        counts,
    };
    Ok((records, manifest))
}

pub const DEMO_SPEC_TOML: &str = include_str!("../data/demo_spec.toml");

#[cfg(test)]
mod tests {
    use super::*;

    fn single(rate_per_day: f64, censor: f64) -> HazardSpec {
        HazardSpec {
            age_bin_edges_days: vec![0.0, censor],
            censor_age_days: censor,
            diseases: vec![DiseaseHazard {
                category: "A01".into(),
                baseline: vec![rate_per_day],
                sex_multiplier: None,
                recurrence_rate: 0.0,
            }],
            interactions: vec![],
            death_baseline: vec![0.0],
            female_fraction: 0.5,
        }
    }

    fn pair(mult: f64) -> HazardSpec {
        HazardSpec {
            age_bin_edges_days: vec![0.0, 10_000.0],
            censor_age_days: 10_000.0,
            diseases: vec![
                DiseaseHazard {
                    category: "A01".into(),
                    baseline: vec![2e-4],
                    sex_multiplier: None,
                    recurrence_rate: 0.0,
                },
                DiseaseHazard {
                    category: "B01".into(),
                    baseline: vec![1e-4],
                    sex_multiplier: None,
                    recurrence_rate: 0.0,
                },
            ],
            interactions: vec![Interaction {
                trigger: 0,
                target: 1,
                multiplier: mult,
                sex: None,
            }],
            death_baseline: vec![0.0],
            female_fraction: 0.5,
        }
    }

    #[test]
    fn rate_examples() {
        let spec = pair(4.0);
        let r = true_disease_rate(&spec, &["A01"], Sex::F, 100.0).unwrap();
        assert!((r[1] - 4e-4).abs() < 1e-18);
        assert_eq!(r[0], 0.0);
        let r = true_disease_rate(&spec, &["B01"], Sex::F, 100.0).unwrap();
        assert_eq!(r[1], 0.0);
        let r = true_disease_rate::<&str>(&spec, &[], Sex::M, 100.0).unwrap();
        assert_eq!(r, vec![2e-4, 1e-4]);
        assert!(matches!(
            true_disease_rate::<&str>(&spec, &[], Sex::M, 20_000.0),
            Err(SynthError::AgeOutOfRange { .. })
        ));
    }

    #[test]
    fn sex_restricted_interaction() {
        let mut spec = pair(4.0);
        spec.interactions[0].sex = Some(Sex::F);
        spec.diseases[1].sex_multiplier = Some([1.0, 2.0]);
        let f = true_disease_rate(&spec, &["A01"], Sex::F, 1.0).unwrap();
        let m = true_disease_rate(&spec, &["A01"], Sex::M, 1.0).unwrap();
        assert!((f[1] - 4e-4).abs() < 1e-18);
        assert!((m[1] - 2e-4).abs() < 1e-18);
    }

    #[test]
    fn zero_rates_reject_every_draw() {
        let spec = single(0.0, 1000.0);
        for seed in 0..20 {
            assert!(sample_patient(&spec, "p", Sex::F, seed).rejected());
        }
        assert_eq!(sample_cohort(&spec, 1, 0).unwrap_err(), SynthError::DegenerateSpec(MAX_ATTEMPTS));
    }

    #[test]
    fn no_event_probability_matches_closed_form() {
        let lambda = 1e-4;
        let horizon = 10_000.0;
        let spec = single(lambda, horizon);
        let n = 20_000;
        let none = (0..n)
            .filter(|&s| sample_patient(&spec, "p", Sex::F, s as u64).rejected())
            .count();
        let p = (-lambda * horizon).exp();
        let freq = none as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((freq - p).abs() < 3.0 * se, "freq {freq} vs {p} (se {se})");
    }

    #[test]
    fn interaction_multiplies_incidence() {
        // Person-time estimate of the target rate before and after the trigger.
        let spec = pair(4.0);
        let (mut ev_pre, mut pt_pre, mut ev_post, mut pt_post) = (0.0, 0.0, 0.0, 0.0);
        for s in 0..20_000u64 {
            let d = sample_patient(&spec, "p", Sex::F, s);
            let trig = d.first_occurrence[0].unwrap_or(f64::INFINITY);
            let end = d.first_occurrence[1].unwrap_or(d.end_age_days);
            pt_pre += end.min(trig);
            if end > trig {
                pt_post += end - trig;
            }
            if let Some(t) = d.first_occurrence[1] {
                if t < trig {
                    ev_pre += 1.0;
                } else {
                    ev_post += 1.0;
                }
            }
        }
        let pre = ev_pre / pt_pre;
        let post = ev_post / pt_post;
        let ratio = post / pre;
        // delta-method CI on the log rate ratio
        let se = (1.0 / ev_pre + 1.0 / ev_post).sqrt();
        assert!((ratio.ln() - 4f64.ln()).abs() < 3.0 * se, "ratio {ratio}");
        assert!((pre - 1e-4).abs() / 1e-4 < 3.0 / ev_pre.sqrt());
    }

    #[test]
    fn cohort_is_deterministic_and_consistent() {
        let spec = HazardSpec::demo();
        let (a, ma) = sample_cohort(&spec, 50, 7).unwrap();
        let (b, mb) = sample_cohort(&spec, 50, 7).unwrap();
        assert_eq!(crate::jsonl::to_jsonl_string(&a), crate::jsonl::to_jsonl_string(&b));
        assert_eq!(ma, mb);
        let total: usize = ma.counts.values().map(|c| c.records).sum();
        assert_eq!(total, a.iter().map(|r| r.events.len()).sum::<usize>());
        for r in &a {
            r.validate().unwrap();
        }

        let (one, _) = sample_cohort(&spec, 1, 7).unwrap();
        let sex = patient_sex(&spec, 7, 0);
        let mut k = 0;
        let direct = loop {
            if let Some(r) = sample_patient(&spec, &patient_id_for(0), sex, attempt_seed(7, 0, k)).record {
                break r;
            }
            k += 1;
        };
        assert_eq!(one, vec![direct]);
    }

    #[test]
    fn digest_tracks_spec_changes() {
        let a = HazardSpec::demo();
        let mut b = a.clone();
        b.interactions[0].multiplier += 1.0;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest(), HazardSpec::demo().digest());
    }

    #[test]
    fn spec_file_validation() {
        let ok = r#"
            censor_age_days = 1000
            age_bin_edges_days = [0, 500, 1000]
            death = [0.0, 0.001]
            [[disease]]
            category = "A01"
            rate = { constant = 0.001 }
            [[disease]]
            category = "B02"
            rate = [0.0, 0.002]
            sex_multiplier = { M = 2.0 }
            [[interaction]]
            trigger = "A01"
            target = "B02"
            multiplier = 4.0
            sex = "F"
        "#;
        let s = HazardSpec::from_toml(ok).unwrap();
        assert_eq!(s.diseases[1].sex_multiplier, Some([1.0, 2.0]));
        assert_eq!(s.interactions[0].sex, Some(Sex::F));
        assert_eq!(s.bin_of(500.0).unwrap(), 1);
        assert_eq!(s.bin_of(1000.0).unwrap(), 1);

        for bad in [
            ok.replace("multiplier = 4.0", "multiplier = 0.0"),
            ok.replace("[0, 500, 1000]", "[0, 500]"),
            ok.replace("[0.0, 0.002]", "[0.0, -0.002]"),
            ok.replace("target = \"B02\"", "target = \"C03\""),
            ok.replace("category = \"A01\"", "category = \"A01\"\nbogus = 1"),
        ] {
            assert!(HazardSpec::from_toml(&bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn demo_spec_shape() {
        let s = HazardSpec::demo();
        assert_eq!(s.diseases.len(), 20);
        assert!(s.interactions.len() >= 3);
        assert!(s.interactions.iter().all(|i| i.multiplier >= 4.0));
    }
}
