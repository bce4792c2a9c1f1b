//! Raw longitudinal patient records (`patients.jsonl`).

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sex {
    F,
    M,
}

impl Sex {
    pub const ALL: [Sex; 2] = [Sex::F, Sex::M];

    pub fn as_str(self) -> &'static str {
        match self {
            Sex::F => "F",
            Sex::M => "M",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Smoking {
    Current,
    Former,
    Never,
    Unknown,
}

impl Smoking {
    pub const ALL: [Smoking; 4] = [
        Smoking::Current,
        Smoking::Former,
        Smoking::Never,
        Smoking::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Smoking::Current => "current",
            Smoking::Former => "former",
            Smoking::Never => "never",
            Smoking::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alcohol {
    Yes,
    No,
    Unknown,
}

impl Alcohol {
    pub const ALL: [Alcohol; 3] = [Alcohol::Yes, Alcohol::No, Alcohol::Unknown];

    pub fn as_str(self) -> &'static str {
        match self {
            Alcohol::Yes => "yes",
            Alcohol::No => "no",
            Alcohol::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodeSystem {
    Icd9,
    Icd10,
}

/// One dated diagnosis record, serialized as `[age_days, code, system]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event(pub u32, pub String, pub CodeSystem);

impl Event {
    pub fn new(age_days: u32, code: impl Into<String>, system: CodeSystem) -> Self {
        Event(age_days, code.into(), system)
    }

    pub fn icd10(age_days: u32, code: impl Into<String>) -> Self {
        Event::new(age_days, code, CodeSystem::Icd10)
    }

    pub fn age_days(&self) -> u32 {
        self.0
    }

    pub fn code(&self) -> &str {
        &self.1
    }

    pub fn system(&self) -> CodeSystem {
        self.2
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientRecord {
    pub patient_id: String,
    pub sex: Sex,
    pub smoking: Smoking,
    pub alcohol: Alcohol,
    pub events: Vec<Event>,
    #[serde(default)]
    pub death_age_days: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecordError {
    #[error("patient {0}: empty event history")]
    EmptyHistory(String),
    #[error("patient {patient}: event at age {event_age} after death at {death_age}")]
    EventAfterDeath {
        patient: String,
        event_age: u32,
        death_age: u32,
    },
}

impl PatientRecord {
    /// Checks the record-level invariants: non-empty history, no event after death.
    pub fn validate(&self) -> Result<(), RecordError> {
        if self.events.is_empty() {
            return Err(RecordError::EmptyHistory(self.patient_id.clone()));
        }
        if let Some(death) = self.death_age_days {
            if let Some(e) = self.events.iter().find(|e| e.age_days() > death) {
                return Err(RecordError::EventAfterDeath {
                    patient: self.patient_id.clone(),
                    event_age: e.age_days(),
                    death_age: death,
                });
            }
        }
        Ok(())
    }

    /// Last age at which the patient is known to be observed.
    pub fn last_observed_age(&self) -> u32 {
        let last_event = self.events.iter().map(Event::age_days).max().unwrap_or(0);
        self.death_age_days.map_or(last_event, |d| d.max(last_event))
    }

    /// Copy restricted to events at or before `age_days`; death is dropped
    /// unless it also falls on or before that age.
    pub fn truncated_at(&self, age_days: u32) -> PatientRecord {
        PatientRecord {
            patient_id: self.patient_id.clone(),
            sex: self.sex,
            smoking: self.smoking,
            alcohol: self.alcohol,
            events: self
                .events
                .iter()
                .filter(|e| e.age_days() <= age_days)
                .cloned()
                .collect(),
            death_age_days: self.death_age_days.filter(|&d| d <= age_days),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_field_layout() {
        let rec = PatientRecord {
            patient_id: "p1".into(),
            sex: Sex::F,
            smoking: Smoking::Never,
            alcohol: Alcohol::Unknown,
            events: vec![Event::new(12000, "428.0", CodeSystem::Icd9)],
            death_age_days: Some(20000),
        };
        let s = serde_json::to_string(&rec).unwrap();
        assert_eq!(
            s,
            r#"{"patient_id":"p1","sex":"F","smoking":"never","alcohol":"unknown","events":[[12000,"428.0","icd9"]],"death_age_days":20000}"#
        );
        let back: PatientRecord = serde_json::from_str(&s).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn rejects_unknown_fields_and_bad_order() {
        let bad = r#"{"patient_id":"p","sex":"F","smoking":"never","alcohol":"no","events":[],"extra":1}"#;
        assert!(serde_json::from_str::<PatientRecord>(bad).is_err());

        let rec = PatientRecord {
            patient_id: "p".into(),
            sex: Sex::M,
            smoking: Smoking::Current,
            alcohol: Alcohol::No,
            events: vec![Event::icd10(500, "I50")],
            death_age_days: Some(400),
        };
        assert!(matches!(
            rec.validate(),
            Err(RecordError::EventAfterDeath { .. })
        ));
    }
}
