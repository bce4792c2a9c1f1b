//! ICD-10 chapter lookup for 3-character categories.

use std::fmt;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Chapter {
    I,
    II,
    III,
    IV,
    V,
    VI,
    VII,
    VIII,
    IX,
    X,
    XI,
    XII,
    XIII,
    XIV,
    XV,
    XVI,
    XVII,
    XVIII,
    XIX,
    XX,
    XXI,
    XXII,
    Death,
}

impl Chapter {
    /// Chapter of a category such as `"I50"`; `"death"` maps to [`Chapter::Death`].
    pub fn of(label: &str) -> Option<Chapter> {
        if label == crate::vocab::DEATH_LABEL {
            return Some(Chapter::Death);
        }
        let b = label.as_bytes();
        if b.len() < 3 || !b[0].is_ascii_uppercase() {
            return None;
        }
        let letter = b[0];
        // second and third characters as a 0..99 number; letters sort after digits
        let num = if b[1].is_ascii_digit() && b[2].is_ascii_digit() {
            u32::from(b[1] - b'0') * 10 + u32::from(b[2] - b'0')
        } else if b[1].is_ascii_digit() {
            u32::from(b[1] - b'0') * 10 + 9
        } else {
            99
        };
        use Chapter::*;
        Some(match letter {
            b'A' | b'B' => I,
            b'C' => II,
            b'D' if num <= 48 => II,
            b'D' => III,
            b'E' => IV,
            b'F' => V,
            b'G' => VI,
            b'H' if num <= 59 => VII,
            b'H' => VIII,
            b'I' => IX,
            b'J' => X,
            b'K' => XI,
            b'L' => XII,
            b'M' => XIII,
            b'N' => XIV,
            b'O' => XV,
            b'P' => XVI,
            b'Q' => XVII,
            b'R' => XVIII,
            b'S' | b'T' => XIX,
            b'V' | b'W' | b'X' | b'Y' => XX,
            b'Z' => XXI,
            b'U' => XXII,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        use Chapter::*;
        match self {
            I => "I. Infectious Diseases",
            II => "II. Neoplasms",
            III => "III. Blood & Immune Disorders",
            IV => "IV. Metabolic Diseases",
            V => "V. Mental Disorders",
            VI => "VI. Nervous System Diseases",
            VII => "VII. Eye Diseases",
            VIII => "VIII. Ear Diseases",
            IX => "IX. Circulatory Diseases",
            X => "X. Respiratory Diseases",
            XI => "XI. Digestive Diseases",
            XII => "XII. Skin Diseases",
            XIII => "XIII. Musculoskeletal Diseases",
            XIV => "XIV. Genitourinary Diseases",
            XV => "XV. Pregnancy & Childbirth",
            XVI => "XVI. Perinatal Conditions",
            XVII => "XVII. Congenital Abnormalities",
            XVIII => "XVIII. Symptoms & Signs",
            XIX => "XIX. Injury & Poisoning",
            XX => "XX. External Causes",
            XXI => "XXI. Health Status Factors",
            XXII => "XXII. Special Purposes",
            Death => "Death",
        }
    }

    /// Whether outcomes in this chapter enter disease-level evaluation.
    /// Symptoms (R), injuries (S, T), external causes (V-Y), health-status
    /// factors (Z) and special-purpose codes (U) are excluded.
    pub fn is_evaluable(self) -> bool {
        !matches!(
            self,
            Chapter::XVIII | Chapter::XIX | Chapter::XX | Chapter::XXI | Chapter::XXII
        )
    }
}

impl fmt::Display for Chapter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
