//! Age/sex incidence baseline in one-year age cells.

use crate::record::Sex;
use crate::sequence::TokenSequence;
use crate::vocab::predictable_index;
use crate::DAYS_PER_YEAR;

use super::scorer::{ScoreVector, Scorer};
use super::EvalError;

pub const MAX_AGE_YEARS: usize = 110;

/// Smoothed first-occurrence incidence per (sex, class, year of age), in
/// events per person-year.
#[derive(Debug, Clone, PartialEq)]
pub struct DemographicBaseline {
    n_classes: usize,
    rates: Vec<f64>,
}

impl DemographicBaseline {
    fn idx(&self, sex: Sex, class: usize, year: usize) -> usize {
        (sex.index() * self.n_classes + class) * (MAX_AGE_YEARS + 1) + year
    }

    pub fn rate_per_year(&self, class: usize, sex: Sex, age_days: f64) -> f64 {
        self.rates[self.idx(sex, class, year_of(age_days))]
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }
}

fn year_of(age_days: f64) -> usize {
    ((age_days.max(0.0) / DAYS_PER_YEAR).floor() as usize).min(MAX_AGE_YEARS)
}

/// Adds `sign` × the person-years spent in each one-year cell over [0, end].
fn add_exposure(cells: &mut [f64], end_days: f64, sign: f64) {
    let end = end_days.max(0.0) / DAYS_PER_YEAR;
    let full = (end.floor() as usize).min(MAX_AGE_YEARS);
    for c in cells.iter_mut().take(full) {
        *c += sign;
    }
    // remaining time lands in the cell containing `end` (or the open last cell)
    cells[full] += sign * (end - full as f64);
}

/// Incidence of each class among `train` patients, with exposure from birth
/// to the first occurrence or the last recorded age, smoothed as
/// `(events + 0.5) / (person-years + 1)`.
pub fn demographic_baseline(train: &[TokenSequence], n_classes: usize) -> DemographicBaseline {
    let cells = MAX_AGE_YEARS + 1;
    let mut base = vec![vec![0.0; cells]; 2];
    let mut adj = vec![0.0; 2 * n_classes * cells];
    let mut events = vec![0.0; 2 * n_classes * cells];
    let mut seen = vec![false; n_classes];
    for s in train {
        if s.is_empty() {
            continue;
        }
        let sx = s.sex().index();
        let last = f64::from(*s.ages.iter().max().expect("non-empty"));
        add_exposure(&mut base[sx], last, 1.0);
        seen.fill(false);
        for (i, &t) in s.token_ids.iter().enumerate() {
            let Some(k) = predictable_index(t) else { continue };
            if k >= n_classes || seen[k] {
                continue;
            }
            seen[k] = true;
            let age = f64::from(s.ages[i]);
            let off = (sx * n_classes + k) * cells;
            events[off + year_of(age)] += 1.0;
            let row = &mut adj[off..off + cells];
            add_exposure(row, last, -1.0);
            add_exposure(row, age, 1.0);
        }
    }
    let mut rates = vec![0.0; 2 * n_classes * cells];
    for sx in 0..2 {
        for k in 0..n_classes {
            let off = (sx * n_classes + k) * cells;
            for y in 0..cells {
                let py = (base[sx][y] + adj[off + y]).max(0.0);
                rates[off + y] = (events[off + y] + 0.5) / (py + 1.0);
            }
        }
    }
    DemographicBaseline { n_classes, rates }
}

impl Scorer for DemographicBaseline {
    fn score_positions(&self, seq: &TokenSequence, positions: &[usize]) -> Result<Vec<ScoreVector>, EvalError> {
        let sex = seq.sex();
        Ok(positions
            .iter()
            .map(|&p| {
                let age = f64::from(seq.ages[p]);
                let per_year: Vec<f64> = (0..self.n_classes).map(|k| self.rate_per_year(k, sex, age)).collect();
                ScoreVector {
                    rates: per_year.iter().map(|r| r / DAYS_PER_YEAR).collect(),
                    next_event: per_year,
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::Flag;

    #[test]
    fn exposure_cells() {
        let mut c = vec![0.0; MAX_AGE_YEARS + 1];
        add_exposure(&mut c, 2.5 * DAYS_PER_YEAR, 1.0);
        assert_eq!(&c[..4], &[1.0, 1.0, 0.5, 0.0]);
        add_exposure(&mut c, 200.0 * DAYS_PER_YEAR, 1.0);
        assert!((c[MAX_AGE_YEARS] - 90.0).abs() < 1e-9);
    }

    #[test]
    fn rate_definition() {
        // 1,000 women observed over year 50; 10 have class 1 at the very end of it
        let y = DAYS_PER_YEAR;
        let mut cohort = Vec::new();
        for i in 0..1000 {
            let mut s = TokenSequence {
                patient_id: format!("p{i}"),
                token_ids: vec![2, 6, 9, 13],
                ages: vec![0, 0, 0, (51.0 * y) as u32],
                flags: vec![Flag::StaticOrNoEvent, Flag::StaticOrNoEvent, Flag::StaticOrNoEvent, Flag::NewOnset],
                target_mask: vec![false, false, false, true],
            };
            if i < 10 {
                s.token_ids[3] = 12;
                s.ages[3] = (51.0 * y) as u32 - 1;
            }
            cohort.push(s);
        }
        let b = demographic_baseline(&cohort, 3);
        let r = b.rate_per_year(1, Sex::F, 50.5 * y);
        // (10 + 0.5) / (≈1000 person-years + 1)
        assert!((r - 10.5 / 1001.0).abs() < 1e-4, "{r}");
        let unseen = b.rate_per_year(0, Sex::F, 50.5 * y);
        let end = f64::from((51.0 * y) as u32);
        let py = 990.0 * (end / y - 50.0) + 10.0 * ((end - 1.0) / y - 50.0);
        assert!((unseen - 0.5 / (py + 1.0)).abs() < 1e-12);
        assert!((b.rate_per_year(1, Sex::M, 50.5 * y) - 0.5).abs() < 1e-12);
    }
}
