use std::collections::{BTreeMap, BTreeSet};

use super::{StateSpace, VisitRecord};
use crate::error::Result;

/// Counts per bin; integer-valued histograms use `lower == upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub name: String,
    pub bins: Vec<(f64, f64, u64)>,
}

impl Histogram {
    fn integer(name: &str, values: impl IntoIterator<Item = u64>) -> Self {
        let mut counts = BTreeMap::new();
        for v in values {
            *counts.entry(v).or_insert(0u64) += 1;
        }
        Histogram {
            name: name.to_string(),
            bins: counts
                .into_iter()
                .map(|(v, c)| (v as f64, v as f64, c))
                .collect(),
        }
    }

    fn binned(name: &str, values: impl IntoIterator<Item = f64>, width: f64) -> Self {
        let mut counts = BTreeMap::new();
        for v in values {
            *counts.entry((v / width).floor() as i64).or_insert(0u64) += 1;
        }
        Histogram {
            name: name.to_string(),
            bins: counts
                .into_iter()
                .map(|(b, c)| (b as f64 * width, (b + 1) as f64 * width, c))
                .collect(),
        }
    }

    pub fn total(&self) -> u64 {
        self.bins.iter().map(|b| b.2).sum()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["lower", "upper", "count"])?;
        for (lo, hi, c) in &self.bins {
            out.write_record([lo.to_string(), hi.to_string(), c.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Observation-pattern histograms of a visit file.
#[derive(Debug, Clone)]
pub struct ObservationPatterns {
    pub patients_per_practice: Histogram,
    pub courses_per_patient: Histogram,
    pub followup_per_course: Histogram,
    pub gap_times: Histogram,
}

/// Follow-up lengths and gap times are binned with width `bin_days`.
pub fn observation_patterns(
    visits: &[VisitRecord],
    space: &StateSpace,
    bin_days: f64,
) -> Result<ObservationPatterns> {
    let courses = super::transitions::group_courses(visits, space)?;
    let mut patients: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut courses_of: BTreeMap<(&str, &str), u64> = BTreeMap::new();
    let mut followup = Vec::with_capacity(courses.len());
    let mut gaps = Vec::new();
    for c in &courses {
        let first = c.visits[0];
        patients
            .entry(&first.practice_id)
            .or_default()
            .insert(&first.patient_id);
        *courses_of
            .entry((&first.practice_id, &first.patient_id))
            .or_insert(0) += 1;
        followup.push(c.visits.last().unwrap().day - first.day);
        gaps.extend(c.visits.windows(2).map(|w| w[1].day - w[0].day));
    }
    Ok(ObservationPatterns {
        patients_per_practice: Histogram::integer(
            "patients_per_practice",
            patients.values().map(|p| p.len() as u64),
        ),
        courses_per_patient: Histogram::integer("courses_per_patient", courses_of.into_values()),
        followup_per_course: Histogram::binned("followup_per_course", followup, bin_days),
        gap_times: Histogram::binned("gap_times", gaps, bin_days),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::Covariates;

    #[test]
    fn histograms_conserve_counts() {
        let v = |g: &str, i: &str, j: u32, k: u32, d: f64| VisitRecord {
            practice_id: g.into(),
            patient_id: i.into(),
            course: j,
            visit: k,
            day: d,
            state: 1,
            covariates: Covariates::new(),
        };
        let visits = vec![
            v("a", "1", 1, 1, 0.0),
            v("a", "1", 1, 2, 45.0),
            v("a", "1", 2, 1, 0.0),
            v("a", "2", 1, 1, 0.0),
            v("b", "3", 1, 1, 0.0),
            v("b", "3", 1, 2, 10.0),
            v("b", "3", 1, 3, 70.0),
        ];
        let p = observation_patterns(&visits, &StateSpace::default(), 30.0).unwrap();
        assert_eq!(p.patients_per_practice.bins, vec![(1.0, 1.0, 1), (2.0, 2.0, 1)]);
        assert_eq!(p.courses_per_patient.total(), 3);
        assert_eq!(p.followup_per_course.total(), 4);
        assert_eq!(p.gap_times.total(), 3);
        assert_eq!(p.gap_times.bins, vec![(0.0, 30.0, 1), (30.0, 60.0, 1), (60.0, 90.0, 1)]);
    }
}
