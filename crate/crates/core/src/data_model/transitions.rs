use std::sync::Arc;

use super::{ModelSpec, State, StateSpace, TransitionRow, VisitRecord};
use crate::error::{Error, Result};
use crate::exec;

/// Encoded transitions plus the cluster bookkeeping needed for resampling.
#[derive(Debug, Clone)]
pub struct TransitionSet {
    /// The spec with categorical levels resolved against the input.
    pub spec: ModelSpec,
    /// Canonical order: practice, patient, course, visit.
    pub rows: Vec<TransitionRow>,
    /// Every practice present in the visits, sorted; includes practices that
    /// contribute no rows.
    pub practices: Vec<Arc<str>>,
    /// Courses with only their day-0 record (no observable transition).
    pub single_visit_courses: usize,
}

impl TransitionSet {
    pub fn rows_for(&self, origin: State) -> Vec<TransitionRow> {
        self.rows
            .iter()
            .filter(|r| r.origin == origin)
            .cloned()
            .collect()
    }
}

/// A validated course: indices into the visit slice in visit order.
pub(crate) struct Course<'a> {
    pub visits: Vec<&'a VisitRecord>,
}

fn malformed(v: &VisitRecord, message: impl Into<String>) -> Error {
    Error::MalformedData {
        practice: v.practice_id.clone(),
        patient: v.patient_id.clone(),
        course: v.course,
        message: message.into(),
    }
}

/// Groups visits into courses in canonical order and checks record invariants.
pub(crate) fn group_courses<'a>(
    visits: &'a [VisitRecord],
    space: &StateSpace,
) -> Result<Vec<Course<'a>>> {
    let mut sorted: Vec<&VisitRecord> = visits.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.practice_id, &a.patient_id, a.course, a.visit).cmp(&(
            &b.practice_id,
            &b.patient_id,
            b.course,
            b.visit,
        ))
    });
    let mut courses: Vec<Course> = Vec::new();
    for v in sorted {
        if !space.contains(v.state) {
            return Err(malformed(v, format!("unknown state {}", v.state)));
        }
        if !v.day.is_finite() || v.day < 0.0 {
            return Err(malformed(v, format!("invalid day {}", v.day)));
        }
        let same_course = courses.last().is_some_and(|c| {
            let last = c.visits[0];
            last.practice_id == v.practice_id
                && last.patient_id == v.patient_id
                && last.course == v.course
        });
        if same_course {
            let course = courses.last_mut().unwrap();
            let prev = *course.visits.last().unwrap();
            if prev.visit == v.visit {
                return Err(malformed(v, format!("visit {} appears twice", v.visit)));
            }
            if v.day < prev.day {
                return Err(malformed(
                    v,
                    format!(
                        "days are not increasing: visit {} on day {} follows visit {} on day {}",
                        v.visit, v.day, prev.visit, prev.day
                    ),
                ));
            }
            if space.is_absorbing(prev.state) {
                return Err(malformed(
                    v,
                    format!("visit {} follows absorbing state {}", v.visit, prev.state),
                ));
            }
            if prev.covariates != v.covariates {
                return Err(malformed(v, "covariates change within the course"));
            }
            course.visits.push(v);
        } else {
            if v.day != 0.0 {
                return Err(malformed(
                    v,
                    format!("course must start with a day-0 record, first day is {}", v.day),
                ));
            }
            courses.push(Course { visits: vec![v] });
        }
    }
    Ok(courses)
}

/// Pairs consecutive within-course visits into encoded transition rows.
pub fn build_transitions(visits: &[VisitRecord], spec: &ModelSpec) -> Result<TransitionSet> {
    let spec = spec.resolve(visits)?;
    let encoder = spec.encoder()?;
    let space = &spec.state_space;
    let courses = group_courses(visits, space)?;

    let mut practices: Vec<Arc<str>> = Vec::new();
    let mut patient_keys: Vec<(Arc<str>, Arc<str>)> = Vec::with_capacity(courses.len());
    for c in &courses {
        let v = c.visits[0];
        if practices.last().map(|p| &**p) != Some(v.practice_id.as_str()) {
            practices.push(Arc::from(v.practice_id.as_str()));
        }
        let practice = practices.last().unwrap().clone();
        let patient = match patient_keys.last() {
            Some((p, i)) if Arc::ptr_eq(p, &practice) && **i == *v.patient_id => i.clone(),
            _ => Arc::from(v.patient_id.as_str()),
        };
        patient_keys.push((practice, patient));
    }

    let per_course = exec::map_indexed(courses.len(), |ci| -> Result<Vec<TransitionRow>> {
        let course = &courses[ci];
        let (practice, patient) = &patient_keys[ci];
        let mut rows = Vec::with_capacity(course.visits.len().saturating_sub(1));
        for pair in course.visits.windows(2) {
            let (from, to) = (pair[0], pair[1]);
            if !space.is_origin(from.state) {
                continue;
            }
            let z = encoder
                .encode(from.state, from.course, from.day, to.day - from.day, &from.covariates)
                .map_err(|e| match e {
                    Error::Encoding(m) => Error::Encoding(format!(
                        "{m} (practice {}, patient {}, course {})",
                        from.practice_id, from.patient_id, from.course
                    )),
                    other => other,
                })?;
            rows.push(TransitionRow {
                origin: from.state,
                destination: to.state,
                z,
                practice_id: practice.clone(),
                patient_id: patient.clone(),
            });
        }
        Ok(rows)
    });
    let mut rows = Vec::new();
    for r in per_course {
        rows.extend(r?);
    }
    let single_visit_courses = courses.iter().filter(|c| c.visits.len() == 1).count();
    Ok(TransitionSet {
        spec,
        rows,
        practices,
        single_visit_courses,
    })
}

/// Observed origin × destination transition counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionCounts {
    pub origins: Vec<State>,
    pub states: Vec<State>,
    pub counts: Vec<Vec<u64>>,
}

impl TransitionCounts {
    pub fn get(&self, from: State, to: State) -> u64 {
        match (
            self.origins.iter().position(|&s| s == from),
            self.states.iter().position(|&s| s == to),
        ) {
            (Some(i), Some(j)) => self.counts[i][j],
            _ => 0,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["from_state".to_string()];
        header.extend(self.states.iter().map(|s| s.to_string()));
        out.write_record(&header)?;
        for (o, row) in self.origins.iter().zip(&self.counts) {
            let mut rec = vec![o.to_string()];
            rec.extend(row.iter().map(|c| c.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Counts consecutive within-course state pairs.
pub fn transition_matrix(visits: &[VisitRecord], space: &StateSpace) -> Result<TransitionCounts> {
    space.validate()?;
    let courses = group_courses(visits, space)?;
    let mut counts = vec![vec![0u64; space.states.len()]; space.origin_states.len()];
    for c in &courses {
        for pair in c.visits.windows(2) {
            if let (Some(i), Some(j)) = (
                space.origin_states.iter().position(|&s| s == pair[0].state),
                space.index_of(pair[1].state),
            ) {
                counts[i][j] += 1;
            }
        }
    }
    Ok(TransitionCounts {
        origins: space.origin_states.clone(),
        states: space.states.clone(),
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::Covariates;

    fn visit(practice: &str, patient: &str, course: u32, visit: u32, day: f64, state: State) -> VisitRecord {
        VisitRecord {
            practice_id: practice.into(),
            patient_id: patient.into(),
            course,
            visit,
            day,
            state,
            covariates: Covariates::new(),
        }
    }

    #[test]
    fn two_visits_make_one_row() {
        let visits = vec![visit("g", "i", 1, 1, 0.0, 1), visit("g", "i", 1, 2, 30.0, 2)];
        let set = build_transitions(&visits, &ModelSpec::default()).unwrap();
        assert_eq!(set.rows.len(), 1);
        let row = &set.rows[0];
        assert_eq!((row.origin, row.destination), (1, 2));
        assert_eq!(row.z[4], 1.0);
        assert_eq!(row.z[5], -4.0);
        assert!((row.z[7] - (31f64.ln() - 4.0)).abs() < 1e-15);
    }

    #[test]
    fn absorbing_arrival_ends_the_course() {
        let visits = vec![visit("g", "i", 1, 1, 0.0, 1), visit("g", "i", 1, 2, 10.0, 4)];
        let set = build_transitions(&visits, &ModelSpec::default()).unwrap();
        assert_eq!(set.rows.len(), 1);
        assert_eq!(set.rows[0].destination, 4);

        let mut bad = visits.clone();
        bad.push(visit("g", "i", 1, 3, 20.0, 1));
        assert!(matches!(
            build_transitions(&bad, &ModelSpec::default()),
            Err(Error::MalformedData { .. })
        ));
    }

    #[test]
    fn decreasing_days_name_the_course() {
        let visits = vec![
            visit("g7", "i3", 2, 1, 0.0, 1),
            visit("g7", "i3", 2, 2, 40.0, 2),
            visit("g7", "i3", 2, 3, 35.0, 2),
        ];
        match build_transitions(&visits, &ModelSpec::default()) {
            Err(Error::MalformedData {
                practice,
                patient,
                course,
                ..
            }) => assert_eq!((practice.as_str(), patient.as_str(), course), ("g7", "i3", 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn same_day_reassessment_is_accepted() {
        let visits = vec![
            visit("g", "i", 1, 1, 0.0, 1),
            visit("g", "i", 1, 2, 10.0, 1),
            visit("g", "i", 1, 3, 10.0, 2),
        ];
        let set = build_transitions(&visits, &ModelSpec::default()).unwrap();
        assert_eq!(set.rows[1].z[7], -4.0);
    }

    #[test]
    fn course_without_day_zero_is_rejected() {
        let visits = vec![visit("g", "i", 1, 1, 5.0, 1), visit("g", "i", 1, 2, 10.0, 2)];
        assert!(build_transitions(&visits, &ModelSpec::default()).is_err());
    }

    #[test]
    fn single_visit_courses_are_counted() {
        let visits = vec![
            visit("g", "i", 1, 1, 0.0, 1),
            visit("g", "i", 2, 1, 0.0, 1),
            visit("g", "i", 2, 2, 3.0, 3),
            visit("h", "k", 1, 1, 0.0, 2),
        ];
        let set = build_transitions(&visits, &ModelSpec::default()).unwrap();
        assert_eq!(set.rows.len(), 1);
        assert_eq!(set.single_visit_courses, 2);
        assert_eq!(set.practices.len(), 2);
    }

    #[test]
    fn input_order_does_not_matter() {
        let visits = vec![
            visit("g", "i", 1, 2, 30.0, 2),
            visit("g", "i", 1, 1, 0.0, 1),
            visit("g", "i", 1, 3, 50.0, 3),
        ];
        let set = build_transitions(&visits, &ModelSpec::default()).unwrap();
        let pairs: Vec<_> = set.rows.iter().map(|r| (r.origin, r.destination)).collect();
        assert_eq!(pairs, vec![(1, 2), (2, 3)]);
    }

    #[test]
    fn matrix_counts_pairs() {
        let visits = vec![
            visit("g", "i", 1, 1, 0.0, 1),
            visit("g", "i", 1, 2, 5.0, 2),
            visit("g", "i", 1, 3, 9.0, 2),
        ];
        let m = transition_matrix(&visits, &StateSpace::default()).unwrap();
        assert_eq!(m.get(1, 2), 1);
        assert_eq!(m.get(2, 2), 1);
        assert_eq!(m.total(), 2);
        let empty = transition_matrix(&[], &StateSpace::default()).unwrap();
        assert_eq!(empty.total(), 0);
        assert_eq!(empty.counts.len(), 3);
        assert_eq!(empty.counts[0].len(), 4);
    }

    #[test]
    fn matrix_csv_layout() {
        let visits = vec![visit("g", "i", 1, 1, 0.0, 1), visit("g", "i", 1, 2, 5.0, 4)];
        let m = transition_matrix(&visits, &StateSpace::default()).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "from_state,1,2,3,4\n1,0,0,0,1\n2,0,0,0,0\n3,0,0,0,0\n"
        );
    }
}
