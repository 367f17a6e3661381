use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::config::{SimConfig, N_COEF};
use crate::data_model::{
    CovariateValue, ModelSpec, TransitionRow, TransitionSet, VisitRecord,
};
use crate::error::Result;
use crate::estimator::ModelData;
use crate::exec;
use crate::rng::{derive_seed, substream, StreamRng};

pub const DOSE_LEVELS: [&str; 3] = ["low", "medium", "high"];
pub const CLASS_LEVELS: [&str; 2] = ["fumarate", "sulphate"];

const TAG_PRACTICES: u64 = 0x5052_4143;

/// Predictor vector of the simulation model for course `j`.
#[inline]
pub fn design_row(j: u32, log_gap: f64, dose: u8, sulphate: bool) -> [f64; N_COEF] {
    let mut z = [0.0; N_COEF];
    z[0] = 1.0;
    match j {
        0 | 1 => {}
        2 => z[1] = 1.0,
        3 => z[2] = 1.0,
        _ => z[3] = 1.0,
    }
    z[4] = log_gap;
    let s = sulphate as u8 as f64;
    match dose {
        1 => {
            z[5] = 1.0;
            z[8] = s;
        }
        2 => {
            z[6] = 1.0;
            z[9] = s;
        }
        _ => {}
    }
    z[7] = s;
    z
}

#[inline]
pub(crate) fn dot(a: &[f64; N_COEF], b: &[f64; N_COEF]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Course-level draws passed to a [`Sink`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct CourseInfo {
    pub patient: u32,
    pub course: u32,
    pub dose: u8,
    pub sulphate: bool,
    pub practice_effect: [f64; 2],
    pub patient_effect: [f64; 2],
    pub visits: u32,
}

impl CourseInfo {
    pub fn effects(&self) -> [f64; 2] {
        [
            self.practice_effect[0] + self.patient_effect[0],
            self.practice_effect[1] + self.patient_effect[1],
        ]
    }
}

/// Receives the generator's draws in order.
pub(crate) trait Sink {
    fn course(&mut self, info: &CourseInfo);
    /// `from` and `to` are 0 for state 1 and 1 for state 2.
    fn transition(&mut self, info: &CourseInfo, log_gap: f64, from: u8, to: u8);
}

/// Runs steps 1 to 8 for one practice on its own stream. `patients` maps the
/// drawn patient count (it lets the extreme-scale run inflate practices) and
/// `practice_effect` replaces the drawn practice intercepts when given. With
/// `strata`, patient intercepts are redrawn from that stream, stratified by
/// each patient's number of transitions (see [`stratified_normals`]); the
/// main stream is consumed exactly as without it.
pub(crate) fn walk_practice<S: Sink>(
    cfg: &SimConfig,
    rng: &mut StreamRng,
    patients: impl FnOnce(u32) -> u32,
    practice_effect: Option<[f64; 2]>,
    strata: Option<&mut StreamRng>,
    sink: &mut S,
) {
    let sizes = &cfg.sizes;
    let n = patients(sizes.patients_per_practice.sample(rng));
    let courses: Vec<u32> = (0..n).map(|_| sizes.courses_per_patient.sample(rng)).collect();
    let visits: Vec<Vec<u32>> = courses
        .iter()
        .map(|&c| (0..c).map(|_| sizes.sample_visits(rng)).collect())
        .collect();

    let z1: f64 = rng.sample(StandardNormal);
    let z2: f64 = rng.sample(StandardNormal);
    let practice_effect =
        practice_effect.unwrap_or([cfg.lambda[0] * z1, cfg.lambda[1] * z2]);
    let rho_c = (1.0 - cfg.rho * cfg.rho).max(0.0).sqrt();
    let mut normals: Vec<[f64; 2]> = (0..n)
        .map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)])
        .collect();
    if let Some(strata) = strata {
        let weights: Vec<f64> = visits
            .iter()
            .map(|v| v.iter().map(|&k| k as f64 - 1.0).sum())
            .collect();
        normals = stratified_normals(&weights, strata);
    }
    let patient_effects: Vec<[f64; 2]> = normals
        .iter()
        .map(|[a, b]| [cfg.sigma[0] * a, cfg.sigma[1] * (cfg.rho * a + rho_c * b)])
        .collect();

    let beta = [&cfg.coefficients.from_1, &cfg.coefficients.from_2];
    for (i, course_visits) in visits.iter().enumerate() {
        for (j, &k_max) in course_visits.iter().enumerate() {
            let u: f64 = rng.random();
            let dose = if u < cfg.dose_probs[0] {
                0
            } else if u < cfg.dose_probs[0] + cfg.dose_probs[1] {
                1
            } else {
                2
            };
            let sulphate = rng.random::<f64>() < cfg.sulphate_prob;
            let info = CourseInfo {
                patient: i as u32,
                course: j as u32 + 1,
                dose,
                sulphate,
                practice_effect,
                patient_effect: patient_effects[i],
                visits: k_max,
            };
            sink.course(&info);
            let effects = info.effects();
            let mut state = 0u8;
            for _ in 1..k_max {
                let e: f64 = rng.sample(StandardNormal);
                let log_gap = cfg.log_gap_mean + cfg.log_gap_sd * e;
                let z = design_row(info.course, log_gap, dose, sulphate);
                let s = state as usize;
                let p = logistic(dot(beta[s], &z) + effects[s]);
                let next = (rng.random::<f64>() < p) as u8;
                sink.transition(&info, log_gap, state, next);
                state = next;
            }
        }
    }
}

/// Independent standard normal pairs whose weighted empirical distribution is
/// stratified in each coordinate. Units are laid out in random order on the
/// unit interval with widths proportional to `weights`; a common uniform
/// rotation keeps every unit's position exactly uniform.
pub(crate) fn stratified_normals(weights: &[f64], rng: &mut StreamRng) -> Vec<[f64; 2]> {
    use rand::seq::SliceRandom;
    use statrs::distribution::{ContinuousCDF, Normal};
    let n = weights.len();
    let total: f64 = weights.iter().sum();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut out = vec![[0.0; 2]; n];
    for d in 0..2 {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let shift: f64 = rng.random();
        let mut start = 0.0;
        for &i in &order {
            let width = if total > 0.0 { weights[i] / total } else { 1.0 / n as f64 };
            let u = (start + width * rng.random::<f64>() + shift).fract();
            out[i][d] = normal.inverse_cdf(u.clamp(1e-300, 1.0 - 1e-16));
            start += width;
        }
    }
    out
}

/// One simulated course of treatment.
#[derive(Debug, Clone, PartialEq)]
pub struct SimCourse {
    pub practice: u32,
    pub patient: u32,
    pub course: u32,
    /// 0 low, 1 medium, 2 high.
    pub dose: u8,
    pub sulphate: bool,
    pub practice_effect: [f64; 2],
    pub patient_effect: [f64; 2],
    /// Log gap times as drawn; one per transition.
    pub log_gaps: Vec<f64>,
    /// States at each visit, 1 or 2.
    pub states: Vec<u8>,
}

impl SimCourse {
    /// Visit days: 0 at the first visit, then cumulative gap times.
    pub fn days(&self) -> Vec<f64> {
        let mut day = 0.0;
        let mut out = Vec::with_capacity(self.states.len());
        out.push(0.0);
        for lg in &self.log_gaps {
            day += lg.exp();
            out.push(day);
        }
        out
    }

    pub fn n_transitions(&self) -> usize {
        self.log_gaps.len()
    }
}

struct Collect {
    practice: u32,
    courses: Vec<SimCourse>,
}

impl Sink for Collect {
    fn course(&mut self, info: &CourseInfo) {
        self.courses.push(SimCourse {
            practice: self.practice,
            patient: info.patient,
            course: info.course,
            dose: info.dose,
            sulphate: info.sulphate,
            practice_effect: info.practice_effect,
            patient_effect: info.patient_effect,
            log_gaps: Vec::with_capacity(info.visits as usize - 1),
            states: vec![1],
        });
    }

    fn transition(&mut self, _: &CourseInfo, log_gap: f64, _: u8, to: u8) {
        let c = self.courses.last_mut().expect("course precedes transitions");
        c.log_gaps.push(log_gap);
        c.states.push(to + 1);
    }
}

/// A generated dataset: practices, each with its patients' courses.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    pub practices: u32,
    /// Patients drawn per practice.
    pub patients: Vec<u32>,
    pub courses: Vec<SimCourse>,
}

fn practice_id(g: u32) -> String {
    format!("g{:04}", g + 1)
}

fn patient_id(g: u32, i: u32) -> String {
    format!("g{:04}-{:05}", g + 1, i + 1)
}

impl SimDataset {
    pub fn n_transitions(&self) -> usize {
        self.courses.iter().map(SimCourse::n_transitions).sum()
    }

    pub fn n_visits(&self) -> usize {
        self.courses.iter().map(|c| c.states.len()).sum()
    }

    pub fn to_visits(&self) -> Vec<VisitRecord> {
        let mut out = Vec::with_capacity(self.n_visits());
        for c in &self.courses {
            let mut covs = BTreeMap::new();
            covs.insert(
                "dose".to_string(),
                CovariateValue::Categorical(DOSE_LEVELS[c.dose as usize].into()),
            );
            covs.insert(
                "class".to_string(),
                CovariateValue::Categorical(CLASS_LEVELS[c.sulphate as usize].into()),
            );
            let practice = practice_id(c.practice);
            let patient = patient_id(c.practice, c.patient);
            for (k, (day, &state)) in c.days().into_iter().zip(&c.states).enumerate() {
                out.push(VisitRecord {
                    practice_id: practice.clone(),
                    patient_id: patient.clone(),
                    course: c.course,
                    visit: k as u32 + 1,
                    day,
                    state: state as u32,
                    covariates: covs.clone(),
                });
            }
        }
        out
    }

    /// Transition rows encoded exactly as the data model would encode
    /// [`Self::to_visits`] under [`ModelSpec::simulation_design`].
    pub fn to_rows(&self) -> Vec<TransitionRow> {
        let mut out = Vec::with_capacity(self.n_transitions());
        let mut practice: Option<(u32, Arc<str>)> = None;
        for c in &self.courses {
            let pid = match &practice {
                Some((g, id)) if *g == c.practice => id.clone(),
                _ => {
                    let id: Arc<str> = practice_id(c.practice).into();
                    practice = Some((c.practice, id.clone()));
                    id
                }
            };
            let patient: Arc<str> = patient_id(c.practice, c.patient).into();
            let days = c.days();
            for k in 0..c.n_transitions() {
                let v = days[k + 1] - days[k];
                out.push(TransitionRow {
                    origin: c.states[k] as u32,
                    destination: c.states[k + 1] as u32,
                    z: design_row(c.course, v.ln(), c.dose, c.sulphate).to_vec(),
                    practice_id: pid.clone(),
                    patient_id: patient.clone(),
                });
            }
        }
        out
    }

    /// Model data with every practice as a cluster, including practices
    /// that contributed no transitions.
    pub fn to_model_data(&self) -> Result<ModelData> {
        let clusters: Vec<Arc<str>> = (0..self.practices).map(|g| practice_id(g).into()).collect();
        ModelData::with_clusters(&self.to_rows(), &ModelSpec::simulation_design(), clusters)
    }

    /// The same data taken through the generic record pipeline.
    pub fn to_transition_set(&self) -> Result<TransitionSet> {
        crate::data_model::build_transitions(&self.to_visits(), &ModelSpec::simulation_design())
    }
}

pub(crate) fn practice_stream(seed: u64, g: u64) -> StreamRng {
    substream(derive_seed(seed, TAG_PRACTICES), g)
}

/// Generates one dataset. Each practice draws from its own stream, so the
/// result does not depend on the thread count.
pub fn simulate(cfg: &SimConfig) -> Result<SimDataset> {
    cfg.validate()?;
    let parts = exec::map_indexed(cfg.practices as usize, |g| {
        let mut rng = practice_stream(cfg.seed, g as u64);
        let mut sink = Collect { practice: g as u32, courses: Vec::new() };
        let mut n = 0;
        walk_practice(
            cfg,
            &mut rng,
            |drawn| {
                n = drawn;
                drawn
            },
            None,
            None,
            &mut sink,
        );
        (n, sink.courses)
    });
    let mut patients = Vec::with_capacity(parts.len());
    let mut courses = Vec::new();
    for (n, c) in parts {
        patients.push(n);
        courses.extend(c);
    }
    Ok(SimDataset { practices: cfg.practices, patients, courses })
}

/// Visit records of one generated dataset.
pub fn generate(cfg: &SimConfig) -> Result<Vec<VisitRecord>> {
    Ok(simulate(cfg)?.to_visits())
}

/// One generated transition with everything that determined its law.
#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptRow {
    pub origin: u8,
    pub destination: u8,
    pub z: [f64; N_COEF],
    /// Summed practice and patient intercepts for both models.
    pub effects: [f64; 2],
}

/// The generator's own record of every transition it drew.
pub fn transcript(data: &SimDataset) -> Vec<TranscriptRow> {
    let mut out = Vec::with_capacity(data.n_transitions());
    for c in &data.courses {
        let effects = [
            c.practice_effect[0] + c.patient_effect[0],
            c.practice_effect[1] + c.patient_effect[1],
        ];
        for (k, lg) in c.log_gaps.iter().enumerate() {
            out.push(TranscriptRow {
                origin: c.states[k],
                destination: c.states[k + 1],
                z: design_row(c.course, *lg, c.dose, c.sulphate),
                effects,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::CovariateValue;

    #[test]
    fn design_row_matches_the_encoder() {
        let enc = ModelSpec::simulation_design().encoder().unwrap();
        for j in 1..6 {
            for dose in 0..3u8 {
                for sulphate in [false, true] {
                    let mut covs = BTreeMap::new();
                    covs.insert(
                        "dose".to_string(),
                        CovariateValue::Categorical(DOSE_LEVELS[dose as usize].into()),
                    );
                    covs.insert(
                        "class".to_string(),
                        CovariateValue::Categorical(CLASS_LEVELS[sulphate as usize].into()),
                    );
                    let v: f64 = 2.5;
                    let want = enc.encode(1, j, 3.0, v, &covs).unwrap();
                    assert_eq!(design_row(j, v.ln(), dose, sulphate).to_vec(), want);
                }
            }
        }
    }

    #[test]
    fn direct_rows_match_record_pipeline() {
        let mut cfg = SimConfig::paper_design(0.2);
        cfg.practices = 4;
        let data = simulate(&cfg).unwrap();
        let set = data.to_transition_set().unwrap();
        let direct = data.to_rows();
        assert_eq!(set.rows.len(), direct.len());
        let key = |r: &TransitionRow| (r.patient_id.clone(), r.z.clone(), r.origin, r.destination);
        let mut a: Vec<_> = set.rows.iter().map(key).collect();
        let mut b: Vec<_> = direct.iter().map(key).collect();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn courses_start_in_state_one_and_respect_the_cap() {
        let data = simulate(&SimConfig::paper_design(0.0)).unwrap();
        assert_eq!(data.patients.len(), 60);
        for c in &data.courses {
            assert_eq!(c.states[0], 1);
            assert!((2..=6).contains(&c.states.len()));
            assert_eq!(c.log_gaps.len() + 1, c.states.len());
        }
    }
}
