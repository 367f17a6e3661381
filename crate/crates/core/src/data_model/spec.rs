use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::{CovariateValue, Covariates, State, StateSpace, VisitRecord};
use crate::error::{Error, Result};

/// Encoding of the course index `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CourseCoding {
    /// Indicators for courses 2, ..., top-1 and `>= top`; course 1 is the reference.
    Categories { top: u32 },
    /// `j` entered as a number.
    Linear,
    None,
}

/// Features derived from the time since the course started.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TimeTransform {
    None,
    /// `log(t + 1) - center`, optionally its square, and `I(t = 0)` for the
    /// listed origin states.
    LogCentered {
        center: f64,
        quadratic: bool,
        #[serde(default)]
        zero_indicator_origins: Vec<State>,
    },
}

/// Features derived from the gap time to the next visit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GapTransform {
    None,
    /// `log(v + 1) - center`, optionally its square.
    LogCentered { center: f64, quadratic: bool },
    /// Plain `log(v)`; requires `v > 0`.
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateKind {
    Categorical {
        /// Levels in encoding order. Inferred (sorted) from data when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        levels: Option<Vec<String>>,
        /// Defaults to the first level.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reference: Option<String>,
        /// Level that absorbs missing and unknown values.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        missing_level: Option<String>,
    },
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: CovariateKind,
}

impl CovariateSpec {
    pub fn categorical(name: &str, levels: &[&str], reference: &str) -> Self {
        CovariateSpec {
            name: name.to_string(),
            kind: CovariateKind::Categorical {
                levels: Some(levels.iter().map(|s| s.to_string()).collect()),
                reference: Some(reference.to_string()),
                missing_level: None,
            },
        }
    }

    pub fn numeric(name: &str) -> Self {
        CovariateSpec {
            name: name.to_string(),
            kind: CovariateKind::Numeric,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self.kind, CovariateKind::Numeric)
    }
}

/// Full description of how a transition is turned into a predictor vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default)]
    pub state_space: StateSpace,
    #[serde(default = "default_course_coding")]
    pub course_coding: CourseCoding,
    #[serde(default = "default_time_transform")]
    pub time_transform: TimeTransform,
    #[serde(default = "default_gap_transform")]
    pub gap_transform: GapTransform,
    #[serde(default)]
    pub covariates: Vec<CovariateSpec>,
    /// Pairwise interactions between named covariates.
    #[serde(default)]
    pub interactions: Vec<(String, String)>,
}

fn default_course_coding() -> CourseCoding {
    CourseCoding::Categories { top: 4 }
}

fn default_time_transform() -> TimeTransform {
    TimeTransform::LogCentered {
        center: 4.0,
        quadratic: true,
        zero_indicator_origins: vec![1],
    }
}

fn default_gap_transform() -> GapTransform {
    GapTransform::LogCentered {
        center: 4.0,
        quadratic: true,
    }
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            state_space: StateSpace::default(),
            course_coding: default_course_coding(),
            time_transform: default_time_transform(),
            gap_transform: default_gap_transform(),
            covariates: Vec::new(),
            interactions: Vec::new(),
        }
    }
}

impl ModelSpec {
    /// Two-state logistic design of the simulation study: course categories,
    /// `log(v)`, dose and class indicators and their interactions.
    pub fn simulation_design() -> Self {
        ModelSpec {
            state_space: StateSpace::two_state(),
            course_coding: CourseCoding::Categories { top: 4 },
            time_transform: TimeTransform::None,
            gap_transform: GapTransform::Log,
            covariates: vec![
                CovariateSpec::categorical("dose", &["low", "medium", "high"], "low"),
                CovariateSpec::categorical("class", &["fumarate", "sulphate"], "fumarate"),
            ],
            interactions: vec![("dose".into(), "class".into())],
        }
    }

    pub fn covariate(&self, name: &str) -> Option<&CovariateSpec> {
        self.covariates.iter().find(|c| c.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        self.state_space.validate()?;
        if let CourseCoding::Categories { top } = self.course_coding {
            if top < 2 {
                return Err(Error::config("course categories need top >= 2"));
            }
        }
        let mut seen = HashSet::new();
        for c in &self.covariates {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::config(format!("covariate `{}` declared twice", c.name)));
            }
            if let CovariateKind::Categorical {
                levels: Some(levels),
                reference,
                missing_level,
            } = &c.kind
            {
                if levels.is_empty() {
                    return Err(Error::config(format!("covariate `{}` has no levels", c.name)));
                }
                let unique: BTreeSet<_> = levels.iter().collect();
                if unique.len() != levels.len() {
                    return Err(Error::config(format!("covariate `{}` repeats a level", c.name)));
                }
                for l in reference.iter().chain(missing_level.iter()) {
                    if !levels.contains(l) {
                        return Err(Error::config(format!(
                            "level `{l}` of covariate `{}` is not among its levels",
                            c.name
                        )));
                    }
                }
            }
        }
        for (a, b) in &self.interactions {
            if a == b {
                return Err(Error::config(format!("interaction of `{a}` with itself")));
            }
            for name in [a, b] {
                if self.covariate(name).is_none() {
                    return Err(Error::config(format!(
                        "interaction names undeclared covariate `{name}`"
                    )));
                }
            }
        }
        Ok(())
    }

    /// True when every categorical covariate has explicit levels.
    pub fn is_resolved(&self) -> bool {
        self.covariates.iter().all(|c| match &c.kind {
            CovariateKind::Categorical { levels, .. } => levels.is_some(),
            CovariateKind::Numeric => true,
        })
    }

    /// Fills in categorical levels (sorted) and references from the data.
    pub fn resolve(&self, visits: &[VisitRecord]) -> Result<ModelSpec> {
        self.validate()?;
        let mut out = self.clone();
        for c in &mut out.covariates {
            if let CovariateKind::Categorical {
                levels,
                reference,
                missing_level,
            } = &mut c.kind
            {
                if levels.is_none() {
                    let mut observed = BTreeSet::new();
                    for v in visits {
                        match v.covariates.get(&c.name) {
                            Some(CovariateValue::Categorical(s)) => {
                                observed.insert(s.clone());
                            }
                            Some(CovariateValue::Numeric(x)) => {
                                observed.insert(x.to_string());
                            }
                            _ => {}
                        }
                    }
                    if let Some(m) = missing_level {
                        observed.insert(m.clone());
                    }
                    if observed.is_empty() {
                        return Err(Error::Encoding(format!(
                            "categorical covariate `{}` has no observed levels",
                            c.name
                        )));
                    }
                    *levels = Some(observed.into_iter().collect());
                }
                if reference.is_none() {
                    *reference = levels.as_ref().and_then(|l| l.first().cloned());
                }
            }
        }
        out.validate()?;
        Ok(out)
    }

    /// Builds the encoder; the spec must be resolved.
    pub fn encoder(&self) -> Result<Encoder> {
        Encoder::new(self)
    }

    /// Ordered predictor names for transitions out of `origin`.
    pub fn predictor_names(&self, origin: State) -> Result<Vec<String>> {
        Ok(self.encoder()?.predictor_names(origin))
    }
}

#[derive(Debug, Clone)]
enum Term {
    Categorical {
        name: String,
        levels: Vec<String>,
        /// Column of each level among the indicators; `None` for the reference.
        columns: Vec<Option<usize>>,
        missing_level: Option<usize>,
    },
    Numeric {
        name: String,
    },
}

impl Term {
    fn width(&self) -> usize {
        match self {
            Term::Categorical { columns, .. } => columns.iter().flatten().count(),
            Term::Numeric { .. } => 1,
        }
    }

    fn names(&self) -> Vec<String> {
        match self {
            Term::Categorical {
                name,
                levels,
                columns,
                ..
            } => levels
                .iter()
                .zip(columns)
                .filter(|(_, c)| c.is_some())
                .map(|(l, _)| format!("{name}={l}"))
                .collect(),
            Term::Numeric { name } => vec![name.clone()],
        }
    }

    fn encode(&self, covariates: &Covariates) -> Result<Vec<f64>> {
        match self {
            Term::Categorical {
                name,
                levels,
                columns,
                missing_level,
            } => {
                let level = match covariates.get(name) {
                    Some(CovariateValue::Categorical(s)) => levels.iter().position(|l| l == s),
                    Some(CovariateValue::Numeric(x)) => {
                        let s = x.to_string();
                        levels.iter().position(|l| *l == s)
                    }
                    Some(CovariateValue::Missing) | None => None,
                };
                let level = level.or(*missing_level).ok_or_else(|| {
                    let shown = covariates
                        .get(name)
                        .map(|v| v.to_field())
                        .unwrap_or_else(|| "<absent>".into());
                    Error::Encoding(format!(
                        "value `{shown}` of covariate `{name}` is not a known level and no missing level is configured"
                    ))
                })?;
                let mut out = vec![0.0; self.width()];
                if let Some(col) = columns[level] {
                    out[col] = 1.0;
                }
                Ok(out)
            }
            Term::Numeric { name } => match covariates.get(name) {
                Some(CovariateValue::Numeric(x)) if x.is_finite() => Ok(vec![*x]),
                Some(CovariateValue::Categorical(s)) => s
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .map(|x| vec![x])
                    .ok_or_else(|| {
                        Error::Encoding(format!("numeric covariate `{name}` has value `{s}`"))
                    }),
                _ => Err(Error::Encoding(format!(
                    "numeric covariate `{name}` is missing or non-finite"
                ))),
            },
        }
    }
}

/// Turns `(origin, j, t, v, X)` into a predictor vector for a resolved spec.
#[derive(Debug, Clone)]
pub struct Encoder {
    course: CourseCoding,
    time: TimeTransform,
    gap: GapTransform,
    terms: Vec<Term>,
    interactions: Vec<(usize, usize)>,
}

impl Encoder {
    fn new(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut terms = Vec::with_capacity(spec.covariates.len());
        for c in &spec.covariates {
            terms.push(match &c.kind {
                CovariateKind::Numeric => Term::Numeric {
                    name: c.name.clone(),
                },
                CovariateKind::Categorical {
                    levels,
                    reference,
                    missing_level,
                } => {
                    let levels = levels.clone().ok_or_else(|| {
                        Error::config(format!(
                            "levels of covariate `{}` are unresolved; resolve the spec against data first",
                            c.name
                        ))
                    })?;
                    let reference = reference.clone().unwrap_or_else(|| levels[0].clone());
                    let mut next = 0;
                    let columns = levels
                        .iter()
                        .map(|l| {
                            (*l != reference).then(|| {
                                next += 1;
                                next - 1
                            })
                        })
                        .collect();
                    let missing_level = missing_level
                        .as_ref()
                        .and_then(|m| levels.iter().position(|l| l == m));
                    Term::Categorical {
                        name: c.name.clone(),
                        levels,
                        columns,
                        missing_level,
                    }
                }
            });
        }
        let position = |name: &str| spec.covariates.iter().position(|c| c.name == name);
        let interactions = spec
            .interactions
            .iter()
            .map(|(a, b)| (position(a).unwrap(), position(b).unwrap()))
            .collect();
        let encoder = Encoder {
            course: spec.course_coding.clone(),
            time: spec.time_transform.clone(),
            gap: spec.gap_transform.clone(),
            terms,
            interactions,
        };
        for origin in &spec.state_space.origin_states {
            let names = encoder.predictor_names(*origin);
            let unique: HashSet<_> = names.iter().collect();
            if unique.len() != names.len() {
                return Err(Error::config(format!(
                    "predictor names for origin {origin} are not unique"
                )));
            }
        }
        Ok(encoder)
    }

    fn zero_indicator(&self, origin: State) -> bool {
        matches!(&self.time, TimeTransform::LogCentered { zero_indicator_origins, .. } if zero_indicator_origins.contains(&origin))
    }

    pub fn predictor_names(&self, origin: State) -> Vec<String> {
        let mut names = vec!["intercept".to_string()];
        match self.course {
            CourseCoding::Categories { top } => {
                names.extend((2..top).map(|j| format!("course={j}")));
                names.push(format!("course>={top}"));
            }
            CourseCoding::Linear => names.push("course".into()),
            CourseCoding::None => {}
        }
        if let TimeTransform::LogCentered { quadratic, .. } = self.time {
            if self.zero_indicator(origin) {
                names.push("I(t=0)".into());
            }
            names.push("t_log".into());
            if quadratic {
                names.push("t_log^2".into());
            }
        }
        match self.gap {
            GapTransform::None => {}
            GapTransform::LogCentered { quadratic, .. } => {
                names.push("v_log".into());
                if quadratic {
                    names.push("v_log^2".into());
                }
            }
            GapTransform::Log => names.push("log(v)".into()),
        }
        for term in &self.terms {
            names.extend(term.names());
        }
        for &(a, b) in &self.interactions {
            let (na, nb) = (self.terms[a].names(), self.terms[b].names());
            for x in &na {
                for y in &nb {
                    names.push(format!("{x}:{y}"));
                }
            }
        }
        names
    }

    pub fn n_predictors(&self, origin: State) -> usize {
        self.predictor_names(origin).len()
    }

    /// Predictor vector for a transition out of `origin` at course `course`,
    /// time `t` and gap `v` (both in days).
    pub fn encode(
        &self,
        origin: State,
        course: u32,
        t: f64,
        v: f64,
        covariates: &Covariates,
    ) -> Result<Vec<f64>> {
        let mut z = vec![1.0];
        match self.course {
            CourseCoding::Categories { top } => {
                z.extend((2..top).map(|j| f64::from(u8::from(course == j))));
                z.push(f64::from(u8::from(course >= top)));
            }
            CourseCoding::Linear => z.push(f64::from(course)),
            CourseCoding::None => {}
        }
        if let TimeTransform::LogCentered {
            center, quadratic, ..
        } = self.time
        {
            if self.zero_indicator(origin) {
                z.push(f64::from(u8::from(t == 0.0)));
            }
            let tl = (t + 1.0).ln() - center;
            z.push(tl);
            if quadratic {
                z.push(tl * tl);
            }
        }
        match self.gap {
            GapTransform::None => {}
            GapTransform::LogCentered { center, quadratic } => {
                let vl = (v + 1.0).ln() - center;
                z.push(vl);
                if quadratic {
                    z.push(vl * vl);
                }
            }
            GapTransform::Log => {
                if v <= 0.0 {
                    return Err(Error::Encoding(format!(
                        "log(v) requires a positive gap time, got {v}"
                    )));
                }
                z.push(v.ln());
            }
        }
        let encoded: Vec<Vec<f64>> = self
            .terms
            .iter()
            .map(|t| t.encode(covariates))
            .collect::<Result<_>>()?;
        for e in &encoded {
            z.extend_from_slice(e);
        }
        for &(a, b) in &self.interactions {
            for x in &encoded[a] {
                for y in &encoded[b] {
                    z.push(x * y);
                }
            }
        }
        if z.iter().any(|x| !x.is_finite()) {
            return Err(Error::Encoding(format!(
                "non-finite predictor at course {course}, t = {t}, v = {v}"
            )));
        }
        Ok(z)
    }
}
