//! Visit records, state spaces, predictor encoding and transition pairing.

mod io;
mod spec;
mod summary;
mod transitions;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{read_visits_csv, read_visits_path, write_visits_csv};
pub use spec::{
    CourseCoding, CovariateKind, CovariateSpec, Encoder, GapTransform, ModelSpec, TimeTransform,
};
pub use summary::{observation_patterns, Histogram, ObservationPatterns};
pub use transitions::{build_transitions, transition_matrix, TransitionCounts, TransitionSet};

/// Disease-state label.
pub type State = u32;

/// The states of the chain and which of them are modelled as origins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpace {
    pub states: Vec<State>,
    #[serde(default)]
    pub absorbing: Vec<State>,
    pub origin_states: Vec<State>,
    #[serde(default = "default_reference")]
    pub reference_destination: State,
    /// Per-origin reference states that differ from `reference_destination`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub reference_overrides: BTreeMap<State, State>,
}

fn default_reference() -> State {
    1
}

impl Default for StateSpace {
    fn default() -> Self {
        StateSpace {
            states: vec![1, 2, 3, 4],
            absorbing: vec![4],
            origin_states: vec![1, 2, 3],
            reference_destination: 1,
            reference_overrides: BTreeMap::new(),
        }
    }
}

impl StateSpace {
    /// Two-state space without absorbing states, as used by the simulator.
    pub fn two_state() -> Self {
        StateSpace {
            states: vec![1, 2],
            absorbing: vec![],
            origin_states: vec![1, 2],
            reference_destination: 1,
            reference_overrides: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.len() < 2 {
            return Err(Error::config("a state space needs at least two states"));
        }
        let mut sorted = self.states.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.states.len() {
            return Err(Error::config("duplicate state labels"));
        }
        for s in self.absorbing.iter().chain(&self.origin_states) {
            if !self.contains(*s) {
                return Err(Error::config(format!("state {s} is not in the state space")));
            }
        }
        if let Some(s) = self.absorbing.iter().find(|s| self.origin_states.contains(s)) {
            return Err(Error::config(format!("state {s} cannot be both absorbing and an origin")));
        }
        for origin in &self.origin_states {
            let reference = self.reference_for(*origin);
            if !self.contains(reference) {
                return Err(Error::config(format!(
                    "reference destination {reference} is not in the state space"
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, s: State) -> bool {
        self.states.contains(&s)
    }

    pub fn index_of(&self, s: State) -> Option<usize> {
        self.states.iter().position(|&x| x == s)
    }

    pub fn is_absorbing(&self, s: State) -> bool {
        self.absorbing.contains(&s)
    }

    pub fn is_origin(&self, s: State) -> bool {
        self.origin_states.contains(&s)
    }

    pub fn reference_for(&self, origin: State) -> State {
        self.reference_overrides
            .get(&origin)
            .copied()
            .unwrap_or(self.reference_destination)
    }

    /// Non-reference destinations of `origin`, in state order.
    pub fn destinations(&self, origin: State) -> Vec<State> {
        let reference = self.reference_for(origin);
        self.states.iter().copied().filter(|&s| s != reference).collect()
    }
}

/// A course-level covariate value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovariateValue {
    Numeric(f64),
    Categorical(String),
    Missing,
}

impl CovariateValue {
    /// Parses a CSV field; empty and `NA` are missing.
    pub fn parse(field: &str, numeric: bool) -> std::result::Result<Self, String> {
        let field = field.trim();
        if field.is_empty() || field == "NA" {
            return Ok(CovariateValue::Missing);
        }
        if numeric {
            field
                .parse::<f64>()
                .map(CovariateValue::Numeric)
                .map_err(|_| format!("`{field}` is not a number"))
        } else {
            Ok(CovariateValue::Categorical(field.to_string()))
        }
    }

    pub fn to_field(&self) -> String {
        match self {
            CovariateValue::Numeric(x) => x.to_string(),
            CovariateValue::Categorical(s) => s.clone(),
            CovariateValue::Missing => "NA".to_string(),
        }
    }
}

pub type Covariates = BTreeMap<String, CovariateValue>;

/// One observed assessment.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitRecord {
    pub practice_id: String,
    pub patient_id: String,
    pub course: u32,
    pub visit: u32,
    /// Time since the course started, in days.
    pub day: f64,
    pub state: State,
    pub covariates: Covariates,
}

/// One modelled transition with its encoded predictor vector (intercept first).
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRow {
    pub origin: State,
    pub destination: State,
    pub z: Vec<f64>,
    pub practice_id: Arc<str>,
    pub patient_id: Arc<str>,
}
