use std::collections::HashMap;
use std::sync::Arc;

use crate::data_model::{ModelSpec, State, StateSpace, TransitionRow, TransitionSet};
use crate::error::{Error, Result};

/// Rows of one origin state laid out for the likelihood kernels.
#[derive(Debug, Clone)]
pub struct BlockDesign {
    pub origin: State,
    pub reference: State,
    /// Non-reference destinations; parameter block `d` belongs to `destinations[d]`.
    pub destinations: Vec<State>,
    pub predictors: Vec<String>,
    /// Row-major `n_rows × n_predictors`.
    pub(crate) x: Vec<f64>,
    /// 0 for the reference destination, `d + 1` for `destinations[d]`.
    pub(crate) y: Vec<u16>,
    /// Top-level cluster index of each row.
    pub(crate) cluster: Vec<u32>,
}

impl BlockDesign {
    /// Builds a design from rows that all share `origin`. Predictor names
    /// default to `x0, x1, ...` when `predictors` is `None`.
    pub fn from_rows(
        rows: &[TransitionRow],
        origin: State,
        space: &StateSpace,
        predictors: Option<Vec<String>>,
    ) -> Result<Self> {
        let width = rows.first().map(|r| r.z.len()).unwrap_or(0);
        let predictors =
            predictors.unwrap_or_else(|| (0..width).map(|j| format!("x{j}")).collect());
        let mut clusters: HashMap<&str, u32> = HashMap::new();
        let mut design = Self::empty(origin, space, predictors);
        for r in rows {
            let next = clusters.len() as u32;
            let c = *clusters.entry(&r.practice_id).or_insert(next);
            design.push(r, c)?;
        }
        Ok(design)
    }

    pub(crate) fn empty(origin: State, space: &StateSpace, predictors: Vec<String>) -> Self {
        BlockDesign {
            origin,
            reference: space.reference_for(origin),
            destinations: space.destinations(origin),
            predictors,
            x: Vec::new(),
            y: Vec::new(),
            cluster: Vec::new(),
        }
    }

    pub(crate) fn push(&mut self, row: &TransitionRow, cluster: u32) -> Result<()> {
        if row.origin != self.origin {
            return Err(Error::Encoding(format!(
                "row with origin {} in block for origin {}",
                row.origin, self.origin
            )));
        }
        if row.z.len() != self.n_predictors() {
            return Err(Error::DimensionMismatch {
                expected: self.n_predictors(),
                got: row.z.len(),
            });
        }
        let y = if row.destination == self.reference {
            0
        } else {
            let d = self
                .destinations
                .iter()
                .position(|&s| s == row.destination)
                .ok_or_else(|| {
                    Error::Encoding(format!("unknown destination state {}", row.destination))
                })?;
            d as u16 + 1
        };
        self.x.extend_from_slice(&row.z);
        self.y.push(y);
        self.cluster.push(cluster);
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_predictors(&self) -> usize {
        self.predictors.len()
    }

    pub fn n_destinations(&self) -> usize {
        self.destinations.len()
    }

    /// Length of the flat parameter vector (destination-major).
    pub fn dim(&self) -> usize {
        self.n_destinations() * self.n_predictors()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_predictors();
        &self.x[i * p..(i + 1) * p]
    }

    /// Observed destination state of row `i`.
    pub fn destination(&self, i: usize) -> State {
        match self.y[i] {
            0 => self.reference,
            d => self.destinations[d as usize - 1],
        }
    }

    pub fn cluster_of(&self, i: usize) -> u32 {
        self.cluster[i]
    }
}

/// All origin blocks of a dataset, with rows tagged by top-level cluster.
#[derive(Debug, Clone)]
pub struct ModelData {
    pub spec: ModelSpec,
    /// One design per origin state that has at least one row.
    pub blocks: Vec<BlockDesign>,
    /// Origin states without rows.
    pub absent_origins: Vec<State>,
    /// Cluster keys; rows refer to clusters by position.
    pub clusters: Vec<Arc<str>>,
}

impl ModelData {
    pub fn new(set: &TransitionSet) -> Result<Self> {
        Self::with_clusters(&set.rows, &set.spec, set.practices.clone())
    }

    /// Uses the practices seen in `rows` as the cluster list.
    pub fn from_rows(rows: &[TransitionRow], spec: &ModelSpec) -> Result<Self> {
        let mut clusters: Vec<Arc<str>> = rows.iter().map(|r| r.practice_id.clone()).collect();
        clusters.sort();
        clusters.dedup();
        Self::with_clusters(rows, spec, clusters)
    }

    pub fn with_clusters(
        rows: &[TransitionRow],
        spec: &ModelSpec,
        clusters: Vec<Arc<str>>,
    ) -> Result<Self> {
        let encoder = spec.encoder()?;
        let space = &spec.state_space;
        let index: HashMap<&str, u32> = clusters
            .iter()
            .enumerate()
            .map(|(i, c)| (&**c, i as u32))
            .collect();
        let mut designs: Vec<BlockDesign> = space
            .origin_states
            .iter()
            .map(|&o| BlockDesign::empty(o, space, encoder.predictor_names(o)))
            .collect();
        for r in rows {
            let b = space
                .origin_states
                .iter()
                .position(|&o| o == r.origin)
                .ok_or_else(|| {
                    Error::Encoding(format!("row origin {} is not an origin state", r.origin))
                })?;
            let c = *index.get(&*r.practice_id).ok_or_else(|| {
                Error::Encoding(format!("row practice {} is not a known cluster", r.practice_id))
            })?;
            designs[b].push(r, c)?;
        }
        let (blocks, empty): (Vec<_>, Vec<_>) =
            designs.into_iter().partition(|d| d.n_rows() > 0);
        let mut blocks = blocks;
        blocks.sort_by_key(|d| d.origin);
        let mut absent_origins: Vec<State> = empty.iter().map(|d| d.origin).collect();
        absent_origins.sort_unstable();
        Ok(ModelData {
            spec: spec.clone(),
            blocks,
            absent_origins,
            clusters,
        })
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn n_rows(&self) -> usize {
        self.blocks.iter().map(|b| b.n_rows()).sum()
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.dim()).sum()
    }
}
