use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::kernel::destination_probabilities;
use super::newton::FitDiagnostics;
use crate::data_model::{ModelSpec, State};
use crate::error::{Error, Result};

/// Coefficients of one origin state; the reference destination is implicit zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefBlock {
    pub origin: State,
    pub reference: State,
    pub destinations: Vec<State>,
    pub predictors: Vec<String>,
    /// `destinations.len() × predictors.len()`.
    pub coefficients: Vec<Vec<f64>>,
}

impl CoefBlock {
    pub fn dim(&self) -> usize {
        self.destinations.len() * self.predictors.len()
    }

    /// Destination-major flat vector.
    pub fn flat(&self) -> Vec<f64> {
        self.coefficients.iter().flatten().copied().collect()
    }

    pub(crate) fn set_flat(&mut self, theta: &[f64]) {
        let p = self.predictors.len();
        for (d, row) in self.coefficients.iter_mut().enumerate() {
            row.copy_from_slice(&theta[d * p..(d + 1) * p]);
        }
    }

    pub fn get(&self, destination: State, predictor: &str) -> Option<f64> {
        let d = self.destinations.iter().position(|&s| s == destination)?;
        let j = self.predictors.iter().position(|p| p == predictor)?;
        Some(self.coefficients[d][j])
    }

    /// Probabilities over `[reference, destinations...]`.
    pub fn probabilities(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.predictors.len() {
            return Err(Error::DimensionMismatch {
                expected: self.predictors.len(),
                got: z.len(),
            });
        }
        Ok(destination_probabilities(&self.flat(), z, self.destinations.len()))
    }
}

#[derive(Debug, Clone)]
pub struct BlockFit {
    pub coef: CoefBlock,
    /// Inverse observed information at the estimate, row-major `dim × dim`.
    pub sigma: Vec<f64>,
    pub loglik: f64,
    pub diagnostics: FitDiagnostics,
}

/// Composite-likelihood fit: one independent block per origin state.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Resolved spec used for encoding.
    pub spec: ModelSpec,
    pub blocks: BTreeMap<State, BlockFit>,
    /// Origin states without any observed transition.
    pub absent_origins: Vec<State>,
    pub loglik: f64,
}

/// Where each origin block sits in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSlot {
    pub origin: State,
    pub offset: usize,
    pub dim: usize,
}

/// Name of one coefficient in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoefName {
    pub origin: State,
    pub destination: State,
    pub predictor: String,
}

impl FitResult {
    pub fn dim(&self) -> usize {
        self.blocks.values().map(|b| b.coef.dim()).sum()
    }

    /// All coefficients, blocks in ascending origin order.
    pub fn theta(&self) -> Vec<f64> {
        self.blocks.values().flat_map(|b| b.coef.flat()).collect()
    }

    pub fn layout(&self) -> Vec<BlockSlot> {
        let mut offset = 0;
        self.blocks
            .values()
            .map(|b| {
                let slot = BlockSlot {
                    origin: b.coef.origin,
                    offset,
                    dim: b.coef.dim(),
                };
                offset += slot.dim;
                slot
            })
            .collect()
    }

    pub fn coefficient_names(&self) -> Vec<CoefName> {
        self.blocks
            .values()
            .flat_map(|b| {
                b.coef.destinations.iter().flat_map(move |&d| {
                    b.coef.predictors.iter().map(move |p| CoefName {
                        origin: b.coef.origin,
                        destination: d,
                        predictor: p.clone(),
                    })
                })
            })
            .collect()
    }

    /// A copy with coefficients replaced by `theta` (same layout as [`Self::theta`]).
    pub fn with_theta(&self, theta: &[f64]) -> Result<FitResult> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        let mut out = self.clone();
        let mut offset = 0;
        for b in out.blocks.values_mut() {
            let dim = b.coef.dim();
            b.coef.set_flat(&theta[offset..offset + dim]);
            offset += dim;
        }
        Ok(out)
    }

    pub fn converged(&self) -> bool {
        self.blocks.values().all(|b| b.diagnostics.converged)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&FitDocument::from(self))?)
    }

    pub fn from_json(json: &str) -> Result<FitResult> {
        let doc: FitDocument = serde_json::from_str(json)?;
        doc.try_into()
    }

    /// Flat coefficient table: origin, destination, predictor, estimate.
    pub fn write_coefficients_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["origin", "destination", "predictor", "estimate", "odds_ratio"])?;
        for (name, est) in self.coefficient_names().iter().zip(self.theta()) {
            out.write_record([
                name.origin.to_string(),
                name.destination.to_string(),
                name.predictor.clone(),
                est.to_string(),
                est.exp().to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct CoefEntry {
    destination: State,
    predictor: String,
    estimate: f64,
    odds_ratio: f64,
}

#[derive(Serialize, Deserialize)]
struct BlockDocument {
    origin: State,
    reference: State,
    destinations: Vec<State>,
    predictors: Vec<String>,
    coefficients: Vec<CoefEntry>,
    /// Lower triangle of Σ, row by row.
    sigma_lower: Vec<f64>,
    loglik: f64,
    diagnostics: FitDiagnostics,
}

#[derive(Serialize, Deserialize)]
struct FitDocument {
    spec: ModelSpec,
    loglik: f64,
    absent_origins: Vec<State>,
    blocks: Vec<BlockDocument>,
}

impl From<&FitResult> for FitDocument {
    fn from(fit: &FitResult) -> Self {
        let blocks = fit
            .blocks
            .values()
            .map(|b| {
                let dim = b.coef.dim();
                let coefficients = b
                    .coef
                    .destinations
                    .iter()
                    .zip(&b.coef.coefficients)
                    .flat_map(|(&d, row)| {
                        b.coef.predictors.iter().zip(row).map(move |(p, &est)| CoefEntry {
                            destination: d,
                            predictor: p.clone(),
                            estimate: est,
                            odds_ratio: est.exp(),
                        })
                    })
                    .collect();
                let sigma_lower = (0..dim)
                    .flat_map(|i| (0..=i).map(move |j| (i, j)))
                    .map(|(i, j)| b.sigma[i * dim + j])
                    .collect();
                BlockDocument {
                    origin: b.coef.origin,
                    reference: b.coef.reference,
                    destinations: b.coef.destinations.clone(),
                    predictors: b.coef.predictors.clone(),
                    coefficients,
                    sigma_lower,
                    loglik: b.loglik,
                    diagnostics: b.diagnostics.clone(),
                }
            })
            .collect();
        FitDocument {
            spec: fit.spec.clone(),
            loglik: fit.loglik,
            absent_origins: fit.absent_origins.clone(),
            blocks,
        }
    }
}

impl TryFrom<FitDocument> for FitResult {
    type Error = Error;

    fn try_from(doc: FitDocument) -> Result<Self> {
        let mut blocks = BTreeMap::new();
        for b in doc.blocks {
            let p = b.predictors.len();
            let k = b.destinations.len();
            let dim = p * k;
            if b.coefficients.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: b.coefficients.len(),
                });
            }
            if b.sigma_lower.len() != dim * (dim + 1) / 2 {
                return Err(Error::DimensionMismatch {
                    expected: dim * (dim + 1) / 2,
                    got: b.sigma_lower.len(),
                });
            }
            let mut coefficients = vec![vec![0.0; p]; k];
            for e in &b.coefficients {
                let d = b.destinations.iter().position(|&s| s == e.destination);
                let j = b.predictors.iter().position(|n| *n == e.predictor);
                match (d, j) {
                    (Some(d), Some(j)) => coefficients[d][j] = e.estimate,
                    _ => {
                        return Err(Error::Encoding(format!(
                            "coefficient ({}, {}) does not match the block layout",
                            e.destination, e.predictor
                        )))
                    }
                }
            }
            let mut sigma = vec![0.0; dim * dim];
            let mut it = b.sigma_lower.iter();
            for i in 0..dim {
                for j in 0..=i {
                    let v = *it.next().unwrap();
                    sigma[i * dim + j] = v;
                    sigma[j * dim + i] = v;
                }
            }
            blocks.insert(
                b.origin,
                BlockFit {
                    coef: CoefBlock {
                        origin: b.origin,
                        reference: b.reference,
                        destinations: b.destinations,
                        predictors: b.predictors,
                        coefficients,
                    },
                    sigma,
                    loglik: b.loglik,
                    diagnostics: b.diagnostics,
                },
            );
        }
        Ok(FitResult {
            spec: doc.spec,
            blocks,
            absent_origins: doc.absent_origins,
            loglik: doc.loglik,
        })
    }
}
