//! Composite-likelihood estimation: one multinomial logistic block per
//! origin state, fitted by guarded Newton-Raphson.

mod design;
pub(crate) mod kernel;
pub(crate) mod linalg;
mod newton;
mod result;

use std::collections::BTreeMap;

use crate::data_model::{ModelSpec, TransitionRow};
use crate::error::{Error, Result};
use crate::exec;

pub use design::{BlockDesign, ModelData};
pub use kernel::destination_probabilities;
pub use newton::{FitDiagnostics, FitOptions};
pub use result::{BlockFit, BlockSlot, CoefBlock, CoefName, FitResult};

use kernel::{evaluate, Need, Weights};

fn check_dim(design: &BlockDesign, theta: &[f64]) -> Result<()> {
    if theta.len() != design.dim() {
        return Err(Error::DimensionMismatch {
            expected: design.dim(),
            got: theta.len(),
        });
    }
    Ok(())
}

/// Log composite likelihood of one origin block.
pub fn loglik(design: &BlockDesign, theta: &[f64]) -> Result<f64> {
    check_dim(design, theta)?;
    Ok(evaluate(design, theta, Weights::Unit, Need::Loglik).loglik)
}

/// Analytic gradient of [`loglik`].
pub fn score(design: &BlockDesign, theta: &[f64]) -> Result<Vec<f64>> {
    check_dim(design, theta)?;
    Ok(evaluate(design, theta, Weights::Unit, Need::Score).score)
}

/// Observed information (negated Jacobian of the score), row-major.
pub fn information(design: &BlockDesign, theta: &[f64]) -> Result<Vec<f64>> {
    check_dim(design, theta)?;
    Ok(evaluate(design, theta, Weights::Unit, Need::Information).info)
}

/// Per-cluster score contributions at `theta`, `n_clusters × dim` row-major.
/// Clusters are indexed as in the design.
pub fn cluster_scores(design: &BlockDesign, theta: &[f64], n_clusters: usize) -> Result<Vec<f64>> {
    check_dim(design, theta)?;
    if let Some(&c) = design.cluster.iter().max() {
        if c as usize >= n_clusters {
            return Err(Error::DimensionMismatch {
                expected: c as usize + 1,
                got: n_clusters,
            });
        }
    }
    Ok(kernel::cluster_scores(design, theta, n_clusters))
}

fn block_fit(design: &BlockDesign, weights: Weights, opts: &FitOptions) -> Result<BlockFit> {
    let sol = newton::newton(design, weights, opts)?;
    let p = design.n_predictors();
    Ok(BlockFit {
        coef: CoefBlock {
            origin: design.origin,
            reference: design.reference,
            destinations: design.destinations.clone(),
            predictors: design.predictors.clone(),
            coefficients: sol.theta.chunks(p).map(<[f64]>::to_vec).collect(),
        },
        sigma: sol.sigma,
        loglik: sol.loglik,
        diagnostics: sol.diagnostics,
    })
}

/// Fits one origin block from `theta = 0`.
pub fn fit_block(design: &BlockDesign, opts: &FitOptions) -> Result<BlockFit> {
    block_fit(design, Weights::Unit, opts)
}

/// Fits every block of `data`, optionally weighting each cluster (a bootstrap
/// resample expressed as cluster multiplicities).
pub fn fit_data(data: &ModelData, cluster_weights: Option<&[f64]>, opts: &FitOptions) -> Result<FitResult> {
    let weights = match cluster_weights {
        Some(w) if w.len() != data.n_clusters() => {
            return Err(Error::DimensionMismatch {
                expected: data.n_clusters(),
                got: w.len(),
            })
        }
        Some(w) => Weights::PerCluster(w),
        None => Weights::Unit,
    };
    let fits = exec::map_indexed(data.blocks.len(), |b| block_fit(&data.blocks[b], weights, opts));
    let mut blocks = BTreeMap::new();
    for fit in fits {
        let fit = fit?;
        blocks.insert(fit.coef.origin, fit);
    }
    let loglik = blocks.values().map(|b| b.loglik).sum();
    Ok(FitResult {
        spec: data.spec.clone(),
        blocks,
        absent_origins: data.absent_origins.clone(),
        loglik,
    })
}

/// Fits all origin blocks of the rows built under `spec`.
pub fn fit(rows: &[TransitionRow], spec: &ModelSpec, opts: &FitOptions) -> Result<FitResult> {
    fit_data(&ModelData::from_rows(rows, spec)?, None, opts)
}
