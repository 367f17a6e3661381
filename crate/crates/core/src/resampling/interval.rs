use serde::{Deserialize, Serialize};

use super::{BootstrapSet, Method};
use crate::data_model::State;
use crate::error::{Error, Result};
use crate::estimator::FitResult;

/// Type-7 (inclusive, linear interpolation) sample quantile of sorted data.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub origin: State,
    pub destination: State,
    pub predictor: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Percentile confidence intervals for every coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalTable {
    pub method: Method,
    pub level: f64,
    pub replicates: usize,
    pub rows: Vec<IntervalRow>,
}

impl IntervalTable {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["origin", "destination", "predictor", "estimate", "lower", "upper", "method", "level"])?;
        for r in &self.rows {
            out.write_record([
                r.origin.to_string(),
                r.destination.to_string(),
                r.predictor.clone(),
                r.estimate.to_string(),
                r.lower.to_string(),
                r.upper.to_string(),
                self.method.as_str().to_string(),
                self.level.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `(1 − level)/2` and `1 − (1 − level)/2` quantiles per coefficient.
pub fn percentile_ci(fit: &FitResult, set: &BootstrapSet, level: f64) -> Result<IntervalTable> {
    if !(0.0..1.0).contains(&level) {
        return Err(Error::config(format!("confidence level {level} must be in [0, 1)")));
    }
    if set.len() < 2 {
        return Err(Error::TooFewReplicates {
            got: set.len(),
            needed: 2,
        });
    }
    let theta = fit.theta();
    if set.names.len() != theta.len() {
        return Err(Error::DimensionMismatch {
            expected: theta.len(),
            got: set.names.len(),
        });
    }
    let alpha = (1.0 - level) / 2.0;
    let rows = set
        .names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let mut col = set.column(j);
            col.sort_by(f64::total_cmp);
            IntervalRow {
                origin: name.origin,
                destination: name.destination,
                predictor: name.predictor.clone(),
                estimate: theta[j],
                lower: quantile_type7(&col, alpha),
                upper: quantile_type7(&col, 1.0 - alpha),
            }
        })
        .collect();
    Ok(IntervalTable {
        method: set.method,
        level,
        replicates: set.len(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRow {
    pub origin: State,
    pub destination: State,
    pub predictor: String,
    pub estimate: f64,
    pub efb_lower: f64,
    pub efb_upper: f64,
    pub db_lower: f64,
    pub db_upper: f64,
}

/// EFB and direct-bootstrap intervals side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedIntervalTable {
    pub level: f64,
    pub rows: Vec<PairedRow>,
}

impl PairedIntervalTable {
    pub fn new(efb: &IntervalTable, direct: &IntervalTable) -> Self {
        PairedIntervalTable {
            level: efb.level,
            rows: efb
                .rows
                .iter()
                .zip(&direct.rows)
                .map(|(e, d)| PairedRow {
                    origin: e.origin,
                    destination: e.destination,
                    predictor: e.predictor.clone(),
                    estimate: e.estimate,
                    efb_lower: e.lower,
                    efb_upper: e.upper,
                    db_lower: d.lower,
                    db_upper: d.upper,
                })
                .collect(),
        }
    }

    /// Largest absolute difference between matching endpoints.
    pub fn max_endpoint_difference(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.efb_lower - r.db_lower).abs().max((r.efb_upper - r.db_upper).abs()))
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "origin", "destination", "predictor", "estimate", "efb_lower", "efb_upper", "db_lower", "db_upper",
        ])?;
        for r in &self.rows {
            out.write_record([
                r.origin.to_string(),
                r.destination.to_string(),
                r.predictor.clone(),
                r.estimate.to_string(),
                r.efb_lower.to_string(),
                r.efb_upper.to_string(),
                r.db_lower.to_string(),
                r.db_upper.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}
