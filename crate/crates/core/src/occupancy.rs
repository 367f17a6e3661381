//! State-occupancy probabilities along a regular visit grid.

use serde::{Deserialize, Serialize};

use crate::data_model::{Covariates, Encoder, State};
use crate::error::{Error, Result};
use crate::estimator::FitResult;
use crate::exec;
use crate::resampling::{quantile_type7, BootstrapSet};

/// Row-stochastic one-step matrix over all states, built from a fitted model.
pub fn transition_matrix_at(
    fit: &FitResult,
    covariates: &Covariates,
    course: u32,
    t: f64,
    v: f64,
) -> Result<Vec<Vec<f64>>> {
    matrix_with(fit, &fit.spec.encoder()?, covariates, course, t, v)
}

fn matrix_with(
    fit: &FitResult,
    encoder: &Encoder,
    covariates: &Covariates,
    course: u32,
    t: f64,
    v: f64,
) -> Result<Vec<Vec<f64>>> {
    let space = &fit.spec.state_space;
    let n = space.states.len();
    let mut m = vec![vec![0.0; n]; n];
    for (i, &s) in space.states.iter().enumerate() {
        if space.is_absorbing(s) {
            m[i][i] = 1.0;
            continue;
        }
        let block = fit.blocks.get(&s).ok_or(Error::MissingBlock(s))?;
        let z = encoder.encode(s, course, t, v, covariates)?;
        let probs = block.coef.probabilities(&z)?;
        let targets = std::iter::once(block.coef.reference).chain(block.coef.destinations.iter().copied());
        for (p, to) in probs.into_iter().zip(targets) {
            let j = space.index_of(to).ok_or(Error::MissingBlock(to))?;
            m[i][j] += p;
        }
    }
    Ok(m)
}

/// Grid and course settings for a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupancyOptions {
    pub course: u32,
    pub step_days: u32,
    pub horizon_days: u32,
    pub initial_state: State,
    /// Confidence level of bootstrap bands.
    pub level: f64,
}

impl Default for OccupancyOptions {
    fn default() -> Self {
        OccupancyOptions {
            course: 1,
            step_days: 61,
            horizon_days: 366,
            initial_state: 1,
            level: 0.95,
        }
    }
}

impl OccupancyOptions {
    fn validate(&self) -> Result<()> {
        if self.step_days == 0 {
            return Err(Error::config("step must be positive"));
        }
        if !self.horizon_days.is_multiple_of(self.step_days) {
            return Err(Error::config(format!(
                "horizon {} is not a multiple of the step {}",
                self.horizon_days, self.step_days
            )));
        }
        if self.course == 0 {
            return Err(Error::config("course index starts at 1"));
        }
        if !(0.0..1.0).contains(&self.level) {
            return Err(Error::config("band level must be in [0, 1)"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<u32> {
        (0..=self.horizon_days / self.step_days)
            .map(|k| k * self.step_days)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyCurve {
    pub states: Vec<State>,
    pub grid: Vec<u32>,
    /// Probability vector over `states` at each grid time.
    pub probs: Vec<Vec<f64>>,
    /// Pointwise `(lower, upper)` per grid time and state.
    pub bands: Option<Vec<Vec<(f64, f64)>>>,
}

impl OccupancyCurve {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["day".to_string()];
        header.extend(self.states.iter().map(|s| format!("state_{s}")));
        if self.bands.is_some() {
            for s in &self.states {
                header.push(format!("state_{s}_lower"));
                header.push(format!("state_{s}_upper"));
            }
        }
        out.write_record(&header)?;
        for (k, day) in self.grid.iter().enumerate() {
            let mut rec = vec![day.to_string()];
            rec.extend(self.probs[k].iter().map(f64::to_string));
            if let Some(bands) = &self.bands {
                for (lo, hi) in &bands[k] {
                    rec.push(lo.to_string());
                    rec.push(hi.to_string());
                }
            }
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// One-step matrices `M(t_k)` for `k = 0, ..., K − 1` with `v = step`.
pub fn step_matrices(
    fit: &FitResult,
    covariates: &Covariates,
    opts: &OccupancyOptions,
) -> Result<Vec<Vec<Vec<f64>>>> {
    opts.validate()?;
    let encoder = fit.spec.encoder()?;
    let grid = opts.grid();
    grid[..grid.len() - 1]
        .iter()
        .map(|&t| {
            matrix_with(
                fit,
                &encoder,
                covariates,
                opts.course,
                f64::from(t),
                f64::from(opts.step_days),
            )
        })
        .collect()
}

fn point_curve(fit: &FitResult, covariates: &Covariates, opts: &OccupancyOptions) -> Result<Vec<Vec<f64>>> {
    let space = &fit.spec.state_space;
    let start = space
        .index_of(opts.initial_state)
        .ok_or_else(|| Error::config(format!("initial state {} is unknown", opts.initial_state)))?;
    let mut p = vec![0.0; space.states.len()];
    p[start] = 1.0;
    let mut out = vec![p.clone()];
    for m in step_matrices(fit, covariates, opts)? {
        p = (0..p.len())
            .map(|j| p.iter().zip(&m).map(|(pi, row)| pi * row[j]).sum())
            .collect();
        out.push(p.clone());
    }
    Ok(out)
}

/// Occupancy from a point mass on the initial state, with optional pointwise
/// percentile bands from recomputing the curve for each bootstrap replicate.
pub fn predict_occupancy(
    fit: &FitResult,
    covariates: &Covariates,
    opts: &OccupancyOptions,
    bootstrap: Option<&BootstrapSet>,
) -> Result<OccupancyCurve> {
    let probs = point_curve(fit, covariates, opts)?;
    let bands = match bootstrap {
        None => None,
        Some(set) => {
            if set.len() < 2 {
                return Err(Error::TooFewReplicates {
                    got: set.len(),
                    needed: 2,
                });
            }
            let curves = exec::map_indexed(set.len(), |b| {
                point_curve(&fit.with_theta(&set.replicates[b])?, covariates, opts)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let alpha = (1.0 - opts.level) / 2.0;
            Some(
                (0..probs.len())
                    .map(|k| {
                        (0..probs[k].len())
                            .map(|s| {
                                let mut v: Vec<f64> = curves.iter().map(|c| c[k][s]).collect();
                                v.sort_by(f64::total_cmp);
                                (quantile_type7(&v, alpha), quantile_type7(&v, 1.0 - alpha))
                            })
                            .collect()
                    })
                    .collect(),
            )
        }
    };
    Ok(OccupancyCurve {
        states: fit.spec.state_space.states.clone(),
        grid: opts.grid(),
        probs,
        bands,
    })
}
