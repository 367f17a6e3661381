use serde::{Deserialize, Serialize};

use super::design::BlockDesign;
use super::kernel::{evaluate, Need, Weights};
use super::linalg::SpdFactor;
use crate::error::{Error, Result};

/// Newton-Raphson controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Convergence when the score max-norm is at most this.
    pub grad_tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Any coefficient beyond this in magnitude is treated as separation.
    pub separation_threshold: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            grad_tol: 1e-8,
            max_iter: 100,
            max_halvings: 30,
            separation_threshold: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub grad_max_norm: f64,
    /// The information matrix needed a ridge to factorize.
    pub ridge_applied: bool,
    pub step_halvings: usize,
    pub n_rows: usize,
}

/// Converged block: coefficients, inverse information and diagnostics.
#[derive(Debug, Clone)]
pub(crate) struct BlockSolution {
    pub theta: Vec<f64>,
    pub sigma: Vec<f64>,
    pub loglik: f64,
    pub diagnostics: FitDiagnostics,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Guarded Newton-Raphson from `theta = 0`.
pub(crate) fn newton(
    design: &BlockDesign,
    weights: Weights,
    opts: &FitOptions,
) -> Result<BlockSolution> {
    let dim = design.dim();
    if design.n_rows() == 0 {
        return Err(Error::EmptyData(format!(
            "no transitions out of state {}",
            design.origin
        )));
    }
    // A category with no weighted mass drives its intercept to infinity.
    let mut mass = vec![0.0; design.n_destinations() + 1];
    for i in 0..design.n_rows() {
        mass[design.y[i] as usize] += weights.of(design, i);
    }
    if let Some(k) = mass.iter().position(|&m| m <= 0.0) {
        let destination = if k == 0 { design.reference } else { design.destinations[k - 1] };
        return Err(Error::Separation {
            origin: design.origin,
            destination,
            predictor: "intercept".into(),
        });
    }
    let mut theta = vec![0.0; dim];
    let mut diag = FitDiagnostics {
        iterations: 0,
        converged: false,
        grad_max_norm: f64::INFINITY,
        ridge_applied: false,
        step_halvings: 0,
        n_rows: design.n_rows(),
    };
    let non_convergence = |diag: &FitDiagnostics| Error::NonConvergence {
        origin: design.origin,
        diagnostics: diag.clone(),
    };
    let mut polished = false;
    loop {
        let acc = evaluate(design, &theta, weights, Need::Information);
        diag.grad_max_norm = max_abs(&acc.score);
        if !acc.loglik.is_finite() || !diag.grad_max_norm.is_finite() {
            return Err(non_convergence(&diag));
        }
        let factor = SpdFactor::new(dim, &acc.info).ok_or_else(|| non_convergence(&diag))?;
        if diag.grad_max_norm <= opts.grad_tol {
            // One extra full step takes the score down to rounding level, so
            // the one-step bootstrap sees an exact root.
            if !polished && diag.grad_max_norm > 0.0 {
                polished = true;
                let step = factor.solve(&acc.score);
                let candidate: Vec<f64> = theta.iter().zip(&step).map(|(t, s)| t + s).collect();
                let next = evaluate(design, &candidate, weights, Need::Score);
                if next.loglik.is_finite() && max_abs(&next.score) < diag.grad_max_norm {
                    theta = candidate;
                    continue;
                }
            }
            diag.converged = true;
            diag.ridge_applied |= factor.ridged;
            return Ok(BlockSolution {
                sigma: factor.inverse(),
                theta,
                loglik: acc.loglik,
                diagnostics: diag,
            });
        }
        if diag.iterations >= opts.max_iter {
            return Err(non_convergence(&diag));
        }
        diag.ridge_applied |= factor.ridged;
        let step = factor.solve(&acc.score);
        let slack = 1e-12 * (1.0 + acc.loglik.abs());
        let mut scale = 1.0;
        let mut accepted = None;
        for h in 0..=opts.max_halvings {
            let candidate: Vec<f64> = theta.iter().zip(&step).map(|(t, s)| t + scale * s).collect();
            let ll = evaluate(design, &candidate, weights, Need::Loglik).loglik;
            if ll.is_finite() && ll >= acc.loglik - slack {
                diag.step_halvings += h;
                accepted = Some(candidate);
                break;
            }
            scale *= 0.5;
        }
        diag.iterations += 1;
        theta = accepted.ok_or_else(|| non_convergence(&diag))?;
        if let Some((idx, _)) = theta
            .iter()
            .enumerate()
            .find(|(_, b)| b.abs() > opts.separation_threshold)
        {
            let p = design.n_predictors();
            return Err(Error::Separation {
                origin: design.origin,
                destination: design.destinations[idx / p],
                predictor: design.predictors[idx % p].clone(),
            });
        }
    }
}
