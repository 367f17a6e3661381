//! Multinomial-logit log-likelihood, score and observed information for one
//! origin block. Rows are processed in fixed chunks whose partial sums are
//! combined in chunk order, so results are identical for any thread count.

use super::design::BlockDesign;
use crate::exec;

const CHUNK: usize = 2048;

/// What to accumulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum Need {
    Loglik,
    Score,
    Information,
}

/// Optional per-cluster row weights (bootstrap multiplicities).
#[derive(Debug, Clone, Copy)]
pub(crate) enum Weights<'a> {
    Unit,
    PerCluster(&'a [f64]),
}

impl Weights<'_> {
    #[inline]
    pub(crate) fn of(&self, design: &BlockDesign, row: usize) -> f64 {
        match self {
            Weights::Unit => 1.0,
            Weights::PerCluster(w) => w[design.cluster[row] as usize],
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Accum {
    pub loglik: f64,
    pub score: Vec<f64>,
    /// Row-major `dim × dim`; empty unless information was requested.
    pub info: Vec<f64>,
}

impl Accum {
    fn zeros(dim: usize, need: Need) -> Self {
        Accum {
            loglik: 0.0,
            score: if need >= Need::Score { vec![0.0; dim] } else { Vec::new() },
            info: if need >= Need::Information { vec![0.0; dim * dim] } else { Vec::new() },
        }
    }

    fn add(&mut self, other: &Accum) {
        self.loglik += other.loglik;
        for (a, b) in self.score.iter_mut().zip(&other.score) {
            *a += b;
        }
        for (a, b) in self.info.iter_mut().zip(&other.info) {
            *a += b;
        }
    }
}

/// Destination probabilities `[P_ref, P_1, ..., P_K]` for a predictor vector,
/// together with `log P_y` when `y` is given.
#[inline]
pub(crate) fn softmax_into(theta: &[f64], z: &[f64], probs: &mut [f64]) -> f64 {
    let p = z.len();
    let k = probs.len() - 1;
    let mut max = 0.0f64;
    for d in 0..k {
        let eta: f64 = theta[d * p..(d + 1) * p].iter().zip(z).map(|(b, x)| b * x).sum();
        probs[d + 1] = eta;
        max = max.max(eta);
    }
    probs[0] = (-max).exp();
    let mut total = probs[0];
    for e in probs[1..].iter_mut() {
        *e = (*e - max).exp();
        total += *e;
    }
    for e in probs.iter_mut() {
        *e /= total;
    }
    max + total.ln()
}

/// Probabilities over `[reference, destinations...]` for one predictor vector.
pub fn destination_probabilities(theta: &[f64], z: &[f64], n_destinations: usize) -> Vec<f64> {
    let mut probs = vec![0.0; n_destinations + 1];
    softmax_into(theta, z, &mut probs);
    probs
}

fn accumulate_range(
    design: &BlockDesign,
    theta: &[f64],
    weights: Weights,
    need: Need,
    rows: std::ops::Range<usize>,
) -> Accum {
    let p = design.n_predictors();
    let k = design.n_destinations();
    let dim = k * p;
    let mut acc = Accum::zeros(dim, need);
    let mut probs = vec![0.0; k + 1];
    let mut resid = vec![0.0; k];
    for i in rows {
        let w = weights.of(design, i);
        if w == 0.0 {
            continue;
        }
        let z = design.row(i);
        let y = design.y[i] as usize;
        let log_norm = softmax_into(theta, z, &mut probs);
        let eta_y = if y == 0 {
            0.0
        } else {
            theta[(y - 1) * p..y * p].iter().zip(z).map(|(b, x)| b * x).sum()
        };
        acc.loglik += w * (eta_y - log_norm);
        if need == Need::Loglik {
            continue;
        }
        for d in 0..k {
            resid[d] = f64::from(u8::from(y == d + 1)) - probs[d + 1];
            let r = w * resid[d];
            for (s, x) in acc.score[d * p..(d + 1) * p].iter_mut().zip(z) {
                *s += r * x;
            }
        }
        if need < Need::Information {
            continue;
        }
        for d in 0..k {
            for e in d..k {
                let c = w * (if d == e { probs[d + 1] } else { 0.0 } - probs[d + 1] * probs[e + 1]);
                if c == 0.0 {
                    continue;
                }
                for j in 0..p {
                    let cj = c * z[j];
                    let row = (d * p + j) * dim + e * p;
                    let start = if d == e { j } else { 0 };
                    for (slot, x) in acc.info[row + start..row + p].iter_mut().zip(&z[start..]) {
                        *slot += cj * x;
                    }
                }
            }
        }
    }
    acc
}

/// Accumulates the requested quantities over all rows of a block.
pub(crate) fn evaluate(design: &BlockDesign, theta: &[f64], weights: Weights, need: Need) -> Accum {
    let dim = design.dim();
    let parts = exec::map_chunks(design.n_rows(), CHUNK, |range| {
        accumulate_range(design, theta, weights, need, range)
    });
    let mut total = Accum::zeros(dim, need);
    for part in &parts {
        total.add(part);
    }
    if need == Need::Information {
        // Only the upper triangle was accumulated.
        for i in 0..dim {
            for j in 0..i {
                total.info[i * dim + j] = total.info[j * dim + i];
            }
        }
    }
    total
}

/// Score contributions per cluster, `n_clusters × dim` row-major.
pub(crate) fn cluster_scores(design: &BlockDesign, theta: &[f64], n_clusters: usize) -> Vec<f64> {
    let p = design.n_predictors();
    let k = design.n_destinations();
    let dim = k * p;
    let mut out = vec![0.0; n_clusters * dim];
    let mut probs = vec![0.0; k + 1];
    for i in 0..design.n_rows() {
        let z = design.row(i);
        let y = design.y[i] as usize;
        softmax_into(theta, z, &mut probs);
        let base = design.cluster[i] as usize * dim;
        for d in 0..k {
            let r = f64::from(u8::from(y == d + 1)) - probs[d + 1];
            for (s, x) in out[base + d * p..base + (d + 1) * p].iter_mut().zip(z) {
                *s += r * x;
            }
        }
    }
    out
}
