//! Cluster bootstrap confidence intervals: direct refitting of top-level
//! cluster resamples and the one-step estimating function bootstrap (EFB).

mod interval;

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data_model::{TransitionRow, VisitRecord};
use crate::error::{Error, Result};
use crate::estimator::{self, BlockSlot, CoefName, FitOptions, FitResult, ModelData};
use crate::exec;
use crate::rng::{substream, StreamRng};

pub use interval::{percentile_ci, quantile_type7, IntervalRow, IntervalTable, PairedIntervalTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Direct,
    Efb,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::Efb => "efb",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub index: usize,
    pub reason: String,
}

/// Bootstrap replicate parameter vectors, flat in [`FitResult::theta`] layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSet {
    pub method: Method,
    pub seed: u64,
    pub requested: usize,
    /// Replicate number of each stored row.
    pub replicate_index: Vec<usize>,
    pub replicates: Vec<Vec<f64>>,
    pub failures: Vec<ReplicateFailure>,
    pub layout: Vec<BlockSlot>,
    pub names: Vec<CoefName>,
}

impl BootstrapSet {
    pub fn len(&self) -> usize {
        self.replicates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replicates.is_empty()
    }

    /// Values of coefficient `j` across replicates.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.replicates.iter().map(|r| r[j]).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}

/// `n` cluster indices drawn uniformly with replacement.
pub fn draw_clusters(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// How many times each of `n` clusters was drawn.
pub fn multiplicities(draws: &[usize], n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n];
    for &d in draws {
        m[d] += 1.0;
    }
    m
}

/// The resample for replicate `b` of a run seeded with `seed`.
pub fn replicate_weights(seed: u64, b: usize, n_clusters: usize) -> Vec<f64> {
    let mut rng = substream(seed, b as u64);
    multiplicities(&draw_clusters(n_clusters, &mut rng), n_clusters)
}

/// Records that belong to a top-level cluster and can be re-keyed.
pub trait ClusterMember: Clone {
    fn cluster_key(&self) -> &str;
    fn with_cluster_key(&self, key: &str) -> Self;
}

impl ClusterMember for VisitRecord {
    fn cluster_key(&self) -> &str {
        &self.practice_id
    }
    fn with_cluster_key(&self, key: &str) -> Self {
        VisitRecord {
            practice_id: key.to_string(),
            ..self.clone()
        }
    }
}

impl ClusterMember for TransitionRow {
    fn cluster_key(&self) -> &str {
        &self.practice_id
    }
    fn with_cluster_key(&self, key: &str) -> Self {
        TransitionRow {
            practice_id: key.into(),
            ..self.clone()
        }
    }
}

/// Draws as many clusters as there are, with replacement. Each drawn cluster
/// keeps all of its records; the `r`-th draw of cluster `c` is re-keyed to
/// `c#r` so repeated draws stay distinct.
pub fn resample_clusters<T: ClusterMember>(items: &[T], rng: &mut StreamRng) -> Result<Vec<T>> {
    if items.is_empty() {
        return Err(Error::EmptyData("nothing to resample".into()));
    }
    let mut keys: Vec<&str> = items.iter().map(|i| i.cluster_key()).collect();
    keys.sort_unstable();
    keys.dedup();
    let mut members: Vec<Vec<&T>> = vec![Vec::new(); keys.len()];
    for item in items {
        let c = keys.binary_search(&item.cluster_key()).unwrap();
        members[c].push(item);
    }
    let draws = draw_clusters(keys.len(), rng);
    let mut out = Vec::with_capacity(items.len());
    for (r, &c) in draws.iter().enumerate() {
        let key = format!("{}#{r}", keys[c]);
        out.extend(members[c].iter().map(|m| m.with_cluster_key(&key)));
    }
    Ok(out)
}

fn check_layout(fit: &FitResult, data: &ModelData) -> Result<()> {
    let origins: Vec<_> = data.blocks.iter().map(|b| b.origin).collect();
    let fitted: Vec<_> = fit.blocks.keys().copied().collect();
    if origins != fitted || fit.dim() != data.dim() {
        return Err(Error::config(
            "the fit and the data have different origin blocks",
        ));
    }
    Ok(())
}

fn new_set(method: Method, fit: &FitResult, seed: u64, requested: usize) -> BootstrapSet {
    BootstrapSet {
        method,
        seed,
        requested,
        replicate_index: Vec::new(),
        replicates: Vec::new(),
        failures: Vec::new(),
        layout: fit.layout(),
        names: fit.coefficient_names(),
    }
}

/// Refits every resample from zero. Non-convergent replicates are dropped and
/// reported; more than 5% failures is an error.
pub fn direct_bootstrap(
    fit: &FitResult,
    data: &ModelData,
    replicates: usize,
    seed: u64,
    opts: &FitOptions,
) -> Result<BootstrapSet> {
    check_layout(fit, data)?;
    let n = data.n_clusters();
    let results = exec::map_indexed(replicates, |b| {
        let w = replicate_weights(seed, b, n);
        estimator::fit_data(data, Some(&w), opts).map(|f| f.theta())
    });
    let mut set = new_set(Method::Direct, fit, seed, replicates);
    for (b, r) in results.into_iter().enumerate() {
        match r {
            Ok(theta) => {
                set.replicate_index.push(b);
                set.replicates.push(theta);
            }
            Err(e) => set.failures.push(ReplicateFailure {
                index: b,
                reason: e.to_string(),
            }),
        }
    }
    if set.failures.len() * 20 > replicates {
        return Err(Error::TooManyFailures {
            failures: set.failures.len(),
            requested: replicates,
        });
    }
    Ok(set)
}

/// The one-step map `θ̂ − (∂U/∂θ)⁻¹ U_b(θ̂)` with per-cluster scores cached
/// at θ̂. The score Jacobian is minus the observed information, so the step
/// is `+I(θ̂)⁻¹ U_b(θ̂)`.
#[derive(Debug, Clone)]
pub struct EfbEngine {
    theta_hat: Vec<f64>,
    layout: Vec<BlockSlot>,
    /// Block-diagonal pieces of the inverse information at θ̂, row-major.
    sigma: Vec<Vec<f64>>,
    /// `n_clusters × dim` score contributions at θ̂.
    scores: Vec<f64>,
    n_clusters: usize,
}

impl EfbEngine {
    pub fn new(fit: &FitResult, data: &ModelData) -> Result<Self> {
        check_layout(fit, data)?;
        let layout = fit.layout();
        let dim = fit.dim();
        let n = data.n_clusters();
        let per_block = exec::map_indexed(data.blocks.len(), |b| {
            let design = &data.blocks[b];
            let theta = fit.blocks[&design.origin].coef.flat();
            estimator::cluster_scores(design, &theta, n)
        });
        let mut scores = vec![0.0; n * dim];
        for (slot, block) in layout.iter().zip(per_block) {
            let block = block?;
            for g in 0..n {
                scores[g * dim + slot.offset..g * dim + slot.offset + slot.dim]
                    .copy_from_slice(&block[g * slot.dim..(g + 1) * slot.dim]);
            }
        }
        Ok(EfbEngine {
            theta_hat: fit.theta(),
            sigma: fit.blocks.values().map(|b| b.sigma.clone()).collect(),
            layout,
            scores,
            n_clusters: n,
        })
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    /// Resample score `U_b(θ̂) = Σ_g m_g U_g(θ̂)`.
    pub fn resample_score(&self, weights: &[f64]) -> Vec<f64> {
        let dim = self.theta_hat.len();
        let mut u = vec![0.0; dim];
        for (g, &m) in weights.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for (acc, s) in u.iter_mut().zip(&self.scores[g * dim..(g + 1) * dim]) {
                *acc += m * s;
            }
        }
        u
    }

    /// `I(θ̂)⁻¹ U_b(θ̂)`.
    pub fn deviation(&self, weights: &[f64]) -> Vec<f64> {
        let u = self.resample_score(weights);
        let mut out = Vec::with_capacity(u.len());
        for (slot, sigma) in self.layout.iter().zip(&self.sigma) {
            let block = &u[slot.offset..slot.offset + slot.dim];
            out.extend(estimator::linalg::mat_vec(sigma, block));
        }
        out
    }

    pub fn replicate(&self, weights: &[f64]) -> Vec<f64> {
        self.theta_hat
            .iter()
            .zip(self.deviation(weights))
            .map(|(t, d)| t + d)
            .collect()
    }
}

/// Estimating function bootstrap: no refitting, the inverse information is
/// evaluated once on the original data.
pub fn efb(fit: &FitResult, data: &ModelData, replicates: usize, seed: u64) -> Result<BootstrapSet> {
    let engine = EfbEngine::new(fit, data)?;
    efb_with_engine(&engine, fit, replicates, seed)
}

fn efb_with_engine(
    engine: &EfbEngine,
    fit: &FitResult,
    replicates: usize,
    seed: u64,
) -> Result<BootstrapSet> {
    let n = engine.n_clusters();
    let draws = exec::map_indexed(replicates, |b| engine.replicate(&replicate_weights(seed, b, n)));
    let mut set = new_set(Method::Efb, fit, seed, replicates);
    for (b, theta) in draws.into_iter().enumerate() {
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteScore(b));
        }
        set.replicate_index.push(b);
        set.replicates.push(theta);
    }
    Ok(set)
}

/// Wall-clock comparison of the two methods on the same resample sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub replicates: usize,
    pub direct_total_secs: f64,
    /// Includes computing the cached cluster scores.
    pub efb_total_secs: f64,
    pub direct_per_replicate_secs: f64,
    pub efb_per_replicate_secs: f64,
    /// Direct per-replicate time over EFB per-replicate time.
    pub speed_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct MethodComparison {
    pub direct: BootstrapSet,
    pub efb: BootstrapSet,
    pub intervals: PairedIntervalTable,
    pub timing: TimingReport,
}

/// Runs both methods on the identical seeded resample sequence.
pub fn compare_methods(
    fit: &FitResult,
    data: &ModelData,
    replicates: usize,
    seed: u64,
    level: f64,
    opts: &FitOptions,
) -> Result<MethodComparison> {
    let start = Instant::now();
    let direct = direct_bootstrap(fit, data, replicates, seed, opts)?;
    let direct_secs = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let efb = efb(fit, data, replicates, seed)?;
    let efb_secs = start.elapsed().as_secs_f64();
    let per = |t: f64| t / replicates.max(1) as f64;
    let intervals = PairedIntervalTable::new(
        &percentile_ci(fit, &efb, level)?,
        &percentile_ci(fit, &direct, level)?,
    );
    Ok(MethodComparison {
        timing: TimingReport {
            replicates,
            direct_total_secs: direct_secs,
            efb_total_secs: efb_secs,
            direct_per_replicate_secs: per(direct_secs),
            efb_per_replicate_secs: per(efb_secs),
            speed_ratio: direct_secs / efb_secs.max(f64::MIN_POSITIVE),
        },
        direct,
        efb,
        intervals,
    })
}
