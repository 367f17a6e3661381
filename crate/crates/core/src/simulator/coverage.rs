use serde::{Deserialize, Serialize};

use super::config::{SimCoefficients, SimConfig, N_COEF};
use super::generate::simulate;
use crate::error::{Error, Result};
use crate::estimator::{self, FitOptions};
use crate::exec;
use crate::resampling::{self, percentile_ci, Method};
use crate::rng::derive_seed;

const TAG_DATASET: u64 = 0x4441_5441;
const TAG_BOOT: u64 = 0x424F_4F54;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageOptions {
    pub datasets: usize,
    pub replicates: usize,
    pub methods: Vec<Method>,
    pub level: f64,
    pub fit: FitOptions,
}

impl Default for CoverageOptions {
    fn default() -> Self {
        CoverageOptions {
            datasets: 200,
            replicates: 400,
            methods: vec![Method::Direct, Method::Efb],
            level: 0.95,
            fit: FitOptions::default(),
        }
    }
}

/// Bias and coverage of one coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    /// 1 for the 1 -> 2 model, 2 for the 2 -> 2 model.
    pub origin: u32,
    pub predictor: String,
    pub true_value: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    /// Monte Carlo standard error of `bias`.
    pub bias_se: f64,
    /// Coverage in percent per requested method, in `methods` order.
    pub coverage: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFailure {
    pub dataset: usize,
    /// `None` when the point fit itself failed.
    pub method: Option<Method>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub rho: f64,
    pub level: f64,
    pub replicates: usize,
    pub methods: Vec<Method>,
    /// Datasets contributing to the point-estimate summaries.
    pub fitted: usize,
    /// Datasets contributing to each method's coverage.
    pub covered_datasets: Vec<usize>,
    pub rows: Vec<CoverageRow>,
    pub failures: Vec<DatasetFailure>,
}

impl CoverageReport {
    pub fn coverage_of(&self, method: Method) -> Option<Vec<f64>> {
        let m = self.methods.iter().position(|&x| x == method)?;
        Some(self.rows.iter().map(|r| r.coverage[m]).collect())
    }

    pub fn max_abs_bias(&self) -> f64 {
        self.rows.iter().fold(0.0f64, |m, r| m.max(r.bias.abs()))
    }

    /// Columns: rho, transition, predictor, true value, bias x 10^4, one
    /// coverage column per method, then supporting detail.
    pub fn write_csv<W: std::io::Write>(&self, w: W, header: bool) -> Result<()> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        if header {
            let mut h = vec![
                "rho".to_string(),
                "transition".into(),
                "predictor".into(),
                "true_value".into(),
                "bias_1e4".into(),
            ];
            h.extend(self.methods.iter().map(|m| format!("{}_coverage", m.as_str())));
            h.extend(["mean_estimate".into(), "bias_se".into(), "datasets".into()]);
            out.write_record(&h)?;
        }
        for r in &self.rows {
            let mut rec = vec![
                self.rho.to_string(),
                format!("{}->2", r.origin),
                r.predictor.clone(),
                format!("{:.4}", r.true_value),
                format!("{:.0}", r.bias * 1e4),
            ];
            rec.extend(r.coverage.iter().map(|c| format!("{c:.1}")));
            rec.extend([
                r.mean_estimate.to_string(),
                r.bias_se.to_string(),
                self.fitted.to_string(),
            ]);
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

struct Outcome {
    theta: Vec<f64>,
    names: Vec<String>,
    /// Per method: covered flags, or the failure reason.
    covered: Vec<std::result::Result<Vec<bool>, String>>,
}

/// Seed of the `d`-th dataset of a study.
pub fn dataset_seed(cfg: &SimConfig, d: usize) -> u64 {
    derive_seed(cfg.seed, TAG_DATASET ^ d as u64)
}

/// Generates `datasets` independent datasets, fits each, builds percentile
/// intervals with every requested method on a shared resample sequence, and
/// summarizes bias and coverage of `truth`. Failures are recorded per dataset.
pub fn coverage_study(
    cfg: &SimConfig,
    truth: &SimCoefficients,
    opts: &CoverageOptions,
) -> Result<CoverageReport> {
    cfg.validate()?;
    if opts.datasets == 0 {
        return Err(Error::config("a coverage study needs at least one dataset"));
    }
    if opts.replicates < 2 && !opts.methods.is_empty() {
        return Err(Error::config("percentile intervals need at least 2 replicates"));
    }
    let truth_flat = truth.flat();
    let outcomes = exec::map_indexed(opts.datasets, |d| -> std::result::Result<Outcome, String> {
        let mut c = cfg.clone();
        c.seed = dataset_seed(cfg, d);
        let data = simulate(&c)
            .and_then(|s| s.to_model_data())
            .map_err(|e| e.to_string())?;
        let fit = estimator::fit_data(&data, None, &opts.fit).map_err(|e| e.to_string())?;
        if fit.dim() != 2 * N_COEF {
            return Err(format!("fit has {} coefficients, expected {}", fit.dim(), 2 * N_COEF));
        }
        let boot_seed = derive_seed(c.seed, TAG_BOOT);
        let covered = opts
            .methods
            .iter()
            .map(|&m| {
                let set = match m {
                    Method::Direct => resampling::direct_bootstrap(
                        &fit,
                        &data,
                        opts.replicates,
                        boot_seed,
                        &opts.fit,
                    ),
                    Method::Efb => resampling::efb(&fit, &data, opts.replicates, boot_seed),
                };
                let table = set
                    .and_then(|s| percentile_ci(&fit, &s, opts.level))
                    .map_err(|e| e.to_string())?;
                Ok(table
                    .rows
                    .iter()
                    .zip(&truth_flat)
                    .map(|(r, t)| r.lower <= *t && *t <= r.upper)
                    .collect())
            })
            .collect();
        Ok(Outcome {
            theta: fit.theta(),
            names: fit.coefficient_names().into_iter().map(|n| n.predictor).collect(),
            covered,
        })
    });

    let dim = 2 * N_COEF;
    let mut failures = Vec::new();
    let mut sum = vec![0.0; dim];
    let mut sum_sq = vec![0.0; dim];
    let mut hits = vec![vec![0usize; dim]; opts.methods.len()];
    let mut covered_datasets = vec![0usize; opts.methods.len()];
    let mut fitted = 0usize;
    let mut names: Option<Vec<String>> = None;
    for (d, o) in outcomes.into_iter().enumerate() {
        let o = match o {
            Ok(o) => o,
            Err(reason) => {
                failures.push(DatasetFailure { dataset: d, method: None, reason });
                continue;
            }
        };
        fitted += 1;
        for j in 0..dim {
            let e = o.theta[j] - truth_flat[j];
            sum[j] += e;
            sum_sq[j] += e * e;
        }
        names.get_or_insert(o.names);
        for (m, c) in o.covered.into_iter().enumerate() {
            match c {
                Ok(flags) => {
                    covered_datasets[m] += 1;
                    for (h, f) in hits[m].iter_mut().zip(flags) {
                        *h += f as usize;
                    }
                }
                Err(reason) => failures.push(DatasetFailure {
                    dataset: d,
                    method: Some(opts.methods[m]),
                    reason,
                }),
            }
        }
    }
    if fitted == 0 {
        return Err(Error::EmptyData(format!(
            "every dataset failed; first failure: {}",
            failures.first().map(|f| f.reason.as_str()).unwrap_or("none")
        )));
    }
    let names = names.expect("at least one fitted dataset");
    let n = fitted as f64;
    let rows = (0..dim)
        .map(|j| {
            let bias = sum[j] / n;
            let var = if fitted > 1 {
                (sum_sq[j] - n * bias * bias).max(0.0) / (n - 1.0)
            } else {
                0.0
            };
            CoverageRow {
                origin: (j / N_COEF) as u32 + 1,
                predictor: names[j].clone(),
                true_value: truth_flat[j],
                mean_estimate: truth_flat[j] + bias,
                bias,
                bias_se: (var / n).sqrt(),
                coverage: (0..opts.methods.len())
                    .map(|m| {
                        100.0 * hits[m][j] as f64 / covered_datasets[m].max(1) as f64
                    })
                    .collect(),
            }
        })
        .collect();
    Ok(CoverageReport {
        rho: cfg.rho,
        level: opts.level,
        replicates: opts.replicates,
        methods: opts.methods.clone(),
        fitted,
        covered_datasets,
        rows,
        failures,
    })
}
