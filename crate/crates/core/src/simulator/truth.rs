use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::config::{SimCoefficients, SimConfig, N_COEF};
use super::generate::{design_row, dot, logistic, practice_stream, walk_practice, CourseInfo, Sink};
use crate::error::{Error, Result};
use crate::estimator::linalg::SpdFactor;
use crate::exec;
use crate::rng::{derive_seed, substream};

const TAG_TRUTH: u64 = 0x5452_5554;
const TAG_LHS: u64 = 0x004C_4853;
const TAG_STRATA: u64 = 0x5354_5241;
const PACKED: usize = N_COEF * (N_COEF + 1) / 2;

/// Weighted binary-logistic sufficient statistics with fractional responses.
#[derive(Debug, Clone)]
struct LogitAccum {
    weight: f64,
    loglik: f64,
    score: [f64; N_COEF],
    /// Packed upper triangle of the information.
    info: [f64; PACKED],
}

impl LogitAccum {
    fn new() -> Self {
        LogitAccum { weight: 0.0, loglik: 0.0, score: [0.0; N_COEF], info: [0.0; PACKED] }
    }

    /// Adds `w` trials with success fraction `y` at predictor `z`.
    #[inline]
    fn add(&mut self, z: &[f64; N_COEF], w: f64, y: f64, q: f64) {
        if w == 0.0 {
            return;
        }
        self.weight += w;
        self.loglik += w * (y * q.max(f64::MIN_POSITIVE).ln()
            + (1.0 - y) * (1.0 - q).max(f64::MIN_POSITIVE).ln());
        let r = w * (y - q);
        let h = w * q * (1.0 - q);
        let mut idx = 0;
        for a in 0..N_COEF {
            self.score[a] += r * z[a];
            let ha = h * z[a];
            for b in a..N_COEF {
                self.info[idx] += ha * z[b];
                idx += 1;
            }
        }
    }

    fn full_info(&self) -> Vec<f64> {
        let mut m = vec![0.0; N_COEF * N_COEF];
        let mut idx = 0;
        for a in 0..N_COEF {
            for b in a..N_COEF {
                m[a * N_COEF + b] = self.info[idx];
                m[b * N_COEF + a] = self.info[idx];
                idx += 1;
            }
        }
        m
    }

    /// Newton step; `None` when the information is singular.
    fn step(&self) -> Option<[f64; N_COEF]> {
        let f = SpdFactor::new(N_COEF, &self.full_info())?;
        let s = f.solve(&self.score);
        let mut out = [0.0; N_COEF];
        out.copy_from_slice(&s);
        Some(out)
    }

    fn scaled_gradient(&self) -> f64 {
        let m = self.score.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        m / self.weight.max(f64::MIN_POSITIVE)
    }
}

/// Newton iterations for both transition models; `pass` evaluates the
/// accumulators at the current marginal coefficients.
fn solve_marginal(
    start: &SimCoefficients,
    tol: f64,
    max_iter: usize,
    mut pass: impl FnMut(&[[f64; N_COEF]; 2]) -> Result<[LogitAccum; 2]>,
) -> Result<(SimCoefficients, TruthDiagnostics)> {
    let mut theta = [start.from_1, start.from_2];
    let mut diag = TruthDiagnostics::default();
    for it in 0..=max_iter {
        let acc = pass(&theta)?;
        diag.iterations = it;
        diag.scaled_gradient = acc[0].scaled_gradient().max(acc[1].scaled_gradient());
        diag.weight = [acc[0].weight, acc[1].weight];
        if diag.scaled_gradient <= tol {
            return Ok((
                SimCoefficients { from_1: theta[0], from_2: theta[1] },
                diag,
            ));
        }
        if it == max_iter {
            break;
        }
        for s in 0..2 {
            let step = acc[s].step().ok_or_else(|| {
                Error::EmptyData(format!("marginal model for state {} is not identified", s + 1))
            })?;
            for (t, d) in theta[s].iter_mut().zip(step) {
                *t += d;
            }
        }
    }
    Err(Error::EmptyData(format!(
        "marginal fit did not converge (scaled gradient {:.3e})",
        diag.scaled_gradient
    )))
}

/// How transitions enter the extreme-scale fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthMode {
    /// Exact state probabilities given each course's draws replace the sampled
    /// states (same expectation, lower variance).
    RaoBlackwell,
    /// The sampled states, as a plain fit to the generated data would see them.
    Sampled,
}

/// Treatment of practice intercepts in the extreme-scale run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PracticeEffects {
    /// As drawn by the generator.
    Sampled,
    /// Stratified by practice size (see [`stratified_practice_effects`]).
    Stratified,
    /// Integrated out per practice with a Gauss-Hermite rule of this many
    /// nodes per dimension. Requires [`TruthMode::RaoBlackwell`].
    Integrated { nodes: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthOptions {
    pub mode: TruthMode,
    pub practice_effects: PracticeEffects,
    /// Stratify patient intercepts within each practice by patient size.
    pub stratify_patients: bool,
    /// Convergence when every score component divided by the total weight is
    /// at most this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for TruthOptions {
    fn default() -> Self {
        TruthOptions {
            mode: TruthMode::RaoBlackwell,
            practice_effects: PracticeEffects::Integrated { nodes: 5 },
            stratify_patients: true,
            tol: 1e-12,
            max_iter: 50,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TruthDiagnostics {
    pub iterations: usize,
    pub scaled_gradient: f64,
    /// Total weight (expected transitions) out of each state.
    pub weight: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarginalTruth {
    pub coefficients: SimCoefficients,
    pub scale_factor: u32,
    pub practices: u64,
    pub patients: u64,
    pub diagnostics: TruthDiagnostics,
}

const CELLS: usize = 4 * 3 * 2;

/// Logistic statistics binned by course category and covariate cell. Within
/// a bin the predictor vector is `z0 + log_gap * e_gap`, so moments in the log
/// gap suffice to rebuild the full score and information.
#[derive(Debug, Clone)]
struct CellAccum {
    /// Per bin: weight, loglik, h, h*lg, h*lg^2, r, r*lg.
    m: [[f64; 7]; CELLS],
}

impl CellAccum {
    fn new() -> Self {
        CellAccum { m: [[0.0; 7]; CELLS] }
    }

    fn cell(course: u32, dose: u8, sulphate: bool) -> usize {
        let jc = course.clamp(1, 4) as usize - 1;
        jc * 6 + dose as usize * 2 + sulphate as usize
    }

    /// `w` trials, `yw` expected successes.
    #[inline]
    fn add(&mut self, cell: usize, lg: f64, w: f64, yw: f64, q: f64) {
        if w == 0.0 {
            return;
        }
        let m = &mut self.m[cell];
        let h = w * q * (1.0 - q);
        let r = yw - w * q;
        m[0] += w;
        m[1] += yw * q.max(f64::MIN_POSITIVE).ln()
            + (w - yw) * (1.0 - q).max(f64::MIN_POSITIVE).ln();
        m[2] += h;
        m[3] += h * lg;
        m[4] += h * lg * lg;
        m[5] += r;
        m[6] += r * lg;
    }

    fn merge(&mut self, other: &CellAccum) {
        for (a, b) in self.m.iter_mut().zip(&other.m) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    fn expand(&self) -> LogitAccum {
        const GAP: usize = 4;
        let mut acc = LogitAccum::new();
        for jc in 0..4u32 {
            for dose in 0..3u8 {
                for sulphate in [false, true] {
                    let m = &self.m[Self::cell(jc + 1, dose, sulphate)];
                    let z0 = design_row(jc + 1, 0.0, dose, sulphate);
                    acc.weight += m[0];
                    acc.loglik += m[1];
                    let mut idx = 0;
                    for a in 0..N_COEF {
                        acc.score[a] += m[5] * z0[a] + if a == GAP { m[6] } else { 0.0 };
                        for b in a..N_COEF {
                            let cross = (a == GAP) as u8 as f64 * z0[b]
                                + (b == GAP) as u8 as f64 * z0[a];
                            let sq = (a == GAP && b == GAP) as u8 as f64;
                            acc.info[idx] += m[2] * z0[a] * z0[b] + m[3] * cross + m[4] * sq;
                            idx += 1;
                        }
                    }
                }
            }
        }
        acc
    }
}

struct TruthSink<'a> {
    cond: [&'a [f64; N_COEF]; 2],
    marg: &'a [[f64; N_COEF]; 2],
    mode: TruthMode,
    /// Practice-intercept nodes and weights; a single zero node unless the
    /// practice effects are integrated out.
    nodes: &'a [([f64; 2], f64)],
    /// State-2 probability at the current visit, per node.
    pi2: Vec<f64>,
    patients: u64,
    acc: [CellAccum; 2],
}

impl Sink for TruthSink<'_> {
    fn course(&mut self, _: &CourseInfo) {
        self.pi2.iter_mut().for_each(|p| *p = 0.0);
    }

    fn transition(&mut self, info: &CourseInfo, log_gap: f64, from: u8, to: u8) {
        let z = design_row(info.course, log_gap, info.dose, info.sulphate);
        let cell = CellAccum::cell(info.course, info.dose, info.sulphate);
        let q = [logistic(dot(&self.marg[0], &z)), logistic(dot(&self.marg[1], &z))];
        match self.mode {
            TruthMode::RaoBlackwell => {
                let u = info.effects();
                let eta = [dot(self.cond[0], &z) + u[0], dot(self.cond[1], &z) + u[1]];
                let mut w = [0.0; 2];
                let mut yw = [0.0; 2];
                for ((b, omega), pi2) in self.nodes.iter().zip(self.pi2.iter_mut()) {
                    let p1 = logistic(eta[0] + b[0]);
                    let p2 = logistic(eta[1] + b[1]);
                    let pi1 = 1.0 - *pi2;
                    w[0] += omega * pi1;
                    w[1] += omega * *pi2;
                    yw[0] += omega * pi1 * p1;
                    yw[1] += omega * *pi2 * p2;
                    *pi2 = pi1 * p1 + *pi2 * p2;
                }
                for s in 0..2 {
                    self.acc[s].add(cell, log_gap, w[s], yw[s], q[s]);
                }
            }
            TruthMode::Sampled => {
                let s = from as usize;
                self.acc[s].add(cell, log_gap, 1.0, to as f64, q[s]);
            }
        }
    }
}

/// Practice intercepts whose size-weighted empirical distribution is
/// stratified. Practices are laid out in random order on the unit interval,
/// each taking a width proportional to its (inflated) patient count; a common
/// uniform rotation makes every practice's position exactly uniform, so the
/// intercepts keep their normal law.
fn stratified_practice_effects(
    cfg: &SimConfig,
    seed: u64,
    practices: usize,
    scale_factor: u32,
) -> Vec<[f64; 2]> {
    let sizes: Vec<f64> = exec::map_indexed(practices, |g| {
        let drawn = cfg.sizes.patients_per_practice.sample(&mut practice_stream(seed, g as u64));
        cfg.inflation.apply(drawn, scale_factor) as f64
    });
    let total: f64 = sizes.iter().sum();
    let mut rng = substream(derive_seed(seed, TAG_LHS), 0);
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut out = vec![[0.0; 2]; practices];
    for s in 0..2 {
        let mut order: Vec<usize> = (0..practices).collect();
        order.shuffle(&mut rng);
        let shift: f64 = rng.random();
        let mut start = 0.0;
        for &g in &order {
            let width = sizes[g] / total;
            let u = (start + width * rng.random::<f64>() + shift).fract();
            out[g][s] = cfg.lambda[s] * normal.inverse_cdf(u.clamp(1e-300, 1.0 - 1e-16));
            start += width;
        }
    }
    out
}

/// Approximates the population-averaged coefficients by fitting the marginal
/// model to one very large generated dataset: `scale_factor` times as many
/// practices, each inflated by the configured rule. Data are regenerated from
/// fixed per-practice streams on every Newton pass instead of being stored.
pub fn marginal_truth(
    cfg: &SimConfig,
    scale_factor: u32,
    opts: &TruthOptions,
) -> Result<MarginalTruth> {
    cfg.validate()?;
    if scale_factor == 0 {
        return Err(Error::config("scale factor must be at least 1"));
    }
    let practices = cfg.practices as usize * scale_factor as usize;
    let seed = derive_seed(cfg.seed, TAG_TRUTH ^ scale_factor as u64);
    let mut nodes = vec![([0.0; 2], 1.0)];
    let mut fixed: Option<Vec<[f64; 2]>> = None;
    match opts.practice_effects {
        PracticeEffects::Sampled => {}
        PracticeEffects::Stratified => {
            fixed = Some(stratified_practice_effects(cfg, seed, practices, scale_factor));
        }
        PracticeEffects::Integrated { nodes: m } => {
            if opts.mode != TruthMode::RaoBlackwell {
                return Err(Error::config(
                    "integrating practice effects requires Rao-Blackwellized states",
                ));
            }
            let (x, w) = gauss_hermite(m.max(1));
            nodes.clear();
            for (xa, wa) in x.iter().zip(&w) {
                for (xb, wb) in x.iter().zip(&w) {
                    nodes.push(([cfg.lambda[0] * xa, cfg.lambda[1] * xb], wa * wb));
                }
            }
        }
    }
    let integrated = matches!(opts.practice_effects, PracticeEffects::Integrated { .. });
    let mut patients = 0u64;
    let cond = [&cfg.coefficients.from_1, &cfg.coefficients.from_2];
    let (coefficients, diagnostics) =
        solve_marginal(&cfg.coefficients, opts.tol, opts.max_iter, |marg| {
            let parts = exec::map_chunks(practices, 16, |range| {
                let mut sink = TruthSink {
                    cond,
                    marg,
                    mode: opts.mode,
                    nodes: &nodes,
                    pi2: vec![0.0; nodes.len()],
                    patients: 0,
                    acc: [CellAccum::new(), CellAccum::new()],
                };
                for g in range {
                    let mut rng = practice_stream(seed, g as u64);
                    let mut n = 0;
                    let mut strata = opts
                        .stratify_patients
                        .then(|| substream(derive_seed(seed, TAG_STRATA), g as u64));
                    let effect = if integrated {
                        Some([0.0; 2])
                    } else {
                        fixed.as_ref().map(|e| e[g])
                    };
                    walk_practice(
                        cfg,
                        &mut rng,
                        |drawn| {
                            n = cfg.inflation.apply(drawn, scale_factor);
                            n
                        },
                        effect,
                        strata.as_mut(),
                        &mut sink,
                    );
                    sink.patients += n as u64;
                }
                (sink.patients, sink.acc)
            });
            let mut acc = [CellAccum::new(), CellAccum::new()];
            patients = 0;
            for (n, a) in &parts {
                patients += n;
                acc[0].merge(&a[0]);
                acc[1].merge(&a[1]);
            }
            Ok([acc[0].expand(), acc[1].expand()])
        })?;
    Ok(MarginalTruth {
        coefficients,
        scale_factor,
        practices: practices as u64,
        patients,
        diagnostics,
    })
}

/// Nodes and weights of Gauss-Hermite quadrature against the standard normal
/// density (Golub-Welsch).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        let b = (i as f64).sqrt();
        jacobi[(i, i - 1)] = b;
        jacobi[(i - 1, i)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Quadrature sizes for [`population_truth`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quadrature {
    /// Nodes per random-effect dimension.
    pub effect_nodes: usize,
    pub gap_nodes: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Quadrature { effect_nodes: 24, gap_nodes: 40 }
    }
}

/// Population-averaged coefficients computed without simulation.
///
/// The limit of the marginal fit solves `E[sum_k z (P(S_k = s) p_s - P(S_k = s) q_s)] = 0`
/// per origin `s`. Gap times are independent of the past, so given the summed
/// intercepts the state probabilities follow from the gap-averaged transition
/// matrix; course index, covariates and gap time are then integrated out over
/// their laws, with Gauss-Hermite rules for the intercepts and the log gap.
pub fn population_truth(cfg: &SimConfig, quad: Quadrature) -> Result<SimCoefficients> {
    cfg.validate()?;
    let (xe, we) = gauss_hermite(quad.effect_nodes.max(1));
    let (xg, wg) = gauss_hermite(quad.gap_nodes.max(1));
    let log_gaps: Vec<f64> = xg.iter().map(|x| cfg.log_gap_mean + cfg.log_gap_sd * x).collect();

    let c = cfg.total_effect_covariance();
    let l11 = c[0][0].sqrt();
    let l21 = if l11 > 0.0 { c[1][0] / l11 } else { 0.0 };
    let l22 = (c[1][1] - l21 * l21).max(0.0).sqrt();
    let mut effects = Vec::with_capacity(xe.len() * xe.len());
    for (a, wa) in xe.iter().zip(&we) {
        for (b, wb) in xe.iter().zip(&we) {
            effects.push(([l11 * a, l21 * a + l22 * b], wa * wb));
        }
    }

    // Expected number of courses with index j = 1, 2, 3 and >= 4.
    let tail = cfg.sizes.courses_per_patient.tail(4);
    let mean_courses = cfg.sizes.courses_per_patient.mean();
    let course_weight = [
        tail[0],
        tail[1],
        tail[2],
        (mean_courses - tail[0] - tail[1] - tail[2]).max(0.0),
    ];
    let step_weight = cfg.sizes.transition_tail();
    let covariate_cells: Vec<(u8, bool, f64)> = (0..3u8)
        .flat_map(|d| {
            [false, true].into_iter().map(move |s| {
                let ps = if s { cfg.sulphate_prob } else { 1.0 - cfg.sulphate_prob };
                (d, s, cfg.dose_probs[d as usize] * ps)
            })
        })
        .collect();

    // Per cell: for each origin, expected visits in that origin (`w`) and
    // expected moves to state 2 at each gap node (`a`).
    struct Cell {
        weight: f64,
        z: Vec<[f64; N_COEF]>,
        w: [f64; 2],
        a: [Vec<f64>; 2],
    }
    let cond = [&cfg.coefficients.from_1, &cfg.coefficients.from_2];
    let mut cells = Vec::new();
    for (jc, &wj) in course_weight.iter().enumerate() {
        for &(dose, sulphate, px) in &covariate_cells {
            if wj * px == 0.0 {
                continue;
            }
            let z: Vec<[f64; N_COEF]> = log_gaps
                .iter()
                .map(|&lg| design_row(jc as u32 + 1, lg, dose, sulphate))
                .collect();
            let eta: [Vec<f64>; 2] =
                [0, 1].map(|s| z.iter().map(|zz| dot(cond[s], zz)).collect());
            let mut w = [0.0; 2];
            let mut a = [vec![0.0; z.len()], vec![0.0; z.len()]];
            let mut p = [vec![0.0; z.len()], vec![0.0; z.len()]];
            for (u, wu) in &effects {
                let mut pbar = [0.0; 2];
                for s in 0..2 {
                    for (l, e) in eta[s].iter().enumerate() {
                        p[s][l] = logistic(e + u[s]);
                        pbar[s] += wg[l] * p[s][l];
                    }
                }
                let mut pi = [1.0, 0.0];
                let mut visits = [0.0; 2];
                for &wk in &step_weight {
                    visits[0] += wk * pi[0];
                    visits[1] += wk * pi[1];
                    let two = pi[0] * pbar[0] + pi[1] * pbar[1];
                    pi = [1.0 - two, two];
                }
                for s in 0..2 {
                    w[s] += wu * visits[s];
                    for l in 0..z.len() {
                        a[s][l] += wu * visits[s] * p[s][l];
                    }
                }
            }
            cells.push(Cell { weight: wj * px, z, w, a });
        }
    }

    let (coef, _) = solve_marginal(&cfg.coefficients, 1e-14, 100, |marg| {
        let mut acc = [LogitAccum::new(), LogitAccum::new()];
        for cell in &cells {
            for s in 0..2 {
                if cell.w[s] <= 0.0 {
                    continue;
                }
                for (l, z) in cell.z.iter().enumerate() {
                    let q = logistic(dot(&marg[s], z));
                    let trials = cell.weight * wg[l] * cell.w[s];
                    acc[s].add(z, trials, cell.a[s][l] / cell.w[s], q);
                }
            }
        }
        Ok(acc)
    })?;
    Ok(coef)
}

/// Finds conditional coefficients whose population-averaged coefficients
/// equal `target` under `template`'s variance components and laws.
pub fn calibrate_conditional(
    template: &SimConfig,
    target: &SimCoefficients,
    quad: Quadrature,
    tol: f64,
) -> Result<SimCoefficients> {
    let mut cfg = template.clone();
    cfg.coefficients = target.clone();
    let goal = target.flat();
    for _ in 0..500 {
        let truth = population_truth(&cfg, quad)?.flat();
        let gap: Vec<f64> = goal.iter().zip(&truth).map(|(g, t)| g - t).collect();
        if gap.iter().all(|d| d.abs() <= tol) {
            return Ok(cfg.coefficients);
        }
        let next: Vec<f64> = cfg.coefficients.flat().iter().zip(&gap).map(|(b, d)| b + d).collect();
        cfg.coefficients = SimCoefficients::from_flat(&next);
    }
    Err(Error::config("calibration did not converge"))
}
