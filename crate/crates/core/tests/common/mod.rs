//! Independent oracles shared by integration and acceptance tests.
#![allow(dead_code)]

use std::sync::Arc;

use markov_progression::data_model::{StateSpace, TransitionRow};
use markov_progression::estimator::BlockDesign;
use markov_progression::rng::{substream, StreamRng};
use rand::Rng;

pub fn normal(rng: &mut StreamRng) -> f64 {
    // Box-Muller, kept separate from the library's samplers.
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// A random multinomial-logit block: origin 1 with `k` non-reference destinations.
pub struct Instance {
    pub rows: Vec<TransitionRow>,
    pub space: StateSpace,
    pub k: usize,
    pub p: usize,
    pub truth: Vec<f64>,
}

impl Instance {
    pub fn design(&self) -> BlockDesign {
        BlockDesign::from_rows(&self.rows, 1, &self.space, None).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.k * self.p
    }
}

pub fn random_instance(seed: u64, max_rows: usize) -> Instance {
    let mut rng = substream(seed, 77);
    let k = rng.random_range(1..=3usize);
    let p = rng.random_range(1..=6usize);
    let n = rng.random_range(max_rows.min(200)..=max_rows);
    let truth: Vec<f64> = (0..k * p).map(|_| 0.5 * normal(&mut rng)).collect();
    let space = StateSpace {
        states: (1..=k as u32 + 1).collect(),
        absorbing: vec![],
        origin_states: vec![1],
        reference_destination: 1,
        reference_overrides: Default::default(),
    };
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let mut z = vec![1.0];
        z.extend((1..p).map(|_| normal(&mut rng)));
        let probs = oracle_probs(&truth, &z, k);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut y = k;
        for (d, q) in probs.iter().enumerate() {
            acc += q;
            if u < acc {
                y = d;
                break;
            }
        }
        rows.push(TransitionRow {
            origin: 1,
            destination: y as u32 + 1,
            z,
            practice_id: Arc::from(format!("c{}", i % 17)),
            patient_id: Arc::from(format!("p{i}")),
        });
    }
    Instance {
        rows,
        space,
        k,
        p,
        truth,
    }
}

/// Probabilities over `[reference, 1..=k]` from unnormalized exponentials.
pub fn oracle_probs(theta: &[f64], z: &[f64], k: usize) -> Vec<f64> {
    let p = z.len();
    let mut e = vec![1.0];
    for d in 0..k {
        let eta: f64 = (0..p).map(|j| theta[d * p + j] * z[j]).sum();
        e.push(eta.exp());
    }
    let total: f64 = e.iter().sum();
    e.iter().map(|x| x / total).collect()
}

/// Log-likelihood as the log of products of row probabilities, in blocks of
/// 32 rows to stay clear of underflow, with compensated summation of the logs.
pub fn oracle_loglik(inst: &Instance, theta: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for chunk in inst.rows.chunks(32) {
        let prod: f64 = chunk
            .iter()
            .map(|r| oracle_probs(theta, &r.z, inst.k)[r.destination as usize - 1])
            .product();
        let term = prod.ln();
        let t = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn central_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + h;
            let up = f(&y);
            y[i] = x[i] - h;
            let down = f(&y);
            y[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest absolute difference over the largest magnitude of `reference`.
pub fn relative_error(value: &[f64], reference: &[f64]) -> f64 {
    let scale = reference.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    value
        .iter()
        .zip(reference)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / scale
}

const GOLD: f64 = 1.618_033_988_749_895;
const CGOLD: f64 = 0.381_966_011_250_105;

/// Brent's parabolic-interpolation minimizer on `[a, c]` around `b`.
fn brent(f: &impl Fn(f64) -> f64, ax: f64, bx: f64, cx: f64, tol: f64) -> (f64, f64) {
    let (mut a, mut b) = (ax.min(cx), ax.max(cx));
    let (mut x, mut w, mut v) = (bx, bx, bx);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..500 {
        let xm = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-14;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if !(p.abs() >= (0.5 * q * etemp).abs() || p <= q * (a - x) || p >= q * (b - x)) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}

/// Brackets a minimum of `f` starting from `[0, 1]`.
fn bracket(f: &impl Fn(f64) -> f64) -> (f64, f64, f64) {
    let (mut a, mut b) = (0.0, 1.0);
    let (mut fa, mut fb) = (f(a), f(b));
    if fb > fa {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut c = b + GOLD * (b - a);
    let mut fc = f(c);
    while fb > fc {
        a = b;
        b = c;
        fb = fc;
        c = b + GOLD * (b - a);
        fc = f(c);
    }
    let _ = fa;
    (a, b, c)
}

/// Powell's conjugate-direction method with Brent line searches; no derivatives.
pub fn powell(f: impl Fn(&[f64]) -> f64, x0: &[f64], max_sweeps: usize) -> Vec<f64> {
    let n = x0.len();
    let mut dirs: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let line = |x: &[f64], d: &[f64]| -> (Vec<f64>, f64) {
        let g = |t: f64| {
            let y: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + t * b).collect();
            f(&y)
        };
        let (a, b, c) = bracket(&g);
        let (t, ft) = brent(&g, a, b, c, 1e-10);
        (x.iter().zip(d).map(|(a, b)| a + t * b).collect(), ft)
    };
    for sweep in 0..max_sweeps {
        let start = x.clone();
        let f_start = fx;
        let mut big = 0;
        let mut delta = 0.0;
        for (i, d) in dirs.iter().enumerate() {
            let (y, fy) = line(&x, d);
            if fx - fy > delta {
                delta = fx - fy;
                big = i;
            }
            x = y;
            fx = fy;
        }
        if 2.0 * (f_start - fx) <= 1e-16 * (f_start.abs() + fx.abs()) + 1e-300 && sweep > 0 {
            break;
        }
        // Reset to the axes periodically so the direction set cannot degenerate.
        if (sweep + 1) % (n + 1) == 0 {
            for (i, d) in dirs.iter_mut().enumerate() {
                d.iter_mut().enumerate().for_each(|(j, v)| *v = if i == j { 1.0 } else { 0.0 });
            }
            continue;
        }
        let new_dir: Vec<f64> = x.iter().zip(&start).map(|(a, b)| a - b).collect();
        if new_dir.iter().all(|v| *v == 0.0) {
            continue;
        }
        let extrap: Vec<f64> = x.iter().zip(&start).map(|(a, b)| 2.0 * a - b).collect();
        let fe = f(&extrap);
        if fe < f_start {
            let t = 2.0 * (f_start - 2.0 * fx + fe) * (f_start - fx - delta).powi(2)
                - delta * (f_start - fe).powi(2);
            if t < 0.0 {
                let (y, fy) = line(&x, &new_dir);
                x = y;
                fx = fy;
                dirs[big] = dirs[n - 1].clone();
                dirs[n - 1] = new_dir;
            }
        }
    }
    x
}

/// A fit over the default four-state space with coefficients drawn at random,
/// for prediction tests that need no data.
pub fn random_fit(seed: u64) -> markov_progression::estimator::FitResult {
    use markov_progression::data_model::{CovariateSpec, ModelSpec};
    use markov_progression::estimator::{BlockFit, CoefBlock, FitDiagnostics, FitResult};

    let mut rng = substream(seed, 78);
    let spec = ModelSpec {
        covariates: vec![CovariateSpec::categorical("dose", &["low", "high"], "low")],
        ..ModelSpec::default()
    };
    let space = spec.state_space.clone();
    let mut blocks = std::collections::BTreeMap::new();
    for &origin in &space.origin_states {
        let predictors = spec.predictor_names(origin).unwrap();
        let destinations = space.destinations(origin);
        let coefficients = destinations
            .iter()
            .map(|_| predictors.iter().map(|_| 0.6 * normal(&mut rng) - 0.3).collect())
            .collect();
        let dim = destinations.len() * predictors.len();
        blocks.insert(
            origin,
            BlockFit {
                coef: CoefBlock {
                    origin,
                    reference: space.reference_for(origin),
                    destinations,
                    predictors,
                    coefficients,
                },
                sigma: vec![0.0; dim * dim],
                loglik: 0.0,
                diagnostics: FitDiagnostics {
                    iterations: 0,
                    converged: true,
                    grad_max_norm: 0.0,
                    ridge_applied: false,
                    step_halvings: 0,
                    n_rows: 0,
                },
            },
        );
    }
    FitResult {
        spec,
        blocks,
        absent_origins: vec![],
        loglik: 0.0,
    }
}

/// Monte Carlo occupancy: `chains` independent walks on the grid, with
/// transition probabilities rebuilt from the encoded predictors.
pub fn mc_occupancy(
    fit: &markov_progression::estimator::FitResult,
    covariates: &markov_progression::data_model::Covariates,
    course: u32,
    step: u32,
    horizon: u32,
    initial: u32,
    chains: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let space = &fit.spec.state_space;
    let enc = fit.spec.encoder().unwrap();
    let steps = (horizon / step) as usize;
    let ns = space.states.len();
    // Cumulative destination laws per step and origin.
    let mut laws: Vec<Vec<Vec<(usize, f64)>>> = Vec::with_capacity(steps);
    for k in 0..steps {
        let t = f64::from(k as u32 * step);
        let mut per = Vec::with_capacity(ns);
        for &s in &space.states {
            if space.is_absorbing(s) {
                per.push(vec![(space.index_of(s).unwrap(), 1.0)]);
                continue;
            }
            let block = &fit.blocks[&s].coef;
            let z = enc.encode(s, course, t, f64::from(step), covariates).unwrap();
            let probs = oracle_probs(&block.flat(), &z, block.destinations.len());
            let targets = std::iter::once(block.reference).chain(block.destinations.iter().copied());
            let mut acc = 0.0;
            per.push(
                targets
                    .zip(probs)
                    .map(|(to, p)| {
                        acc += p;
                        (space.index_of(to).unwrap(), acc)
                    })
                    .collect(),
            );
        }
        laws.push(per);
    }
    let mut counts = vec![vec![0u64; ns]; steps + 1];
    let mut rng = substream(seed, 79);
    let start = space.index_of(initial).unwrap();
    for _ in 0..chains {
        let mut s = start;
        counts[0][s] += 1;
        for (k, law) in laws.iter().enumerate() {
            let u: f64 = rng.random();
            let row = &law[s];
            s = row.iter().find(|(_, c)| u < *c).unwrap_or(row.last().unwrap()).0;
            counts[k + 1][s] += 1;
        }
    }
    counts
        .iter()
        .map(|c| c.iter().map(|&n| n as f64 / chains as f64).collect())
        .collect()
}

/// Pearson statistic over bins pooled from the right until every expected count is at least 5.
pub fn chi_square_p(observed: &std::collections::BTreeMap<u32, f64>, pmf: impl Fn(u32) -> f64, support: std::ops::RangeInclusive<u32>) -> f64 {
    let total: f64 = observed.values().sum();
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    let last = *support.end();
    for k in support {
        o_acc += observed.get(&k).copied().unwrap_or(0.0);
        e_acc += total * pmf(k);
        if e_acc >= 5.0 || k == last {
            bins.push((o_acc, e_acc));
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    // Remaining tail mass beyond the support goes to the last bin.
    let listed: f64 = bins.iter().map(|b| b.1).sum();
    bins.last_mut().unwrap().1 += total - listed;
    let unlisted: f64 = observed.range(last + 1..).map(|(_, v)| v).sum();
    bins.last_mut().unwrap().0 += unlisted;
    if bins.last().unwrap().1 < 5.0 && bins.len() > 1 {
        let (o, e) = bins.pop().unwrap();
        let b = bins.last_mut().unwrap();
        b.0 += o;
        b.1 += e;
    }
    let stat: f64 = bins.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let df = (bins.len() - 1) as f64;
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    1.0 - ChiSquared::new(df).unwrap().cdf(stat)
}

