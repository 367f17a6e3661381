mod common;

use std::collections::BTreeMap;
use std::sync::OnceLock;

use markov_progression::simulator::{
    marginal_truth, population_truth, simulate, transcript, CountLaw, PracticeEffects, Quadrature, SimConfig,
    SimDataset, TruthMode, TruthOptions,
};
use common::chi_square_p;
use statrs::distribution::{ChiSquared, ContinuousCDF, LogNormal};

const TABLE4_RHO0_FROM_1: [f64; 10] = [
    -0.3175, 0.0500, 0.0883, 0.1053, 0.6172, 0.1477, 0.2367, 0.2055, -0.1296, -0.1594,
];
const TABLE4_RHO0_FROM_2: [f64; 10] = [
    0.0929, 0.0498, 0.1293, 0.1827, 0.3083, 0.1572, 0.0984, 0.2306, -0.2672, -0.2482,
];

fn large() -> &'static SimDataset {
    static DATA: OnceLock<SimDataset> = OnceLock::new();
    DATA.get_or_init(|| {
        let mut cfg = SimConfig::paper_design(0.6);
        cfg.practices = 3600;
        cfg.seed = 2024;
        simulate(&cfg).unwrap()
    })
}

#[test]
fn patients_per_practice_follow_the_discretized_lognormal() {
    let data = large();
    let mut obs = BTreeMap::new();
    for &n in &data.patients {
        *obs.entry(n).or_insert(0.0) += 1.0;
    }
    let sdlog = 0.8f64;
    let ln = LogNormal::new(30f64.ln() - 0.5 * sdlog * sdlog, sdlog).unwrap();
    let pmf = |k: u32| {
        let hi = ln.cdf(k as f64 + 0.5);
        let lo = if k == 1 { 0.0 } else { ln.cdf(k as f64 - 0.5) };
        hi - lo
    };
    let p = chi_square_p(&obs, pmf, 1..=400);
    assert!(p > 1e-3, "p = {p}");
}

#[test]
fn courses_per_patient_follow_the_geometric_law() {
    let data = large();
    let mut per_patient: BTreeMap<(u32, u32), u32> = BTreeMap::new();
    for c in &data.courses {
        *per_patient.entry((c.practice, c.patient)).or_insert(0) += 1;
    }
    assert_eq!(per_patient.len() as u32, data.patients.iter().sum::<u32>());
    let mut obs = BTreeMap::new();
    for n in per_patient.values() {
        *obs.entry(*n).or_insert(0.0) += 1.0;
    }
    let mean: f64 = 196_654.0 / 120_892.0;
    let q = 1.0 - 1.0 / mean;
    let pmf = |k: u32| (1.0 - q) * q.powi(k as i32 - 1);
    let p = chi_square_p(&obs, pmf, 1..=40);
    assert!(p > 1e-3, "p = {p}");
}

#[test]
fn visits_per_course_follow_the_capped_geometric_law() {
    let data = large();
    let mut obs = BTreeMap::new();
    for c in &data.courses {
        *obs.entry(c.states.len() as u32).or_insert(0.0) += 1.0;
        assert_eq!(c.states[0], 1);
    }
    // Geometric on {2, 3, ...} with mean 8/3: success probability 3/5.
    let pmf = |k: u32| match k {
        2..=5 => 0.6 * 0.4f64.powi(k as i32 - 2),
        6 => 0.4f64.powi(4),
        _ => 0.0,
    };
    assert!(obs.keys().all(|k| (2..=6).contains(k)));
    let p = chi_square_p(&obs, pmf, 2..=6);
    assert!(p > 1e-3, "p = {p}");
}

#[test]
fn random_effects_have_the_configured_covariance() {
    let data = large();
    let mut patients: BTreeMap<(u32, u32), [f64; 2]> = BTreeMap::new();
    let mut practices: BTreeMap<u32, [f64; 2]> = BTreeMap::new();
    for c in &data.courses {
        patients.insert((c.practice, c.patient), c.patient_effect);
        practices.insert(c.practice, c.practice_effect);
    }
    assert!(patients.len() >= 100_000, "{} patients", patients.len());
    let n = patients.len() as f64;
    let (mut s1, mut s2, mut s11, mut s22, mut s12) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for [a, b] in patients.values() {
        s1 += a;
        s2 += b;
        s11 += a * a;
        s22 += b * b;
        s12 += a * b;
    }
    let (m1, m2) = (s1 / n, s2 / n);
    let v1 = s11 / n - m1 * m1;
    let v2 = s22 / n - m2 * m2;
    let r = (s12 / n - m1 * m2) / (v1 * v2).sqrt();
    assert!((r - 0.6).abs() <= 0.01, "rho {r}");
    assert!((v1.sqrt() - 0.85).abs() <= 0.01 && (v2.sqrt() - 0.80).abs() <= 0.01);
    // Practice intercepts are independent of each other.
    let g = practices.len() as f64;
    let sd = |i: usize| (practices.values().map(|p| p[i] * p[i]).sum::<f64>() / g).sqrt();
    assert!((sd(0) - 0.65).abs() < 0.035 && (sd(1) - 0.80).abs() < 0.04);
    let cross = practices.values().map(|p| p[0] * p[1]).sum::<f64>() / g / (sd(0) * sd(1));
    assert!(cross.abs() < 0.07, "practice correlation {cross}");
}

#[test]
fn transcript_is_consistent_with_the_conditional_model() {
    // Score test of the true conditional coefficients given the drawn effects.
    let mut cfg = SimConfig::paper_design(0.2);
    cfg.practices = 300;
    cfg.seed = 5;
    let data = simulate(&cfg).unwrap();
    let rows = transcript(&data);
    assert_eq!(rows.len(), data.n_transitions());
    for origin in 1..=2u8 {
        let beta = cfg.coefficients.block(origin as usize - 1);
        let mut u = nalgebra::DVector::<f64>::zeros(10);
        let mut info = nalgebra::DMatrix::<f64>::zeros(10, 10);
        for r in rows.iter().filter(|r| r.origin == origin) {
            let eta: f64 = r.z.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() + r.effects[origin as usize - 1];
            let p = 1.0 / (1.0 + (-eta).exp());
            let y = f64::from(r.destination == 2);
            let z = nalgebra::DVector::from_row_slice(&r.z);
            u += &z * (y - p);
            info += &z * z.transpose() * (p * (1.0 - p));
        }
        let stat = u.dot(&info.lu().solve(&u).unwrap());
        let p = 1.0 - ChiSquared::new(10.0).unwrap().cdf(stat);
        assert!(p > 1e-3, "origin {origin}: stat {stat}, p {p}");
    }
}

#[test]
fn prefix_of_practices_is_reproducible() {
    let mut cfg = SimConfig::paper_design(0.0);
    cfg.practices = 8;
    let small = simulate(&cfg).unwrap();
    cfg.practices = 16;
    let big = simulate(&cfg).unwrap();
    let head: Vec<_> = big.courses.iter().filter(|c| c.practice < 8).cloned().collect();
    assert_eq!(small.courses, head);
    assert_eq!(small.patients[..], big.patients[..8]);
    assert_eq!(simulate(&cfg).unwrap(), big);
    cfg.seed += 1;
    assert_ne!(simulate(&cfg).unwrap(), big);
}

#[test]
fn null_model_splits_transitions_evenly() {
    let mut cfg = SimConfig::paper_design(0.0).without_random_effects();
    cfg.coefficients = markov_progression::simulator::SimCoefficients::from_flat(&[0.0; 20]);
    cfg.practices = 200;
    let data = simulate(&cfg).unwrap();
    let rows = transcript(&data);
    let n = rows.len() as f64;
    let share = rows.iter().filter(|r| r.destination == 2).count() as f64 / n;
    assert!((share - 0.5).abs() <= 4.0 * (0.25 / n).sqrt(), "{share}");
    let truth = population_truth(&cfg, Quadrature::default()).unwrap();
    assert!(truth.flat().iter().all(|b| b.abs() < 1e-12), "{:?}", truth.flat());
}

#[test]
fn null_model_with_effects_selects_on_the_patient_intercept() {
    // Long stays in state 1 come from patients with low intercepts, so the
    // marginal 1 -> 2 intercept is negative and the 2 -> 2 one positive.
    let mut cfg = SimConfig::paper_design(0.0);
    cfg.coefficients = markov_progression::simulator::SimCoefficients::from_flat(&[0.0; 20]);
    let truth = population_truth(&cfg, Quadrature::default()).unwrap();
    assert!(truth.from_1[0] < -0.01 && truth.from_2[0] > 0.01);
    assert!(truth.flat().iter().enumerate().all(|(i, b)| i % 10 == 0 || b.abs() < 1e-9));
}

#[test]
fn no_random_effects_means_no_attenuation() {
    let cfg = SimConfig::paper_design(0.0).without_random_effects();
    let conditional = cfg.coefficients.flat();
    let quad = population_truth(&cfg, Quadrature::default()).unwrap().flat();
    let mut small = cfg.clone();
    small.practices = 20;
    let streamed = marginal_truth(&small, 1, &TruthOptions::default()).unwrap().coefficients.flat();
    for ((c, q), s) in conditional.iter().zip(&quad).zip(&streamed) {
        assert!((c - q).abs() < 1e-8, "{c} vs quadrature {q}");
        assert!((c - s).abs() < 1e-8, "{c} vs streamed {s}");
    }
}

#[test]
fn attenuation_grows_with_practice_variance() {
    let mut last = [f64::INFINITY; 2];
    for lambda in [0.0, 0.3, 0.6, 0.9, 1.2] {
        let mut cfg = SimConfig::paper_design(0.0);
        cfg.sigma = [0.0; 2];
        cfg.lambda = [lambda; 2];
        let t = population_truth(&cfg, Quadrature::default()).unwrap();
        for (o, block) in [t.from_1, t.from_2].iter().enumerate() {
            let slope = block[4];
            assert!(slope > 0.0 && slope < last[o], "lambda {lambda}: {slope}");
            last[o] = slope;
        }
    }
}

#[test]
fn population_truth_reproduces_the_published_rho0_values() {
    let t = population_truth(&SimConfig::paper_design(0.0), Quadrature::default()).unwrap();
    assert!((t.from_1[0] + 0.3175).abs() <= 0.01);
    for (a, b) in t.from_1.iter().zip(TABLE4_RHO0_FROM_1) {
        assert!((a - b).abs() <= 5e-4, "{a} vs {b}");
    }
    for (a, b) in t.from_2.iter().zip(TABLE4_RHO0_FROM_2) {
        assert!((a - b).abs() <= 5e-4, "{a} vs {b}");
    }
}

#[test]
fn streamed_truth_tracks_quadrature() {
    let cfg = SimConfig::paper_design(0.0);
    let quad = population_truth(&cfg, Quadrature::default()).unwrap().flat();
    let opts = TruthOptions {
        mode: TruthMode::RaoBlackwell,
        practice_effects: PracticeEffects::Integrated { nodes: 5 },
        ..TruthOptions::default()
    };
    let streamed = marginal_truth(&cfg, 32, &opts).unwrap();
    assert_eq!(streamed.practices, 1920);
    for (a, b) in streamed.coefficients.flat().iter().zip(&quad) {
        assert!((a - b).abs() < 0.02, "{a} vs {b}");
    }
}

#[test]
fn count_law_rejects_bad_parameters() {
    assert!(CountLaw::Geometric { mean: 0.5, min: 1 }.validate("x").is_err());
    assert!(CountLaw::LogNormal { mean: -1.0, sdlog: 0.8 }.validate("x").is_err());
    assert!(SimConfig::from_json("{}").is_err());
}
