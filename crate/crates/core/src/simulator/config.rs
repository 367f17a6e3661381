use rand::Rng;
use rand_distr::{Distribution, Geometric, LogNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Number of regression coefficients per transition in the simulation model.
pub const N_COEF: usize = 10;

/// Conditional coefficients calibrated so that the population-averaged
/// coefficients under [`SimConfig::paper_design`] with `rho = 0` equal the
/// reference true values (see [`super::calibrate_conditional`]).
pub const CALIBRATED_FROM_1: [f64; N_COEF] = [
    -0.3008125324118261,
    0.06148293641822757,
    0.1089067129191739,
    0.13010539991934328,
    0.7561207247043815,
    0.1821055629806022,
    0.2902804279491077,
    0.25337017512665716,
    -0.1609880194748522,
    -0.19728804576997883,
];
pub const CALIBRATED_FROM_2: [f64; N_COEF] = [
    0.019063726594464286,
    0.06284346588719675,
    0.16297562017714734,
    0.2302057258206916,
    0.3864728678932359,
    0.19825953850523736,
    0.12491460116177096,
    0.29085763205518667,
    -0.33639467943294177,
    -0.31269006474052874,
];

/// Target population-averaged coefficients for the `rho = 0` design.
pub const MARGINAL_TARGET_FROM_1: [f64; N_COEF] = [
    -0.3175, 0.0500, 0.0883, 0.1053, 0.6172, 0.1477, 0.2367, 0.2055, -0.1296, -0.1594,
];
pub const MARGINAL_TARGET_FROM_2: [f64; N_COEF] = [
    0.0929, 0.0498, 0.1293, 0.1827, 0.3083, 0.1572, 0.0984, 0.2306, -0.2672, -0.2482,
];

/// A law on positive integers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum CountLaw {
    Fixed { value: u32 },
    /// Geometric on `{min, min + 1, ...}` with the given mean.
    Geometric { mean: f64, min: u32 },
    /// `max(1, round(X))` with `X` log-normal of the given mean.
    LogNormal { mean: f64, sdlog: f64 },
    /// Empirical table, e.g. read from a distribution file.
    Table { values: Vec<u32>, probs: Vec<f64> },
}

impl CountLaw {
    pub fn validate(&self, what: &str) -> Result<()> {
        let bad = |m: String| Err(Error::config(format!("{what}: {m}")));
        match self {
            CountLaw::Fixed { value } if *value == 0 => bad("fixed count must be positive".into()),
            CountLaw::Fixed { .. } => Ok(()),
            CountLaw::Geometric { mean, min } => {
                if *min == 0 {
                    bad("geometric support must start at 1 or later".into())
                } else if !(mean.is_finite() && *mean >= *min as f64) {
                    bad(format!("geometric mean {mean} below its minimum {min}"))
                } else {
                    Ok(())
                }
            }
            CountLaw::LogNormal { mean, sdlog } => {
                if !(mean.is_finite() && *mean > 0.0 && sdlog.is_finite() && *sdlog >= 0.0) {
                    bad(format!("log-normal needs mean > 0 and sdlog >= 0, got {mean}, {sdlog}"))
                } else {
                    Ok(())
                }
            }
            CountLaw::Table { values, probs } => {
                if values.is_empty() || values.len() != probs.len() {
                    return bad("table needs matching, non-empty values and probs".into());
                }
                if values.contains(&0) {
                    return bad("table support must be positive".into());
                }
                if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                    return bad("table probabilities must be non-negative".into());
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return bad(format!("table probabilities sum to {total}"));
                }
                Ok(())
            }
        }
    }

    /// Success probability of the geometric law.
    fn geometric_p(mean: f64, min: u32) -> f64 {
        1.0 / (mean - min as f64 + 1.0)
    }

    fn lognormal_mu(mean: f64, sdlog: f64) -> f64 {
        mean.ln() - 0.5 * sdlog * sdlog
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match self {
            CountLaw::Fixed { value } => *value,
            CountLaw::Geometric { mean, min } => {
                let p = Self::geometric_p(*mean, *min);
                if p >= 1.0 {
                    return *min;
                }
                let failures = Geometric::new(p).expect("validated").sample(rng);
                min.saturating_add(failures.min(u32::MAX as u64) as u32)
            }
            CountLaw::LogNormal { mean, sdlog } => {
                let mu = Self::lognormal_mu(*mean, *sdlog);
                let x = if *sdlog == 0.0 {
                    mu.exp()
                } else {
                    LogNormal::new(mu, *sdlog).expect("validated").sample(rng)
                };
                (x.round().min(u32::MAX as f64) as u32).max(1)
            }
            CountLaw::Table { values, probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (v, p) in values.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *v;
                    }
                }
                *values.last().expect("validated")
            }
        }
    }

    pub fn pmf(&self, k: u32) -> f64 {
        match self {
            CountLaw::Fixed { value } => (k == *value) as u8 as f64,
            CountLaw::Geometric { mean, min } => {
                if k < *min {
                    return 0.0;
                }
                let p = Self::geometric_p(*mean, *min);
                p * (1.0 - p).powi((k - min) as i32)
            }
            CountLaw::LogNormal { mean, sdlog } => {
                if k == 0 {
                    return 0.0;
                }
                let mu = Self::lognormal_mu(*mean, *sdlog);
                if *sdlog == 0.0 {
                    let m = (mu.exp().round() as u32).max(1);
                    return (k == m) as u8 as f64;
                }
                let n = Normal::new(mu, *sdlog).expect("validated");
                let upper = n.cdf((k as f64 + 0.5).ln());
                let lower = if k == 1 { 0.0 } else { n.cdf((k as f64 - 0.5).ln()) };
                upper - lower
            }
            CountLaw::Table { values, probs } => values
                .iter()
                .zip(probs)
                .filter(|(v, _)| **v == k)
                .map(|(_, p)| p)
                .sum(),
        }
    }

    /// Probability mass of `min(X, cap)` at `k`.
    pub fn capped_pmf(&self, k: u32, cap: u32) -> f64 {
        match k.cmp(&cap) {
            std::cmp::Ordering::Less => self.pmf(k),
            std::cmp::Ordering::Equal => 1.0 - (0..cap).map(|j| self.pmf(j)).sum::<f64>(),
            std::cmp::Ordering::Greater => 0.0,
        }
    }

    /// `P(X >= k)` for `k = 1..=n`, evaluated by summing the mass function.
    pub fn tail(&self, n: u32) -> Vec<f64> {
        let mut below = 0.0;
        (0..n)
            .map(|k| {
                below += self.pmf(k);
                (1.0 - below).max(0.0)
            })
            .collect()
    }

    pub fn mean(&self) -> f64 {
        match self {
            CountLaw::Fixed { value } => *value as f64,
            CountLaw::Geometric { mean, .. } => *mean,
            CountLaw::Table { values, probs } => {
                values.iter().zip(probs).map(|(v, p)| *v as f64 * p).sum()
            }
            CountLaw::LogNormal { .. } => {
                let mut m = 0.0;
                let mut mass = 0.0;
                let mut k = 1u32;
                while mass < 1.0 - 1e-12 && k < 10_000_000 {
                    let p = self.pmf(k);
                    m += k as f64 * p;
                    mass += p;
                    k += 1;
                }
                m
            }
        }
    }
}

/// Laws for the sizes of the three nested levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSizeTables {
    pub patients_per_practice: CountLaw,
    pub courses_per_patient: CountLaw,
    /// Visits per course before capping; at least one visit.
    pub visits_per_course: CountLaw,
    pub visit_cap: u32,
}

impl Default for ClusterSizeTables {
    fn default() -> Self {
        ClusterSizeTables {
            patients_per_practice: CountLaw::LogNormal { mean: 30.0, sdlog: 0.8 },
            courses_per_patient: CountLaw::Geometric { mean: 196_654.0 / 120_892.0, min: 1 },
            visits_per_course: CountLaw::Geometric { mean: 2.0 + 2.0 / 3.0, min: 2 },
            visit_cap: 6,
        }
    }
}

impl ClusterSizeTables {
    pub fn validate(&self) -> Result<()> {
        self.patients_per_practice.validate("patients_per_practice")?;
        self.courses_per_patient.validate("courses_per_patient")?;
        self.visits_per_course.validate("visits_per_course")?;
        if !(1..=6).contains(&self.visit_cap) {
            return Err(Error::config(format!(
                "visit cap {} outside 1..=6",
                self.visit_cap
            )));
        }
        Ok(())
    }

    pub fn sample_visits<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        self.visits_per_course.sample(rng).min(self.visit_cap)
    }

    /// `P(course has at least k transitions)` for `k = 1..cap`.
    pub fn transition_tail(&self) -> Vec<f64> {
        (1..self.visit_cap)
            .map(|k| {
                (k + 1..=self.visit_cap)
                    .map(|n| self.visits_per_course.capped_pmf(n, self.visit_cap))
                    .sum()
            })
            .collect()
    }
}

/// How the extreme-scale run inflates per-practice patient counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum InflationRule {
    /// Drawn count times the scale factor.
    PatientsTimesScale,
    /// Every practice gets this many patients.
    Fixed { patients: u32 },
    /// `round(base * n_g^exponent)` with `n_g` the drawn count.
    Power { base: f64, exponent: f64 },
}

impl InflationRule {
    pub fn apply(&self, drawn: u32, scale: u32) -> u32 {
        match *self {
            InflationRule::PatientsTimesScale => drawn.saturating_mul(scale),
            InflationRule::Fixed { patients } => patients,
            InflationRule::Power { base, exponent } => {
                ((base * (drawn as f64).powf(exponent)).round() as u32).max(1)
            }
        }
    }
}

/// Coefficients of the two logistic transition models, in the order
/// intercept, course 2, course 3, course 4+, log gap, medium dose, high dose,
/// sulphate, medium x sulphate, high x sulphate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCoefficients {
    pub from_1: [f64; N_COEF],
    pub from_2: [f64; N_COEF],
}

impl SimCoefficients {
    pub fn block(&self, origin: usize) -> &[f64; N_COEF] {
        if origin == 0 {
            &self.from_1
        } else {
            &self.from_2
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.from_1.iter().chain(&self.from_2).copied().collect()
    }

    pub fn from_flat(v: &[f64]) -> Self {
        let mut c = SimCoefficients { from_1: [0.0; N_COEF], from_2: [0.0; N_COEF] };
        c.from_1.copy_from_slice(&v[..N_COEF]);
        c.from_2.copy_from_slice(&v[N_COEF..2 * N_COEF]);
        c
    }
}

/// Every parameter of the two-state generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub coefficients: SimCoefficients,
    /// Practice-level random-intercept standard deviations.
    pub lambda: [f64; 2],
    /// Patient-level random-intercept standard deviations.
    pub sigma: [f64; 2],
    /// Correlation of the two patient-level intercepts.
    pub rho: f64,
    /// Probabilities of low, medium and high dose.
    pub dose_probs: [f64; 3],
    pub sulphate_prob: f64,
    /// `log v ~ N(log_gap_mean, log_gap_sd^2)`, `v` in days.
    pub log_gap_mean: f64,
    pub log_gap_sd: f64,
    pub practices: u32,
    pub sizes: ClusterSizeTables,
    pub inflation: InflationRule,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::paper_design(0.0)
    }
}

impl SimConfig {
    /// Variance components and covariate laws of the reference study, with
    /// calibrated conditional coefficients, at desk scale.
    pub fn paper_design(rho: f64) -> Self {
        SimConfig {
            coefficients: SimCoefficients {
                from_1: CALIBRATED_FROM_1,
                from_2: CALIBRATED_FROM_2,
            },
            lambda: [0.65, 0.80],
            sigma: [0.85, 0.80],
            rho,
            dose_probs: [0.1, 0.4, 0.5],
            sulphate_prob: 0.5,
            log_gap_mean: 0.0,
            log_gap_sd: 1.0,
            practices: 60,
            sizes: ClusterSizeTables::default(),
            inflation: InflationRule::PatientsTimesScale,
            seed: 1,
        }
    }

    /// The reference study's sizes: 663 practices averaging about 182 patients.
    pub fn full_scale(mut self) -> Self {
        self.practices = 663;
        self.sizes.patients_per_practice = CountLaw::LogNormal {
            mean: 120_892.0 / 663.0,
            sdlog: 0.8,
        };
        self
    }

    /// Same design without any random effects.
    pub fn without_random_effects(mut self) -> Self {
        self.lambda = [0.0; 2];
        self.sigma = [0.0; 2];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |x: f64| x.is_finite();
        if !self.coefficients.flat().into_iter().all(finite) {
            return Err(Error::config("coefficients must be finite"));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::config(format!("rho = {} outside [-1, 1]", self.rho)));
        }
        if self
            .lambda
            .iter()
            .chain(&self.sigma)
            .any(|&s| !(finite(s) && s >= 0.0))
        {
            return Err(Error::config("variance parameters must be finite and >= 0"));
        }
        if self.dose_probs.iter().any(|&p| !(finite(p) && p >= 0.0))
            || (self.dose_probs.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::config("dose probabilities must be >= 0 and sum to 1"));
        }
        if !(0.0..=1.0).contains(&self.sulphate_prob) {
            return Err(Error::config("sulphate probability outside [0, 1]"));
        }
        if !(finite(self.log_gap_mean) && finite(self.log_gap_sd) && self.log_gap_sd >= 0.0) {
            return Err(Error::config("gap-time law needs finite mean and sd >= 0"));
        }
        if self.practices == 0 {
            return Err(Error::config("at least one practice is required"));
        }
        self.sizes.validate()
    }

    /// Covariance of the summed practice and patient intercepts.
    pub fn total_effect_covariance(&self) -> [[f64; 2]; 2] {
        let [l1, l2] = self.lambda;
        let [s1, s2] = self.sigma;
        let c = self.rho * s1 * s2;
        [[l1 * l1 + s1 * s1, c], [c, l2 * l2 + s2 * s2]]
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SimConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
