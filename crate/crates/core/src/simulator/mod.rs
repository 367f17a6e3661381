//! Two-state generator with practice- and patient-level random intercepts,
//! population-averaged "true" coefficients, and bootstrap coverage studies.

mod config;
mod coverage;
mod generate;
mod truth;

pub use config::{
    ClusterSizeTables, CountLaw, InflationRule, SimCoefficients, SimConfig, CALIBRATED_FROM_1,
    CALIBRATED_FROM_2, MARGINAL_TARGET_FROM_1, MARGINAL_TARGET_FROM_2, N_COEF,
};
pub use coverage::{coverage_study, dataset_seed, CoverageOptions, CoverageReport, CoverageRow, DatasetFailure};
pub use generate::{
    design_row, generate, simulate, transcript, SimCourse, SimDataset, TranscriptRow, CLASS_LEVELS,
    DOSE_LEVELS,
};
pub use truth::{
    calibrate_conditional, gauss_hermite, marginal_truth, population_truth, MarginalTruth,
    PracticeEffects, Quadrature, TruthDiagnostics, TruthMode, TruthOptions,
};
