use markov_progression::estimator::fit_data;
use markov_progression::exec::Parallelism;
use markov_progression::resampling::Method;
use markov_progression::simulator::{
    coverage_study, dataset_seed, population_truth, simulate, CoverageOptions, Quadrature, SimConfig,
};
use markov_progression::Error;

fn small() -> (SimConfig, CoverageOptions) {
    let mut cfg = SimConfig::paper_design(0.0);
    cfg.practices = 30;
    let opts = CoverageOptions {
        datasets: 6,
        replicates: 40,
        ..CoverageOptions::default()
    };
    (cfg, opts)
}

#[test]
fn report_summarizes_every_coefficient() {
    let (cfg, opts) = small();
    let truth = population_truth(&cfg, Quadrature::default()).unwrap();
    let report = coverage_study(&cfg, &truth, &opts).unwrap();
    assert_eq!(report.rows.len(), 20);
    assert_eq!(report.methods, vec![Method::Direct, Method::Efb]);
    assert_eq!(report.fitted + report.failures.iter().filter(|f| f.method.is_none()).count(), 6);
    for r in &report.rows {
        assert!(r.coverage.iter().all(|c| (0.0..=100.0).contains(c)));
        assert!((r.mean_estimate - r.true_value - r.bias).abs() < 1e-12);
    }
    let mut csv = Vec::new();
    report.write_csv(&mut csv, true).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 21);
    assert!(text.starts_with("rho,transition,predictor,true_value,bias_1e4,direct_coverage,efb_coverage"));
}

#[test]
fn mean_estimate_is_the_average_of_dataset_fits() {
    let (cfg, mut opts) = small();
    opts.methods = vec![];
    let truth = population_truth(&cfg, Quadrature::default()).unwrap();
    let report = coverage_study(&cfg, &truth, &opts).unwrap();
    let mut mean = vec![0.0; 20];
    for d in 0..opts.datasets {
        let mut c = cfg.clone();
        c.seed = dataset_seed(&cfg, d);
        let data = simulate(&c).unwrap().to_model_data().unwrap();
        let theta = fit_data(&data, None, &opts.fit).unwrap().theta();
        for (m, t) in mean.iter_mut().zip(theta) {
            *m += t / opts.datasets as f64;
        }
    }
    for (r, m) in report.rows.iter().zip(&mean) {
        assert!((r.mean_estimate - m).abs() < 1e-12);
    }
}

#[test]
fn study_is_thread_count_invariant() {
    let (cfg, opts) = small();
    let truth = population_truth(&cfg, Quadrature::default()).unwrap();
    let a = Parallelism::Sequential.install(|| coverage_study(&cfg, &truth, &opts).unwrap());
    let b = Parallelism::Threads(3).install(|| coverage_study(&cfg, &truth, &opts).unwrap());
    assert_eq!(a, b);
}

#[test]
fn degenerate_studies_are_config_errors() {
    let (cfg, mut opts) = small();
    let truth = cfg.coefficients.clone();
    opts.datasets = 0;
    assert!(matches!(coverage_study(&cfg, &truth, &opts), Err(Error::InvalidConfig(_))));
    opts.datasets = 2;
    opts.replicates = 1;
    assert!(matches!(coverage_study(&cfg, &truth, &opts), Err(Error::InvalidConfig(_))));
}
