use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use markov_progression::data_model::{
    build_transitions, observation_patterns, read_visits_csv, transition_matrix, write_visits_csv, Covariates,
    CovariateKind, CovariateSpec, ModelSpec, VisitRecord,
};
use markov_progression::estimator::{fit_data, FitOptions, FitResult, ModelData};
use markov_progression::occupancy::{predict_occupancy, OccupancyOptions};
use markov_progression::resampling::{
    compare_methods, direct_bootstrap, efb, percentile_ci, BootstrapSet, Method,
};
use markov_progression::simulator::{
    coverage_study, marginal_truth, population_truth, simulate, CoverageOptions, Quadrature, SimConfig,
    TruthOptions,
};
use markov_progression::Error;
use serde_json::json;

use crate::manifest::Run;
use crate::{
    CiArgs, Cli, Command, CoverageArgs, DataArgs, FitArgs, MethodArg, PredictArgs, SimArgs, SimulateArgs,
    SummarizeArgs, TruthArg,
};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Summarize(a) => summarize(cli, a),
        Command::Fit(a) => fit(cli, a),
        Command::Ci(a) => ci(cli, a),
        Command::PredictOccupancy(a) => predict(cli, a),
        Command::Simulate(a) => simulate_cmd(cli, a),
        Command::Coverage(a) => coverage(cli, a),
    }
}

fn start(cli: &Cli, name: &str) -> Result<Run> {
    Run::new(name, &cli.out_dir, cli.seed, cli.threads)
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    serde_json::from_str(text)
        .map_err(Error::from)
        .with_context(|| format!("parsing {}", path.display()))
}

/// Reads the visits and returns them with a resolved specification. Without a
/// spec file every extra column is a categorical covariate with data-derived levels.
fn load_data(run: &mut Run, args: &DataArgs) -> Result<(Vec<VisitRecord>, ModelSpec)> {
    let started = Instant::now();
    let spec = match args.spec.as_deref() {
        None => None,
        Some("simulation") => Some(ModelSpec::simulation_design()),
        Some(path) => {
            let path = Path::new(path);
            let text = run.read_input_string(path)?;
            Some(parse_json::<ModelSpec>(&text, path)?)
        }
    };
    let bytes = run.read_input(&args.input)?;
    let visits = read_visits_csv(&bytes[..], spec.as_ref())
        .with_context(|| format!("reading {}", args.input.display()))?;
    let spec = match spec {
        Some(s) => s,
        None => {
            let names: BTreeSet<&String> = visits.iter().flat_map(|v| v.covariates.keys()).collect();
            ModelSpec {
                covariates: names
                    .into_iter()
                    .map(|n| CovariateSpec {
                        name: n.clone(),
                        kind: CovariateKind::Categorical {
                            levels: None,
                            reference: None,
                            missing_level: None,
                        },
                    })
                    .collect(),
                ..ModelSpec::default()
            }
        }
    };
    let spec = spec.resolve(&visits)?;
    run.record_timing("read", started.elapsed().as_secs_f64());
    Ok((visits, spec))
}

fn model_data(visits: &[VisitRecord], spec: &ModelSpec) -> Result<ModelData> {
    Ok(ModelData::new(&build_transitions(visits, spec)?)?)
}

fn summarize(cli: &Cli, a: &SummarizeArgs) -> Result<()> {
    let mut run = start(cli, "summarize")?;
    let (visits, spec) = load_data(&mut run, &a.data)?;
    run.set_config(&json!({ "args": a, "spec": spec }))?;
    let (counts, patterns) = run.phase("summarize", || -> Result<_> {
        Ok((
            transition_matrix(&visits, &spec.state_space)?,
            observation_patterns(&visits, &spec.state_space, a.bin_days)?,
        ))
    })?;
    run.write_csv("transition_counts.csv", |w| counts.write_csv(w))?;
    run.write_csv("patients_per_practice.csv", |w| patterns.patients_per_practice.write_csv(w))?;
    run.write_csv("courses_per_patient.csv", |w| patterns.courses_per_patient.write_csv(w))?;
    run.write_csv("followup_per_course.csv", |w| patterns.followup_per_course.write_csv(w))?;
    run.write_csv("gap_times.csv", |w| patterns.gap_times.write_csv(w))?;
    run.finish()?;
    Ok(())
}

fn fit_options(grad_tol: f64, max_iter: usize) -> Result<FitOptions> {
    if !(grad_tol.is_finite() && grad_tol > 0.0) || max_iter == 0 {
        return Err(Error::InvalidConfig("gradient tolerance and iteration limit must be positive".into()).into());
    }
    Ok(FitOptions {
        grad_tol,
        max_iter,
        ..FitOptions::default()
    })
}

fn fit(cli: &Cli, a: &FitArgs) -> Result<()> {
    let mut run = start(cli, "fit")?;
    let opts = fit_options(a.grad_tol, a.max_iter)?;
    let (visits, spec) = load_data(&mut run, &a.data)?;
    run.set_config(&json!({ "args": a, "spec": spec, "fit_options": opts }))?;
    let data = run.phase("transitions", || model_data(&visits, &spec))?;
    let fit = run.phase("fit", || fit_data(&data, None, &opts))?;
    run.write_output("fit.json", fit.to_json()?.as_bytes())?;
    run.write_csv("coefficients.csv", |w| fit.write_coefficients_csv(w))?;
    run.finish()?;
    Ok(())
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!("level {level} outside (0, 1)")).into());
    }
    Ok(())
}

fn ci(cli: &Cli, a: &CiArgs) -> Result<()> {
    let mut run = start(cli, "ci")?;
    if a.replicates < 2 {
        return Err(Error::TooFewReplicates {
            got: a.replicates,
            needed: 2,
        }
        .into());
    }
    check_level(a.level)?;
    let seed = cli.seed.unwrap_or(1);
    run.set_seed(seed);
    let opts = FitOptions::default();
    let prior = match &a.fit {
        Some(path) => {
            let text = run.read_input_string(path)?;
            Some(FitResult::from_json(&text).with_context(|| format!("parsing {}", path.display()))?)
        }
        None => None,
    };
    let (visits, spec) = match &prior {
        Some(f) => {
            let bytes = run.read_input(&a.data.input)?;
            let visits = read_visits_csv(&bytes[..], Some(&f.spec))
                .with_context(|| format!("reading {}", a.data.input.display()))?;
            (visits, f.spec.clone())
        }
        None => load_data(&mut run, &a.data)?,
    };
    run.set_config(&json!({ "args": a, "spec": spec, "seed": seed }))?;
    let data = run.phase("transitions", || model_data(&visits, &spec))?;
    let fit = match prior {
        Some(f) => f,
        None => run.phase("fit", || fit_data(&data, None, &opts))?,
    };
    match a.method {
        MethodArg::Both => {
            let cmp = run.phase("bootstrap", || compare_methods(&fit, &data, a.replicates, seed, a.level, &opts))?;
            run.write_csv("intervals.csv", |w| cmp.intervals.write_csv(w))?;
            run.write_json("intervals.json", &cmp.intervals)?;
            run.write_output("bootstrap_direct.json", cmp.direct.to_json()?.as_bytes())?;
            run.write_output("bootstrap_efb.json", cmp.efb.to_json()?.as_bytes())?;
            run.write_json(
                "bootstrap_summary.json",
                &json!({
                    "direct_failures": cmp.direct.failures,
                    "max_endpoint_difference": cmp.intervals.max_endpoint_difference(),
                }),
            )?;
            eprintln!(
                "direct {:.4} s/replicate, efb {:.6} s/replicate, ratio {:.1}",
                cmp.timing.direct_per_replicate_secs, cmp.timing.efb_per_replicate_secs, cmp.timing.speed_ratio
            );
        }
        MethodArg::Direct | MethodArg::Efb => {
            let (method, set) = if a.method == MethodArg::Direct {
                let set = run.phase("bootstrap", || direct_bootstrap(&fit, &data, a.replicates, seed, &opts))?;
                (Method::Direct, set)
            } else {
                (Method::Efb, run.phase("bootstrap", || efb(&fit, &data, a.replicates, seed))?)
            };
            let table = percentile_ci(&fit, &set, a.level)?;
            run.write_csv("intervals.csv", |w| table.write_csv(w))?;
            run.write_json("intervals.json", &table)?;
            run.write_output(&format!("bootstrap_{}.json", method.as_str()), set.to_json()?.as_bytes())?;
        }
    }
    run.finish()?;
    Ok(())
}

fn predict(cli: &Cli, a: &PredictArgs) -> Result<()> {
    let mut run = start(cli, "predict-occupancy")?;
    check_level(a.level)?;
    if a.step == 0 {
        return Err(Error::InvalidConfig("grid step must be at least one day".into()).into());
    }
    let text = run.read_input_string(&a.fit)?;
    let fit = FitResult::from_json(&text).with_context(|| format!("parsing {}", a.fit.display()))?;
    let covariates: Covariates = match &a.covariates {
        Some(path) => {
            let text = run.read_input_string(path)?;
            parse_json(&text, path)?
        }
        None => Covariates::new(),
    };
    let bands: Option<BootstrapSet> = match &a.bands {
        Some(path) => {
            let text = run.read_input_string(path)?;
            Some(BootstrapSet::from_json(&text).with_context(|| format!("parsing {}", path.display()))?)
        }
        None => None,
    };
    let opts = OccupancyOptions {
        course: a.course,
        step_days: a.step,
        horizon_days: a.horizon,
        initial_state: a.initial_state,
        level: a.level,
    };
    run.set_config(&json!({ "args": a, "covariates": covariates, "options": opts }))?;
    let curve = run.phase("predict", || predict_occupancy(&fit, &covariates, &opts, bands.as_ref()))?;
    run.write_csv("occupancy.csv", |w| curve.write_csv(w))?;
    run.finish()?;
    Ok(())
}

fn sim_config(run: &mut Run, cli: &Cli, a: &SimArgs, rho: Option<f64>) -> Result<SimConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = run.read_input_string(path)?;
            SimConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SimConfig::paper_design(0.0),
    };
    if a.full {
        cfg = cfg.full_scale();
    }
    if let Some(p) = a.practices {
        cfg.practices = p;
    }
    if let Some(r) = rho {
        cfg.rho = r;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    run.set_seed(cfg.seed);
    Ok(cfg)
}

fn simulate_cmd(cli: &Cli, a: &SimulateArgs) -> Result<()> {
    let mut run = start(cli, "simulate")?;
    let cfg = sim_config(&mut run, cli, &a.sim, a.rho)?;
    run.set_config(&json!({ "args": a, "sim": cfg }))?;
    let data = run.phase("simulate", || simulate(&cfg))?;
    let visits = data.to_visits();
    let names = vec!["dose".to_string(), "class".to_string()];
    run.write_csv(&a.out, |w| write_visits_csv(w, &visits, &names))?;
    eprintln!(
        "{} practices, {} patients, {} courses, {} transitions",
        data.practices,
        data.patients.iter().sum::<u32>(),
        data.courses.len(),
        data.n_transitions()
    );
    run.finish()?;
    Ok(())
}

fn coverage(cli: &Cli, a: &CoverageArgs) -> Result<()> {
    let mut run = start(cli, "coverage")?;
    let methods = a
        .methods
        .iter()
        .map(|m| match m.trim() {
            "direct" | "db" => Ok(Method::Direct),
            "efb" => Ok(Method::Efb),
            other => Err(Error::InvalidConfig(format!("unknown method `{other}`"))),
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    check_level(a.level)?;
    if a.rho.is_empty() {
        return Err(Error::InvalidConfig("at least one rho is required".into()).into());
    }
    let base = sim_config(&mut run, cli, &a.sim, None)?;
    let opts = CoverageOptions {
        datasets: a.datasets,
        replicates: a.replicates,
        methods,
        level: a.level,
        fit: FitOptions::default(),
    };
    run.set_config(&json!({ "args": a, "sim": base, "coverage": opts }))?;
    let mut csv = Vec::new();
    let mut reports = Vec::new();
    for (i, &rho) in a.rho.iter().enumerate() {
        let mut cfg = base.clone();
        cfg.rho = rho;
        cfg.validate()?;
        let truth = run.phase(&format!("truth rho={rho}"), || match a.truth {
            TruthArg::Quadrature => population_truth(&cfg, Quadrature::default()),
            TruthArg::Simulate => marginal_truth(&cfg, a.scale, &TruthOptions::default()).map(|t| t.coefficients),
        })?;
        let report = run.phase(&format!("study rho={rho}"), || coverage_study(&cfg, &truth, &opts))?;
        report.write_csv(&mut csv, i == 0)?;
        for f in &report.failures {
            eprintln!("rho {rho}, dataset {}: {}", f.dataset, f.reason);
        }
        reports.push(json!({ "rho": rho, "truth": truth, "report": report }));
    }
    run.write_output(&a.out, &csv)?;
    run.write_json("coverage_report.json", &reports)?;
    run.finish()?;
    Ok(())
}
