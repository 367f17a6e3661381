use std::path::Path;
use std::process::{Command, Output};

fn mprog(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mprog"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn manifest(dir: &Path, name: &str) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join(format!("{name}.manifest.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn simulate_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&mprog(d, &["--out-dir", "a", "--threads", "1", "simulate", "--seed", "7", "--practices", "12"]));
    ok(&mprog(d, &["--out-dir", "b", "--threads", "1", "simulate", "--seed", "7", "--practices", "12"]));
    let a = std::fs::read(d.join("a/data.csv")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b/data.csv")).unwrap());
    let m = manifest(&d.join("a"), "simulate");
    assert_eq!(m["seed"], 7);
    assert_eq!(m["outputs"][0]["path"], "data.csv");
    assert_eq!(m["outputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn zero_replicates_exit_with_code_4() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&mprog(d, &["simulate", "--practices", "20"]));
    ok(&mprog(d, &["fit", "--input", "data.csv", "--spec", "simulation"]));
    assert!(d.join("fit.json").exists() && d.join("coefficients.csv").exists());
    let out = mprog(d, &["ci", "--input", "data.csv", "--fit", "fit.json", "--method", "efb", "--replicates", "0"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn parse_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.csv"), "practice_id,patient_id,course,visit,day,state\ng,a,1,1,zero,1\n").unwrap();
    let out = mprog(d, &["summarize", "--input", "bad.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    assert_eq!(mprog(d, &["fit", "--input", "missing.csv"]).status.code(), Some(2));
    assert_eq!(mprog(d, &["fit", "--bogus"]).status.code(), Some(2));
}

#[test]
fn separation_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // Nobody ever leaves state 2, so its reference category is empty.
    let mut text = String::from("practice_id,patient_id,course,visit,day,state\n");
    for i in 0..20 {
        let s = if i % 2 == 0 { 2 } else { 1 };
        text += &format!("g{},p{i},1,1,0,1\ng{},p{i},1,2,10,{s}\ng{},p{i},1,3,20,2\n", i % 4, i % 4, i % 4);
    }
    std::fs::write(d.join("sep.csv"), text).unwrap();
    std::fs::write(
        d.join("spec.json"),
        r#"{"state_space": {"states": [1, 2], "origin_states": [1, 2]},
            "course_coding": {"type": "none"}, "time_transform": {"type": "none"},
            "gap_transform": {"type": "none"}}"#,
    )
    .unwrap();
    let out = mprog(d, &["fit", "--input", "sep.csv", "--spec", "spec.json"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn invalid_config_exits_with_code_4() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mprog(dir.path(), &["simulate", "--rho", "1.5"]).status.code(), Some(4));
    assert_eq!(
        mprog(dir.path(), &["coverage", "--datasets", "0", "--practices", "5"]).status.code(),
        Some(4)
    );
}

#[test]
fn pipeline_writes_plot_ready_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&mprog(d, &["--seed", "3", "simulate", "--practices", "25"]));
    ok(&mprog(d, &["summarize", "--input", "data.csv", "--spec", "simulation"]));
    for f in ["transition_counts.csv", "patients_per_practice.csv", "courses_per_patient.csv", "followup_per_course.csv", "gap_times.csv"] {
        assert!(d.join(f).exists(), "{f}");
    }
    let hist = std::fs::read_to_string(d.join("patients_per_practice.csv")).unwrap();
    let practices: u64 = hist.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(practices, 25);
    ok(&mprog(d, &["fit", "--input", "data.csv", "--spec", "simulation"]));
    ok(&mprog(d, &["--seed", "5", "ci", "--input", "data.csv", "--fit", "fit.json", "--replicates", "40"]));
    let intervals = std::fs::read_to_string(d.join("intervals.csv")).unwrap();
    assert!(intervals.starts_with("origin,destination,predictor,estimate,efb_lower,efb_upper,db_lower,db_upper"));
    assert_eq!(intervals.lines().count(), 21);
    std::fs::write(d.join("cov.json"), r#"{"dose": "high", "class": "sulphate"}"#).unwrap();
    ok(&mprog(
        d,
        &["predict-occupancy", "--fit", "fit.json", "--covariates", "cov.json", "--bands", "bootstrap_efb.json"],
    ));
    let occ = std::fs::read_to_string(d.join("occupancy.csv")).unwrap();
    let mut lines = occ.lines();
    assert_eq!(lines.next().unwrap(), "day,state_1,state_2,state_1_lower,state_1_upper,state_2_lower,state_2_upper");
    assert_eq!(lines.count(), 7);
    let m = manifest(d, "predict-occupancy");
    assert_eq!(m["inputs"].as_array().unwrap().len(), 3);
}
