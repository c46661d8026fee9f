use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;
use survey_hazard::covariates::contextual_design;
use survey_hazard::evaluation::{fit_kind, ModelKind};
use survey_hazard::glm::model_file::read_model;
use survey_hazard::glm::{FitConfig, PenaltyKind};
use survey_hazard::io;
use survey_hazard::survival::{collapse_period_level, expand_person_period, ExpandOptions};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_survey-hazard"))
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    if !out.status.success() {
        eprintln!("stdout:\n{}", String::from_utf8_lossy(&out.stdout));
        eprintln!("stderr:\n{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Simulates a scenario with three AR(1) covariates into `dir/sim`.
fn simulate(dir: &Path, cohorts: usize, cohort_size: usize) -> PathBuf {
    let scenario = dir.join("scenario.txt");
    fs::write(
        &scenario,
        format!(
            "cohorts = {cohorts}\ncohort_size = {cohort_size}\ncontinuous = 3\nseed = 11\n\
             coef = days -0.05\ncoef = reminder1 0.3\ncoef = reminder2 0.1\ncoef = x01 0.4\n"
        ),
    )
    .unwrap();
    let sim = dir.join("sim");
    let out = run(&["simulate", "--scenario", s(&scenario), "--out-dir", s(&sim)]);
    assert!(out.status.success());
    sim
}

#[test]
fn simulate_fit_evaluate_on_a_thousand_persons() {
    let dir = TempDir::new().unwrap();
    let start = Instant::now();
    let sim = simulate(dir.path(), 4, 250);
    let cases = sim.join("cases.csv");
    let covs = sim.join("covariates.csv");
    let model = dir.path().join("full.model");
    let out = run(&["fit", "--cases", s(&cases), "--covariates", s(&covs), "--model", "full", "--out", s(&model)]);
    assert!(out.status.success());
    let fitted = read_model(&fs::read_to_string(&model).unwrap()).unwrap();
    assert!(fitted.coefficients.get("x01") > 0.0);

    let ev = dir.path().join("ev");
    let out = run(&[
        "evaluate",
        "--cases",
        s(&cases),
        "--covariates",
        s(&covs),
        "--models",
        "baseline,full",
        "--model-file",
        &format!("full={}", s(&model)),
        "--out-dir",
        s(&ev),
    ]);
    assert!(out.status.success());
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "pipeline took {elapsed:.1}s");
    let metrics = fs::read_to_string(ev.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
}

#[test]
fn unpenalized_fit_matches_library_call() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), 2, 200);
    let cases_path = sim.join("cases.csv");
    let covs_path = sim.join("covariates.csv");
    let model_path = dir.path().join("m.model");
    let out = run(&[
        "fit",
        "--cases",
        s(&cases_path),
        "--covariates",
        s(&covs_path),
        "--model",
        "full",
        "--penalty",
        "none",
        "--out",
        s(&model_path),
    ]);
    assert!(out.status.success());
    let cli_model = read_model(&fs::read_to_string(&model_path).unwrap()).unwrap();

    let cases = io::read_cases(fs::read(&cases_path).unwrap().as_slice(), "cases").unwrap();
    let covs = io::read_covariates(fs::read(&covs_path).unwrap().as_slice(), "covs").unwrap();
    let period = collapse_period_level(&expand_person_period(&cases, ExpandOptions::default()).unwrap());
    let raw = contextual_design(&period, &covs, &ModelKind::Full.blocks()).unwrap();
    let config = FitConfig {
        penalty: PenaltyKind::None,
        ..FitConfig::default()
    };
    let lib_model = fit_kind(&raw, ModelKind::Full, &config).unwrap();

    assert_eq!(cli_model.penalty.kind, PenaltyKind::None);
    let (a, b) = (&cli_model.coefficients, &lib_model.coefficients);
    assert_eq!(a.terms.keys().collect::<Vec<_>>(), b.terms.keys().collect::<Vec<_>>());
    assert!((a.intercept - b.intercept).abs() < 1e-12);
    for (name, v) in &a.terms {
        assert!((v - b.get(name)).abs() < 1e-12, "{name}: {v} vs {}", b.get(name));
    }
}

#[test]
fn evaluate_reports_three_models_and_curves() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), 4, 100);
    let ev = dir.path().join("ev");
    let out = run(&[
        "evaluate",
        "--cases",
        s(&sim.join("cases.csv")),
        "--covariates",
        s(&sim.join("covariates.csv")),
        "--models",
        "baseline,full,interaction",
        "--lambda-count",
        "20",
        "--k-folds",
        "5",
        "--out-dir",
        s(&ev),
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("rmse ")).count(), 3, "{stdout}");

    let metrics = fs::read_to_string(ev.join("metrics.csv")).unwrap();
    let rmses: Vec<f64> = metrics
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(rmses.len(), 3);
    assert!(rmses.iter().all(|r| r.is_finite() && *r > 0.0));

    let curves = fs::read_to_string(ev.join("curves.csv")).unwrap();
    let header = curves.lines().next().unwrap();
    assert_eq!(
        header,
        "cohort,phase,day,observed,predicted_baseline,predicted_full,predicted_interaction"
    );
    assert!(curves.lines().count() > 1);
}

#[test]
fn malformed_input_exits_2_with_location() {
    let dir = TempDir::new().unwrap();
    let cases = dir.path().join("cases.csv");
    fs::write(
        &cases,
        "case_id,cohort_id,invitation_date,reminder1_date,reminder2_date,end_date,response_date\n\
         a,c1,2016-01-01,,,2016-01-10,\n\
         b,c1,2016-13-01,,,2016-01-10,\n",
    )
    .unwrap();
    let out = run(&["expand", "--cases", s(&cases), "--out", s(&dir.path().join("pp.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains(&format!("{}:3", s(&cases))), "{stderr}");
}

#[test]
fn unknown_flag_exits_2() {
    let out = run(&["fit", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_entries_apply_and_explicit_flags_win() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), 2, 100);
    let config = dir.path().join("run.conf");
    fs::write(&config, "model = baseline\npenalty = ridge\nk_folds = 3\nlambda_count = 10\n").unwrap();
    let model_path = dir.path().join("m.model");
    let out = run(&[
        "--config",
        s(&config),
        "fit",
        "--cases",
        s(&sim.join("cases.csv")),
        "--penalty",
        "none",
        "--out",
        s(&model_path),
    ]);
    assert!(out.status.success());
    let model = read_model(&fs::read_to_string(&model_path).unwrap()).unwrap();
    assert_eq!(model.penalty.kind, PenaltyKind::None);
    let names: Vec<&str> = model.predictor_names().collect();
    assert_eq!(names, ["days", "reminder1", "reminder2"]);
}

#[test]
fn calibrate_gt_recovers_a_proportional_series() {
    let dir = TempDir::new().unwrap();
    let window = 4usize;
    let n_samples = 8usize;
    let truth: Vec<f64> = (0..window + n_samples).map(|d| 10.0 + d as f64 + (d as f64).sin()).collect();
    let start = chrono::NaiveDate::from_ymd_opt(2016, 3, 1).unwrap();
    let mut text = String::from("sample_index,start_date,day_offset,score\n");
    for k in 0..n_samples {
        let slice = &truth[k..k + window];
        let max = slice.iter().cloned().fold(f64::MIN, f64::max);
        for (i, t) in slice.iter().enumerate() {
            let date = start + chrono::Days::new(k as u64);
            text.push_str(&format!("{},{date},{i},{}\n", k + 1, 100.0 * t / max));
        }
    }
    let samples = dir.path().join("gt.csv");
    fs::write(&samples, text).unwrap();
    let series_path = dir.path().join("series.csv");
    let out = run(&[
        "calibrate-gt",
        "--samples",
        s(&samples),
        "--window",
        &window.to_string(),
        "--out",
        s(&series_path),
    ]);
    assert!(out.status.success());
    let series = io::read_series(fs::read(&series_path).unwrap().as_slice(), "series").unwrap();
    let reported: Vec<(usize, f64)> = series
        .iter()
        .enumerate()
        .filter_map(|(d, p)| p.value.map(|v| (d, v)))
        .collect();
    assert_eq!(reported.len(), n_samples - window + 1);
    let ratio = reported[0].1 / truth[reported[0].0];
    for (d, v) in reported {
        assert!((v / truth[d] - ratio).abs() < 1e-9 * ratio, "day {d}");
    }
}
