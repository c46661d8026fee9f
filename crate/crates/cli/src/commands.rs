use crate::args::*;
use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use survey_hazard::config::derive_seed;
use survey_hazard::covariates::{
    average_weather_stations, build_covariate_table, default_holidays, join_covariates, parse_holidays,
    split_train_test, CovariateBlocks, CovariateTable,
};
use survey_hazard::design::DesignTable;
use survey_hazard::evaluation::{
    compare_models, fit_kind, parse_model_list, permutation_importance, ModelKind,
};
use survey_hazard::glm::model_file::{read_model, write_model};
use survey_hazard::glm::{predict_hazards, report_exp_std_estimates, CvConfig, FitConfig, FittedModel};
use survey_hazard::gt::{calibrate, AveragingMode};
use survey_hazard::io;
use survey_hazard::survival::{
    collapse_period_level, expand_person_period, period_design, ExpandOptions, PeriodLevelTable,
};
use survey_hazard::synthetic::{generate_cases, ScenarioSpec};

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn name(path: &Path) -> String {
    path.display().to_string()
}

fn expand_options(clamp: bool) -> ExpandOptions {
    ExpandOptions {
        clamp_early_responses: clamp,
    }
}

fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").with_context(|| format!("invalid date `{s}`"))
}

fn load_period(data: &DataArgs) -> Result<PeriodLevelTable> {
    if let Some(path) = &data.period_level {
        return Ok(io::read_period_level(open(path)?, &name(path))?);
    }
    if let Some(path) = &data.cases {
        let cases = io::read_cases(open(path)?, &name(path))?;
        let pp = expand_person_period(&cases, expand_options(data.clamp_early_responses))?;
        return Ok(collapse_period_level(&pp));
    }
    bail!("one of --cases or --period-level is required")
}

fn load_covariates(data: &DataArgs) -> Result<Option<CovariateTable>> {
    data.covariates
        .as_ref()
        .map(|p| Ok(io::read_covariates(open(p)?, &name(p))?))
        .transpose()
}

/// Raw design holding every column any of `kinds` needs.
fn raw_design(period: &PeriodLevelTable, covariates: Option<&CovariateTable>, kinds: &[ModelKind]) -> Result<DesignTable> {
    let mut blocks = CovariateBlocks::none();
    for kind in kinds {
        let b = kind.blocks();
        blocks.weather |= b.weather;
        blocks.trends |= b.trends;
        blocks.calendar |= b.calendar;
        blocks.month |= b.month;
        blocks.season |= b.season;
    }
    let base = period_design(period);
    if blocks == CovariateBlocks::none() {
        return Ok(base);
    }
    let Some(table) = covariates else {
        bail!("--covariates is required for the {} model", kinds.iter().find(|k| **k != ModelKind::Baseline).unwrap());
    };
    Ok(join_covariates(&base, table, &table.names_in(&blocks))?)
}

/// Design for scoring a saved model: every covariate column is joined.
fn full_design(period: &PeriodLevelTable, covariates: Option<&CovariateTable>, model: &FittedModel) -> Result<DesignTable> {
    let base = period_design(period);
    let needs_more = model.standardization.raw_inputs().any(|n| base.column(n).is_none());
    match covariates {
        Some(table) if needs_more => {
            let names: Vec<String> = table.names().map(String::from).collect();
            Ok(join_covariates(&base, table, &names)?)
        }
        None if needs_more => bail!("--covariates is required by this model"),
        _ => Ok(base),
    }
}

fn split(period: &PeriodLevelTable, args: &SplitArgs) -> Result<(PeriodLevelTable, PeriodLevelTable)> {
    let cohorts = period.cohorts_by_start();
    let n = cohorts.len();
    let test = args.test_cohorts.unwrap_or((n / 4).max(1));
    let train = args.train_cohorts.unwrap_or(n.saturating_sub(test));
    if train == 0 || test == 0 {
        bail!("need at least one training and one test cohort ({n} available)");
    }
    let (train_ids, test_ids) = split_train_test(&cohorts, train, test)?;
    Ok((period.filter_cohorts(&train_ids), period.filter_cohorts(&test_ids)))
}

pub fn fit_config(fit: &FitArgs) -> FitConfig {
    FitConfig {
        penalty: fit.penalty.into(),
        cv: CvConfig {
            k_folds: fit.k_folds,
            seed: derive_seed(fit.seed.seed, "cv"),
            lambda_count: fit.lambda_count,
            lambda_min_ratio: fit.lambda_min_ratio,
            ..CvConfig::default()
        },
    }
}

pub fn ingest(args: &IngestArgs) -> Result<()> {
    let dates: Vec<NaiveDate> = match (&args.cases, &args.start, &args.end) {
        (Some(path), _, _) => {
            let cases = io::read_cases(open(path)?, &name(path))?;
            let mut set = BTreeSet::new();
            for c in &cases {
                set.extend(c.invitation_date.iter_days().take_while(|d| *d <= c.end_date));
            }
            set.into_iter().collect()
        }
        (None, Some(start), Some(end)) => {
            let (start, end) = (parse_date(start)?, parse_date(end)?);
            start.iter_days().take_while(|d| *d <= end).collect()
        }
        _ => bail!("give --cases or both --start and --end"),
    };
    let mut blocks = CovariateBlocks::none();
    for part in args.blocks.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part {
            "weather" => blocks.weather = true,
            "trends" => blocks.trends = true,
            "calendar" => blocks.calendar = true,
            "month" => blocks.month = true,
            "season" => blocks.season = true,
            other => bail!("unknown covariate block `{other}`"),
        }
    }
    let weather = match &args.weather {
        Some(path) if blocks.weather => Some(average_weather_stations(&io::read_weather(open(path)?, &name(path))?)?),
        _ => None,
    };
    let mut trends = Vec::new();
    if blocks.trends {
        for spec in &args.trends {
            let (label, path) = match spec.split_once('=') {
                Some((label, path)) => (label.to_string(), PathBuf::from(path)),
                None => {
                    let path = PathBuf::from(spec);
                    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    (stem, path)
                }
            };
            let points = io::read_series(open(&path)?, &name(&path))?;
            trends.push((label, io::series_values(&points)));
        }
    }
    let holidays = match &args.holidays {
        Some(path) => parse_holidays(&fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?, &name(path))?,
        None => default_holidays(),
    };
    let table = build_covariate_table(&dates, weather.as_ref(), &trends, &holidays, &blocks)?;
    io::write_covariates(create(&args.out)?, &table)?;
    println!("wrote {} dates x {} covariates to {}", table.rows.len(), table.columns.len(), args.out.display());
    Ok(())
}

pub fn expand(args: &ExpandArgs) -> Result<()> {
    let cases = io::read_cases(open(&args.cases)?, &name(&args.cases))?;
    let pp = expand_person_period(&cases, expand_options(args.clamp_early_responses))?;
    io::write_person_period(create(&args.out)?, &pp)?;
    println!("wrote {} person-period rows for {} cases", pp.len(), cases.len());
    Ok(())
}

pub fn collapse(args: &CollapseArgs) -> Result<()> {
    let pp = match (&args.cases, &args.person_period) {
        (Some(path), _) => {
            let cases = io::read_cases(open(path)?, &name(path))?;
            expand_person_period(&cases, expand_options(args.clamp_early_responses))?
        }
        (None, Some(path)) => io::read_person_period(open(path)?, &name(path))?,
        (None, None) => bail!("one of --cases or --person-period is required"),
    };
    let pl = collapse_period_level(&pp);
    io::write_period_level(create(&args.out)?, &pl)?;
    println!("collapsed {} person-period rows into {} period-level rows", pp.len(), pl.len());
    Ok(())
}

pub fn fit(args: &FitCmdArgs) -> Result<()> {
    let kind: ModelKind = args.model.parse()?;
    let mut period = load_period(&args.data)?;
    if let Some(n) = args.train_cohorts {
        let (train, _) = split_train_test(&period.cohorts_by_start(), n, 0)?;
        period = period.filter_cohorts(&train);
    }
    let covariates = load_covariates(&args.data)?;
    let raw = raw_design(&period, covariates.as_ref(), &[kind])?;
    let model = fit_kind(&raw, kind, &fit_config(&args.fit))?;
    fs::write(&args.out, write_model(&model)?).with_context(|| format!("cannot write {}", args.out.display()))?;
    if let Some(path) = &args.coefficients {
        io::write_coefficients(create(path)?, &model)?;
    }
    println!(
        "{kind} model: lambda {:e}, {} of {} predictors retained",
        model.penalty.lambda,
        model.coefficients.nonzero().count(),
        model.coefficients.terms.len()
    );
    Ok(())
}

pub fn predict(args: &PredictArgs) -> Result<()> {
    let model = read_model(&fs::read_to_string(&args.model_file).with_context(|| format!("cannot read {}", args.model_file.display()))?)?;
    let period = load_period(&args.data)?;
    let covariates = load_covariates(&args.data)?;
    let raw = full_design(&period, covariates.as_ref(), &model)?;
    let hazards = predict_hazards(&model, &raw)?;
    io::write_predictions(create(&args.out)?, &raw, &hazards)?;
    println!("wrote {} predictions", hazards.len());
    Ok(())
}

fn parse_model_files(specs: &[String]) -> Result<BTreeMap<ModelKind, FittedModel>> {
    let mut out = BTreeMap::new();
    for spec in specs {
        let Some((kind, path)) = spec.split_once('=') else {
            bail!("--model-file expects `kind=path`, got `{spec}`");
        };
        let text = fs::read_to_string(path).with_context(|| format!("cannot read {path}"))?;
        out.insert(kind.parse()?, read_model(&text)?);
    }
    Ok(out)
}

struct Evaluation {
    kinds: Vec<ModelKind>,
    models: Vec<FittedModel>,
    test: DesignTable,
}

fn fit_and_hold_out(
    data: &DataArgs,
    split_args: &SplitArgs,
    kinds: Vec<ModelKind>,
    mut saved: BTreeMap<ModelKind, FittedModel>,
    fit: &FitArgs,
) -> Result<Evaluation> {
    let period = load_period(data)?;
    let covariates = load_covariates(data)?;
    let (train, test) = split(&period, split_args)?;
    let train = raw_design(&train, covariates.as_ref(), &kinds)?;
    let test = raw_design(&test, covariates.as_ref(), &kinds)?;
    let config = fit_config(fit);
    let models = kinds
        .iter()
        .map(|kind| match saved.remove(kind) {
            Some(model) => Ok(model),
            None => Ok(fit_kind(&train, *kind, &config)?),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation { kinds, models, test })
}

fn write_comparison(out_dir: &Path, eval: &Evaluation) -> Result<String> {
    fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    let pairs: Vec<(ModelKind, &FittedModel)> = eval.kinds.iter().copied().zip(&eval.models).collect();
    let report = compare_models(&pairs, &eval.test)?;
    io::write_metrics(create(&out_dir.join("metrics.csv"))?, &report)?;
    io::write_curves(create(&out_dir.join("curves.csv"))?, &report)?;
    for score in &report.scores {
        io::write_predictions(create(&out_dir.join(format!("predictions_{}.csv", score.kind)))?, &eval.test, &score.hazards)?;
    }
    let mut summary = String::new();
    writeln!(summary, "held-out rows: {}", eval.test.n_rows())?;
    for score in &report.scores {
        write!(summary, "rmse {:<12} {:.6}", score.kind.as_str(), score.rmse)?;
        if let Some(imp) = score.improvement_over_previous {
            write!(summary, "  ({:+.1}% vs previous)", 100.0 * imp)?;
        }
        writeln!(summary)?;
    }
    Ok(summary)
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let kinds = parse_model_list(&args.models)?;
    let saved = parse_model_files(&args.model_file)?;
    let eval = fit_and_hold_out(&args.data, &args.split, kinds, saved, &args.fit)?;
    let summary = write_comparison(&args.out_dir, &eval)?;
    fs::write(args.out_dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

pub fn importance(args: &ImportanceArgs) -> Result<()> {
    let (model, test) = match &args.model_file {
        Some(path) => {
            let model = read_model(&fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?)?;
            let period = load_period(&args.data)?;
            let covariates = load_covariates(&args.data)?;
            let (_, test) = split(&period, &args.split)?;
            let test = full_design(&test, covariates.as_ref(), &model)?;
            (model, test)
        }
        None => {
            let kind: ModelKind = args.model.parse()?;
            let mut eval = fit_and_hold_out(&args.data, &args.split, vec![kind], BTreeMap::new(), &args.fit)?;
            (eval.models.remove(0), eval.test)
        }
    };
    let report = permutation_importance(&model, &test, args.permutations, derive_seed(args.fit.seed.seed, "importance"))?;
    io::write_importance(create(&args.out)?, &report)?;
    for e in report.ranked().iter().take(10) {
        println!("{:<24} {:.4}", e.name, e.mean_ratio);
    }
    Ok(())
}

pub fn calibrate_gt(args: &CalibrateArgs) -> Result<()> {
    let source = name(&args.samples);
    let set = match args.format {
        SampleFormat::Long => io::read_gt_long(open(&args.samples)?, &source, args.window)?,
        SampleFormat::Wide => io::read_gt_wide(open(&args.samples)?, &source)?,
    };
    let mode = match args.mode {
        ModeArg::Strict => AveragingMode::Strict,
        ModeArg::Partial => AveragingMode::Partial,
    };
    let series = calibrate(&set, mode)?;
    io::write_series(create(&args.out)?, &series.points)?;
    let reported: Vec<_> = series.reported().collect();
    match (reported.first(), reported.last()) {
        (Some(first), Some(last)) => println!("{} reported days, {} to {}", reported.len(), first.0, last.0),
        _ => println!("no day reaches the required coverage"),
    }
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut spec = match &args.scenario {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            ScenarioSpec::from_config(&survey_hazard::config::KeyValueConfig::parse(&text, &name(path))?)?
        }
        None => ScenarioSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let data = generate_cases(&spec)?;
    fs::create_dir_all(&args.out_dir).with_context(|| format!("cannot create {}", args.out_dir.display()))?;
    io::write_cases(create(&args.out_dir.join("cases.csv"))?, &data.cases)?;
    io::write_covariates(create(&args.out_dir.join("covariates.csv"))?, &data.covariates)?;
    let mut w = create(&args.out_dir.join("true_hazards.csv"))?;
    use std::io::Write;
    writeln!(w, "cohort_id,date,phase,days,hazard")?;
    for (key, h) in &data.true_hazards {
        writeln!(w, "{},{},{},{},{}", key.cohort_id, key.date, key.phase, key.days, h)?;
    }
    w.flush()?;
    let responders = data.cases.iter().filter(|c| c.response_date.is_some()).count();
    println!("simulated {} cases, {} responders", data.cases.len(), responders);
    Ok(())
}

pub fn report(args: &ReportArgs) -> Result<()> {
    let mut kinds = parse_model_list(&args.models)?;
    let explain: ModelKind = args.explain.parse()?;
    if !kinds.contains(&explain) {
        kinds.push(explain);
    }
    let eval = fit_and_hold_out(&args.data, &args.split, kinds, BTreeMap::new(), &args.fit)?;
    let mut summary = write_comparison(&args.out_dir, &eval)?;

    for (kind, model) in eval.kinds.iter().zip(&eval.models) {
        if kind.has_interactions() && !args.interaction_coefficients {
            continue;
        }
        io::write_coefficients(create(&args.out_dir.join(format!("coefficients_{kind}.csv")))?, model)?;
    }
    let idx = eval.kinds.iter().position(|k| *k == explain).expect("explained model was fitted");
    let model = &eval.models[idx];
    let estimates = report_exp_std_estimates(model);
    writeln!(summary, "\nexp(standardized estimate), {explain} model:")?;
    for (name, v) in &estimates.retained {
        writeln!(summary, "  {name:<24} {v:.4}")?;
    }
    if !estimates.zero.is_empty() {
        writeln!(summary, "  shrunk to zero: {}", estimates.zero.join(", "))?;
    }
    let imp = permutation_importance(model, &eval.test, args.permutations, derive_seed(args.fit.seed.seed, "importance"))?;
    io::write_importance(create(&args.out_dir.join("importance.csv"))?, &imp)?;
    writeln!(summary, "\npermutation importance (RMSE ratio, {} permutations):", imp.n_perm)?;
    for e in imp.ranked().iter().filter(|e| e.coefficient != 0.0) {
        writeln!(summary, "  {:<24} {:.4}", e.name, e.mean_ratio)?;
    }
    fs::write(args.out_dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}
