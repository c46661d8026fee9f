//! Versioned text serialization of fitted models.
//!
//! ```text
//! # survey-hazard model
//! format_version = 1
//! penalty = adaptive
//! lambda = 1.5e-3
//! seed = 42
//! intercept = -3.2e0
//! training_cohorts = c01,c02
//! dropped = holiday
//!
//! [predictors]
//! name,source,mean,sd,weight,coefficient
//! days,raw,7.33e0,5.34e0,1.2e0,-1.27e0
//! days:tg,product:days|tg,1e-2,9.9e-1,3.1e0,0e0
//!
//! [cv ridge]
//! chosen_index = 41
//! lambda,mean_deviance,fold_1,...,fold_k
//! ...
//!
//! [cv final]
//! ...
//! ```
//!
//! Floats use Rust's shortest round-trip exponent form, so a written model
//! reads back bit-identical.

use super::cv::CvResult;
use super::solver::{PenaltyKind, PenaltySpec};
use super::standardize::{ColumnScale, ColumnSource, StandardizationParams};
use super::FittedModel;
use crate::design::Coefficients;
use crate::error::{Error, Result};
use std::fmt::Write as _;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "# survey-hazard model";
const PREDICTOR_HEADER: &str = "name,source,mean,sd,weight,coefficient";

/// Names stored in the file may not contain separators used by the format.
pub fn validate_name(name: &str) -> Result<()> {
    let bad = name.is_empty()
        || name.trim() != name
        || name.starts_with('[')
        || name.starts_with('#')
        || name.chars().any(|c| matches!(c, ',' | '|' | '=' | '\n' | '\r'));
    if bad {
        Err(Error::ModelFormat(format!("name `{name}` cannot be stored")))
    } else {
        Ok(())
    }
}

pub fn write_model(model: &FittedModel) -> Result<String> {
    let params = &model.standardization;
    if params.columns.len() != model.penalty.weights.len() || params.columns.len() != model.coefficients.terms.len() {
        return Err(Error::ModelFormat("predictor tables differ in length".into()));
    }
    for name in params
        .columns
        .iter()
        .map(|c| &c.name)
        .chain(&params.dropped)
        .chain(&model.training_cohorts)
    {
        validate_name(name)?;
    }

    let mut out = String::new();
    writeln!(out, "{MAGIC}").unwrap();
    writeln!(out, "format_version = {FORMAT_VERSION}").unwrap();
    writeln!(out, "penalty = {}", model.penalty.kind).unwrap();
    writeln!(out, "lambda = {:e}", model.penalty.lambda).unwrap();
    writeln!(out, "seed = {}", model.seed).unwrap();
    writeln!(out, "intercept = {:e}", model.coefficients.intercept).unwrap();
    writeln!(out, "training_cohorts = {}", model.training_cohorts.join(",")).unwrap();
    writeln!(out, "dropped = {}", params.dropped.join(",")).unwrap();
    writeln!(out).unwrap();
    writeln!(out, "[predictors]").unwrap();
    writeln!(out, "{PREDICTOR_HEADER}").unwrap();
    for (i, col) in params.columns.iter().enumerate() {
        let (name, coef) = model.coefficients.terms.get_index(i).expect("index in range");
        if name != &col.name {
            return Err(Error::ModelFormat(format!("coefficient `{name}` out of order with `{}`", col.name)));
        }
        let source = match &col.source {
            ColumnSource::Raw => "raw".to_string(),
            ColumnSource::Product(a, b) => format!("product:{a}|{b}"),
        };
        writeln!(
            out,
            "{},{},{:e},{:e},{:e},{:e}",
            col.name, source, col.mean, col.sd, model.penalty.weights[i], coef
        )
        .unwrap();
    }
    for (label, cv) in [("ridge", &model.ridge_cv), ("final", &model.cv)] {
        if let Some(cv) = cv {
            writeln!(out).unwrap();
            writeln!(out, "[cv {label}]").unwrap();
            writeln!(out, "seed = {}", cv.seed).unwrap();
            writeln!(out, "chosen_index = {}", cv.chosen_index).unwrap();
            let folds: Vec<String> = (1..=cv.k_folds()).map(|f| format!("fold_{f}")).collect();
            writeln!(out, "lambda,mean_deviance{}{}", if folds.is_empty() { "" } else { "," }, folds.join(",")).unwrap();
            for (l, lambda) in cv.lambdas.iter().enumerate() {
                write!(out, "{lambda:e},{:e}", cv.mean_deviance[l]).unwrap();
                for v in &cv.fold_deviance[l] {
                    write!(out, ",{v:e}").unwrap();
                }
                writeln!(out).unwrap();
            }
        }
    }
    Ok(out)
}

fn err(line: usize, msg: impl Into<String>) -> Error {
    Error::ModelFormat(format!("line {}: {}", line + 1, msg.into()))
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    let v: f64 = s.trim().parse().map_err(|_| err(line, format!("invalid number `{s}`")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(err(line, format!("non-finite number `{s}`")))
    }
}

fn split_list(s: &str) -> Vec<String> {
    if s.is_empty() {
        Vec::new()
    } else {
        s.split(',').map(|x| x.to_string()).collect()
    }
}

enum Section {
    Header,
    Predictors { saw_header: bool },
    Cv { ridge: bool, saw_header: bool, folds: usize },
}

#[derive(Default)]
struct CvBuilder {
    seed: Option<u64>,
    chosen: Option<usize>,
    lambdas: Vec<f64>,
    mean: Vec<f64>,
    folds: Vec<Vec<f64>>,
}

impl CvBuilder {
    fn finish(self, label: &str) -> Result<CvResult> {
        let chosen = self
            .chosen
            .ok_or_else(|| Error::ModelFormat(format!("cv {label}: missing chosen_index")))?;
        if chosen >= self.lambdas.len() {
            return Err(Error::ModelFormat(format!("cv {label}: chosen_index out of range")));
        }
        if self.lambdas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::ModelFormat(format!("cv {label}: lambda grid not strictly decreasing")));
        }
        Ok(CvResult {
            lambdas: self.lambdas,
            mean_deviance: self.mean,
            fold_deviance: self.folds,
            chosen_index: chosen,
            seed: self.seed.unwrap_or(0),
        })
    }
}

pub fn read_model(text: &str) -> Result<FittedModel> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == MAGIC => {}
        _ => return Err(err(0, "missing model header")),
    }

    let mut section = Section::Header;
    let mut version = None;
    let mut penalty = None;
    let mut lambda = None;
    let mut seed = None;
    let mut intercept = None;
    let mut cohorts = None;
    let mut dropped = None;
    let mut columns: Vec<ColumnScale> = Vec::new();
    let mut weights = Vec::new();
    let mut coefs: Vec<(String, f64)> = Vec::new();
    let mut ridge_cv: Option<CvBuilder> = None;
    let mut final_cv: Option<CvBuilder> = None;

    for (no, raw) in lines {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = match name {
                "predictors" => Section::Predictors { saw_header: false },
                "cv ridge" | "cv final" => {
                    let ridge = name == "cv ridge";
                    let slot = if ridge { &mut ridge_cv } else { &mut final_cv };
                    if slot.is_some() {
                        return Err(err(no, format!("duplicate section [{name}]")));
                    }
                    *slot = Some(CvBuilder::default());
                    Section::Cv {
                        ridge,
                        saw_header: false,
                        folds: 0,
                    }
                }
                other => return Err(err(no, format!("unknown section [{other}]"))),
            };
            continue;
        }
        match &mut section {
            Section::Header => {
                let (key, value) = line.split_once('=').ok_or_else(|| err(no, "expected `key = value`"))?;
                let value = value.trim();
                match key.trim() {
                    "format_version" => {
                        let v: u32 = value.parse().map_err(|_| err(no, "invalid format_version"))?;
                        if v != FORMAT_VERSION {
                            return Err(err(no, format!("unsupported format_version {v}")));
                        }
                        version = Some(v);
                    }
                    "penalty" => penalty = Some(value.parse::<PenaltyKind>().map_err(|e| err(no, e.to_string()))?),
                    "lambda" => lambda = Some(parse_f64(value, no)?),
                    "seed" => seed = Some(value.parse::<u64>().map_err(|_| err(no, "invalid seed"))?),
                    "intercept" => intercept = Some(parse_f64(value, no)?),
                    "training_cohorts" => cohorts = Some(split_list(value)),
                    "dropped" => dropped = Some(split_list(value)),
                    other => return Err(err(no, format!("unknown key `{other}`"))),
                }
            }
            Section::Predictors { saw_header } => {
                if !*saw_header {
                    if line != PREDICTOR_HEADER {
                        return Err(err(no, "expected predictor table header"));
                    }
                    *saw_header = true;
                    continue;
                }
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() != 6 {
                    return Err(err(no, format!("expected 6 fields, found {}", fields.len())));
                }
                let name = fields[0].to_string();
                validate_name(&name).map_err(|e| err(no, e.to_string()))?;
                if columns.iter().any(|c| c.name == name) {
                    return Err(err(no, format!("duplicate predictor `{name}`")));
                }
                let source = if fields[1] == "raw" {
                    ColumnSource::Raw
                } else if let Some(rest) = fields[1].strip_prefix("product:") {
                    let (a, b) = rest.split_once('|').ok_or_else(|| err(no, "malformed product source"))?;
                    for operand in [a, b] {
                        if !columns.iter().any(|c| c.name == operand) {
                            return Err(err(no, format!("product operand `{operand}` not defined earlier")));
                        }
                    }
                    ColumnSource::Product(a.to_string(), b.to_string())
                } else {
                    return Err(err(no, format!("unknown source `{}`", fields[1])));
                };
                let mean = parse_f64(fields[2], no)?;
                let sd = parse_f64(fields[3], no)?;
                if sd <= 0.0 {
                    return Err(err(no, "standard deviation must be positive"));
                }
                let weight = parse_f64(fields[4], no)?;
                if weight < 0.0 {
                    return Err(err(no, "penalty weight must be non-negative"));
                }
                let coef = parse_f64(fields[5], no)?;
                columns.push(ColumnScale {
                    name: name.clone(),
                    source,
                    mean,
                    sd,
                });
                weights.push(weight);
                coefs.push((name, coef));
            }
            Section::Cv {
                ridge,
                saw_header,
                folds,
            } => {
                let builder = if *ridge { ridge_cv.as_mut() } else { final_cv.as_mut() }.expect("section opened");
                if !*saw_header {
                    if let Some((key, value)) = line.split_once('=') {
                        let value = value.trim();
                        match key.trim() {
                            "seed" => builder.seed = Some(value.parse().map_err(|_| err(no, "invalid seed"))?),
                            "chosen_index" => {
                                builder.chosen = Some(value.parse().map_err(|_| err(no, "invalid chosen_index"))?)
                            }
                            other => return Err(err(no, format!("unknown key `{other}`"))),
                        }
                        continue;
                    }
                    let header: Vec<&str> = line.split(',').collect();
                    if header.len() < 2 || header[0] != "lambda" || header[1] != "mean_deviance" {
                        return Err(err(no, "expected cv table header"));
                    }
                    for (i, h) in header[2..].iter().enumerate() {
                        if *h != format!("fold_{}", i + 1) {
                            return Err(err(no, format!("unexpected column `{h}`")));
                        }
                    }
                    *folds = header.len() - 2;
                    *saw_header = true;
                    continue;
                }
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() != *folds + 2 {
                    return Err(err(no, format!("expected {} fields, found {}", *folds + 2, fields.len())));
                }
                builder.lambdas.push(parse_f64(fields[0], no)?);
                builder.mean.push(parse_f64(fields[1], no)?);
                builder.folds.push(
                    fields[2..]
                        .iter()
                        .map(|f| parse_f64(f, no))
                        .collect::<Result<Vec<_>>>()?,
                );
            }
        }
    }

    let missing = |k: &str| Error::ModelFormat(format!("missing `{k}`"));
    version.ok_or_else(|| missing("format_version"))?;
    let kind = penalty.ok_or_else(|| missing("penalty"))?;
    let lambda = lambda.ok_or_else(|| missing("lambda"))?;
    if lambda < 0.0 {
        return Err(Error::ModelFormat("negative lambda".into()));
    }
    let intercept = intercept.ok_or_else(|| missing("intercept"))?;
    let training_cohorts = cohorts.ok_or_else(|| missing("training_cohorts"))?;
    let dropped = dropped.ok_or_else(|| missing("dropped"))?;
    for name in training_cohorts.iter().chain(&dropped) {
        validate_name(name)?;
    }

    Ok(FittedModel {
        standardization: StandardizationParams { columns, dropped },
        penalty: PenaltySpec { kind, lambda, weights },
        coefficients: Coefficients::new(intercept, coefs),
        cv: final_cv.map(|b| b.finish("final")).transpose()?,
        ridge_cv: ridge_cv.map(|b| b.finish("ridge")).transpose()?,
        training_cohorts,
        seed: seed.ok_or_else(|| missing("seed"))?,
    })
}
