//! Model family construction, held-out scoring, cumulative response curves
//! and permutation importance.

use crate::covariates::{Block, CovariateBlocks};
use crate::design::{DesignTable, RowKey};
use crate::error::{Error, Result};
use crate::glm::{fit_standardized, predict_hazards, standardize, ColumnSource, FitConfig, FittedModel, StandardizationParams};
use crate::survival::{hazard_from_eta, Phase, BASELINE_PREDICTORS};
use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

pub const DEFAULT_PERMUTATIONS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    /// Days since the last letter and the phase dummies only.
    Baseline,
    /// Baseline plus weather, calendar and trend covariates.
    Full,
    /// Full plus products of each baseline predictor with each contextual one.
    Interaction,
    /// Weather and trends replaced by month indicators.
    Month,
    /// Weather and trends replaced by season indicators.
    Season,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Baseline,
        ModelKind::Full,
        ModelKind::Interaction,
        ModelKind::Month,
        ModelKind::Season,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Baseline => "baseline",
            ModelKind::Full => "full",
            ModelKind::Interaction => "interaction",
            ModelKind::Month => "month",
            ModelKind::Season => "season",
        }
    }

    pub fn blocks(self) -> CovariateBlocks {
        let mut blocks = CovariateBlocks::none();
        match self {
            ModelKind::Baseline => {}
            ModelKind::Full | ModelKind::Interaction => {
                blocks.weather = true;
                blocks.trends = true;
                blocks.calendar = true;
            }
            ModelKind::Month => {
                blocks.calendar = true;
                blocks.month = true;
            }
            ModelKind::Season => {
                blocks.calendar = true;
                blocks.season = true;
            }
        }
        blocks
    }

    pub fn has_interactions(self) -> bool {
        self == ModelKind::Interaction
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model `{s}`")))
    }
}

/// Parses a comma-separated model list such as `baseline,full,interaction`.
pub fn parse_model_list(s: &str) -> Result<Vec<ModelKind>> {
    let kinds: Vec<ModelKind> = s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect::<Result<_>>()?;
    if kinds.is_empty() {
        return Err(Error::InvalidArgument("empty model list".into()));
    }
    Ok(kinds)
}

fn is_baseline(name: &str) -> bool {
    BASELINE_PREDICTORS.contains(&name)
}

/// Raw columns of `raw` that enter a model of the given kind, in design order.
pub fn kind_columns(raw: &DesignTable, kind: ModelKind) -> Vec<String> {
    let blocks = kind.blocks();
    raw.names()
        .iter()
        .filter(|n| is_baseline(n) || (!n.contains(':') && blocks.includes(Block::classify(n))))
        .cloned()
        .collect()
}

/// Adds `base:contextual` products for every baseline predictor and every
/// raw contextual column of a standardized design. Products are themselves
/// standardized; constant products are dropped.
pub fn build_interactions(
    design: &DesignTable,
    params: &StandardizationParams,
) -> Result<(DesignTable, StandardizationParams)> {
    let mut design = design.clone();
    let mut params = params.clone();
    let raw: Vec<String> = params
        .columns
        .iter()
        .filter(|c| c.source == ColumnSource::Raw)
        .map(|c| c.name.clone())
        .collect();
    let bases: Vec<&String> = raw.iter().filter(|n| is_baseline(n)).collect();
    let contextual: Vec<&String> = raw.iter().filter(|n| !is_baseline(n)).collect();
    for base in &bases {
        for ctx in &contextual {
            params.push_product(&mut design, base, ctx)?;
        }
    }
    Ok((design, params))
}

/// Selects the kind's columns from a raw design, standardizes, adds
/// interactions where the kind asks for them and fits.
pub fn fit_kind(raw: &DesignTable, kind: ModelKind, config: &FitConfig) -> Result<FittedModel> {
    let selected = raw.select(&kind_columns(raw, kind))?;
    let (mut design, mut params) = standardize(&selected)?;
    if kind.has_interactions() {
        (design, params) = build_interactions(&design, &params)?;
    }
    fit_standardized(&design, params, config)
}

/// Root mean squared difference.
pub fn rmse(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    if observed.len() != predicted.len() {
        return Err(Error::Dimension(format!(
            "{} observed values but {} predictions",
            observed.len(),
            predicted.len()
        )));
    }
    if observed.is_empty() {
        return Err(Error::Empty("no values to score"));
    }
    let sse: f64 = observed.iter().zip(predicted).map(|(o, p)| (o - p) * (o - p)).sum();
    Ok((sse / observed.len() as f64).sqrt())
}

/// RMSE between observed daily hazards (events / at risk) and model hazards.
pub fn hazard_rmse(model: &FittedModel, raw: &DesignTable) -> Result<f64> {
    rmse(&raw.observed_hazards(), &predict_hazards(model, raw)?)
}

/// `1 - prod_{s <= t} (1 - h_s)` for each t.
pub fn cumulative_from_hazards(hazards: &[f64]) -> Vec<f64> {
    let mut survival = 1.0;
    hazards
        .iter()
        .map(|h| {
            survival *= 1.0 - h;
            1.0 - survival
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub cohort_id: String,
    pub date: NaiveDate,
    pub phase: Phase,
    /// Fieldwork day within the cohort, starting at 1.
    pub day: u32,
    pub observed: f64,
    pub predicted: f64,
}

struct CohortDay {
    phase: Phase,
    phase_weight: f64,
    events: f64,
    at_risk: f64,
    weighted_hazard: f64,
}

/// Entrants per cohort: at-risk count on the first invitation day, or on the
/// earliest date when that row is absent.
fn cohort_sizes(keys: &[RowKey], at_risk: &[f64]) -> BTreeMap<String, f64> {
    let mut first_day: BTreeMap<&str, f64> = BTreeMap::new();
    let mut earliest: BTreeMap<&str, (NaiveDate, f64)> = BTreeMap::new();
    for (key, &m) in keys.iter().zip(at_risk) {
        if key.phase == Phase::Invitation && key.days == 1 {
            *first_day.entry(&key.cohort_id).or_default() += m;
        }
        let e = earliest.entry(&key.cohort_id).or_insert((key.date, 0.0));
        if key.date < e.0 {
            *e = (key.date, m);
        } else if key.date == e.0 {
            e.1 += m;
        }
    }
    earliest
        .into_iter()
        .map(|(c, (_, m))| (c.to_string(), first_day.get(c).copied().unwrap_or(m)))
        .collect()
}

/// Predicted and observed cumulative response per cohort and fieldwork day.
///
/// Rows sharing a date are pooled (at-risk weighted hazard). Hazards chain
/// across phases: non-respondents carry over into the next phase. The
/// observed rate is cumulative events over cohort entrants.
pub fn cumulative_response_curve(design: &DesignTable, hazards: &[f64]) -> Result<Vec<CurvePoint>> {
    if hazards.len() != design.n_rows() {
        return Err(Error::Dimension(format!(
            "{} hazards for {} rows",
            hazards.len(),
            design.n_rows()
        )));
    }
    let mut days: BTreeMap<(&str, NaiveDate), CohortDay> = BTreeMap::new();
    for (i, key) in design.keys().iter().enumerate() {
        let m = design.at_risk()[i];
        let d = days.entry((&key.cohort_id, key.date)).or_insert(CohortDay {
            phase: key.phase,
            phase_weight: 0.0,
            events: 0.0,
            at_risk: 0.0,
            weighted_hazard: 0.0,
        });
        if m > d.phase_weight {
            d.phase = key.phase;
            d.phase_weight = m;
        }
        d.events += design.events()[i];
        d.at_risk += m;
        d.weighted_hazard += m * hazards[i];
    }
    let sizes = cohort_sizes(design.keys(), design.at_risk());
    let mut out = Vec::with_capacity(days.len());
    let mut current: Option<&str> = None;
    let (mut survival, mut events, mut day) = (1.0, 0.0, 0);
    for ((cohort, date), d) in &days {
        if current != Some(cohort) {
            current = Some(cohort);
            survival = 1.0;
            events = 0.0;
            day = 0;
        }
        day += 1;
        survival *= 1.0 - d.weighted_hazard / d.at_risk;
        events += d.events;
        out.push(CurvePoint {
            cohort_id: cohort.to_string(),
            date: *date,
            phase: d.phase,
            day,
            observed: events / sizes[*cohort],
            predicted: 1.0 - survival,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceEntry {
    pub name: String,
    /// Standardized-scale coefficient.
    pub coefficient: f64,
    pub mean_ratio: f64,
    pub ratios: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceReport {
    pub seed: u64,
    pub n_perm: usize,
    pub baseline_rmse: f64,
    /// One entry per model predictor, in model order.
    pub entries: Vec<ImportanceEntry>,
}

impl ImportanceReport {
    /// Entries sorted by decreasing mean ratio; ties keep model order.
    pub fn ranked(&self) -> Vec<&ImportanceEntry> {
        let mut v: Vec<&ImportanceEntry> = self.entries.iter().collect();
        v.sort_by(|a, b| b.mean_ratio.total_cmp(&a.mean_ratio));
        v
    }

    pub fn get(&self, name: &str) -> Option<&ImportanceEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Shuffles each model column of the held-out design `n_perm` times and
/// reports `RMSE_permuted / RMSE_original`. Outcomes are never shuffled.
/// Each predictor draws from its own ChaCha stream of `seed`, so results do
/// not depend on thread count.
pub fn permutation_importance(model: &FittedModel, raw: &DesignTable, n_perm: usize, seed: u64) -> Result<ImportanceReport> {
    if n_perm == 0 {
        return Err(Error::InvalidArgument("need at least one permutation".into()));
    }
    let design = model.standardization.apply(raw)?;
    let beta = model.coefficients.resolve(&design)?;
    let eta = model.coefficients.linear_predictors(&design)?;
    let observed = design.observed_hazards();
    let hazards: Vec<f64> = eta.iter().map(|&e| hazard_from_eta(e)).collect();
    let original = rmse(&observed, &hazards)?;
    if original == 0.0 {
        return Err(Error::InvalidArgument("predictions match observations exactly; ratios undefined".into()));
    }
    let entries = design
        .names()
        .par_iter()
        .enumerate()
        .map(|(j, name)| -> Result<ImportanceEntry> {
            let b = beta[j];
            let ratios = if b == 0.0 {
                vec![1.0; n_perm]
            } else {
                let column = &design.columns()[j];
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(j as u64);
                let mut order: Vec<usize> = (0..column.len()).collect();
                let mut predicted = vec![0.0; column.len()];
                (0..n_perm)
                    .map(|_| {
                        order.shuffle(&mut rng);
                        for (i, p) in predicted.iter_mut().enumerate() {
                            *p = hazard_from_eta(eta[i] + b * (column[order[i]] - column[i]));
                        }
                        Ok(rmse(&observed, &predicted)? / original)
                    })
                    .collect::<Result<Vec<f64>>>()?
            };
            Ok(ImportanceEntry {
                name: name.clone(),
                coefficient: b,
                mean_ratio: ratios.iter().sum::<f64>() / n_perm as f64,
                ratios,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ImportanceReport {
        seed,
        n_perm,
        baseline_rmse: original,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelScore {
    pub kind: ModelKind,
    pub rmse: f64,
    /// `1 - rmse / rmse_previous` against the preceding model in the list.
    pub improvement_over_previous: Option<f64>,
    pub hazards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub cohort_id: String,
    pub phase: Phase,
    pub day: u32,
    pub observed: f64,
    /// One value per compared model, in comparison order.
    pub predicted: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub scores: Vec<ModelScore>,
    pub curves: Vec<CurveRow>,
}

impl ComparisonReport {
    pub fn rmse(&self, kind: ModelKind) -> Option<f64> {
        self.scores.iter().find(|s| s.kind == kind).map(|s| s.rmse)
    }
}

pub fn relative_improvement(reference: f64, candidate: f64) -> f64 {
    1.0 - candidate / reference
}

/// Scores each model on one raw held-out design holding every column any
/// of them needs, and assembles the side-by-side cumulative curves.
pub fn compare_models(models: &[(ModelKind, &FittedModel)], raw: &DesignTable) -> Result<ComparisonReport> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("no models to compare".into()));
    }
    let observed = raw.observed_hazards();
    let evaluated: Vec<(ModelKind, Vec<f64>, f64)> = models
        .par_iter()
        .map(|(kind, model)| {
            let hazards = predict_hazards(model, raw)?;
            let score = rmse(&observed, &hazards)?;
            Ok((*kind, hazards, score))
        })
        .collect::<Result<_>>()?;

    let mut curves: Vec<CurveRow> = Vec::new();
    for (m, (_, hazards, _)) in evaluated.iter().enumerate() {
        let points = cumulative_response_curve(raw, hazards)?;
        if m == 0 {
            curves = points
                .into_iter()
                .map(|p| CurveRow {
                    cohort_id: p.cohort_id,
                    phase: p.phase,
                    day: p.day,
                    observed: p.observed,
                    predicted: vec![p.predicted],
                })
                .collect();
        } else {
            for (row, p) in curves.iter_mut().zip(points) {
                row.predicted.push(p.predicted);
            }
        }
    }
    let mut scores = Vec::with_capacity(evaluated.len());
    let mut previous: Option<f64> = None;
    for (kind, hazards, score) in evaluated {
        scores.push(ModelScore {
            kind,
            rmse: score,
            improvement_over_previous: previous.map(|p| relative_improvement(p, score)),
            hazards,
        });
        previous = Some(score);
    }
    Ok(ComparisonReport { scores, curves })
}
