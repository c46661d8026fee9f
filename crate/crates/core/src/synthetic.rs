//! Simulated fieldwork from a known hazard model, plus brute-force reference
//! computations used to check the fitting code.

use crate::config::KeyValueConfig;
use crate::covariates::{calendar_row, default_holidays, Block, CovariateColumn, CovariateTable, HOLIDAY_COLUMN, WEEKDAY_COLUMNS};
use crate::design::{Coefficients, DesignTable, RowKey};
use crate::error::{Error, Result};
use crate::glm::PenaltyKind;
use crate::survival::{hazard_from_eta, Phase, SurveyCase, DAYS, REMINDER1, REMINDER2};
use chrono::{Days, NaiveDate};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::collections::{BTreeMap, HashSet};

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub cohorts: usize,
    pub cohort_size: usize,
    /// Length in days of each phase: invitation, then up to two reminders.
    pub phase_lengths: Vec<u32>,
    pub start_date: NaiveDate,
    /// Days between consecutive cohort invitations.
    pub cohort_spacing: u32,
    /// True coefficients applied to raw generated values. Names may be
    /// baseline predictors, generated covariates, or `a:b` products.
    pub truth: Coefficients,
    /// Number of AR(1) series, named `x01`, `x02`, ...
    pub continuous: usize,
    pub ar_phi: f64,
    /// Share of each series' unit variance that comes from one common factor.
    pub common_factor: f64,
    /// Adds weekday and holiday indicators.
    pub calendar: bool,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            cohorts: 4,
            cohort_size: 250,
            phase_lengths: vec![7, 7, 14],
            start_date: NaiveDate::from_ymd_opt(2016, 1, 4).expect("valid date"),
            cohort_spacing: 28,
            truth: Coefficients::new(
                -3.0,
                [
                    (DAYS.to_string(), -0.05),
                    (REMINDER1.to_string(), 0.3),
                    (REMINDER2.to_string(), 0.1),
                ],
            ),
            continuous: 0,
            ar_phi: 0.7,
            common_factor: 0.5,
            calendar: true,
            seed: 0,
        }
    }
}

pub fn continuous_name(j: usize) -> String {
    format!("x{:02}", j + 1)
}

impl ScenarioSpec {
    /// Reads a scenario from `key = value` entries; unspecified keys keep
    /// their defaults. Coefficients are given as repeated
    /// `coef = <name> <value>` lines and replace the default terms.
    pub fn from_config(config: &KeyValueConfig) -> Result<Self> {
        let mut spec = Self::default();
        if let Some(v) = config.get_parsed("cohorts")? {
            spec.cohorts = v;
        }
        if let Some(v) = config.get_parsed("cohort_size")? {
            spec.cohort_size = v;
        }
        if let Some(v) = config.get("phase_lengths") {
            spec.phase_lengths = v
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse()
                        .map_err(|_| Error::InvalidArgument(format!("invalid phase length `{p}`")))
                })
                .collect::<Result<_>>()?;
        }
        if let Some(v) = config.get("start_date") {
            spec.start_date = NaiveDate::parse_from_str(v, "%Y-%m-%d")
                .map_err(|_| Error::InvalidArgument(format!("invalid start_date `{v}`")))?;
        }
        if let Some(v) = config.get_parsed("cohort_spacing")? {
            spec.cohort_spacing = v;
        }
        if let Some(v) = config.get_parsed("continuous")? {
            spec.continuous = v;
        }
        if let Some(v) = config.get_parsed("ar_phi")? {
            spec.ar_phi = v;
        }
        if let Some(v) = config.get_parsed("common_factor")? {
            spec.common_factor = v;
        }
        if let Some(v) = config.get_bool("calendar")? {
            spec.calendar = v;
        }
        if let Some(v) = config.get_parsed("seed")? {
            spec.seed = v;
        }
        if let Some(v) = config.get_parsed("intercept")? {
            spec.truth.intercept = v;
        }
        let coefs: Vec<&str> = config.get_all("coef").collect();
        if !coefs.is_empty() {
            spec.truth.terms.clear();
            for entry in coefs {
                let mut parts = entry.split_whitespace();
                let (Some(name), Some(value), None) = (parts.next(), parts.next(), parts.next()) else {
                    return Err(Error::InvalidArgument(format!("expected `coef = <name> <value>`, got `{entry}`")));
                };
                let value: f64 = value
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("invalid coefficient value `{value}`")))?;
                if spec.truth.terms.insert(name.to_string(), value).is_some() {
                    return Err(Error::DuplicatePredictor(name.to_string()));
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Covariate columns the scenario generates.
    pub fn covariate_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.continuous).map(continuous_name).collect();
        if self.calendar {
            names.extend(WEEKDAY_COLUMNS.iter().map(|s| s.to_string()));
            names.push(HOLIDAY_COLUMN.to_string());
        }
        names
    }

    pub fn fieldwork_days(&self) -> u32 {
        self.phase_lengths.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.cohorts == 0 || self.cohort_size == 0 {
            return Err(Error::InvalidArgument("cohorts and cohort_size must be at least 1".into()));
        }
        if self.phase_lengths.is_empty() || self.phase_lengths.len() > 3 || self.phase_lengths.contains(&0) {
            return Err(Error::InvalidArgument("one to three phases, each at least one day long".into()));
        }
        if !(self.ar_phi.abs() < 1.0) {
            return Err(Error::InvalidArgument(format!("ar_phi {} outside (-1, 1)", self.ar_phi)));
        }
        if !(0.0..=1.0).contains(&self.common_factor) {
            return Err(Error::InvalidArgument(format!("common_factor {} outside [0, 1]", self.common_factor)));
        }
        let known: HashSet<String> = self
            .covariate_names()
            .into_iter()
            .chain([DAYS, REMINDER1, REMINDER2].map(String::from))
            .collect();
        for (name, value) in &self.truth.terms {
            if !value.is_finite() {
                return Err(Error::InvalidArgument(format!("coefficient `{name}` is not finite")));
            }
            if !name.split(':').all(|part| known.contains(part)) || name.split(':').count() > 2 {
                return Err(Error::UnknownPredictor(name.clone()));
            }
        }
        Ok(())
    }

    fn schedule(&self, cohort: usize) -> (NaiveDate, Vec<NaiveDate>, NaiveDate) {
        let invitation = self.start_date + Days::new(cohort as u64 * u64::from(self.cohort_spacing));
        let mut starts = vec![invitation];
        for len in &self.phase_lengths[..self.phase_lengths.len() - 1] {
            let last = *starts.last().expect("non-empty");
            starts.push(last + Days::new(u64::from(*len)));
        }
        let end = invitation + Days::new(u64::from(self.fieldwork_days()) - 1);
        (invitation, starts, end)
    }
}

pub fn cohort_name(k: usize) -> String {
    format!("c{:03}", k + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub cases: Vec<SurveyCase>,
    pub covariates: CovariateTable,
    /// True daily hazard of every fieldwork position.
    pub true_hazards: BTreeMap<RowKey, f64>,
}

impl SyntheticData {
    /// True hazards aligned with the rows of a design.
    pub fn hazards_for(&self, design: &DesignTable) -> Result<Vec<f64>> {
        design
            .keys()
            .iter()
            .map(|k| {
                self.true_hazards
                    .get(k)
                    .copied()
                    .ok_or_else(|| Error::InvalidArgument(format!("no true hazard for {} on {}", k.cohort_id, k.date)))
            })
            .collect()
    }
}

/// Stationary AR(1) with unit marginal variance.
fn ar1_series(rng: &mut ChaCha8Rng, len: usize, phi: f64) -> Vec<f64> {
    let innovation = (1.0 - phi * phi).sqrt();
    let mut z: f64 = rng.sample(StandardNormal);
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(z);
        z = phi * z + innovation * rng.sample::<f64, _>(StandardNormal);
    }
    out
}

fn generate_covariates(spec: &ScenarioSpec, first: NaiveDate, last: NaiveDate) -> Result<CovariateTable> {
    let dates: Vec<NaiveDate> = first.iter_days().take_while(|d| *d <= last).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let common = ar1_series(&mut rng, dates.len(), spec.ar_phi);
    let (a, b) = (spec.common_factor.sqrt(), (1.0 - spec.common_factor).sqrt());
    let series: Vec<Vec<f64>> = (0..spec.continuous)
        .map(|_| {
            ar1_series(&mut rng, dates.len(), spec.ar_phi)
                .iter()
                .zip(&common)
                .map(|(e, f)| a * f + b * e)
                .collect()
        })
        .collect();
    let holidays = default_holidays();
    let names = spec.covariate_names();
    let columns = names
        .iter()
        .map(|n| CovariateColumn {
            name: n.clone(),
            block: Block::classify(n),
        })
        .collect();
    let rows = dates
        .iter()
        .enumerate()
        .map(|(t, &date)| {
            let mut row: Vec<Option<f64>> = series.iter().map(|s| Some(s[t])).collect();
            if spec.calendar {
                let cal = calendar_row(date, &holidays);
                row.extend(cal.weekday.iter().map(|v| Some(*v)));
                row.push(Some(cal.holiday));
            }
            (date, row)
        })
        .collect();
    CovariateTable::new(columns, rows)
}

fn value_of(name: &str, phase: Phase, s: u32, date: NaiveDate, table: &CovariateTable) -> f64 {
    if let Some((a, b)) = name.split_once(':') {
        return value_of(a, phase, s, date, table) * value_of(b, phase, s, date, table);
    }
    match name {
        DAYS => f64::from(s),
        REMINDER1 => phase.dummies().0,
        REMINDER2 => phase.dummies().1,
        _ => table.value(date, name).expect("validated covariate"),
    }
}

/// Simulates every cohort: each person responds on a day with the true
/// hazard of that day, given no earlier response, and is censored at the
/// cohort end. Cohort `k` draws from ChaCha stream `k + 1` of the seed, so the
/// output does not depend on thread scheduling.
pub fn generate_cases(spec: &ScenarioSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let (first, _, _) = spec.schedule(0);
    let (_, _, last) = spec.schedule(spec.cohorts - 1);
    let covariates = generate_covariates(spec, first, last)?;

    let per_cohort: Vec<(Vec<SurveyCase>, Vec<(RowKey, f64)>)> = (0..spec.cohorts)
        .into_par_iter()
        .map(|k| {
            let (invitation, starts, end) = spec.schedule(k);
            let template = SurveyCase {
                case_id: String::new(),
                cohort_id: cohort_name(k),
                invitation_date: invitation,
                reminder1_date: starts.get(1).copied(),
                reminder2_date: starts.get(2).copied(),
                end_date: end,
                response_date: None,
            };
            let hazards: Vec<(RowKey, f64)> = invitation
                .iter_days()
                .take_while(|d| *d <= end)
                .map(|date| {
                    let (phase, s) = template.position(date);
                    let eta = spec.truth.intercept
                        + spec
                            .truth
                            .terms
                            .iter()
                            .map(|(n, c)| c * value_of(n, phase, s, date, &covariates))
                            .sum::<f64>();
                    let key = RowKey {
                        cohort_id: template.cohort_id.clone(),
                        date,
                        phase,
                        days: s,
                    };
                    (key, hazard_from_eta(eta))
                })
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(k as u64 + 1);
            let cases = (0..spec.cohort_size)
                .map(|i| {
                    let response = hazards
                        .iter()
                        .find(|(_, h)| rng.random::<f64>() < *h)
                        .map(|(key, _)| key.date);
                    SurveyCase {
                        case_id: format!("{}-{:06}", template.cohort_id, i + 1),
                        response_date: response,
                        ..template.clone()
                    }
                })
                .collect();
            (cases, hazards)
        })
        .collect();

    let mut cases = Vec::with_capacity(spec.cohorts * spec.cohort_size);
    let mut true_hazards = BTreeMap::new();
    for (c, h) in per_cohort {
        cases.extend(c);
        true_hazards.extend(h);
    }
    Ok(SyntheticData {
        cases,
        covariates,
        true_hazards,
    })
}

pub const ORACLE_MAX_PREDICTORS: usize = 3;
pub const ORACLE_MAX_ROWS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleFit {
    pub intercept: f64,
    pub beta: Vec<f64>,
    pub objective: f64,
}

/// `mean binomial NLL + penalty`, written out directly from the likelihood.
fn oracle_objective(design: &DesignTable, kind: PenaltyKind, lambda: f64, weights: &[f64], theta: &[f64]) -> f64 {
    let mut nll = 0.0;
    for i in 0..design.n_rows() {
        let mut eta = theta[0];
        for (j, col) in design.columns().iter().enumerate() {
            eta += theta[j + 1] * col[i];
        }
        // log(1 + e^eta) without overflow
        let softplus = eta.max(0.0) + (-eta.abs()).exp().ln_1p();
        nll += design.at_risk()[i] * softplus - design.events()[i] * eta;
    }
    let beta = &theta[1..];
    let penalty = match kind {
        PenaltyKind::None => 0.0,
        PenaltyKind::Ridge => beta.iter().map(|b| b * b).sum::<f64>(),
        PenaltyKind::Lasso | PenaltyKind::Adaptive => beta.iter().zip(weights).map(|(b, w)| w * b.abs()).sum(),
    };
    nll / design.total_at_risk() + lambda * penalty
}

/// Brute-force minimizer of the penalized objective for tiny designs.
///
/// A grid with unit spacing over `[-6, 6]` in every coordinate seeds a
/// pattern search over all `3^(p+1) - 1` sign directions. The step halves
/// whenever no direction improves, from 0.5 down to 1e-9.
pub fn oracle_penalized_fit(design: &DesignTable, kind: PenaltyKind, lambda: f64, weights: &[f64]) -> Result<OracleFit> {
    let p = design.n_cols();
    if p > ORACLE_MAX_PREDICTORS || design.n_rows() > ORACLE_MAX_ROWS {
        return Err(Error::InvalidArgument(format!(
            "oracle handles at most {ORACLE_MAX_PREDICTORS} predictors and {ORACLE_MAX_ROWS} rows, got {p} and {}",
            design.n_rows()
        )));
    }
    if weights.len() != p {
        return Err(Error::Dimension(format!("{} weights for {p} predictors", weights.len())));
    }
    let dim = p + 1;
    let f = |theta: &[f64]| oracle_objective(design, kind, lambda, weights, theta);

    let grid: Vec<f64> = (-6..=6).map(f64::from).collect();
    let mut best = vec![0.0; dim];
    let mut best_value = f(&best);
    let mut idx = vec![0usize; dim];
    let mut theta = vec![0.0; dim];
    loop {
        for (t, &i) in theta.iter_mut().zip(&idx) {
            *t = grid[i];
        }
        let v = f(&theta);
        if v < best_value {
            best_value = v;
            best.clone_from(&theta);
        }
        let mut carry = 0;
        while carry < dim {
            idx[carry] += 1;
            if idx[carry] < grid.len() {
                break;
            }
            idx[carry] = 0;
            carry += 1;
        }
        if carry == dim {
            break;
        }
    }

    let directions: Vec<Vec<f64>> = (1..3usize.pow(dim as u32))
        .map(|mut code| {
            (0..dim)
                .map(|_| {
                    let d = (code % 3) as f64 - 1.0;
                    code /= 3;
                    d
                })
                .collect()
        })
        .collect();
    let mut step = 0.5;
    let mut candidate = vec![0.0; dim];
    while step >= 1e-9 {
        let mut improved = false;
        for d in &directions {
            for ((c, b), di) in candidate.iter_mut().zip(&best).zip(d) {
                *c = b + step * di;
            }
            let v = f(&candidate);
            if v < best_value {
                best_value = v;
                best.clone_from(&candidate);
                improved = true;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok(OracleFit {
        intercept: best[0],
        beta: best[1..].to_vec(),
        objective: best_value,
    })
}

/// Asymptotic standard errors of an unpenalized fit from the inverse Fisher
/// information; the intercept comes first.
pub fn asymptotic_standard_errors(design: &DesignTable, intercept: f64, beta: &[f64]) -> Result<Vec<f64>> {
    let dim = design.n_cols() + 1;
    let mut info = DMatrix::<f64>::zeros(dim, dim);
    let mut x = DVector::<f64>::zeros(dim);
    for i in 0..design.n_rows() {
        x[0] = 1.0;
        let mut eta = intercept;
        for (j, col) in design.columns().iter().enumerate() {
            x[j + 1] = col[i];
            eta += beta[j] * col[i];
        }
        let h = hazard_from_eta(eta);
        info.syger(design.at_risk()[i] * h * (1.0 - h), &x, &x, 1.0);
    }
    let chol = info
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("information matrix is not positive definite".into()))?;
    let cov = chol.inverse();
    Ok((0..dim).map(|j| cov[(j, j)].sqrt()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survival::{collapse_period_level, expand_person_period, ExpandOptions};

    #[test]
    fn schedule_layout() {
        let spec = ScenarioSpec::default();
        let data = generate_cases(&spec).unwrap();
        assert_eq!(data.cases.len(), 1000);
        let c = &data.cases[0];
        assert_eq!(c.invitation_date, spec.start_date);
        assert_eq!(c.reminder1_date, Some(spec.start_date + Days::new(7)));
        assert_eq!(c.reminder2_date, Some(spec.start_date + Days::new(14)));
        assert_eq!(c.end_date, spec.start_date + Days::new(27));
        assert_eq!(data.true_hazards.len(), 4 * 28);
    }

    #[test]
    fn seeded_runs_repeat() {
        let spec = ScenarioSpec {
            continuous: 3,
            ..ScenarioSpec::default()
        };
        assert_eq!(generate_cases(&spec).unwrap(), generate_cases(&spec).unwrap());
        let other = ScenarioSpec { seed: 1, ..spec.clone() };
        assert_ne!(generate_cases(&spec).unwrap().cases, generate_cases(&other).unwrap().cases);
    }

    #[test]
    fn zero_hazard_means_no_responders() {
        let spec = ScenarioSpec {
            truth: Coefficients::intercept_only(-800.0),
            ..ScenarioSpec::default()
        };
        let data = generate_cases(&spec).unwrap();
        assert!(data.cases.iter().all(|c| c.response_date.is_none()));
    }

    #[test]
    fn generated_events_are_conserved() {
        let data = generate_cases(&ScenarioSpec::default()).unwrap();
        let responders = data.cases.iter().filter(|c| c.response_date.is_some()).count() as u64;
        let pp = expand_person_period(&data.cases, ExpandOptions::default()).unwrap();
        let pl = collapse_period_level(&pp);
        assert_eq!(pl.rows.iter().map(|r| r.events).sum::<u64>(), responders);
        assert_eq!(pl.rows.iter().map(|r| r.at_risk).sum::<u64>(), pp.len() as u64);
    }

    #[test]
    fn config_round_trip() {
        let cfg = KeyValueConfig::parse(
            "cohorts = 2\ncohort_size = 10\nphase_lengths = 21\ncontinuous = 2\nintercept = -3\ncoef = x01 0.2\ncoef = days:x02 0.01\n",
            "scenario",
        )
        .unwrap();
        let spec = ScenarioSpec::from_config(&cfg).unwrap();
        assert_eq!(spec.phase_lengths, vec![21]);
        assert_eq!(spec.truth.get("days:x02"), 0.01);
        assert_eq!(spec.truth.terms.len(), 2);
        let bad = KeyValueConfig::parse("coef = x09 1.0\n", "scenario").unwrap();
        assert!(ScenarioSpec::from_config(&bad).is_err());
    }

    #[test]
    fn covariates_are_roughly_standard() {
        let spec = ScenarioSpec {
            cohorts: 30,
            continuous: 2,
            ar_phi: 0.5,
            ..ScenarioSpec::default()
        };
        let data = generate_cases(&spec).unwrap();
        let xs: Vec<f64> = data.covariates.rows.values().map(|r| r[0].unwrap()).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.2, "{mean}");
        assert!((var - 1.0).abs() < 0.2, "{var}");
    }

    #[test]
    fn oracle_guard() {
        let keys: Vec<RowKey> = (0..51)
            .map(|i| RowKey {
                cohort_id: "a".into(),
                date: NaiveDate::from_ymd_opt(2016, 1, 1).unwrap() + Days::new(i),
                phase: Phase::Invitation,
                days: 1,
            })
            .collect();
        let d = DesignTable::new(vec![], vec![], vec![0.0; 51], vec![1.0; 51], keys).unwrap();
        assert!(oracle_penalized_fit(&d, PenaltyKind::Lasso, 0.1, &[]).is_err());
    }
}
