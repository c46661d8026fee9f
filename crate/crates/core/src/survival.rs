//! Discrete-time survival representation of survey fieldwork.
//!
//! A sampled person is at risk of responding from the expected delivery of the
//! invitation letter until they respond or the web-mode window closes. Every
//! observed day becomes one person-period row; because contextual covariates
//! vary by calendar date only, person-period rows sharing a cohort, date and
//! baseline time position collapse into binomial period-level rows without
//! changing the likelihood.

use crate::design::{Coefficients, DesignTable, RowKey};
use crate::error::{Error, Result};
use chrono::NaiveDate;
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

/// Clamp applied to hazards before taking logs in the likelihood.
pub const LOG_EPSILON: f64 = 1e-12;

pub const DAYS: &str = "days";
pub const REMINDER1: &str = "reminder1";
pub const REMINDER2: &str = "reminder2";

/// Names of the baseline block in design order.
pub const BASELINE_PREDICTORS: [&str; 3] = [DAYS, REMINDER1, REMINDER2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Invitation,
    Reminder1,
    Reminder2,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Invitation, Phase::Reminder1, Phase::Reminder2];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Invitation => "Invitation",
            Phase::Reminder1 => "Reminder1",
            Phase::Reminder2 => "Reminder2",
        }
    }

    /// Dummy values `(reminder1, reminder2)`; Invitation is the reference level.
    pub fn dummies(self) -> (f64, f64) {
        match self {
            Phase::Invitation => (0.0, 0.0),
            Phase::Reminder1 => (1.0, 0.0),
            Phase::Reminder2 => (0.0, 1.0),
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "invitation" => Ok(Phase::Invitation),
            "reminder1" => Ok(Phase::Reminder1),
            "reminder2" => Ok(Phase::Reminder2),
            other => Err(Error::InvalidArgument(format!("unknown survey phase `{other}`"))),
        }
    }
}

/// One sampled person and their contact schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SurveyCase {
    pub case_id: String,
    pub cohort_id: String,
    pub invitation_date: NaiveDate,
    pub reminder1_date: Option<NaiveDate>,
    pub reminder2_date: Option<NaiveDate>,
    /// Last day of web-mode fieldwork, inclusive.
    pub end_date: NaiveDate,
    pub response_date: Option<NaiveDate>,
}

impl SurveyCase {
    fn invalid(&self, message: impl Into<String>) -> Error {
        Error::InvalidCase {
            case_id: self.case_id.clone(),
            message: message.into(),
        }
    }

    /// Checks the schedule ordering. Early responses are checked separately
    /// because they may be clamped.
    pub fn validate_schedule(&self) -> Result<()> {
        if self.reminder2_date.is_some() && self.reminder1_date.is_none() {
            return Err(self.invalid("second reminder without a first reminder"));
        }
        let mut prev = ("invitation_date", self.invitation_date);
        for (name, date) in [
            ("reminder1_date", self.reminder1_date),
            ("reminder2_date", self.reminder2_date),
            ("end_date", Some(self.end_date)),
        ] {
            if let Some(date) = date {
                if date < prev.1 {
                    return Err(self.invalid(format!("{name} {date} precedes {} {}", prev.0, prev.1)));
                }
                prev = (name, date);
            }
        }
        if let Some(resp) = self.response_date {
            if resp > self.end_date {
                return Err(self.invalid(format!("response_date {resp} after end_date {}", self.end_date)));
            }
        }
        Ok(())
    }

    /// Phase and within-phase day index for a date inside the fieldwork span.
    pub fn position(&self, date: NaiveDate) -> (Phase, u32) {
        let mut phase = Phase::Invitation;
        let mut letter = self.invitation_date;
        if let Some(r1) = self.reminder1_date.filter(|r| *r <= date) {
            phase = Phase::Reminder1;
            letter = r1;
        }
        if let Some(r2) = self.reminder2_date.filter(|r| *r <= date) {
            phase = Phase::Reminder2;
            letter = r2;
        }
        let s = (date - letter).num_days() + 1;
        (phase, s as u32)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PersonPeriodRow {
    pub case_id: String,
    pub cohort_id: String,
    pub date: NaiveDate,
    /// Day index within the current phase, starting at 1 on the letter's
    /// expected delivery date. The `days` predictor equals this value.
    pub s: u32,
    pub phase: Phase,
    pub event: bool,
}

impl PersonPeriodRow {
    pub fn days(&self) -> f64 {
        f64::from(self.s)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PersonPeriodTable {
    pub rows: Vec<PersonPeriodRow>,
}

impl PersonPeriodTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExpandOptions {
    /// Move responses dated before the invitation to the invitation date
    /// instead of rejecting the case.
    pub clamp_early_responses: bool,
}

/// Expands cases into one row per person per observed day.
pub fn expand_person_period(cases: &[SurveyCase], options: ExpandOptions) -> Result<PersonPeriodTable> {
    let mut seen = HashSet::with_capacity(cases.len());
    let mut rows = Vec::new();
    for case in cases {
        if !seen.insert(case.case_id.as_str()) {
            return Err(Error::DuplicateCase(case.case_id.clone()));
        }
        case.validate_schedule()?;
        let response = match case.response_date {
            Some(r) if r < case.invitation_date => {
                if options.clamp_early_responses {
                    Some(case.invitation_date)
                } else {
                    return Err(case.invalid(format!(
                        "response_date {r} precedes invitation_date {}",
                        case.invitation_date
                    )));
                }
            }
            other => other,
        };
        let last = response.unwrap_or(case.end_date);
        for date in case.invitation_date.iter_days().take_while(|d| *d <= last) {
            let (phase, s) = case.position(date);
            rows.push(PersonPeriodRow {
                case_id: case.case_id.clone(),
                cohort_id: case.cohort_id.clone(),
                date,
                s,
                phase,
                event: response == Some(date),
            });
        }
    }
    Ok(PersonPeriodTable { rows })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeriodLevelRow {
    pub cohort_id: String,
    pub date: NaiveDate,
    pub days: u32,
    pub phase: Phase,
    pub events: u64,
    pub at_risk: u64,
}

impl PeriodLevelRow {
    pub fn observed_hazard(&self) -> f64 {
        self.events as f64 / self.at_risk as f64
    }

    pub fn key(&self) -> RowKey {
        RowKey {
            cohort_id: self.cohort_id.clone(),
            date: self.date,
            phase: self.phase,
            days: self.days,
        }
    }
}

/// Binomial rows ordered by (cohort, date, phase, days).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PeriodLevelTable {
    pub rows: Vec<PeriodLevelRow>,
}

impl PeriodLevelTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Distinct cohort ids ordered by their first fieldwork date.
    pub fn cohorts_by_start(&self) -> Vec<String> {
        let mut first: BTreeMap<&str, NaiveDate> = BTreeMap::new();
        for row in &self.rows {
            let e = first.entry(row.cohort_id.as_str()).or_insert(row.date);
            if row.date < *e {
                *e = row.date;
            }
        }
        let mut cohorts: Vec<(&str, NaiveDate)> = first.into_iter().collect();
        cohorts.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(b.0)));
        cohorts.into_iter().map(|(c, _)| c.to_string()).collect()
    }

    pub fn filter_cohorts(&self, cohorts: &[String]) -> PeriodLevelTable {
        let keep: HashSet<&str> = cohorts.iter().map(String::as_str).collect();
        PeriodLevelTable {
            rows: self
                .rows
                .iter()
                .filter(|r| keep.contains(r.cohort_id.as_str()))
                .cloned()
                .collect(),
        }
    }

    /// Number of persons entering each cohort: the at-risk count on the
    /// first invitation day, falling back to the earliest date when a cohort
    /// has no such row.
    pub fn cohort_sizes(&self) -> BTreeMap<String, u64> {
        let mut entrants: BTreeMap<String, u64> = BTreeMap::new();
        let mut earliest: BTreeMap<&str, (NaiveDate, u64)> = BTreeMap::new();
        for row in &self.rows {
            if row.phase == Phase::Invitation && row.days == 1 {
                *entrants.entry(row.cohort_id.clone()).or_default() += row.at_risk;
            }
            let e = earliest.entry(row.cohort_id.as_str()).or_insert((row.date, 0));
            if row.date < e.0 {
                *e = (row.date, row.at_risk);
            } else if row.date == e.0 {
                e.1 += row.at_risk;
            }
        }
        for (cohort, (_, n)) in earliest {
            entrants.entry(cohort.to_string()).or_insert(n);
        }
        entrants
    }
}

/// Groups person-period rows by (cohort, date, days, phase) into event and
/// at-risk counts.
pub fn collapse_period_level(pp: &PersonPeriodTable) -> PeriodLevelTable {
    let mut groups: BTreeMap<(&str, NaiveDate, Phase, u32), (u64, u64)> = BTreeMap::new();
    for row in &pp.rows {
        let g = groups
            .entry((row.cohort_id.as_str(), row.date, row.phase, row.s))
            .or_default();
        g.0 += u64::from(row.event);
        g.1 += 1;
    }
    PeriodLevelTable {
        rows: groups
            .into_iter()
            .map(|((cohort, date, phase, days), (events, at_risk))| PeriodLevelRow {
                cohort_id: cohort.to_string(),
                date,
                days,
                phase,
                events,
                at_risk,
            })
            .collect(),
    }
}

/// Logistic response function, evaluated without overflow for any finite input.
pub fn hazard_from_eta(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Binomial negative log-likelihood contribution of one row.
pub fn row_nll(events: f64, at_risk: f64, hazard: f64) -> f64 {
    let h = hazard.clamp(LOG_EPSILON, 1.0 - LOG_EPSILON);
    let mut nll = 0.0;
    if events > 0.0 {
        nll -= events * h.ln();
    }
    if at_risk - events > 0.0 {
        nll -= (at_risk - events) * (1.0 - h).ln();
    }
    nll
}

/// Negative log-likelihood of a design under the logistic hazard model.
///
/// Person-period designs (`at_risk == 1`, events in {0,1}) and collapsed
/// period-level designs give identical values for the same coefficients.
pub fn negative_log_likelihood(coefs: &Coefficients, design: &DesignTable) -> Result<f64> {
    let eta = coefs.linear_predictors(design)?;
    Ok(eta
        .iter()
        .zip(design.events().iter().zip(design.at_risk()))
        .map(|(&e, (&y, &n))| row_nll(y, n, hazard_from_eta(e)))
        .sum())
}

/// Design holding only the baseline block for period-level rows.
pub fn period_design(table: &PeriodLevelTable) -> DesignTable {
    let n = table.rows.len();
    let mut days = Vec::with_capacity(n);
    let mut r1 = Vec::with_capacity(n);
    let mut r2 = Vec::with_capacity(n);
    let mut events = Vec::with_capacity(n);
    let mut at_risk = Vec::with_capacity(n);
    let mut keys = Vec::with_capacity(n);
    for row in &table.rows {
        let (d1, d2) = row.phase.dummies();
        days.push(f64::from(row.days));
        r1.push(d1);
        r2.push(d2);
        events.push(row.events as f64);
        at_risk.push(row.at_risk as f64);
        keys.push(row.key());
    }
    DesignTable::new(
        BASELINE_PREDICTORS.iter().map(|s| s.to_string()).collect(),
        vec![days, r1, r2],
        events,
        at_risk,
        keys,
    )
    .expect("baseline design is well formed")
}

/// Design holding only the baseline block for person-period rows, with unit
/// trials and binary outcomes.
pub fn person_period_design(table: &PersonPeriodTable) -> DesignTable {
    let n = table.rows.len();
    let mut days = Vec::with_capacity(n);
    let mut r1 = Vec::with_capacity(n);
    let mut r2 = Vec::with_capacity(n);
    let mut events = Vec::with_capacity(n);
    let mut keys = Vec::with_capacity(n);
    for row in &table.rows {
        let (d1, d2) = row.phase.dummies();
        days.push(row.days());
        r1.push(d1);
        r2.push(d2);
        events.push(if row.event { 1.0 } else { 0.0 });
        keys.push(RowKey {
            cohort_id: row.cohort_id.clone(),
            date: row.date,
            phase: row.phase,
            days: row.s,
        });
    }
    DesignTable::new(
        BASELINE_PREDICTORS.iter().map(|s| s.to_string()).collect(),
        vec![days, r1, r2],
        events,
        vec![1.0; n],
        keys,
    )
    .expect("baseline design is well formed")
}
