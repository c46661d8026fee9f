//! Named predictor matrices with binomial outcomes.

use crate::error::{Error, Result};
use crate::survival::Phase;
use chrono::NaiveDate;
use indexmap::IndexMap;
use std::collections::HashSet;

/// Identifies the fieldwork position a design row describes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RowKey {
    pub cohort_id: String,
    pub date: NaiveDate,
    pub phase: Phase,
    pub days: u32,
}

/// Column-major design: one column per named predictor, plus event and
/// at-risk counts per row. A person-period design has `at_risk == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignTable {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    events: Vec<f64>,
    at_risk: Vec<f64>,
    keys: Vec<RowKey>,
}

/// Borrowed view of a single design row.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignRow<'a> {
    pub events: f64,
    pub at_risk: f64,
    pub names: &'a [String],
    pub values: Vec<f64>,
}

impl DesignRow<'_> {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }
}

impl DesignTable {
    pub fn new(
        names: Vec<String>,
        columns: Vec<Vec<f64>>,
        events: Vec<f64>,
        at_risk: Vec<f64>,
        keys: Vec<RowKey>,
    ) -> Result<Self> {
        let n = events.len();
        if names.len() != columns.len() {
            return Err(Error::Dimension(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        if at_risk.len() != n || keys.len() != n {
            return Err(Error::Dimension("outcome and key vectors differ in length".into()));
        }
        let mut seen = HashSet::new();
        for (name, col) in names.iter().zip(&columns) {
            if !seen.insert(name.as_str()) {
                return Err(Error::DuplicatePredictor(name.clone()));
            }
            if col.len() != n {
                return Err(Error::Dimension(format!("column `{name}` has {} rows, expected {n}", col.len())));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("column `{name}` has non-finite values")));
            }
        }
        for (&y, &m) in events.iter().zip(&at_risk) {
            if !(m > 0.0 && y >= 0.0 && y <= m) {
                return Err(Error::InvalidArgument(format!(
                    "row with {y} events out of {m} at risk"
                )));
            }
        }
        Ok(Self {
            names,
            columns,
            events,
            at_risk,
            keys,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.events.len()
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn events(&self) -> &[f64] {
        &self.events
    }

    pub fn at_risk(&self) -> &[f64] {
        &self.at_risk
    }

    pub fn keys(&self) -> &[RowKey] {
        &self.keys
    }

    pub fn total_at_risk(&self) -> f64 {
        self.at_risk.iter().sum()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.column_index(name).map(|i| self.columns[i].as_slice())
    }

    pub fn row(&self, i: usize) -> DesignRow<'_> {
        DesignRow {
            events: self.events[i],
            at_risk: self.at_risk[i],
            names: &self.names,
            values: self.columns.iter().map(|c| c[i]).collect(),
        }
    }

    pub fn observed_hazards(&self) -> Vec<f64> {
        self.events.iter().zip(&self.at_risk).map(|(y, n)| y / n).collect()
    }

    /// Rows selected by index, in the given order.
    pub fn subset(&self, rows: &[usize]) -> DesignTable {
        DesignTable {
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&i| c[i]).collect())
                .collect(),
            events: rows.iter().map(|&i| self.events[i]).collect(),
            at_risk: rows.iter().map(|&i| self.at_risk[i]).collect(),
            keys: rows.iter().map(|&i| self.keys[i].clone()).collect(),
        }
    }

    /// Keeps only the named columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<DesignTable> {
        let mut columns = Vec::with_capacity(names.len());
        for name in names {
            let idx = self
                .column_index(name)
                .ok_or_else(|| Error::UnknownPredictor(name.clone()))?;
            columns.push(self.columns[idx].clone());
        }
        DesignTable::new(
            names.to_vec(),
            columns,
            self.events.clone(),
            self.at_risk.clone(),
            self.keys.clone(),
        )
    }

    pub fn push_column(&mut self, name: String, values: Vec<f64>) -> Result<()> {
        if self.column_index(&name).is_some() {
            return Err(Error::DuplicatePredictor(name));
        }
        if values.len() != self.n_rows() {
            return Err(Error::Dimension(format!("column `{name}` has wrong length")));
        }
        self.names.push(name);
        self.columns.push(values);
        Ok(())
    }

    /// Same outcomes and keys with replaced predictors.
    pub fn with_columns(&self, names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<DesignTable> {
        DesignTable::new(
            names,
            columns,
            self.events.clone(),
            self.at_risk.clone(),
            self.keys.clone(),
        )
    }

    pub fn column_mut(&mut self, idx: usize) -> &mut Vec<f64> {
        &mut self.columns[idx]
    }
}

/// Intercept plus named slopes. Names absent from the map have coefficient 0.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Coefficients {
    pub intercept: f64,
    pub terms: IndexMap<String, f64>,
}

impl Coefficients {
    pub fn new(intercept: f64, terms: impl IntoIterator<Item = (String, f64)>) -> Self {
        Self {
            intercept,
            terms: terms.into_iter().collect(),
        }
    }

    pub fn intercept_only(intercept: f64) -> Self {
        Self {
            intercept,
            terms: IndexMap::new(),
        }
    }

    pub fn get(&self, name: &str) -> f64 {
        self.terms.get(name).copied().unwrap_or(0.0)
    }

    /// Slopes aligned to the design's columns. Every coefficient name must
    /// name a column.
    pub fn resolve(&self, design: &DesignTable) -> Result<Vec<f64>> {
        let mut beta = vec![0.0; design.n_cols()];
        for (name, &value) in &self.terms {
            let idx = design
                .column_index(name)
                .ok_or_else(|| Error::UnknownPredictor(name.clone()))?;
            beta[idx] = value;
        }
        Ok(beta)
    }

    pub fn linear_predictors(&self, design: &DesignTable) -> Result<Vec<f64>> {
        let beta = self.resolve(design)?;
        Ok(linear_predictors_aligned(self.intercept, &beta, design))
    }

    pub fn nonzero(&self) -> impl Iterator<Item = (&str, f64)> {
        self.terms
            .iter()
            .filter(|(_, v)| **v != 0.0)
            .map(|(k, v)| (k.as_str(), *v))
    }
}

/// `intercept + X beta` for a beta aligned to the design columns.
pub fn linear_predictors_aligned(intercept: f64, beta: &[f64], design: &DesignTable) -> Vec<f64> {
    let mut eta = vec![intercept; design.n_rows()];
    for (col, &b) in design.columns().iter().zip(beta) {
        if b == 0.0 {
            continue;
        }
        for (e, &x) in eta.iter_mut().zip(col) {
            *e += b * x;
        }
    }
    eta
}

/// `eta = intercept + sum_j coef_j * x_j` for one row.
pub fn linear_predictor(coefs: &Coefficients, row: &DesignRow<'_>) -> Result<f64> {
    let mut eta = coefs.intercept;
    for (name, &value) in &coefs.terms {
        let x = row.get(name).ok_or_else(|| Error::UnknownPredictor(name.clone()))?;
        eta += value * x;
    }
    Ok(eta)
}
