//! At-risk weighted standardization.
//!
//! Period-level rows stand for `at_risk` person-period rows each, so means and
//! standard deviations are weighted by `at_risk`; the statistics then equal
//! the unweighted ones of the person-period expansion.

use crate::design::{Coefficients, DesignTable};
use crate::error::{Error, Result};
use indexmap::IndexMap;

/// Columns whose weighted standard deviation falls below this (relative to
/// `1 + |mean|`) are treated as constant and dropped.
pub const CONSTANT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnSource {
    /// Taken by name from the raw input design.
    Raw,
    /// Product of two earlier standardized columns.
    Product(String, String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnScale {
    pub name: String,
    pub source: ColumnSource,
    pub mean: f64,
    pub sd: f64,
}

/// Training-time column statistics, reapplied unchanged at prediction time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StandardizationParams {
    pub columns: Vec<ColumnScale>,
    /// Constant columns removed during standardization.
    pub dropped: Vec<String>,
}

/// Weighted mean and population standard deviation.
pub fn weighted_moments(values: &[f64], weights: &[f64]) -> (f64, f64) {
    let total: f64 = weights.iter().sum();
    let mean = values.iter().zip(weights).map(|(x, w)| x * w).sum::<f64>() / total;
    let var = values
        .iter()
        .zip(weights)
        .map(|(x, w)| w * (x - mean) * (x - mean))
        .sum::<f64>()
        / total;
    (mean, var.max(0.0).sqrt())
}

fn is_constant(mean: f64, sd: f64) -> bool {
    !(sd > CONSTANT_TOLERANCE * (1.0 + mean.abs()))
}

/// Centers and scales every column; constant columns are dropped and
/// recorded in the returned parameters.
pub fn standardize(design: &DesignTable) -> Result<(DesignTable, StandardizationParams)> {
    if design.n_rows() == 0 {
        return Err(Error::Empty("design has no rows"));
    }
    let mut params = StandardizationParams::default();
    let mut names = Vec::new();
    let mut columns = Vec::new();
    for (name, col) in design.names().iter().zip(design.columns()) {
        let (mean, sd) = weighted_moments(col, design.at_risk());
        if is_constant(mean, sd) {
            params.dropped.push(name.clone());
            continue;
        }
        names.push(name.clone());
        columns.push(col.iter().map(|x| (x - mean) / sd).collect());
        params.columns.push(ColumnScale {
            name: name.clone(),
            source: ColumnSource::Raw,
            mean,
            sd,
        });
    }
    Ok((design.with_columns(names, columns)?, params))
}

impl StandardizationParams {
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    /// Raw input columns the parameters need.
    pub fn raw_inputs(&self) -> impl Iterator<Item = &str> {
        self.columns
            .iter()
            .filter(|c| c.source == ColumnSource::Raw)
            .map(|c| c.name.as_str())
    }

    /// Rebuilds the standardized design from raw data with the stored
    /// statistics.
    pub fn apply(&self, raw: &DesignTable) -> Result<DesignTable> {
        let mut built: IndexMap<&str, Vec<f64>> = IndexMap::with_capacity(self.columns.len());
        for scale in &self.columns {
            let values: Vec<f64> = match &scale.source {
                ColumnSource::Raw => raw
                    .column(&scale.name)
                    .ok_or_else(|| Error::UnknownPredictor(scale.name.clone()))?
                    .iter()
                    .map(|x| (x - scale.mean) / scale.sd)
                    .collect(),
                ColumnSource::Product(a, b) => {
                    let lhs = built.get(a.as_str()).ok_or_else(|| Error::UnknownPredictor(a.clone()))?;
                    let rhs = built.get(b.as_str()).ok_or_else(|| Error::UnknownPredictor(b.clone()))?;
                    lhs.iter()
                        .zip(rhs)
                        .map(|(x, y)| (x * y - scale.mean) / scale.sd)
                        .collect()
                }
            };
            built.insert(scale.name.as_str(), values);
        }
        let names = built.keys().map(|k| k.to_string()).collect();
        raw.with_columns(names, built.into_values().collect())
    }

    /// Appends a product column computed from two standardized columns of
    /// `design`. Returns false (and records the drop) when the product is
    /// constant.
    pub fn push_product(&mut self, design: &mut DesignTable, a: &str, b: &str) -> Result<bool> {
        let name = format!("{a}:{b}");
        let lhs = design.column(a).ok_or_else(|| Error::UnknownPredictor(a.to_string()))?;
        let rhs = design.column(b).ok_or_else(|| Error::UnknownPredictor(b.to_string()))?;
        let product: Vec<f64> = lhs.iter().zip(rhs).map(|(x, y)| x * y).collect();
        let (mean, sd) = weighted_moments(&product, design.at_risk());
        if is_constant(mean, sd) {
            self.dropped.push(name);
            return Ok(false);
        }
        let values = product.iter().map(|x| (x - mean) / sd).collect();
        design.push_column(name.clone(), values)?;
        self.columns.push(ColumnScale {
            name,
            source: ColumnSource::Product(a.to_string(), b.to_string()),
            mean,
            sd,
        });
        Ok(true)
    }

    /// Converts standardized-scale coefficients of raw columns to the raw
    /// predictor scale. Product columns have no single raw counterpart and
    /// are rejected.
    pub fn to_original_scale(&self, coefs: &Coefficients) -> Result<Coefficients> {
        let mut intercept = coefs.intercept;
        let mut terms = IndexMap::new();
        for (name, &value) in &coefs.terms {
            let scale = self
                .columns
                .iter()
                .find(|c| &c.name == name)
                .ok_or_else(|| Error::UnknownPredictor(name.clone()))?;
            if scale.source != ColumnSource::Raw {
                return Err(Error::InvalidArgument(format!(
                    "`{name}` is a product column without a raw-scale coefficient"
                )));
            }
            intercept -= value * scale.mean / scale.sd;
            terms.insert(name.clone(), value / scale.sd);
        }
        Ok(Coefficients { intercept, terms })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::RowKey;
    use crate::survival::Phase;
    use chrono::NaiveDate;

    fn design(cols: Vec<(&str, Vec<f64>)>, at_risk: Vec<f64>) -> DesignTable {
        let n = at_risk.len();
        let key = RowKey {
            cohort_id: "c".into(),
            date: NaiveDate::from_ymd_opt(2016, 1, 1).unwrap(),
            phase: Phase::Invitation,
            days: 1,
        };
        DesignTable::new(
            cols.iter().map(|c| c.0.to_string()).collect(),
            cols.into_iter().map(|c| c.1).collect(),
            vec![0.0; n],
            at_risk,
            vec![key; n],
        )
        .unwrap()
    }

    #[test]
    fn constant_column_dropped_and_recorded() {
        let d = design(vec![("a", vec![1.0, 2.0, 3.0]), ("k", vec![5.0; 3])], vec![1.0; 3]);
        let (std, params) = standardize(&d).unwrap();
        assert_eq!(std.names(), &["a".to_string()]);
        assert_eq!(params.dropped, vec!["k".to_string()]);
    }

    #[test]
    fn weighted_moments_match_expansion() {
        let d = design(vec![("x", vec![1.0, 4.0])], vec![3.0, 1.0]);
        let (std, params) = standardize(&d).unwrap();
        // Expansion: [1,1,1,4] -> mean 1.75, population sd sqrt(1.6875)
        assert!((params.columns[0].mean - 1.75).abs() < 1e-15);
        assert!((params.columns[0].sd - 1.6875f64.sqrt()).abs() < 1e-15);
        let (m, s) = weighted_moments(std.column("x").unwrap(), std.at_risk());
        assert!(m.abs() < 1e-15 && (s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stored_mean_maps_to_zero() {
        let params = StandardizationParams {
            columns: vec![ColumnScale {
                name: "days".into(),
                source: ColumnSource::Raw,
                mean: 7.33,
                sd: 5.34,
            }],
            dropped: vec![],
        };
        let d = design(vec![("days", vec![7.33, 12.67])], vec![1.0, 1.0]);
        let out = params.apply(&d).unwrap();
        assert_eq!(out.column("days").unwrap()[0], 0.0);
        assert!((out.column("days").unwrap()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn destandardized_coefficients_reproduce_eta() {
        let d = design(
            vec![("a", vec![1.0, 2.0, 7.0, -3.0]), ("b", vec![10.0, 0.5, 0.25, 4.0])],
            vec![1.0, 2.0, 3.0, 4.0],
        );
        let (std, params) = standardize(&d).unwrap();
        let coefs = Coefficients::new(-1.5, [("a".to_string(), 0.7), ("b".to_string(), -0.2)]);
        let raw = params.to_original_scale(&coefs).unwrap();
        let eta_std = coefs.linear_predictors(&std).unwrap();
        let eta_raw = raw.linear_predictors(&d).unwrap();
        for (x, y) in eta_std.iter().zip(&eta_raw) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn empty_design_rejected() {
        let d = design(vec![("a", vec![])], vec![]);
        assert!(standardize(&d).is_err());
    }
}
