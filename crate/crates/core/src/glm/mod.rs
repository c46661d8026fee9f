//! Penalized binomial fitting of the hazard model.
//!
//! The pipeline standardizes the design, optionally cross-validates a ridge
//! fit whose coefficients become adaptive-lasso weights, cross-validates the
//! (weighted) lasso, and keeps the full-data solution at the selected lambda.

pub mod cv;
pub mod model_file;
pub mod solver;
pub mod standardize;

pub use cv::{cross_validate, CvConfig, CvResult};
pub use solver::{
    fit_penalized, fit_unpenalized, kkt_residual, lambda_grid, lambda_max, penalized_objective, CoefficientPath,
    PathPoint, PenaltyKind, PenaltySpec, SolverOptions,
};
pub use standardize::{standardize, ColumnScale, ColumnSource, StandardizationParams};

use crate::design::{Coefficients, DesignTable};
use crate::error::Result;
use crate::survival::hazard_from_eta;
use indexmap::IndexMap;

/// Weight assigned to predictors whose ridge coefficient is zero.
pub const ADAPTIVE_WEIGHT_CAP: f64 = 1e8;

/// Adaptive-lasso weights `1 / |ridge coefficient|`, capped.
pub fn adaptive_weights(ridge_beta: &[f64]) -> Vec<f64> {
    ridge_beta
        .iter()
        .map(|b| {
            let w = 1.0 / b.abs();
            if w.is_finite() {
                w.min(ADAPTIVE_WEIGHT_CAP)
            } else {
                ADAPTIVE_WEIGHT_CAP
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub penalty: PenaltyKind,
    pub cv: CvConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            penalty: PenaltyKind::Adaptive,
            cv: CvConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub standardization: StandardizationParams,
    pub penalty: PenaltySpec,
    /// Coefficients on the standardized scale, one entry per retained column
    /// (zeros included).
    pub coefficients: Coefficients,
    /// Cross-validation of the final penalty.
    pub cv: Option<CvResult>,
    /// Ridge cross-validation that produced the adaptive weights.
    pub ridge_cv: Option<CvResult>,
    pub training_cohorts: Vec<String>,
    pub seed: u64,
}

impl FittedModel {
    /// Linear predictors for raw (unstandardized) rows.
    pub fn linear_predictors(&self, raw: &DesignTable) -> Result<Vec<f64>> {
        let design = self.standardization.apply(raw)?;
        self.coefficients.linear_predictors(&design)
    }

    pub fn predictor_names(&self) -> impl Iterator<Item = &str> {
        self.coefficients.terms.keys().map(String::as_str)
    }
}

/// Per-row hazards for raw rows, standardized with the model's training
/// statistics.
pub fn predict_hazards(model: &FittedModel, raw: &DesignTable) -> Result<Vec<f64>> {
    Ok(model.linear_predictors(raw)?.into_iter().map(hazard_from_eta).collect())
}

fn path_point_at(design: &DesignTable, kind: PenaltyKind, weights: &[f64], cv: &CvResult, cfg: &CvConfig) -> Result<PathPoint> {
    let path = fit_penalized(design, kind, weights, &cv.lambdas[..=cv.chosen_index], cfg.solver)?;
    Ok(path.points.into_iter().last().expect("non-empty path"))
}

/// Fits a standardized design with the configured penalty.
pub fn fit_standardized(design: &DesignTable, params: StandardizationParams, config: &FitConfig) -> Result<FittedModel> {
    let p = design.n_cols();
    let ones = vec![1.0; p];
    let (point, weights, cv, ridge_cv) = match config.penalty {
        PenaltyKind::None => (fit_unpenalized(design, config.cv.solver)?, ones, None, None),
        PenaltyKind::Ridge | PenaltyKind::Lasso => {
            let cv = cross_validate(design, config.penalty, &ones, &config.cv)?;
            let point = path_point_at(design, config.penalty, &ones, &cv, &config.cv)?;
            (point, ones, Some(cv), None)
        }
        PenaltyKind::Adaptive => {
            let ridge_cv = cross_validate(design, PenaltyKind::Ridge, &ones, &config.cv)?;
            let ridge = path_point_at(design, PenaltyKind::Ridge, &ones, &ridge_cv, &config.cv)?;
            let weights = adaptive_weights(&ridge.beta);
            let cv = cross_validate(design, PenaltyKind::Adaptive, &weights, &config.cv)?;
            let point = path_point_at(design, PenaltyKind::Adaptive, &weights, &cv, &config.cv)?;
            (point, weights, Some(cv), Some(ridge_cv))
        }
    };
    Ok(FittedModel {
        standardization: params,
        penalty: PenaltySpec {
            kind: config.penalty,
            lambda: point.lambda,
            weights,
        },
        coefficients: point.coefficients(design.names()),
        cv,
        ridge_cv,
        training_cohorts: distinct_cohorts(design),
        seed: config.cv.seed,
    })
}

/// Standardizes a raw design and fits it.
pub fn fit_model(raw: &DesignTable, config: &FitConfig) -> Result<FittedModel> {
    let (design, params) = standardize(raw)?;
    fit_standardized(&design, params, config)
}

/// Ridge CV, adaptive weights, weighted-lasso CV and a final full-data fit
/// at the selected lambda.
pub fn fit_adaptive_lasso(raw: &DesignTable, cv: CvConfig) -> Result<FittedModel> {
    fit_model(
        raw,
        &FitConfig {
            penalty: PenaltyKind::Adaptive,
            cv,
        },
    )
}

fn distinct_cohorts(design: &DesignTable) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for key in design.keys() {
        if !out.iter().any(|c| c == &key.cohort_id) {
            out.push(key.cohort_id.clone());
        }
    }
    out
}

/// Exponentiated standardized estimates: the multiplicative change in the
/// conditional odds of responding per one-SD increase of a predictor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExpStdEstimates {
    pub retained: IndexMap<String, f64>,
    pub zero: Vec<String>,
}

pub fn report_exp_std_estimates(model: &FittedModel) -> ExpStdEstimates {
    let mut out = ExpStdEstimates::default();
    for (name, &value) in &model.coefficients.terms {
        if value == 0.0 {
            out.zero.push(name.clone());
        } else {
            out.retained.insert(name.clone(), value.exp());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_are_reciprocal_and_capped() {
        assert_eq!(adaptive_weights(&[0.5, -0.25]), vec![2.0, 4.0]);
        assert_eq!(adaptive_weights(&[0.0]), vec![ADAPTIVE_WEIGHT_CAP]);
        assert_eq!(adaptive_weights(&[1e-12]), vec![ADAPTIVE_WEIGHT_CAP]);
    }

    #[test]
    fn exp_estimates() {
        let model = FittedModel {
            standardization: StandardizationParams::default(),
            penalty: PenaltySpec {
                kind: PenaltyKind::Lasso,
                lambda: 0.1,
                weights: vec![1.0, 1.0],
            },
            coefficients: Coefficients::new(0.0, [("a".to_string(), 0.0), ("b".to_string(), 2f64.ln())]),
            cv: None,
            ridge_cv: None,
            training_cohorts: vec![],
            seed: 0,
        };
        let rep = report_exp_std_estimates(&model);
        assert_eq!(rep.zero, vec!["a".to_string()]);
        assert!((rep.retained["b"] - 2.0).abs() < 1e-15);
        assert_eq!(0f64.exp(), 1.0);
    }
}
