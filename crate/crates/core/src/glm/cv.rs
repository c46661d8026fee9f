//! K-fold cross-validation of the penalty strength.

use super::solver::{fit_penalized, lambda_grid, lambda_max, PenaltyKind, SolverOptions};
use crate::design::{linear_predictors_aligned, DesignTable};
use crate::error::{Error, Result};
use crate::survival::hazard_from_eta;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvConfig {
    pub k_folds: usize,
    pub seed: u64,
    pub lambda_count: usize,
    pub lambda_min_ratio: f64,
    pub solver: SolverOptions,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            k_folds: 10,
            seed: 0,
            lambda_count: 100,
            lambda_min_ratio: 1e-4,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    /// Strictly decreasing penalty strengths.
    pub lambdas: Vec<f64>,
    pub mean_deviance: Vec<f64>,
    /// `fold_deviance[l][f]`: held-out deviance of fold `f` at `lambdas[l]`.
    pub fold_deviance: Vec<Vec<f64>>,
    pub chosen_index: usize,
    pub seed: u64,
}

impl CvResult {
    pub fn chosen_lambda(&self) -> f64 {
        self.lambdas[self.chosen_index]
    }

    pub fn k_folds(&self) -> usize {
        self.fold_deviance.first().map_or(0, Vec::len)
    }
}

/// Random near-equal partition of `n` rows into `k` folds.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!("{k} folds requested for {n} rows")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        fold[row] = pos % k;
    }
    Ok(fold)
}

/// Binomial deviance per at-risk unit of `design` under linear predictors `eta`.
pub fn mean_binomial_deviance(design: &DesignTable, eta: &[f64]) -> f64 {
    let mut dev = 0.0;
    for (&e, (&y, &m)) in eta.iter().zip(design.events().iter().zip(design.at_risk())) {
        let mu = m * hazard_from_eta(e).clamp(crate::survival::LOG_EPSILON, 1.0 - crate::survival::LOG_EPSILON);
        if y > 0.0 {
            dev += y * (y / mu).ln();
        }
        if m - y > 0.0 {
            dev += (m - y) * ((m - y) / (m - mu)).ln();
        }
    }
    2.0 * dev / design.total_at_risk()
}

/// Index of the smallest mean deviance; the first (largest lambda) wins ties.
pub fn argmin_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Cross-validates a penalty over a lambda grid derived from the full
/// design. Folds are fitted in parallel and reduced in fold order.
pub fn cross_validate(design: &DesignTable, kind: PenaltyKind, weights: &[f64], config: &CvConfig) -> Result<CvResult> {
    let folds = fold_assignment(design.n_rows(), config.k_folds, config.seed)?;
    let lmax = lambda_max(design, kind, weights)?;
    let lambdas = lambda_grid(lmax, config.lambda_count, config.lambda_min_ratio)?;

    let per_fold: Vec<Vec<f64>> = (0..config.k_folds)
        .into_par_iter()
        .map(|f| -> Result<Vec<f64>> {
            let train: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] != f).collect();
            let test: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] == f).collect();
            let train_design = design.subset(&train);
            let test_design = design.subset(&test);
            let path = fit_penalized(&train_design, kind, weights, &lambdas, config.solver)?;
            Ok(path
                .points
                .iter()
                .map(|p| {
                    let eta = linear_predictors_aligned(p.intercept, &p.beta, &test_design);
                    mean_binomial_deviance(&test_design, &eta)
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let fold_deviance: Vec<Vec<f64>> = (0..lambdas.len())
        .map(|l| per_fold.iter().map(|f| f[l]).collect())
        .collect();
    let mean_deviance: Vec<f64> = fold_deviance
        .iter()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        .collect();
    let chosen_index = argmin_first(&mean_deviance);
    Ok(CvResult {
        lambdas,
        mean_deviance,
        fold_deviance,
        chosen_index,
        seed: config.seed,
    })
}
