//! Penalized binomial regression by IRLS with cyclic coordinate descent.
//!
//! The objective for penalty strength `lambda` is
//!
//! ```text
//! F(b0, b) = NLL(b0, b) / N + lambda * P(b)
//! ```
//!
//! where `N` is the total at-risk count and `P` is `sum_j w_j |b_j|` for the
//! L1 penalties or `sum_j b_j^2` for ridge. The intercept is never penalized.
//! Each outer iteration builds the quadratic approximation of the binomial
//! deviance at the current iterate, minimizes it (plus penalty) by coordinate
//! descent with an active set, and backtracks if the step fails to decrease
//! `F`. Solutions along a descending lambda path are warm-started.

use crate::design::{Coefficients, DesignTable};
use crate::error::{Error, Result};
use crate::survival::{hazard_from_eta, row_nll};
use std::fmt;
use std::str::FromStr;

/// Ridge lambda_max is this multiple of the largest null-model score, which
/// leaves every ridge coefficient below roughly `1e-3` at the top of the path.
const RIDGE_LAMBDA_MAX_FACTOR: f64 = 500.0;

/// Floor on `p (1 - p)` in the working weights.
const MIN_VARIANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PenaltyKind {
    None,
    Ridge,
    Lasso,
    Adaptive,
}

impl PenaltyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PenaltyKind::None => "none",
            PenaltyKind::Ridge => "ridge",
            PenaltyKind::Lasso => "lasso",
            PenaltyKind::Adaptive => "adaptive",
        }
    }

    fn is_l1(self) -> bool {
        matches!(self, PenaltyKind::Lasso | PenaltyKind::Adaptive)
    }
}

impl fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PenaltyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PenaltyKind::None),
            "ridge" => Ok(PenaltyKind::Ridge),
            "lasso" => Ok(PenaltyKind::Lasso),
            "adaptive" => Ok(PenaltyKind::Adaptive),
            other => Err(Error::InvalidArgument(format!("unknown penalty `{other}`"))),
        }
    }
}

/// A fully resolved penalty: kind, strength and per-predictor weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub lambda: f64,
    /// One weight per design column; all ones except for the adaptive lasso.
    pub weights: Vec<f64>,
}

impl PenaltySpec {
    pub fn value(&self, beta: &[f64]) -> f64 {
        penalty_value(self.kind, self.lambda, &self.weights, beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_outer: usize,
    pub max_sweeps: usize,
    /// Outer iterations stop once the exact KKT residual drops below this.
    pub target_residual: f64,
    /// A solution whose KKT residual exceeds this is reported as non-converged.
    pub kkt_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_outer: 200,
            max_sweeps: 200_000,
            target_residual: 1e-10,
            kkt_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathPoint {
    pub lambda: f64,
    pub intercept: f64,
    pub beta: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl PathPoint {
    pub fn coefficients(&self, names: &[String]) -> Coefficients {
        Coefficients::new(self.intercept, names.iter().cloned().zip(self.beta.iter().copied()))
    }

    pub fn support_size(&self) -> usize {
        self.beta.iter().filter(|b| **b != 0.0).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientPath {
    pub names: Vec<String>,
    pub kind: PenaltyKind,
    pub weights: Vec<f64>,
    pub points: Vec<PathPoint>,
}

pub fn penalty_value(kind: PenaltyKind, lambda: f64, weights: &[f64], beta: &[f64]) -> f64 {
    match kind {
        PenaltyKind::None => 0.0,
        PenaltyKind::Ridge => lambda * beta.iter().map(|b| b * b).sum::<f64>(),
        PenaltyKind::Lasso | PenaltyKind::Adaptive => {
            lambda * beta.iter().zip(weights).map(|(b, w)| w * b.abs()).sum::<f64>()
        }
    }
}

fn eta_of(design: &DesignTable, intercept: f64, beta: &[f64]) -> Vec<f64> {
    crate::design::linear_predictors_aligned(intercept, beta, design)
}

fn mean_nll(design: &DesignTable, eta: &[f64]) -> f64 {
    let total = design.total_at_risk();
    eta.iter()
        .zip(design.events().iter().zip(design.at_risk()))
        .map(|(&e, (&y, &m))| row_nll(y, m, hazard_from_eta(e)))
        .sum::<f64>()
        / total
}

/// `NLL / N + lambda * P(beta)`.
pub fn penalized_objective(
    design: &DesignTable,
    kind: PenaltyKind,
    lambda: f64,
    weights: &[f64],
    intercept: f64,
    beta: &[f64],
) -> f64 {
    mean_nll(design, &eta_of(design, intercept, beta)) + penalty_value(kind, lambda, weights, beta)
}

/// Gradient of `NLL / N` with respect to the intercept and each slope.
pub fn gradient(design: &DesignTable, intercept: f64, beta: &[f64]) -> (f64, Vec<f64>) {
    let eta = eta_of(design, intercept, beta);
    score_from_eta(design, &eta)
}

fn score_from_eta(design: &DesignTable, eta: &[f64]) -> (f64, Vec<f64>) {
    let total = design.total_at_risk();
    let resid: Vec<f64> = eta
        .iter()
        .zip(design.events().iter().zip(design.at_risk()))
        .map(|(&e, (&y, &m))| (m * hazard_from_eta(e) - y) / total)
        .collect();
    let g0 = resid.iter().sum();
    let g = design
        .columns()
        .iter()
        .map(|col| col.iter().zip(&resid).map(|(x, r)| x * r).sum())
        .collect();
    (g0, g)
}

/// Largest violation of the optimality conditions at `(intercept, beta)`.
pub fn kkt_residual(
    design: &DesignTable,
    kind: PenaltyKind,
    lambda: f64,
    weights: &[f64],
    intercept: f64,
    beta: &[f64],
) -> f64 {
    let (g0, g) = gradient(design, intercept, beta);
    kkt_from_gradient(kind, lambda, weights, beta, g0, &g)
}

fn kkt_from_gradient(kind: PenaltyKind, lambda: f64, weights: &[f64], beta: &[f64], g0: f64, g: &[f64]) -> f64 {
    let mut worst = g0.abs();
    for j in 0..beta.len() {
        let r = match kind {
            PenaltyKind::None => g[j].abs(),
            PenaltyKind::Ridge => (g[j] + 2.0 * lambda * beta[j]).abs(),
            PenaltyKind::Lasso | PenaltyKind::Adaptive => {
                let bound = lambda * weights[j];
                if beta[j] == 0.0 {
                    (g[j].abs() - bound).max(0.0)
                } else {
                    (g[j] + bound * beta[j].signum()).abs()
                }
            }
        };
        worst = worst.max(r);
    }
    worst
}

fn check_outcome_variation(design: &DesignTable) -> Result<()> {
    let events: f64 = design.events().iter().sum();
    let total = design.total_at_risk();
    if design.n_rows() == 0 {
        return Err(Error::Empty("design has no rows"));
    }
    if events <= 0.0 || events >= total {
        return Err(Error::InvalidArgument(format!(
            "outcome has no variation ({events} events out of {total} at risk); the intercept has no finite estimate"
        )));
    }
    Ok(())
}

fn check_weights(kind: PenaltyKind, weights: &[f64], p: usize) -> Result<()> {
    if weights.len() != p {
        return Err(Error::Dimension(format!("{} penalty weights for {p} predictors", weights.len())));
    }
    if kind.is_l1() && weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::InvalidArgument("penalty weights must be finite and positive".into()));
    }
    Ok(())
}

/// Intercept of the null model: `logit(total events / total at risk)`.
pub fn null_intercept(design: &DesignTable) -> f64 {
    let rate = design.events().iter().sum::<f64>() / design.total_at_risk();
    (rate / (1.0 - rate)).ln()
}

/// Smallest lambda at which every penalized coefficient is zero, from the
/// null-model score. For ridge the value is a scaled score at which all
/// coefficients are negligible.
pub fn lambda_max(design: &DesignTable, kind: PenaltyKind, weights: &[f64]) -> Result<f64> {
    check_outcome_variation(design)?;
    check_weights(kind, weights, design.n_cols())?;
    let beta = vec![0.0; design.n_cols()];
    let (_, g) = gradient(design, null_intercept(design), &beta);
    Ok(match kind {
        PenaltyKind::None => 0.0,
        PenaltyKind::Ridge => RIDGE_LAMBDA_MAX_FACTOR * g.iter().fold(0.0f64, |m, x| m.max(x.abs())),
        PenaltyKind::Lasso | PenaltyKind::Adaptive => g
            .iter()
            .zip(weights)
            .fold(0.0f64, |m, (x, w)| m.max(x.abs() / w)),
    })
}

/// `count` log-spaced values from `lambda_max` down to `lambda_max * min_ratio`.
/// Collapses to `[0]` when `lambda_max` is zero.
pub fn lambda_grid(lambda_max: f64, count: usize, min_ratio: f64) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::InvalidArgument("lambda count must be positive".into()));
    }
    if !(min_ratio > 0.0 && min_ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("lambda min ratio {min_ratio} outside (0, 1)")));
    }
    if !(lambda_max.is_finite() && lambda_max >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda_max {lambda_max} invalid")));
    }
    if lambda_max == 0.0 {
        return Ok(vec![0.0]);
    }
    if count == 1 {
        return Ok(vec![lambda_max]);
    }
    let step = min_ratio.ln() / (count - 1) as f64;
    Ok((0..count).map(|k| lambda_max * (step * k as f64).exp()).collect())
}

struct Solver<'a> {
    design: &'a DesignTable,
    kind: PenaltyKind,
    weights: &'a [f64],
    opts: SolverOptions,
}

fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

impl Solver<'_> {
    fn objective(&self, lambda: f64, intercept: f64, beta: &[f64]) -> f64 {
        penalized_objective(self.design, self.kind, lambda, self.weights, intercept, beta)
    }

    /// Coordinate descent on the weighted least-squares subproblem. `resid`
    /// holds working response minus current linear predictor and is kept in
    /// sync with the coefficients.
    #[allow(clippy::too_many_arguments)]
    fn coordinate_descent(
        &self,
        lambda: f64,
        w: &[f64],
        curvature: &[f64],
        resid: &mut [f64],
        intercept: &mut f64,
        beta: &mut [f64],
        sweeps: &mut usize,
    ) -> Result<()> {
        let cols = self.design.columns();
        let sum_w: f64 = w.iter().sum();
        let tol = self.opts.target_residual * 1e-2;
        let all: Vec<usize> = (0..beta.len()).collect();
        let sweep = |set: &[usize], intercept: &mut f64, beta: &mut [f64], resid: &mut [f64]| -> f64 {
            let mut max_change = 0.0f64;
            let shift = w.iter().zip(resid.iter()).map(|(a, b)| a * b).sum::<f64>() / sum_w;
            if shift != 0.0 {
                *intercept += shift;
                resid.iter_mut().for_each(|r| *r -= shift);
                max_change = max_change.max(sum_w * shift.abs());
            }
            for &j in set {
                let a = curvature[j];
                if a <= 0.0 {
                    continue;
                }
                let col = &cols[j];
                let g = col
                    .iter()
                    .zip(w.iter().zip(resid.iter()))
                    .map(|(x, (wi, ri))| x * wi * ri)
                    .sum::<f64>()
                    + a * beta[j];
                let updated = match self.kind {
                    PenaltyKind::None => g / a,
                    PenaltyKind::Ridge => g / (a + 2.0 * lambda),
                    PenaltyKind::Lasso | PenaltyKind::Adaptive => soft_threshold(g, lambda * self.weights[j]) / a,
                };
                let delta = updated - beta[j];
                if delta != 0.0 {
                    beta[j] = updated;
                    resid.iter_mut().zip(col).for_each(|(r, x)| *r -= delta * x);
                    max_change = max_change.max(a * delta.abs());
                }
            }
            max_change
        };

        loop {
            *sweeps += 1;
            if sweep(&all, intercept, beta, resid) < tol {
                return Ok(());
            }
            let active: Vec<usize> = (0..beta.len()).filter(|&j| beta[j] != 0.0).collect();
            loop {
                *sweeps += 1;
                if *sweeps > self.opts.max_sweeps {
                    return Err(Error::NonConvergence {
                        lambda,
                        iterations: *sweeps,
                        kkt_residual: f64::NAN,
                        last_iterate: std::iter::once(*intercept).chain(beta.iter().copied()).collect(),
                    });
                }
                if sweep(&active, intercept, beta, resid) < tol {
                    break;
                }
            }
        }
    }

    fn solve(&self, lambda: f64, intercept: f64, beta: Vec<f64>) -> Result<PathPoint> {
        let design = self.design;
        let total = design.total_at_risk();
        let mut b0 = intercept;
        let mut beta = beta;
        let mut obj = self.objective(lambda, b0, &beta);
        let mut sweeps = 0usize;
        let mut kkt = f64::INFINITY;

        for outer in 1..=self.opts.max_outer {
            let eta = eta_of(design, b0, &beta);
            let (g0, g) = score_from_eta(design, &eta);
            kkt = kkt_from_gradient(self.kind, lambda, self.weights, &beta, g0, &g);
            if kkt <= self.opts.target_residual {
                return Ok(PathPoint {
                    lambda,
                    intercept: b0,
                    beta,
                    objective: obj,
                    kkt_residual: kkt,
                    iterations: outer - 1,
                });
            }

            let mut w = Vec::with_capacity(eta.len());
            let mut resid = Vec::with_capacity(eta.len());
            for (&e, (&y, &m)) in eta.iter().zip(design.events().iter().zip(design.at_risk())) {
                let p = hazard_from_eta(e);
                let v = (p * (1.0 - p)).max(MIN_VARIANCE);
                w.push(m * v / total);
                resid.push((y - m * p) / (m * v));
            }
            let curvature: Vec<f64> = design
                .columns()
                .iter()
                .map(|col| col.iter().zip(&w).map(|(x, wi)| wi * x * x).sum())
                .collect();

            let mut new_b0 = b0;
            let mut new_beta = beta.clone();
            self.coordinate_descent(lambda, &w, &curvature, &mut resid, &mut new_b0, &mut new_beta, &mut sweeps)?;

            let mut step = 1.0;
            let mut accepted = None;
            while step > 1e-12 {
                let cand_b0 = b0 + step * (new_b0 - b0);
                let cand_beta: Vec<f64> = if step == 1.0 {
                    new_beta.clone()
                } else {
                    beta.iter().zip(&new_beta).map(|(o, n)| o + step * (n - o)).collect()
                };
                let cand_obj = self.objective(lambda, cand_b0, &cand_beta);
                if cand_obj <= obj + 1e-15 * (1.0 + obj.abs()) {
                    accepted = Some((cand_b0, cand_beta, cand_obj));
                    break;
                }
                step *= 0.5;
            }
            match accepted {
                Some((nb0, nbeta, nobj)) => {
                    let moved = nb0 != b0 || nbeta != beta;
                    b0 = nb0;
                    beta = nbeta;
                    obj = nobj;
                    if !moved {
                        break;
                    }
                }
                None => break,
            }
        }

        let (g0, g) = gradient(design, b0, &beta);
        kkt = kkt.min(kkt_from_gradient(self.kind, lambda, self.weights, &beta, g0, &g));
        if kkt <= self.opts.kkt_tol {
            Ok(PathPoint {
                lambda,
                intercept: b0,
                beta,
                objective: obj,
                kkt_residual: kkt,
                iterations: self.opts.max_outer,
            })
        } else {
            Err(Error::NonConvergence {
                lambda,
                iterations: self.opts.max_outer,
                kkt_residual: kkt,
                last_iterate: std::iter::once(b0).chain(beta).collect(),
            })
        }
    }
}

/// Solves the penalized problem at every lambda of a descending path,
/// warm-starting each solve from the previous solution.
pub fn fit_penalized(
    design: &DesignTable,
    kind: PenaltyKind,
    weights: &[f64],
    lambdas: &[f64],
    opts: SolverOptions,
) -> Result<CoefficientPath> {
    check_outcome_variation(design)?;
    check_weights(kind, weights, design.n_cols())?;
    if lambdas.is_empty() {
        return Err(Error::InvalidArgument("empty lambda path".into()));
    }
    if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::InvalidArgument("lambda values must be finite and non-negative".into()));
    }
    if lambdas.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidArgument("lambda path must be descending".into()));
    }
    let solver = Solver {
        design,
        kind,
        weights,
        opts,
    };
    let mut intercept = null_intercept(design);
    let mut beta = vec![0.0; design.n_cols()];
    let mut points = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let point = solver.solve(lambda, intercept, beta)?;
        intercept = point.intercept;
        beta = point.beta.clone();
        points.push(point);
    }
    Ok(CoefficientPath {
        names: design.names().to_vec(),
        kind,
        weights: weights.to_vec(),
        points,
    })
}

/// Single unpenalized maximum-likelihood fit.
pub fn fit_unpenalized(design: &DesignTable, opts: SolverOptions) -> Result<PathPoint> {
    let weights = vec![1.0; design.n_cols()];
    let mut path = fit_penalized(design, PenaltyKind::None, &weights, &[0.0], opts)?;
    Ok(path.points.pop().expect("one point"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::RowKey;
    use crate::survival::Phase;
    use chrono::NaiveDate;

    fn key() -> RowKey {
        RowKey {
            cohort_id: "c".into(),
            date: NaiveDate::from_ymd_opt(2016, 1, 1).unwrap(),
            phase: Phase::Invitation,
            days: 1,
        }
    }

    fn design(cols: Vec<Vec<f64>>, events: Vec<f64>, at_risk: Vec<f64>) -> DesignTable {
        let n = events.len();
        let names = (0..cols.len()).map(|j| format!("x{j}")).collect();
        DesignTable::new(names, cols, events, at_risk, vec![key(); n]).unwrap()
    }

    #[test]
    fn saturated_two_group_closed_form() {
        // x=1: 3/4 events, x=0: 1/2 events -> intercept logit(.5)=0, slope logit(.75)
        let d = design(vec![vec![1.0, 0.0]], vec![3.0, 1.0], vec![4.0, 2.0]);
        let fit = fit_unpenalized(&d, SolverOptions::default()).unwrap();
        assert!(fit.intercept.abs() < 1e-8);
        assert!((fit.beta[0] - 3f64.ln()).abs() < 1e-8);
        assert!((fit.beta[0] - 1.0986).abs() < 1e-4);
    }

    #[test]
    fn lambda_max_zeroes_everything() {
        let d = design(
            vec![vec![1.0, -1.0, 0.5, 2.0, -0.3], vec![0.1, 0.2, -0.4, 0.0, 1.0]],
            vec![1.0, 3.0, 2.0, 0.0, 4.0],
            vec![5.0, 6.0, 5.0, 4.0, 7.0],
        );
        let w = vec![1.0, 1.0];
        let lmax = lambda_max(&d, PenaltyKind::Lasso, &w).unwrap();
        let path = fit_penalized(&d, PenaltyKind::Lasso, &w, &[lmax * 1.5, lmax], SolverOptions::default()).unwrap();
        for p in &path.points {
            assert_eq!(p.support_size(), 0);
        }
        let below = fit_penalized(&d, PenaltyKind::Lasso, &w, &[lmax * 0.9], SolverOptions::default()).unwrap();
        assert!(below.points[0].support_size() > 0);
    }

    #[test]
    fn grid_is_log_spaced_and_descending() {
        let g = lambda_grid(1.0, 100, 1e-4).unwrap();
        assert_eq!(g.len(), 100);
        assert_eq!(g[0], 1.0);
        assert!((g[99] - 1e-4).abs() < 1e-16);
        assert!(g.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(lambda_grid(0.0, 10, 1e-4).unwrap(), vec![0.0]);
        assert!(lambda_grid(1.0, 10, 1.5).is_err());
    }

    #[test]
    fn no_variation_is_rejected() {
        let d = design(vec![vec![1.0, 0.0]], vec![0.0, 0.0], vec![4.0, 2.0]);
        assert!(matches!(fit_unpenalized(&d, SolverOptions::default()), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn separation_reports_non_convergence() {
        let d = design(vec![vec![1.0, 0.0, 0.5]], vec![0.0, 2.0, 1.0], vec![4.0, 2.0, 2.0]);
        let opts = SolverOptions {
            max_outer: 30,
            ..SolverOptions::default()
        };
        match fit_unpenalized(&d, opts) {
            Err(Error::NonConvergence { last_iterate, .. }) => assert_eq!(last_iterate.len(), 2),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn ridge_path_shrinks_monotonically_toward_zero() {
        let d = design(
            vec![vec![1.0, -1.0, 0.5, 2.0, -0.3, 0.7]],
            vec![1.0, 3.0, 2.0, 0.0, 4.0, 2.0],
            vec![5.0, 6.0, 5.0, 4.0, 7.0, 5.0],
        );
        let w = vec![1.0];
        let lmax = lambda_max(&d, PenaltyKind::Ridge, &w).unwrap();
        let grid = lambda_grid(lmax, 20, 1e-4).unwrap();
        let path = fit_penalized(&d, PenaltyKind::Ridge, &w, &grid, SolverOptions::default()).unwrap();
        let mags: Vec<f64> = path.points.iter().map(|p| p.beta[0].abs()).collect();
        assert!(mags[0] < 1e-2);
        assert!(mags.windows(2).all(|m| m[1] >= m[0] - 1e-12));
    }
}
