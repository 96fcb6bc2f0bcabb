//! Empirical convergence order from a step-count sweep.

use rayon::prelude::*;
use serde::Serialize;

use crate::engine::{sample_trajectory, CoefficientProvider};
use crate::error::{LabError, Result};
use crate::grid::{build_grid, GridKind};
use crate::mixture::MixtureModel;
use crate::reference::{reference_solution, ReferenceTolerance};
use crate::schedule::NoiseSchedule;

/// Errors below this are excluded from the fit.
pub const ERROR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderEstimate {
    pub order: f64,
    pub stderr: f64,
    /// 95% normal-approximation interval on the slope.
    pub ci_low: f64,
    pub ci_high: f64,
    /// `(K, mean error)` for every K in the sweep.
    pub errors: Vec<(usize, f64)>,
}

/// Least-squares slope of `ln y` against `ln x` with its standard error.
pub fn log_log_slope(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 2 {
        return Err(LabError::Numeric("need at least two points above the error floor".into()));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let stderr = if points.len() > 2 {
        let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - my - slope * (x - mx)).powi(2)).sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok((slope, stderr))
}

/// Fits `e_K ~ C K^{-p}` where `e_K` is the mean distance to the reference
/// output over `zs`. `K` counts primary intervals of the grid kind.
pub fn convergence_order(
    provider: &dyn CoefficientProvider,
    model: &MixtureModel,
    schedule: &NoiseSchedule,
    kind: GridKind,
    k_list: &[usize],
    zs: &[Vec<f64>],
    tol: ReferenceTolerance,
) -> Result<OrderEstimate> {
    if k_list.len() < 3 || k_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LabError::Config("convergence sweep needs >= 3 increasing step counts".into()));
    }
    if zs.is_empty() {
        return Err(LabError::Config("convergence sweep needs at least one initial noise".into()));
    }
    let refs: Vec<Vec<f64>> = zs
        .par_iter()
        .map(|z| reference_solution(model, schedule, z, tol).map(|r| r.final_x().to_vec()))
        .collect::<Result<_>>()?;
    let mut errors = Vec::with_capacity(k_list.len());
    for &k in k_list {
        let mut grid = build_grid(kind, schedule, k)?;
        if provider.needs_midpoints() && !grid.is_augmented() {
            grid = grid.with_midpoints(schedule)?;
        }
        let total: f64 = zs
            .iter()
            .zip(&refs)
            .map(|(z, r)| -> Result<f64> {
                let run = sample_trajectory(model, schedule, &grid, provider, z)?;
                Ok(run.final_x().iter().zip(r).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            })
            .sum::<Result<f64>>()?;
        errors.push((k, total / zs.len() as f64));
    }
    let points: Vec<(f64, f64)> =
        errors.iter().filter(|(_, e)| *e >= ERROR_FLOOR).map(|&(k, e)| (1.0 / k as f64, e)).collect();
    let (order, stderr) = log_log_slope(&points)?;
    Ok(OrderEstimate { order, stderr, ci_low: order - 1.96 * stderr, ci_high: order + 1.96 * stderr, errors })
}
