//! Segment-wise trajectory distillation into per-transition coefficient tables.
//!
//! Along each reference trajectory (teacher forcing) the update for
//! transition `i` is linear in the weights,
//! `y*_{i+1} - y*_i = dn_i * sum_j w_j eps*_{i+1-j}`, so the fit over all
//! entries is a ridge least-squares problem solved in closed form.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::grid::StepGrid;
use crate::mixture::MixtureModel;
use crate::providers::CoefficientTable;
use crate::reference::{reference_on_grid, ReferenceTolerance};
use crate::schedule::NoiseSchedule;
use crate::trainer::dataset::OfflineDataset;

/// Reference states (in `y`) at every grid node and `eps` at every node but the last.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherTrajectory {
    pub ys: Vec<Vec<f64>>,
    pub eps: Vec<Vec<f64>>,
}

pub fn teacher_trajectory(
    model: &MixtureModel,
    schedule: &NoiseSchedule,
    grid: &StepGrid,
    z: &[f64],
    tol: ReferenceTolerance,
) -> Result<TeacherTrajectory> {
    let run = reference_on_grid(model, schedule, grid, z, tol)?;
    let times = grid.times();
    let mut ys = Vec::with_capacity(times.len());
    let mut eps = Vec::with_capacity(times.len() - 1);
    for (i, x) in run.states.iter().enumerate() {
        let alpha = schedule.alpha(times[i])?;
        ys.push(x.iter().map(|v| v / alpha).collect());
        if i + 1 < times.len() {
            eps.push(model.epsilon(schedule, x, times[i])?);
        }
    }
    Ok(TeacherTrajectory { ys, eps })
}

/// Sum of squared teacher-forced residuals for one transition.
fn transition_residual(trajs: &[TeacherTrajectory], ns: &[f64], i: usize, w: &[f64]) -> f64 {
    let dn = ns[i + 1] - ns[i];
    trajs
        .iter()
        .map(|tr| {
            (0..tr.ys[i].len())
                .map(|d| {
                    let pred: f64 = w.iter().enumerate().map(|(j, wj)| wj * tr.eps[i - j][d]).sum::<f64>();
                    (tr.ys[i + 1][d] - tr.ys[i][d] - dn * pred).powi(2)
                })
                .sum::<f64>()
        })
        .sum()
}

/// Total teacher-forced residual of a coefficient table (rows may be longer
/// than the warm-up order; only the leading `min(i + 1, len)` entries count).
pub fn distill_residual(trajs: &[TeacherTrajectory], ns: &[f64], rows: &[Vec<f64>]) -> f64 {
    rows.iter().enumerate().map(|(i, row)| transition_residual(trajs, ns, i, &row[..row.len().min(i + 1)])).sum()
}

/// Ridge least-squares weights per transition with warm-up order `min(i + 1, order)`.
pub fn fit_rows(trajs: &[TeacherTrajectory], ns: &[f64], order: usize, ridge_lambda: f64) -> Result<Vec<Vec<f64>>> {
    if order == 0 {
        return Err(LabError::Config("distillation order must be at least 1".into()));
    }
    if trajs.is_empty() {
        return Err(LabError::Config("distillation needs at least one trajectory".into()));
    }
    if !(ridge_lambda >= 0.0) {
        return Err(LabError::Config("ridge_lambda must be non-negative".into()));
    }
    let steps = ns.len() - 1;
    let mut rows = Vec::with_capacity(steps);
    for i in 0..steps {
        let m = (i + 1).min(order);
        let dn = ns[i + 1] - ns[i];
        let mut gram = DMatrix::<f64>::zeros(m, m);
        let mut rhs = DVector::<f64>::zeros(m);
        for tr in trajs {
            for d in 0..tr.ys[i].len() {
                let a: Vec<f64> = (0..m).map(|j| dn * tr.eps[i - j][d]).collect();
                let b = tr.ys[i + 1][d] - tr.ys[i][d];
                for p in 0..m {
                    rhs[p] += a[p] * b;
                    for q in 0..m {
                        gram[(p, q)] += a[p] * a[q];
                    }
                }
            }
        }
        if ridge_lambda == 0.0 {
            let sv = gram.clone().singular_values();
            let max = sv.max();
            let min = sv.min();
            if !(max > 0.0) || min <= 1e-13 * max {
                return Err(LabError::RankDeficient { transition: i });
            }
        }
        for p in 0..m {
            gram[(p, p)] += ridge_lambda;
        }
        let w = gram.cholesky().ok_or(LabError::RankDeficient { transition: i })?.solve(&rhs);
        rows.push(w.iter().copied().collect());
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct DistillReport {
    pub table: CoefficientTable,
    /// Teacher-forced residual of the fitted table.
    pub residual: f64,
    /// Teacher-forced residual of fixed `w = [1]` on the same objective.
    pub ddim_residual: f64,
}

/// Fits a coefficient table on the dataset's reference trajectories over `grid`.
pub fn distill_coeffs(
    dataset: &OfflineDataset,
    grid: &StepGrid,
    order: usize,
    ridge_lambda: f64,
) -> Result<DistillReport> {
    let schedule = dataset.schedule();
    let tol = dataset.manifest.reference;
    let trajs: Vec<TeacherTrajectory> = dataset
        .entries
        .par_iter()
        .enumerate()
        .map(|(k, e)| {
            teacher_trajectory(dataset.model(e.condition_id), schedule, grid, &e.z, tol).map_err(|err| err.at_entry(k))
        })
        .collect::<Result<_>>()?;
    let ns = grid.noise_ratios(schedule)?;
    let rows = fit_rows(&trajs, &ns, order, ridge_lambda)?;
    let residual = distill_residual(&trajs, &ns, &rows);
    let ddim_rows = vec![vec![1.0]; rows.len()];
    let ddim_residual = distill_residual(&trajs, &ns, &ddim_rows);
    Ok(DistillReport {
        table: CoefficientTable { schedule: schedule.clone(), times: grid.times().to_vec(), order, weights: rows },
        residual,
        ddim_residual,
    })
}
