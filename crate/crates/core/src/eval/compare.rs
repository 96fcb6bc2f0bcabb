//! Solver-by-step-count comparison table.

use serde::Serialize;

use crate::error::Result;
use crate::eval::metrics::energy_distance;
use crate::eval::report::consistency_report;
use crate::eval::{CostModel, Solver};
use crate::grid::{build_grid, GridKind};
use crate::trainer::dataset::OfflineDataset;

pub const COMPARE_HEADER: &str =
    "solver,steps,nfe,psnr_mean,psnr_median,psnr_std,neg_l2_mean,cosine_mean,energy_distance,time_s,failed";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub solver: String,
    pub steps: usize,
    pub nfe: f64,
    pub psnr_mean: f64,
    pub psnr_median: f64,
    pub psnr_std: f64,
    pub neg_l2_mean: f64,
    pub cosine_mean: f64,
    pub energy_distance: f64,
    /// Cost-model seconds per sample.
    pub time_s: f64,
    pub failed: usize,
}

impl CompareRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.solver,
            self.steps,
            self.nfe,
            self.psnr_mean,
            self.psnr_median,
            self.psnr_std,
            self.neg_l2_mean,
            self.cosine_mean,
            self.energy_distance,
            self.time_s,
            self.failed
        )
    }

    pub fn csv(rows: &[CompareRow]) -> String {
        let mut out = format!("{COMPARE_HEADER}\n");
        for r in rows {
            out.push_str(&r.csv_line());
            out.push('\n');
        }
        out
    }
}

/// Rows in `solvers` order, then `k_list` order.
pub fn compare_solvers(
    solvers: &[Solver],
    k_list: &[usize],
    dataset: &OfflineDataset,
    kind: GridKind,
    cost: CostModel,
) -> Result<Vec<CompareRow>> {
    let targets: Vec<Vec<f64>> = dataset.entries.iter().map(|e| e.x_gt.clone()).collect();
    let mut rows = Vec::with_capacity(solvers.len() * k_list.len());
    for solver in solvers {
        for &k in k_list {
            let grid = build_grid(kind, dataset.schedule(), k)?;
            let report = consistency_report(solver, dataset, &grid);
            let outputs = report.outputs();
            let ed = if outputs.is_empty() { f64::NAN } else { energy_distance(&outputs, &targets) };
            rows.push(CompareRow {
                solver: report.solver.clone(),
                steps: k,
                nfe: report.nfe_per_sample,
                psnr_mean: report.psnr.mean,
                psnr_median: report.psnr.median,
                psnr_std: report.psnr.std,
                neg_l2_mean: report.neg_l2.mean,
                cosine_mean: report.cosine.mean,
                energy_distance: ed,
                time_s: cost.seconds(report.nfe_per_sample.round() as usize),
                failed: report.failed,
            });
        }
    }
    Ok(rows)
}
