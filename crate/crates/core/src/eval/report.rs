//! Per-entry consistency of a solver's outputs against dataset references.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::eval::Solver;
use crate::grid::StepGrid;
use crate::trainer::dataset::OfflineDataset;
use crate::trainer::reward::{cosine, mse, psnr};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntryMetrics {
    pub entry: usize,
    pub neg_l2: f64,
    pub psnr: f64,
    pub cosine: f64,
    pub nfe: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub output: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: f64::NAN, median: f64::NAN, std: f64::NAN };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len().is_multiple_of(2) { 0.5 * (sorted[mid - 1] + sorted[mid]) } else { sorted[mid] };
        Self { mean, median, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub solver: String,
    pub steps: usize,
    pub rows: Vec<EntryMetrics>,
    pub neg_l2: MetricSummary,
    pub psnr: MetricSummary,
    pub cosine: MetricSummary,
    pub nfe_per_sample: f64,
    pub failed: usize,
    /// Measured on this host; excluded from deterministic artifacts.
    #[serde(skip)]
    pub wall_time_per_sample: f64,
}

impl ConsistencyReport {
    pub fn outputs(&self) -> Vec<Vec<f64>> {
        self.rows.iter().filter_map(|r| r.output.clone()).collect()
    }

    /// Recomputes the aggregates from the per-entry rows.
    pub fn summarize(rows: &[EntryMetrics]) -> (MetricSummary, MetricSummary, MetricSummary, f64, usize) {
        let ok: Vec<&EntryMetrics> = rows.iter().filter(|r| r.error.is_none()).collect();
        let col = |f: fn(&EntryMetrics) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<f64>>();
        let nfe = if ok.is_empty() { 0.0 } else { ok.iter().map(|r| r.nfe as f64).sum::<f64>() / ok.len() as f64 };
        (
            MetricSummary::of(&col(|r| r.neg_l2)),
            MetricSummary::of(&col(|r| r.psnr)),
            MetricSummary::of(&col(|r| r.cosine)),
            nfe,
            rows.len() - ok.len(),
        )
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("entry,neg_l2,psnr,cosine,nfe,error\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.entry,
                r.neg_l2,
                r.psnr,
                r.cosine,
                r.nfe,
                r.error.as_deref().unwrap_or("")
            ));
        }
        out
    }
}

/// Runs `solver` on every entry and scores the output against `x_gt`.
/// Failed entries are recorded, not fatal.
pub fn consistency_report(solver: &Solver, dataset: &OfflineDataset, grid: &StepGrid) -> ConsistencyReport {
    let schedule = dataset.schedule();
    let start = Instant::now();
    let rows: Vec<EntryMetrics> = dataset
        .entries
        .par_iter()
        .enumerate()
        .map(|(k, e)| {
            let scored = solver.run(dataset.model(e.condition_id), schedule, grid, &e.z).and_then(
                |out| -> Result<EntryMetrics> {
                    Ok(EntryMetrics {
                        entry: k,
                        neg_l2: -mse(&out.x, &e.x_gt)?,
                        psnr: psnr(&out.x, &e.x_gt)?,
                        cosine: cosine(&out.x, &e.x_gt)?,
                        nfe: out.nfe,
                        error: None,
                        output: Some(out.x),
                    })
                },
            );
            scored.unwrap_or_else(|err| EntryMetrics {
                entry: k,
                neg_l2: f64::NAN,
                psnr: f64::NAN,
                cosine: f64::NAN,
                nfe: 0,
                error: Some(err.to_string()),
                output: None,
            })
        })
        .collect();
    let elapsed = start.elapsed().as_secs_f64();
    let (neg_l2, psnr_s, cosine_s, nfe, failed) = ConsistencyReport::summarize(&rows);
    ConsistencyReport {
        solver: solver.id(),
        steps: grid.primary_steps(),
        wall_time_per_sample: elapsed / rows.len().max(1) as f64,
        rows,
        neg_l2,
        psnr: psnr_s,
        cosine: cosine_s,
        nfe_per_sample: nfe,
        failed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_of_known_values() {
        let s = MetricSummary::of(&[1.0, 3.0, 2.0, 10.0]);
        assert_eq!(s.mean, 4.0);
        assert_eq!(s.median, 2.5);
        assert!((s.std - (50.0f64 / 4.0).sqrt()).abs() < 1e-12);
    }
}
