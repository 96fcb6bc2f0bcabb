//! Preview-and-refine workflow simulation.
//!
//! Each session is one dataset entry: its `x_gt` is the hidden target the
//! user wants, and an attempt is accepted when the judged output reaches
//! `psnr >= tau` against it. Both modes see the same attempt seeds, so the
//! per-attempt verdicts can be compared directly.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::eval::{CostModel, Solver};
use crate::grid::{build_grid, GridKind, StepGrid};
use crate::rng::{derive_seed, sample_prior};
use crate::trainer::dataset::OfflineDataset;
use crate::trainer::reward::psnr;

const ATTEMPT_STREAM: u64 = 0x7072_6576;
const CALIBRATION_STREAM: u64 = 0x6361_6c69;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreviewConfig {
    pub k_preview: usize,
    pub k_full: usize,
    pub grid: GridKind,
    pub tau: f64,
    pub max_attempts: usize,
    pub cost: CostModel,
    pub seed: u64,
}

impl Default for PreviewConfig {
    fn default() -> Self {
        Self {
            k_preview: 8,
            k_full: 40,
            grid: GridKind::LogSnr,
            tau: f64::NEG_INFINITY,
            max_attempts: 10,
            cost: CostModel::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PreviewMode {
    HighQuality,
    Preview,
}

impl PreviewMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PreviewMode::HighQuality => "high-quality",
            PreviewMode::Preview => "preview",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreviewSimResult {
    pub mode: PreviewMode,
    pub avg_attempts: f64,
    pub avg_nfe: f64,
    pub avg_time: f64,
    pub decision_agreement: f64,
    pub discarded_sessions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreviewOutcome {
    pub sessions: usize,
    pub tau: f64,
    /// Fraction of judged full-step outputs that met `tau`.
    pub acceptance_rate: f64,
    /// Set when `tau` accepted everything or nothing.
    pub degenerate: Option<String>,
    pub high_quality: PreviewSimResult,
    pub preview: PreviewSimResult,
}

impl PreviewOutcome {
    pub const CSV_HEADER: &'static str = "mode,avg_attempts,avg_nfe,avg_time,decision_agreement,discarded_sessions";

    pub fn csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in [&self.high_quality, &self.preview] {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.mode.as_str(),
                r.avg_attempts,
                r.avg_nfe,
                r.avg_time,
                r.decision_agreement,
                r.discarded_sessions
            ));
        }
        out
    }
}

#[derive(Debug, Default)]
struct Session {
    /// Attempts until acceptance, `None` when discarded.
    hq: Option<usize>,
    pv: Option<usize>,
    hq_nfe: usize,
    pv_nfe: usize,
    hq_time: f64,
    pv_time: f64,
    agree: usize,
    judged: usize,
    full_accepts: usize,
}

fn attempt_z(seed: u64, stream: u64, session: usize, attempt: usize, dim: usize) -> Vec<f64> {
    sample_prior(derive_seed(seed, &[stream, session as u64, attempt as u64]), dim)
}

/// The `percentile` (in [0,1]) of full-step output psnr against each
/// session's target, over `draws` fresh seeds per session.
pub fn calibrate_tau(
    full: &Solver,
    grid: &StepGrid,
    dataset: &OfflineDataset,
    draws: usize,
    percentile: f64,
    seed: u64,
) -> Result<f64> {
    if draws == 0 || !(0.0..=1.0).contains(&percentile) {
        return Err(LabError::Config("tau calibration needs draws > 0 and a percentile in [0,1]".into()));
    }
    let schedule = dataset.schedule();
    let dim = dataset.manifest.synthesis.dim;
    let per_session: Vec<Vec<f64>> = dataset
        .entries
        .par_iter()
        .enumerate()
        .map(|(s, e)| {
            (0..draws)
                .map(|a| {
                    let z = attempt_z(seed, CALIBRATION_STREAM, s, a, dim);
                    let out = full.run(dataset.model(e.condition_id), schedule, grid, &z)?;
                    psnr(&out.x, &e.x_gt)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut all: Vec<f64> = per_session.into_iter().flatten().collect();
    all.sort_by(f64::total_cmp);
    let rank = percentile * (all.len() - 1) as f64;
    let (lo, hi) = (rank.floor() as usize, rank.ceil() as usize);
    Ok(all[lo] + (rank - lo as f64) * (all[hi] - all[lo]))
}

/// Simulates both workflows over every dataset entry.
pub fn preview_simulation(
    preview_solver: &Solver,
    full_solver: &Solver,
    dataset: &OfflineDataset,
    config: &PreviewConfig,
) -> Result<PreviewOutcome> {
    if config.max_attempts == 0 {
        return Err(LabError::Config("max_attempts must be positive".into()));
    }
    let schedule = dataset.schedule();
    let dim = dataset.manifest.synthesis.dim;
    let gp = preview_solver.effective_grid(schedule, &build_grid(config.grid, schedule, config.k_preview)?)?;
    let gf = full_solver.effective_grid(schedule, &build_grid(config.grid, schedule, config.k_full)?)?;
    let cost = config.cost;

    let sessions: Vec<Session> = dataset
        .entries
        .par_iter()
        .enumerate()
        .map(|(s, e)| -> Result<Session> {
            let model = dataset.model(e.condition_id);
            let mut st = Session::default();
            for a in 0..config.max_attempts {
                if st.hq.is_some() && st.pv.is_some() {
                    break;
                }
                let z = attempt_z(config.seed, ATTEMPT_STREAM, s, a, dim);
                let full = full_solver.run(model, schedule, &gf, &z)?;
                let prev = preview_solver.run(model, schedule, &gp, &z)?;
                let full_ok = psnr(&full.x, &e.x_gt)? >= config.tau;
                let prev_ok = psnr(&prev.x, &e.x_gt)? >= config.tau;
                st.judged += 1;
                st.agree += usize::from(full_ok == prev_ok);
                st.full_accepts += usize::from(full_ok);
                if st.hq.is_none() {
                    st.hq_nfe += full.nfe;
                    st.hq_time += cost.seconds(full.nfe);
                    if full_ok {
                        st.hq = Some(a + 1);
                    }
                }
                if st.pv.is_none() {
                    st.pv_nfe += prev.nfe;
                    st.pv_time += cost.seconds(prev.nfe);
                    if prev_ok {
                        // one refinement of the accepted seed
                        st.pv_nfe += full.nfe;
                        st.pv_time += cost.seconds(full.nfe);
                        st.pv = Some(a + 1);
                    }
                }
            }
            Ok(st)
        })
        .collect::<Result<_>>()?;

    let judged: usize = sessions.iter().map(|s| s.judged).sum();
    let agreement = sessions.iter().map(|s| s.agree).sum::<usize>() as f64 / judged as f64;
    let acceptance_rate = sessions.iter().map(|s| s.full_accepts).sum::<usize>() as f64 / judged as f64;
    let degenerate = if acceptance_rate >= 1.0 {
        Some("tau accepts every output".to_string())
    } else if acceptance_rate <= 0.0 {
        Some("tau accepts no output".to_string())
    } else {
        None
    };

    let summarize = |mode: PreviewMode| {
        let kept: Vec<(usize, usize, f64)> = sessions
            .iter()
            .filter_map(|s| match mode {
                PreviewMode::HighQuality => s.hq.map(|a| (a, s.hq_nfe, s.hq_time)),
                PreviewMode::Preview => s.pv.map(|a| (a, s.pv_nfe, s.pv_time)),
            })
            .collect();
        let n = kept.len().max(1) as f64;
        let avg = |f: &dyn Fn(&(usize, usize, f64)) -> f64| {
            if kept.is_empty() {
                f64::NAN
            } else {
                kept.iter().map(f).sum::<f64>() / n
            }
        };
        PreviewSimResult {
            mode,
            avg_attempts: avg(&|k| k.0 as f64),
            avg_nfe: avg(&|k| k.1 as f64),
            avg_time: avg(&|k| k.2),
            decision_agreement: agreement,
            discarded_sessions: sessions.len() - kept.len(),
        }
    };

    Ok(PreviewOutcome {
        sessions: sessions.len(),
        tau: config.tau,
        acceptance_rate,
        degenerate,
        high_quality: summarize(PreviewMode::HighQuality),
        preview: summarize(PreviewMode::Preview),
    })
}
