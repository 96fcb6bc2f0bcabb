//! Explicit multistep integration of `dy = eps dn`.
//!
//! Each transition `t_i -> t_{i+1}` anchors on the current state only and
//! blends the most recent noise predictions:
//!
//! `y_{i+1} = y_i + (n_{i+1} - n_i) * sum_j w_j eps_{i+1-j}`, `j = 1..=m_i`,
//!
//! with `y = x / alpha_t` and `n = sigma_t / alpha_t`. The coefficient vector
//! `w` comes from a [`CoefficientProvider`].

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::StepGrid;
use crate::mixture::MixtureModel;
use crate::schedule::NoiseSchedule;

/// Everything a provider may look at when choosing weights for one transition.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    /// Transition index `i` (from node `i` to node `i + 1`).
    pub index: usize,
    /// Number of history entries the engine will blend.
    pub effective_order: usize,
    pub times: &'a [f64],
    pub noise_ratios: &'a [f64],
}

impl StepContext<'_> {
    pub fn t_current(&self) -> f64 {
        self.times[self.index]
    }
    pub fn t_next(&self) -> f64 {
        self.times[self.index + 1]
    }
}

/// Source of per-transition multistep weights.
pub trait CoefficientProvider: Send + Sync {
    fn id(&self) -> &str;

    /// Configured order `m`.
    fn order(&self) -> usize;

    /// History length used at transition `index`; defaults to the warm-up rule `min(i + 1, m)`.
    fn effective_order(&self, index: usize) -> usize {
        (index + 1).min(self.order())
    }

    /// True when the provider runs on a midpoint-augmented version of the grid.
    fn needs_midpoints(&self) -> bool {
        false
    }

    /// Rejects grids the provider cannot drive.
    fn check_grid(&self, _grid: &StepGrid) -> Result<()> {
        Ok(())
    }

    /// Weights for one transition; length must equal `ctx.effective_order`.
    fn weights(&self, ctx: &StepContext<'_>) -> Result<Vec<f64>>;

    /// True when every returned vector sums to one.
    fn is_consistent(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionState {
    pub x: Vec<f64>,
    pub t: f64,
}

/// A complete sampling trajectory with its coefficient audit trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverRun {
    pub times: Vec<f64>,
    pub states: Vec<DiffusionState>,
    #[serde(skip)]
    pub eps_history: Vec<Vec<f64>>,
    pub coeffs_used: Vec<Vec<f64>>,
    pub nfe: usize,
}

impl SolverRun {
    pub fn final_x(&self) -> &[f64] {
        &self.states.last().expect("run has states").x
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// One explicit multistep update. `eps_newest_first[0]` is `eps_i`.
pub fn lmm_step(
    y: &[f64],
    eps_newest_first: &[&[f64]],
    weights: &[f64],
    n_current: f64,
    n_next: f64,
) -> Result<Vec<f64>> {
    if weights.is_empty() || weights.len() != eps_newest_first.len() {
        return Err(LabError::Contract(format!(
            "multistep update needs matching weights and history (got {} and {})",
            weights.len(),
            eps_newest_first.len()
        )));
    }
    if let Some(e) = eps_newest_first.iter().find(|e| e.len() != y.len()) {
        return Err(LabError::Contract(format!(
            "history entry of dimension {} for a state of dimension {}",
            e.len(),
            y.len()
        )));
    }
    let h = n_next - n_current;
    let mut out = y.to_vec();
    for (i, o) in out.iter_mut().enumerate() {
        let blend: f64 = weights.iter().zip(eps_newest_first).map(|(w, e)| w * e[i]).sum();
        *o += h * blend;
    }
    Ok(out)
}

/// Integrates from `x_{t_0} = z` across `grid`, querying `model` once per node
/// except the last.
pub fn sample_trajectory(
    model: &MixtureModel,
    schedule: &NoiseSchedule,
    grid: &StepGrid,
    provider: &dyn CoefficientProvider,
    z: &[f64],
) -> Result<SolverRun> {
    if z.len() != model.dim() {
        return Err(LabError::Contract(format!(
            "initial noise has dimension {}, model expects {}",
            z.len(),
            model.dim()
        )));
    }
    provider.check_grid(grid)?;
    let times = grid.times();
    let ns = grid.noise_ratios(schedule)?;
    let steps = grid.steps();

    let mut states = Vec::with_capacity(steps + 1);
    let mut eps_history: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mut coeffs_used = Vec::with_capacity(steps);
    let mut x = z.to_vec();
    let mut alpha = schedule.alpha(times[0])?;
    let mut y: Vec<f64> = x.iter().map(|v| v / alpha).collect();
    states.push(DiffusionState { x: x.clone(), t: times[0] });

    for i in 0..steps {
        eps_history.push(model.epsilon(schedule, &x, times[i])?);
        let m_i = provider.effective_order(i).min(i + 1);
        if m_i == 0 {
            return Err(LabError::Solver { step: i, reason: "effective order 0".into() });
        }
        let ctx = StepContext { index: i, effective_order: m_i, times, noise_ratios: &ns };
        let w = provider.weights(&ctx).map_err(|e| match e {
            LabError::Solver { .. } => e,
            other => LabError::Solver { step: i, reason: other.to_string() },
        })?;
        if w.len() != m_i {
            return Err(LabError::Solver {
                step: i,
                reason: format!("provider returned {} weights, expected {m_i}", w.len()),
            });
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(LabError::Solver { step: i, reason: "non-finite weights".into() });
        }
        let history: Vec<&[f64]> = eps_history.iter().rev().take(m_i).map(|e| e.as_slice()).collect();
        y = lmm_step(&y, &history, &w, ns[i], ns[i + 1])?;
        alpha = schedule.alpha(times[i + 1])?;
        x = y.iter().map(|v| alpha * v).collect();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(LabError::Solver { step: i, reason: "state diverged".into() });
        }
        states.push(DiffusionState { x: x.clone(), t: times[i + 1] });
        coeffs_used.push(w);
    }

    Ok(SolverRun { times: times.to_vec(), states, nfe: eps_history.len(), eps_history, coeffs_used })
}
