//! High-accuracy reference integration of the probability-flow ODE.
//!
//! Dormand–Prince 5(4) with embedded error control, run in `u = ln n` where
//! the system reads `dy/du = n * eps(alpha(t(n)) y, t(n))`. The noise ratio
//! spans several decades on a VP schedule, which the log variable flattens.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::StepGrid;
use crate::mixture::MixtureModel;
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTolerance {
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for ReferenceTolerance {
    fn default() -> Self {
        Self { rel_tol: 1e-9, abs_tol: 1e-10 }
    }
}

impl ReferenceTolerance {
    pub fn new(rel_tol: f64, abs_tol: f64) -> Result<Self> {
        if !(rel_tol > 0.0 && abs_tol > 0.0) {
            return Err(LabError::Config(format!("reference tolerances must be positive (got {rel_tol}, {abs_tol})")));
        }
        Ok(Self { rel_tol, abs_tol })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRun {
    /// `x` at every requested node, the first being the initial state.
    pub states: Vec<Vec<f64>>,
    pub nfe: usize,
    pub accepted: usize,
    pub rejected: usize,
}

impl ReferenceRun {
    pub fn final_x(&self) -> &[f64] {
        self.states.last().expect("non-empty")
    }
}

// Dormand–Prince tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B4: [f64; 7] =
    [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

struct LogNoiseSystem<'a> {
    model: &'a MixtureModel,
    schedule: &'a NoiseSchedule,
    evals: usize,
}

impl LogNoiseSystem<'_> {
    fn rhs(&mut self, u: f64, y: &[f64]) -> Result<Vec<f64>> {
        let n = u.exp();
        let t = self.schedule.t_of_n(n)?;
        let alpha = self.schedule.alpha(t)?;
        let x: Vec<f64> = y.iter().map(|v| alpha * v).collect();
        self.evals += 1;
        let eps = self.model.epsilon(self.schedule, &x, t)?;
        Ok(eps.into_iter().map(|e| n * e).collect())
    }
}

/// Integrates from `x_{t_max} = z` to `t_min` and returns `x_{t_min}`.
pub fn reference_solution(
    model: &MixtureModel,
    schedule: &NoiseSchedule,
    z: &[f64],
    tol: ReferenceTolerance,
) -> Result<ReferenceRun> {
    reference_through(model, schedule, z, &[schedule.t_max(), schedule.t_min()], tol)
}

/// Reference states at every node of `grid`.
pub fn reference_on_grid(
    model: &MixtureModel,
    schedule: &NoiseSchedule,
    grid: &StepGrid,
    z: &[f64],
    tol: ReferenceTolerance,
) -> Result<ReferenceRun> {
    reference_through(model, schedule, z, grid.times(), tol)
}

/// Integrates through the strictly decreasing `times`, landing on each one exactly.
pub fn reference_through(
    model: &MixtureModel,
    schedule: &NoiseSchedule,
    z: &[f64],
    times: &[f64],
    tol: ReferenceTolerance,
) -> Result<ReferenceRun> {
    ReferenceTolerance::new(tol.rel_tol, tol.abs_tol)?;
    if z.len() != model.dim() {
        return Err(LabError::Contract(format!(
            "initial noise has dimension {}, model expects {}",
            z.len(),
            model.dim()
        )));
    }
    if times.len() < 2 || times.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(LabError::Contract("reference nodes must be strictly decreasing".into()));
    }
    let us: Vec<f64> = times.iter().map(|&t| schedule.noise_ratio(t).map(f64::ln)).collect::<Result<_>>()?;
    let mut sys = LogNoiseSystem { model, schedule, evals: 0 };

    let alpha0 = schedule.alpha(times[0])?;
    let mut y: Vec<f64> = z.iter().map(|v| v / alpha0).collect();
    let mut states = vec![z.to_vec()];
    let mut accepted = 0;
    let mut rejected = 0;

    let span = us[0] - us[us.len() - 1];
    let mut h_ctrl = -(span / 64.0).max(1e-6);
    let mut u = us[0];
    let mut k1 = sys.rhs(u, &y)?;
    let dim = y.len();
    let mut stages = vec![vec![0.0; dim]; 7];
    let mut tmp = vec![0.0; dim];

    for (node, &target) in us.iter().enumerate().skip(1) {
        while u > target {
            let (h, last) = if u + h_ctrl <= target { (target - u, true) } else { (h_ctrl, false) };
            if h.abs() < 1e-14 * u.abs().max(1.0) {
                return Err(LabError::Stiffness { n: u.exp(), h });
            }
            stages[0].clone_from(&k1);
            for s in 1..7 {
                for d in 0..dim {
                    let acc: f64 = (0..s).map(|j| A[s][j] * stages[j][d]).sum();
                    tmp[d] = y[d] + h * acc;
                }
                stages[s] = sys.rhs(u + C[s] * h, &tmp)?;
            }
            // The last stage is evaluated at the 5th-order solution (FSAL).
            let y5 = tmp.clone();
            let mut err_sq = 0.0;
            for d in 0..dim {
                let y4: f64 = y[d] + h * (0..7).map(|j| B4[j] * stages[j][d]).sum::<f64>();
                let scale = tol.abs_tol + tol.rel_tol * y[d].abs().max(y5[d].abs());
                err_sq += ((y5[d] - y4) / scale).powi(2);
            }
            let err = (err_sq / dim as f64).sqrt();
            if !err.is_finite() {
                return Err(LabError::Numeric(format!("reference error estimate diverged at n={}", u.exp())));
            }
            if err <= 1.0 {
                u = if last { target } else { u + h };
                y = y5;
                k1 = stages[6].clone();
                accepted += 1;
                if !last {
                    let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                    h_ctrl = h * factor;
                }
            } else {
                rejected += 1;
                h_ctrl = h * (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            }
        }
        let alpha = schedule.alpha(times[node])?;
        states.push(y.iter().map(|v| alpha * v).collect());
    }

    Ok(ReferenceRun { states, nfe: sys.evals, accepted, rejected })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::sample_prior;

    #[test]
    fn gaussian_flow_is_identity() {
        let s = NoiseSchedule::default();
        let m = MixtureModel::standard_gaussian(4);
        for seed in 0..10 {
            let z = sample_prior(seed, 4);
            let run = reference_solution(&m, &s, &z, ReferenceTolerance::default()).unwrap();
            let err: f64 = run.final_x().iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(err <= 1e-6, "seed {seed}: {err}");
            assert!(run.nfe > 0);
        }
    }

    #[test]
    fn tightening_tolerance_is_consistent() {
        let s = NoiseSchedule::default();
        let m = MixtureModel::synthesize(3, 1, 2, Some(2)).unwrap();
        let z = sample_prior(5, 2);
        let loose = ReferenceTolerance::new(1e-6, 1e-7).unwrap();
        let tight = ReferenceTolerance::new(1e-7, 1e-8).unwrap();
        let a = reference_solution(&m, &s, &z, loose).unwrap();
        let b = reference_solution(&m, &s, &z, tight).unwrap();
        let diff: f64 = a.final_x().iter().zip(b.final_x()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-6 * 10.0, "diff {diff}");
        assert!(b.nfe > a.nfe);
    }

    #[test]
    fn symmetric_mixture_keeps_axis() {
        let s = NoiseSchedule::default();
        let m = MixtureModel::symmetric_pair(2, 2.5, 0.6).unwrap();
        // z on the symmetry axis x_0 = 0.
        let z = [0.0, 1.3];
        let run = reference_solution(&m, &s, &z, ReferenceTolerance::default()).unwrap();
        assert!(run.final_x()[0].abs() <= 1e-8);
    }

    #[test]
    fn grid_states_land_on_nodes() {
        let s = NoiseSchedule::default();
        let m = MixtureModel::standard_gaussian(2);
        let times = [1.0, 0.6, 0.2, 0.001];
        let z = sample_prior(1, 2);
        let run = reference_through(&m, &s, &z, &times, ReferenceTolerance::default()).unwrap();
        assert_eq!(run.states.len(), 4);
        for st in &run.states {
            for (a, b) in st.iter().zip(&z) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn bad_tolerance_rejected() {
        assert!(ReferenceTolerance::new(0.0, 1e-9).is_err());
    }
}
