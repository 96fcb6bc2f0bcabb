//! Decreasing timestep grids `t_0 > t_1 > ... > t_K`.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridKind {
    Uniform,
    Quadratic,
    LogSnr,
    /// Uniform primary nodes with a geometric midpoint in `n` inserted into every interval.
    MidpointAugmented,
}

impl GridKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "quadratic" => Ok(Self::Quadratic),
            "log-snr" => Ok(Self::LogSnr),
            "midpoint-augmented" => Ok(Self::MidpointAugmented),
            other => Err(LabError::Config(format!(
                "unknown grid kind `{other}` (uniform, quadratic, log-snr, midpoint-augmented)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::Quadratic => "quadratic",
            Self::LogSnr => "log-snr",
            Self::MidpointAugmented => "midpoint-augmented",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepGrid {
    times: Vec<f64>,
    kind: GridKind,
    /// Set when odd-indexed nodes are geometric midpoints of their neighbours.
    augmented: bool,
}

impl StepGrid {
    /// Builds a grid from explicit times, checking strict decrease and domain membership.
    pub fn from_times(schedule: &NoiseSchedule, times: Vec<f64>, kind: GridKind) -> Result<Self> {
        if times.len() < 2 {
            return Err(LabError::Config("a step grid needs at least two nodes".into()));
        }
        for (i, w) in times.windows(2).enumerate() {
            if !(w[1] < w[0]) {
                return Err(LabError::Config(format!(
                    "grid not strictly decreasing at node {}: {} -> {}",
                    i + 1,
                    w[0],
                    w[1]
                )));
            }
        }
        for &t in &times {
            schedule.check_domain(t)?;
        }
        Ok(Self { times, kind, augmented: false })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }
    pub fn kind(&self) -> GridKind {
        self.kind
    }
    pub fn is_augmented(&self) -> bool {
        self.augmented
    }

    /// Number of transitions.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Number of primary intervals (half the transitions on an augmented grid).
    pub fn primary_steps(&self) -> usize {
        if self.augmented {
            self.steps() / 2
        } else {
            self.steps()
        }
    }

    pub fn noise_ratios(&self, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        self.times.iter().map(|&t| schedule.noise_ratio(t)).collect()
    }

    /// Inserts the node `r` with `n_r = sqrt(n_t n_s)` between each consecutive pair.
    pub fn with_midpoints(&self, schedule: &NoiseSchedule) -> Result<Self> {
        if self.augmented {
            return Err(LabError::Config("grid already carries midpoints".into()));
        }
        let ns = self.noise_ratios(schedule)?;
        let mut times = Vec::with_capacity(2 * self.times.len() - 1);
        for i in 0..self.steps() {
            times.push(self.times[i]);
            let mid = schedule.t_of_n((ns[i] * ns[i + 1]).sqrt())?;
            times.push(mid);
        }
        times.push(*self.times.last().expect("non-empty"));
        let mut grid = Self::from_times(schedule, times, GridKind::MidpointAugmented)?;
        grid.augmented = true;
        Ok(grid)
    }
}

/// Builds a `K`-interval grid of the given kind spanning `[t_max, t_min]`.
pub fn build_grid(kind: GridKind, schedule: &NoiseSchedule, k: usize) -> Result<StepGrid> {
    if k == 0 {
        return Err(LabError::Config("grid needs K >= 1".into()));
    }
    let (lo, hi) = (schedule.t_min(), schedule.t_max());
    let frac = |i: usize| i as f64 / k as f64;
    let mut times: Vec<f64> = match kind {
        GridKind::Uniform | GridKind::MidpointAugmented => (0..=k).map(|i| hi + frac(i) * (lo - hi)).collect(),
        GridKind::Quadratic => {
            let (a, b) = (hi.sqrt(), lo.sqrt());
            (0..=k).map(|i| (a + frac(i) * (b - a)).powi(2)).collect()
        }
        GridKind::LogSnr => {
            let (a, b) = (schedule.noise_ratio(hi)?.ln(), schedule.noise_ratio(lo)?.ln());
            (0..=k).map(|i| schedule.t_of_n((a + frac(i) * (b - a)).exp())).collect::<Result<_>>()?
        }
    };
    times[0] = hi;
    times[k] = lo;
    let base_kind = if kind == GridKind::MidpointAugmented { GridKind::Uniform } else { kind };
    let grid = StepGrid::from_times(schedule, times, base_kind)?;
    if kind == GridKind::MidpointAugmented {
        grid.with_midpoints(schedule)
    } else {
        Ok(grid)
    }
}
