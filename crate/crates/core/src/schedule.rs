//! Noise schedules `(alpha_t, sigma_t)` and the noise ratio `n_t = sigma_t / alpha_t`.
//!
//! In the variables `y = x / alpha_t` and `n = n_t` the probability-flow ODE
//! reads `dy = eps(x_t, t) dn`, which is what every solver in this crate
//! integrates.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    VpLinear,
    RectifiedFlow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleDoc {
    kind: ScheduleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta_max: Option<f64>,
    t_min: f64,
    t_max: f64,
}

/// A validated continuous-time noise schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleDoc", into = "ScheduleDoc")]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    beta_min: f64,
    beta_max: f64,
    t_min: f64,
    t_max: f64,
}

impl TryFrom<ScheduleDoc> for NoiseSchedule {
    type Error = LabError;

    fn try_from(doc: ScheduleDoc) -> Result<Self> {
        match doc.kind {
            ScheduleKind::VpLinear => NoiseSchedule::vp_linear(
                doc.beta_min.unwrap_or(0.1),
                doc.beta_max.unwrap_or(20.0),
                doc.t_min,
                doc.t_max,
            ),
            ScheduleKind::RectifiedFlow => {
                if doc.beta_min.is_some() || doc.beta_max.is_some() {
                    return Err(LabError::Config("beta_min/beta_max only apply to vp-linear schedules".into()));
                }
                NoiseSchedule::rectified_flow(doc.t_min, doc.t_max)
            }
        }
    }
}

impl From<NoiseSchedule> for ScheduleDoc {
    fn from(s: NoiseSchedule) -> Self {
        let vp = s.kind == ScheduleKind::VpLinear;
        ScheduleDoc {
            kind: s.kind,
            beta_min: vp.then_some(s.beta_min),
            beta_max: vp.then_some(s.beta_max),
            t_min: s.t_min,
            t_max: s.t_max,
        }
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::vp_linear(0.1, 20.0, 1e-3, 1.0).expect("default schedule is valid")
    }
}

impl NoiseSchedule {
    pub fn vp_linear(beta_min: f64, beta_max: f64, t_min: f64, t_max: f64) -> Result<Self> {
        if !(beta_min > 0.0 && beta_max > 0.0 && beta_max.is_finite()) {
            return Err(LabError::Config(format!(
                "vp-linear betas must be positive and finite (got {beta_min}, {beta_max})"
            )));
        }
        if beta_max < beta_min {
            return Err(LabError::Config(format!("beta_max {beta_max} below beta_min {beta_min}")));
        }
        check_interval(t_min, t_max, 1.0)?;
        Ok(Self { kind: ScheduleKind::VpLinear, beta_min, beta_max, t_min, t_max })
    }

    /// `alpha = 1 - t`, `sigma = t`. `t_max` must stay below 1 so `alpha > 0`.
    pub fn rectified_flow(t_min: f64, t_max: f64) -> Result<Self> {
        if t_max >= 1.0 {
            return Err(LabError::Config(format!("rectified-flow requires t_max < 1 (got {t_max})")));
        }
        check_interval(t_min, t_max, 1.0)?;
        Ok(Self { kind: ScheduleKind::RectifiedFlow, beta_min: 0.0, beta_max: 0.0, t_min, t_max })
    }

    pub fn default_rectified_flow() -> Self {
        Self::rectified_flow(1e-3, 1.0 - 1e-3).expect("valid")
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }
    pub fn t_min(&self) -> f64 {
        self.t_min
    }
    pub fn t_max(&self) -> f64 {
        self.t_max
    }
    pub fn beta_min(&self) -> f64 {
        self.beta_min
    }
    pub fn beta_max(&self) -> f64 {
        self.beta_max
    }

    pub fn check_domain(&self, t: f64) -> Result<()> {
        if t.is_finite() && t >= self.t_min - DOMAIN_SLACK && t <= self.t_max + DOMAIN_SLACK {
            Ok(())
        } else {
            Err(LabError::Domain { t, t_min: self.t_min, t_max: self.t_max })
        }
    }

    fn log_alpha(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::VpLinear => -0.25 * t * t * (self.beta_max - self.beta_min) - 0.5 * t * self.beta_min,
            ScheduleKind::RectifiedFlow => (1.0 - t).ln(),
        }
    }

    pub fn alpha_sigma(&self, t: f64) -> Result<(f64, f64)> {
        self.check_domain(t)?;
        Ok(self.alpha_sigma_unchecked(t))
    }

    pub(crate) fn alpha_sigma_unchecked(&self, t: f64) -> (f64, f64) {
        match self.kind {
            ScheduleKind::VpLinear => {
                let la = self.log_alpha(t);
                // 1 - alpha^2 without cancellation near t = 0.
                (la.exp(), (-(2.0 * la).exp_m1()).sqrt())
            }
            ScheduleKind::RectifiedFlow => (1.0 - t, t),
        }
    }

    pub fn alpha(&self, t: f64) -> Result<f64> {
        Ok(self.alpha_sigma(t)?.0)
    }

    pub fn noise_ratio(&self, t: f64) -> Result<f64> {
        let (a, s) = self.alpha_sigma(t)?;
        Ok(s / a)
    }

    /// Inverse of `noise_ratio` on `[t_min, t_max]`, clamped into the domain.
    pub fn t_of_n(&self, n: f64) -> Result<f64> {
        if !(n.is_finite() && n > 0.0) {
            return Err(LabError::Numeric(format!("noise ratio {n} has no preimage")));
        }
        let t = match self.kind {
            ScheduleKind::VpLinear => {
                // alpha^2 = 1 / (1 + n^2)  =>  a t^2 + b t - c = 0
                let a = 0.25 * (self.beta_max - self.beta_min);
                let b = 0.5 * self.beta_min;
                let c = 0.5 * n.mul_add(n, 0.0).ln_1p();
                if a == 0.0 {
                    c / b
                } else {
                    // Stable root of a t^2 + b t - c for c >= 0.
                    2.0 * c / (b + (b * b + 4.0 * a * c).sqrt())
                }
            }
            ScheduleKind::RectifiedFlow => n / (1.0 + n),
        };
        let lo = self.t_min - DOMAIN_SLACK;
        let hi = self.t_max + DOMAIN_SLACK;
        if t < lo - 1e-9 || t > hi + 1e-9 {
            return Err(LabError::Domain { t, t_min: self.t_min, t_max: self.t_max });
        }
        Ok(t.clamp(self.t_min, self.t_max))
    }

    /// Normalizes `t` to `[0, 1]` over the schedule domain.
    pub fn normalize_time(&self, t: f64) -> f64 {
        (t - self.t_min) / (self.t_max - self.t_min)
    }
}

fn check_interval(t_min: f64, t_max: f64, upper: f64) -> Result<()> {
    if !(t_min > 0.0 && t_min < t_max && t_max <= upper && t_min.is_finite()) {
        return Err(LabError::Config(format!(
            "invalid time domain [{t_min}, {t_max}]: need 0 < t_min < t_max <= {upper}"
        )));
    }
    Ok(())
}
