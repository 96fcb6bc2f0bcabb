//! Gaussian-mixture data distributions with closed-form noise prediction.
//!
//! Under a schedule `(alpha_t, sigma_t)` the marginal of
//! `x_t = alpha_t x_0 + sigma_t z` for `x_0 ~ sum_k pi_k N(mu_k, s_k^2 I)` is
//! `sum_k pi_k N(alpha_t mu_k, (alpha_t^2 s_k^2 + sigma_t^2) I)`, so the
//! noise predictor `eps = -sigma_t grad log p_t` is available exactly.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::rng::{open_uniform, stream_rng};
use crate::schedule::NoiseSchedule;

const SYNTH_STREAM: u64 = 0x6d69_7874; // "mixt"

/// Counts noise-predictor evaluations. Clones start from the current count.
#[derive(Debug, Default)]
pub struct NfeCounter(AtomicU64);

impl NfeCounter {
    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
    pub fn reset(&self) {
        self.0.store(0, Ordering::Relaxed);
    }
    fn bump(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }
}

impl Clone for NfeCounter {
    fn clone(&self) -> Self {
        NfeCounter(AtomicU64::new(self.get()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MixtureDoc {
    dim: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    stds: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "MixtureDoc", into = "MixtureDoc")]
pub struct MixtureModel {
    dim: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    stds: Vec<f64>,
    evals: NfeCounter,
}

impl TryFrom<MixtureDoc> for MixtureModel {
    type Error = LabError;
    fn try_from(d: MixtureDoc) -> Result<Self> {
        MixtureModel::new(d.dim, d.weights, d.means, d.stds)
    }
}

impl From<MixtureModel> for MixtureDoc {
    fn from(m: MixtureModel) -> Self {
        MixtureDoc { dim: m.dim, weights: m.weights, means: m.means, stds: m.stds }
    }
}

impl PartialEq for MixtureModel {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.weights == other.weights && self.means == other.means && self.stds == other.stds
    }
}

/// A conditioning signal: an integer id that selects one synthesized mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConditionSpec {
    pub condition_id: u64,
    pub generator_seed: u64,
}

impl ConditionSpec {
    pub fn new(condition_id: u64, generator_seed: u64) -> Self {
        Self { condition_id, generator_seed }
    }

    /// Synthesizes the mixture for this condition. `components` overrides the
    /// drawn component count when set.
    pub fn model(&self, dim: usize, components: Option<usize>) -> Result<MixtureModel> {
        MixtureModel::synthesize(self.condition_id, self.generator_seed, dim, components)
    }
}

impl MixtureModel {
    pub fn new(dim: usize, weights: Vec<f64>, means: Vec<Vec<f64>>, stds: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(LabError::Config("mixture dimension must be positive".into()));
        }
        let k = weights.len();
        if k == 0 || means.len() != k || stds.len() != k {
            return Err(LabError::Config(format!(
                "mixture needs matching non-empty weights/means/stds (got {}, {}, {})",
                k,
                means.len(),
                stds.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(LabError::Config("mixture weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(LabError::Config(format!("mixture weights sum to {total}, not 1")));
        }
        if stds.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(LabError::Config("component stds must be positive".into()));
        }
        for mu in &means {
            if mu.len() != dim || mu.iter().any(|v| !v.is_finite()) {
                return Err(LabError::Config(format!("component mean must be a finite {dim}-vector")));
            }
        }
        Ok(Self { dim, weights, means, stds, evals: NfeCounter::default() })
    }

    /// Single isotropic Gaussian `N(mean, std^2 I)`.
    pub fn gaussian(mean: Vec<f64>, std: f64) -> Result<Self> {
        Self::new(mean.len(), vec![1.0], vec![mean], vec![std])
    }

    pub fn standard_gaussian(dim: usize) -> Self {
        Self::gaussian(vec![0.0; dim], 1.0).expect("valid")
    }

    /// Two equal-weight components at `+/- offset` along the first axis.
    pub fn symmetric_pair(dim: usize, offset: f64, std: f64) -> Result<Self> {
        let mut a = vec![0.0; dim];
        a[0] = offset;
        let mut b = vec![0.0; dim];
        b[0] = -offset;
        Self::new(dim, vec![0.5, 0.5], vec![a, b], vec![std, std])
    }

    /// Deterministic synthesis rule: K in {2..5}, means uniform in [-4, 4]^D,
    /// stds uniform in [0.3, 1.0], weights from a symmetric Dirichlet(1).
    pub fn synthesize(condition_id: u64, generator_seed: u64, dim: usize, components: Option<usize>) -> Result<Self> {
        let mut rng = stream_rng(generator_seed, &[SYNTH_STREAM, condition_id]);
        let drawn = rng.gen_range(2..=5usize);
        let k = components.unwrap_or(drawn);
        if k == 0 {
            return Err(LabError::Config("component count must be positive".into()));
        }
        let means: Vec<Vec<f64>> = (0..k).map(|_| (0..dim).map(|_| rng.gen_range(-4.0..4.0)).collect()).collect();
        let stds: Vec<f64> = (0..k).map(|_| rng.gen_range(0.3..1.0)).collect();
        let gammas: Vec<f64> = (0..k).map(|_| -open_uniform(&mut rng).ln()).collect();
        let total: f64 = gammas.iter().sum();
        let mut weights: Vec<f64> = gammas.iter().map(|g| g / total).collect();
        // Put the rounding residue on the largest weight.
        let resid = 1.0 - weights.iter().sum::<f64>();
        let imax = (0..k).max_by(|&a, &b| weights[a].total_cmp(&weights[b])).unwrap_or(0);
        weights[imax] += resid;
        Self::new(dim, weights, means, stds)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }
    pub fn stds(&self) -> &[f64] {
        &self.stds
    }
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    /// Number of `epsilon` evaluations since construction or last reset.
    pub fn nfe(&self) -> u64 {
        self.evals.get()
    }
    pub fn reset_nfe(&self) {
        self.evals.reset()
    }

    /// Per-component log joint terms `log pi_k + log N(x; alpha mu_k, v_k I)`
    /// and the squared-distance pieces needed by the score.
    fn component_terms(&self, alpha: f64, sigma: f64, x: &[f64]) -> Vec<(f64, f64)> {
        let d = self.dim as f64;
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.stds)
            .map(|((pi, mu), s)| {
                let v = alpha * alpha * s * s + sigma * sigma;
                let sq: f64 = x.iter().zip(mu).map(|(xi, mi)| (xi - alpha * mi).powi(2)).sum();
                let logw = pi.ln() - 0.5 * d * (std::f64::consts::TAU * v).ln() - 0.5 * sq / v;
                (logw, v)
            })
            .collect()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(LabError::Contract(format!("state has dimension {}, model expects {}", x.len(), self.dim)));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(LabError::Numeric("non-finite state passed to noise predictor".into()));
        }
        Ok(())
    }

    /// `log p_t(x)` of the diffused marginal.
    pub fn marginal_logdensity(&self, schedule: &NoiseSchedule, x: &[f64], t: f64) -> Result<f64> {
        self.check_input(x)?;
        let (alpha, sigma) = schedule.alpha_sigma(t)?;
        let terms = self.component_terms(alpha, sigma, x);
        let lse = log_sum_exp(terms.iter().map(|(l, _)| *l));
        if !lse.is_finite() {
            return Err(LabError::Numeric(format!("log-density not finite at t={t}")));
        }
        Ok(lse)
    }

    /// Exact noise prediction `eps(x, t) = -sigma_t grad_x log p_t(x)`.
    /// Counts one evaluation.
    pub fn epsilon(&self, schedule: &NoiseSchedule, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let (alpha, sigma) = schedule.alpha_sigma(t)?;
        self.evals.bump();
        let terms = self.component_terms(alpha, sigma, x);
        let lse = log_sum_exp(terms.iter().map(|(l, _)| *l));
        let mut eps = vec![0.0; self.dim];
        for ((logw, v), mu) in terms.iter().zip(&self.means) {
            let r = (logw - lse).exp();
            if r == 0.0 {
                continue;
            }
            let scale = sigma * r / v;
            for ((e, xi), mi) in eps.iter_mut().zip(x).zip(mu) {
                *e += scale * (xi - alpha * mi);
            }
        }
        if !lse.is_finite() || eps.iter().any(|e| !e.is_finite()) {
            return Err(LabError::Numeric(format!("noise prediction overflow at t={t}")));
        }
        Ok(eps)
    }
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}
