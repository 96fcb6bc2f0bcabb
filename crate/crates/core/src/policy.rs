//! Timestep-conditioned coefficient policy.
//!
//! A small MLP maps the normalized pair `(t_i, t_{i+1})` to the mean of a
//! diagonal Gaussian over the `m` multistep weights. Exploration uses a
//! state-independent learnable `log_std`. Gradients are computed by explicit
//! reverse-mode passes over the cached activations.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::engine::{CoefficientProvider, StepContext};
use crate::error::{LabError, Result};
use crate::grid::StepGrid;
use crate::optim::Adam;
use crate::providers::{adams_bashforth_weights, CoefficientTable, TableProvider};
use crate::rng::{fill_normal, stream_rng};
use crate::schedule::NoiseSchedule;

/// Below this the exploration noise is treated as switched off.
pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const CHECKPOINT_VERSION: u32 = 1;

const HALF_LN_TAU: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    Ddim,
    /// Adams–Bashforth of the policy's own order.
    AdamsBashforth,
}

impl Baseline {
    pub fn parse(id: &str) -> Result<Self> {
        match id {
            "ddim" => Ok(Self::Ddim),
            "ab" | "ab-of-order" | "adams-bashforth" => Ok(Self::AdamsBashforth),
            // `abN` names the policy-order baseline; N itself is checked at init
            s if s.len() > 2 && s.starts_with("ab") && s[2..].parse::<usize>().is_ok() => Ok(Self::AdamsBashforth),
            other => Err(LabError::Config(format!("unknown policy baseline `{other}` (ddim, ab-of-order)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub order: usize,
    pub width: usize,
    pub depth: usize,
    /// Predict `m - 1` free weights and set the last to `1 - sum`.
    pub sum_to_one: bool,
}

impl Default for PolicyShape {
    fn default() -> Self {
        Self { order: 4, width: 256, depth: 3, sum_to_one: false }
    }
}

impl PolicyShape {
    pub fn head_width(&self) -> usize {
        if self.sum_to_one {
            self.order - 1
        } else {
            self.order
        }
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![(2, self.width)];
        dims.extend((1..self.depth).map(|_| (self.width, self.width)));
        dims.push((self.width, self.head_width()));
        dims
    }

    fn validate(&self) -> Result<()> {
        if self.order == 0 || self.width == 0 || self.depth == 0 {
            return Err(LabError::Config(format!(
                "policy needs order, width and depth >= 1 (got {}, {}, {})",
                self.order, self.width, self.depth
            )));
        }
        Ok(())
    }
}

/// Policy parameters: flat MLP weights plus per-dimension exploration log-std.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    shape: PolicyShape,
    t_min: f64,
    t_max: f64,
    /// Layer `l` stores its `out x in` weight matrix row-major, then its bias.
    theta: Vec<f64>,
    log_std: Vec<f64>,
}

/// One stochastic action at a transition.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    pub weights: Vec<f64>,
    pub logprob: f64,
    pub mean: Vec<f64>,
}

struct ForwardCache {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Vec<f64>>,
    mean: Vec<f64>,
}

fn silu(z: f64) -> f64 {
    z / (1.0 + (-z).exp())
}

fn silu_grad(z: f64) -> f64 {
    let s = 1.0 / (1.0 + (-z).exp());
    s * (1.0 + z * (1.0 - s))
}

impl PolicyParams {
    /// Initializes around a classical baseline: small random hidden weights,
    /// zero output weights, output bias equal to the baseline coefficients.
    pub fn init_to_baseline(
        shape: PolicyShape,
        schedule: &NoiseSchedule,
        baseline: Baseline,
        seed: u64,
    ) -> Result<Self> {
        Self::init_with_scale(shape, schedule, baseline, seed, 1e-2)
    }

    pub fn init_with_scale(
        shape: PolicyShape,
        schedule: &NoiseSchedule,
        baseline: Baseline,
        seed: u64,
        hidden_scale: f64,
    ) -> Result<Self> {
        shape.validate()?;
        let target = match baseline {
            Baseline::Ddim => {
                let mut v = vec![0.0; shape.order];
                v[0] = 1.0;
                v
            }
            Baseline::AdamsBashforth => adams_bashforth_weights(shape.order)?,
        };
        let dims = shape.layer_dims();
        let total: usize = dims.iter().map(|(i, o)| i * o + o).sum();
        let mut theta = Vec::with_capacity(total);
        let mut rng = stream_rng(seed, &[0x706f_6c69]);
        let last = dims.len() - 1;
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let mut w = vec![0.0; fan_in * fan_out];
            if l != last {
                fill_normal(&mut rng, &mut w);
                w.iter_mut().for_each(|v| *v *= hidden_scale);
            }
            theta.extend_from_slice(&w);
            if l == last {
                theta.extend_from_slice(&target[..shape.head_width()]);
            } else {
                theta.extend(std::iter::repeat_n(0.0, fan_out));
            }
        }
        Ok(Self {
            shape,
            t_min: schedule.t_min(),
            t_max: schedule.t_max(),
            theta,
            log_std: vec![0.05f64.ln(); shape.order],
        })
    }

    pub fn shape(&self) -> PolicyShape {
        self.shape
    }
    pub fn order(&self) -> usize {
        self.shape.order
    }
    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }
    pub fn set_log_std(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.log_std.len());
        self.log_std.copy_from_slice(values);
    }
    pub fn num_mlp_params(&self) -> usize {
        self.theta.len()
    }
    pub fn num_params(&self) -> usize {
        self.theta.len() + self.log_std.len()
    }

    /// All parameters, MLP first then `log_std`.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.theta.clone();
        v.extend_from_slice(&self.log_std);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(LabError::Contract(format!(
                "flat parameter vector has {} entries, policy has {}",
                flat.len(),
                self.num_params()
            )));
        }
        let (a, b) = flat.split_at(self.theta.len());
        self.theta.copy_from_slice(a);
        self.log_std.copy_from_slice(b);
        Ok(())
    }

    fn check_finite(&self) -> Result<()> {
        if self.theta.iter().chain(&self.log_std).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(LabError::Numeric("policy parameters are not finite".into()))
        }
    }

    fn normalize(&self, t: f64) -> f64 {
        (t - self.t_min) / (self.t_max - self.t_min)
    }

    fn std(&self, j: usize) -> f64 {
        self.log_std[j].clamp(LOG_STD_MIN, LOG_STD_MAX).exp()
    }

    fn forward_cached(&self, t_current: f64, t_next: f64) -> ForwardCache {
        let dims = self.shape.layer_dims();
        let last = dims.len() - 1;
        let mut h = vec![self.normalize(t_current), self.normalize(t_next)];
        let mut inputs = Vec::with_capacity(dims.len());
        let mut pre = Vec::with_capacity(last);
        let mut offset = 0;
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let w = &self.theta[offset..offset + fan_in * fan_out];
            let b = &self.theta[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let z: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    b[o] + row.iter().zip(&h).map(|(a, x)| a * x).sum::<f64>()
                })
                .collect();
            inputs.push(std::mem::take(&mut h));
            if l == last {
                h = z;
            } else {
                h = z.iter().map(|&v| silu(v)).collect();
                pre.push(z);
            }
        }
        let mean = if self.shape.sum_to_one {
            let mut m = h;
            let rest: f64 = m.iter().sum();
            m.push(1.0 - rest);
            m
        } else {
            h
        };
        ForwardCache { inputs, pre, mean }
    }

    /// Policy mean `f_theta(t_i, t_{i+1})`.
    pub fn forward(&self, t_current: f64, t_next: f64) -> Result<Vec<f64>> {
        self.check_finite()?;
        Ok(self.forward_cached(t_current, t_next).mean)
    }

    /// Backpropagates `d objective / d mean` into the MLP parameters,
    /// accumulating into `grad_theta`.
    fn backward_into(&self, cache: &ForwardCache, dmean: &[f64], grad_theta: &mut [f64]) {
        let dims = self.shape.layer_dims();
        let last = dims.len() - 1;
        // Gradient w.r.t. head outputs.
        let mut delta: Vec<f64> = if self.shape.sum_to_one {
            let tail = dmean[self.shape.order - 1];
            dmean[..self.shape.order - 1].iter().map(|d| d - tail).collect()
        } else {
            dmean.to_vec()
        };
        let mut offsets = Vec::with_capacity(dims.len());
        let mut off = 0;
        for &(fan_in, fan_out) in &dims {
            offsets.push(off);
            off += fan_in * fan_out + fan_out;
        }
        for l in (0..dims.len()).rev() {
            let (fan_in, fan_out) = dims[l];
            let off = offsets[l];
            let input = &cache.inputs[l];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad_theta[off + o * fan_in..off + (o + 1) * fan_in];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
                grad_theta[off + fan_in * fan_out + o] += d;
            }
            if l == 0 {
                break;
            }
            let w = &self.theta[off..off + fan_in * fan_out];
            let mut back = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (bi, wv) in back.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                    *bi += d * wv;
                }
            }
            let z = &cache.pre[l - 1];
            debug_assert!(l - 1 < last);
            delta = back.iter().zip(z).map(|(b, &zv)| b * silu_grad(zv)).collect();
        }
    }

    /// Diagonal-Gaussian log-density of the first `used` entries of `weights`.
    pub fn logprob_at(&self, mean: &[f64], weights: &[f64], used: usize) -> f64 {
        (0..used)
            .map(|j| {
                let ls = self.log_std[j].clamp(LOG_STD_MIN, LOG_STD_MAX);
                let r = (weights[j] - mean[j]) / ls.exp();
                -HALF_LN_TAU - ls - 0.5 * r * r
            })
            .sum()
    }

    pub fn logprob(&self, t_current: f64, t_next: f64, weights: &[f64], used: usize) -> Result<f64> {
        let mean = self.forward(t_current, t_next)?;
        self.check_used(weights, used)?;
        Ok(self.logprob_at(&mean, weights, used))
    }

    fn check_used(&self, weights: &[f64], used: usize) -> Result<()> {
        if used == 0 || used > self.order() || weights.len() < used {
            return Err(LabError::Contract(format!(
                "action uses {used} of {} entries; policy order is {}",
                weights.len(),
                self.order()
            )));
        }
        Ok(())
    }

    /// Samples `weights = mean + std * zeta`. The log-probability covers only
    /// the first `used` entries.
    pub fn sample_action<R: RngCore>(
        &self,
        t_current: f64,
        t_next: f64,
        used: usize,
        rng: &mut R,
    ) -> Result<ActionSample> {
        let mean = self.forward(t_current, t_next)?;
        self.sample_around(mean, used, rng)
    }

    /// Samples around a precomputed mean (the policy ignores the state, so
    /// one forward pass serves a whole batch at a given transition).
    pub fn sample_around<R: RngCore>(&self, mean: Vec<f64>, used: usize, rng: &mut R) -> Result<ActionSample> {
        self.check_used(&mean, used)?;
        let mut zeta = vec![0.0; self.order()];
        fill_normal(rng, &mut zeta);
        let weights: Vec<f64> = mean
            .iter()
            .zip(&zeta)
            .enumerate()
            .map(|(j, (mu, z))| if self.log_std[j] <= LOG_STD_MIN { *mu } else { mu + self.std(j) * z })
            .collect();
        let logprob = self.logprob_at(&mean, &weights, used);
        Ok(ActionSample { weights, logprob, mean })
    }

    /// Adds `scale * grad log pi(weights | t_i, t_{i+1})` into `grad`
    /// (layout of [`PolicyParams::flat`]). Entries past `used` do not contribute.
    pub fn accumulate_grad_logprob(
        &self,
        t_current: f64,
        t_next: f64,
        weights: &[f64],
        used: usize,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        self.check_used(weights, used)?;
        self.check_finite()?;
        let cache = self.forward_cached(t_current, t_next);
        let (dmean, dlog) = self.mean_and_logstd_grads(&cache.mean, weights, used, scale);
        let n = self.theta.len();
        self.backward_into(&cache, &dmean, &mut grad[..n]);
        for (g, d) in grad[n..].iter_mut().zip(dlog) {
            *g += d;
        }
        Ok(())
    }

    fn mean_and_logstd_grads(&self, mean: &[f64], weights: &[f64], used: usize, scale: f64) -> (Vec<f64>, Vec<f64>) {
        let mut dmean = vec![0.0; self.order()];
        let mut dlog = vec![0.0; self.order()];
        for j in 0..used {
            let ls = self.log_std[j];
            let clamped = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
            let var = (2.0 * clamped).exp();
            let diff = weights[j] - mean[j];
            dmean[j] = scale * diff / var;
            if ls > LOG_STD_MIN && ls < LOG_STD_MAX {
                dlog[j] = scale * (diff * diff / var - 1.0);
            }
        }
        (dmean, dlog)
    }

    /// Exact gradient of the log-density with respect to every parameter.
    pub fn grad_logprob(&self, t_current: f64, t_next: f64, weights: &[f64], used: usize) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.num_params()];
        self.accumulate_grad_logprob(t_current, t_next, weights, used, 1.0, &mut grad)?;
        Ok(grad)
    }

    /// Gradient of `sum_k c_k log pi(a_k | x)` for many actions sharing one
    /// input `(t_i, t_{i+1})`: one forward and one backward pass in total.
    pub fn accumulate_grad_shared_input(
        &self,
        t_current: f64,
        t_next: f64,
        actions: &[(&[f64], f64)],
        used: usize,
        grad: &mut [f64],
    ) -> Result<()> {
        self.check_finite()?;
        let cache = self.forward_cached(t_current, t_next);
        let mut dmean = vec![0.0; self.order()];
        let n = self.theta.len();
        for &(w, c) in actions {
            self.check_used(w, used)?;
            let (dm, dl) = self.mean_and_logstd_grads(&cache.mean, w, used, c);
            dmean.iter_mut().zip(dm).for_each(|(a, b)| *a += b);
            grad[n..].iter_mut().zip(dl).for_each(|(a, b)| *a += b);
        }
        self.backward_into(&cache, &dmean, &mut grad[..n]);
        Ok(())
    }

    /// Mean coefficients for every transition of `grid`.
    pub fn export_coeff_table(&self, schedule: &NoiseSchedule, grid: &StepGrid) -> Result<CoefficientTable> {
        let t = grid.times();
        let weights = (0..grid.steps()).map(|i| self.forward(t[i], t[i + 1])).collect::<Result<Vec<_>>>()?;
        Ok(CoefficientTable { schedule: schedule.clone(), times: t.to_vec(), order: self.order(), weights })
    }

    pub fn to_checkpoint(&self) -> PolicyCheckpoint {
        PolicyCheckpoint {
            version: CHECKPOINT_VERSION,
            order: self.shape.order,
            width: self.shape.width,
            depth: self.shape.depth,
            sum_to_one: self.shape.sum_to_one,
            t_min: self.t_min,
            t_max: self.t_max,
            layer_shapes: self.shape.layer_dims().iter().map(|&(i, o)| [o, i]).collect(),
            theta: self.theta.clone(),
            log_std: self.log_std.clone(),
            trainer: None,
        }
    }
}

/// Imports a coefficient table as a deterministic provider.
pub fn import_coeff_table(doc: &str) -> Result<TableProvider> {
    TableProvider::new(CoefficientTable::from_json(doc)?, "distill-table")
}

/// Runs the policy at its mean action.
#[derive(Debug, Clone)]
pub struct PolicyMeanProvider {
    params: PolicyParams,
}

impl PolicyMeanProvider {
    pub fn new(params: PolicyParams) -> Self {
        Self { params }
    }
    pub fn params(&self) -> &PolicyParams {
        &self.params
    }
}

impl CoefficientProvider for PolicyMeanProvider {
    fn id(&self) -> &str {
        "policy"
    }
    fn order(&self) -> usize {
        self.params.order()
    }
    fn weights(&self, ctx: &StepContext<'_>) -> Result<Vec<f64>> {
        let mut w = self.params.forward(ctx.t_current(), ctx.t_next())?;
        w.truncate(ctx.effective_order);
        Ok(w)
    }
}

/// Optimizer and loop position saved alongside the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub iteration: usize,
    pub optimizer: Adam,
}

/// Versioned JSON checkpoint with flat parameter arrays and shape metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyCheckpoint {
    pub version: u32,
    pub order: usize,
    pub width: usize,
    pub depth: usize,
    pub sum_to_one: bool,
    pub t_min: f64,
    pub t_max: f64,
    /// `[out, in]` per layer.
    pub layer_shapes: Vec<[usize; 2]>,
    pub theta: Vec<f64>,
    pub log_std: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trainer: Option<TrainerState>,
}

impl PolicyCheckpoint {
    pub fn into_params(self) -> Result<PolicyParams> {
        if self.version != CHECKPOINT_VERSION {
            return Err(LabError::Parse {
                location: "version".into(),
                reason: format!("unsupported checkpoint version {}", self.version),
            });
        }
        let shape =
            PolicyShape { order: self.order, width: self.width, depth: self.depth, sum_to_one: self.sum_to_one };
        shape.validate()?;
        let expected: Vec<[usize; 2]> = shape.layer_dims().iter().map(|&(i, o)| [o, i]).collect();
        if expected != self.layer_shapes {
            return Err(LabError::Parse {
                location: "layer_shapes".into(),
                reason: "layer shapes disagree with order/width/depth".into(),
            });
        }
        let total: usize = expected.iter().map(|[o, i]| o * i + o).sum();
        if self.theta.len() != total {
            return Err(LabError::Parse {
                location: "theta".into(),
                reason: format!("expected {total} values, found {}", self.theta.len()),
            });
        }
        if self.log_std.len() != self.order {
            return Err(LabError::Parse {
                location: "log_std".into(),
                reason: format!("expected {} values, found {}", self.order, self.log_std.len()),
            });
        }
        let params =
            PolicyParams { shape, t_min: self.t_min, t_max: self.t_max, theta: self.theta, log_std: self.log_std };
        params.check_finite()?;
        Ok(params)
    }

    pub fn from_json(doc: &str) -> Result<Self> {
        serde_json::from_str(doc).map_err(|e| LabError::Parse {
            location: format!("line {} column {}", e.line(), e.column()),
            reason: e.to_string(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}
