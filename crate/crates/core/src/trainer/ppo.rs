//! Rollouts and the clipped-surrogate policy update.
//!
//! A rollout samples one weight vector per transition, integrates the
//! trajectory with those weights and scores the final state against the
//! entry's reference. The per-rollout log-probability is the sum over
//! transitions, and the scalar advantage of a rollout is shared by all of
//! its transitions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{sample_trajectory, CoefficientProvider, StepContext};
use crate::error::{LabError, Result};
use crate::grid::StepGrid;
use crate::mixture::MixtureModel;
use crate::optim::Adam;
use crate::policy::PolicyParams;
use crate::rng::stream_rng;
use crate::schedule::NoiseSchedule;
use crate::trainer::reward::{normalize_advantage, reward, RewardKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchMode {
    /// One entry replicated `B` times per iteration.
    Replicate,
    /// `B` distinct entries per iteration.
    Distinct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub ppo_epochs: usize,
    pub adv_delta: f64,
    pub reward: RewardKind,
    pub batch_mode: BatchMode,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            learning_rate: 1e-4,
            iterations: 3000,
            batch_size: 80,
            ppo_epochs: 4,
            adv_delta: 1e-8,
            reward: RewardKind::Psnr,
            batch_mode: BatchMode::Replicate,
            checkpoint_every: 100,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(LabError::Config(format!("clip_eps {} outside (0, 1)", self.clip_eps)));
        }
        if !(self.adv_delta > 0.0) {
            return Err(LabError::Config("adv_delta must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(LabError::Config("learning_rate must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(LabError::Config("batch size must be at least 2".into()));
        }
        if self.ppo_epochs == 0 {
            return Err(LabError::Config("ppo_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Replays fixed per-transition weight rows (already truncated to the
/// effective order).
pub(crate) struct ReplayProvider<'a> {
    pub rows: &'a [Vec<f64>],
    pub order: usize,
}

impl CoefficientProvider for ReplayProvider<'_> {
    fn id(&self) -> &str {
        "replay"
    }
    fn order(&self) -> usize {
        self.order
    }
    fn effective_order(&self, index: usize) -> usize {
        self.rows.get(index).map_or(1, Vec::len)
    }
    fn weights(&self, ctx: &StepContext<'_>) -> Result<Vec<f64>> {
        Ok(self.rows[ctx.index].clone())
    }
}

/// Effective order per transition under the warm-up rule.
pub fn warmup_orders(order: usize, steps: usize) -> Vec<usize> {
    (0..steps).map(|i| (i + 1).min(order)).collect()
}

/// The inputs a rollout needs from a dataset entry.
#[derive(Debug, Clone, Copy)]
pub struct RolloutTarget<'a> {
    pub entry_index: usize,
    pub model: &'a MixtureModel,
    pub z: &'a [f64],
    pub x_gt: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub entry_index: Vec<usize>,
    /// `B x K x m` sampled weights (full policy width).
    pub actions: Vec<Vec<Vec<f64>>>,
    /// Entries of each action that enter the update and the log-probability.
    pub used: Vec<usize>,
    pub old_logprobs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub previews: Vec<Vec<f64>>,
    pub nfe: Vec<usize>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }
    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Samples `targets.len()` stochastic trajectories under `policy`.
/// Rollout `b` draws from the stream `(seed, b)`, so results do not depend
/// on thread scheduling.
pub fn rollout(
    policy: &PolicyParams,
    schedule: &NoiseSchedule,
    grid: &StepGrid,
    targets: &[RolloutTarget<'_>],
    kind: RewardKind,
    seed: u64,
) -> Result<RolloutBatch> {
    if targets.len() < 2 {
        return Err(LabError::Contract("a rollout batch needs B >= 2".into()));
    }
    let times = grid.times();
    let steps = grid.steps();
    let used = warmup_orders(policy.order(), steps);
    let means: Vec<Vec<f64>> = (0..steps).map(|i| policy.forward(times[i], times[i + 1])).collect::<Result<_>>()?;

    struct One {
        actions: Vec<Vec<f64>>,
        logprob: f64,
        reward: f64,
        preview: Vec<f64>,
        nfe: usize,
    }

    let results: Vec<One> = targets
        .par_iter()
        .enumerate()
        .map(|(b, target)| -> Result<One> {
            let mut rng = stream_rng(seed, &[b as u64]);
            let mut actions = Vec::with_capacity(steps);
            let mut logprob = 0.0;
            for i in 0..steps {
                let a = policy.sample_around(means[i].clone(), used[i], &mut rng)?;
                logprob += a.logprob;
                actions.push(a.weights);
            }
            let rows: Vec<Vec<f64>> = actions.iter().zip(&used).map(|(a, &m)| a[..m].to_vec()).collect();
            let provider = ReplayProvider { rows: &rows, order: policy.order() };
            let run = sample_trajectory(target.model, schedule, grid, &provider, target.z)
                .map_err(|e| LabError::Solver { step: b, reason: format!("rollout {b}: {e}") })?;
            let preview = run.final_x().to_vec();
            let r = reward(kind, &preview, target.x_gt)?;
            if !r.is_finite() {
                return Err(LabError::Numeric(format!("rollout {b} produced reward {r}")));
            }
            Ok(One { actions, logprob, reward: r, preview, nfe: run.nfe })
        })
        .collect::<Result<_>>()?;

    let mut batch = RolloutBatch {
        entry_index: targets.iter().map(|t| t.entry_index).collect(),
        actions: Vec::with_capacity(results.len()),
        used,
        old_logprobs: Vec::with_capacity(results.len()),
        rewards: Vec::with_capacity(results.len()),
        previews: Vec::with_capacity(results.len()),
        nfe: Vec::with_capacity(results.len()),
    };
    for one in results {
        batch.actions.push(one.actions);
        batch.old_logprobs.push(one.logprob);
        batch.rewards.push(one.reward);
        batch.previews.push(one.preview);
        batch.nfe.push(one.nfe);
    }
    Ok(batch)
}

/// Summed log-probabilities of every rollout's stored actions under `policy`.
pub fn batch_logprobs(policy: &PolicyParams, grid: &StepGrid, batch: &RolloutBatch) -> Result<Vec<f64>> {
    let times = grid.times();
    let mut out = vec![0.0; batch.len()];
    for (i, &m) in batch.used.iter().enumerate() {
        let mean = policy.forward(times[i], times[i + 1])?;
        for (lp, acts) in out.iter_mut().zip(&batch.actions) {
            *lp += policy.logprob_at(&mean, &acts[i], m);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateGradient {
    pub grad: Vec<f64>,
    pub ratios: Vec<f64>,
    /// Rollouts whose clipped branch is active (zero gradient).
    pub clipped: Vec<bool>,
    pub objective: f64,
}

/// Gradient of `mean_b min(r_b A_b, clip(r_b, 1 - eps, 1 + eps) A_b)`.
pub fn surrogate_gradient(
    policy: &PolicyParams,
    grid: &StepGrid,
    batch: &RolloutBatch,
    advantages: &[f64],
    clip_eps: f64,
) -> Result<SurrogateGradient> {
    let b = batch.len();
    let logp = batch_logprobs(policy, grid, batch)?;
    let mut ratios = Vec::with_capacity(b);
    let mut clipped = Vec::with_capacity(b);
    let mut coefs = Vec::with_capacity(b);
    let mut objective = 0.0;
    for k in 0..b {
        let r = (logp[k] - batch.old_logprobs[k]).exp();
        let a = advantages[k];
        let rc = r.clamp(1.0 - clip_eps, 1.0 + clip_eps);
        objective += (r * a).min(rc * a) / b as f64;
        let saturated = (a > 0.0 && r > 1.0 + clip_eps) || (a < 0.0 && r < 1.0 - clip_eps);
        ratios.push(r);
        clipped.push(saturated);
        coefs.push(if saturated { 0.0 } else { a * r / b as f64 });
    }
    let mut grad = vec![0.0; policy.num_params()];
    let times = grid.times();
    for (i, &m) in batch.used.iter().enumerate() {
        let pairs: Vec<(&[f64], f64)> = batch
            .actions
            .iter()
            .zip(&coefs)
            .filter(|(_, c)| **c != 0.0)
            .map(|(acts, &c)| (acts[i].as_slice(), c))
            .collect();
        if pairs.is_empty() {
            continue;
        }
        policy.accumulate_grad_shared_input(times[i], times[i + 1], &pairs, m, &mut grad)?;
    }
    Ok(SurrogateGradient { grad, ratios, clipped, objective })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoStats {
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub mean_reward: f64,
    pub max_reward: f64,
}

/// Runs `ppo_epochs` Adam ascent steps on the clipped surrogate. On a
/// non-finite gradient the parameters are restored and an error returned.
pub fn ppo_update(
    policy: &mut PolicyParams,
    optimizer: &mut Adam,
    grid: &StepGrid,
    batch: &RolloutBatch,
    config: &PpoConfig,
) -> Result<PpoStats> {
    let advantages = normalize_advantage(&batch.rewards, config.adv_delta);
    let mean_reward = batch.rewards.iter().sum::<f64>() / batch.len() as f64;
    let max_reward = batch.rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if advantages.iter().all(|a| *a == 0.0) {
        return Ok(PpoStats { mean_ratio: 1.0, clip_fraction: 0.0, mean_reward, max_reward });
    }
    let snapshot = policy.flat();
    let optimizer_snapshot = optimizer.clone();
    let mut ratio_sum = 0.0;
    let mut clipped = 0usize;
    let mut flat = snapshot.clone();
    for epoch in 0..config.ppo_epochs {
        let sg = surrogate_gradient(policy, grid, batch, &advantages, config.clip_eps)?;
        if sg.grad.iter().any(|g| !g.is_finite()) {
            policy.set_flat(&snapshot)?;
            *optimizer = optimizer_snapshot;
            return Err(LabError::Numeric(format!("non-finite policy gradient in epoch {epoch}")));
        }
        ratio_sum += sg.ratios.iter().sum::<f64>();
        clipped += sg.ratios.iter().filter(|r| (**r - 1.0).abs() > config.clip_eps).count();
        optimizer.ascend(&mut flat, &sg.grad);
        policy.set_flat(&flat)?;
    }
    let total = (config.ppo_epochs * batch.len()) as f64;
    Ok(PpoStats { mean_ratio: ratio_sum / total, clip_fraction: clipped as f64 / total, mean_reward, max_reward })
}
