//! Offline data, rewards, PPO training and trajectory distillation.

pub mod dataset;
pub mod distill;
pub mod ppo;
pub mod reward;

use rand::Rng;

use crate::error::{LabError, Result};
use crate::grid::StepGrid;
use crate::optim::Adam;
use crate::policy::{PolicyCheckpoint, PolicyParams, TrainerState};
use crate::rng::{derive_seed, stream_rng};

pub use dataset::{build_dataset, entry_pairs, DatasetEntry, DatasetManifest, OfflineDataset, SynthesisSpec};
pub use distill::{distill_coeffs, DistillReport};
pub use ppo::{ppo_update, rollout, BatchMode, PpoConfig, PpoStats, RolloutBatch, RolloutTarget};
pub use reward::{normalize_advantage, reward, RewardKind};

pub const TRAIN_LOG_HEADER: &str = "iter,entry,mean_reward,max_reward,clip_frac,log_std_mean";

const ENTRY_STREAM: u64 = 0x656e_7472;
const ROLLOUT_STREAM: u64 = 0x726f_6c6c;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogRow {
    pub iter: usize,
    pub entry: usize,
    pub mean_reward: f64,
    pub max_reward: f64,
    pub clip_frac: f64,
    pub log_std_mean: f64,
}

impl TrainLogRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.iter, self.entry, self.mean_reward, self.max_reward, self.clip_frac, self.log_std_mean
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub log: Vec<TrainLogRow>,
    pub state: TrainerState,
}

impl TrainOutcome {
    pub fn checkpoint(&self) -> PolicyCheckpoint {
        let mut ck = self.params.to_checkpoint();
        ck.trainer = Some(self.state.clone());
        ck
    }

    pub fn log_csv(&self) -> String {
        let mut out = String::from(TRAIN_LOG_HEADER);
        out.push('\n');
        for row in &self.log {
            out.push_str(&row.csv_line());
            out.push('\n');
        }
        out
    }
}

/// Picks the entries for one iteration.
fn iteration_entries(config: &PpoConfig, dataset_len: usize, iteration: usize) -> Vec<usize> {
    let mut rng = stream_rng(config.seed, &[ENTRY_STREAM, iteration as u64]);
    match config.batch_mode {
        BatchMode::Replicate => vec![rng.gen_range(0..dataset_len); config.batch_size],
        BatchMode::Distinct => (0..config.batch_size).map(|_| rng.gen_range(0..dataset_len)).collect(),
    }
}

/// PPO training loop. `resume` continues from a saved iteration and
/// optimizer state; `on_checkpoint` fires every `checkpoint_every` iterations.
pub fn train(
    mut policy: PolicyParams,
    dataset: &OfflineDataset,
    grid: &StepGrid,
    config: &PpoConfig,
    resume: Option<TrainerState>,
    mut on_checkpoint: impl FnMut(&PolicyCheckpoint) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(LabError::Config("training dataset is empty".into()));
    }
    let schedule = dataset.schedule();
    let (start, mut optimizer) = match resume {
        Some(state) => {
            if state.optimizer.len() != policy.num_params() {
                return Err(LabError::Config("resume state does not match the policy's parameter count".into()));
            }
            (state.iteration, state.optimizer)
        }
        None => (0, Adam::new(policy.num_params(), config.learning_rate)),
    };
    optimizer.learning_rate = config.learning_rate;
    let mut log = Vec::with_capacity(config.iterations.saturating_sub(start));

    for iter in start..config.iterations {
        let picks = iteration_entries(config, dataset.len(), iter);
        let targets: Vec<RolloutTarget<'_>> = picks
            .iter()
            .map(|&k| {
                let e = &dataset.entries[k];
                RolloutTarget { entry_index: k, model: dataset.model_for(k), z: &e.z, x_gt: &e.x_gt }
            })
            .collect();
        let wrap = |e: LabError| LabError::Training { iteration: iter, source: Box::new(e) };
        let seed = derive_seed(config.seed, &[ROLLOUT_STREAM, iter as u64]);
        let batch = rollout(&policy, schedule, grid, &targets, config.reward, seed).map_err(wrap)?;
        let stats = ppo_update(&mut policy, &mut optimizer, grid, &batch, config).map_err(wrap)?;
        let ls = policy.log_std();
        log.push(TrainLogRow {
            iter,
            entry: picks[0],
            mean_reward: stats.mean_reward,
            max_reward: stats.max_reward,
            clip_frac: stats.clip_fraction,
            log_std_mean: ls.iter().sum::<f64>() / ls.len() as f64,
        });
        if config.checkpoint_every > 0 && (iter + 1) % config.checkpoint_every == 0 {
            let mut ck = policy.to_checkpoint();
            ck.trainer = Some(TrainerState { iteration: iter + 1, optimizer: optimizer.clone() });
            on_checkpoint(&ck)?;
        }
    }

    let iteration = config.iterations.max(start);
    Ok(TrainOutcome { params: policy, log, state: TrainerState { iteration, optimizer } })
}
