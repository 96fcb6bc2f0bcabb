//! Run configuration: a sectioned TOML file where every key has a default.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use pfode_lab::trainer::{PpoConfig, RewardKind};
use pfode_lab::{GridKind, NoiseSchedule, ReferenceTolerance};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelBlock {
    pub dim: usize,
    pub generator_seed: u64,
    /// Fixed component count; omit to draw 2..=5 per condition.
    pub components: Option<usize>,
    pub conditions: u64,
    pub entries: usize,
    /// Index of the first entry; lets a held-out set reuse a config.
    pub first_entry: u64,
}

impl Default for ModelBlock {
    fn default() -> Self {
        Self { dim: 2, generator_seed: 0, components: Some(3), conditions: 10, entries: 2000, first_entry: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridBlock {
    pub kind: GridKind,
    pub steps: usize,
}

impl Default for GridBlock {
    fn default() -> Self {
        Self { kind: GridKind::Uniform, steps: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverBlock {
    pub id: String,
    pub order: usize,
    pub width: usize,
    pub depth: usize,
    pub sum_to_one: bool,
    /// Policy initialization: "ddim" or "ab".
    pub baseline: String,
    pub ridge_lambda: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for SolverBlock {
    fn default() -> Self {
        Self {
            id: "policy".into(),
            order: 4,
            width: 256,
            depth: 3,
            sum_to_one: false,
            baseline: "ddim".into(),
            ridge_lambda: 0.0,
            rel_tol: 1e-9,
            abs_tol: 1e-10,
        }
    }
}

impl SolverBlock {
    pub fn tolerance(&self) -> Result<ReferenceTolerance, CliError> {
        Ok(ReferenceTolerance::new(self.rel_tol, self.abs_tol)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostSource {
    /// Use `cost_overhead_s` and `cost_per_nfe_s` as given.
    Nominal,
    /// Time the sampler on this host before the run.
    Measured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalBlock {
    pub metrics: Vec<RewardKind>,
    pub steps: Vec<usize>,
    /// Satisfaction threshold in dB; omit to calibrate.
    pub tau: Option<f64>,
    pub tau_percentile: f64,
    pub tau_draws: usize,
    pub preview_solver: String,
    pub full_solver: String,
    pub preview_steps: usize,
    pub full_steps: usize,
    pub max_attempts: usize,
    pub order_steps: Vec<usize>,
    pub order_samples: usize,
    pub cost: CostSource,
    pub cost_overhead_s: f64,
    pub cost_per_nfe_s: f64,
}

impl Default for EvalBlock {
    fn default() -> Self {
        Self {
            metrics: vec![RewardKind::Psnr, RewardKind::NegL2, RewardKind::Cosine],
            steps: vec![5, 8, 10],
            tau: None,
            tau_percentile: 0.7,
            tau_draws: 8,
            preview_solver: "policy".into(),
            full_solver: "ab4".into(),
            preview_steps: 8,
            full_steps: 40,
            max_attempts: 10,
            order_steps: vec![8, 16, 32, 64],
            order_samples: 8,
            cost: CostSource::Nominal,
            cost_overhead_s: 1e-6,
            cost_per_nfe_s: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoBlock {
    pub seed: u64,
    /// Parent of the per-config run directories.
    pub run_root: String,
    pub data: Option<String>,
    pub checkpoint: Option<String>,
    pub table: Option<String>,
}

impl Default for IoBlock {
    fn default() -> Self {
        Self { seed: 0, run_root: "runs".into(), data: None, checkpoint: None, table: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct RunConfig {
    pub schedule: NoiseSchedule,
    pub model: ModelBlock,
    pub grid: GridBlock,
    pub solver: SolverBlock,
    pub ppo: PpoConfig,
    pub eval: EvalBlock,
    pub io: IoBlock,
}

/// Environment overrides, applied after the file and before flags.
pub const ENV_RUN_ROOT: &str = "PFODE_RUN_ROOT";
pub const ENV_DATA: &str = "PFODE_DATA";
pub const ENV_CHECKPOINT: &str = "PFODE_CHECKPOINT";
pub const ENV_TABLE: &str = "PFODE_TABLE";

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&std::path::Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    pub fn apply_env(&mut self) {
        let get = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        if let Some(v) = get(ENV_RUN_ROOT) {
            self.io.run_root = v;
        }
        if let Some(v) = get(ENV_DATA) {
            self.io.data = Some(v);
        }
        if let Some(v) = get(ENV_CHECKPOINT) {
            self.io.checkpoint = Some(v);
        }
        if let Some(v) = get(ENV_TABLE) {
            self.io.table = Some(v);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.model.dim == 0 || self.model.conditions == 0 {
            return bad("model.dim and model.conditions must be positive");
        }
        if self.grid.steps == 0 {
            return bad("grid.steps must be positive");
        }
        if self.solver.order == 0 || self.solver.width == 0 || self.solver.depth == 0 {
            return bad("solver.order, solver.width and solver.depth must be positive");
        }
        if self.eval.steps.contains(&0) || self.eval.preview_steps == 0 || self.eval.full_steps == 0 {
            return bad("eval step counts must be positive");
        }
        if !(0.0..=1.0).contains(&self.eval.tau_percentile) {
            return bad("eval.tau_percentile must lie in [0, 1]");
        }
        self.ppo.validate()?;
        self.solver.tolerance()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    /// First 16 hex digits of the SHA-256 of the resolved TOML.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        hex::encode(&digest[..8])
    }
}
