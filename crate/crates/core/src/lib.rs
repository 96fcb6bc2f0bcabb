//! Learnable explicit multistep solvers for the probability-flow ODE,
//! verified against Gaussian-mixture testbeds with exact noise predictors.
//!
//! The crate is organized bottom-up:
//!
//! - [`schedule`], [`mixture`]: noise schedules and closed-form `eps(x, t)`.
//! - [`grid`], [`engine`], [`providers`], [`reference`]: timestep grids, the
//!   generic multistep update, classical coefficient sets, and an adaptive
//!   Runge–Kutta reference integrator.
//! - [`policy`], [`optim`]: the MLP coefficient policy and its optimizer.
//! - [`trainer`]: offline datasets, rewards, PPO and trajectory distillation.
//! - [`eval`]: consistency metrics, convergence orders, solver comparison and
//!   the preview-and-refine simulation.

pub mod engine;
pub mod error;
pub mod eval;
pub mod grid;
pub mod mixture;
pub mod optim;
pub mod policy;
pub mod providers;
pub mod reference;
pub mod rng;
pub mod schedule;
pub mod trainer;

pub use engine::{lmm_step, sample_trajectory, CoefficientProvider, DiffusionState, SolverRun, StepContext};
pub use error::{LabError, Result};
pub use grid::{build_grid, GridKind, StepGrid};
pub use mixture::{ConditionSpec, MixtureModel};
pub use policy::{Baseline, PolicyParams, PolicyShape};
pub use providers::{AdamsBashforth, CoefficientTable, Ddim, Dpm2Midpoint, TableProvider};
pub use reference::{reference_solution, ReferenceTolerance};
pub use schedule::{NoiseSchedule, ScheduleKind};
