//! Evaluation: consistency metrics, convergence orders, solver comparison
//! and the preview-and-refine simulation.

pub mod compare;
pub mod metrics;
pub mod order;
pub mod preview;
pub mod report;

use std::sync::Arc;
use std::time::Instant;

use crate::engine::{sample_trajectory, CoefficientProvider};
use crate::error::{LabError, Result};
use crate::grid::StepGrid;
use crate::mixture::MixtureModel;
use crate::policy::{PolicyMeanProvider, PolicyParams};
use crate::providers::{AdamsBashforth, CoefficientTable, Ddim, Dpm2Midpoint, TableProvider, SOLVER_IDS};
use crate::reference::{reference_solution, ReferenceTolerance};
use crate::schedule::NoiseSchedule;

pub use compare::{compare_solvers, CompareRow, COMPARE_HEADER};
pub use metrics::energy_distance;
pub use order::{convergence_order, OrderEstimate};
pub use preview::{calibrate_tau, preview_simulation, PreviewConfig, PreviewOutcome, PreviewSimResult};
pub use report::{consistency_report, ConsistencyReport, EntryMetrics, MetricSummary};

/// A sampler under evaluation.
#[derive(Clone)]
pub enum Solver {
    /// Adaptive reference integration (ignores the step grid).
    Reference(ReferenceTolerance),
    Multistep(Arc<dyn CoefficientProvider>),
}

impl std::fmt::Debug for Solver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Solver({})", self.id())
    }
}

/// Output of one solver invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOutput {
    pub x: Vec<f64>,
    pub nfe: usize,
}

impl Solver {
    pub fn id(&self) -> String {
        match self {
            Solver::Reference(_) => "reference".into(),
            Solver::Multistep(p) => p.id().to_string(),
        }
    }

    pub fn provider(p: impl CoefficientProvider + 'static) -> Self {
        Solver::Multistep(Arc::new(p))
    }

    /// Grid actually integrated for a base grid (midpoints added when required).
    pub fn effective_grid(&self, schedule: &NoiseSchedule, base: &StepGrid) -> Result<StepGrid> {
        match self {
            Solver::Multistep(p) if p.needs_midpoints() && !base.is_augmented() => base.with_midpoints(schedule),
            _ => Ok(base.clone()),
        }
    }

    pub fn run(
        &self,
        model: &MixtureModel,
        schedule: &NoiseSchedule,
        grid: &StepGrid,
        z: &[f64],
    ) -> Result<SolverOutput> {
        match self {
            Solver::Reference(tol) => {
                let run = reference_solution(model, schedule, z, *tol)?;
                Ok(SolverOutput { x: run.final_x().to_vec(), nfe: run.nfe })
            }
            Solver::Multistep(p) => {
                let g = self.effective_grid(schedule, grid)?;
                let run = sample_trajectory(model, schedule, &g, p.as_ref(), z)?;
                Ok(SolverOutput { x: run.final_x().to_vec(), nfe: run.nfe })
            }
        }
    }
}

/// Resolves a solver id. `policy` and `table` back the "policy" and
/// "distill-table" ids.
pub fn resolve_solver(
    id: &str,
    policy: Option<&PolicyParams>,
    table: Option<&CoefficientTable>,
    reference: ReferenceTolerance,
) -> Result<Solver> {
    let unknown = || LabError::UnknownSolver { id: id.to_string(), known: SOLVER_IDS.join(", ") };
    Ok(match id {
        "ddim" => Solver::provider(Ddim),
        "ab1" | "ab2" | "ab3" | "ab4" => {
            Solver::provider(AdamsBashforth::new(id[2..].parse().map_err(|_| unknown())?)?)
        }
        "dpm2" => Solver::provider(Dpm2Midpoint),
        "policy" => {
            let p = policy.ok_or_else(|| LabError::Config("solver `policy` needs a policy checkpoint".into()))?;
            Solver::provider(PolicyMeanProvider::new(p.clone()))
        }
        "distill-table" => {
            let t = table.ok_or_else(|| LabError::Config("solver `distill-table` needs a coefficient table".into()))?;
            Solver::provider(TableProvider::new(t.clone(), "distill-table")?)
        }
        "reference" => Solver::Reference(reference),
        _ => return Err(unknown()),
    })
}

/// Affine cost model: `seconds = a + b * NFE` per sampler invocation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CostModel {
    pub overhead_s: f64,
    pub per_nfe_s: f64,
}

impl Default for CostModel {
    /// Nominal values; use [`CostModel::calibrate`] for host measurements.
    fn default() -> Self {
        Self { overhead_s: 1e-6, per_nfe_s: 1e-6 }
    }
}

impl CostModel {
    pub fn seconds(&self, nfe: usize) -> f64 {
        self.overhead_s + self.per_nfe_s * nfe as f64
    }

    /// Times short and long DDIM runs on `model` and fits the affine model.
    pub fn calibrate(model: &MixtureModel, schedule: &NoiseSchedule) -> Result<Self> {
        let time_run = |k: usize| -> Result<f64> {
            let grid = crate::grid::build_grid(crate::grid::GridKind::Uniform, schedule, k)?;
            let z = vec![0.5; model.dim()];
            let reps = 200;
            let start = Instant::now();
            for _ in 0..reps {
                sample_trajectory(model, schedule, &grid, &Ddim, &z)?;
            }
            Ok(start.elapsed().as_secs_f64() / reps as f64)
        };
        let (short, long) = (time_run(2)?, time_run(42)?);
        let per = ((long - short) / 40.0).max(1e-12);
        Ok(Self { overhead_s: (short - 2.0 * per).max(0.0), per_nfe_s: per })
    }
}
