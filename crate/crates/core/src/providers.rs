//! Fixed coefficient providers reproducing classical samplers, plus
//! table-driven providers for exported or distilled coefficients.

use serde::{Deserialize, Serialize};

use crate::engine::{CoefficientProvider, StepContext};
use crate::error::{LabError, Result};
use crate::grid::StepGrid;
use crate::schedule::NoiseSchedule;

/// Identifiers accepted wherever a solver is chosen by name.
pub const SOLVER_IDS: &[&str] = &["ddim", "ab1", "ab2", "ab3", "ab4", "dpm2", "policy", "distill-table", "reference"];

/// `w = [1]`: the first-order update in `n`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Ddim;

impl CoefficientProvider for Ddim {
    fn id(&self) -> &str {
        "ddim"
    }
    fn order(&self) -> usize {
        1
    }
    fn weights(&self, _ctx: &StepContext<'_>) -> Result<Vec<f64>> {
        Ok(vec![1.0])
    }
    fn is_consistent(&self) -> bool {
        true
    }
}

/// Classical Adams–Bashforth coefficients for orders 1 to 4, newest first.
pub fn adams_bashforth_weights(order: usize) -> Result<Vec<f64>> {
    Ok(match order {
        1 => vec![1.0],
        2 => vec![3.0 / 2.0, -1.0 / 2.0],
        3 => vec![23.0 / 12.0, -16.0 / 12.0, 5.0 / 12.0],
        4 => vec![55.0 / 24.0, -59.0 / 24.0, 37.0 / 24.0, -9.0 / 24.0],
        other => return Err(LabError::Contract(format!("Adams-Bashforth order {other} unsupported (1..=4)"))),
    })
}

/// Adams–Bashforth with lower-order warm-up.
#[derive(Debug, Clone)]
pub struct AdamsBashforth {
    order: usize,
    id: String,
}

impl AdamsBashforth {
    pub fn new(order: usize) -> Result<Self> {
        adams_bashforth_weights(order)?;
        Ok(Self { order, id: format!("ab{order}") })
    }
}

impl CoefficientProvider for AdamsBashforth {
    fn id(&self) -> &str {
        &self.id
    }
    fn order(&self) -> usize {
        self.order
    }
    fn weights(&self, ctx: &StepContext<'_>) -> Result<Vec<f64>> {
        adams_bashforth_weights(ctx.effective_order)
    }
    fn is_consistent(&self) -> bool {
        true
    }
}

/// Two-stage midpoint scheme on a midpoint-augmented grid: even transitions
/// step to the geometric midpoint with `[1]`, odd transitions complete the
/// interval using the midpoint prediction.
#[derive(Debug, Clone, Copy, Default)]
pub struct Dpm2Midpoint;

impl CoefficientProvider for Dpm2Midpoint {
    fn id(&self) -> &str {
        "dpm2"
    }
    fn order(&self) -> usize {
        2
    }
    fn effective_order(&self, index: usize) -> usize {
        if index.is_multiple_of(2) {
            1
        } else {
            2
        }
    }
    fn needs_midpoints(&self) -> bool {
        true
    }
    fn check_grid(&self, grid: &StepGrid) -> Result<()> {
        if grid.is_augmented() {
            Ok(())
        } else {
            Err(LabError::Config("dpm2 requires a midpoint-augmented grid".into()))
        }
    }
    fn weights(&self, ctx: &StepContext<'_>) -> Result<Vec<f64>> {
        let i = ctx.index;
        if i.is_multiple_of(2) {
            return Ok(vec![1.0]);
        }
        let n = ctx.noise_ratios;
        let h = n[i + 1] - n[i];
        Ok(vec![(n[i + 1] - n[i - 1]) / h, -(n[i] - n[i - 1]) / h])
    }
    fn is_consistent(&self) -> bool {
        true
    }
}

/// Per-transition coefficient table bound to a schedule and grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientTable {
    pub schedule: NoiseSchedule,
    pub times: Vec<f64>,
    pub order: usize,
    /// One row per transition; rows may be shorter than `order` during warm-up.
    pub weights: Vec<Vec<f64>>,
}

impl CoefficientTable {
    pub fn validate(&self) -> Result<()> {
        let parse = |location: String, reason: String| LabError::Parse { location, reason };
        if self.order == 0 {
            return Err(parse("order".into(), "order must be at least 1".into()));
        }
        if self.times.len() < 2 {
            return Err(parse("times".into(), "need at least two grid nodes".into()));
        }
        if self.weights.len() != self.times.len() - 1 {
            return Err(parse(
                "weights".into(),
                format!("{} rows for {} transitions", self.weights.len(), self.times.len() - 1),
            ));
        }
        for (i, row) in self.weights.iter().enumerate() {
            if row.is_empty() || row.len() > self.order {
                return Err(parse(
                    format!("weights[{i}]"),
                    format!("row length {} outside 1..={}", row.len(), self.order),
                ));
            }
            if row.iter().any(|w| !w.is_finite()) {
                return Err(parse(format!("weights[{i}]"), "non-finite weight".into()));
            }
        }
        StepGrid::from_times(&self.schedule, self.times.clone(), crate::grid::GridKind::Uniform)
            .map_err(|e| parse("times".into(), e.to_string()))?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(doc: &str) -> Result<Self> {
        let table: CoefficientTable = serde_json::from_str(doc).map_err(|e| LabError::Parse {
            location: format!("line {} column {}", e.line(), e.column()),
            reason: e.to_string(),
        })?;
        table.validate()?;
        Ok(table)
    }
}

/// Replays a [`CoefficientTable`] on the grid it was built for.
#[derive(Debug, Clone)]
pub struct TableProvider {
    table: CoefficientTable,
    id: String,
}

impl TableProvider {
    pub fn new(table: CoefficientTable, id: impl Into<String>) -> Result<Self> {
        table.validate()?;
        Ok(Self { table, id: id.into() })
    }

    pub fn table(&self) -> &CoefficientTable {
        &self.table
    }
}

impl CoefficientProvider for TableProvider {
    fn id(&self) -> &str {
        &self.id
    }
    fn order(&self) -> usize {
        self.table.order
    }
    fn effective_order(&self, index: usize) -> usize {
        let row = self.table.weights.get(index).map_or(1, Vec::len);
        (index + 1).min(self.table.order).min(row)
    }
    fn check_grid(&self, grid: &StepGrid) -> Result<()> {
        let t = grid.times();
        let same =
            t.len() == self.table.times.len() && t.iter().zip(&self.table.times).all(|(a, b)| (a - b).abs() <= 1e-12);
        if same {
            Ok(())
        } else {
            Err(LabError::Config(format!(
                "coefficient table `{}` was built for a different {}-node grid",
                self.id,
                self.table.times.len()
            )))
        }
    }
    fn weights(&self, ctx: &StepContext<'_>) -> Result<Vec<f64>> {
        let row = self.table.weights.get(ctx.index).ok_or_else(|| LabError::Solver {
            step: ctx.index,
            reason: "transition beyond coefficient table".into(),
        })?;
        Ok(row[..ctx.effective_order].to_vec())
    }
}
