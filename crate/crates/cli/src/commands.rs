use std::path::{Path, PathBuf};

use pfode_lab::eval::order::convergence_order;
use pfode_lab::eval::{
    calibrate_tau, compare_solvers, consistency_report, preview_simulation, resolve_solver, CompareRow, CostModel,
    PreviewConfig, Solver,
};
use pfode_lab::policy::PolicyCheckpoint;
use pfode_lab::rng::{derive_seed, sample_prior};
use pfode_lab::trainer::dataset::manifest_path;
use pfode_lab::trainer::{
    build_dataset, distill_coeffs, entry_pairs, train as ppo_train, OfflineDataset, SynthesisSpec,
};
use pfode_lab::{build_grid, Baseline, CoefficientTable, MixtureModel, PolicyParams, PolicyShape, StepGrid};
use serde_json::json;

use crate::config::{CostSource, RunConfig};
use crate::{CliError, Common};

const ORDER_STREAM: u64 = 0x6f72_6465;

/// Optional artifact paths given on the command line.
pub struct Artifacts {
    pub checkpoint: Option<PathBuf>,
    pub table: Option<PathBuf>,
}

struct Run {
    cfg: RunConfig,
    dir: PathBuf,
    hash: String,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let p = self.path(name);
        write_file(&p, contents)?;
        Ok(p)
    }

    fn data_path(&self, flag: Option<PathBuf>) -> PathBuf {
        flag.or_else(|| self.cfg.io.data.clone().map(PathBuf::from)).unwrap_or_else(|| self.path("data.ndjson"))
    }

    fn load_data(&self, flag: Option<PathBuf>) -> Result<OfflineDataset, CliError> {
        let path = self.data_path(flag);
        if !path.exists() {
            return Err(CliError::Io(format!("dataset {} not found", path.display())));
        }
        if !manifest_path(&path).exists() {
            return Err(CliError::Io(format!("manifest for {} not found", path.display())));
        }
        let ds = OfflineDataset::load(&path)?;
        if ds.schedule() != &self.cfg.schedule {
            return Err(CliError::Config(format!(
                "dataset {} was generated under a different noise schedule",
                path.display()
            )));
        }
        Ok(ds)
    }

    fn grid(&self, steps: usize) -> Result<StepGrid, CliError> {
        Ok(build_grid(self.cfg.grid.kind, &self.cfg.schedule, steps)?)
    }

    fn policy(&self, artifacts: &Artifacts) -> Result<PolicyParams, CliError> {
        let path = artifacts
            .checkpoint
            .clone()
            .or_else(|| self.cfg.io.checkpoint.clone().map(PathBuf::from))
            .unwrap_or_else(|| self.path("checkpoint.json"));
        let text = read_file(&path)?;
        Ok(PolicyCheckpoint::from_json(&text)?.into_params()?)
    }

    fn table(&self, artifacts: &Artifacts) -> Result<CoefficientTable, CliError> {
        let path = artifacts
            .table
            .clone()
            .or_else(|| self.cfg.io.table.clone().map(PathBuf::from))
            .unwrap_or_else(|| self.path("distill_table.json"));
        Ok(CoefficientTable::from_json(&read_file(&path)?)?)
    }

    /// Resolves an id, loading the checkpoint or table only when needed.
    fn solver(&self, id: &str, artifacts: &Artifacts) -> Result<Solver, CliError> {
        let policy = if id == "policy" { Some(self.policy(artifacts)?) } else { None };
        let table = if id == "distill-table" { Some(self.table(artifacts)?) } else { None };
        Ok(resolve_solver(id, policy.as_ref(), table.as_ref(), self.cfg.solver.tolerance()?)?)
    }

    fn cost(&self, model: &MixtureModel) -> Result<CostModel, CliError> {
        Ok(match self.cfg.eval.cost {
            CostSource::Nominal => {
                CostModel { overhead_s: self.cfg.eval.cost_overhead_s, per_nfe_s: self.cfg.eval.cost_per_nfe_s }
            }
            CostSource::Measured => CostModel::calibrate(model, &self.cfg.schedule)?,
        })
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn pretty(value: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

/// Loads the config, applies env and flag overrides, sets up threads and
/// materializes the run directory.
fn prepare(common: &Common, tweak: impl FnOnce(&mut RunConfig)) -> Result<Run, CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    cfg.apply_env();
    if let Some(seed) = common.seed {
        cfg.io.seed = seed;
        cfg.ppo.seed = seed;
    }
    cfg.validate()?;
    // the directory is keyed by the shared config so that commands with
    // per-invocation flags (--steps, --solver, ...) still find each other's artifacts
    let hash = cfg.hash();
    let dir = Path::new(&cfg.io.run_root).join(&hash);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    write_file(&dir.join("config.toml"), &cfg.to_toml())?;
    tweak(&mut cfg);
    cfg.validate()?;
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        // a second build in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(Run { cfg, dir, hash })
}

pub fn gen_data(
    common: &Common,
    out: Option<PathBuf>,
    entries: Option<usize>,
    first_entry: Option<u64>,
) -> Result<(), CliError> {
    if let Some(parent) = out.as_ref().and_then(|p| p.parent()).filter(|p| !p.as_os_str().is_empty()) {
        if !parent.is_dir() {
            return Err(CliError::Io(format!("output directory {} does not exist", parent.display())));
        }
    }
    let run = prepare(common, |c| {
        if let Some(n) = entries {
            c.model.entries = n;
        }
        if let Some(f) = first_entry {
            c.model.first_entry = f;
        }
    })?;
    let m = &run.cfg.model;
    if m.entries == 0 {
        return Err(CliError::Config("model.entries must be positive".into()));
    }
    let pairs = entry_pairs(m.entries, m.conditions, run.cfg.io.seed, m.first_entry);
    let synthesis = SynthesisSpec::new(m.dim, m.generator_seed, m.components);
    let mut ds = build_dataset(&pairs, &run.cfg.schedule, synthesis, run.cfg.solver.tolerance()?)?;
    ds.manifest.config_hash = Some(run.hash.clone());
    let path = out.unwrap_or_else(|| run.path("data.ndjson"));
    ds.save(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    println!("wrote {} entries to {}", ds.len(), path.display());
    println!("manifest {} (config {})", manifest_path(&path).display(), run.hash);
    Ok(())
}

pub fn train(
    common: &Common,
    data: Option<PathBuf>,
    resume: Option<PathBuf>,
    iterations: Option<usize>,
) -> Result<(), CliError> {
    let run = prepare(common, |c| {
        if let Some(n) = iterations {
            c.ppo.iterations = n;
        }
    })?;
    let ds = run.load_data(data)?;
    let grid = run.grid(run.cfg.grid.steps)?;
    let s = &run.cfg.solver;
    let (policy, state) = match resume {
        Some(path) => {
            let ck = PolicyCheckpoint::from_json(&read_file(&path)?)?;
            let state = ck.trainer.clone();
            (ck.into_params()?, state)
        }
        None => {
            let shape = PolicyShape { order: s.order, width: s.width, depth: s.depth, sum_to_one: s.sum_to_one };
            let baseline = Baseline::parse(&s.baseline)?;
            (PolicyParams::init_to_baseline(shape, &run.cfg.schedule, baseline, run.cfg.io.seed)?, None)
        }
    };
    let dir = run.dir.clone();
    let outcome = ppo_train(policy, &ds, &grid, &run.cfg.ppo, state, |ck| {
        let iter = ck.trainer.as_ref().map_or(0, |t| t.iteration);
        std::fs::write(dir.join(format!("checkpoint-{iter:06}.json")), ck.to_json()?)?;
        Ok(())
    })?;
    let ck = run.write("checkpoint.json", &outcome.checkpoint().to_json()?)?;
    run.write("train_log.csv", &outcome.log_csv())?;
    if let Some(last) = outcome.log.last() {
        println!("iteration {}: mean reward {:.4}, log-std {:.4}", last.iter, last.mean_reward, last.log_std_mean);
    }
    println!("checkpoint {}", ck.display());
    Ok(())
}

pub fn distill(common: &Common, data: Option<PathBuf>) -> Result<(), CliError> {
    let run = prepare(common, |_| {})?;
    let ds = run.load_data(data)?;
    let grid = run.grid(run.cfg.grid.steps)?;
    let report = distill_coeffs(&ds, &grid, run.cfg.solver.order, run.cfg.solver.ridge_lambda)?;
    let path = run.write("distill_table.json", &report.table.to_json()?)?;
    run.write(
        "distill.json",
        &pretty(&json!({
            "order": run.cfg.solver.order,
            "steps": grid.steps(),
            "ridge_lambda": run.cfg.solver.ridge_lambda,
            "residual": report.residual,
            "ddim_residual": report.ddim_residual,
        })),
    )?;
    println!("residual {:.6e} (ddim {:.6e})", report.residual, report.ddim_residual);
    println!("table {}", path.display());
    Ok(())
}

pub fn eval(
    common: &Common,
    data: Option<PathBuf>,
    solver: Option<String>,
    steps: Option<usize>,
    artifacts: Artifacts,
) -> Result<(), CliError> {
    let run = prepare(common, |c| {
        if let Some(id) = solver {
            c.solver.id = id;
        }
        if let Some(k) = steps {
            c.grid.steps = k;
        }
    })?;
    let ds = run.load_data(data)?;
    let sv = run.solver(&run.cfg.solver.id, &artifacts)?;
    let grid = run.grid(run.cfg.grid.steps)?;
    let report = consistency_report(&sv, &ds, &grid);
    let stem = format!("eval_{}_k{}", report.solver, report.steps);
    run.write(&format!("{stem}.csv"), &report.csv())?;
    let mut summary = json!({
        "solver": report.solver,
        "steps": report.steps,
        "grid": run.cfg.grid.kind.as_str(),
        "entries": report.rows.len(),
        "failed": report.failed,
        "nfe_per_sample": report.nfe_per_sample,
    });
    for kind in &run.cfg.eval.metrics {
        let (name, agg) = match kind {
            pfode_lab::trainer::RewardKind::Psnr => ("psnr", report.psnr),
            pfode_lab::trainer::RewardKind::NegL2 => ("neg_l2", report.neg_l2),
            pfode_lab::trainer::RewardKind::Cosine => ("cosine", report.cosine),
        };
        summary[name] = serde_json::to_value(agg).expect("summary serializes");
        println!("{name}: mean {:.4} median {:.4} std {:.4}", agg.mean, agg.median, agg.std);
    }
    run.write(&format!("{stem}.json"), &pretty(&summary))?;
    println!("nfe/sample {} failed {}", report.nfe_per_sample, report.failed);
    eprintln!("wall time/sample {:.3e} s", report.wall_time_per_sample);
    Ok(())
}

pub fn compare(
    common: &Common,
    data: Option<PathBuf>,
    solvers: Vec<String>,
    steps: Option<Vec<usize>>,
    artifacts: Artifacts,
) -> Result<(), CliError> {
    let run = prepare(common, |c| {
        if let Some(ks) = steps {
            c.eval.steps = ks;
        }
    })?;
    let ds = run.load_data(data)?;
    let resolved: Vec<Solver> = solvers.iter().map(|id| run.solver(id.trim(), &artifacts)).collect::<Result<_, _>>()?;
    let cost = run.cost(ds.model_for(0))?;
    let rows = compare_solvers(&resolved, &run.cfg.eval.steps, &ds, run.cfg.grid.kind, cost)?;
    let csv = CompareRow::csv(&rows);
    run.write("compare.csv", &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn order_test(
    common: &Common,
    solver: Option<String>,
    steps: Option<Vec<usize>>,
    artifacts: Artifacts,
) -> Result<(), CliError> {
    let run = prepare(common, |c| {
        if let Some(id) = solver {
            c.solver.id = id;
        }
        if let Some(ks) = steps {
            c.eval.order_steps = ks;
        }
    })?;
    let cfg = &run.cfg;
    let sv = run.solver(&cfg.solver.id, &artifacts)?;
    let provider = match &sv {
        Solver::Multistep(p) => p.clone(),
        Solver::Reference(_) => {
            return Err(CliError::Config("the reference integrator has no step count to sweep".into()))
        }
    };
    let model = MixtureModel::synthesize(0, cfg.model.generator_seed, cfg.model.dim, cfg.model.components)?;
    let zs: Vec<Vec<f64>> = (0..cfg.eval.order_samples as u64)
        .map(|i| sample_prior(derive_seed(cfg.io.seed, &[ORDER_STREAM, i]), cfg.model.dim))
        .collect();
    let est = convergence_order(
        provider.as_ref(),
        &model,
        &cfg.schedule,
        cfg.grid.kind,
        &cfg.eval.order_steps,
        &zs,
        cfg.solver.tolerance()?,
    )?;
    let mut csv = String::from("steps,error\n");
    for (k, e) in &est.errors {
        csv.push_str(&format!("{k},{e}\n"));
    }
    let id = sv.id();
    run.write(&format!("order_{id}.csv"), &csv)?;
    run.write(
        &format!("order_{id}.json"),
        &pretty(&json!({ "solver": id, "grid": cfg.grid.kind.as_str(), "estimate": est })),
    )?;
    print!("{csv}");
    println!("p_hat = {:.4} (95% CI [{:.4}, {:.4}], stderr {:.4})", est.order, est.ci_low, est.ci_high, est.stderr);
    Ok(())
}

pub fn preview_sim(
    common: &Common,
    data: Option<PathBuf>,
    tau: Option<f64>,
    artifacts: Artifacts,
) -> Result<(), CliError> {
    let run = prepare(common, |c| {
        if tau.is_some() {
            c.eval.tau = tau;
        }
    })?;
    let e = &run.cfg.eval;
    let ds = run.load_data(data)?;
    let preview = run.solver(&e.preview_solver, &artifacts)?;
    let full = run.solver(&e.full_solver, &artifacts)?;
    let tau = match e.tau {
        Some(t) => t,
        None => {
            let grid = full.effective_grid(&run.cfg.schedule, &run.grid(e.full_steps)?)?;
            calibrate_tau(&full, &grid, &ds, e.tau_draws, e.tau_percentile, run.cfg.io.seed)?
        }
    };
    let config = PreviewConfig {
        k_preview: e.preview_steps,
        k_full: e.full_steps,
        grid: run.cfg.grid.kind,
        tau,
        max_attempts: e.max_attempts,
        cost: run.cost(ds.model_for(0))?,
        seed: run.cfg.io.seed,
    };
    let outcome = preview_simulation(&preview, &full, &ds, &config)?;
    let csv = outcome.csv();
    run.write("preview.csv", &csv)?;
    run.write(
        "preview.json",
        &pretty(&json!({
            "preview_solver": preview.id(),
            "full_solver": full.id(),
            "config": config,
            "outcome": outcome,
        })),
    )?;
    print!("{csv}");
    println!("tau {:.4} dB, acceptance {:.3}, sessions {}", outcome.tau, outcome.acceptance_rate, outcome.sessions);
    if let Some(flag) = &outcome.degenerate {
        println!("warning: {flag}");
    }
    Ok(())
}

pub fn export_coeffs(
    common: &Common,
    checkpoint: Option<PathBuf>,
    steps: Option<usize>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let run = prepare(common, |c| {
        if let Some(k) = steps {
            c.grid.steps = k;
        }
    })?;
    let policy = run.policy(&Artifacts { checkpoint, table: None })?;
    let grid = run.grid(run.cfg.grid.steps)?;
    let table = policy.export_coeff_table(&run.cfg.schedule, &grid)?;
    let path = out.unwrap_or_else(|| run.path(&format!("coeffs_k{}.json", grid.steps())));
    write_file(&path, &table.to_json()?)?;
    for row in &table.weights {
        println!("{}", row.iter().map(|w| format!("{w:.6}")).collect::<Vec<_>>().join(","));
    }
    println!("table {}", path.display());
    Ok(())
}
