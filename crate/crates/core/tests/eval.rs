mod common;

use pfode_lab::eval::order::convergence_order;
use pfode_lab::eval::*;
use pfode_lab::trainer::reward::PSNR_CAP;
use pfode_lab::trainer::*;
use pfode_lab::*;

fn dataset(count: usize) -> OfflineDataset {
    let pairs = entry_pairs(count, 4, 8, 0);
    build_dataset(&pairs, &common::vp(), SynthesisSpec::new(2, 3, Some(3)), ReferenceTolerance::default()).unwrap()
}

fn zs(count: u64) -> Vec<Vec<f64>> {
    (0..count).map(|i| rng::sample_prior(100 + i, 2)).collect()
}

#[test]
fn reference_scores_the_cap_against_itself() {
    let ds = dataset(6);
    let grid = build_grid(GridKind::Uniform, ds.schedule(), 5).unwrap();
    let r = consistency_report(&Solver::Reference(ds.manifest.reference), &ds, &grid);
    assert_eq!(r.failed, 0);
    assert!(r.rows.iter().all(|e| e.psnr == PSNR_CAP && e.neg_l2 == 0.0 && (e.cosine - 1.0).abs() < 1e-15));
}

#[test]
fn aggregates_are_recomputable_from_rows() {
    let ds = dataset(12);
    let grid = build_grid(GridKind::LogSnr, ds.schedule(), 5).unwrap();
    let r = consistency_report(&Solver::provider(Ddim), &ds, &grid);
    let (neg_l2, psnr, cosine, nfe, failed) = ConsistencyReport::summarize(&r.rows);
    assert_eq!((neg_l2, psnr, cosine, nfe, failed), (r.neg_l2, r.psnr, r.cosine, r.nfe_per_sample, r.failed));
    let mean = r.rows.iter().map(|e| e.psnr).sum::<f64>() / 12.0;
    assert!((mean - r.psnr.mean).abs() < 1e-12);
    assert_eq!(r.nfe_per_sample, 5.0);
}

#[test]
fn more_steps_do_not_hurt_ab4() {
    let ds = dataset(10);
    let ab4 = Solver::provider(AdamsBashforth::new(4).unwrap());
    let coarse = consistency_report(&ab4, &ds, &build_grid(GridKind::Uniform, ds.schedule(), 5).unwrap());
    let fine = consistency_report(&ab4, &ds, &build_grid(GridKind::Uniform, ds.schedule(), 40).unwrap());
    assert!(fine.psnr.mean >= coarse.psnr.mean);
}

#[test]
fn empirical_orders_follow_the_taylor_analysis() {
    let s = common::vp();
    let model = MixtureModel::synthesize(0, 11, 2, Some(2)).unwrap();
    let ks = [8, 16, 32, 64];
    let tol = ReferenceTolerance::default();
    let ddim = convergence_order(&Ddim, &model, &s, GridKind::Uniform, &ks, &zs(8), tol).unwrap();
    let dpm2 = convergence_order(&Dpm2Midpoint, &model, &s, GridKind::Uniform, &ks, &zs(8), tol).unwrap();
    assert!((0.8..=1.3).contains(&ddim.order), "{ddim:?}");
    assert!((1.7..=2.4).contains(&dpm2.order), "{dpm2:?}");
    assert!(dpm2.order - ddim.order >= 0.5);
    assert!(ddim.ci_low <= ddim.order && ddim.order <= ddim.ci_high);
}

struct Frozen;

impl CoefficientProvider for Frozen {
    fn id(&self) -> &str {
        "frozen"
    }
    fn order(&self) -> usize {
        1
    }
    fn weights(&self, _: &StepContext<'_>) -> Result<Vec<f64>> {
        Ok(vec![0.0])
    }
}

#[test]
fn a_solver_that_never_moves_has_order_zero() {
    let s = common::vp();
    let model = MixtureModel::synthesize(0, 11, 2, Some(2)).unwrap();
    let est =
        convergence_order(&Frozen, &model, &s, GridKind::Uniform, &[8, 16, 32], &zs(4), ReferenceTolerance::default())
            .unwrap();
    assert!(est.order.abs() < 1e-9, "{est:?}");
}

#[test]
fn order_sweep_validates_its_inputs() {
    let s = common::vp();
    let model = MixtureModel::standard_gaussian(2);
    let tol = ReferenceTolerance::default();
    assert!(convergence_order(&Ddim, &model, &s, GridKind::Uniform, &[8, 16], &zs(2), tol).is_err());
    assert!(convergence_order(&Ddim, &model, &s, GridKind::Uniform, &[16, 8, 32], &zs(2), tol).is_err());
}

#[test]
fn accept_all_preview_pays_the_preview_overhead() {
    let ds = dataset(20);
    let ab4 = Solver::provider(AdamsBashforth::new(4).unwrap());
    let cfg = PreviewConfig { tau: f64::NEG_INFINITY, grid: GridKind::Uniform, ..PreviewConfig::default() };
    let out = preview_simulation(&Solver::provider(Ddim), &ab4, &ds, &cfg).unwrap();
    assert_eq!(out.high_quality.avg_attempts, 1.0);
    assert_eq!(out.preview.avg_attempts, 1.0);
    assert_eq!(out.high_quality.avg_nfe, 40.0);
    assert_eq!(out.preview.avg_nfe, 48.0);
    assert!(out.degenerate.is_some());
}

#[test]
fn identical_solvers_always_agree() {
    let ds = dataset(30);
    let ab4 = Solver::provider(AdamsBashforth::new(4).unwrap());
    let grid = build_grid(GridKind::Uniform, ds.schedule(), 40).unwrap();
    let tau = calibrate_tau(&ab4, &grid, &ds, 6, 0.7, 1).unwrap();
    let cfg = PreviewConfig { tau, k_preview: 40, grid: GridKind::Uniform, ..PreviewConfig::default() };
    let out = preview_simulation(&ab4, &ab4, &ds, &cfg).unwrap();
    assert_eq!(out.high_quality.decision_agreement, 1.0);
    assert_eq!(out.high_quality.discarded_sessions, out.preview.discarded_sessions);
    assert_eq!(out.high_quality.avg_attempts, out.preview.avg_attempts);
    assert!(out.degenerate.is_none());
}

#[test]
fn cheap_accurate_previews_save_evaluations() {
    // With verdicts that coincide, preview cost is attempts * K_p + K_f
    // against attempts * K_f for the high-quality mode.
    let ds = dataset(60);
    let ab4 = Solver::provider(AdamsBashforth::new(4).unwrap());
    let full_grid = build_grid(GridKind::Uniform, ds.schedule(), 40).unwrap();
    let tau = calibrate_tau(&ab4, &full_grid, &ds, 6, 2.0 / 3.0, 2).unwrap();
    let cfg = PreviewConfig { tau, k_preview: 12, grid: GridKind::Uniform, ..PreviewConfig::default() };
    let out = preview_simulation(&ab4, &ab4, &ds, &cfg).unwrap();
    assert!(out.high_quality.decision_agreement > 0.9);
    let a = out.high_quality.avg_attempts;
    assert!((out.high_quality.avg_nfe - 40.0 * a).abs() < 1e-9);
    assert!(out.preview.avg_nfe < out.high_quality.avg_nfe);
    if out.preview.discarded_sessions == out.high_quality.discarded_sessions && out.preview.avg_attempts == a {
        assert!((out.preview.avg_nfe - (12.0 * a + 40.0)).abs() < 1e-9);
    }
}

#[test]
fn comparison_table_rows_and_errors() {
    let ds = dataset(8);
    let tol = ds.manifest.reference;
    let ids = ["ddim", "ab4", "dpm2", "reference"];
    let solvers: Vec<Solver> = ids.iter().map(|id| resolve_solver(id, None, None, tol).unwrap()).collect();
    let rows = compare_solvers(&solvers, &[5, 8], &ds, GridKind::Uniform, CostModel::default()).unwrap();
    let order: Vec<(String, usize)> = rows.iter().map(|r| (r.solver.clone(), r.steps)).collect();
    assert_eq!(order[0], ("ddim".to_string(), 5));
    assert_eq!(order[1], ("ddim".to_string(), 8));
    assert_eq!(order[7], ("reference".to_string(), 8));
    assert!(rows
        .iter()
        .filter(|r| r.solver == "reference")
        .all(|r| r.psnr_mean == PSNR_CAP && r.energy_distance.abs() < 1e-12));
    assert!(rows.iter().filter(|r| r.solver == "dpm2").all(|r| r.nfe == 2.0 * r.steps as f64));
    let csv = CompareRow::csv(&rows);
    assert!(csv.starts_with(COMPARE_HEADER));
    assert_eq!(csv.lines().count(), 9);

    let err = resolve_solver("heun", None, None, tol).unwrap_err();
    match err {
        LabError::UnknownSolver { known, .. } => assert!(known.contains("ddim") && known.contains("distill-table")),
        other => panic!("{other}"),
    }
    assert!(matches!(resolve_solver("policy", None, None, tol), Err(LabError::Config(_))));
}

#[test]
fn reports_are_deterministic() {
    let ds = dataset(10);
    let grid = build_grid(GridKind::Quadratic, ds.schedule(), 6).unwrap();
    let a = consistency_report(&Solver::provider(AdamsBashforth::new(3).unwrap()), &ds, &grid);
    let b = consistency_report(&Solver::provider(AdamsBashforth::new(3).unwrap()), &ds, &grid);
    assert_eq!(a.csv(), b.csv());
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}
