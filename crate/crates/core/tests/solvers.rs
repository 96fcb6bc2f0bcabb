mod common;

use pfode_lab::policy::{import_coeff_table, PolicyMeanProvider};
use pfode_lab::providers::adams_bashforth_weights;
use pfode_lab::*;

#[test]
fn engine_matches_closed_form_samplers() {
    let [ddim, ab4, dpm2] = common::special_case_deviations(50, 7);
    assert!(ddim <= 1e-12, "ddim deviation {ddim:e}");
    assert!(ab4 <= 1e-12, "ab4 deviation {ab4:e}");
    assert!(dpm2 <= 1e-12, "dpm2 deviation {dpm2:e}");
}

#[test]
fn ab4_weights_are_exact() {
    assert_eq!(adams_bashforth_weights(4).unwrap(), vec![55.0 / 24.0, -59.0 / 24.0, 37.0 / 24.0, -9.0 / 24.0]);
    for m in 1..=4 {
        let s: f64 = adams_bashforth_weights(m).unwrap().iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
    }
}

#[test]
fn consistent_weights_integrate_constant_eps_exactly() {
    let e = [0.3, -1.7];
    let ns = [50.0, 7.0, 2.5, 0.4, 0.01];
    let y0 = [10.0, -4.0];
    for w in [vec![1.0], vec![1.5, -0.5], adams_bashforth_weights(4).unwrap(), vec![0.2, 0.3, 0.5]] {
        let mut y = y0.to_vec();
        for k in 0..ns.len() - 1 {
            let hist: Vec<&[f64]> = vec![&e; w.len()];
            y = lmm_step(&y, &hist, &w, ns[k], ns[k + 1]).unwrap();
        }
        for d in 0..2 {
            let exact = y0[d] + (ns[4] - ns[0]) * e[d];
            assert!((y[d] - exact).abs() <= 1e-12, "{w:?}: {} vs {exact}", y[d]);
        }
    }
}

#[test]
fn nfe_accounting() {
    let s = common::vp();
    let model = MixtureModel::synthesize(3, 9, 2, Some(2)).unwrap();
    let z = [0.4, -1.1];
    for k in [1, 5, 12] {
        let grid = build_grid(GridKind::Uniform, &s, k).unwrap();
        model.reset_nfe();
        let run = sample_trajectory(&model, &s, &grid, &AdamsBashforth::new(4).unwrap(), &z).unwrap();
        assert_eq!(run.nfe, k);
        assert_eq!(model.nfe(), k as u64);
        let aug = grid.with_midpoints(&s).unwrap();
        model.reset_nfe();
        let run = sample_trajectory(&model, &s, &aug, &Dpm2Midpoint, &z).unwrap();
        assert_eq!(run.nfe, 2 * k);
        assert_eq!(model.nfe(), 2 * k as u64);
    }
}

#[test]
fn warmup_uses_lower_orders() {
    let s = common::vp();
    let model = MixtureModel::synthesize(1, 2, 2, None).unwrap();
    let grid = build_grid(GridKind::LogSnr, &s, 6).unwrap();
    let run = sample_trajectory(&model, &s, &grid, &AdamsBashforth::new(4).unwrap(), &[0.1, 0.2]).unwrap();
    let lens: Vec<usize> = run.coeffs_used.iter().map(Vec::len).collect();
    assert_eq!(lens, vec![1, 2, 3, 4, 4, 4]);
    assert_eq!(run.coeffs_used[1], vec![1.5, -0.5]);
    // a single step never has history, whatever the order
    let one = build_grid(GridKind::Uniform, &s, 1).unwrap();
    let run = sample_trajectory(&model, &s, &one, &AdamsBashforth::new(4).unwrap(), &[0.1, 0.2]).unwrap();
    assert_eq!(run.coeffs_used, vec![vec![1.0]]);
}

#[test]
fn dpm2_weights_and_grid_requirement() {
    let s = common::vp();
    let base = build_grid(GridKind::Uniform, &s, 4).unwrap();
    let model = MixtureModel::standard_gaussian(1);
    let err = sample_trajectory(&model, &s, &base, &Dpm2Midpoint, &[0.5]).unwrap_err();
    assert!(matches!(err, LabError::Config(_)), "{err}");
    let aug = base.with_midpoints(&s).unwrap();
    let run = sample_trajectory(&model, &s, &aug, &Dpm2Midpoint, &[0.5]).unwrap();
    for (i, w) in run.coeffs_used.iter().enumerate() {
        if i % 2 == 0 {
            assert_eq!(w, &vec![1.0]);
        } else {
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

struct Broken;

impl CoefficientProvider for Broken {
    fn id(&self) -> &str {
        "broken"
    }
    fn order(&self) -> usize {
        1
    }
    fn weights(&self, ctx: &StepContext<'_>) -> Result<Vec<f64>> {
        Ok(vec![if ctx.index == 2 { f64::NAN } else { 1.0 }])
    }
}

#[test]
fn non_finite_weights_report_the_step() {
    let s = common::vp();
    let grid = build_grid(GridKind::Uniform, &s, 5).unwrap();
    let err = sample_trajectory(&MixtureModel::standard_gaussian(2), &s, &grid, &Broken, &[0.0, 1.0]).unwrap_err();
    assert!(matches!(err, LabError::Solver { step: 2, .. }), "{err}");
}

#[test]
fn run_json_has_audit_trail() {
    let s = common::vp();
    let grid = build_grid(GridKind::Uniform, &s, 3).unwrap();
    let run = sample_trajectory(&MixtureModel::standard_gaussian(1), &s, &grid, &Ddim, &[0.7]).unwrap();
    let v: serde_json::Value = serde_json::from_str(&run.to_json().unwrap()).unwrap();
    assert_eq!(v["nfe"], 3);
    assert_eq!(v["times"].as_array().unwrap().len(), 4);
    assert_eq!(v["coeffs_used"].as_array().unwrap().len(), 3);
}

#[test]
fn exported_table_replays_the_policy() {
    let s = common::vp();
    let shape = PolicyShape { order: 3, width: 16, depth: 2, sum_to_one: false };
    let mut policy = PolicyParams::init_with_scale(shape, &s, Baseline::Ddim, 4, 0.5).unwrap();
    let mut flat = policy.flat();
    let n = flat.len();
    for (i, v) in flat.iter_mut().enumerate().take(n - 3) {
        *v += 0.01 * ((i % 7) as f64 - 3.0);
    }
    policy.set_flat(&flat).unwrap();
    let grid = build_grid(GridKind::Quadratic, &s, 7).unwrap();
    let table = policy.export_coeff_table(&s, &grid).unwrap();
    let provider = import_coeff_table(&table.to_json().unwrap()).unwrap();
    let model = MixtureModel::synthesize(2, 2, 2, None).unwrap();
    let z = [1.2, -0.3];
    let a = sample_trajectory(&model, &s, &grid, &PolicyMeanProvider::new(policy), &z).unwrap();
    let b = sample_trajectory(&model, &s, &grid, &provider, &z).unwrap();
    assert_eq!(a.final_x(), b.final_x());
    assert_eq!(a.coeffs_used, b.coeffs_used);
    // a table built for one grid refuses another
    let other = build_grid(GridKind::Uniform, &s, 7).unwrap();
    assert!(sample_trajectory(&model, &s, &other, &provider, &z).is_err());
}

#[test]
fn ddim_policy_reproduces_ddim() {
    let s = common::vp();
    let policy = PolicyParams::init_to_baseline(PolicyShape::default(), &s, Baseline::Ddim, 0).unwrap();
    let grid = build_grid(GridKind::LogSnr, &s, 6).unwrap();
    let model = MixtureModel::synthesize(5, 1, 3, None).unwrap();
    let z = [0.2, 0.9, -1.4];
    let a = sample_trajectory(&model, &s, &grid, &PolicyMeanProvider::new(policy.clone()), &z).unwrap();
    let b = sample_trajectory(&model, &s, &grid, &Ddim, &z).unwrap();
    assert_eq!(a.final_x(), b.final_x());
    let table = policy.export_coeff_table(&s, &grid).unwrap();
    assert!(table.weights.iter().all(|r| r[0] == 1.0 && r[1..].iter().all(|v| *v == 0.0)));
}

#[test]
fn reference_identity_flow_over_seeds() {
    let s = common::vp();
    let model = MixtureModel::standard_gaussian(3);
    for seed in 0..20 {
        let z = rng::sample_prior(seed, 3);
        let out = reference_solution(&model, &s, &z, ReferenceTolerance::default()).unwrap();
        let err: f64 = out.final_x().iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err <= 1e-6, "seed {seed}: {err:e}");
    }
}

#[test]
fn score_matches_finite_differences() {
    let err = common::score_fd_error(100, 3);
    assert!(err <= 1e-5, "{err:e}");
}
