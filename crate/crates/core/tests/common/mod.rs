//! Independent oracles shared by the integration suites. Nothing here calls
//! the library's schedule or engine; only the mixture's epsilon is reused.

#![allow(dead_code)]

use pfode_lab::{MixtureModel, NoiseSchedule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BETA_MIN: f64 = 0.1;
pub const BETA_MAX: f64 = 20.0;

pub fn vp() -> NoiseSchedule {
    NoiseSchedule::vp_linear(BETA_MIN, BETA_MAX, 1e-3, 1.0).unwrap()
}

fn log_alpha(t: f64) -> f64 {
    -0.25 * t * t * (BETA_MAX - BETA_MIN) - 0.5 * t * BETA_MIN
}

pub fn alpha(t: f64) -> f64 {
    log_alpha(t).exp()
}

// 1 - alpha^2 cancels badly near t_min, hence expm1
pub fn sigma(t: f64) -> f64 {
    (-(2.0 * log_alpha(t)).exp_m1()).sqrt()
}

pub fn ratio(t: f64) -> f64 {
    sigma(t) / alpha(t)
}

/// Inverse of `ratio`: solves the quadratic in t for log alpha = -ln(1+n^2)/2.
pub fn time_of_ratio(n: f64) -> f64 {
    let a = 0.25 * (BETA_MAX - BETA_MIN);
    let b = 0.5 * BETA_MIN;
    let c = -0.5 * (1.0 + n * n).ln();
    (-b + (b * b - 4.0 * a * c).sqrt()) / (2.0 * a)
}

fn eps(model: &MixtureModel, x: &[f64], t: f64) -> Vec<f64> {
    model.epsilon(&vp(), x, t).unwrap()
}

/// Classic DDIM update written in (alpha, sigma) form.
pub fn ddim_states(model: &MixtureModel, times: &[f64], z: &[f64]) -> Vec<Vec<f64>> {
    let mut xs = vec![z.to_vec()];
    for w in times.windows(2) {
        let (s, t) = (w[0], w[1]);
        let x = xs.last().unwrap();
        let e = eps(model, x, s);
        let scale = alpha(t) / alpha(s);
        let shift = sigma(t) - alpha(t) * sigma(s) / alpha(s);
        xs.push(x.iter().zip(&e).map(|(xv, ev)| scale * xv + shift * ev).collect());
    }
    xs
}

const AB: [&[f64]; 4] = [
    &[1.0],
    &[1.5, -0.5],
    &[23.0 / 12.0, -16.0 / 12.0, 5.0 / 12.0],
    &[55.0 / 24.0, -59.0 / 24.0, 37.0 / 24.0, -9.0 / 24.0],
];

/// Adams–Bashforth in the noise ratio with lower-order start-up.
pub fn ab_states(model: &MixtureModel, times: &[f64], z: &[f64], order: usize) -> Vec<Vec<f64>> {
    let mut xs = vec![z.to_vec()];
    let mut hist: Vec<Vec<f64>> = Vec::new();
    for (i, w) in times.windows(2).enumerate() {
        let (s, t) = (w[0], w[1]);
        let x = xs.last().unwrap().clone();
        hist.push(eps(model, &x, s));
        let coeffs = AB[order.min(i + 1) - 1];
        let h = ratio(t) - ratio(s);
        let next = (0..x.len())
            .map(|d| {
                let blend: f64 = coeffs.iter().enumerate().map(|(j, c)| c * hist[hist.len() - 1 - j][d]).sum();
                alpha(t) * (x[d] / alpha(s) + h * blend)
            })
            .collect();
        xs.push(next);
    }
    xs
}

/// Two-stage midpoint method; returns states at every primary node and
/// every geometric midpoint, interleaved.
pub fn dpm2_states(model: &MixtureModel, times: &[f64], z: &[f64]) -> Vec<Vec<f64>> {
    let mut xs = vec![z.to_vec()];
    for w in times.windows(2) {
        let (s, t) = (w[0], w[1]);
        let (ns, nt) = (ratio(s), ratio(t));
        let r = time_of_ratio((ns * nt).sqrt());
        let x = xs.last().unwrap().clone();
        let e0 = eps(model, &x, s);
        let mid: Vec<f64> =
            x.iter().zip(&e0).map(|(xv, ev)| alpha(r) * (xv / alpha(s) + (ratio(r) - ns) * ev)).collect();
        let e1 = eps(model, &mid, r);
        let end = x.iter().zip(&e1).map(|(xv, ev)| alpha(t) * (xv / alpha(s) + (nt - ns) * ev)).collect();
        xs.push(mid);
        xs.push(end);
    }
    xs
}

pub fn max_abs_dev(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).flat_map(|(u, v)| u.iter().zip(v).map(|(p, q)| (p - q).abs())).fold(0.0, f64::max)
}

pub struct RandomRun {
    pub model: MixtureModel,
    pub z: Vec<f64>,
    pub k: usize,
    pub kind: pfode_lab::GridKind,
}

pub fn random_runs(count: usize, seed: u64) -> Vec<RandomRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds = [pfode_lab::GridKind::Uniform, pfode_lab::GridKind::Quadratic, pfode_lab::GridKind::LogSnr];
    (0..count)
        .map(|_| {
            let dim = rng.gen_range(1..=4);
            let model = MixtureModel::synthesize(rng.gen(), rng.gen(), dim, None).unwrap();
            let z = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
            RandomRun { model, z, k: rng.gen_range(1..=12), kind: kinds[rng.gen_range(0..3)] }
        })
        .collect()
}

/// Worst state deviation of the engine against the oracles above, for
/// DDIM, AB4 and DPM-2 over `runs` random problems.
pub fn special_case_deviations(runs: usize, seed: u64) -> [f64; 3] {
    use pfode_lab::{build_grid, sample_trajectory, AdamsBashforth, Ddim, Dpm2Midpoint};
    let s = vp();
    let mut worst = [0.0f64; 3];
    for run in random_runs(runs, seed) {
        let grid = build_grid(run.kind, &s, run.k).unwrap();
        let engine = |p: &dyn pfode_lab::CoefficientProvider, g: &pfode_lab::StepGrid| -> Vec<Vec<f64>> {
            sample_trajectory(&run.model, &s, g, p, &run.z).unwrap().states.into_iter().map(|st| st.x).collect()
        };
        let ddim = engine(&Ddim, &grid);
        worst[0] = worst[0].max(max_abs_dev(&ddim, &ddim_states(&run.model, grid.times(), &run.z)));
        let ab4 = engine(&AdamsBashforth::new(4).unwrap(), &grid);
        worst[1] = worst[1].max(max_abs_dev(&ab4, &ab_states(&run.model, grid.times(), &run.z, 4)));
        let aug = grid.with_midpoints(&s).unwrap();
        let dpm = engine(&Dpm2Midpoint, &aug);
        worst[2] = worst[2].max(max_abs_dev(&dpm, &dpm2_states(&run.model, grid.times(), &run.z)));
    }
    worst
}

/// Relative error between the closed-form epsilon and `-sigma * grad log p`
/// from central differences (h = 1e-5), worst over `count` random triples.
pub fn score_fd_error(count: usize, seed: u64) -> f64 {
    let s = vp();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let dim = rng.gen_range(1..=4);
        let model = MixtureModel::synthesize(rng.gen(), rng.gen(), dim, None).unwrap();
        let t = rng.gen_range(0.05..0.95);
        let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0) * alpha(t) + rng.gen_range(-1.0..1.0)).collect();
        let e = model.epsilon(&s, &x, t).unwrap();
        let h = 1e-5;
        let fd: Vec<f64> = (0..dim)
            .map(|d| {
                let mut p = x.clone();
                let mut m = x.clone();
                p[d] += h;
                m[d] -= h;
                let g = (model.marginal_logdensity(&s, &p, t).unwrap() - model.marginal_logdensity(&s, &m, t).unwrap())
                    / (2.0 * h);
                -sigma(t) * g
            })
            .collect();
        let num: f64 = e.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
        worst = worst.max(num / den);
    }
    worst
}

fn perturbed_policy(rng: &mut ChaCha8Rng, order: usize, allow_sum: bool) -> pfode_lab::PolicyParams {
    use pfode_lab::{Baseline, PolicyParams, PolicyShape};
    let shape = PolicyShape {
        order,
        width: rng.gen_range(3..=12),
        depth: rng.gen_range(1..=3),
        sum_to_one: allow_sum && order > 1 && rng.gen_bool(0.3),
    };
    let mut p = PolicyParams::init_with_scale(shape, &vp(), Baseline::Ddim, rng.gen(), 0.7).unwrap();
    let mut flat = p.flat();
    for v in flat.iter_mut() {
        *v += rng.gen_range(-0.3..0.3);
    }
    p.set_flat(&flat).unwrap();
    p
}

/// Worst relative error of the analytic log-probability gradient against
/// central differences (h = 1e-5) over `configs` random policies, ten
/// random coordinates each.
pub fn logprob_gradient_error(configs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..configs {
        let order = rng.gen_range(1..=4);
        let mut p = perturbed_policy(&mut rng, order, true);
        let t0 = rng.gen_range(0.2..1.0);
        let t1 = t0 - rng.gen_range(0.01..0.19);
        let used = rng.gen_range(1..=order);
        let mean = p.forward(t0, t1).unwrap();
        let w: Vec<f64> = mean.iter().map(|m| m + rng.gen_range(-0.2..0.2)).collect();
        let g = p.grad_logprob(t0, t1, &w, used).unwrap();
        let base = p.flat();
        for _ in 0..10 {
            let k = rng.gen_range(0..base.len());
            let h = 1e-5;
            let mut probe = |delta: f64| {
                let mut f = base.clone();
                f[k] += delta;
                p.set_flat(&f).unwrap();
                p.logprob(t0, t1, &w, used).unwrap()
            };
            let fd = (probe(h) - probe(-h)) / (2.0 * h);
            worst = worst.max((g[k] - fd).abs() / g[k].abs().max(fd.abs()).max(1e-4));
        }
        p.set_flat(&base).unwrap();
    }
    worst
}

pub struct ClipCase {
    pub clipped: Vec<bool>,
    /// Library gradient along the first output bias.
    pub library: f64,
    /// Symbolic derivative of the clipped objective along the same direction.
    pub symbolic: f64,
    /// Central difference of the library objective along that direction.
    pub finite_difference: f64,
}

/// Two rollouts: the first has ratio 1.5 > 1 + eps with a positive advantage
/// (clip branch active), the second sits at ratio 1 with a negative one.
pub fn clip_saturation_case() -> ClipCase {
    use pfode_lab::trainer::ppo::{batch_logprobs, surrogate_gradient};
    use pfode_lab::trainer::RolloutBatch;
    use pfode_lab::{build_grid, GridKind};
    let s = vp();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let policy = perturbed_policy(&mut rng, 2, false);
    let grid = build_grid(GridKind::Uniform, &s, 3).unwrap();
    let times = grid.times();
    let used = vec![1, 2, 2];
    let means: Vec<Vec<f64>> = (0..3).map(|i| policy.forward(times[i], times[i + 1]).unwrap()).collect();
    let actions: Vec<Vec<Vec<f64>>> =
        [0.03, -0.05].iter().map(|d| means.iter().map(|m| m.iter().map(|v| v + d).collect()).collect()).collect();
    let mut batch = RolloutBatch {
        entry_index: vec![0, 0],
        actions,
        used: used.clone(),
        old_logprobs: vec![0.0, 0.0],
        rewards: vec![1.0, 0.0],
        previews: vec![vec![0.0], vec![0.0]],
        nfe: vec![3, 3],
    };
    let now = batch_logprobs(&policy, &grid, &batch).unwrap();
    batch.old_logprobs = vec![now[0] - 1.5f64.ln(), now[1]];
    let adv = [1.0, -1.0];
    let eps = 0.2;
    let sg = surrogate_gradient(&policy, &grid, &batch, &adv, eps).unwrap();
    let bias0 = policy.num_mlp_params() - policy.shape().head_width();

    // d/db0 of min(r A, clip(r) A)/B: zero on the clipped branch, else
    // A r d(log pi)/db0 / B with d(log pi)/db0 = sum_i (a_i0 - mu_i0) / s0^2.
    let s0 = policy.log_std()[0].exp();
    let mut symbolic = 0.0;
    for b in 0..2 {
        let r = (now[b] - batch.old_logprobs[b]).exp();
        let saturated = (adv[b] > 0.0 && r > 1.0 + eps) || (adv[b] < 0.0 && r < 1.0 - eps);
        if !saturated {
            let dlog: f64 = (0..3).map(|i| (batch.actions[b][i][0] - means[i][0]) / (s0 * s0)).sum();
            symbolic += adv[b] * r * dlog / 2.0;
        }
    }
    let objective = |delta: f64| {
        let mut q = policy.clone();
        let mut f = q.flat();
        f[bias0] += delta;
        q.set_flat(&f).unwrap();
        surrogate_gradient(&q, &grid, &batch, &adv, eps).unwrap().objective
    };
    let h = 1e-6;
    ClipCase {
        clipped: sg.clipped,
        library: sg.grad[bias0],
        symbolic,
        finite_difference: (objective(h) - objective(-h)) / (2.0 * h),
    }
}

/// Parameter drift of a full PPO update on a batch whose rewards are all equal.
pub fn zero_advantage_drift() -> f64 {
    use pfode_lab::optim::Adam;
    use pfode_lab::trainer::{ppo_update, rollout, PpoConfig, RewardKind, RolloutTarget};
    use pfode_lab::{build_grid, GridKind};
    let s = vp();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut policy = perturbed_policy(&mut rng, 3, true);
    let grid = build_grid(GridKind::Uniform, &s, 4).unwrap();
    let model = MixtureModel::synthesize(0, 1, 2, None).unwrap();
    let z = [0.3, -0.8];
    let x_gt = [0.0, 0.0];
    let targets: Vec<RolloutTarget<'_>> =
        (0..8).map(|_| RolloutTarget { entry_index: 0, model: &model, z: &z, x_gt: &x_gt }).collect();
    let mut batch = rollout(&policy, &s, &grid, &targets, RewardKind::Psnr, 3).unwrap();
    batch.rewards = vec![batch.rewards[0]; batch.len()];
    let before = policy.flat();
    let mut adam = Adam::new(before.len(), 1e-2);
    ppo_update(&mut policy, &mut adam, &grid, &batch, &PpoConfig::default()).unwrap();
    policy.flat().iter().zip(&before).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// (max |mean|, max |std - 1|) of normalized advantages over random batches.
pub fn advantage_stats(batches: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut m, mut s) = (0.0f64, 0.0f64);
    for _ in 0..batches {
        let b = rng.gen_range(2..100);
        let scale = 10f64.powf(rng.gen_range(-1.0..2.0));
        let r: Vec<f64> = (0..b).map(|_| rng.gen_range(-1.0..1.0) * scale + 30.0).collect();
        let a = pfode_lab::trainer::normalize_advantage(&r, 1e-8);
        let mean = a.iter().sum::<f64>() / b as f64;
        let std = (a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / b as f64).sqrt();
        m = m.max(mean.abs());
        s = s.max((std - 1.0).abs());
    }
    (m, s)
}
