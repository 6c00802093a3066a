//! Brute-force oracle suites: each check compares an implementation against
//! an independent computation (direct evaluation, grid search, finite
//! differences, Monte-Carlo style sampling).

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::cost_transform::{to_state_action, StateActionQuadratic};
use crate::discriminator::{DiscConfig, Discriminator, QuadHeadOutput, Standardizer};
use crate::dynamics_fit::{fit_dynamics, FitConfig};
use crate::envs::{rollout, true_return, Environment, LtiEnv};
use crate::error::{Error, Result};
use crate::linalg::{concat, symmetrize};
use crate::lqr::{backward_recursion, expected_model_cost, LqrConfig};
use crate::pi2::{pi2_update, pi2_weights, step_weights, Pi2Config};
use crate::rng::{derive_seed, seeded, SimRng};
use crate::types::{
    LinearGaussianDynamics, QuadraticCost, StatePath, Trajectory, Transition, TvlgController,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Core,
    Transform,
    Lqr,
}

impl Suite {
    pub const ALL: [Suite; 3] = [Suite::Core, Suite::Transform, Suite::Lqr];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Core => "core",
            Suite::Transform => "transform",
            Suite::Lqr => "lqr",
        }
    }

    /// `"all"` expands to every suite.
    pub fn parse_list(s: &str) -> Result<Vec<Suite>> {
        if s == "all" {
            return Ok(Self::ALL.to_vec());
        }
        s.parse().map(|x| vec![x])
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown suite {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub suite: Suite,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<10} {:<32} {:<4} {:>8.2}s  {}",
            self.suite.name(),
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.elapsed.as_secs_f64(),
            self.detail
        )
    }
}

fn timed(suite: Suite, name: &'static str, body: impl FnOnce() -> Result<(bool, String)>) -> Check {
    let start = Instant::now();
    let (passed, detail) = body().unwrap_or_else(|e| (false, format!("error: {e}")));
    Check {
        suite,
        name,
        passed,
        detail,
        elapsed: start.elapsed(),
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Vec<Check> {
    match suite {
        Suite::Core => core_suite(seed),
        Suite::Transform => transform_suite_with(to_state_action, seed),
        Suite::Lqr => lqr_suite(seed),
    }
}

pub fn run_suites(suites: &[Suite], seed: u64) -> Vec<Check> {
    suites.iter().flat_map(|&s| run_suite(s, seed)).collect()
}

fn uniform_vec(rng: &mut SimRng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.random_range(-1.0..1.0))
}

fn uniform_mat(rng: &mut SimRng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn random_head(rng: &mut SimRng, n: usize) -> QuadHeadOutput {
    QuadHeadOutput {
        matrix: symmetrize(&uniform_mat(rng, 2 * n, 2 * n)),
        vector: uniform_vec(rng, 2 * n),
        constant: rng.random_range(-1.0..1.0),
    }
}

// ---------------------------------------------------------------- transform

/// Largest absolute gap between the state-action quadratic and the head
/// evaluated at the predicted next state, over `tuples` random instances
/// with `n, m ∈ {1, 2, 3, 5}`. Also returns the largest asymmetry seen.
pub fn substitution_identity<F>(transform: F, tuples: usize, seed: u64) -> Result<(f64, f64)>
where
    F: Fn(&QuadHeadOutput, &DMatrix<f64>, &DVector<f64>) -> Result<StateActionQuadratic>,
{
    const DIMS: [usize; 4] = [1, 2, 3, 5];
    let mut rng = seeded(seed);
    let (mut worst, mut asym) = (0.0_f64, 0.0_f64);
    for i in 0..tuples {
        let n = DIMS[i % 4];
        let m = DIMS[(i / 4) % 4];
        let head = random_head(&mut rng, n);
        let model = uniform_mat(&mut rng, n, n + m);
        let drift = uniform_vec(&mut rng, n);
        let s = uniform_vec(&mut rng, n);
        let a = uniform_vec(&mut rng, m);
        let q = transform(&head, &model, &drift)?;
        let next = &model * concat(&s, &a) + &drift;
        let direct = head.cost_value(&concat(&s, &next));
        worst = worst.max((q.eval(&s, &a) - direct).abs());
        asym = asym.max((&q.matrix - q.matrix.transpose()).amax());
    }
    Ok((worst, asym))
}

/// The transform suite against any implementation of the substitution.
pub fn transform_suite_with<F>(transform: F, seed: u64) -> Vec<Check>
where
    F: Fn(&QuadHeadOutput, &DMatrix<f64>, &DVector<f64>) -> Result<StateActionQuadratic>,
{
    vec![timed(
        Suite::Transform,
        "substitution identity (10k)",
        || {
            let (worst, asym) = substitution_identity(&transform, 10_000, seed)?;
            Ok((
                worst <= 1e-9 && asym == 0.0,
                format!("max |gap| {worst:.3e}, max asymmetry {asym:.1e}"),
            ))
        },
    )]
}

// ---------------------------------------------------------------------- lqr

pub fn lqr_suite(seed: u64) -> Vec<Check> {
    vec![
        timed(Suite::Lqr, "one-step analytic gain", || {
            let k = analytic_one_step_gain()?;
            Ok(((k + 0.5).abs() <= 1e-10, format!("K_0 = {k:.16}")))
        }),
        timed(Suite::Lqr, "beats 100 perturbations", || {
            let (instances, worst) = perturbation_oracle(20, 100, seed)?;
            Ok((
                worst >= 0.0,
                format!("{instances} instances, min (perturbed - optimal) {worst:.3e}"),
            ))
        }),
        timed(Suite::Lqr, "1-d grid oracle", || {
            let (worst_action, worst_cost, step) = grid_oracle(10, seed)?;
            Ok((
                worst_action <= step && worst_cost >= -1e-9,
                format!("max |a - a_grid| {worst_action:.2e} (step {step:.0e}), min (grid - lqr) {worst_cost:.2e}"),
            ))
        }),
        timed(Suite::Lqr, "certainty equivalence", || {
            let worst = certainty_equivalence(20, seed)?;
            Ok((worst < 1e-10, format!("max gain/offset change {worst:.2e}")))
        }),
    ]
}

/// Gain of `min_a a² + (s + a)²` with `s' = s + a`.
pub fn analytic_one_step_gain() -> Result<f64> {
    let dynamics = LinearGaussianDynamics::time_invariant(
        DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        DVector::zeros(1),
        DMatrix::zeros(1, 1),
        1,
    )?;
    let cost = QuadraticCost::with_terminal(
        1,
        1,
        vec![DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 2.0])],
        vec![DVector::zeros(2)],
        vec![0.0],
        DMatrix::from_element(1, 1, 2.0),
        DVector::zeros(1),
        0.0,
    )?;
    Ok(backward_recursion(&dynamics, &cost, &LqrConfig::default())?.gain(0)[(0, 0)])
}

struct LqrInstance {
    dynamics: LinearGaussianDynamics,
    cost: QuadraticCost,
    x0_mean: DVector<f64>,
    x0_cov: DMatrix<f64>,
}

fn random_psd(rng: &mut SimRng, dim: usize, diag: f64) -> DMatrix<f64> {
    let g = uniform_mat(rng, dim, dim);
    symmetrize(&(&g * g.transpose() + DMatrix::identity(dim, dim) * diag))
}

fn random_instance(
    rng: &mut SimRng,
    n: usize,
    m: usize,
    horizon: usize,
    noise: bool,
) -> Result<LqrInstance> {
    let transition = (0..horizon)
        .map(|_| uniform_mat(rng, n, n + m) * 0.8)
        .collect();
    let drift = (0..horizon).map(|_| uniform_vec(rng, n) * 0.3).collect();
    let noise_cov = (0..horizon)
        .map(|_| {
            if noise {
                random_psd(rng, n, 0.01) * 0.1
            } else {
                DMatrix::zeros(n, n)
            }
        })
        .collect();
    let dynamics = LinearGaussianDynamics::new(n, m, transition, drift, noise_cov)?;
    let matrices = (0..horizon)
        .map(|_| {
            let mut c = random_psd(rng, n + m, 0.0);
            for j in n..n + m {
                c[(j, j)] += 0.5;
            }
            c
        })
        .collect();
    let vectors = (0..horizon).map(|_| uniform_vec(rng, n + m)).collect();
    let constants = vec![0.0; horizon];
    let cost = QuadraticCost::with_terminal(
        n,
        m,
        matrices,
        vectors,
        constants,
        random_psd(rng, n, 0.1),
        uniform_vec(rng, n),
        0.0,
    )?;
    let x0_mean = uniform_vec(rng, n);
    let x0_cov = random_psd(rng, n, 0.01) * 0.1;
    Ok(LqrInstance {
        dynamics,
        cost,
        x0_mean,
        x0_cov,
    })
}

/// Expected model cost of perturbed controllers minus that of the recursion's
/// controller, minimized over `instances × perturbations` trials.
pub fn perturbation_oracle(
    instances: usize,
    perturbations: usize,
    seed: u64,
) -> Result<(usize, f64)> {
    let mut rng = seeded(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..instances {
        let (n, m, horizon) = (
            rng.random_range(1..=3),
            rng.random_range(1..=3),
            rng.random_range(1..=5),
        );
        let inst = random_instance(&mut rng, n, m, horizon, true)?;
        let ctrl = backward_recursion(&inst.dynamics, &inst.cost, &LqrConfig::default())?;
        let best = expected_model_cost(
            &ctrl,
            &inst.dynamics,
            &inst.cost,
            &inst.x0_mean,
            &inst.x0_cov,
        )?;
        for p in 0..perturbations {
            let scale = 1e-3 * 10f64.powi((p % 4) as i32);
            let gains = ctrl
                .gains()
                .iter()
                .map(|k| k + uniform_mat(&mut rng, m, n) * scale)
                .collect();
            let offsets = ctrl
                .offsets()
                .iter()
                .map(|k| k + uniform_vec(&mut rng, m) * scale)
                .collect();
            let other = TvlgController::new(gains, offsets, ctrl.covariances().to_vec())?;
            let c = expected_model_cost(
                &other,
                &inst.dynamics,
                &inst.cost,
                &inst.x0_mean,
                &inst.x0_cov,
            )?;
            worst = worst.min(c - best);
        }
    }
    Ok((instances, worst))
}

/// One-dimensional, noiseless, deterministic-start problems with `T ∈ {1, 2}`:
/// exhaustive search over open-loop action sequences on a grid. Returns the
/// largest action gap, the smallest `grid cost − recursion cost`, and the
/// grid step.
pub fn grid_oracle(instances: usize, seed: u64) -> Result<(f64, f64, f64)> {
    const STEP: f64 = 1e-2;
    const RANGE: f64 = 4.0;
    let grid: Vec<f64> = (0..=(2.0 * RANGE / STEP).round() as usize)
        .map(|i| -RANGE + i as f64 * STEP)
        .collect();
    let mut rng = seeded(derive_seed(seed, 1, 0));
    let (mut worst_action, mut worst_cost) = (0.0_f64, f64::INFINITY);
    for i in 0..instances {
        let horizon = 1 + i % 2;
        let inst = random_instance(&mut rng, 1, 1, horizon, false)?;
        let ctrl = backward_recursion(&inst.dynamics, &inst.cost, &LqrConfig::default())?;
        let x0 = inst.x0_mean[0];
        let evaluate = |actions: &[f64]| -> f64 {
            let mut s = x0;
            let mut total = 0.0;
            for (t, &a) in actions.iter().enumerate() {
                let z = DVector::from_vec(vec![s, a]);
                total += 0.5 * z.dot(&(inst.cost.matrix(t) * &z))
                    + z.dot(inst.cost.vector(t))
                    + inst.cost.constant(t);
                s = (inst.dynamics.transition(t) * &z)[0] + inst.dynamics.drift(t)[0];
            }
            let sv = DVector::from_element(1, s);
            total
                + 0.5 * sv.dot(&(inst.cost.terminal_matrix() * &sv))
                + sv.dot(inst.cost.terminal_vector())
        };
        let mut lqr_actions = Vec::with_capacity(horizon);
        let mut s = DVector::from_element(1, x0);
        for t in 0..horizon {
            let a = ctrl.mean_action(t, &s);
            lqr_actions.push(a[0]);
            s = inst.dynamics.predict(t, &s, &a);
        }
        if lqr_actions.iter().any(|a| a.abs() > RANGE - STEP) {
            return Err(Error::InvalidArgument(
                "grid oracle optimum outside the grid".into(),
            ));
        }
        let (mut best, mut best_actions) = (f64::INFINITY, vec![0.0; horizon]);
        if horizon == 1 {
            for &a in &grid {
                let c = evaluate(&[a]);
                if c < best {
                    (best, best_actions) = (c, vec![a]);
                }
            }
        } else {
            for &a0 in &grid {
                for &a1 in &grid {
                    let c = evaluate(&[a0, a1]);
                    if c < best {
                        (best, best_actions) = (c, vec![a0, a1]);
                    }
                }
            }
        }
        let lqr_cost = evaluate(&lqr_actions);
        worst_cost = worst_cost.min(best - lqr_cost);
        for (a, g) in lqr_actions.iter().zip(&best_actions) {
            worst_action = worst_action.max((a - g).abs());
        }
    }
    Ok((worst_action, worst_cost, STEP))
}

/// Largest change in any gain or offset entry when process noise is added.
pub fn certainty_equivalence(instances: usize, seed: u64) -> Result<f64> {
    let mut rng = seeded(derive_seed(seed, 2, 0));
    let mut worst = 0.0_f64;
    for _ in 0..instances {
        let (n, m, horizon) = (
            rng.random_range(1..=3),
            rng.random_range(1..=3),
            rng.random_range(1..=5),
        );
        let inst = random_instance(&mut rng, n, m, horizon, false)?;
        let noisy = inst
            .dynamics
            .with_noise((0..horizon).map(|_| random_psd(&mut rng, n, 0.1)).collect())?;
        let cfg = LqrConfig::default();
        let a = backward_recursion(&inst.dynamics, &inst.cost, &cfg)?;
        let b = backward_recursion(&noisy, &inst.cost, &cfg)?;
        for t in 0..horizon {
            worst = worst.max((a.gain(t) - b.gain(t)).amax());
            worst = worst.max((a.offset(t) - b.offset(t)).amax());
        }
    }
    Ok(worst)
}

// --------------------------------------------------------------------- core

pub fn core_suite(seed: u64) -> Vec<Check> {
    vec![
        timed(Suite::Core, "discriminator loss gradient", || {
            let worst = disc_gradient_check(20, seed)?;
            Ok((
                worst <= 1e-4,
                format!("max relative error {worst:.2e} over 20 nets"),
            ))
        }),
        timed(Suite::Core, "dynamics fit (noisy)", || {
            let err = dynamics_recovery(0.01, 200, seed)?;
            Ok((err <= 0.05, format!("max ||F_fit - [A B]||_F {err:.4}")))
        }),
        timed(Suite::Core, "dynamics fit (noiseless)", || {
            let res = noiseless_residual(seed)?;
            Ok((res <= 1e-8, format!("max residual {res:.2e}")))
        }),
        timed(Suite::Core, "path-integral weights", || {
            let (sum_err, shift_exact, shift_err) = pi2_weight_checks(seed);
            Ok((
                sum_err <= 1e-12 && shift_exact && shift_err <= 1e-12,
                format!("max |Σw - 1| {sum_err:.1e}, dyadic shift exact {shift_exact}, general shift {shift_err:.1e}"),
            ))
        }),
        timed(Suite::Core, "path-integral improvement", || {
            let improved = pi2_improvement(10, 20, seed)?;
            Ok((improved >= 9, format!("{improved}/10 seeds improved")))
        }),
    ]
}

fn fd_relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Max relative error between the analytic loss gradient and central
/// finite differences over random small networks, layouts and batches,
/// checking every parameter.
pub fn disc_gradient_check(nets: usize, seed: u64) -> Result<f64> {
    let mut worst = 0.0_f64;
    for i in 0..nets {
        let mut rng = seeded(derive_seed(seed, 3, i as u64));
        let n = 1 + i % 3;
        let cfg = DiscConfig {
            hidden: vec![4 + i % 3, 3 + i % 2],
            output_scale: 0.5,
            layout: if i % 2 == 0 {
                Default::default()
            } else {
                crate::discriminator::HeadLayout::FullGram
            },
            ..DiscConfig::default()
        };
        let base = Discriminator::new(n, &cfg, &mut rng)?;
        let states: Vec<DVector<f64>> = (0..12).map(|_| uniform_vec(&mut rng, n) * 1.5).collect();
        let mut stats = Standardizer::new(2 * n, cfg.std_floor);
        let joint: Vec<DVector<f64>> = states.chunks(2).map(|w| concat(&w[0], &w[1])).collect();
        stats.update(&joint);
        let disc = Discriminator::from_parts(n, cfg.layout, base.net().clone(), stats, cfg.adam)?;
        let pairs: Vec<Transition<'_>> = states
            .chunks(2)
            .enumerate()
            .map(|(step, w)| Transition {
                state: &w[0],
                next: &w[1],
                step,
            })
            .collect();
        let (imitator, expert) = pairs.split_at(2 + i % 3);
        let (_, grad) = disc.loss_and_grad(imitator, expert);
        let params = disc.net().flat_params();
        let h = 1e-6;
        let mut probe = disc.clone();
        for (j, &g) in grad.iter().enumerate() {
            let mut p = params.clone();
            p[j] += h;
            probe.net_mut().set_flat_params(&p)?;
            let up = probe.disc_loss(imitator, expert);
            p[j] -= 2.0 * h;
            probe.net_mut().set_flat_params(&p)?;
            let down = probe.disc_loss(imitator, expert);
            worst = worst.max(fd_relative_error(g, (up - down) / (2.0 * h)));
        }
    }
    Ok(worst)
}

fn lti_2d(noise: f64, horizon: usize) -> Result<LtiEnv> {
    LtiEnv::new(
        "lti2",
        DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 0.95]),
        DMatrix::from_row_slice(2, 1, &[0.0, 0.5]),
        DVector::from_vec(vec![0.05, -0.02]),
        noise,
        DVector::from_vec(vec![1.0, -1.0]),
        0.5,
        QuadraticCost::zeros(2, 1, horizon),
    )
}

/// Max Frobenius error of the fitted transition against the true `[A B]`.
pub fn dynamics_recovery(noise: f64, rollouts: usize, seed: u64) -> Result<f64> {
    let horizon = 10;
    let env = lti_2d(noise, horizon)?;
    let ctrl = TvlgController::zero(2, 1, horizon, 1.0)?;
    let trajs: Vec<Trajectory> = (0..rollouts as u64)
        .map(|i| rollout(&env, &ctrl, derive_seed(seed, 4, i), true))
        .collect::<Result<_>>()?;
    let dynamics = fit_dynamics(&trajs, &FitConfig::default())?;
    let mut truth = DMatrix::zeros(2, 3);
    truth.columns_mut(0, 2).copy_from(&env.a);
    truth.columns_mut(2, 1).copy_from(&env.b);
    Ok((0..horizon)
        .map(|t| (dynamics.transition(t) - &truth).norm())
        .fold(0.0, f64::max))
}

/// Max one-step prediction residual of a fit to noiseless data.
pub fn noiseless_residual(seed: u64) -> Result<f64> {
    let horizon = 10;
    let env = lti_2d(0.0, horizon)?;
    let ctrl = TvlgController::zero(2, 1, horizon, 1.0)?;
    let trajs: Vec<Trajectory> = (0..20u64)
        .map(|i| rollout(&env, &ctrl, derive_seed(seed, 5, i), true))
        .collect::<Result<_>>()?;
    let cfg = FitConfig {
        reg: 1e-12,
        cov_floor: 1e-6,
    };
    let dynamics = fit_dynamics(&trajs, &cfg)?;
    let mut worst = 0.0_f64;
    for traj in &trajs {
        for t in 0..horizon {
            let pred = dynamics.predict(t, &traj.states()[t], &traj.actions()[t]);
            worst = worst.max((pred - &traj.states()[t + 1]).amax());
        }
    }
    Ok(worst)
}

/// Softmax normalization error, exact invariance under a shift that is
/// exactly representable, and the largest change under a general shift.
pub fn pi2_weight_checks(seed: u64) -> (f64, bool, f64) {
    let mut rng = seeded(derive_seed(seed, 6, 0));
    let mut sum_err = 0.0_f64;
    let mut exact = true;
    let mut shift_err = 0.0_f64;
    for trial in 0..200 {
        let cfg = Pi2Config {
            temperature: 10f64.powf(rng.random_range(-2.0..1.0)),
            normalize_costs: trial % 2 == 0,
            ..Pi2Config::default()
        };
        let residual = DMatrix::from_fn(8, 6, |_, _| rng.random_range(-50.0..50.0));
        for w in pi2_weights(&residual, &cfg) {
            sum_err = sum_err.max((w.weights.sum() - 1.0).abs());
        }
        let dyadic = DVector::from_fn(8, |_, _| rng.random_range(-4096i64..4096) as f64 / 1024.0);
        let shift = rng.random_range(-1000i64..1000) as f64;
        exact &= step_weights(&dyadic, &cfg) == step_weights(&dyadic.add_scalar(shift), &cfg);
        let costs = residual.column(0).into_owned();
        let moved = step_weights(&costs.add_scalar(rng.random_range(-100.0..100.0)), &cfg);
        shift_err = shift_err.max((moved.weights - step_weights(&costs, &cfg).weights).amax());
    }
    (sum_err, exact, shift_err)
}

fn toy_env(horizon: usize) -> Result<LtiEnv> {
    let mut mats = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        mats.push(DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.2]));
    }
    let cost = QuadraticCost::with_terminal(
        1,
        1,
        mats,
        vec![DVector::zeros(2); horizon],
        vec![0.0; horizon],
        DMatrix::from_element(1, 1, 2.0),
        DVector::zeros(1),
        0.0,
    )?;
    LtiEnv::new(
        "toy",
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 0.5),
        DVector::zeros(1),
        0.01,
        DVector::from_element(1, 1.0),
        0.05,
        cost,
    )
}

/// Number of seeds (out of `seeds`) in which `iterations` rounds of the
/// path-integral update lowered the evaluated cost on a fixed quadratic toy.
pub fn pi2_improvement(seeds: usize, iterations: usize, seed: u64) -> Result<usize> {
    let horizon = 10;
    let env = toy_env(horizon)?;
    let cfg = Pi2Config::default();
    let mut improved = 0;
    for k in 0..seeds as u64 {
        let run_seed = derive_seed(seed, 7, k);
        let mut ctrl = TvlgController::zero(1, 1, horizon, 0.25)?;
        let eval_seed = derive_seed(run_seed, 1, 0);
        let before = true_return(&env, &ctrl, 20, eval_seed, false)?;
        for it in 0..iterations as u64 {
            let trajs: Vec<Trajectory> = (0..20u64)
                .map(|i| rollout(&env, &ctrl, derive_seed(run_seed, 2, it * 20 + i), true))
                .collect::<Result<_>>()?;
            let residual = DMatrix::from_fn(trajs.len(), horizon, |i, t| {
                let traj = &trajs[i];
                let mut c = env.cost(t, &traj.states()[t], &traj.actions()[t]);
                if t + 1 == horizon {
                    c += env.terminal_cost(&traj.states()[horizon]);
                }
                c
            });
            ctrl = pi2_update(&ctrl, &trajs, &residual, &cfg)?;
        }
        let after = true_return(&env, &ctrl, 20, eval_seed, false)?;
        if after > before {
            improved += 1;
        }
    }
    Ok(improved)
}
