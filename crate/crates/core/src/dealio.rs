//! The imitation loop, the model-free adversarial baseline, and expert and
//! demonstration generation.

use std::io::{BufRead, Write};

use log::{debug, info};
use nalgebra::{DMatrix, DVector};

use crate::cost_transform::{extract_cost, mean_states, TransformConfig};
use crate::discriminator::{DiscConfig, Discriminator};
use crate::dynamics_fit::{fit_dynamics, FitConfig};
use crate::envs::{rollout, true_return, EnvSpec, Environment};
use crate::error::{check_dim, Error, Result};
use crate::io::format_float;
use crate::linalg::symmetrize;
use crate::pilqr::{pilqr_update, PilqrConfig};
use crate::rng::{derive_seed, seeded};
use crate::types::{
    normalized_score, Demonstration, DemonstrationSet, StatePath, Trajectory, TvlgController,
};

const STREAM_ROLLOUT: u64 = 1;
const STREAM_DISC_INIT: u64 = 2;
const STREAM_DISC_TRAIN: u64 = 3;
const STREAM_EVAL: u64 = 4;
const STREAM_DEMO: u64 = 5;

/// Which controller update the loop uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Dealio,
    Baseline,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Dealio => "dealio",
            Algorithm::Baseline => "baseline",
        }
    }
}

/// Score-function policy-gradient settings for the baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineConfig {
    pub learning_rate: f64,
    /// Maximum Euclidean norm of the full gradient per iteration.
    pub clip_norm: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            clip_norm: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DealioConfig {
    pub trajectories_per_iteration: usize,
    pub max_iterations: usize,
    pub disc_batches: usize,
    pub controller_updates: usize,
    /// Initial controller variance (per action dimension).
    pub init_cov: f64,
    /// Eigenvalue floor kept on every controller covariance.
    pub cov_floor: f64,
    /// Eigenvalue ceiling kept on every controller covariance.
    pub cov_ceiling: f64,
    /// Multiplies the LQR entropy temperature after every iteration.
    pub entropy_decay: f64,
    /// Fraction of the way the controller means move towards the updated
    /// controller each iteration; 1 takes the full update.
    pub controller_step: f64,
    pub pilqr: PilqrConfig,
    pub disc: DiscConfig,
    pub fit: FitConfig,
    pub transform: TransformConfig,
    pub baseline: BaselineConfig,
    pub eval_rollouts: usize,
    /// Sample actions during evaluation rollouts.
    pub eval_stochastic: bool,
    pub seed: u64,
}

impl Default for DealioConfig {
    fn default() -> Self {
        Self {
            trajectories_per_iteration: 10,
            max_iterations: 50,
            disc_batches: 10,
            controller_updates: 1,
            init_cov: 1.0,
            cov_floor: 1e-4,
            cov_ceiling: 1.0,
            entropy_decay: 0.97,
            controller_step: 0.5,
            pilqr: PilqrConfig::default(),
            disc: DiscConfig::default(),
            fit: FitConfig::default(),
            transform: TransformConfig::default(),
            baseline: BaselineConfig::default(),
            eval_rollouts: 10,
            eval_stochastic: true,
            seed: 0,
        }
    }
}

impl DealioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if self.trajectories_per_iteration < 2 {
            return bad("trajectories_per_iteration must be at least 2");
        }
        if self.disc_batches == 0 || self.controller_updates == 0 || self.eval_rollouts == 0 {
            return bad("batch, update and evaluation counts must be positive");
        }
        if !(self.init_cov > 0.0)
            || !(self.cov_floor > 0.0)
            || !(self.cov_ceiling >= self.cov_floor)
        {
            return bad("covariance settings must satisfy 0 < floor <= ceiling and init_cov > 0");
        }
        if !(self.controller_step > 0.0 && self.controller_step <= 1.0) {
            return bad("controller_step must lie in (0, 1]");
        }
        if !(self.entropy_decay > 0.0 && self.entropy_decay <= 1.0) {
            return bad("entropy_decay must lie in (0, 1]");
        }
        if !(self.baseline.learning_rate >= 0.0) || !(self.baseline.clip_norm > 0.0) {
            return bad("baseline learning rate must be >= 0 and clip norm > 0");
        }
        self.pilqr.lqr.validate()?;
        self.pilqr.pi2.validate()
    }
}

/// Returns of the reference controllers used to normalize scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreReference {
    pub random_return: f64,
    pub expert_return: f64,
}

impl ScoreReference {
    pub fn score(&self, raw: f64) -> Result<f64> {
        normalized_score(raw, self.random_return, self.expert_return)
    }

    /// Evaluates a zero-mean controller with variance `init_cov` and the expert.
    pub fn compute(
        env: &dyn Environment,
        expert: &TvlgController,
        init_cov: f64,
        rollouts: usize,
        seed: u64,
        stochastic: bool,
    ) -> Result<Self> {
        let random = init_controller(env.spec(), init_cov)?;
        let eval_seed = derive_seed(seed, STREAM_EVAL, u64::MAX);
        Ok(Self {
            random_return: true_return(env, &random, rollouts, eval_seed, true)?,
            expert_return: true_return(env, expert, rollouts, eval_seed, stochastic)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub iteration: usize,
    pub env_transitions: u64,
    pub mean_true_return: f64,
    pub normalized_score: f64,
    pub disc_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LearningCurve {
    pub rows: Vec<CurveRow>,
}

pub const CURVE_HEADER: &str =
    "iteration,env_transitions,mean_true_return,normalized_score,disc_loss";

impl LearningCurve {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Transitions consumed when the score first reached `threshold`.
    pub fn transitions_to_reach(&self, threshold: f64) -> Option<u64> {
        self.rows
            .iter()
            .find(|r| r.normalized_score >= threshold)
            .map(|r| r.env_transitions)
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{CURVE_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.iteration,
                r.env_transitions,
                format_float(r.mean_true_return),
                format_float(r.normalized_score),
                format_float(r.disc_loss)
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != CURVE_HEADER {
            return Err(Error::Parse {
                line: 1,
                message: format!("unexpected learning-curve header {header:?}"),
            });
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                line: i + 2,
                message,
            };
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != 5 {
                return Err(parse_err(format!(
                    "expected 5 fields, found {}",
                    fields.len()
                )));
            }
            let float = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| parse_err(format!("{s:?}: {e}")))
            };
            rows.push(CurveRow {
                iteration: fields[0].parse().map_err(|e| parse_err(format!("{e}")))?,
                env_transitions: fields[1].parse().map_err(|e| parse_err(format!("{e}")))?,
                mean_true_return: float(fields[2])?,
                normalized_score: float(fields[3])?,
                disc_loss: float(fields[4])?,
            });
        }
        Ok(Self { rows })
    }
}

/// Zero-mean controller with covariance `init_cov · I` at every step.
pub fn init_controller(spec: &EnvSpec, init_cov: f64) -> Result<TvlgController> {
    spec.validate()?;
    TvlgController::zero(spec.n, spec.m, spec.horizon, init_cov)
}

/// Clamps every covariance eigenvalue into `[floor, ceiling]`.
pub fn clamp_covariances(
    ctrl: &TvlgController,
    floor: f64,
    ceiling: f64,
) -> Result<TvlgController> {
    let covs = ctrl
        .covariances()
        .iter()
        .map(|c| {
            let eig = symmetrize(c).symmetric_eigen();
            let clamped = eig.eigenvalues.map(|l| l.clamp(floor, ceiling));
            let q = &eig.eigenvectors;
            symmetrize(&(q * DMatrix::from_diagonal(&clamped) * q.transpose()))
        })
        .collect();
    ctrl.with_covariances(covs)
}

/// Means moved a fraction `step` from `old` towards `new`; covariances from `new`.
pub fn blend_means(
    old: &TvlgController,
    new: &TvlgController,
    step: f64,
) -> Result<TvlgController> {
    if step == 1.0 {
        return Ok(new.clone());
    }
    let horizon = new.horizon();
    let gains = (0..horizon)
        .map(|t| old.gain(t) + (new.gain(t) - old.gain(t)) * step)
        .collect();
    let offsets = (0..horizon)
        .map(|t| old.offset(t) + (new.offset(t) - old.offset(t)) * step)
        .collect();
    TvlgController::new(gains, offsets, new.covariances().to_vec())
}

/// State of one training run.
pub struct Imitator<'a> {
    env: &'a dyn Environment,
    demos: &'a DemonstrationSet,
    cfg: DealioConfig,
    refs: ScoreReference,
    algo: Algorithm,
    pub controller: TvlgController,
    pub discriminator: Discriminator,
    pub curve: LearningCurve,
    iteration: usize,
    env_transitions: u64,
}

impl<'a> Imitator<'a> {
    pub fn new(
        env: &'a dyn Environment,
        demos: &'a DemonstrationSet,
        cfg: &DealioConfig,
        refs: ScoreReference,
        algo: Algorithm,
    ) -> Result<Self> {
        cfg.validate()?;
        let spec = env.spec();
        check_dim("demonstration state dimension", spec.n, demos.state_dim())?;
        check_dim("demonstration horizon", spec.horizon, demos.horizon())?;
        let controller = init_controller(spec, cfg.init_cov)?;
        let discriminator = Discriminator::new(
            spec.n,
            &cfg.disc,
            &mut seeded(derive_seed(cfg.seed, STREAM_DISC_INIT, 0)),
        )?;
        Ok(Self {
            env,
            demos,
            cfg: cfg.clone(),
            refs,
            algo,
            controller,
            discriminator,
            curve: LearningCurve::default(),
            iteration: 0,
            env_transitions: 0,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Stochastic rollouts of the current controller for this iteration.
    pub fn collect(&self) -> Result<Vec<Trajectory>> {
        let per_iter = self.cfg.trajectories_per_iteration as u64;
        (0..per_iter)
            .map(|i| {
                let seed = derive_seed(
                    self.cfg.seed,
                    STREAM_ROLLOUT,
                    self.iteration as u64 * per_iter + i,
                );
                rollout(self.env, &self.controller, seed, true)
            })
            .collect()
    }

    fn entropy_temp(&self) -> f64 {
        self.cfg.pilqr.lqr.entropy_temp * self.cfg.entropy_decay.powi(self.iteration as i32)
    }

    /// One full iteration: collect, fit, train the discriminator, update the
    /// controller, evaluate.
    pub fn step(&mut self) -> Result<&CurveRow> {
        let iteration = self.iteration;
        self.step_inner().map_err(|e| Error::Iteration {
            iteration,
            source: Box::new(e),
        })?;
        Ok(self.curve.rows.last().expect("row just pushed"))
    }

    fn step_inner(&mut self) -> Result<()> {
        let trajs = self.collect()?;
        let mut disc_rng = seeded(derive_seed(
            self.cfg.seed,
            STREAM_DISC_TRAIN,
            self.iteration as u64,
        ));
        let disc_loss =
            self.discriminator
                .train(&trajs, self.demos, self.cfg.disc_batches, &mut disc_rng)?;
        for _ in 0..self.cfg.controller_updates {
            self.controller = match self.algo {
                Algorithm::Dealio => self.pilqr_step(&trajs)?,
                Algorithm::Baseline => self.policy_gradient_step(&trajs)?,
            };
        }
        self.env_transitions += trajs.iter().map(|t| t.horizon() as u64).sum::<u64>();

        let eval_seed = derive_seed(self.cfg.seed, STREAM_EVAL, 0);
        let mean_true_return = true_return(
            self.env,
            &self.controller,
            self.cfg.eval_rollouts,
            eval_seed,
            self.cfg.eval_stochastic,
        )?;
        let row = CurveRow {
            iteration: self.iteration,
            env_transitions: self.env_transitions,
            mean_true_return,
            normalized_score: self.refs.score(mean_true_return)?,
            disc_loss,
        };
        debug!(
            "{} iteration {}: score {:.3}, disc loss {:.4}",
            self.algo.name(),
            row.iteration,
            row.normalized_score,
            row.disc_loss
        );
        self.curve.rows.push(row);
        self.iteration += 1;
        Ok(())
    }

    fn pilqr_step(&self, trajs: &[Trajectory]) -> Result<TvlgController> {
        let dynamics = fit_dynamics(trajs, &self.cfg.fit)?;
        let cost = extract_cost(&self.discriminator, &dynamics, trajs, &self.cfg.transform)?;
        for t in 0..cost.horizon() {
            debug_assert!(
                cost.min_action_eigenvalue(t) >= self.cfg.transform.delta_reg * (1.0 - 1e-9)
            );
        }
        let disc = &self.discriminator;
        let step_cost = |_t: usize, s: &DVector<f64>, s_next: &DVector<f64>, _a: &DVector<f64>| {
            disc.cost_value(s, s_next)
        };
        let mut pilqr_cfg = self.cfg.pilqr;
        pilqr_cfg.lqr.entropy_temp = self.entropy_temp();
        let updated = pilqr_update(
            &self.controller,
            trajs,
            &dynamics,
            &cost,
            &step_cost,
            &pilqr_cfg,
        )?;
        let damped = blend_means(&self.controller, &updated, self.cfg.controller_step)?;
        clamp_covariances(&damped, self.cfg.cov_floor, self.cfg.cov_ceiling)
    }

    /// Score-function gradient step on the controller means under the
    /// per-step cost `log σ(d)`, with a per-step mean baseline.
    fn policy_gradient_step(&self, trajs: &[Trajectory]) -> Result<TvlgController> {
        let horizon = self.controller.horizon();
        let count = trajs.len();
        let mut costs = DMatrix::zeros(count, horizon);
        for (i, traj) in trajs.iter().enumerate() {
            let d = self.discriminator.d_values(&traj.transitions());
            for (t, &x) in d.iter().enumerate() {
                costs[(i, t)] = log_sigmoid(x);
            }
        }
        let to_go = crate::pi2::cost_to_go(&costs);
        let mut grad_k = Vec::with_capacity(horizon);
        let mut grad_off = Vec::with_capacity(horizon);
        let mut sq_norm = 0.0;
        for t in 0..horizon {
            let baseline = to_go.column(t).mean();
            let chol = self
                .controller
                .covariance(t)
                .clone()
                .cholesky()
                .expect("controller covariances are SPD");
            let (m, n) = self.controller.gain(t).shape();
            let mut gk = DMatrix::zeros(m, n);
            let mut go = DVector::zeros(m);
            for (i, traj) in trajs.iter().enumerate() {
                let s = &traj.states()[t];
                let score = chol.solve(&(&traj.actions()[t] - self.controller.mean_action(t, s)));
                let adv = (to_go[(i, t)] - baseline) / count as f64;
                gk.ger(adv, &score, s, 1.0);
                go.axpy(adv, &score, 1.0);
            }
            sq_norm += gk.norm_squared() + go.norm_squared();
            grad_k.push(gk);
            grad_off.push(go);
        }
        let norm = sq_norm.sqrt();
        let scale = if norm > self.cfg.baseline.clip_norm {
            self.cfg.baseline.clip_norm / norm
        } else {
            1.0
        };
        let lr = self.cfg.baseline.learning_rate * scale;
        let gains = (0..horizon)
            .map(|t| self.controller.gain(t) - &grad_k[t] * lr)
            .collect();
        let offsets = (0..horizon)
            .map(|t| self.controller.offset(t) - &grad_off[t] * lr)
            .collect();
        TvlgController::new(gains, offsets, self.controller.covariances().to_vec())
    }
}

fn log_sigmoid(x: f64) -> f64 {
    -((-x.abs()).exp().ln_1p() + (-x).max(0.0))
}

/// Final artifacts of a run.
pub struct RunOutput {
    pub curve: LearningCurve,
    pub controller: TvlgController,
    pub discriminator: Discriminator,
}

pub fn run_algorithm(
    env: &dyn Environment,
    demos: &DemonstrationSet,
    cfg: &DealioConfig,
    refs: ScoreReference,
    algo: Algorithm,
) -> Result<RunOutput> {
    let mut imitator = Imitator::new(env, demos, cfg, refs, algo)?;
    for _ in 0..cfg.max_iterations {
        let row = imitator.step()?;
        info!(
            "{} seed {} iteration {}: {} transitions, score {:.3}",
            algo.name(),
            cfg.seed,
            row.iteration,
            row.env_transitions,
            row.normalized_score
        );
    }
    Ok(RunOutput {
        curve: imitator.curve,
        controller: imitator.controller,
        discriminator: imitator.discriminator,
    })
}

pub fn run_dealio(
    env: &dyn Environment,
    demos: &DemonstrationSet,
    cfg: &DealioConfig,
    refs: ScoreReference,
) -> Result<RunOutput> {
    run_algorithm(env, demos, cfg, refs, Algorithm::Dealio)
}

pub fn run_baseline(
    env: &dyn Environment,
    demos: &DemonstrationSet,
    cfg: &DealioConfig,
    refs: ScoreReference,
) -> Result<RunOutput> {
    run_algorithm(env, demos, cfg, refs, Algorithm::Baseline)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertConfig {
    pub trajectories_per_iteration: usize,
    pub max_iterations: usize,
    /// Relative improvement over `patience` iterations below which training stops.
    pub rel_tol: f64,
    pub patience: usize,
    pub init_cov: f64,
    pub cov_floor: f64,
    pub cov_ceiling: f64,
    pub pilqr: PilqrConfig,
    pub fit: FitConfig,
    pub eval_rollouts: usize,
    pub seed: u64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            trajectories_per_iteration: 20,
            max_iterations: 100,
            rel_tol: 0.01,
            patience: 5,
            init_cov: 1.0,
            cov_floor: 1e-4,
            cov_ceiling: 1.0,
            pilqr: PilqrConfig::default(),
            fit: FitConfig::default(),
            eval_rollouts: 10,
            seed: 0,
        }
    }
}

/// True when the last return improved on the one `patience` iterations
/// earlier by less than `rel_tol` of its magnitude.
pub fn has_converged(returns: &[f64], patience: usize, rel_tol: f64) -> bool {
    if returns.len() <= patience {
        return false;
    }
    let last = returns[returns.len() - 1];
    let before = returns[returns.len() - 1 - patience];
    last - before < rel_tol * before.abs()
}

/// Trains a controller on the environment's own cost with the two-stage
/// update. Returns the controller and the per-iteration evaluated returns.
pub fn train_expert(
    env: &dyn Environment,
    cfg: &ExpertConfig,
) -> Result<(TvlgController, Vec<f64>)> {
    let mut ctrl = init_controller(env.spec(), cfg.init_cov)?;
    let mut returns = Vec::new();
    let step_cost =
        |t: usize, s: &DVector<f64>, _s_next: &DVector<f64>, a: &DVector<f64>| env.cost(t, s, a);
    let per_iter = cfg.trajectories_per_iteration as u64;
    let eval_seed = derive_seed(cfg.seed, STREAM_EVAL, 0);
    for iteration in 0..cfg.max_iterations {
        let trajs: Vec<Trajectory> = (0..per_iter)
            .map(|i| {
                rollout(
                    env,
                    &ctrl,
                    derive_seed(cfg.seed, STREAM_ROLLOUT, iteration as u64 * per_iter + i),
                    true,
                )
            })
            .collect::<Result<_>>()?;
        let update = || -> Result<TvlgController> {
            let dynamics = fit_dynamics(&trajs, &cfg.fit)?;
            let cost = env.quadratic_cost(&mean_states(&trajs)?);
            let next = pilqr_update(&ctrl, &trajs, &dynamics, &cost, &step_cost, &cfg.pilqr)?;
            clamp_covariances(&next, cfg.cov_floor, cfg.cov_ceiling)
        };
        ctrl = update().map_err(|e| Error::Iteration {
            iteration,
            source: Box::new(e),
        })?;
        let ret = true_return(env, &ctrl, cfg.eval_rollouts, eval_seed, false)?;
        debug!("expert iteration {iteration}: return {ret:.4}");
        returns.push(ret);
        if has_converged(&returns, cfg.patience, cfg.rel_tol) {
            break;
        }
    }
    Ok((ctrl, returns))
}

/// `count` stochastic rollouts of `expert` with the actions dropped.
pub fn generate_demos(
    env: &dyn Environment,
    expert: &TvlgController,
    count: usize,
    seed: u64,
) -> Result<DemonstrationSet> {
    if count == 0 {
        return Err(Error::InvalidArgument(
            "demonstration count must be at least 1".into(),
        ));
    }
    let demos: Vec<Demonstration> = (0..count as u64)
        .map(|i| {
            rollout(env, expert, derive_seed(seed, STREAM_DEMO, i), true)
                .map(|t| t.to_demonstration())
        })
        .collect::<Result<_>>()?;
    DemonstrationSet::new(demos)
}

/// Wraps an environment and replaces its cost with an unrelated function.
/// Dynamics and resets are untouched, so anything that does not read the
/// cost behaves identically.
pub struct PoisonedCost<'a> {
    pub inner: &'a dyn Environment,
}

impl PoisonedCost<'_> {
    fn poison(state: &DVector<f64>, action: &DVector<f64>) -> f64 {
        1e3 - 7.0 * state.sum() + 3.0 * action.norm_squared()
    }
}

impl Environment for PoisonedCost<'_> {
    fn spec(&self) -> &EnvSpec {
        self.inner.spec()
    }

    fn reset_with(&self, rng: &mut crate::rng::SimRng) -> DVector<f64> {
        self.inner.reset_with(rng)
    }

    fn clamp_action(&self, action: &DVector<f64>) -> DVector<f64> {
        self.inner.clamp_action(action)
    }

    fn step(
        &self,
        t: usize,
        state: &DVector<f64>,
        action: &DVector<f64>,
        rng: &mut crate::rng::SimRng,
    ) -> Result<(DVector<f64>, f64)> {
        let (next, _) = self.inner.step(t, state, action, rng)?;
        Ok((next, Self::poison(state, action)))
    }

    fn cost(&self, _t: usize, state: &DVector<f64>, action: &DVector<f64>) -> f64 {
        Self::poison(state, action)
    }

    fn terminal_cost(&self, state: &DVector<f64>) -> f64 {
        -state.sum()
    }

    fn quadratic_cost(&self, mean_states: &[DVector<f64>]) -> crate::types::QuadraticCost {
        self.inner.quadratic_cost(mean_states).scaled(-2.0)
    }
}
