//! Desk-scale simulation environments and rollout collection.
//!
//! Each environment owns a ground-truth running cost. That cost is only ever
//! read by expert training and by evaluation; the imitation loop sees states.

use nalgebra::{DMatrix, DVector, Vector2};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{all_finite_vec, quadratic_form};
use crate::rng::{seeded, standard_normal, SimRng};
use crate::types::{QuadraticCost, StatePath, Trajectory, TvlgController};

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
    pub dt: f64,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.horizon == 0 || !(self.dt > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "invalid environment spec {self:?}"
            )));
        }
        Ok(())
    }
}

pub trait Environment: Send + Sync {
    fn spec(&self) -> &EnvSpec;

    /// Initial state drawn from `rng`.
    fn reset_with(&self, rng: &mut SimRng) -> DVector<f64>;

    /// Maps a commanded action to the action the plant actually receives.
    fn clamp_action(&self, action: &DVector<f64>) -> DVector<f64> {
        action.clone()
    }

    /// Advances one step and returns the next state with the true running cost.
    fn step(
        &self,
        t: usize,
        state: &DVector<f64>,
        action: &DVector<f64>,
        rng: &mut SimRng,
    ) -> Result<(DVector<f64>, f64)>;

    /// True running cost of taking `action` in `state` at step `t`.
    fn cost(&self, t: usize, state: &DVector<f64>, action: &DVector<f64>) -> f64;

    fn terminal_cost(&self, _state: &DVector<f64>) -> f64 {
        0.0
    }

    /// Time-indexed quadratic model of the true cost around the given
    /// per-step mean states (`T + 1` of them). Used for expert training only.
    fn quadratic_cost(&self, mean_states: &[DVector<f64>]) -> QuadraticCost;

    fn reset(&self, seed: u64) -> DVector<f64> {
        self.reset_with(&mut seeded(seed))
    }
}

fn check_step_inputs(spec: &EnvSpec, state: &DVector<f64>, action: &DVector<f64>) -> Result<()> {
    check_dim("environment state", spec.n, state.len())?;
    check_dim("environment action", spec.m, action.len())?;
    if !all_finite_vec(state) || !all_finite_vec(action) {
        return Err(Error::NonFinite("environment step input"));
    }
    Ok(())
}

/// Linear time-invariant plant `s' = A s + B a + d + noise`.
#[derive(Debug, Clone)]
pub struct LtiEnv {
    spec: EnvSpec,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub drift: DVector<f64>,
    pub noise_std: f64,
    pub x0: DVector<f64>,
    pub x0_jitter: f64,
    pub true_cost: QuadraticCost,
}

impl LtiEnv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        drift: DVector<f64>,
        noise_std: f64,
        x0: DVector<f64>,
        x0_jitter: f64,
        true_cost: QuadraticCost,
    ) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        check_dim("A columns", n, a.ncols())?;
        check_dim("B rows", n, b.nrows())?;
        check_dim("drift", n, drift.len())?;
        check_dim("x0", n, x0.len())?;
        check_dim("cost state dimension", n, true_cost.state_dim())?;
        check_dim("cost action dimension", m, true_cost.action_dim())?;
        if noise_std < 0.0 || x0_jitter < 0.0 {
            return Err(Error::InvalidArgument(
                "noise levels must be nonnegative".into(),
            ));
        }
        let spec = EnvSpec {
            name: name.into(),
            n,
            m,
            horizon: true_cost.horizon(),
            dt: 1.0,
        };
        spec.validate()?;
        Ok(Self {
            spec,
            a,
            b,
            drift,
            noise_std,
            x0,
            x0_jitter,
            true_cost,
        })
    }
}

impl Environment for LtiEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset_with(&self, rng: &mut SimRng) -> DVector<f64> {
        let jitter = standard_normal(rng, self.spec.n);
        if self.x0_jitter == 0.0 {
            return self.x0.clone();
        }
        &self.x0 + jitter * self.x0_jitter
    }

    fn step(
        &self,
        t: usize,
        state: &DVector<f64>,
        action: &DVector<f64>,
        rng: &mut SimRng,
    ) -> Result<(DVector<f64>, f64)> {
        check_step_inputs(&self.spec, state, action)?;
        let noise = standard_normal(rng, self.spec.n);
        let mut next = &self.a * state + &self.b * action + &self.drift;
        if self.noise_std > 0.0 {
            next += noise * self.noise_std;
        }
        Ok((next, self.cost(t, state, action)))
    }

    fn cost(&self, t: usize, state: &DVector<f64>, action: &DVector<f64>) -> f64 {
        let z = crate::linalg::concat(state, action);
        quadratic_form(
            self.true_cost.matrix(t),
            self.true_cost.vector(t),
            self.true_cost.constant(t),
            &z,
        )
    }

    fn terminal_cost(&self, state: &DVector<f64>) -> f64 {
        quadratic_form(
            self.true_cost.terminal_matrix(),
            self.true_cost.terminal_vector(),
            self.true_cost.terminal_constant(),
            state,
        )
    }

    fn quadratic_cost(&self, _mean_states: &[DVector<f64>]) -> QuadraticCost {
        self.true_cost.clone()
    }
}

/// Point mass on a plane that must visit a red target and then a green one.
///
/// State layout (10-d): `[pos(2), vel(2), pos - red(2), pos - green(2),
/// reached_red, t / T]`. Action: 2-d force, clamped to `±action_limit`.
#[derive(Debug, Clone)]
pub struct DiscEnv {
    spec: EnvSpec,
    pub params: DiscParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscParams {
    pub mass: f64,
    pub damping: f64,
    pub dt: f64,
    pub horizon: usize,
    pub target_red: [f64; 2],
    pub target_green: [f64; 2],
    pub switch_radius: f64,
    pub x0: [f64; 2],
    pub x0_jitter: f64,
    pub noise_std: f64,
    pub action_limit: f64,
    pub distance_weight: f64,
    pub action_penalty: f64,
    /// Steps the expert's quadratic surrogate keeps targeting red after every
    /// sample has reached it.
    pub surrogate_hold: usize,
}

impl Default for DiscParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            damping: 1.0,
            dt: 0.05,
            horizon: 100,
            target_red: [1.0, 0.5],
            target_green: [-0.5, 1.0],
            switch_radius: 0.15,
            x0: [0.0, 0.0],
            x0_jitter: 0.02,
            noise_std: 0.01,
            action_limit: 10.0,
            distance_weight: 1.0,
            action_penalty: 1e-3,
            surrogate_hold: 10,
        }
    }
}

impl DiscEnv {
    pub const STATE_DIM: usize = 10;
    pub const ACTION_DIM: usize = 2;
    pub const POS: usize = 0;
    pub const VEL: usize = 2;
    pub const REL_RED: usize = 4;
    pub const REL_GREEN: usize = 6;
    pub const FLAG: usize = 8;
    pub const TIME: usize = 9;

    pub fn new(params: DiscParams) -> Result<Self> {
        let positive = [
            params.mass,
            params.damping,
            params.dt,
            params.switch_radius,
            params.action_limit,
        ];
        if positive.iter().any(|&x| !(x > 0.0)) || params.horizon == 0 {
            return Err(Error::InvalidArgument(
                "disc parameters must be positive".into(),
            ));
        }
        if params.x0_jitter < 0.0 || params.noise_std < 0.0 || params.action_penalty < 0.0 {
            return Err(Error::InvalidArgument(
                "disc noise and penalty terms must be nonnegative".into(),
            ));
        }
        let spec = EnvSpec {
            name: "disc".into(),
            n: Self::STATE_DIM,
            m: Self::ACTION_DIM,
            horizon: params.horizon,
            dt: params.dt,
        };
        Ok(Self { spec, params })
    }

    fn red(&self) -> Vector2<f64> {
        Vector2::from(self.params.target_red)
    }

    fn green(&self) -> Vector2<f64> {
        Vector2::from(self.params.target_green)
    }

    fn assemble(&self, pos: Vector2<f64>, vel: Vector2<f64>, flag: f64, time: f64) -> DVector<f64> {
        let rr = pos - self.red();
        let rg = pos - self.green();
        DVector::from_vec(vec![
            pos.x, pos.y, vel.x, vel.y, rr.x, rr.y, rg.x, rg.y, flag, time,
        ])
    }

    fn position(state: &DVector<f64>) -> Vector2<f64> {
        Vector2::new(state[Self::POS], state[Self::POS + 1])
    }

    /// Whether the red target has been reached in this state.
    pub fn reached_red(state: &DVector<f64>) -> bool {
        state[Self::FLAG] >= 0.5
    }

    pub fn distance_to_green(&self, state: &DVector<f64>) -> f64 {
        (Self::position(state) - self.green()).norm()
    }

    pub fn switch_radius(&self) -> f64 {
        self.params.switch_radius
    }
}

impl Environment for DiscEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset_with(&self, rng: &mut SimRng) -> DVector<f64> {
        let jitter = standard_normal(rng, 2);
        let pos = Vector2::new(
            self.params.x0[0] + self.params.x0_jitter * jitter[0],
            self.params.x0[1] + self.params.x0_jitter * jitter[1],
        );
        self.assemble(pos, Vector2::zeros(), 0.0, 0.0)
    }

    fn clamp_action(&self, action: &DVector<f64>) -> DVector<f64> {
        let lim = self.params.action_limit;
        action.map(|x| x.clamp(-lim, lim))
    }

    fn step(
        &self,
        t: usize,
        state: &DVector<f64>,
        action: &DVector<f64>,
        rng: &mut SimRng,
    ) -> Result<(DVector<f64>, f64)> {
        check_step_inputs(&self.spec, state, action)?;
        let p = &self.params;
        let a = self.clamp_action(action);
        let force = Vector2::new(a[0], a[1]);
        let pos = Self::position(state);
        let vel = Vector2::new(state[Self::VEL], state[Self::VEL + 1]);
        let noise = standard_normal(rng, 2);
        let mut vel_next = vel + (force / p.mass - vel * p.damping) * p.dt;
        if p.noise_std > 0.0 {
            vel_next += Vector2::new(noise[0], noise[1]) * p.noise_std;
        }
        let pos_next = pos + vel_next * p.dt;
        let reached = (pos_next - self.red()).norm() < p.switch_radius;
        let flag = if Self::reached_red(state) || reached {
            1.0
        } else {
            0.0
        };
        let time = state[Self::TIME] + 1.0 / p.horizon as f64;
        let cost = self.cost(t, state, &a);
        Ok((self.assemble(pos_next, vel_next, flag, time), cost))
    }

    fn cost(&self, _t: usize, state: &DVector<f64>, action: &DVector<f64>) -> f64 {
        let a = self.clamp_action(action);
        let target = if Self::reached_red(state) {
            self.green()
        } else {
            self.red()
        };
        let d = Self::position(state) - target;
        self.params.distance_weight * d.norm_squared()
            + self.params.action_penalty * a.norm_squared()
    }

    /// Targets red until `surrogate_hold` steps after the first step at which
    /// every sample has reached it (mean flag of one), then green. Holding on
    /// red keeps the linear-quadratic solution from cutting the corner
    /// towards green before the flag is set, which the local model cannot see.
    fn quadratic_cost(&self, mean_states: &[DVector<f64>]) -> QuadraticCost {
        let (n, m) = (Self::STATE_DIM, Self::ACTION_DIM);
        let horizon = self.spec.horizon;
        let w = self.params.distance_weight;
        let (red, green) = (self.red(), self.green());
        let mut mats = Vec::with_capacity(horizon);
        let mut vecs = Vec::with_capacity(horizon);
        let mut consts = Vec::with_capacity(horizon);
        let switch = mean_states
            .iter()
            .position(|s| s[Self::FLAG] >= 1.0 - 1e-9)
            .map_or(usize::MAX, |t| t.saturating_add(self.params.surrogate_hold));
        for t in 0..horizon {
            let p = if t >= switch { 1.0 } else { 0.0 };
            let target = red * (1.0 - p) + green * p;
            let mut c = DMatrix::zeros(n + m, n + m);
            let mut v = DVector::zeros(n + m);
            for i in 0..2 {
                c[(Self::POS + i, Self::POS + i)] = 2.0 * w;
                c[(n + i, n + i)] = 2.0 * self.params.action_penalty;
                v[Self::POS + i] = -2.0 * w * target[i];
            }
            mats.push(c);
            vecs.push(v);
            consts.push(w * ((1.0 - p) * red.norm_squared() + p * green.norm_squared()));
        }
        QuadraticCost::new(n, m, mats, vecs, consts).expect("disc cost model is well formed")
    }
}

/// Rolls `ctrl` out from a seeded reset. Recorded actions are the clamped
/// actions actually applied. Returns the trajectory and its true total cost.
pub fn rollout_with_cost(
    env: &dyn Environment,
    ctrl: &TvlgController,
    seed: u64,
    stochastic: bool,
) -> Result<(Trajectory, f64)> {
    let spec = env.spec();
    check_dim("controller horizon", spec.horizon, ctrl.horizon())?;
    check_dim("controller state dimension", spec.n, ctrl.state_dim())?;
    check_dim("controller action dimension", spec.m, ctrl.action_dim())?;
    let mut rng = seeded(seed);
    let mut state = env.reset_with(&mut rng);
    let mut states = Vec::with_capacity(spec.horizon + 1);
    let mut actions = Vec::with_capacity(spec.horizon);
    let mut total = 0.0;
    for t in 0..spec.horizon {
        let mut action = ctrl.mean_action(t, &state);
        if stochastic {
            action += ctrl.cholesky_factor(t) * standard_normal(&mut rng, spec.m);
        }
        let action = env.clamp_action(&action);
        let (next, cost) = env
            .step(t, &state, &action, &mut rng)
            .map_err(|_| Error::RolloutDiverged { step: t })?;
        if !all_finite_vec(&next) || !cost.is_finite() {
            return Err(Error::RolloutDiverged { step: t });
        }
        total += cost;
        states.push(std::mem::replace(&mut state, next));
        actions.push(action);
    }
    total += env.terminal_cost(&state);
    states.push(state);
    Ok((Trajectory::new(states, actions)?, total))
}

pub fn rollout(
    env: &dyn Environment,
    ctrl: &TvlgController,
    seed: u64,
    stochastic: bool,
) -> Result<Trajectory> {
    rollout_with_cost(env, ctrl, seed, stochastic).map(|(traj, _)| traj)
}

/// Per-rollout returns (negated total true cost) over seeds `seed, seed+1, ...`.
pub fn sample_returns(
    env: &dyn Environment,
    ctrl: &TvlgController,
    num_rollouts: usize,
    seed: u64,
    stochastic: bool,
) -> Result<Vec<f64>> {
    if num_rollouts == 0 {
        return Err(Error::InvalidArgument(
            "at least one evaluation rollout is required".into(),
        ));
    }
    (0..num_rollouts as u64)
        .map(|i| rollout_with_cost(env, ctrl, seed.wrapping_add(i), stochastic).map(|(_, c)| -c))
        .collect()
}

/// Mean negated cumulative true cost; higher is better.
pub fn true_return(
    env: &dyn Environment,
    ctrl: &TvlgController,
    num_rollouts: usize,
    seed: u64,
    stochastic: bool,
) -> Result<f64> {
    let r = sample_returns(env, ctrl, num_rollouts, seed, stochastic)?;
    Ok(r.iter().sum::<f64>() / r.len() as f64)
}

/// Fraction of rollouts that reach red and finish within the switch radius of green.
pub fn disc_success_rate(
    env: &DiscEnv,
    ctrl: &TvlgController,
    num_rollouts: usize,
    seed: u64,
    stochastic: bool,
) -> Result<f64> {
    let mut hits = 0;
    for i in 0..num_rollouts as u64 {
        let traj = rollout(env, ctrl, seed.wrapping_add(i), stochastic)?;
        let last = traj.states().last().expect("nonempty");
        if DiscEnv::reached_red(last) && env.distance_to_green(last) < env.switch_radius() {
            hits += 1;
        }
    }
    Ok(hits as f64 / num_rollouts as f64)
}
