//! Two-stage controller update: LQR on a quadratic surrogate, then a
//! path-integral correction driven by the residual between the true per-step
//! cost and that surrogate.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::linalg::{concat, quadratic_form};
use crate::lqr::{backward_recursion, LqrConfig};
use crate::pi2::{
    check_residual, pi2_weights, weighted_affine_fit, weighted_residual_covariance, Pi2Config, Row,
};
use crate::types::{LinearGaussianDynamics, QuadraticCost, StatePath, Trajectory, TvlgController};

/// `(t, s_t, s_{t+1}, a_t) -> cost`.
pub type StepCost<'a> = dyn Fn(usize, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> f64 + 'a;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PilqrConfig {
    pub lqr: LqrConfig,
    pub pi2: Pi2Config,
    /// Total weight of the stage-1 mean actions in the stage-2 regression,
    /// relative to the sampled trajectories whose weights sum to one.
    pub prior_weight: f64,
    /// Ridge pulling the stage-2 gains toward the stage-1 gains.
    pub gain_prior_strength: f64,
}

impl Default for PilqrConfig {
    fn default() -> Self {
        Self {
            lqr: LqrConfig::default(),
            pi2: Pi2Config::default(),
            prior_weight: 1.0,
            gain_prior_strength: 1.0,
        }
    }
}

/// `½ [s;a]ᵀ C_t [s;a] + [s;a]ᵀ c_t + cc_t`.
pub fn eval_quadratic(cost: &QuadraticCost, t: usize, s: &DVector<f64>, a: &DVector<f64>) -> f64 {
    quadratic_form(
        cost.matrix(t),
        cost.vector(t),
        cost.constant(t),
        &concat(s, a),
    )
}

/// `N × T` matrix of true step cost minus the quadratic surrogate.
pub fn residual_matrix(
    trajs: &[Trajectory],
    quad_cost: &QuadraticCost,
    true_step_cost: &StepCost<'_>,
) -> DMatrix<f64> {
    let horizon = quad_cost.horizon();
    DMatrix::from_fn(trajs.len(), horizon, |i, t| {
        let traj = &trajs[i];
        let (s, s_next, a) = (&traj.states()[t], &traj.states()[t + 1], &traj.actions()[t]);
        true_step_cost(t, s, s_next, a) - eval_quadratic(quad_cost, t, s, a)
    })
}

/// Stage 1 solves LQR on `quad_cost`; stage 2 refits each step to the
/// residual-weighted samples together with the stage-1 mean actions at the
/// same states. Steps whose residual cost-to-go is identical across samples
/// carry no information and keep the stage-1 solution.
pub fn pilqr_update(
    ctrl: &TvlgController,
    trajs: &[Trajectory],
    dynamics: &LinearGaussianDynamics,
    quad_cost: &QuadraticCost,
    true_step_cost: &StepCost<'_>,
    cfg: &PilqrConfig,
) -> Result<TvlgController> {
    cfg.pi2.validate()?;
    let horizon = ctrl.horizon();
    let stage1 = backward_recursion(dynamics, quad_cost, &cfg.lqr)?;
    let residual = residual_matrix(trajs, quad_cost, true_step_cost);
    check_residual(trajs, &residual, horizon)?;
    let weights = pi2_weights(&residual, &cfg.pi2);

    let count = trajs.len() as f64;
    let mut gains = Vec::with_capacity(horizon);
    let mut offsets = Vec::with_capacity(horizon);
    let mut covs = Vec::with_capacity(horizon);
    for (t, w) in weights.iter().enumerate() {
        if !w.informative {
            gains.push(stage1.gain(t).clone());
            offsets.push(stage1.offset(t).clone());
            covs.push(stage1.covariance(t).clone());
            continue;
        }
        let mut rows: Vec<Row<'_>> = trajs
            .iter()
            .zip(w.weights.iter())
            .map(|(traj, &weight)| Row {
                state: &traj.states()[t],
                target: traj.actions()[t].clone(),
                weight,
            })
            .collect();
        let sample_rows = rows.len();
        if cfg.prior_weight > 0.0 {
            for traj in trajs {
                let s = &traj.states()[t];
                rows.push(Row {
                    state: s,
                    target: stage1.mean_action(t, s),
                    weight: cfg.prior_weight / count,
                });
            }
        }
        let (gain, offset) =
            weighted_affine_fit(&rows, cfg.gain_prior_strength, Some(stage1.gain(t)));
        let cov = if cfg.pi2.cov_update {
            weighted_residual_covariance(&rows[..sample_rows], &gain, &offset, cfg.pi2.cov_floor)
        } else {
            stage1.covariance(t).clone()
        };
        gains.push(gain);
        offsets.push(offset);
        covs.push(cov);
    }
    TvlgController::new(gains, offsets, covs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    #[test]
    fn eval_quadratic_hand_cases() {
        let s = DVector::from_element(1, 2.0);
        let a = DVector::from_element(1, 5.0);
        let constant = QuadraticCost::new(
            1,
            1,
            vec![DMatrix::zeros(2, 2)],
            vec![DVector::zeros(2)],
            vec![3.0],
        )
        .unwrap();
        assert_eq!(eval_quadratic(&constant, 0, &s, &a), 3.0);
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let quad = QuadraticCost::new(1, 1, vec![c], vec![DVector::zeros(2)], vec![0.0]).unwrap();
        assert_eq!(eval_quadratic(&quad, 0, &s, &a), 4.0);
    }

    #[test]
    fn eval_quadratic_matches_explicit_sums() {
        let mut rng = seeded(5);
        let (n, m) = (3, 2);
        let d = n + m;
        let raw = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let c = &raw + raw.transpose();
        let vec = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let cost = QuadraticCost::new(n, m, vec![c.clone()], vec![vec.clone()], vec![0.7]).unwrap();
        let s = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let a = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let z: Vec<f64> = s.iter().chain(a.iter()).copied().collect();
        let mut expected = 0.7;
        for i in 0..d {
            expected += z[i] * vec[i];
            for j in 0..d {
                expected += 0.5 * z[i] * c[(i, j)] * z[j];
            }
        }
        assert!((eval_quadratic(&cost, 0, &s, &a) - expected).abs() < 1e-12);
    }
}
