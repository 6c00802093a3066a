//! Finite-horizon LQR/LQG backward recursion and closed-form expected cost.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::symmetrize;
use crate::types::{LinearGaussianDynamics, QuadraticCost, TvlgController};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqrConfig {
    /// First additive regularizer tried on `Q_aa` when it is not positive definite.
    pub quu_reg_init: f64,
    pub quu_reg_growth: f64,
    pub max_reg_steps: usize,
    /// Scales `Q_aa⁻¹` into the controller covariance.
    pub entropy_temp: f64,
}

impl Default for LqrConfig {
    fn default() -> Self {
        Self {
            quu_reg_init: 1e-6,
            quu_reg_growth: 10.0,
            max_reg_steps: 8,
            entropy_temp: 1.0,
        }
    }
}

impl LqrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.quu_reg_init > 0.0 && self.quu_reg_growth > 1.0 && self.entropy_temp > 0.0)
            || self.max_reg_steps == 0
        {
            return Err(Error::InvalidArgument(format!(
                "invalid LQR config {self:?}"
            )));
        }
        Ok(())
    }
}

/// Riccati recursion on `½ zᵀ C z + zᵀ c` costs over `z = [s; a]` under the
/// affine model `s' = F z + f`. Noise does not enter the gains.
pub fn backward_recursion(
    dynamics: &LinearGaussianDynamics,
    cost: &QuadraticCost,
    cfg: &LqrConfig,
) -> Result<TvlgController> {
    cfg.validate()?;
    let (n, m, horizon) = (
        dynamics.state_dim(),
        dynamics.action_dim(),
        dynamics.horizon(),
    );
    check_dim("cost state dimension", n, cost.state_dim())?;
    check_dim("cost action dimension", m, cost.action_dim())?;
    check_dim("cost horizon", horizon, cost.horizon())?;

    let mut value_mat = cost.terminal_matrix().clone();
    let mut value_vec = cost.terminal_vector().clone();
    let mut gains = vec![DMatrix::zeros(m, n); horizon];
    let mut offsets = vec![DVector::zeros(m); horizon];
    let mut covs = vec![DMatrix::zeros(m, m); horizon];

    for t in (0..horizon).rev() {
        let f = dynamics.transition(t);
        let q_mat = symmetrize(&(cost.matrix(t) + f.transpose() * &value_mat * f));
        let q_vec = cost.vector(t) + f.transpose() * (&value_mat * dynamics.drift(t) + &value_vec);

        let q_ss = q_mat.view((0, 0), (n, n));
        let q_as = q_mat.view((n, 0), (m, n)).into_owned();
        let q_aa = q_mat.view((n, n), (m, m)).into_owned();
        let q_a = q_vec.rows(n, m).into_owned();

        let (q_aa_reg, chol) = regularized_cholesky(&q_aa, cfg).ok_or(Error::Conditioning {
            step: t,
            attempts: cfg.max_reg_steps,
        })?;
        let gain = -chol.solve(&q_as);
        let offset = -chol.solve(&q_a);
        let q_aa_inv = chol.inverse();

        // V = Q_ss + Q_saK + KᵀQ_as + KᵀQ_aaK, v = q_s + Kᵀq_a + Q_sak + KᵀQ_aak
        let kt = gain.transpose();
        let q_sa = q_as.transpose();
        value_mat = symmetrize(&(q_ss + &q_sa * &gain + &kt * &q_as + &kt * &q_aa_reg * &gain));
        value_vec = q_vec.rows(0, n) + &kt * &q_a + &q_sa * &offset + &kt * (&q_aa_reg * &offset);

        gains[t] = gain;
        offsets[t] = offset;
        covs[t] = symmetrize(&(q_aa_inv * cfg.entropy_temp));
    }
    TvlgController::new(gains, offsets, covs)
}

fn regularized_cholesky(
    q_aa: &DMatrix<f64>,
    cfg: &LqrConfig,
) -> Option<(DMatrix<f64>, nalgebra::Cholesky<f64, nalgebra::Dyn>)> {
    let q_aa = symmetrize(q_aa);
    if let Some(chol) = q_aa.clone().cholesky() {
        return Some((q_aa, chol));
    }
    let m = q_aa.nrows();
    let mut delta = cfg.quu_reg_init;
    for _ in 0..cfg.max_reg_steps {
        let candidate = &q_aa + DMatrix::identity(m, m) * delta;
        if let Some(chol) = candidate.clone().cholesky() {
            return Some((candidate, chol));
        }
        delta *= cfg.quu_reg_growth;
    }
    None
}

/// Exact expected cumulative cost of `ctrl` under the linear-Gaussian model
/// from `s_0 ~ N(x0_mean, x0_cov)`, by Gaussian moment propagation.
pub fn expected_model_cost(
    ctrl: &TvlgController,
    dynamics: &LinearGaussianDynamics,
    cost: &QuadraticCost,
    x0_mean: &DVector<f64>,
    x0_cov: &DMatrix<f64>,
) -> Result<f64> {
    let (n, m, horizon) = (
        dynamics.state_dim(),
        dynamics.action_dim(),
        dynamics.horizon(),
    );
    check_dim("controller horizon", horizon, ctrl.horizon())?;
    check_dim("controller state dimension", n, ctrl.state_dim())?;
    check_dim("cost horizon", horizon, cost.horizon())?;
    check_dim("initial mean", n, x0_mean.len())?;

    let mut mean = x0_mean.clone();
    let mut cov = x0_cov.clone();
    let mut total = 0.0;
    for t in 0..horizon {
        let k = ctrl.gain(t);
        let mut z_mean = DVector::zeros(n + m);
        z_mean.rows_mut(0, n).copy_from(&mean);
        z_mean.rows_mut(n, m).copy_from(&ctrl.mean_action(t, &mean));

        let cross = k * &cov;
        let mut z_cov = DMatrix::zeros(n + m, n + m);
        z_cov.view_mut((0, 0), (n, n)).copy_from(&cov);
        z_cov.view_mut((n, 0), (m, n)).copy_from(&cross);
        z_cov.view_mut((0, n), (n, m)).copy_from(&cross.transpose());
        z_cov
            .view_mut((n, n), (m, m))
            .copy_from(&(&cross * k.transpose() + ctrl.covariance(t)));

        let c = cost.matrix(t);
        total += 0.5 * (z_mean.dot(&(c * &z_mean)) + (c * &z_cov).trace())
            + z_mean.dot(cost.vector(t))
            + cost.constant(t);

        let f = dynamics.transition(t);
        mean = f * &z_mean + dynamics.drift(t);
        cov = symmetrize(&(f * &z_cov * f.transpose() + dynamics.noise(t)));
    }
    let ct = cost.terminal_matrix();
    total += 0.5 * (mean.dot(&(ct * &mean)) + (ct * &cov).trace())
        + mean.dot(cost.terminal_vector())
        + cost.terminal_constant();
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, standard_normal};
    use rand::Rng;

    fn scalar(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    fn one_step_problem() -> (LinearGaussianDynamics, QuadraticCost) {
        let dynamics = LinearGaussianDynamics::time_invariant(
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::zeros(1),
            scalar(0.0),
            1,
        )
        .unwrap();
        let cost = QuadraticCost::with_terminal(
            1,
            1,
            vec![DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 2.0])],
            vec![DVector::zeros(2)],
            vec![0.0],
            scalar(2.0),
            DVector::zeros(1),
            0.0,
        )
        .unwrap();
        (dynamics, cost)
    }

    #[test]
    fn analytic_one_step_gain() {
        // min_a a² + (s + a)²  ⇒  a = -s/2
        let (dynamics, cost) = one_step_problem();
        let ctrl = backward_recursion(&dynamics, &cost, &LqrConfig::default()).unwrap();
        assert!((ctrl.gain(0)[(0, 0)] + 0.5).abs() <= 1e-10);
        assert_eq!(ctrl.offset(0)[0], 0.0);
        // Q_aa = 4
        assert!((ctrl.covariance(0)[(0, 0)] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn zero_cost_gives_zero_controller() {
        let dynamics = LinearGaussianDynamics::time_invariant(
            DMatrix::from_row_slice(2, 3, &[1.0, 0.1, 0.0, 0.0, 1.0, 0.1]),
            DVector::from_vec(vec![0.3, -0.2]),
            DMatrix::identity(2, 2) * 1e-3,
            4,
        )
        .unwrap();
        let cfg = LqrConfig::default();
        let ctrl = backward_recursion(&dynamics, &QuadraticCost::zeros(2, 1, 4), &cfg).unwrap();
        for t in 0..4 {
            assert_eq!(ctrl.gain(t).amax(), 0.0);
            assert_eq!(ctrl.offset(t).amax(), 0.0);
            assert!(
                (ctrl.covariance(t)[(0, 0)] - cfg.entropy_temp / cfg.quu_reg_init).abs() < 1e-3
            );
        }
    }

    #[test]
    fn conditioning_failure_reports_step() {
        let dynamics = LinearGaussianDynamics::time_invariant(
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::zeros(1),
            scalar(0.0),
            3,
        )
        .unwrap();
        let c = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -1e3]);
        let cost =
            QuadraticCost::new(1, 1, vec![c; 3], vec![DVector::zeros(2); 3], vec![0.0; 3]).unwrap();
        match backward_recursion(&dynamics, &cost, &LqrConfig::default()) {
            Err(Error::Conditioning { step, attempts }) => {
                assert_eq!(step, 2);
                assert_eq!(attempts, 8);
            }
            other => panic!("expected conditioning error, got {other:?}"),
        }
    }

    #[test]
    fn no_affine_terms_means_no_offsets() {
        let mut rng = seeded(3);
        let (n, m, horizon) = (3, 2, 5);
        let f = DMatrix::from_fn(n, n + m, |_, _| rng.random_range(-1.0..1.0));
        let dynamics = LinearGaussianDynamics::time_invariant(
            f,
            DVector::zeros(n),
            DMatrix::identity(n, n) * 0.1,
            horizon,
        )
        .unwrap();
        let l = DMatrix::from_fn(n + m, n + m, |_, _| rng.random_range(-1.0..1.0));
        let c = &l * l.transpose() + DMatrix::identity(n + m, n + m) * 0.1;
        let cost = QuadraticCost::new(
            n,
            m,
            vec![c; horizon],
            vec![DVector::zeros(n + m); horizon],
            vec![0.0; horizon],
        )
        .unwrap();
        let ctrl = backward_recursion(&dynamics, &cost, &LqrConfig::default()).unwrap();
        for t in 0..horizon {
            assert_eq!(ctrl.offset(t).amax(), 0.0);
        }
    }

    #[test]
    fn expected_cost_of_zero_cost_is_zero() {
        let (dynamics, _) = one_step_problem();
        let ctrl = TvlgController::zero(1, 1, 1, 1.0).unwrap();
        let c = expected_model_cost(
            &ctrl,
            &dynamics,
            &QuadraticCost::zeros(1, 1, 1),
            &DVector::zeros(1),
            &scalar(1.0),
        )
        .unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn expected_cost_degenerate_matches_direct_sum() {
        let (dynamics, cost) = one_step_problem();
        let ctrl = TvlgController::new(
            vec![scalar(-0.3)],
            vec![DVector::from_element(1, 0.2)],
            vec![scalar(1e-300)],
        )
        .unwrap();
        let s0 = 1.5;
        let a0 = -0.3 * s0 + 0.2;
        let direct = a0 * a0 + (s0 + a0) * (s0 + a0);
        let e = expected_model_cost(
            &ctrl,
            &dynamics,
            &cost,
            &DVector::from_element(1, s0),
            &scalar(0.0),
        )
        .unwrap();
        assert!((e - direct).abs() < 1e-12);
    }

    #[test]
    fn expected_cost_matches_monte_carlo() {
        // 1-d, T = 2, noisy model, noisy controller, linear cost terms
        let dynamics = LinearGaussianDynamics::time_invariant(
            DMatrix::from_row_slice(1, 2, &[0.9, 0.5]),
            DVector::from_element(1, 0.1),
            scalar(0.04),
            2,
        )
        .unwrap();
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
        let cost = QuadraticCost::with_terminal(
            1,
            1,
            vec![c.clone(), c * 2.0],
            vec![DVector::from_vec(vec![0.3, -0.1]); 2],
            vec![0.5, 0.25],
            scalar(1.5),
            DVector::from_element(1, -0.2),
            0.1,
        )
        .unwrap();
        let ctrl = TvlgController::new(
            vec![scalar(-0.4), scalar(-0.2)],
            vec![
                DVector::from_element(1, 0.1),
                DVector::from_element(1, -0.3),
            ],
            vec![scalar(0.09), scalar(0.16)],
        )
        .unwrap();
        let (m0, v0) = (0.5, 0.25);
        let exact = expected_model_cost(
            &ctrl,
            &dynamics,
            &cost,
            &DVector::from_element(1, m0),
            &scalar(v0),
        )
        .unwrap();

        let mut rng = seeded(2024);
        let samples = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..samples {
            let z = standard_normal(&mut rng, 6);
            let mut s = m0 + v0.sqrt() * z[0];
            let mut total = 0.0;
            for t in 0..2 {
                let a = ctrl.gain(t)[(0, 0)] * s
                    + ctrl.offset(t)[0]
                    + ctrl.covariance(t)[(0, 0)].sqrt() * z[1 + 2 * t];
                let zt = DVector::from_vec(vec![s, a]);
                total += crate::linalg::quadratic_form(
                    cost.matrix(t),
                    cost.vector(t),
                    cost.constant(t),
                    &zt,
                );
                s = 0.9 * s + 0.5 * a + 0.1 + 0.2 * z[2 + 2 * t];
            }
            total += 0.75 * s * s - 0.2 * s + 0.1;
            sum += total;
            sum_sq += total * total;
        }
        let mean = sum / samples as f64;
        let var = sum_sq / samples as f64 - mean * mean;
        let se = (var / samples as f64).sqrt();
        assert!(
            (mean - exact).abs() < 3.0 * se,
            "mc {mean} exact {exact} se {se}"
        );
    }

    #[test]
    fn cost_scaling_keeps_gains_and_scales_covariance() {
        let mut rng = seeded(11);
        let (n, m, horizon) = (2, 2, 4);
        let f = DMatrix::from_fn(n, n + m, |_, _| rng.random_range(-1.0..1.0));
        let dynamics = LinearGaussianDynamics::time_invariant(
            f,
            DVector::from_element(n, 0.1),
            DMatrix::identity(n, n),
            horizon,
        )
        .unwrap();
        let l = DMatrix::from_fn(n + m, n + m, |_, _| rng.random_range(-1.0..1.0));
        let c = &l * l.transpose() + DMatrix::identity(n + m, n + m) * 0.1;
        let cost = QuadraticCost::new(
            n,
            m,
            vec![c; horizon],
            vec![DVector::from_element(n + m, 0.3); horizon],
            vec![1.0; horizon],
        )
        .unwrap();
        let cfg = LqrConfig::default();
        let base = backward_recursion(&dynamics, &cost, &cfg).unwrap();
        let lambda = 7.5;
        let scaled = backward_recursion(&dynamics, &cost.scaled(lambda), &cfg).unwrap();
        for t in 0..horizon {
            assert!((base.gain(t) - scaled.gain(t)).amax() < 1e-10);
            assert!((base.offset(t) - scaled.offset(t)).amax() < 1e-10);
            let expected = base.covariance(t) / lambda;
            assert!((&expected - scaled.covariance(t)).amax() <= 1e-12 * expected.amax().max(1.0));
        }
    }
}
