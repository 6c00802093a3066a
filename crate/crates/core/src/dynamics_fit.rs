//! Per-timestep linear-Gaussian dynamics fitted by ridge regression.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{all_finite_vec, concat, symmetrize};
use crate::types::{LinearGaussianDynamics, StatePath, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    /// Ridge strength on the normal equations (intercept excluded).
    pub reg: f64,
    /// Added to every residual covariance.
    pub cov_floor: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            reg: 1e-6,
            cov_floor: 1e-6,
        }
    }
}

/// Fits `s_{t+1} ≈ F_t [s_t; a_t] + f_t` independently at every step.
///
/// When fewer than `n + m + 2` trajectories are available, samples from
/// steps `t - 1` and `t + 1` are pooled in to keep the design well posed.
pub fn fit_dynamics(trajs: &[Trajectory], cfg: &FitConfig) -> Result<LinearGaussianDynamics> {
    let first = trajs
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot fit dynamics without trajectories".into()))?;
    if !(cfg.reg >= 0.0) || !(cfg.cov_floor > 0.0) {
        return Err(Error::InvalidArgument(
            "fit requires reg >= 0 and cov_floor > 0".into(),
        ));
    }
    let (n, m, horizon) = (first.state_dim(), first.action_dim(), first.horizon());
    for traj in trajs {
        check_dim("trajectory state dimension", n, traj.state_dim())?;
        check_dim("trajectory action dimension", m, traj.action_dim())?;
        check_dim("trajectory horizon", horizon, traj.horizon())?;
    }
    let pool = trajs.len() < n + m + 2;

    let mut transition = Vec::with_capacity(horizon);
    let mut drift = Vec::with_capacity(horizon);
    let mut noise = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let steps = if pool {
            t.saturating_sub(1)..=(t + 1).min(horizon - 1)
        } else {
            t..=t
        };
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        for traj in trajs {
            for k in steps.clone() {
                inputs.push(concat(&traj.states()[k], &traj.actions()[k]));
                outputs.push(traj.states()[k + 1].clone());
            }
        }
        let (f, c, sigma) = fit_step(&inputs, &outputs, cfg)?;
        transition.push(f);
        drift.push(c);
        noise.push(sigma);
    }
    LinearGaussianDynamics::new(n, m, transition, drift, noise)
}

/// Ridge regression of `outputs` on `inputs` with an unpenalized intercept.
fn fit_step(
    inputs: &[DVector<f64>],
    outputs: &[DVector<f64>],
    cfg: &FitConfig,
) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let count = inputs.len() as f64;
    let (d, n) = (inputs[0].len(), outputs[0].len());
    if !inputs.iter().chain(outputs).all(all_finite_vec) {
        return Err(Error::NonFinite("dynamics training data"));
    }
    let x_mean = inputs.iter().fold(DVector::zeros(d), |acc, x| acc + x) / count;
    let y_mean = outputs.iter().fold(DVector::zeros(n), |acc, y| acc + y) / count;

    let mut sxx = DMatrix::<f64>::identity(d, d) * cfg.reg;
    let mut sxy = DMatrix::<f64>::zeros(d, n);
    for (x, y) in inputs.iter().zip(outputs) {
        let xc = x - &x_mean;
        let yc = y - &y_mean;
        sxx.ger(1.0, &xc, &xc, 1.0);
        sxy.ger(1.0, &xc, &yc, 1.0);
    }
    let coeffs = match sxx.clone().cholesky() {
        Some(chol) => chol.solve(&sxy),
        None => {
            sxx.pseudo_inverse(1e-12)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?
                * &sxy
        }
    };
    let f = coeffs.transpose();
    let c = &y_mean - &f * &x_mean;

    let mut sigma = DMatrix::<f64>::zeros(n, n);
    for (x, y) in inputs.iter().zip(outputs) {
        let r = y - &f * x - &c;
        sigma.ger(1.0 / count, &r, &r, 1.0);
    }
    let sigma = symmetrize(&sigma) + DMatrix::identity(n, n) * cfg.cov_floor;
    Ok((f, c, sigma))
}
