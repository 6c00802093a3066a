//! Path-integral policy improvement on per-trajectory costs.
//!
//! Each sampled trajectory is weighted per step by the softmax of its negated
//! cost-to-go; the controller is then refit to the reweighted samples by
//! weighted ridge regression of actions on states.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{floor_eigenvalues, symmetrize};
use crate::types::{StatePath, Trajectory, TvlgController};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pi2Config {
    /// Softmax temperature `η`.
    pub temperature: f64,
    /// Min-max normalize the cost-to-go across samples before exponentiating.
    pub normalize_costs: bool,
    /// Refit covariances to the weighted action residuals.
    pub cov_update: bool,
    /// Ridge on the gain in the weighted regression.
    pub ridge: f64,
    /// Eigenvalue floor for refit covariances.
    pub cov_floor: f64,
}

impl Default for Pi2Config {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            normalize_costs: true,
            cov_update: false,
            ridge: 1e-6,
            cov_floor: 1e-6,
        }
    }
}

impl Pi2Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !(self.ridge >= 0.0) || !(self.cov_floor > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "invalid PI2 config {self:?}"
            )));
        }
        Ok(())
    }
}

/// Suffix sums along time: `S[i, t] = Σ_{t' ≥ t} r[i, t']`.
pub fn cost_to_go(residual: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = residual.clone();
    for t in (0..residual.ncols().saturating_sub(1)).rev() {
        let next = out.column(t + 1).into_owned();
        let mut col = out.column_mut(t);
        col += next;
    }
    out
}

/// Softmax weights for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepWeights {
    pub weights: DVector<f64>,
    /// False when every sample had the same cost-to-go, so the weights carry
    /// no preference.
    pub informative: bool,
}

pub fn step_weights(costs: &DVector<f64>, cfg: &Pi2Config) -> StepWeights {
    let count = costs.len();
    let lo = costs.min();
    let hi = costs.max();
    let range = hi - lo;
    let informative = range > 1e-12 * hi.abs().max(lo.abs()).max(1.0);
    let shifted: DVector<f64> = if cfg.normalize_costs {
        if range > 0.0 {
            costs.map(|s| (s - lo) / range)
        } else {
            DVector::zeros(count)
        }
    } else {
        costs.map(|s| s - lo)
    };
    let raw = shifted.map(|s| (-s / cfg.temperature).exp());
    let total = raw.sum();
    let weights = if total > 0.0 && total.is_finite() {
        raw / total
    } else {
        warn!("all path-integral weights vanished; falling back to uniform weights");
        DVector::from_element(count, 1.0 / count as f64)
    };
    StepWeights {
        weights,
        informative,
    }
}

/// Per-step weights for an `N × T` residual matrix.
pub fn pi2_weights(residual: &DMatrix<f64>, cfg: &Pi2Config) -> Vec<StepWeights> {
    let s = cost_to_go(residual);
    (0..s.ncols())
        .map(|t| step_weights(&s.column(t).into_owned(), cfg))
        .collect()
}

/// One regression sample: state, target action, weight.
pub(crate) struct Row<'a> {
    pub state: &'a DVector<f64>,
    pub target: DVector<f64>,
    pub weight: f64,
}

/// Minimizes `Σ w ‖y − K x − k‖² + ridge ‖K − K₀‖²` with `k` unpenalized.
pub(crate) fn weighted_affine_fit(
    rows: &[Row<'_>],
    ridge: f64,
    prior_gain: Option<&DMatrix<f64>>,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = rows[0].state.len();
    let m = rows[0].target.len();
    let total: f64 = rows.iter().map(|r| r.weight).sum();
    let x_mean = rows
        .iter()
        .fold(DVector::zeros(n), |acc, r| acc + r.state * r.weight)
        / total;
    let y_mean = rows
        .iter()
        .fold(DVector::zeros(m), |acc, r| acc + &r.target * r.weight)
        / total;
    let mut sxx = DMatrix::<f64>::identity(n, n) * ridge;
    let mut sxy = DMatrix::<f64>::zeros(n, m);
    for r in rows {
        let xc = r.state - &x_mean;
        let yc = &r.target - &y_mean;
        sxx.ger(r.weight, &xc, &xc, 1.0);
        sxy.ger(r.weight, &xc, &yc, 1.0);
    }
    if let Some(k0) = prior_gain {
        sxy += k0.transpose() * ridge;
    }
    let gain_t = match sxx.clone().cholesky() {
        Some(chol) => chol.solve(&sxy),
        None => {
            sxx.pseudo_inverse(1e-12)
                .expect("pseudo-inverse of a symmetric matrix")
                * &sxy
        }
    };
    let gain = gain_t.transpose();
    let offset = &y_mean - &gain * &x_mean;
    (gain, offset)
}

pub(crate) fn weighted_residual_covariance(
    rows: &[Row<'_>],
    gain: &DMatrix<f64>,
    offset: &DVector<f64>,
    floor: f64,
) -> DMatrix<f64> {
    let m = offset.len();
    let total: f64 = rows.iter().map(|r| r.weight).sum();
    let mut cov = DMatrix::<f64>::zeros(m, m);
    for r in rows {
        let e = &r.target - gain * r.state - offset;
        cov.ger(r.weight / total, &e, &e, 1.0);
    }
    floor_eigenvalues(&symmetrize(&cov), floor)
}

pub(crate) fn check_residual(
    trajs: &[Trajectory],
    residual: &DMatrix<f64>,
    horizon: usize,
) -> Result<()> {
    if trajs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "path-integral update needs at least 2 trajectories, got {}",
            trajs.len()
        )));
    }
    check_dim("residual rows", trajs.len(), residual.nrows())?;
    check_dim("residual columns", horizon, residual.ncols())?;
    if residual.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("residual costs"));
    }
    for traj in trajs {
        check_dim("trajectory horizon", horizon, traj.horizon())?;
    }
    Ok(())
}

/// Refits `ctrl` to its own samples reweighted by the residual cost-to-go.
pub fn pi2_update(
    ctrl: &TvlgController,
    trajs: &[Trajectory],
    residual: &DMatrix<f64>,
    cfg: &Pi2Config,
) -> Result<TvlgController> {
    cfg.validate()?;
    let horizon = ctrl.horizon();
    check_residual(trajs, residual, horizon)?;
    let weights = pi2_weights(residual, cfg);
    let mut gains = Vec::with_capacity(horizon);
    let mut offsets = Vec::with_capacity(horizon);
    let mut covs = Vec::with_capacity(horizon);
    for (t, w) in weights.iter().enumerate() {
        let rows: Vec<Row<'_>> = trajs
            .iter()
            .zip(w.weights.iter())
            .map(|(traj, &weight)| Row {
                state: &traj.states()[t],
                target: traj.actions()[t].clone(),
                weight,
            })
            .collect();
        let (gain, offset) = weighted_affine_fit(&rows, cfg.ridge, None);
        let cov = if cfg.cov_update {
            weighted_residual_covariance(&rows, &gain, &offset, cfg.cov_floor)
        } else {
            ctrl.covariance(t).clone()
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

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn constant_costs_give_uniform_weights() {
        let w = step_weights(&v(&[3.0, 3.0, 3.0, 3.0]), &Pi2Config::default());
        assert!(w.weights.iter().all(|&x| x == 0.25));
        assert!(!w.informative);
    }

    #[test]
    fn three_sample_softmax_values() {
        // exp(-s)/Σexp(-s) for s = (0, 1, 2); checked against an independent script
        let cfg = Pi2Config {
            normalize_costs: false,
            ..Pi2Config::default()
        };
        let w = step_weights(&v(&[0.0, 1.0, 2.0]), &cfg);
        let expected = [
            0.665_240_955_774_821_8,
            0.244_728_471_054_797_64,
            0.090_030_573_170_380_46,
        ];
        for (a, b) in w.weights.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((w.weights[0] - 0.66524).abs() < 5e-6);
    }

    #[test]
    fn low_temperature_picks_the_best_sample() {
        let cfg = Pi2Config {
            temperature: 1e-3,
            ..Pi2Config::default()
        };
        let w = step_weights(&v(&[0.0, 1.0]), &cfg);
        assert!(w.weights[0] > 1.0 - 1e-12);
    }

    #[test]
    fn cost_to_go_suffix_sums() {
        let r = DMatrix::from_element(2, 3, 1.0);
        let s = cost_to_go(&r);
        assert_eq!(
            s.row(0).iter().copied().collect::<Vec<_>>(),
            vec![3.0, 2.0, 1.0]
        );
        let single = DMatrix::from_row_slice(2, 1, &[4.0, -1.0]);
        assert_eq!(cost_to_go(&single), single);
    }

    #[test]
    fn needs_two_trajectories() {
        let traj = Trajectory::new(vec![v(&[0.0]), v(&[1.0])], vec![v(&[1.0])]).unwrap();
        let ctrl = TvlgController::zero(1, 1, 1, 1.0).unwrap();
        let r = DMatrix::zeros(1, 1);
        assert!(pi2_update(&ctrl, &[traj], &r, &Pi2Config::default()).is_err());
    }

    #[test]
    fn low_temperature_regresses_onto_the_best_action() {
        let trajs: Vec<_> = [(0.0, 1.0), (0.5, -2.0)]
            .iter()
            .map(|&(s, a)| Trajectory::new(vec![v(&[s]), v(&[s + a])], vec![v(&[a])]).unwrap())
            .collect();
        let ctrl = TvlgController::zero(1, 1, 1, 1.0).unwrap();
        let residual = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let cfg = Pi2Config {
            temperature: 1e-3,
            ..Pi2Config::default()
        };
        let out = pi2_update(&ctrl, &trajs, &residual, &cfg).unwrap();
        assert!((out.mean_action(0, &v(&[0.0]))[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn covariances_pass_through_without_cov_update() {
        let trajs: Vec<_> = (0..4)
            .map(|i| {
                let s = i as f64 * 0.3;
                Trajectory::new(vec![v(&[s]), v(&[s])], vec![v(&[s * s])]).unwrap()
            })
            .collect();
        let ctrl = TvlgController::zero(1, 1, 1, 0.37).unwrap();
        let residual = DMatrix::from_row_slice(4, 1, &[0.3, 0.1, 0.9, 0.2]);
        let out = pi2_update(&ctrl, &trajs, &residual, &Pi2Config::default()).unwrap();
        assert_eq!(out.covariances(), ctrl.covariances());

        let cfg = Pi2Config {
            cov_update: true,
            ..Pi2Config::default()
        };
        let out = pi2_update(&ctrl, &trajs, &residual, &cfg).unwrap();
        assert!(out.covariance(0)[(0, 0)] >= cfg.cov_floor);
        assert_ne!(out.covariances(), ctrl.covariances());
    }
}
