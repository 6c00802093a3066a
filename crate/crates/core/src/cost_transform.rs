//! Maps the discriminator's transition-space quadratic into a time-indexed
//! state-action quadratic by substituting the local linear model
//! `s' = F_s s + F_a a + f`.

use nalgebra::{DMatrix, DVector};

use crate::discriminator::{Discriminator, QuadHeadOutput};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{concat, floor_eigenvalues, min_eigenvalue, quadratic_form, symmetrize};
use crate::types::{LinearGaussianDynamics, QuadraticCost, StatePath, Trajectory, Transition};

/// `½ [s;a]ᵀ C [s;a] + [s;a]ᵀ c + cc`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateActionQuadratic {
    pub matrix: DMatrix<f64>,
    pub vector: DVector<f64>,
    pub constant: f64,
}

impl StateActionQuadratic {
    pub fn eval(&self, s: &DVector<f64>, a: &DVector<f64>) -> f64 {
        quadratic_form(&self.matrix, &self.vector, self.constant, &concat(s, a))
    }
}

/// How per-step coefficients are obtained from the sampled transitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeIndexing {
    /// Evaluate the head once at the mean transition `(s̄_t, s̄_{t+1})`.
    #[default]
    MeanState,
    /// Transform the head of every sampled transition and average.
    AverageOfTransforms,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformConfig {
    /// Floor on the smallest eigenvalue of each action-action block.
    pub delta_reg: f64,
    pub indexing: TimeIndexing,
    /// Project each per-step matrix onto the positive semidefinite cone
    /// before the action-block floor, so the controller update never faces
    /// an unbounded-below quadratic.
    pub project_psd: bool,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self {
            delta_reg: 1e-4,
            indexing: TimeIndexing::MeanState,
            project_psd: true,
        }
    }
}

/// Substitutes `s' = F [s; a] + f` into `head`. `model` is `n × (n+m)`.
pub fn to_state_action(
    head: &QuadHeadOutput,
    model: &DMatrix<f64>,
    drift: &DVector<f64>,
) -> Result<StateActionQuadratic> {
    let n = head.state_dim();
    check_dim("head matrix", 2 * n, head.matrix.nrows())?;
    check_dim("model rows", n, model.nrows())?;
    check_dim("drift", n, drift.len())?;
    if model.ncols() < n {
        return Err(Error::Dimension {
            context: "model columns",
            expected: n,
            actual: model.ncols(),
        });
    }
    let m = model.ncols() - n;
    let fs = model.columns(0, n);
    let fa = model.columns(n, m);
    let c = &head.matrix;
    let c_ss = c.view((0, 0), (n, n));
    let c_sn = c.view((0, n), (n, n));
    let c_ns = c.view((n, 0), (n, n));
    let c_nn = c.view((n, n), (n, n));
    let v_s = head.vector.rows(0, n);
    let v_n = head.vector.rows(n, n);

    let block_ss = c_ss + fs.transpose() * c_ns + c_sn * fs + fs.transpose() * c_nn * fs;
    let block_sa = c_sn * fa + fs.transpose() * c_nn * fa;
    let block_as = fa.transpose() * c_ns + fa.transpose() * c_nn * fs;
    let block_aa = fa.transpose() * c_nn * fa;

    let nn_sum = c_nn + c_nn.transpose();
    let vec_s = (c_ns.transpose() + c_sn) * drift * 0.5
        + fs.transpose() * &nn_sum * drift * 0.5
        + v_s
        + fs.transpose() * v_n;
    let vec_a = fa.transpose() * &nn_sum * drift * 0.5 + fa.transpose() * v_n;
    let constant = 0.5 * drift.dot(&(c_nn * drift)) + v_n.dot(drift) + head.constant;

    let mut matrix = DMatrix::zeros(n + m, n + m);
    matrix.view_mut((0, 0), (n, n)).copy_from(&block_ss);
    matrix.view_mut((0, n), (n, m)).copy_from(&block_sa);
    matrix.view_mut((n, 0), (m, n)).copy_from(&block_as);
    matrix.view_mut((n, n), (m, m)).copy_from(&block_aa);
    Ok(StateActionQuadratic {
        matrix: symmetrize(&matrix),
        vector: concat(&vec_s, &vec_a),
        constant,
    })
}

/// Adds `max(0, δ − λ_min(C_aa)) I` to the trailing `m × m` block.
pub fn regularize_action_block(c: &DMatrix<f64>, m: usize, delta_reg: f64) -> DMatrix<f64> {
    let d = c.nrows();
    let lam = min_eigenvalue(&c.view((d - m, d - m), (m, m)).into_owned());
    let shift = (delta_reg - lam).max(0.0);
    let mut out = c.clone();
    if shift > 0.0 {
        for i in d - m..d {
            out[(i, i)] += shift;
        }
    }
    out
}

/// Per-step average of the sampled states, `t = 0..=T`.
pub fn mean_states(trajs: &[Trajectory]) -> Result<Vec<DVector<f64>>> {
    let first = trajs
        .first()
        .ok_or_else(|| Error::InvalidArgument("mean states need at least one trajectory".into()))?;
    let count = trajs.len() as f64;
    let mut means = first.states().to_vec();
    for traj in &trajs[1..] {
        check_dim("trajectory horizon", first.horizon(), traj.horizon())?;
        for (acc, s) in means.iter_mut().zip(traj.states()) {
            *acc += s;
        }
    }
    for acc in &mut means {
        *acc /= count;
    }
    Ok(means)
}

/// Time-indexed state-action cost for the controller update. The terminal
/// term is zero.
pub fn extract_cost(
    disc: &Discriminator,
    dynamics: &LinearGaussianDynamics,
    trajs: &[Trajectory],
    cfg: &TransformConfig,
) -> Result<QuadraticCost> {
    let n = dynamics.state_dim();
    let m = dynamics.action_dim();
    let horizon = dynamics.horizon();
    check_dim("discriminator state dimension", n, disc.state_dim())?;
    let means = mean_states(trajs)?;
    check_dim("trajectory horizon", horizon, means.len() - 1)?;

    let per_step: Vec<StateActionQuadratic> = match cfg.indexing {
        TimeIndexing::MeanState => {
            let pairs: Vec<Transition<'_>> = (0..horizon)
                .map(|t| Transition {
                    state: &means[t],
                    next: &means[t + 1],
                    step: t,
                })
                .collect();
            disc.head_outputs(&pairs)
                .iter()
                .enumerate()
                .map(|(t, head)| to_state_action(head, dynamics.transition(t), dynamics.drift(t)))
                .collect::<Result<_>>()?
        }
        TimeIndexing::AverageOfTransforms => {
            let count = trajs.len() as f64;
            let mut out = Vec::with_capacity(horizon);
            for t in 0..horizon {
                let pairs: Vec<Transition<'_>> = trajs
                    .iter()
                    .map(|tr| Transition {
                        state: &tr.states()[t],
                        next: &tr.states()[t + 1],
                        step: t,
                    })
                    .collect();
                let mut acc = StateActionQuadratic {
                    matrix: DMatrix::zeros(n + m, n + m),
                    vector: DVector::zeros(n + m),
                    constant: 0.0,
                };
                for head in disc.head_outputs(&pairs) {
                    let q = to_state_action(&head, dynamics.transition(t), dynamics.drift(t))?;
                    acc.matrix += q.matrix / count;
                    acc.vector += q.vector / count;
                    acc.constant += q.constant / count;
                }
                out.push(acc);
            }
            out
        }
    };

    let mut matrices = Vec::with_capacity(horizon);
    let mut vectors = Vec::with_capacity(horizon);
    let mut constants = Vec::with_capacity(horizon);
    for q in per_step {
        let matrix = if cfg.project_psd {
            floor_eigenvalues(&q.matrix, 0.0)
        } else {
            q.matrix
        };
        matrices.push(regularize_action_block(&matrix, m, cfg.delta_reg));
        vectors.push(q.vector);
        constants.push(q.constant);
    }
    QuadraticCost::new(n, m, matrices, vectors, constants)
}
