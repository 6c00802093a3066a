//! Value types shared by every stage of the pipeline.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{
    all_finite_mat, all_finite_vec, floor_eigenvalues, min_eigenvalue, symmetrize,
};

/// Relative tolerance under which expert and random references are treated as equal.
const REFERENCE_TOL: f64 = 1e-12;

/// One consecutive state pair `(s_t, s_{t+1})` tagged with its step index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition<'a> {
    pub state: &'a DVector<f64>,
    pub next: &'a DVector<f64>,
    pub step: usize,
}

/// Anything that carries a state sequence of length `T + 1`.
pub trait StatePath {
    fn states(&self) -> &[DVector<f64>];

    fn horizon(&self) -> usize {
        self.states().len() - 1
    }

    fn state_dim(&self) -> usize {
        self.states()[0].len()
    }

    /// Exactly `T` pairs in time order.
    fn transitions(&self) -> Vec<Transition<'_>> {
        self.states()
            .windows(2)
            .enumerate()
            .map(|(step, w)| Transition {
                state: &w[0],
                next: &w[1],
                step,
            })
            .collect()
    }
}

fn validate_states(states: &[DVector<f64>]) -> Result<usize> {
    if states.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "a state sequence needs at least two states, got {}",
            states.len()
        )));
    }
    let n = states[0].len();
    if n == 0 {
        return Err(Error::InvalidArgument(
            "state dimension must be positive".into(),
        ));
    }
    for s in states {
        check_dim("state", n, s.len())?;
        if !all_finite_vec(s) {
            return Err(Error::NonFinite("state"));
        }
    }
    Ok(n)
}

/// A rollout: `T + 1` states and `T` actions.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: Vec<DVector<f64>>,
    actions: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn new(states: Vec<DVector<f64>>, actions: Vec<DVector<f64>>) -> Result<Self> {
        validate_states(&states)?;
        check_dim("trajectory action count", states.len() - 1, actions.len())?;
        let m = actions[0].len();
        if m == 0 {
            return Err(Error::InvalidArgument(
                "action dimension must be positive".into(),
            ));
        }
        for a in &actions {
            check_dim("action", m, a.len())?;
            if !all_finite_vec(a) {
                return Err(Error::NonFinite("action"));
            }
        }
        Ok(Self { states, actions })
    }

    pub fn actions(&self) -> &[DVector<f64>] {
        &self.actions
    }

    pub fn action_dim(&self) -> usize {
        self.actions[0].len()
    }

    /// Drops the actions.
    pub fn to_demonstration(&self) -> Demonstration {
        Demonstration {
            states: self.states.clone(),
        }
    }
}

impl StatePath for Trajectory {
    fn states(&self) -> &[DVector<f64>] {
        &self.states
    }
}

/// A state-only demonstration.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    states: Vec<DVector<f64>>,
}

impl Demonstration {
    pub fn new(states: Vec<DVector<f64>>) -> Result<Self> {
        validate_states(&states)?;
        Ok(Self { states })
    }
}

impl StatePath for Demonstration {
    fn states(&self) -> &[DVector<f64>] {
        &self.states
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemonstrationSet {
    demos: Vec<Demonstration>,
    n: usize,
    horizon: usize,
}

impl DemonstrationSet {
    pub fn new(demos: Vec<Demonstration>) -> Result<Self> {
        let first = demos
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty demonstration set".into()))?;
        let (n, horizon) = (first.state_dim(), first.horizon());
        for d in &demos {
            check_dim("demonstration state dimension", n, d.state_dim())?;
            check_dim("demonstration horizon", horizon, d.horizon())?;
        }
        Ok(Self { demos, n, horizon })
    }

    pub fn demos(&self) -> &[Demonstration] {
        &self.demos
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn transitions(&self) -> Vec<Transition<'_>> {
        self.demos.iter().flat_map(|d| d.transitions()).collect()
    }
}

/// Time-varying linear-Gaussian policy `a_t ~ N(K_t s_t + k_t, Σ_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TvlgController {
    gains: Vec<DMatrix<f64>>,
    offsets: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
    chol_factors: Vec<DMatrix<f64>>,
}

impl TvlgController {
    pub fn new(
        gains: Vec<DMatrix<f64>>,
        offsets: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let horizon = gains.len();
        if horizon == 0 {
            return Err(Error::InvalidArgument(
                "controller horizon must be positive".into(),
            ));
        }
        check_dim("controller offsets", horizon, offsets.len())?;
        check_dim("controller covariances", horizon, covariances.len())?;
        let (m, n) = gains[0].shape();
        let mut chol_factors = Vec::with_capacity(horizon);
        let mut covs = Vec::with_capacity(horizon);
        for t in 0..horizon {
            check_dim("gain rows", m, gains[t].nrows())?;
            check_dim("gain columns", n, gains[t].ncols())?;
            check_dim("offset", m, offsets[t].len())?;
            check_dim("covariance rows", m, covariances[t].nrows())?;
            check_dim("covariance columns", m, covariances[t].ncols())?;
            if !all_finite_mat(&gains[t])
                || !all_finite_vec(&offsets[t])
                || !all_finite_mat(&covariances[t])
            {
                return Err(Error::NonFinite("controller parameters"));
            }
            let cov = symmetrize(&covariances[t]);
            let chol = cov.clone().cholesky().ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "controller covariance at step {t} is not positive definite"
                ))
            })?;
            chol_factors.push(chol.l());
            covs.push(cov);
        }
        Ok(Self {
            gains,
            offsets,
            covariances: covs,
            chol_factors,
        })
    }

    /// `K_t = 0`, `k_t = 0`, `Σ_t = variance · I`.
    pub fn zero(n: usize, m: usize, horizon: usize, variance: f64) -> Result<Self> {
        Self::new(
            vec![DMatrix::zeros(m, n); horizon],
            vec![DVector::zeros(m); horizon],
            vec![DMatrix::identity(m, m) * variance; horizon],
        )
    }

    pub fn horizon(&self) -> usize {
        self.gains.len()
    }

    pub fn state_dim(&self) -> usize {
        self.gains[0].ncols()
    }

    pub fn action_dim(&self) -> usize {
        self.gains[0].nrows()
    }

    pub fn gain(&self, t: usize) -> &DMatrix<f64> {
        &self.gains[t]
    }

    pub fn offset(&self, t: usize) -> &DVector<f64> {
        &self.offsets[t]
    }

    pub fn covariance(&self, t: usize) -> &DMatrix<f64> {
        &self.covariances[t]
    }

    /// Lower Cholesky factor of `Σ_t`.
    pub fn cholesky_factor(&self, t: usize) -> &DMatrix<f64> {
        &self.chol_factors[t]
    }

    pub fn gains(&self) -> &[DMatrix<f64>] {
        &self.gains
    }

    pub fn offsets(&self) -> &[DVector<f64>] {
        &self.offsets
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    pub fn mean_action(&self, t: usize, state: &DVector<f64>) -> DVector<f64> {
        &self.gains[t] * state + &self.offsets[t]
    }

    /// Same means, new covariances.
    pub fn with_covariances(&self, covariances: Vec<DMatrix<f64>>) -> Result<Self> {
        Self::new(self.gains.clone(), self.offsets.clone(), covariances)
    }

    /// Lifts every covariance eigenvalue to at least `floor`.
    pub fn with_covariance_floor(&self, floor: f64) -> Result<Self> {
        let covs = self
            .covariances
            .iter()
            .map(|c| floor_eigenvalues(c, floor))
            .collect();
        self.with_covariances(covs)
    }
}

/// Per-step local model `s_{t+1} ~ N(F_t [s_t; a_t] + f_t, Σ_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianDynamics {
    n: usize,
    m: usize,
    transition: Vec<DMatrix<f64>>,
    drift: Vec<DVector<f64>>,
    noise: Vec<DMatrix<f64>>,
}

impl LinearGaussianDynamics {
    pub fn new(
        n: usize,
        m: usize,
        transition: Vec<DMatrix<f64>>,
        drift: Vec<DVector<f64>>,
        noise: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let horizon = transition.len();
        if horizon == 0 {
            return Err(Error::InvalidArgument(
                "dynamics horizon must be positive".into(),
            ));
        }
        check_dim("dynamics drift count", horizon, drift.len())?;
        check_dim("dynamics noise count", horizon, noise.len())?;
        for t in 0..horizon {
            check_dim("F rows", n, transition[t].nrows())?;
            check_dim("F columns", n + m, transition[t].ncols())?;
            check_dim("f length", n, drift[t].len())?;
            check_dim("Sigma rows", n, noise[t].nrows())?;
            check_dim("Sigma columns", n, noise[t].ncols())?;
            if !all_finite_mat(&transition[t])
                || !all_finite_vec(&drift[t])
                || !all_finite_mat(&noise[t])
            {
                return Err(Error::NonFinite("dynamics parameters"));
            }
        }
        let noise = noise.iter().map(symmetrize).collect();
        Ok(Self {
            n,
            m,
            transition,
            drift,
            noise,
        })
    }

    /// The same `(F, f, Σ)` at every step.
    pub fn time_invariant(
        transition: DMatrix<f64>,
        drift: DVector<f64>,
        noise: DMatrix<f64>,
        horizon: usize,
    ) -> Result<Self> {
        let n = transition.nrows();
        let m = transition.ncols().saturating_sub(n);
        Self::new(
            n,
            m,
            vec![transition; horizon],
            vec![drift; horizon],
            vec![noise; horizon],
        )
    }

    pub fn horizon(&self) -> usize {
        self.transition.len()
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn action_dim(&self) -> usize {
        self.m
    }

    /// `F_t`, shape `n × (n + m)`.
    pub fn transition(&self, t: usize) -> &DMatrix<f64> {
        &self.transition[t]
    }

    /// The first `n` columns of `F_t`.
    pub fn state_block(&self, t: usize) -> DMatrix<f64> {
        self.transition[t].columns(0, self.n).into_owned()
    }

    /// The last `m` columns of `F_t`.
    pub fn action_block(&self, t: usize) -> DMatrix<f64> {
        self.transition[t].columns(self.n, self.m).into_owned()
    }

    pub fn drift(&self, t: usize) -> &DVector<f64> {
        &self.drift[t]
    }

    pub fn noise(&self, t: usize) -> &DMatrix<f64> {
        &self.noise[t]
    }

    /// Mean next state under the model.
    pub fn predict(&self, t: usize, state: &DVector<f64>, action: &DVector<f64>) -> DVector<f64> {
        let f = &self.transition[t];
        f.columns(0, self.n) * state + f.columns(self.n, self.m) * action + &self.drift[t]
    }

    pub fn with_noise(&self, noise: Vec<DMatrix<f64>>) -> Result<Self> {
        Self::new(
            self.n,
            self.m,
            self.transition.clone(),
            self.drift.clone(),
            noise,
        )
    }
}

/// Time-indexed quadratic cost `½ zᵀ C_t z + zᵀ c_t + cc_t` over `z = [s; a]`,
/// plus a state-only terminal term.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    n: usize,
    m: usize,
    matrices: Vec<DMatrix<f64>>,
    vectors: Vec<DVector<f64>>,
    constants: Vec<f64>,
    terminal_matrix: DMatrix<f64>,
    terminal_vector: DVector<f64>,
    terminal_constant: f64,
}

impl QuadraticCost {
    /// Running terms only; the terminal term is zero.
    pub fn new(
        n: usize,
        m: usize,
        matrices: Vec<DMatrix<f64>>,
        vectors: Vec<DVector<f64>>,
        constants: Vec<f64>,
    ) -> Result<Self> {
        Self::with_terminal(
            n,
            m,
            matrices,
            vectors,
            constants,
            DMatrix::zeros(n, n),
            DVector::zeros(n),
            0.0,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_terminal(
        n: usize,
        m: usize,
        matrices: Vec<DMatrix<f64>>,
        vectors: Vec<DVector<f64>>,
        constants: Vec<f64>,
        terminal_matrix: DMatrix<f64>,
        terminal_vector: DVector<f64>,
        terminal_constant: f64,
    ) -> Result<Self> {
        let horizon = matrices.len();
        if horizon == 0 {
            return Err(Error::InvalidArgument(
                "cost horizon must be positive".into(),
            ));
        }
        check_dim("cost vectors", horizon, vectors.len())?;
        check_dim("cost constants", horizon, constants.len())?;
        let d = n + m;
        for t in 0..horizon {
            check_dim("cost matrix rows", d, matrices[t].nrows())?;
            check_dim("cost matrix columns", d, matrices[t].ncols())?;
            check_dim("cost vector", d, vectors[t].len())?;
            if !all_finite_mat(&matrices[t])
                || !all_finite_vec(&vectors[t])
                || !constants[t].is_finite()
            {
                return Err(Error::NonFinite("cost parameters"));
            }
        }
        check_dim("terminal matrix rows", n, terminal_matrix.nrows())?;
        check_dim("terminal matrix columns", n, terminal_matrix.ncols())?;
        check_dim("terminal vector", n, terminal_vector.len())?;
        if !all_finite_mat(&terminal_matrix)
            || !all_finite_vec(&terminal_vector)
            || !terminal_constant.is_finite()
        {
            return Err(Error::NonFinite("terminal cost"));
        }
        Ok(Self {
            n,
            m,
            matrices: matrices.iter().map(symmetrize).collect(),
            vectors,
            constants,
            terminal_matrix: symmetrize(&terminal_matrix),
            terminal_vector,
            terminal_constant,
        })
    }

    pub fn zeros(n: usize, m: usize, horizon: usize) -> Self {
        Self::new(
            n,
            m,
            vec![DMatrix::zeros(n + m, n + m); horizon],
            vec![DVector::zeros(n + m); horizon],
            vec![0.0; horizon],
        )
        .expect("zero cost is well formed")
    }

    pub fn horizon(&self) -> usize {
        self.matrices.len()
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn action_dim(&self) -> usize {
        self.m
    }

    pub fn matrix(&self, t: usize) -> &DMatrix<f64> {
        &self.matrices[t]
    }

    pub fn vector(&self, t: usize) -> &DVector<f64> {
        &self.vectors[t]
    }

    pub fn constant(&self, t: usize) -> f64 {
        self.constants[t]
    }

    pub fn terminal_matrix(&self) -> &DMatrix<f64> {
        &self.terminal_matrix
    }

    pub fn terminal_vector(&self) -> &DVector<f64> {
        &self.terminal_vector
    }

    pub fn terminal_constant(&self) -> f64 {
        self.terminal_constant
    }

    /// Smallest eigenvalue of the action-action block of `C_t`.
    pub fn min_action_eigenvalue(&self, t: usize) -> f64 {
        let c = &self.matrices[t];
        min_eigenvalue(&c.view((self.n, self.n), (self.m, self.m)).into_owned())
    }

    /// Multiplies every term by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            n: self.n,
            m: self.m,
            matrices: self.matrices.iter().map(|c| c * factor).collect(),
            vectors: self.vectors.iter().map(|c| c * factor).collect(),
            constants: self.constants.iter().map(|c| c * factor).collect(),
            terminal_matrix: &self.terminal_matrix * factor,
            terminal_vector: &self.terminal_vector * factor,
            terminal_constant: self.terminal_constant * factor,
        }
    }
}

/// Affine rescaling so that the random reference maps to 0 and the expert to 1.
pub fn normalized_score(raw_return: f64, random_return: f64, expert_return: f64) -> Result<f64> {
    let span = expert_return - random_return;
    let scale = expert_return.abs().max(random_return.abs()).max(1.0);
    if span.abs() <= REFERENCE_TOL * scale {
        return Err(Error::DegenerateReference(expert_return));
    }
    Ok((raw_return - random_return) / span)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn single_transition() {
        let traj = Trajectory::new(vec![v(&[0.0]), v(&[1.0])], vec![v(&[0.5])]).unwrap();
        let tr = traj.transitions();
        assert_eq!(tr.len(), 1);
        assert_eq!(tr[0].state, &v(&[0.0]));
        assert_eq!(tr[0].next, &v(&[1.0]));
        assert_eq!(tr[0].step, 0);
    }

    #[test]
    fn transition_count_matches_horizon() {
        let states = (0..4).map(|i| v(&[i as f64])).collect();
        let actions = (0..3).map(|_| v(&[0.0])).collect();
        let traj = Trajectory::new(states, actions).unwrap();
        assert_eq!(traj.transitions().len(), 3);

        let demo = Demonstration::new((0..=100).map(|i| v(&[i as f64, 0.0])).collect()).unwrap();
        let tr = demo.transitions();
        assert_eq!(tr.len(), 100);
        assert!(tr.iter().enumerate().all(|(i, t)| t.step == i));
    }

    #[test]
    fn trajectory_rejects_bad_shapes() {
        assert!(Trajectory::new(vec![v(&[0.0]), v(&[1.0])], vec![]).is_err());
        assert!(Trajectory::new(vec![v(&[0.0]), v(&[1.0, 2.0])], vec![v(&[0.0])]).is_err());
        assert!(Trajectory::new(vec![v(&[0.0]), v(&[f64::NAN])], vec![v(&[0.0])]).is_err());
        assert!(Demonstration::new(vec![v(&[0.0])]).is_err());
    }

    #[test]
    fn demonstration_set_requires_common_shape() {
        let a = Demonstration::new(vec![v(&[0.0]), v(&[1.0])]).unwrap();
        let b = Demonstration::new(vec![v(&[0.0]), v(&[1.0]), v(&[2.0])]).unwrap();
        assert!(DemonstrationSet::new(vec![a.clone(), b]).is_err());
        assert!(DemonstrationSet::new(vec![]).is_err());
        let set = DemonstrationSet::new(vec![a.clone(), a]).unwrap();
        assert_eq!(set.transitions().len(), 2);
    }

    #[test]
    fn normalized_score_references() {
        assert_eq!(normalized_score(-10.0, -50.0, -10.0).unwrap(), 1.0);
        assert_eq!(normalized_score(-50.0, -50.0, -10.0).unwrap(), 0.0);
        assert_eq!(normalized_score(-30.0, -50.0, -10.0).unwrap(), 0.5);
        assert!(matches!(
            normalized_score(1.0, 3.0, 3.0),
            Err(Error::DegenerateReference(_))
        ));
    }

    #[test]
    fn controller_rejects_indefinite_covariance() {
        let bad = TvlgController::new(
            vec![DMatrix::zeros(1, 1)],
            vec![DVector::zeros(1)],
            vec![DMatrix::from_element(1, 1, -1.0)],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn covariance_floor_lifts_small_eigenvalues() {
        let c = TvlgController::zero(2, 2, 3, 1e-8).unwrap();
        let f = c.with_covariance_floor(1e-4).unwrap();
        for t in 0..3 {
            assert!(min_eigenvalue(f.covariance(t)) >= 1e-4 - 1e-15);
        }
    }

    proptest! {
        #[test]
        fn normalized_score_is_affine(
            raw in -1e3f64..1e3,
            random in -1e3f64..-1.0,
            gap in 1.0f64..1e3,
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
        ) {
            let expert = random + gap;
            let base = normalized_score(raw, random, expert).unwrap();
            let moved = normalized_score(alpha * (raw - random) + random + beta * gap, random, expert).unwrap();
            prop_assert!((moved - (alpha * base + beta)).abs() <= 1e-9 * (1.0 + moved.abs()));
        }

        #[test]
        fn transitions_count_equals_action_count(t in 1usize..40, n in 1usize..4, m in 1usize..3) {
            let states = (0..=t).map(|i| DVector::from_element(n, i as f64)).collect();
            let actions = (0..t).map(|_| DVector::zeros(m)).collect();
            let traj = Trajectory::new(states, actions).unwrap();
            prop_assert_eq!(traj.transitions().len(), traj.actions().len());
        }
    }
}
