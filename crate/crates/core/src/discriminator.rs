//! Transition discriminator `D(s, s') = h(g(s, s'), s, s')`.
//!
//! The network `g` emits the coefficients of a quadratic form over
//! `z = [s; s']`; the head `h` evaluates that form on the raw states. The
//! `s'`-`s'` block is built as `L Lᵀ` so it is positive semidefinite for any
//! network output.

use std::io::{BufRead, Write};

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::io::{write_row, LineReader};
use crate::linalg::concat;
use crate::net::{opt_step, AdamConfig, Mlp, OptState};
use crate::rng::SimRng;
use crate::types::{DemonstrationSet, StatePath, Trajectory, Transition};

/// Quadratic-form coefficients over `z = [s; s']`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadHeadOutput {
    /// `2n × 2n`, symmetric.
    pub matrix: DMatrix<f64>,
    /// Length `2n`.
    pub vector: DVector<f64>,
    pub constant: f64,
}

impl QuadHeadOutput {
    pub fn zeros(n: usize) -> Self {
        Self {
            matrix: DMatrix::zeros(2 * n, 2 * n),
            vector: DVector::zeros(2 * n),
            constant: 0.0,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.vector.len() / 2
    }

    /// `½ zᵀ C z + zᵀ c`; the constant is left out.
    pub fn classification_value(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.matrix * z)) + z.dot(&self.vector)
    }

    /// `½ zᵀ C z + zᵀ c + cc`.
    pub fn cost_value(&self, z: &DVector<f64>) -> f64 {
        self.classification_value(z) + self.constant
    }

    /// The `s'`-`s'` block.
    pub fn next_next_block(&self) -> DMatrix<f64> {
        let n = self.state_dim();
        self.matrix.view((n, n), (n, n)).into_owned()
    }
}

/// Network output width for state dimension `n`: symmetric `C` entries,
/// then `c`, then the constant. Both layouts use the same width.
pub fn head_output_len(n: usize) -> usize {
    n * (2 * n + 1) + 2 * n + 1
}

/// How the network output is mapped onto the quadratic-form matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeadLayout {
    /// Free `s`-`s` and `s`-`s'` blocks; the `s'`-`s'` block is `L Lᵀ`.
    #[default]
    NextBlockGram,
    /// The whole `2n × 2n` matrix is `L Lᵀ`, so every head is convex.
    FullGram,
}

impl HeadLayout {
    pub fn code(self) -> usize {
        match self {
            HeadLayout::NextBlockGram => 0,
            HeadLayout::FullGram => 1,
        }
    }

    pub fn from_code(code: usize) -> Result<Self> {
        match code {
            0 => Ok(HeadLayout::NextBlockGram),
            1 => Ok(HeadLayout::FullGram),
            _ => Err(Error::InvalidArgument(format!(
                "unknown head layout {code}"
            ))),
        }
    }
}

/// Lower-triangular factor read row by row from `out[start..]`.
fn lower_factor(out: &DVector<f64>, start: usize, dim: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(dim, dim);
    let mut idx = start;
    for i in 0..dim {
        for j in 0..=i {
            l[(i, j)] = out[idx];
            idx += 1;
        }
    }
    l
}

/// Writes `L Lᵀ` into `c` at `offset`, computing each pair once so the
/// result is exactly symmetric.
fn write_gram(c: &mut DMatrix<f64>, l: &DMatrix<f64>, offset: usize) {
    let dim = l.nrows();
    for i in 0..dim {
        for j in 0..=i {
            let g: f64 = (0..=j).map(|k| l[(i, k)] * l[(j, k)]).sum();
            c[(offset + i, offset + j)] = g;
            c[(offset + j, offset + i)] = g;
        }
    }
}

/// `∂(½ ‖Lᵀ x‖²)/∂L_ij = x_i (Lᵀ x)_j`, in row-major lower-triangular order.
fn gram_grad(g: &mut DVector<f64>, start: usize, l: &DMatrix<f64>, x: &[f64]) {
    let dim = l.nrows();
    let xv = DVector::from_row_slice(x);
    let u = l.transpose() * &xv;
    let mut idx = start;
    for i in 0..dim {
        for j in 0..=i {
            g[idx] = xv[i] * u[j];
            idx += 1;
        }
    }
}

/// Unpacks a network output in the [`HeadLayout::NextBlockGram`] layout:
/// upper triangle of the `s`-`s` block (row major), the full `s`-`s'` block
/// (row major), the lower-triangular factor of the `s'`-`s'` block (row
/// major), `c`, `cc`.
pub fn head_from_output(n: usize, out: &DVector<f64>) -> QuadHeadOutput {
    head_from_output_with(HeadLayout::NextBlockGram, n, out)
}

/// Unpacks a network output. In the [`HeadLayout::FullGram`] layout the
/// matrix entries are the row-major lower triangle of a `2n × 2n` factor.
pub fn head_from_output_with(layout: HeadLayout, n: usize, out: &DVector<f64>) -> QuadHeadOutput {
    debug_assert_eq!(out.len(), head_output_len(n));
    let mut c = DMatrix::zeros(2 * n, 2 * n);
    let mut idx = 0;
    match layout {
        HeadLayout::NextBlockGram => {
            for i in 0..n {
                for j in i..n {
                    c[(i, j)] = out[idx];
                    c[(j, i)] = out[idx];
                    idx += 1;
                }
            }
            for i in 0..n {
                for j in 0..n {
                    c[(i, n + j)] = out[idx];
                    c[(n + j, i)] = out[idx];
                    idx += 1;
                }
            }
            write_gram(&mut c, &lower_factor(out, idx, n), n);
            idx += n * (n + 1) / 2;
        }
        HeadLayout::FullGram => {
            write_gram(&mut c, &lower_factor(out, 0, 2 * n), 0);
            idx += n * (2 * n + 1);
        }
    }
    QuadHeadOutput {
        matrix: c,
        vector: out.rows(idx, 2 * n).into_owned(),
        constant: out[idx + 2 * n],
    }
}

/// Gradient of the classification value `½ zᵀ C z + zᵀ c` with respect to
/// the raw network output, in the [`head_from_output`] layout.
pub fn head_value_grad(n: usize, out: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
    head_value_grad_with(HeadLayout::NextBlockGram, n, out, z)
}

pub fn head_value_grad_with(
    layout: HeadLayout,
    n: usize,
    out: &DVector<f64>,
    z: &DVector<f64>,
) -> DVector<f64> {
    let mut g = DVector::zeros(head_output_len(n));
    let mut idx = 0;
    match layout {
        HeadLayout::NextBlockGram => {
            for i in 0..n {
                for j in i..n {
                    g[idx] = if i == j {
                        0.5 * z[i] * z[i]
                    } else {
                        z[i] * z[j]
                    };
                    idx += 1;
                }
            }
            for i in 0..n {
                for j in 0..n {
                    g[idx] = z[i] * z[n + j];
                    idx += 1;
                }
            }
            gram_grad(&mut g, idx, &lower_factor(out, idx, n), &z.as_slice()[n..]);
            idx += n * (n + 1) / 2;
        }
        HeadLayout::FullGram => {
            gram_grad(&mut g, 0, &lower_factor(out, 0, 2 * n), z.as_slice());
            idx += n * (2 * n + 1);
        }
    }
    g.rows_mut(idx, 2 * n).copy_from(z);
    g
}

/// Running per-dimension mean and variance, merged batch by batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub count: f64,
    pub mean: DVector<f64>,
    pub m2: DVector<f64>,
    pub std_floor: f64,
}

impl Standardizer {
    pub fn new(dim: usize, std_floor: f64) -> Self {
        Self {
            count: 0.0,
            mean: DVector::zeros(dim),
            m2: DVector::zeros(dim),
            std_floor,
        }
    }

    pub fn update(&mut self, samples: &[DVector<f64>]) {
        if samples.is_empty() {
            return;
        }
        let nb = samples.len() as f64;
        let mean_b = samples
            .iter()
            .fold(DVector::zeros(self.mean.len()), |acc, x| acc + x)
            / nb;
        let m2_b = samples
            .iter()
            .fold(DVector::zeros(self.mean.len()), |acc, x| {
                let d = x - &mean_b;
                acc + d.component_mul(&d)
            });
        let total = self.count + nb;
        let delta = &mean_b - &self.mean;
        self.m2 += m2_b + delta.component_mul(&delta) * (self.count * nb / total);
        self.mean += delta * (nb / total);
        self.count = total;
    }

    pub fn std(&self) -> DVector<f64> {
        if self.count < 2.0 {
            return DVector::from_element(self.mean.len(), 1.0);
        }
        self.m2.map(|m| (m / self.count).sqrt().max(self.std_floor))
    }

    pub fn apply(&self, z: &DVector<f64>) -> DVector<f64> {
        (z - &self.mean).component_div(&self.std())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscConfig {
    pub hidden: Vec<usize>,
    /// Scale applied to the initial output layer so the first cost is nearly flat.
    pub output_scale: f64,
    pub adam: AdamConfig,
    pub std_floor: f64,
    pub layout: HeadLayout,
}

impl Default for DiscConfig {
    fn default() -> Self {
        Self {
            hidden: vec![100, 100],
            output_scale: 0.01,
            adam: AdamConfig::default(),
            std_floor: 1e-2,
            layout: HeadLayout::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    n: usize,
    layout: HeadLayout,
    net: Mlp,
    stats: Standardizer,
    opt: OptState,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Discriminator {
    pub fn new(n: usize, cfg: &DiscConfig, rng: &mut SimRng) -> Result<Self> {
        let mut sizes = vec![2 * n];
        sizes.extend(&cfg.hidden);
        sizes.push(head_output_len(n));
        let net = Mlp::new(&sizes, cfg.output_scale, rng)?;
        Self::from_parts(
            n,
            cfg.layout,
            net,
            Standardizer::new(2 * n, cfg.std_floor),
            cfg.adam,
        )
    }

    pub fn from_parts(
        n: usize,
        layout: HeadLayout,
        net: Mlp,
        stats: Standardizer,
        adam: AdamConfig,
    ) -> Result<Self> {
        check_dim("discriminator input", 2 * n, net.input_dim())?;
        check_dim("discriminator output", head_output_len(n), net.output_dim())?;
        check_dim("standardizer", 2 * n, stats.mean.len())?;
        let opt = OptState::new(net.param_count(), adam);
        Ok(Self {
            n,
            layout,
            net,
            stats,
            opt,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn layout(&self) -> HeadLayout {
        self.layout
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn stats(&self) -> &Standardizer {
        &self.stats
    }

    pub fn head_output(&self, s: &DVector<f64>, s_next: &DVector<f64>) -> QuadHeadOutput {
        let z = concat(s, s_next);
        head_from_output_with(
            self.layout,
            self.n,
            &self.net.forward(&self.stats.apply(&z)),
        )
    }

    /// Classification value (no constant).
    pub fn d_value(&self, s: &DVector<f64>, s_next: &DVector<f64>) -> f64 {
        self.head_output(s, s_next)
            .classification_value(&concat(s, s_next))
    }

    /// Classification value plus the learned constant; this is the cost the
    /// imitator minimizes.
    pub fn cost_value(&self, s: &DVector<f64>, s_next: &DVector<f64>) -> f64 {
        self.head_output(s, s_next).cost_value(&concat(s, s_next))
    }

    fn batch_inputs(&self, pairs: &[Transition<'_>]) -> (DMatrix<f64>, Vec<DVector<f64>>) {
        let raw: Vec<DVector<f64>> = pairs.iter().map(|p| concat(p.state, p.next)).collect();
        let std = self.stats.std();
        let mut x = DMatrix::zeros(2 * self.n, raw.len());
        for (j, z) in raw.iter().enumerate() {
            x.set_column(j, &(z - &self.stats.mean).component_div(&std));
        }
        (x, raw)
    }

    /// Heads for many transitions in one batched pass.
    pub fn head_outputs(&self, pairs: &[Transition<'_>]) -> Vec<QuadHeadOutput> {
        if pairs.is_empty() {
            return Vec::new();
        }
        let (x, _) = self.batch_inputs(pairs);
        let cache = self.net.forward_batch(&x);
        cache
            .output()
            .column_iter()
            .map(|o| head_from_output_with(self.layout, self.n, &o.into_owned()))
            .collect()
    }

    /// `cost_value` for many transitions.
    pub fn cost_values(&self, pairs: &[Transition<'_>]) -> Vec<f64> {
        self.head_outputs(pairs)
            .iter()
            .zip(pairs)
            .map(|(h, p)| h.cost_value(&concat(p.state, p.next)))
            .collect()
    }

    /// `d_value` for many transitions.
    pub fn d_values(&self, pairs: &[Transition<'_>]) -> Vec<f64> {
        self.head_outputs(pairs)
            .iter()
            .zip(pairs)
            .map(|(h, p)| h.classification_value(&concat(p.state, p.next)))
            .collect()
    }

    /// `mean_imitator softplus(−d) + mean_expert softplus(d)`, i.e. the
    /// negated log-likelihood with imitator transitions labelled 1.
    pub fn disc_loss(&self, imitator: &[Transition<'_>], expert: &[Transition<'_>]) -> f64 {
        let li: f64 = self
            .d_values(imitator)
            .iter()
            .map(|&d| softplus(-d))
            .sum::<f64>()
            / imitator.len() as f64;
        let le: f64 = self
            .d_values(expert)
            .iter()
            .map(|&d| softplus(d))
            .sum::<f64>()
            / expert.len() as f64;
        li + le
    }

    /// Loss and its gradient with respect to the flattened network parameters.
    pub fn loss_and_grad(
        &self,
        imitator: &[Transition<'_>],
        expert: &[Transition<'_>],
    ) -> (f64, Vec<f64>) {
        let pairs: Vec<Transition<'_>> = imitator.iter().chain(expert).copied().collect();
        let (x, raw) = self.batch_inputs(&pairs);
        let cache = self.net.forward_batch(&x);
        let out = cache.output();
        let (ni, ne) = (imitator.len() as f64, expert.len() as f64);
        let mut grad_out = DMatrix::zeros(out.nrows(), out.ncols());
        let mut loss = 0.0;
        for (j, z) in raw.iter().enumerate() {
            let o = out.column(j).into_owned();
            let d = head_from_output_with(self.layout, self.n, &o).classification_value(z);
            let dl_dd = if j < imitator.len() {
                loss += softplus(-d) / ni;
                -(1.0 - sigmoid(d)) / ni
            } else {
                loss += softplus(d) / ne;
                sigmoid(d) / ne
            };
            grad_out.set_column(
                j,
                &(head_value_grad_with(self.layout, self.n, &o, z) * dl_dd),
            );
        }
        let (grads, _) = self.net.backward_batch(&cache, &grad_out);
        (loss, grads.flatten())
    }

    /// One optimizer step on the given batch; returns the pre-step loss.
    pub fn train_step(
        &mut self,
        imitator: &[Transition<'_>],
        expert: &[Transition<'_>],
    ) -> Result<f64> {
        let (loss, grads) = self.loss_and_grad(imitator, expert);
        let mut params = self.net.flat_params();
        opt_step(&mut params, &grads, &mut self.opt)?;
        self.net.set_flat_params(&params)?;
        Ok(loss)
    }

    /// Updates the input statistics with all of this iteration's data, then
    /// takes `num_batches` optimizer steps, one per equal shard of the
    /// shuffled imitator transitions, each paired with an equally sized
    /// expert batch drawn with replacement. Returns the mean pre-step loss.
    pub fn train(
        &mut self,
        imitator_trajs: &[Trajectory],
        demos: &DemonstrationSet,
        num_batches: usize,
        rng: &mut SimRng,
    ) -> Result<f64> {
        if num_batches == 0 {
            return Err(Error::InvalidArgument(
                "num_batches must be at least 1".into(),
            ));
        }
        check_dim("demonstration state dimension", self.n, demos.state_dim())?;
        let mut imitator: Vec<Transition<'_>> = imitator_trajs
            .iter()
            .flat_map(|t| t.transitions())
            .collect();
        let expert = demos.transitions();
        if imitator.is_empty() || expert.is_empty() {
            return Err(Error::InvalidArgument(
                "discriminator training needs data from both sides".into(),
            ));
        }
        let mut all: Vec<DVector<f64>> = imitator.iter().map(|p| concat(p.state, p.next)).collect();
        all.extend(expert.iter().map(|p| concat(p.state, p.next)));
        self.stats.update(&all);

        imitator.shuffle(rng);
        let batches = if imitator.len() < num_batches {
            warn!(
                "only {} imitator transitions for {num_batches} batches; using a single batch",
                imitator.len()
            );
            1
        } else {
            num_batches
        };
        let total = imitator.len();
        let mut loss_sum = 0.0;
        for b in 0..batches {
            let shard = &imitator[b * total / batches..(b + 1) * total / batches];
            let expert_batch: Vec<Transition<'_>> = (0..shard.len())
                .map(|_| expert[rng.random_range(0..expert.len())])
                .collect();
            loss_sum += self.train_step(shard, &expert_batch)?;
        }
        Ok(loss_sum / batches as f64)
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(
            w,
            "discriminator n={} layout={}",
            self.n,
            self.layout.code()
        )?;
        write_row(w, [self.stats.count, self.stats.std_floor].iter())?;
        write_row(w, self.stats.mean.iter())?;
        write_row(w, self.stats.m2.iter())?;
        self.net.write(w)
    }

    pub fn read<R: BufRead>(r: R, adam: AdamConfig) -> Result<Self> {
        let mut lr = LineReader::new(r);
        let h = lr.read_header(Some("discriminator"), &["n", "layout"])?;
        let (n, layout) = (h[0], HeadLayout::from_code(h[1])?);
        let head = lr.read_floats(2)?;
        let mean = lr.read_vector(2 * n)?;
        let m2 = lr.read_vector(2 * n)?;
        let net = Mlp::read(&mut lr)?;
        let stats = Standardizer {
            count: head[0],
            mean,
            m2,
            std_floor: head[1],
        };
        Self::from_parts(n, layout, net, stats, adam)
    }
}
