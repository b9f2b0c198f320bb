//! Recurrent prior network: a single-layer GRU reads the measurement history
//! and two feed-forward heads map its hidden state to the mean and diagonal
//! variance of a Gaussian prior over the next state.
//!
//! The prior for step `t` is emitted from the hidden state after consuming
//! `y_1 .. y_{t-1}`; the first prior comes from the learned initial state
//! `h0` alone. Gradients are exact reverse-mode, unrolled over the full
//! sequence.
//!
//! Measurements are standardized by a frozen affine map and the mean/variance
//! outputs are rescaled by another one. Both default to the identity and are
//! only set from data statistics by the trainer.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gauss::Gaussian;
use crate::series::Series;

/// Added to every emitted variance.
pub const VARIANCE_FLOOR: f64 = 1e-6;

pub const DEFAULT_HIDDEN: usize = 30;
pub const DEFAULT_FF: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetDims {
    pub meas_dim: usize,
    pub state_dim: usize,
    pub hidden: usize,
    pub ff: usize,
}

impl NetDims {
    pub fn new(meas_dim: usize, state_dim: usize) -> Self {
        Self { meas_dim, state_dim, hidden: DEFAULT_HIDDEN, ff: DEFAULT_FF }
    }

    pub fn with_sizes(meas_dim: usize, state_dim: usize, hidden: usize, ff: usize) -> Self {
        Self { meas_dim, state_dim, hidden, ff }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    pub trainable: bool,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offsets of every tensor in the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    w_z: usize,
    w_r: usize,
    w_h: usize,
    u_z: usize,
    u_r: usize,
    u_h: usize,
    b_z: usize,
    b_r: usize,
    b_h: usize,
    h0: usize,
    mean_w1: usize,
    mean_b1: usize,
    mean_w2: usize,
    mean_b2: usize,
    var_w1: usize,
    var_b1: usize,
    var_w2: usize,
    var_b2: usize,
    y_shift: usize,
    y_scale: usize,
    x_shift: usize,
    x_scale: usize,
    total: usize,
}

fn tensor_table(d: &NetDims) -> Vec<TensorInfo> {
    let (n, m, h, f) = (d.meas_dim, d.state_dim, d.hidden, d.ff);
    let shapes: [(&'static str, usize, usize, bool); 22] = [
        ("gru.w_z", h, n, true),
        ("gru.w_r", h, n, true),
        ("gru.w_h", h, n, true),
        ("gru.u_z", h, h, true),
        ("gru.u_r", h, h, true),
        ("gru.u_h", h, h, true),
        ("gru.b_z", h, 1, true),
        ("gru.b_r", h, 1, true),
        ("gru.b_h", h, 1, true),
        ("gru.h0", h, 1, true),
        ("mean.w1", f, h, true),
        ("mean.b1", f, 1, true),
        ("mean.w2", m, f, true),
        ("mean.b2", m, 1, true),
        ("var.w1", f, h, true),
        ("var.b1", f, 1, true),
        ("var.w2", m, f, true),
        ("var.b2", m, 1, true),
        ("norm.y_shift", n, 1, false),
        ("norm.y_scale", n, 1, false),
        ("norm.x_shift", m, 1, false),
        ("norm.x_scale", m, 1, false),
    ];
    let mut offset = 0;
    shapes
        .iter()
        .map(|&(name, rows, cols, trainable)| {
            let info = TensorInfo { name, rows, cols, offset, trainable };
            offset += rows * cols;
            info
        })
        .collect()
}

impl Layout {
    fn new(d: &NetDims) -> Self {
        let t = tensor_table(d);
        let o = |i: usize| t[i].offset;
        Layout {
            w_z: o(0),
            w_r: o(1),
            w_h: o(2),
            u_z: o(3),
            u_r: o(4),
            u_h: o(5),
            b_z: o(6),
            b_r: o(7),
            b_h: o(8),
            h0: o(9),
            mean_w1: o(10),
            mean_b1: o(11),
            mean_w2: o(12),
            mean_b2: o(13),
            var_w1: o(14),
            var_b1: o(15),
            var_w2: o(16),
            var_b2: o(17),
            y_shift: o(18),
            y_scale: o(19),
            x_shift: o(20),
            x_scale: o(21),
            total: t.last().map_or(0, |l| l.offset + l.len()),
        }
    }
}

/// Parameters of the prior network, stored as one flat vector. The same type
/// carries gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorNetParams {
    dims: NetDims,
    data: Vec<f64>,
}

impl PriorNetParams {
    /// All trainable entries zero, normalization at the identity.
    pub fn zeros(dims: NetDims) -> Self {
        let lay = Layout::new(&dims);
        let mut data = vec![0.0; lay.total];
        data[lay.y_scale..lay.y_scale + dims.meas_dim].fill(1.0);
        data[lay.x_scale..lay.x_scale + dims.state_dim].fill(1.0);
        Self { dims, data }
    }

    /// Weight matrices uniform on `(-1/√h, 1/√h)`, biases and `h0` zero.
    pub fn init(dims: NetDims, seed: u64) -> Self {
        let mut p = Self::zeros(dims);
        let bound = 1.0 / (dims.hidden as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for info in tensor_table(&dims) {
            if info.trainable && info.cols > 1 {
                for v in &mut p.data[info.range()] {
                    *v = rng.random_range(-bound..bound);
                }
            }
        }
        p
    }

    pub fn from_flat(dims: NetDims, data: Vec<f64>) -> Result<Self> {
        let total = Layout::new(&dims).total;
        if data.len() != total {
            return Err(Error::Dimension(format!("{} parameters for a network needing {total}", data.len())));
        }
        Ok(Self { dims, data })
    }

    /// Zero-valued gradient buffer of matching shape.
    pub fn zeros_like(&self) -> Self {
        Self { dims: self.dims, data: vec![0.0; self.data.len()] }
    }

    pub fn dims(&self) -> NetDims {
        self.dims
    }

    pub fn tensors(&self) -> Vec<TensorInfo> {
        tensor_table(&self.dims)
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.tensors().into_iter().find(|t| t.name == name).map(|t| &self.data[t.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.tensors().into_iter().find(|t| t.name == name)?.range();
        Some(&mut self.data[range])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `true` for entries the optimizer may change.
    pub fn trainable_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.data.len()];
        for t in self.tensors() {
            if t.trainable {
                mask[t.range()].fill(true);
            }
        }
        mask
    }

    /// Sets the frozen input standardization and output scaling.
    pub fn set_normalization(&mut self, y_shift: &[f64], y_scale: &[f64], x_shift: &[f64], x_scale: &[f64]) -> Result<()> {
        let d = self.dims;
        if y_shift.len() != d.meas_dim || y_scale.len() != d.meas_dim || x_shift.len() != d.state_dim || x_scale.len() != d.state_dim {
            return Err(Error::Dimension("normalization vectors do not match network dimensions".into()));
        }
        if y_scale.iter().chain(x_scale).any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidConfig("normalization scales must be positive".into()));
        }
        let lay = Layout::new(&d);
        self.data[lay.y_shift..lay.y_shift + d.meas_dim].copy_from_slice(y_shift);
        self.data[lay.y_scale..lay.y_scale + d.meas_dim].copy_from_slice(y_scale);
        self.data[lay.x_shift..lay.x_shift + d.state_dim].copy_from_slice(x_shift);
        self.data[lay.x_scale..lay.x_scale + d.state_dim].copy_from_slice(x_scale);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn lay(&self) -> Layout {
        Layout::new(&self.dims)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `out += W x` for row-major `W` (rows x cols).
fn matvec_acc(out: &mut [f64], w: &[f64], x: &[f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += Wᵀ g` for row-major `W` (rows x cols).
fn matvec_t_acc(out: &mut [f64], w: &[f64], g: &[f64]) {
    let cols = out.len();
    for (gi, row) in g.iter().zip(w.chunks_exact(cols)) {
        if *gi != 0.0 {
            for (o, a) in out.iter_mut().zip(row) {
                *o += gi * a;
            }
        }
    }
}

/// `W += g xᵀ`.
fn outer_acc(w: &mut [f64], g: &[f64], x: &[f64]) {
    let cols = x.len();
    for (gi, row) in g.iter().zip(w.chunks_exact_mut(cols)) {
        if *gi != 0.0 {
            for (a, xv) in row.iter_mut().zip(x) {
                *a += gi * xv;
            }
        }
    }
}

fn add_assign(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

/// Intermediate values of one GRU step.
#[derive(Debug, Clone)]
pub struct GruCache {
    y_norm: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    candidate: Vec<f64>,
}

fn normalized_input(p: &PriorNetParams, lay: &Layout, y: &[f64]) -> Vec<f64> {
    let n = p.dims.meas_dim;
    let shift = &p.data[lay.y_shift..lay.y_shift + n];
    let scale = &p.data[lay.y_scale..lay.y_scale + n];
    y.iter().zip(shift).zip(scale).map(|((v, s), c)| (v - s) / c).collect()
}

fn gru_forward(p: &PriorNetParams, lay: &Layout, h: &[f64], y: &[f64]) -> (Vec<f64>, GruCache) {
    let (n, hd) = (p.dims.meas_dim, p.dims.hidden);
    let d = &p.data;
    let y_norm = normalized_input(p, lay, y);

    let mut z = d[lay.b_z..lay.b_z + hd].to_vec();
    matvec_acc(&mut z, &d[lay.w_z..lay.w_z + hd * n], &y_norm);
    matvec_acc(&mut z, &d[lay.u_z..lay.u_z + hd * hd], h);
    z.iter_mut().for_each(|v| *v = sigmoid(*v));

    let mut r = d[lay.b_r..lay.b_r + hd].to_vec();
    matvec_acc(&mut r, &d[lay.w_r..lay.w_r + hd * n], &y_norm);
    matvec_acc(&mut r, &d[lay.u_r..lay.u_r + hd * hd], h);
    r.iter_mut().for_each(|v| *v = sigmoid(*v));

    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let mut cand = d[lay.b_h..lay.b_h + hd].to_vec();
    matvec_acc(&mut cand, &d[lay.w_h..lay.w_h + hd * n], &y_norm);
    matvec_acc(&mut cand, &d[lay.u_h..lay.u_h + hd * hd], &rh);
    cand.iter_mut().for_each(|v| *v = v.tanh());

    let h_new = (0..hd).map(|i| (1.0 - z[i]) * h[i] + z[i] * cand[i]).collect();
    (h_new, GruCache { y_norm, z, r, candidate: cand })
}

/// One GRU step:
/// `z = σ(W_z y + U_z h + b_z)`, `r = σ(W_r y + U_r h + b_r)`,
/// `h̃ = tanh(W_h y + U_h (r ⊙ h) + b_h)`, `h' = (1 − z) ⊙ h + z ⊙ h̃`.
pub fn gru_step(params: &PriorNetParams, h: &[f64], y: &[f64]) -> Vec<f64> {
    gru_forward(params, &params.lay(), h, y).0
}

/// Back-propagates `dh_next` through one GRU step, accumulating weight
/// gradients into `grad` and returning the gradient w.r.t. `h_prev`.
fn gru_backward(p: &PriorNetParams, lay: &Layout, h_prev: &[f64], cache: &GruCache, dh_next: &[f64], grad: &mut [f64]) -> Vec<f64> {
    let (n, hd) = (p.dims.meas_dim, p.dims.hidden);
    let d = &p.data;
    let GruCache { y_norm, z, r, candidate } = cache;

    let mut dh_prev: Vec<f64> = (0..hd).map(|i| dh_next[i] * (1.0 - z[i])).collect();
    let da_z: Vec<f64> = (0..hd).map(|i| dh_next[i] * (candidate[i] - h_prev[i]) * z[i] * (1.0 - z[i])).collect();
    let da_h: Vec<f64> = (0..hd).map(|i| dh_next[i] * z[i] * (1.0 - candidate[i] * candidate[i])).collect();

    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    outer_acc(&mut grad[lay.w_h..lay.w_h + hd * n], &da_h, y_norm);
    outer_acc(&mut grad[lay.u_h..lay.u_h + hd * hd], &da_h, &rh);
    add_assign(&mut grad[lay.b_h..lay.b_h + hd], &da_h);
    let mut d_rh = vec![0.0; hd];
    matvec_t_acc(&mut d_rh, &d[lay.u_h..lay.u_h + hd * hd], &da_h);

    let da_r: Vec<f64> = (0..hd).map(|i| d_rh[i] * h_prev[i] * r[i] * (1.0 - r[i])).collect();
    for i in 0..hd {
        dh_prev[i] += d_rh[i] * r[i];
    }

    outer_acc(&mut grad[lay.w_z..lay.w_z + hd * n], &da_z, y_norm);
    outer_acc(&mut grad[lay.u_z..lay.u_z + hd * hd], &da_z, h_prev);
    add_assign(&mut grad[lay.b_z..lay.b_z + hd], &da_z);
    matvec_t_acc(&mut dh_prev, &d[lay.u_z..lay.u_z + hd * hd], &da_z);

    outer_acc(&mut grad[lay.w_r..lay.w_r + hd * n], &da_r, y_norm);
    outer_acc(&mut grad[lay.u_r..lay.u_r + hd * hd], &da_r, h_prev);
    add_assign(&mut grad[lay.b_r..lay.b_r + hd], &da_r);
    matvec_t_acc(&mut dh_prev, &d[lay.u_r..lay.u_r + hd * hd], &da_r);

    dh_prev
}

/// Gradient of a scalar w.r.t. `h` and all parameters, given its gradient
/// `dh_next` w.r.t. the output of [`gru_step`].
pub fn gru_step_backward(params: &PriorNetParams, h: &[f64], y: &[f64], dh_next: &[f64]) -> (Vec<f64>, PriorNetParams) {
    let lay = params.lay();
    let (_, cache) = gru_forward(params, &lay, h, y);
    let mut grad = params.zeros_like();
    let dh = gru_backward(params, &lay, h, &cache, dh_next, &mut grad.data);
    (dh, grad)
}

#[derive(Debug, Clone)]
struct HeadCache {
    mean_hidden: Vec<f64>,
    var_hidden: Vec<f64>,
    var_raw: Vec<f64>,
}

fn head_hidden(d: &[f64], w1: usize, b1: usize, ff: usize, hd: usize, h: &[f64]) -> Vec<f64> {
    let mut a = d[b1..b1 + ff].to_vec();
    matvec_acc(&mut a, &d[w1..w1 + ff * hd], h);
    a.iter_mut().for_each(|v| *v = v.tanh());
    a
}

fn heads_forward(p: &PriorNetParams, lay: &Layout, h: &[f64]) -> (Vec<f64>, Vec<f64>, HeadCache) {
    let NetDims { state_dim: m, hidden: hd, ff, .. } = p.dims;
    let d = &p.data;
    let x_shift = &d[lay.x_shift..lay.x_shift + m];
    let x_scale = &d[lay.x_scale..lay.x_scale + m];

    let mean_hidden = head_hidden(d, lay.mean_w1, lay.mean_b1, ff, hd, h);
    let mut mean = d[lay.mean_b2..lay.mean_b2 + m].to_vec();
    matvec_acc(&mut mean, &d[lay.mean_w2..lay.mean_w2 + m * ff], &mean_hidden);
    for i in 0..m {
        mean[i] = x_shift[i] + x_scale[i] * mean[i];
    }

    let var_hidden = head_hidden(d, lay.var_w1, lay.var_b1, ff, hd, h);
    let mut var_raw = d[lay.var_b2..lay.var_b2 + m].to_vec();
    matvec_acc(&mut var_raw, &d[lay.var_w2..lay.var_w2 + m * ff], &var_hidden);
    let var = (0..m).map(|i| x_scale[i] * x_scale[i] * softplus(var_raw[i]) + VARIANCE_FLOOR).collect();

    (mean, var, HeadCache { mean_hidden, var_hidden, var_raw })
}

/// Back-propagates prior-output gradients through both heads; returns the
/// gradient w.r.t. the hidden state that fed them.
fn heads_backward(p: &PriorNetParams, lay: &Layout, h: &[f64], cache: &HeadCache, d_mean: &[f64], d_var: &[f64], grad: &mut [f64]) -> Vec<f64> {
    let NetDims { state_dim: m, hidden: hd, ff, .. } = p.dims;
    let d = &p.data;
    let x_scale = &d[lay.x_scale..lay.x_scale + m];
    let mut dh = vec![0.0; hd];

    let d_out: Vec<f64> = (0..m).map(|i| d_mean[i] * x_scale[i]).collect();
    let d_raw: Vec<f64> = (0..m).map(|i| d_var[i] * x_scale[i] * x_scale[i] * sigmoid(cache.var_raw[i])).collect();

    for (out, hidden, w1, b1, w2, b2) in [
        (&d_out, &cache.mean_hidden, lay.mean_w1, lay.mean_b1, lay.mean_w2, lay.mean_b2),
        (&d_raw, &cache.var_hidden, lay.var_w1, lay.var_b1, lay.var_w2, lay.var_b2),
    ] {
        outer_acc(&mut grad[w2..w2 + m * ff], out, hidden);
        add_assign(&mut grad[b2..b2 + m], out);
        let mut da = vec![0.0; ff];
        matvec_t_acc(&mut da, &d[w2..w2 + m * ff], out);
        for (g, a) in da.iter_mut().zip(hidden) {
            *g *= 1.0 - a * a;
        }
        outer_acc(&mut grad[w1..w1 + ff * hd], &da, h);
        add_assign(&mut grad[b1..b1 + ff], &da);
        matvec_t_acc(&mut dh, &d[w1..w1 + ff * hd], &da);
    }
    dh
}

/// Priors for `t = 1..T` of one trajectory together with what the backward
/// pass needs.
#[derive(Debug, Clone)]
pub struct PriorSequence {
    pub means: Series,
    pub variances: Series,
    hidden: Vec<Vec<f64>>,
    gru: Vec<GruCache>,
    heads: Vec<HeadCache>,
}

impl PriorSequence {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    /// Prior of step `t` (0-based).
    pub fn gaussian(&self, t: usize) -> Gaussian {
        Gaussian::diagonal(self.means.vector(t), &self.variances.vector(t)).expect("mean and variance widths agree")
    }

    /// GRU hidden state that produced prior `t` (0-based); index 0 is `h0`.
    pub fn hidden_state(&self, t: usize) -> &[f64] {
        &self.hidden[t]
    }
}

fn check_input(params: &PriorNetParams, y: &Series) -> Result<()> {
    if y.dim() != params.dims.meas_dim {
        return Err(Error::Dimension(format!(
            "measurements of width {} for a network reading width {}",
            y.dim(),
            params.dims.meas_dim
        )));
    }
    Ok(())
}

/// Runs the network over `y`, returning one prior per row of `y`. Prior `t`
/// depends on rows `0..t` only.
pub fn priors_forward(y: &Series, params: &PriorNetParams) -> Result<PriorSequence> {
    check_input(params, y)?;
    if y.is_empty() {
        return Err(Error::InvalidConfig("trajectory must have at least one step".into()));
    }
    let lay = params.lay();
    let NetDims { state_dim: m, hidden: hd, .. } = params.dims;
    let steps = y.len();
    let mut hidden = Vec::with_capacity(steps);
    let mut gru = Vec::with_capacity(steps.saturating_sub(1));
    let mut heads = Vec::with_capacity(steps);
    let mut means = Series::zeros(steps, m);
    let mut variances = Series::zeros(steps, m);

    hidden.push(params.data[lay.h0..lay.h0 + hd].to_vec());
    for t in 0..steps {
        if t > 0 {
            let (h_new, cache) = gru_forward(params, &lay, &hidden[t - 1], y.row(t - 1));
            hidden.push(h_new);
            gru.push(cache);
        }
        let (mean, var, cache) = heads_forward(params, &lay, &hidden[t]);
        means.row_mut(t).copy_from_slice(&mean);
        variances.row_mut(t).copy_from_slice(&var);
        heads.push(cache);
    }
    Ok(PriorSequence { means, variances, hidden, gru, heads })
}

/// Prior for the step after the last row of `y` (the one-step forecast).
/// An empty history gives the prior read from `h0`.
pub fn next_prior(y: &Series, params: &PriorNetParams) -> Result<Gaussian> {
    check_input(params, y)?;
    let lay = params.lay();
    let hd = params.dims.hidden;
    let mut h = params.data[lay.h0..lay.h0 + hd].to_vec();
    for row in y.rows() {
        h = gru_forward(params, &lay, &h, row).0;
    }
    let (mean, var, _) = heads_forward(params, &lay, &h);
    Gaussian::diagonal(DVector::from_vec(mean), &DVector::from_vec(var))
}

/// Reverse-mode pass: given the gradient of a scalar w.r.t. every prior mean
/// and variance, returns its gradient w.r.t. all parameters.
pub fn priors_backward(params: &PriorNetParams, seq: &PriorSequence, d_mean: &Series, d_var: &Series) -> Result<PriorNetParams> {
    let steps = seq.len();
    let m = params.dims.state_dim;
    if d_mean.len() != steps || d_var.len() != steps || d_mean.dim() != m || d_var.dim() != m {
        return Err(Error::Dimension(format!(
            "output gradients of shape {}x{} / {}x{} for a {steps}-step trace",
            d_mean.len(),
            d_mean.dim(),
            d_var.len(),
            d_var.dim()
        )));
    }
    let lay = params.lay();
    let hd = params.dims.hidden;
    let mut grad = params.zeros_like();
    let mut dh = vec![0.0; hd];
    for t in (0..steps).rev() {
        let from_heads = heads_backward(params, &lay, &seq.hidden[t], &seq.heads[t], d_mean.row(t), d_var.row(t), &mut grad.data);
        add_assign(&mut dh, &from_heads);
        if t > 0 {
            dh = gru_backward(params, &lay, &seq.hidden[t - 1], &seq.gru[t - 1], &dh, &mut grad.data);
        }
    }
    add_assign(&mut grad.data[lay.h0..lay.h0 + hd], &dh);
    Ok(grad)
}
