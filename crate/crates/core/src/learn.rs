//! Maximum-likelihood training of the prior network.
//!
//! Unsupervised training minimizes the negative log-likelihood of the
//! measurements under the one-step predictive densities. The supervised
//! variant, which needs the true states, minimizes the negative posterior
//! log-density of the states and serves as an empirical performance limit.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gauss::{cholesky, posterior_update, MeasurementModel};
use crate::prior_net::{priors_backward, priors_forward, NetDims, PriorNetParams, DEFAULT_FF, DEFAULT_HIDDEN};
use crate::series::Series;
use crate::ssm::TrajectoryBundle;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Minimum validation improvement that resets the early-stopping counter.
pub const EARLY_STOP_MIN_DELTA: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Unsupervised,
    Supervised,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub weight_decay: f64,
    pub patience: usize,
    pub validation_fraction: f64,
    pub grad_clip: f64,
    pub hidden: usize,
    pub ff: usize,
    /// Fit the frozen input/output normalization from the training data.
    pub normalize: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            max_epochs: 2000,
            lr0: 1e-2,
            lr_decay: 0.9,
            weight_decay: 0.0,
            patience: 50,
            validation_fraction: 0.1,
            grad_clip: 10.0,
            hidden: DEFAULT_HIDDEN,
            ff: DEFAULT_FF,
            normalize: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn supervised() -> Self {
        Self { lr0: 5e-3, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate {} must be non-negative", self.lr0)));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "validation fraction {} must lie in (0, 1)",
                self.validation_fraction
            )));
        }
        if self.weight_decay < 0.0 || self.hidden == 0 || self.ff == 0 {
            return Err(Error::InvalidConfig("weight decay must be non-negative and layer sizes positive".into()));
        }
        Ok(())
    }

    /// Epochs between learning-rate decays: `⌈max_epochs / 6⌉`.
    pub fn decay_interval(&self) -> usize {
        self.max_epochs.div_ceil(6).max(1)
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.lr0 * self.lr_decay.powi((epoch / self.decay_interval()) as i32)
    }
}

/// Negative log-likelihood of `y` under the predictive densities
/// `N(H m_t, C_w + H L_t Hᵀ)`, and its gradient.
pub fn unsupervised_loss(y: &Series, params: &PriorNetParams, mm: &MeasurementModel) -> Result<(f64, PriorNetParams)> {
    check_dims(params, mm)?;
    let seq = priors_forward(y, params)?;
    let h = mm.h();
    let (n, m) = (mm.meas_dim(), mm.state_dim());
    let mut d_mean = Series::zeros(y.len(), m);
    let mut d_var = Series::zeros(y.len(), m);
    let mut loss = 0.0;
    for t in 0..y.len() {
        let mean = seq.means.vector(t);
        let var = seq.variances.vector(t);
        let s = mm.cw() + h * DMatrix::from_diagonal(&var) * h.transpose();
        let chol = cholesky(&s).map_err(|_| Error::SingularInnovation)?;
        let eps = y.vector(t) - h * &mean;
        let alpha = chol.solve(&eps);
        let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        loss += 0.5 * eps.dot(&alpha) + 0.5 * n as f64 * LN_2PI + 0.5 * logdet;

        let gm = -(h.transpose() * &alpha);
        let s_inv = chol.inverse();
        let g_s = (s_inv - &alpha * alpha.transpose()) * 0.5;
        let gv = (g_s * h).component_mul(h).row_sum();
        d_mean.row_mut(t).copy_from_slice(gm.as_slice());
        for i in 0..m {
            d_var.row_mut(t)[i] = gv[i];
        }
    }
    if !loss.is_finite() {
        return Err(Error::Diverged { epoch: 0, reason: "non-finite unsupervised loss".into() });
    }
    let grad = priors_backward(params, &seq, &d_mean, &d_var)?;
    Ok((loss, grad))
}

/// Negative log posterior density of the true states `x` under the filter
/// posteriors `N(m_{t|1:t}, L_{t|1:t})`, and its gradient through the
/// closed-form update.
pub fn supervised_loss(x: &Series, y: &Series, params: &PriorNetParams, mm: &MeasurementModel) -> Result<(f64, PriorNetParams)> {
    check_dims(params, mm)?;
    if x.len() != y.len() || x.dim() != mm.state_dim() {
        return Err(Error::Dimension(format!(
            "states of shape {}x{} for {} measurements",
            x.len(),
            x.dim(),
            y.len()
        )));
    }
    let seq = priors_forward(y, params)?;
    let h = mm.h();
    let m = mm.state_dim();
    let eye = DMatrix::<f64>::identity(m, m);
    let mut d_mean = Series::zeros(y.len(), m);
    let mut d_var = Series::zeros(y.len(), m);
    let mut loss = 0.0;
    for t in 0..y.len() {
        let prior = seq.gaussian(t);
        let up = posterior_update(&prior, mm, &y.vector(t))?;
        let post = &up.posterior;
        let p_chol = cholesky(&post.cov).map_err(|_| Error::NotPositiveDefinite("posterior covariance".into()))?;
        let d = x.vector(t) - &post.mean;
        let beta = p_chol.solve(&d);
        let logdet: f64 = 2.0 * p_chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        loss += 0.5 * d.dot(&beta) + 0.5 * m as f64 * LN_2PI + 0.5 * logdet;

        // P = A L with A = I - K H; derivatives w.r.t. the prior mean and
        // diagonal prior variances.
        let a = &eye - &up.gain * h;
        let g_p = (p_chol.inverse() - &beta * beta.transpose()) * 0.5;
        let u = -(a.transpose() * &beta);
        let r_chol = cholesky(&up.innovation_cov).map_err(|_| Error::SingularInnovation)?;
        let w: DVector<f64> = h.transpose() * r_chol.solve(&up.innovation);
        let quad = (g_p * &a).component_mul(&a).row_sum();
        d_mean.row_mut(t).copy_from_slice(u.as_slice());
        for i in 0..m {
            d_var.row_mut(t)[i] = quad[i] + u[i] * w[i];
        }
    }
    if !loss.is_finite() {
        return Err(Error::Diverged { epoch: 0, reason: "non-finite supervised loss".into() });
    }
    let grad = priors_backward(params, &seq, &d_mean, &d_var)?;
    Ok((loss, grad))
}

fn check_dims(params: &PriorNetParams, mm: &MeasurementModel) -> Result<()> {
    let d = params.dims();
    if d.meas_dim != mm.meas_dim() || d.state_dim != mm.state_dim() {
        return Err(Error::Dimension(format!(
            "network is {}->{} but H is {}x{}",
            d.meas_dim,
            d.state_dim,
            mm.meas_dim(),
            mm.state_dim()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { first: vec![0.0; len], second: vec![0.0; len], step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam update applied in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || state.first.len() != params.len() {
        return Err(Error::Dimension(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.first[i] = b1 * state.first[i] + (1.0 - b1) * g;
        state.second[i] = b2 * state.second[i] + (1.0 - b2) * g * g;
        let m_hat = state.first[i] / c1;
        let v_hat = state.second[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// Rescales `grad` to at most `max_norm`; returns the norm before clipping.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    /// Validation loss of the freshly initialized network.
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochRecord>,
    /// `None` when no epoch beat the initial network.
    pub best_epoch: Option<usize>,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,lr\n");
        for r in &self.epochs {
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, r.val_loss, r.lr));
        }
        out
    }
}

/// One trajectory's loss and gradient for the chosen mode.
fn trajectory_objective(
    bundle: &TrajectoryBundle,
    i: usize,
    params: &PriorNetParams,
    mm: &MeasurementModel,
    mode: TrainMode,
) -> Result<(f64, PriorNetParams)> {
    let y = &bundle.measurements[i];
    match mode {
        TrainMode::Unsupervised => unsupervised_loss(y, params, mm),
        TrainMode::Supervised => {
            let x = &bundle.states.as_ref().ok_or(Error::MissingStates)?[i];
            supervised_loss(x, y, params, mm)
        }
    }
}

/// Mean per-trajectory loss and gradient over `indices`. Per-trajectory
/// results are reduced in index order, so the sum does not depend on
/// scheduling.
fn batch_objective(
    bundle: &TrajectoryBundle,
    indices: &[usize],
    params: &PriorNetParams,
    mm: &MeasurementModel,
    mode: TrainMode,
) -> Result<(f64, PriorNetParams)> {
    #[cfg(feature = "parallel")]
    let parts: Vec<Result<(f64, PriorNetParams)>> = {
        use rayon::prelude::*;
        indices.par_iter().map(|&i| trajectory_objective(bundle, i, params, mm, mode)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Result<(f64, PriorNetParams)>> =
        indices.iter().map(|&i| trajectory_objective(bundle, i, params, mm, mode)).collect();

    let mut loss = 0.0;
    let mut grad = params.zeros_like();
    for part in parts {
        let (l, g) = part?;
        loss += l;
        for (a, b) in grad.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *a += b;
        }
    }
    let k = indices.len() as f64;
    grad.as_mut_slice().iter_mut().for_each(|g| *g /= k);
    Ok((loss / k, grad))
}

fn validation_loss(bundle: &TrajectoryBundle, indices: &[usize], params: &PriorNetParams, mm: &MeasurementModel, mode: TrainMode) -> Result<f64> {
    let mut total = 0.0;
    for &i in indices {
        let loss = match mode {
            TrainMode::Unsupervised => unsupervised_nll(&bundle.measurements[i], params, mm)?,
            TrainMode::Supervised => {
                let x = &bundle.states.as_ref().ok_or(Error::MissingStates)?[i];
                supervised_loss(x, &bundle.measurements[i], params, mm)?.0
            }
        };
        total += loss;
    }
    Ok(total / indices.len() as f64)
}

/// Loss value only, without the backward pass.
pub fn unsupervised_nll(y: &Series, params: &PriorNetParams, mm: &MeasurementModel) -> Result<f64> {
    check_dims(params, mm)?;
    let seq = priors_forward(y, params)?;
    let mut total = 0.0;
    for t in 0..y.len() {
        let forecast = crate::gauss::predictive_measurement(&seq.gaussian(t), mm)?;
        total -= forecast.log_pdf(&y.vector(t))?;
    }
    Ok(total)
}

fn mean_std(rows: impl Iterator<Item = Vec<f64>>, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut count = 0.0;
    let mut sum = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    for r in rows {
        count += 1.0;
        for i in 0..dim {
            sum[i] += r[i];
            sq[i] += r[i] * r[i];
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let std = (0..dim)
        .map(|i| {
            let v = sq[i] / count - mean[i] * mean[i];
            if v > 1e-12 { v.sqrt() } else { 1.0 }
        })
        .collect();
    (mean, std)
}

/// Fits the frozen normalization maps from training data. States are used
/// when the mode has them; otherwise state statistics are inferred from the
/// measurements through the least-squares inverse of `H` when it has full
/// column rank.
fn fit_normalization(params: &mut PriorNetParams, bundle: &TrajectoryBundle, indices: &[usize], mm: &MeasurementModel, mode: TrainMode) -> Result<()> {
    let (n, m) = (mm.meas_dim(), mm.state_dim());
    let ys = indices.iter().flat_map(|&i| bundle.measurements[i].rows().map(<[f64]>::to_vec).collect::<Vec<_>>());
    let (y_mean, y_std) = mean_std(ys, n);

    let (x_shift, x_scale) = match (mode, &bundle.states) {
        (TrainMode::Supervised, Some(states)) => {
            mean_std(indices.iter().flat_map(|&i| states[i].rows().map(<[f64]>::to_vec).collect::<Vec<_>>()), m)
        }
        _ => {
            let h = mm.h();
            let hth = h.transpose() * h;
            match hth.clone().try_inverse().filter(|_| h.rank(1e-10) == m) {
                Some(inv) => {
                    let pinv = inv * h.transpose();
                    let shift = &pinv * DVector::from_vec(y_mean.clone());
                    let cov_y = DMatrix::from_diagonal(&DVector::from_iterator(n, y_std.iter().map(|s| s * s)));
                    let cov_x = &pinv * (cov_y - mm.cw()) * pinv.transpose();
                    let scale = (0..m).map(|i| if cov_x[(i, i)] > 1e-12 { cov_x[(i, i)].sqrt() } else { 1.0 }).collect();
                    (shift.as_slice().to_vec(), scale)
                }
                None => {
                    let s = y_std.iter().sum::<f64>() / n as f64;
                    (vec![0.0; m], vec![s; m])
                }
            }
        }
    };
    params.set_normalization(&y_mean, &y_std, &x_shift, &x_scale)
}

/// Splits trajectory indices into (train, validation).
pub fn split_indices(count: usize, validation_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..count).collect();
    if count < 2 {
        return (idx.clone(), idx);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    idx.shuffle(&mut rng);
    let n_val = ((count as f64 * validation_fraction).round() as usize).clamp(1, count - 1);
    let val = idx.split_off(count - n_val);
    (idx, val)
}

/// Trains a fresh network on `dataset` with mini-batch Adam, a step-decay
/// learning rate and early stopping on a held-out split. Returns the
/// parameters with the best validation loss seen.
pub fn train(dataset: &TrajectoryBundle, mm: &MeasurementModel, cfg: &TrainConfig, mode: TrainMode) -> Result<(PriorNetParams, TrainLog)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if mode == TrainMode::Supervised && dataset.states.is_none() {
        return Err(Error::MissingStates);
    }
    let dims = NetDims::with_sizes(mm.meas_dim(), mm.state_dim(), cfg.hidden, cfg.ff);
    let init = PriorNetParams::init(dims, cfg.seed);
    train_from(dataset, mm, cfg, mode, init)
}

/// As [`train`], starting from the given parameters.
pub fn train_from(
    dataset: &TrajectoryBundle,
    mm: &MeasurementModel,
    cfg: &TrainConfig,
    mode: TrainMode,
    mut params: PriorNetParams,
) -> Result<(PriorNetParams, TrainLog)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_dims(&params, mm)?;
    let (train_idx, val_idx) = split_indices(dataset.len(), cfg.validation_fraction, cfg.seed);
    if cfg.normalize {
        fit_normalization(&mut params, dataset, &train_idx, mm, mode)?;
    }
    let mask = params.trainable_mask();

    let diverged = |epoch: usize, e: Error| match e {
        Error::Diverged { reason, .. } => Error::Diverged { epoch, reason },
        Error::SingularInnovation | Error::NotPositiveDefinite(_) => Error::Diverged { epoch, reason: e.to_string() },
        other => other,
    };

    let initial_val_loss = validation_loss(dataset, &val_idx, &params, mm, mode).map_err(|e| diverged(0, e))?;
    let mut best = params.clone();
    let mut best_val = initial_val_loss;
    let mut best_epoch = None;
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut adam = AdamState::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut order = train_idx.clone();
    let mut epochs = Vec::new();

    for epoch in 0..cfg.max_epochs {
        let lr = cfg.learning_rate(epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (mut loss, mut grad) = batch_objective(dataset, batch, &params, mm, mode).map_err(|e| diverged(epoch, e))?;
            if cfg.weight_decay > 0.0 {
                for ((g, p), &train) in grad.as_mut_slice().iter_mut().zip(params.as_slice()).zip(&mask) {
                    if train {
                        loss += cfg.weight_decay * p * p;
                        *g += 2.0 * cfg.weight_decay * p;
                    }
                }
            }
            if !loss.is_finite() || !grad.is_finite() {
                return Err(Error::Diverged { epoch, reason: format!("batch loss {loss}") });
            }
            clip_global_norm(grad.as_mut_slice(), cfg.grad_clip);
            adam_step(params.as_mut_slice(), grad.as_slice(), &mut adam, lr)?;
            epoch_loss += loss * batch.len() as f64;
        }
        let train_loss = epoch_loss / order.len() as f64;
        let val_loss = validation_loss(dataset, &val_idx, &params, mm, mode).map_err(|e| diverged(epoch, e))?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch, reason: format!("validation loss {val_loss}") });
        }
        epochs.push(EpochRecord { epoch, train_loss, val_loss, lr });

        if val_loss < best_val - EARLY_STOP_MIN_DELTA {
            best_val = val_loss;
            best = params.clone();
            best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let log = TrainLog { initial_val_loss, epochs, best_epoch, best_val_loss: best_val, stopped_early };
    Ok((best, log))
}
