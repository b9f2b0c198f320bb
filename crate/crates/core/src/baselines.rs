//! Model-based reference estimators: Kalman filter, extended and unscented
//! Kalman filters, and the memoryless least-squares estimator.
//!
//! All recursive filters start from a belief over `x_0` and return the
//! posteriors `p(x_t | y_1..y_t)` for `t = 1..T`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::gauss::{cholesky, posterior_update, symmetrize, Gaussian, MeasurementModel};
use crate::series::Series;
use crate::ssm::{Dynamics, LinearModel};

/// Eigenvalue floor used to repair a covariance that fails Cholesky.
pub const EIGEN_CLAMP: f64 = 1e-12;

/// Default belief over `x_0` for the baselines. Linear trajectories start
/// from `x_0 ~ N(0, I)` with no burn-in, so the filters get exactly that law;
/// a vaguer belief leaves the KF measurably suboptimal at low SMNR, where the
/// gain is small and the initial transient decays slowly. Attractor
/// trajectories start after a burn-in at an unknown point on the attractor,
/// so the belief there is the generous `N((1,1,1), 10 I)`.
pub fn default_initial_belief(state_dim: usize, attractor: bool) -> Gaussian {
    if attractor {
        Gaussian::isotropic(DVector::from_element(state_dim, 1.0), 10.0)
    } else {
        Gaussian::isotropic(DVector::zeros(state_dim), 1.0)
    }
}

/// Stacks posterior means into a trajectory.
pub fn posterior_means(posteriors: &[Gaussian]) -> Series {
    let m = posteriors.first().map_or(1, Gaussian::dim);
    Series::from_rows(m, posteriors.iter().map(|g| g.mean.as_slice())).expect("posterior widths agree")
}

fn check_shapes(y: &Series, state_dim: usize, mm: &MeasurementModel, x0: &Gaussian) -> Result<()> {
    if y.dim() != mm.meas_dim() || mm.state_dim() != state_dim || x0.dim() != state_dim {
        return Err(Error::Dimension(format!(
            "measurements {}, H {}x{}, model state {}, initial belief {}",
            y.dim(),
            mm.meas_dim(),
            mm.state_dim(),
            state_dim,
            x0.dim()
        )));
    }
    Ok(())
}

/// Runs predict/update over `y` with the supplied prediction step.
fn run_filter(
    y: &Series,
    mm: &MeasurementModel,
    x0: &Gaussian,
    mut predict: impl FnMut(&Gaussian) -> Result<Gaussian>,
) -> Result<Vec<Gaussian>> {
    let mut belief = x0.clone();
    let mut out = Vec::with_capacity(y.len());
    for t in 0..y.len() {
        let prior = predict(&belief)?;
        belief = posterior_update(&prior, mm, &y.vector(t))?.posterior;
        out.push(belief.clone());
    }
    Ok(out)
}

fn add_process_noise(cov: DMatrix<f64>, sigma_e2: f64) -> DMatrix<f64> {
    let m = cov.nrows();
    symmetrize(&(cov + DMatrix::identity(m, m) * sigma_e2))
}

pub fn kalman_filter(y: &Series, model: &LinearModel, mm: &MeasurementModel, x0: &Gaussian) -> Result<Vec<Gaussian>> {
    check_shapes(y, model.state_dim(), mm, x0)?;
    let f = &model.f;
    run_filter(y, mm, x0, |b| {
        Gaussian::new(f * &b.mean, add_process_noise(f * &b.cov * f.transpose(), model.sigma_e2))
    })
}

/// Central-difference Jacobian of `model.propagate` at `x`, with per-coordinate
/// step `1e-5 (1 + |x_j|)`.
pub fn fd_jacobian<D: Dynamics>(model: &D, x: &DVector<f64>) -> DMatrix<f64> {
    let m = x.len();
    let mut jac = DMatrix::zeros(m, m);
    for j in 0..m {
        let step = 1e-5 * (1.0 + x[j].abs());
        let mut xp = x.clone();
        xp[j] += step;
        let mut xm = x.clone();
        xm[j] -= step;
        let col = (model.propagate(&xp) - model.propagate(&xm)) / (2.0 * step);
        jac.set_column(j, &col);
    }
    jac
}

pub fn ekf<D: Dynamics>(y: &Series, model: &D, mm: &MeasurementModel, x0: &Gaussian) -> Result<Vec<Gaussian>> {
    check_shapes(y, model.state_dim(), mm, x0)?;
    run_filter(y, mm, x0, |b| {
        let jac = fd_jacobian(model, &b.mean);
        Gaussian::new(model.propagate(&b.mean), add_process_noise(&jac * &b.cov * jac.transpose(), model.process_variance()))
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UkfConfig {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UkfConfig {
    fn default() -> Self {
        Self { alpha: 1e-3, beta: 2.0, kappa: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaWeights {
    pub lambda: f64,
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
}

impl UkfConfig {
    pub fn weights(&self, m: usize) -> Result<SigmaWeights> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidConfig(format!("UKF alpha {} outside (0, 1]", self.alpha)));
        }
        let mf = m as f64;
        let lambda = self.alpha * self.alpha * (mf + self.kappa) - mf;
        if mf + lambda <= 0.0 {
            return Err(Error::InvalidConfig(format!("UKF spread m + lambda = {} must be positive", mf + lambda)));
        }
        let wi = 1.0 / (2.0 * (mf + lambda));
        let mut mean = vec![wi; 2 * m + 1];
        let mut cov = mean.clone();
        mean[0] = lambda / (mf + lambda);
        cov[0] = mean[0] + 1.0 - self.alpha * self.alpha + self.beta;
        Ok(SigmaWeights { lambda, mean, cov })
    }
}

/// Lower Cholesky factor of `cov`; on failure the covariance is rebuilt with
/// eigenvalues clamped at [`EIGEN_CLAMP`] and factored once more.
pub fn robust_cholesky(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Ok(c) = cholesky(cov) {
        return Ok(c.l());
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite("non-finite UKF covariance".into()));
    }
    let eig = SymmetricEigen::new(symmetrize(cov));
    let clamped = eig.eigenvalues.map(|v| v.max(EIGEN_CLAMP));
    let repaired = symmetrize(&(&eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose()));
    cholesky(&repaired)
        .map(|c| c.l())
        .map_err(|_| Error::NotPositiveDefinite("UKF covariance after eigenvalue repair".into()))
}

/// Unscented transform of `belief` through the process map, plus process noise.
pub fn unscented_predict<D: Dynamics>(model: &D, belief: &Gaussian, w: &SigmaWeights) -> Result<Gaussian> {
    let m = belief.dim();
    let root = robust_cholesky(&belief.cov)? * (m as f64 + w.lambda).sqrt();
    let mut points = Vec::with_capacity(2 * m + 1);
    points.push(model.propagate(&belief.mean));
    for j in 0..m {
        points.push(model.propagate(&(&belief.mean + root.column(j))));
    }
    for j in 0..m {
        points.push(model.propagate(&(&belief.mean - root.column(j))));
    }
    let mean = points.iter().zip(&w.mean).fold(DVector::zeros(m), |acc, (p, wm)| acc + p * *wm);
    let cov = points.iter().zip(&w.cov).fold(DMatrix::zeros(m, m), |acc, (p, wc)| {
        let d = p - &mean;
        acc + &d * d.transpose() * *wc
    });
    Gaussian::new(mean, add_process_noise(cov, model.process_variance()))
}

/// Unscented Kalman filter. The measurement model is linear, so the
/// sigma-point cross-covariance equals `P Hᵀ` exactly and the update reduces
/// to the closed-form Gaussian conditioning.
pub fn ukf<D: Dynamics>(y: &Series, model: &D, mm: &MeasurementModel, x0: &Gaussian, cfg: &UkfConfig) -> Result<Vec<Gaussian>> {
    check_shapes(y, model.state_dim(), mm, x0)?;
    let w = cfg.weights(model.state_dim())?;
    run_filter(y, mm, x0, |b| unscented_predict(model, b, &w))
}

/// Precomputed weighted least-squares inverse `(Hᵀ C_w⁻¹ H)⁻¹ Hᵀ C_w⁻¹`.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pinv: DMatrix<f64>,
}

impl LeastSquares {
    pub fn new(mm: &MeasurementModel) -> Result<Self> {
        let h = mm.h();
        let cw_chol = cholesky(mm.cw()).map_err(|_| Error::NotPositiveDefinite("C_w".into()))?;
        let cw_inv_h = cw_chol.solve(h);
        let normal = h.transpose() * &cw_inv_h;
        if h.rank(1e-10 * h.amax().max(1.0)) < h.ncols() {
            return Err(Error::Dimension(format!("H ({}x{}) is rank deficient", h.nrows(), h.ncols())));
        }
        let chol = cholesky(&normal).map_err(|_| Error::NotPositiveDefinite("normal equations".into()))?;
        Ok(Self { pinv: chol.solve(&cw_inv_h.transpose()) })
    }

    pub fn estimate(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.pinv * y
    }

    pub fn estimate_trajectory(&self, y: &Series) -> Series {
        let rows: Vec<DVector<f64>> = (0..y.len()).map(|t| self.estimate(&y.vector(t))).collect();
        Series::from_vectors(self.pinv.nrows(), &rows).expect("estimates share a width")
    }
}

pub fn ls_estimate(y: &DVector<f64>, mm: &MeasurementModel) -> Result<DVector<f64>> {
    if y.len() != mm.meas_dim() {
        return Err(Error::Dimension(format!("measurement of length {} for a {}-row H", y.len(), mm.meas_dim())));
    }
    Ok(LeastSquares::new(mm)?.estimate(y))
}
