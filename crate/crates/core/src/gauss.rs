//! Gaussian algebra for the prior/posterior system: conjugate measurement
//! update, measurement-predictive density and log-density evaluation.
//!
//! All solves go through a Cholesky factor; nothing here forms an explicit
//! inverse.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Floor applied to prior variances before a measurement update.
pub const PRIOR_VARIANCE_FLOOR: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovStorage {
    Diagonal,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub storage: CovStorage,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::Dimension(format!(
                "mean of length {d} with {}x{} covariance",
                cov.nrows(),
                cov.ncols()
            )));
        }
        Ok(Self { mean, cov, storage: CovStorage::Full })
    }

    pub fn diagonal(mean: DVector<f64>, variances: &DVector<f64>) -> Result<Self> {
        if mean.len() != variances.len() {
            return Err(Error::Dimension(format!(
                "mean of length {} with {} variances",
                mean.len(),
                variances.len()
            )));
        }
        Ok(Self { mean, cov: DMatrix::from_diagonal(variances), storage: CovStorage::Diagonal })
    }

    pub fn isotropic(mean: DVector<f64>, variance: f64) -> Self {
        let d = mean.len();
        Self { mean, cov: DMatrix::identity(d, d) * variance, storage: CovStorage::Diagonal }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variances(&self) -> DVector<f64> {
        self.cov.diagonal()
    }

    /// Log-density at `x`, via the Cholesky factor of the covariance.
    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!("point of length {} for {}-dim Gaussian", x.len(), self.dim())));
        }
        let chol = cholesky(&self.cov)?;
        let diff = x - &self.mean;
        let z = chol.l().solve_lower_triangular(&diff).expect("triangular factor is nonsingular");
        let half_logdet: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum();
        Ok(-0.5 * z.norm_squared() - 0.5 * self.dim() as f64 * LN_2PI - half_logdet)
    }
}

/// Linear-Gaussian measurement system `y = H x + w`, `w ~ N(0, C_w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    h: DMatrix<f64>,
    cw: DMatrix<f64>,
}

impl MeasurementModel {
    pub fn new(h: DMatrix<f64>, cw: DMatrix<f64>) -> Result<Self> {
        let n = h.nrows();
        if n == 0 || h.ncols() == 0 {
            return Err(Error::Dimension("H must be non-empty".into()));
        }
        if cw.nrows() != n || cw.ncols() != n {
            return Err(Error::Dimension(format!("H is {n}x{} but C_w is {}x{}", h.ncols(), cw.nrows(), cw.ncols())));
        }
        if h.iter().chain(cw.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("measurement model entries must be finite".into()));
        }
        cholesky(&cw).map_err(|_| Error::NotPositiveDefinite("C_w".into()))?;
        Ok(Self { h, cw })
    }

    /// `C_w = sigma_w2 * I`.
    pub fn isotropic(h: DMatrix<f64>, sigma_w2: f64) -> Result<Self> {
        let n = h.nrows();
        Self::new(h, DMatrix::identity(n, n) * sigma_w2)
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn cw(&self) -> &DMatrix<f64> {
        &self.cw
    }

    pub fn state_dim(&self) -> usize {
        self.h.ncols()
    }

    pub fn meas_dim(&self) -> usize {
        self.h.nrows()
    }

    fn check_state(&self, g: &Gaussian) -> Result<()> {
        if g.dim() != self.state_dim() {
            return Err(Error::Dimension(format!(
                "{}-dim prior for measurement model with {} state columns",
                g.dim(),
                self.state_dim()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PosteriorUpdate {
    pub posterior: Gaussian,
    pub gain: DMatrix<f64>,
    pub innovation: DVector<f64>,
    pub innovation_cov: DMatrix<f64>,
}

/// Conditions `prior` on the measurement `y`.
///
/// `R = H L Hᵀ + C_w`, `K = L Hᵀ R⁻¹`, posterior mean `m + K (y - H m)` and
/// covariance `L - K R Kᵀ`, symmetrized. The posterior is stored full even
/// for a diagonal prior.
pub fn posterior_update(prior: &Gaussian, mm: &MeasurementModel, y: &DVector<f64>) -> Result<PosteriorUpdate> {
    mm.check_state(prior)?;
    if y.len() != mm.meas_dim() {
        return Err(Error::Dimension(format!("measurement of length {} for {}-row H", y.len(), mm.meas_dim())));
    }
    let mut cov = prior.cov.clone();
    for i in 0..cov.nrows() {
        if cov[(i, i)] < PRIOR_VARIANCE_FLOOR {
            cov[(i, i)] = PRIOR_VARIANCE_FLOOR;
        }
    }
    let h = mm.h();
    let lht = &cov * h.transpose();
    let innovation_cov = symmetrize(&(h * &lht + mm.cw()));
    let chol = cholesky(&innovation_cov).map_err(|_| Error::SingularInnovation)?;
    // K = L Hᵀ R⁻¹  <=>  R Kᵀ = H L
    let gain = chol.solve(&lht.transpose()).transpose();
    let innovation = y - h * &prior.mean;
    let mean = &prior.mean + &gain * &innovation;
    let post_cov = symmetrize(&(&cov - &gain * &innovation_cov * gain.transpose()));
    Ok(PosteriorUpdate {
        posterior: Gaussian { mean, cov: post_cov, storage: CovStorage::Full },
        gain,
        innovation,
        innovation_cov,
    })
}

/// Predictive density of the next measurement: `N(H m, C_w + H L Hᵀ)`.
pub fn predictive_measurement(prior: &Gaussian, mm: &MeasurementModel) -> Result<Gaussian> {
    mm.check_state(prior)?;
    let h = mm.h();
    let cov = symmetrize(&(mm.cw() + h * &prior.cov * h.transpose()));
    Ok(Gaussian { mean: h * &prior.mean, cov, storage: CovStorage::Full })
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!("{}x{} matrix is not square", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite("non-finite entries".into()));
    }
    Cholesky::new(m.clone()).ok_or_else(|| Error::NotPositiveDefinite(format!("{}x{} matrix", m.nrows(), m.ncols())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn scalar_conjugate_update() {
        let prior = Gaussian::isotropic(dvector![0.0], 1.0);
        let mm = MeasurementModel::isotropic(dmatrix![1.0], 1.0).unwrap();
        let up = posterior_update(&prior, &mm, &dvector![2.0]).unwrap();
        assert!(close(up.posterior.mean[0], 1.0, 1e-15));
        assert!(close(up.posterior.cov[(0, 0)], 0.5, 1e-15));
        assert!(close(up.gain[(0, 0)], 0.5, 1e-15));
        assert!(close(up.innovation[0], 2.0, 1e-15));
        assert_eq!(up.posterior.storage, CovStorage::Full);
    }

    #[test]
    fn uninformative_measurement_leaves_prior() {
        let prior = Gaussian::new(dvector![1.0, -2.0], dmatrix![2.0, 0.3; 0.3, 1.0]).unwrap();
        let mm = MeasurementModel::isotropic(DMatrix::identity(2, 2), 1e12).unwrap();
        let y = dvector![50.0, 40.0];
        let up = posterior_update(&prior, &mm, &y).unwrap();
        let shift = (&up.posterior.mean - &prior.mean).norm();
        assert!(shift < 1e-6 * up.innovation.norm());
        assert!((&up.posterior.cov - &prior.cov).amax() < 1e-9);
    }

    #[test]
    fn exact_measurement_pins_state() {
        let prior = Gaussian::isotropic(dvector![0.0, 0.0, 0.0], 3.0);
        let mm = MeasurementModel::isotropic(DMatrix::identity(3, 3), 1e-12).unwrap();
        let y = dvector![1.0, -4.0, 2.5];
        let up = posterior_update(&prior, &mm, &y).unwrap();
        assert!((&up.posterior.mean - &y).amax() < 1e-9);
        assert!(up.posterior.cov.amax() < 1e-9);
    }

    #[test]
    fn singular_innovation_is_reported() {
        let prior = Gaussian::new(dvector![0.0], dmatrix![-5.0]).unwrap();
        // rank-deficient C_w, bypassing the constructor check
        let mm = MeasurementModel { h: dmatrix![1.0; 1.0], cw: dmatrix![0.0, 0.0; 0.0, 0.0] };
        let err = posterior_update(&prior, &mm, &dvector![1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::SingularInnovation));
    }

    #[test]
    fn predictive_examples() {
        let prior = Gaussian::isotropic(dvector![0.0, 0.0], 1.0);
        let mm = MeasurementModel::isotropic(DMatrix::identity(2, 2), 0.25).unwrap();
        let p = predictive_measurement(&prior, &mm).unwrap();
        assert!((p.cov.clone() - DMatrix::identity(2, 2) * 1.25).amax() < 1e-15);

        let prior = Gaussian::isotropic(dvector![3.0], 4.0);
        let mm = MeasurementModel::isotropic(dmatrix![2.0], 1.0).unwrap();
        let p = predictive_measurement(&prior, &mm).unwrap();
        assert_eq!(p.mean[0], 6.0);
        assert_eq!(p.cov[(0, 0)], 17.0);

        let prior = Gaussian::isotropic(dvector![1.0, 2.0], 0.0);
        let mm = MeasurementModel::new(dmatrix![1.0, 1.0], dmatrix![0.5]).unwrap();
        let p = predictive_measurement(&prior, &mm).unwrap();
        assert_eq!(p.mean[0], 3.0);
        assert_eq!(p.cov[(0, 0)], 0.5);
    }

    #[test]
    fn log_pdf_examples() {
        let g = Gaussian::isotropic(dvector![0.0], 1.0);
        assert!(close(g.log_pdf(&dvector![0.0]).unwrap(), -0.918_938_533_204_672_7, 1e-12));

        let g = Gaussian::new(dvector![1.0, 2.0], dmatrix![2.0, 0.5; 0.5, 1.0]).unwrap();
        let logdet = (2.0f64 * 1.0 - 0.25).ln();
        let expect = -LN_2PI - 0.5 * logdet;
        assert!(close(g.log_pdf(&g.mean.clone()).unwrap(), expect, 1e-12));

        let vars = dvector![0.5, 2.0, 3.0];
        let g = Gaussian::diagonal(dvector![1.0, -1.0, 0.0], &vars).unwrap();
        let x = dvector![0.3, 0.7, -2.0];
        let per_dim: f64 = (0..3)
            .map(|i| {
                let d = x[i] - g.mean[i];
                -0.5 * d * d / vars[i] - 0.5 * LN_2PI - 0.5 * vars[i].ln()
            })
            .sum();
        assert!(close(g.log_pdf(&x).unwrap(), per_dim, 1e-12));
    }

    #[test]
    fn log_pdf_rejects_singular() {
        let g = Gaussian::isotropic(dvector![0.0, 0.0], 0.0);
        assert!(g.log_pdf(&dvector![0.0, 0.0]).is_err());
    }

    #[test]
    fn log_pdf_integrates_to_one() {
        let g = Gaussian::isotropic(dvector![0.7], 0.8);
        let (lo, hi, steps) = (-12.0, 12.0, 24_000);
        let dx = (hi - lo) / steps as f64;
        let mass: f64 = (0..steps)
            .map(|k| g.log_pdf(&dvector![lo + (k as f64 + 0.5) * dx]).unwrap().exp() * dx)
            .sum();
        assert!((mass - 1.0).abs() < 1e-4);
    }

    #[test]
    fn measurement_model_validation() {
        assert!(MeasurementModel::isotropic(DMatrix::identity(2, 2), 0.0).is_err());
        assert!(MeasurementModel::new(DMatrix::identity(2, 2), DMatrix::identity(3, 3)).is_err());
    }
}
