//! Synthetic state-space models: a linear Gaussian SSM and the Lorenz and
//! Chen attractors discretized through a truncated Taylor matrix exponential.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::series::Series;

/// Steps discarded before recording an attractor trajectory.
pub const ATTRACTOR_BURN_IN: usize = 100;

const ATTRACTOR_X0_JITTER_VAR: f64 = 1e-4;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(value: f64) -> f64 {
    10.0 * value.log10()
}

/// `Σ_{k=0..order} (A δ)^k / k!`
pub fn taylor_matrix_exp(a: &DMatrix<f64>, delta: f64, order: usize) -> Result<DMatrix<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!("{}x{} matrix is not square", a.nrows(), a.ncols())));
    }
    if order == 0 {
        return Err(Error::InvalidConfig("Taylor order must be at least 1".into()));
    }
    let d = a.nrows();
    let scaled = a * delta;
    let mut term = DMatrix::identity(d, d);
    let mut sum = term.clone();
    for k in 1..=order {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    Ok(sum)
}

/// State transition of a discretized process: `x_t = f(x_{t-1}) + e_t`,
/// `e_t ~ N(0, σe² I)`.
pub trait Dynamics {
    fn state_dim(&self) -> usize;

    /// Noise-free one-step map `f(x)`.
    fn propagate(&self, x: &DVector<f64>) -> DVector<f64>;

    fn process_variance(&self) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub f: DMatrix<f64>,
    pub sigma_e2: f64,
}

impl LinearModel {
    pub fn new(f: DMatrix<f64>, sigma_e2: f64) -> Result<Self> {
        if f.nrows() != f.ncols() || f.nrows() == 0 {
            return Err(Error::Dimension(format!("F is {}x{}", f.nrows(), f.ncols())));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("F must be finite".into()));
        }
        if !(sigma_e2 >= 0.0 && sigma_e2.is_finite()) {
            return Err(Error::InvalidConfig(format!("process variance {sigma_e2} must be finite and non-negative")));
        }
        Ok(Self { f, sigma_e2 })
    }

    /// 2-state model with `F = 0.9 · [[1, 1], [0, 1]]`.
    pub fn default_2d(sigma_e2: f64) -> Self {
        let f = DMatrix::from_row_slice(2, 2, &[0.9, 0.9, 0.0, 0.9]);
        Self { f, sigma_e2 }
    }
}

impl Dynamics for LinearModel {
    fn state_dim(&self) -> usize {
        self.f.nrows()
    }

    fn propagate(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.f * x
    }

    fn process_variance(&self) -> f64 {
        self.sigma_e2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttractorKind {
    Lorenz,
    Chen,
}

impl AttractorKind {
    pub fn name(self) -> &'static str {
        match self {
            AttractorKind::Lorenz => "lorenz",
            AttractorKind::Chen => "chen",
        }
    }

    pub fn default_delta(self) -> f64 {
        match self {
            AttractorKind::Lorenz => 0.02,
            AttractorKind::Chen => 0.002,
        }
    }

    /// State-dependent coefficient matrix `A(x)` with `dx/dt = A(x) x`.
    pub fn coefficients(self, x1: f64) -> DMatrix<f64> {
        match self {
            AttractorKind::Lorenz => DMatrix::from_row_slice(
                3,
                3,
                &[-10.0, 10.0, 0.0, 28.0, -1.0, -x1, 0.0, x1, -8.0 / 3.0],
            ),
            AttractorKind::Chen => {
                DMatrix::from_row_slice(3, 3, &[-35.0, 35.0, 0.0, -7.0, 28.0, -x1, 0.0, x1, -3.0])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttractorModel {
    pub kind: AttractorKind,
    pub delta: f64,
    pub taylor_order: usize,
    pub sigma_e2: f64,
}

impl AttractorModel {
    pub fn new(kind: AttractorKind, delta: f64, taylor_order: usize, sigma_e2: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidConfig(format!("step size {delta} must be positive")));
        }
        if taylor_order == 0 {
            return Err(Error::InvalidConfig("Taylor order must be at least 1".into()));
        }
        if !(sigma_e2 >= 0.0 && sigma_e2.is_finite()) {
            return Err(Error::InvalidConfig(format!("process variance {sigma_e2} must be finite and non-negative")));
        }
        Ok(Self { kind, delta, taylor_order, sigma_e2 })
    }

    pub fn lorenz(sigma_e2: f64) -> Self {
        Self { kind: AttractorKind::Lorenz, delta: 0.02, taylor_order: 5, sigma_e2 }
    }

    pub fn chen(sigma_e2: f64) -> Self {
        Self { kind: AttractorKind::Chen, delta: 0.002, taylor_order: 5, sigma_e2 }
    }

    /// `F(x_prev) ≈ exp(A(x_prev) δ)`, truncated at `taylor_order`.
    pub fn transition(&self, x_prev: &DVector<f64>) -> DMatrix<f64> {
        let a = self.kind.coefficients(x_prev[0]);
        taylor_matrix_exp(&a, self.delta, self.taylor_order).expect("coefficient matrix is 3x3")
    }
}

impl Dynamics for AttractorModel {
    fn state_dim(&self) -> usize {
        3
    }

    fn propagate(&self, x: &DVector<f64>) -> DVector<f64> {
        self.transition(x) * x
    }

    fn process_variance(&self) -> f64 {
        self.sigma_e2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProcessModel {
    Linear(LinearModel),
    Attractor(AttractorModel),
}

impl ProcessModel {
    pub fn descriptor(&self) -> String {
        match self {
            ProcessModel::Linear(m) => format!("linear(m={})", m.f.nrows()),
            ProcessModel::Attractor(a) => {
                format!("{}(delta={},order={})", a.kind.name(), a.delta, a.taylor_order)
            }
        }
    }

    pub fn with_process_variance(&self, sigma_e2: f64) -> Self {
        match self {
            ProcessModel::Linear(m) => ProcessModel::Linear(LinearModel { sigma_e2, ..m.clone() }),
            ProcessModel::Attractor(a) => ProcessModel::Attractor(AttractorModel { sigma_e2, ..a.clone() }),
        }
    }
}

impl Dynamics for ProcessModel {
    fn state_dim(&self) -> usize {
        match self {
            ProcessModel::Linear(m) => m.state_dim(),
            ProcessModel::Attractor(a) => a.state_dim(),
        }
    }

    fn propagate(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            ProcessModel::Linear(m) => m.propagate(x),
            ProcessModel::Attractor(a) => a.propagate(x),
        }
    }

    fn process_variance(&self) -> f64 {
        match self {
            ProcessModel::Linear(m) => m.process_variance(),
            ProcessModel::Attractor(a) => a.process_variance(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BundleMetadata {
    pub model: String,
    pub sigma_e2_db: f64,
    pub smnr_db: Option<f64>,
    pub sigma_w2: f64,
    /// Row-major `n x m` measurement matrix.
    pub h: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBundle {
    pub states: Option<Vec<Series>>,
    pub measurements: Vec<Series>,
    pub metadata: BundleMetadata,
}

impl TrajectoryBundle {
    pub fn new(states: Option<Vec<Series>>, measurements: Vec<Series>, metadata: BundleMetadata) -> Result<Self> {
        let bundle = Self { states, measurements, metadata };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.meas_dim();
        for (i, y) in self.measurements.iter().enumerate() {
            if y.is_empty() {
                return Err(Error::Dimension(format!("trajectory {i} is empty")));
            }
            if y.dim() != n {
                return Err(Error::Dimension(format!("trajectory {i} has measurement width {}", y.dim())));
            }
            if !y.is_finite() {
                return Err(Error::InvalidConfig(format!("trajectory {i} has non-finite measurements")));
            }
        }
        if let Some(states) = &self.states {
            if states.len() != self.measurements.len() {
                return Err(Error::Dimension(format!(
                    "{} state trajectories for {} measurement trajectories",
                    states.len(),
                    self.measurements.len()
                )));
            }
            let m = self.state_dim();
            for (i, (x, y)) in states.iter().zip(&self.measurements).enumerate() {
                if x.len() != y.len() || x.dim() != m {
                    return Err(Error::Dimension(format!("trajectory {i}: state/measurement shapes disagree")));
                }
            }
        }
        if self.metadata.h.len() != n * self.state_dim() {
            return Err(Error::Dimension("metadata H does not match bundle dimensions".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.measurements.iter().map(Series::len).collect()
    }

    pub fn meas_dim(&self) -> usize {
        self.measurements.first().map_or(0, Series::dim)
    }

    pub fn state_dim(&self) -> usize {
        match &self.states {
            Some(s) => s.first().map_or(0, Series::dim),
            None => self.metadata.h.len() / self.meas_dim().max(1),
        }
    }

    pub fn h_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.meas_dim(), self.state_dim(), &self.metadata.h)
    }

    pub fn measurement_model(&self) -> Result<crate::gauss::MeasurementModel> {
        crate::gauss::MeasurementModel::isotropic(self.h_matrix(), self.metadata.sigma_w2)
    }

    /// Same measurements without the state trajectories.
    pub fn without_states(&self) -> Self {
        Self { states: None, ..self.clone() }
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            states: self.states.as_ref().map(|s| indices.iter().map(|&i| s[i].clone()).collect()),
            measurements: indices.iter().map(|&i| self.measurements[i].clone()).collect(),
            metadata: self.metadata.clone(),
        }
    }
}

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian_vector(rng: &mut ChaCha8Rng, dim: usize, std: f64) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        z * std
    })
}

/// Runs `x_t = f(x_{t-1}) + e_t` for `len` steps from `x0`; the returned
/// series holds `x_1 .. x_len`. With `rng = None` the recursion is noiseless.
pub fn roll_out<D: Dynamics>(model: &D, x0: &DVector<f64>, len: usize, mut rng: Option<&mut ChaCha8Rng>) -> Series {
    let m = model.state_dim();
    let std = model.process_variance().sqrt();
    let mut out = Series::zeros(len, m);
    let mut x = x0.clone();
    for t in 0..len {
        x = model.propagate(&x);
        if let Some(rng) = rng.as_deref_mut() {
            x += gaussian_vector(rng, m, std);
        }
        out.row_mut(t).copy_from_slice(x.as_slice());
    }
    out
}

/// Draws the state trajectories of a bundle. Trajectory `i` uses its own
/// ChaCha stream derived from `(seed, i)`, so the result does not depend on
/// generation order.
pub fn simulate_states(model: &ProcessModel, lengths: &[usize], seed: u64) -> Result<Vec<Series>> {
    if lengths.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if lengths.contains(&0) {
        return Err(Error::InvalidConfig("trajectory length must be at least 1".into()));
    }
    let m = model.state_dim();
    let states = lengths
        .iter()
        .enumerate()
        .map(|(i, &len)| {
            let mut rng = substream(seed, 2 * i as u64);
            match model {
                ProcessModel::Linear(_) => {
                    let x0 = gaussian_vector(&mut rng, m, 1.0);
                    roll_out(model, &x0, len, Some(&mut rng))
                }
                ProcessModel::Attractor(_) => {
                    let x0 = DVector::from_element(m, 1.0) + gaussian_vector(&mut rng, m, ATTRACTOR_X0_JITTER_VAR.sqrt());
                    let warm = roll_out(model, &x0, ATTRACTOR_BURN_IN, Some(&mut rng));
                    let start = warm.vector(ATTRACTOR_BURN_IN - 1);
                    roll_out(model, &start, len, Some(&mut rng))
                }
            }
        })
        .collect();
    Ok(states)
}

/// `y_t = H x_t + w_t`, `w_t ~ N(0, σw² I)`, on a stream disjoint from the
/// state streams.
pub fn measure(states: &[Series], h: &DMatrix<f64>, sigma_w2: f64, seed: u64) -> Result<Vec<Series>> {
    if !(sigma_w2 >= 0.0 && sigma_w2.is_finite()) {
        return Err(Error::InvalidConfig(format!("measurement variance {sigma_w2} must be finite and non-negative")));
    }
    let std = sigma_w2.sqrt();
    let n = h.nrows();
    states
        .iter()
        .enumerate()
        .map(|(i, x)| {
            if x.dim() != h.ncols() {
                return Err(Error::Dimension(format!("H has {} columns but states have {}", h.ncols(), x.dim())));
            }
            let mut rng = substream(seed, 2 * i as u64 + 1);
            let mut y = Series::zeros(x.len(), n);
            for t in 0..x.len() {
                let yt = h * x.vector(t) + gaussian_vector(&mut rng, n, std);
                y.row_mut(t).copy_from_slice(yt.as_slice());
            }
            Ok(y)
        })
        .collect()
}

/// Generates `n_traj` state/measurement trajectory pairs.
pub fn simulate(
    model: &ProcessModel,
    h: &DMatrix<f64>,
    sigma_w2: f64,
    n_traj: usize,
    len: usize,
    seed: u64,
) -> Result<TrajectoryBundle> {
    if n_traj == 0 {
        return Err(Error::EmptyDataset);
    }
    simulate_with_lengths(model, h, sigma_w2, &vec![len; n_traj], seed)
}

pub fn simulate_with_lengths(
    model: &ProcessModel,
    h: &DMatrix<f64>,
    sigma_w2: f64,
    lengths: &[usize],
    seed: u64,
) -> Result<TrajectoryBundle> {
    if h.ncols() != model.state_dim() {
        return Err(Error::Dimension(format!(
            "H has {} columns but the model state has dimension {}",
            h.ncols(),
            model.state_dim()
        )));
    }
    let states = simulate_states(model, lengths, seed)?;
    let measurements = measure(&states, h, sigma_w2, seed)?;
    let metadata = BundleMetadata {
        model: model.descriptor(),
        sigma_e2_db: linear_to_db(model.process_variance()),
        smnr_db: None,
        sigma_w2,
        h: h.transpose().as_slice().to_vec(),
        seed,
    };
    TrajectoryBundle::new(Some(states), measurements, metadata)
}

/// Per-trajectory signal power `Σ_t ‖H x_t − mean(H x)‖² / T`, with the
/// expectation over the noise replaced by the trajectory's time average.
pub fn signal_powers(states: &[Series], h: &DMatrix<f64>) -> Result<Vec<f64>> {
    if states.is_empty() {
        return Err(Error::MissingStates);
    }
    states
        .iter()
        .enumerate()
        .map(|(i, x)| {
            if x.dim() != h.ncols() {
                return Err(Error::Dimension(format!("H has {} columns but states have {}", h.ncols(), x.dim())));
            }
            let hx: Vec<DVector<f64>> = (0..x.len()).map(|t| h * x.vector(t)).collect();
            let mean = hx.iter().fold(DVector::zeros(h.nrows()), |acc, v| acc + v) / hx.len() as f64;
            let power = hx.iter().map(|v| (v - &mean).norm_squared()).sum::<f64>() / hx.len() as f64;
            if !(power > 0.0) {
                return Err(Error::ZeroSignalVariance(i));
            }
            Ok(power)
        })
        .collect()
}

/// Measurement noise variance that puts the SMNR of `states` at `target_smnr_db`.
pub fn calibrate_sigma_w2(states: &[Series], h: &DMatrix<f64>, target_smnr_db: f64) -> Result<f64> {
    if !target_smnr_db.is_finite() {
        return Err(Error::InvalidConfig("target SMNR must be finite".into()));
    }
    let n = h.nrows() as f64;
    let powers = signal_powers(states, h)?;
    let mean_db = powers.iter().map(|p| linear_to_db(p / n)).sum::<f64>() / powers.len() as f64;
    Ok(db_to_linear(mean_db - target_smnr_db))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Padé scaling-and-squaring from nalgebra.
    fn expm_oracle(a: &DMatrix<f64>) -> DMatrix<f64> {
        a.exp()
    }

    fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn zero_matrix_exponentiates_to_identity() {
        let e = taylor_matrix_exp(&DMatrix::zeros(3, 3), 0.37, 5).unwrap();
        assert_eq!(e, DMatrix::identity(3, 3));
    }

    #[test]
    fn diagonal_matrix_exp() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let e = taylor_matrix_exp(&a, 0.1, 5).unwrap();
        assert!((e[(0, 0)] - 0.1f64.exp()).abs() < 1e-6);
        assert!((e[(1, 1)] - 0.2f64.exp()).abs() < 1e-6);
        let series = |x: f64| 1.0 + x + x * x / 2.0 + x.powi(3) / 6.0 + x.powi(4) / 24.0 + x.powi(5) / 120.0;
        assert!((e[(0, 0)] - series(0.1)).abs() < 1e-15);
        assert!((e[(1, 1)] - series(0.2)).abs() < 1e-15);
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn non_square_is_rejected() {
        assert!(taylor_matrix_exp(&DMatrix::zeros(2, 3), 0.1, 5).is_err());
        assert!(taylor_matrix_exp(&DMatrix::zeros(2, 2), 0.1, 0).is_err());
    }

    #[test]
    fn lorenz_matrix_against_oracle() {
        let a = AttractorKind::Lorenz.coefficients(0.0);
        let e = taylor_matrix_exp(&a, 0.02, 5).unwrap();
        // the truncation error is governed by the first omitted term
        let oracle = expm_oracle(&(&a * 0.02));
        let err = rel_frobenius(&e, &oracle);
        let remainder = (&a * 0.02).pow(6).norm() / 720.0 / oracle.norm();
        assert!(err < 1e-5 && err > 0.5 * remainder && err < 2.0 * remainder, "{err} vs {remainder}");
        let model = AttractorModel::lorenz(0.1);
        assert_eq!(model.transition(&DVector::zeros(3)), e);

        let x = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let f = model.transition(&x);
        let oracle = expm_oracle(&(AttractorKind::Lorenz.coefficients(1.0) * 0.02));
        assert!(rel_frobenius(&f, &oracle) < 1e-5);
        // higher orders converge to the oracle
        let a1 = AttractorKind::Lorenz.coefficients(1.0);
        assert!(rel_frobenius(&taylor_matrix_exp(&a1, 0.02, 12).unwrap(), &oracle) < 1e-12);
    }

    #[test]
    fn chen_transition_at_origin() {
        let model = AttractorModel::chen(0.1);
        let a = DMatrix::from_row_slice(3, 3, &[-35.0, 35.0, 0.0, -7.0, 28.0, 0.0, 0.0, 0.0, -3.0]);
        assert_eq!(model.transition(&DVector::zeros(3)), taylor_matrix_exp(&a, 0.002, 5).unwrap());
    }

    #[test]
    fn noiseless_linear_recursion_is_exact() {
        let model = LinearModel::new(DMatrix::from_row_slice(2, 2, &[0.9, 0.9, 0.0, 0.9]), 0.0).unwrap();
        let x0 = DVector::from_vec(vec![1.5, -0.5]);
        let states = roll_out(&model, &x0, 25, None);
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.2, 1.0]);
        let ys = measure(&[states.clone()], &h, 0.0, 3).unwrap();
        let mut fx = x0.clone();
        for t in 0..25 {
            fx = &model.f * fx;
            assert!((states.vector(t) - &fx).amax() < 1e-12);
            assert!((ys[0].vector(t) - &h * &fx).amax() < 1e-12);
        }
    }

    #[test]
    fn simulate_is_deterministic() {
        let model = ProcessModel::Attractor(AttractorModel::lorenz(0.1));
        let h = DMatrix::identity(3, 3);
        let a = simulate(&model, &h, 0.5, 3, 50, 11).unwrap();
        let b = simulate(&model, &h, 0.5, 3, 50, 11).unwrap();
        assert_eq!(a, b);
        let c = simulate(&model, &h, 0.5, 3, 50, 12).unwrap();
        assert_ne!(a.measurements, c.measurements);
    }

    #[test]
    fn per_trajectory_streams_are_order_independent() {
        let model = ProcessModel::Linear(LinearModel::default_2d(0.1));
        let short = simulate_states(&model, &[10, 10], 5).unwrap();
        let long = simulate_states(&model, &[10, 10, 10, 10], 5).unwrap();
        assert_eq!(short[..], long[..2]);
    }

    #[test]
    fn lorenz_stays_bounded() {
        let model = ProcessModel::Attractor(AttractorModel::lorenz(0.1));
        let states = simulate_states(&model, &[1000; 4], 1).unwrap();
        for s in &states {
            assert!(s.is_finite());
            assert!(s.as_slice().iter().all(|v| v.abs() < 100.0));
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let model = ProcessModel::Linear(LinearModel::default_2d(0.1));
        assert!(simulate(&model, &DMatrix::identity(3, 3), 1.0, 2, 5, 0).is_err());
        assert!(simulate(&model, &DMatrix::identity(2, 2), 1.0, 0, 5, 0).is_err());
    }

    #[test]
    fn calibration_identities() {
        // one trajectory alternating ±1 in each of 2 dims: power per dim = 1
        let rows: Vec<[f64; 2]> = (0..10).map(|t| if t % 2 == 0 { [1.0, -1.0] } else { [-1.0, 1.0] }).collect();
        let x = Series::from_rows(2, rows).unwrap();
        let h = DMatrix::identity(2, 2);
        let s0 = calibrate_sigma_w2(&[x.clone()], &h, 0.0).unwrap();
        // numerator 20 = n·σ·T with n=2, T=10
        assert!((s0 - 20.0 / 20.0).abs() < 1e-12);
        let s10 = calibrate_sigma_w2(&[x.clone()], &h, 10.0).unwrap();
        assert!((s10 - s0 / 10.0).abs() < 1e-12);

        let flat = Series::from_rows(2, vec![[3.0, 3.0]; 5]).unwrap();
        assert!(matches!(calibrate_sigma_w2(&[flat], &h, 0.0), Err(Error::ZeroSignalVariance(0))));
    }
}
