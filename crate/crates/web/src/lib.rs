//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export is a plain function of numbers so it can be exercised
//! natively as well; results come back as flat `Float64Array`s.

use nalgebra::{DMatrix, DVector};
use wasm_bindgen::prelude::*;

use danse::baselines::{default_initial_belief, ekf, posterior_means, ukf, UkfConfig};
use danse::gauss::{posterior_update, predictive_measurement};
use danse::harness::experiment::{ExperimentSpec, Method, ModelSpec};
use danse::harness::{nmse, run_experiment};
use danse::ssm::{calibrate_sigma_w2, db_to_linear, measure, simulate_states, AttractorModel, ProcessModel};
use danse::{Gaussian, MeasurementModel};

fn js_err(e: danse::Error) -> String {
    e.to_string()
}

/// One simulated Lorenz trajectory with its EKF and UKF estimates.
/// Trajectories are row-major `steps × 3`.
#[wasm_bindgen]
pub struct LorenzRun {
    truth: Vec<f64>,
    measurements: Vec<f64>,
    ekf: Vec<f64>,
    ukf: Vec<f64>,
    ekf_nmse_db: f64,
    ukf_nmse_db: f64,
    sigma_w2: f64,
}

#[wasm_bindgen]
impl LorenzRun {
    #[wasm_bindgen(getter)]
    pub fn truth(&self) -> Vec<f64> {
        self.truth.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn measurements(&self) -> Vec<f64> {
        self.measurements.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn ekf(&self) -> Vec<f64> {
        self.ekf.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn ukf(&self) -> Vec<f64> {
        self.ukf.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn ekf_nmse_db(&self) -> f64 {
        self.ekf_nmse_db
    }

    #[wasm_bindgen(getter)]
    pub fn ukf_nmse_db(&self) -> f64 {
        self.ukf_nmse_db
    }

    #[wasm_bindgen(getter)]
    pub fn sigma_w2(&self) -> f64 {
        self.sigma_w2
    }
}

/// Simulates a Lorenz trajectory observed at `smnr_db` and filters it.
#[wasm_bindgen]
pub fn lorenz_filter(smnr_db: f64, steps: usize, seed: u32) -> Result<LorenzRun, String> {
    if steps == 0 {
        return Err("steps must be positive".into());
    }
    let seed = u64::from(seed);
    let model = ProcessModel::Attractor(AttractorModel::lorenz(db_to_linear(-10.0)));
    let h = DMatrix::identity(3, 3);
    let states = simulate_states(&model, &[steps], seed).map_err(js_err)?;
    let sigma_w2 = calibrate_sigma_w2(&states, &h, smnr_db).map_err(js_err)?;
    let ys = measure(&states, &h, sigma_w2, seed).map_err(js_err)?;
    let mm = MeasurementModel::isotropic(h, sigma_w2).map_err(js_err)?;
    let x0 = default_initial_belief(3, true);
    let ekf_est = posterior_means(&ekf(&ys[0], &model, &mm, &x0).map_err(js_err)?);
    let ukf_est = posterior_means(&ukf(&ys[0], &model, &mm, &x0, &UkfConfig::default()).map_err(js_err)?);
    let (ekf_nmse_db, _) = nmse(&states, std::slice::from_ref(&ekf_est)).map_err(js_err)?;
    let (ukf_nmse_db, _) = nmse(&states, std::slice::from_ref(&ukf_est)).map_err(js_err)?;
    Ok(LorenzRun {
        truth: states[0].as_slice().to_vec(),
        measurements: ys[0].as_slice().to_vec(),
        ekf: ekf_est.as_slice().to_vec(),
        ukf: ukf_est.as_slice().to_vec(),
        ekf_nmse_db,
        ukf_nmse_db,
        sigma_w2,
    })
}

/// Scalar prior, likelihood and posterior densities on a grid over `x`.
#[wasm_bindgen]
pub struct ScalarUpdate {
    xs: Vec<f64>,
    prior: Vec<f64>,
    likelihood: Vec<f64>,
    posterior: Vec<f64>,
    /// Posterior mean and variance, then predictive mean and variance of `y`.
    summary: Vec<f64>,
}

#[wasm_bindgen]
impl ScalarUpdate {
    #[wasm_bindgen(getter)]
    pub fn xs(&self) -> Vec<f64> {
        self.xs.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn prior(&self) -> Vec<f64> {
        self.prior.clone()
    }

    /// `N(y; h x, noise_var)` as a function of `x`, scaled to unit area.
    #[wasm_bindgen(getter)]
    pub fn likelihood(&self) -> Vec<f64> {
        self.likelihood.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn posterior(&self) -> Vec<f64> {
        self.posterior.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn summary(&self) -> Vec<f64> {
        self.summary.clone()
    }
}

fn density(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Conditions the scalar prior `N(prior_mean, prior_var)` on `y = h x + w`,
/// `w ~ N(0, noise_var)`, and tabulates the densities at `points` grid nodes
/// on `[lo, hi]`.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn scalar_update(
    prior_mean: f64,
    prior_var: f64,
    h: f64,
    noise_var: f64,
    y: f64,
    lo: f64,
    hi: f64,
    points: usize,
) -> Result<ScalarUpdate, String> {
    if !(prior_var > 0.0 && noise_var > 0.0) || points < 2 || hi <= lo || h == 0.0 {
        return Err("need positive variances, nonzero h, hi > lo and at least two points".into());
    }
    let prior = Gaussian::new(DVector::from_element(1, prior_mean), DMatrix::from_element(1, 1, prior_var)).map_err(js_err)?;
    let mm = MeasurementModel::new(DMatrix::from_element(1, 1, h), DMatrix::from_element(1, 1, noise_var)).map_err(js_err)?;
    let post = posterior_update(&prior, &mm, &DVector::from_element(1, y)).map_err(js_err)?.posterior;
    let pred = predictive_measurement(&prior, &mm).map_err(js_err)?;
    let (pm, pv) = (post.mean[0], post.cov[(0, 0)]);
    let xs: Vec<f64> = (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect();
    Ok(ScalarUpdate {
        prior: xs.iter().map(|&x| density(x, prior_mean, prior_var)).collect(),
        likelihood: xs.iter().map(|&x| density(x, y / h, noise_var / (h * h))).collect(),
        posterior: xs.iter().map(|&x| density(x, pm, pv)).collect(),
        summary: vec![pm, pv, pred.mean[0], pred.cov[(0, 0)]],
        xs,
    })
}

/// SMNR grid used by [`linear_sweep`].
pub const SWEEP_SMNR_DB: [f64; 5] = [-10.0, 0.0, 10.0, 20.0, 30.0];

/// KF and LS NMSE (dB) on the 2-D linear model across [`SWEEP_SMNR_DB`].
/// Returns rows `[smnr, ls, kf]` flattened.
#[wasm_bindgen]
pub fn linear_sweep(n_test: usize, steps: usize, seed: u32) -> Result<Vec<f64>, String> {
    let spec = ExperimentSpec {
        name: "browser sweep".into(),
        model: ModelSpec::Linear { f: None },
        measurement: Default::default(),
        smnr_db: SWEEP_SMNR_DB.to_vec(),
        sigma_e2_db: -10.0,
        n_train: 0,
        t_train: 0,
        n_test,
        t_test: steps,
        methods: vec![Method::Ls, Method::Kf],
        train_smnr_db: None,
        train_sigma_e2_db: None,
        n_train_grid: None,
        training: Default::default(),
        seed: u64::from(seed),
    };
    spec.validate().map_err(js_err)?;
    let table = run_experiment(&spec).map_err(js_err)?;
    let mut out = Vec::with_capacity(3 * SWEEP_SMNR_DB.len());
    for s in SWEEP_SMNR_DB {
        let get = |m: &str| table.get(m, s).map(|r| r.nmse_db_mean).ok_or_else(|| format!("missing {m} at {s} dB"));
        out.extend([s, get("LS")?, get("KF")?]);
    }
    Ok(out)
}
