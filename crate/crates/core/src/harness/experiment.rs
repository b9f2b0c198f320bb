//! NMSE-versus-SMNR experiments over all estimators on a shared test set.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::metrics::nmse;
use super::par_map;
use super::table::{FailedCell, ResultRow, ResultTable};
use crate::baselines::{default_initial_belief, ekf, kalman_filter, posterior_means, ukf, LeastSquares, UkfConfig};
use crate::error::{Error, Result};
use crate::filtering::filter_trajectory;
use crate::gauss::MeasurementModel;
use crate::learn::{train, TrainConfig, TrainLog, TrainMode};
use crate::prior_net::{PriorNetParams, DEFAULT_FF, DEFAULT_HIDDEN};
use crate::series::Series;
use crate::ssm::{
    calibrate_sigma_w2, db_to_linear, measure, simulate_states, AttractorKind, AttractorModel, BundleMetadata,
    Dynamics, LinearModel, ProcessModel, TrajectoryBundle,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "LS")]
    Ls,
    #[serde(rename = "KF")]
    Kf,
    #[serde(rename = "EKF")]
    Ekf,
    #[serde(rename = "UKF")]
    Ukf,
    #[serde(rename = "DANSE")]
    Danse,
    #[serde(rename = "DANSE-supervised")]
    DanseSupervised,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ls => "LS",
            Method::Kf => "KF",
            Method::Ekf => "EKF",
            Method::Ukf => "UKF",
            Method::Danse => "DANSE",
            Method::DanseSupervised => "DANSE-supervised",
        }
    }

    fn train_mode(self) -> Option<TrainMode> {
        match self {
            Method::Danse => Some(TrainMode::Unsupervised),
            Method::DanseSupervised => Some(TrainMode::Supervised),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Linear {
        /// Row-major square transition matrix; the 2×2 default when absent.
        #[serde(default)]
        f: Option<Vec<f64>>,
    },
    Lorenz {
        #[serde(default)]
        delta: Option<f64>,
        #[serde(default)]
        taylor_order: Option<usize>,
    },
    Chen {
        #[serde(default)]
        delta: Option<f64>,
        #[serde(default)]
        taylor_order: Option<usize>,
    },
}

impl ModelSpec {
    pub fn build(&self, sigma_e2: f64) -> Result<ProcessModel> {
        let attractor = |kind: AttractorKind, delta: &Option<f64>, order: &Option<usize>| {
            AttractorModel::new(kind, delta.unwrap_or(kind.default_delta()), order.unwrap_or(5), sigma_e2)
                .map(ProcessModel::Attractor)
        };
        match self {
            ModelSpec::Linear { f: None } => Ok(ProcessModel::Linear(LinearModel::default_2d(sigma_e2))),
            ModelSpec::Linear { f: Some(v) } => {
                let m = (v.len() as f64).sqrt().round() as usize;
                if m * m != v.len() || m == 0 {
                    return Err(Error::InvalidConfig(format!("F with {} entries is not square", v.len())));
                }
                LinearModel::new(DMatrix::from_row_slice(m, m, v), sigma_e2).map(ProcessModel::Linear)
            }
            ModelSpec::Lorenz { delta, taylor_order } => attractor(AttractorKind::Lorenz, delta, taylor_order),
            ModelSpec::Chen { delta, taylor_order } => attractor(AttractorKind::Chen, delta, taylor_order),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, ModelSpec::Linear { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementKind {
    #[default]
    Identity,
    /// `(m−1)×m` matrix with i.i.d. standard-normal entries, drawn once per
    /// experiment seed.
    Subsampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr: Option<f64>,
    pub patience: usize,
    pub weight_decay: f64,
    pub validation_fraction: f64,
    pub hidden: usize,
    pub ff: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            max_epochs: d.max_epochs,
            batch_size: d.batch_size,
            lr: None,
            patience: d.patience,
            weight_decay: d.weight_decay,
            validation_fraction: d.validation_fraction,
            hidden: DEFAULT_HIDDEN,
            ff: DEFAULT_FF,
        }
    }
}

impl TrainSettings {
    pub fn config(&self, mode: TrainMode, seed: u64) -> TrainConfig {
        let base = match mode {
            TrainMode::Unsupervised => TrainConfig::default(),
            TrainMode::Supervised => TrainConfig::supervised(),
        };
        TrainConfig {
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            lr0: self.lr.unwrap_or(base.lr0),
            weight_decay: self.weight_decay,
            patience: self.patience,
            validation_fraction: self.validation_fraction,
            hidden: self.hidden,
            ff: self.ff,
            seed,
            ..base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub name: String,
    pub model: ModelSpec,
    #[serde(default)]
    pub measurement: MeasurementKind,
    pub smnr_db: Vec<f64>,
    #[serde(default = "default_sigma_e2_db")]
    pub sigma_e2_db: f64,
    pub n_train: usize,
    pub t_train: usize,
    pub n_test: usize,
    pub t_test: usize,
    pub methods: Vec<Method>,
    /// Train every cell at this SMNR instead of the cell's own.
    #[serde(default)]
    pub train_smnr_db: Option<f64>,
    /// Train at this process noise instead of `sigma_e2_db`.
    #[serde(default)]
    pub train_sigma_e2_db: Option<f64>,
    /// Data-amount sweep: train on the first `k` training trajectories for
    /// each listed `k` (each at most `n_train`).
    #[serde(default)]
    pub n_train_grid: Option<Vec<usize>>,
    #[serde(default)]
    pub training: TrainSettings,
    #[serde(default)]
    pub seed: u64,
}

fn default_sigma_e2_db() -> f64 {
    -10.0
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| Error::Parse(format!("experiment spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.smnr_db.is_empty() || self.methods.is_empty() {
            return bad("SMNR grid and method list must be nonempty".into());
        }
        if self.smnr_db.iter().any(|s| !s.is_finite()) || !self.sigma_e2_db.is_finite() {
            return bad("SMNR grid and process noise must be finite".into());
        }
        if self.n_test == 0 || self.t_test == 0 {
            return bad("test set must be nonempty".into());
        }
        if self.methods.iter().any(|m| m.train_mode().is_some()) && (self.n_train < 2 || self.t_train == 0) {
            return bad("training needs at least two trajectories".into());
        }
        if self.methods.contains(&Method::Kf) && !self.model.is_linear() {
            return bad("KF needs the linear model".into());
        }
        if self.methods.contains(&Method::Ls) && self.measurement == MeasurementKind::Subsampled {
            return bad("LS needs a full-column-rank H".into());
        }
        if let Some(grid) = &self.n_train_grid {
            if grid.is_empty() || grid.iter().any(|&k| k < 2 || k > self.n_train) {
                return bad(format!("n_train_grid entries must lie in [2, {}]", self.n_train));
            }
        }
        let mut seen = Vec::new();
        for m in &self.methods {
            if seen.contains(m) {
                return bad(format!("method {} listed twice", m.name()));
            }
            seen.push(*m);
        }
        self.model.build(db_to_linear(self.sigma_e2_db)).map(|_| ())
    }
}

/// SplitMix64 of `(seed, tag)`: independent seeds for the experiment's
/// random components.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn measurement_matrix(kind: MeasurementKind, m: usize, seed: u64) -> DMatrix<f64> {
    match kind {
        MeasurementKind::Identity => DMatrix::identity(m, m),
        MeasurementKind::Subsampled => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 10));
            DMatrix::from_fn(m.saturating_sub(1).max(1), m, |_, _| StandardNormal.sample(&mut rng))
        }
    }
}

/// What one SMNR cell was evaluated on.
#[derive(Debug, Clone)]
pub struct CellRecord {
    pub smnr_db: f64,
    pub sigma_w2: f64,
    pub test: Arc<TrajectoryBundle>,
    /// The test bundle handle each method received.
    pub inputs: Vec<(Method, Arc<TrajectoryBundle>)>,
}

#[derive(Debug, Clone)]
pub struct TrainingRecord {
    pub method: Method,
    pub sigma_w2: f64,
    pub n_train: usize,
    pub log: TrainLog,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub table: ResultTable,
    pub cells: Vec<CellRecord>,
    pub training: Vec<TrainingRecord>,
}

#[allow(clippy::too_many_arguments)]
fn bundle_from(states: Vec<Series>, measurements: Vec<Series>, h: &DMatrix<f64>, sigma_w2: f64, sigma_e2_db: f64, smnr: f64, process: &ProcessModel, seed: u64) -> Result<TrajectoryBundle> {
    TrajectoryBundle::new(
        Some(states),
        measurements,
        BundleMetadata {
            model: process.descriptor(),
            sigma_e2_db,
            smnr_db: Some(smnr),
            sigma_w2,
            h: h.transpose().as_slice().to_vec(),
            seed,
        },
    )
}

/// Point estimates of a baseline on every test trajectory.
fn baseline_estimates(method: Method, process: &ProcessModel, test: &TrajectoryBundle, mm: &MeasurementModel) -> Result<Vec<Series>> {
    let attractor = matches!(process, ProcessModel::Attractor(_));
    let x0 = default_initial_belief(process.state_dim(), attractor);
    match method {
        Method::Ls => {
            let ls = LeastSquares::new(mm)?;
            Ok(test.measurements.iter().map(|y| ls.estimate_trajectory(y)).collect())
        }
        Method::Kf => {
            let ProcessModel::Linear(lin) = process else {
                return Err(Error::InvalidConfig("KF needs the linear model".into()));
            };
            par_map(&test.measurements, |y| kalman_filter(y, lin, mm, &x0).map(|p| posterior_means(&p))).into_iter().collect()
        }
        Method::Ekf => par_map(&test.measurements, |y| ekf(y, process, mm, &x0).map(|p| posterior_means(&p))).into_iter().collect(),
        Method::Ukf => par_map(&test.measurements, |y| {
            ukf(y, process, mm, &x0, &UkfConfig::default()).map(|p| posterior_means(&p))
        })
        .into_iter()
        .collect(),
        Method::Danse | Method::DanseSupervised => unreachable!("trained methods are handled separately"),
    }
}

fn danse_estimates(params: &PriorNetParams, test: &TrajectoryBundle, mm: &MeasurementModel) -> Result<Vec<Series>> {
    par_map(&test.measurements, |y| filter_trajectory(y, params, mm).map(|o| o.posterior_means())).into_iter().collect()
}

type TrainKey = (Method, u64, usize);

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    run_experiment_detailed(spec).map(|r| r.table)
}

/// Runs every (method, SMNR) cell. Training failures mark the cell as failed
/// and the run continues; other errors abort.
pub fn run_experiment_detailed(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let process = spec.model.build(db_to_linear(spec.sigma_e2_db))?;
    let train_e2_db = spec.train_sigma_e2_db.unwrap_or(spec.sigma_e2_db);
    let train_process = spec.model.build(db_to_linear(train_e2_db))?;
    let m = process.state_dim();
    let h = measurement_matrix(spec.measurement, m, spec.seed);

    let test_seed = derive_seed(spec.seed, 1);
    let test_states = simulate_states(&process, &vec![spec.t_test; spec.n_test], test_seed)?;
    let trains = spec.methods.iter().any(|m| m.train_mode().is_some());
    let train_states =
        if trains { Some(simulate_states(&train_process, &vec![spec.t_train; spec.n_train], derive_seed(spec.seed, 2))?) } else { None };
    let n_grid = spec.n_train_grid.clone().unwrap_or_else(|| vec![spec.n_train]);

    let mut table = ResultTable::default();
    let mut cells = Vec::new();
    let mut training = Vec::new();
    let mut cache: HashMap<TrainKey, std::result::Result<Arc<PriorNetParams>, String>> = HashMap::new();

    for (k, &smnr) in spec.smnr_db.iter().enumerate() {
        let sigma_w2 = calibrate_sigma_w2(&test_states, &h, smnr)?;
        let y_test = measure(&test_states, &h, sigma_w2, derive_seed(test_seed, 100 + k as u64))?;
        let test = Arc::new(bundle_from(test_states.clone(), y_test, &h, sigma_w2, spec.sigma_e2_db, smnr, &process, spec.seed)?);
        let mm = MeasurementModel::isotropic(h.clone(), sigma_w2)?;
        let mut record = CellRecord { smnr_db: smnr, sigma_w2, test: Arc::clone(&test), inputs: Vec::new() };

        for &method in &spec.methods {
            let input = Arc::clone(&test);
            record.inputs.push((method, Arc::clone(&input)));
            let states = input.states.as_ref().expect("test bundles carry states");
            let Some(mode) = method.train_mode() else {
                let est = baseline_estimates(method, &process, &input, &mm)?;
                let (mean, se) = nmse(states, &est)?;
                table.rows.push(ResultRow {
                    method: method.name().into(),
                    smnr_db: smnr,
                    n_train: 0,
                    nmse_db_mean: mean,
                    nmse_db_stderr: se,
                    n_test: spec.n_test,
                });
                continue;
            };

            let train_states = train_states.as_ref().expect("generated when a trained method is listed");
            let train_w2 = calibrate_sigma_w2(train_states, &h, spec.train_smnr_db.unwrap_or(smnr))?;
            for &n_use in &n_grid {
                let key = (method, train_w2.to_bits(), n_use);
                if let Entry::Vacant(slot) = cache.entry(key) {
                    let y_train = measure(train_states, &h, train_w2, derive_seed(spec.seed, 0x5000 ^ train_w2.to_bits()))?;
                    let full = bundle_from(
                        train_states.clone(),
                        y_train,
                        &h,
                        train_w2,
                        train_e2_db,
                        spec.train_smnr_db.unwrap_or(smnr),
                        &train_process,
                        spec.seed,
                    )?;
                    let subset: Vec<usize> = (0..n_use).collect();
                    let mut data = full.subset(&subset);
                    if mode == TrainMode::Unsupervised {
                        data = data.without_states();
                    }
                    let train_mm = MeasurementModel::isotropic(h.clone(), train_w2)?;
                    let cfg = spec.training.config(mode, derive_seed(spec.seed, 3));
                    let outcome = match train(&data, &train_mm, &cfg, mode) {
                        Ok((params, log)) => {
                            training.push(TrainingRecord { method, sigma_w2: train_w2, n_train: n_use, log });
                            Ok(Arc::new(params))
                        }
                        Err(e @ (Error::Diverged { .. } | Error::SingularInnovation | Error::NotPositiveDefinite(_))) => Err(e.to_string()),
                        Err(e) => return Err(e),
                    };
                    slot.insert(outcome);
                }
                match &cache[&key] {
                    Ok(params) => {
                        let est = danse_estimates(params, &input, &mm)?;
                        let (mean, se) = nmse(states, &est)?;
                        table.rows.push(ResultRow {
                            method: method.name().into(),
                            smnr_db: smnr,
                            n_train: n_use,
                            nmse_db_mean: mean,
                            nmse_db_stderr: se,
                            n_test: spec.n_test,
                        });
                    }
                    Err(reason) => table.failures.push(FailedCell {
                        method: method.name().into(),
                        smnr_db: smnr,
                        reason: format!("n_train={n_use}: {reason}"),
                    }),
                }
            }
        }
        cells.push(record);
    }
    Ok(ExperimentReport { table, cells, training })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::metrics::nmse;

    fn spec(methods: Vec<Method>) -> ExperimentSpec {
        ExperimentSpec {
            name: "t".into(),
            model: ModelSpec::Linear { f: None },
            measurement: MeasurementKind::Identity,
            smnr_db: vec![0.0, 20.0],
            sigma_e2_db: -10.0,
            n_train: 6,
            t_train: 20,
            n_test: 5,
            t_test: 30,
            methods,
            train_smnr_db: None,
            train_sigma_e2_db: None,
            n_train_grid: None,
            training: TrainSettings { max_epochs: 2, hidden: 4, ff: 4, ..TrainSettings::default() },
            seed: 5,
        }
    }

    #[test]
    fn ls_table_matches_direct_composition() {
        let s = spec(vec![Method::Ls]);
        let report = run_experiment_detailed(&s).unwrap();
        for cell in &report.cells {
            let mm = cell.test.measurement_model().unwrap();
            let ls = LeastSquares::new(&mm).unwrap();
            let est: Vec<Series> = cell.test.measurements.iter().map(|y| ls.estimate_trajectory(y)).collect();
            let (mean, se) = nmse(cell.test.states.as_ref().unwrap(), &est).unwrap();
            let row = report.table.get("LS", cell.smnr_db).unwrap();
            assert_eq!((row.nmse_db_mean, row.nmse_db_stderr), (mean, se));
        }
    }

    #[test]
    fn same_seed_same_table_and_shared_test_set() {
        let s = spec(vec![Method::Ls, Method::Kf, Method::Ekf, Method::Danse]);
        let a = run_experiment_detailed(&s).unwrap();
        let b = run_experiment(&s).unwrap();
        assert_eq!(a.table, b);
        assert_eq!(a.table.rows.len(), 8);
        for cell in &a.cells {
            assert_eq!(cell.inputs.len(), 4);
            assert!(cell.inputs.iter().all(|(_, t)| Arc::ptr_eq(t, &cell.test)));
        }
    }

    #[test]
    fn training_is_cached_across_cells_at_fixed_train_smnr() {
        let mut s = spec(vec![Method::Danse]);
        s.train_smnr_db = Some(10.0);
        let r = run_experiment_detailed(&s).unwrap();
        assert_eq!(r.training.len(), 1);
        assert_eq!(r.table.rows.len(), 2);
    }

    #[test]
    fn data_amount_sweep_emits_row_per_size() {
        let mut s = spec(vec![Method::Danse]);
        s.smnr_db = vec![10.0];
        s.n_train_grid = Some(vec![3, 6]);
        let r = run_experiment(&s).unwrap();
        let sizes: Vec<usize> = r.rows.iter().map(|row| row.n_train).collect();
        assert_eq!(sizes, vec![3, 6]);
    }

    #[test]
    fn diverged_training_marks_cell_failed() {
        let mut s = spec(vec![Method::Kf, Method::Danse]);
        s.training.lr = Some(1e300);
        s.training.max_epochs = 3;
        let r = run_experiment(&s).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert_eq!(r.failures.len(), 2);
        assert!(r.rows.iter().all(|row| row.method == "KF"));
    }

    #[test]
    fn subsampled_h_runs_attractor_study() {
        let s = ExperimentSpec {
            model: ModelSpec::Lorenz { delta: None, taylor_order: None },
            measurement: MeasurementKind::Subsampled,
            methods: vec![Method::Ekf, Method::Ukf, Method::Danse],
            ..spec(vec![])
        };
        let r = run_experiment_detailed(&s).unwrap();
        assert_eq!(r.cells[0].test.h_matrix().shape(), (2, 3));
        assert!(r.table.rows.iter().all(|row| row.nmse_db_mean.is_finite()));
        assert_eq!(measurement_matrix(MeasurementKind::Subsampled, 3, 5), r.cells[0].test.h_matrix());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = spec(vec![Method::Kf]);
        s.model = ModelSpec::Lorenz { delta: None, taylor_order: None };
        assert!(s.validate().is_err());
        let mut s = spec(vec![Method::Ls]);
        s.measurement = MeasurementKind::Subsampled;
        assert!(s.validate().is_err());
        assert!(spec(vec![]).validate().is_err());
        assert!(spec(vec![Method::Ls, Method::Ls]).validate().is_err());
        let mut s = spec(vec![Method::Danse]);
        s.n_train_grid = Some(vec![100]);
        assert!(s.validate().is_err());
    }

    #[test]
    fn spec_json_defaults() {
        let s = ExperimentSpec::from_json(
            r#"{"model":{"kind":"lorenz"},"smnr_db":[10],"n_train":0,"t_train":0,"n_test":2,"t_test":10,"methods":["EKF","UKF"]}"#,
        )
        .unwrap();
        assert_eq!(s.sigma_e2_db, -10.0);
        assert_eq!(s.training, TrainSettings::default());
        assert!(ExperimentSpec::from_json(r#"{"model":{"kind":"lorenz"}}"#).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 1), derive_seed(1, 2));
        assert_ne!(derive_seed(1, 1), derive_seed(2, 1));
    }
}
