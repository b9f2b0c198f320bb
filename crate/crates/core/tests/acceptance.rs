//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs with a custom harness. `cargo test --test acceptance -- 3 7` runs a
//! subset. Criteria listed in `KNOWN_FAILURES` are expected to fail; the
//! target exits nonzero if any other criterion fails, or if a known failure
//! starts passing (so the list cannot go stale).

use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use danse::gauss::{posterior_update, predictive_measurement, Gaussian, MeasurementModel};
use danse::harness::experiment::ExperimentSpec;
use danse::harness::metrics::{nmse, one_sigma_coverage};
use danse::harness::{run_experiment, ResultTable};
use danse::filtering::filter_trajectory;
use danse::learn::{supervised_loss, train, unsupervised_loss, TrainConfig, TrainMode};
use danse::prior_net::{NetDims, PriorNetParams};
use danse::ssm::{
    calibrate_sigma_w2, db_to_linear, measure, simulate_states, taylor_matrix_exp, AttractorKind, AttractorModel,
    BundleMetadata, LinearModel, ProcessModel,
};
use danse::{Series, TrajectoryBundle};

/// Criteria that cannot be met as stated; each failure is analyzed in the
/// project's decision notes and summarized in the README.
const KNOWN_FAILURES: &[usize] = &[4, 6];

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

type Criterion = (usize, &'static str, fn() -> Outcome);

const CRITERIA: &[Criterion] = &[
    (1, "posterior update matches Schur-complement conditioning", conjugate_oracle),
    (2, "predictive density matches 1-D quadrature", predictive_quadrature),
    (3, "loss gradients match central differences", gradient_check),
    (4, "order-5 Taylor exponential within 1e-6 of oracle", taylor_accuracy),
    (5, "linear model: KF/LS ordering and DANSE gap", linear_reproduction),
    (6, "Lorenz EKF/UKF reference values", lorenz_baselines),
    (7, "Lorenz DANSE beats EKF by 2 dB at 0 dB", lorenz_danse),
    (8, "Chen trajectories bounded and EKF/UKF below -5 dB", chen_attractor),
    (9, "one-sigma coverage in [0.55, 0.80]", coverage),
    (10, "CLI outputs are byte-identical under a fixed seed", cli_determinism),
];

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut unexpected = 0;
    let (mut passed, mut failed) = (0, 0);
    for &(id, name, run) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|e| Outcome::new(false, format!("panicked: {}", panic_message(&*e))));
        let secs = start.elapsed().as_secs_f64();
        let known = KNOWN_FAILURES.contains(&id);
        let tag = match (outcome.pass, known) {
            (true, false) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
            (true, true) => "PASS (listed as known failure)",
        };
        if outcome.pass {
            passed += 1;
        } else {
            failed += 1;
        }
        if outcome.pass == known {
            unexpected += 1;
        }
        println!("{tag} criterion {id}: {name}: {} [{secs:.1}s]", outcome.detail);
        let _ = std::io::stdout().flush();
    }
    println!("acceptance: {passed} passed, {failed} failed, {unexpected} unexpected");
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn panic_message(e: &(dyn std::any::Any + Send)) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into())
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

fn spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = uniform(rng, d, d, -1.0, 1.0);
    &a * a.transpose() + DMatrix::identity(d, d) * 0.1
}

// ---------------------------------------------------------------- 1

fn conjugate_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let m = rng.random_range(1..=4);
        let n = rng.random_range(1..=4);
        let mean = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
        let l = spd(&mut rng, m);
        let h = uniform(&mut rng, n, m, -2.0, 2.0);
        let cw = spd(&mut rng, n);
        let y = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));

        // Condition the joint (x, y) Gaussian through its precision matrix.
        let hl = &h * &l;
        let mut joint = DMatrix::zeros(m + n, m + n);
        joint.view_mut((0, 0), (m, m)).copy_from(&l);
        joint.view_mut((0, m), (m, n)).copy_from(&hl.transpose());
        joint.view_mut((m, 0), (n, m)).copy_from(&hl);
        joint.view_mut((m, m), (n, n)).copy_from(&(&hl * h.transpose() + &cw));
        let precision = joint.try_inverse().expect("joint covariance is invertible");
        let lxx = precision.view((0, 0), (m, m)).into_owned();
        let lxy = precision.view((0, m), (m, n)).into_owned();
        let cov = lxx.try_inverse().expect("precision block is invertible");
        let oracle_mean = &mean - &cov * lxy * (&y - &h * &mean);

        let prior = Gaussian::new(mean, l).unwrap();
        let mm = MeasurementModel::new(h, cw).unwrap();
        let post = posterior_update(&prior, &mm, &y).unwrap().posterior;
        worst = worst
            .max((&post.mean - &oracle_mean).norm() / oracle_mean.norm())
            .max((&post.cov - &cov).norm() / cov.norm());
    }
    Outcome::new(worst < 1e-10, format!("max relative error {worst:.2e} over 1000 instances (tol 1e-10)"))
}

// ---------------------------------------------------------------- 2

fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Composite Simpson rule on `[a, b]` with `n` (even) intervals.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (f(a) + inner + f(b)) * h / 3.0
}

fn predictive_quadrature() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let m = rng.random_range(-2.0..2.0);
        let l: f64 = rng.random_range(0.1..3.0);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let h = sign * rng.random_range(0.5..2.0);
        let cw: f64 = rng.random_range(0.1..2.0);
        let spread = (h * h * l + cw).sqrt();
        let y = h * m + rng.random_range(-2.0..2.0) * spread;

        let sd = l.sqrt();
        let q = simpson(|x| normal_pdf(y, h * x, cw) * normal_pdf(x, m, l), m - 12.0 * sd, m + 12.0 * sd, 20_000);

        let prior = Gaussian::new(DVector::from_element(1, m), DMatrix::from_element(1, 1, l)).unwrap();
        let mm = MeasurementModel::new(DMatrix::from_element(1, 1, h), DMatrix::from_element(1, 1, cw)).unwrap();
        let pred = predictive_measurement(&prior, &mm).unwrap();
        let p = pred.log_pdf(&DVector::from_element(1, y)).unwrap().exp();
        worst = worst.max((p - q).abs() / q);
    }
    Outcome::new(worst < 1e-6, format!("max relative error {worst:.2e} over 100 instances (tol 1e-6)"))
}

// ---------------------------------------------------------------- 3

/// Worst per-tensor relative error `‖g − g_fd‖ / ‖g_fd‖` over the trainable
/// tensors with a non-negligible gradient.
fn fd_relative_error(params: &PriorNetParams, analytic: &PriorNetParams, loss: impl Fn(&PriorNetParams) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for info in params.tensors().into_iter().filter(|t| t.trainable) {
        let (mut diff, mut norm) = (0.0, 0.0);
        for i in info.range() {
            let step = 1e-6 * params.as_slice()[i].abs().max(1.0);
            let mut p = params.clone();
            p.as_mut_slice()[i] += step;
            let up = loss(&p);
            p.as_mut_slice()[i] -= 2.0 * step;
            let down = loss(&p);
            let fd = (up - down) / (2.0 * step);
            diff += (analytic.as_slice()[i] - fd).powi(2);
            norm += fd * fd;
        }
        if norm.sqrt() > 1e-8 {
            worst = worst.max((diff / norm).sqrt());
        }
    }
    worst
}

fn gradient_check() -> Outcome {
    let dims = NetDims::with_sizes(2, 2, 8, 8);
    let (mut worst_u, mut worst_s): (f64, f64) = (0.0, 0.0);
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(30 + seed);
        let mut params = PriorNetParams::init(dims, seed);
        params.set_normalization(&[0.3, -0.2], &[1.5, 0.8], &[-0.1, 0.4], &[1.2, 0.7]).unwrap();
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, -0.4, 0.9]);
        let mm = MeasurementModel::isotropic(h, 0.5).unwrap();
        let x = Series::new(2, (0..20).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let y = Series::new(2, (0..20).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();

        let (_, g) = unsupervised_loss(&y, &params, &mm).unwrap();
        worst_u = worst_u.max(fd_relative_error(&params, &g, |p| unsupervised_loss(&y, p, &mm).unwrap().0));
        let (_, g) = supervised_loss(&x, &y, &params, &mm).unwrap();
        worst_s = worst_s.max(fd_relative_error(&params, &g, |p| supervised_loss(&x, &y, p, &mm).unwrap().0));
    }
    Outcome::new(
        worst_u < 1e-4 && worst_s < 1e-4,
        format!("worst tensor relative error: unsupervised {worst_u:.2e}, supervised {worst_s:.2e} (tol 1e-4, h=8, T=10)"),
    )
}

// ---------------------------------------------------------------- 4

fn exp_error(a: &DMatrix<f64>, delta: f64) -> f64 {
    let oracle = (a * delta).exp();
    let approx = taylor_matrix_exp(a, delta, 5).unwrap();
    (approx - &oracle).norm() / oracle.norm()
}

fn taylor_accuracy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut random_worst: f64 = 0.0;
    for k in 0..500 {
        let d = 1 + k % 4;
        let a = uniform(&mut rng, d, d, -1.0, 1.0);
        let target = rng.random_range(0.01..0.5);
        let scaled = &a * (target / a.clone().svd(false, false).singular_values.max());
        random_worst = random_worst.max(exp_error(&scaled, 1.0));
    }
    for s in [-0.5, 0.5] {
        random_worst = random_worst.max(exp_error(&DMatrix::from_element(1, 1, s), 1.0));
    }

    let model = ProcessModel::Attractor(AttractorModel::lorenz(db_to_linear(-10.0)));
    let states = simulate_states(&model, &[500], 4).unwrap();
    let (mut lorenz_worst, mut norm_lo, mut norm_hi): (f64, f64, f64) = (0.0, f64::INFINITY, 0.0);
    for x in states[0].rows() {
        let a = AttractorKind::Lorenz.coefficients(x[0]);
        let norm = (&a * 0.02).svd(false, false).singular_values.max();
        norm_lo = norm_lo.min(norm);
        norm_hi = norm_hi.max(norm);
        lorenz_worst = lorenz_worst.max(exp_error(&a, 0.02));
    }
    Outcome::new(
        random_worst < 1e-6 && lorenz_worst < 1e-6,
        format!(
            "max relative error {random_worst:.2e} for random ‖AΔ‖₂ ≤ 0.5, {lorenz_worst:.2e} for Lorenz at Δ=0.02 \
             (‖AΔ‖₂ in [{norm_lo:.2}, {norm_hi:.2}]) (tol 1e-6)"
        ),
    )
}

// ---------------------------------------------------------------- 5-8

fn experiment(json: &str) -> ResultTable {
    run_experiment(&ExperimentSpec::from_json(json).unwrap()).unwrap()
}

fn cell(table: &ResultTable, method: &str, smnr: f64) -> Option<f64> {
    table.get(method, smnr).map(|r| r.nmse_db_mean)
}

fn linear_reproduction() -> Outcome {
    let table = experiment(
        r#"{"model": {"kind": "linear"}, "smnr_db": [-10, 0, 10, 20, 30],
            "n_train": 200, "t_train": 200, "n_test": 50, "t_test": 400,
            "methods": ["LS", "KF", "DANSE"], "training": {"max_epochs": 200}, "seed": 5}"#,
    );
    if !table.failures.is_empty() {
        return Outcome::new(false, format!("failed cells: {:?}", table.failures));
    }
    let get = |m, s| cell(&table, m, s).unwrap();
    let kf_beats_ls = [0.0, 10.0, 20.0, 30.0].iter().all(|&s| get("KF", s) < get("LS", s));
    let close = [20.0, 30.0].iter().all(|&s| (get("DANSE", s) - get("KF", s)).abs() <= 1.5);
    let gap = |s| get("DANSE", s) - get("KF", s);
    let widening = gap(-10.0) > gap(30.0);
    let rows: Vec<String> = [-10.0, 0.0, 10.0, 20.0, 30.0]
        .iter()
        .map(|&s| format!("{s}dB LS {:.2} KF {:.2} DANSE {:.2}", get("LS", s), get("KF", s), get("DANSE", s)))
        .collect();
    Outcome::new(
        kf_beats_ls && close && widening,
        format!(
            "(a) {kf_beats_ls} (b) {close} (c) {widening}: gap {:.3} dB at -10 vs {:.3} dB at 30; {}",
            gap(-10.0),
            gap(30.0),
            rows.join("; ")
        ),
    )
}

fn lorenz_baselines() -> Outcome {
    let table = experiment(
        r#"{"model": {"kind": "lorenz"}, "smnr_db": [-10, 20], "n_train": 0, "t_train": 0,
            "n_test": 20, "t_test": 500, "methods": ["EKF", "UKF"], "seed": 6}"#,
    );
    let ekf = cell(&table, "EKF", 20.0).unwrap();
    let ukf = cell(&table, "UKF", -10.0).unwrap();
    Outcome::new(
        (ekf + 20.44).abs() <= 1.0 && (ukf + 6.33).abs() <= 1.0,
        format!("EKF at 20 dB {ekf:.2} (target -20.44 ± 1.0), UKF at -10 dB {ukf:.2} (target -6.33 ± 1.0)"),
    )
}

fn lorenz_danse() -> Outcome {
    let table = experiment(
        r#"{"model": {"kind": "lorenz"}, "smnr_db": [0], "n_train": 100, "t_train": 250,
            "n_test": 20, "t_test": 500, "methods": ["EKF", "DANSE"], "training": {"max_epochs": 200}, "seed": 7}"#,
    );
    let ekf = cell(&table, "EKF", 0.0).unwrap();
    let Some(danse) = cell(&table, "DANSE", 0.0) else {
        return Outcome::new(false, format!("DANSE failed: {:?}", table.failures));
    };
    Outcome::new(ekf - danse >= 2.0, format!("DANSE {danse:.2} dB vs EKF {ekf:.2} dB (margin {:.2}, need 2)", ekf - danse))
}

fn chen_attractor() -> Outcome {
    let model = ProcessModel::Attractor(AttractorModel::chen(db_to_linear(-10.0)));
    let states = simulate_states(&model, &[1000; 10], 8).unwrap();
    let peak = states.iter().flat_map(|s| s.as_slice().iter()).fold(0.0f64, |acc, v| acc.max(v.abs()));
    let bounded = states.iter().all(Series::is_finite) && peak < 1e3;
    let table = experiment(
        r#"{"model": {"kind": "chen"}, "smnr_db": [10], "n_train": 0, "t_train": 0,
            "n_test": 10, "t_test": 1000, "methods": ["EKF", "UKF"], "seed": 8}"#,
    );
    let ekf = cell(&table, "EKF", 10.0).unwrap();
    let ukf = cell(&table, "UKF", 10.0).unwrap();
    Outcome::new(
        bounded && ekf < -5.0 && ukf < -5.0,
        format!("max |x| {peak:.1} over 10×1000 steps at Δ'=0.002; NMSE at 10 dB: EKF {ekf:.2}, UKF {ukf:.2}"),
    )
}

// ---------------------------------------------------------------- 9

fn linear_bundle(n: usize, t: usize, smnr_db: f64, seed: u64) -> TrajectoryBundle {
    let process = ProcessModel::Linear(LinearModel::default_2d(db_to_linear(-10.0)));
    let h = DMatrix::identity(2, 2);
    let states = simulate_states(&process, &vec![t; n], seed).unwrap();
    let sigma_w2 = calibrate_sigma_w2(&states, &h, smnr_db).unwrap();
    let measurements = measure(&states, &h, sigma_w2, seed).unwrap();
    let metadata = BundleMetadata {
        model: process.descriptor(),
        sigma_e2_db: -10.0,
        smnr_db: Some(smnr_db),
        sigma_w2,
        h: h.as_slice().to_vec(),
        seed,
    };
    TrajectoryBundle::new(Some(states), measurements, metadata).unwrap()
}

fn coverage() -> Outcome {
    let train_set = linear_bundle(200, 200, 10.0, 90);
    let mm = train_set.measurement_model().unwrap();
    // Matched test data: same model and noise level as training.
    let test = linear_bundle(50, 400, 10.0, 91);
    let test_mm = MeasurementModel::isotropic(DMatrix::identity(2, 2), mm.cw()[(0, 0)]).unwrap();
    let cfg = TrainConfig { max_epochs: 150, seed: 9, ..TrainConfig::default() };
    let (params, _) = train(&train_set.without_states(), &mm, &cfg, TrainMode::Unsupervised).unwrap();
    let outputs: Vec<_> = test.measurements.iter().map(|y| filter_trajectory(y, &params, &test_mm).unwrap()).collect();
    let means: Vec<Series> = outputs.iter().map(|o| o.posterior_means()).collect();
    let vars: Vec<Series> = outputs.iter().map(|o| o.posterior_variances()).collect();
    let states = test.states.as_ref().unwrap();
    let cov = one_sigma_coverage(states, &means, &vars).unwrap();
    let (nmse_db, _) = nmse(states, &means).unwrap();
    Outcome::new(
        cov.iter().all(|c| (0.55..=0.80).contains(c)),
        format!("coverage per dimension {cov:.3?} (nominal 0.683); test NMSE {nmse_db:.2} dB at 10 dB SMNR"),
    )
}

// ---------------------------------------------------------------- 10

fn danse(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_danse")).current_dir(dir).args(args).output().unwrap();
    assert!(out.status.success(), "danse {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

/// Runs every subcommand in `dir` and returns the produced files.
fn cli_pipeline(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let spec = r#"{"model": {"kind": "linear"}, "smnr_db": [0, 20], "n_train": 8, "t_train": 30,
        "n_test": 4, "t_test": 40, "methods": ["LS", "KF", "DANSE"], "training": {"max_epochs": 3}, "seed": 3}"#;
    std::fs::write(dir.join("spec.json"), spec).unwrap();
    danse(dir, &["generate", "--model", "lorenz", "--n", "6", "--t", "40", "--smnr-db", "10", "--seed", "10", "--out", "data.bin"]);
    danse(
        dir,
        &["train", "--data", "data.bin", "--epochs", "3", "--hidden", "8", "--seed", "10", "--out-checkpoint", "net.ckpt", "--log", "train.csv"],
    );
    danse(dir, &["filter", "--data", "data.bin", "--checkpoint", "net.ckpt", "--out-csv", "filter.csv"]);
    danse(dir, &["forecast", "--data", "data.bin", "--checkpoint", "net.ckpt", "--horizon", "1", "--out-csv", "forecast.csv"]);
    danse(dir, &["evaluate", "--spec", "spec.json", "--out-table", "table.csv", "--seed", "10"]);
    danse(dir, &["compare", "--tables", "table.csv", "--out-plot", "plot.svg"]);
    ["data.bin", "net.ckpt", "train.csv", "filter.csv", "forecast.csv", "table.csv", "plot.csv", "plot.svg"]
        .iter()
        .map(|f| (f.to_string(), std::fs::read(dir.join(f)).unwrap()))
        .collect()
}

fn cli_determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = cli_pipeline(a.path());
    let second = cli_pipeline(b.path());
    let differing: Vec<&str> = first.iter().zip(&second).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.as_str()).collect();
    let empty: Vec<&str> = first.iter().filter(|(_, bytes)| bytes.is_empty()).map(|(n, _)| n.as_str()).collect();
    Outcome::new(
        differing.is_empty() && empty.is_empty(),
        format!("{} files compared across two runs; differing {differing:?}, empty {empty:?}", first.len()),
    )
}
