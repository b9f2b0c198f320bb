use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use danse::filtering::{filter_trajectory, forecast_next};
use danse::harness::experiment::{measurement_matrix, run_experiment, ExperimentSpec, MeasurementKind, ModelSpec};
use danse::harness::io::{read_bundle, read_checkpoint, read_text, write_bundle, write_checkpoint, write_file};
use danse::harness::plot::{curves_csv, curves_from_tables, render_svg};
use danse::harness::ResultTable;
use danse::learn::{train, TrainConfig, TrainMode};
use danse::ssm::{calibrate_sigma_w2, db_to_linear, linear_to_db, measure, simulate_states, BundleMetadata, Dynamics};
use danse::{Error, Result, TrajectoryBundle};

#[derive(Parser)]
#[command(name = "danse", version, about = "State estimation with a learned recurrent Gaussian prior")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Linear,
    Lorenz,
    Chen,
}

#[derive(Clone, Copy, ValueEnum)]
enum MeasurementArg {
    Identity,
    Subsampled,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Unsupervised,
    Supervised,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset and write it as a trajectory bundle.
    Generate {
        #[arg(long, value_enum)]
        model: ModelArg,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        t: usize,
        #[arg(long, allow_hyphen_values = true)]
        smnr_db: f64,
        #[arg(long, default_value_t = -10.0, allow_hyphen_values = true)]
        sigma_e2_db: f64,
        #[arg(long, value_enum, default_value = "identity")]
        measurement: MeasurementArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a prior network on a bundle.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "unsupervised")]
        mode: ModeArg,
        #[arg(long, default_value_t = 2000)]
        epochs: usize,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        /// Initial learning rate; defaults to 1e-2 (unsupervised) or 5e-3 (supervised).
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, default_value_t = 50)]
        patience: usize,
        #[arg(long, default_value_t = danse::prior_net::DEFAULT_HIDDEN)]
        hidden: usize,
        #[arg(long, default_value_t = 0.0)]
        weight_decay: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_checkpoint: PathBuf,
        /// Per-epoch training log (CSV).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Posterior means and variances for every trajectory in a bundle.
    Filter {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out_csv: PathBuf,
    },
    /// One-step forecasts of states and measurements.
    Forecast {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1)]
        horizon: usize,
        #[arg(long)]
        out_csv: PathBuf,
    },
    /// Run an experiment spec (JSON) and write its NMSE table.
    Evaluate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_table: PathBuf,
        /// Overrides the seed in the spec file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Overlay result tables as NMSE-versus-SMNR curves (SVG or CSV).
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        tables: Vec<PathBuf>,
        #[arg(long)]
        out_plot: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate { model, n, t, smnr_db, sigma_e2_db, measurement, seed, out } => {
            generate(model, n, t, smnr_db, sigma_e2_db, measurement, seed, &out)
        }
        Command::Train { data, mode, epochs, batch_size, lr, patience, hidden, weight_decay, seed, out_checkpoint, log } => {
            let bundle = read_bundle(&data)?;
            let mm = bundle.measurement_model()?;
            let mode = match mode {
                ModeArg::Unsupervised => TrainMode::Unsupervised,
                ModeArg::Supervised => TrainMode::Supervised,
            };
            let base = if mode == TrainMode::Supervised { TrainConfig::supervised() } else { TrainConfig::default() };
            let cfg = TrainConfig {
                max_epochs: epochs,
                batch_size,
                lr0: lr.unwrap_or(base.lr0),
                patience,
                hidden,
                weight_decay,
                seed,
                ..base
            };
            let data = if mode == TrainMode::Unsupervised { bundle.without_states() } else { bundle };
            let (params, train_log) = train(&data, &mm, &cfg, mode)?;
            write_checkpoint(&out_checkpoint, &params)?;
            if let Some(path) = log {
                write_file(&path, train_log.to_csv())?;
            }
            eprintln!(
                "trained {} epochs; validation loss {:.4} -> {:.4}",
                train_log.epochs.len(),
                train_log.initial_val_loss,
                train_log.best_val_loss
            );
            Ok(())
        }
        Command::Filter { data, checkpoint, out_csv } => filter(&data, &checkpoint, &out_csv),
        Command::Forecast { data, checkpoint, horizon, out_csv } => {
            if horizon != 1 {
                return Err(Error::InvalidConfig(format!("only one-step forecasts are supported, got horizon {horizon}")));
            }
            forecast(&data, &checkpoint, &out_csv)
        }
        Command::Evaluate { spec, out_table, seed } => {
            let mut spec = ExperimentSpec::from_json(&read_text(&spec)?)?;
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            let table = run_experiment(&spec)?;
            for f in &table.failures {
                eprintln!("warning: {} at {} dB failed: {}", f.method, f.smnr_db, f.reason);
            }
            table.write(&out_table)
        }
        Command::Compare { tables, out_plot } => compare(&tables, &out_plot),
    }
}

#[allow(clippy::too_many_arguments)]
fn generate(
    model: ModelArg,
    n: usize,
    t: usize,
    smnr_db: f64,
    sigma_e2_db: f64,
    measurement: MeasurementArg,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let spec = match model {
        ModelArg::Linear => ModelSpec::Linear { f: None },
        ModelArg::Lorenz => ModelSpec::Lorenz { delta: None, taylor_order: None },
        ModelArg::Chen => ModelSpec::Chen { delta: None, taylor_order: None },
    };
    let process = spec.build(db_to_linear(sigma_e2_db))?;
    let kind = match measurement {
        MeasurementArg::Identity => MeasurementKind::Identity,
        MeasurementArg::Subsampled => MeasurementKind::Subsampled,
    };
    let h = measurement_matrix(kind, process.state_dim(), seed);
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let states = simulate_states(&process, &vec![t; n], seed)?;
    let sigma_w2 = calibrate_sigma_w2(&states, &h, smnr_db)?;
    let measurements = measure(&states, &h, sigma_w2, seed)?;
    let metadata = BundleMetadata {
        model: process.descriptor(),
        sigma_e2_db: linear_to_db(process.process_variance()),
        smnr_db: Some(smnr_db),
        sigma_w2,
        h: h.transpose().as_slice().to_vec(),
        seed,
    };
    write_bundle(out, &TrajectoryBundle::new(Some(states), measurements, metadata)?)
}

fn header(out: &mut String, fixed: &str, groups: &[(&str, usize)]) {
    out.push_str(fixed);
    for (name, dim) in groups {
        for i in 1..=*dim {
            let _ = write!(out, ",{name}_{i}");
        }
    }
    out.push('\n');
}

fn push_row(out: &mut String, i: usize, t: usize, values: &[&[f64]]) {
    let _ = write!(out, "{i},{t}");
    for group in values {
        for v in *group {
            let _ = write!(out, ",{v}");
        }
    }
    out.push('\n');
}

fn filter(data: &Path, checkpoint: &Path, out_csv: &Path) -> Result<()> {
    let bundle = read_bundle(data)?;
    let params = read_checkpoint(checkpoint)?;
    let mm = bundle.measurement_model()?;
    let m = mm.state_dim();
    let mut out = String::new();
    header(&mut out, "trajectory,t", &[("mean", m), ("var", m)]);
    for (i, y) in bundle.measurements.iter().enumerate() {
        let result = filter_trajectory(y, &params, &mm)?;
        let (means, vars) = (result.posterior_means(), result.posterior_variances());
        for t in 0..y.len() {
            push_row(&mut out, i, t + 1, &[means.row(t), vars.row(t)]);
        }
    }
    write_file(out_csv, out)
}

/// Forecasts for `t = 1 ..= T + 1`, each from the measurements before `t`.
fn forecast(data: &Path, checkpoint: &Path, out_csv: &Path) -> Result<()> {
    let bundle = read_bundle(data)?;
    let params = read_checkpoint(checkpoint)?;
    let mm = bundle.measurement_model()?;
    let (m, n) = (mm.state_dim(), mm.meas_dim());
    let mut out = String::new();
    header(&mut out, "trajectory,t", &[("x_mean", m), ("x_var", m), ("y_mean", n), ("y_var", n)]);
    for (i, y) in bundle.measurements.iter().enumerate() {
        for t in 0..=y.len() {
            let (state, meas) = forecast_next(&y.prefix(t), &params, &mm)?;
            let (sv, mv) = (state.variances(), meas.variances());
            push_row(&mut out, i, t + 1, &[state.mean.as_slice(), sv.as_slice(), meas.mean.as_slice(), mv.as_slice()]);
        }
    }
    write_file(out_csv, out)
}

fn compare(paths: &[PathBuf], out_plot: &Path) -> Result<()> {
    let tables = paths
        .iter()
        .map(|p| {
            let name = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
            ResultTable::read(p).map(|t| (name, t))
        })
        .collect::<Result<Vec<_>>>()?;
    let curves = curves_from_tables(&tables);
    let csv = curves_csv(&curves);
    if out_plot.extension().is_some_and(|e| e.eq_ignore_ascii_case("svg")) {
        write_file(out_plot, render_svg(&curves, "NMSE versus SMNR", "SMNR (dB)", "NMSE (dB)"))?;
        write_file(&out_plot.with_extension("csv"), csv)?;
    } else {
        write_file(out_plot, csv)?;
    }
    Ok(())
}
