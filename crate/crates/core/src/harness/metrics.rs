//! Estimation-quality metrics.

use crate::error::{Error, Result};
use crate::gauss::MeasurementModel;
use crate::series::Series;
use crate::ssm::{linear_to_db, signal_powers, TrajectoryBundle};

/// Per-trajectory NMSE in dB: `10 log10(Σ_t ‖x − x̂‖² / Σ_t ‖x‖²)`.
pub fn nmse_per_trajectory(x_true: &[Series], x_hat: &[Series]) -> Result<Vec<f64>> {
    if x_true.len() != x_hat.len() {
        return Err(Error::Dimension(format!("{} true trajectories, {} estimates", x_true.len(), x_hat.len())));
    }
    x_true
        .iter()
        .zip(x_hat)
        .enumerate()
        .map(|(i, (x, e))| {
            if x.dim() != e.dim() || x.len() != e.len() {
                return Err(Error::Dimension(format!(
                    "trajectory {i}: truth {}x{}, estimate {}x{}",
                    x.len(),
                    x.dim(),
                    e.len(),
                    e.dim()
                )));
            }
            let energy: f64 = x.as_slice().iter().map(|v| v * v).sum();
            if !(energy > 0.0) {
                return Err(Error::ZeroEnergy(i));
            }
            let err: f64 = x.as_slice().iter().zip(e.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum();
            Ok(linear_to_db(err / energy))
        })
        .collect()
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// NMSE averaged over trajectories: `(mean dB, standard error dB)`.
pub fn nmse(x_true: &[Series], x_hat: &[Series]) -> Result<(f64, f64)> {
    if x_true.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(mean_stderr(&nmse_per_trajectory(x_true, x_hat)?))
}

/// Empirical SMNR of a bundle: the trajectory average of
/// `10 log10(mean_t ‖H x_t − mean(H x)‖² / tr(C_w))`.
pub fn measure_smnr(bundle: &TrajectoryBundle, mm: &MeasurementModel) -> Result<f64> {
    let states = bundle.states.as_ref().ok_or(Error::MissingStates)?;
    let noise = mm.cw().trace();
    let powers = signal_powers(states, mm.h())?;
    Ok(powers.iter().map(|p| linear_to_db(p / noise)).sum::<f64>() / powers.len() as f64)
}

/// Fraction of time steps, per state dimension, at which the truth lies
/// within one posterior standard deviation of the posterior mean.
pub fn one_sigma_coverage(x_true: &[Series], means: &[Series], variances: &[Series]) -> Result<Vec<f64>> {
    let dim = x_true.first().ok_or(Error::EmptyDataset)?.dim();
    let mut hits = vec![0usize; dim];
    let mut total = 0usize;
    for ((x, m), v) in x_true.iter().zip(means).zip(variances) {
        if x.len() != m.len() || x.len() != v.len() || x.dim() != dim || m.dim() != dim || v.dim() != dim {
            return Err(Error::Dimension("coverage inputs disagree in shape".into()));
        }
        for t in 0..x.len() {
            for (i, hit) in hits.iter_mut().enumerate() {
                if (x.row(t)[i] - m.row(t)[i]).abs() <= v.row(t)[i].sqrt() {
                    *hit += 1;
                }
            }
        }
        total += x.len();
    }
    if x_true.len() != means.len() || x_true.len() != variances.len() {
        return Err(Error::Dimension("coverage inputs disagree in count".into()));
    }
    Ok(hits.iter().map(|&h| h as f64 / total as f64).collect())
}
