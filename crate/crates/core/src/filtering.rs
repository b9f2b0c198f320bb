//! Causal filtering and one-step forecasting with a trained prior network.
//!
//! At every step the network's prior is conditioned on the current
//! measurement in closed form. There is no propagation of the posterior into
//! the next prior; the network alone carries the temporal structure.

use crate::error::{Error, Result};
use crate::gauss::{posterior_update, predictive_measurement, Gaussian, MeasurementModel};
use crate::prior_net::{next_prior, priors_forward, PriorNetParams, PriorSequence};
use crate::series::Series;

#[derive(Debug, Clone)]
pub struct FilterStep {
    pub prior: Gaussian,
    pub posterior: Gaussian,
    /// Predictive density of this step's measurement given the earlier ones.
    pub forecast: Gaussian,
    pub gain: nalgebra::DMatrix<f64>,
    pub innovation: nalgebra::DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub steps: Vec<FilterStep>,
}

impl FilterOutput {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Point estimates `m_{t|1:t}`.
    pub fn posterior_means(&self) -> Series {
        let m = self.steps.first().map_or(1, |s| s.posterior.dim());
        Series::from_rows(m, self.steps.iter().map(|s| s.posterior.mean.as_slice())).expect("posterior widths agree")
    }

    pub fn posterior_variances(&self) -> Series {
        let m = self.steps.first().map_or(1, |s| s.posterior.dim());
        Series::from_rows(m, self.steps.iter().map(|s| s.posterior.variances().as_slice().to_vec()))
            .expect("posterior widths agree")
    }

    /// `log p(x_{1:T} | y_{1:T})` under the factorized posterior: the sum of
    /// per-step posterior log-densities.
    pub fn joint_log_density(&self, states: &Series) -> Result<f64> {
        if states.len() != self.len() {
            return Err(Error::Dimension(format!("{} states for {} filter steps", states.len(), self.len())));
        }
        self.steps.iter().enumerate().map(|(t, s)| s.posterior.log_pdf(&states.vector(t))).sum()
    }
}

pub(crate) fn filter_with_priors(y: &Series, priors: &PriorSequence, mm: &MeasurementModel) -> Result<FilterOutput> {
    if y.dim() != mm.meas_dim() {
        return Err(Error::Dimension(format!("measurements of width {} for a {}-row H", y.dim(), mm.meas_dim())));
    }
    let steps = (0..y.len())
        .map(|t| {
            let prior = priors.gaussian(t);
            let update = posterior_update(&prior, mm, &y.vector(t))?;
            let forecast = predictive_measurement(&prior, mm)?;
            Ok(FilterStep {
                prior,
                posterior: update.posterior,
                forecast,
                gain: update.gain,
                innovation: update.innovation,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FilterOutput { steps })
}

/// Filters one measurement trajectory.
pub fn filter_trajectory(y: &Series, params: &PriorNetParams, mm: &MeasurementModel) -> Result<FilterOutput> {
    if params.dims().state_dim != mm.state_dim() {
        return Err(Error::Dimension(format!(
            "network emits {}-dim priors, H expects {}",
            params.dims().state_dim,
            mm.state_dim()
        )));
    }
    let priors = priors_forward(y, params)?;
    filter_with_priors(y, &priors, mm)
}

/// State and measurement forecasts for the step after `history`.
pub fn forecast_next(history: &Series, params: &PriorNetParams, mm: &MeasurementModel) -> Result<(Gaussian, Gaussian)> {
    let state = next_prior(history, params)?;
    let measurement = predictive_measurement(&state, mm)?;
    Ok((state, measurement))
}
