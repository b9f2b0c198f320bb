//! State estimation with a recurrent, data-driven Gaussian prior.
//!
//! A GRU reads past measurements and emits a Gaussian prior over the current
//! state; with a linear-Gaussian measurement model the posterior and the
//! one-step measurement forecast follow in closed form. The network is
//! trained by maximizing the likelihood of measurement trajectories alone.
//!
//! Alongside the estimator the crate ships the simulators (linear SSM,
//! Lorenz, Chen), classical baselines (KF, EKF, UKF, LS) and an experiment
//! harness for NMSE-versus-SMNR studies.

pub mod baselines;
pub mod error;
pub mod filtering;
pub mod gauss;
pub mod harness;
pub mod learn;
pub mod prior_net;
pub mod series;
pub mod ssm;

pub use error::{Error, Result};
pub use gauss::{Gaussian, MeasurementModel};
pub use prior_net::{NetDims, PriorNetParams};
pub use series::Series;
pub use ssm::TrajectoryBundle;
