//! Semi-supervised estimation of conditional models by weighted maximum
//! likelihood, with weights from a directly estimated density ratio between
//! unlabeled and labeled covariates (DRESS).
//!
//! * [`model`]: score functions for linear-Gaussian and logistic models.
//! * [`density_ratio`]: log-linear moment-matching and kernel (KuLSIF) ratios.
//! * [`estimators`]: naive MLE, weighted MLE and the joint DRESS fit.
//! * [`asymptotics`]: the asymptotic variance improvement of DRESS over MLE.
//! * [`simulation`]: Monte Carlo harnesses and the paired t-test.
//! * [`data`]: CSV ingestion and semi-supervised splits.

pub mod asymptotics;
pub mod cli;
pub mod data;
pub mod density_ratio;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod simulation;
pub mod solver;

pub use error::{DressError, Result, Stage};
pub use estimators::{dress, mle, weighted_mle, FitResult, RatioConfig};
pub use model::{LabeledData, LabeledSample, ScoreModel};
pub use solver::SolverConfig;
