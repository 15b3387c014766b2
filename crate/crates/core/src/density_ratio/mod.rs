//! Density-ratio models and estimators.
//!
//! Two families are provided:
//!
//! * [`parametric`]: the log-linear model `w(x; θ) = exp(φ(x)ᵀθ)` with a
//!   constant first basis function, fitted by solving a moment-matching
//!   estimating equation with either the naive (`η = φ`) or the
//!   variance-optimal moment function.
//! * [`kernel`]: a kernel least-squares fit of `w` in a Gaussian RKHS.

pub mod kernel;
pub mod parametric;

pub use kernel::{
    eval_kernel_ratio, kulsif_fit, median_bandwidth, KernelRatioFit, KulsifConfig, RidgeSelection,
    WEIGHT_FLOOR,
};
pub use parametric::{
    eval_moment, poly_basis, solve_ratio_moment, Basis, MomentFunction, MomentSystem, RatioFit,
    RatioModel,
};
