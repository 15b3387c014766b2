//! Naive MLE, weighted MLE, and the joint density-ratio + weighted-score
//! estimator (DRESS).
//!
//! The DRESS system
//!
//! ```text
//! (1/n) Σ w(xᵢ; θ) u(xᵢ, yᵢ; α) = 0
//! (1/n) Σ η(xᵢ; θ) w(xᵢ; θ) − (1/n') Σ η(x′ⱼ; θ) = 0
//! ```
//!
//! is block triangular: the second equation does not involve `α`. It is
//! solved by fitting `θ` first and then the weighted score equation.

use nalgebra::{DMatrix, DVector};

use crate::density_ratio::{kulsif_fit, solve_ratio_moment, Basis, KulsifConfig, MomentFunction, RatioModel};
use crate::error::{ensure, Result, Stage};
use crate::linalg::{solve_checked, MAX_CONDITION};
use crate::model::{LabeledData, ScoreModel};
use crate::solver::{damped_newton, SolverConfig};

#[derive(Debug, Clone)]
pub struct FitResult {
    pub alpha_hat: DVector<f64>,
    /// Ratio parameter for parametric DRESS fits.
    pub theta_hat: Option<DVector<f64>>,
    pub weights_used: DVector<f64>,
    pub iterations: usize,
    /// Residual max-norm of the (weighted) score equation.
    pub final_residual: f64,
    /// Residual max-norm of the moment equation, for parametric DRESS fits.
    pub ratio_residual: Option<f64>,
    pub warnings: Vec<String>,
}

/// How DRESS estimates the density ratio.
#[derive(Debug, Clone)]
pub enum RatioConfig {
    Parametric { basis: Basis, moment: MomentFunction },
    Kernel(KulsifConfig),
}

/// Max-norm of `(1/n) Σ wᵢ u(xᵢ, yᵢ; α)`.
pub fn weighted_score_residual(
    model: &ScoreModel,
    labeled: &LabeledData,
    weights: &DVector<f64>,
    alpha: &DVector<f64>,
) -> Result<f64> {
    model.check_data(labeled)?;
    ensure!(weights.len() == labeled.len(), "one weight per labeled sample required");
    ensure!(alpha.len() == model.param_dim(), "parameter length mismatch");
    let design = model.design_matrix(&labeled.x);
    Ok(model.weighted_system(&design, &labeled.y, weights, alpha).0.amax())
}

/// Root of the unweighted score equation.
pub fn mle(model: &ScoreModel, labeled: &LabeledData, cfg: &SolverConfig) -> Result<FitResult> {
    weighted_mle(model, labeled, &DVector::from_element(labeled.len(), 1.0), cfg)
}

/// Root of `(1/n) Σ wᵢ u(xᵢ, yᵢ; α) = 0`.
pub fn weighted_mle(
    model: &ScoreModel,
    labeled: &LabeledData,
    weights: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<FitResult> {
    model.check_data(labeled)?;
    ensure!(
        labeled.len() >= model.param_dim(),
        "{} samples cannot identify {} parameters",
        labeled.len(),
        model.param_dim()
    );
    ensure!(weights.len() == labeled.len(), "one weight per labeled sample required");
    ensure!(
        weights.iter().all(|&w| w > 0.0 && w.is_finite()),
        "weights must be positive and finite"
    );
    let design = model.design_matrix(&labeled.x);

    let (alpha, iterations) = match model {
        ScoreModel::LinearGaussian { .. } => {
            let a = weighted_normal_matrix(&design, weights);
            let b = design.transpose() * labeled.y.component_mul(weights);
            let mut alpha = solve_checked(&a, &b, MAX_CONDITION)?;
            let (g, _) = model.weighted_system(&design, &labeled.y, weights, &alpha);
            if g.amax() > cfg.tol {
                // one step of iterative refinement
                let n = labeled.len() as f64;
                alpha += solve_checked(&a, &(g * n), MAX_CONDITION)?;
            }
            (alpha, 1)
        }
        ScoreModel::Logistic { .. } => {
            let out = damped_newton(DVector::zeros(model.param_dim()), cfg, |a| {
                model.weighted_system(&design, &labeled.y, weights, a)
            })?;
            (out.x, out.iterations)
        }
    };
    let final_residual = model.weighted_system(&design, &labeled.y, weights, &alpha).0.amax();
    Ok(FitResult {
        alpha_hat: alpha,
        theta_hat: None,
        weights_used: weights.clone(),
        iterations,
        final_residual,
        ratio_residual: None,
        warnings: Vec::new(),
    })
}

fn weighted_normal_matrix(design: &DMatrix<f64>, weights: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = design.clone();
    for (i, mut r) in scaled.row_iter_mut().enumerate() {
        r *= weights[i];
    }
    design.transpose() * scaled
}

/// Weighted MLE with weights `w(xᵢ; θ)` from a given ratio model.
pub fn dress_with_ratio_model(
    model: &ScoreModel,
    labeled: &LabeledData,
    ratio: &RatioModel,
    cfg: &SolverConfig,
) -> Result<FitResult> {
    let weights = ratio.eval_rows(&labeled.x)?;
    let mut fit = weighted_mle(model, labeled, &weights, cfg).map_err(|e| e.at(Stage::Weighted))?;
    fit.theta_hat = Some(ratio.theta.clone());
    Ok(fit)
}

/// DRESS: estimate the density ratio from covariates, then solve the weighted
/// score equation with the fitted weights.
pub fn dress(
    model: &ScoreModel,
    labeled: &LabeledData,
    unlabeled_x: &DMatrix<f64>,
    ratio_cfg: &RatioConfig,
    cfg: &SolverConfig,
) -> Result<FitResult> {
    ensure!(
        unlabeled_x.ncols() == labeled.covariate_dim(),
        "unlabeled covariates have dimension {}, labeled have {}",
        unlabeled_x.ncols(),
        labeled.covariate_dim()
    );
    match ratio_cfg {
        RatioConfig::Parametric { basis, moment } => {
            let ratio = solve_ratio_moment(&labeled.x, unlabeled_x, basis, moment, cfg)
                .map_err(|e| e.at(Stage::Ratio))?;
            let mut fit = dress_with_ratio_model(model, labeled, &ratio.model, cfg)?;
            fit.ratio_residual = Some(ratio.residual);
            Ok(fit)
        }
        RatioConfig::Kernel(kcfg) => {
            let kfit = kulsif_fit(&labeled.x, unlabeled_x, kcfg).map_err(|e| e.at(Stage::Ratio))?;
            let raw = kfit.eval_rows(&labeled.x);
            let mean = raw.mean();
            let weights = raw / mean;
            let mut fit = weighted_mle(model, labeled, &weights, cfg).map_err(|e| e.at(Stage::Weighted))?;
            fit.warnings.extend(kfit.warnings);
            Ok(fit)
        }
    }
}
