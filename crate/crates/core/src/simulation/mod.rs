//! Monte Carlo harness for the misspecified regression experiment.
//!
//! Data: `x ~ N_d(0, I)`, `y = 1ᵀx + ε‖x‖²/d + z`, `z ~ N(0, σ²)`, with
//! unlabeled covariates from the same law. The fitted model is the linear
//! regression `y = αᵀx + noise`, whose best approximation is `α* = 1`.

pub mod classification;
pub mod stats;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{diff_eta_phi, sandwich_from_estimates, ImprovementReport, UbarSpec};
use crate::density_ratio::{Basis, KulsifConfig, MomentFunction, RidgeSelection};
use crate::error::{ensure, DressError, Result};
use crate::estimators::{dress, mle, RatioConfig};
use crate::model::{LabeledData, ScoreModel};
use crate::rng::stream;
use crate::solver::SolverConfig;

pub use stats::{paired_t_test, TTest};

/// Largest tolerated share of failed replications.
pub const MAX_FAILURE_RATE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EtaKind {
    Naive,
    Qin,
}

impl EtaKind {
    pub fn moment_function(self) -> MomentFunction {
        match self {
            EtaKind::Naive => MomentFunction::NaivePhi,
            EtaKind::Qin => MomentFunction::QinOptimal,
        }
    }
}

impl fmt::Display for EtaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EtaKind::Naive => "naive",
            EtaKind::Qin => "qin",
        })
    }
}

impl FromStr for EtaKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "naive" => Ok(EtaKind::Naive),
            "qin" => Ok(EtaKind::Qin),
            other => Err(format!("unknown moment function '{other}' (expected naive or qin)")),
        }
    }
}

/// Density-ratio estimator used by DRESS in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RatioSpec {
    Parametric { degree: usize, eta: EtaKind },
    Kernel { bandwidth: Option<f64>, ridge: RidgeSelection },
}

impl RatioSpec {
    pub fn kernel_default() -> Self {
        RatioSpec::Kernel {
            bandwidth: None,
            ridge: RidgeSelection::Fixed { lambda: 1e-2 },
        }
    }

    pub fn ratio_config(&self, dim: usize, seed: u64) -> Result<RatioConfig> {
        Ok(match *self {
            RatioSpec::Parametric { degree, eta } => RatioConfig::Parametric {
                basis: Basis::polynomial(dim, degree)?,
                moment: eta.moment_function(),
            },
            RatioSpec::Kernel { bandwidth, ridge } => RatioConfig::Kernel(KulsifConfig { bandwidth, ridge, seed }),
        })
    }

    /// Short label such as `poly:1` or `kulsif`.
    pub fn label(&self) -> String {
        match self {
            RatioSpec::Parametric { degree, .. } => format!("poly:{degree}"),
            RatioSpec::Kernel { .. } => "kulsif".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionConfig {
    pub d: usize,
    pub n: usize,
    pub nprime: usize,
    pub sigma: f64,
    pub eps: f64,
    pub ratio: RatioSpec,
    pub reps: usize,
    pub seed: u64,
}

impl RegressionConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.d >= 1 && self.n >= 1 && self.nprime >= 1 && self.reps >= 1,
            "d, n, nprime and reps must all be at least 1"
        );
        ensure!(self.sigma > 0.0 && self.sigma.is_finite(), "sigma must be positive");
        ensure!(self.eps >= 0.0 && self.eps.is_finite(), "eps must be nonnegative");
        if let RatioSpec::Parametric { degree, .. } = self.ratio {
            ensure!(degree >= 1, "polynomial ratio degree must be at least 1");
        }
        Ok(())
    }

    pub fn delta(&self) -> f64 {
        delta(self.eps, self.n, self.sigma, self.d)
    }
}

#[derive(Debug, Clone)]
pub struct RegressionData {
    pub labeled: LabeledData,
    pub unlabeled_x: DMatrix<f64>,
}

/// `f_ε(x) = 1ᵀx + ε‖x‖²/d`.
pub fn true_function(eps: f64, x: &[f64]) -> f64 {
    let d = x.len() as f64;
    x.iter().sum::<f64>() + eps * x.iter().map(|v| v * v).sum::<f64>() / d
}

/// Draw replication `rep_index` of the regression experiment.
pub fn gen_regression(config: &RegressionConfig, rep_index: u64) -> Result<RegressionData> {
    config.validate()?;
    let mut rng = stream(config.seed, rep_index);
    let d = config.d;
    let x = DMatrix::from_fn(config.n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut y = DVector::zeros(config.n);
    let mut row = vec![0.0; d];
    for i in 0..config.n {
        for (j, r) in row.iter_mut().enumerate() {
            *r = x[(i, j)];
        }
        let z: f64 = rng.sample(StandardNormal);
        y[i] = true_function(config.eps, &row) + config.sigma * z;
    }
    let unlabeled_x = DMatrix::from_fn(config.nprime, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(RegressionData {
        labeled: LabeledData::new(x, y)?,
        unlabeled_x,
    })
}

/// `e(ε) = min_α E|f_ε(x) − αᵀx|² = ε²(d+2)/d`.
pub fn model_error(eps: f64, d: usize) -> f64 {
    eps * eps * (d as f64 + 2.0) / d as f64
}

/// `δ = √(e(ε)·n / (σ²d))`.
pub fn delta(eps: f64, n: usize, sigma: f64, d: usize) -> f64 {
    (model_error(eps, d) * n as f64 / (sigma * sigma * d as f64)).sqrt()
}

/// The `ε ≥ 0` giving misspecification level `delta`.
pub fn eps_for_delta(delta: f64, n: usize, sigma: f64, d: usize) -> f64 {
    let d = d as f64;
    delta * sigma * d / (n as f64 * (d + 2.0)).sqrt()
}

/// Test error `E_x[(αᵀx − f_ε(x))²] = ‖1 − α‖² + ε²(d+2)/d`.
pub fn test_mse(alpha: &DVector<f64>, eps: f64) -> f64 {
    let d = alpha.len();
    alpha.iter().map(|a| (1.0 - a).powi(2)).sum::<f64>() + model_error(eps, d)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImprovementSummary {
    pub delta: f64,
    pub eps: f64,
    /// Mean of `n·(MSE_naive − MSE_dress)`.
    pub mean_improvement: f64,
    pub std_error: f64,
    /// One-tailed paired t-test p-value for a positive improvement.
    pub p_value: f64,
    pub reps_used: usize,
    pub reps_failed: usize,
    /// `(replication index, error)` for excluded replications.
    pub failures: Vec<(u64, String)>,
}

/// `n·(testMSE(α̃) − testMSE(α̂))` for one replication.
pub fn replication_improvement(config: &RegressionConfig, rep_index: u64, solver: &SolverConfig) -> Result<f64> {
    let data = gen_regression(config, rep_index)?;
    let model = ScoreModel::linear_gaussian(config.d);
    let naive = mle(&model, &data.labeled, solver)?;
    let ratio = config.ratio.ratio_config(config.d, stream_seed_for_kernel(config.seed, rep_index))?;
    let joint = dress(&model, &data.labeled, &data.unlabeled_x, &ratio, solver)?;
    Ok(config.n as f64 * (test_mse(&naive.alpha_hat, config.eps) - test_mse(&joint.alpha_hat, config.eps)))
}

fn stream_seed_for_kernel(seed: u64, rep_index: u64) -> u64 {
    crate::rng::stream_seed(seed ^ 0x6b65_726e_656c, rep_index)
}

fn check_failures(failed: usize, total: usize) -> Result<()> {
    if failed as f64 > MAX_FAILURE_RATE * total as f64 {
        return Err(DressError::ExperimentUnstable { failed, total });
    }
    Ok(())
}

/// Run all replications (in parallel) and summarize the improvement.
pub fn run_improvement_experiment(config: &RegressionConfig) -> Result<ImprovementSummary> {
    config.validate()?;
    let solver = SolverConfig::default();
    let outcomes: Vec<(u64, Result<f64>)> = (0..config.reps as u64)
        .into_par_iter()
        .map(|r| (r, replication_improvement(config, r, &solver)))
        .collect();
    let mut values = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for (r, o) in outcomes {
        match o {
            Ok(v) => values.push(v),
            Err(e) => failures.push((r, e.to_string())),
        }
    }
    check_failures(failures.len(), config.reps)?;
    let test = paired_t_test(&values)?;
    Ok(ImprovementSummary {
        delta: config.delta(),
        eps: config.eps,
        mean_improvement: test.mean,
        std_error: test.std_error,
        p_value: test.p_one_tailed,
        reps_used: values.len(),
        reps_failed: failures.len(),
        failures,
    })
}

/// `ū` for the regression experiment: `(ε‖x‖²/d)·x` at `α* = 1`.
pub fn regression_ubar(eps: f64, d: usize) -> UbarSpec {
    UbarSpec::analytic(move |x: &[f64]| true_function(eps, x), DVector::from_element(d, 1.0))
}

/// `N(0, I)` covariates for evaluating population expectations, drawn from a
/// stream disjoint from the replications'.
pub fn eval_covariates(d: usize, samples: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream(seed ^ EVAL_STREAM, 0);
    DMatrix::from_fn(samples, d, |_, _| rng.sample::<f64, _>(StandardNormal))
}

const EVAL_STREAM: u64 = 0x6576_616c;

/// Formula and Monte Carlo estimates of the MLE-minus-DRESS sandwich variance.
#[derive(Debug, Clone, Serialize)]
pub struct SandwichValidation {
    pub formula: ImprovementReport,
    #[serde(with = "crate::linalg::serde_rows")]
    pub empirical: DMatrix<f64>,
    #[serde(with = "crate::linalg::serde_rows")]
    pub sandwich_mle: DMatrix<f64>,
    #[serde(with = "crate::linalg::serde_rows")]
    pub sandwich_dress: DMatrix<f64>,
    /// `‖empirical − formula‖_F / ‖formula‖_F`.
    pub relative_frobenius: f64,
    pub reps_used: usize,
    pub reps_failed: usize,
    pub eval_samples: usize,
}

/// Compare `n·(sandwich(MLE) − sandwich(DRESS))` over `config.reps`
/// replications with the `η ∝ φ` improvement formula evaluated on
/// `eval_samples` fresh covariate draws.
pub fn validate_eta_phi(config: &RegressionConfig, eval_samples: usize) -> Result<SandwichValidation> {
    config.validate()?;
    let RatioSpec::Parametric { degree, .. } = config.ratio else {
        return Err(DressError::contract("sandwich validation needs a parametric ratio model"));
    };
    ensure!(eval_samples >= 2, "need at least two evaluation samples");
    let d = config.d;
    let basis = Basis::polynomial(d, degree)?;
    let xs = eval_covariates(d, eval_samples, config.seed);
    let ubar = regression_ubar(config.eps, d).samples(&xs)?;
    let phi = basis.matrix(&xs)?;
    let formula = diff_eta_phi(&ubar, &phi, config.n, config.nprime)?;

    let model = ScoreModel::linear_gaussian(d);
    let eval = LabeledData::new(xs, DVector::zeros(eval_samples))?;
    let jac = model.mean_score_jacobian(&eval, &DVector::from_element(d, 1.0))?;

    let solver = SolverConfig::default();
    let outcomes: Vec<Result<(DVector<f64>, DVector<f64>)>> = (0..config.reps as u64)
        .into_par_iter()
        .map(|r| {
            let data = gen_regression(config, r)?;
            let ratio = config.ratio.ratio_config(d, stream_seed_for_kernel(config.seed, r))?;
            let a = mle(&model, &data.labeled, &solver)?.alpha_hat;
            let b = dress(&model, &data.labeled, &data.unlabeled_x, &ratio, &solver)?.alpha_hat;
            Ok((a, b))
        })
        .collect();
    let total = outcomes.len();
    let pairs: Vec<_> = outcomes.into_iter().filter_map(|o| o.ok()).collect();
    check_failures(total - pairs.len(), total)?;
    let (naive, joint): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let sandwich_mle = sandwich_from_estimates(&naive, &jac, config.n)?;
    let sandwich_dress = sandwich_from_estimates(&joint, &jac, config.n)?;
    let empirical = &sandwich_mle - &sandwich_dress;
    let relative_frobenius = (&empirical - &formula.diff_matrix).norm() / formula.diff_matrix.norm();
    Ok(SandwichValidation {
        formula,
        empirical,
        sandwich_mle,
        sandwich_dress,
        relative_frobenius,
        reps_used: naive.len(),
        reps_failed: total - naive.len(),
        eval_samples,
    })
}
