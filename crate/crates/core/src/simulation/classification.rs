//! Repeated-split benchmark: logistic MLE versus DRESS with KuLSIF weights.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_failures, paired_t_test, TTest};
use crate::data::{split_ssl, TabularDataset};
use crate::density_ratio::{KulsifConfig, RidgeSelection};
use crate::error::{ensure, Result};
use crate::estimators::{dress, mle, RatioConfig};
use crate::model::{LabeledData, ScoreModel};
use crate::rng::stream_seed;
use crate::solver::SolverConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationConfig {
    pub n: usize,
    pub nprime: usize,
    /// Number of leading feature columns used.
    pub dims: usize,
    pub splits: usize,
    pub seed: u64,
    /// KuLSIF bandwidth; median heuristic when absent.
    pub bandwidth: Option<f64>,
    pub ridge: RidgeSelection,
}

impl ClassificationConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.n >= 1 && self.nprime >= 1, "n and nprime must be at least 1");
        ensure!(self.dims >= 1, "D must be at least 1");
        ensure!(self.splits >= 2, "need at least two splits for the paired test");
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitOutcome {
    pub split: usize,
    /// Test misclassification rate in percent.
    pub mle_error: f64,
    pub dress_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationSummary {
    pub splits: Vec<SplitOutcome>,
    pub failures: Vec<(usize, String)>,
    pub mle_mean: f64,
    pub mle_sd: f64,
    pub dress_mean: f64,
    pub dress_sd: f64,
    /// Paired test of `mle_error − dress_error` against zero, upper tail.
    pub test: TTest,
}

/// Misclassification rate (percent) of the logistic rule `α̂ᵀ(1, x) > 0`.
pub fn misclassification_percent(alpha: &DVector<f64>, test: &LabeledData) -> f64 {
    let model = ScoreModel::logistic(test.covariate_dim());
    let scores = model.design_matrix(&test.x) * alpha;
    let wrong = scores
        .iter()
        .zip(test.y.iter())
        .filter(|(s, y)| (**s > 0.0) != (**y > 0.5))
        .count();
    100.0 * wrong as f64 / test.len() as f64
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let k = v.len() as f64;
    let m = v.iter().sum::<f64>() / k;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
    (m, var.sqrt())
}

pub fn run_split(ds: &TabularDataset, cfg: &ClassificationConfig, split: usize, solver: &SolverConfig) -> Result<SplitOutcome> {
    let seed = stream_seed(cfg.seed, split as u64);
    let parts = split_ssl(ds, cfg.n, cfg.nprime, cfg.dims, seed)?;
    ensure!(!parts.test.is_empty(), "no rows left for testing");
    let model = ScoreModel::logistic(cfg.dims);
    let naive = mle(&model, &parts.labeled, solver)?;
    let kernel = RatioConfig::Kernel(KulsifConfig {
        bandwidth: cfg.bandwidth,
        ridge: cfg.ridge,
        seed,
    });
    let joint = dress(&model, &parts.labeled, &parts.unlabeled_x, &kernel, solver)?;
    Ok(SplitOutcome {
        split,
        mle_error: misclassification_percent(&naive.alpha_hat, &parts.test),
        dress_error: misclassification_percent(&joint.alpha_hat, &parts.test),
    })
}

pub fn run_classification(ds: &TabularDataset, cfg: &ClassificationConfig) -> Result<ClassificationSummary> {
    cfg.validate()?;
    ensure!(cfg.dims <= ds.dim(), "D = {} exceeds the {} available features", cfg.dims, ds.dim());
    ensure!(
        cfg.n + cfg.nprime < ds.len(),
        "n + nprime = {} leaves no test rows out of {}",
        cfg.n + cfg.nprime,
        ds.len()
    );
    let solver = SolverConfig::default();
    let outcomes: Vec<(usize, Result<SplitOutcome>)> = (0..cfg.splits)
        .into_par_iter()
        .map(|k| (k, run_split(ds, cfg, k, &solver)))
        .collect();
    let mut splits = Vec::new();
    let mut failures = Vec::new();
    for (k, o) in outcomes {
        match o {
            Ok(s) => splits.push(s),
            Err(e) => failures.push((k, e.to_string())),
        }
    }
    check_failures(failures.len(), cfg.splits)?;
    let mle_err: Vec<f64> = splits.iter().map(|s| s.mle_error).collect();
    let dress_err: Vec<f64> = splits.iter().map(|s| s.dress_error).collect();
    let diffs: Vec<f64> = splits.iter().map(|s| s.mle_error - s.dress_error).collect();
    let (mle_mean, mle_sd) = mean_sd(&mle_err);
    let (dress_mean, dress_sd) = mean_sd(&dress_err);
    Ok(ClassificationSummary {
        test: paired_t_test(&diffs)?,
        splits,
        failures,
        mle_mean,
        mle_sd,
        dress_mean,
        dress_sd,
    })
}
