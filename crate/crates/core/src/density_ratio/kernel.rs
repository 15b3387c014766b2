//! Kernel least-squares density-ratio fitting (KuLSIF) with a Gaussian kernel.
//!
//! The fitted ratio minimizes, over the RKHS of `k(a, b) = exp(−‖a−b‖²/2h²)`,
//!
//! ```text
//! (1/2n) Σᵢ w(xᵢ)² − (1/n') Σⱼ w(x′ⱼ) + (λ/2) ‖w‖²
//! ```
//!
//! Its stationarity condition gives the expansion
//!
//! ```text
//! w = (1/λn') Σⱼ k(·, x′ⱼ) − (1/λn) Σᵢ vᵢ k(·, xᵢ),
//! (K₁₁/n + λI) v = K₁₂ 1 / n',
//! ```
//!
//! where `vᵢ = w(xᵢ)`, so a fit is one symmetric positive-definite solve of
//! size `n`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, DressError, Result};
use crate::rng::{stream, subsample_indices};

/// Lower clamp applied to evaluated kernel ratios.
pub const WEIGHT_FLOOR: f64 = 1e-3;

/// Upper bound on the size of the linear system (labeled centers).
pub const MAX_CENTERS: usize = 2000;

/// Largest acceptable condition estimate before a warning is recorded.
pub const CONDITION_WARNING: f64 = 1e12;

/// Candidate ridge values for cross-validation.
pub const RIDGE_GRID: [f64; 5] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RidgeSelection {
    Fixed { lambda: f64 },
    /// 5-fold cross-validation of the held-out least-squares objective over
    /// [`RIDGE_GRID`].
    CrossValidated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KulsifConfig {
    /// Gaussian bandwidth; `None` selects the median pairwise distance.
    pub bandwidth: Option<f64>,
    pub ridge: RidgeSelection,
    /// Seed for the deterministic subsamples (bandwidth, centers, CV folds).
    pub seed: u64,
}

impl Default for KulsifConfig {
    fn default() -> Self {
        KulsifConfig {
            bandwidth: None,
            ridge: RidgeSelection::Fixed { lambda: 1e-2 },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KernelRatioFit {
    /// Labeled centers `xᵢ` entering the linear system.
    pub labeled_centers: DMatrix<f64>,
    /// Unlabeled centers `x′ⱼ`.
    pub unlabeled_centers: DMatrix<f64>,
    /// Coefficients `−vᵢ/(λn)` on the labeled centers.
    pub labeled_coef: DVector<f64>,
    /// Common coefficient `1/(λn')` on the unlabeled centers.
    pub unlabeled_coef: f64,
    /// Unclamped fitted values `vᵢ` at the labeled centers.
    pub fitted: DVector<f64>,
    pub bandwidth: f64,
    pub ridge: f64,
    /// Upper bound on the condition number of the solved system.
    pub condition_estimate: f64,
    pub warnings: Vec<String>,
}

fn sq_dist(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    let mut s = 0.0;
    for k in 0..a.ncols() {
        let t = a[(i, k)] - b[(j, k)];
        s += t * t;
    }
    s
}

fn gaussian_kernel(a: &DMatrix<f64>, b: &DMatrix<f64>, bandwidth: f64) -> DMatrix<f64> {
    let g = -0.5 / (bandwidth * bandwidth);
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| (g * sq_dist(a, i, b, j)).exp())
}

impl KernelRatioFit {
    /// Kernel expansion at `x` before clamping.
    pub fn raw_value(&self, x: &[f64]) -> f64 {
        let g = -0.5 / (self.bandwidth * self.bandwidth);
        let k = |m: &DMatrix<f64>, i: usize| -> f64 {
            let mut s = 0.0;
            for (c, xc) in x.iter().enumerate() {
                let t = xc - m[(i, c)];
                s += t * t;
            }
            (g * s).exp()
        };
        let pos: f64 = (0..self.unlabeled_centers.nrows())
            .map(|j| k(&self.unlabeled_centers, j))
            .sum();
        let neg: f64 = (0..self.labeled_centers.nrows())
            .map(|i| self.labeled_coef[i] * k(&self.labeled_centers, i))
            .sum();
        self.unlabeled_coef * pos + neg
    }

    /// Raw values at every row of `xs`.
    pub fn raw_values(&self, xs: &DMatrix<f64>) -> DVector<f64> {
        let k_unl = gaussian_kernel(xs, &self.unlabeled_centers, self.bandwidth);
        let k_lab = gaussian_kernel(xs, &self.labeled_centers, self.bandwidth);
        k_unl.column_sum() * self.unlabeled_coef + k_lab * &self.labeled_coef
    }

    /// Clamped ratio `max(w(x), WEIGHT_FLOOR)`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        clamp_weight(self.raw_value(x))
    }

    pub fn eval_rows(&self, xs: &DMatrix<f64>) -> DVector<f64> {
        self.raw_values(xs).map(clamp_weight)
    }

    /// Whether the solved system exceeded the condition threshold.
    pub fn ill_conditioned(&self) -> bool {
        self.condition_estimate > CONDITION_WARNING
    }
}

pub fn clamp_weight(w: f64) -> f64 {
    if w.is_nan() {
        WEIGHT_FLOOR
    } else {
        w.max(WEIGHT_FLOOR)
    }
}

/// Clamped kernel ratio at `x`.
pub fn eval_kernel_ratio(fit: &KernelRatioFit, x: &[f64]) -> f64 {
    fit.eval(x)
}

/// Median pairwise Euclidean distance over at most 1000 points.
pub fn median_bandwidth(points: &DMatrix<f64>, seed: u64) -> Result<f64> {
    ensure!(points.nrows() >= 2, "median bandwidth needs at least two points");
    let idx = subsample_indices(points.nrows(), 1000, seed);
    let mut dists = Vec::with_capacity(idx.len() * (idx.len() - 1) / 2);
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            dists.push(sq_dist(points, i, points, j).sqrt());
        }
    }
    dists.sort_by(f64::total_cmp);
    let m = dists.len();
    let median = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    ensure!(
        median > 0.0,
        "median pairwise distance is zero (points are identical)"
    );
    Ok(median)
}

fn fit_fixed(
    labeled: &DMatrix<f64>,
    unlabeled: &DMatrix<f64>,
    bandwidth: f64,
    ridge: f64,
) -> Result<KernelRatioFit> {
    let n = labeled.nrows() as f64;
    let nprime = unlabeled.nrows() as f64;
    let k11 = gaussian_kernel(labeled, labeled, bandwidth);
    let k12 = gaussian_kernel(labeled, unlabeled, bandwidth);
    let rhs = k12.column_sum() / nprime;
    let mut system = k11 / n;
    for i in 0..system.nrows() {
        system[(i, i)] += ridge;
    }
    // λ_min ≥ λ and λ_max ≤ trace(K₁₁)/n + λ = 1 + λ
    let condition_estimate = (1.0 + ridge) / ridge;
    let mut warnings = Vec::new();
    if condition_estimate > CONDITION_WARNING {
        warnings.push(format!(
            "kernel system condition estimate {condition_estimate:.3e} exceeds {CONDITION_WARNING:.0e}"
        ));
    }
    let fitted = system
        .clone()
        .cholesky()
        .ok_or(DressError::SingularSystem {
            condition: condition_estimate,
        })?
        .solve(&rhs);
    Ok(KernelRatioFit {
        labeled_coef: &fitted * (-1.0 / (ridge * n)),
        unlabeled_coef: 1.0 / (ridge * nprime),
        labeled_centers: labeled.clone(),
        unlabeled_centers: unlabeled.clone(),
        fitted,
        bandwidth,
        ridge,
        condition_estimate,
        warnings,
    })
}

/// Held-out value of the unregularized least-squares objective.
fn held_out_loss(fit: &KernelRatioFit, labeled: &DMatrix<f64>, unlabeled: &DMatrix<f64>) -> f64 {
    let wl = fit.raw_values(labeled);
    let wu = fit.raw_values(unlabeled);
    0.5 * wl.norm_squared() / labeled.nrows() as f64 - wu.sum() / unlabeled.nrows() as f64
}

fn fold_ids(n: usize, folds: usize, seed: u64, salt: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream(seed, salt));
    let mut ids = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        ids[i] = pos % folds;
    }
    ids
}

fn select_ridge(labeled: &DMatrix<f64>, unlabeled: &DMatrix<f64>, bandwidth: f64, seed: u64) -> Result<f64> {
    const FOLDS: usize = 5;
    ensure!(
        labeled.nrows() >= FOLDS && unlabeled.nrows() >= FOLDS,
        "cross-validation needs at least {FOLDS} points in each sample"
    );
    let lab_ids = fold_ids(labeled.nrows(), FOLDS, seed, 1);
    let unl_ids = fold_ids(unlabeled.nrows(), FOLDS, seed, 2);
    let rows = |ids: &[usize], keep: &dyn Fn(usize) -> bool| -> Vec<usize> {
        (0..ids.len()).filter(|&i| keep(ids[i])).collect()
    };
    let mut best = (f64::INFINITY, RIDGE_GRID[0]);
    for &lambda in &RIDGE_GRID {
        let mut total = 0.0;
        for f in 0..FOLDS {
            let lab_tr = labeled.select_rows(&rows(&lab_ids, &|k| k != f));
            let lab_te = labeled.select_rows(&rows(&lab_ids, &|k| k == f));
            let unl_tr = unlabeled.select_rows(&rows(&unl_ids, &|k| k != f));
            let unl_te = unlabeled.select_rows(&rows(&unl_ids, &|k| k == f));
            let fit = fit_fixed(&lab_tr, &unl_tr, bandwidth, lambda)?;
            total += held_out_loss(&fit, &lab_te, &unl_te);
        }
        if total < best.0 {
            best = (total, lambda);
        }
    }
    Ok(best.1)
}

/// Fit the kernel ratio from labeled covariates (density `p`) and unlabeled
/// covariates (density `q`).
pub fn kulsif_fit(labeled_x: &DMatrix<f64>, unlabeled_x: &DMatrix<f64>, cfg: &KulsifConfig) -> Result<KernelRatioFit> {
    ensure!(
        labeled_x.nrows() >= 1 && unlabeled_x.nrows() >= 1,
        "need at least one labeled and one unlabeled point"
    );
    ensure!(
        labeled_x.ncols() == unlabeled_x.ncols(),
        "labeled and unlabeled covariates differ in dimension"
    );
    let bandwidth = match cfg.bandwidth {
        Some(h) => {
            ensure!(h > 0.0 && h.is_finite(), "bandwidth must be positive, got {h}");
            h
        }
        None => {
            let pooled = DMatrix::from_fn(labeled_x.nrows() + unlabeled_x.nrows(), labeled_x.ncols(), |i, j| {
                if i < labeled_x.nrows() {
                    labeled_x[(i, j)]
                } else {
                    unlabeled_x[(i - labeled_x.nrows(), j)]
                }
            });
            median_bandwidth(&pooled, cfg.seed)?
        }
    };
    let centers = subsample_indices(labeled_x.nrows(), MAX_CENTERS, cfg.seed ^ 0x5eed);
    let labeled = if centers.len() < labeled_x.nrows() {
        labeled_x.select_rows(&centers)
    } else {
        labeled_x.clone()
    };
    let ridge = match cfg.ridge {
        RidgeSelection::Fixed { lambda } => {
            ensure!(lambda > 0.0 && lambda.is_finite(), "ridge must be positive, got {lambda}");
            lambda
        }
        RidgeSelection::CrossValidated => select_ridge(&labeled, unlabeled_x, bandwidth, cfg.seed)?,
    };
    fit_fixed(&labeled, unlabeled_x, bandwidth, ridge)
}
