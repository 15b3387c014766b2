//! Conditional models `p(y|x; α)` exposed through their score and its Jacobian.

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure, Result};

/// A single `(x, y)` observation.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub x: DVector<f64>,
    pub y: f64,
}

/// Labeled observations stored row-wise: `x` is `n × d_x`, `y` has length `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledData {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl LabeledData {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        ensure!(
            x.nrows() == y.len(),
            "{} covariate rows but {} responses",
            x.nrows(),
            y.len()
        );
        Ok(LabeledData { x, y })
    }

    pub fn from_samples(samples: &[LabeledSample]) -> Result<Self> {
        ensure!(!samples.is_empty(), "no samples");
        let d = samples[0].x.len();
        ensure!(
            samples.iter().all(|s| s.x.len() == d),
            "covariate dimension varies across samples"
        );
        let x = DMatrix::from_fn(samples.len(), d, |i, j| samples[i].x[j]);
        let y = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.y));
        Ok(LabeledData { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn covariate_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn sample(&self, i: usize) -> LabeledSample {
        LabeledSample {
            x: self.x.row(i).transpose(),
            y: self.y[i],
        }
    }

    /// Rows selected by `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> LabeledData {
        LabeledData {
            x: self.x.select_rows(indices),
            y: DVector::from_iterator(indices.len(), indices.iter().map(|&i| self.y[i])),
        }
    }
}

/// Kind of conditional model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreModel {
    /// `y = αᵀx + z`, `z ~ N(0, s²)`, no intercept. The score is written
    /// without the `1/s²` factor; `noise_scale` only enters the log-likelihood.
    LinearGaussian { dim: usize, noise_scale: f64 },
    /// `P(y=1|x) = σ(α₀ + α₁ᵀx)` with an explicit intercept.
    Logistic { covariate_dim: usize },
}

pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

impl ScoreModel {
    pub fn linear_gaussian(dim: usize) -> Self {
        ScoreModel::LinearGaussian {
            dim,
            noise_scale: 1.0,
        }
    }

    pub fn logistic(covariate_dim: usize) -> Self {
        ScoreModel::Logistic { covariate_dim }
    }

    pub fn param_dim(&self) -> usize {
        match *self {
            ScoreModel::LinearGaussian { dim, .. } => dim,
            ScoreModel::Logistic { covariate_dim } => covariate_dim + 1,
        }
    }

    pub fn covariate_dim(&self) -> usize {
        match *self {
            ScoreModel::LinearGaussian { dim, .. } => dim,
            ScoreModel::Logistic { covariate_dim } => covariate_dim,
        }
    }

    pub fn has_intercept(&self) -> bool {
        matches!(self, ScoreModel::Logistic { .. })
    }

    /// Regressor vector: `x` itself, or `(1, x)` for the logistic model.
    pub fn design(&self, x: &[f64]) -> DVector<f64> {
        match self {
            ScoreModel::LinearGaussian { .. } => DVector::from_column_slice(x),
            ScoreModel::Logistic { .. } => {
                let mut v = DVector::zeros(x.len() + 1);
                v[0] = 1.0;
                v.rows_mut(1, x.len()).copy_from_slice(x);
                v
            }
        }
    }

    /// Design matrix for a row-sample covariate matrix.
    pub fn design_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            ScoreModel::LinearGaussian { .. } => x.clone(),
            ScoreModel::Logistic { .. } => x.clone().insert_column(0, 1.0),
        }
    }

    fn check(&self, x: &[f64], alpha: &DVector<f64>) -> Result<()> {
        ensure!(
            x.len() == self.covariate_dim(),
            "covariate has length {}, model expects {}",
            x.len(),
            self.covariate_dim()
        );
        ensure!(
            alpha.len() == self.param_dim(),
            "parameter has length {}, model expects {}",
            alpha.len(),
            self.param_dim()
        );
        Ok(())
    }

    pub fn check_response(&self, y: f64) -> Result<()> {
        match self {
            ScoreModel::LinearGaussian { .. } => {
                ensure!(y.is_finite(), "non-finite response {y}");
            }
            ScoreModel::Logistic { .. } => {
                ensure!(y == 0.0 || y == 1.0, "class label must be 0 or 1, got {y}");
            }
        }
        Ok(())
    }

    /// Check that a dataset fits this model.
    pub fn check_data(&self, data: &LabeledData) -> Result<()> {
        ensure!(
            data.covariate_dim() == self.covariate_dim(),
            "data has {} covariates, model expects {}",
            data.covariate_dim(),
            self.covariate_dim()
        );
        data.y.iter().try_for_each(|&y| self.check_response(y))
    }

    /// `u(x, y; α)`.
    pub fn score(&self, x: &[f64], y: f64, alpha: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(x, alpha)?;
        let xt = self.design(x);
        let eta = alpha.dot(&xt);
        let resid = match self {
            ScoreModel::LinearGaussian { .. } => y - eta,
            ScoreModel::Logistic { .. } => y - sigmoid(eta),
        };
        Ok(xt * resid)
    }

    /// `∇u(x, y; α)`, the Hessian of the log-likelihood in `α`.
    pub fn score_jacobian(&self, x: &[f64], _y: f64, alpha: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check(x, alpha)?;
        let xt = self.design(x);
        let curvature = match self {
            ScoreModel::LinearGaussian { .. } => 1.0,
            ScoreModel::Logistic { .. } => {
                let eta = alpha.dot(&xt);
                sigmoid(eta) * sigmoid(-eta)
            }
        };
        Ok(&xt * xt.transpose() * (-curvature))
    }

    /// `log p(y|x; α)`.
    pub fn log_likelihood(&self, x: &[f64], y: f64, alpha: &DVector<f64>) -> Result<f64> {
        self.check(x, alpha)?;
        let eta = alpha.dot(&self.design(x));
        Ok(match *self {
            ScoreModel::LinearGaussian { noise_scale, .. } => {
                let s2 = noise_scale * noise_scale;
                -0.5 * (2.0 * std::f64::consts::PI * s2).ln() - (y - eta).powi(2) / (2.0 * s2)
            }
            ScoreModel::Logistic { .. } => y * eta - softplus(eta),
        })
    }

    /// Weighted mean score `(1/n) Σ wᵢ u(xᵢ, yᵢ; α)` and its Jacobian in `α`,
    /// computed over a design matrix (rows are regressor vectors).
    pub(crate) fn weighted_system(
        &self,
        design: &DMatrix<f64>,
        y: &DVector<f64>,
        weights: &DVector<f64>,
        alpha: &DVector<f64>,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let n = design.nrows() as f64;
        let eta = design * alpha;
        let (resid, curv): (DVector<f64>, DVector<f64>) = match self {
            ScoreModel::LinearGaussian { .. } => (
                DVector::from_fn(y.len(), |i, _| weights[i] * (y[i] - eta[i])),
                weights.clone(),
            ),
            ScoreModel::Logistic { .. } => (
                DVector::from_fn(y.len(), |i, _| weights[i] * (y[i] - sigmoid(eta[i]))),
                DVector::from_fn(y.len(), |i, _| {
                    weights[i] * sigmoid(eta[i]) * sigmoid(-eta[i])
                }),
            ),
        };
        let score = design.transpose() * resid / n;
        let mut scaled = design.clone();
        for (i, mut r) in scaled.row_iter_mut().enumerate() {
            r *= curv[i];
        }
        let jac = -(design.transpose() * scaled) / n;
        (score, jac)
    }

    /// Mean Jacobian `Ê[∇u]` at `α` over a dataset.
    pub fn mean_score_jacobian(&self, data: &LabeledData, alpha: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_data(data)?;
        ensure!(alpha.len() == self.param_dim(), "parameter length mismatch");
        let design = self.design_matrix(&data.x);
        let ones = DVector::from_element(data.len(), 1.0);
        Ok(self.weighted_system(&design, &data.y, &ones, alpha).1)
    }
}

impl std::fmt::Display for ScoreModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScoreModel::LinearGaussian { .. } => f.write_str("linear-gaussian"),
            ScoreModel::Logistic { .. } => f.write_str("logistic"),
        }
    }
}
