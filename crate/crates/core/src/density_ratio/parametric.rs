//! Log-linear ratio model `w(x; θ) = exp(φ(x)ᵀθ)` fitted by moment matching.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure, DressError, Result};
use crate::linalg::{condition_number, numerical_rank};
use crate::solver::{damped_newton, SolverConfig};

type BasisFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type PhiTildeFn = Arc<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;

/// `(1, x₁..x_d, x₁²..x_d², …, x₁ᴸ..x_dᴸ)`.
pub fn poly_basis(x: &[f64], degree: usize) -> Result<DVector<f64>> {
    ensure!(degree >= 1, "polynomial ratio basis needs degree >= 1");
    let d = x.len();
    let mut out = DVector::zeros(degree * d + 1);
    out[0] = 1.0;
    let mut power: Vec<f64> = x.to_vec();
    for k in 0..degree {
        for j in 0..d {
            out[1 + k * d + j] = power[j];
            power[j] *= x[j];
        }
    }
    Ok(out)
}

/// Basis functions `φ(x) = (1, φ₂(x), …, φ_r(x))`. The constant leading
/// function is always present.
#[derive(Clone)]
pub enum Basis {
    Polynomial { dim: usize, degree: usize },
    /// User-supplied `φ₂..φ_r`; the constant is prepended.
    Custom {
        dim: usize,
        extra: usize,
        f: BasisFn,
    },
}

impl fmt::Debug for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Basis::Polynomial { dim, degree } => write!(f, "Polynomial(dim={dim}, degree={degree})"),
            Basis::Custom { dim, extra, .. } => write!(f, "Custom(dim={dim}, r={})", extra + 1),
        }
    }
}

impl Basis {
    pub fn polynomial(dim: usize, degree: usize) -> Result<Self> {
        ensure!(degree >= 1, "polynomial ratio basis needs degree >= 1");
        ensure!(dim >= 1, "covariate dimension must be positive");
        Ok(Basis::Polynomial { dim, degree })
    }

    pub fn custom<F>(dim: usize, extra: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Basis::Custom {
            dim,
            extra,
            f: Arc::new(f),
        }
    }

    /// Number of basis functions `r`, including the constant.
    pub fn len(&self) -> usize {
        match *self {
            Basis::Polynomial { dim, degree } => dim * degree + 1,
            Basis::Custom { extra, .. } => extra + 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn covariate_dim(&self) -> usize {
        match *self {
            Basis::Polynomial { dim, .. } | Basis::Custom { dim, .. } => dim,
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<DVector<f64>> {
        ensure!(
            x.len() == self.covariate_dim(),
            "covariate has length {}, basis expects {}",
            x.len(),
            self.covariate_dim()
        );
        match self {
            Basis::Polynomial { degree, .. } => poly_basis(x, *degree),
            Basis::Custom { extra, f, .. } => {
                let rest = f(x);
                ensure!(
                    rest.len() == *extra,
                    "custom basis returned {} values, expected {extra}",
                    rest.len()
                );
                let mut v = DVector::zeros(extra + 1);
                v[0] = 1.0;
                v.rows_mut(1, *extra).copy_from_slice(&rest);
                Ok(v)
            }
        }
    }

    /// `n × r` matrix of basis evaluations over row samples.
    pub fn matrix(&self, xs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let r = self.len();
        let mut out = DMatrix::zeros(xs.nrows(), r);
        let mut buf = vec![0.0; xs.ncols()];
        for i in 0..xs.nrows() {
            for (j, b) in buf.iter_mut().enumerate() {
                *b = xs[(i, j)];
            }
            out.row_mut(i).copy_from(&self.eval(&buf)?.transpose());
        }
        Ok(out)
    }
}

/// A basis together with a parameter value.
#[derive(Debug, Clone)]
pub struct RatioModel {
    pub basis: Basis,
    pub theta: DVector<f64>,
}

impl RatioModel {
    /// The model at `θ = 0`, where `w ≡ 1`.
    pub fn at_zero(basis: Basis) -> Self {
        let theta = DVector::zeros(basis.len());
        RatioModel { basis, theta }
    }

    pub fn new(basis: Basis, theta: DVector<f64>) -> Result<Self> {
        ensure!(
            theta.len() == basis.len(),
            "theta has length {}, basis has {} functions",
            theta.len(),
            basis.len()
        );
        Ok(RatioModel { basis, theta })
    }

    /// `w(x; θ) = exp(φ(x)ᵀθ)`.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        Ok(self.basis.eval(x)?.dot(&self.theta).exp())
    }

    /// Ratio values at every row of `xs`.
    pub fn eval_rows(&self, xs: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok((self.basis.matrix(xs)? * &self.theta).map(f64::exp))
    }
}

/// The test function `η(x; θ)` in the moment-matching equation.
#[derive(Clone)]
pub enum MomentFunction {
    /// `η = φ(x)`.
    NaivePhi,
    /// `η = φ(x) / (1 + (n'/n) w(x; θ))`, the variance-optimal choice for the ratio.
    QinOptimal,
    /// `η = φ(x) + φ̃(x)` for a supplied `φ̃` orthogonal to the basis.
    CustomPhiTilde(PhiTildeFn),
}

impl fmt::Debug for MomentFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MomentFunction::NaivePhi => f.write_str("NaivePhi"),
            MomentFunction::QinOptimal => f.write_str("QinOptimal"),
            MomentFunction::CustomPhiTilde(_) => f.write_str("CustomPhiTilde"),
        }
    }
}

impl MomentFunction {
    pub fn custom<F>(phitilde: F) -> Self
    where
        F: Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
    {
        MomentFunction::CustomPhiTilde(Arc::new(phitilde))
    }

    pub fn eval(&self, model: &RatioModel, x: &[f64], n: usize, nprime: usize) -> Result<DVector<f64>> {
        ensure!(n > 0 && nprime > 0, "sample counts must be positive");
        let phi = model.basis.eval(x)?;
        match self {
            MomentFunction::NaivePhi => Ok(phi),
            MomentFunction::QinOptimal => {
                let w = phi.dot(&model.theta).exp();
                let c = nprime as f64 / n as f64;
                Ok(phi / (1.0 + c * w))
            }
            MomentFunction::CustomPhiTilde(f) => {
                let t = f(x);
                ensure!(t.len() == phi.len(), "phi-tilde has length {}, expected {}", t.len(), phi.len());
                Ok(phi + t)
            }
        }
    }

    fn tilde_matrix(f: &PhiTildeFn, xs: &DMatrix<f64>, r: usize) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(xs.nrows(), r);
        for i in 0..xs.nrows() {
            let x: Vec<f64> = xs.row(i).iter().copied().collect();
            let t = f(&x);
            ensure!(t.len() == r, "phi-tilde has length {}, expected {r}", t.len());
            out.row_mut(i).copy_from(&t.transpose());
        }
        Ok(out)
    }
}

/// `η(x; θ)` at a single point.
pub fn eval_moment(
    mf: &MomentFunction,
    model: &RatioModel,
    x: &[f64],
    n: usize,
    nprime: usize,
) -> Result<DVector<f64>> {
    mf.eval(model, x, n, nprime)
}

/// Result of the moment-matching solve.
#[derive(Debug, Clone)]
pub struct RatioFit {
    pub model: RatioModel,
    pub iterations: usize,
    /// Residual max-norm of the moment equation at the returned θ.
    pub residual: f64,
}

/// Evaluates the moment equation and its θ-Jacobian on fixed samples.
pub struct MomentSystem {
    phi_lab: DMatrix<f64>,
    phi_unl: DMatrix<f64>,
    eta_lab: Option<DMatrix<f64>>,
    eta_unl: Option<DMatrix<f64>>,
    qin: bool,
    n: f64,
    nprime: f64,
}

impl MomentSystem {
    pub fn new(
        labeled_x: &DMatrix<f64>,
        unlabeled_x: &DMatrix<f64>,
        basis: &Basis,
        mf: &MomentFunction,
    ) -> Result<Self> {
        ensure!(
            labeled_x.nrows() >= 1 && unlabeled_x.nrows() >= 1,
            "need at least one labeled and one unlabeled point"
        );
        ensure!(
            labeled_x.ncols() == unlabeled_x.ncols(),
            "labeled and unlabeled covariates differ in dimension"
        );
        let phi_lab = basis.matrix(labeled_x)?;
        let phi_unl = basis.matrix(unlabeled_x)?;
        let (eta_lab, eta_unl) = match mf {
            MomentFunction::CustomPhiTilde(f) => (
                Some(&phi_lab + MomentFunction::tilde_matrix(f, labeled_x, basis.len())?),
                Some(&phi_unl + MomentFunction::tilde_matrix(f, unlabeled_x, basis.len())?),
            ),
            _ => (None, None),
        };
        Ok(MomentSystem {
            n: phi_lab.nrows() as f64,
            nprime: phi_unl.nrows() as f64,
            phi_lab,
            phi_unl,
            eta_lab,
            eta_unl,
            qin: matches!(mf, MomentFunction::QinOptimal),
        })
    }

    /// Pooled second-moment matrix of φ.
    pub fn pooled_gram(&self) -> DMatrix<f64> {
        let total = self.n + self.nprime;
        (self.phi_lab.transpose() * &self.phi_lab + self.phi_unl.transpose() * &self.phi_unl) / total
    }

    /// `(1/n) Σ η(xᵢ;θ) w(xᵢ;θ) − (1/n') Σ η(x′ⱼ;θ)` and its derivative in θ.
    pub fn eval(&self, theta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let w_lab = (&self.phi_lab * theta).map(f64::exp);
        if self.qin {
            let c = self.nprime / self.n;
            let w_unl = (&self.phi_unl * theta).map(f64::exp);
            let a = w_lab.map(|w| w / (1.0 + c * w));
            let b = w_unl.map(|w| 1.0 / (1.0 + c * w));
            let g = self.phi_lab.transpose() * a / self.n - self.phi_unl.transpose() * b / self.nprime;
            let da = w_lab.map(|w| w / (1.0 + c * w).powi(2));
            let db = w_unl.map(|w| c * w / (1.0 + c * w).powi(2));
            let jac = weighted_gram(&self.phi_lab, &self.phi_lab, &da) / self.n
                + weighted_gram(&self.phi_unl, &self.phi_unl, &db) / self.nprime;
            (g, jac)
        } else {
            let (eta_lab, eta_unl) = match (&self.eta_lab, &self.eta_unl) {
                (Some(a), Some(b)) => (a, b),
                _ => (&self.phi_lab, &self.phi_unl),
            };
            let ones = DVector::from_element(eta_unl.nrows(), 1.0);
            let g = eta_lab.transpose() * &w_lab / self.n - eta_unl.transpose() * ones / self.nprime;
            let jac = weighted_gram(eta_lab, &self.phi_lab, &w_lab) / self.n;
            (g, jac)
        }
    }
}

/// `Σ aᵢ dᵢ bᵢᵀ` over rows.
fn weighted_gram(a: &DMatrix<f64>, b: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = b.clone();
    for (i, mut r) in scaled.row_iter_mut().enumerate() {
        r *= d[i];
    }
    a.transpose() * scaled
}

/// Solve the moment-matching equation for θ, starting from θ = 0.
pub fn solve_ratio_moment(
    labeled_x: &DMatrix<f64>,
    unlabeled_x: &DMatrix<f64>,
    basis: &Basis,
    mf: &MomentFunction,
    cfg: &SolverConfig,
) -> Result<RatioFit> {
    let system = MomentSystem::new(labeled_x, unlabeled_x, basis, mf)?;
    let gram = system.pooled_gram();
    if numerical_rank(&gram) < gram.nrows() {
        return Err(DressError::SingularSystem {
            condition: condition_number(&gram),
        });
    }
    let out = damped_newton(DVector::zeros(basis.len()), cfg, |t| system.eval(t))?;
    Ok(RatioFit {
        model: RatioModel {
            basis: basis.clone(),
            theta: out.x,
        },
        iterations: out.iterations,
        residual: out.residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn normal_rows(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = crate::rng::stream(seed, 0);
        DMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn poly_basis_examples() {
        assert_eq!(poly_basis(&[2.0], 3).unwrap().as_slice(), &[1.0, 2.0, 4.0, 8.0]);
        assert_eq!(
            poly_basis(&[1.0, -1.0], 2).unwrap().as_slice(),
            &[1.0, 1.0, -1.0, 1.0, 1.0]
        );
        assert!(matches!(poly_basis(&[1.0], 0), Err(DressError::Contract(_))));
    }

    proptest! {
        #[test]
        fn poly_basis_length(x in prop::collection::vec(-2.0f64..2.0, 1..6), l in 1usize..5) {
            prop_assert_eq!(poly_basis(&x, l).unwrap().len(), l * x.len() + 1);
        }

        #[test]
        fn ratio_at_zero_is_one(x in prop::collection::vec(-5.0f64..5.0, 3), l in 1usize..4) {
            let m = RatioModel::at_zero(Basis::polynomial(3, l).unwrap());
            prop_assert_eq!(m.eval(&x).unwrap(), 1.0);
        }
    }

    #[test]
    fn eval_ratio_examples() {
        let basis = Basis::polynomial(1, 1).unwrap();
        let m = RatioModel::new(basis, DVector::from_vec(vec![0.0, 1.0])).unwrap();
        assert_eq!(m.eval(&[0.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(m.eval(&[2f64.ln()]).unwrap(), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn moment_function_examples() {
        let basis = Basis::polynomial(2, 1).unwrap();
        let x = [0.7, -1.3];
        let phi = basis.eval(&x).unwrap();
        let zero = RatioModel::at_zero(basis.clone());
        assert_eq!(MomentFunction::QinOptimal.eval(&zero, &x, 50, 50).unwrap(), &phi / 2.0);
        assert_eq!(MomentFunction::QinOptimal.eval(&zero, &x, 100, 300).unwrap(), &phi / 4.0);
        let moved = RatioModel::new(basis, DVector::from_vec(vec![0.3, 1.0, -2.0])).unwrap();
        assert_eq!(MomentFunction::NaivePhi.eval(&moved, &x, 100, 300).unwrap(), phi);
    }

    #[test]
    fn identical_samples_give_zero_theta() {
        let xs = normal_rows(40, 2, 3);
        let basis = Basis::polynomial(2, 2).unwrap();
        for mf in [MomentFunction::NaivePhi, MomentFunction::QinOptimal] {
            let fit = solve_ratio_moment(&xs, &xs, &basis, &mf, &SolverConfig::default()).unwrap();
            assert_eq!(fit.iterations, 0);
            assert!(fit.model.theta.iter().all(|&t| t == 0.0));
        }
    }

    #[test]
    fn single_point_design_is_singular() {
        let x = dmatrix![0.0];
        let basis = Basis::polynomial(1, 1).unwrap();
        let err = solve_ratio_moment(&x, &x, &basis, &MomentFunction::NaivePhi, &SolverConfig::default())
            .unwrap_err();
        assert!(matches!(err, DressError::SingularSystem { .. }));
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let lab = normal_rows(30, 2, 1);
        let unl = normal_rows(50, 2, 2);
        let basis = Basis::polynomial(2, 2).unwrap();
        let tilde = MomentFunction::custom(|x: &[f64]| {
            DVector::from_vec(vec![0.0, x[0] * x[1], 0.1, -x[1], 0.0])
        });
        let theta = DVector::from_vec(vec![0.1, -0.2, 0.3, 0.05, -0.1]);
        for mf in [MomentFunction::NaivePhi, MomentFunction::QinOptimal, tilde] {
            let sys = MomentSystem::new(&lab, &unl, &basis, &mf).unwrap();
            let (_, jac) = sys.eval(&theta);
            let h = 1e-6;
            for k in 0..theta.len() {
                let mut p = theta.clone();
                let mut q = theta.clone();
                p[k] += h;
                q[k] -= h;
                let fd = (sys.eval(&p).0 - sys.eval(&q).0) / (2.0 * h);
                assert!((jac.column(k) - fd).amax() < 1e-7, "{mf:?} column {k}");
            }
        }
    }

    #[test]
    fn residual_within_tolerance_on_shifted_samples() {
        let lab = normal_rows(200, 2, 11);
        let unl = normal_rows(400, 2, 12).add_scalar(0.3);
        let basis = Basis::polynomial(2, 2).unwrap();
        for mf in [MomentFunction::NaivePhi, MomentFunction::QinOptimal] {
            let fit = solve_ratio_moment(&lab, &unl, &basis, &mf, &SolverConfig::default()).unwrap();
            let sys = MomentSystem::new(&lab, &unl, &basis, &mf).unwrap();
            assert!(sys.eval(&fit.model.theta).0.amax() <= 1e-8);
            assert!(fit.residual <= 1e-8);
            // mean shift is picked up by the linear coefficients
            assert!(fit.model.theta[1] > 0.1 && fit.model.theta[2] > 0.1);
        }
    }
}
