//! Asymptotic variance improvement of DRESS over the naive MLE.
//!
//! All expectations are empirical means over an evaluation sample: `ubar` is
//! `N × d` (rows `ū(xₖ)`), `phi` is `N × r` (rows `φ(xₖ)`), and `eta`, when
//! given, is `N × r`. Since `E[ū] = 0` in the population, the `ū` sample is
//! centered before use; with `φ₁ ≡ 1` this keeps the projection identities
//! exact on the sample.
//!
//! Notation (`c = n'/(n+n')`):
//!
//! * `B = E[ūφᵀ] E[φφᵀ]⁻¹`, `Π_φū = Bφ`, `Π⊥ū = ū − Π_φū`
//! * general: `Diff = c·E[ūūᵀ] − (1 + n/n')·V[Bη − c·ū]`
//! * `η = φ`: `Diff = (n'−n)/n' · E[Π_φū(Π_φū)ᵀ]`
//! * optimal `φ̃ = c·Bᵀ(BBᵀ)⁻¹ Π⊥ū`:
//!   `Diff = c·E[Π⊥ū(Π⊥ū)ᵀ] + (n'−n)/n' · E[Π_φū(Π_φū)ᵀ]`

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{ensure, DressError, Result};
use crate::estimators::FitResult;
use crate::linalg::{
    center_columns, condition_number, covariance, mean_cross, min_eigenvalue, numerical_rank, serde_rows,
    solve_matrix_checked, symmetrize,
};
use crate::model::ScoreModel;
use crate::rng::{stream, Rng};

type RegressionFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type ResponseSampler = Arc<dyn Fn(&[f64], &mut Rng) -> f64 + Send + Sync>;

/// How `ū(x) = E[u(x, y; α*) | x]` is obtained.
#[derive(Clone)]
pub enum UbarSpec {
    /// Regression with true mean `f`: `ū(x) = (f(x) − α*ᵀx)·x`.
    AnalyticRegression { f: RegressionFn, alpha_star: DVector<f64> },
    /// Average of `u(x, yₖ; α*)` over `draws` responses `yₖ ~ p(y|x)`.
    MonteCarlo {
        model: ScoreModel,
        sampler: ResponseSampler,
        alpha_star: DVector<f64>,
        draws: usize,
        seed: u64,
    },
}

impl fmt::Debug for UbarSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UbarSpec::AnalyticRegression { alpha_star, .. } => {
                write!(f, "AnalyticRegression(alpha*={:?})", alpha_star.as_slice())
            }
            UbarSpec::MonteCarlo { model, draws, .. } => write!(f, "MonteCarlo({model}, draws={draws})"),
        }
    }
}

impl UbarSpec {
    pub fn analytic<F>(f: F, alpha_star: DVector<f64>) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        UbarSpec::AnalyticRegression {
            f: Arc::new(f),
            alpha_star,
        }
    }

    pub fn monte_carlo<S>(model: ScoreModel, sampler: S, alpha_star: DVector<f64>, draws: usize, seed: u64) -> Self
    where
        S: Fn(&[f64], &mut Rng) -> f64 + Send + Sync + 'static,
    {
        UbarSpec::MonteCarlo {
            model,
            sampler: Arc::new(sampler),
            alpha_star,
            draws,
            seed,
        }
    }

    fn eval_indexed(&self, x: &[f64], index: u64) -> Result<DVector<f64>> {
        match self {
            UbarSpec::AnalyticRegression { f, alpha_star } => {
                ensure!(alpha_star.len() == x.len(), "alpha* length does not match covariate");
                let xv = DVector::from_column_slice(x);
                Ok(&xv * (f(x) - alpha_star.dot(&xv)))
            }
            UbarSpec::MonteCarlo {
                model,
                sampler,
                alpha_star,
                draws,
                seed,
            } => {
                ensure!(*draws >= 1, "Monte Carlo ū needs at least one draw");
                let mut rng = stream(*seed, index);
                let mut acc = DVector::zeros(model.param_dim());
                for _ in 0..*draws {
                    let y = sampler(x, &mut rng);
                    acc += model.score(x, y, alpha_star)?;
                }
                Ok(acc / *draws as f64)
            }
        }
    }

    /// `ū(x)`.
    pub fn eval(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.eval_indexed(x, 0)
    }

    /// `ū` at every row of `xs`; Monte Carlo rows use independent streams.
    pub fn samples(&self, xs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let rows: Vec<DVector<f64>> = (0..xs.nrows())
            .into_par_iter()
            .map(|i| {
                let x: Vec<f64> = xs.row(i).iter().copied().collect();
                self.eval_indexed(&x, i as u64)
            })
            .collect::<Result<_>>()?;
        let d = rows.first().map_or(0, |r| r.len());
        Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
    }
}

/// `ū(x)` under `spec`.
pub fn ubar(spec: &UbarSpec, x: &[f64]) -> Result<DVector<f64>> {
    spec.eval(x)
}

/// Projection of `ū` onto the span of the ratio basis.
#[derive(Debug, Clone)]
pub struct Projection {
    /// `d × r` coefficient matrix `B`.
    pub b: DMatrix<f64>,
    /// Rows `Bφ(xₖ)`.
    pub proj: DMatrix<f64>,
    /// Rows `ū(xₖ) − Bφ(xₖ)`.
    pub resid: DMatrix<f64>,
}

fn check_samples(ubar: &DMatrix<f64>, phi: &DMatrix<f64>) -> Result<()> {
    ensure!(ubar.nrows() >= 1, "empty evaluation sample");
    ensure!(
        ubar.nrows() == phi.nrows(),
        "ū has {} rows but φ has {}",
        ubar.nrows(),
        phi.nrows()
    );
    Ok(())
}

fn check_counts(n: usize, nprime: usize) -> Result<()> {
    ensure!(n >= 1 && nprime >= 1, "sample counts must be positive");
    Ok(())
}

/// `B = Ê[ūφᵀ] Ê[φφᵀ]⁻¹` with the projection and residual rows.
pub fn project_ubar(ubar: &DMatrix<f64>, phi: &DMatrix<f64>) -> Result<Projection> {
    check_samples(ubar, phi)?;
    let ubar = center_columns(ubar);
    project_centered(&ubar, phi)
}

fn project_centered(ubar: &DMatrix<f64>, phi: &DMatrix<f64>) -> Result<Projection> {
    let gram = mean_cross(phi, phi);
    if numerical_rank(&gram) < gram.nrows() {
        return Err(DressError::SingularSystem {
            condition: condition_number(&gram),
        });
    }
    let cross = mean_cross(ubar, phi);
    // B = cross · gram⁻¹  ⇔  gram · Bᵀ = crossᵀ (gram symmetric)
    let bt = solve_matrix_checked(&gram, &cross.transpose(), f64::INFINITY)?;
    let b = bt.transpose();
    let proj = phi * &bt;
    let resid = ubar - &proj;
    Ok(Projection { b, proj, resid })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiffMode {
    GeneralEta,
    EtaEqualsPhi,
    OptimalPhitilde,
}

#[derive(Debug, Clone, Serialize)]
pub struct ImprovementReport {
    pub mode: DiffMode,
    #[serde(with = "serde_rows")]
    pub diff_matrix: DMatrix<f64>,
    /// `Ê[ūūᵀ]`.
    #[serde(with = "serde_rows")]
    pub ubar_second_moment: DMatrix<f64>,
    /// `Ê[Π_φū(Π_φū)ᵀ]`.
    #[serde(with = "serde_rows")]
    pub projected_second_moment: DMatrix<f64>,
    /// `Ê[Π⊥ū(Π⊥ū)ᵀ]`.
    #[serde(with = "serde_rows")]
    pub residual_second_moment: DMatrix<f64>,
    #[serde(with = "serde_rows")]
    pub b: DMatrix<f64>,
    pub sample_size_used: usize,
    pub n: usize,
    pub nprime: usize,
}

impl ImprovementReport {
    fn new(mode: DiffMode, diff: DMatrix<f64>, p: &Projection, ubar: &DMatrix<f64>, n: usize, nprime: usize) -> Self {
        ImprovementReport {
            mode,
            diff_matrix: symmetrize(&diff),
            ubar_second_moment: mean_cross(ubar, ubar),
            projected_second_moment: mean_cross(&p.proj, &p.proj),
            residual_second_moment: mean_cross(&p.resid, &p.resid),
            b: p.b.clone(),
            sample_size_used: ubar.nrows(),
            n,
            nprime,
        }
    }

    pub fn trace(&self) -> f64 {
        self.diff_matrix.trace()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.diff_matrix)
    }
}

fn share(n: usize, nprime: usize) -> f64 {
    nprime as f64 / (n + nprime) as f64
}

/// `Diff = c·Ê[ūūᵀ] − (1 + n/n')·V̂[Bη − c·ū]` for an arbitrary moment function.
pub fn diff_general(
    ubar: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    eta: &DMatrix<f64>,
    n: usize,
    nprime: usize,
) -> Result<ImprovementReport> {
    check_samples(ubar, phi)?;
    check_counts(n, nprime)?;
    ensure!(
        eta.nrows() == phi.nrows() && eta.ncols() == phi.ncols(),
        "η samples must have the same shape as φ samples"
    );
    let ubar = center_columns(ubar);
    let p = project_centered(&ubar, phi)?;
    let c = share(n, nprime);
    let inner = eta * p.b.transpose() - &ubar * c;
    let diff = mean_cross(&ubar, &ubar) * c - covariance(&inner) * (1.0 + n as f64 / nprime as f64);
    Ok(ImprovementReport::new(DiffMode::GeneralEta, diff, &p, &ubar, n, nprime))
}

/// `Diff = (n'−n)/n' · Ê[Π_φū(Π_φū)ᵀ]`, the case `η(x; θ*) ∝ φ(x)`.
pub fn diff_eta_phi(ubar: &DMatrix<f64>, phi: &DMatrix<f64>, n: usize, nprime: usize) -> Result<ImprovementReport> {
    check_samples(ubar, phi)?;
    check_counts(n, nprime)?;
    let ubar = center_columns(ubar);
    let p = project_centered(&ubar, phi)?;
    let factor = (nprime as f64 - n as f64) / nprime as f64;
    let diff = mean_cross(&p.proj, &p.proj) * factor;
    Ok(ImprovementReport::new(DiffMode::EtaEqualsPhi, diff, &p, &ubar, n, nprime))
}

#[derive(Debug, Clone)]
pub struct OptimalPhiTilde {
    /// Rows `φ̃(xₖ)`.
    pub phitilde: DMatrix<f64>,
    /// Max-norm of `Bφ̃ − c·Π⊥ū` over the sample.
    pub check: f64,
}

fn row_full_rank(b: &DMatrix<f64>) -> Result<()> {
    let rank = numerical_rank(b);
    if rank < b.nrows() {
        return Err(DressError::RankDeficient {
            rank,
            required: b.nrows(),
        });
    }
    Ok(())
}

/// `φ̃ = c·Bᵀ(BBᵀ)⁻¹ Π⊥ū`, the moment-function perturbation maximizing the improvement.
pub fn optimal_phitilde(ubar: &DMatrix<f64>, phi: &DMatrix<f64>, n: usize, nprime: usize) -> Result<OptimalPhiTilde> {
    check_samples(ubar, phi)?;
    check_counts(n, nprime)?;
    let ubar = center_columns(ubar);
    let p = project_centered(&ubar, phi)?;
    optimal_from_projection(&p, n, nprime)
}

fn optimal_from_projection(p: &Projection, n: usize, nprime: usize) -> Result<OptimalPhiTilde> {
    let (d, r) = p.b.shape();
    if r < d {
        return Err(DressError::RankDeficient {
            rank: numerical_rank(&p.b),
            required: d,
        });
    }
    row_full_rank(&p.b)?;
    let c = share(n, nprime);
    let bbt = &p.b * p.b.transpose();
    // rows: φ̃ₖᵀ = c·(Π⊥ū)ₖᵀ (BBᵀ)⁻¹ B
    let coef = solve_matrix_checked(&bbt, &p.b, f64::INFINITY)?;
    let phitilde = &p.resid * coef * c;
    let check = (&phitilde * p.b.transpose() - &p.resid * c).amax();
    Ok(OptimalPhiTilde { phitilde, check })
}

/// Maximum improvement with the optimal `φ̃`.
pub fn diff_optimal(ubar: &DMatrix<f64>, phi: &DMatrix<f64>, n: usize, nprime: usize) -> Result<ImprovementReport> {
    check_samples(ubar, phi)?;
    check_counts(n, nprime)?;
    let ubar = center_columns(ubar);
    let p = project_centered(&ubar, phi)?;
    // the optimum is only defined when B has full row rank
    optimal_from_projection(&p, n, nprime)?;
    let c = share(n, nprime);
    let factor = (nprime as f64 - n as f64) / nprime as f64;
    let diff = mean_cross(&p.resid, &p.resid) * c + mean_cross(&p.proj, &p.proj) * factor;
    Ok(ImprovementReport::new(DiffMode::OptimalPhitilde, diff, &p, &ubar, n, nprime))
}

/// Minimum replication count for [`empirical_sandwich`].
pub const MIN_REPLICATIONS: usize = 30;

/// `n · J · Cov(α̂) · Jᵀ` from replicated estimates, with `J = Ê[∇u]` at `α*`.
pub fn empirical_sandwich(fits: &[FitResult], expected_jacobian: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    let alphas: Vec<DVector<f64>> = fits.iter().map(|f| f.alpha_hat.clone()).collect();
    sandwich_from_estimates(&alphas, expected_jacobian, n)
}

/// As [`empirical_sandwich`] for bare parameter vectors. `Cov` uses the
/// unbiased `1/(R−1)` normalization.
pub fn sandwich_from_estimates(alphas: &[DVector<f64>], expected_jacobian: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    ensure!(
        alphas.len() >= MIN_REPLICATIONS,
        "sandwich estimate needs at least {MIN_REPLICATIONS} replications, got {}",
        alphas.len()
    );
    let d = expected_jacobian.nrows();
    ensure!(
        expected_jacobian.is_square() && alphas.iter().all(|a| a.len() == d),
        "parameter and Jacobian dimensions disagree"
    );
    let r = alphas.len() as f64;
    let mean = alphas.iter().fold(DVector::zeros(d), |acc, a| acc + a) / r;
    let mut cov = DMatrix::zeros(d, d);
    for a in alphas {
        let c = a - &mean;
        cov += &c * c.transpose();
    }
    cov /= r - 1.0;
    Ok(symmetrize(&(expected_jacobian * cov * expected_jacobian.transpose() * n as f64)))
}

/// Minimum eigenvalue of `a − b`; nonnegative when `a ⪰ b`.
pub fn psd_margin(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    min_eigenvalue(&(a - b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density_ratio::Basis;
    use approx::assert_abs_diff_eq;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = stream(seed, 0);
        DMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn analytic_ubar_examples() {
        let spec = UbarSpec::analytic(|x: &[f64]| x[0] + x[0] * x[0], DVector::from_element(1, 1.0));
        for x in [-1.5, 0.0, 0.3, 2.0] {
            assert_abs_diff_eq!(spec.eval(&[x]).unwrap()[0], x * x * x, epsilon = 1e-14);
        }
        let specified = UbarSpec::analytic(|x: &[f64]| 2.0 * x[0] - x[1], DVector::from_vec(vec![2.0, -1.0]));
        assert!(specified.eval(&[0.4, 1.1]).unwrap().iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn monte_carlo_ubar_matches_analytic() {
        let f = |x: &[f64]| x[0] + 0.5 * x[0] * x[0];
        let sigma = 0.5;
        let m = 100_000;
        let mc = UbarSpec::monte_carlo(
            ScoreModel::linear_gaussian(1),
            move |x: &[f64], rng: &mut Rng| f(x) + sigma * rng.sample::<f64, _>(StandardNormal),
            DVector::from_element(1, 1.0),
            m,
            3,
        );
        let exact = UbarSpec::analytic(f, DVector::from_element(1, 1.0));
        let xs = gaussian(5, 1, 8);
        let got = mc.samples(&xs).unwrap();
        for i in 0..5 {
            let x = xs[(i, 0)];
            // u = (y − x)x has conditional sd σ|x|
            let se = sigma * x.abs() / (m as f64).sqrt();
            let want = exact.eval(&[x]).unwrap()[0];
            assert!((got[(i, 0)] - want).abs() <= 3.0 * se, "row {i}");
        }
    }

    #[test]
    fn ubar_in_span_projects_to_itself() {
        let xs = gaussian(200, 2, 1);
        let phi = Basis::polynomial(2, 2).unwrap().matrix(&xs).unwrap();
        let ubar = phi.columns(1, 2).into_owned();
        let p = project_ubar(&ubar, &phi).unwrap();
        assert!((&p.proj - center_columns(&ubar)).amax() < 1e-12);
        assert!(p.resid.amax() < 1e-12);
    }

    #[test]
    fn ubar_orthogonal_to_basis_has_zero_b() {
        let xs = gaussian(300, 2, 2);
        let phi = Basis::polynomial(2, 1).unwrap().matrix(&xs).unwrap();
        let raw = DMatrix::from_fn(300, 2, |i, j| xs[(i, j)].powi(2) * xs[(i, 1 - j)]);
        let pre = project_ubar(&raw, &phi).unwrap().resid;
        let p = project_ubar(&pre, &phi).unwrap();
        assert!(p.b.amax() < 1e-12);
        assert!(p.proj.amax() < 1e-12);
    }

    #[test]
    fn projection_agrees_with_per_component_least_squares() {
        let xs = gaussian(20, 2, 4);
        let phi = Basis::polynomial(2, 2).unwrap().matrix(&xs).unwrap();
        let ubar = DMatrix::from_fn(20, 2, |i, j| (xs[(i, j)] * 1.7).sin() + xs[(i, 0)].powi(3));
        let p = project_ubar(&ubar, &phi).unwrap();
        let centered = center_columns(&ubar);
        // independent route: QR least squares per component
        let qr = phi.clone().qr();
        for k in 0..2 {
            let target = centered.column(k).into_owned();
            let coef = qr.r().solve_upper_triangular(&(qr.q().transpose() * &target)).unwrap();
            let fitted = &phi * &coef;
            assert!((p.proj.column(k) - fitted).amax() < 1e-10);
            assert!((p.b.row(k).transpose() - coef).amax() < 1e-10);
        }
        let cross = mean_cross(&p.resid, &phi);
        assert!(cross.amax() < 1e-10);
    }

    #[test]
    fn singular_gram_rejected() {
        let phi = DMatrix::from_fn(10, 2, |_, _| 1.0);
        let ubar = DMatrix::from_fn(10, 1, |i, _| i as f64);
        assert!(matches!(project_ubar(&ubar, &phi), Err(DressError::SingularSystem { .. })));
    }

    fn regression_instance(seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        let xs = gaussian(2000, 2, seed);
        let phi = Basis::polynomial(2, 2).unwrap().matrix(&xs).unwrap();
        let spec = UbarSpec::analytic(|x: &[f64]| x[0] + x[1] + 0.3 * (x[0] * x[0] + x[1] * x[1]) + 0.2 * x[0].powi(3), DVector::from_element(2, 1.0));
        (spec.samples(&xs).unwrap(), phi)
    }

    #[test]
    fn eta_phi_examples() {
        let (ubar, phi) = regression_instance(5);
        let r = diff_eta_phi(&ubar, &phi, 300, 300).unwrap();
        assert!(r.diff_matrix.amax() < 1e-15);

        let in_span = phi.columns(1, 2).into_owned();
        let r = diff_eta_phi(&in_span, &phi, 100, 200).unwrap();
        let half = mean_cross(&center_columns(&in_span), &center_columns(&in_span)) * 0.5;
        assert!((r.diff_matrix - half).amax() < 1e-10);
    }

    #[test]
    fn general_with_eta_phi_matches_special_case() {
        let (ubar, phi) = regression_instance(6);
        for (n, np) in [(100, 1000), (500, 500), (300, 100)] {
            let a = diff_general(&ubar, &phi, &phi, n, np).unwrap();
            let b = diff_eta_phi(&ubar, &phi, n, np).unwrap();
            assert!((a.diff_matrix - b.diff_matrix).amax() < 1e-10);
        }
    }

    #[test]
    fn optimal_examples() {
        let (ubar, phi) = regression_instance(7);
        let opt = optimal_phitilde(&ubar, &phi, 200, 1000).unwrap();
        assert!(opt.check <= 1e-8);
        assert!(mean_cross(&phi, &opt.phitilde).amax() < 1e-10);
        assert!(crate::linalg::column_means(&opt.phitilde).amax() < 1e-10);

        let eta = &phi + &opt.phitilde;
        let g = diff_general(&ubar, &phi, &eta, 200, 1000).unwrap();
        let o = diff_optimal(&ubar, &phi, 200, 1000).unwrap();
        assert!((g.diff_matrix - &o.diff_matrix).amax() < 1e-8);

        let e = diff_eta_phi(&ubar, &phi, 200, 1000).unwrap();
        assert!(psd_margin(&o.diff_matrix, &e.diff_matrix) >= -1e-8);

        let eq = diff_optimal(&ubar, &phi, 400, 400).unwrap();
        let expect = &eq.residual_second_moment * 0.5;
        assert!((&eq.diff_matrix - expect).amax() < 1e-12);
        assert!(eq.min_eigenvalue() > 0.0);
    }

    #[test]
    fn optimal_with_ubar_in_span_is_zero_perturbation() {
        let xs = gaussian(100, 2, 9);
        let phi = Basis::polynomial(2, 2).unwrap().matrix(&xs).unwrap();
        let ubar = phi.columns(1, 2).into_owned();
        let opt = optimal_phitilde(&ubar, &phi, 100, 300).unwrap();
        assert!(opt.phitilde.amax() < 1e-12);
        let o = diff_optimal(&ubar, &phi, 100, 300).unwrap();
        let e = diff_eta_phi(&ubar, &phi, 100, 300).unwrap();
        assert!((o.diff_matrix - e.diff_matrix).amax() < 1e-12);
    }

    #[test]
    fn rank_conditions() {
        let (ubar, phi) = regression_instance(10);
        // r = 1 < d = 2
        let err = optimal_phitilde(&ubar, &phi.columns(0, 1).into_owned(), 10, 20).unwrap_err();
        assert!(matches!(err, DressError::RankDeficient { required: 2, .. }));
        // two identical ū components make B rank one
        let dup = DMatrix::from_fn(ubar.nrows(), 2, |i, _| ubar[(i, 0)]);
        let err = diff_optimal(&dup, &phi, 10, 20).unwrap_err();
        assert!(matches!(err, DressError::RankDeficient { rank: 1, required: 2 }));
    }

    #[test]
    fn sandwich_of_identical_fits_is_zero() {
        let a = DVector::from_vec(vec![0.3, -1.0]);
        let alphas = vec![a; 40];
        let s = sandwich_from_estimates(&alphas, &DMatrix::identity(2, 2), 100).unwrap();
        assert!(s.amax() < 1e-25);
        assert!(sandwich_from_estimates(&alphas[..10], &DMatrix::identity(2, 2), 100).is_err());
    }
}
