//! Damped Newton iteration for small smooth estimating equations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DressError, Result};
use crate::linalg::{solve_checked, MAX_CONDITION};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Convergence threshold on the residual max-norm.
    pub tol: f64,
    pub max_iter: usize,
    /// Step halvings allowed per iteration before giving up on descent.
    pub max_halvings: usize,
    /// Parameter max-norm beyond which the iterates are declared divergent.
    pub divergence_norm: f64,
    /// A root is accepted only once the Newton step is below
    /// `step_tol · (1 + ‖x‖∞)`; residuals that vanish while the iterates keep
    /// moving indicate a root at infinity.
    pub step_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-8,
            max_iter: 100,
            max_halvings: 20,
            divergence_norm: 1e6,
            step_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: DVector<f64>,
    pub iterations: usize,
    /// Residual max-norm at `x`.
    pub residual: f64,
}

fn finite(v: &DVector<f64>) -> bool {
    v.iter().all(|a| a.is_finite())
}

/// Solve `g(x) = 0` from `x0`, where `system(x)` returns `(g(x), ∂g/∂x)`.
///
/// Each Newton step is halved until the Euclidean residual norm decreases.
pub fn damped_newton<F>(x0: DVector<f64>, cfg: &SolverConfig, mut system: F) -> Result<NewtonOutcome>
where
    F: FnMut(&DVector<f64>) -> (DVector<f64>, DMatrix<f64>),
{
    let mut x = x0;
    let (mut g, mut jac) = system(&x);
    if !finite(&g) {
        return Err(DressError::NonConvergence {
            iterations: 0,
            residual: f64::INFINITY,
        });
    }

    let mut last_step: Option<f64> = None;
    for iter in 0..cfg.max_iter {
        let residual = g.amax();
        let step = match solve_checked(&jac, &(-&g), MAX_CONDITION) {
            Ok(s) => s,
            // at a small residual a singular Jacobian means either a degenerate
            // root or saturation on the way to infinity; the last step decides
            Err(_) if residual <= cfg.tol => {
                return match last_step {
                    Some(s) if s > cfg.step_tol * (1.0 + x.amax()) => Err(DressError::Divergence { norm: x.amax() }),
                    _ => Ok(NewtonOutcome {
                        x,
                        iterations: iter,
                        residual,
                    }),
                };
            }
            Err(e) => return Err(e),
        };
        if residual <= cfg.tol && step.amax() <= cfg.step_tol * (1.0 + x.amax()) {
            return Ok(NewtonOutcome {
                x,
                iterations: iter,
                residual,
            });
        }

        let norm = g.norm();
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let cand = &x + &step * scale;
            let (gc, jc) = system(&cand);
            if finite(&gc) && (gc.norm() < norm || residual <= cfg.tol) {
                accepted = Some((cand, gc, jc));
                break;
            }
            scale *= 0.5;
        }
        let Some((cand, gc, jc)) = accepted else {
            return Err(DressError::NonConvergence {
                iterations: iter + 1,
                residual,
            });
        };
        last_step = Some((&cand - &x).amax());
        x = cand;
        g = gc;
        jac = jc;

        let norm_x = x.amax();
        if norm_x > cfg.divergence_norm {
            return Err(DressError::Divergence { norm: norm_x });
        }
    }

    let residual = g.amax();
    if residual <= cfg.tol {
        // the residual vanished but the iterates never settled
        Err(DressError::Divergence { norm: x.amax() })
    } else {
        Err(DressError::NonConvergence {
            iterations: cfg.max_iter,
            residual,
        })
    }
}
