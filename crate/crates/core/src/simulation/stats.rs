use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{ensure, DressError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTest {
    pub t: f64,
    /// `P(T ≥ t)` under the null of zero mean.
    pub p_one_tailed: f64,
    pub df: usize,
    pub mean: f64,
    pub std_error: f64,
}

/// One-sample t-test of `differences` against zero with the upper-tailed
/// alternative (mean > 0).
pub fn paired_t_test(differences: &[f64]) -> Result<TTest> {
    let k = differences.len();
    ensure!(k >= 2, "t-test needs at least two differences, got {k}");
    ensure!(
        differences.iter().all(|d| d.is_finite()),
        "differences must be finite"
    );
    let mean = differences.iter().sum::<f64>() / k as f64;
    let var = differences.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    if var <= 0.0 {
        return Err(DressError::DegenerateTest);
    }
    let std_error = (var / k as f64).sqrt();
    let t = mean / std_error;
    let dist = StudentsT::new(0.0, 1.0, (k - 1) as f64).expect("positive degrees of freedom");
    Ok(TTest {
        t,
        p_one_tailed: dist.sf(t).clamp(0.0, 1.0),
        df: k - 1,
        mean,
        std_error,
    })
}
