//! Forecast scores: mean squared error and the continuous ranked probability score.

use ndarray::{Array1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{pairwise_sum, Scalar};
use crate::stats::{normal_cdf, normal_pdf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseScores<T> {
    /// Mean over steps, one entry per element.
    pub per_element: Array1<T>,
    /// Mean over every step and element.
    pub pooled: T,
}

/// Mean squared error of an `n_f × n_l` forecast.
pub fn mse<T: Scalar>(forecast: ArrayView2<T>, truth: ArrayView2<T>) -> Result<MseScores<T>> {
    if forecast.dim() != truth.dim() {
        return Err(Error::ShapeMismatch(format!("forecast {:?} vs truth {:?}", forecast.dim(), truth.dim())));
    }
    if forecast.is_empty() {
        return Err(Error::ShapeMismatch("empty forecast".into()));
    }
    let sq = (&forecast - &truth).mapv(|e| e * e);
    let per_element = sq
        .axis_iter(Axis(1))
        .map(|c| pairwise_sum(&c.to_vec()) / T::from_usize_lossy(c.len()))
        .collect::<Array1<T>>();
    let flat: Vec<T> = sq.iter().copied().collect();
    let pooled = pairwise_sum(&flat) / T::from_usize_lossy(flat.len());
    Ok(MseScores { per_element, pooled })
}

/// Empirical-ensemble CRPS: `mean|m_i - y| - ½ mean|m_i - m_j|`.
///
/// The pairwise term uses the sorted-sample identity
/// `Σ_{i,j}|m_i - m_j| = 2 Σ_k (2k - n - 1) m_(k)`.
pub fn crps<T: Scalar>(members: &[T], y: T) -> Result<T> {
    let n = members.len();
    if n == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let nf = T::from_usize_lossy(n);
    let abs_dev: Vec<T> = members.iter().map(|&m| (m - y).abs()).collect();
    let first = pairwise_sum(&abs_dev) / nf;
    let mut sorted = members.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let weighted: Vec<T> = sorted
        .iter()
        .enumerate()
        .map(|(k, &m)| T::from_usize_lossy(2 * k + 1) * m - nf * m)
        .collect();
    let pair_mean = T::lit(2.0) * pairwise_sum(&weighted) / (nf * nf);
    Ok((first - T::lit(0.5) * pair_mean).max(T::zero()))
}

/// Closed-form CRPS of a Gaussian predictive `N(mu, sigma²)`.
pub fn crps_gaussian<T: Scalar>(mu: T, sigma: T, y: T) -> T {
    if sigma <= T::zero() {
        return (y - mu).abs();
    }
    let z = (y - mu) / sigma;
    let two = T::lit(2.0);
    sigma * (z * (two * normal_cdf(z) - T::one()) + two * normal_pdf(z) - T::one() / T::lit(std::f64::consts::PI).sqrt())
}
