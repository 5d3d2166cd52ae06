//! Post hoc marginal calibration of long-lead forecasts.
//!
//! Forecasts are produced from `n_w` consecutive origins `T, T+n_f, …` and
//! grouped per element and per horizon step. Residual standard deviations per
//! step are forced to be non-decreasing in the horizon, and the resulting
//! curve rescales both the residuals (for PIT checks) and new prediction
//! intervals.

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecasting::{EnsembleForecaster, ForecastEnsemble};
use crate::reservoir::HyperParams;
use crate::scalar::Scalar;
use crate::spline::monotone_curve;
use crate::stats::{normal_cdf, normal_quantile, sample_sd};

/// Floor applied to smoothed standard deviations.
pub const SIGMA_MIN: f64 = 1e-8;

/// Default number of calibration windows and horizon.
pub const DEFAULT_WINDOWS: usize = 20;
pub const DEFAULT_HORIZON: usize = 20;

/// Forecasts from `n_w` origins grouped per element and step.
///
/// All arrays are indexed `[element, step, window]`; `truth[[l, j, w]]` is the
/// observation at row `origin + w·n_f + j` (0-based `j`).
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedForecasts<T> {
    pub origin: usize,
    pub n_w: usize,
    pub n_f: usize,
    pub forecast: Array3<T>,
    pub truth: Array3<T>,
    /// Cross-member spread, used for uncalibrated comparisons.
    pub spread: Array3<T>,
}

impl<T: Scalar> WindowedForecasts<T> {
    /// Groups per-origin ensembles (window order) against the observed data.
    pub fn from_ensembles(data: ArrayView2<T>, origin: usize, ensembles: &[ForecastEnsemble<T>]) -> Result<Self> {
        let n_w = ensembles.len();
        if n_w == 0 {
            return Err(Error::TooFewWindows(0));
        }
        let n_f = ensembles[0].horizon();
        let n_l = data.ncols();
        let needed = origin + n_w * n_f;
        if data.nrows() < needed {
            return Err(Error::InsufficientData { needed, got: data.nrows() });
        }
        let mut forecast = Array3::zeros((n_l, n_f, n_w));
        let mut truth = Array3::zeros((n_l, n_f, n_w));
        let mut spread = Array3::zeros((n_l, n_f, n_w));
        for (w, ens) in ensembles.iter().enumerate() {
            if ens.horizon() != n_f || ens.mean.ncols() != n_l {
                return Err(Error::ShapeMismatch("ensembles differ in horizon or width".into()));
            }
            if ens.origin != origin + w * n_f {
                return Err(Error::InvalidInput(format!("window {w} starts at {}, expected {}", ens.origin, origin + w * n_f)));
            }
            let sd = ens.spread();
            for j in 0..n_f {
                for l in 0..n_l {
                    forecast[[l, j, w]] = ens.mean[[j, l]];
                    truth[[l, j, w]] = data[[origin + w * n_f + j, l]];
                    spread[[l, j, w]] = sd[[j, l]];
                }
            }
        }
        Ok(Self { origin, n_w, n_f, forecast, truth, spread })
    }

    pub fn n_l(&self) -> usize {
        self.forecast.len_of(Axis(0))
    }
}

/// Runs recursive forecasts from origins `origin + w·n_f`, `w = 0..n_w`, with
/// one ensemble trained on the observed rows before each origin.
pub fn build_windowed_forecasts<T: Scalar>(
    data: ArrayView2<T>,
    origin: usize,
    hp: &HyperParams<T>,
    n_w: usize,
    n_f: usize,
    n_ens: usize,
    seed: u64,
) -> Result<WindowedForecasts<T>> {
    let needed = origin + n_w * n_f;
    if data.nrows() < needed {
        return Err(Error::InsufficientData { needed, got: data.nrows() });
    }
    if n_w == 0 {
        return Err(Error::TooFewWindows(0));
    }
    let mut ens = EnsembleForecaster::new(data.slice(s![..origin, ..]), *hp, n_ens, seed)?;
    let mut out = Vec::with_capacity(n_w);
    for w in 0..n_w {
        ens.advance(data, origin + w * n_f)?;
        out.push(ens.forecast(n_f)?);
    }
    WindowedForecasts::from_ensembles(data, origin, &out)
}

/// Residuals `truth - forecast` (`[element, step, window]`) and their per-step
/// sample standard deviation (`[element, step]`, denominator `n_w - 1`).
pub fn residuals_and_sd<T: Scalar>(wf: &WindowedForecasts<T>) -> Result<(Array3<T>, Array2<T>)> {
    if wf.n_w < 2 {
        return Err(Error::TooFewWindows(wf.n_w));
    }
    let r = &wf.truth - &wf.forecast;
    let (n_l, n_f, _) = r.dim();
    let mut sd = Array2::zeros((n_l, n_f));
    for l in 0..n_l {
        for j in 0..n_f {
            sd[[l, j]] = sample_sd(&r.slice(s![l, j, ..]).to_vec());
        }
    }
    Ok((r, sd))
}

/// Smoothed non-decreasing standard deviations for one element (no floor).
pub fn monotone_spline<T: Scalar>(sigma_hat: &[T]) -> Vec<T> {
    let curve = monotone_curve(sigma_hat);
    (1..=sigma_hat.len()).map(|j| curve.eval(T::from_usize_lossy(j))).collect()
}

/// Standardized residuals `R / σ̃` per step.
pub fn standardize<T: Scalar>(residuals: &Array3<T>, sigma_tilde: &Array2<T>) -> Result<Array3<T>> {
    let (n_l, n_f, _) = residuals.dim();
    if sigma_tilde.dim() != (n_l, n_f) {
        return Err(Error::ShapeMismatch(format!("sigma {:?} vs residuals {:?}", sigma_tilde.dim(), residuals.dim())));
    }
    for ((l, j), &s) in sigma_tilde.indexed_iter() {
        if !(s > T::zero()) {
            return Err(Error::ZeroSigma { element: l, step: j });
        }
    }
    let mut out = residuals.clone();
    for l in 0..n_l {
        for j in 0..n_f {
            let sig = sigma_tilde[[l, j]];
            out.slice_mut(s![l, j, ..]).mapv_inplace(|v| v / sig);
        }
    }
    Ok(out)
}

/// Probability integral transform of a standardized residual under N(0, 1).
pub fn pit<T: Scalar>(r: T) -> T {
    normal_cdf(r)
}

/// Central Gaussian interval `mean ± z_{(1+level)/2} σ`.
pub fn interval<T: Scalar>(mean: T, sigma: T, level: T) -> Result<(T, T)> {
    if !(level > T::zero() && level < T::one()) {
        return Err(Error::BadLevel(level.as_f64()));
    }
    let z = normal_quantile((T::one() + level) / T::lit(2.0));
    Ok((mean - z * sigma, mean + z * sigma))
}

/// Fraction of truths falling inside their (closed) intervals.
pub fn coverage<T: Scalar>(intervals: &[(T, T)], truth: &[T]) -> Result<T> {
    if intervals.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!("{} intervals vs {} truths", intervals.len(), truth.len())));
    }
    if truth.is_empty() {
        return Ok(T::nan());
    }
    let hits = intervals.iter().zip(truth).filter(|((lo, hi), y)| **y >= *lo && **y <= *hi).count();
    Ok(T::from_usize_lossy(hits) / T::from_usize_lossy(truth.len()))
}

/// Marginal calibration fitted from windowed forecasts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel<T> {
    /// Raw residual SD, `[element, step]`.
    pub sigma_hat: Array2<T>,
    /// Monotone smoothed SD floored at [`SIGMA_MIN`], `[element, step]`.
    pub sigma_tilde: Array2<T>,
    /// `[element, step, window]`.
    pub residuals: Array3<T>,
    pub standardized: Array3<T>,
}

impl<T: Scalar> CalibrationModel<T> {
    pub fn fit(wf: &WindowedForecasts<T>) -> Result<Self> {
        let (residuals, sigma_hat) = residuals_and_sd(wf)?;
        let (n_l, n_f) = sigma_hat.dim();
        let floor = T::lit(SIGMA_MIN);
        let mut sigma_tilde = Array2::zeros((n_l, n_f));
        for l in 0..n_l {
            let row = monotone_spline(&sigma_hat.row(l).to_vec());
            for j in 0..n_f {
                sigma_tilde[[l, j]] = row[j].max(floor);
            }
        }
        let standardized = standardize(&residuals, &sigma_tilde)?;
        Ok(Self { sigma_hat, sigma_tilde, residuals, standardized })
    }

    pub fn n_l(&self) -> usize {
        self.sigma_tilde.nrows()
    }

    pub fn horizon(&self) -> usize {
        self.sigma_tilde.ncols()
    }

    /// Standardized residual vectors pooled over steps and windows, one row each
    /// (`n_f · n_w` rows, `n_l` columns).
    pub fn pooled_standardized(&self) -> Array2<T> {
        let (n_l, n_f, n_w) = self.standardized.dim();
        let mut out = Array2::zeros((n_f * n_w, n_l));
        for j in 0..n_f {
            for w in 0..n_w {
                for l in 0..n_l {
                    out[[j * n_w + w, l]] = self.standardized[[l, j, w]];
                }
            }
        }
        out
    }

    pub fn pit_values(&self) -> Vec<T> {
        self.standardized.iter().map(|&r| pit(r)).collect()
    }

    /// Calibrated intervals for an `n_f × n_l` point forecast.
    pub fn intervals(&self, mean: ArrayView2<T>, level: T) -> Result<Array3<T>> {
        let (n_f, n_l) = mean.dim();
        if n_l != self.n_l() || n_f > self.horizon() {
            return Err(Error::ShapeMismatch(format!("forecast {:?} vs calibration {:?}", mean.dim(), self.sigma_tilde.dim())));
        }
        let mut out = Array3::zeros((n_f, n_l, 2));
        for j in 0..n_f {
            for l in 0..n_l {
                let (lo, hi) = interval(mean[[j, l]], self.sigma_tilde[[l, j]], level)?;
                out[[j, l, 0]] = lo;
                out[[j, l, 1]] = hi;
            }
        }
        Ok(out)
    }
}

/// PIT values of the raw residuals scaled by the ensemble spread of each forecast.
pub fn uncalibrated_pit<T: Scalar>(wf: &WindowedForecasts<T>) -> Vec<T> {
    let floor = T::lit(SIGMA_MIN);
    wf.truth
        .iter()
        .zip(wf.forecast.iter())
        .zip(wf.spread.iter())
        .map(|((&y, &f), &s)| pit((y - f) / s.max(floor)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn wf_from(forecast: Array3<f64>, truth: Array3<f64>) -> WindowedForecasts<f64> {
        let (_, n_f, n_w) = forecast.dim();
        let spread = Array3::from_elem(forecast.raw_dim(), 1.0);
        WindowedForecasts { origin: 0, n_w, n_f, forecast, truth, spread }
    }

    #[test]
    fn exact_forecasts_have_zero_residuals() {
        let f = Array3::from_shape_fn((2, 3, 4), |(l, j, w)| (l + j * w) as f64);
        let wf = wf_from(f.clone(), f);
        let (r, sd) = residuals_and_sd(&wf).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
        assert!(sd.iter().all(|&v| v == 0.0));
        let model = CalibrationModel::fit(&wf).unwrap();
        assert!(model.sigma_tilde.iter().all(|&v| v == SIGMA_MIN));
    }

    #[test]
    fn two_window_sd_by_hand() {
        let f = Array3::zeros((1, 1, 2));
        let t = Array3::from_shape_vec((1, 1, 2), vec![1.0, 3.0]).unwrap();
        let (_, sd) = residuals_and_sd(&wf_from(f, t)).unwrap();
        assert!((sd[[0, 0]] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_offset_has_zero_sd() {
        let f = Array3::zeros((1, 2, 5));
        let t = Array3::from_elem((1, 2, 5), 7.5);
        let (_, sd) = residuals_and_sd(&wf_from(f, t)).unwrap();
        assert!(sd.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_window_is_rejected() {
        let f = Array3::zeros((1, 2, 1));
        assert!(matches!(residuals_and_sd(&wf_from(f.clone(), f)), Err(Error::TooFewWindows(1))));
    }

    #[test]
    fn spline_examples() {
        assert_eq!(monotone_spline(&[1.0, 2.0, 3.0]), vec![1.0, 2.0, 3.0]);
        let out = monotone_spline(&[2.0, 1.0, 3.0]);
        assert!(out[0] <= out[1] && out[1] <= out[2]);
        assert!(out[0] <= out[2]);
        assert_eq!(monotone_spline(&[0.0, 0.0, 0.0]), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn standardize_by_itself_gives_ones() {
        let sig = Array2::from_shape_fn((2, 3), |(l, j)| 1.0 + l as f64 + j as f64);
        let r = Array3::from_shape_fn((2, 3, 4), |(l, j, _)| sig[[l, j]]);
        let z = standardize(&r, &sig).unwrap();
        assert!(z.iter().all(|&v| v == 1.0));
        let mut bad = sig.clone();
        bad[[1, 2]] = 0.0;
        assert!(matches!(standardize(&r, &bad), Err(Error::ZeroSigma { element: 1, step: 2 })));
    }

    #[test]
    fn standardized_gaussian_residuals_have_unit_sd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sig = [0.5, 1.0, 1.5, 2.0, 3.0];
        let n_w = 200;
        let f = Array3::zeros((1, sig.len(), n_w));
        let t = Array3::from_shape_fn((1, sig.len(), n_w), |(_, j, _)| sig[j] * rng.sample::<f64, _>(StandardNormal));
        let model = CalibrationModel::fit(&wf_from(f, t)).unwrap();
        for j in 0..sig.len() {
            let v = model.standardized.slice(s![0, j, ..]).to_vec();
            let sd = sample_sd(&v);
            assert!((sd - 1.0).abs() < 0.1, "step {j}: {sd}");
        }
    }

    #[test]
    fn pit_and_interval_constants() {
        assert_eq!(pit(0.0), 0.5);
        assert!((pit(1.959964f64) - 0.975).abs() < 1e-6);
        let (lo, hi) = interval(0.0f64, 1.0, 0.95).unwrap();
        assert!((hi - 1.959964).abs() < 1e-6 && (lo + 1.959964).abs() < 1e-6);
        assert!(matches!(interval(0.0, 1.0, 1.0), Err(Error::BadLevel(_))));
        assert!(matches!(interval(0.0, 1.0, 0.0), Err(Error::BadLevel(_))));
    }

    #[test]
    fn interval_is_symmetric() {
        let (lo, hi) = interval(3.0f64, 0.7, 0.8).unwrap();
        assert!(((hi - 3.0) - (3.0 - lo)).abs() < 1e-15);
    }

    #[test]
    fn gaussian_truths_reach_nominal_coverage() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 5000;
        let truths: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let ints: Vec<(f64, f64)> = (0..n).map(|_| interval(0.0, 1.0, 0.95).unwrap()).collect();
        let c = coverage(&ints, &truths).unwrap();
        assert!((c - 0.95).abs() < 0.02, "{c}");
    }

    #[test]
    fn coverage_monotone_in_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let truths: Vec<f64> = (0..2000).map(|_| 1.3 * rng.sample::<f64, _>(StandardNormal)).collect();
        let mut prev = 0.0;
        for level in [0.6, 0.8, 0.95] {
            let ints: Vec<_> = truths.iter().map(|_| interval(0.0, 1.0, level).unwrap()).collect();
            let c = coverage(&ints, &truths).unwrap();
            assert!(c >= prev);
            prev = c;
        }
    }
}
