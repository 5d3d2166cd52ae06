//! Classical comparators: per-element ARFIMA models and the linear
//! state-space special case of the reservoir forecaster.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecasting::{iterative_forecast, ForecastEnsemble};
use crate::optim::{nelder_mead, NelderMeadConfig};
use crate::reservoir::{Activation, HyperParams};
use crate::scalar::Scalar;

/// Coefficients of `(1 − B)^d` up to lag `k`.
pub fn frac_diff_coeffs(d: f64, k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(k + 1);
    out.push(1.0);
    for j in 1..=k {
        let prev = out[j - 1];
        out.push(prev * (j as f64 - 1.0 - d) / j as f64);
    }
    out
}

/// Fitted ARFIMA(p, d, q) model
/// `φ(B)(1 − B)^d (x_t − μ) = θ(B) ε_t`, with `θ(B) = 1 + Σ θ_j B^j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArfimaModel {
    pub p: usize,
    pub q: usize,
    pub d: f64,
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    pub sigma2: f64,
    pub mean: f64,
    pub truncation: usize,
    pub aic: f64,
}

/// Candidate orders and difference grid for [`fit_arfima`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArfimaConfig {
    pub max_p: usize,
    pub max_q: usize,
    pub d_grid: Vec<f64>,
    pub max_truncation: usize,
}

impl Default for ArfimaConfig {
    fn default() -> Self {
        Self { max_p: 2, max_q: 2, d_grid: (0..10).map(|k| k as f64 * 0.05).collect(), max_truncation: 1000 }
    }
}

pub const MIN_SERIES: usize = 50;

/// Maps unconstrained values to coefficients of a polynomial with all roots
/// outside the unit circle (partial autocorrelations `tanh(y)` and the
/// Durbin–Levinson recursion).
fn constrained_poly(y: &[f64]) -> Vec<f64> {
    let mut a: Vec<f64> = Vec::with_capacity(y.len());
    for (k, &v) in y.iter().enumerate() {
        let r = v.tanh();
        let prev = a.clone();
        for j in 0..k {
            a[j] = prev[j] - r * prev[k - 1 - j];
        }
        a.push(r);
    }
    a
}

/// Partial autocorrelations of an AR polynomial by the step-down recursion;
/// `None` if any has magnitude ≥ 1.
pub fn ar_partials(phi: &[f64]) -> Option<Vec<f64>> {
    let mut a = phi.to_vec();
    let mut out = vec![0.0; phi.len()];
    for k in (0..phi.len()).rev() {
        let r = a[k];
        if !(r.abs() < 1.0) {
            return None;
        }
        out[k] = r;
        let denom = 1.0 - r * r;
        let prev = a.clone();
        for j in 0..k {
            a[j] = (prev[j] + r * prev[k - 1 - j]) / denom;
        }
        a.truncate(k);
    }
    Some(out)
}

pub fn is_stationary(phi: &[f64]) -> bool {
    ar_partials(phi).is_some()
}

fn frac_filter(x: &[f64], coeffs: &[f64]) -> Vec<f64> {
    let k = coeffs.len() - 1;
    (0..x.len())
        .map(|t| {
            let mut s = 0.0;
            for j in 0..=t.min(k) {
                s += coeffs[j] * x[t - j];
            }
            s
        })
        .collect()
}

/// Conditional sum of squared ARMA innovations of `u`, starting at `p`.
fn css(u: &[f64], phi: &[f64], theta: &[f64]) -> f64 {
    let p = phi.len();
    let mut e = vec![0.0; u.len()];
    let mut s = 0.0;
    for t in p..u.len() {
        let mut v = u[t];
        for (i, &f) in phi.iter().enumerate() {
            v -= f * u[t - 1 - i];
        }
        for (j, &th) in theta.iter().enumerate() {
            if t > j {
                v -= th * e[t - 1 - j];
            }
        }
        e[t] = v;
        s += v * v;
    }
    s
}

struct Candidate {
    p: usize,
    q: usize,
    d: f64,
    phi: Vec<f64>,
    theta: Vec<f64>,
    sigma2: f64,
    aic: f64,
}

fn fit_candidate(u: &[f64], p: usize, q: usize, d: f64) -> Option<Candidate> {
    let n_eff = (u.len() - p) as f64;
    let objective = |y: &[f64]| {
        let phi = constrained_poly(&y[..p]);
        // θ(B) = 1 + Σθ_j B^j, invertible when the negated partials map is used
        let theta: Vec<f64> = constrained_poly(&y[p..]).iter().map(|v| -v).collect();
        css(u, &phi, &theta)
    };
    let m = nelder_mead(objective, &vec![0.0; p + q], &NelderMeadConfig { initial_step: 0.2, ftol: 1e-12, max_evals: 3000 });
    if !m.f.is_finite() || m.f <= 0.0 {
        return None;
    }
    let phi = constrained_poly(&m.x[..p]);
    let theta: Vec<f64> = constrained_poly(&m.x[p..]).iter().map(|v| -v).collect();
    let sigma2 = m.f / n_eff;
    let aic = n_eff * sigma2.ln() + 2.0 * (p + q + 2) as f64;
    Some(Candidate { p, q, d, phi, theta, sigma2, aic })
}

/// Conditional-sum-of-squares ARFIMA fit with AIC order selection over
/// `p ≤ max_p`, `q ≤ max_q` and the `d` grid. Ties keep the earliest candidate
/// in `(d, p, q)` loop order.
pub fn fit_arfima<T: Scalar>(series: &[T], cfg: &ArfimaConfig) -> Result<ArfimaModel> {
    let n = series.len();
    if n < MIN_SERIES {
        return Err(Error::InsufficientData { needed: MIN_SERIES, got: n });
    }
    if cfg.d_grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let x: Vec<f64> = series.iter().map(|v| v.as_f64()).collect();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value in series".into()));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let truncation = n.min(cfg.max_truncation);
    let mut best: Option<Candidate> = None;
    for &d in &cfg.d_grid {
        let u = frac_filter(&centered, &frac_diff_coeffs(d, truncation));
        for p in 0..=cfg.max_p {
            for q in 0..=cfg.max_q {
                if let Some(c) = fit_candidate(&u, p, q, d) {
                    if best.as_ref().is_none_or(|b| c.aic < b.aic) {
                        best = Some(c);
                    }
                }
            }
        }
    }
    let c = best.ok_or_else(|| Error::OptimizerFailed("no ARFIMA candidate produced a finite fit".into()))?;
    if !is_stationary(&c.phi) {
        return Err(Error::NonStationaryFit);
    }
    Ok(ArfimaModel { p: c.p, q: c.q, d: c.d, phi: c.phi, theta: c.theta, sigma2: c.sigma2, mean, truncation, aic: c.aic })
}

impl ArfimaModel {
    /// Coefficients `g_k` of `φ(B)(1 − B)^d / θ(B)` up to the truncation lag, `g_0 = 1`.
    pub fn ar_infinity(&self) -> Vec<f64> {
        let k = self.truncation;
        let pi = frac_diff_coeffs(self.d, k);
        let mut c = pi.clone();
        for (i, &f) in self.phi.iter().enumerate() {
            for j in 0..=k {
                if j + i < k {
                    c[j + i + 1] -= f * pi[j];
                }
            }
        }
        let mut g = vec![0.0; k + 1];
        for j in 0..=k {
            let mut v = c[j];
            for (i, &th) in self.theta.iter().enumerate() {
                if j > i {
                    v -= th * g[j - 1 - i];
                }
            }
            g[j] = v;
        }
        g
    }

    /// MA(∞) weights `ψ_k` of the inverse of [`ArfimaModel::ar_infinity`].
    pub fn psi_weights(&self, h: usize) -> Vec<f64> {
        let g = self.ar_infinity();
        let mut psi = vec![0.0; h.max(1)];
        psi[0] = 1.0;
        for k in 1..psi.len() {
            let mut v = 0.0;
            for j in 1..=k.min(g.len() - 1) {
                v -= g[j] * psi[k - j];
            }
            psi[k] = v;
        }
        psi
    }
}

/// Point forecasts and Gaussian predictive SDs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArfimaForecast {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

/// Forecasts `n_f` steps past the end of `series` with the truncated AR(∞)
/// representation; values before the series start are taken at the mean.
pub fn forecast_arfima<T: Scalar>(model: &ArfimaModel, series: &[T], n_f: usize) -> ArfimaForecast {
    let g = model.ar_infinity();
    let mut z: Vec<f64> = series.iter().map(|v| v.as_f64() - model.mean).collect();
    let mut mean = Vec::with_capacity(n_f);
    for _ in 0..n_f {
        let t = z.len();
        let mut v = 0.0;
        for k in 1..g.len().min(t + 1) {
            v -= g[k] * z[t - k];
        }
        z.push(v);
        mean.push(v + model.mean);
    }
    let psi = model.psi_weights(n_f);
    let mut acc = 0.0;
    let sd = psi
        .iter()
        .take(n_f)
        .map(|p| {
            acc += p * p;
            (model.sigma2 * acc).sqrt()
        })
        .collect();
    ArfimaForecast { mean, sd }
}

/// Independent per-column fits and forecasts; returns `n_f × n_l` means and SDs.
pub fn arfima_columns<T: Scalar>(train: ArrayView2<T>, n_f: usize, cfg: &ArfimaConfig) -> Result<(Vec<ArfimaModel>, Array2<T>, Array2<T>)> {
    let n_l = train.ncols();
    let fits: Vec<Result<(ArfimaModel, ArfimaForecast)>> = (0..n_l)
        .into_par_iter()
        .map(|l| {
            let col = train.column(l).to_vec();
            let m = fit_arfima(&col, cfg)?;
            let f = forecast_arfima(&m, &col, n_f);
            Ok((m, f))
        })
        .collect();
    let mut models = Vec::with_capacity(n_l);
    let mut mean = Array2::zeros((n_f, n_l));
    let mut sd = Array2::zeros((n_f, n_l));
    for (l, r) in fits.into_iter().enumerate() {
        let (m, f) = r?;
        for j in 0..n_f {
            mean[[j, l]] = T::lit(f.mean[j]);
            sd[[j, l]] = T::lit(f.sd[j]);
        }
        models.push(m);
    }
    Ok((models, mean, sd))
}

/// The reservoir forecaster with identity activation and no leakage.
pub fn state_space_params<T: Scalar>(hp: &HyperParams<T>) -> HyperParams<T> {
    HyperParams { activation: Activation::Identity, alpha: T::one(), ..*hp }
}

pub fn state_space_forecast<T: Scalar>(train: ArrayView2<T>, hp: &HyperParams<T>, n_f: usize, n_ens: usize, seed: u64) -> Result<ForecastEnsemble<T>> {
    iterative_forecast(train, &state_space_params(hp), n_f, n_ens, seed)
}
