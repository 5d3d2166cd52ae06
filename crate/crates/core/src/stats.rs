//! Descriptive statistics and Gaussian helpers.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::scalar::{pairwise_sum, Scalar};

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Standard normal CDF.
pub fn normal_cdf<T: Scalar>(x: T) -> T {
    T::lit(std_normal().cdf(x.as_f64()))
}

/// Standard normal quantile.
pub fn normal_quantile<T: Scalar>(p: T) -> T {
    T::lit(std_normal().inverse_cdf(p.as_f64()))
}

pub fn normal_pdf<T: Scalar>(x: T) -> T {
    let x = x.as_f64();
    T::lit((-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt())
}

pub fn mean<T: Scalar>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::nan();
    }
    pairwise_sum(xs) / T::from_usize_lossy(xs.len())
}

/// Sample standard deviation with denominator `n - 1`.
pub fn sample_sd<T: Scalar>(xs: &[T]) -> T {
    let n = xs.len();
    if n < 2 {
        return T::nan();
    }
    let m = mean(xs);
    let sq: Vec<T> = xs.iter().map(|&x| (x - m) * (x - m)).collect();
    (pairwise_sum(&sq) / T::from_usize_lossy(n - 1)).sqrt()
}

/// Linear-interpolation quantile (the usual "type 7" definition).
pub fn quantile<T: Scalar>(xs: &[T], q: f64) -> T {
    if xs.is_empty() {
        return T::nan();
    }
    let mut v: Vec<T> = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = T::lit(h - lo as f64);
    v[lo] + (v[hi] - v[lo]) * frac
}

pub fn median<T: Scalar>(xs: &[T]) -> T {
    quantile(xs, 0.5)
}

pub fn iqr<T: Scalar>(xs: &[T]) -> T {
    quantile(xs, 0.75) - quantile(xs, 0.25)
}

/// Median and interquartile range, the summary used in every results table.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MedianIqr {
    pub median: f64,
    pub iqr: f64,
}

impl MedianIqr {
    pub fn of<T: Scalar>(xs: &[T]) -> Self {
        Self { median: median(xs).as_f64(), iqr: iqr(xs).as_f64() }
    }
}

impl std::fmt::Display for MedianIqr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2} ({:.2})", self.median, self.iqr)
    }
}

/// Kolmogorov–Smirnov distance between the sample and the standard uniform law.
pub fn ks_uniform<T: Scalar>(xs: &[T]) -> f64 {
    let mut v: Vec<f64> = xs.iter().map(|x| x.as_f64()).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &u) in v.iter().enumerate() {
        let u = u.clamp(0.0, 1.0);
        d = d.max((i as f64 + 1.0) / n - u).max(u - i as f64 / n);
    }
    d
}

/// Asymptotic p-value of the one-sample KS statistic `d` for sample size `n`.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = sign * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
