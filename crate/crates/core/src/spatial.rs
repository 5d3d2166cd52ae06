//! Nonstationary kernel-convolution correlation, shrinkage toward the
//! empirical correlation, and kriging of calibrated station forecasts.

use ndarray::{Array1, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dependence::{grand_mean_coverage, DependenceModel, Provenance};
use crate::error::{Error, Result};
use crate::linalg::{symmetrize, Cholesky};
use crate::optim::golden_section;
use crate::scalar::Scalar;

/// Planar location `(x, y)`, typically `(lon, lat)`.
pub type Point<T> = [T; 2];

/// Symmetric 2×2 matrix stored as `[[a, b], [b, c]]`.
pub type Mat2<T> = [[T; 2]; 2];

/// Diagonal jitter used when the nugget is zero.
pub const KRIGING_JITTER: f64 = 1e-8;

fn det2<T: Scalar>(m: &Mat2<T>) -> T {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

fn dist2<T: Scalar>(a: &Point<T>, b: &Point<T>) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialModel<T> {
    pub knots: Vec<Point<T>>,
    /// Kernel matrix per knot.
    pub kernels: Vec<Mat2<T>>,
    /// Squared-distance bandwidth of the knot weights.
    pub bandwidth: T,
    pub nugget: T,
}

impl<T: Scalar> SpatialModel<T> {
    /// Isotropic kernels `V_z = φ_z² I`.
    pub fn isotropic(knots: Vec<Point<T>>, ranges: &[T], bandwidth: T, nugget: T) -> Result<Self> {
        if ranges.len() != knots.len() {
            return Err(Error::ShapeMismatch(format!("{} ranges for {} knots", ranges.len(), knots.len())));
        }
        let kernels = ranges.iter().map(|&p| [[p * p, T::zero()], [T::zero(), p * p]]).collect();
        let m = Self { knots, kernels, bandwidth, nugget };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.knots.is_empty() || self.knots.len() != self.kernels.len() {
            return Err(Error::InvalidInput("model needs one kernel per knot and at least one knot".into()));
        }
        if !(self.bandwidth > T::zero()) {
            return Err(Error::InvalidInput("knot bandwidth must be positive".into()));
        }
        if !(self.nugget >= T::zero() && self.nugget < T::one()) {
            return Err(Error::InvalidInput(format!("nugget {} outside [0, 1)", self.nugget)));
        }
        for (z, v) in self.kernels.iter().enumerate() {
            let sym = v[0][1] == v[1][0];
            if !sym || !(v[0][0] > T::zero()) || !(det2(v) > T::zero()) {
                return Err(Error::InvalidInput(format!("kernel {z} is not symmetric positive definite")));
            }
        }
        Ok(())
    }

    /// Isotropic range `sqrt(V_z[0][0])` per knot.
    pub fn ranges(&self) -> Vec<T> {
        self.kernels.iter().map(|v| v[0][0].sqrt()).collect()
    }

    /// Normalized knot weights at `s`.
    pub fn weights(&self, s: &Point<T>) -> Vec<T> {
        knot_weights(&self.knots, self.bandwidth, s)
    }

    /// Mixed kernel matrix `V(s) = Σ w_z(s) V_z`.
    pub fn kernel_at(&self, s: &Point<T>) -> Mat2<T> {
        let w = self.weights(s);
        let mut v = [[T::zero(); 2]; 2];
        for (wz, vz) in w.iter().zip(&self.kernels) {
            for r in 0..2 {
                for c in 0..2 {
                    v[r][c] += *wz * vz[r][c];
                }
            }
        }
        v
    }
}

/// Normalized Gaussian weights `∝ exp(−‖s − b_z‖² / (2λ))`.
pub fn knot_weights<T: Scalar>(knots: &[Point<T>], bandwidth: T, s: &Point<T>) -> Vec<T> {
    let two = T::lit(2.0);
    let e: Vec<T> = knots.iter().map(|b| -dist2(s, b) / (two * bandwidth)).collect();
    // shift by the maximum exponent so far-away points keep finite weights
    let m = e.iter().copied().fold(T::neg_infinity(), T::max);
    let raw: Vec<T> = e.iter().map(|&v| (v - m).exp()).collect();
    let total: T = raw.iter().copied().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Correlation between `s` and `s2` under the kernel-convolution model with an
/// exponential kernel; the nugget scales only off-site values.
pub fn nonstationary_correlation<T: Scalar>(s: &Point<T>, s2: &Point<T>, model: &SpatialModel<T>) -> T {
    if s == s2 {
        return T::one();
    }
    correlation_with_kernels(s, s2, &model.kernel_at(s), &model.kernel_at(s2), model.nugget)
}

fn correlation_with_kernels<T: Scalar>(s: &Point<T>, s2: &Point<T>, v1: &Mat2<T>, v2: &Mat2<T>, nugget: T) -> T {
    let half = T::lit(0.5);
    let avg = [
        [half * (v1[0][0] + v2[0][0]), half * (v1[0][1] + v2[0][1])],
        [half * (v1[1][0] + v2[1][0]), half * (v1[1][1] + v2[1][1])],
    ];
    let da = det2(&avg);
    let pref = det2(v1).sqrt().sqrt() * det2(v2).sqrt().sqrt() / da.sqrt();
    let dx = s[0] - s2[0];
    let dy = s[1] - s2[1];
    // (s − s′)ᵀ avg⁻¹ (s − s′) with the explicit 2×2 inverse
    let q = (avg[1][1] * dx * dx - (avg[0][1] + avg[1][0]) * dx * dy + avg[0][0] * dy * dy) / da;
    (T::one() - nugget) * pref * (-q.max(T::zero()).sqrt()).exp()
}

/// Correlation matrix over a station set, tagged as spatial.
pub fn spatial_correlation_matrix<T: Scalar>(model: &SpatialModel<T>, stations: &[Point<T>]) -> Result<DependenceModel<T>> {
    DependenceModel::new(correlation_block(model, stations), Provenance::Spatial)
}

fn correlation_block<T: Scalar>(model: &SpatialModel<T>, pts: &[Point<T>]) -> Array2<T> {
    let n = pts.len();
    let kernels: Vec<Mat2<T>> = pts.iter().map(|p| model.kernel_at(p)).collect();
    let mut c = Array2::eye(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = if pts[i] == pts[j] { T::one() } else { correlation_with_kernels(&pts[i], &pts[j], &kernels[i], &kernels[j], model.nugget) };
            c[[i, j]] = v;
            c[[j, i]] = v;
        }
    }
    c
}

/// Rectangular `rows × cols` knot grid spanning the bounding box of `pts`.
pub fn grid_knots<T: Scalar>(pts: &[Point<T>], rows: usize, cols: usize) -> Result<Vec<Point<T>>> {
    if pts.is_empty() || rows == 0 || cols == 0 {
        return Err(Error::InvalidInput("knot grid needs stations and a positive layout".into()));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (pts[0][0], pts[0][0], pts[0][1], pts[0][1]);
    for p in pts {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let at = |lo: T, hi: T, k: usize, n: usize| {
        if n == 1 {
            (lo + hi) / T::lit(2.0)
        } else {
            lo + (hi - lo) * T::from_usize_lossy(k) / T::from_usize_lossy(n - 1)
        }
    };
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out.push([at(x0, x1, c, cols), at(y0, y1, r, rows)]);
        }
    }
    Ok(out)
}

/// `(d_min / 2)²` for the minimum inter-knot distance; a single knot gets the
/// squared half-diameter of `fallback`.
pub fn default_bandwidth<T: Scalar>(knots: &[Point<T>], fallback: &[Point<T>]) -> T {
    let mut dmin = T::infinity();
    for i in 0..knots.len() {
        for j in (i + 1)..knots.len() {
            dmin = dmin.min(dist2(&knots[i], &knots[j]).sqrt());
        }
    }
    if !dmin.is_finite() || dmin == T::zero() {
        dmin = diameter(fallback);
    }
    if dmin == T::zero() {
        dmin = T::one();
    }
    let h = dmin / T::lit(2.0);
    h * h
}

fn diameter<T: Scalar>(pts: &[Point<T>]) -> T {
    let mut d = T::zero();
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            d = d.max(dist2(&pts[i], &pts[j]).sqrt());
        }
    }
    d
}

/// Settings for [`fit_local_ranges`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalFitConfig {
    /// Minimum number of stations whose closest knot is `z`.
    pub min_local: usize,
    pub rounds: usize,
    pub max_nugget: f64,
}

impl Default for LocalFitConfig {
    fn default() -> Self {
        Self { min_local: 3, rounds: 6, max_nugget: 0.95 }
    }
}

struct PairStats {
    i: usize,
    j: usize,
    d: f64,
    sii: f64,
    sjj: f64,
    sij: f64,
}

/// Pairwise bivariate-normal log-likelihood (unit variances, constants dropped).
fn pair_loglik(p: &PairStats, r: f64, n: f64) -> f64 {
    let one_m = (1.0 - r * r).max(1e-12);
    -0.5 * (n * one_m.ln() + (p.sii + p.sjj - 2.0 * r * p.sij) / one_m)
}

/// Per-knot exponential ranges and a shared nugget by locally weighted
/// pairwise likelihood of the standardized residual rows in `samples`
/// (`N × n_s`, columns aligned with `stations`).
pub fn fit_local_ranges<T: Scalar>(
    stations: &[Point<T>],
    samples: ArrayView2<T>,
    knots: &[Point<T>],
    bandwidth: T,
    cfg: &LocalFitConfig,
) -> Result<SpatialModel<T>> {
    let ns = stations.len();
    if samples.ncols() != ns {
        return Err(Error::ShapeMismatch(format!("{} sample columns for {} stations", samples.ncols(), ns)));
    }
    if knots.is_empty() {
        return Err(Error::InvalidInput("no knots".into()));
    }
    if samples.nrows() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: samples.nrows() });
    }
    let w: Vec<Vec<f64>> = stations.iter().map(|s| knot_weights(knots, bandwidth, s).iter().map(|v| v.as_f64()).collect()).collect();
    for z in 0..knots.len() {
        let local = w.iter().filter(|wi| (0..knots.len()).all(|k| wi[z] >= wi[k])).count();
        if local < cfg.min_local {
            return Err(Error::InsufficientLocalData(z));
        }
    }
    let x: Array2<f64> = samples.mapv(|v| v.as_f64());
    let mut pairs = Vec::with_capacity(ns * (ns - 1) / 2);
    let mut dmin = f64::INFINITY;
    for i in 0..ns {
        for j in (i + 1)..ns {
            let d = dist2(&stations[i], &stations[j]).as_f64().sqrt();
            if d == 0.0 {
                continue;
            }
            dmin = dmin.min(d);
            let (ci, cj) = (x.column(i), x.column(j));
            pairs.push(PairStats { i, j, d, sii: ci.dot(&ci), sjj: cj.dot(&cj), sij: ci.dot(&cj) });
        }
    }
    if pairs.is_empty() {
        return Err(Error::InsufficientLocalData(0));
    }
    let dmax = pairs.iter().map(|p| p.d).fold(0.0, f64::max);
    let n = x.nrows() as f64;
    let nz = knots.len();
    let local_obj = |z: usize, phi: f64, nugget: f64| -> f64 {
        pairs
            .iter()
            .map(|p| w[p.i][z] * w[p.j][z] * pair_loglik(p, (1.0 - nugget) * (-p.d / phi).exp(), n))
            .sum::<f64>()
    };
    let (lo, hi) = ((dmin / 20.0).ln(), (dmax * 20.0).ln());
    let mut phi = vec![(dmin * dmax).sqrt(); nz];
    let mut nugget = 0.0;
    for _ in 0..cfg.rounds {
        for z in 0..nz {
            let (lp, _) = golden_section(|lp| -local_obj(z, lp.exp(), nugget), lo, hi, 1e-6, 200);
            phi[z] = lp.exp();
        }
        let (g, _) = golden_section(|g| -(0..nz).map(|z| local_obj(z, phi[z], g)).sum::<f64>(), 0.0, cfg.max_nugget, 1e-6, 200);
        // the boundary is not probed by golden section; check it explicitly
        let at_zero = (0..nz).map(|z| local_obj(z, phi[z], 0.0)).sum::<f64>();
        let at_g = (0..nz).map(|z| local_obj(z, phi[z], g)).sum::<f64>();
        nugget = if at_zero >= at_g { 0.0 } else { g };
    }
    let ranges: Vec<T> = phi.iter().map(|&p| T::lit(p)).collect();
    SpatialModel::isotropic(knots.to_vec(), &ranges, bandwidth, T::lit(nugget))
}

/// Convex combination `(1−δ) C_spatial + δ Ĉ`.
pub fn shrink<T: Scalar>(c_spatial: &DependenceModel<T>, c_hat: &DependenceModel<T>, delta_c: f64) -> Result<DependenceModel<T>> {
    if !(0.0..=1.0).contains(&delta_c) {
        return Err(Error::InvalidInput(format!("shrinkage weight {delta_c} outside [0, 1]")));
    }
    if c_spatial.dim() != c_hat.dim() {
        return Err(Error::ShapeMismatch(format!("{} vs {}", c_spatial.dim(), c_hat.dim())));
    }
    let d = T::lit(delta_c);
    let m = if delta_c == 0.0 {
        c_spatial.matrix().clone()
    } else if delta_c == 1.0 {
        c_hat.matrix().clone()
    } else {
        c_spatial.matrix().mapv(|v| (T::one() - d) * v) + c_hat.matrix().mapv(|v| d * v)
    };
    DependenceModel::new(m, Provenance::Shrunk { delta_c })
}

/// Candidate shrinkage weights `0, 0.05, …, 1`.
pub fn delta_grid() -> Vec<f64> {
    (0..=20).map(|k| k as f64 * 0.05).collect()
}

/// Grid search for the shrinkage weight whose grand-mean coverage of the rows
/// of `truths` is closest to nominal, averaged over `levels`. Ties keep the
/// smaller weight.
pub fn select_delta<T: Scalar>(c_spatial: &DependenceModel<T>, c_hat: &DependenceModel<T>, truths: ArrayView2<T>, levels: &[f64]) -> Result<f64> {
    let mut best = (f64::INFINITY, 0.0);
    for d in delta_grid() {
        let c = shrink(c_spatial, c_hat, d)?;
        let mut gap = 0.0;
        for &lv in levels {
            gap += (grand_mean_coverage(truths, &c, lv)? - lv).abs();
        }
        gap /= levels.len().max(1) as f64;
        if gap < best.0 {
            best = (gap, d);
        }
    }
    Ok(best.1)
}

/// Kriged fields over a set of points and times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolatedField<T> {
    pub points: Vec<Point<T>>,
    /// `n_t × n_points` predicted mean.
    pub mean: Array2<T>,
    /// `n_t × n_points` kriging standard deviation `σ̃₀·sqrt(1 − cᵀC⁻¹c)`.
    pub sd: Array2<T>,
    /// `n_t × n_points` interpolated calibrated forecast SD `σ̃₀`.
    pub forecast_sd: Array2<T>,
}

impl<T: Scalar> InterpolatedField<T> {
    pub fn n_times(&self) -> usize {
        self.mean.nrows()
    }
}

/// Rectangular prediction grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub min_x: f64,
    pub max_x: f64,
    pub min_y: f64,
    pub max_y: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    /// Points in row-major order (`y` outer, `x` inner).
    pub fn points<T: Scalar>(&self) -> Result<Vec<Point<T>>> {
        if self.nx == 0 || self.ny == 0 || !(self.max_x >= self.min_x) || !(self.max_y >= self.min_y) {
            return Err(Error::InvalidInput("empty or inverted grid".into()));
        }
        let step = |lo: f64, hi: f64, k: usize, n: usize| if n == 1 { (lo + hi) / 2.0 } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 };
        let mut out = Vec::with_capacity(self.nx * self.ny);
        for r in 0..self.ny {
            for c in 0..self.nx {
                out.push([T::lit(step(self.min_x, self.max_x, c, self.nx)), T::lit(step(self.min_y, self.max_y, r, self.ny))]);
            }
        }
        Ok(out)
    }
}

/// Factorized station system shared by all prediction points.
pub struct KrigingSystem<'a, T> {
    model: &'a SpatialModel<T>,
    stations: &'a [Point<T>],
    kernels: Vec<Mat2<T>>,
    chol: Cholesky<T>,
}

impl<'a, T: Scalar> KrigingSystem<'a, T> {
    pub fn new(model: &'a SpatialModel<T>, stations: &'a [Point<T>]) -> Result<Self> {
        let mut c = correlation_block(model, stations);
        if model.nugget == T::zero() {
            for i in 0..stations.len() {
                c[[i, i]] += T::lit(KRIGING_JITTER);
            }
        }
        let chol = Cholesky::new(symmetrize(c).view()).map_err(|_| Error::SingularKrigingSystem)?;
        let kernels = stations.iter().map(|p| model.kernel_at(p)).collect();
        Ok(Self { model, stations, kernels, chol })
    }

    /// Station-to-point correlations.
    pub fn cross(&self, p: &Point<T>) -> Array1<T> {
        let vp = self.model.kernel_at(p);
        Array1::from_iter(self.stations.iter().zip(&self.kernels).map(|(s, vs)| {
            if s == p {
                T::one() - self.model.nugget
            } else {
                correlation_with_kernels(s, p, vs, &vp, self.model.nugget)
            }
        }))
    }

    /// Simple-kriging weights and the variance factor `1 − cᵀC⁻¹c` (clamped to `[0, 1]`).
    pub fn weights(&self, p: &Point<T>) -> (Array1<T>, T) {
        if let Some(k) = self.stations.iter().position(|s| s == p) {
            if self.model.nugget == T::zero() {
                let mut w = Array1::zeros(self.stations.len());
                w[k] = T::one();
                return (w, T::zero());
            }
        }
        let c0 = self.cross(p);
        let w = self.chol.solve_vec(c0.view());
        let f = (T::one() - w.dot(&c0)).max(T::zero()).min(T::one());
        (w, f)
    }
}

/// Inverse-squared-distance interpolation; exact at stations.
pub fn idw<T: Scalar>(stations: &[Point<T>], values: &[T], p: &Point<T>) -> T {
    if let Some(k) = stations.iter().position(|s| s == p) {
        return values[k];
    }
    let mut num = T::zero();
    let mut den = T::zero();
    for (s, &v) in stations.iter().zip(values) {
        let w = T::one() / dist2(s, p);
        num += w * v;
        den += w;
    }
    num / den
}

/// Simple kriging of standardized anomalies around the per-time station mean.
///
/// `means` and `sigma` are `n_t × n_s`; the result covers `points` at every time.
pub fn krige<T: Scalar>(
    means: ArrayView2<T>,
    sigma: ArrayView2<T>,
    model: &SpatialModel<T>,
    stations: &[Point<T>],
    points: &[Point<T>],
) -> Result<InterpolatedField<T>> {
    let (nt, ns) = means.dim();
    if sigma.dim() != (nt, ns) || stations.len() != ns {
        return Err(Error::ShapeMismatch(format!("means {:?}, sigma {:?}, {} stations", means.dim(), sigma.dim(), stations.len())));
    }
    if ns == 0 {
        return Err(Error::InvalidInput("no stations".into()));
    }
    for ((t, s), &v) in sigma.indexed_iter() {
        if !(v > T::zero()) {
            return Err(Error::ZeroSigma { element: s, step: t });
        }
    }
    let sys = KrigingSystem::new(model, stations)?;
    let baseline: Vec<T> = means.rows().into_iter().map(|r| r.sum() / T::from_usize_lossy(ns)).collect();
    let anomalies = Array2::from_shape_fn((nt, ns), |(t, s)| (means[[t, s]] - baseline[t]) / sigma[[t, s]]);
    let cols: Vec<(Vec<T>, Vec<T>, Vec<T>)> = points
        .par_iter()
        .map(|p| {
            let (w, f) = sys.weights(p);
            let mut m = Vec::with_capacity(nt);
            let mut sd = Vec::with_capacity(nt);
            let mut fsd = Vec::with_capacity(nt);
            for t in 0..nt {
                let s0 = idw(stations, &sigma.row(t).to_vec(), p);
                let a0 = w.dot(&anomalies.row(t));
                m.push(baseline[t] + s0 * a0);
                sd.push(s0 * f.sqrt());
                fsd.push(s0);
            }
            (m, sd, fsd)
        })
        .collect();
    let np = points.len();
    let mut mean = Array2::zeros((nt, np));
    let mut sd = Array2::zeros((nt, np));
    let mut forecast_sd = Array2::zeros((nt, np));
    for (k, (m, s, f)) in cols.into_iter().enumerate() {
        for t in 0..nt {
            mean[[t, k]] = m[t];
            sd[[t, k]] = s[t];
            forecast_sd[[t, k]] = f[t];
        }
    }
    Ok(InterpolatedField { points: points.to_vec(), mean, sd, forecast_sd })
}
