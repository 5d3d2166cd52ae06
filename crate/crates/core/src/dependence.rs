//! Joint dependence of standardized residuals across elements.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{floor_eigenvalues, min_eigenvalue, symmetrize, Cholesky};
use crate::scalar::{pairwise_sum, Scalar};
use crate::stats::normal_quantile;

/// Eigenvalue floor applied to estimated correlation matrices.
pub const PD_FLOOR: f64 = 1e-8;
/// Magnitude above which an off-diagonal entry counts as nonzero.
pub const NONZERO_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Empirical,
    Sparse { lambda_s: f64 },
    Spatial,
    Shrunk { delta_c: f64 },
    Identity,
}

/// Validated correlation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependenceModel<T> {
    c: Array2<T>,
    provenance: Provenance,
}

impl<T: Scalar> DependenceModel<T> {
    /// Checks symmetry, unit diagonal, entry bounds and PSD (min eigenvalue ≥ −1e-10).
    pub fn new(c: Array2<T>, provenance: Provenance) -> Result<Self> {
        let n = c.nrows();
        if c.ncols() != n {
            return Err(Error::ShapeMismatch(format!("correlation matrix is {}x{}", n, c.ncols())));
        }
        let tol = T::lit(1e-10).max(T::epsilon() * T::lit(16.0));
        for i in 0..n {
            if (c[[i, i]] - T::one()).abs() > tol {
                return Err(Error::InvalidInput(format!("diagonal entry {i} is {}", c[[i, i]])));
            }
            for j in 0..n {
                let v = c[[i, j]];
                if !v.is_finite() || v.abs() > T::one() + tol {
                    return Err(Error::InvalidInput(format!("entry ({i},{j}) = {v} outside [-1, 1]")));
                }
                if (v - c[[j, i]]).abs() > tol {
                    return Err(Error::InvalidInput(format!("asymmetric at ({i},{j})")));
                }
            }
        }
        if n > 0 && min_eigenvalue(c.view()) < -tol {
            return Err(Error::InvalidInput("correlation matrix is not positive semidefinite".into()));
        }
        Ok(Self { c, provenance })
    }

    pub fn identity(n: usize) -> Self {
        Self { c: Array2::eye(n), provenance: Provenance::Identity }
    }

    pub fn matrix(&self) -> &Array2<T> {
        &self.c
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn into_matrix(self) -> Array2<T> {
        self.c
    }
}

/// Sample correlation of the columns of an `N × n_ℓ` sample matrix.
pub fn empirical_correlation<T: Scalar>(samples: ArrayView2<T>) -> Result<DependenceModel<T>> {
    let (n, p) = samples.dim();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let mut centered = samples.to_owned();
    for (l, mut col) in centered.columns_mut().into_iter().enumerate() {
        let m = pairwise_sum(&col.to_vec()) / T::from_usize_lossy(n);
        col.mapv_inplace(|v| v - m);
        if col.iter().all(|&v| v == T::zero()) {
            return Err(Error::ZeroVariance(l));
        }
    }
    let cross = centered.t().dot(&centered);
    let mut c = Array2::eye(p);
    for i in 0..p {
        for j in (i + 1)..p {
            let r = (cross[[i, j]] / (cross[[i, i]] * cross[[j, j]]).sqrt()).max(-T::one()).min(T::one());
            c[[i, j]] = r;
            c[[j, i]] = r;
        }
    }
    DependenceModel::new(c, Provenance::Empirical)
}

/// Tuning for [`sparse_correlation`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SparseConfig {
    pub tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
}

impl Default for SparseConfig {
    fn default() -> Self {
        Self { tol: 1e-6, max_outer: 500, max_inner: 200 }
    }
}

/// Result of the penalized fit; `converged` is false when the outer loop hit
/// its iteration cap, in which case `model` is the best iterate found.
#[derive(Debug, Clone)]
pub struct SparseFit<T> {
    pub model: DependenceModel<T>,
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Scalar> SparseFit<T> {
    pub fn strict(self) -> Result<DependenceModel<T>> {
        if self.converged {
            Ok(self.model)
        } else {
            Err(Error::NotConverged(self.iterations))
        }
    }
}

fn l1_offdiag<T: Scalar>(c: &Array2<T>) -> f64 {
    let n = c.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += c[[i, j]].abs().as_f64();
            }
        }
    }
    s
}

/// `log det C + tr(C⁻¹ Ĉ)`, or `None` if `C` is not positive definite.
fn smooth_loss<T: Scalar>(c: &Array2<T>, c_hat: &Array2<T>) -> Option<(f64, Array2<T>)> {
    let chol = Cholesky::new(c.view()).ok()?;
    let inv = chol.inverse();
    let tr = (&inv * c_hat).sum();
    Some((chol.log_det().as_f64() + tr.as_f64(), inv))
}

fn project_pd<T: Scalar>(c: Array2<T>) -> Array2<T> {
    let floor = T::lit(PD_FLOOR);
    let mut c = symmetrize(c);
    for _ in 0..20 {
        if min_eigenvalue(c.view()) >= floor {
            break;
        }
        let f = floor_eigenvalues(c.view(), floor * T::lit(2.0));
        let d: Vec<T> = f.diag().iter().map(|v| v.sqrt()).collect();
        c = Array2::from_shape_fn(f.dim(), |(i, j)| if i == j { T::one() } else { f[[i, j]] / (d[i] * d[j]) });
        c = symmetrize(c);
    }
    c
}

/// Penalized correlation estimate minimizing
/// `log det C + tr(C⁻¹ Ĉ) + λ Σ_{i≠j} |C_ij|` over unit-diagonal positive-definite `C`.
///
/// Each outer step replaces `log det C` by its tangent plane at the current
/// iterate; the resulting convex problem is solved by proximal gradient with
/// soft-thresholding of the off-diagonal entries and step halving.
pub fn sparse_correlation<T: Scalar>(c_hat: &DependenceModel<T>, lambda_s: f64, cfg: &SparseConfig) -> Result<SparseFit<T>> {
    if !(lambda_s >= 0.0) || !lambda_s.is_finite() {
        return Err(Error::InvalidInput(format!("penalty must be non-negative, got {lambda_s}")));
    }
    let s = c_hat.matrix().clone();
    let n = s.nrows();
    let lam = T::lit(lambda_s);
    let mut c = project_pd(s.clone());
    let objective_of = |c: &Array2<T>| smooth_loss(c, &s).map(|(v, _)| v + lambda_s * l1_offdiag(c));
    let mut obj = objective_of(&c).ok_or_else(|| Error::SingularSystem("initial estimate not positive definite".into()))?;
    let mut trace = vec![obj];
    let mut converged = false;
    let mut iterations = 0;
    let mut step = 1.0f64;
    for _ in 0..cfg.max_outer {
        iterations += 1;
        let a = Cholesky::new(c.view())?.inverse();
        // majorizer without constants: tr(A C) + tr(C⁻¹ S) + λ‖P∗C‖₁
        let g = |x: &Array2<T>| {
            let inv = Cholesky::new(x.view()).ok()?.inverse();
            let v = (&a * x).sum() + (&inv * &s).sum();
            Some((v.as_f64(), inv))
        };
        let mut x = c.clone();
        let (mut gx, mut inv_x) = g(&x).expect("current iterate is positive definite");
        for _ in 0..cfg.max_inner {
            let grad = &a - &inv_x.dot(&s).dot(&inv_x);
            let mut t = (step * 2.0).min(1e3);
            let mut accepted = None;
            for _ in 0..60 {
                let tt = T::lit(t);
                let thr = tt * lam;
                let mut y = Array2::eye(n);
                for i in 0..n {
                    for j in 0..n {
                        if i != j {
                            let v = x[[i, j]] - tt * grad[[i, j]];
                            y[[i, j]] = v.signum() * (v.abs() - thr).max(T::zero());
                        }
                    }
                }
                let y = symmetrize(y);
                if let Some((gy, inv_y)) = g(&y) {
                    let diff = &y - &x;
                    let bound = gx + (&grad * &diff).sum().as_f64() + diff.mapv(|v| v * v).sum().as_f64() / (2.0 * t);
                    if gy <= bound + 1e-12 * gx.abs().max(1.0) {
                        accepted = Some((y, gy, inv_y));
                        break;
                    }
                }
                t *= 0.5;
            }
            step = t;
            let Some((y, gy, inv_y)) = accepted else { break };
            let change = (&y - &x).mapv(|v| v.abs().as_f64()).fold(0.0f64, |m, &v| m.max(v));
            let full_old = gx + lambda_s * l1_offdiag(&x);
            let full_new = gy + lambda_s * l1_offdiag(&y);
            if full_new > full_old {
                break;
            }
            x = y;
            gx = gy;
            inv_x = inv_y;
            if change < cfg.tol * 0.1 {
                break;
            }
        }
        let new_obj = objective_of(&x).expect("inner iterates stay positive definite");
        if new_obj > obj {
            // the tangent bound guarantees descent; keep the previous iterate on round-off
            converged = true;
            break;
        }
        let rel = (obj - new_obj).abs() / obj.abs().max(1.0);
        c = x;
        obj = new_obj;
        trace.push(obj);
        if rel < cfg.tol {
            converged = true;
            break;
        }
    }
    let c = project_pd(c);
    let mut c = symmetrize(c);
    for i in 0..n {
        c[[i, i]] = T::one();
    }
    let model = DependenceModel::new(c, Provenance::Sparse { lambda_s })?;
    Ok(SparseFit { model, objective: trace, iterations, converged })
}

/// Penalized objective value at `c` for the empirical estimate `c_hat`.
pub fn sparse_objective<T: Scalar>(c: &Array2<T>, c_hat: &Array2<T>, lambda_s: f64) -> Option<f64> {
    smooth_loss(c, c_hat).map(|(v, _)| v + lambda_s * l1_offdiag(c))
}

/// Variance of the element-average of unit-variance variables: `1ᵀC1 / n²`.
pub fn grand_mean_variance<T: Scalar>(c: &DependenceModel<T>) -> T {
    let n = T::from_usize_lossy(c.dim());
    pairwise_sum(c.matrix().as_slice().expect("standard layout")) / (n * n)
}

/// Variance of `R̃_ℓ − R̃_ℓ′`.
pub fn difference_variance<T: Scalar>(c: &DependenceModel<T>, l: usize, l2: usize) -> Result<T> {
    let n = c.dim();
    for idx in [l, l2] {
        if idx >= n {
            return Err(Error::IndexOutOfRange { index: idx, len: n });
        }
    }
    let m = c.matrix();
    Ok(m[[l, l]] + m[[l2, l2]] - T::lit(2.0) * m[[l, l2]])
}

/// Fraction of off-diagonal entries with magnitude above [`NONZERO_TOL`].
pub fn nonzero_proportion<T: Scalar>(c: &DependenceModel<T>) -> f64 {
    let n = c.dim();
    if n < 2 {
        return 0.0;
    }
    let m = c.matrix();
    let tol = T::lit(NONZERO_TOL);
    let mut k = 0usize;
    for i in 0..n {
        for j in 0..n {
            if i != j && m[[i, j]].abs() > tol {
                k += 1;
            }
        }
    }
    k as f64 / (n * (n - 1)) as f64
}

/// Adjacent pairs `(ℓ, ℓ+1)` on a ring whose correlation magnitude lies in `[lo, hi]`.
pub fn ring_pairs_in_band<T: Scalar>(c: &DependenceModel<T>, lo: f64, hi: f64) -> Vec<(usize, usize)> {
    let n = c.dim();
    (0..n)
        .map(|l| (l, (l + 1) % n))
        .filter(|&(a, b)| a != b)
        .filter(|&(a, b)| {
            let r = c.matrix()[[a, b]].abs().as_f64();
            r >= lo && r <= hi
        })
        .collect()
}

/// Share of values `v` with `|v| ≤ z_{(1+level)/2} · sd`.
pub fn central_coverage<T: Scalar>(values: &[T], sd: T, level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::BadLevel(level));
    }
    if values.is_empty() {
        return Ok(f64::NAN);
    }
    let half = normal_quantile((1.0 + level) / 2.0) * sd.as_f64();
    Ok(values.iter().filter(|v| v.as_f64().abs() <= half).count() as f64 / values.len() as f64)
}

/// Coverage of the element-averaged standardized residuals (rows of `samples`)
/// under the grand-mean variance implied by `c`.
pub fn grand_mean_coverage<T: Scalar>(samples: ArrayView2<T>, c: &DependenceModel<T>, level: f64) -> Result<f64> {
    if samples.ncols() != c.dim() {
        return Err(Error::ShapeMismatch(format!("{} columns vs {}-dimensional model", samples.ncols(), c.dim())));
    }
    let means: Vec<T> = samples.rows().into_iter().map(|r| pairwise_sum(&r.to_vec()) / T::from_usize_lossy(r.len())).collect();
    central_coverage(&means, grand_mean_variance(c).sqrt(), level)
}

/// Coverage of pair differences `R̃_ℓ − R̃_ℓ′` under the variance implied by `c`.
pub fn difference_coverage<T: Scalar>(samples: ArrayView2<T>, c: &DependenceModel<T>, l: usize, l2: usize, level: f64) -> Result<f64> {
    let var = difference_variance(c, l, l2)?;
    let diffs: Vec<T> = samples.rows().into_iter().map(|r| r[l] - r[l2]).collect();
    central_coverage(&diffs, var.max(T::zero()).sqrt(), level)
}
