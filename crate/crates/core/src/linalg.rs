//! Small dense and sparse linear-algebra kernels used across the crate.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, T)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            assert!(r < rows && c < cols, "triplet ({r},{c}) outside {rows}x{cols}");
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self { rows, cols, row_ptr, col_idx, values }
    }

    pub fn from_dense(dense: ArrayView2<T>) -> Self {
        let mut trip = Vec::new();
        for ((r, c), &v) in dense.indexed_iter() {
            if v != T::zero() {
                trip.push((r, c, v));
            }
        }
        Self::from_triplets(dense.nrows(), dense.ncols(), trip)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn to_dense(&self) -> Array2<T> {
        let mut out = Array2::zeros((self.rows, self.cols));
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                out[[r, self.col_idx[k]]] = self.values[k];
            }
        }
        out
    }

    /// `out += scale * self * x`
    pub fn mul_vec_add(&self, x: &[T], scale: T, out: &mut [T]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = T::zero();
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *o += scale * acc;
        }
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> CsrMatrix<U> {
        CsrMatrix {
            rows: self.rows,
            cols: self.cols,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.rows];
        self.mul_vec_add(x, T::one(), &mut out);
        out
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    l: Array2<T>,
}

impl<T: Scalar> Cholesky<T> {
    pub fn new(a: ArrayView2<T>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch(format!("cholesky of {}x{}", n, a.ncols())));
        }
        let mut l = Array2::<T>::zeros((n, n));
        for j in 0..n {
            let mut d = a[[j, j]];
            for k in 0..j {
                d -= l[[j, k]] * l[[j, k]];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::SingularSystem(format!("non-positive pivot at {j}")));
            }
            let d = d.sqrt();
            l[[j, j]] = d;
            for i in (j + 1)..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / d;
            }
        }
        Ok(Self { l })
    }

    pub fn factor(&self) -> &Array2<T> {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn solve_vec(&self, b: ArrayView1<T>) -> Array1<T> {
        let n = self.dim();
        let mut y = b.to_owned();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[[i, k]] * y[k];
            }
            y[i] = s / self.l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[[k, i]] * y[k];
            }
            y[i] = s / self.l[[i, i]];
        }
        y
    }

    pub fn solve(&self, b: ArrayView2<T>) -> Array2<T> {
        let mut out = Array2::zeros(b.raw_dim());
        for (j, col) in b.axis_iter(Axis(1)).enumerate() {
            out.column_mut(j).assign(&self.solve_vec(col));
        }
        out
    }

    pub fn inverse(&self) -> Array2<T> {
        let n = self.dim();
        let inv = self.solve(Array2::<T>::eye(n).view());
        symmetrize(inv)
    }

    pub fn log_det(&self) -> T {
        let two = T::lit(2.0);
        self.l.diag().iter().map(|d| two * d.ln()).sum()
    }
}

pub fn symmetrize<T: Scalar>(mut a: Array2<T>) -> Array2<T> {
    let n = a.nrows();
    let half = T::lit(0.5);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = half * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
    a
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Eigenvalues are returned in ascending order with matching eigenvector columns.
pub fn symmetric_eigen<T: Scalar>(a: ArrayView2<T>) -> (Array1<T>, Array2<T>) {
    let n = a.nrows();
    let mut m = a.to_owned();
    let mut v = Array2::<T>::eye(n);
    let eps = T::epsilon();
    for _sweep in 0..100 {
        let mut off = T::zero();
        let mut total = T::zero();
        for i in 0..n {
            for j in 0..n {
                let x = m[[i, j]] * m[[i, j]];
                total += x;
                if i != j {
                    off += x;
                }
            }
        }
        if off <= eps * eps * total || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == T::zero() {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[i, i]].partial_cmp(&m[[j, j]]).unwrap_or(std::cmp::Ordering::Equal));
    let vals = Array1::from_iter(order.iter().map(|&i| m[[i, i]]));
    let mut vecs = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vecs.column_mut(dst).assign(&v.column(src));
    }
    (vals, vecs)
}

pub fn min_eigenvalue<T: Scalar>(a: ArrayView2<T>) -> T {
    let (vals, _) = symmetric_eigen(a);
    vals.iter().copied().fold(T::infinity(), T::min)
}

/// Largest eigenvalue modulus via a dense real Schur decomposition, or by
/// Gelfand's formula on repeated squares when the Schur iteration stalls.
pub fn dense_spectral_radius<T: Scalar>(a: ArrayView2<T>) -> f64 {
    let n = a.nrows();
    let m = nalgebra::DMatrix::<f64>::from_fn(n, n, |i, j| a[[i, j]].as_f64());
    match nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, 100 * n.max(10)) {
        Some(schur) => schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max),
        None => gelfand_radius(m),
    }
}

/// `‖A^k‖^{1/k}` with `k = 2^40`, tracking the scale in logs.
fn gelfand_radius(mut m: nalgebra::DMatrix<f64>) -> f64 {
    let mut log_scale = 0.0f64;
    let mut k = 1.0f64;
    for _ in 0..40 {
        let s = m.norm();
        if s == 0.0 {
            return 0.0;
        }
        m /= s;
        log_scale += s.ln() / k;
        m = &m * &m;
        k *= 2.0;
    }
    let s = m.norm();
    if s == 0.0 {
        return 0.0;
    }
    (log_scale + s.ln() / k).exp()
}

/// Settings for [`spectral_radius`].
#[derive(Debug, Clone, Copy)]
pub struct PowerIterationConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Largest dimension for which the dense fallback is attempted.
    pub dense_fallback_max: usize,
}

impl Default for PowerIterationConfig {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 10_000, dense_fallback_max: 512 }
    }
}

/// Spectral radius of a sparse square matrix.
///
/// Power iteration that fits the two-term recurrence `A²v ≈ p·Av + q·v` at
/// every step, so a dominant complex-conjugate pair converges as well as a
/// dominant real eigenvalue. Falls back to a dense eigen-solve when the
/// estimate does not settle.
pub fn spectral_radius<T: Scalar, R: Rng + ?Sized>(
    a: &CsrMatrix<T>,
    rng: &mut R,
    cfg: PowerIterationConfig,
) -> Result<f64> {
    let n = a.rows();
    if n != a.cols() {
        return Err(Error::DimensionMismatch("spectral radius of non-square matrix".into()));
    }
    let start: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    if a.nnz() == 0 {
        return Ok(0.0);
    }
    let dense = a.map(|v| v.as_f64());
    let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut v = start;
    let nv = norm(&v);
    if nv == 0.0 {
        v[0] = 1.0;
    } else {
        v.iter_mut().for_each(|x| *x /= nv);
    }
    let mut prev = f64::NAN;
    let mut stable = 0usize;
    for _ in 0..cfg.max_iter {
        let u1 = dense.mul_vec(&v);
        let n1 = norm(&u1);
        if n1 == 0.0 {
            // v fell into the null space; A is nilpotent on this Krylov space
            return Ok(0.0);
        }
        let u2 = dense.mul_vec(&u1);
        let est = two_term_radius(&v, &u1, &u2).unwrap_or(n1);
        if est.is_finite() && prev.is_finite() && (est - prev).abs() <= cfg.tol * est.max(1e-300) {
            stable += 1;
            if stable >= 3 {
                return Ok(est);
            }
        } else {
            stable = 0;
        }
        prev = est;
        let n2 = norm(&u2);
        if n2 == 0.0 {
            return Ok(0.0);
        }
        v = u2.iter().map(|x| x / n2).collect();
    }
    if n <= cfg.dense_fallback_max {
        Ok(dense_spectral_radius(a.to_dense().view()))
    } else {
        Err(Error::SpectralRadiusNotConverged(n))
    }
}

fn two_term_radius(v: &[f64], u1: &[f64], u2: &[f64]) -> Option<f64> {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let g11 = dot(u1, u1);
    let g12 = dot(u1, v);
    let g22 = dot(v, v);
    let r1 = dot(u1, u2);
    let r2 = dot(v, u2);
    let det = g11 * g22 - g12 * g12;
    if det <= 1e-10 * g11 * g22 {
        return None;
    }
    let p = (r1 * g22 - r2 * g12) / det;
    let q = (g11 * r2 - g12 * r1) / det;
    // Residual check: the fitted recurrence must explain u2.
    let mut res = 0.0;
    for i in 0..v.len() {
        let e = u2[i] - p * u1[i] - q * v[i];
        res += e * e;
    }
    if res > 1e-12 * dot(u2, u2) {
        return None;
    }
    let disc = p * p + 4.0 * q;
    if disc >= 0.0 {
        let s = disc.sqrt();
        Some(((p + s) / 2.0).abs().max(((p - s) / 2.0).abs()))
    } else {
        Some((-q).sqrt())
    }
}

/// Floors the eigenvalues of a symmetric matrix at `floor`.
pub fn floor_eigenvalues<T: Scalar>(a: ArrayView2<T>, floor: T) -> Array2<T> {
    let (vals, vecs) = symmetric_eigen(a);
    let n = a.nrows();
    let mut out = Array2::zeros((n, n));
    for k in 0..n {
        let lam = vals[k].max(floor);
        let col = vecs.column(k);
        for i in 0..n {
            let ci = lam * col[i];
            for j in 0..n {
                out[[i, j]] += ci * col[j];
            }
        }
    }
    symmetrize(out)
}
