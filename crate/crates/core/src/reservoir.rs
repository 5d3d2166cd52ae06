//! Sparse stochastic reservoirs: spike-and-slab weight generation, leaky
//! state updates and the ridge readout.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{spectral_radius, Cholesky, CsrMatrix, PowerIterationConfig};
use crate::scalar::Scalar;

/// Hidden-unit nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    /// Linear units; together with `alpha = 1` this is the state-space reduction.
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(T::zero()),
            Activation::Identity => x,
        }
    }
}

/// Reservoir hyper-parameters. The weight distribution is fixed to the
/// standard normal, so only densities remain for the weight matrices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct HyperParams<T> {
    pub n_h: usize,
    /// Number of lagged inputs.
    pub m: usize,
    /// Lead time between lags.
    pub tau: usize,
    /// Target spectral radius of the scaled reservoir matrix.
    pub nu: T,
    pub lambda_r: T,
    /// Leaking rate.
    pub alpha: T,
    pub pi_w: T,
    pub pi_win: T,
    pub activation: Activation,
    pub include_bias: bool,
    pub washout: usize,
}

impl<T: Scalar> Default for HyperParams<T> {
    fn default() -> Self {
        Self {
            n_h: 60,
            m: 4,
            tau: 1,
            nu: T::lit(0.55),
            lambda_r: T::lit(0.001),
            alpha: T::lit(0.0023),
            pi_w: T::lit(0.1),
            pi_win: T::lit(0.1),
            activation: Activation::Tanh,
            include_bias: true,
            washout: 0,
        }
    }
}

impl<T: Scalar> HyperParams<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidHyperParams(msg.to_string()));
        if self.n_h < 1 {
            return bad("n_h must be at least 1");
        }
        if self.m < 1 {
            return bad("m must be at least 1");
        }
        if self.tau < 1 {
            return bad("tau must be at least 1");
        }
        if !(self.nu > T::zero() && self.nu < T::one()) {
            return bad("nu must lie in (0, 1)");
        }
        if !(self.alpha > T::zero() && self.alpha <= T::one()) {
            return bad("alpha must lie in (0, 1]");
        }
        if !(self.lambda_r >= T::zero()) {
            return bad("lambda_r must be non-negative");
        }
        let unit = |p: T| p >= T::zero() && p <= T::one();
        if !unit(self.pi_w) || !unit(self.pi_win) {
            return bad("densities must lie in [0, 1]");
        }
        Ok(())
    }

    /// Input dimension for `n_l` output elements.
    pub fn input_dim(&self, n_l: usize) -> usize {
        n_l * self.m + usize::from(self.include_bias)
    }

    /// Index of the first time step with a complete lag window.
    pub fn first_valid(&self) -> usize {
        self.m * self.tau
    }
}

/// The sampled reservoir and input matrices of one ensemble member.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrices<T> {
    pub w: CsrMatrix<T>,
    pub win: CsrMatrix<T>,
    pub rho_w: T,
    pub seed: u64,
}

impl<T: Scalar> WeightMatrices<T> {
    /// Multiplier `nu / rho_w` applied to `W` in the state recursion.
    pub fn scale(&self, nu: T) -> T {
        nu / self.rho_w
    }

    pub fn n_h(&self) -> usize {
        self.w.rows()
    }

    pub fn n_x(&self) -> usize {
        self.win.cols()
    }
}

fn spike_and_slab<T: Scalar>(rows: usize, cols: usize, density: f64, rng: &mut ChaCha8Rng) -> CsrMatrix<T> {
    let mut trip = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            if rng.random::<f64>() < density {
                let g: f64 = rng.sample(StandardNormal);
                trip.push((i, j, T::lit(g)));
            }
        }
    }
    CsrMatrix::from_triplets(rows, cols, trip)
}

/// Samples `W` (n_h × n_h) and `Win` (n_h × n_x) with spike-and-slab entries
/// and records the spectral radius of `W`.
pub fn generate_weights<T: Scalar>(hp: &HyperParams<T>, n_x: usize, seed: u64) -> Result<WeightMatrices<T>> {
    hp.validate()?;
    if n_x < 1 {
        return Err(Error::InvalidHyperParams("n_x must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = spike_and_slab::<T>(hp.n_h, hp.n_h, hp.pi_w.as_f64(), &mut rng);
    let win = spike_and_slab::<T>(hp.n_h, n_x, hp.pi_win.as_f64(), &mut rng);
    let rho = spectral_radius(&w, &mut rng, PowerIterationConfig::default())?;
    if !(rho >= 1e-12) {
        return Err(Error::DegenerateReservoir(rho));
    }
    Ok(WeightMatrices { w, win, rho_w: T::lit(rho), seed })
}

/// Scratch-free leaky update written into `out`.
pub(crate) fn step_into<T: Scalar>(
    h_prev: &[T],
    x: &[T],
    wm: &WeightMatrices<T>,
    hp: &HyperParams<T>,
    out: &mut [T],
) {
    out.iter_mut().for_each(|o| *o = T::zero());
    wm.w.mul_vec_add(h_prev, wm.scale(hp.nu), out);
    wm.win.mul_vec_add(x, T::one(), out);
    let keep = T::one() - hp.alpha;
    for (o, &h) in out.iter_mut().zip(h_prev) {
        *o = keep * h + hp.alpha * hp.activation.apply(*o);
    }
}

/// One leaky-integrator step `(1 - α) h + α f(ν/ρ W h + Win x)`.
pub fn update_state<T: Scalar>(
    h_prev: ArrayView1<T>,
    x_t: ArrayView1<T>,
    wm: &WeightMatrices<T>,
    hp: &HyperParams<T>,
) -> Result<Array1<T>> {
    if h_prev.len() != wm.n_h() || x_t.len() != wm.n_x() {
        return Err(Error::DimensionMismatch(format!(
            "state {} / input {} vs reservoir {}x{}",
            h_prev.len(),
            x_t.len(),
            wm.n_h(),
            wm.n_x()
        )));
    }
    let h = h_prev.to_vec();
    let x = x_t.to_vec();
    let mut out = vec![T::zero(); wm.n_h()];
    step_into(&h, &x, wm, hp, &mut out);
    Ok(Array1::from(out))
}

/// Hidden states stacked row-wise, one row per input row.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMatrix<T> {
    pub states: Array2<T>,
    /// Leading rows excluded from readout fitting.
    pub washout: usize,
}

impl<T: Scalar> StateMatrix<T> {
    pub fn last(&self) -> ArrayView1<'_, T> {
        self.states.row(self.states.nrows() - 1)
    }

    /// Rows used for fitting the readout.
    pub fn fit_rows(&self) -> ArrayView2<'_, T> {
        self.states.slice(ndarray::s![self.washout.min(self.states.nrows()).., ..])
    }
}

/// Runs the reservoir from `h_0 = 0` over the rows of `inputs`.
pub fn run_reservoir<T: Scalar>(
    inputs: ArrayView2<T>,
    wm: &WeightMatrices<T>,
    hp: &HyperParams<T>,
) -> Result<StateMatrix<T>> {
    if inputs.nrows() == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if inputs.ncols() != wm.n_x() {
        return Err(Error::DimensionMismatch(format!("inputs have {} columns, Win expects {}", inputs.ncols(), wm.n_x())));
    }
    let n_h = wm.n_h();
    let mut states = Array2::<T>::zeros((inputs.nrows(), n_h));
    let mut h = vec![T::zero(); n_h];
    let mut next = vec![T::zero(); n_h];
    let mut x = vec![T::zero(); wm.n_x()];
    for (t, row) in inputs.axis_iter(Axis(0)).enumerate() {
        x.iter_mut().zip(row.iter()).for_each(|(d, &s)| *d = s);
        step_into(&h, &x, wm, hp, &mut next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState(t));
        }
        std::mem::swap(&mut h, &mut next);
        states.row_mut(t).iter_mut().zip(&h).for_each(|(d, &s)| *d = s);
    }
    Ok(StateMatrix { states, washout: hp.washout })
}

/// Linear readout `Y ≈ H B`.
#[derive(Debug, Clone, PartialEq)]
pub struct Readout<T> {
    /// n_h × n_l coefficients.
    pub b: Array2<T>,
}

impl<T: Scalar> Readout<T> {
    pub fn predict(&self, h: ArrayView1<T>) -> Array1<T> {
        self.b.t().dot(&h)
    }
}

/// Ridge estimate `(HᵀH + λI)⁻¹ HᵀY` via a Cholesky solve.
pub fn fit_readout<T: Scalar>(h: ArrayView2<T>, y: ArrayView2<T>, lambda_r: T) -> Result<Readout<T>> {
    if h.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch(format!("{} state rows vs {} target rows", h.nrows(), y.nrows())));
    }
    if !(lambda_r >= T::zero()) {
        return Err(Error::InvalidHyperParams("lambda_r must be non-negative".into()));
    }
    let mut acc = RidgeAccumulator::new(h.ncols(), y.ncols());
    acc.add_rows(h, y);
    Ok(Readout { b: acc.solve(lambda_r)? })
}

/// Running normal equations `HᵀH`, `HᵀY`.
#[derive(Debug, Clone)]
pub struct RidgeAccumulator<T> {
    pub gram: Array2<T>,
    pub cross: Array2<T>,
    pub rows: usize,
}

impl<T: Scalar> RidgeAccumulator<T> {
    pub fn new(n_h: usize, n_l: usize) -> Self {
        Self { gram: Array2::zeros((n_h, n_h)), cross: Array2::zeros((n_h, n_l)), rows: 0 }
    }

    pub fn add_rows(&mut self, h: ArrayView2<T>, y: ArrayView2<T>) {
        self.gram += &h.t().dot(&h);
        self.cross += &h.t().dot(&y);
        self.rows += h.nrows();
    }

    pub fn add_row(&mut self, h: &[T], y: &[T]) {
        let n = h.len();
        for i in 0..n {
            let hi = h[i];
            if hi == T::zero() {
                continue;
            }
            let mut g = self.gram.row_mut(i);
            for j in i..n {
                g[j] += hi * h[j];
            }
            let mut c = self.cross.row_mut(i);
            for (cj, &yj) in c.iter_mut().zip(y) {
                *cj += hi * yj;
            }
        }
        self.rows += 1;
    }

    /// Gram with the lower triangle mirrored from the upper one, which is
    /// the only triangle `add_row` maintains.
    fn full_gram(&self) -> Array2<T> {
        let n = self.gram.nrows();
        let mut g = self.gram.clone();
        for i in 0..n {
            for j in (i + 1)..n {
                g[[j, i]] = g[[i, j]];
            }
        }
        g
    }

    fn penalized(&self, lambda_r: T) -> Array2<T> {
        let mut g = self.full_gram();
        for i in 0..g.nrows() {
            g[[i, i]] += lambda_r;
        }
        g
    }

    fn factor(&self, lambda_r: T) -> Result<Cholesky<T>> {
        let g = self.penalized(lambda_r);
        let ch = Cholesky::new(g.view())?;
        if lambda_r == T::zero() {
            // rank check relative to the largest pivot
            let d = ch.factor().diag().to_owned();
            let max = d.iter().copied().fold(T::zero(), T::max);
            let tol = T::lit(1e-7) * max;
            if d.iter().any(|&p| p <= tol) {
                return Err(Error::SingularSystem("HᵀH is rank deficient and lambda_r = 0".into()));
            }
        }
        Ok(ch)
    }

    pub fn solve(&self, lambda_r: T) -> Result<Array2<T>> {
        Ok(self.factor(lambda_r)?.solve(self.cross.view()))
    }

    /// Starts a recursive least-squares tracker at the current ridge solution.
    pub fn recursive(&self, lambda_r: T) -> Result<RecursiveRidge<T>> {
        let ch = self.factor(lambda_r)?;
        let p = ch.inverse();
        let b = p.dot(&self.cross);
        Ok(RecursiveRidge { p, b })
    }
}

/// Ridge solution maintained under row appends by Sherman–Morrison updates
/// of `P = (HᵀH + λI)⁻¹`; each append yields the exact refit on the
/// extended design.
#[derive(Debug, Clone)]
pub struct RecursiveRidge<T> {
    p: Array2<T>,
    b: Array2<T>,
}

impl<T: Scalar> RecursiveRidge<T> {
    pub fn coefficients(&self) -> &Array2<T> {
        &self.b
    }

    pub fn predict_into(&self, h: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|o| *o = T::zero());
        for (i, &hi) in h.iter().enumerate() {
            if hi == T::zero() {
                continue;
            }
            for (o, &bij) in out.iter_mut().zip(self.b.row(i)) {
                *o += hi * bij;
            }
        }
    }

    pub fn append(&mut self, h: &[T], y: &[T]) {
        let n = h.len();
        let mut ph = vec![T::zero(); n];
        for i in 0..n {
            let row = self.p.row(i);
            let mut acc = T::zero();
            for (pij, &hj) in row.iter().zip(h) {
                acc += *pij * hj;
            }
            ph[i] = acc;
        }
        let denom = T::one() + h.iter().zip(&ph).map(|(&a, &b)| a * b).sum::<T>();
        let mut resid = vec![T::zero(); y.len()];
        self.predict_into(h, &mut resid);
        for (r, &yj) in resid.iter_mut().zip(y) {
            *r = yj - *r;
        }
        for i in 0..n {
            let ki = ph[i] / denom;
            let mut brow = self.b.row_mut(i);
            for (bij, &rj) in brow.iter_mut().zip(&resid) {
                *bij += ki * rj;
            }
            let mut prow = self.p.row_mut(i);
            for (pij, &phj) in prow.iter_mut().zip(&ph) {
                *pij -= ki * phj;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    fn hp_small() -> HyperParams<f64> {
        HyperParams { n_h: 2, m: 1, alpha: 0.5, include_bias: false, ..Default::default() }
    }

    #[test]
    fn zero_density_is_degenerate() {
        let hp = HyperParams::<f64> { pi_w: 0.0, ..Default::default() };
        assert!(matches!(generate_weights(&hp, 5, 1), Err(Error::DegenerateReservoir(_))));
    }

    #[test]
    fn full_density_fills_w() {
        let hp = HyperParams::<f64> { n_h: 3, pi_w: 1.0, ..Default::default() };
        let wm = generate_weights(&hp, 2, 3).unwrap();
        assert_eq!(wm.w.nnz(), 9);
    }

    #[test]
    fn weights_are_reproducible() {
        let hp = HyperParams::<f64>::default();
        let a = generate_weights(&hp, 20, 99).unwrap();
        let b = generate_weights(&hp, 20, 99).unwrap();
        assert_eq!(a, b);
        let c = generate_weights(&hp, 20, 100).unwrap();
        assert_ne!(a.w, c.w);
    }

    #[test]
    fn scaled_reservoir_has_target_radius() {
        let hp = HyperParams::<f64>::default();
        for seed in 0..10 {
            let wm = generate_weights(&hp, 10, seed).unwrap();
            let scaled = wm.w.to_dense() * wm.scale(hp.nu);
            let rho = crate::linalg::dense_spectral_radius(scaled.view());
            assert!((rho - hp.nu).abs() < 1e-6, "seed {seed}: {rho}");
        }
    }

    #[test]
    fn alpha_one_has_no_leak_memory() {
        let hp = HyperParams::<f64> { alpha: 1.0, ..hp_small() };
        let wm = WeightMatrices {
            w: CsrMatrix::from_dense(array![[0.5, -0.2], [0.1, 0.3]].view()),
            win: CsrMatrix::from_dense(array![[1.0], [-2.0]].view()),
            rho_w: 0.5,
            seed: 0,
        };
        let h0 = array![0.3, -0.4];
        let x = array![0.7];
        let h1 = update_state(h0.view(), x.view(), &wm, &hp).unwrap();
        let s = hp.nu / 0.5;
        let omega0 = (s * (0.5 * 0.3 - 0.2 * -0.4) + 0.7).tanh();
        let omega1 = (s * (0.1 * 0.3 + 0.3 * -0.4) - 1.4).tanh();
        assert_eq!(h1[0], omega0);
        assert_eq!(h1[1], omega1);
    }

    #[test]
    fn origin_is_fixed_point() {
        let hp = HyperParams::<f64> { n_h: 8, ..Default::default() };
        let wm = generate_weights(&hp, 3, 5).unwrap();
        let h = update_state(Array1::zeros(8).view(), Array1::zeros(3).view(), &wm, &hp).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let hp = HyperParams::<f64> { n_h: 8, ..Default::default() };
        let wm = generate_weights(&hp, 3, 5).unwrap();
        let r = update_state(Array1::zeros(7).view(), Array1::zeros(3).view(), &wm, &hp);
        assert!(matches!(r, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn single_row_run_equals_one_update() {
        let hp = HyperParams::<f64> { n_h: 10, ..Default::default() };
        let wm = generate_weights(&hp, 4, 8).unwrap();
        let x = array![[0.1, -0.3, 0.2, 1.0]];
        let run = run_reservoir(x.view(), &wm, &hp).unwrap();
        let one = update_state(Array1::zeros(10).view(), x.row(0), &wm, &hp).unwrap();
        assert_eq!(run.states.row(0), one);
    }

    #[test]
    fn relu_with_runaway_scaling_reports_non_finite() {
        let hp = HyperParams::<f64> { n_h: 2, m: 1, alpha: 1.0, activation: Activation::Relu, include_bias: false, nu: 0.9, ..Default::default() };
        // rho_w recorded far below the true radius makes the effective gain huge
        let wm = WeightMatrices {
            w: CsrMatrix::from_dense(array![[1.0, 0.0], [0.0, 1.0]].view()),
            win: CsrMatrix::from_dense(array![[1.0], [1.0]].view()),
            rho_w: 1e-300,
            seed: 0,
        };
        let x = Array2::from_elem((5, 1), 1.0);
        assert!(matches!(run_reservoir(x.view(), &wm, &hp), Err(Error::NonFiniteState(_))));
    }

    #[test]
    fn orthonormal_design_gives_projection() {
        let h = array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]];
        let y = array![[2.0, 1.0], [3.0, -1.0], [5.0, 7.0]];
        let r = fit_readout(h.view(), y.view(), 0.0).unwrap();
        assert_eq!(r.b, h.t().dot(&y));
    }

    #[test]
    fn huge_penalty_shrinks_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = Array2::from_shape_fn((30, 5), |_| rng.sample::<f64, _>(StandardNormal));
        let y = Array2::from_shape_fn((30, 2), |_| rng.sample::<f64, _>(StandardNormal));
        let r = fit_readout(h.view(), y.view(), 1e12).unwrap();
        let fro = r.b.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(fro < 1e-6);
    }

    #[test]
    fn rank_deficient_without_penalty_is_singular() {
        let h = array![[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]];
        let y = array![[1.0], [2.0], [3.0]];
        assert!(matches!(fit_readout(h.view(), y.view(), 0.0), Err(Error::SingularSystem(_))));
        assert!(fit_readout(h.view(), y.view(), 0.1).is_ok());
    }

    #[test]
    fn recursive_ridge_matches_refit() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = Array2::from_shape_fn((40, 6), |_| rng.sample::<f64, _>(StandardNormal));
        let y = Array2::from_shape_fn((40, 3), |_| rng.sample::<f64, _>(StandardNormal));
        let mut acc = RidgeAccumulator::new(6, 3);
        for t in 0..30 {
            acc.add_row(h.row(t).as_slice().unwrap(), y.row(t).as_slice().unwrap());
        }
        let mut rec = acc.recursive(0.01).unwrap();
        for t in 30..40 {
            rec.append(h.row(t).as_slice().unwrap(), y.row(t).as_slice().unwrap());
        }
        let full = fit_readout(h.view(), y.view(), 0.01).unwrap();
        for (a, b) in rec.coefficients().iter().zip(full.b.iter()) {
            assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn f32_reservoir_runs() {
        let hp = HyperParams::<f32> { n_h: 12, ..Default::default() };
        let wm = generate_weights(&hp, 3, 1).unwrap();
        let x = Array2::<f32>::from_elem((20, 3), 0.5);
        let st = run_reservoir(x.view(), &wm, &hp).unwrap();
        assert!(st.states.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
    }
}
