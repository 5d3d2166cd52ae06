//! Lorenz-96 simulator used to generate benchmark data.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct Lorenz96Config<T> {
    pub n_l: usize,
    pub forcing: T,
    pub dt: T,
    pub sample_every: usize,
    pub spinup: usize,
    /// Standard deviation of the initial perturbation around the fixed point.
    pub init_sd: T,
    pub seed: u64,
}

impl<T: Scalar> Default for Lorenz96Config<T> {
    fn default() -> Self {
        Self {
            n_l: 40,
            forcing: T::lit(4.5),
            dt: T::lit(0.01),
            sample_every: 20,
            spinup: 2000,
            init_sd: T::lit(0.5),
            seed: 0,
        }
    }
}

impl<T: Scalar> Lorenz96Config<T> {
    pub fn validate(&self) -> Result<()> {
        if self.n_l < 4 {
            return Err(Error::InvalidInput(format!("Lorenz-96 needs at least 4 variables, got {}", self.n_l)));
        }
        if !(self.dt > T::zero()) || self.sample_every == 0 {
            return Err(Error::InvalidInput("dt must be positive and sample_every at least 1".into()));
        }
        Ok(())
    }
}

/// `dY_l/dt = (Y_{l+1} - Y_{l-2}) Y_{l-1} - Y_l + F` with cyclic indices.
pub fn derivative<T: Scalar>(y: ArrayView1<T>, forcing: T) -> Array1<T> {
    let mut out = Array1::zeros(y.len());
    derivative_into(y.as_slice().expect("contiguous"), forcing, out.as_slice_mut().unwrap());
    out
}

fn derivative_into<T: Scalar>(y: &[T], forcing: T, out: &mut [T]) {
    let n = y.len();
    for l in 0..n {
        let p1 = y[(l + 1) % n];
        let m1 = y[(l + n - 1) % n];
        let m2 = y[(l + n - 2) % n];
        out[l] = (p1 - m2) * m1 - y[l] + forcing;
    }
}

/// Classical fourth-order Runge–Kutta step, in place.
pub fn rk4_step<T: Scalar>(y: &mut [T], forcing: T, dt: T) {
    let n = y.len();
    let half = T::lit(0.5);
    let mut k1 = vec![T::zero(); n];
    let mut k2 = vec![T::zero(); n];
    let mut k3 = vec![T::zero(); n];
    let mut k4 = vec![T::zero(); n];
    let mut tmp = vec![T::zero(); n];
    derivative_into(y, forcing, &mut k1);
    for i in 0..n {
        tmp[i] = y[i] + half * dt * k1[i];
    }
    derivative_into(&tmp, forcing, &mut k2);
    for i in 0..n {
        tmp[i] = y[i] + half * dt * k2[i];
    }
    derivative_into(&tmp, forcing, &mut k3);
    for i in 0..n {
        tmp[i] = y[i] + dt * k3[i];
    }
    derivative_into(&tmp, forcing, &mut k4);
    let sixth = dt / T::lit(6.0);
    for i in 0..n {
        y[i] += sixth * (k1[i] + T::lit(2.0) * (k2[i] + k3[i]) + k4[i]);
    }
}

/// Integrates from `y0` and records every `sample_every`-th state (after
/// `spinup` discarded steps) until `points` rows are collected.
pub fn integrate<T: Scalar>(cfg: &Lorenz96Config<T>, y0: &[T], points: usize) -> Result<Array2<T>> {
    cfg.validate()?;
    let mut y = y0.to_vec();
    let mut step = 0usize;
    for _ in 0..cfg.spinup {
        rk4_step(&mut y, cfg.forcing, cfg.dt);
        step += 1;
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged(step));
    }
    let mut out = Array2::zeros((points, y.len()));
    for r in 0..points {
        for _ in 0..cfg.sample_every {
            rk4_step(&mut y, cfg.forcing, cfg.dt);
            step += 1;
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged(step));
        }
        out.row_mut(r).iter_mut().zip(&y).for_each(|(d, &s)| *d = s);
    }
    Ok(out)
}

/// Random initial condition `F + N(0, init_sd²)` for realization `r`.
pub fn initial_condition<T: Scalar>(cfg: &Lorenz96Config<T>, realization: usize) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, realization as u64));
    (0..cfg.n_l)
        .map(|_| cfg.forcing + cfg.init_sd * T::lit(rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

/// Independent realizations from distinct random initial conditions.
pub fn simulate<T: Scalar>(cfg: &Lorenz96Config<T>, points: usize, realizations: usize) -> Result<Vec<Array2<T>>> {
    cfg.validate()?;
    if points < 1 {
        return Err(Error::InvalidInput("at least one recorded point is required".into()));
    }
    (0..realizations)
        .into_par_iter()
        .map(|r| integrate(cfg, &initial_condition(cfg, r), points))
        .collect()
}
