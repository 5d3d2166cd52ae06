//! Recursive long-lead ensemble forecasting and hyper-parameter validation.
//!
//! Every member owns a fixed pair of sampled weight matrices. After each
//! forecast step the cross-member mean is appended to the history as a
//! pseudo-observation and every member's readout is refit on the extended
//! series, which is then used for the next step.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reservoir::{generate_weights, step_into, HyperParams, RecursiveRidge, RidgeAccumulator, WeightMatrices};
use crate::scalar::{pairwise_sum, Scalar};
use crate::scoring::mse;
use crate::seed::derive_seed;

/// Default ensemble size.
pub const DEFAULT_ENSEMBLE: usize = 300;

const MAX_SEED_ATTEMPTS: u64 = 64;

/// Per-element z-scoring fitted on a training block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer<T> {
    pub mean: Vec<T>,
    pub sd: Vec<T>,
}

impl<T: Scalar> Standardizer<T> {
    pub fn fit(data: ArrayView2<T>) -> Self {
        let mut mean = Vec::with_capacity(data.ncols());
        let mut sd = Vec::with_capacity(data.ncols());
        for col in data.axis_iter(Axis(1)) {
            let v = col.to_vec();
            let m = crate::stats::mean(&v);
            let s = crate::stats::sample_sd(&v);
            mean.push(m);
            sd.push(if s.is_finite() && s > T::zero() { s } else { T::one() });
        }
        Self { mean, sd }
    }

    pub fn identity(n_l: usize) -> Self {
        Self { mean: vec![T::zero(); n_l], sd: vec![T::one(); n_l] }
    }

    pub fn forward(&self, row: &[T]) -> Vec<T> {
        row.iter().zip(self.mean.iter().zip(&self.sd)).map(|(&y, (&m, &s))| (y - m) / s).collect()
    }

    pub fn inverse(&self, row: &[T]) -> Vec<T> {
        row.iter().zip(self.mean.iter().zip(&self.sd)).map(|(&z, (&m, &s))| z * s + m).collect()
    }
}

/// Forecast trajectories of every member from one origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastEnsemble<T> {
    /// Number of observed rows preceding the first forecast.
    pub origin: usize,
    /// n_ens × n_f × n_l.
    pub members: Array3<T>,
    /// n_f × n_l member average.
    pub mean: Array2<T>,
    pub member_seeds: Vec<u64>,
}

impl<T: Scalar> ForecastEnsemble<T> {
    pub fn horizon(&self) -> usize {
        self.mean.nrows()
    }

    pub fn n_ens(&self) -> usize {
        self.members.len_of(Axis(0))
    }

    /// Cross-member standard deviation per step and element (zero for one member).
    pub fn spread(&self) -> Array2<T> {
        let (n_ens, n_f, n_l) = self.members.dim();
        let mut out = Array2::zeros((n_f, n_l));
        if n_ens < 2 {
            return out;
        }
        for j in 0..n_f {
            for l in 0..n_l {
                let v: Vec<T> = (0..n_ens).map(|e| self.members[[e, j, l]]).collect();
                out[[j, l]] = crate::stats::sample_sd(&v);
            }
        }
        out
    }

    /// Member values for step `j`, element `l`.
    pub fn member_values(&self, j: usize, l: usize) -> Vec<T> {
        self.members.slice(ndarray::s![.., j, l]).to_vec()
    }
}

struct Member<T> {
    weights: WeightMatrices<T>,
    h: Vec<T>,
    acc: RidgeAccumulator<T>,
}

struct Branch<T> {
    h: Vec<T>,
    ridge: RecursiveRidge<T>,
    scratch: Vec<T>,
    x: Vec<T>,
}

/// An ensemble of reservoirs trained on a growing observed series.
///
/// Members advance over observed rows with [`EnsembleForecaster::advance`]
/// and forecast branches are split off with [`EnsembleForecaster::forecast`],
/// which leaves the trained state untouched.
pub struct EnsembleForecaster<T> {
    hp: HyperParams<T>,
    scaler: Standardizer<T>,
    history: Vec<Vec<T>>,
    members: Vec<Member<T>>,
    n_l: usize,
}

impl<T: Scalar> EnsembleForecaster<T> {
    /// Samples `n_ens` members; standardization is fitted on `stats_block`.
    pub fn new(stats_block: ArrayView2<T>, hp: HyperParams<T>, n_ens: usize, seed: u64) -> Result<Self> {
        hp.validate()?;
        if n_ens == 0 {
            return Err(Error::EmptyEnsemble);
        }
        let n_l = stats_block.ncols();
        let scaler = Standardizer::fit(stats_block);
        let n_x = hp.input_dim(n_l);
        let members = (0..n_ens)
            .into_par_iter()
            .map(|i| {
                let base = derive_seed(seed, i as u64);
                let mut last = Error::DegenerateReservoir(0.0);
                for attempt in 0..MAX_SEED_ATTEMPTS {
                    let s = if attempt == 0 { base } else { derive_seed(base, attempt) };
                    match generate_weights(&hp, n_x, s) {
                        Ok(w) => {
                            return Ok(Member {
                                h: vec![T::zero(); hp.n_h],
                                acc: RidgeAccumulator::new(hp.n_h, n_l),
                                weights: w,
                            })
                        }
                        Err(e @ Error::DegenerateReservoir(_)) => last = e,
                        Err(e) => return Err(e),
                    }
                }
                Err(last)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { hp, scaler, history: Vec::new(), members, n_l })
    }

    pub fn hyper_params(&self) -> &HyperParams<T> {
        &self.hp
    }

    pub fn standardizer(&self) -> &Standardizer<T> {
        &self.scaler
    }

    pub fn member_seeds(&self) -> Vec<u64> {
        self.members.iter().map(|m| m.weights.seed).collect()
    }

    /// Number of observed rows consumed so far.
    pub fn observed(&self) -> usize {
        self.history.len()
    }

    /// Consumes observed rows of `data` up to (excluding) `upto`.
    pub fn advance(&mut self, data: ArrayView2<T>, upto: usize) -> Result<()> {
        if data.ncols() != self.n_l {
            return Err(Error::ShapeMismatch(format!("{} columns, ensemble fitted on {}", data.ncols(), self.n_l)));
        }
        if upto > data.nrows() {
            return Err(Error::InsufficientData { needed: upto, got: data.nrows() });
        }
        let start = self.history.len();
        for t in start..upto {
            let row = data.row(t).to_vec();
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("non-finite observation at row {t}")));
            }
            self.history.push(self.scaler.forward(&row));
        }
        let hp = self.hp;
        let history = &self.history;
        let n_x = hp.input_dim(self.n_l);
        self.members.par_iter_mut().try_for_each(|m| {
            let mut x = vec![T::zero(); n_x];
            let mut next = vec![T::zero(); hp.n_h];
            for t in start..upto {
                if t < hp.first_valid() {
                    continue;
                }
                fill_input(&hp, history, &[], t, &mut x);
                step_into(&m.h, &x, &m.weights, &hp, &mut next);
                if next.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteState(t));
                }
                std::mem::swap(&mut m.h, &mut next);
                if t - hp.first_valid() >= hp.washout {
                    m.acc.add_row(&m.h, &history[t]);
                }
            }
            Ok(())
        })
    }

    /// Recursive `n_f`-step forecast from the current end of the observed series.
    pub fn forecast(&self, n_f: usize) -> Result<ForecastEnsemble<T>> {
        let origin = self.history.len();
        let needed = self.hp.first_valid() + self.hp.washout;
        if origin <= needed {
            return Err(Error::InsufficientHistory { needed, got: origin });
        }
        if n_f == 0 {
            return Err(Error::InvalidInput("forecast horizon must be at least 1".into()));
        }
        let hp = self.hp;
        let n_l = self.n_l;
        let n_ens = self.members.len();
        let n_x = hp.input_dim(n_l);
        let mut branches = self
            .members
            .par_iter()
            .map(|m| {
                Ok(Branch {
                    h: m.h.clone(),
                    ridge: m.acc.recursive(hp.lambda_r)?,
                    scratch: vec![T::zero(); hp.n_h],
                    x: vec![T::zero(); n_x],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut appended: Vec<Vec<T>> = Vec::with_capacity(n_f);
        let mut members = Array3::zeros((n_ens, n_f, n_l));
        let mut mean = Array2::zeros((n_f, n_l));
        for j in 0..n_f {
            let t = origin + j;
            let history = &self.history;
            let ext = &appended;
            let preds: Vec<Vec<T>> = branches
                .par_iter_mut()
                .zip(self.members.par_iter())
                .map(|(b, m)| {
                    fill_input(&hp, history, ext, t, &mut b.x);
                    step_into(&b.h, &b.x, &m.weights, &hp, &mut b.scratch);
                    std::mem::swap(&mut b.h, &mut b.scratch);
                    let mut y = vec![T::zero(); n_l];
                    b.ridge.predict_into(&b.h, &mut y);
                    y
                })
                .collect();
            if preds.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteForecast(j));
            }
            // fixed-order reduction over members
            let z_mean: Vec<T> = (0..n_l)
                .map(|l| {
                    let col: Vec<T> = preds.iter().map(|p| p[l]).collect();
                    pairwise_sum(&col) / T::from_usize_lossy(n_ens)
                })
                .collect();
            for (e, p) in preds.iter().enumerate() {
                let y = self.scaler.inverse(p);
                members.slice_mut(ndarray::s![e, j, ..]).iter_mut().zip(&y).for_each(|(d, &s)| *d = s);
            }
            for l in 0..n_l {
                let col: Vec<T> = (0..n_ens).map(|e| members[[e, j, l]]).collect();
                mean[[j, l]] = pairwise_sum(&col) / T::from_usize_lossy(n_ens);
            }
            if j + 1 < n_f {
                branches.par_iter_mut().for_each(|b| b.ridge.append(&b.h, &z_mean));
                appended.push(z_mean);
            }
        }
        Ok(ForecastEnsemble { origin, members, mean, member_seeds: self.member_seeds() })
    }
}

/// Lagged input `(z_{t-τ}, …, z_{t-mτ}, 1)` drawing rows past the observed
/// history from `ext`.
fn fill_input<T: Scalar>(hp: &HyperParams<T>, history: &[Vec<T>], ext: &[Vec<T>], t: usize, x: &mut [T]) {
    let n_obs = history.len();
    let mut k = 0;
    for lag in 1..=hp.m {
        let s = t - lag * hp.tau;
        let row = if s < n_obs { &history[s] } else { &ext[s - n_obs] };
        x[k..k + row.len()].copy_from_slice(row);
        k += row.len();
    }
    if hp.include_bias {
        x[k] = T::one();
    }
}

/// Trains an ensemble on `train` and forecasts `n_f` steps past its end.
pub fn iterative_forecast<T: Scalar>(
    train: ArrayView2<T>,
    hp: &HyperParams<T>,
    n_f: usize,
    n_ens: usize,
    seed: u64,
) -> Result<ForecastEnsemble<T>> {
    let needed = hp.first_valid() + hp.washout;
    if train.nrows() <= needed {
        return Err(Error::InsufficientHistory { needed, got: train.nrows() });
    }
    let mut ens = EnsembleForecaster::new(train, *hp, n_ens, seed)?;
    ens.advance(train, train.nrows())?;
    ens.forecast(n_f)
}

/// Outcome of a grid search over hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct ValidationResult<T> {
    pub grid: Vec<HyperParams<T>>,
    pub scores: Vec<T>,
    pub best: usize,
}

impl<T: Scalar> ValidationResult<T> {
    pub fn best_params(&self) -> &HyperParams<T> {
        &self.grid[self.best]
    }
}

/// A training block followed by the held-out block it is validated on.
#[derive(Debug, Clone, Copy)]
pub struct Split<'a, T> {
    pub train: ArrayView2<'a, T>,
    pub validation: ArrayView2<'a, T>,
}

/// Scores every candidate by validation MSE pooled over elements and steps.
pub fn validate_hyperparameters<T: Scalar>(
    train: ArrayView2<T>,
    validation: ArrayView2<T>,
    grid: &[HyperParams<T>],
    n_ens: usize,
    seed: u64,
) -> Result<ValidationResult<T>> {
    validate_pooled(&[Split { train, validation }], grid, n_ens, seed)
}

/// Like [`validate_hyperparameters`] but averages the pooled MSE over
/// several independent splits (e.g. realizations of a simulator).
pub fn validate_pooled<T: Scalar>(
    splits: &[Split<'_, T>],
    grid: &[HyperParams<T>],
    n_ens: usize,
    seed: u64,
) -> Result<ValidationResult<T>> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if splits.is_empty() {
        return Err(Error::InvalidInput("no validation splits".into()));
    }
    let mut scores = Vec::with_capacity(grid.len());
    for hp in grid {
        let mut per_split = Vec::with_capacity(splits.len());
        for (k, sp) in splits.iter().enumerate() {
            if sp.validation.nrows() == 0 || sp.validation.ncols() != sp.train.ncols() {
                return Err(Error::ShapeMismatch("validation block must be non-empty and match training columns".into()));
            }
            let fc = iterative_forecast(sp.train, hp, sp.validation.nrows(), n_ens, derive_seed(seed, k as u64))?;
            per_split.push(mse(fc.mean.view(), sp.validation)?.pooled);
        }
        scores.push(pairwise_sum(&per_split) / T::from_usize_lossy(per_split.len()));
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = i;
        }
    }
    Ok(ValidationResult { grid: grid.to_vec(), scores, best })
}
