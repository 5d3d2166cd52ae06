//! End-to-end studies on simulated data: the Lorenz-96 method comparison and
//! calibration study, and a synthetic nonstationary spatial benchmark.

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::baselines::{arfima_columns, state_space_forecast, ArfimaConfig};
use crate::calibration::{build_windowed_forecasts, uncalibrated_pit, CalibrationModel, WindowedForecasts};
use crate::dependence::{
    central_coverage, difference_coverage, empirical_correlation, grand_mean_coverage, grand_mean_variance, nonzero_proportion,
    ring_pairs_in_band, sparse_correlation, DependenceModel, SparseConfig,
};
use crate::error::{Error, Result};
use crate::forecasting::{iterative_forecast, validate_pooled, ForecastEnsemble, Split, ValidationResult};
use crate::linalg::{min_eigenvalue, Cholesky};
use crate::lorenz96::{simulate, Lorenz96Config};
use crate::reservoir::HyperParams;
use crate::scoring::{crps, crps_gaussian, mse};
use crate::seed::derive_seed;
use crate::spatial::{
    default_bandwidth, fit_local_ranges, grid_knots, select_delta, shrink, spatial_correlation_matrix, LocalFitConfig, Point,
    SpatialModel,
};
use crate::stats::{ks_uniform, MedianIqr};

/// Nominal levels reported throughout.
pub const LEVELS: [f64; 3] = [0.95, 0.80, 0.60];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LorenzBenchmark {
    pub lorenz: Lorenz96Config<f64>,
    pub realizations: usize,
    /// Training rows before the test window.
    pub train: usize,
    pub horizon: usize,
    pub hp: HyperParams<f64>,
    pub n_ens: usize,
    /// Candidate leaking rates for the validation search.
    pub alpha_grid: Vec<f64>,
    /// Tail of the training block held out for selecting the leaking rate.
    pub validation_len: usize,
    pub validation_ens: usize,
    pub arfima: ArfimaConfig,
    pub n_w: usize,
    pub n_f: usize,
    pub lambda_grid: Vec<f64>,
    pub mild_band: (f64, f64),
    pub seed: u64,
}

impl Default for LorenzBenchmark {
    fn default() -> Self {
        Self {
            lorenz: Lorenz96Config::default(),
            realizations: 10,
            train: 980,
            horizon: 20,
            hp: HyperParams::default(),
            n_ens: 300,
            alpha_grid: vec![0.0005, 0.001, 0.0023, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0],
            validation_len: 20,
            validation_ens: 100,
            arfima: ArfimaConfig::default(),
            n_w: 20,
            n_f: 20,
            lambda_grid: (0..=10).map(|k| k as f64 * 0.02).collect(),
            mild_band: (0.4, 0.6),
            seed: 0,
        }
    }
}

impl LorenzBenchmark {
    /// Rows needed for the test window and every calibration window.
    pub fn points(&self) -> usize {
        (self.train + self.horizon).max(self.train + self.n_w * self.n_f)
    }

    pub fn simulate(&self) -> Result<Vec<Array2<f64>>> {
        simulate(&self.lorenz, self.points(), self.realizations)
    }

    /// Leaking rate minimizing validation MSE pooled over realizations.
    pub fn select_alpha(&self, data: &[Array2<f64>]) -> Result<ValidationResult<f64>> {
        if self.validation_len >= self.train {
            return Err(Error::InvalidInput("validation block longer than the training block".into()));
        }
        let cut = self.train - self.validation_len;
        let splits: Vec<Split<'_, f64>> = data
            .iter()
            .map(|d| Split { train: d.slice(s![..cut, ..]), validation: d.slice(s![cut..self.train, ..]) })
            .collect();
        let grid: Vec<HyperParams<f64>> = self.alpha_grid.iter().map(|&alpha| HyperParams { alpha, ..self.hp }).collect();
        validate_pooled(&splits, &grid, self.validation_ens, derive_seed(self.seed, 1))
    }
}

/// Per-element scores of one method pooled over realizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScores {
    pub name: String,
    pub mse: Vec<f64>,
    pub crps: Vec<f64>,
}

impl MethodScores {
    pub fn mse_summary(&self) -> MedianIqr {
        MedianIqr::of(&self.mse)
    }

    pub fn crps_summary(&self) -> MedianIqr {
        MedianIqr::of(&self.crps)
    }
}

fn ensemble_crps(fc: &ForecastEnsemble<f64>, truth: &Array2<f64>) -> Result<Vec<f64>> {
    let (n_f, n_l) = truth.dim();
    let mut out = Vec::with_capacity(n_l);
    for l in 0..n_l {
        let mut acc = 0.0;
        for j in 0..n_f {
            acc += crps(&fc.member_values(j, l), truth[[j, l]])?;
        }
        out.push(acc / n_f as f64);
    }
    Ok(out)
}

/// Test-window scores of ESN(α̂), ESN(α=1), the state-space reduction and
/// ARFIMA, in that order.
pub fn compare_methods(cfg: &LorenzBenchmark, data: &[Array2<f64>], alpha_hat: f64) -> Result<Vec<MethodScores>> {
    let esn_hat = HyperParams { alpha: alpha_hat, ..cfg.hp };
    let esn_one = HyperParams { alpha: 1.0, ..cfg.hp };
    let mut rows: Vec<MethodScores> = ["ESN(alpha_hat)", "ESN(alpha=1)", "State-space", "ARFIMA"]
        .iter()
        .map(|n| MethodScores { name: n.to_string(), mse: vec![], crps: vec![] })
        .collect();
    for (r, d) in data.iter().enumerate() {
        let train = d.slice(s![..cfg.train, ..]);
        let truth = d.slice(s![cfg.train..cfg.train + cfg.horizon, ..]).to_owned();
        let seed = derive_seed(cfg.seed, 100 + r as u64);
        let runs = [
            iterative_forecast(train, &esn_hat, cfg.horizon, cfg.n_ens, seed)?,
            iterative_forecast(train, &esn_one, cfg.horizon, cfg.n_ens, seed)?,
            state_space_forecast(train, &cfg.hp, cfg.horizon, cfg.n_ens, seed)?,
        ];
        for (row, fc) in rows.iter_mut().zip(&runs) {
            row.mse.extend(mse(fc.mean.view(), truth.view())?.per_element.iter().copied());
            row.crps.extend(ensemble_crps(fc, &truth)?);
        }
        let (_, mean, sd) = arfima_columns(train, cfg.horizon, &cfg.arfima)?;
        rows[3].mse.extend(mse(mean.view(), truth.view())?.per_element.iter().copied());
        for l in 0..truth.ncols() {
            let c: f64 = (0..cfg.horizon).map(|j| crps_gaussian(mean[[j, l]], sd[[j, l]], truth[[j, l]])).sum();
            rows[3].crps.push(c / cfg.horizon as f64);
        }
    }
    Ok(rows)
}

/// Coverage of the windowed residuals per element at `level`, with calibrated
/// `σ̃` or with the raw ensemble spread.
pub fn windowed_coverage(wf: &WindowedForecasts<f64>, model: &CalibrationModel<f64>, level: f64, calibrated: bool) -> Result<Vec<f64>> {
    let (n_l, n_f, n_w) = model.residuals.dim();
    (0..n_l)
        .map(|l| {
            let mut scaled = Vec::with_capacity(n_f * n_w);
            for j in 0..n_f {
                for w in 0..n_w {
                    let sd = if calibrated { model.sigma_tilde[[l, j]] } else { wf.spread[[l, j, w]].max(crate::calibration::SIGMA_MIN) };
                    scaled.push(model.residuals[[l, j, w]] / sd);
                }
            }
            central_coverage(&scaled, 1.0, level)
        })
        .collect()
}

/// Sparse-path point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub lambda_s: f64,
    pub nonzero: f64,
    /// Grand-mean variance relative to the unpenalized estimate.
    pub variance_ratio: f64,
    pub min_eigenvalue: f64,
    pub converged: bool,
}

/// Calibration and dependence diagnostics of one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationStudy {
    /// `[level][element]` for [`LEVELS`].
    pub calibrated: Vec<Vec<f64>>,
    pub uncalibrated: Vec<Vec<f64>>,
    pub ks_calibrated: f64,
    pub ks_uncalibrated: f64,
    pub mild_pairs: Vec<(usize, usize)>,
    /// Mean over mild pairs per level; `NaN` without mild pairs.
    pub difference_dependent: Vec<f64>,
    pub difference_independent: Vec<f64>,
    /// Same comparison over every ring-neighbour pair, whatever its correlation.
    pub neighbour_dependent: Vec<f64>,
    pub neighbour_independent: Vec<f64>,
    pub grand_mean_dependent: Vec<f64>,
    pub grand_mean_independent: Vec<f64>,
    pub path: Vec<PathPoint>,
    /// Max-abs gap between the λ = 0 estimate and `Ĉ`.
    pub path_zero_gap: f64,
    /// `[element, step]`.
    pub sigma_tilde: Array2<f64>,
    pub c_hat_min_eigenvalue: f64,
}

pub fn study_realization(cfg: &LorenzBenchmark, data: &Array2<f64>, alpha_hat: f64, seed: u64) -> Result<RealizationStudy> {
    let hp = HyperParams { alpha: alpha_hat, ..cfg.hp };
    let wf = build_windowed_forecasts(data.view(), cfg.train, &hp, cfg.n_w, cfg.n_f, cfg.n_ens, seed)?;
    let model = CalibrationModel::fit(&wf)?;
    let mut calibrated = Vec::new();
    let mut uncalibrated = Vec::new();
    for lv in LEVELS {
        calibrated.push(windowed_coverage(&wf, &model, lv, true)?);
        uncalibrated.push(windowed_coverage(&wf, &model, lv, false)?);
    }
    let ks_calibrated = ks_uniform(&model.pit_values());
    let ks_uncalibrated = ks_uniform(&uncalibrated_pit(&wf));

    let pooled = model.pooled_standardized();
    let c_hat = empirical_correlation(pooled.view())?;
    let indep = DependenceModel::identity(c_hat.dim());
    let mild_pairs = ring_pairs_in_band(&c_hat, cfg.mild_band.0, cfg.mild_band.1);
    let mut difference_dependent = Vec::new();
    let mut difference_independent = Vec::new();
    let all_pairs = ring_pairs_in_band(&c_hat, 0.0, 1.0);
    let mut neighbour_dependent = Vec::new();
    let mut neighbour_independent = Vec::new();
    let mut grand_mean_dependent = Vec::new();
    let mut grand_mean_independent = Vec::new();
    for lv in LEVELS {
        let (mut dep, mut ind) = (0.0, 0.0);
        for &(a, b) in &mild_pairs {
            dep += difference_coverage(pooled.view(), &c_hat, a, b, lv)?;
            ind += difference_coverage(pooled.view(), &indep, a, b, lv)?;
        }
        let k = mild_pairs.len() as f64;
        difference_dependent.push(if k > 0.0 { dep / k } else { f64::NAN });
        difference_independent.push(if k > 0.0 { ind / k } else { f64::NAN });
        let (mut dep, mut ind) = (0.0, 0.0);
        for &(a, b) in &all_pairs {
            dep += difference_coverage(pooled.view(), &c_hat, a, b, lv)?;
            ind += difference_coverage(pooled.view(), &indep, a, b, lv)?;
        }
        neighbour_dependent.push(dep / all_pairs.len() as f64);
        neighbour_independent.push(ind / all_pairs.len() as f64);
        grand_mean_dependent.push(grand_mean_coverage(pooled.view(), &c_hat, lv)?);
        grand_mean_independent.push(grand_mean_coverage(pooled.view(), &indep, lv)?);
    }

    let base = grand_mean_variance(&c_hat);
    let mut path = Vec::with_capacity(cfg.lambda_grid.len());
    let mut path_zero_gap = f64::NAN;
    for &lambda_s in &cfg.lambda_grid {
        let fit = sparse_correlation(&c_hat, lambda_s, &SparseConfig::default())?;
        if lambda_s == 0.0 {
            path_zero_gap = (fit.model.matrix() - c_hat.matrix()).iter().fold(0.0, |m, v| m.max(v.abs()));
        }
        path.push(PathPoint {
            lambda_s,
            nonzero: nonzero_proportion(&fit.model),
            variance_ratio: grand_mean_variance(&fit.model) / base,
            min_eigenvalue: min_eigenvalue(fit.model.matrix().view()),
            converged: fit.converged,
        });
    }
    Ok(RealizationStudy {
        calibrated,
        uncalibrated,
        ks_calibrated,
        ks_uncalibrated,
        mild_pairs,
        difference_dependent,
        difference_independent,
        neighbour_dependent,
        neighbour_independent,
        grand_mean_dependent,
        grand_mean_independent,
        path,
        path_zero_gap,
        c_hat_min_eigenvalue: min_eigenvalue(c_hat.matrix().view()),
        sigma_tilde: model.sigma_tilde,
    })
}

/// Runs [`study_realization`] on every realization.
pub fn calibration_study(cfg: &LorenzBenchmark, data: &[Array2<f64>], alpha_hat: f64) -> Result<Vec<RealizationStudy>> {
    data.iter()
        .enumerate()
        .map(|(r, d)| study_realization(cfg, d, alpha_hat, derive_seed(cfg.seed, 200 + r as u64)))
        .collect()
}

/// Table-2 style coverage summary: one row per method, `[level]` columns.
pub fn coverage_table(studies: &[RealizationStudy]) -> Vec<(String, Vec<MedianIqr>)> {
    let pool = |f: &dyn Fn(&RealizationStudy, usize) -> Vec<f64>| -> Vec<MedianIqr> {
        (0..LEVELS.len())
            .map(|k| {
                let v: Vec<f64> = studies.iter().flat_map(|s| f(s, k)).filter(|v| v.is_finite()).map(|v| 100.0 * v).collect();
                if v.is_empty() {
                    MedianIqr { median: f64::NAN, iqr: f64::NAN }
                } else {
                    MedianIqr::of(&v)
                }
            })
            .collect()
    };
    vec![
        ("Uncalibrated".into(), pool(&|s, k| s.uncalibrated[k].clone())),
        ("Calibrated".into(), pool(&|s, k| s.calibrated[k].clone())),
        ("Difference, dependent".into(), pool(&|s, k| vec![s.difference_dependent[k]])),
        ("Difference, independent".into(), pool(&|s, k| vec![s.difference_independent[k]])),
        ("Neighbours, dependent".into(), pool(&|s, k| vec![s.neighbour_dependent[k]])),
        ("Neighbours, independent".into(), pool(&|s, k| vec![s.neighbour_independent[k]])),
        ("Grand mean, dependent".into(), pool(&|s, k| vec![s.grand_mean_dependent[k]])),
        ("Grand mean, independent".into(), pool(&|s, k| vec![s.grand_mean_independent[k]])),
    ]
}

/// Plain-text median (IQR) table.
pub fn render_methods(rows: &[MethodScores]) -> String {
    let mut out = format!("{:<16} {:>14} {:>14}\n", "Method", "MSE", "CRPS");
    for r in rows {
        out.push_str(&format!("{:<16} {:>14} {:>14}\n", r.name, r.mse_summary().to_string(), r.crps_summary().to_string()));
    }
    out
}

pub fn render_coverage(rows: &[(String, Vec<MedianIqr>)]) -> String {
    let mut out = format!("{:<24}", "Coverage (%)");
    for lv in LEVELS {
        out.push_str(&format!(" {:>14}", format!("{:.0}%", lv * 100.0)));
    }
    out.push('\n');
    for (name, cells) in rows {
        out.push_str(&format!("{name:<24}"));
        for c in cells {
            out.push_str(&format!(" {:>14}", c.to_string()));
        }
        out.push('\n');
    }
    out
}

/// Synthetic spatio-temporal Gaussian benchmark with a nonstationary
/// two-regime correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpatialBenchmark {
    pub stations: usize,
    /// Per-knot true ranges on a `1 × n` knot row across the unit square.
    pub true_ranges: Vec<f64>,
    pub true_nugget: f64,
    /// Lag-one temporal autocorrelation of the field.
    pub persistence: f64,
    pub train_times: usize,
    pub test_times: usize,
    pub knot_rows: usize,
    pub knot_cols: usize,
    pub seed: u64,
}

impl Default for SpatialBenchmark {
    fn default() -> Self {
        Self {
            stations: 40,
            true_ranges: vec![0.15, 0.6],
            true_nugget: 0.05,
            persistence: 0.5,
            train_times: 300,
            test_times: 300,
            knot_rows: 1,
            knot_cols: 2,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialStudy {
    pub fitted: SpatialModel<f64>,
    pub delta_c: f64,
    /// Test-period grand-mean coverage per level of [`LEVELS`].
    pub shrunk: Vec<f64>,
    pub independent: Vec<f64>,
    pub empirical: Vec<f64>,
    pub shrunk_min_eigenvalue: f64,
}

impl SpatialBenchmark {
    pub fn station_locations(&self) -> Vec<Point<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, 0));
        (0..self.stations).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect()
    }

    fn truth(&self, stations: &[Point<f64>]) -> Result<SpatialModel<f64>> {
        let n = self.true_ranges.len();
        let knots: Vec<Point<f64>> = (0..n).map(|k| [(k as f64 + 0.5) / n as f64, 0.5]).collect();
        let bw = default_bandwidth(&knots, stations);
        SpatialModel::isotropic(knots, &self.true_ranges, bw, self.true_nugget)
    }

    /// Standardized anomalies `x_t = a x_{t-1} + sqrt(1 − a²) L z_t`.
    pub fn simulate(&self, stations: &[Point<f64>]) -> Result<Array2<f64>> {
        let c = spatial_correlation_matrix(&self.truth(stations)?, stations)?;
        let l = Cholesky::new(c.matrix().view())?.factor().clone();
        let a = self.persistence;
        let b = (1.0 - a * a).sqrt();
        let n = stations.len();
        let total = self.train_times + self.test_times;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, 1));
        let mut out = Array2::zeros((total, n));
        let mut x = l.dot(&ndarray::Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal)));
        for t in 0..total {
            if t > 0 {
                let z = ndarray::Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
                x = x * a + l.dot(&z) * b;
            }
            out.row_mut(t).assign(&x);
        }
        Ok(out)
    }

    /// Fits the kernel model and shrinkage weight on the training period and
    /// scores grand-mean coverage on the test period.
    pub fn run(&self) -> Result<SpatialStudy> {
        let stations = self.station_locations();
        let x = self.simulate(&stations)?;
        let train = x.slice(s![..self.train_times, ..]);
        let test = x.slice(s![self.train_times.., ..]);
        let knots = grid_knots(&stations, self.knot_rows, self.knot_cols)?;
        let bw = default_bandwidth(&knots, &stations);
        let fitted = fit_local_ranges(&stations, train, &knots, bw, &LocalFitConfig::default())?;
        let c_spatial = spatial_correlation_matrix(&fitted, &stations)?;
        let c_hat = empirical_correlation(train)?;
        let delta_c = select_delta(&c_spatial, &c_hat, train, &LEVELS)?;
        let c = shrink(&c_spatial, &c_hat, delta_c)?;
        let indep = DependenceModel::identity(stations.len());
        let score = |m: &DependenceModel<f64>| -> Result<Vec<f64>> { LEVELS.iter().map(|&lv| grand_mean_coverage(test, m, lv)).collect() };
        Ok(SpatialStudy {
            shrunk: score(&c)?,
            independent: score(&indep)?,
            empirical: score(&c_hat)?,
            shrunk_min_eigenvalue: min_eigenvalue(c.matrix().view()),
            fitted,
            delta_c,
        })
    }
}
