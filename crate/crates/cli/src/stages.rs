//! Pipeline stages. Each reads its inputs from the config and from earlier
//! artifacts in the output directory, and returns the files it wrote.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use esncast::benchmark::{calibration_study, compare_methods, coverage_table, render_coverage, render_methods, SpatialBenchmark, LEVELS};
use esncast::calibration::{build_windowed_forecasts, coverage, uncalibrated_pit};
use esncast::dependence::{empirical_correlation, grand_mean_variance, nonzero_proportion, sparse_correlation};
use esncast::exposure::{district_means, exposure_series, DistrictSet};
use esncast::forecasting::{iterative_forecast, validate_hyperparameters};
use esncast::lorenz96::simulate;
use esncast::seed::derive_seed;
use esncast::spatial::{default_bandwidth, fit_local_ranges, grid_knots, krige, select_delta, shrink, spatial_correlation_matrix, GridSpec};
use esncast::stats::{ks_uniform, MedianIqr};
use esncast::{Calibration, Hyper, Spatial};
use ndarray::s;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Search, Transform};
use crate::io::{self, Series};
use crate::UsageError;

pub struct Stage<'a> {
    pub cfg: &'a RunConfig,
    pub out: &'a Path,
    pub written: Vec<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CalibrationArtifact {
    pub names: Vec<String>,
    pub origin: usize,
    pub transform: Transform,
    pub model: Calibration,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SpatialArtifact {
    pub names: Vec<String>,
    pub model: Spatial,
    pub delta_c: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Evaluation {
    hp: Hyper,
    mse: f64,
}

impl<'a> Stage<'a> {
    pub fn new(cfg: &'a RunConfig, out: &'a Path) -> Self {
        Self { cfg, out, written: Vec::new() }
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.written.push(p.clone());
        p
    }

    fn artifact(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn seed(&self, stream: u64) -> u64 {
        derive_seed(self.cfg.seed, stream)
    }

    fn series(&self) -> Result<Series> {
        let mut s = io::read_series(self.cfg.require_series()?)?;
        if self.cfg.transform == Transform::Log {
            if let Some(v) = s.values.iter().find(|v| **v <= 0.0) {
                return Err(UsageError(format!("log transform needs positive data, found {v}")).into());
            }
            s.values.mapv_inplace(f64::ln);
        }
        Ok(s)
    }

    /// Validated hyper-parameters when present, else the configured ones.
    fn hyper(&self) -> Result<Hyper> {
        let p = self.artifact("hyperparams.json");
        if p.is_file() {
            io::read_json(&p)
        } else {
            Ok(self.cfg.esn)
        }
    }

    fn calibration(&self) -> Result<CalibrationArtifact> {
        io::read_json(&self.artifact("calibration.json"))
    }

    pub fn simulate_lorenz96(&mut self, realizations: usize, points: usize) -> Result<()> {
        let lorenz = esncast::Lorenz96 { seed: self.cfg.seed, ..self.cfg.benchmark.lorenz };
        let data = simulate(&lorenz, points, realizations)?;
        let names: Vec<String> = (1..=lorenz.n_l).map(|l| format!("x{l}")).collect();
        let width = realizations.saturating_sub(1).to_string().len().max(2);
        for (r, values) in data.into_iter().enumerate() {
            let times = (0..points).map(|t| t.to_string()).collect();
            let p = self.path(&format!("lorenz96_{r:0width$}.csv"));
            io::write_series(&p, &Series { times, names: names.clone(), values })?;
        }
        Ok(())
    }

    pub fn validate(&mut self) -> Result<()> {
        let s = self.series()?;
        let v = &self.cfg.validation;
        let n = s.values.nrows();
        if v.holdout == 0 || v.holdout >= n {
            return Err(UsageError(format!("validation.holdout = {} must lie in 1..{n}", v.holdout)).into());
        }
        let train = s.values.slice(s![..n - v.holdout, ..]);
        let val = s.values.slice(s![n - v.holdout.., ..]);
        let seed = self.seed(1);
        let mut seen: Vec<Evaluation> = Vec::new();
        let score = |grid: Vec<Hyper>, seen: &mut Vec<Evaluation>| -> Result<Hyper> {
            let fresh: Vec<Hyper> = grid.iter().filter(|h| !seen.iter().any(|e| e.hp == **h)).copied().collect();
            if !fresh.is_empty() {
                let r = validate_hyperparameters(train, val, &fresh, v.n_ens, seed)?;
                seen.extend(r.grid.into_iter().zip(r.scores).map(|(hp, mse)| Evaluation { hp, mse }));
            }
            // earliest grid entry wins ties
            let mut best: Option<(Hyper, f64)> = None;
            for h in grid {
                let mse = seen.iter().find(|e| e.hp == h).map(|e| e.mse).unwrap_or(f64::INFINITY);
                if best.is_none_or(|(_, b)| mse < b) {
                    best = Some((h, mse));
                }
            }
            Ok(best.expect("grid is non-empty").0)
        };
        let best = match v.search {
            Search::Full => {
                let mut grid = Vec::new();
                for &n_h in &v.n_h {
                    for &m in &v.m {
                        for &nu in &v.nu {
                            for &lambda_r in &v.lambda_r {
                                for &alpha in &v.alpha {
                                    grid.push(Hyper { n_h, m, nu, lambda_r, alpha, ..self.cfg.esn });
                                }
                            }
                        }
                    }
                }
                score(grid, &mut seen)?
            }
            Search::Coordinate => {
                let mut cur = self.cfg.esn;
                for _ in 0..v.rounds.max(1) {
                    cur = score(v.n_h.iter().map(|&n_h| Hyper { n_h, ..cur }).collect(), &mut seen)?;
                    cur = score(v.m.iter().map(|&m| Hyper { m, ..cur }).collect(), &mut seen)?;
                    cur = score(v.nu.iter().map(|&nu| Hyper { nu, ..cur }).collect(), &mut seen)?;
                    cur = score(v.lambda_r.iter().map(|&lambda_r| Hyper { lambda_r, ..cur }).collect(), &mut seen)?;
                    cur = score(v.alpha.iter().map(|&alpha| Hyper { alpha, ..cur }).collect(), &mut seen)?;
                }
                cur
            }
        };
        let p = self.path("validation.json");
        io::write_json(&p, &serde_json::json!({ "search": v.search, "holdout": v.holdout, "best": best, "evaluations": seen }))?;
        let p = self.path("hyperparams.json");
        io::write_json(&p, &best)
    }

    pub fn forecast(&mut self, with_intervals: bool) -> Result<()> {
        let s = self.series()?;
        let f = &self.cfg.forecast;
        let n = s.values.nrows();
        let n_train = f.train.unwrap_or(n);
        if n_train > n {
            return Err(UsageError(format!("forecast.train = {n_train} exceeds the {n} available rows")).into());
        }
        let hp = self.hyper()?;
        let fc = iterative_forecast(s.values.slice(s![..n_train, ..]), &hp, f.horizon, f.n_ens, self.seed(2))?;
        let held = (n - n_train).min(f.horizon);
        let times: Vec<String> = (0..f.horizon).map(|j| if j < held { s.times[n_train + j].clone() } else { next_label(&s.times[n - 1], j + 1 - held) }).collect();
        let p = self.path("forecast.csv");
        io::write_series(&p, &Series { times: times.clone(), names: s.names.clone(), values: fc.mean.clone() })?;
        let p = self.path("forecast_spread.csv");
        io::write_series(&p, &Series { times: times.clone(), names: s.names.clone(), values: fc.spread() })?;
        if !with_intervals {
            return Ok(());
        }
        let cal = self.calibration()?;
        if cal.names != s.names {
            bail!("calibration was fitted on different elements");
        }
        let p = self.path("intervals.csv");
        let mut w = csv::Writer::from_path(&p).with_context(|| format!("cannot create {}", p.display()))?;
        w.write_record(["time", "element", "step", "level", "mean", "lower", "upper", "lower_exp", "upper_exp", "truth"])?;
        let mut summary = Vec::new();
        for &level in &f.levels {
            let iv = cal.model.intervals(fc.mean.view(), level)?;
            let mut pairs = Vec::new();
            let mut truth = Vec::new();
            for j in 0..f.horizon {
                for (l, name) in s.names.iter().enumerate() {
                    let (lo, hi) = (iv[[j, l, 0]], iv[[j, l, 1]]);
                    let y = (j < held).then(|| s.values[[n_train + j, l]]);
                    w.write_record([
                        times[j].clone(),
                        name.clone(),
                        (j + 1).to_string(),
                        io::fmt(level),
                        io::fmt(fc.mean[[j, l]]),
                        io::fmt(lo),
                        io::fmt(hi),
                        io::fmt(lo.exp()),
                        io::fmt(hi.exp()),
                        y.map(io::fmt).unwrap_or_default(),
                    ])?;
                    if let Some(y) = y {
                        pairs.push((lo, hi));
                        truth.push(y);
                    }
                }
            }
            summary.push(serde_json::json!({ "level": level, "n": truth.len(), "coverage": coverage(&pairs, &truth)? }));
        }
        w.flush()?;
        let p = self.path("coverage.json");
        io::write_json(&p, &summary)
    }

    pub fn calibrate(&mut self) -> Result<()> {
        let s = self.series()?;
        let c = &self.cfg.calibration;
        let n = s.values.nrows();
        let span = c.n_w * c.n_f;
        let origin = match c.origin {
            Some(o) => o,
            None if n > span => n - span,
            None => return Err(UsageError(format!("{n} rows cannot hold {} windows of {} steps", c.n_w, c.n_f)).into()),
        };
        let hp = self.hyper()?;
        let wf = build_windowed_forecasts(s.values.view(), origin, &hp, c.n_w, c.n_f, c.n_ens, self.seed(3))?;
        let model = Calibration::fit(&wf)?;
        let levels = &self.cfg.forecast.levels;
        let mut cal_cov = Vec::new();
        let mut raw_cov = Vec::new();
        for &lv in levels {
            cal_cov.push(MedianIqr::of(&esncast::benchmark::windowed_coverage(&wf, &model, lv, true)?));
            raw_cov.push(MedianIqr::of(&esncast::benchmark::windowed_coverage(&wf, &model, lv, false)?));
        }
        let summary = serde_json::json!({
            "origin": origin,
            "levels": levels,
            "calibrated_coverage": cal_cov,
            "uncalibrated_coverage": raw_cov,
            "ks_calibrated": ks_uniform(&model.pit_values()),
            "ks_uncalibrated": ks_uniform(&uncalibrated_pit(&wf)),
        });
        let p = self.path("calibration_summary.json");
        io::write_json(&p, &summary)?;
        let p = self.path("sigma_tilde.csv");
        let times = (1..=c.n_f).map(|j| j.to_string()).collect();
        io::write_series(&p, &Series { times, names: s.names.clone(), values: model.sigma_tilde.t().to_owned() })?;
        let pooled = model.pooled_standardized();
        let times = (0..pooled.nrows()).map(|r| format!("{}/{}", r / c.n_w + 1, r % c.n_w)).collect();
        let p = self.path("standardized.csv");
        io::write_series(&p, &Series { times, names: s.names.clone(), values: pooled })?;
        let p = self.path("calibration.json");
        io::write_json(&p, &CalibrationArtifact { names: s.names, origin, transform: self.cfg.transform, model })
    }

    pub fn dependence(&mut self) -> Result<()> {
        let cal = self.calibration()?;
        let d = &self.cfg.dependence;
        let c_hat = empirical_correlation(cal.model.pooled_standardized().view())?;
        let p = self.path("correlation.csv");
        io::write_matrix(&p, &cal.names, c_hat.matrix())?;
        let base = grand_mean_variance(&c_hat);
        let p = self.path("sparse_path.csv");
        let mut w = csv::Writer::from_path(&p)?;
        w.write_record(["lambda_s", "nonzero", "variance_ratio", "converged"])?;
        for &lambda in &d.lambda_grid {
            let fit = sparse_correlation(&c_hat, lambda, &d.solver)?;
            let ratio = grand_mean_variance(&fit.model) / base;
            w.write_record([io::fmt(lambda), io::fmt(nonzero_proportion(&fit.model)), io::fmt(ratio), fit.converged.to_string()])?;
        }
        w.flush()?;
        let fit = sparse_correlation(&c_hat, d.lambda, &d.solver)?;
        let p = self.path("correlation_sparse.csv");
        io::write_matrix(&p, &cal.names, fit.model.matrix())
    }

    fn stations(&self, names: &[String]) -> Result<Vec<[f64; 2]>> {
        io::align_stations(&io::read_stations(self.cfg.require_stations()?)?, names)
    }

    pub fn spatial(&mut self) -> Result<()> {
        let cal = self.calibration()?;
        let sp = &self.cfg.spatial;
        let stations = self.stations(&cal.names)?;
        let knots = grid_knots(&stations, sp.knot_rows, sp.knot_cols)?;
        let bandwidth = sp.bandwidth.unwrap_or_else(|| default_bandwidth(&knots, &stations));
        let pooled = cal.model.pooled_standardized();
        let model = fit_local_ranges(&stations, pooled.view(), &knots, bandwidth, &sp.fit)?;
        let c_spatial = spatial_correlation_matrix(&model, &stations)?;
        let c_hat = empirical_correlation(pooled.view())?;
        let delta_c = select_delta(&c_spatial, &c_hat, pooled.view(), &self.cfg.forecast.levels)?;
        let shrunk = shrink(&c_spatial, &c_hat, delta_c)?;
        let p = self.path("correlation_spatial.csv");
        io::write_matrix(&p, &cal.names, c_spatial.matrix())?;
        let p = self.path("correlation_shrunk.csv");
        io::write_matrix(&p, &cal.names, shrunk.matrix())?;
        let p = self.path("spatial_model.json");
        io::write_json(&p, &SpatialArtifact { names: cal.names, model, delta_c })
    }

    pub fn interpolate(&mut self) -> Result<()> {
        let fc = io::read_series(&self.artifact("forecast.csv"))?;
        let cal = self.calibration()?;
        let spatial: SpatialArtifact = io::read_json(&self.artifact("spatial_model.json"))?;
        if fc.names != cal.names || spatial.names != cal.names {
            bail!("forecast, calibration and spatial model disagree on elements");
        }
        let n_t = fc.values.nrows();
        if n_t > cal.model.horizon() {
            bail!("forecast horizon {n_t} exceeds the calibrated horizon {}", cal.model.horizon());
        }
        let stations = self.stations(&cal.names)?;
        let sigma = cal.model.sigma_tilde.slice(s![.., ..n_t]).t().to_owned();
        let sp = &self.cfg.spatial;
        let grid = match sp.grid {
            Some(g) => g,
            None => {
                let (xs, ys): (Vec<f64>, Vec<f64>) = stations.iter().map(|p| (p[0], p[1])).unzip();
                let lo = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                GridSpec { min_x: lo(&xs), max_x: hi(&xs), min_y: lo(&ys), max_y: hi(&ys), nx: sp.nx, ny: sp.ny }
            }
        };
        let field = krige(fc.values.view(), sigma.view(), &spatial.model, &stations, &grid.points()?)?;
        let p = self.path("field.csv");
        io::write_field(&p, &fc.times, &field)
    }

    pub fn exposure(&mut self) -> Result<()> {
        if self.cfg.transform != Transform::Log {
            return Err(UsageError("exposure needs a log-scale model: set transform = \"log\"".into()).into());
        }
        let e = &self.cfg.exposure;
        let (times, field) = io::read_field(&self.artifact("field.csv"))?;
        let spatial: SpatialArtifact = io::read_json(&self.artifact("spatial_model.json"))?;
        let path = self.cfg.require_districts()?;
        let text = std::fs::read_to_string(path).map_err(|err| UsageError(format!("cannot read {}: {err}", path.display())))?;
        let districts = DistrictSet::from_geojson(&text).map_err(|err| UsageError(format!("{}: {err}", path.display())))?;
        let means = district_means(field.mean.view(), &field.points, &districts)?;
        let sds = district_means(field.forecast_sd.view(), &field.points, &districts)?;
        let corr = spatial_correlation_matrix(&spatial.model, &districts.centroids())?;
        let ex = exposure_series(means.view(), sds.view(), &corr, &districts.populations(), e.threshold, e.draws, e.level, self.seed(5))?;
        let p = self.path("exposure.csv");
        let mut w = csv::Writer::from_path(&p)?;
        w.write_record(["time", "mean_exposed", "lo", "hi"])?;
        for (t, time) in times.iter().enumerate() {
            w.write_record([time.clone(), io::fmt(ex.mean_exposed[t]), ex.lo[t].to_string(), ex.hi[t].to_string()])?;
        }
        w.flush()?;
        let cut = e.threshold.ln();
        let p = self.path("exceedance.csv");
        let mut w = csv::Writer::from_path(&p)?;
        w.write_record(["time", "district", "probability", "exceeds"])?;
        for (t, time) in times.iter().enumerate() {
            for (d, district) in districts.districts.iter().enumerate() {
                w.write_record([time.clone(), district.id.clone(), io::fmt(ex.exceedance[[t, d]]), (means[[t, d]] > cut).to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn benchmark(&mut self, alpha: Option<f64>) -> Result<String> {
        let mut b = self.cfg.benchmark.clone();
        b.seed = self.cfg.seed;
        b.lorenz.seed = self.cfg.seed;
        let data = b.simulate()?;
        let (alpha_hat, validation) = match alpha {
            Some(a) => (a, None),
            None => {
                let v = b.select_alpha(&data)?;
                (v.best_params().alpha, Some(v))
            }
        };
        let methods = compare_methods(&b, &data, alpha_hat)?;
        let studies = calibration_study(&b, &data, alpha_hat)?;
        let table = coverage_table(&studies);
        let synthetic = SpatialBenchmark { seed: self.cfg.seed, ..Default::default() }.run()?;
        let mut text = format!("alpha_hat = {alpha_hat}\n\n{}\n{}", render_methods(&methods), render_coverage(&table));
        text.push_str(&format!(
            "\nSynthetic spatial grand-mean coverage (%), levels {:?}\n  shrunk (delta_c = {}): {:?}\n  independent: {:?}\n",
            LEVELS,
            synthetic.delta_c,
            synthetic.shrunk.iter().map(|v| (v * 1000.0).round() / 10.0).collect::<Vec<_>>(),
            synthetic.independent.iter().map(|v| (v * 1000.0).round() / 10.0).collect::<Vec<_>>(),
        ));
        let p = self.path("benchmark.txt");
        std::fs::write(&p, &text)?;
        let p = self.path("benchmark.json");
        io::write_json(
            &p,
            &serde_json::json!({
                "alpha_hat": alpha_hat,
                "validation": validation,
                "methods": methods,
                "coverage": table,
                "realizations": studies,
                "synthetic_spatial": synthetic,
            }),
        )?;
        Ok(text)
    }
}

/// Label `k` steps after `last`: integers count on, anything else gets `+k`.
fn next_label(last: &str, k: usize) -> String {
    match last.parse::<i64>() {
        Ok(v) => (v + k as i64).to_string(),
        Err(_) => format!("{last}+{k}"),
    }
}

pub fn hash_file(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}
