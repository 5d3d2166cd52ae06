//! TOML run configuration.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use esncast::benchmark::LorenzBenchmark;
use esncast::dependence::SparseConfig;
use esncast::exposure::{DEFAULT_DRAWS, DEFAULT_THRESHOLD};
use esncast::spatial::{GridSpec, LocalFitConfig};
use esncast::Hyper;
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    #[default]
    None,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Search {
    /// Cycle through the parameters, searching one grid at a time.
    #[default]
    Coordinate,
    /// Every combination of the grids.
    Full,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    /// Time series CSV, `time,<element_1>,…`.
    pub series: Option<PathBuf>,
    /// Station metadata CSV, `id,lon,lat`.
    pub stations: Option<PathBuf>,
    /// District polygons as GeoJSON with a `population` property.
    pub districts: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    pub n_h: Vec<usize>,
    pub m: Vec<usize>,
    pub nu: Vec<f64>,
    pub lambda_r: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Trailing rows held out for scoring.
    pub holdout: usize,
    pub n_ens: usize,
    pub search: Search,
    /// Passes over the parameters in coordinate search.
    pub rounds: usize,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        let mut alpha: Vec<f64> = (1..=100).map(|s| s as f64 * 1e-4).chain((1..=100).map(|s| s as f64 * 1e-2)).collect();
        alpha.sort_by(f64::total_cmp);
        alpha.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        Self {
            n_h: (0..=5).map(|s| 30 + 30 * s).collect(),
            m: (2..=6).collect(),
            nu: (1..=20).map(|s| s as f64 * 0.05).collect(),
            lambda_r: vec![0.001, 0.005, 0.01],
            alpha,
            holdout: 20,
            n_ens: 300,
            search: Search::Coordinate,
            rounds: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    /// Rows used for training; the rest, if any, are held-out truth.
    pub train: Option<usize>,
    pub horizon: usize,
    pub n_ens: usize,
    pub levels: Vec<f64>,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self { train: None, horizon: 20, n_ens: 300, levels: vec![0.95, 0.80, 0.60] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    /// First forecast origin; defaults to leaving exactly `n_w · n_f` rows.
    pub origin: Option<usize>,
    pub n_w: usize,
    pub n_f: usize,
    pub n_ens: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { origin: None, n_w: 20, n_f: 20, n_ens: 300 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DependenceConfig {
    pub lambda_grid: Vec<f64>,
    /// Penalty of the sparse estimate written alongside the path.
    pub lambda: f64,
    pub solver: SparseConfig,
}

impl Default for DependenceConfig {
    fn default() -> Self {
        Self { lambda_grid: (0..=10).map(|k| k as f64 * 0.02).collect(), lambda: 0.0, solver: SparseConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpatialConfig {
    pub knot_rows: usize,
    pub knot_cols: usize,
    /// Kernel bandwidth; defaults to `(d_min / 2)²` over the knots.
    pub bandwidth: Option<f64>,
    pub fit: LocalFitConfig,
    /// Prediction grid; defaults to the station bounding box.
    pub grid: Option<GridSpec>,
    pub nx: usize,
    pub ny: usize,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        Self { knot_rows: 2, knot_cols: 2, bandwidth: None, fit: LocalFitConfig::default(), grid: None, nx: 40, ny: 40 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExposureConfig {
    /// Exceedance threshold on the original scale.
    pub threshold: f64,
    pub draws: usize,
    pub level: f64,
}

impl Default for ExposureConfig {
    fn default() -> Self {
        Self { threshold: DEFAULT_THRESHOLD, draws: DEFAULT_DRAWS, level: 0.95 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub transform: Transform,
    pub data: DataPaths,
    pub esn: Hyper,
    pub validation: ValidationConfig,
    pub forecast: ForecastConfig,
    pub calibration: CalibrationConfig,
    pub dependence: DependenceConfig,
    pub spatial: SpatialConfig,
    pub exposure: ExposureConfig,
    pub benchmark: LorenzBenchmark,
}

impl RunConfig {
    /// Reads a config file; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.series, &mut cfg.data.stations, &mut cfg.data.districts].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        let v = &self.validation;
        let grids = [
            ("validation.n_h", v.n_h.is_empty()),
            ("validation.m", v.m.is_empty()),
            ("validation.nu", v.nu.is_empty()),
            ("validation.lambda_r", v.lambda_r.is_empty()),
            ("validation.alpha", v.alpha.is_empty()),
            ("forecast.levels", self.forecast.levels.is_empty()),
            ("dependence.lambda_grid", self.dependence.lambda_grid.is_empty()),
            ("benchmark.alpha_grid", self.benchmark.alpha_grid.is_empty()),
        ];
        for (name, empty) in grids {
            if empty {
                return Err(UsageError(format!("{name} must not be empty")).into());
            }
        }
        for p in [&self.data.series, &self.data.stations, &self.data.districts].into_iter().flatten() {
            if !p.is_file() {
                return Err(UsageError(format!("input file {} does not exist", p.display())).into());
            }
        }
        Ok(())
    }

    /// SHA-256 of the effective configuration.
    pub fn hash(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        let text = serde_json::to_string(self).context("serializing config")?;
        Ok(format!("{:x}", Sha256::digest(text.as_bytes())))
    }

    pub fn require_series(&self) -> Result<&Path> {
        self.data.series.as_deref().ok_or_else(|| UsageError("no series file: set data.series or pass --series".into()).into())
    }

    pub fn require_stations(&self) -> Result<&Path> {
        self.data.stations.as_deref().ok_or_else(|| UsageError("no station file: set data.stations or pass --stations".into()).into())
    }

    pub fn require_districts(&self) -> Result<&Path> {
        self.data.districts.as_deref().ok_or_else(|| UsageError("no district file: set data.districts or pass --districts".into()).into())
    }
}
