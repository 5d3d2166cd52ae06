//! District aggregation of interpolated fields and exposed-population counts.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dependence::DependenceModel;
use crate::error::{Error, Result};
use crate::linalg::{floor_eigenvalues, Cholesky};
use crate::scalar::Scalar;
use crate::seed::derive_seed;
use crate::spatial::Point;

/// Default number of joint draws.
pub const DEFAULT_DRAWS: usize = 2000;
/// Default exceedance threshold on the original scale.
pub const DEFAULT_THRESHOLD: f64 = 12.1;

/// A district made of one or more polygons, each an outer ring followed by holes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct District {
    pub id: String,
    pub polygons: Vec<Vec<Vec<Point<f64>>>>,
    pub population: f64,
}

impl District {
    pub fn contains(&self, p: &Point<f64>) -> bool {
        self.polygons.iter().any(|rings| {
            // even-odd over the outer ring and its holes
            rings.iter().filter(|r| ring_contains(r, p)).count() % 2 == 1
        })
    }

    /// Area-weighted centroid of the outer rings.
    pub fn centroid(&self) -> Point<f64> {
        let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
        for rings in &self.polygons {
            if let Some(r) = rings.first() {
                let (ra, rx, ry) = ring_moments(r);
                a += ra;
                cx += rx;
                cy += ry;
            }
        }
        if a.abs() < 1e-300 {
            let pts: Vec<&Point<f64>> = self.polygons.iter().flat_map(|r| r.first()).flatten().collect();
            let n = pts.len().max(1) as f64;
            return [pts.iter().map(|p| p[0]).sum::<f64>() / n, pts.iter().map(|p| p[1]).sum::<f64>() / n];
        }
        [cx / a, cy / a]
    }
}

fn ring_moments(r: &[Point<f64>]) -> (f64, f64, f64) {
    let n = r.len();
    let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let p = r[i];
        let q = r[(i + 1) % n];
        let cross = p[0] * q[1] - q[0] * p[1];
        a += cross;
        cx += (p[0] + q[0]) * cross;
        cy += (p[1] + q[1]) * cross;
    }
    (a / 2.0, cx / 6.0, cy / 6.0)
}

/// Ray-casting point-in-ring test (closing edge implied).
pub fn ring_contains(ring: &[Point<f64>], p: &Point<f64>) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0];
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn segments_cross(a: Point<f64>, b: Point<f64>, c: Point<f64>, d: Point<f64>) -> bool {
    let orient = |p: Point<f64>, q: Point<f64>, r: Point<f64>| (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    o1 * o2 < 0.0 && o3 * o4 < 0.0
}

/// True when no two non-adjacent edges of the ring properly intersect.
pub fn ring_is_simple(ring: &[Point<f64>]) -> bool {
    let mut r = ring.to_vec();
    if r.len() > 1 && r.first() == r.last() {
        r.pop();
    }
    let n = r.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_cross(r[i], r[(i + 1) % n], r[j], r[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistrictSet {
    pub districts: Vec<District>,
}

impl DistrictSet {
    pub fn new(districts: Vec<District>) -> Result<Self> {
        for d in &districts {
            if !(d.population >= 0.0) || !d.population.is_finite() {
                return Err(Error::InvalidInput(format!("district {} has population {}", d.id, d.population)));
            }
            if d.polygons.is_empty() {
                return Err(Error::InvalidInput(format!("district {} has no polygon", d.id)));
            }
            for rings in &d.polygons {
                if rings.is_empty() || !rings.iter().all(|r| ring_is_simple(r)) {
                    return Err(Error::InvalidInput(format!("district {} has a degenerate or self-intersecting ring", d.id)));
                }
            }
        }
        Ok(Self { districts })
    }

    pub fn len(&self) -> usize {
        self.districts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.districts.is_empty()
    }

    pub fn populations(&self) -> Vec<f64> {
        self.districts.iter().map(|d| d.population).collect()
    }

    pub fn centroids(&self) -> Vec<Point<f64>> {
        self.districts.iter().map(District::centroid).collect()
    }

    pub fn total_population(&self) -> f64 {
        self.districts.iter().map(|d| d.population).sum()
    }

    /// Grid-point indices falling inside each district.
    pub fn membership(&self, points: &[Point<f64>]) -> Vec<Vec<usize>> {
        self.districts.iter().map(|d| (0..points.len()).filter(|&k| d.contains(&points[k])).collect()).collect()
    }

    /// Parses a GeoJSON `FeatureCollection` of `Polygon`/`MultiPolygon`
    /// features carrying a numeric `population` property. The id is taken from
    /// the feature `id`, else the `id` or `name` property, else the position.
    pub fn from_geojson(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("GeoJSON: {e}")))?;
        let features = v
            .get("features")
            .and_then(|f| f.as_array())
            .ok_or_else(|| Error::InvalidInput("GeoJSON: expected a FeatureCollection".into()))?;
        let mut out = Vec::with_capacity(features.len());
        for (k, f) in features.iter().enumerate() {
            let props = f.get("properties");
            let population = props
                .and_then(|p| p.get("population"))
                .and_then(|p| p.as_f64())
                .ok_or_else(|| Error::InvalidInput(format!("GeoJSON feature {k}: missing numeric population")))?;
            let id = f
                .get("id")
                .or_else(|| props.and_then(|p| p.get("id")))
                .or_else(|| props.and_then(|p| p.get("name")))
                .map(|v| v.as_str().map(str::to_owned).unwrap_or_else(|| v.to_string()))
                .unwrap_or_else(|| k.to_string());
            let geom = f.get("geometry").ok_or_else(|| Error::InvalidInput(format!("GeoJSON feature {k}: no geometry")))?;
            let coords = geom.get("coordinates").ok_or_else(|| Error::InvalidInput(format!("GeoJSON feature {k}: no coordinates")))?;
            let polygons = match geom.get("type").and_then(|t| t.as_str()) {
                Some("Polygon") => vec![parse_rings(coords, k)?],
                Some("MultiPolygon") => coords
                    .as_array()
                    .ok_or_else(|| Error::InvalidInput(format!("GeoJSON feature {k}: bad MultiPolygon")))?
                    .iter()
                    .map(|p| parse_rings(p, k))
                    .collect::<Result<_>>()?,
                other => return Err(Error::InvalidInput(format!("GeoJSON feature {k}: unsupported geometry {other:?}"))),
            };
            out.push(District { id, polygons, population });
        }
        Self::new(out)
    }

    pub fn to_geojson(&self) -> String {
        let features: Vec<serde_json::Value> = self
            .districts
            .iter()
            .map(|d| {
                // GeoJSON rings repeat their first vertex
                let closed: Vec<Vec<Vec<Point<f64>>>> = d
                    .polygons
                    .iter()
                    .map(|rings| rings.iter().map(|r| r.iter().chain(r.first()).copied().collect()).collect())
                    .collect();
                serde_json::json!({
                    "type": "Feature",
                    "id": d.id,
                    "properties": { "population": d.population },
                    "geometry": { "type": "MultiPolygon", "coordinates": closed },
                })
            })
            .collect();
        serde_json::json!({ "type": "FeatureCollection", "features": features }).to_string()
    }
}

fn parse_rings(v: &serde_json::Value, k: usize) -> Result<Vec<Vec<Point<f64>>>> {
    let bad = || Error::InvalidInput(format!("GeoJSON feature {k}: malformed ring"));
    v.as_array()
        .ok_or_else(bad)?
        .iter()
        .map(|ring| {
            let mut pts: Vec<Point<f64>> = ring
                .as_array()
                .ok_or_else(bad)?
                .iter()
                .map(|p| {
                    let a = p.as_array().ok_or_else(bad)?;
                    match (a.first().and_then(|x| x.as_f64()), a.get(1).and_then(|x| x.as_f64())) {
                        (Some(x), Some(y)) => Ok([x, y]),
                        _ => Err(bad()),
                    }
                })
                .collect::<Result<_>>()?;
            if pts.len() > 1 && pts.first() == pts.last() {
                pts.pop();
            }
            Ok(pts)
        })
        .collect()
}

/// Average of the grid values inside each district, per time (`n_t × n_d`).
/// `values` is `n_t × n_points`.
pub fn district_means<T: Scalar>(values: ArrayView2<T>, points: &[Point<f64>], districts: &DistrictSet) -> Result<Array2<T>> {
    if values.ncols() != points.len() {
        return Err(Error::ShapeMismatch(format!("{} field columns for {} points", values.ncols(), points.len())));
    }
    let members = districts.membership(points);
    for (d, m) in members.iter().enumerate() {
        if m.is_empty() {
            return Err(Error::EmptyDistrict(districts.districts[d].id.clone()));
        }
    }
    let nt = values.nrows();
    let mut out = Array2::zeros((nt, members.len()));
    for t in 0..nt {
        for (d, m) in members.iter().enumerate() {
            let s: T = m.iter().map(|&k| values[[t, k]]).sum();
            out[[t, d]] = s / T::from_usize_lossy(m.len());
        }
    }
    Ok(out)
}

/// Exposed-population summary per time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureSeries {
    pub mean_exposed: Vec<f64>,
    pub lo: Vec<u64>,
    pub hi: Vec<u64>,
    pub level: f64,
    /// `n_t × n_d` share of draws exceeding the threshold.
    pub exceedance: Array2<f64>,
}

/// Monte Carlo exposure from a joint Gaussian model of the log-scale district
/// values: draws `μ_t + σ_t ⊙ L z`, with `L Lᵀ` the district correlation,
/// exceed when above `ln threshold`.
#[allow(clippy::too_many_arguments)]
pub fn exposure_series<T: Scalar>(
    log_mean: ArrayView2<T>,
    log_sd: ArrayView2<T>,
    correlation: &DependenceModel<T>,
    populations: &[f64],
    threshold: f64,
    n_draws: usize,
    level: f64,
    seed: u64,
) -> Result<ExposureSeries> {
    if !(threshold > 0.0) || !threshold.is_finite() {
        return Err(Error::BadThreshold(threshold));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::BadLevel(level));
    }
    let (nt, nd) = log_mean.dim();
    if log_sd.dim() != (nt, nd) || correlation.dim() != nd || populations.len() != nd {
        return Err(Error::ShapeMismatch(format!(
            "means {:?}, sds {:?}, correlation {}, populations {}",
            log_mean.dim(),
            log_sd.dim(),
            correlation.dim(),
            populations.len()
        )));
    }
    if n_draws == 0 {
        return Err(Error::InvalidInput("at least one draw is required".into()));
    }
    let c: Array2<f64> = correlation.matrix().mapv(|v| v.as_f64());
    let chol = match Cholesky::new(c.view()) {
        Ok(ch) => ch,
        Err(_) => Cholesky::new(floor_eigenvalues(c.view(), 1e-10).view())?,
    };
    let l = chol.factor().clone();
    let cut = threshold.ln();
    let per_time: Vec<(Vec<f64>, Vec<f64>)> = (0..nt)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, t as u64));
            let mut counts = Vec::with_capacity(n_draws);
            let mut hits = vec![0usize; nd];
            let mut z = vec![0.0; nd];
            for _ in 0..n_draws {
                z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                let mut exposed = 0.0;
                for d in 0..nd {
                    let mut e = 0.0;
                    for k in 0..=d {
                        e += l[[d, k]] * z[k];
                    }
                    let x = log_mean[[t, d]].as_f64() + log_sd[[t, d]].as_f64() * e;
                    if x > cut {
                        exposed += populations[d];
                        hits[d] += 1;
                    }
                }
                counts.push(exposed);
            }
            let probs = hits.iter().map(|&h| h as f64 / n_draws as f64).collect();
            (counts, probs)
        })
        .collect();
    let mut mean_exposed = Vec::with_capacity(nt);
    let mut lo = Vec::with_capacity(nt);
    let mut hi = Vec::with_capacity(nt);
    let mut exceedance = Array2::zeros((nt, nd));
    for (t, (mut counts, probs)) in per_time.into_iter().enumerate() {
        mean_exposed.push(counts.iter().sum::<f64>() / n_draws as f64);
        counts.sort_by(f64::total_cmp);
        let a = (1.0 - level) / 2.0;
        let lo_idx = ((a * n_draws as f64).floor() as usize).min(n_draws - 1);
        let hi_idx = (((1.0 - a) * n_draws as f64).ceil() as usize).clamp(1, n_draws) - 1;
        lo.push(counts[lo_idx].round() as u64);
        hi.push(counts[hi_idx].round() as u64);
        for (d, p) in probs.into_iter().enumerate() {
            exceedance[[t, d]] = p;
        }
    }
    Ok(ExposureSeries { mean_exposed, lo, hi, level, exceedance })
}
