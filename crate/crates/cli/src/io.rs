//! CSV and JSON readers and writers for stage artifacts.

use std::fs::File;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::UsageError;

/// A multivariate series with one labelled row per time.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub times: Vec<String>,
    pub names: Vec<String>,
    /// `n_t × n_l`.
    pub values: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Station {
    pub id: String,
    pub lon: f64,
    pub lat: f64,
}

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let f = File::open(path).map_err(|e| UsageError(format!("cannot open {}: {e}", path.display())))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f))
}

fn create(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))
}

fn parse_value(s: &str, path: &Path, line: u64, col: &str) -> Result<f64> {
    if s.is_empty() {
        return Err(UsageError(format!("{}:{line}: missing value in column {col}", path.display())).into());
    }
    let v: f64 = s.parse().map_err(|_| UsageError(format!("{}:{line}: cannot parse {s:?} in column {col}", path.display())))?;
    if !v.is_finite() {
        return Err(UsageError(format!("{}:{line}: non-finite value in column {col}", path.display())).into());
    }
    Ok(v)
}

pub fn fmt(v: f64) -> String {
    format!("{v}")
}

pub fn read_series(path: &Path) -> Result<Series> {
    let mut rdr = open(path)?;
    let header = rdr.headers().with_context(|| format!("reading header of {}", path.display()))?.clone();
    if header.len() < 2 || &header[0] != "time" {
        return Err(UsageError(format!("{}: header must be time,<element_1>,…", path.display())).into());
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let mut times = Vec::new();
    let mut flat = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(0, |p| p.line());
        times.push(rec[0].to_owned());
        for (k, name) in names.iter().enumerate() {
            flat.push(parse_value(&rec[k + 1], path, line, name)?);
        }
    }
    if times.is_empty() {
        return Err(UsageError(format!("{}: no rows", path.display())).into());
    }
    let values = Array2::from_shape_vec((times.len(), names.len()), flat)?;
    Ok(Series { times, names, values })
}

pub fn write_series(path: &Path, s: &Series) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(std::iter::once("time").chain(s.names.iter().map(String::as_str)))?;
    for (t, row) in s.times.iter().zip(s.values.rows()) {
        w.write_record(std::iter::once(t.clone()).chain(row.iter().map(|&v| fmt(v))))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_stations(path: &Path) -> Result<Vec<Station>> {
    let mut rdr = open(path)?;
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["id", "lon", "lat"] {
        return Err(UsageError(format!("{}: header must be id,lon,lat", path.display())).into());
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(0, |p| p.line());
        out.push(Station { id: rec[0].to_owned(), lon: parse_value(&rec[1], path, line, "lon")?, lat: parse_value(&rec[2], path, line, "lat")? });
    }
    Ok(out)
}

#[cfg_attr(not(test), allow(dead_code))]
pub fn write_stations(path: &Path, stations: &[Station]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["id", "lon", "lat"])?;
    for s in stations {
        w.write_record([s.id.clone(), fmt(s.lon), fmt(s.lat)])?;
    }
    w.flush()?;
    Ok(())
}

/// Station coordinates ordered like `names`.
pub fn align_stations(stations: &[Station], names: &[String]) -> Result<Vec<[f64; 2]>> {
    names
        .iter()
        .map(|n| {
            stations
                .iter()
                .find(|s| &s.id == n)
                .map(|s| [s.lon, s.lat])
                .ok_or_else(|| anyhow!(UsageError(format!("no station metadata for element {n}"))))
        })
        .collect()
}

/// Square matrix with a leading label column.
pub fn write_matrix(path: &Path, names: &[String], m: &Array2<f64>) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(std::iter::once("").chain(names.iter().map(String::as_str)))?;
    for (name, row) in names.iter().zip(m.rows()) {
        w.write_record(std::iter::once(name.clone()).chain(row.iter().map(|&v| fmt(v))))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg_attr(not(test), allow(dead_code))]
pub fn read_matrix(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let mut rdr = open(path)?;
    let names: Vec<String> = rdr.headers()?.iter().skip(1).map(str::to_owned).collect();
    let mut flat = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        for (k, name) in names.iter().enumerate() {
            flat.push(parse_value(&rec[k + 1], path, line, name)?);
        }
        rows += 1;
    }
    if rows != names.len() {
        bail!("{}: {rows} rows for {} columns", path.display(), names.len());
    }
    Ok((names, Array2::from_shape_vec((rows, rows), flat)?))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read {}: {e} (run the producing stage first)", path.display())))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Long-format interpolated field: `lon,lat,time,mean,sd,forecast_sd`.
pub fn write_field(path: &Path, times: &[String], field: &esncast::Field) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["lon", "lat", "time", "mean", "sd", "forecast_sd"])?;
    for (t, time) in times.iter().enumerate() {
        for (k, p) in field.points.iter().enumerate() {
            w.write_record([fmt(p[0]), fmt(p[1]), time.clone(), fmt(field.mean[[t, k]]), fmt(field.sd[[t, k]]), fmt(field.forecast_sd[[t, k]])])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<(Vec<String>, esncast::Field)> {
    let mut rdr = open(path)?;
    let mut times: Vec<String> = Vec::new();
    let mut points: Vec<[f64; 2]> = Vec::new();
    let mut cols: [Vec<f64>; 3] = Default::default();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let p = [parse_value(&rec[0], path, line, "lon")?, parse_value(&rec[1], path, line, "lat")?];
        if times.last().map(String::as_str) != Some(&rec[2]) {
            times.push(rec[2].to_owned());
        }
        if times.len() == 1 {
            points.push(p);
        }
        for (k, (c, name)) in cols.iter_mut().zip(["mean", "sd", "forecast_sd"]).enumerate() {
            c.push(parse_value(&rec[k + 3], path, line, name)?);
        }
    }
    let shape = (times.len(), points.len());
    if shape.0 * shape.1 != cols[0].len() {
        bail!("{}: ragged field", path.display());
    }
    let [mean, sd, forecast_sd] = cols;
    Ok((
        times,
        esncast::Field {
            points,
            mean: Array2::from_shape_vec(shape, mean)?,
            sd: Array2::from_shape_vec(shape, sd)?,
            forecast_sd: Array2::from_shape_vec(shape, forecast_sd)?,
        },
    ))
}
