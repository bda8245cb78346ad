//! Turning raw records into gap-free, aligned station series.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use super::records::{read_simple, write_simple, IngestReport, StationRecord};
use crate::error::{GrnnError, Result};

/// Latitude/longitude window; stations outside are dropped before cleaning.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl BoundingBox {
    /// Contiguous United States.
    pub const CONUS: BoundingBox = BoundingBox {
        min_lat: 24.0,
        max_lat: 50.0,
        min_lon: -125.0,
        max_lon: -66.0,
    };

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.min_lat..=self.max_lat).contains(&lat) && (self.min_lon..=self.max_lon).contains(&lon)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CleanConfig {
    #[serde(default = "default_missing")]
    pub max_missing_frac: f64,
    #[serde(default = "default_z")]
    pub outlier_z: f64,
    #[serde(default)]
    pub bbox: Option<BoundingBox>,
}

fn default_missing() -> f64 {
    0.05
}

fn default_z() -> f64 {
    6.0
}

impl Default for CleanConfig {
    fn default() -> Self {
        CleanConfig {
            max_missing_frac: default_missing(),
            outlier_z: default_z(),
            bbox: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DropReason {
    OutsideBox,
    /// Fraction of days with at least one missing value.
    Missing(f64),
    /// Largest absolute z-score found.
    Outlier(f64),
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DropReason::OutsideBox => write!(f, "outside-bbox"),
            DropReason::Missing(frac) => write!(f, "missing ({:.1}% of days)", frac * 100.0),
            DropReason::Outlier(z) => write!(f, "outlier (|z| = {z:.2})"),
        }
    }
}

impl DropReason {
    pub fn tag(&self) -> &'static str {
        match self {
            DropReason::OutsideBox => "outside-bbox",
            DropReason::Missing(_) => "missing",
            DropReason::Outlier(_) => "outlier",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DroppedStation {
    pub station: String,
    pub reason: DropReason,
    /// Cleaning pass in which the station was dropped (0 = bounding box).
    pub pass: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CleanReport {
    pub dropped: Vec<DroppedStation>,
    pub passes: usize,
    pub duplicate_rows: usize,
    pub interpolated_values: usize,
}

impl CleanReport {
    /// `station,reason,pass` lines with a header.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "station,reason,pass")?;
        for d in &self.dropped {
            writeln!(w, "{},{},{}", d.station, d.reason.tag(), d.pass)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationMeta {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
}

/// Stations on a shared, gap-free daily axis. Series are `[tmin, tavg, tmax]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CleanDataset {
    pub stations: Vec<StationMeta>,
    pub start: NaiveDate,
    pub series: Vec<Vec<[f64; 3]>>,
}

pub const TMIN: usize = 0;
pub const TAVG: usize = 1;
pub const TMAX: usize = 2;

impl CleanDataset {
    pub fn num_stations(&self) -> usize {
        self.stations.len()
    }

    pub fn num_days(&self) -> usize {
        self.series.first().map_or(0, Vec::len)
    }

    pub fn date(&self, day: usize) -> NaiveDate {
        self.start + Duration::days(day as i64)
    }

    pub fn end(&self) -> NaiveDate {
        self.date(self.num_days().saturating_sub(1))
    }

    /// Index of `date` on the axis, if inside it.
    pub fn day_of(&self, date: NaiveDate) -> Option<usize> {
        let d = (date - self.start).num_days();
        (d >= 0 && (d as usize) < self.num_days()).then_some(d as usize)
    }

    pub fn to_records(&self) -> Vec<StationRecord> {
        let mut out = Vec::with_capacity(self.num_stations() * self.num_days());
        for (meta, series) in self.stations.iter().zip(&self.series) {
            for (day, v) in series.iter().enumerate() {
                out.push(StationRecord {
                    station: meta.id.clone(),
                    date: self.date(day),
                    lat: meta.lat,
                    lon: meta.lon,
                    tmin: Some(v[TMIN]),
                    tavg: Some(v[TAVG]),
                    tmax: Some(v[TMAX]),
                });
            }
        }
        out
    }

    /// Rebuilds a dataset from complete records; any gap is an error.
    pub fn from_records(records: &[StationRecord]) -> Result<Self> {
        let grid = Grid::from_records(records.iter().collect());
        if grid.stations.is_empty() {
            return Err(GrnnError::Data("no records".into()));
        }
        let mut series = Vec::with_capacity(grid.stations.len());
        for (meta, rows) in grid.stations.iter().zip(&grid.values) {
            let full: Option<Vec<[f64; 3]>> = rows
                .iter()
                .map(|r| Some([r[0]?, r[1]?, r[2]?]))
                .collect();
            series.push(full.ok_or_else(|| GrnnError::Data(format!("station {} has gaps", meta.id)))?);
        }
        Ok(CleanDataset {
            stations: grid.stations,
            start: grid.start,
            series,
        })
    }

    /// Writes the dataset as SIMPLE-CSV.
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| GrnnError::io(path, e))?;
        write_simple(std::io::BufWriter::new(f), &self.to_records()).map_err(|e| GrnnError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| GrnnError::io(path, e))?;
        let mut rep = IngestReport::default();
        let recs = read_simple(std::io::BufReader::new(f), path, &mut rep)?;
        if rep.skipped > 0 {
            return Err(GrnnError::format(path, format!("{} malformed rows", rep.skipped)));
        }
        Self::from_records(&recs)
    }

    /// Equirectangular projection `x = lon * cos(mean lat)`, `y = lat`.
    pub fn projected(&self) -> Vec<[f64; 2]> {
        project(&self.stations.iter().map(|s| (s.lat, s.lon)).collect::<Vec<_>>())
    }
}

/// Equirectangular projection of `(lat, lon)` pairs, in degrees.
pub fn project(lat_lon: &[(f64, f64)]) -> Vec<[f64; 2]> {
    if lat_lon.is_empty() {
        return vec![];
    }
    let mean_lat = lat_lon.iter().map(|p| p.0).sum::<f64>() / lat_lon.len() as f64;
    let k = mean_lat.to_radians().cos();
    lat_lon.iter().map(|&(lat, lon)| [lon * k, lat]).collect()
}

/// Records bucketed by station onto the min..max date axis.
struct Grid {
    stations: Vec<StationMeta>,
    start: NaiveDate,
    values: Vec<Vec<[Option<f64>; 3]>>,
    duplicates: usize,
}

impl Grid {
    fn from_records(records: Vec<&StationRecord>) -> Grid {
        let mut by_station: BTreeMap<&str, Vec<&StationRecord>> = BTreeMap::new();
        for r in &records {
            by_station.entry(r.station.as_str()).or_default().push(r);
        }
        let (Some(start), Some(end)) = (
            records.iter().map(|r| r.date).min(),
            records.iter().map(|r| r.date).max(),
        ) else {
            return Grid {
                stations: vec![],
                start: NaiveDate::MIN,
                values: vec![],
                duplicates: 0,
            };
        };
        let days = (end - start).num_days() as usize + 1;
        let mut stations = Vec::new();
        let mut values = Vec::new();
        let mut duplicates = 0;
        for (id, recs) in by_station {
            let mut row = vec![[None; 3]; days];
            let mut seen = vec![false; days];
            for r in &recs {
                let d = (r.date - start).num_days() as usize;
                if seen[d] {
                    duplicates += 1;
                    continue;
                }
                seen[d] = true;
                row[d] = r.temps();
            }
            stations.push(StationMeta {
                id: id.to_string(),
                lat: recs[0].lat,
                lon: recs[0].lon,
            });
            values.push(row);
        }
        Grid {
            stations,
            start,
            values,
            duplicates,
        }
    }
}

/// Linear interpolation of interior gaps; leading and trailing gaps copy the
/// nearest observed value. Returns `None` if nothing is observed.
pub fn interpolate(values: &[Option<f64>]) -> Option<Vec<f64>> {
    let known: Vec<(usize, f64)> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|x| (i, x)))
        .collect();
    let (&(first_i, first_v), &(last_i, last_v)) = (known.first()?, known.last()?);
    let mut out = vec![0.0; values.len()];
    out[..first_i].fill(first_v);
    out[last_i..].fill(last_v);
    for pair in known.windows(2) {
        let ((i0, v0), (i1, v1)) = (pair[0], pair[1]);
        out[i0] = v0;
        for (i, o) in out.iter_mut().enumerate().take(i1).skip(i0 + 1) {
            let w = (i - i0) as f64 / (i1 - i0) as f64;
            *o = v0 + (v1 - v0) * w;
        }
    }
    out[last_i] = last_v;
    Some(out)
}

fn max_abs_z(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var <= 0.0 {
        return 0.0;
    }
    let sd = var.sqrt();
    x.iter().map(|v| ((v - mean) / sd).abs()).fold(0.0, f64::max)
}

/// Repeats missing-data and outlier filtering until no station is dropped.
pub fn clean(records: &[StationRecord], cfg: &CleanConfig) -> Result<(CleanDataset, CleanReport)> {
    if records.is_empty() {
        return Err(GrnnError::Data("no records to clean".into()));
    }
    let mut report = CleanReport::default();
    let mut alive: Vec<&StationRecord> = Vec::with_capacity(records.len());
    let mut outside = std::collections::BTreeSet::new();
    for r in records {
        match cfg.bbox {
            Some(b) if !b.contains(r.lat, r.lon) => {
                outside.insert(r.station.clone());
            }
            _ => alive.push(r),
        }
    }
    for station in outside {
        report.dropped.push(DroppedStation {
            station,
            reason: DropReason::OutsideBox,
            pass: 0,
        });
    }

    loop {
        report.passes += 1;
        let pass = report.passes;
        let grid = Grid::from_records(alive.clone());
        if grid.stations.is_empty() {
            return Err(GrnnError::Data("cleaning dropped every station".into()));
        }
        report.duplicate_rows = grid.duplicates;
        let mut drop: BTreeMap<String, DropReason> = BTreeMap::new();
        let mut series = Vec::new();
        let mut interpolated = 0;
        for (meta, rows) in grid.stations.iter().zip(&grid.values) {
            let days = rows.len();
            let incomplete = rows.iter().filter(|r| r.iter().any(Option::is_none)).count();
            let frac = incomplete as f64 / days as f64;
            if frac > cfg.max_missing_frac {
                drop.insert(meta.id.clone(), DropReason::Missing(frac));
                continue;
            }
            let cols: Option<Vec<Vec<f64>>> = (0..3)
                .map(|k| interpolate(&rows.iter().map(|r| r[k]).collect::<Vec<_>>()))
                .collect();
            let Some(cols) = cols else {
                drop.insert(meta.id.clone(), DropReason::Missing(1.0));
                continue;
            };
            let z = cols.iter().map(|c| max_abs_z(c)).fold(0.0, f64::max);
            if z > cfg.outlier_z {
                drop.insert(meta.id.clone(), DropReason::Outlier(z));
                continue;
            }
            interpolated += rows.iter().flatten().filter(|v| v.is_none()).count();
            series.push((0..days).map(|d| [cols[0][d], cols[1][d], cols[2][d]]).collect::<Vec<_>>());
        }
        if drop.is_empty() {
            report.interpolated_values = interpolated;
            let ds = CleanDataset {
                stations: grid.stations,
                start: grid.start,
                series,
            };
            log::info!(
                "cleaning kept {} stations over {} days after {} passes ({} dropped)",
                ds.num_stations(),
                ds.num_days(),
                report.passes,
                report.dropped.len()
            );
            return Ok((ds, report));
        }
        alive.retain(|r| !drop.contains_key(&r.station));
        for (station, reason) in drop {
            report.dropped.push(DroppedStation { station, reason, pass });
        }
    }
}
