//! Raw daily station records and the two supported CSV layouts.
//!
//! GSOD-CSV uses the NOAA Global Summary of the Day column names `STATION`,
//! `DATE`, `LATITUDE`, `LONGITUDE`, `TEMP` (daily mean), `MAX` and `MIN`, all
//! in degrees Fahrenheit with `9999.9` marking a missing value. Flag suffixes
//! such as `*` are ignored. SIMPLE-CSV is
//! `station,date,lat,lon,tmin,tavg,tmax` in degrees Celsius, ISO dates, and
//! an empty field for a missing value.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{GrnnError, Result};

pub const GSOD_MISSING: f64 = 9999.9;
pub const SIMPLE_HEADER: [&str; 7] = ["station", "date", "lat", "lon", "tmin", "tavg", "tmax"];

/// One station-day. Temperatures in degrees Celsius.
#[derive(Clone, Debug, PartialEq)]
pub struct StationRecord {
    pub station: String,
    pub date: NaiveDate,
    pub lat: f64,
    pub lon: f64,
    pub tmin: Option<f64>,
    pub tavg: Option<f64>,
    pub tmax: Option<f64>,
}

impl StationRecord {
    pub fn temps(&self) -> [Option<f64>; 3] {
        [self.tmin, self.tavg, self.tmax]
    }

    /// Coordinate ranges and `tmin <= tavg <= tmax` when all are present.
    pub fn check(&self) -> std::result::Result<(), String> {
        if !(-90.0..=90.0).contains(&self.lat) || !(-180.0..=180.0).contains(&self.lon) {
            return Err(format!("coordinates ({}, {}) out of range", self.lat, self.lon));
        }
        if self.temps().iter().flatten().any(|v| !v.is_finite()) {
            return Err("non-finite temperature".into());
        }
        if let [Some(lo), Some(avg), Some(hi)] = self.temps() {
            if !(lo <= avg && avg <= hi) {
                return Err(format!("tmin {lo} <= tavg {avg} <= tmax {hi} violated"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputFormat {
    GsodCsv,
    SimpleCsv,
}

impl FromStr for InputFormat {
    type Err = GrnnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gsod-csv" => Ok(InputFormat::GsodCsv),
            "simple-csv" => Ok(InputFormat::SimpleCsv),
            _ => Err(GrnnError::InvalidArgument(format!("unknown input format {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub files: usize,
    pub rows: usize,
    pub skipped: usize,
}

pub fn fahrenheit_to_celsius(f: f64) -> f64 {
    (f - 32.0) * 5.0 / 9.0
}

fn parse_gsod_temp(field: &str) -> std::result::Result<Option<f64>, String> {
    let v = field.trim().trim_end_matches('*').trim();
    if v.is_empty() {
        return Ok(None);
    }
    let f: f64 = v.parse().map_err(|_| format!("bad temperature {field:?}"))?;
    if (f - GSOD_MISSING).abs() < 1e-6 {
        Ok(None)
    } else {
        Ok(Some(fahrenheit_to_celsius(f)))
    }
}

fn parse_opt(field: &str) -> std::result::Result<Option<f64>, String> {
    let v = field.trim();
    if v.is_empty() {
        Ok(None)
    } else {
        v.parse().map(Some).map_err(|_| format!("bad number {field:?}"))
    }
}

fn parse_num(field: &str) -> std::result::Result<f64, String> {
    field.trim().parse().map_err(|_| format!("bad number {field:?}"))
}

fn parse_date(field: &str) -> std::result::Result<NaiveDate, String> {
    NaiveDate::parse_from_str(field.trim(), "%Y-%m-%d").map_err(|_| format!("bad date {field:?}"))
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name))
        .ok_or_else(|| GrnnError::format(path, format!("missing column {name}")))
}

/// Parses GSOD rows from `r`. Malformed rows are skipped and counted.
pub fn read_gsod<R: Read>(r: R, path: &Path, report: &mut IngestReport) -> Result<Vec<StationRecord>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(r);
    let headers = rdr.headers().map_err(|e| GrnnError::format(path, e.to_string()))?.clone();
    let [station, date, lat, lon, tavg, tmax, tmin] =
        ["STATION", "DATE", "LATITUDE", "LONGITUDE", "TEMP", "MAX", "MIN"].map(|c| column(&headers, c, path));
    let (station, date, lat, lon, tavg, tmax, tmin) = (station?, date?, lat?, lon?, tavg?, tmax?, tmin?);
    let mut out = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        report.rows += 1;
        let parsed = row.map_err(|e| e.to_string()).and_then(|row| {
            let get = |i: usize| row.get(i).ok_or_else(|| format!("short row ({} fields)", row.len()));
            let rec = StationRecord {
                station: get(station)?.trim().to_string(),
                date: parse_date(get(date)?)?,
                lat: parse_num(get(lat)?)?,
                lon: parse_num(get(lon)?)?,
                tmin: parse_gsod_temp(get(tmin)?)?,
                tavg: parse_gsod_temp(get(tavg)?)?,
                tmax: parse_gsod_temp(get(tmax)?)?,
            };
            rec.check()?;
            Ok(rec)
        });
        match parsed {
            Ok(rec) => out.push(rec),
            Err(msg) => {
                report.skipped += 1;
                log::debug!("{}: row {} skipped: {msg}", path.display(), line + 2);
            }
        }
    }
    Ok(out)
}

/// Parses SIMPLE-CSV rows from `r`. Malformed rows are skipped and counted.
pub fn read_simple<R: Read>(r: R, path: &Path, report: &mut IngestReport) -> Result<Vec<StationRecord>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(r);
    let headers = rdr.headers().map_err(|e| GrnnError::format(path, e.to_string()))?.clone();
    let cols = SIMPLE_HEADER
        .iter()
        .map(|c| column(&headers, c, path))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        report.rows += 1;
        let parsed = row.map_err(|e| e.to_string()).and_then(|row| {
            let get = |k: usize| row.get(cols[k]).ok_or_else(|| format!("short row ({} fields)", row.len()));
            let rec = StationRecord {
                station: get(0)?.trim().to_string(),
                date: parse_date(get(1)?)?,
                lat: parse_num(get(2)?)?,
                lon: parse_num(get(3)?)?,
                tmin: parse_opt(get(4)?)?,
                tavg: parse_opt(get(5)?)?,
                tmax: parse_opt(get(6)?)?,
            };
            rec.check()?;
            Ok(rec)
        });
        match parsed {
            Ok(rec) => out.push(rec),
            Err(msg) => {
                report.skipped += 1;
                log::debug!("{}: row {} skipped: {msg}", path.display(), line + 2);
            }
        }
    }
    Ok(out)
}

fn csv_files(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(path).map_err(|e| GrnnError::io(path, e))? {
        let p = entry.map_err(|e| GrnnError::io(path, e))?.path();
        if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

/// Reads a file, or every `*.csv` file of a directory in name order.
pub fn ingest(path: &Path, format: InputFormat) -> Result<(Vec<StationRecord>, IngestReport)> {
    let mut report = IngestReport::default();
    let mut out = Vec::new();
    for file in csv_files(path)? {
        let f = File::open(&file).map_err(|e| GrnnError::io(&file, e))?;
        report.files += 1;
        let recs = match format {
            InputFormat::GsodCsv => read_gsod(f, &file, &mut report)?,
            InputFormat::SimpleCsv => read_simple(f, &file, &mut report)?,
        };
        out.extend(recs);
    }
    if report.skipped > 0 {
        log::warn!("{}: skipped {} malformed rows of {}", path.display(), report.skipped, report.rows);
    }
    Ok((out, report))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes SIMPLE-CSV; floats use the shortest exact representation.
pub fn write_simple<W: Write>(w: W, records: &[StationRecord]) -> std::io::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(SIMPLE_HEADER)?;
    for r in records {
        wtr.write_record([
            r.station.clone(),
            r.date.format("%Y-%m-%d").to_string(),
            r.lat.to_string(),
            r.lon.to_string(),
            fmt_opt(r.tmin),
            fmt_opt(r.tavg),
            fmt_opt(r.tmax),
        ])?;
    }
    wtr.flush()
}
