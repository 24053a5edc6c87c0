//! Corpus layout on disk:
//!
//! ```text
//! manifest.toml        dataset manifest
//! stations.csv         id,latitude,longitude
//! data/<id>.csv        timestamp,rh,temp,pm25,pbl,u10,v10,kindex,sp,tp
//! ```
//!
//! Empty CSV fields are missing values. Relative paths in the manifest are
//! resolved against the manifest's directory.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{FixedOffset, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::calendar::{format_timestamp, parse_timestamp, parse_timezone};
use super::{RawPanel, SplitSpec, FEATURES};
use crate::error::{Error, Result};
use crate::geo_graph::{read_stations, write_stations, Station};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub name: String,
    pub cadence_hours: u32,
    /// `UTC` or a fixed offset such as `+05:30`
    pub timezone: String,
    pub station_file: PathBuf,
    pub data_dir: PathBuf,
    pub split: SplitSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_threshold_km: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub haze_threshold: Option<f64>,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Config(format!(
                "manifest version {} is not supported (expected {MANIFEST_VERSION})",
                self.version
            )));
        }
        if self.cadence_hours == 0 {
            return Err(Error::Config("cadence_hours must be positive".into()));
        }
        parse_timezone(&self.timezone)?;
        self.split.validate()?;
        if let Some(t) = self.distance_threshold_km {
            if !(t > 0.0) {
                return Err(Error::Config(format!("distance_threshold_km must be positive, got {t}")));
            }
        }
        if let Some(h) = self.haze_threshold {
            if !h.is_finite() {
                return Err(Error::Config("haze_threshold must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn tz(&self) -> Result<FixedOffset> {
        parse_timezone(&self.timezone)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::Config(format!("manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("manifest: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e.to_string()))?;
        Self::from_toml(&text).map_err(|e| Error::file(path, e.to_string()))
    }
}

/// Manifest, station list and raw panel of one corpus.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub manifest: Manifest,
    pub stations: Vec<Station>,
    pub panel: RawPanel,
}

fn resolve(root: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

fn parse_value(field: &str) -> std::result::Result<f64, String> {
    let f = field.trim();
    if f.is_empty() || f.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    match f.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(format!("non-finite value `{f}`")),
        Err(_) => Err(format!("cannot parse `{f}` as a number")),
    }
}

type StationRows = BTreeMap<NaiveDateTime, [f64; FEATURES.len()]>;

fn read_station_file(path: &Path, tz: FixedOffset) -> Result<StationRows> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::file(path, e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::file(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let want: Vec<&str> = std::iter::once("timestamp").chain(FEATURES).collect();
    if header != want {
        return Err(Error::file(path, format!("line 1: expected header `{}`", want.join(","))));
    }
    let mut rows = StationRows::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::file(path, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let at = |msg: String| Error::file(path, format!("line {line}: {msg}"));
        if rec.len() != want.len() {
            return Err(at(format!("expected {} fields, found {}", want.len(), rec.len())));
        }
        let t = parse_timestamp(&rec[0], tz).map_err(|e| at(e.to_string()))?;
        let mut vals = [f64::NAN; FEATURES.len()];
        for (k, v) in vals.iter_mut().enumerate() {
            *v = parse_value(&rec[k + 1]).map_err(|m| at(format!("column `{}`: {m}", FEATURES[k])))?;
        }
        if rows.insert(t, vals).is_some() {
            return Err(at(format!("duplicate timestamp {}", format_timestamp(&t))));
        }
    }
    Ok(rows)
}

/// Reads a corpus. The panel covers the regular grid from the earliest to
/// the latest timestamp of any station; grid points a station lacks are
/// missing. Timestamps off the grid are rejected.
pub fn read_corpus(manifest_path: &Path) -> Result<Corpus> {
    let manifest = Manifest::load(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let tz = manifest.tz()?;
    let stations = read_stations(&resolve(root, &manifest.station_file))?;
    if stations.is_empty() {
        return Err(Error::Data("station file lists no stations".into()));
    }
    let data_dir = resolve(root, &manifest.data_dir);
    let mut per_station = Vec::with_capacity(stations.len());
    for s in &stations {
        let path = data_dir.join(format!("{}.csv", s.id));
        per_station.push((path.clone(), read_station_file(&path, tz)?));
    }
    let first = per_station.iter().filter_map(|(_, r)| r.keys().next()).min().copied();
    let last = per_station.iter().filter_map(|(_, r)| r.keys().next_back()).max().copied();
    let (Some(first), Some(last)) = (first, last) else {
        return Err(Error::Data("corpus has no rows".into()));
    };
    let step = chrono::Duration::hours(manifest.cadence_hours as i64);
    let n = ((last - first).num_seconds() / step.num_seconds()) as usize + 1;
    let timestamps: Vec<NaiveDateTime> = (0..n).map(|i| first + step * i as i32).collect();
    let nf = FEATURES.len();
    let mut values = vec![f64::NAN; stations.len() * n * nf];
    for (s, (path, rows)) in per_station.iter().enumerate() {
        for (t, vals) in rows {
            let offset = (*t - first).num_seconds();
            if offset % step.num_seconds() != 0 {
                return Err(Error::file(
                    path,
                    format!(
                        "timestamp {} is not on the {} h grid starting {}",
                        format_timestamp(t),
                        manifest.cadence_hours,
                        format_timestamp(&first)
                    ),
                ));
            }
            let i = (offset / step.num_seconds()) as usize;
            let a = (s * n + i) * nf;
            values[a..a + nf].copy_from_slice(vals);
        }
    }
    let panel = RawPanel::new(
        stations.iter().map(|s| s.id.clone()).collect(),
        timestamps,
        FEATURES.iter().map(|f| f.to_string()).collect(),
        values,
    )?;
    Ok(Corpus {
        manifest,
        stations,
        panel,
    })
}

fn format_value(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

/// Writes `corpus` under `dir`, using the manifest's relative paths.
/// Returns the manifest path.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<PathBuf> {
    let Corpus {
        manifest,
        stations,
        panel,
    } = corpus;
    manifest.validate()?;
    if panel.features.iter().map(String::as_str).ne(FEATURES) {
        return Err(Error::Data(format!("corpus panel must hold features {}", FEATURES.join(","))));
    }
    if panel.station_ids.iter().ne(stations.iter().map(|s| &s.id)) {
        return Err(Error::Data("panel stations differ from the station list".into()));
    }
    std::fs::create_dir_all(dir)?;
    let data_dir = resolve(dir, &manifest.data_dir);
    std::fs::create_dir_all(&data_dir)?;
    write_stations(&resolve(dir, &manifest.station_file), stations)?;
    for (s, id) in panel.station_ids.iter().enumerate() {
        let mut out = std::io::BufWriter::new(std::fs::File::create(data_dir.join(format!("{id}.csv")))?);
        writeln!(out, "timestamp,{}", FEATURES.join(","))?;
        for (t, ts) in panel.timestamps.iter().enumerate() {
            write!(out, "{}", format_timestamp(ts))?;
            for f in 0..FEATURES.len() {
                write!(out, ",{}", format_value(panel.get(s, t, f)))?;
            }
            writeln!(out)?;
        }
        out.flush()?;
    }
    let path = dir.join("manifest.toml");
    std::fs::write(&path, manifest.to_toml()?)?;
    Ok(path)
}
