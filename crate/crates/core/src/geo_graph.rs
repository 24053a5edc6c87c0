//! Directed station graph with static great-circle geometry and
//! per-timestep wind-driven edge attributes.
//!
//! Nodes are stations indexed `0..L` in input order. An edge `(i, j)` exists
//! whenever the haversine distance between stations `i` and `j` is within the
//! configured threshold, so the edge set is always reciprocal. Edges are kept
//! in lexicographic `(source, sink)` order.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Number of per-edge attributes in an [`EdgeAttributeFrame`].
pub const EDGE_ATTR_DIM: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct Station {
    pub id: String,
    pub latitude: f64,
    pub longitude: f64,
}

impl Station {
    pub fn new(id: impl Into<String>, latitude: f64, longitude: f64) -> Result<Self> {
        let station = Self {
            id: id.into(),
            latitude,
            longitude,
        };
        station.validate()?;
        Ok(station)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.latitude) || !self.latitude.is_finite() {
            return Err(Error::InvalidInput(format!(
                "station {}: latitude {} outside [-90, 90]",
                self.id, self.latitude
            )));
        }
        if !(-180.0..=180.0).contains(&self.longitude) || !self.longitude.is_finite() {
            return Err(Error::InvalidInput(format!(
                "station {}: longitude {} outside [-180, 180]",
                self.id, self.longitude
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub source: usize,
    pub sink: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeGeometry {
    pub distance_km: f64,
    /// Initial bearing from source to sink, degrees clockwise from north.
    pub bearing_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationNetwork {
    pub stations: Vec<Station>,
    pub edges: Vec<Edge>,
    pub geometry: Vec<EdgeGeometry>,
    pub threshold_km: f64,
}

impl StationNetwork {
    pub fn num_stations(&self) -> usize {
        self.stations.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`. Edge list order
    /// is preserved.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.stations.len();
        check_permutation(perm, n)?;
        let mut stations = self.stations.clone();
        for (old, st) in self.stations.iter().enumerate() {
            stations[perm[old]] = st.clone();
        }
        let edges = self
            .edges
            .iter()
            .map(|e| Edge {
                source: perm[e.source],
                sink: perm[e.sink],
            })
            .collect();
        Ok(Self {
            stations,
            edges,
            geometry: self.geometry.clone(),
            threshold_km: self.threshold_km,
        })
    }

    pub fn write_edge_list(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "src,dst,distance_km,bearing_deg")?;
        for (e, g) in self.edges.iter().zip(&self.geometry) {
            writeln!(
                out,
                "{},{},{},{}",
                self.stations[e.source].id, self.stations[e.sink].id, g.distance_km, g.bearing_deg
            )?;
        }
        out.flush()?;
        Ok(())
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::shape("permutation", n, perm.len()));
    }
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::InvalidInput("not a permutation".into()));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Great-circle distance in kilometres.
pub fn haversine_distance(a: &Station, b: &Station) -> f64 {
    haversine_km(a.latitude, a.longitude, b.latitude, b.longitude)
}

pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dphi = p2 - p1;
    let dlambda = (lon2 - lon1).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Initial great-circle bearing from `a` towards `b`, in `[0, 360)`.
pub fn initial_bearing(a: &Station, b: &Station) -> Result<f64> {
    let (p1, p2) = (a.latitude.to_radians(), b.latitude.to_radians());
    if p1.cos().abs() < 1e-12 || haversine_distance(a, b) < 1e-9 {
        return Err(Error::UndefinedBearing);
    }
    let dlambda = (b.longitude - a.longitude).to_radians();
    let y = dlambda.sin() * p2.cos();
    let x = p1.cos() * p2.sin() - p1.sin() * p2.cos() * dlambda.cos();
    if x.abs() < 1e-15 && y.abs() < 1e-15 {
        // antipodal
        return Err(Error::UndefinedBearing);
    }
    Ok(normalize_degrees(y.atan2(x).to_degrees()))
}

fn normalize_degrees(deg: f64) -> f64 {
    let d = deg.rem_euclid(360.0);
    if d >= 360.0 {
        0.0
    } else {
        d
    }
}

pub fn build_network(stations: Vec<Station>, threshold_km: f64) -> Result<StationNetwork> {
    if stations.is_empty() {
        return Err(Error::InvalidInput("empty station list".into()));
    }
    if stations.len() < 2 {
        return Err(Error::InvalidInput(
            "a station network needs at least 2 stations".into(),
        ));
    }
    if !(threshold_km > 0.0) {
        return Err(Error::InvalidInput(format!(
            "distance threshold must be positive, got {threshold_km}"
        )));
    }
    let mut ids = HashSet::new();
    for s in &stations {
        s.validate()?;
        if !ids.insert(s.id.as_str()) {
            return Err(Error::InvalidInput(format!("duplicate station id {}", s.id)));
        }
    }

    let mut edges = Vec::new();
    let mut geometry = Vec::new();
    for (i, a) in stations.iter().enumerate() {
        for (j, b) in stations.iter().enumerate() {
            if i == j {
                continue;
            }
            let distance_km = haversine_distance(a, b);
            if distance_km <= threshold_km {
                let bearing_deg = initial_bearing(a, b)?;
                edges.push(Edge { source: i, sink: j });
                geometry.push(EdgeGeometry {
                    distance_km,
                    bearing_deg,
                });
            }
        }
    }
    Ok(StationNetwork {
        stations,
        edges,
        geometry,
        threshold_km,
    })
}

/// Along-edge projection of the source wind, clipped at zero.
pub fn advection_coefficient(wind_speed: f64, wind_direction_deg: f64, edge_bearing_deg: f64) -> Result<f64> {
    if !(wind_speed >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "wind speed must be non-negative, got {wind_speed}"
        )));
    }
    let delta = (wind_direction_deg - edge_bearing_deg).to_radians();
    Ok((wind_speed * delta.cos()).max(0.0))
}

/// Speed and the bearing the wind blows towards, from eastward `u10` and
/// northward `v10` components. A calm wind has direction 0.
pub fn wind_speed_direction(u10: f64, v10: f64) -> (f64, f64) {
    let speed = u10.hypot(v10);
    if speed == 0.0 {
        return (0.0, 0.0);
    }
    (speed, normalize_degrees(u10.atan2(v10).to_degrees()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeAttributes {
    pub distance_km: f64,
    pub bearing_deg: f64,
    pub wind_speed: f64,
    pub wind_direction_deg: f64,
    pub advection: f64,
}

impl EdgeAttributes {
    pub fn to_array(&self) -> [f64; EDGE_ATTR_DIM] {
        [
            self.distance_km,
            self.bearing_deg,
            self.wind_speed,
            self.wind_direction_deg,
            self.advection,
        ]
    }
}

/// Edge attributes of every edge at one timestep, in network edge order.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeAttributeFrame {
    pub attrs: Vec<EdgeAttributes>,
}

impl EdgeAttributeFrame {
    pub fn len(&self) -> usize {
        self.attrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attrs.is_empty()
    }

    /// Row-major `edges x 5` values.
    pub fn flat(&self) -> Vec<f64> {
        self.attrs.iter().flat_map(|a| a.to_array()).collect()
    }
}

/// `wind` holds one `(u10, v10)` pair per station, in m/s.
pub fn edge_attributes_at(network: &StationNetwork, wind: &[(f64, f64)]) -> Result<EdgeAttributeFrame> {
    if wind.len() != network.num_stations() {
        return Err(Error::shape(
            "edge_attributes_at wind field",
            network.num_stations(),
            wind.len(),
        ));
    }
    let mut attrs = Vec::with_capacity(network.num_edges());
    for (e, g) in network.edges.iter().zip(&network.geometry) {
        let (u, v) = wind[e.source];
        if !u.is_finite() || !v.is_finite() {
            return Err(Error::NonFinite(format!(
                "wind at station {}",
                network.stations[e.source].id
            )));
        }
        let (speed, direction) = wind_speed_direction(u, v);
        attrs.push(EdgeAttributes {
            distance_km: g.distance_km,
            bearing_deg: g.bearing_deg,
            wind_speed: speed,
            wind_direction_deg: direction,
            advection: advection_coefficient(speed, direction, g.bearing_deg)?,
        });
    }
    Ok(EdgeAttributeFrame { attrs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    Binary,
    InverseDistance,
}

/// Static scalar edge weights for the convolutional baselines.
pub fn baseline_weights(network: &StationNetwork, mode: WeightMode) -> Result<Vec<f64>> {
    match mode {
        WeightMode::Binary => Ok(vec![1.0; network.num_edges()]),
        WeightMode::InverseDistance => {
            if network.geometry.is_empty() {
                return Err(Error::InvalidInput(
                    "inverse-distance weights need at least one edge".into(),
                ));
            }
            let d_min = network
                .geometry
                .iter()
                .map(|g| g.distance_km)
                .fold(f64::INFINITY, f64::min);
            if d_min <= 0.0 {
                return Err(Error::InvalidInput(
                    "zero-distance edge: co-located stations".into(),
                ));
            }
            Ok(network.geometry.iter().map(|g| d_min / g.distance_km).collect())
        }
    }
}

#[derive(Debug, Deserialize)]
struct StationRecord {
    id: String,
    latitude: f64,
    longitude: f64,
}

/// Reads a `id,latitude,longitude` CSV file.
pub fn read_stations(path: &Path) -> Result<Vec<Station>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::file(path, e.to_string()))?;
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "latitude", "longitude"] {
        return Err(Error::file(
            path,
            "expected header `id,latitude,longitude`",
        ));
    }
    let mut stations = Vec::new();
    for (line, rec) in reader.deserialize::<StationRecord>().enumerate() {
        let rec = rec.map_err(|e| Error::file(path, format!("line {}: {e}", line + 2)))?;
        let st = Station::new(rec.id, rec.latitude, rec.longitude)
            .map_err(|e| Error::file(path, format!("line {}: {e}", line + 2)))?;
        stations.push(st);
    }
    Ok(stations)
}

pub fn write_stations(path: &Path, stations: &[Station]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "id,latitude,longitude")?;
    for s in stations {
        writeln!(out, "{},{},{}", s.id, s.latitude, s.longitude)?;
    }
    out.flush()?;
    Ok(())
}
