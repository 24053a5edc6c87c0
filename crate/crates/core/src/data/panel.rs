use chrono::NaiveDateTime;

use crate::error::{Error, Result};

/// Column order of the per-station CSV files.
pub const FEATURES: [&str; 9] = ["rh", "temp", "pm25", "pbl", "u10", "v10", "kindex", "sp", "tp"];
pub const TARGET: &str = "pm25";

/// Station x time x feature values. Missing cells hold NaN, which is the
/// only sentinel; the mask is derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPanel {
    pub station_ids: Vec<String>,
    pub timestamps: Vec<NaiveDateTime>,
    pub features: Vec<String>,
    values: Vec<f64>,
}

impl RawPanel {
    /// `values` is laid out `[station][time][feature]`.
    pub fn new(
        station_ids: Vec<String>,
        timestamps: Vec<NaiveDateTime>,
        features: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let want = station_ids.len() * timestamps.len() * features.len();
        if values.len() != want {
            return Err(Error::shape("panel values", want, values.len()));
        }
        if let Some(w) = timestamps.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Data(format!(
                "timestamps must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        if values.iter().any(|v| v.is_infinite()) {
            return Err(Error::NonFinite("panel values".into()));
        }
        Ok(Self {
            station_ids,
            timestamps,
            features,
            values,
        })
    }

    pub fn filled(station_ids: Vec<String>, timestamps: Vec<NaiveDateTime>, features: Vec<String>, value: f64) -> Self {
        let n = station_ids.len() * timestamps.len() * features.len();
        Self {
            station_ids,
            timestamps,
            features,
            values: vec![value; n],
        }
    }

    pub fn num_stations(&self) -> usize {
        self.station_ids.len()
    }

    pub fn num_steps(&self) -> usize {
        self.timestamps.len()
    }

    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    fn idx(&self, s: usize, t: usize, f: usize) -> usize {
        (s * self.num_steps() + t) * self.num_features() + f
    }

    pub fn get(&self, s: usize, t: usize, f: usize) -> f64 {
        self.values[self.idx(s, t, f)]
    }

    pub fn set(&mut self, s: usize, t: usize, f: usize, v: f64) {
        let i = self.idx(s, t, f);
        self.values[i] = v;
    }

    pub fn is_missing(&self, s: usize, t: usize, f: usize) -> bool {
        self.get(s, t, f).is_nan()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `true` where observed, same layout as [`RawPanel::values`].
    pub fn mask(&self) -> Vec<bool> {
        self.values.iter().map(|v| !v.is_nan()).collect()
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_nan()).count()
    }

    pub fn missing_fraction(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.missing_count() as f64 / self.values.len() as f64
        }
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.features
            .iter()
            .position(|f| f == name)
            .ok_or_else(|| Error::Data(format!("feature `{name}` not present in panel")))
    }

    /// One station's series of one feature.
    pub fn series(&self, s: usize, f: usize) -> Vec<f64> {
        (0..self.num_steps()).map(|t| self.get(s, t, f)).collect()
    }

    /// Time steps `range` of every station and feature.
    pub fn slice_time(&self, range: std::ops::Range<usize>) -> RawPanel {
        let nf = self.num_features();
        let mut values = Vec::with_capacity(self.num_stations() * range.len() * nf);
        for s in 0..self.num_stations() {
            let a = self.idx(s, range.start, 0);
            values.extend_from_slice(&self.values[a..a + range.len() * nf]);
        }
        RawPanel {
            station_ids: self.station_ids.clone(),
            timestamps: self.timestamps[range].to_vec(),
            features: self.features.clone(),
            values,
        }
    }

    /// Keeps the listed feature columns, in the given order.
    pub fn select_features(&self, keep: &[usize]) -> RawPanel {
        let mut values = Vec::with_capacity(self.num_stations() * self.num_steps() * keep.len());
        for s in 0..self.num_stations() {
            for t in 0..self.num_steps() {
                for &f in keep {
                    values.push(self.get(s, t, f));
                }
            }
        }
        RawPanel {
            station_ids: self.station_ids.clone(),
            timestamps: self.timestamps.clone(),
            features: keep.iter().map(|&f| self.features[f].clone()).collect(),
            values,
        }
    }

    /// Errors unless consecutive timestamps are exactly `hours` apart.
    pub fn check_cadence(&self, hours: u32) -> Result<()> {
        let step = chrono::Duration::hours(hours as i64);
        for w in self.timestamps.windows(2) {
            if w[1] - w[0] != step {
                return Err(Error::Data(format!(
                    "timestamps {} and {} are not {hours} h apart",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }
}
