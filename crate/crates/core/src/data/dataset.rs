use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, NaiveDateTime};

use super::impute::{impute_chained, DEFAULT_ITERATIONS};
use super::io::{read_corpus, Corpus};
use super::split::{split_indices, SplitIndices, SplitSpec};
use super::standardize::{standardize, StandardizationStats};
use super::{RawPanel, TARGET};
use crate::error::{Error, Result};
use crate::geo_graph::{build_network, edge_attributes_at, Station, StationNetwork, EDGE_ATTR_DIM};
use crate::model::GraphInput;
use crate::nn_core::{Checkpoint, CoordNorm, Tensor};
use crate::train_eval::TargetScale;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrepareOptions {
    pub distance_threshold_km: f64,
    pub impute_iterations: usize,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        Self {
            distance_threshold_km: 5.0,
            impute_iterations: DEFAULT_ITERATIONS,
        }
    }
}

/// Per-attribute mean and std of edge attributes over the training steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeStats {
    pub mean: [f64; EDGE_ATTR_DIM],
    pub std: [f64; EDGE_ATTR_DIM],
}

/// Imputed, standardised corpus with its station graph, ready to be cut
/// into windows.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub name: String,
    pub cadence_hours: u32,
    pub network: StationNetwork,
    pub graph: Arc<GraphInput>,
    pub split_spec: SplitSpec,
    pub splits: SplitIndices,
    pub stats: StandardizationStats,
    pub dropped: Vec<String>,
    /// standardised features in `stats` order
    pub panel: RawPanel,
    /// imputed `(u10, v10)` in m/s, `[t][station]`
    pub wind: Vec<Vec<(f64, f64)>>,
    pub coord_norm: CoordNorm,
    pub missing_fraction: f64,
    pub haze_threshold: Option<f64>,
    edge_stats: EdgeStats,
    node_cols: Vec<usize>,
    target_col: usize,
    node_steps: Vec<Arc<Tensor>>,
    edge_steps: Vec<Arc<Tensor>>,
}

impl PreparedDataset {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        name: String,
        cadence_hours: u32,
        stations: Vec<Station>,
        threshold_km: f64,
        split_spec: SplitSpec,
        stats: StandardizationStats,
        dropped: Vec<String>,
        panel: RawPanel,
        wind: Vec<Vec<(f64, f64)>>,
        missing_fraction: f64,
        haze_threshold: Option<f64>,
    ) -> Result<Self> {
        let network = build_network(stations, threshold_km)?;
        let graph = Arc::new(GraphInput::from_network(&network)?);
        let splits = split_indices(&panel.timestamps, &split_spec)?;
        let target_col = panel
            .features
            .iter()
            .position(|f| f == TARGET)
            .ok_or_else(|| Error::Data(format!("target `{TARGET}` was dropped or is absent")))?;
        let node_cols = (0..panel.num_features()).filter(|&k| k != target_col).collect();
        let coord_norm = CoordNorm::fit(&graph.coords);
        let mut ds = Self {
            name,
            cadence_hours,
            network,
            graph,
            split_spec,
            splits,
            stats,
            dropped,
            panel,
            wind,
            coord_norm,
            missing_fraction,
            haze_threshold,
            edge_stats: EdgeStats {
                mean: [0.0; EDGE_ATTR_DIM],
                std: [1.0; EDGE_ATTR_DIM],
            },
            node_cols,
            target_col,
            node_steps: Vec::new(),
            edge_steps: Vec::new(),
        };
        ds.edge_stats = ds.fit_edge_stats()?;
        ds.refresh()?;
        Ok(ds)
    }

    fn fit_edge_stats(&self) -> Result<EdgeStats> {
        let mut sum = [0.0; EDGE_ATTR_DIM];
        let mut sq = [0.0; EDGE_ATTR_DIM];
        let mut n = 0usize;
        let mut frames = Vec::with_capacity(self.splits.train.len());
        for t in self.splits.train.clone() {
            frames.push(edge_attributes_at(&self.network, &self.wind[t])?);
        }
        for frame in &frames {
            for a in &frame.attrs {
                n += 1;
                for (k, v) in a.to_array().into_iter().enumerate() {
                    sum[k] += v;
                }
            }
        }
        let mut stats = EdgeStats {
            mean: [0.0; EDGE_ATTR_DIM],
            std: [1.0; EDGE_ATTR_DIM],
        };
        if n == 0 {
            return Ok(stats);
        }
        for k in 0..EDGE_ATTR_DIM {
            stats.mean[k] = sum[k] / n as f64;
        }
        for frame in &frames {
            for a in &frame.attrs {
                for (k, v) in a.to_array().into_iter().enumerate() {
                    sq[k] += (v - stats.mean[k]).powi(2);
                }
            }
        }
        for k in 0..EDGE_ATTR_DIM {
            let sd = (sq[k] / n as f64).sqrt();
            stats.std[k] = if sd > 0.0 { sd } else { 1.0 };
        }
        Ok(stats)
    }

    /// Rebuilds the per-step node and edge tensors from `panel` and `wind`.
    /// Call after mutating either.
    pub fn refresh(&mut self) -> Result<()> {
        let (l, n) = (self.num_stations(), self.num_steps());
        if self.wind.len() != n || self.wind.iter().any(|w| w.len() != l) {
            return Err(Error::shape("dataset wind field", format!("{n} x {l}"), "ragged"));
        }
        let d = self.node_cols.len();
        self.node_steps = (0..n)
            .map(|t| {
                let mut data = Vec::with_capacity(l * d);
                for s in 0..l {
                    data.extend(self.node_cols.iter().map(|&k| self.panel.get(s, t, k)));
                }
                Tensor::matrix(l, d, data).map(Arc::new)
            })
            .collect::<Result<_>>()?;
        let es = self.edge_stats;
        self.edge_steps = (0..n)
            .map(|t| {
                let frame = edge_attributes_at(&self.network, &self.wind[t])?;
                let data = frame
                    .attrs
                    .iter()
                    .flat_map(|a| {
                        let v = a.to_array();
                        (0..EDGE_ATTR_DIM).map(move |k| (v[k] - es.mean[k]) / es.std[k])
                    })
                    .collect();
                Tensor::matrix(frame.len(), EDGE_ATTR_DIM, data).map(Arc::new)
            })
            .collect::<Result<_>>()?;
        Ok(())
    }

    pub fn num_stations(&self) -> usize {
        self.panel.num_stations()
    }

    pub fn num_steps(&self) -> usize {
        self.panel.num_steps()
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.panel.timestamps
    }

    pub fn station_ids(&self) -> &[String] {
        &self.panel.station_ids
    }

    pub fn node_features(&self) -> Vec<String> {
        self.node_cols.iter().map(|&k| self.panel.features[k].clone()).collect()
    }

    pub fn node_attr_dim(&self) -> usize {
        self.node_cols.len()
    }

    pub fn edge_stats(&self) -> EdgeStats {
        self.edge_stats
    }

    pub fn split_range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.splits.train.clone(),
            Split::Val => self.splits.val.clone(),
            Split::Test => self.splits.test.clone(),
        }
    }

    pub fn target_scale(&self) -> TargetScale {
        let k = self.stats.index(TARGET).expect("target has statistics");
        TargetScale {
            mean: self.stats.mean[k],
            std: self.stats.std[k],
        }
    }

    /// Standardised target of every station at step `t`.
    pub fn target_at(&self, t: usize) -> Vec<f64> {
        (0..self.num_stations()).map(|s| self.panel.get(s, t, self.target_col)).collect()
    }

    pub(crate) fn node_step(&self, t: usize) -> Arc<Tensor> {
        Arc::clone(&self.node_steps[t])
    }

    pub(crate) fn edge_step(&self, t: usize) -> Arc<Tensor> {
        Arc::clone(&self.edge_steps[t])
    }

    /// Plain-text summary: missingness and split row counts.
    pub fn report(&self) -> String {
        let [tr, va, te] = self.splits.counts();
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        line("name", self.name.clone());
        line("stations", self.num_stations().to_string());
        line("edges", self.network.num_edges().to_string());
        line("distance_threshold_km", self.network.threshold_km.to_string());
        line("timesteps", self.num_steps().to_string());
        line("cadence_hours", self.cadence_hours.to_string());
        line("first_timestamp", super::format_timestamp(&self.timestamps()[0]));
        line(
            "last_timestamp",
            super::format_timestamp(&self.timestamps()[self.num_steps() - 1]),
        );
        line("missing_percent", format!("{:.4}", 100.0 * self.missing_fraction));
        line("train_rows", tr.to_string());
        line("val_rows", va.to_string());
        line("test_rows", te.to_string());
        line("unassigned_rows", self.splits.unassigned.to_string());
        line("node_features", self.node_features().join(","));
        line("dropped_features", self.dropped.join(","));
        out
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let (l, n, nf) = (self.num_stations(), self.num_steps(), self.panel.num_features());
        let mut ck = Checkpoint::new();
        let meta = &mut ck.meta;
        meta.insert("data.name".into(), self.name.clone());
        meta.insert("data.cadence_hours".into(), self.cadence_hours.to_string());
        meta.insert("data.threshold_km".into(), format!("{:?}", self.network.threshold_km));
        meta.insert("data.station_ids".into(), self.station_ids().join("\n"));
        meta.insert("data.features".into(), self.panel.features.join("\n"));
        meta.insert("data.dropped".into(), self.dropped.join("\n"));
        meta.insert(
            "data.split".into(),
            toml::to_string(&self.split_spec).map_err(|e| Error::Config(e.to_string()))?,
        );
        meta.insert("data.missing_fraction".into(), format!("{:?}", self.missing_fraction));
        if let Some(h) = self.haze_threshold {
            meta.insert("data.haze_threshold".into(), format!("{h:?}"));
        }
        ck.insert("data.panel", Tensor::from_vec(&[l, n, nf], self.panel.values().to_vec())?);
        let secs = self.timestamps().iter().map(|t| t.and_utc().timestamp() as f64).collect();
        ck.insert("data.timestamps", Tensor::from_vec(&[n], secs)?);
        ck.insert("data.stats.mean", Tensor::vector(self.stats.mean.clone()));
        ck.insert("data.stats.std", Tensor::vector(self.stats.std.clone()));
        let wind = self.wind.iter().flatten().flat_map(|&(u, v)| [u, v]).collect();
        ck.insert("data.wind", Tensor::from_vec(&[n, l, 2], wind)?);
        let coords = self
            .network
            .stations
            .iter()
            .flat_map(|s| [s.latitude, s.longitude])
            .collect();
        ck.insert("data.coords", Tensor::from_vec(&[l, 2], coords)?);
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let lines = |k: &str| -> Result<Vec<String>> {
            let v = ck.meta(k)?;
            Ok(if v.is_empty() {
                Vec::new()
            } else {
                v.split('\n').map(str::to_string).collect()
            })
        };
        let number = |k: &str| -> Result<f64> {
            ck.meta(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("metadata `{k}` is not a number")))
        };
        let ids = lines("data.station_ids")?;
        let features = lines("data.features")?;
        let (l, nf) = (ids.len(), features.len());
        let secs = ck.get("data.timestamps")?;
        let n = secs.len();
        let timestamps = secs
            .data()
            .iter()
            .map(|&s| {
                DateTime::from_timestamp(s as i64, 0)
                    .map(|d| d.naive_utc())
                    .ok_or_else(|| Error::Checkpoint(format!("bad timestamp {s}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let values = ck.get("data.panel")?;
        if values.shape() != [l, n, nf] {
            return Err(Error::Checkpoint(format!("panel shape {:?}", values.shape())));
        }
        let panel = RawPanel::new(ids.clone(), timestamps, features.clone(), values.data().to_vec())?;
        let stats = StandardizationStats {
            features,
            mean: ck.get("data.stats.mean")?.data().to_vec(),
            std: ck.get("data.stats.std")?.data().to_vec(),
        };
        if stats.mean.len() != nf || stats.std.len() != nf {
            return Err(Error::Checkpoint("statistics length differs from feature count".into()));
        }
        let w = ck.get("data.wind")?;
        if w.shape() != [n, l, 2] {
            return Err(Error::Checkpoint(format!("wind shape {:?}", w.shape())));
        }
        let wind = w
            .data()
            .chunks(2 * l.max(1))
            .map(|row| row.chunks(2).map(|p| (p[0], p[1])).collect())
            .collect();
        let c = ck.get("data.coords")?;
        if c.shape() != [l, 2] {
            return Err(Error::Checkpoint(format!("coordinate shape {:?}", c.shape())));
        }
        let stations = ids
            .iter()
            .zip(c.data().chunks(2))
            .map(|(id, p)| Station::new(id.clone(), p[0], p[1]))
            .collect::<Result<_>>()?;
        let split_spec: SplitSpec =
            toml::from_str(ck.meta("data.split")?).map_err(|e| Error::Checkpoint(format!("split: {e}")))?;
        let cadence_hours = ck
            .meta("data.cadence_hours")?
            .parse()
            .map_err(|_| Error::Checkpoint("bad cadence".into()))?;
        let haze_threshold = match ck.meta.get("data.haze_threshold") {
            Some(_) => Some(number("data.haze_threshold")?),
            None => None,
        };
        Self::assemble(
            ck.meta("data.name")?.to_string(),
            cadence_hours,
            stations,
            number("data.threshold_km")?,
            split_spec,
            stats,
            lines("data.dropped")?,
            panel,
            wind,
            number("data.missing_fraction")?,
            haze_threshold,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?).map_err(|e| Error::file(path, e.to_string()))
    }
}

/// Imputes, splits, standardises (training statistics only) and builds the
/// station graph.
pub fn prepare(corpus: &Corpus, opts: &PrepareOptions) -> Result<PreparedDataset> {
    let m = &corpus.manifest;
    m.validate()?;
    let raw = &corpus.panel;
    raw.check_cadence(m.cadence_hours)?;
    let missing_fraction = raw.missing_fraction();
    let imputed = impute_chained(raw, opts.impute_iterations)?;
    let idx = split_indices(&imputed.timestamps, &m.split)?;
    if idx.unassigned > 0 {
        log::warn!("{} timesteps fall outside every split range and are ignored", idx.unassigned);
    }
    let (stats, dropped) = StandardizationStats::fit(&imputed.slice_time(idx.train.clone()))?;
    let panel = standardize(&imputed, &stats)?;
    let (u, v) = (imputed.feature_index("u10")?, imputed.feature_index("v10")?);
    let wind = (0..imputed.num_steps())
        .map(|t| {
            (0..imputed.num_stations())
                .map(|s| (imputed.get(s, t, u), imputed.get(s, t, v)))
                .collect()
        })
        .collect();
    PreparedDataset::assemble(
        m.name.clone(),
        m.cadence_hours,
        corpus.stations.clone(),
        opts.distance_threshold_km,
        m.split,
        stats,
        dropped,
        panel,
        wind,
        missing_fraction,
        m.haze_threshold,
    )
}

pub fn prepare_manifest(manifest_path: &Path, opts: &PrepareOptions) -> Result<PreparedDataset> {
    prepare(&read_corpus(manifest_path)?, opts)
}
