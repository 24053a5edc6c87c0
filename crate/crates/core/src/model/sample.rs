use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geo_graph::{baseline_weights, check_permutation, Edge, StationNetwork, WeightMode};
use crate::nn_core::{Tensor, TimeIndex};

/// Static graph inputs shared by every window of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    /// `(lat, lon)` per station
    pub coords: Vec<(f64, f64)>,
    pub edges: Vec<Edge>,
    pub binary_weights: Vec<f64>,
    pub inverse_weights: Vec<f64>,
}

impl GraphInput {
    pub fn from_network(network: &StationNetwork) -> Result<Self> {
        let inverse_weights = if network.edges.is_empty() {
            Vec::new()
        } else {
            baseline_weights(network, WeightMode::InverseDistance)?
        };
        Ok(Self {
            coords: network
                .stations
                .iter()
                .map(|s| (s.latitude, s.longitude))
                .collect(),
            edges: network.edges.clone(),
            binary_weights: baseline_weights(network, WeightMode::Binary)?,
            inverse_weights,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.coords.len()
    }

    /// Old node `i` becomes `perm[i]`; edge order is kept.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.num_nodes())?;
        let mut coords = self.coords.clone();
        for (old, c) in self.coords.iter().enumerate() {
            coords[perm[old]] = *c;
        }
        Ok(Self {
            coords,
            edges: self
                .edges
                .iter()
                .map(|e| Edge {
                    source: perm[e.source],
                    sink: perm[e.sink],
                })
                .collect(),
            binary_weights: self.binary_weights.clone(),
            inverse_weights: self.inverse_weights.clone(),
        })
    }
}

/// One `(H, F)` training or evaluation window.
///
/// Space-time embeddings depend on trainable tables, so the window carries
/// the calendar of all `H + F` steps and the model embeds it on the fly.
/// Node and edge attributes cover the history steps only. Per-step tensors
/// are shared between overlapping windows.
#[derive(Debug, Clone)]
pub struct WindowSample {
    pub graph: Arc<GraphInput>,
    /// index of the first history step within the source series
    pub start: usize,
    /// `H` tensors of shape `L x d_attr`
    pub x: Vec<Arc<Tensor>>,
    /// `H x L`
    pub y_history: Tensor,
    /// `F x L`; may hold NaN when the future is unknown
    pub y_future: Tensor,
    /// `H + F` entries
    pub calendar: Vec<TimeIndex>,
    /// `H` tensors of shape `edges x edge_attr_dim`
    pub edge_attrs: Vec<Arc<Tensor>>,
}

impl WindowSample {
    pub fn history_len(&self) -> usize {
        self.x.len()
    }

    pub fn forecast_len(&self) -> usize {
        self.calendar.len().saturating_sub(self.x.len())
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    /// Checks spans, shapes and finiteness of every model input.
    pub fn validate(&self, history: usize, forecast: usize, node_attr_dim: usize) -> Result<()> {
        if history == 0 || forecast == 0 {
            return Err(Error::InvalidInput("window needs H > 0 and F > 0".into()));
        }
        let l = self.num_nodes();
        if self.x.len() != history {
            return Err(Error::shape("window node attributes (steps)", history, self.x.len()));
        }
        if self.calendar.len() != history + forecast {
            return Err(Error::shape("window calendar", history + forecast, self.calendar.len()));
        }
        if self.y_history.shape() != [history, l] {
            return Err(Error::shape(
                "window history targets",
                format!("[{history}, {l}]"),
                format!("{:?}", self.y_history.shape()),
            ));
        }
        if self.y_future.shape() != [forecast, l] {
            return Err(Error::shape(
                "window future targets",
                format!("[{forecast}, {l}]"),
                format!("{:?}", self.y_future.shape()),
            ));
        }
        for x in &self.x {
            if x.rows() != l || x.cols() != node_attr_dim {
                return Err(Error::shape(
                    "window node attributes",
                    format!("[{l}, {node_attr_dim}]"),
                    format!("{:?}", x.shape()),
                ));
            }
            x.ensure_finite("window node attributes")?;
        }
        self.y_history.ensure_finite("window history targets")?;
        if !self.edge_attrs.is_empty() && self.edge_attrs.len() != history {
            return Err(Error::shape("window edge attributes (steps)", history, self.edge_attrs.len()));
        }
        for e in &self.edge_attrs {
            if e.rows() != self.graph.edges.len() {
                return Err(Error::shape("window edge attributes", self.graph.edges.len(), e.rows()));
            }
            e.ensure_finite("window edge attributes")?;
        }
        Ok(())
    }

    /// Relabels stations so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let graph = self.graph.permuted(perm)?;
        let permute_rows = |t: &Tensor| {
            let mut out = Tensor::clone(t);
            for (old, &new) in perm.iter().enumerate() {
                out.row_mut(new).copy_from_slice(t.row(old));
            }
            Arc::new(out)
        };
        let permute_cols = |t: &Tensor| {
            let mut out = t.clone();
            for r in 0..t.rows() {
                for (old, &new) in perm.iter().enumerate() {
                    out.row_mut(r)[new] = t.get(r, old);
                }
            }
            out
        };
        Ok(Self {
            graph: Arc::new(graph),
            start: self.start,
            x: self.x.iter().map(|t| permute_rows(t)).collect(),
            y_history: permute_cols(&self.y_history),
            y_future: permute_cols(&self.y_future),
            calendar: self.calendar.clone(),
            edge_attrs: self.edge_attrs.clone(),
        })
    }
}
