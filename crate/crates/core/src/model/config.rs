use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo_graph::EDGE_ATTR_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    AgnnGru,
    GnnGru,
    WgcGru,
    GcGru,
    Gru,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::AgnnGru,
        Variant::GnnGru,
        Variant::WgcGru,
        Variant::GcGru,
        Variant::Gru,
    ];

    /// `(use_attention, graph_mode)` implied by the variant.
    pub fn flags(self) -> (bool, GraphMode) {
        match self {
            Variant::AgnnGru => (true, GraphMode::DirectedEdgeAttrs),
            Variant::GnnGru => (false, GraphMode::DirectedEdgeAttrs),
            Variant::WgcGru => (false, GraphMode::InverseDistance),
            Variant::GcGru => (false, GraphMode::Binary),
            Variant::Gru => (false, GraphMode::None),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::AgnnGru => "agnn_gru",
            Variant::GnnGru => "gnn_gru",
            Variant::WgcGru => "wgc_gru",
            Variant::GcGru => "gc_gru",
            Variant::Gru => "gru",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == norm)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant `{s}` (expected one of agnn_gru, gnn_gru, wgc_gru, gc_gru, gru)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphMode {
    None,
    Binary,
    InverseDistance,
    DirectedEdgeAttrs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub hidden: usize,
    /// history steps `H`
    pub history: usize,
    /// forecast steps `F`
    pub forecast: usize,
    pub use_attention: bool,
    pub graph_mode: GraphMode,
    /// node attribute count `d_attr`
    pub node_attr_dim: usize,
    /// width of each embedding block
    pub embed_dim: usize,
    pub edge_attr_dim: usize,
    pub mlp_hidden: usize,
    pub bias: bool,
    /// also supervise the encoder's per-step outputs against the history
    pub aux_loss: bool,
}

impl ModelConfig {
    pub fn new(variant: Variant, node_attr_dim: usize, hidden: usize, history: usize, forecast: usize) -> Self {
        let (use_attention, graph_mode) = variant.flags();
        Self {
            variant,
            hidden,
            history,
            forecast,
            use_attention,
            graph_mode,
            node_attr_dim,
            embed_dim: 8,
            edge_attr_dim: EDGE_ATTR_DIM,
            mlp_hidden: hidden,
            bias: true,
            aux_loss: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("hidden", self.hidden),
            ("history", self.history),
            ("forecast", self.forecast),
            ("embed_dim", self.embed_dim),
            ("mlp_hidden", self.mlp_hidden),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("model {name} must be positive")));
            }
        }
        if self.graph_mode == GraphMode::DirectedEdgeAttrs && self.edge_attr_dim == 0 {
            return Err(Error::Config("edge attribute dimension must be positive".into()));
        }
        Ok(())
    }

    pub fn space_time_dim(&self) -> usize {
        4 * self.embed_dim
    }

    /// Width of `P = [X, X̄, y]`.
    pub fn encoder_input_dim(&self) -> usize {
        self.node_attr_dim + self.space_time_dim() + 1
    }

    pub fn graph_output_dim(&self) -> usize {
        match self.graph_mode {
            GraphMode::None => 0,
            _ => self.hidden,
        }
    }

    /// Width of `Q = [X̄, ŷ]`.
    pub fn decoder_input_dim(&self) -> usize {
        self.space_time_dim() + 1
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_flags() {
        assert_eq!(Variant::AgnnGru.flags(), (true, GraphMode::DirectedEdgeAttrs));
        assert_eq!(Variant::GnnGru.flags(), (false, GraphMode::DirectedEdgeAttrs));
        assert_eq!(Variant::WgcGru.flags(), (false, GraphMode::InverseDistance));
        assert_eq!(Variant::GcGru.flags(), (false, GraphMode::Binary));
        assert_eq!(Variant::Gru.flags(), (false, GraphMode::None));
    }

    #[test]
    fn parse_names() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("AGNN-GRU".parse::<Variant>().unwrap(), Variant::AgnnGru);
        assert!("lstm".parse::<Variant>().is_err());
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = ModelConfig::new(Variant::WgcGru, 8, 16, 24, 12);
        assert_eq!(ModelConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn zero_sizes_rejected() {
        let mut cfg = ModelConfig::new(Variant::Gru, 8, 16, 24, 12);
        cfg.forecast = 0;
        assert!(cfg.validate().is_err());
    }
}
