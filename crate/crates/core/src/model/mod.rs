//! Encoder-decoder forecaster and its ablation variants.
//!
//! Encoder, for each history step `t`:
//!
//! ```text
//! P   = [X, X̄, y]
//! eta = Graph(P, E)          (omitted when graph_mode = none)
//! h   = GRU([P, eta], h)
//! ŷ   = MLP_enc(h)
//! ```
//!
//! Decoder, for each forecast step, starting from the last encoder state and
//! prediction:
//!
//! ```text
//! Q   = [X̄, ŷ_prev]
//! h   = GRU(Q, h)
//! pi  = LuongAttention(hidden history, h)   (pi = h without attention)
//! ŷ   = MLP_dec(pi)
//! ```
//!
//! The decoder always feeds back its own previous prediction.

mod config;
mod sample;

pub use config::{GraphMode, ModelConfig, Variant};
pub use sample::{GraphInput, WindowSample};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn_core::{
    join, AttentionCache, Checkpoint, CoordNorm, EmbeddingTables, GruCache, GruCell, LuongAttention, Mlp,
    MlpCache, Parameters, Propagation, Tensor, TransformerConv, TransformerConvCache, WeightedConv,
    WeightedConvCache,
};
use crate::train_eval::mse_loss;

#[derive(Debug, Clone, PartialEq)]
pub enum GraphLayer {
    EdgeAttr(TransformerConv),
    Weighted(WeightedConv),
}

#[derive(Debug, Clone)]
enum GraphCache {
    EdgeAttr(TransformerConvCache),
    Weighted(WeightedConvCache),
}

impl Parameters for GraphLayer {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        match self {
            GraphLayer::EdgeAttr(c) => c.visit(prefix, f),
            GraphLayer::Weighted(c) => c.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        match self {
            GraphLayer::EdgeAttr(c) => c.visit_mut(prefix, f),
            GraphLayer::Weighted(c) => c.visit_mut(prefix, f),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastModel {
    pub config: ModelConfig,
    pub embed: EmbeddingTables,
    pub graph: Option<GraphLayer>,
    pub encoder_gru: GruCell,
    pub encoder_mlp: Mlp,
    pub decoder_gru: GruCell,
    pub attention: Option<LuongAttention>,
    pub decoder_mlp: Mlp,
}

#[derive(Debug, Clone)]
pub struct EncoderStepCache {
    graph: Option<GraphCache>,
    gru: GruCache,
    mlp: MlpCache,
}

#[derive(Debug, Clone)]
pub struct DecoderStepCache {
    gru: GruCache,
    attention: Option<AttentionCache>,
    mlp: MlpCache,
}

/// Output of the encoder pass.
#[derive(Debug, Clone)]
pub struct EncoderState {
    /// `H` tensors of shape `L x hidden`
    pub hidden_history: Vec<Tensor>,
    /// `ŷ^k`, shape `L x 1`
    pub last_prediction: Tensor,
    pub final_hidden: Tensor,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    encoder: Vec<EncoderStepCache>,
    decoder: Vec<DecoderStepCache>,
    pub state: EncoderState,
    /// `H x L` per-step encoder outputs
    pub encoder_predictions: Tensor,
    /// `F x L`
    pub predictions: Tensor,
}

const SEGMENTS: [&str; 7] = [
    "embed",
    "graph",
    "encoder.gru",
    "encoder.mlp",
    "decoder.gru",
    "decoder.attention",
    "decoder.mlp",
];

fn set_row(dst: &mut Tensor, r: usize, col: &Tensor) {
    dst.row_mut(r).copy_from_slice(col.data());
}

fn row_as_column(t: &Tensor, r: usize) -> Tensor {
    Tensor::matrix(t.cols(), 1, t.row(r).to_vec()).expect("row length")
}

/// Builds a freshly initialised model. Each tensor is drawn from its own
/// named stream, so tensors shared between variants start identical under a
/// common seed.
pub fn build_variant(config: &ModelConfig, coord_norm: CoordNorm, seed: u64) -> Result<ForecastModel> {
    config.validate()?;
    let c = config;
    let h = c.hidden;
    let graph = match c.graph_mode {
        GraphMode::None => None,
        GraphMode::DirectedEdgeAttrs => Some(GraphLayer::EdgeAttr(TransformerConv::new(
            c.encoder_input_dim(),
            c.edge_attr_dim,
            h,
            h,
            c.bias,
            seed,
            "graph",
        ))),
        GraphMode::Binary => Some(GraphLayer::Weighted(WeightedConv::new(
            Propagation::Gcn,
            c.encoder_input_dim(),
            h,
            c.bias,
            seed,
            "graph",
        ))),
        GraphMode::InverseDistance => Some(GraphLayer::Weighted(WeightedConv::new(
            Propagation::GraphConv,
            c.encoder_input_dim(),
            h,
            c.bias,
            seed,
            "graph",
        ))),
    };
    Ok(ForecastModel {
        config: config.clone(),
        embed: EmbeddingTables::new(c.embed_dim, coord_norm, seed, "embed"),
        graph,
        encoder_gru: GruCell::new(
            c.encoder_input_dim() + c.graph_output_dim(),
            h,
            c.bias,
            seed,
            "encoder.gru",
        ),
        encoder_mlp: Mlp::new(h, c.mlp_hidden, 1, c.bias, seed, "encoder.mlp"),
        decoder_gru: GruCell::new(c.decoder_input_dim(), h, c.bias, seed, "decoder.gru"),
        attention: c
            .use_attention
            .then(|| LuongAttention::new(h, c.bias, seed, "decoder.attention")),
        decoder_mlp: Mlp::new(h, c.mlp_hidden, 1, c.bias, seed, "decoder.mlp"),
    })
}

impl Parameters for ForecastModel {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.embed.visit(&join(prefix, SEGMENTS[0]), f);
        if let Some(g) = &self.graph {
            g.visit(&join(prefix, SEGMENTS[1]), f);
        }
        self.encoder_gru.visit(&join(prefix, SEGMENTS[2]), f);
        self.encoder_mlp.visit(&join(prefix, SEGMENTS[3]), f);
        self.decoder_gru.visit(&join(prefix, SEGMENTS[4]), f);
        if let Some(a) = &self.attention {
            a.visit(&join(prefix, SEGMENTS[5]), f);
        }
        self.decoder_mlp.visit(&join(prefix, SEGMENTS[6]), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.embed.visit_mut(&join(prefix, SEGMENTS[0]), f);
        if let Some(g) = &mut self.graph {
            g.visit_mut(&join(prefix, SEGMENTS[1]), f);
        }
        self.encoder_gru.visit_mut(&join(prefix, SEGMENTS[2]), f);
        self.encoder_mlp.visit_mut(&join(prefix, SEGMENTS[3]), f);
        self.decoder_gru.visit_mut(&join(prefix, SEGMENTS[4]), f);
        if let Some(a) = &mut self.attention {
            a.visit_mut(&join(prefix, SEGMENTS[5]), f);
        }
        self.decoder_mlp.visit_mut(&join(prefix, SEGMENTS[6]), f);
    }
}

impl ForecastModel {
    pub fn graph_parameter_count(&self) -> usize {
        self.graph.as_ref().map_or(0, |g| g.num_parameters())
    }

    pub fn attention_parameter_count(&self) -> usize {
        self.attention.as_ref().map_or(0, |a| a.num_parameters())
    }

    /// One encoder step. `p` is `[X, X̄, y]` (`L x encoder_input_dim`).
    /// Returns `(h, ŷ as L x 1, cache)`.
    pub fn encoder_step(
        &self,
        p: &Tensor,
        graph: &GraphInput,
        edge_attrs: Option<&Tensor>,
        h_prev: &Tensor,
    ) -> Result<(Tensor, Tensor, EncoderStepCache)> {
        let (zeta, gcache) = match &self.graph {
            None => (p.clone(), None),
            Some(GraphLayer::EdgeAttr(conv)) => {
                let e = edge_attrs.ok_or_else(|| {
                    Error::InvalidInput("edge attributes are required for the directed-edge-attrs graph mode".into())
                })?;
                let (eta, c) = conv.forward(p, &graph.edges, e)?;
                (Tensor::concat_cols(&[p, &eta])?, Some(GraphCache::EdgeAttr(c)))
            }
            Some(GraphLayer::Weighted(conv)) => {
                let w = match conv.propagation {
                    Propagation::Gcn => &graph.binary_weights,
                    Propagation::GraphConv => &graph.inverse_weights,
                };
                let (eta, c) = conv.forward(p, &graph.edges, w)?;
                (Tensor::concat_cols(&[p, &eta])?, Some(GraphCache::Weighted(c)))
            }
        };
        let (h, gru) = self.encoder_gru.forward(h_prev, &zeta)?;
        let (y, mlp) = self.encoder_mlp.forward(&h)?;
        Ok((h, y, EncoderStepCache { graph: gcache, gru, mlp }))
    }

    /// One decoder step. `xbar` is `L x 4e`, `y_prev` is `L x 1`.
    pub fn decoder_step(
        &self,
        xbar: &Tensor,
        y_prev: &Tensor,
        h_prev: &Tensor,
        encoder_history: &[Tensor],
    ) -> Result<(Tensor, Tensor, DecoderStepCache)> {
        let q = Tensor::concat_cols(&[xbar, y_prev])?;
        let (h, gru) = self.decoder_gru.forward(h_prev, &q)?;
        let (y, mlp, attention) = match &self.attention {
            Some(att) => {
                let (pi, ac) = att.forward(encoder_history, &h)?;
                let (y, mlp) = self.decoder_mlp.forward(&pi)?;
                (y, mlp, Some(ac))
            }
            None => {
                let (y, mlp) = self.decoder_mlp.forward(&h)?;
                (y, mlp, None)
            }
        };
        Ok((h, y, DecoderStepCache { gru, attention, mlp }))
    }

    fn encoder_input(&self, sample: &WindowSample, t: usize) -> Result<Tensor> {
        let xbar = self.embed.forward(&sample.graph.coords, sample.calendar[t])?;
        let y = row_as_column(&sample.y_history, t);
        Tensor::concat_cols(&[&sample.x[t], &xbar, &y])
    }

    fn check_sample(&self, sample: &WindowSample) -> Result<()> {
        let c = &self.config;
        sample.validate(c.history, c.forecast, c.node_attr_dim)?;
        if c.graph_mode == GraphMode::DirectedEdgeAttrs {
            if sample.edge_attrs.len() != c.history {
                return Err(Error::InvalidInput(
                    "edge attributes are required for the directed-edge-attrs graph mode".into(),
                ));
            }
            if let Some(e) = sample.edge_attrs.iter().find(|e| !e.is_empty() && e.cols() != c.edge_attr_dim) {
                return Err(Error::shape("edge attribute width", c.edge_attr_dim, e.cols()));
            }
        }
        Ok(())
    }

    /// Full forward pass with all caches retained.
    pub fn forward_trace(&self, sample: &WindowSample) -> Result<ForwardTrace> {
        self.check_sample(sample)?;
        let (hd, l) = (self.config.hidden, sample.num_nodes());
        let (big_h, big_f) = (self.config.history, self.config.forecast);

        let mut h = Tensor::zeros(&[l, hd]);
        let mut y = Tensor::zeros(&[l, 1]);
        let mut encoder = Vec::with_capacity(big_h);
        let mut history = Vec::with_capacity(big_h);
        let mut encoder_predictions = Tensor::zeros(&[big_h, l]);
        for t in 0..big_h {
            let p = self.encoder_input(sample, t)?;
            let (h_t, y_t, cache) = self.encoder_step(&p, &sample.graph, sample.edge_attrs.get(t).map(|e| &**e), &h)?;
            set_row(&mut encoder_predictions, t, &y_t);
            encoder.push(cache);
            history.push(h_t.clone());
            h = h_t;
            y = y_t;
        }
        let state = EncoderState {
            hidden_history: history,
            last_prediction: y.clone(),
            final_hidden: h.clone(),
        };

        let mut decoder = Vec::with_capacity(big_f);
        let mut predictions = Tensor::zeros(&[big_f, l]);
        for t in 0..big_f {
            let xbar = self.embed.forward(&sample.graph.coords, sample.calendar[big_h + t])?;
            let (h_t, y_t, cache) = self.decoder_step(&xbar, &y, &h, &state.hidden_history)?;
            y_t.ensure_finite("decoder prediction")?;
            set_row(&mut predictions, t, &y_t);
            decoder.push(cache);
            h = h_t;
            y = y_t;
        }
        Ok(ForwardTrace {
            encoder,
            decoder,
            state,
            encoder_predictions,
            predictions,
        })
    }

    /// Normalised predictions `F x L`.
    pub fn predict(&self, sample: &WindowSample) -> Result<Tensor> {
        Ok(self.forward_trace(sample)?.predictions)
    }

    /// Back-propagates `d_pred` (`F x L`) and optionally `d_encoder`
    /// (`H x L`) through the unrolled graph. Returns parameter gradients.
    pub fn backward(
        &self,
        sample: &WindowSample,
        trace: &ForwardTrace,
        d_pred: &Tensor,
        d_encoder: Option<&Tensor>,
    ) -> ForecastModel {
        let mut grad = self.zeros_like();
        let (hd, l) = (self.config.hidden, sample.num_nodes());
        let (big_h, big_f) = (self.config.history, self.config.forecast);
        let e4 = self.config.space_time_dim();
        let history = &trace.state.hidden_history;

        let mut d_hist: Vec<Tensor> = (0..big_h).map(|_| Tensor::zeros(&[l, hd])).collect();
        let mut dh = Tensor::zeros(&[l, hd]);
        let mut dy_carry = Tensor::zeros(&[l, 1]);
        for t in (0..big_f).rev() {
            let cache = &trace.decoder[t];
            let mut dy = row_as_column(d_pred, t);
            dy.add_assign(&dy_carry);
            let d_pi = self.decoder_mlp.backward(&cache.mlp, &dy, &mut grad.decoder_mlp);
            match (&self.attention, &cache.attention, &mut grad.attention) {
                (Some(att), Some(ac), Some(g)) => {
                    let (d_enc, d_dec) = att.backward(ac, history, &d_pi, g);
                    for (acc, d) in d_hist.iter_mut().zip(&d_enc) {
                        acc.add_assign(d);
                    }
                    dh.add_assign(&d_dec);
                }
                _ => dh.add_assign(&d_pi),
            }
            let (dh_prev, dq) = self.decoder_gru.backward(&cache.gru, &dh, &mut grad.decoder_gru);
            let mut parts = dq.split_cols(&[e4, 1]);
            dy_carry = parts.pop().expect("two parts");
            let d_xbar = parts.pop().expect("two parts");
            self.embed.backward(
                &sample.graph.coords,
                sample.calendar[big_h + t],
                &d_xbar,
                &mut grad.embed,
            );
            dh = dh_prev;
        }

        let widths = [self.config.node_attr_dim, e4, 1];
        for t in (0..big_h).rev() {
            let cache = &trace.encoder[t];
            dh.add_assign(&d_hist[t]);
            let mut dy = if t + 1 == big_h { dy_carry.clone() } else { Tensor::zeros(&[l, 1]) };
            if let Some(de) = d_encoder {
                dy.add_assign(&row_as_column(de, t));
            }
            dh.add_assign(&self.encoder_mlp.backward(&cache.mlp, &dy, &mut grad.encoder_mlp));
            let (dh_prev, dzeta) = self.encoder_gru.backward(&cache.gru, &dh, &mut grad.encoder_gru);
            let p_dim = self.config.encoder_input_dim();
            let dp = match (&self.graph, &cache.graph, &mut grad.graph) {
                (Some(GraphLayer::EdgeAttr(conv)), Some(GraphCache::EdgeAttr(gc)), Some(GraphLayer::EdgeAttr(g))) => {
                    let mut parts = dzeta.split_cols(&[p_dim, self.config.graph_output_dim()]);
                    let d_eta = parts.pop().expect("two parts");
                    let mut dp = parts.pop().expect("two parts");
                    dp.add_assign(&conv.backward(gc, &d_eta, g).0);
                    dp
                }
                (Some(GraphLayer::Weighted(conv)), Some(GraphCache::Weighted(gc)), Some(GraphLayer::Weighted(g))) => {
                    let mut parts = dzeta.split_cols(&[p_dim, self.config.graph_output_dim()]);
                    let d_eta = parts.pop().expect("two parts");
                    let mut dp = parts.pop().expect("two parts");
                    dp.add_assign(&conv.backward(gc, &d_eta, g));
                    dp
                }
                _ => dzeta,
            };
            let d_xbar = dp.split_cols(&widths).swap_remove(1);
            self.embed
                .backward(&sample.graph.coords, sample.calendar[t], &d_xbar, &mut grad.embed);
            dh = dh_prev;
        }
        grad
    }

    /// Training objective on one window and its parameter gradient.
    pub fn loss_and_gradient(&self, sample: &WindowSample) -> Result<(f64, ForecastModel)> {
        let trace = self.forward_trace(sample)?;
        let truth = &sample.y_future;
        truth.ensure_finite("window future targets")?;
        let mut loss = mse_loss(&trace.predictions, truth)?;
        let n = truth.len() as f64;
        let mut d_pred = trace.predictions.clone();
        for (d, y) in d_pred.data_mut().iter_mut().zip(truth.data()) {
            *d = 2.0 * (*d - y) / n;
        }
        let d_enc = if self.config.aux_loss {
            loss += mse_loss(&trace.encoder_predictions, &sample.y_history)?;
            let m = sample.y_history.len() as f64;
            let mut d = trace.encoder_predictions.clone();
            for (d, y) in d.data_mut().iter_mut().zip(sample.y_history.data()) {
                *d = 2.0 * (*d - y) / m;
            }
            Some(d)
        } else {
            None
        };
        if !loss.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        let grad = self.backward(sample, &trace, &d_pred, d_enc.as_ref());
        Ok((loss, grad))
    }

    /// SHA-256 of the serialised configuration.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.config.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.meta.insert("model.variant".into(), self.config.variant.to_string());
        ck.meta.insert("model.config".into(), self.config.to_toml());
        ck.meta.insert("model.config_hash".into(), self.config_hash());
        ck.meta
            .insert("model.parameter_count".into(), self.num_parameters().to_string());
        self.visit("", &mut |name, t| ck.insert(name, t.clone()));
        ck.insert("embed.coord_norm", Tensor::vector(self.embed.coord_norm.to_array().to_vec()));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = ModelConfig::from_toml(ck.meta("model.config")?)?;
        let coord_norm = CoordNorm::from_slice(ck.get("embed.coord_norm")?.data())?;
        let mut model = build_variant(&config, coord_norm, 0)?;
        if model.config_hash() != ck.meta("model.config_hash")? {
            return Err(Error::Checkpoint("config hash does not match stored configuration".into()));
        }
        let mut failure = None;
        model.visit_mut("", &mut |name, t| {
            if failure.is_some() {
                return;
            }
            match ck.get(&name) {
                Ok(src) if src.shape() == t.shape() => t.data_mut().copy_from_slice(src.data()),
                Ok(src) => {
                    failure = Some(Error::Checkpoint(format!(
                        "array `{name}` has shape {:?}, expected {:?}",
                        src.shape(),
                        t.shape()
                    )))
                }
                Err(e) => failure = Some(e),
            }
        });
        match failure {
            Some(e) => Err(e),
            None => Ok(model),
        }
    }
}

#[cfg(test)]
mod tests;
