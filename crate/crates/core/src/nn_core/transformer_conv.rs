//! Single-head transformer convolution with edge features.
//!
//! For every sink node `i` with in-neighbours `j` (edges `j -> i`):
//!
//! ```text
//! eta_i   = W1 P_i + sum_j alpha_ij (W2 P_j + W6 E_ji)
//! alpha_i = softmax_j( (W3 P_i) . (W4 P_j + W5 E_ji) / sqrt(d) )
//! ```
//!
//! where `d` is the key dimension. Nodes without in-edges reduce to `W1 P_i`.

use super::{dot, join, Linear, Parameters, Tensor};
use crate::error::{Error, Result};
use crate::geo_graph::Edge;

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerConv {
    /// root (skip) projection
    pub w1: Linear,
    /// value projection
    pub w2: Linear,
    /// query projection
    pub w3: Linear,
    /// key projection
    pub w4: Linear,
    /// edge-to-key projection, no bias
    pub w5: Linear,
    /// edge-to-value projection, no bias
    pub w6: Linear,
}

#[derive(Debug, Clone)]
pub struct TransformerConvCache {
    p: Tensor,
    e: Tensor,
    edges: Vec<Edge>,
    q: Tensor,
    /// per-edge key `W4 P_j + W5 E`
    keys: Tensor,
    /// per-edge value `W2 P_j + W6 E`
    values: Tensor,
    /// per-edge attention weight
    alpha: Vec<f64>,
}

impl TransformerConvCache {
    pub fn attention_weights(&self) -> &[f64] {
        &self.alpha
    }
}

impl TransformerConv {
    pub fn new(
        node_dim: usize,
        edge_dim: usize,
        key_dim: usize,
        out_dim: usize,
        bias: bool,
        seed: u64,
        name: &str,
    ) -> Self {
        Self {
            w1: Linear::new(node_dim, out_dim, bias, seed, &join(name, "w1")),
            w2: Linear::new(node_dim, out_dim, bias, seed, &join(name, "w2")),
            w3: Linear::new(node_dim, key_dim, bias, seed, &join(name, "w3")),
            w4: Linear::new(node_dim, key_dim, bias, seed, &join(name, "w4")),
            w5: Linear::new(edge_dim, key_dim, false, seed, &join(name, "w5")),
            w6: Linear::new(edge_dim, out_dim, false, seed, &join(name, "w6")),
        }
    }

    pub fn node_dim(&self) -> usize {
        self.w1.input_dim()
    }

    pub fn edge_dim(&self) -> usize {
        self.w5.input_dim()
    }

    pub fn key_dim(&self) -> usize {
        self.w3.output_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.w1.output_dim()
    }

    /// `p`: `L x node_dim`; `e`: `edges x edge_dim` aligned with `edges`.
    pub fn forward(&self, p: &Tensor, edges: &[Edge], e: &Tensor) -> Result<(Tensor, TransformerConvCache)> {
        let n = p.rows();
        if p.cols() != self.node_dim() {
            return Err(Error::shape("transformer_conv node features", self.node_dim(), p.cols()));
        }
        if e.rows() != edges.len() || (!edges.is_empty() && e.cols() != self.edge_dim()) {
            return Err(Error::shape(
                "transformer_conv edge attributes",
                format!("[{}, {}]", edges.len(), self.edge_dim()),
                format!("{:?}", e.shape()),
            ));
        }
        if let Some(bad) = edges.iter().find(|ed| ed.source >= n || ed.sink >= n) {
            return Err(Error::InvalidInput(format!("edge {bad:?} out of range for {n} nodes")));
        }
        p.ensure_finite("transformer_conv node features")?;
        e.ensure_finite("transformer_conv edge attributes")?;

        let e = if edges.is_empty() {
            Tensor::zeros(&[0, self.edge_dim()])
        } else {
            e.clone()
        };
        let mut out = self.w1.apply(p);
        let q = self.w3.apply(p);
        let k_nodes = self.w4.apply(p);
        let v_nodes = self.w2.apply(p);
        let mut keys = self.w5.apply(&e);
        let mut values = self.w6.apply(&e);
        for (m, ed) in edges.iter().enumerate() {
            for (a, b) in keys.row_mut(m).iter_mut().zip(k_nodes.row(ed.source)) {
                *a += b;
            }
            for (a, b) in values.row_mut(m).iter_mut().zip(v_nodes.row(ed.source)) {
                *a += b;
            }
        }

        let scale = 1.0 / (self.key_dim() as f64).sqrt();
        let logits: Vec<f64> = edges
            .iter()
            .enumerate()
            .map(|(m, ed)| dot(q.row(ed.sink), keys.row(m)) * scale)
            .collect();
        if let Some(pos) = logits.iter().position(|l| !l.is_finite()) {
            return Err(Error::NonFinite(format!("attention logit of edge {pos}")));
        }

        // softmax over the in-edges of each sink
        let mut max = vec![f64::NEG_INFINITY; n];
        for (ed, &l) in edges.iter().zip(&logits) {
            max[ed.sink] = max[ed.sink].max(l);
        }
        let mut alpha: Vec<f64> = edges
            .iter()
            .zip(&logits)
            .map(|(ed, &l)| (l - max[ed.sink]).exp())
            .collect();
        let mut denom = vec![0.0; n];
        for (ed, a) in edges.iter().zip(&alpha) {
            denom[ed.sink] += a;
        }
        for (ed, a) in edges.iter().zip(alpha.iter_mut()) {
            *a /= denom[ed.sink];
        }

        for (m, ed) in edges.iter().enumerate() {
            let a = alpha[m];
            for (o, v) in out.row_mut(ed.sink).iter_mut().zip(values.row(m)) {
                *o += a * v;
            }
        }
        let cache = TransformerConvCache {
            p: p.clone(),
            e,
            edges: edges.to_vec(),
            q,
            keys,
            values,
            alpha,
        };
        Ok((out, cache))
    }

    /// Returns `(dL/dP, dL/dE)`.
    pub fn backward(
        &self,
        cache: &TransformerConvCache,
        d_out: &Tensor,
        grad: &mut TransformerConv,
    ) -> (Tensor, Tensor) {
        let n = cache.p.rows();
        let (kd, od) = (self.key_dim(), self.out_dim());
        let scale = 1.0 / (kd as f64).sqrt();
        let edges = &cache.edges;
        let m_count = edges.len();

        // d alpha_m = d_out[sink] . value_m
        let d_alpha: Vec<f64> = edges
            .iter()
            .enumerate()
            .map(|(m, ed)| dot(d_out.row(ed.sink), cache.values.row(m)))
            .collect();
        let mut weighted = vec![0.0; n];
        for (m, ed) in edges.iter().enumerate() {
            weighted[ed.sink] += cache.alpha[m] * d_alpha[m];
        }

        let mut d_values = Tensor::zeros(&[m_count, od]);
        let mut d_keys = Tensor::zeros(&[m_count, kd]);
        let mut d_q = Tensor::zeros(&[n, kd]);
        for (m, ed) in edges.iter().enumerate() {
            let a = cache.alpha[m];
            for (dv, g) in d_values.row_mut(m).iter_mut().zip(d_out.row(ed.sink)) {
                *dv = a * g;
            }
            let d_logit = a * (d_alpha[m] - weighted[ed.sink]) * scale;
            for (dk, qv) in d_keys.row_mut(m).iter_mut().zip(cache.q.row(ed.sink)) {
                *dk = d_logit * qv;
            }
            for (dq, kv) in d_q.row_mut(ed.sink).iter_mut().zip(cache.keys.row(m)) {
                *dq += d_logit * kv;
            }
        }

        // scatter per-edge gradients back to the source nodes
        let mut d_v_nodes = Tensor::zeros(&[n, od]);
        let mut d_k_nodes = Tensor::zeros(&[n, kd]);
        for (m, ed) in edges.iter().enumerate() {
            for (a, b) in d_v_nodes.row_mut(ed.source).iter_mut().zip(d_values.row(m)) {
                *a += b;
            }
            for (a, b) in d_k_nodes.row_mut(ed.source).iter_mut().zip(d_keys.row(m)) {
                *a += b;
            }
        }

        let mut d_p = self.w1.backward(&cache.p, d_out, &mut grad.w1);
        d_p.add_assign(&self.w2.backward(&cache.p, &d_v_nodes, &mut grad.w2));
        d_p.add_assign(&self.w3.backward(&cache.p, &d_q, &mut grad.w3));
        d_p.add_assign(&self.w4.backward(&cache.p, &d_k_nodes, &mut grad.w4));
        let mut d_e = self.w5.backward(&cache.e, &d_keys, &mut grad.w5);
        d_e.add_assign(&self.w6.backward(&cache.e, &d_values, &mut grad.w6));
        (d_p, d_e)
    }
}

impl Parameters for TransformerConv {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.w1.visit(&join(prefix, "w1"), f);
        self.w2.visit(&join(prefix, "w2"), f);
        self.w3.visit(&join(prefix, "w3"), f);
        self.w4.visit(&join(prefix, "w4"), f);
        self.w5.visit(&join(prefix, "w5"), f);
        self.w6.visit(&join(prefix, "w6"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.w1.visit_mut(&join(prefix, "w1"), f);
        self.w2.visit_mut(&join(prefix, "w2"), f);
        self.w3.visit_mut(&join(prefix, "w3"), f);
        self.w4.visit_mut(&join(prefix, "w4"), f);
        self.w5.visit_mut(&join(prefix, "w5"), f);
        self.w6.visit_mut(&join(prefix, "w6"), f);
    }
}
