//! Luong attention with the bilinear ("general") score, applied per node.
//!
//! For each node with decoder state `d` and encoder history `e_1..e_H`:
//! `s_t = d^T W_a e_t`, `w = softmax(s)`, `c = sum_t w_t e_t` and
//! `pi = tanh(W_c [c, d] + b_c)`.

use super::{dot, join, softmax_in_place, uniform_tensor, Linear, Parameters, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LuongAttention {
    /// `hidden x hidden`
    pub w_a: Tensor,
    /// `[c, d] (2 hidden) -> hidden`
    pub w_c: Linear,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    decoder: Tensor,
    /// `decoder * W_a`
    projected: Tensor,
    /// `n x H`
    weights: Tensor,
    combined: Tensor,
    output: Tensor,
}

impl AttentionCache {
    /// Attention weights, one row per node over the history steps.
    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn context(&self) -> Tensor {
        let h = self.decoder.cols();
        self.combined.split_cols(&[h, h]).swap_remove(0)
    }
}

impl LuongAttention {
    pub fn new(hidden: usize, bias: bool, seed: u64, name: &str) -> Self {
        let bound = (1.0 / hidden as f64).sqrt();
        Self {
            w_a: uniform_tensor(&[hidden, hidden], bound, seed, &join(name, "w_a")),
            w_c: Linear::new(2 * hidden, hidden, bias, seed, &join(name, "w_c")),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_a.rows()
    }

    /// `encoder`: `H` tensors of shape `n x hidden`; `decoder`: `n x hidden`.
    pub fn forward(&self, encoder: &[Tensor], decoder: &Tensor) -> Result<(Tensor, AttentionCache)> {
        let hd = self.hidden_dim();
        if encoder.is_empty() {
            return Err(Error::InvalidInput("luong attention needs a non-empty encoder history".into()));
        }
        let n = decoder.rows();
        if decoder.cols() != hd {
            return Err(Error::shape("luong decoder state", hd, decoder.cols()));
        }
        for e in encoder {
            if e.rows() != n || e.cols() != hd {
                return Err(Error::shape(
                    "luong encoder state",
                    format!("[{n}, {hd}]"),
                    format!("{:?}", e.shape()),
                ));
            }
        }
        decoder.ensure_finite("luong decoder state")?;

        let steps = encoder.len();
        let projected = decoder.matmul(&self.w_a);
        let mut weights = Tensor::zeros(&[n, steps]);
        let mut context = Tensor::zeros(&[n, hd]);
        for i in 0..n {
            let u = projected.row(i);
            let w = weights.row_mut(i);
            for (t, e) in encoder.iter().enumerate() {
                w[t] = dot(u, e.row(i));
            }
            if w.iter().any(|s| !s.is_finite()) {
                return Err(Error::NonFinite("luong attention score".into()));
            }
            softmax_in_place(w);
            let w = weights.row(i).to_vec();
            let c = context.row_mut(i);
            for (t, e) in encoder.iter().enumerate() {
                for (cv, ev) in c.iter_mut().zip(e.row(i)) {
                    *cv += w[t] * ev;
                }
            }
        }
        let combined = Tensor::concat_cols(&[&context, decoder])?;
        let output = self.w_c.apply(&combined).map(f64::tanh);
        let cache = AttentionCache {
            decoder: decoder.clone(),
            projected,
            weights,
            combined,
            output: output.clone(),
        };
        Ok((output, cache))
    }

    /// Returns `(dL/d encoder states, dL/d decoder state)`.
    pub fn backward(
        &self,
        cache: &AttentionCache,
        encoder: &[Tensor],
        d_out: &Tensor,
        grad: &mut LuongAttention,
    ) -> (Vec<Tensor>, Tensor) {
        let hd = self.hidden_dim();
        let n = d_out.rows();
        let mut d_pre = d_out.clone();
        for (d, o) in d_pre.data_mut().iter_mut().zip(cache.output.data()) {
            *d *= 1.0 - o * o;
        }
        let d_comb = self.w_c.backward(&cache.combined, &d_pre, &mut grad.w_c);
        let mut parts = d_comb.split_cols(&[hd, hd]);
        let mut d_dec = parts.pop().expect("two parts");
        let d_ctx = parts.pop().expect("two parts");

        let mut d_enc: Vec<Tensor> = encoder.iter().map(|_| Tensor::zeros(&[n, hd])).collect();
        let mut d_proj = Tensor::zeros(&[n, hd]);
        for i in 0..n {
            let w = cache.weights.row(i);
            let dc = d_ctx.row(i);
            let dw: Vec<f64> = encoder.iter().map(|e| dot(dc, e.row(i))).collect();
            let mean: f64 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
            let u = cache.projected.row(i);
            for (t, e) in encoder.iter().enumerate() {
                let ds = w[t] * (dw[t] - mean);
                let de = d_enc[t].row_mut(i);
                for ((dev, dcv), uv) in de.iter_mut().zip(dc).zip(u) {
                    *dev += w[t] * dcv + ds * uv;
                }
                for (dp, ev) in d_proj.row_mut(i).iter_mut().zip(e.row(i)) {
                    *dp += ds * ev;
                }
            }
        }
        grad.w_a.add_at_b(&cache.decoder, &d_proj);
        d_dec.add_assign(&d_proj.matmul_t(&self.w_a));
        (d_enc, d_dec)
    }
}

impl Parameters for LuongAttention {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "w_a"), &self.w_a);
        self.w_c.visit(&join(prefix, "w_c"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "w_a"), &mut self.w_a);
        self.w_c.visit_mut(&join(prefix, "w_c"), f);
    }
}
