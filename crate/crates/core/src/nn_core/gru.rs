use super::{join, sigmoid, Linear, Parameters, Tensor};
use crate::error::{Error, Result};

/// Gated recurrent unit over `[h_prev, x]`:
///
/// ```text
/// z  = sigmoid(W_z [h, x])
/// r  = sigmoid(W_r [h, x])
/// h~ = tanh(W_h [r * h, x])
/// h' = (1 - z) * h + z * h~
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub w_z: Linear,
    pub w_r: Linear,
    pub w_h: Linear,
}

#[derive(Debug, Clone)]
pub struct GruCache {
    h_prev: Tensor,
    hx: Tensor,
    rhx: Tensor,
    z: Tensor,
    r: Tensor,
    h_tilde: Tensor,
}

impl GruCell {
    pub fn new(input: usize, hidden: usize, bias: bool, seed: u64, name: &str) -> Self {
        let fan = hidden + input;
        Self {
            w_z: Linear::new(fan, hidden, bias, seed, &join(name, "w_z")),
            w_r: Linear::new(fan, hidden, bias, seed, &join(name, "w_r")),
            w_h: Linear::new(fan, hidden, bias, seed, &join(name, "w_h")),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_z.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.input_dim() - self.hidden_dim()
    }

    pub fn forward(&self, h_prev: &Tensor, x: &Tensor) -> Result<(Tensor, GruCache)> {
        let (hd, id) = (self.hidden_dim(), self.input_dim());
        if h_prev.cols() != hd || x.cols() != id || h_prev.rows() != x.rows() {
            return Err(Error::shape(
                "gru_step",
                format!("h [n, {hd}], x [n, {id}]"),
                format!("h {:?}, x {:?}", h_prev.shape(), x.shape()),
            ));
        }
        h_prev.ensure_finite("gru hidden state")?;
        x.ensure_finite("gru input")?;

        let hx = Tensor::concat_cols(&[h_prev, x])?;
        let z = self.w_z.apply(&hx).map(sigmoid);
        let r = self.w_r.apply(&hx).map(sigmoid);
        let mut rh = h_prev.clone();
        for (v, ri) in rh.data_mut().iter_mut().zip(r.data()) {
            *v *= ri;
        }
        let rhx = Tensor::concat_cols(&[&rh, x])?;
        let h_tilde = self.w_h.apply(&rhx).map(f64::tanh);
        let mut h = h_prev.clone();
        for ((hv, zi), ht) in h.data_mut().iter_mut().zip(z.data()).zip(h_tilde.data()) {
            *hv = (1.0 - zi) * *hv + zi * ht;
        }
        let cache = GruCache {
            h_prev: h_prev.clone(),
            hx,
            rhx,
            z,
            r,
            h_tilde,
        };
        Ok((h, cache))
    }

    /// Returns `(dL/dh_prev, dL/dx)`.
    pub fn backward(&self, cache: &GruCache, dh: &Tensor, grad: &mut GruCell) -> (Tensor, Tensor) {
        let hd = self.hidden_dim();
        let id = self.input_dim();
        let n = dh.rows();
        let mut dh_prev = Tensor::zeros(&[n, hd]);
        let mut d_pre_h = Tensor::zeros(&[n, hd]);
        let mut d_pre_z = Tensor::zeros(&[n, hd]);
        for k in 0..n * hd {
            let (dhk, z, ht, hp) = (
                dh.data()[k],
                cache.z.data()[k],
                cache.h_tilde.data()[k],
                cache.h_prev.data()[k],
            );
            dh_prev.data_mut()[k] = dhk * (1.0 - z);
            d_pre_h.data_mut()[k] = dhk * z * (1.0 - ht * ht);
            d_pre_z.data_mut()[k] = dhk * (ht - hp) * z * (1.0 - z);
        }

        let d_rhx = self.w_h.backward(&cache.rhx, &d_pre_h, &mut grad.w_h);
        let mut d_pre_r = Tensor::zeros(&[n, hd]);
        let mut dx = Tensor::zeros(&[n, id]);
        for i in 0..n {
            let row = d_rhx.row(i);
            for j in 0..hd {
                let k = i * hd + j;
                let d_rh = row[j];
                let r = cache.r.data()[k];
                dh_prev.data_mut()[k] += d_rh * r;
                d_pre_r.data_mut()[k] = d_rh * cache.h_prev.data()[k] * r * (1.0 - r);
            }
            dx.row_mut(i).copy_from_slice(&row[hd..]);
        }

        let mut d_hx = self.w_z.backward(&cache.hx, &d_pre_z, &mut grad.w_z);
        d_hx.add_assign(&self.w_r.backward(&cache.hx, &d_pre_r, &mut grad.w_r));
        for i in 0..n {
            let row = d_hx.row(i);
            for (a, b) in dh_prev.row_mut(i).iter_mut().zip(&row[..hd]) {
                *a += b;
            }
            for (a, b) in dx.row_mut(i).iter_mut().zip(&row[hd..]) {
                *a += b;
            }
        }
        (dh_prev, dx)
    }
}

impl Parameters for GruCell {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.w_z.visit(&join(prefix, "w_z"), f);
        self.w_r.visit(&join(prefix, "w_r"), f);
        self.w_h.visit(&join(prefix, "w_h"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.w_z.visit_mut(&join(prefix, "w_z"), f);
        self.w_r.visit_mut(&join(prefix, "w_r"), f);
        self.w_h.visit_mut(&join(prefix, "w_h"), f);
    }
}
