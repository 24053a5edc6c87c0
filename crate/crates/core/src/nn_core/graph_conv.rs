//! Scalar-weighted message passing used by the convolutional baselines.

use super::{join, Linear, Parameters, Tensor};
use crate::error::{Error, Result};
use crate::geo_graph::Edge;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Propagation {
    /// Symmetric-normalised aggregation with self loops:
    /// `eta_i = W sum_{j in N_i + i} w_ji / sqrt(deg_i deg_j) P_j + b`,
    /// `deg_i = 1 + sum_j w_ji`.
    Gcn,
    /// Root term plus weighted neighbour sum:
    /// `eta_i = W_root P_i + W_nbr sum_j w_ji P_j + b`.
    GraphConv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedConv {
    pub propagation: Propagation,
    pub w_nbr: Linear,
    /// present for [`Propagation::GraphConv`] only
    pub w_root: Option<Linear>,
}

#[derive(Debug, Clone)]
pub struct WeightedConvCache {
    p: Tensor,
    aggregated: Tensor,
    /// per-edge coefficient applied to `P_source`
    coef: Vec<f64>,
    self_coef: Vec<f64>,
    edges: Vec<Edge>,
}

impl WeightedConv {
    pub fn new(propagation: Propagation, node_dim: usize, out_dim: usize, bias: bool, seed: u64, name: &str) -> Self {
        match propagation {
            Propagation::Gcn => Self {
                propagation,
                w_nbr: Linear::new(node_dim, out_dim, bias, seed, &join(name, "w_nbr")),
                w_root: None,
            },
            Propagation::GraphConv => Self {
                propagation,
                w_nbr: Linear::new(node_dim, out_dim, false, seed, &join(name, "w_nbr")),
                w_root: Some(Linear::new(node_dim, out_dim, bias, seed, &join(name, "w_root"))),
            },
        }
    }

    pub fn node_dim(&self) -> usize {
        self.w_nbr.input_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.w_nbr.output_dim()
    }

    pub fn forward(&self, p: &Tensor, edges: &[Edge], weights: &[f64]) -> Result<(Tensor, WeightedConvCache)> {
        let n = p.rows();
        if p.cols() != self.node_dim() {
            return Err(Error::shape("weighted_conv node features", self.node_dim(), p.cols()));
        }
        if weights.len() != edges.len() {
            return Err(Error::shape("weighted_conv edge weights", edges.len(), weights.len()));
        }
        if let Some(bad) = edges.iter().find(|ed| ed.source >= n || ed.sink >= n) {
            return Err(Error::InvalidInput(format!("edge {bad:?} out of range for {n} nodes")));
        }
        p.ensure_finite("weighted_conv node features")?;

        let (coef, self_coef) = match self.propagation {
            Propagation::Gcn => {
                let mut deg = vec![1.0; n];
                for (ed, w) in edges.iter().zip(weights) {
                    deg[ed.sink] += w;
                }
                let coef = edges
                    .iter()
                    .zip(weights)
                    .map(|(ed, w)| w / (deg[ed.sink] * deg[ed.source]).sqrt())
                    .collect();
                (coef, deg.iter().map(|d| 1.0 / d).collect())
            }
            Propagation::GraphConv => (weights.to_vec(), vec![0.0; n]),
        };

        let mut aggregated = Tensor::zeros(&[n, p.cols()]);
        for i in 0..n {
            let s = self_coef[i];
            if s != 0.0 {
                for (a, v) in aggregated.row_mut(i).iter_mut().zip(p.row(i)) {
                    *a += s * v;
                }
            }
        }
        for (ed, c) in edges.iter().zip(&coef) {
            for (a, v) in aggregated.row_mut(ed.sink).iter_mut().zip(p.row(ed.source)) {
                *a += c * v;
            }
        }
        let mut out = self.w_nbr.apply(&aggregated);
        if let Some(root) = &self.w_root {
            out.add_assign(&root.apply(p));
        }
        let cache = WeightedConvCache {
            p: p.clone(),
            aggregated,
            coef,
            self_coef,
            edges: edges.to_vec(),
        };
        Ok((out, cache))
    }

    pub fn backward(&self, cache: &WeightedConvCache, d_out: &Tensor, grad: &mut WeightedConv) -> Tensor {
        let d_agg = self.w_nbr.backward(&cache.aggregated, d_out, &mut grad.w_nbr);
        let mut d_p = match (&self.w_root, &mut grad.w_root) {
            (Some(root), Some(g)) => root.backward(&cache.p, d_out, g),
            _ => Tensor::zeros(cache.p.shape()),
        };
        for (i, &s) in cache.self_coef.iter().enumerate() {
            if s != 0.0 {
                for (a, d) in d_p.row_mut(i).iter_mut().zip(d_agg.row(i)) {
                    *a += s * d;
                }
            }
        }
        for (ed, c) in cache.edges.iter().zip(&cache.coef) {
            for (a, d) in d_p.row_mut(ed.source).iter_mut().zip(d_agg.row(ed.sink)) {
                *a += c * d;
            }
        }
        d_p
    }
}

impl Parameters for WeightedConv {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.w_nbr.visit(&join(prefix, "w_nbr"), f);
        if let Some(r) = &self.w_root {
            r.visit(&join(prefix, "w_root"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.w_nbr.visit_mut(&join(prefix, "w_nbr"), f);
        if let Some(r) = &mut self.w_root {
            r.visit_mut(&join(prefix, "w_root"), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn_core::gradcheck::{check_input, check_parameters, probe};
    use crate::nn_core::uniform_tensor;

    fn ring() -> (Vec<Edge>, Vec<f64>) {
        let edges = vec![
            Edge { source: 0, sink: 1 },
            Edge { source: 1, sink: 0 },
            Edge { source: 1, sink: 2 },
            Edge { source: 2, sink: 1 },
        ];
        (edges, vec![1.0, 1.0, 0.5, 0.5])
    }

    #[test]
    fn gcn_matches_dense_normalised_adjacency() {
        let (edges, w) = ring();
        let conv = WeightedConv::new(Propagation::Gcn, 2, 3, true, 1, "g");
        let p = uniform_tensor(&[3, 2], 1.0, 2, "p");
        let (out, _) = conv.forward(&p, &edges, &w).unwrap();
        // A + I with D^-1/2 (A + I) D^-1/2
        let a = [[1.0, 1.0, 0.0], [1.0, 1.0, 0.5], [0.0, 0.5, 1.0]];
        let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
        for i in 0..3 {
            let mut agg = [0.0; 2];
            for j in 0..3 {
                let c = a[i][j] / (deg[i] * deg[j]).sqrt();
                agg[0] += c * p.get(j, 0);
                agg[1] += c * p.get(j, 1);
            }
            let want = conv.w_nbr.forward(&Tensor::matrix(1, 2, agg.to_vec()).unwrap()).unwrap();
            for (x, y) in out.row(i).iter().zip(want.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn graphconv_without_edges_is_root_term() {
        let conv = WeightedConv::new(Propagation::GraphConv, 2, 3, true, 1, "g");
        let p = uniform_tensor(&[3, 2], 1.0, 2, "p");
        let (out, _) = conv.forward(&p, &[], &[]).unwrap();
        assert_eq!(out, conv.w_root.as_ref().unwrap().forward(&p).unwrap());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (edges, w) = ring();
        for prop in [Propagation::Gcn, Propagation::GraphConv] {
            let mut conv = WeightedConv::new(prop, 3, 2, true, 4, "g");
            let p = uniform_tensor(&[3, 3], 1.0, 5, "p");
            let (out, cache) = conv.forward(&p, &edges, &w).unwrap();
            let (_, c) = probe(&out, 1);
            let mut grad = conv.zeros_like();
            let dp = conv.backward(&cache, &c, &mut grad);
            let f = |conv: &WeightedConv, p: &Tensor| probe(&conv.forward(p, &edges, &w).unwrap().0, 1).0;
            let rep = check_parameters(&mut conv, &grad, |cv| f(cv, &p), 1e-5, 1e-8);
            assert!(rep.max_relative_error < 1e-4, "{rep:?}");
            let rep = check_input("p", &p, &dp, |pp| f(&conv, pp), 1e-5, 1e-8);
            assert!(rep.max_relative_error < 1e-4, "{rep:?}");
        }
    }
}
