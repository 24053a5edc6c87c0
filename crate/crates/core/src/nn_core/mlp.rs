use super::{join, Linear, Parameters, Tensor};
use crate::error::{Error, Result};

/// Two-layer head: `affine -> tanh -> affine`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    x: Tensor,
    hidden: Tensor,
}

impl Mlp {
    pub fn new(input: usize, hidden: usize, output: usize, bias: bool, seed: u64, name: &str) -> Self {
        Self {
            l1: Linear::new(input, hidden, bias, seed, &join(name, "l1")),
            l2: Linear::new(hidden, output, bias, seed, &join(name, "l2")),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, MlpCache)> {
        if x.cols() != self.l1.input_dim() {
            return Err(Error::shape("mlp input", self.l1.input_dim(), x.cols()));
        }
        let hidden = self.l1.forward(x)?.map(f64::tanh);
        let out = self.l2.apply(&hidden);
        Ok((
            out,
            MlpCache {
                x: x.clone(),
                hidden,
            },
        ))
    }

    pub fn backward(&self, cache: &MlpCache, d_out: &Tensor, grad: &mut Mlp) -> Tensor {
        let mut d_h = self.l2.backward(&cache.hidden, d_out, &mut grad.l2);
        for (d, h) in d_h.data_mut().iter_mut().zip(cache.hidden.data()) {
            *d *= 1.0 - h * h;
        }
        self.l1.backward(&cache.x, &d_h, &mut grad.l1)
    }
}

impl Parameters for Mlp {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.l1.visit(&join(prefix, "l1"), f);
        self.l2.visit(&join(prefix, "l2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.l1.visit_mut(&join(prefix, "l1"), f);
        self.l2.visit_mut(&join(prefix, "l2"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn_core::gradcheck::{check_input, check_parameters, probe};
    use crate::nn_core::uniform_tensor;

    #[test]
    fn zero_weights_give_zero() {
        let mut mlp = Mlp::new(3, 4, 1, true, 1, "m");
        mlp.zero_grad();
        let (y, _) = mlp.forward(&uniform_tensor(&[2, 3], 1.0, 1, "x")).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_like_layer_passes_input_slice() {
        let lin = Linear {
            weight: Tensor::matrix(2, 3, vec![1., 0., 0., 0., 1., 0.]).unwrap(),
            bias: Some(Tensor::zeros(&[2])),
        };
        let x = Tensor::matrix(1, 3, vec![0.3, -0.7, 9.0]).unwrap();
        assert_eq!(lin.forward(&x).unwrap().data(), &[0.3, -0.7]);
    }

    #[test]
    fn matches_chained_matrix_products() {
        for seed in 0..20 {
            let mlp = Mlp::new(3, 5, 1, true, seed, "m");
            let x = uniform_tensor(&[4, 3], 1.0, seed, "x");
            let (y, _) = mlp.forward(&x).unwrap();
            for i in 0..4 {
                let mut out = mlp.l2.bias.as_ref().unwrap().data()[0];
                for j in 0..5 {
                    let mut h = mlp.l1.bias.as_ref().unwrap().data()[j];
                    for k in 0..3 {
                        h += mlp.l1.weight.get(j, k) * x.get(i, k);
                    }
                    out += mlp.l2.weight.get(0, j) * h.tanh();
                }
                assert!((y.data()[i] - out).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut mlp = Mlp::new(3, 5, 1, true, 4, "m");
        let x = uniform_tensor(&[4, 3], 1.0, 4, "x");
        let (y, cache) = mlp.forward(&x).unwrap();
        let (_, c) = probe(&y, 1);
        let mut g = mlp.zeros_like();
        let dx = mlp.backward(&cache, &c, &mut g);
        let rep = check_parameters(&mut mlp, &g, |m| probe(&m.forward(&x).unwrap().0, 1).0, 1e-5, 1e-8);
        assert!(rep.max_relative_error < 1e-4, "{rep:?}");
        let rep = check_input("x", &x, &dx, |xp| probe(&mlp.forward(xp).unwrap().0, 1).0, 1e-5, 1e-8);
        assert!(rep.max_relative_error < 1e-4, "{rep:?}");
    }

    #[test]
    fn constant_output_has_zero_gradient() {
        let mut mlp = Mlp::new(2, 3, 1, true, 4, "m");
        mlp.l2.weight.fill(0.0);
        let x = uniform_tensor(&[2, 2], 1.0, 4, "x");
        let (_, cache) = mlp.forward(&x).unwrap();
        let mut g = mlp.zeros_like();
        let dx = mlp.backward(&cache, &Tensor::from_vec(&[2, 1], vec![1.0, 1.0]).unwrap(), &mut g);
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(g.l1.weight.data().iter().all(|&v| v == 0.0));
    }
}
