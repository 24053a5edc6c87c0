use super::{join, uniform_tensor, Parameters, Tensor};
use crate::error::{Error, Result};

/// Affine map `y = x W^T + b` applied row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out x in`
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    /// Uniform initialisation in `±sqrt(1/in)`.
    pub fn new(input: usize, output: usize, bias: bool, seed: u64, name: &str) -> Self {
        let bound = (1.0 / input.max(1) as f64).sqrt();
        Self {
            weight: uniform_tensor(&[output, input], bound, seed, &join(name, "weight")),
            bias: bias.then(|| uniform_tensor(&[output], bound, seed, &join(name, "bias"))),
        }
    }

    pub fn zeros(input: usize, output: usize, bias: bool) -> Self {
        Self {
            weight: Tensor::zeros(&[output, input]),
            bias: bias.then(|| Tensor::zeros(&[output])),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.input_dim() || x.shape().len() != 2 {
            return Err(Error::shape(
                "linear input",
                format!("[n, {}]", self.input_dim()),
                format!("{:?}", x.shape()),
            ));
        }
        x.ensure_finite("linear input")?;
        Ok(self.apply(x))
    }

    /// Forward without validation, for inputs produced inside a layer.
    pub(crate) fn apply(&self, x: &Tensor) -> Tensor {
        let mut y = x.matmul_t(&self.weight);
        if let Some(b) = &self.bias {
            let m = y.cols();
            for i in 0..y.rows() {
                for (v, bj) in y.row_mut(i).iter_mut().zip(b.data()) {
                    *v += bj;
                }
            }
            debug_assert_eq!(m, b.len());
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &Tensor, dy: &Tensor, grad: &mut Linear) -> Tensor {
        grad.weight.add_at_b(dy, x);
        if let Some(gb) = &mut grad.bias {
            let g = gb.data_mut();
            for i in 0..dy.rows() {
                for (a, d) in g.iter_mut().zip(dy.row(i)) {
                    *a += d;
                }
            }
        }
        dy.matmul(&self.weight)
    }

    /// Backward for the weight only, skipping the input gradient.
    pub(crate) fn backward_params(&self, x: &Tensor, dy: &Tensor, grad: &mut Linear) {
        grad.weight.add_at_b(dy, x);
        if let Some(gb) = &mut grad.bias {
            let g = gb.data_mut();
            for i in 0..dy.rows() {
                for (a, d) in g.iter_mut().zip(dy.row(i)) {
                    *a += d;
                }
            }
        }
    }
}

impl Parameters for Linear {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(join(prefix, "bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(join(prefix, "bias"), b);
        }
    }
}
