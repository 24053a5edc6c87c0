use crate::error::{Error, Result};
use crate::nn_core::Parameters;

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Result<Self> {
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be a finite value >= 0, got {lr}")));
        }
        if !(weight_decay >= 0.0) || !weight_decay.is_finite() {
            return Err(Error::Config(format!("weight decay must be >= 0, got {weight_decay}")));
        }
        Ok(Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn step<P: Parameters>(&mut self, params: &mut P, grad: &P) {
        let mut grads: Vec<&[f64]> = Vec::new();
        grad.visit("", &mut |_, t| grads.push(t.data()));
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let decay = 1.0 - self.lr * self.weight_decay;
        let mut k = 0;
        params.visit_mut("", &mut |_, p| {
            let (g, m, v) = (grads[k], &mut self.m[k], &mut self.v[k]);
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi = *pi * decay - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            k += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn_core::Tensor;

    #[derive(Clone)]
    struct Scalar(Tensor);

    impl Parameters for Scalar {
        fn visit<'a>(&'a self, _: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
            f("w".into(), &self.0);
        }
        fn visit_mut(&mut self, _: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
            f("w".into(), &mut self.0);
        }
    }

    fn scalar(v: f64) -> Scalar {
        Scalar(Tensor::vector(vec![v]))
    }

    #[test]
    fn converges_on_quadratic() {
        // f(w) = (w - 3)^2 / 2, minimiser 3
        let mut w = scalar(-2.0);
        let mut opt = AdamW::new(0.05, 0.0).unwrap();
        for _ in 0..5000 {
            let g = scalar(w.0.data()[0] - 3.0);
            opt.step(&mut w, &g);
        }
        assert!((w.0.data()[0] - 3.0).abs() < 1e-4, "{}", w.0.data()[0]);
    }

    #[test]
    fn zero_learning_rate_is_inert() {
        let mut w = scalar(1.25);
        let mut opt = AdamW::new(0.0, 0.003).unwrap();
        for i in 0..50 {
            opt.step(&mut w, &scalar(i as f64 - 20.0));
        }
        assert_eq!(w.0.data()[0], 1.25);
    }

    #[test]
    fn decay_shrinks_without_gradient() {
        let mut w = scalar(2.0);
        let mut opt = AdamW::new(0.1, 0.5).unwrap();
        opt.step(&mut w, &scalar(0.0));
        assert!((w.0.data()[0] - 2.0 * 0.95).abs() < 1e-15);
    }

    #[test]
    fn no_decay_matches_plain_adam() {
        let grads = [0.3, -1.2, 0.05, 2.0, -0.7, 0.0, 1e-4];
        let mut w = scalar(0.5);
        let mut opt = AdamW::new(0.01, 0.0).unwrap();
        let (mut p, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for (i, &g) in grads.iter().enumerate() {
            opt.step(&mut w, &scalar(g));
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let t = (i + 1) as i32;
            p -= 0.01 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            assert!((w.0.data()[0] - p).abs() < 1e-15);
        }
        assert_eq!(opt.steps_taken(), grads.len() as i32);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(AdamW::new(-1.0, 0.0).is_err());
        assert!(AdamW::new(f64::NAN, 0.0).is_err());
        assert!(AdamW::new(1e-3, -0.1).is_err());
    }
}
