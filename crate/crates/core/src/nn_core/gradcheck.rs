//! Central finite-difference gradient checking.
//!
//! Numerical gradients are computed only from repeated loss evaluations, so
//! they are independent of every backward pass they are compared against.

use super::{Parameters, Tensor};

/// Worst disagreement found by a gradient check.
#[derive(Debug, Clone, Default)]
pub struct GradReport {
    pub checked: usize,
    pub max_relative_error: f64,
    pub worst: Option<String>,
}

impl GradReport {
    fn record(&mut self, name: String, analytic: f64, numeric: f64, floor: f64) {
        self.checked += 1;
        let err = relative_error(analytic, numeric, floor);
        if self.worst.is_none() || err > self.max_relative_error {
            self.max_relative_error = err;
            self.worst = Some(format!("{name}: analytic {analytic:e}, numeric {numeric:e}"));
        }
    }

    pub fn merge(&mut self, other: GradReport) {
        self.checked += other.checked;
        if other.max_relative_error > self.max_relative_error || self.worst.is_none() {
            self.max_relative_error = other.max_relative_error;
            self.worst = other.worst;
        }
    }
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps exactly-zero gradients
/// from producing spurious ratios.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn perturb<P: Parameters>(params: &mut P, target: &str, index: usize, delta: f64) {
    params.visit_mut("", &mut |name, t| {
        if name == target {
            t.data_mut()[index] += delta;
        }
    });
}

/// Compares `analytic` (same structure as `params`) against central
/// differences of `loss` for every trainable scalar.
pub fn check_parameters<P: Parameters>(
    params: &mut P,
    analytic: &P,
    mut loss: impl FnMut(&P) -> f64,
    eps: f64,
    floor: f64,
) -> GradReport {
    let mut grads = Vec::new();
    analytic.visit("", &mut |name, t| grads.push((name, t.data().to_vec())));
    let mut report = GradReport::default();
    for (name, g) in grads {
        for (i, &a) in g.iter().enumerate() {
            perturb(params, &name, i, eps);
            let plus = loss(params);
            perturb(params, &name, i, -2.0 * eps);
            let minus = loss(params);
            perturb(params, &name, i, eps);
            let numeric = (plus - minus) / (2.0 * eps);
            report.record(format!("{name}[{i}]"), a, numeric, floor);
        }
    }
    report
}

/// Central-difference check of the gradient with respect to an input tensor.
pub fn check_input(
    name: &str,
    x: &Tensor,
    analytic: &Tensor,
    mut loss: impl FnMut(&Tensor) -> f64,
    eps: f64,
    floor: f64,
) -> GradReport {
    let mut report = GradReport::default();
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + eps;
        let plus = loss(&xp);
        xp.data_mut()[i] = orig - eps;
        let minus = loss(&xp);
        xp.data_mut()[i] = orig;
        report.record(
            format!("{name}[{i}]"),
            analytic.data()[i],
            (plus - minus) / (2.0 * eps),
            floor,
        );
    }
    report
}

/// Fixed random linear functional `sum_i c_i y_i` used to turn a layer
/// output into a scalar loss. Returns `(loss, dloss/dy)`.
pub fn probe(y: &Tensor, seed: u64) -> (f64, Tensor) {
    let c = super::uniform_tensor(y.shape(), 1.0, seed, "probe");
    let loss = super::dot(y.data(), c.data());
    (loss, c)
}
