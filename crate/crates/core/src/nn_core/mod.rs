//! Differentiable building blocks with hand-written backward passes.
//!
//! Every layer follows the same pattern: `forward` returns the output plus a
//! cache of intermediate values, and `backward` consumes that cache together
//! with the upstream gradient, accumulates parameter gradients into a
//! gradient struct of the same type, and returns the input gradients. Layers
//! operate on a batch of rows (one row per graph node).

mod attention;
pub mod checkpoint;
mod embedding;
pub mod gradcheck;
mod graph_conv;
mod gru;
mod linear;
mod mlp;
mod tensor;
pub(crate) mod transformer_conv;

pub use attention::{AttentionCache, LuongAttention};
pub use checkpoint::Checkpoint;
pub use embedding::{CoordNorm, EmbeddingTables, TimeIndex};
pub use graph_conv::{Propagation, WeightedConv, WeightedConvCache};
pub use gru::{GruCache, GruCell};
pub use linear::Linear;
pub use mlp::{Mlp, MlpCache};
pub use tensor::{dot, sigmoid, softmax_in_place, Tensor};
pub use transformer_conv::{TransformerConv, TransformerConvCache};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named access to trainable tensors, in a fixed order.
pub trait Parameters {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor));

    fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, t| t.fill(0.0));
    }

    /// Copy of `self` with every trainable tensor zeroed, for use as a
    /// gradient accumulator.
    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut g = self.clone();
        g.zero_grad();
        g
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Deterministic RNG for one named parameter. Seeding per name keeps the
/// initial value of a tensor independent of which other tensors exist.
pub fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Uniform `[-bound, bound]` tensor drawn from the named stream.
pub fn uniform_tensor(shape: &[usize], bound: f64, seed: u64, name: &str) -> Tensor {
    use rand::Rng;
    let mut rng = param_rng(seed, name);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::from_vec(shape, data).expect("shape product matches")
}
