//! Graph multi-head self-attention with rotary position embedding, the
//! graph-transformer block, and an explicit kernel-integral reference path.

mod block;
mod oracle;
mod rope;

pub use block::{
    graph_self_attention, graph_self_attention_vars, graph_transformer_block, graph_transformer_block_vars,
    AttentionOptions, GtBlockParams, GtBlockVars, LN_EPS,
};
pub use oracle::kernel_oracle;
pub use rope::{rope_encode, RopeConfig};

use rand::Rng;

use crate::scalar::Real;
use crate::tensor::Tensor;

/// Weight matrix (stored in×out) drawn from `U(-1/√fan_in, 1/√fan_in)`.
pub fn init_weight<T: Real, R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| T::lit(rng.gen_range(-bound..bound))).collect();
    Tensor::matrix(fan_in, fan_out, data).expect("positive extents").with_grad()
}

/// Bias vector with the same law as [`init_weight`].
pub fn init_bias<T: Real, R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..fan_out).map(|_| T::lit(rng.gen_range(-bound..bound))).collect();
    Tensor::new(vec![fan_out], data).expect("positive extent").with_grad()
}
