//! Minimal neural-network layers with hand-written backward passes.
//!
//! Everything runs in `f64` on `ndarray` matrices. Each layer owns its
//! parameters and matching gradient buffers; `forward` returns the output
//! plus a cache, `backward` consumes the cache and accumulates into the
//! gradient buffers while returning the input gradient. Batches are packed
//! as `(batch * seq, dim)` row blocks of a fixed per-batch sequence length,
//! with a boolean mask marking real (non-padding) positions.
//!
//! Every backward here is validated against central finite differences; see
//! [`check`] for the probe utilities the tests use.

pub mod adam;
pub mod attention;
pub mod block;
pub mod check;
pub mod embedding;
pub mod feedforward;
pub mod linear;
pub mod norm;

pub use adam::{Adam, AdamConfig};
pub use attention::MultiHeadAttention;
pub use block::TransformerBlock;
pub use embedding::Embedding;
pub use feedforward::FeedForward;
pub use linear::Linear;
pub use norm::LayerNorm;

use ndarray::Array2;

/// Anything that exposes its parameters and gradients as parallel lists.
///
/// The ordering is part of the contract: optimizer state, momentum copies,
/// and checkpoints all address tensors by position in these lists.
pub trait Params {
    fn params(&self) -> Vec<&Array2<f64>>;
    fn params_mut(&mut self) -> Vec<&mut Array2<f64>>;
    fn grads(&self) -> Vec<&Array2<f64>>;
    fn grads_mut(&mut self) -> Vec<&mut Array2<f64>>;

    /// Reset all gradient buffers to zero.
    fn zero_grads(&mut self) {
        for g in self.grads_mut() {
            g.fill(0.0);
        }
    }

    /// Total scalar parameter count.
    fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

/// Copy parameter values from `src` into `dst` (shapes must match).
pub fn copy_params<S: Params, D: Params>(src: &S, dst: &mut D) {
    let from = src.params();
    let mut to = dst.params_mut();
    assert_eq!(from.len(), to.len(), "parameter list length mismatch");
    for (f, t) in from.iter().zip(to.iter_mut()) {
        assert_eq!(f.shape(), t.shape(), "parameter shape mismatch");
        t.assign(f);
    }
}
