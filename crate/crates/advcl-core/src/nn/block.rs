//! Transformer encoder block, post-norm arrangement:
//! `x → LN(x + Attn(x)) → LN(· + FF(·))`.

use super::attention::{AttentionCache, MultiHeadAttention};
use super::feedforward::{FeedForward, FeedForwardCache};
use super::norm::{LayerNorm, LayerNormCache};
use super::Params;
use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub ff: FeedForward,
    pub ln2: LayerNorm,
}

pub struct BlockCache {
    ca: AttentionCache,
    cl1: LayerNormCache,
    cf: FeedForwardCache,
    cl2: LayerNormCache,
}

impl TransformerBlock {
    pub fn new(d: usize, n_heads: usize, d_ff: usize, rng: &mut ChaCha8Rng) -> Self {
        TransformerBlock {
            attn: MultiHeadAttention::new(d, n_heads, rng),
            ln1: LayerNorm::new(d),
            ff: FeedForward::new(d, d_ff, rng),
            ln2: LayerNorm::new(d),
        }
    }

    pub fn forward(&self, x: &Array2<f64>, mask: &Array2<bool>) -> (Array2<f64>, BlockCache) {
        let (a, ca) = self.attn.forward(x, mask);
        let (x1, cl1) = self.ln1.forward(&(x + &a));
        let (f, cf) = self.ff.forward(&x1);
        let (x2, cl2) = self.ln2.forward(&(&x1 + &f));
        (x2, BlockCache { ca, cl1, cf, cl2 })
    }

    pub fn backward(&mut self, cache: &BlockCache, dy: &Array2<f64>) -> Array2<f64> {
        let dsum2 = self.ln2.backward(&cache.cl2, dy);
        let dx1_ff = self.ff.backward(&cache.cf, &dsum2);
        let dx1 = &dsum2 + &dx1_ff;
        let dsum1 = self.ln1.backward(&cache.cl1, &dx1);
        let dx_attn = self.attn.backward(&cache.ca, &dsum1);
        dsum1 + dx_attn
    }
}

impl Params for TransformerBlock {
    fn params(&self) -> Vec<&Array2<f64>> {
        let mut v = self.attn.params();
        v.extend(self.ln1.params());
        v.extend(self.ff.params());
        v.extend(self.ln2.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v = self.attn.params_mut();
        v.extend(self.ln1.params_mut());
        v.extend(self.ff.params_mut());
        v.extend(self.ln2.params_mut());
        v
    }

    fn grads(&self) -> Vec<&Array2<f64>> {
        let mut v = self.attn.grads();
        v.extend(self.ln1.grads());
        v.extend(self.ff.grads());
        v.extend(self.ln2.grads());
        v
    }

    fn grads_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v = self.attn.grads_mut();
        v.extend(self.ln1.grads_mut());
        v.extend(self.ff.grads_mut());
        v.extend(self.ln2.grads_mut());
        v
    }
}
