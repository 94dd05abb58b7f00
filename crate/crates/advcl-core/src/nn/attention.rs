//! Multi-head self-attention over packed `(batch * seq, dim)` blocks.
//!
//! Padding is handled by masking keys: scores into padded positions are
//! driven to -inf before the softmax, so padded tokens receive exactly zero
//! attention weight and, symmetrically, zero gradient through the attention
//! weights. Padded *query* rows still produce outputs, but callers never
//! read them and send zero gradient back through them.

use super::linear::{Linear, LinearCache};
use super::Params;
use ndarray::{s, Array2};
use rand_chacha::ChaCha8Rng;

const MASKED_SCORE: f64 = -1e30;

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub n_heads: usize,
}

pub struct AttentionCache {
    cq: LinearCache,
    ck: LinearCache,
    cv: LinearCache,
    co: LinearCache,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Softmax weights per (example, head), row-major in that order.
    attn: Vec<Array2<f64>>,
    seq_len: usize,
}

impl MultiHeadAttention {
    pub fn new(d: usize, n_heads: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(d % n_heads == 0, "dim {d} not divisible by {n_heads} heads");
        MultiHeadAttention {
            wq: Linear::new(d, d, rng),
            wk: Linear::new(d, d, rng),
            wv: Linear::new(d, d, rng),
            wo: Linear::new(d, d, rng),
            n_heads,
        }
    }

    /// `x` is `(batch * seq_len, d)`; `mask[(b, t)]` is true for real tokens.
    pub fn forward(&self, x: &Array2<f64>, mask: &Array2<bool>) -> (Array2<f64>, AttentionCache) {
        let (batch, seq_len) = (mask.nrows(), mask.ncols());
        assert_eq!(x.nrows(), batch * seq_len, "rows disagree with mask shape");
        let d = x.ncols();
        let dk = d / self.n_heads;
        let scale = 1.0 / (dk as f64).sqrt();

        let (q, cq) = self.wq.forward(x);
        let (k, ck) = self.wk.forward(x);
        let (v, cv) = self.wv.forward(x);

        let mut concat = Array2::zeros((batch * seq_len, d));
        let mut attn = Vec::with_capacity(batch * self.n_heads);
        for b in 0..batch {
            let rows = s![b * seq_len..(b + 1) * seq_len, ..];
            for h in 0..self.n_heads {
                let cols = s![.., h * dk..(h + 1) * dk];
                let qh = q.slice(rows).slice_move(cols);
                let kh = k.slice(rows).slice_move(cols);
                let vh = v.slice(rows).slice_move(cols);

                let mut scores = qh.dot(&kh.t()) * scale;
                for t in 0..seq_len {
                    if !mask[(b, t)] {
                        scores.column_mut(t).fill(MASKED_SCORE);
                    }
                }
                softmax_rows(&mut scores);
                let out = scores.dot(&vh);
                concat
                    .slice_mut(rows)
                    .slice_move(cols)
                    .assign(&out);
                attn.push(scores);
            }
        }

        let (y, co) = self.wo.forward(&concat);
        (
            y,
            AttentionCache {
                cq,
                ck,
                cv,
                co,
                q,
                k,
                v,
                attn,
                seq_len,
            },
        )
    }

    pub fn backward(&mut self, cache: &AttentionCache, dy: &Array2<f64>) -> Array2<f64> {
        let d = dy.ncols();
        let dk = d / self.n_heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let seq_len = cache.seq_len;
        let batch = dy.nrows() / seq_len;

        let dconcat = self.wo.backward(&cache.co, dy);

        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dkm = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for b in 0..batch {
            let rows = s![b * seq_len..(b + 1) * seq_len, ..];
            for h in 0..self.n_heads {
                let cols = s![.., h * dk..(h + 1) * dk];
                let a = &cache.attn[b * self.n_heads + h];
                let qh = cache.q.slice(rows).slice_move(cols);
                let kh = cache.k.slice(rows).slice_move(cols);
                let vh = cache.v.slice(rows).slice_move(cols);
                let dout = dconcat.slice(rows).slice_move(cols);

                let da = dout.dot(&vh.t());
                let dvh = a.t().dot(&dout);
                // Softmax backward per row: ds = a ⊙ (da - Σ(da ⊙ a)).
                let mut ds = Array2::zeros(a.raw_dim());
                for ((a_row, da_row), mut ds_row) in a
                    .outer_iter()
                    .zip(da.outer_iter())
                    .zip(ds.outer_iter_mut())
                {
                    let dot: f64 = a_row.iter().zip(da_row.iter()).map(|(x, y)| x * y).sum();
                    for ((dsv, av), dav) in
                        ds_row.iter_mut().zip(a_row.iter()).zip(da_row.iter())
                    {
                        *dsv = av * (dav - dot);
                    }
                }
                let dqh = ds.dot(&kh) * scale;
                let dkh = ds.t().dot(&qh) * scale;

                dq.slice_mut(rows).slice_move(cols).assign(&dqh);
                dkm.slice_mut(rows).slice_move(cols).assign(&dkh);
                dv.slice_mut(rows).slice_move(cols).assign(&dvh);
            }
        }

        let dx_q = self.wq.backward(&cache.cq, &dq);
        let dx_k = self.wk.backward(&cache.ck, &dkm);
        let dx_v = self.wv.backward(&cache.cv, &dv);
        dx_q + dx_k + dx_v
    }
}

fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.outer_iter_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

impl Params for MultiHeadAttention {
    fn params(&self) -> Vec<&Array2<f64>> {
        [&self.wq, &self.wk, &self.wv, &self.wo]
            .iter()
            .flat_map(|l| l.params())
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v = self.wq.params_mut();
        v.extend(self.wk.params_mut());
        v.extend(self.wv.params_mut());
        v.extend(self.wo.params_mut());
        v
    }

    fn grads(&self) -> Vec<&Array2<f64>> {
        [&self.wq, &self.wk, &self.wv, &self.wo]
            .iter()
            .flat_map(|l| l.grads())
            .collect()
    }

    fn grads_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v = self.wq.grads_mut();
        v.extend(self.wk.grads_mut());
        v.extend(self.wv.grads_mut());
        v.extend(self.wo.grads_mut());
        v
    }
}
