//! The two-headed text encoder.
//!
//! A small transformer produces a per-example summary vector `h` (the hidden
//! state at the leading `[CLS]` position). Two heads read it:
//!
//! * a projection head `z = tanh(W2 · sigmoid(W1 h + b1) + b2)` used by the
//!   contrastive objective and the substitution attack, and
//! * a linear classifier producing logits.
//!
//! [`EncoderBundle::probe_gradients`] exposes the gradient of an arbitrary
//! per-example loss with respect to the input embedding rows, which is what
//! the attack's word-importance step consumes. Parameter ordering in
//! [`Params`] is fixed and shared by the optimizer, the momentum copy, and
//! checkpoints.

mod checkpoint;

pub use checkpoint::param_checksum;

use crate::corpus::{TokenizedExample, CLS, PAD};
use crate::error::{Error, Result};
use crate::nn::{Embedding, LayerNorm, Linear, Params, TransformerBlock};
use crate::rng::stage_rng;
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    /// Maximum sequence length including the `[CLS]` slot.
    pub max_len: usize,
    pub dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub proj_hidden: usize,
    /// Projection output width `c`.
    pub proj_dim: usize,
    pub num_classes: u32,
}

impl EncoderConfig {
    pub fn small(vocab_size: usize, num_classes: u32) -> Self {
        EncoderConfig {
            vocab_size,
            max_len: 128,
            dim: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
            proj_hidden: 64,
            proj_dim: 128,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim % self.n_heads != 0 {
            return Err(Error::config(format!(
                "dim {} not divisible by {} heads",
                self.dim, self.n_heads
            )));
        }
        if self.max_len < 2 {
            return Err(Error::config("max_len must leave room for [CLS] plus text"));
        }
        if self.vocab_size <= CLS as usize {
            return Err(Error::config("vocab too small for special tokens"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("need at least two classes"));
        }
        Ok(())
    }
}

/// Projection head: one sigmoid hidden layer, tanh output.
#[derive(Debug, Clone)]
pub struct ProjectionHead {
    pub lin1: Linear,
    pub lin2: Linear,
}

pub struct ProjectionCache {
    c1: crate::nn::linear::LinearCache,
    act: Array2<f64>,
    c2: crate::nn::linear::LinearCache,
    out: Array2<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl ProjectionHead {
    pub fn new(d: usize, hidden: usize, c: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        ProjectionHead {
            lin1: Linear::new(d, hidden, rng),
            lin2: Linear::new(hidden, c, rng),
        }
    }

    pub fn forward(&self, h: &Array2<f64>) -> (Array2<f64>, ProjectionCache) {
        let (pre1, c1) = self.lin1.forward(h);
        let act = pre1.mapv(sigmoid);
        let (pre2, c2) = self.lin2.forward(&act);
        let out = pre2.mapv(f64::tanh);
        (out.clone(), ProjectionCache { c1, act, c2, out })
    }

    pub fn infer(&self, h: &Array2<f64>) -> Array2<f64> {
        self.lin2.infer(&self.lin1.infer(h).mapv(sigmoid)).mapv(f64::tanh)
    }

    pub fn backward(&mut self, cache: &ProjectionCache, dz: &Array2<f64>) -> Array2<f64> {
        // tanh' = 1 - out².
        let dpre2 = dz * &cache.out.mapv(|t| 1.0 - t * t);
        let dact = self.lin2.backward(&cache.c2, &dpre2);
        // sigmoid' = act (1 - act).
        let dpre1 = &dact * &cache.act.mapv(|s| s * (1.0 - s));
        self.lin1.backward(&cache.c1, &dpre1)
    }
}

impl Params for ProjectionHead {
    fn params(&self) -> Vec<&Array2<f64>> {
        let mut v = self.lin1.params();
        v.extend(self.lin2.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v = self.lin1.params_mut();
        v.extend(self.lin2.params_mut());
        v
    }

    fn grads(&self) -> Vec<&Array2<f64>> {
        let mut v = self.lin1.grads();
        v.extend(self.lin2.grads());
        v
    }

    fn grads_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v = self.lin1.grads_mut();
        v.extend(self.lin2.grads_mut());
        v
    }
}

/// Which per-example vector a probe loss reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeSpace {
    /// The projection output `z`.
    Projection,
    /// The summary vector `h`.
    Hidden,
    /// Classifier logits.
    Logits,
}

/// Encoder plus both heads.
#[derive(Debug, Clone)]
pub struct EncoderBundle {
    pub cfg: EncoderConfig,
    pub tok: Embedding,
    pub pos: Embedding,
    pub ln_emb: LayerNorm,
    pub blocks: Vec<TransformerBlock>,
    pub proj: ProjectionHead,
    pub classifier: Linear,
    /// Content hash of the subword model this encoder was built against.
    pub subword_id: String,
}

/// Everything the backward pass needs from one forward pass.
pub struct ForwardCache {
    ids: Vec<Vec<u32>>, // [CLS] + truncated text ids, unpadded
    mask: Array2<bool>,
    seq_len: usize,
    flat_ids: Vec<u32>, // padded, row-aligned with x blocks
    cl_emb: crate::nn::norm::LayerNormCache,
    block_caches: Vec<crate::nn::block::BlockCache>,
    h: Array2<f64>,
    proj_cache: Option<ProjectionCache>,
}

impl ForwardCache {
    pub fn h(&self) -> &Array2<f64> {
        &self.h
    }
}

impl EncoderBundle {
    pub fn new(cfg: EncoderConfig, subword_id: String, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stage_rng(seed, "encoder-init");
        let blocks = (0..cfg.n_layers)
            .map(|_| TransformerBlock::new(cfg.dim, cfg.n_heads, cfg.d_ff, &mut rng))
            .collect();
        Ok(EncoderBundle {
            tok: Embedding::new(cfg.vocab_size, cfg.dim, &mut rng),
            pos: Embedding::new(cfg.max_len, cfg.dim, &mut rng),
            ln_emb: LayerNorm::new(cfg.dim),
            blocks,
            proj: ProjectionHead::new(cfg.dim, cfg.proj_hidden, cfg.proj_dim, &mut rng),
            classifier: Linear::new(cfg.dim, cfg.num_classes as usize, &mut rng),
            subword_id,
            cfg,
        })
    }

    /// Deep copy with identical parameters — the momentum branch starts here.
    pub fn clone_parameters(&self) -> EncoderBundle {
        self.clone()
    }

    fn sequences(&self, batch: &[&TokenizedExample]) -> Result<(Vec<Vec<u32>>, usize)> {
        if batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let ids: Vec<Vec<u32>> = batch
            .iter()
            .map(|ex| {
                let keep = ex.subword_ids.len().min(self.cfg.max_len - 1);
                let mut v = Vec::with_capacity(keep + 1);
                v.push(CLS);
                v.extend_from_slice(&ex.subword_ids[..keep]);
                v
            })
            .collect();
        let seq_len = ids.iter().map(|v| v.len()).max().expect("non-empty");
        Ok((ids, seq_len))
    }

    fn embed(&self, ids: &[Vec<u32>], seq_len: usize) -> (Array2<f64>, Array2<bool>, Vec<u32>) {
        let batch = ids.len();
        let mut flat_ids = Vec::with_capacity(batch * seq_len);
        let mut mask = Array2::from_elem((batch, seq_len), false);
        for (b, seq) in ids.iter().enumerate() {
            for t in 0..seq_len {
                if t < seq.len() {
                    flat_ids.push(seq[t]);
                    mask[(b, t)] = true;
                } else {
                    flat_ids.push(PAD);
                }
            }
        }
        let mut x = self.tok.forward(&flat_ids);
        let pos_block = self.pos.forward(
            &(0..seq_len as u32).collect::<Vec<u32>>(),
        );
        for b in 0..batch {
            let mut rows = x.slice_mut(ndarray::s![b * seq_len..(b + 1) * seq_len, ..]);
            rows += &pos_block;
        }
        (x, mask, flat_ids)
    }

    /// Full forward with caches. Returns the cache plus `(h, z)`.
    pub fn encode_forward(
        &self,
        batch: &[&TokenizedExample],
    ) -> Result<(ForwardCache, Array2<f64>, Array2<f64>)> {
        let (ids, seq_len) = self.sequences(batch)?;
        let (x0, mask, flat_ids) = self.embed(&ids, seq_len);
        let (mut x, cl_emb) = self.ln_emb.forward(&x0);
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block.forward(&x, &mask);
            block_caches.push(cache);
            x = next;
        }
        let batch_n = ids.len();
        let mut h = Array2::zeros((batch_n, self.cfg.dim));
        for b in 0..batch_n {
            h.row_mut(b).assign(&x.row(b * seq_len));
        }
        let (z, proj_cache) = self.proj.forward(&h);
        Ok((
            ForwardCache {
                ids,
                mask,
                seq_len,
                flat_ids,
                cl_emb,
                block_caches,
                h: h.clone(),
                proj_cache: Some(proj_cache),
            },
            h,
            z,
        ))
    }

    /// Summary and projection vectors without caches (inference only).
    pub fn encode(&self, batch: &[&TokenizedExample]) -> Result<(Array2<f64>, Array2<f64>)> {
        let (cache, h, z) = self.encode_forward(batch)?;
        drop(cache);
        Ok((h, z))
    }

    /// Classifier logits, `(batch, num_classes)`.
    pub fn classify(&self, batch: &[&TokenizedExample]) -> Result<Array2<f64>> {
        let (h, _) = self.encode(batch)?;
        Ok(self.classifier.infer(&h))
    }

    /// Last-layer hidden rows for each example's text subwords (the `[CLS]`
    /// row is stripped; truncated tails are absent). Inference only.
    pub fn hidden_rows(&self, batch: &[&TokenizedExample]) -> Result<Vec<Array2<f64>>> {
        let (ids, seq_len) = self.sequences(batch)?;
        let (x0, mask, _) = self.embed(&ids, seq_len);
        let (mut x, _) = self.ln_emb.forward(&x0);
        for block in &self.blocks {
            let (next, _) = block.forward(&x, &mask);
            x = next;
        }
        let mut out = Vec::with_capacity(ids.len());
        for (b, seq) in ids.iter().enumerate() {
            let kept = seq.len() - 1;
            let mut rows = Array2::zeros((kept, self.cfg.dim));
            for t in 0..kept {
                rows.row_mut(t).assign(&x.row(b * seq_len + t + 1));
            }
            out.push(rows);
        }
        Ok(out)
    }

    /// Backward from a per-example summary-vector gradient `dh`.
    ///
    /// Accumulates parameter gradients and returns the gradient with respect
    /// to the input embedding rows, one `(n_subwords, dim)` matrix per
    /// example (the `[CLS]` row is dropped; rows beyond `max_len` are zero).
    pub fn backward_from_h(
        &mut self,
        cache: &ForwardCache,
        dh: &Array2<f64>,
    ) -> Result<Vec<Array2<f64>>> {
        let seq_len = cache.seq_len;
        let batch = cache.ids.len();
        if dh.nrows() != batch || dh.ncols() != self.cfg.dim {
            return Err(Error::contract(format!(
                "dh shape {:?} does not match batch {batch} × dim {}",
                dh.shape(),
                self.cfg.dim
            )));
        }
        // Scatter dh into the CLS rows of a full block gradient.
        let mut dx = Array2::zeros((batch * seq_len, self.cfg.dim));
        for b in 0..batch {
            dx.row_mut(b * seq_len).assign(&dh.row(b));
        }
        for (block, bc) in self
            .blocks
            .iter_mut()
            .rev()
            .zip(cache.block_caches.iter().rev())
        {
            dx = block.backward(bc, &dx);
        }
        let dx0 = self.ln_emb.backward(&cache.cl_emb, &dx);

        // Parameter gradients for the two embedding tables.
        self.tok.backward(&cache.flat_ids, &dx0);
        let mut dpos = Array2::zeros((seq_len, self.cfg.dim));
        for b in 0..batch {
            for t in 0..seq_len {
                if cache.mask[(b, t)] {
                    let mut row = dpos.row_mut(t);
                    row += &dx0.row(b * seq_len + t);
                }
            }
        }
        self.pos
            .backward(&(0..seq_len as u32).collect::<Vec<u32>>(), &dpos);

        // Per-example input-embedding gradients, [CLS] row stripped.
        let mut out = Vec::with_capacity(batch);
        for (b, seq) in cache.ids.iter().enumerate() {
            let kept = seq.len() - 1; // without [CLS]
            let mut g = Array2::zeros((kept, self.cfg.dim));
            for t in 0..kept {
                g.row_mut(t).assign(&dx0.row(b * seq_len + t + 1));
            }
            out.push(g);
        }
        Ok(out)
    }

    /// Backward from a projection-space gradient `dz` (goes through the
    /// projection head first, then the encoder).
    pub fn backward_from_z(
        &mut self,
        cache: &ForwardCache,
        dz: &Array2<f64>,
    ) -> Result<Vec<Array2<f64>>> {
        let pc = cache
            .proj_cache
            .as_ref()
            .expect("encode_forward always fills the projection cache");
        let dh = self.proj.backward(pc, dz);
        self.backward_from_h(cache, &dh)
    }

    /// Gradient of a per-example loss with respect to each example's input
    /// embedding rows, padded back out to the example's full subword count.
    ///
    /// `loss` maps `(example index, vector in the chosen space)` to the loss
    /// value and its gradient in that space. Returns per-example losses and
    /// gradient matrices. Parameter gradients accumulated along the way are
    /// discarded — probing leaves the bundle's training state untouched.
    pub fn probe_gradients<F>(
        &mut self,
        batch: &[&TokenizedExample],
        space: ProbeSpace,
        loss: F,
    ) -> Result<(Vec<f64>, Vec<Array2<f64>>)>
    where
        F: Fn(usize, ndarray::ArrayView1<f64>) -> (f64, Array1<f64>),
    {
        let saved_grads: Vec<Array2<f64>> = self.grads().iter().map(|g| (*g).clone()).collect();
        let (cache, h, z) = self.encode_forward(batch)?;

        let (losses, truncated) = {
            let batch_n = batch.len();
            let mut losses = Vec::with_capacity(batch_n);
            match space {
                ProbeSpace::Projection => {
                    let mut dz = Array2::zeros(z.raw_dim());
                    for i in 0..batch_n {
                        let (l, g) = loss(i, z.row(i));
                        losses.push(l);
                        dz.row_mut(i).assign(&g);
                    }
                    (losses, self.backward_from_z(&cache, &dz)?)
                }
                ProbeSpace::Hidden => {
                    let mut dh = Array2::zeros(h.raw_dim());
                    for i in 0..batch_n {
                        let (l, g) = loss(i, h.row(i));
                        losses.push(l);
                        dh.row_mut(i).assign(&g);
                    }
                    (losses, self.backward_from_h(&cache, &dh)?)
                }
                ProbeSpace::Logits => {
                    let logits = self.classifier.infer(&h);
                    let mut dlogits = Array2::zeros(logits.raw_dim());
                    for i in 0..batch_n {
                        let (l, g) = loss(i, logits.row(i));
                        losses.push(l);
                        dlogits.row_mut(i).assign(&g);
                    }
                    let dh = dlogits.dot(&self.classifier.w.t());
                    (losses, self.backward_from_h(&cache, &dh)?)
                }
            }
        };

        // Restore training gradients: probes must be side-effect free.
        for (g, saved) in self.grads_mut().into_iter().zip(saved_grads) {
            g.assign(&saved);
        }

        // Pad truncated tails back to the full subword count with zeros.
        let mut out = Vec::with_capacity(batch.len());
        for (ex, g) in batch.iter().zip(truncated) {
            let n = ex.subword_ids.len();
            if g.nrows() == n {
                out.push(g);
            } else {
                let mut full = Array2::zeros((n, self.cfg.dim));
                full.slice_mut(ndarray::s![..g.nrows(), ..]).assign(&g);
                out.push(full);
            }
        }
        Ok((losses, out))
    }

    /// Cross-entropy loss and accuracy over a labeled batch, with parameter
    /// gradients accumulated (the classification training step).
    pub fn train_classification_step(
        &mut self,
        batch: &[&TokenizedExample],
    ) -> Result<(f64, usize)> {
        for ex in batch {
            if ex.label.is_none() {
                return Err(Error::contract(format!("example {} has no label", ex.id)));
            }
        }
        let (cache, h, _z) = self.encode_forward(batch)?;
        let (c_cls, logits) = {
            let (logits, c) = self.classifier.forward(&h);
            (c, logits)
        };
        let mut dlogits = Array2::zeros(logits.raw_dim());
        let mut loss = 0.0;
        let mut correct = 0;
        for (i, ex) in batch.iter().enumerate() {
            let label = ex.label.expect("checked above") as usize;
            let row = logits.row(i);
            let (l, grad, pred) = softmax_xent(row, label);
            loss += l;
            dlogits.row_mut(i).assign(&grad);
            if pred == label {
                correct += 1;
            }
        }
        loss /= batch.len() as f64;
        dlogits /= batch.len() as f64;
        let dh = self.classifier.backward(&c_cls, &dlogits);
        self.backward_from_h(&cache, &dh)?;
        Ok((loss, correct))
    }
}

/// Softmax cross-entropy for one row: loss, gradient, argmax.
pub fn softmax_xent(
    logits: ndarray::ArrayView1<f64>,
    label: usize,
) -> (f64, Array1<f64>, usize) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Array1<f64> = logits.mapv(|v| (v - max).exp());
    let sum = exps.sum();
    let probs = exps / sum;
    let loss = -(probs[label].max(1e-300)).ln();
    let mut grad = probs.clone();
    grad[label] -= 1.0;
    let pred = probs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probs"))
        .map(|(i, _)| i)
        .expect("non-empty logits");
    (loss, grad, pred)
}

/// Softmax probabilities for one row.
pub fn softmax_row(logits: ndarray::ArrayView1<f64>) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Array1<f64> = logits.mapv(|v| (v - max).exp());
    let sum = exps.sum();
    exps / sum
}

/// Predicted class of each row of a logits matrix.
pub fn argmax_rows(logits: &Array2<f64>) -> Vec<u32> {
    logits
        .axis_iter(Axis(0))
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                .map(|(i, _)| i as u32)
                .expect("non-empty logits")
        })
        .collect()
}

impl Params for EncoderBundle {
    fn params(&self) -> Vec<&Array2<f64>> {
        let mut v = self.tok.params();
        v.extend(self.pos.params());
        v.extend(self.ln_emb.params());
        for b in &self.blocks {
            v.extend(b.params());
        }
        v.extend(self.proj.params());
        v.extend(self.classifier.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v = self.tok.params_mut();
        v.extend(self.pos.params_mut());
        v.extend(self.ln_emb.params_mut());
        for b in &mut self.blocks {
            v.extend(b.params_mut());
        }
        v.extend(self.proj.params_mut());
        v.extend(self.classifier.params_mut());
        v
    }

    fn grads(&self) -> Vec<&Array2<f64>> {
        let mut v = self.tok.grads();
        v.extend(self.pos.grads());
        v.extend(self.ln_emb.grads());
        for b in &self.blocks {
            v.extend(b.grads());
        }
        v.extend(self.proj.grads());
        v.extend(self.classifier.grads());
        v
    }

    fn grads_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v = self.tok.grads_mut();
        v.extend(self.pos.grads_mut());
        v.extend(self.ln_emb.grads_mut());
        for b in &mut self.blocks {
            v.extend(b.grads_mut());
        }
        v.extend(self.proj.grads_mut());
        v.extend(self.classifier.grads_mut());
        v
    }
}
