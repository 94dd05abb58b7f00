//! Momentum-contrast machinery: slow-moving key encoder, FIFO negative
//! queue, and the InfoNCE objective.
//!
//! The query encoder learns by gradient; the key encoder trails it through
//! [`momentum_update`]. Projected key vectors accumulate in a fixed-size
//! [`NegativeQueue`] that serves as the negative pool. During a training
//! step the current batch's keys are enqueued *first* and the loss is then
//! computed against the updated queue, so each example's positive key sits
//! in its own denominator exactly once and the loss can never go negative.

use crate::encoder::EncoderBundle;
use crate::error::{Error, Result};
use crate::nn::Params;
use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

/// Blend `key ← m·key + (1−m)·query` across all parameter tensors.
///
/// `m = 1` freezes the key branch; `m = 0` copies the query branch.
pub fn momentum_update(key: &mut impl Params, query: &impl Params, m: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::config(format!("momentum {m} outside [0, 1]")));
    }
    let q_params = query.params();
    let mut k_params = key.params_mut();
    if q_params.len() != k_params.len() {
        return Err(Error::contract(
            "momentum update across mismatched parameter lists",
        ));
    }
    for (k, q) in k_params.iter_mut().zip(q_params) {
        if k.shape() != q.shape() {
            return Err(Error::contract(
                "momentum update across mismatched tensor shapes",
            ));
        }
        k.zip_mut_with(q, |kv, qv| *kv = m * *kv + (1.0 - m) * qv);
    }
    Ok(())
}

/// Query encoder plus its momentum-trailed key copy.
#[derive(Debug, Clone)]
pub struct MomentumPair {
    pub query: EncoderBundle,
    pub key: EncoderBundle,
    pub m: f64,
}

impl MomentumPair {
    /// The key branch starts as an exact copy of the query branch.
    pub fn new(query: EncoderBundle, m: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&m) {
            return Err(Error::config(format!("momentum {m} outside [0, 1]")));
        }
        let key = query.clone_parameters();
        Ok(MomentumPair { query, key, m })
    }

    /// Rebuild from two separately trained branches (checkpoint resume).
    pub fn from_parts(query: EncoderBundle, key: EncoderBundle, m: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&m) {
            return Err(Error::config(format!("momentum {m} outside [0, 1]")));
        }
        Ok(MomentumPair { query, key, m })
    }

    /// One momentum step of the key branch toward the query branch.
    pub fn update_key(&mut self) -> Result<()> {
        momentum_update(&mut self.key, &self.query, self.m)
    }
}

/// Fixed-capacity FIFO of projected key vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NegativeQueue {
    data: Array2<f64>, // (capacity, dim), ring layout
    head: usize,       // next physical write slot
    len: usize,
}

impl NegativeQueue {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::config("queue needs positive capacity and dim"));
        }
        Ok(NegativeQueue {
            data: Array2::zeros((capacity, dim)),
            head: 0,
            len: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Append `keys` rows, evicting the oldest entries once full. Returns
    /// each row's logical position in the post-enqueue FIFO order (oldest
    /// entry is position 0).
    pub fn enqueue_batch(&mut self, keys: &Array2<f64>) -> Result<Vec<usize>> {
        if keys.ncols() != self.dim() {
            return Err(Error::contract(format!(
                "key dim {} does not match queue dim {}",
                keys.ncols(),
                self.dim()
            )));
        }
        if keys.nrows() == 0 {
            return Err(Error::contract("enqueue of empty batch"));
        }
        if keys.nrows() > self.capacity() {
            return Err(Error::contract(format!(
                "batch of {} exceeds queue capacity {}",
                keys.nrows(),
                self.capacity()
            )));
        }
        let cap = self.capacity();
        for row in keys.outer_iter() {
            self.data.row_mut(self.head).assign(&row);
            self.head = (self.head + 1) % cap;
            self.len = (self.len + 1).min(cap);
        }
        let n = keys.nrows();
        Ok((self.len - n..self.len).collect())
    }

    /// Contents in FIFO order (oldest first), `(len, dim)`.
    pub fn snapshot(&self) -> Array2<f64> {
        let cap = self.capacity();
        let start = (self.head + cap - self.len) % cap;
        let mut out = Array2::zeros((self.len, self.dim()));
        for i in 0..self.len {
            out.row_mut(i).assign(&self.data.row((start + i) % cap));
        }
        out
    }
}

/// InfoNCE for one query: `−log( e^{q·pos/τ} / (e^{q·pos/τ} + Σᵢ e^{q·nᵢ/τ}) )`.
///
/// The positive is part of the denominator, so the result is never negative.
/// Returns the loss and its gradient with respect to `q`. `negatives` may be
/// empty (loss 0), and must not contain the positive itself — callers
/// holding the positive inside a pool should use the pooled form instead.
pub fn infonce_loss(
    q: ArrayView1<f64>,
    pos: ArrayView1<f64>,
    negatives: &Array2<f64>,
    tau: f64,
) -> Result<(f64, Array1<f64>)> {
    if tau <= 0.0 {
        return Err(Error::config(format!("temperature {tau} must be positive")));
    }
    if q.len() != pos.len() || (negatives.nrows() > 0 && negatives.ncols() != q.len()) {
        return Err(Error::contract("similarity between mismatched dimensions"));
    }
    let pos_logit = q.dot(&pos) / tau;
    let neg_logits: Vec<f64> = negatives.outer_iter().map(|n| q.dot(&n) / tau).collect();

    let max = neg_logits
        .iter()
        .fold(pos_logit, |acc, &v| acc.max(v));
    let mut denom = (pos_logit - max).exp();
    for &l in &neg_logits {
        denom += (l - max).exp();
    }
    let log_denom = max + denom.ln();
    let loss = log_denom - pos_logit;

    // dq = (Σ p_v · v − pos) / τ over the denominator terms.
    let p_pos = (pos_logit - log_denom).exp();
    let mut grad = pos.to_owned() * ((p_pos - 1.0) / tau);
    for (n_row, &l) in negatives.outer_iter().zip(&neg_logits) {
        let p = (l - log_denom).exp();
        grad.scaled_add(p / tau, &n_row);
    }
    Ok((loss, grad))
}

/// What a batched contrastive step produced: the mean loss plus the query
/// projections' gradient, ready to push back through the query branch.
#[derive(Debug)]
pub struct ContrastiveOutcome {
    pub mean_loss: f64,
    pub per_example: Vec<f64>,
    pub dz_query: Array2<f64>,
}

/// Mean InfoNCE over a batch whose keys were just enqueued.
///
/// `z_query` and `z_key` are the batch's projections; `slots` is what
/// [`NegativeQueue::enqueue_batch`] returned for `z_key`. The denominator
/// runs over the whole queue; since each positive occupies exactly one queue
/// slot, this equals the canonical [`infonce_loss`] with the remaining
/// entries as negatives.
pub fn infonce_over_queue(
    queue: &NegativeQueue,
    z_query: &Array2<f64>,
    z_key: &Array2<f64>,
    slots: &[usize],
    tau: f64,
) -> Result<ContrastiveOutcome> {
    if tau <= 0.0 {
        return Err(Error::config(format!("temperature {tau} must be positive")));
    }
    let b = z_query.nrows();
    if z_key.nrows() != b || slots.len() != b {
        return Err(Error::contract("batch pieces of mismatched length"));
    }
    if z_query.ncols() != queue.dim() || z_key.ncols() != queue.dim() {
        return Err(Error::contract("projection dim does not match queue dim"));
    }
    let pool = queue.snapshot();
    for (i, &slot) in slots.iter().enumerate() {
        if slot >= pool.nrows() {
            return Err(Error::contract(format!("slot {slot} outside queue")));
        }
        let stored = pool.row(slot);
        let given = z_key.row(i);
        if stored
            .iter()
            .zip(given.iter())
            .any(|(a, b)| a.to_bits() != b.to_bits())
        {
            return Err(Error::contract(format!(
                "queue slot {slot} does not hold example {i}'s key — enqueue before the loss"
            )));
        }
    }

    let logits = z_query.dot(&pool.t()) / tau; // (B, len)
    let mut per_example = Vec::with_capacity(b);
    let mut dz_query = Array2::zeros(z_query.raw_dim());
    for i in 0..b {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let log_denom = max + sum.ln();
        per_example.push(log_denom - row[slots[i]]);

        // dq_i = (Σ_v p_v · v − pos_i) / τ.
        let mut g = Array1::<f64>::zeros(queue.dim());
        for (v_row, &l) in pool.outer_iter().zip(row.iter()) {
            g.scaled_add((l - log_denom).exp(), &v_row);
        }
        g -= &z_key.row(i);
        g /= tau;
        dz_query.row_mut(i).assign(&g);
    }
    let mean_loss = per_example.iter().sum::<f64>() / b as f64;
    // The mean's 1/B factor belongs to the gradient too.
    dz_query /= b as f64;
    Ok(ContrastiveOutcome {
        mean_loss,
        per_example,
        dz_query,
    })
}

/// One full contrastive training step's forward/backward, without the
/// optimizer: encode both branches, enqueue the keys, compute the mean
/// InfoNCE against the updated queue, and accumulate gradients in the query
/// branch. Returns the mean loss.
pub fn contrastive_batch_loss(
    pair: &mut MomentumPair,
    queue: &mut NegativeQueue,
    query_views: &[&crate::corpus::TokenizedExample],
    key_views: &[&crate::corpus::TokenizedExample],
    tau: f64,
) -> Result<f64> {
    if query_views.len() != key_views.len() {
        return Err(Error::contract("query/key view counts differ"));
    }
    let (cache, _h, z_q) = pair.query.encode_forward(query_views)?;
    let (_hk, z_k) = pair.key.encode(key_views)?;
    let slots = queue.enqueue_batch(&z_k)?;
    let outcome = infonce_over_queue(queue, &z_q, &z_k, &slots, tau)?;
    pair.query.backward_from_z(&cache, &outcome.dz_query)?;
    Ok(outcome.mean_loss)
}

/// Mean and max absolute per-entry drift between two parameter sets —
/// handy when watching the key branch trail the query branch.
pub fn param_distance(a: &impl Params, b: &impl Params) -> (f64, f64) {
    let (mut sum_sq, mut max_abs, mut n) = (0.0, 0.0_f64, 0usize);
    for (pa, pb) in a.params().iter().zip(b.params()) {
        for (x, y) in pa.iter().zip(pb.iter()) {
            let d = (x - y).abs();
            sum_sq += d * d;
            max_abs = max_abs.max(d);
            n += 1;
        }
    }
    ((sum_sq / n.max(1) as f64).sqrt(), max_abs)
}

/// Euclidean norm of the elementwise difference of two parameter sets.
pub fn param_diff_norm(a: &impl Params, b: &impl Params) -> f64 {
    let mut sum_sq = 0.0;
    for (pa, pb) in a.params().iter().zip(b.params()) {
        for (x, y) in pa.iter().zip(pb.iter()) {
            sum_sq += (x - y) * (x - y);
        }
    }
    sum_sq.sqrt()
}
