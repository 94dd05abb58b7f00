//! Gradient-guided greedy word substitution.
//!
//! The attack perturbs a sentence one word per iteration. Each iteration
//! probes the model once to get (a) the loss gradient with respect to every
//! input word's embedding rows and (b) the gradient `v` of the loss with
//! respect to the sentence representation the objective reads. The word
//! whose embedding-gradient rows have the largest norm is attacked first:
//! candidate replacements are proposed, vetted against a word-embedding
//! table by cosine similarity, encoded, and scored by how far each one
//! moves the representation along `v` — the signed projection
//! `(r · v) / ‖v‖` of the representation shift `r`. The best-scoring
//! candidate is substituted and the loop repeats until the replacement
//! budget, the iteration cap, a label flip (classification objective), or
//! exhaustion stops it.
//!
//! Model parameters are never modified: the gradient probe saves and
//! restores its buffers, so attacks may run interleaved with anything that
//! reads the same model.

pub mod provider;
pub mod table;

pub use provider::{CandidateProvider, MlmProvider, TableProvider};
pub use table::{filter_candidates, SynonymEmbeddingTable};

use std::cell::RefCell;
use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::subword::SubwordModel;
use crate::corpus::{align_gradients, TokenizedExample};
use crate::encoder::{softmax_xent, EncoderBundle, ProbeSpace};
use crate::error::{Error, Result};
use crate::moco::infonce_loss;
use crate::nn::linear::Linear;

/// Knobs for one attack run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Iteration cap; at most one word is replaced per iteration.
    pub max_iters: usize,
    /// Maximum candidates requested from the provider per word.
    pub candidate_limit: usize,
    /// Minimum cosine similarity a candidate must have to the original.
    pub cosine_threshold: f64,
    /// Fraction of the word count allowed to change...
    pub budget_fraction: f64,
    /// ...capped at this many words.
    pub budget_cap: usize,
    /// Forbid replacing the same position twice.
    pub no_repeat: bool,
    /// Rank candidates by `|p|` instead of the signed projection `p`.
    pub score_by_magnitude: bool,
}

impl AttackConfig {
    /// Defaults used when mining hard positives during contrastive
    /// pretraining: few candidates, small budget.
    pub fn pretraining() -> Self {
        AttackConfig {
            max_iters: 10,
            candidate_limit: 25,
            cosine_threshold: 0.5,
            budget_fraction: 0.2,
            budget_cap: 10,
            no_repeat: true,
            score_by_magnitude: false,
        }
    }

    /// Defaults used when generating adversarial examples for finetuning
    /// and evaluation: wider candidate pool, double the budget fraction.
    pub fn finetuning() -> Self {
        AttackConfig {
            candidate_limit: 50,
            budget_fraction: 0.4,
            ..Self::pretraining()
        }
    }

    /// Replacement budget for a sentence of `n_words` words:
    /// `min(budget_cap, floor(budget_fraction * n_words))`.
    pub fn budget(&self, n_words: usize) -> usize {
        let frac = (self.budget_fraction * n_words as f64).floor();
        self.budget_cap.min(frac.max(0.0) as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::config("max_iters must be at least 1"));
        }
        if self.candidate_limit == 0 {
            return Err(Error::config("candidate_limit must be at least 1"));
        }
        if !self.cosine_threshold.is_finite() {
            return Err(Error::config("cosine_threshold must be finite"));
        }
        if !(self.budget_fraction >= 0.0 && self.budget_fraction.is_finite()) {
            return Err(Error::config("budget_fraction must be non-negative"));
        }
        Ok(())
    }
}

/// Which loss surface the attack climbs.
#[derive(Debug, Clone)]
pub enum AttackObjective {
    /// Contrastive loss against a fixed positive anchor and a fixed pool of
    /// negatives. The anchor is the clean sentence's projection and stays
    /// put while the perturbed sentence is re-projected every iteration.
    Contrastive {
        anchor: Array1<f64>,
        negatives: Array2<f64>,
        tau: f64,
    },
    /// Cross-entropy of the classifier on the true label.
    Classification { label: u32 },
}

impl AttackObjective {
    /// Builds the contrastive objective for one example: the anchor is the
    /// clean projection, the negatives are frozen as given.
    pub fn contrastive_for(
        bundle: &EncoderBundle,
        example: &TokenizedExample,
        negatives: Array2<f64>,
        tau: f64,
    ) -> Result<Self> {
        let (_, z) = bundle.encode(&[example])?;
        Ok(AttackObjective::Contrastive {
            anchor: z.row(0).to_owned(),
            negatives,
            tau,
        })
    }

    /// The representation the objective reads.
    fn space(&self) -> ProbeSpace {
        match self {
            AttackObjective::Contrastive { .. } => ProbeSpace::Projection,
            AttackObjective::Classification { .. } => ProbeSpace::Hidden,
        }
    }

    /// Loss and its gradient with respect to the representation.
    fn eval(&self, classifier: &Linear, repr: ArrayView1<f64>) -> Result<(f64, Array1<f64>)> {
        match self {
            AttackObjective::Contrastive { anchor, negatives, tau } => {
                infonce_loss(repr, anchor.view(), negatives, *tau)
            }
            AttackObjective::Classification { label } => {
                let logits = repr.dot(&classifier.w) + &classifier.b.row(0);
                let (loss, glogits, _) = softmax_xent(logits.view(), *label as usize);
                Ok((loss, classifier.w.dot(&glogits)))
            }
        }
    }

    /// Predicted class for a hidden representation; `None` for objectives
    /// without a classifier.
    fn predicted(&self, classifier: &Linear, repr: ArrayView1<f64>) -> Option<u32> {
        match self {
            AttackObjective::Classification { .. } => {
                let logits = repr.dot(&classifier.w) + &classifier.b.row(0);
                Some(argmax1(logits.view()) as u32)
            }
            AttackObjective::Contrastive { .. } => None,
        }
    }

    fn check(&self, bundle: &EncoderBundle) -> Result<()> {
        match self {
            AttackObjective::Contrastive { anchor, negatives, tau } => {
                if *tau <= 0.0 {
                    return Err(Error::config(format!("temperature {tau} must be positive")));
                }
                if anchor.len() != bundle.cfg.proj_dim {
                    return Err(Error::contract(format!(
                        "anchor has {} components, projection width is {}",
                        anchor.len(),
                        bundle.cfg.proj_dim
                    )));
                }
                if negatives.nrows() > 0 && negatives.ncols() != bundle.cfg.proj_dim {
                    return Err(Error::contract(format!(
                        "negatives are {} wide, projection width is {}",
                        negatives.ncols(),
                        bundle.cfg.proj_dim
                    )));
                }
            }
            AttackObjective::Classification { label } => {
                if *label >= bundle.cfg.num_classes {
                    return Err(Error::contract(format!(
                        "label {label} out of range for {} classes",
                        bundle.cfg.num_classes
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One applied substitution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replacement {
    pub word_index: usize,
    pub before: String,
    pub after: String,
}

/// One scored iteration, kept so the greedy choice can be re-verified.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationTrace {
    /// Word position that was attacked.
    pub word_index: usize,
    /// Vetted candidates, in the order they were scored.
    pub candidates: Vec<String>,
    /// Score of each candidate, aligned with `candidates`.
    pub scores: Vec<f64>,
    /// Index into `candidates` of the substitution that was applied.
    pub chosen: usize,
}

/// Outcome of one attack.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackResult {
    pub example_id: String,
    /// The sentence after all substitutions.
    pub perturbed: TokenizedExample,
    /// Distinct replaced positions, ascending.
    pub replaced_indices: Vec<usize>,
    /// Substitutions in the order they were applied.
    pub replacements: Vec<Replacement>,
    /// Objective value before any substitution, then after each one.
    pub loss_trajectory: Vec<f64>,
    /// Classification objective only: did the prediction leave the label?
    pub success: Option<bool>,
    /// Model forward passes attributable to this example.
    pub queries: usize,
    /// Word positions whose original word was absent from the table.
    pub words_missing_from_table: Vec<usize>,
    /// The loss gradient vanished and the attack stopped early.
    pub aborted_zero_gradient: bool,
    /// Per-iteration candidate sets and scores.
    pub trace: Vec<IterationTrace>,
}

impl AttackResult {
    /// Fraction of words changed.
    pub fn replacement_rate(&self) -> f64 {
        if self.perturbed.words.is_empty() {
            return 0.0;
        }
        self.replaced_indices.len() as f64 / self.perturbed.words.len() as f64
    }
}

/// Index of the word whose gradient rows have the largest Euclidean norm,
/// skipping `forbidden` positions. Ties break toward the smallest index;
/// `None` when every position is forbidden.
pub fn select_target_word(
    word_grads: &Array2<f64>,
    forbidden: &HashSet<usize>,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, row) in word_grads.rows().into_iter().enumerate() {
        if forbidden.contains(&i) {
            continue;
        }
        let norm = row.dot(&row).sqrt();
        if best.map_or(true, |(_, b)| norm > b) {
            best = Some((i, norm));
        }
    }
    best.map(|(i, _)| i)
}

/// Signed length of `r`'s component along `v`: `(r · v) / ‖v‖`.
///
/// The caller must ensure `‖v‖ > 0`; the attack loop treats a vanished
/// gradient as a stop condition before scoring anything.
pub fn projection_score(r: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
    r.dot(&v) / v.dot(&v).sqrt()
}

fn argmax1(xs: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate() {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

/// Mutable per-example attack state shared by the sequential and batched
/// drivers so their discrete decisions come from the same code.
struct AttackState {
    current: TokenizedExample,
    budget: usize,
    /// Positions the target search must skip: exhausted words plus, under
    /// `no_repeat`, already-replaced ones.
    forbidden: HashSet<usize>,
    replacements: Vec<Replacement>,
    trajectory: Vec<f64>,
    missing: Vec<usize>,
    trace: Vec<IterationTrace>,
    queries: usize,
    success: Option<bool>,
    aborted_zero_gradient: bool,
    done: bool,
}

impl AttackState {
    fn new(example: &TokenizedExample, objective: &AttackObjective, cfg: &AttackConfig) -> Self {
        AttackState {
            current: example.clone(),
            budget: cfg.budget(example.len()),
            forbidden: HashSet::new(),
            replacements: Vec::new(),
            trajectory: Vec::new(),
            missing: Vec::new(),
            trace: Vec::new(),
            queries: 0,
            success: match objective {
                AttackObjective::Classification { .. } => Some(false),
                AttackObjective::Contrastive { .. } => None,
            },
            aborted_zero_gradient: false,
            done: false,
        }
    }

    fn finish(self, example_id: &str) -> AttackResult {
        let mut replaced: Vec<usize> = self
            .replacements
            .iter()
            .map(|r| r.word_index)
            .collect();
        replaced.sort_unstable();
        replaced.dedup();
        AttackResult {
            example_id: example_id.to_string(),
            perturbed: self.current,
            replaced_indices: replaced,
            replacements: self.replacements,
            loss_trajectory: self.trajectory,
            success: self.success,
            queries: self.queries,
            words_missing_from_table: self.missing,
            aborted_zero_gradient: self.aborted_zero_gradient,
            trace: self.trace,
        }
    }

    /// Finds the next attackable position and its vetted candidates.
    /// Positions with no viable candidate are marked forbidden and the
    /// search moves to the next-best position within the same iteration;
    /// `None` means every position is spent and the attack is over.
    fn find_target(
        &mut self,
        word_grads: &Array2<f64>,
        provider: &dyn CandidateProvider,
        table: &SynonymEmbeddingTable,
        cfg: &AttackConfig,
    ) -> Result<Option<(usize, Vec<String>)>> {
        loop {
            let Some(t) = select_target_word(word_grads, &self.forbidden) else {
                return Ok(None);
            };
            self.queries += provider.query_cost();
            let proposals = provider.propose(&self.current, t, cfg.candidate_limit)?;
            let (cands, orig_missing) =
                filter_candidates(&self.current.words[t], &proposals, table, cfg.cosine_threshold);
            if orig_missing && !self.missing.contains(&t) {
                self.missing.push(t);
            }
            if cands.is_empty() {
                self.forbidden.insert(t);
                continue;
            }
            return Ok(Some((t, cands)));
        }
    }

    /// Applies the best-scoring candidate and updates every ledger the
    /// result is built from. `reprs[m]` must be the representation of
    /// `variants[m]`.
    fn apply_choice(
        &mut self,
        word_index: usize,
        candidates: Vec<String>,
        variants: Vec<TokenizedExample>,
        reprs: &[Array1<f64>],
        repr_cur: &Array1<f64>,
        v: &Array1<f64>,
        classifier: &Linear,
        objective: &AttackObjective,
        cfg: &AttackConfig,
    ) -> Result<()> {
        let scores: Vec<f64> = reprs
            .iter()
            .map(|repr| {
                let r = repr - repr_cur;
                let p = projection_score(r.view(), v.view());
                if cfg.score_by_magnitude {
                    p.abs()
                } else {
                    p
                }
            })
            .collect();
        let chosen = {
            let mut best = 0;
            for (m, s) in scores.iter().enumerate() {
                if *s > scores[best] {
                    best = m;
                }
            }
            best
        };

        let before = self.current.words[word_index].clone();
        self.replacements.push(Replacement {
            word_index,
            before,
            after: candidates[chosen].clone(),
        });
        if cfg.no_repeat {
            self.forbidden.insert(word_index);
        }
        let chosen_repr = &reprs[chosen];
        let mut variants = variants;
        self.current = variants.swap_remove(chosen);
        self.trace.push(IterationTrace {
            word_index,
            candidates,
            scores,
            chosen,
        });

        let (loss, _) = objective.eval(classifier, chosen_repr.view())?;
        if !loss.is_finite() {
            return Err(Error::Numeric {
                example_id: self.current.id.clone(),
                what: format!("loss {loss} after replacement"),
            });
        }
        self.trajectory.push(loss);
        if let Some(pred) = objective.predicted(classifier, chosen_repr.view()) {
            if let AttackObjective::Classification { label } = objective {
                if pred != *label {
                    self.success = Some(true);
                    self.done = true;
                }
            }
        }
        if self.replacements.len() >= self.budget {
            self.done = true;
        }
        Ok(())
    }

    /// Bookkeeping shared by both drivers right after a probe: records the
    /// clean loss on the first iteration, stops on an already-flipped
    /// prediction or a vanished gradient. Returns `true` if the iteration
    /// should proceed to candidate scoring.
    fn after_probe(
        &mut self,
        loss: f64,
        v: &Array1<f64>,
        repr: &Array1<f64>,
        classifier: &Linear,
        objective: &AttackObjective,
    ) -> Result<bool> {
        if !loss.is_finite() {
            return Err(Error::Numeric {
                example_id: self.current.id.clone(),
                what: format!("probe loss {loss}"),
            });
        }
        if self.trajectory.is_empty() {
            self.trajectory.push(loss);
            if let Some(pred) = objective.predicted(classifier, repr.view()) {
                if let AttackObjective::Classification { label } = objective {
                    if pred != *label {
                        self.success = Some(true);
                        self.done = true;
                        return Ok(false);
                    }
                }
            }
            if self.budget == 0 {
                self.done = true;
                return Ok(false);
            }
        }
        if v.dot(v).sqrt() == 0.0 {
            self.aborted_zero_gradient = true;
            self.done = true;
            return Ok(false);
        }
        Ok(true)
    }
}

/// Encodes one example and returns the representation `space` reads.
fn encode_repr(
    bundle: &EncoderBundle,
    example: &TokenizedExample,
    space: ProbeSpace,
) -> Result<Array1<f64>> {
    let (h, z) = bundle.encode(&[example])?;
    Ok(match space {
        ProbeSpace::Projection => z.row(0).to_owned(),
        _ => h.row(0).to_owned(),
    })
}

/// Runs the attack on one example, encoding candidates one at a time.
///
/// This is the reference implementation; [`geometry_attack_batched`]
/// must make the same substitutions while batching its forward passes.
pub fn geometry_attack(
    bundle: &mut EncoderBundle,
    example: &TokenizedExample,
    objective: &AttackObjective,
    provider: &dyn CandidateProvider,
    table: &SynonymEmbeddingTable,
    subword: &SubwordModel,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate()?;
    objective.check(bundle)?;
    let classifier = bundle.classifier.clone();
    let space = objective.space();
    let mut state = AttackState::new(example, objective, cfg);

    for _iter in 0..cfg.max_iters {
        if state.done {
            break;
        }
        // One probe: loss, representation, loss gradient in representation
        // space, and per-word input-embedding gradients.
        let record: RefCell<Option<(Array1<f64>, Array1<f64>)>> = RefCell::new(None);
        let (losses, input_grads) =
            bundle.probe_gradients(&[&state.current], space, |_i, repr| {
                let (loss, grad) = objective
                    .eval(&classifier, repr)
                    .expect("objective was validated against this model");
                *record.borrow_mut() = Some((grad.clone(), repr.to_owned()));
                (loss, grad)
            })?;
        state.queries += 1;
        let (v, repr_cur) = record.into_inner().expect("probe ran the loss closure");
        if !state.after_probe(losses[0], &v, &repr_cur, &classifier, objective)? {
            continue;
        }
        let word_grads = align_gradients(&state.current, &input_grads[0])?;

        let Some((t, cands)) = state.find_target(&word_grads, provider, table, cfg)? else {
            state.done = true;
            break;
        };
        let mut variants = Vec::with_capacity(cands.len());
        let mut reprs = Vec::with_capacity(cands.len());
        for cand in &cands {
            let variant = state.current.with_replacement(t, cand, subword)?;
            reprs.push(encode_repr(bundle, &variant, space)?);
            state.queries += 1;
            variants.push(variant);
        }
        state.apply_choice(
            t, cands, variants, &reprs, &repr_cur, &v, &classifier, objective, cfg,
        )?;
    }
    Ok(state.finish(&example.id))
}

/// Number of candidate sentences encoded per forward pass in the batched
/// driver. Bounds peak activation memory; has no effect on results beyond
/// floating-point grouping.
const ENCODE_CHUNK: usize = 64;

/// Runs the attack on many examples at once, batching the gradient probes
/// and candidate encodings across examples. Examples that finish early are
/// frozen while the rest continue. Substitution choices match
/// [`geometry_attack`]; floating-point sums may differ at batching
/// granularity, so scores within ~1e-6 of a tie can in principle resolve
/// differently.
pub fn geometry_attack_batched(
    bundle: &mut EncoderBundle,
    examples: &[&TokenizedExample],
    objectives: &[AttackObjective],
    provider: &dyn CandidateProvider,
    table: &SynonymEmbeddingTable,
    subword: &SubwordModel,
    cfg: &AttackConfig,
) -> Result<Vec<AttackResult>> {
    cfg.validate()?;
    if examples.len() != objectives.len() {
        return Err(Error::contract(format!(
            "{} examples but {} objectives",
            examples.len(),
            objectives.len()
        )));
    }
    for objective in objectives {
        objective.check(bundle)?;
    }
    let classifier = bundle.classifier.clone();
    let mut states: Vec<AttackState> = examples
        .iter()
        .zip(objectives)
        .map(|(ex, obj)| AttackState::new(ex, obj, cfg))
        .collect();

    // Examples whose objectives read different representations cannot share
    // a probe call, so each global iteration handles one space group at a
    // time. Group membership is fixed for the whole attack.
    let mut groups: Vec<(ProbeSpace, Vec<usize>)> = Vec::new();
    for (i, obj) in objectives.iter().enumerate() {
        let space = obj.space();
        match groups.iter_mut().find(|(s, _)| *s == space) {
            Some((_, members)) => members.push(i),
            None => groups.push((space, vec![i])),
        }
    }

    for _iter in 0..cfg.max_iters {
        if states.iter().all(|s| s.done) {
            break;
        }
        for (space, members) in &groups {
            let active: Vec<usize> = members
                .iter()
                .copied()
                .filter(|&i| !states[i].done)
                .collect();
            if active.is_empty() {
                continue;
            }

            // Phase 1: one batched probe for the whole group.
            let snapshot: Vec<TokenizedExample> =
                active.iter().map(|&i| states[i].current.clone()).collect();
            let batch: Vec<&TokenizedExample> = snapshot.iter().collect();
            let records: RefCell<Vec<Option<(Array1<f64>, Array1<f64>)>>> =
                RefCell::new(vec![None; active.len()]);
            let (losses, input_grads) = bundle.probe_gradients(&batch, *space, |i, repr| {
                let (loss, grad) = objectives[active[i]]
                    .eval(&classifier, repr)
                    .expect("objective was validated against this model");
                records.borrow_mut()[i] = Some((grad.clone(), repr.to_owned()));
                (loss, grad)
            })?;
            let records = records.into_inner();

            // Phase 2: per-example target search, then collect every
            // candidate sentence into one encoding queue.
            struct Pending {
                state_idx: usize,
                word_index: usize,
                candidates: Vec<String>,
                variants: Vec<TokenizedExample>,
                v: Array1<f64>,
                repr_cur: Array1<f64>,
            }
            let mut pending: Vec<Pending> = Vec::new();
            for (slot, &i) in active.iter().enumerate() {
                let state = &mut states[i];
                state.queries += 1;
                let (v, repr_cur) = records[slot].clone().expect("probe ran every row");
                if !state.after_probe(losses[slot], &v, &repr_cur, &classifier, &objectives[i])? {
                    continue;
                }
                let word_grads = align_gradients(&state.current, &input_grads[slot])?;
                let Some((t, cands)) = state.find_target(&word_grads, provider, table, cfg)?
                else {
                    state.done = true;
                    continue;
                };
                let mut variants = Vec::with_capacity(cands.len());
                for cand in &cands {
                    variants.push(state.current.with_replacement(t, cand, subword)?);
                    state.queries += 1;
                }
                pending.push(Pending {
                    state_idx: i,
                    word_index: t,
                    candidates: cands,
                    variants,
                    v,
                    repr_cur,
                });
            }

            // Phase 3: encode all queued candidates in large chunks.
            let flat: Vec<(usize, usize)> = pending
                .iter()
                .enumerate()
                .flat_map(|(p, job)| (0..job.variants.len()).map(move |m| (p, m)))
                .collect();
            let mut reprs: Vec<Vec<Option<Array1<f64>>>> = pending
                .iter()
                .map(|job| vec![None; job.variants.len()])
                .collect();
            for chunk in flat.chunks(ENCODE_CHUNK) {
                let refs: Vec<&TokenizedExample> = chunk
                    .iter()
                    .map(|&(p, m)| &pending[p].variants[m])
                    .collect();
                let (h, z) = bundle.encode(&refs)?;
                let rows = match space {
                    ProbeSpace::Projection => z,
                    _ => h,
                };
                for (row, &(p, m)) in chunk.iter().enumerate() {
                    reprs[p][m] = Some(rows.row(row).to_owned());
                }
            }

            // Phase 4: per-example greedy choice, identical to sequential.
            for (job, repr_rows) in pending.into_iter().zip(reprs) {
                let reprs: Vec<Array1<f64>> = repr_rows
                    .into_iter()
                    .map(|r| r.expect("every queued candidate was encoded"))
                    .collect();
                let i = job.state_idx;
                states[i].apply_choice(
                    job.word_index,
                    job.candidates,
                    job.variants,
                    &reprs,
                    &job.repr_cur,
                    &job.v,
                    &classifier,
                    &objectives[i],
                    cfg,
                )?;
            }
        }
    }

    Ok(states
        .into_iter()
        .zip(examples)
        .map(|(s, ex)| s.finish(&ex.id))
        .collect())
}

/// Baseline that replaces random positions with random vetted synonyms.
///
/// Uses the same budget, filter, and stop rules as the gradient-guided
/// attack, so any success-rate gap between the two isolates the value of
/// gradient guidance. Success is re-checked after every substitution.
pub fn baseline_random_synonym_attack(
    bundle: &mut EncoderBundle,
    example: &TokenizedExample,
    objective: &AttackObjective,
    provider: &dyn CandidateProvider,
    table: &SynonymEmbeddingTable,
    subword: &SubwordModel,
    cfg: &AttackConfig,
    rng: &mut ChaCha8Rng,
) -> Result<AttackResult> {
    cfg.validate()?;
    objective.check(bundle)?;
    let classifier = bundle.classifier.clone();
    let space = objective.space();
    let mut state = AttackState::new(example, objective, cfg);

    // Record the clean loss and bail out on an already-flipped prediction,
    // mirroring the guided attack's first probe.
    let repr0 = encode_repr(bundle, &state.current, space)?;
    state.queries += 1;
    let (loss0, _) = objective.eval(&classifier, repr0.view())?;
    let keep_going = state.after_probe(loss0, &Array1::ones(1), &repr0, &classifier, objective)?;

    for _iter in 0..cfg.max_iters {
        if state.done || !keep_going {
            break;
        }
        // Random position among those not yet spent.
        let (t, cands) = loop {
            let open: Vec<usize> = (0..state.current.len())
                .filter(|i| !state.forbidden.contains(i))
                .collect();
            if open.is_empty() {
                state.done = true;
                break (usize::MAX, Vec::new());
            }
            let t = open[rng.gen_range(0..open.len())];
            state.queries += provider.query_cost();
            let proposals = provider.propose(&state.current, t, cfg.candidate_limit)?;
            let (cands, orig_missing) =
                filter_candidates(&state.current.words[t], &proposals, table, cfg.cosine_threshold);
            if orig_missing && !state.missing.contains(&t) {
                state.missing.push(t);
            }
            if cands.is_empty() {
                state.forbidden.insert(t);
                continue;
            }
            break (t, cands);
        };
        if state.done {
            break;
        }

        let pick = rng.gen_range(0..cands.len());
        let variant = state.current.with_replacement(t, &cands[pick], subword)?;
        let repr = encode_repr(bundle, &variant, space)?;
        state.queries += 1;
        let (loss, _) = objective.eval(&classifier, repr.view())?;
        state.replacements.push(Replacement {
            word_index: t,
            before: state.current.words[t].clone(),
            after: cands[pick].clone(),
        });
        if cfg.no_repeat {
            state.forbidden.insert(t);
        }
        state.current = variant;
        state.trajectory.push(loss);
        if let Some(pred) = objective.predicted(&classifier, repr.view()) {
            if let AttackObjective::Classification { label } = objective {
                if pred != *label {
                    state.success = Some(true);
                    state.done = true;
                }
            }
        }
        if state.replacements.len() >= state.budget {
            state.done = true;
        }
    }
    Ok(state.finish(&example.id))
}

/// Compact record of one attack, one JSON object per line on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExportedAttack {
    pub id: String,
    pub replaced_indices: Vec<usize>,
    pub replacements: Vec<Replacement>,
    pub loss_trajectory: Vec<f64>,
    pub success: Option<bool>,
}

impl From<&AttackResult> for ExportedAttack {
    fn from(r: &AttackResult) -> Self {
        ExportedAttack {
            id: r.example_id.clone(),
            replaced_indices: r.replaced_indices.clone(),
            replacements: r.replacements.clone(),
            loss_trajectory: r.loss_trajectory.clone(),
            success: r.success,
        }
    }
}

/// Writes one JSON object per line.
pub fn export_results(path: impl AsRef<Path>, results: &[AttackResult]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for r in results {
        let line = serde_json::to_string(&ExportedAttack::from(r))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`export_results`].
pub fn load_exported(path: impl AsRef<Path>) -> Result<Vec<ExportedAttack>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExportedAttack = serde_json::from_str(&line)
            .map_err(|e| Error::parse(lineno + 1, e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}
