//! Positive-view transforms for contrastive pretraining.
//!
//! A transform turns each example of a batch into the "second view" that the
//! key encoder will embed. Three implementations cover the pretraining
//! schemes: the identity (weakest), a seeded paraphraser that swaps synonyms
//! and nudges function words around (a stand-in for round-trip translation),
//! and the gradient-guided substitution attack run in contrastive mode
//! against the current queue (hardest).
//!
//! Transforms report failures per example rather than per batch: the
//! training loop substitutes the clean example for any failed slot and keeps
//! going, so one pathological sentence cannot stall a run.

use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::attack::{
    geometry_attack, geometry_attack_batched, AttackConfig, AttackObjective,
    SynonymEmbeddingTable, TableProvider,
};
use crate::corpus::{SubwordModel, TokenizedExample};
use crate::encoder::EncoderBundle;
use crate::moco::NegativeQueue;
use crate::rng::stage_rng;
use crate::{Error, Result};

/// Everything a transform may consult while producing positives.
///
/// The bundle is the query branch of the momentum pair; transforms may run
/// forward passes and gradient probes through it but must leave its
/// parameters untouched. The queue is the negative pool as of *before* the
/// current batch is enqueued.
pub struct TransformContext<'a> {
    pub bundle: &'a mut EncoderBundle,
    pub queue: &'a NegativeQueue,
    pub tau: f64,
    pub subword: &'a SubwordModel,
    /// Step-scoped generator. Transforms that want reproducibility per
    /// example (rather than per step) are free to ignore it and derive
    /// their own streams.
    pub rng: &'a mut ChaCha8Rng,
}

/// Batch-level positive-view constructor.
///
/// Implementations must return exactly one slot per input example, in
/// order. Each output must tokenize over the same subword vocabulary as its
/// input; labels are carried through untouched and never read.
pub trait TransformFn {
    /// Short tag for logs and metrics.
    fn name(&self) -> &'static str;

    fn transform_batch(
        &self,
        ctx: &mut TransformContext<'_>,
        batch: &[&TokenizedExample],
    ) -> Vec<Result<TokenizedExample>>;
}

/// The positive view is the example itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityTransform;

impl TransformFn for IdentityTransform {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn transform_batch(
        &self,
        _ctx: &mut TransformContext<'_>,
        batch: &[&TokenizedExample],
    ) -> Vec<Result<TokenizedExample>> {
        batch.iter().map(|ex| Ok((*ex).clone())).collect()
    }
}

/// Hard positives from the substitution attack in contrastive mode.
///
/// Anchors are the clean projections under the current query parameters and
/// the negative pool is a snapshot of the queue, both frozen for the whole
/// batch; the attack then pushes each example away from its own anchor
/// within the synonym constraint.
pub struct GeometryTransform<'t> {
    pub table: &'t SynonymEmbeddingTable,
    pub attack: AttackConfig,
}

impl<'t> GeometryTransform<'t> {
    pub fn new(table: &'t SynonymEmbeddingTable) -> Self {
        GeometryTransform {
            table,
            attack: AttackConfig::pretraining(),
        }
    }
}

impl TransformFn for GeometryTransform<'_> {
    fn name(&self) -> &'static str {
        "adversarial"
    }

    fn transform_batch(
        &self,
        ctx: &mut TransformContext<'_>,
        batch: &[&TokenizedExample],
    ) -> Vec<Result<TokenizedExample>> {
        let n = batch.len();
        let negatives = ctx.queue.snapshot();
        let (_, z) = match ctx.bundle.encode(batch) {
            Ok(hz) => hz,
            Err(e) => {
                // No anchors means no slot can be attacked; surface the same
                // cause for every example so the caller's fallback applies.
                let msg = e.to_string();
                return (0..n)
                    .map(|_| Err(Error::contract(format!("anchor encode failed: {msg}"))))
                    .collect();
            }
        };
        let objectives: Vec<AttackObjective> = (0..n)
            .map(|i| AttackObjective::Contrastive {
                anchor: z.row(i).to_owned(),
                negatives: negatives.clone(),
                tau: ctx.tau,
            })
            .collect();
        let provider = TableProvider { table: self.table };
        match geometry_attack_batched(
            ctx.bundle,
            batch,
            &objectives,
            &provider,
            self.table,
            ctx.subword,
            &self.attack,
        ) {
            Ok(results) => results.into_iter().map(|r| Ok(r.perturbed)).collect(),
            Err(_) => {
                // The batched driver rejects the whole batch on any
                // malformed slot; retry one by one so healthy examples
                // still get hard positives and only the bad slots fail.
                batch
                    .iter()
                    .enumerate()
                    .map(|(i, ex)| {
                        geometry_attack(
                            ctx.bundle,
                            ex,
                            &objectives[i],
                            &provider,
                            self.table,
                            ctx.subword,
                            &self.attack,
                        )
                        .map(|r| r.perturbed)
                    })
                    .collect()
            }
        }
    }
}

/// Knobs for the seeded paraphraser.
#[derive(Debug, Clone)]
pub struct ParaphraseConfig {
    /// Per-word probability of attempting a synonym swap.
    pub swap_rate: f64,
    /// Per-site probability of nudging a connective word one slot right.
    pub reorder_rate: f64,
    /// Minimum cosine between a word and its replacement.
    pub cosine_threshold: f64,
    /// How many nearest neighbours to consider per swap.
    pub candidate_limit: usize,
    /// Sentences at least this long are guaranteed to change in ≥ 1 word
    /// whenever the table offers any legal swap (and swapping is enabled).
    pub min_forced_len: usize,
    /// Words (case-folded) that must survive verbatim and in place —
    /// the label-bearing tokens of the corpus.
    pub protected: HashSet<String>,
    /// Words (case-folded) eligible for local reordering; connective words
    /// whose position carries no meaning.
    pub reorderable: HashSet<String>,
}

impl ParaphraseConfig {
    pub fn new(protected: HashSet<String>, reorderable: HashSet<String>) -> Self {
        ParaphraseConfig {
            swap_rate: 0.15,
            reorder_rate: 0.3,
            cosine_threshold: 0.5,
            candidate_limit: 8,
            min_forced_len: 7,
            protected,
            reorderable,
        }
    }
}

/// Seeded paraphrase: synonym swaps on a random ~`swap_rate` of the words
/// plus occasional adjacent nudges of connective words.
///
/// The generator is derived from `(seed, example.id)`, so the output is a
/// pure function of the input — rerunning with the same seed reproduces it
/// exactly. Protected words are never replaced and never moved.
pub fn back_translation_standin(
    example: &TokenizedExample,
    table: &SynonymEmbeddingTable,
    model: &SubwordModel,
    cfg: &ParaphraseConfig,
    seed: u64,
) -> Result<TokenizedExample> {
    let mut rng = stage_rng(seed, &format!("paraphrase-{}", example.id));
    let mut words = example.words.clone();
    let mut swapped_any = false;

    for i in 0..words.len() {
        let original = &example.words[i];
        if cfg.protected.contains(&original.to_lowercase()) {
            continue;
        }
        if rng.gen::<f64>() >= cfg.swap_rate {
            continue;
        }
        let cands = swap_candidates(table, original, cfg);
        if cands.is_empty() {
            continue;
        }
        let pick = rng.gen_range(0..cands.len());
        words[i] = cands[pick].clone();
        swapped_any = true;
    }

    // A long sentence that rolled no swap would come back verbatim, which
    // makes a useless positive view; force the best available swap instead.
    if !swapped_any && cfg.swap_rate > 0.0 && words.len() >= cfg.min_forced_len {
        for i in 0..words.len() {
            let original = &example.words[i];
            if cfg.protected.contains(&original.to_lowercase()) {
                continue;
            }
            let cands = swap_candidates(table, original, cfg);
            if let Some(best) = cands.first() {
                words[i] = best.clone();
                break;
            }
        }
    }

    let mut i = 0;
    while i + 1 < words.len() {
        let here = words[i].to_lowercase();
        let next = words[i + 1].to_lowercase();
        if cfg.reorderable.contains(&here)
            && !cfg.protected.contains(&here)
            && !cfg.protected.contains(&next)
            && rng.gen::<f64>() < cfg.reorder_rate
        {
            words.swap(i, i + 1);
            i += 2; // never undo a nudge in the same pass
        } else {
            i += 1;
        }
    }

    TokenizedExample::from_words(example.id.clone(), words, example.label, model)
}

fn swap_candidates(
    table: &SynonymEmbeddingTable,
    original: &str,
    cfg: &ParaphraseConfig,
) -> Vec<String> {
    table
        .neighbors(original, cfg.candidate_limit)
        .into_iter()
        .filter(|(_, cos)| *cos >= cfg.cosine_threshold)
        .map(|(w, _)| w)
        .collect()
}

/// Paraphrase every example of the batch with a per-example derived seed.
pub struct BackTranslationTransform<'t> {
    pub table: &'t SynonymEmbeddingTable,
    pub cfg: ParaphraseConfig,
    pub seed: u64,
}

impl TransformFn for BackTranslationTransform<'_> {
    fn name(&self) -> &'static str {
        "back-translation"
    }

    fn transform_batch(
        &self,
        ctx: &mut TransformContext<'_>,
        batch: &[&TokenizedExample],
    ) -> Vec<Result<TokenizedExample>> {
        batch
            .iter()
            .map(|ex| back_translation_standin(ex, self.table, ctx.subword, &self.cfg, self.seed))
            .collect()
    }
}
