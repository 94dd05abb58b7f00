//! Training pipelines: contrastive pretraining, clean and adversarial
//! finetuning, and offline adversarial-set generation.
//!
//! Every random decision is drawn from a generator derived from the run
//! seed and a per-step (or per-example) label via [`crate::rng::stage_rng`].
//! Nothing carries generator state across steps, so a resumed run replays
//! the exact byte stream of an uninterrupted one: a saved [`TrainState`]
//! holds only parameters, optimizer moments, the negative queue, and the
//! step counter.

pub mod transform;

use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{
    geometry_attack_batched, AttackConfig, AttackObjective, SynonymEmbeddingTable, TableProvider,
};
use crate::corpus::{Corpus, SubwordModel, TokenizedExample};
use crate::encoder::{EncoderBundle, EncoderConfig};
use crate::moco::{contrastive_batch_loss, MomentumPair, NegativeQueue};
use crate::nn::{Adam, AdamConfig, Params};
use crate::rng::stage_rng;
use crate::{Error, Result};

pub use transform::{
    back_translation_standin, BackTranslationTransform, GeometryTransform, IdentityTransform,
    ParaphraseConfig, TransformContext, TransformFn,
};

/// How positives are produced during contrastive pretraining.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PretrainScheme {
    /// Skip pretraining entirely; downstream training starts from fresh
    /// random parameters.
    #[serde(rename = "np")]
    NoPretrain,
    /// Positives from the seeded paraphraser.
    #[serde(rename = "btcl")]
    BackTranslation,
    /// Hard positives from the substitution attack in contrastive mode.
    #[serde(rename = "adcl")]
    Adversarial,
}

impl PretrainScheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            PretrainScheme::NoPretrain => "np",
            PretrainScheme::BackTranslation => "btcl",
            PretrainScheme::Adversarial => "adcl",
        }
    }
}

impl std::str::FromStr for PretrainScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "np" => Ok(PretrainScheme::NoPretrain),
            "btcl" => Ok(PretrainScheme::BackTranslation),
            "adcl" => Ok(PretrainScheme::Adversarial),
            other => Err(Error::config(format!(
                "unknown pretraining scheme `{other}` (expected np, btcl, or adcl)"
            ))),
        }
    }
}

impl std::fmt::Display for PretrainScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How the classifier is trained on labelled data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FinetuneScheme {
    /// Cross-entropy on clean examples only.
    #[serde(rename = "ftc")]
    Clean,
    /// Clean first epoch, then per-batch on-the-fly attacks; training sees
    /// the union of clean and perturbed rows.
    #[serde(rename = "adv")]
    Adversarial,
}

impl FinetuneScheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            FinetuneScheme::Clean => "ftc",
            FinetuneScheme::Adversarial => "adv",
        }
    }
}

impl std::str::FromStr for FinetuneScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ftc" => Ok(FinetuneScheme::Clean),
            "adv" => Ok(FinetuneScheme::Adversarial),
            other => Err(Error::config(format!(
                "unknown finetuning scheme `{other}` (expected ftc or adv)"
            ))),
        }
    }
}

impl std::fmt::Display for FinetuneScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Contrastive pretraining configuration.
///
/// Defaults are sized for the bundled synthetic corpus; the original
/// recipe's queue of 65k and momentum 0.999 assume a far larger corpus and
/// many more steps than the 2 000-step default budget here.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub scheme: PretrainScheme,
    pub encoder: EncoderConfig,
    /// Optimizer steps (batches) to run in total.
    pub steps: usize,
    /// Horizon of the linear learning-rate schedule. Defaults to `steps`;
    /// set it larger to run only a prefix of a longer schedule now and
    /// resume the rest later under the same decay curve.
    #[serde(default)]
    pub schedule_steps: Option<usize>,
    pub batch_size: usize,
    /// Peak learning rate; decays linearly to zero over `steps`.
    pub lr: f64,
    pub warmup_steps: usize,
    pub seed: u64,
    /// InfoNCE temperature.
    pub tau: f64,
    /// Key-encoder momentum.
    pub momentum: f64,
    /// Negative-queue capacity; must hold at least one batch.
    pub queue_size: usize,
    /// Record a metric line every this many steps.
    pub log_every: usize,
}

impl PretrainConfig {
    pub fn new(scheme: PretrainScheme, encoder: EncoderConfig, seed: u64) -> Self {
        PretrainConfig {
            scheme,
            encoder,
            steps: 2000,
            schedule_steps: None,
            batch_size: 16,
            lr: 3e-4,
            warmup_steps: 100,
            seed,
            tau: 0.07,
            momentum: 0.999,
            queue_size: 1024,
            log_every: 10,
        }
    }

    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        if self.encoder.vocab_size != corpus.subword.vocab_size() {
            return Err(Error::config(format!(
                "encoder vocab size {} does not match corpus vocab size {}",
                self.encoder.vocab_size,
                corpus.subword.vocab_size()
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate {} unusable", self.lr)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config(format!("temperature {} unusable", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::config(format!(
                "momentum {} outside [0, 1]",
                self.momentum
            )));
        }
        if self.log_every == 0 {
            return Err(Error::config("log_every must be positive"));
        }
        if let Some(horizon) = self.schedule_steps {
            if horizon < self.steps {
                return Err(Error::config(format!(
                    "schedule horizon {horizon} shorter than the {} steps to run",
                    self.steps
                )));
            }
        }
        if self.scheme != PretrainScheme::NoPretrain {
            if corpus.examples.is_empty() {
                return Err(Error::config("pretraining corpus is empty"));
            }
            if self.queue_size < self.batch_size {
                return Err(Error::config(format!(
                    "negative queue ({}) smaller than batch ({}): every batch of keys must fit",
                    self.queue_size, self.batch_size
                )));
            }
        }
        Ok(())
    }

    fn adam_config(&self) -> AdamConfig {
        let horizon = self.schedule_steps.unwrap_or(self.steps);
        let mut cfg = AdamConfig::new(self.lr, horizon as u64);
        cfg.warmup_steps = self.warmup_steps as u64;
        cfg
    }
}

/// Supervised finetuning configuration, shared by the clean and the
/// adversarial recipe (the latter also reads `attack`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub scheme: FinetuneScheme,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub seed: u64,
    /// Substitution-attack settings for the adversarial recipe.
    pub attack: AttackConfig,
    /// Per-batch wall-clock budget for attack generation. When generation
    /// exceeds it the batch trains on its clean rows only. Off by default:
    /// wall-clock cuts make training depend on machine speed, which breaks
    /// run-to-run reproducibility.
    pub attack_timeout_ms: Option<u64>,
    pub log_every: usize,
}

impl FinetuneConfig {
    pub fn new(scheme: FinetuneScheme, seed: u64) -> Self {
        FinetuneConfig {
            scheme,
            epochs: 3,
            batch_size: 16,
            lr: 3e-4,
            warmup_steps: 0,
            seed,
            attack: AttackConfig::finetuning(),
            attack_timeout_ms: None,
            log_every: 10,
        }
    }

    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate {} unusable", self.lr)));
        }
        if self.log_every == 0 {
            return Err(Error::config("log_every must be positive"));
        }
        if corpus.examples.is_empty() {
            return Err(Error::config("finetuning corpus is empty"));
        }
        for ex in &corpus.examples {
            match ex.label {
                None => {
                    return Err(Error::contract(format!(
                        "finetuning requires labels; example {} has none",
                        ex.id
                    )))
                }
                Some(l) if l >= corpus.num_classes => {
                    return Err(Error::contract(format!(
                        "example {} has label {l} but the corpus declares {} classes",
                        ex.id, corpus.num_classes
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

/// One logged training step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepMetric {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    /// Batch accuracy; absent during pretraining.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accuracy: Option<f64>,
}

/// Write metrics as one JSON object per line.
pub fn write_metrics(path: &Path, metrics: &[StepMetric]) -> Result<()> {
    let mut out = String::new();
    for m in metrics {
        out.push_str(&serde_json::to_string(m)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

const TRAIN_STATE_FORMAT: &str = "advcl-train-state";
const TRAIN_STATE_VERSION: u32 = 1;

/// Full pretraining state: both encoder branches, the negative queue, the
/// optimizer moments, and the number of completed steps.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub pair: MomentumPair,
    pub queue: NegativeQueue,
    pub optimizer: Adam,
    pub step: usize,
}

#[derive(Serialize, Deserialize)]
struct TrainStateFile {
    format: String,
    version: u32,
    encoder: EncoderConfig,
    subword_id: String,
    momentum: f64,
    step: usize,
    query_params: Vec<Array2<f64>>,
    key_params: Vec<Array2<f64>>,
    queue: NegativeQueue,
    optimizer: Adam,
}

impl TrainState {
    /// Serialize to JSON. `f64` values survive the round-trip bit-exactly.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = TrainStateFile {
            format: TRAIN_STATE_FORMAT.to_string(),
            version: TRAIN_STATE_VERSION,
            encoder: self.pair.query.cfg.clone(),
            subword_id: self.pair.query.subword_id.clone(),
            momentum: self.pair.m,
            step: self.step,
            query_params: self.pair.query.params().into_iter().cloned().collect(),
            key_params: self.pair.key.params().into_iter().cloned().collect(),
            queue: self.queue.clone(),
            optimizer: self.optimizer.clone(),
        };
        let json = serde_json::to_string(&file)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    /// Load and validate against the subword model the run will use.
    pub fn load(path: &Path, subword: &SubwordModel) -> Result<TrainState> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: TrainStateFile = serde_json::from_str(&text)?;
        if file.format != TRAIN_STATE_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unexpected format tag {:?}",
                file.format
            )));
        }
        if file.version != TRAIN_STATE_VERSION {
            return Err(Error::Checkpoint(format!(
                "state version {} unsupported (expected {})",
                file.version, TRAIN_STATE_VERSION
            )));
        }
        if file.subword_id != subword.id() {
            return Err(Error::Checkpoint(
                "state was trained against a different subword vocabulary".to_string(),
            ));
        }
        let mut query = EncoderBundle::new(file.encoder.clone(), file.subword_id.clone(), 0)?;
        query.set_params(&file.query_params)?;
        let mut key = EncoderBundle::new(file.encoder, file.subword_id, 0)?;
        key.set_params(&file.key_params)?;
        let pair = MomentumPair::from_parts(query, key, file.momentum)?;
        Ok(TrainState {
            pair,
            queue: file.queue,
            optimizer: file.optimizer,
            step: file.step,
        })
    }
}

/// What a pretraining run hands back.
#[derive(Debug)]
pub struct PretrainOutcome {
    pub state: TrainState,
    pub metrics: Vec<StepMetric>,
    /// Examples whose positive-view transform failed and fell back to the
    /// identity.
    pub transform_failures: usize,
}

/// Contrastive pretraining over an unlabelled view of `corpus`.
///
/// Labels are never read. Per step: sample a batch with replacement, build
/// positives through `transform` (falling back to the clean example when a
/// slot fails), take one InfoNCE gradient step on the query branch, trail
/// the key branch, and enqueue the positives' key projections.
///
/// Pass `resume` to continue a saved run; training picks up at the saved
/// step counter and reproduces the uninterrupted run exactly.
pub fn pretrain_contrastive(
    cfg: &PretrainConfig,
    corpus: &Corpus,
    transform: &dyn TransformFn,
    resume: Option<TrainState>,
) -> Result<PretrainOutcome> {
    cfg.validate(corpus)?;
    if cfg.scheme == PretrainScheme::NoPretrain {
        if resume.is_some() {
            return Err(Error::config(
                "the no-pretraining scheme has no state to resume",
            ));
        }
        return Ok(PretrainOutcome {
            state: fresh_state(cfg, corpus, false)?,
            metrics: Vec::new(),
            transform_failures: 0,
        });
    }

    let mut state = match resume {
        Some(s) => {
            check_resume(&s, cfg, corpus)?;
            s
        }
        None => fresh_state(cfg, corpus, true)?,
    };

    let n = corpus.examples.len();
    let mut metrics = Vec::new();
    let mut transform_failures = 0usize;

    while state.step < cfg.steps {
        let step = state.step;
        let mut rng = stage_rng(cfg.seed, &format!("pretrain-step-{step}"));
        let clean: Vec<&TokenizedExample> = (0..cfg.batch_size)
            .map(|_| &corpus.examples[rng.gen_range(0..n)])
            .collect();

        let positives: Vec<TokenizedExample> = {
            let mut ctx = TransformContext {
                bundle: &mut state.pair.query,
                queue: &state.queue,
                tau: cfg.tau,
                subword: &corpus.subword,
                rng: &mut rng,
            };
            let views = transform.transform_batch(&mut ctx, &clean);
            if views.len() != clean.len() {
                return Err(Error::contract(format!(
                    "transform `{}` returned {} views for {} examples",
                    transform.name(),
                    views.len(),
                    clean.len()
                )));
            }
            views
                .into_iter()
                .zip(&clean)
                .map(|(view, ex)| match view {
                    Ok(p) => p,
                    Err(_) => {
                        transform_failures += 1;
                        (*ex).clone()
                    }
                })
                .collect()
        };
        let pos_refs: Vec<&TokenizedExample> = positives.iter().collect();

        state.pair.query.zero_grads();
        let loss =
            contrastive_batch_loss(&mut state.pair, &mut state.queue, &clean, &pos_refs, cfg.tau)?;
        if !loss.is_finite() {
            return Err(Error::Numeric {
                example_id: format!("pretrain-step-{step}"),
                what: format!("batch loss {loss}"),
            });
        }
        let lr = state.optimizer.lr_at(step as u64);
        state.optimizer.apply(&mut state.pair.query);
        state.pair.update_key()?;
        state.step += 1;

        if step % cfg.log_every == 0 || state.step == cfg.steps {
            metrics.push(StepMetric {
                step,
                loss,
                lr,
                accuracy: None,
            });
        }
    }

    Ok(PretrainOutcome {
        state,
        metrics,
        transform_failures,
    })
}

fn fresh_state(cfg: &PretrainConfig, corpus: &Corpus, prefill: bool) -> Result<TrainState> {
    let bundle = EncoderBundle::new(cfg.encoder.clone(), corpus.subword.id(), cfg.seed)?;
    let optimizer = Adam::new(cfg.adam_config(), &bundle);
    let pair = MomentumPair::new(bundle, cfg.momentum)?;
    let mut queue = NegativeQueue::new(cfg.queue_size.max(1), cfg.encoder.proj_dim)?;
    if prefill {
        prefill_queue(&pair.key, &mut queue, corpus, cfg.seed)?;
    }
    Ok(TrainState {
        pair,
        queue,
        optimizer,
        step: 0,
    })
}

/// Fill the queue with key projections of randomly drawn examples so the
/// very first step already sees a full negative pool.
fn prefill_queue(
    key: &EncoderBundle,
    queue: &mut NegativeQueue,
    corpus: &Corpus,
    seed: u64,
) -> Result<()> {
    let mut rng = stage_rng(seed, "queue-prefill");
    let n = corpus.examples.len();
    while queue.len() < queue.capacity() {
        let take = (queue.capacity() - queue.len()).min(64);
        let refs: Vec<&TokenizedExample> = (0..take)
            .map(|_| &corpus.examples[rng.gen_range(0..n)])
            .collect();
        let (_, z) = key.encode(&refs)?;
        queue.enqueue_batch(&z)?;
    }
    Ok(())
}

fn check_resume(state: &TrainState, cfg: &PretrainConfig, corpus: &Corpus) -> Result<()> {
    if state.pair.query.cfg != cfg.encoder {
        return Err(Error::Checkpoint(
            "saved encoder configuration differs from the requested one".to_string(),
        ));
    }
    if state.pair.query.subword_id != corpus.subword.id() {
        return Err(Error::Checkpoint(
            "saved state uses a different subword vocabulary than the corpus".to_string(),
        ));
    }
    if state.queue.capacity() != cfg.queue_size {
        return Err(Error::Checkpoint(format!(
            "saved queue capacity {} != configured {}",
            state.queue.capacity(),
            cfg.queue_size
        )));
    }
    if state.pair.m != cfg.momentum {
        return Err(Error::Checkpoint(format!(
            "saved momentum {} != configured {}",
            state.pair.m, cfg.momentum
        )));
    }
    if state.step > cfg.steps {
        return Err(Error::Checkpoint(format!(
            "saved step {} beyond the configured budget {}",
            state.step, cfg.steps
        )));
    }
    let want = cfg.adam_config();
    let have = &state.optimizer.cfg;
    if have.lr != want.lr
        || have.total_steps != want.total_steps
        || have.warmup_steps != want.warmup_steps
    {
        return Err(Error::Checkpoint(format!(
            "saved learning-rate schedule (lr {}, total {}, warmup {}) differs from the \
             configured one (lr {}, total {}, warmup {})",
            have.lr, have.total_steps, have.warmup_steps, want.lr, want.total_steps,
            want.warmup_steps
        )));
    }
    if state.optimizer.step != state.step as u64 {
        return Err(Error::Checkpoint(format!(
            "optimizer has taken {} steps but the trainer counter says {}",
            state.optimizer.step, state.step
        )));
    }
    Ok(())
}

/// What a finetuning run hands back.
#[derive(Debug)]
pub struct FinetuneOutcome {
    pub metrics: Vec<StepMetric>,
    /// Perturbed rows actually trained on.
    pub adversarial_rows: usize,
    /// Batches whose attack generation blew the wall-clock budget.
    pub attack_timeouts: usize,
    /// Batches whose attack generation errored out entirely.
    pub attack_failures: usize,
}

/// Cross-entropy finetuning on clean examples.
///
/// Zero epochs is an explicit no-op: the parameters come back untouched.
pub fn finetune_clean(
    cfg: &FinetuneConfig,
    bundle: &mut EncoderBundle,
    corpus: &Corpus,
) -> Result<FinetuneOutcome> {
    if cfg.scheme != FinetuneScheme::Clean {
        return Err(Error::config(format!(
            "configured scheme is `{}`; call the matching finetune entry point",
            cfg.scheme
        )));
    }
    run_finetune(cfg, bundle, corpus, None)
}

/// Adversarial finetuning: first epoch clean, later epochs train each batch
/// on the union of its clean rows and their attacked counterparts
/// (one per clean row, successful or not — a failed attack still yields its
/// final perturbation, and a zero budget degenerates to clean training).
pub fn finetune_adversarial(
    cfg: &FinetuneConfig,
    bundle: &mut EncoderBundle,
    corpus: &Corpus,
    table: &SynonymEmbeddingTable,
) -> Result<FinetuneOutcome> {
    if cfg.scheme != FinetuneScheme::Adversarial {
        return Err(Error::config(format!(
            "configured scheme is `{}`; call the matching finetune entry point",
            cfg.scheme
        )));
    }
    run_finetune(cfg, bundle, corpus, Some(table))
}

fn run_finetune(
    cfg: &FinetuneConfig,
    bundle: &mut EncoderBundle,
    corpus: &Corpus,
    adversarial: Option<&SynonymEmbeddingTable>,
) -> Result<FinetuneOutcome> {
    cfg.validate(corpus)?;
    check_corpus_binding(bundle, corpus)?;

    let n = corpus.examples.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut adam_cfg = AdamConfig::new(cfg.lr, total_steps as u64);
    adam_cfg.warmup_steps = cfg.warmup_steps as u64;
    let mut optimizer = Adam::new(adam_cfg, bundle);

    let mut metrics = Vec::new();
    let mut adversarial_rows = 0usize;
    let mut attack_timeouts = 0usize;
    let mut attack_failures = 0usize;
    let mut gstep = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut erng = stage_rng(cfg.seed, &format!("finetune-epoch-{epoch}"));
        order.shuffle(&mut erng);

        for chunk in order.chunks(cfg.batch_size) {
            let clean: Vec<&TokenizedExample> =
                chunk.iter().map(|&i| &corpus.examples[i]).collect();

            let mut perturbed: Vec<TokenizedExample> = Vec::new();
            if let Some(table) = adversarial {
                if epoch >= 1 {
                    if cfg.attack_timeout_ms == Some(0) {
                        // A zero budget can never fit an attack; skip the
                        // work instead of racing the clock so the run stays
                        // deterministic.
                        attack_timeouts += 1;
                    } else {
                        let started = Instant::now();
                        match attack_rows(bundle, &clean, &corpus.subword, table, &cfg.attack) {
                            Ok(rows) => {
                                let within = cfg
                                    .attack_timeout_ms
                                    .map_or(true, |ms| started.elapsed().as_millis() as u64 <= ms);
                                if within {
                                    adversarial_rows += rows.len();
                                    perturbed = rows;
                                } else {
                                    attack_timeouts += 1;
                                }
                            }
                            Err(_) => attack_failures += 1,
                        }
                    }
                }
            }

            let mut batch = clean.clone();
            batch.extend(perturbed.iter());

            bundle.zero_grads();
            let (loss, correct) = bundle.train_classification_step(&batch)?;
            if !loss.is_finite() {
                return Err(Error::Numeric {
                    example_id: format!("finetune-step-{gstep}"),
                    what: format!("batch loss {loss}"),
                });
            }
            let lr = optimizer.lr_at(gstep as u64);
            optimizer.apply(bundle);

            if gstep % cfg.log_every == 0 || gstep + 1 == total_steps {
                metrics.push(StepMetric {
                    step: gstep,
                    loss,
                    lr,
                    accuracy: Some(correct as f64 / batch.len() as f64),
                });
            }
            gstep += 1;
        }
    }

    Ok(FinetuneOutcome {
        metrics,
        adversarial_rows,
        attack_timeouts,
        attack_failures,
    })
}

/// Attack every row of a labelled batch in classification mode and return
/// the final perturbations in input order.
fn attack_rows(
    bundle: &mut EncoderBundle,
    batch: &[&TokenizedExample],
    subword: &SubwordModel,
    table: &SynonymEmbeddingTable,
    attack: &AttackConfig,
) -> Result<Vec<TokenizedExample>> {
    let objectives: Vec<AttackObjective> = batch
        .iter()
        .map(|ex| {
            ex.label
                .map(|label| AttackObjective::Classification { label })
                .ok_or_else(|| Error::contract(format!("example {} has no label", ex.id)))
        })
        .collect::<Result<_>>()?;
    let provider = TableProvider { table };
    let results = geometry_attack_batched(
        bundle,
        batch,
        &objectives,
        &provider,
        table,
        subword,
        attack,
    )?;
    Ok(results.into_iter().map(|r| r.perturbed).collect())
}

fn check_corpus_binding(bundle: &EncoderBundle, corpus: &Corpus) -> Result<()> {
    if bundle.subword_id != corpus.subword.id() {
        return Err(Error::contract(
            "model was built against a different subword vocabulary than the corpus".to_string(),
        ));
    }
    if bundle.cfg.num_classes != corpus.num_classes {
        return Err(Error::config(format!(
            "model has {} output classes but the corpus declares {}",
            bundle.cfg.num_classes, corpus.num_classes
        )));
    }
    Ok(())
}

/// Attack every training example once against the fixed `bundle` and return
/// the clean corpus followed by the perturbed copies (`{id}-adv`), doubling
/// its size. Unsuccessful attacks still contribute their final perturbation.
/// The procedure draws no randomness, so regeneration is exact.
pub fn pregenerate_adversarial_dataset(
    bundle: &mut EncoderBundle,
    corpus: &Corpus,
    attack: &AttackConfig,
    table: &SynonymEmbeddingTable,
) -> Result<Corpus> {
    check_corpus_binding(bundle, corpus)?;
    for ex in &corpus.examples {
        if ex.label.is_none() {
            return Err(Error::contract(format!(
                "adversarial generation requires labels; example {} has none",
                ex.id
            )));
        }
    }

    let mut adversarial = Vec::with_capacity(corpus.examples.len());
    for chunk in corpus.examples.chunks(64) {
        let refs: Vec<&TokenizedExample> = chunk.iter().collect();
        let rows = attack_rows(bundle, &refs, &corpus.subword, table, attack)?;
        for (src, mut row) in chunk.iter().zip(rows) {
            row.id = format!("{}-adv", src.id);
            adversarial.push(row);
        }
    }

    let mut examples = corpus.examples.clone();
    examples.extend(adversarial);
    Ok(Corpus {
        examples,
        num_classes: corpus.num_classes,
        subword: corpus.subword.clone(),
    })
}

#[cfg(test)]
mod tests;
