//! Evaluation: robustness under the substitution attack, cross-model
//! transfer of adversarial examples, representation-distance measurements,
//! embedding export for visualization, attack throughput, and a queue-size
//! sweep over the full pretrain→finetune→evaluate chain.
//!
//! Reports are plain serializable data; rendering tables is the caller's
//! job. Undefined ratios (for instance a success rate when the model got
//! nothing right) are represented as absent values, never as NaN.

use std::path::Path;
use std::time::Instant;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::attack::{
    geometry_attack, geometry_attack_batched, AttackConfig, AttackObjective, AttackResult,
    SynonymEmbeddingTable, TableProvider,
};
use crate::corpus::{Corpus, TokenizedExample};
use crate::encoder::{argmax_rows, EncoderBundle};
use crate::pipelines::{
    finetune_clean, pretrain_contrastive, FinetuneConfig, FinetuneScheme, GeometryTransform,
    PretrainConfig, PretrainScheme,
};
use crate::{Error, Result};

/// How the replacement rate aggregates over attacked examples. The headline
/// definition averages over successful attacks only; the alternative folds
/// in every attacked example's final perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReplacementAveraging {
    #[serde(rename = "successful-only")]
    SuccessfulOnly,
    #[serde(rename = "all-attacked")]
    AllAttacked,
}

/// The perturbation budget a report was produced under. Reports compared
/// against each other must agree on this.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetSpec {
    pub fraction: f64,
    pub cap: usize,
}

impl From<&AttackConfig> for BudgetSpec {
    fn from(cfg: &AttackConfig) -> Self {
        BudgetSpec {
            fraction: cfg.budget_fraction,
            cap: cfg.budget_cap,
        }
    }
}

/// Settings shared by the evaluation entry points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub attack: AttackConfig,
    pub replacement_mode: ReplacementAveraging,
    /// Evaluate only the first `limit` examples when set.
    pub limit: Option<usize>,
    /// Batch width for forward passes and batched attacks.
    pub batch_size: usize,
}

impl EvalConfig {
    pub fn new(attack: AttackConfig) -> Self {
        EvalConfig {
            attack,
            replacement_mode: ReplacementAveraging::SuccessfulOnly,
            limit: None,
            batch_size: 64,
        }
    }

    fn validate(&self) -> Result<()> {
        self.attack.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        Ok(())
    }
}

/// Attack outcome for one correctly classified example.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackedOutcome {
    pub success: bool,
    pub adversarial_prediction: u32,
    pub replaced_words: usize,
    pub words: usize,
    /// `replaced_words / words`.
    pub replacement_fraction: f64,
    pub queries: usize,
}

/// One evaluated example. `attack` is present exactly for the correctly
/// classified ones — misclassified examples are never attacked.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExampleOutcome {
    pub id: String,
    pub label: u32,
    pub clean_prediction: u32,
    pub correct: bool,
    pub attack: Option<AttackedOutcome>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustnessReport {
    /// Fingerprint of the evaluated corpus slice's parent corpus.
    pub dataset: String,
    /// Examples evaluated (after any limit).
    pub examples: usize,
    pub clean_accuracy: f64,
    /// Denominator of the success rate: correctly classified examples.
    pub attacked: usize,
    pub successes: usize,
    /// Absent when no example was correctly classified.
    pub success_rate: Option<f64>,
    /// Mean replacement fraction per `replacement_mode`; absent when the
    /// chosen averaging set is empty.
    pub replacement_rate: Option<f64>,
    pub replacement_mode: ReplacementAveraging,
    pub budget: BudgetSpec,
    pub per_example: Vec<ExampleOutcome>,
}

/// A report plus the perturbed examples behind it, aligned with the
/// `attack`-carrying entries of `report.per_example` in order.
#[derive(Debug, Clone)]
pub struct RobustnessEvaluation {
    pub report: RobustnessReport,
    pub adversarial: Vec<TokenizedExample>,
}

fn check_model_binding(bundle: &EncoderBundle, corpus: &Corpus) -> Result<()> {
    if bundle.subword_id != corpus.subword.id() {
        return Err(Error::contract(
            "model was built against a different subword vocabulary than the corpus".to_string(),
        ));
    }
    if bundle.cfg.num_classes != corpus.num_classes {
        return Err(Error::contract(format!(
            "model has {} output classes but the corpus declares {}",
            bundle.cfg.num_classes, corpus.num_classes
        )));
    }
    Ok(())
}

fn evaluated_slice<'c>(corpus: &'c Corpus, cfg: &EvalConfig) -> Result<&'c [TokenizedExample]> {
    let n = cfg
        .limit
        .map_or(corpus.examples.len(), |l| l.min(corpus.examples.len()));
    if n == 0 {
        return Err(Error::config("nothing to evaluate"));
    }
    let slice = &corpus.examples[..n];
    for ex in slice {
        if ex.label.is_none() {
            return Err(Error::contract(format!(
                "evaluation requires labels; example {} has none",
                ex.id
            )));
        }
    }
    Ok(slice)
}

fn predictions(
    bundle: &EncoderBundle,
    examples: &[&TokenizedExample],
    batch_size: usize,
) -> Result<Vec<u32>> {
    let mut preds = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch_size) {
        let logits = bundle.classify(chunk)?;
        preds.extend(argmax_rows(&logits));
    }
    Ok(preds)
}

/// Classification-mode attacks over the correctly classified subset.
/// Returns clean predictions for every example plus, for the attacked
/// subset, the indices and raw attack results in example order.
fn attack_correct(
    bundle: &mut EncoderBundle,
    examples: &[&TokenizedExample],
    corpus: &Corpus,
    table: &SynonymEmbeddingTable,
    cfg: &EvalConfig,
) -> Result<(Vec<u32>, Vec<usize>, Vec<AttackResult>)> {
    let preds = predictions(bundle, examples, cfg.batch_size)?;
    let attacked_idx: Vec<usize> = examples
        .iter()
        .enumerate()
        .filter(|(i, ex)| Some(preds[*i]) == ex.label)
        .map(|(i, _)| i)
        .collect();

    let provider = TableProvider { table };
    let mut results = Vec::with_capacity(attacked_idx.len());
    for chunk in attacked_idx.chunks(cfg.batch_size) {
        let batch: Vec<&TokenizedExample> = chunk.iter().map(|&i| examples[i]).collect();
        let objectives: Vec<AttackObjective> = batch
            .iter()
            .map(|ex| AttackObjective::Classification {
                label: ex.label.expect("labels checked by evaluated_slice"),
            })
            .collect();
        results.extend(geometry_attack_batched(
            bundle,
            &batch,
            &objectives,
            &provider,
            table,
            &corpus.subword,
            &cfg.attack,
        )?);
    }
    Ok((preds, attacked_idx, results))
}

/// Attack a model over a labelled corpus and report accuracy, attack
/// success rate (denominator: correctly classified examples only), and the
/// replacement rate.
pub fn evaluate_robustness(
    bundle: &mut EncoderBundle,
    corpus: &Corpus,
    table: &SynonymEmbeddingTable,
    cfg: &EvalConfig,
) -> Result<RobustnessEvaluation> {
    cfg.validate()?;
    check_model_binding(bundle, corpus)?;
    let examples_owned = evaluated_slice(corpus, cfg)?;
    let examples: Vec<&TokenizedExample> = examples_owned.iter().collect();

    let (preds, attacked_idx, results) = attack_correct(bundle, &examples, corpus, table, cfg)?;

    // Final predictions on the perturbed examples, for the per-example rows.
    let perturbed_refs: Vec<&TokenizedExample> = results.iter().map(|r| &r.perturbed).collect();
    let adv_preds = predictions(bundle, &perturbed_refs, cfg.batch_size)?;

    let mut attacked_iter = attacked_idx
        .iter()
        .zip(results.iter())
        .zip(adv_preds.iter())
        .peekable();
    let mut per_example = Vec::with_capacity(examples.len());
    for (i, ex) in examples.iter().enumerate() {
        let label = ex.label.expect("labels checked");
        let mut attack = None;
        if let Some(((&idx, result), &adv_pred)) = attacked_iter.peek() {
            if idx == i {
                let success = result.success == Some(true);
                debug_assert_eq!(
                    success,
                    adv_pred != label,
                    "attack success bookkeeping must agree with re-classification"
                );
                let replaced = result.replaced_indices.len();
                attack = Some(AttackedOutcome {
                    success,
                    adversarial_prediction: adv_pred,
                    replaced_words: replaced,
                    words: ex.words.len(),
                    replacement_fraction: replaced as f64 / ex.words.len() as f64,
                    queries: result.queries,
                });
                attacked_iter.next();
            }
        }
        per_example.push(ExampleOutcome {
            id: ex.id.clone(),
            label,
            clean_prediction: preds[i],
            correct: Some(preds[i]) == ex.label,
            attack,
        });
    }

    let evaluated = examples.len();
    let attacked = attacked_idx.len();
    let successes = per_example
        .iter()
        .filter_map(|o| o.attack.as_ref())
        .filter(|a| a.success)
        .count();
    let success_rate = (attacked > 0).then(|| successes as f64 / attacked as f64);

    let fractions: Vec<f64> = per_example
        .iter()
        .filter_map(|o| o.attack.as_ref())
        .filter(|a| match cfg.replacement_mode {
            ReplacementAveraging::SuccessfulOnly => a.success,
            ReplacementAveraging::AllAttacked => true,
        })
        .map(|a| a.replacement_fraction)
        .collect();
    let replacement_rate =
        (!fractions.is_empty()).then(|| fractions.iter().sum::<f64>() / fractions.len() as f64);

    Ok(RobustnessEvaluation {
        report: RobustnessReport {
            dataset: corpus.fingerprint(),
            examples: evaluated,
            clean_accuracy: per_example.iter().filter(|o| o.correct).count() as f64
                / evaluated as f64,
            attacked,
            successes,
            success_rate,
            replacement_rate,
            replacement_mode: cfg.replacement_mode,
            budget: BudgetSpec::from(&cfg.attack),
            per_example,
        },
        adversarial: results.into_iter().map(|r| r.perturbed).collect(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferReport {
    pub dataset: String,
    pub budget: BudgetSpec,
    /// Perturbations generated against the source model (its correctly
    /// classified subset).
    pub generated: usize,
    /// Of those, examples the destination model classifies correctly clean.
    pub eligible: usize,
    /// Eligible perturbations the destination model misclassifies.
    pub successes: usize,
    /// Absent when nothing was eligible.
    pub success_rate: Option<f64>,
}

/// Generate adversarial examples against `src` and measure how often they
/// fool `dst`, over the subset `dst` classifies correctly in clean form.
///
/// With `dst` parameter-identical to `src` this reproduces
/// [`evaluate_robustness`]'s success rate exactly.
pub fn transferability_eval(
    src: &mut EncoderBundle,
    dst: &EncoderBundle,
    corpus: &Corpus,
    table: &SynonymEmbeddingTable,
    cfg: &EvalConfig,
) -> Result<TransferReport> {
    cfg.validate()?;
    check_model_binding(src, corpus)?;
    check_model_binding(dst, corpus)?;
    if src.subword_id != dst.subword_id {
        return Err(Error::contract(
            "source and destination models use different vocabularies".to_string(),
        ));
    }
    if src.cfg.num_classes != dst.cfg.num_classes {
        return Err(Error::contract(format!(
            "source model has {} classes, destination {}",
            src.cfg.num_classes, dst.cfg.num_classes
        )));
    }

    let examples_owned = evaluated_slice(corpus, cfg)?;
    let examples: Vec<&TokenizedExample> = examples_owned.iter().collect();
    let (_, attacked_idx, results) = attack_correct(src, &examples, corpus, table, cfg)?;

    let dst_clean = predictions(dst, &examples, cfg.batch_size)?;
    let perturbed_refs: Vec<&TokenizedExample> = results.iter().map(|r| &r.perturbed).collect();
    let dst_adv = predictions(dst, &perturbed_refs, cfg.batch_size)?;

    let mut eligible = 0usize;
    let mut successes = 0usize;
    for (k, &i) in attacked_idx.iter().enumerate() {
        let label = examples[i].label.expect("labels checked");
        if dst_clean[i] != label {
            continue;
        }
        eligible += 1;
        if dst_adv[k] != label {
            successes += 1;
        }
    }

    Ok(TransferReport {
        dataset: corpus.fingerprint(),
        budget: BudgetSpec::from(&cfg.attack),
        generated: results.len(),
        eligible,
        successes,
        success_rate: (eligible > 0).then(|| successes as f64 / eligible as f64),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistanceReport {
    /// Mean distance between each clean vector and its counterpart.
    pub d_pos: f64,
    /// Mean off-diagonal distance, counting clean–clean and
    /// clean–counterpart crossings.
    pub d_neg: f64,
    /// Exactly `d_neg - d_pos`.
    pub delta: f64,
    pub m: usize,
}

fn euclidean(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        s += d * d;
    }
    s.sqrt()
}

/// The distance computation on raw vectors; `clean[i]` pairs with
/// `counterpart[i]`.
///
/// `d_pos = Σ_i d(v_i, v_i′) / M` and
/// `d_neg = Σ_i Σ_{j≠i} (d(v_i, v_j) + d(v_i, v_j′)) / (2·M·(M−1))`,
/// both plain means of their terms.
pub fn distance_report_from_vectors(
    clean: &[Array1<f64>],
    counterpart: &[Array1<f64>],
) -> Result<DistanceReport> {
    let m = clean.len();
    if counterpart.len() != m {
        return Err(Error::contract(format!(
            "{} clean vectors but {} counterparts",
            m,
            counterpart.len()
        )));
    }
    if m < 2 {
        return Err(Error::contract(
            "distance study needs at least two pairs".to_string(),
        ));
    }
    let dim = clean[0].len();
    for v in clean.iter().chain(counterpart.iter()) {
        if v.len() != dim {
            return Err(Error::contract("mixed vector widths".to_string()));
        }
    }

    let d_pos = clean
        .iter()
        .zip(counterpart.iter())
        .map(|(a, b)| euclidean(a, b))
        .sum::<f64>()
        / m as f64;

    let mut neg_sum = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            neg_sum += euclidean(&clean[i], &clean[j]) + euclidean(&clean[i], &counterpart[j]);
        }
    }
    let d_neg = neg_sum / (2 * m * (m - 1)) as f64;

    Ok(DistanceReport {
        d_pos,
        d_neg,
        delta: d_neg - d_pos,
        m,
    })
}

fn hidden_vectors(
    bundle: &EncoderBundle,
    examples: &[&TokenizedExample],
    batch_size: usize,
) -> Result<Vec<Array1<f64>>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch_size) {
        let (h, _) = bundle.encode(chunk)?;
        for row in h.rows() {
            out.push(row.to_owned());
        }
    }
    Ok(out)
}

/// Positive/negative distance study on the encoder's sentence
/// representations. `clean[i]` pairs with `adversarial[i]`; the adversarial
/// side is whatever counterpart set the caller fixed (typically generated
/// once against a reference model and reused across settings).
pub fn distance_study(
    bundle: &EncoderBundle,
    clean: &[&TokenizedExample],
    adversarial: &[&TokenizedExample],
) -> Result<DistanceReport> {
    let v = hidden_vectors(bundle, clean, 64)?;
    let v_adv = hidden_vectors(bundle, adversarial, 64)?;
    distance_report_from_vectors(&v, &v_adv)
}

/// Tag attached to each exported embedding row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbeddingTag {
    #[serde(rename = "clean")]
    Clean,
    #[serde(rename = "adversarial")]
    Adversarial,
}

impl EmbeddingTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            EmbeddingTag::Clean => "clean",
            EmbeddingTag::Adversarial => "adversarial",
        }
    }
}

/// One row of an embedding export: the example to encode, its role, and the
/// id linking a clean/adversarial pair together.
pub struct EmbeddingRow<'a> {
    pub example: &'a TokenizedExample,
    pub tag: EmbeddingTag,
    pub pair_id: String,
}

/// A parsed row of a previously exported embedding file.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedEmbedding {
    pub id: String,
    pub tag: String,
    pub pair_id: String,
    pub vector: Vec<f64>,
}

/// Write sentence representations as CSV with header
/// `id,tag,pair_id,v0..v{d-1}`. Floats use the shortest representation
/// that parses back to the identical value.
pub fn export_embeddings(
    bundle: &EncoderBundle,
    rows: &[EmbeddingRow<'_>],
    path: &Path,
) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::config("nothing to export"));
    }
    for row in rows {
        for (what, s) in [("id", &row.example.id), ("pair id", &row.pair_id)] {
            if s.contains(',') || s.contains('\n') {
                return Err(Error::contract(format!(
                    "{what} {s:?} cannot be written to CSV"
                )));
            }
        }
    }

    let examples: Vec<&TokenizedExample> = rows.iter().map(|r| r.example).collect();
    let vectors = hidden_vectors(bundle, &examples, 64)?;
    let dim = vectors[0].len();

    let mut out = String::from("id,tag,pair_id");
    for i in 0..dim {
        out.push_str(&format!(",v{i}"));
    }
    out.push('\n');
    for (row, v) in rows.iter().zip(&vectors) {
        out.push_str(&row.example.id);
        out.push(',');
        out.push_str(row.tag.as_str());
        out.push(',');
        out.push_str(&row.pair_id);
        for x in v.iter() {
            out.push(',');
            out.push_str(&x.to_string());
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Parse a file produced by [`export_embeddings`].
pub fn load_embeddings(path: &Path) -> Result<Vec<LoadedEmbedding>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty embedding file"))?;
    let head: Vec<&str> = header.split(',').collect();
    if head.len() < 4 || head[..3] != ["id", "tag", "pair_id"] {
        return Err(Error::parse(1, format!("unexpected header {header:?}")));
    }
    let dim = head.len() - 3;

    let mut out = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 3 {
            return Err(Error::parse(
                i + 1,
                format!("expected {} fields, found {}", dim + 3, fields.len()),
            ));
        }
        let vector = fields[3..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::parse(i + 1, format!("bad float {f:?}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(LoadedEmbedding {
            id: fields[0].to_string(),
            tag: fields[1].to_string(),
            pair_id: fields[2].to_string(),
            vector,
        });
    }
    Ok(out)
}

/// One measured attack setting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub setting: String,
    /// 0 marks the sequential baseline.
    pub batch_size: usize,
    pub examples: usize,
    pub mean_seconds: f64,
    /// Sample standard deviation of the per-example (sequential) or
    /// per-chunk (batched) timings; 0 when only one sample exists.
    pub stddev_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("setting,batch_size,examples,mean_seconds,stddev_seconds\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.setting, r.batch_size, r.examples, r.mean_seconds, r.stddev_seconds
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn mean_and_stddev(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Time classification-mode attacks per example, sequentially and at the
/// given batch widths, after a short warm-up. The sample — the first
/// `limit` corpus examples, or all of them — must hold at least 100
/// labelled examples so the means carry some weight.
pub fn speed_benchmark(
    bundle: &mut EncoderBundle,
    corpus: &Corpus,
    table: &SynonymEmbeddingTable,
    attack: &AttackConfig,
    batch_sizes: &[usize],
    limit: Option<usize>,
) -> Result<BenchmarkReport> {
    attack.validate()?;
    check_model_binding(bundle, corpus)?;
    if batch_sizes.iter().any(|&b| b == 0) {
        return Err(Error::config("batch sizes must be positive"));
    }
    let n = limit.map_or(corpus.examples.len(), |l| l.min(corpus.examples.len()));
    let examples: Vec<&TokenizedExample> = corpus.examples[..n].iter().collect();
    if examples.len() < 100 {
        return Err(Error::contract(format!(
            "benchmark sample has {} examples; need at least 100",
            examples.len()
        )));
    }
    let objectives: Vec<AttackObjective> = examples
        .iter()
        .map(|ex| {
            ex.label
                .map(|label| AttackObjective::Classification { label })
                .ok_or_else(|| Error::contract(format!("example {} has no label", ex.id)))
        })
        .collect::<Result<_>>()?;
    let provider = TableProvider { table };
    let subword = &corpus.subword;

    // Warm-up: touch every code path once so first-use costs (allocator
    // growth, lazy table setup) stay out of the measured numbers.
    for i in 0..examples.len().min(4) {
        geometry_attack(
            bundle,
            examples[i],
            &objectives[i],
            &provider,
            table,
            subword,
            attack,
        )?;
    }

    let mut rows = Vec::new();

    let mut per_example = Vec::with_capacity(examples.len());
    for (ex, obj) in examples.iter().zip(&objectives) {
        let t0 = Instant::now();
        geometry_attack(bundle, ex, obj, &provider, table, subword, attack)?;
        per_example.push(t0.elapsed().as_secs_f64());
    }
    let (mean, stddev) = mean_and_stddev(&per_example);
    rows.push(BenchmarkRow {
        setting: "sequential".to_string(),
        batch_size: 0,
        examples: examples.len(),
        mean_seconds: mean,
        stddev_seconds: stddev,
    });

    for &b in batch_sizes {
        let mut per_chunk = Vec::new();
        for chunk in examples.chunks(b) {
            let objs: Vec<AttackObjective> = chunk
                .iter()
                .map(|ex| AttackObjective::Classification {
                    label: ex.label.expect("labels checked"),
                })
                .collect();
            let t0 = Instant::now();
            geometry_attack_batched(bundle, chunk, &objs, &provider, table, subword, attack)?;
            per_chunk.push(t0.elapsed().as_secs_f64() / chunk.len() as f64);
        }
        let (mean, stddev) = mean_and_stddev(&per_chunk);
        rows.push(BenchmarkRow {
            setting: format!("batched-{b}"),
            batch_size: b,
            examples: examples.len(),
            mean_seconds: mean,
            stddev_seconds: stddev,
        });
    }

    Ok(BenchmarkReport { rows })
}

/// Everything a queue-size sweep needs besides the corpora: the contrastive
/// pretraining setup (queue size is overridden per run), the clean
/// finetuning setup, and the evaluation setup.
pub struct QueueSweepSetup<'a> {
    pub pretrain: PretrainConfig,
    pub pretrain_attack: AttackConfig,
    pub finetune: FinetuneConfig,
    pub eval: EvalConfig,
    pub table: &'a SynonymEmbeddingTable,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueueSweepRow {
    pub queue_size: usize,
    pub report: RobustnessReport,
}

/// Run the full adversarial-pretrain → clean-finetune → evaluate chain once
/// per queue size, holding every other knob and all seeds fixed, and return
/// one robustness report per size.
pub fn queue_size_sweep(
    setup: &QueueSweepSetup<'_>,
    pretrain_corpus: &Corpus,
    train: &Corpus,
    test: &Corpus,
    sizes: &[usize],
) -> Result<Vec<QueueSweepRow>> {
    if sizes.is_empty() {
        return Err(Error::config("no queue sizes given"));
    }
    if setup.pretrain.scheme != PretrainScheme::Adversarial {
        return Err(Error::config(format!(
            "queue sweep runs adversarial pretraining; configured scheme is `{}`",
            setup.pretrain.scheme
        )));
    }
    if setup.finetune.scheme != FinetuneScheme::Clean {
        return Err(Error::config(format!(
            "queue sweep runs clean finetuning; configured scheme is `{}`",
            setup.finetune.scheme
        )));
    }
    // Reject every bad size up front so a sweep never dies mid-run.
    for &size in sizes {
        if size < setup.pretrain.batch_size {
            return Err(Error::config(format!(
                "queue size {} is smaller than the batch size {}",
                size, setup.pretrain.batch_size
            )));
        }
    }

    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let cfg = PretrainConfig {
            queue_size: size,
            ..setup.pretrain.clone()
        };
        let transform = GeometryTransform {
            table: setup.table,
            attack: setup.pretrain_attack.clone(),
        };
        let outcome = pretrain_contrastive(&cfg, pretrain_corpus, &transform, None)?;
        let mut bundle = outcome.state.pair.query;
        finetune_clean(&setup.finetune, &mut bundle, train)?;
        let eval = evaluate_robustness(&mut bundle, test, setup.table, &setup.eval)?;
        rows.push(QueueSweepRow {
            queue_size: size,
            report: eval.report,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests;
