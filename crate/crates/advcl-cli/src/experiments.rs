//! Shared machinery behind the commands: corpus synthesis (with optional
//! caching), the pretrain→finetune chain for one experiment setting, and
//! model acquisition for the single-model commands.

use std::collections::HashSet;
use std::path::Path;

use anyhow::{bail, Context, Result};

use advcl_core::attack::SynonymEmbeddingTable;
use advcl_core::corpus::synth::{synth_corpus, Domain, Language, SynthConfig};
use advcl_core::corpus::Corpus;
use advcl_core::encoder::{EncoderBundle, EncoderConfig};
use advcl_core::pipelines::{
    finetune_adversarial, finetune_clean, pretrain_contrastive, BackTranslationTransform,
    FinetuneScheme, GeometryTransform, IdentityTransform, ParaphraseConfig, PretrainScheme,
    StepMetric, TrainState,
};

use crate::config::{cache_dir, ConfigFile, ResolvedSetting};
use crate::manifest::{read_verified, sha256_bytes, RunRecorder};

/// Everything derived from the dataset section: corpora for both stages,
/// the language they were drawn from, and its synonym table.
pub struct Datasets {
    pub pretrain: Corpus,
    pub train: Corpus,
    pub test: Corpus,
    pub language: Language,
    pub table: SynonymEmbeddingTable,
}

/// Synthesize a corpus, going through `ADVCL_CACHE_DIR` when it is set.
/// A cache entry is keyed by the full generation config; unreadable entries
/// are regenerated and overwritten.
fn synth_cached(cfg: &SynthConfig) -> Result<Corpus> {
    let key = sha256_bytes(
        serde_json::to_string(cfg)
            .context("synthesis config serialization")?
            .as_bytes(),
    );
    let cached = cache_dir().map(|d| d.join(format!("corpus-{}.json", &key[..16])));
    if let Some(path) = &cached {
        if let Ok(bytes) = std::fs::read(path) {
            if let Ok(corpus) = serde_json::from_slice::<Corpus>(&bytes) {
                return Ok(corpus);
            }
        }
    }
    let (corpus, _) = synth_corpus(cfg)?;
    if let Some(path) = &cached {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)
                .with_context(|| format!("cannot create cache directory {}", dir.display()))?;
        }
        // Write-then-rename so a concurrent reader never sees a half file.
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(&corpus)?)
            .with_context(|| format!("cannot write cache entry {}", tmp.display()))?;
        std::fs::rename(&tmp, path)
            .with_context(|| format!("cannot finalize cache entry {}", path.display()))?;
    }
    Ok(corpus)
}

pub fn build_datasets(cfg: &ConfigFile) -> Result<Datasets> {
    let ds = &cfg.dataset;
    let finetune_pool = ds
        .train_examples
        .checked_add(ds.test_examples)
        .context("dataset sizes overflow")?;
    let finetune_corpus = synth_cached(&ds.synth_config(ds.finetune_domain()?, finetune_pool))?;
    let (train, test) = finetune_corpus.split_tail(ds.test_examples)?;
    let pretrain = synth_cached(&ds.synth_config(ds.pretrain_domain()?, ds.pretrain_examples))?;
    if pretrain.subword.id() != train.subword.id() {
        bail!(
            "dataset: the pretraining and finetuning corpora disagree on the \
             subword vocabulary; both domains of one seed must share it"
        );
    }
    let language = Language::generate(ds.seed, ds.classes)?;
    let table = SynonymEmbeddingTable::from_rows(language.synonym_vectors())?;
    Ok(Datasets {
        pretrain,
        train,
        test,
        language,
        table,
    })
}

pub fn encoder_config(cfg: &ConfigFile, data: &Datasets) -> EncoderConfig {
    cfg.encoder
        .encoder_config(data.train.subword.vocab_size(), data.train.num_classes)
}

fn paraphrase_config(cfg: &ConfigFile, language: &Language) -> ParaphraseConfig {
    let mut protected = language.marker_words(Domain::A);
    protected.extend(language.marker_words(Domain::B));
    let reorderable: HashSet<String> = language.function_words.iter().cloned().collect();
    let mut pc = ParaphraseConfig::new(protected, reorderable);
    let sec = &cfg.paraphrase;
    pc.swap_rate = sec.swap_rate;
    pc.reorder_rate = sec.reorder_rate;
    pc.cosine_threshold = sec.cosine_threshold;
    pc.candidate_limit = sec.candidate_limit;
    pc.min_forced_len = sec.min_forced_len;
    pc
}

/// Run the configured contrastive pretraining for one scheme and return the
/// resulting training state plus its metric trail.
pub fn run_pretrain(
    cfg: &ConfigFile,
    data: &Datasets,
    scheme: PretrainScheme,
) -> Result<(TrainState, Vec<StepMetric>, usize)> {
    let pretrain_cfg =
        cfg.pretrain
            .pretrain_config(scheme, encoder_config(cfg, data), cfg.seed);
    let outcome = match scheme {
        PretrainScheme::NoPretrain => {
            pretrain_contrastive(&pretrain_cfg, &data.pretrain, &IdentityTransform, None)?
        }
        PretrainScheme::BackTranslation => {
            let transform = BackTranslationTransform {
                table: &data.table,
                cfg: paraphrase_config(cfg, &data.language),
                seed: cfg.seed,
            };
            pretrain_contrastive(&pretrain_cfg, &data.pretrain, &transform, None)?
        }
        PretrainScheme::Adversarial => {
            let transform = GeometryTransform {
                table: &data.table,
                attack: cfg.pretrain.attack.attack_config(),
            };
            pretrain_contrastive(&pretrain_cfg, &data.pretrain, &transform, None)?
        }
    };
    Ok((outcome.state, outcome.metrics, outcome.transform_failures))
}

/// A model taken through the full chain for one setting.
pub struct TrainedSetting {
    pub model: EncoderBundle,
    pub pretrain_metrics: Vec<StepMetric>,
    pub finetune_metrics: Vec<StepMetric>,
}

pub fn train_setting(
    cfg: &ConfigFile,
    data: &Datasets,
    setting: &ResolvedSetting,
) -> Result<TrainedSetting> {
    let (state, pretrain_metrics, failures) = run_pretrain(cfg, data, setting.pretrain)?;
    let mut model = state.pair.query;
    eprintln!(
        "debug: {} pretrained params {} transform_failures {}",
        setting.name,
        crate::manifest::sha256_bytes(
            advcl_core::encoder::param_checksum(&model).as_bytes()
        ),
        failures
    );
    let train_corpus = finetune_corpus(cfg, data)?;
    let ft_cfg = cfg.finetune.finetune_config(setting.finetune, cfg.seed);
    let ft_out = match setting.finetune {
        FinetuneScheme::Clean => finetune_clean(&ft_cfg, &mut model, &train_corpus)?,
        FinetuneScheme::Adversarial => {
            finetune_adversarial(&ft_cfg, &mut model, &train_corpus, &data.table)?
        }
    };
    Ok(TrainedSetting {
        model,
        pretrain_metrics,
        finetune_metrics: ft_out.metrics,
    })
}

/// The corpus finetuning trains on: the synthesized training split, or the
/// file named in `finetune.dataset` (hash-verified against its manifest).
pub fn finetune_corpus(cfg: &ConfigFile, data: &Datasets) -> Result<Corpus> {
    if cfg.finetune.dataset.is_empty() {
        return Ok(data.train.clone());
    }
    let path = Path::new(&cfg.finetune.dataset);
    let bytes = read_verified(path)?;
    let corpus: Corpus = serde_json::from_slice(&bytes)
        .with_context(|| format!("malformed corpus file {}", path.display()))?;
    if corpus.subword.id() != data.train.subword.id() {
        bail!(
            "finetune.dataset: corpus {} uses a different subword vocabulary \
             than the configured dataset",
            path.display()
        );
    }
    Ok(corpus)
}

/// The model a single-model command acts on: loaded from
/// `model.checkpoint` when set (recorded as a verified input), otherwise
/// trained in process from the base schemes.
pub fn obtain_model(
    cfg: &ConfigFile,
    data: &Datasets,
    recorder: &mut RunRecorder,
) -> Result<(EncoderBundle, String)> {
    if !cfg.model.checkpoint.is_empty() {
        let path = Path::new(&cfg.model.checkpoint);
        read_verified(path)?;
        recorder.add_input(path)?;
        let model = EncoderBundle::load(path, &data.train.subword)?;
        if model.cfg.num_classes != data.train.num_classes {
            bail!(
                "model.checkpoint: model has {} classes, dataset declares {}",
                model.cfg.num_classes,
                data.train.num_classes
            );
        }
        return Ok((model, format!("checkpoint:{}", path.display())));
    }
    let setting = &cfg.effective_settings()?[0];
    let trained = train_setting(cfg, data, setting)?;
    Ok((trained.model, format!("trained:{}", setting.name)))
}
