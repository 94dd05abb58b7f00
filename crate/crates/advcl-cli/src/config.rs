//! Declarative run configuration: one TOML file drives every command.
//!
//! Unknown keys, missing required keys, and type errors are all schema
//! violations and abort with the offending field's path. The defaults
//! encode the documented training recipe, so a minimal file only names
//! what it changes.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use advcl_core::attack::AttackConfig;
use advcl_core::corpus::synth::{Domain, SynthConfig};
use advcl_core::encoder::EncoderConfig;
use advcl_core::evalsuite::{EvalConfig, ReplacementAveraging};
use advcl_core::pipelines::{FinetuneConfig, FinetuneScheme, PretrainConfig, PretrainScheme};

/// The one schema revision this build understands.
pub const SCHEMA_VERSION: u32 = 1;

fn default_seed() -> u64 {
    17
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    /// Required; anything but the supported revision fails closed.
    pub schema_version: u32,
    /// Training and evaluation seed; `--seed` overrides it.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub encoder: EncoderSection,
    #[serde(default)]
    pub pretrain: PretrainSection,
    #[serde(default)]
    pub paraphrase: ParaphraseSection,
    #[serde(default)]
    pub finetune: FinetuneSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub settings: Vec<SettingSection>,
    #[serde(default)]
    pub transfer: TransferSection,
    #[serde(default)]
    pub distances: DistancesSection,
    #[serde(default)]
    pub bench: BenchSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub export: ExportSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Identity of the synthetic language and its corpora.
    pub seed: u64,
    pub classes: u32,
    /// Unlabeled pool for contrastive pretraining.
    pub pretrain_examples: usize,
    /// Labeled finetuning set.
    pub train_examples: usize,
    /// Held-out evaluation set.
    pub test_examples: usize,
    /// "a" or "b"; pretraining may draw from the other domain than
    /// finetuning for out-of-domain studies.
    pub pretrain_domain: String,
    pub finetune_domain: String,
    pub vocab_cap: usize,
    pub len_range: [usize; 2],
    pub markers_range: [usize; 2],
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            seed: 17,
            classes: 2,
            pretrain_examples: 512,
            train_examples: 512,
            test_examples: 128,
            pretrain_domain: "a".into(),
            finetune_domain: "a".into(),
            vocab_cap: 512,
            len_range: [10, 24],
            markers_range: [2, 4],
        }
    }
}

fn parse_domain(s: &str, field: &str) -> Result<Domain> {
    match s.to_ascii_lowercase().as_str() {
        "a" => Ok(Domain::A),
        "b" => Ok(Domain::B),
        other => bail!("dataset.{field}: unknown domain {other:?}, expected \"a\" or \"b\""),
    }
}

impl DatasetSection {
    pub fn pretrain_domain(&self) -> Result<Domain> {
        parse_domain(&self.pretrain_domain, "pretrain_domain")
    }

    pub fn finetune_domain(&self) -> Result<Domain> {
        parse_domain(&self.finetune_domain, "finetune_domain")
    }

    pub fn synth_config(&self, domain: Domain, n_examples: usize) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            n_examples,
            num_classes: self.classes,
            domain,
            len_range: (self.len_range[0], self.len_range[1]),
            markers_range: (self.markers_range[0], self.markers_range[1]),
            vocab_cap: self.vocab_cap,
            ..SynthConfig::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub max_len: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff: usize,
    pub proj_hidden: usize,
    pub proj_dim: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            max_len: 32,
            dim: 64,
            layers: 2,
            heads: 4,
            ff: 128,
            proj_hidden: 64,
            proj_dim: 32,
        }
    }
}

impl EncoderSection {
    pub fn encoder_config(&self, vocab_size: usize, num_classes: u32) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            max_len: self.max_len,
            dim: self.dim,
            n_layers: self.layers,
            n_heads: self.heads,
            d_ff: self.ff,
            proj_hidden: self.proj_hidden,
            proj_dim: self.proj_dim,
            num_classes,
        }
    }
}

/// An attack parameter block. When a config overrides only some fields of
/// an `attack` table, the missing ones fill in from the standard
/// classification-attack defaults, regardless of which section the table
/// sits in; omitting the table entirely keeps the owning section's
/// documented default instead.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    pub max_iters: usize,
    pub candidate_limit: usize,
    pub cosine_threshold: f64,
    pub budget_fraction: f64,
    pub budget_cap: usize,
    pub no_repeat: bool,
    pub score_by_magnitude: bool,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection::from_core(AttackConfig::finetuning())
    }
}

impl AttackSection {
    fn from_core(cfg: AttackConfig) -> Self {
        AttackSection {
            max_iters: cfg.max_iters,
            candidate_limit: cfg.candidate_limit,
            cosine_threshold: cfg.cosine_threshold,
            budget_fraction: cfg.budget_fraction,
            budget_cap: cfg.budget_cap,
            no_repeat: cfg.no_repeat,
            score_by_magnitude: cfg.score_by_magnitude,
        }
    }

    pub fn attack_config(&self) -> AttackConfig {
        AttackConfig {
            max_iters: self.max_iters,
            candidate_limit: self.candidate_limit,
            cosine_threshold: self.cosine_threshold,
            budget_fraction: self.budget_fraction,
            budget_cap: self.budget_cap,
            no_repeat: self.no_repeat,
            score_by_magnitude: self.score_by_magnitude,
        }
    }
}

fn pretraining_attack() -> AttackSection {
    AttackSection::from_core(AttackConfig::pretraining())
}

fn finetuning_attack() -> AttackSection {
    AttackSection::from_core(AttackConfig::finetuning())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    /// "np", "btcl", or "adcl"; settings entries override it.
    pub scheme: String,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub tau: f64,
    pub momentum: f64,
    pub queue_size: usize,
    pub log_every: usize,
    pub attack: AttackSection,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            scheme: "adcl".into(),
            steps: 2000,
            batch_size: 16,
            lr: 3e-4,
            warmup_steps: 100,
            tau: 0.07,
            momentum: 0.999,
            queue_size: 1024,
            log_every: 10,
            attack: pretraining_attack(),
        }
    }
}

impl PretrainSection {
    pub fn scheme(&self) -> Result<PretrainScheme> {
        self.scheme
            .parse()
            .map_err(|e| anyhow!("pretrain.scheme: {e}"))
    }

    pub fn pretrain_config(
        &self,
        scheme: PretrainScheme,
        encoder: EncoderConfig,
        seed: u64,
    ) -> PretrainConfig {
        let mut cfg = PretrainConfig::new(scheme, encoder, seed);
        cfg.steps = self.steps;
        cfg.batch_size = self.batch_size;
        cfg.lr = self.lr;
        cfg.warmup_steps = self.warmup_steps;
        cfg.tau = self.tau;
        cfg.momentum = self.momentum;
        cfg.queue_size = self.queue_size;
        cfg.log_every = self.log_every;
        cfg
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParaphraseSection {
    pub swap_rate: f64,
    pub reorder_rate: f64,
    pub cosine_threshold: f64,
    pub candidate_limit: usize,
    pub min_forced_len: usize,
}

impl Default for ParaphraseSection {
    fn default() -> Self {
        ParaphraseSection {
            swap_rate: 0.15,
            reorder_rate: 0.3,
            cosine_threshold: 0.5,
            candidate_limit: 8,
            min_forced_len: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneSection {
    /// "ftc" or "adv"; settings entries override it.
    pub scheme: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub log_every: usize,
    /// Per-batch adversarial-generation timeout; 0 skips attacks outright,
    /// absence means no timeout.
    pub attack_timeout_ms: Option<u64>,
    /// Pretraining state file to start from; empty means a fresh encoder.
    pub checkpoint: String,
    /// Serialized corpus to train on instead of the synthesized training
    /// set (for instance a pre-generated augmented dataset).
    pub dataset: String,
    pub attack: AttackSection,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        FinetuneSection {
            scheme: "ftc".into(),
            epochs: 3,
            batch_size: 16,
            lr: 3e-4,
            warmup_steps: 0,
            log_every: 10,
            attack_timeout_ms: None,
            checkpoint: String::new(),
            dataset: String::new(),
            attack: finetuning_attack(),
        }
    }
}

impl FinetuneSection {
    pub fn scheme(&self) -> Result<FinetuneScheme> {
        self.scheme
            .parse()
            .map_err(|e| anyhow!("finetune.scheme: {e}"))
    }

    pub fn finetune_config(&self, scheme: FinetuneScheme, seed: u64) -> FinetuneConfig {
        let mut cfg = FinetuneConfig::new(scheme, seed);
        cfg.epochs = self.epochs;
        cfg.batch_size = self.batch_size;
        cfg.lr = self.lr;
        cfg.warmup_steps = self.warmup_steps;
        cfg.log_every = self.log_every;
        cfg.attack_timeout_ms = self.attack_timeout_ms;
        cfg.attack = self.attack.attack_config();
        cfg
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Evaluate only this many test examples; absent means all.
    pub limit: Option<usize>,
    pub batch_size: usize,
    /// "successful-only" or "all-attacked".
    pub replacement_mode: String,
    pub attack: AttackSection,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            limit: None,
            batch_size: 64,
            replacement_mode: "successful-only".into(),
            attack: finetuning_attack(),
        }
    }
}

impl EvalSection {
    pub fn eval_config(&self) -> Result<EvalConfig> {
        let mode = match self.replacement_mode.as_str() {
            "successful-only" => ReplacementAveraging::SuccessfulOnly,
            "all-attacked" => ReplacementAveraging::AllAttacked,
            other => bail!(
                "eval.replacement_mode: unknown mode {other:?}, expected \
                 \"successful-only\" or \"all-attacked\""
            ),
        };
        let mut cfg = EvalConfig::new(self.attack.attack_config());
        cfg.replacement_mode = mode;
        cfg.limit = self.limit;
        cfg.batch_size = self.batch_size;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Saved model to act on; empty means train one in process from the
    /// base pretrain/finetune schemes.
    pub checkpoint: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingSection {
    pub name: String,
    pub pretrain: String,
    pub finetune: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferSection {
    /// Setting names (from `[[settings]]`) acting as attack source and
    /// destination; both directions are evaluated.
    pub src: String,
    pub dst: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistancesSection {
    /// Setting whose model generates the shared adversarial pairs; empty
    /// means the first setting.
    pub reference: String,
    /// Number of clean/adversarial pairs to measure.
    pub pairs: usize,
}

impl Default for DistancesSection {
    fn default() -> Self {
        DistancesSection {
            reference: String::new(),
            pairs: 32,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub batch_sizes: Vec<usize>,
    /// Sample size drawn from the training set; at least 100.
    pub limit: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            batch_sizes: vec![64],
            limit: 110,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub queue_sizes: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            queue_sizes: vec![256, 1024, 4096],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportSection {
    /// Attacked examples to embed (clean + adversarial rows each).
    pub limit: usize,
}

impl Default for ExportSection {
    fn default() -> Self {
        ExportSection { limit: 16 }
    }
}

/// Command-line overrides applied on top of the parsed file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub limit: Option<usize>,
    pub budget: Option<f64>,
}

impl ConfigFile {
    /// Parse and version-check a config file, then apply CLI overrides.
    pub fn load(path: &Path, overrides: Overrides) -> Result<ConfigFile> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let mut cfg: ConfigFile = toml::from_str(&text)
            .map_err(|e| anyhow!("configuration error in {}: {e}", path.display()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            bail!(
                "schema_version: config declares version {}, but this build \
                 only understands version {SCHEMA_VERSION}; refusing to guess",
                cfg.schema_version
            );
        }
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(limit) = overrides.limit {
            cfg.eval.limit = Some(limit);
        }
        if let Some(budget) = overrides.budget {
            cfg.eval.attack.budget_fraction = budget;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cheap semantic checks with field paths; deeper validation happens in
    /// the library once corpora exist.
    fn validate(&self) -> Result<()> {
        self.dataset.pretrain_domain()?;
        self.dataset.finetune_domain()?;
        self.pretrain.scheme()?;
        self.finetune.scheme()?;
        self.eval.eval_config()?;
        if self.dataset.classes < 2 {
            bail!("dataset.classes: need at least 2 classes, got {}", self.dataset.classes);
        }
        if self.dataset.test_examples == 0 {
            bail!("dataset.test_examples: must be positive");
        }
        if self.dataset.len_range[0] > self.dataset.len_range[1] {
            bail!(
                "dataset.len_range: lower bound {} exceeds upper bound {}",
                self.dataset.len_range[0],
                self.dataset.len_range[1]
            );
        }
        let mut seen = std::collections::HashSet::new();
        for s in &self.settings {
            s.pretrain
                .parse::<PretrainScheme>()
                .map_err(|e| anyhow!("settings.{}.pretrain: {e}", s.name))?;
            s.finetune
                .parse::<FinetuneScheme>()
                .map_err(|e| anyhow!("settings.{}.finetune: {e}", s.name))?;
            if s.name.is_empty() || s.name.contains(',') || s.name.contains('/') {
                bail!("settings: name {:?} must be non-empty without ',' or '/'", s.name);
            }
            if !seen.insert(s.name.clone()) {
                bail!("settings: duplicate name {:?}", s.name);
            }
        }
        Ok(())
    }

    /// The experiment settings to run: the declared list, or a single one
    /// assembled from the base scheme fields.
    pub fn effective_settings(&self) -> Result<Vec<ResolvedSetting>> {
        if self.settings.is_empty() {
            let pretrain = self.pretrain.scheme()?;
            let finetune = self.finetune.scheme()?;
            return Ok(vec![ResolvedSetting {
                name: format!("{pretrain}-{finetune}"),
                pretrain,
                finetune,
            }]);
        }
        self.settings
            .iter()
            .map(|s| {
                Ok(ResolvedSetting {
                    name: s.name.clone(),
                    pretrain: s.pretrain.parse().map_err(|e| anyhow!("{e}"))?,
                    finetune: s.finetune.parse().map_err(|e| anyhow!("{e}"))?,
                })
            })
            .collect()
    }

    pub fn setting_named(&self, name: &str, field: &str) -> Result<ResolvedSetting> {
        self.effective_settings()?
            .into_iter()
            .find(|s| s.name == name)
            .ok_or_else(|| anyhow!("{field}: no setting named {name:?} is declared"))
    }
}

/// A fully parsed experiment setting: which pretraining and finetuning
/// schemes to combine.
#[derive(Debug, Clone)]
pub struct ResolvedSetting {
    pub name: String,
    pub pretrain: PretrainScheme,
    pub finetune: FinetuneScheme,
}

/// Root for registries and default output directories.
pub fn data_dir() -> PathBuf {
    std::env::var_os("ADVCL_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(".advcl"))
}

/// Optional corpus cache; generation is cheap, so absence just means
/// regeneration.
pub fn cache_dir() -> Option<PathBuf> {
    std::env::var_os("ADVCL_CACHE_DIR").map(PathBuf::from)
}
