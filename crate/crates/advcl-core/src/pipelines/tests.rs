use std::collections::HashSet;
use std::str::FromStr;

use super::*;
use crate::attack::{AttackConfig, SynonymEmbeddingTable};
use crate::corpus::synth::{synth_corpus, Domain, Language, SynthConfig};
use crate::encoder::{argmax_rows, param_checksum, EncoderBundle, EncoderConfig};
use crate::moco::param_diff_norm;

fn small_corpus(seed: u64, n: usize) -> (Corpus, Language) {
    synth_corpus(&SynthConfig {
        seed,
        n_examples: n,
        len_range: (8, 14),
        markers_range: (1, 2),
        ..SynthConfig::default()
    })
    .expect("synthetic corpus generation is infallible for valid configs")
}

fn small_encoder(corpus: &Corpus) -> EncoderConfig {
    EncoderConfig {
        vocab_size: corpus.subword.vocab_size(),
        max_len: 24,
        dim: 24,
        n_layers: 1,
        n_heads: 2,
        d_ff: 48,
        proj_hidden: 24,
        proj_dim: 16,
        num_classes: corpus.num_classes,
    }
}

fn small_pretrain(scheme: PretrainScheme, corpus: &Corpus, seed: u64) -> PretrainConfig {
    let mut cfg = PretrainConfig::new(scheme, small_encoder(corpus), seed);
    cfg.steps = 12;
    cfg.batch_size = 4;
    cfg.queue_size = 32;
    cfg.momentum = 0.99;
    cfg.warmup_steps = 2;
    cfg.lr = 1e-3;
    cfg.log_every = 1;
    cfg
}

fn small_attack() -> AttackConfig {
    AttackConfig {
        max_iters: 3,
        candidate_limit: 4,
        ..AttackConfig::pretraining()
    }
}

fn table_for(lang: &Language) -> SynonymEmbeddingTable {
    SynonymEmbeddingTable::from_rows(lang.synonym_vectors())
        .expect("language embeddings form a valid table")
}

fn protected_words(lang: &Language) -> HashSet<String> {
    let mut p = lang.marker_words(Domain::A);
    p.extend(lang.marker_words(Domain::B));
    p
}

fn paraphrase_cfg(lang: &Language) -> ParaphraseConfig {
    ParaphraseConfig::new(
        protected_words(lang),
        lang.function_words.iter().cloned().collect(),
    )
}

fn training_accuracy(bundle: &EncoderBundle, corpus: &Corpus) -> f64 {
    let mut correct = 0usize;
    for chunk in corpus.examples.chunks(32) {
        let refs: Vec<&TokenizedExample> = chunk.iter().collect();
        let logits = bundle.classify(&refs).expect("inference cannot fail here");
        let preds = argmax_rows(&logits);
        for (ex, p) in chunk.iter().zip(preds) {
            if ex.label == Some(p) {
                correct += 1;
            }
        }
    }
    correct as f64 / corpus.examples.len() as f64
}

// ---------------------------------------------------------------- schemes

#[test]
fn scheme_tags_round_trip() {
    for (tag, scheme) in [
        ("np", PretrainScheme::NoPretrain),
        ("btcl", PretrainScheme::BackTranslation),
        ("adcl", PretrainScheme::Adversarial),
    ] {
        assert_eq!(PretrainScheme::from_str(tag).unwrap(), scheme);
        assert_eq!(
            PretrainScheme::from_str(&tag.to_uppercase()).unwrap(),
            scheme,
            "tags are case-insensitive"
        );
        assert_eq!(scheme.to_string(), tag);
    }
    for (tag, scheme) in [
        ("ftc", FinetuneScheme::Clean),
        ("adv", FinetuneScheme::Adversarial),
    ] {
        assert_eq!(FinetuneScheme::from_str(tag).unwrap(), scheme);
        assert_eq!(scheme.to_string(), tag);
    }
    assert!(
        PretrainScheme::from_str("moco").is_err(),
        "unknown tag must be rejected"
    );
    assert!(FinetuneScheme::from_str("clean?").is_err());
}

#[test]
fn pretrain_config_rejections() {
    let (corpus, _) = small_corpus(3, 12);
    let base = small_pretrain(PretrainScheme::BackTranslation, &corpus, 0);

    let qsmall = PretrainConfig {
        queue_size: 2,
        ..base.clone()
    };
    assert!(
        qsmall.validate(&corpus).is_err(),
        "queue smaller than a batch must be rejected"
    );
    // The no-pretraining scheme never touches the queue, so the same sizes
    // pass there.
    let np = PretrainConfig {
        scheme: PretrainScheme::NoPretrain,
        queue_size: 2,
        ..base.clone()
    };
    assert!(np.validate(&corpus).is_ok());

    let mut wrong_vocab = base.clone();
    wrong_vocab.encoder.vocab_size += 1;
    assert!(wrong_vocab.validate(&corpus).is_err());

    let short_schedule = PretrainConfig {
        schedule_steps: Some(base.steps - 1),
        ..base
    };
    assert!(
        short_schedule.validate(&corpus).is_err(),
        "schedule horizon shorter than the run must be rejected"
    );
}

// ------------------------------------------------------------ paraphraser

#[test]
fn paraphrase_is_deterministic_per_seed() {
    let (corpus, lang) = small_corpus(5, 16);
    let table = table_for(&lang);
    let cfg = paraphrase_cfg(&lang);
    let ex = &corpus.examples[0];

    let a = back_translation_standin(ex, &table, &corpus.subword, &cfg, 41).unwrap();
    let b = back_translation_standin(ex, &table, &corpus.subword, &cfg, 41).unwrap();
    assert_eq!(a.words, b.words, "same seed must reproduce the same output");

    let differs = (42..48).any(|seed| {
        let c = back_translation_standin(ex, &table, &corpus.subword, &cfg, seed).unwrap();
        c.words != a.words
    });
    assert!(differs, "different seeds should eventually paraphrase differently");
}

#[test]
fn paraphrase_changes_every_long_sentence() {
    let (corpus, lang) = small_corpus(6, 40);
    let table = table_for(&lang);
    let cfg = paraphrase_cfg(&lang);
    for ex in &corpus.examples {
        assert!(ex.words.len() >= 7, "fixture guarantees long sentences");
        let out = back_translation_standin(ex, &table, &corpus.subword, &cfg, 9).unwrap();
        assert_ne!(
            out.words, ex.words,
            "sentence {} of {} words came back verbatim",
            ex.id,
            ex.words.len()
        );
    }
}

#[test]
fn paraphrase_zero_rates_is_identity() {
    let (corpus, lang) = small_corpus(7, 8);
    let table = table_for(&lang);
    let mut cfg = paraphrase_cfg(&lang);
    cfg.swap_rate = 0.0;
    cfg.reorder_rate = 0.0;
    for ex in &corpus.examples {
        let out = back_translation_standin(ex, &table, &corpus.subword, &cfg, 3).unwrap();
        assert_eq!(out.words, ex.words, "zeroed rates must change nothing");
        assert_eq!(out.subword_ids, ex.subword_ids);
    }
}

#[test]
fn paraphrase_never_touches_protected_words() {
    let (corpus, lang) = small_corpus(8, 24);
    let table = table_for(&lang);
    let mut cfg = paraphrase_cfg(&lang);
    cfg.swap_rate = 0.6; // exaggerate to stress the guard
    cfg.reorder_rate = 0.9;
    let protected = protected_words(&lang);

    let mut seen_protected = 0usize;
    for ex in &corpus.examples {
        for seed in 0..10 {
            let out = back_translation_standin(ex, &table, &corpus.subword, &cfg, seed).unwrap();
            for (i, w) in ex.words.iter().enumerate() {
                if protected.contains(&w.to_lowercase()) {
                    seen_protected += 1;
                    assert_eq!(
                        &out.words[i], w,
                        "protected word {w:?} moved or changed in {}",
                        ex.id
                    );
                }
            }
        }
    }
    assert!(seen_protected > 0, "fixture must actually contain markers");
}

#[test]
fn paraphrase_reorder_only_permutes() {
    let (corpus, lang) = small_corpus(9, 20);
    let table = table_for(&lang);
    let mut cfg = paraphrase_cfg(&lang);
    cfg.swap_rate = 0.0;
    cfg.reorder_rate = 1.0;
    for ex in &corpus.examples {
        let out = back_translation_standin(ex, &table, &corpus.subword, &cfg, 2).unwrap();
        let mut a = ex.words.clone();
        let mut b = out.words.clone();
        a.sort();
        b.sort();
        assert_eq!(a, b, "reordering must preserve the multiset of words");
    }
}

// -------------------------------------------------------------- pretraining

#[test]
fn no_pretrain_returns_fresh_parameters() {
    let (corpus, _) = small_corpus(10, 16);
    let cfg = small_pretrain(PretrainScheme::NoPretrain, &corpus, 77);
    let out = pretrain_contrastive(&cfg, &corpus, &IdentityTransform, None).unwrap();

    assert_eq!(out.state.step, 0);
    assert!(out.metrics.is_empty(), "no steps, no metrics");
    assert_eq!(out.transform_failures, 0);
    assert_eq!(out.state.queue.len(), 0, "nothing was ever enqueued");

    let fresh = EncoderBundle::new(cfg.encoder.clone(), corpus.subword.id(), 77).unwrap();
    assert_eq!(
        param_checksum(&out.state.pair.query),
        param_checksum(&fresh),
        "np must hand back exactly the seed-{} initialization",
        77
    );
    assert_eq!(
        param_checksum(&out.state.pair.key),
        param_checksum(&fresh),
        "key branch starts as a copy of the query branch"
    );
}

#[test]
fn identity_pretraining_reduces_loss() {
    let (corpus, _) = small_corpus(11, 64);
    let mut cfg = small_pretrain(PretrainScheme::BackTranslation, &corpus, 1);
    cfg.steps = 100;
    cfg.batch_size = 8;
    cfg.queue_size = 64;
    cfg.warmup_steps = 5;
    cfg.tau = 0.07;

    let out = pretrain_contrastive(&cfg, &corpus, &IdentityTransform, None).unwrap();
    assert_eq!(out.metrics.len(), 100);
    let early: f64 = out.metrics[..10].iter().map(|m| m.loss).sum::<f64>() / 10.0;
    let late: f64 = out.metrics[90..].iter().map(|m| m.loss).sum::<f64>() / 10.0;
    assert!(
        late < early,
        "contrastive loss should fall over the first 100 steps (early {early:.4}, late {late:.4})"
    );
    assert_eq!(
        out.state.queue.len(),
        cfg.queue_size,
        "queue is prefilled and stays full"
    );
}

#[test]
fn adversarial_positives_are_harder_than_identity() {
    let (corpus, lang) = small_corpus(12, 48);
    let table = table_for(&lang);
    // Warm up with identity views first: at a fresh random init every
    // example projects to nearly the same point, which makes the paired
    // comparison meaningless.
    let mut cfg = small_pretrain(PretrainScheme::BackTranslation, &corpus, 4);
    cfg.steps = 40;
    cfg.batch_size = 8;
    let warm = pretrain_contrastive(&cfg, &corpus, &IdentityTransform, None).unwrap();

    let geo = GeometryTransform {
        table: &table,
        attack: small_attack(),
    };
    let rounds = 6;
    let mut sum_id = 0.0;
    let mut sum_adv = 0.0;
    for k in 0..rounds {
        let mut rng = stage_rng(99, &format!("paired-probe-{k}"));
        let clean: Vec<&TokenizedExample> = (0..cfg.batch_size)
            .map(|_| &corpus.examples[rng.gen_range(0..corpus.examples.len())])
            .collect();

        let mut probe_pair = warm.state.pair.clone();
        let positives: Vec<TokenizedExample> = {
            let mut ctx = TransformContext {
                bundle: &mut probe_pair.query,
                queue: &warm.state.queue,
                tau: cfg.tau,
                subword: &corpus.subword,
                rng: &mut rng,
            };
            geo.transform_batch(&mut ctx, &clean)
                .into_iter()
                .map(|r| r.expect("attack transform cannot fail on this corpus"))
                .collect()
        };
        let pos_refs: Vec<&TokenizedExample> = positives.iter().collect();

        // Same parameters, same queue, same batch — only the positive views
        // differ between the two measurements.
        let mut pair = warm.state.pair.clone();
        let mut queue = warm.state.queue.clone();
        sum_adv += contrastive_batch_loss(&mut pair, &mut queue, &clean, &pos_refs, cfg.tau)
            .unwrap();

        let mut pair = warm.state.pair.clone();
        let mut queue = warm.state.queue.clone();
        sum_id +=
            contrastive_batch_loss(&mut pair, &mut queue, &clean, &clean, cfg.tau).unwrap();
    }
    let mean_adv = sum_adv / rounds as f64;
    let mean_id = sum_id / rounds as f64;
    assert!(
        mean_adv > mean_id,
        "attacked positives must be harder than identity views \
         (adversarial {mean_adv:.4} vs identity {mean_id:.4})"
    );
}

#[test]
fn pretraining_never_reads_labels() {
    let (corpus, lang) = small_corpus(13, 24);
    let table = table_for(&lang);
    let mut rotated = corpus.clone();
    for ex in &mut rotated.examples {
        ex.label = ex.label.map(|l| (l + 1) % corpus.num_classes);
    }

    let mut cfg = small_pretrain(PretrainScheme::Adversarial, &corpus, 6);
    cfg.steps = 6;
    let geo = GeometryTransform {
        table: &table,
        attack: small_attack(),
    };
    let a = pretrain_contrastive(&cfg, &corpus, &geo, None).unwrap();
    let b = pretrain_contrastive(&cfg, &rotated, &geo, None).unwrap();

    assert_eq!(
        param_checksum(&a.state.pair.query),
        param_checksum(&b.state.pair.query),
        "shuffling labels must not change pretraining at all"
    );
    assert_eq!(
        param_checksum(&a.state.pair.key),
        param_checksum(&b.state.pair.key)
    );
    let la: Vec<f64> = a.metrics.iter().map(|m| m.loss).collect();
    let lb: Vec<f64> = b.metrics.iter().map(|m| m.loss).collect();
    assert_eq!(la, lb, "loss curves must match bit for bit");
}

struct AlwaysFails;

impl TransformFn for AlwaysFails {
    fn name(&self) -> &'static str {
        "always-fails"
    }

    fn transform_batch(
        &self,
        _ctx: &mut TransformContext<'_>,
        batch: &[&TokenizedExample],
    ) -> Vec<Result<TokenizedExample>> {
        batch
            .iter()
            .map(|ex| Err(Error::contract(format!("refusing {}", ex.id))))
            .collect()
    }
}

#[test]
fn failed_transforms_fall_back_to_identity() {
    let (corpus, _) = small_corpus(14, 16);
    let mut cfg = small_pretrain(PretrainScheme::BackTranslation, &corpus, 8);
    cfg.steps = 3;

    let out = pretrain_contrastive(&cfg, &corpus, &AlwaysFails, None).unwrap();
    assert_eq!(
        out.transform_failures,
        cfg.steps * cfg.batch_size,
        "every slot of every batch fell back"
    );
    assert_eq!(out.state.step, cfg.steps, "training still ran to completion");
    assert!(out.metrics.iter().all(|m| m.loss.is_finite()));

    // With every positive replaced by the clean example, the run is exactly
    // the identity-transform run.
    let id_out = pretrain_contrastive(&cfg, &corpus, &IdentityTransform, None).unwrap();
    assert_eq!(
        param_checksum(&out.state.pair.query),
        param_checksum(&id_out.state.pair.query)
    );
}

// ------------------------------------------------------------- train state

#[test]
fn train_state_round_trips_bit_exactly() {
    let (corpus, _) = small_corpus(15, 16);
    let mut cfg = small_pretrain(PretrainScheme::BackTranslation, &corpus, 2);
    cfg.steps = 4;
    let out = pretrain_contrastive(&cfg, &corpus, &IdentityTransform, None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.json");
    out.state.save(&path).unwrap();
    let loaded = TrainState::load(&path, &corpus.subword).unwrap();

    assert_eq!(
        param_checksum(&out.state.pair.query),
        param_checksum(&loaded.pair.query)
    );
    assert_eq!(
        param_checksum(&out.state.pair.key),
        param_checksum(&loaded.pair.key)
    );
    assert_eq!(out.state.queue.snapshot(), loaded.queue.snapshot());
    assert_eq!(out.state.step, loaded.step);
    assert_eq!(out.state.optimizer.step, loaded.optimizer.step);

    let (other, _) = synth_corpus(&SynthConfig {
        seed: 15,
        n_examples: 8,
        vocab_cap: 256,
        ..SynthConfig::default()
    })
    .unwrap();
    let err = TrainState::load(&path, &other.subword).unwrap_err();
    assert!(
        matches!(err, Error::Checkpoint(_)),
        "loading against a different vocabulary must fail closed, got {err}"
    );
}

#[test]
fn resumed_pretraining_matches_uninterrupted() {
    let (corpus, _) = small_corpus(16, 32);
    let mut full = small_pretrain(PretrainScheme::BackTranslation, &corpus, 5);
    full.steps = 20;

    let uninterrupted = pretrain_contrastive(&full, &corpus, &IdentityTransform, None).unwrap();

    // Same schedule, stopped halfway.
    let half = PretrainConfig {
        steps: 10,
        schedule_steps: Some(20),
        ..full.clone()
    };
    let first = pretrain_contrastive(&half, &corpus, &IdentityTransform, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.json");
    first.state.save(&path).unwrap();

    let loaded = TrainState::load(&path, &corpus.subword).unwrap();
    let resumed =
        pretrain_contrastive(&full, &corpus, &IdentityTransform, Some(loaded)).unwrap();

    assert_eq!(resumed.state.step, 20);
    assert_eq!(
        param_checksum(&uninterrupted.state.pair.query),
        param_checksum(&resumed.state.pair.query),
        "ten resumed steps must equal the uninterrupted run bit for bit"
    );
    assert_eq!(
        param_checksum(&uninterrupted.state.pair.key),
        param_checksum(&resumed.state.pair.key)
    );
    assert_eq!(
        uninterrupted.state.queue.snapshot(),
        resumed.state.queue.snapshot()
    );

    let tail: Vec<f64> = uninterrupted.metrics[10..].iter().map(|m| m.loss).collect();
    let cont: Vec<f64> = resumed.metrics.iter().map(|m| m.loss).collect();
    assert_eq!(tail, cont, "resumed losses must continue the original curve");
}

#[test]
fn resume_rejects_mismatched_configuration() {
    let (corpus, _) = small_corpus(17, 16);
    let mut cfg = small_pretrain(PretrainScheme::BackTranslation, &corpus, 3);
    cfg.steps = 2;
    let out = pretrain_contrastive(&cfg, &corpus, &IdentityTransform, None).unwrap();

    let grown = PretrainConfig {
        steps: 4,
        queue_size: cfg.queue_size * 2,
        ..cfg.clone()
    };
    let err =
        pretrain_contrastive(&grown, &corpus, &IdentityTransform, Some(out.state.clone()))
            .unwrap_err();
    assert!(matches!(err, Error::Checkpoint(_)), "got {err}");

    let hotter = PretrainConfig {
        steps: 4,
        lr: cfg.lr * 2.0,
        ..cfg.clone()
    };
    let err =
        pretrain_contrastive(&hotter, &corpus, &IdentityTransform, Some(out.state.clone()))
            .unwrap_err();
    assert!(
        matches!(err, Error::Checkpoint(_)),
        "a different learning-rate schedule must fail closed, got {err}"
    );

    let err = pretrain_contrastive(
        &PretrainConfig {
            scheme: PretrainScheme::NoPretrain,
            ..cfg.clone()
        },
        &corpus,
        &IdentityTransform,
        Some(out.state),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Config(_)), "np has nothing to resume");
}

// -------------------------------------------------------------- finetuning

#[test]
fn finetune_zero_epochs_changes_nothing() {
    let (corpus, _) = small_corpus(18, 12);
    let mut bundle = EncoderBundle::new(small_encoder(&corpus), corpus.subword.id(), 1).unwrap();
    let before = param_checksum(&bundle);

    let mut cfg = FinetuneConfig::new(FinetuneScheme::Clean, 2);
    cfg.epochs = 0;
    let out = finetune_clean(&cfg, &mut bundle, &corpus).unwrap();

    assert_eq!(param_checksum(&bundle), before, "zero epochs is a no-op");
    assert!(out.metrics.is_empty());
}

#[test]
fn finetune_clean_fits_the_training_set() {
    let (corpus, _) = small_corpus(19, 96);
    let mut bundle = EncoderBundle::new(small_encoder(&corpus), corpus.subword.id(), 3).unwrap();

    let mut cfg = FinetuneConfig::new(FinetuneScheme::Clean, 9);
    cfg.epochs = 4;
    cfg.batch_size = 8;
    cfg.lr = 1e-3;
    cfg.log_every = 5;
    let out = finetune_clean(&cfg, &mut bundle, &corpus).unwrap();

    let acc = training_accuracy(&bundle, &corpus);
    assert!(
        acc > 0.85,
        "marker words make the synthetic task easy; got accuracy {acc:.3}"
    );
    let last = out.metrics.last().expect("steps were logged");
    assert!(last.accuracy.is_some(), "finetuning logs batch accuracy");
}

#[test]
fn finetune_entry_points_check_their_scheme() {
    let (corpus, lang) = small_corpus(20, 8);
    let table = table_for(&lang);
    let mut bundle = EncoderBundle::new(small_encoder(&corpus), corpus.subword.id(), 1).unwrap();

    let adv_cfg = FinetuneConfig::new(FinetuneScheme::Adversarial, 0);
    assert!(matches!(
        finetune_clean(&adv_cfg, &mut bundle, &corpus),
        Err(Error::Config(_))
    ));
    let clean_cfg = FinetuneConfig::new(FinetuneScheme::Clean, 0);
    assert!(matches!(
        finetune_adversarial(&clean_cfg, &mut bundle, &corpus, &table),
        Err(Error::Config(_))
    ));
}

#[test]
fn finetune_requires_labels() {
    let (corpus, _) = small_corpus(21, 8);
    let mut unlabeled = corpus.clone();
    for ex in &mut unlabeled.examples {
        ex.label = None;
    }
    let mut bundle = EncoderBundle::new(small_encoder(&corpus), corpus.subword.id(), 1).unwrap();
    let cfg = FinetuneConfig::new(FinetuneScheme::Clean, 0);
    let err = finetune_clean(&cfg, &mut bundle, &unlabeled).unwrap_err();
    assert!(matches!(err, Error::Contract(_)), "got {err}");
}

fn adv_cfg(seed: u64) -> FinetuneConfig {
    let mut cfg = FinetuneConfig::new(FinetuneScheme::Adversarial, seed);
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.lr = 1e-3;
    cfg.attack = AttackConfig {
        max_iters: 3,
        candidate_limit: 4,
        ..AttackConfig::finetuning()
    };
    cfg.log_every = 1;
    cfg
}

#[test]
fn adversarial_finetuning_trains_on_the_union() {
    let (corpus, lang) = small_corpus(22, 24);
    let table = table_for(&lang);
    let mut bundle = EncoderBundle::new(small_encoder(&corpus), corpus.subword.id(), 4).unwrap();

    let cfg = adv_cfg(11);
    let out = finetune_adversarial(&cfg, &mut bundle, &corpus, &table).unwrap();

    assert_eq!(
        out.adversarial_rows,
        corpus.examples.len(),
        "first epoch is clean, second attacks every row once"
    );
    assert_eq!(out.attack_timeouts, 0);
    assert_eq!(out.attack_failures, 0);
    let steps = cfg.epochs * corpus.examples.len().div_ceil(cfg.batch_size);
    assert_eq!(out.metrics.len(), steps, "log_every=1 logs every step");
}

#[test]
fn zero_budget_attacks_degenerate_to_clean_training() {
    let (corpus, lang) = small_corpus(23, 32);
    let table = table_for(&lang);

    let mut clean_bundle =
        EncoderBundle::new(small_encoder(&corpus), corpus.subword.id(), 7).unwrap();
    let mut adv_bundle = clean_bundle.clone_parameters();

    let mut clean_cfg = adv_cfg(5);
    clean_cfg.scheme = FinetuneScheme::Clean;
    finetune_clean(&clean_cfg, &mut clean_bundle, &corpus).unwrap();

    let mut zero_cfg = adv_cfg(5);
    zero_cfg.attack.budget_cap = 0;
    zero_cfg.attack.budget_fraction = 0.0;
    let out = finetune_adversarial(&zero_cfg, &mut adv_bundle, &corpus, &table).unwrap();
    assert_eq!(
        out.adversarial_rows,
        corpus.examples.len(),
        "rows are still produced, just unperturbed"
    );

    // Unperturbed duplicates shift only the floating-point summation order.
    let (_, rms) = crate::moco::param_distance(&clean_bundle, &adv_bundle);
    assert!(
        rms < 1e-6,
        "duplicated clean rows must train like clean-only (rms distance {rms:.2e})"
    );
    let norm = param_diff_norm(&clean_bundle, &adv_bundle);
    assert!(norm < 1e-4, "aggregate drift {norm:.2e} too large");
}

#[test]
fn zero_timeout_skips_attacks_deterministically() {
    let (corpus, lang) = small_corpus(24, 24);
    let table = table_for(&lang);

    let mut clean_bundle =
        EncoderBundle::new(small_encoder(&corpus), corpus.subword.id(), 9).unwrap();
    let mut adv_bundle = clean_bundle.clone_parameters();

    let mut clean_cfg = adv_cfg(6);
    clean_cfg.scheme = FinetuneScheme::Clean;
    finetune_clean(&clean_cfg, &mut clean_bundle, &corpus).unwrap();

    let mut timeout_cfg = adv_cfg(6);
    timeout_cfg.attack_timeout_ms = Some(0);
    let out = finetune_adversarial(&timeout_cfg, &mut adv_bundle, &corpus, &table).unwrap();

    let adv_batches = corpus.examples.len().div_ceil(timeout_cfg.batch_size);
    assert_eq!(out.attack_timeouts, adv_batches, "every attacked batch timed out");
    assert_eq!(out.adversarial_rows, 0);
    assert_eq!(
        param_checksum(&clean_bundle),
        param_checksum(&adv_bundle),
        "timed-out batches must train exactly like clean ones"
    );
}

// ------------------------------------------------------------ pregeneration

#[test]
fn pregenerated_dataset_doubles_and_respects_budget() {
    let (corpus, lang) = small_corpus(25, 24);
    let table = table_for(&lang);
    let mut bundle = EncoderBundle::new(small_encoder(&corpus), corpus.subword.id(), 2).unwrap();

    // A lightly trained classifier gives the attack real gradients.
    let mut cfg = FinetuneConfig::new(FinetuneScheme::Clean, 1);
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.lr = 1e-3;
    finetune_clean(&cfg, &mut bundle, &corpus).unwrap();

    let attack = AttackConfig {
        max_iters: 3,
        candidate_limit: 4,
        ..AttackConfig::finetuning()
    };
    let before = param_checksum(&bundle);
    let augmented = pregenerate_adversarial_dataset(&mut bundle, &corpus, &attack, &table).unwrap();
    assert_eq!(
        param_checksum(&bundle),
        before,
        "generation must leave the model untouched"
    );

    let n = corpus.examples.len();
    assert_eq!(augmented.examples.len(), 2 * n);
    let mut any_changed = false;
    for (src, adv) in corpus.examples.iter().zip(&augmented.examples[n..]) {
        assert_eq!(adv.id, format!("{}-adv", src.id));
        assert_eq!(adv.label, src.label, "perturbations keep the source label");
        assert_eq!(adv.words.len(), src.words.len());
        let changed = src
            .words
            .iter()
            .zip(&adv.words)
            .filter(|(a, b)| a != b)
            .count();
        assert!(
            changed <= attack.budget(src.words.len()),
            "{} changed {changed} words, budget {}",
            src.id,
            attack.budget(src.words.len())
        );
        any_changed |= changed > 0;
    }
    assert!(any_changed, "a trained model should be attackable somewhere");

    let again = pregenerate_adversarial_dataset(&mut bundle, &corpus, &attack, &table).unwrap();
    for (a, b) in augmented.examples.iter().zip(&again.examples) {
        assert_eq!(a.words, b.words, "regeneration must be exact");
    }
}

// ----------------------------------------------------------------- metrics

#[test]
fn metrics_serialize_one_json_object_per_line() {
    let metrics = vec![
        StepMetric {
            step: 0,
            loss: 2.5,
            lr: 1e-3,
            accuracy: None,
        },
        StepMetric {
            step: 1,
            loss: 2.25,
            lr: 9e-4,
            accuracy: Some(0.75),
        },
    ];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.jsonl");
    write_metrics(&path, &metrics).unwrap();

    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(
        !lines[0].contains("accuracy"),
        "absent accuracy must not be serialized: {}",
        lines[0]
    );
    for (line, want) in lines.iter().zip(&metrics) {
        let got: StepMetric = serde_json::from_str(line).unwrap();
        assert_eq!(got.step, want.step);
        assert_eq!(got.loss, want.loss);
        assert_eq!(got.lr, want.lr);
        assert_eq!(got.accuracy, want.accuracy);
    }
}
