//! The individual CLI commands. Each pipeline command claims a fresh output
//! directory, records the config file as an input, writes its artifacts,
//! and seals the directory with a manifest.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use advcl_core::corpus::TokenizedExample;
use advcl_core::encoder::EncoderBundle;
use advcl_core::evalsuite::{
    distance_study, evaluate_robustness, export_embeddings, queue_size_sweep, speed_benchmark,
    transferability_eval, BudgetSpec, EmbeddingRow, EmbeddingTag, QueueSweepSetup,
    RobustnessEvaluation, TransferReport,
};
use advcl_core::pipelines::{
    pregenerate_adversarial_dataset, write_metrics, FinetuneScheme, PretrainScheme, TrainState,
};

use crate::config::ConfigFile;
use crate::experiments::{
    build_datasets, encoder_config, finetune_corpus, obtain_model, train_setting,
};
use crate::manifest::{read_verified, RunRecorder};
use crate::report::{compare_reports, ReportFile};

fn begin(
    out_dir: &Path,
    command: &str,
    cfg: &ConfigFile,
    config_path: &Path,
) -> Result<RunRecorder> {
    let mut recorder = RunRecorder::begin(out_dir, command, cfg.seed, cfg)?;
    recorder.add_input(config_path)?;
    Ok(recorder)
}

fn write_json<T: Serialize>(recorder: &mut RunRecorder, name: &str, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).context("artifact serialization")?;
    recorder.write_output(name, json.as_bytes())?;
    Ok(())
}

// ---------------------------------------------------------------- pretrain

pub fn cmd_pretrain(cfg: &ConfigFile, config_path: &Path, out_dir: &Path) -> Result<()> {
    let data = build_datasets(cfg)?;
    let mut recorder = begin(out_dir, "pretrain", cfg, config_path)?;
    let scheme = cfg.pretrain.scheme()?;
    let (state, metrics, transform_failures) = crate::experiments::run_pretrain(cfg, &data, scheme)?;

    state.save(&recorder.dir.join("state.json"))?;
    recorder.adopt_output("state.json")?;
    write_metrics(&recorder.dir.join("pretrain_metrics.jsonl"), &metrics)?;
    recorder.adopt_output("pretrain_metrics.jsonl")?;

    let manifest = recorder.finish()?;
    if transform_failures > 0 {
        eprintln!("note: {transform_failures} positive-view transforms fell back to identity");
    }
    println!(
        "pretrained scheme {scheme} for {} steps -> {}",
        state.step,
        manifest.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- finetune

pub fn cmd_finetune(cfg: &ConfigFile, config_path: &Path, out_dir: &Path) -> Result<()> {
    let data = build_datasets(cfg)?;
    let mut recorder = begin(out_dir, "finetune", cfg, config_path)?;
    let scheme = cfg.finetune.scheme()?;

    let mut model = if cfg.finetune.checkpoint.is_empty() {
        EncoderBundle::new(
            encoder_config(cfg, &data),
            data.train.subword.id(),
            cfg.seed,
        )?
    } else {
        let path = Path::new(&cfg.finetune.checkpoint);
        read_verified(path)?;
        recorder.add_input(path)?;
        let state = TrainState::load(path, &data.train.subword)?;
        state.pair.query
    };

    let corpus = finetune_corpus(cfg, &data)?;
    let ft_cfg = cfg.finetune.finetune_config(scheme, cfg.seed);
    let outcome = match scheme {
        FinetuneScheme::Clean => {
            advcl_core::pipelines::finetune_clean(&ft_cfg, &mut model, &corpus)?
        }
        FinetuneScheme::Adversarial => advcl_core::pipelines::finetune_adversarial(
            &ft_cfg,
            &mut model,
            &corpus,
            &data.table,
        )?,
    };

    model.save(&recorder.dir.join("model.json"))?;
    recorder.adopt_output("model.json")?;
    write_metrics(
        &recorder.dir.join("finetune_metrics.jsonl"),
        &outcome.metrics,
    )?;
    recorder.adopt_output("finetune_metrics.jsonl")?;

    let manifest = recorder.finish()?;
    if outcome.attack_timeouts > 0 || outcome.attack_failures > 0 {
        eprintln!(
            "note: {} attack timeouts, {} attack failures during finetuning",
            outcome.attack_timeouts, outcome.attack_failures
        );
    }
    println!(
        "finetuned scheme {scheme} ({} adversarial rows) -> {}",
        outcome.adversarial_rows,
        manifest.display()
    );
    Ok(())
}

// ------------------------------------------------------------------ pregen

pub fn cmd_pregen(cfg: &ConfigFile, config_path: &Path, out_dir: &Path) -> Result<()> {
    let data = build_datasets(cfg)?;
    let mut recorder = begin(out_dir, "pregen", cfg, config_path)?;
    let (mut model, source) = obtain_model(cfg, &data, &mut recorder)?;
    let corpus = finetune_corpus(cfg, &data)?;
    let augmented = pregenerate_adversarial_dataset(
        &mut model,
        &corpus,
        &cfg.finetune.attack.attack_config(),
        &data.table,
    )?;
    write_json(&mut recorder, "augmented.json", &augmented)?;
    let manifest = recorder.finish()?;
    println!(
        "pre-generated {} adversarial rows against {source} -> {}",
        augmented.examples.len() - corpus.examples.len(),
        manifest.display()
    );
    Ok(())
}

// ------------------------------------------------------------------ attack

#[derive(Serialize)]
struct AdversarialLine<'a> {
    id: &'a str,
    success: bool,
    words: &'a [String],
}

pub fn cmd_attack(cfg: &ConfigFile, config_path: &Path, out_dir: &Path) -> Result<()> {
    let data = build_datasets(cfg)?;
    let mut recorder = begin(out_dir, "attack", cfg, config_path)?;
    let (mut model, source) = obtain_model(cfg, &data, &mut recorder)?;
    let eval_cfg = cfg.eval.eval_config()?;
    let evaluation = evaluate_robustness(&mut model, &data.test, &data.table, &eval_cfg)?;

    let mut lines = String::new();
    let attacked: Vec<_> = evaluation
        .report
        .per_example
        .iter()
        .filter(|o| o.attack.is_some())
        .collect();
    for (outcome, adv) in attacked.iter().zip(&evaluation.adversarial) {
        let line = AdversarialLine {
            id: &outcome.id,
            success: outcome.attack.as_ref().map(|a| a.success).unwrap_or(false),
            words: &adv.words,
        };
        lines.push_str(&serde_json::to_string(&line)?);
        lines.push('\n');
    }
    recorder.write_output("adversarial.jsonl", lines.as_bytes())?;
    write_json(
        &mut recorder,
        "attack_report.json",
        &ReportFile::new(&source, cfg.seed, evaluation.report.clone()),
    )?;
    let manifest = recorder.finish()?;
    print_report_summary(&source, &evaluation);
    println!("-> {}", manifest.display());
    Ok(())
}

fn print_report_summary(name: &str, evaluation: &RobustnessEvaluation) {
    let r = &evaluation.report;
    let success = r
        .success_rate
        .map_or("n/a".to_string(), |v| format!("{:.1}%", v * 100.0));
    let replacement = r
        .replacement_rate
        .map_or("n/a".to_string(), |v| format!("{:.1}%", v * 100.0));
    println!(
        "{name}: clean accuracy {:.1}% | attack success {success} \
         ({}/{}) | replacement rate {replacement}",
        r.clean_accuracy * 100.0,
        r.successes,
        r.attacked,
    );
}

// -------------------------------------------------------------------- eval

pub fn cmd_eval(cfg: &ConfigFile, config_path: &Path, out_dir: &Path) -> Result<()> {
    let data = build_datasets(cfg)?;
    let eval_cfg = cfg.eval.eval_config()?;

    // Single-model mode: evaluate a saved checkpoint and stop.
    if !cfg.model.checkpoint.is_empty() {
        let mut recorder = begin(&out_dir.join("model"), "eval:model", cfg, config_path)?;
        let (mut model, source) = obtain_model(cfg, &data, &mut recorder)?;
        let evaluation = evaluate_robustness(&mut model, &data.test, &data.table, &eval_cfg)?;
        write_json(
            &mut recorder,
            "report.json",
            &ReportFile::new(&source, cfg.seed, evaluation.report.clone()),
        )?;
        let manifest = recorder.finish()?;
        print_report_summary(&source, &evaluation);
        println!("-> {}", manifest.display());
        return Ok(());
    }

    // Otherwise run every declared setting end to end, one subdirectory and
    // one manifest per setting.
    for setting in cfg.effective_settings()? {
        let mut recorder = begin(
            &out_dir.join(&setting.name),
            &format!("eval:{}", setting.name),
            cfg,
            config_path,
        )?;
        let trained = train_setting(cfg, &data, &setting)?;
        let mut model = trained.model;
        let evaluation = evaluate_robustness(&mut model, &data.test, &data.table, &eval_cfg)?;

        write_metrics(
            &recorder.dir.join("pretrain_metrics.jsonl"),
            &trained.pretrain_metrics,
        )?;
        recorder.adopt_output("pretrain_metrics.jsonl")?;
        write_metrics(
            &recorder.dir.join("finetune_metrics.jsonl"),
            &trained.finetune_metrics,
        )?;
        recorder.adopt_output("finetune_metrics.jsonl")?;
        write_json(
            &mut recorder,
            "report.json",
            &ReportFile::new(&setting.name, cfg.seed, evaluation.report.clone()),
        )?;
        let manifest = recorder.finish()?;
        print_report_summary(&setting.name, &evaluation);
        println!("-> {}", manifest.display());
    }
    Ok(())
}

// ---------------------------------------------------------------- transfer

#[derive(Serialize, Deserialize)]
struct TransferDirection {
    src: String,
    dst: String,
    #[serde(flatten)]
    report: TransferReport,
}

#[derive(Serialize, Deserialize)]
struct TransferOutput {
    format: String,
    version: u32,
    seed: u64,
    directions: Vec<TransferDirection>,
}

pub fn cmd_transfer(cfg: &ConfigFile, config_path: &Path, out_dir: &Path) -> Result<()> {
    if cfg.transfer.src.is_empty() || cfg.transfer.dst.is_empty() {
        bail!("transfer.src / transfer.dst: name the two settings to evaluate");
    }
    if cfg.transfer.src == cfg.transfer.dst {
        bail!("transfer.src and transfer.dst must differ (self-transfer equals direct evaluation)");
    }
    let src_setting = cfg.setting_named(&cfg.transfer.src, "transfer.src")?;
    let dst_setting = cfg.setting_named(&cfg.transfer.dst, "transfer.dst")?;

    let data = build_datasets(cfg)?;
    let mut recorder = begin(out_dir, "transfer", cfg, config_path)?;
    let eval_cfg = cfg.eval.eval_config()?;

    let mut src = train_setting(cfg, &data, &src_setting)?;
    let mut dst = train_setting(cfg, &data, &dst_setting)?;

    let forward = transferability_eval(&mut src.model, &dst.model, &data.test, &data.table, &eval_cfg)?;
    let backward = transferability_eval(&mut dst.model, &src.model, &data.test, &data.table, &eval_cfg)?;

    let output = TransferOutput {
        format: "advcl-transfer-report".into(),
        version: 1,
        seed: cfg.seed,
        directions: vec![
            TransferDirection {
                src: src_setting.name.clone(),
                dst: dst_setting.name.clone(),
                report: forward,
            },
            TransferDirection {
                src: dst_setting.name.clone(),
                dst: src_setting.name.clone(),
                report: backward,
            },
        ],
    };
    write_json(&mut recorder, "transfer_report.json", &output)?;
    let manifest = recorder.finish()?;
    for d in &output.directions {
        let rate = d
            .report
            .success_rate
            .map_or("n/a".to_string(), |v| format!("{:.1}%", v * 100.0));
        println!(
            "{} -> {}: transfer success {rate} ({} of {} eligible, {} generated)",
            d.src, d.dst, d.report.successes, d.report.eligible, d.report.generated
        );
    }
    println!("-> {}", manifest.display());
    Ok(())
}

// --------------------------------------------------------------- distances

#[derive(Serialize, Deserialize)]
struct DistanceRow {
    setting: String,
    d_pos: f64,
    d_neg: f64,
    delta: f64,
}

#[derive(Serialize, Deserialize)]
struct DistanceOutput {
    format: String,
    version: u32,
    seed: u64,
    reference: String,
    pairs: usize,
    dataset: String,
    rows: Vec<DistanceRow>,
}

pub fn cmd_distances(cfg: &ConfigFile, config_path: &Path, out_dir: &Path) -> Result<()> {
    let settings = cfg.effective_settings()?;
    let reference = if cfg.distances.reference.is_empty() {
        settings[0].clone()
    } else {
        cfg.setting_named(&cfg.distances.reference, "distances.reference")?
    };
    if cfg.distances.pairs < 2 {
        bail!("distances.pairs: need at least 2 pairs, got {}", cfg.distances.pairs);
    }

    let data = build_datasets(cfg)?;
    let mut recorder = begin(out_dir, "distances", cfg, config_path)?;
    let eval_cfg = cfg.eval.eval_config()?;

    // The adversarial counterparts are generated once, against the
    // reference model, and reused for every setting's measurements.
    let mut reference_trained = train_setting(cfg, &data, &reference)?;
    let evaluation =
        evaluate_robustness(&mut reference_trained.model, &data.test, &data.table, &eval_cfg)?;
    let clean: Vec<&TokenizedExample> = evaluation
        .report
        .per_example
        .iter()
        .filter(|o| o.attack.is_some())
        .take(cfg.distances.pairs)
        .map(|o| {
            data.test
                .examples
                .iter()
                .find(|e| e.id == o.id)
                .expect("report ids come from the test corpus")
        })
        .collect();
    let adversarial: Vec<&TokenizedExample> = evaluation
        .adversarial
        .iter()
        .take(cfg.distances.pairs)
        .collect();
    if clean.len() < 2 {
        bail!(
            "distances: only {} attacked examples available; the reference \
             model classifies too little correctly for a distance study",
            clean.len()
        );
    }

    let mut rows = Vec::new();
    for setting in &settings {
        let model = if setting.name == reference.name {
            reference_trained.model.clone_parameters()
        } else {
            train_setting(cfg, &data, setting)?.model
        };
        eprintln!(
            "debug: {} params {}",
            setting.name,
            advcl_core::encoder::param_checksum(&model)
        );
        let report = distance_study(&model, &clean, &adversarial)?;
        rows.push(DistanceRow {
            setting: setting.name.clone(),
            d_pos: report.d_pos,
            d_neg: report.d_neg,
            delta: report.delta,
        });
    }

    let output = DistanceOutput {
        format: "advcl-distance-report".into(),
        version: 1,
        seed: cfg.seed,
        reference: reference.name.clone(),
        pairs: clean.len(),
        dataset: data.test.fingerprint(),
        rows,
    };
    write_json(&mut recorder, "distance_report.json", &output)?;
    let manifest = recorder.finish()?;
    for row in &output.rows {
        println!(
            "{}: d_pos {:.4}  d_neg {:.4}  delta {:.4}",
            row.setting, row.d_pos, row.d_neg, row.delta
        );
    }
    println!("-> {}", manifest.display());
    Ok(())
}

// -------------------------------------------------------------- export-emb

pub fn cmd_export_emb(cfg: &ConfigFile, config_path: &Path, out_dir: &Path) -> Result<()> {
    let data = build_datasets(cfg)?;
    let mut recorder = begin(out_dir, "export-emb", cfg, config_path)?;
    let (mut model, source) = obtain_model(cfg, &data, &mut recorder)?;

    let mut eval_cfg = cfg.eval.eval_config()?;
    eval_cfg.limit = Some(cfg.export.limit);
    let evaluation = evaluate_robustness(&mut model, &data.test, &data.table, &eval_cfg)?;
    let clean: Vec<&TokenizedExample> = evaluation
        .report
        .per_example
        .iter()
        .filter(|o| o.attack.is_some())
        .map(|o| {
            data.test
                .examples
                .iter()
                .find(|e| e.id == o.id)
                .expect("report ids come from the test corpus")
        })
        .collect();
    if clean.is_empty() {
        bail!("export: no attacked examples to embed; the model got nothing right");
    }
    let mut rows = Vec::new();
    for (c, a) in clean.iter().zip(&evaluation.adversarial) {
        rows.push(EmbeddingRow {
            example: c,
            tag: EmbeddingTag::Clean,
            pair_id: c.id.clone(),
        });
        rows.push(EmbeddingRow {
            example: a,
            tag: EmbeddingTag::Adversarial,
            pair_id: c.id.clone(),
        });
    }
    export_embeddings(&model, &rows, &recorder.dir.join("embeddings.csv"))?;
    recorder.adopt_output("embeddings.csv")?;
    let manifest = recorder.finish()?;
    println!(
        "exported {} embedding rows from {source} -> {}",
        rows.len(),
        manifest.display()
    );
    Ok(())
}

// ------------------------------------------------------------------- bench

pub fn cmd_bench(cfg: &ConfigFile, config_path: &Path, out_dir: &Path) -> Result<()> {
    let data = build_datasets(cfg)?;
    let mut recorder = begin(out_dir, "bench", cfg, config_path)?;
    let (mut model, source) = obtain_model(cfg, &data, &mut recorder)?;
    let report = speed_benchmark(
        &mut model,
        &data.train,
        &data.table,
        &cfg.eval.attack.attack_config(),
        &cfg.bench.batch_sizes,
        Some(cfg.bench.limit),
    )?;
    report.write_csv(&recorder.dir.join("bench.csv"))?;
    recorder.adopt_output("bench.csv")?;
    write_json(&mut recorder, "bench.json", &report)?;
    let manifest = recorder.finish()?;
    for row in &report.rows {
        println!(
            "{}: {:.2} ms/example (sd {:.2})",
            row.setting,
            row.mean_seconds * 1e3,
            row.stddev_seconds * 1e3
        );
    }
    println!("benchmarked {source} -> {}", manifest.display());
    Ok(())
}

// ------------------------------------------------------------- sweep-queue

#[derive(Serialize, Deserialize)]
struct SweepOutput {
    format: String,
    version: u32,
    seed: u64,
    rows: Vec<SweepRow>,
}

#[derive(Serialize, Deserialize)]
struct SweepRow {
    queue_size: usize,
    clean_accuracy: f64,
    success_rate: Option<f64>,
    replacement_rate: Option<f64>,
    budget: BudgetSpec,
}

pub fn cmd_sweep_queue(cfg: &ConfigFile, config_path: &Path, out_dir: &Path) -> Result<()> {
    let data = build_datasets(cfg)?;
    let mut recorder = begin(out_dir, "sweep-queue", cfg, config_path)?;

    // The sweep always runs the adversarial-pretrain → clean-finetune chain;
    // scheme fields in the config are ignored here by design.
    let setup = QueueSweepSetup {
        pretrain: cfg.pretrain.pretrain_config(
            PretrainScheme::Adversarial,
            encoder_config(cfg, &data),
            cfg.seed,
        ),
        pretrain_attack: cfg.pretrain.attack.attack_config(),
        finetune: cfg.finetune.finetune_config(FinetuneScheme::Clean, cfg.seed),
        eval: cfg.eval.eval_config()?,
        table: &data.table,
    };
    let rows = queue_size_sweep(
        &setup,
        &data.pretrain,
        &data.train,
        &data.test,
        &cfg.sweep.queue_sizes,
    )?;

    let output = SweepOutput {
        format: "advcl-queue-sweep".into(),
        version: 1,
        seed: cfg.seed,
        rows: rows
            .iter()
            .map(|r| SweepRow {
                queue_size: r.queue_size,
                clean_accuracy: r.report.clean_accuracy,
                success_rate: r.report.success_rate,
                replacement_rate: r.report.replacement_rate,
                budget: r.report.budget,
            })
            .collect(),
    };
    write_json(&mut recorder, "sweep.json", &output)?;
    let manifest = recorder.finish()?;
    for row in &output.rows {
        let rate = row
            .success_rate
            .map_or("n/a".to_string(), |v| format!("{:.1}%", v * 100.0));
        println!(
            "queue {}: clean accuracy {:.1}% | attack success {rate}",
            row.queue_size,
            row.clean_accuracy * 100.0
        );
    }
    println!("-> {}", manifest.display());
    Ok(())
}

// ----------------------------------------------------------------- compare

pub fn cmd_compare(report_paths: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let files = report_paths
        .iter()
        .map(|p| ReportFile::load(p))
        .collect::<Result<Vec<_>>>()?;
    let table = compare_reports(&files)?;
    print!("{table}");
    if let Some(path) = out {
        std::fs::write(path, &table)
            .with_context(|| format!("cannot write comparison to {}", path.display()))?;
        println!("written to {}", path.display());
    }
    Ok(())
}
