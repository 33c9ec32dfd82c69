//! Implementations of the five subcommands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::{Deserialize, Serialize};

use teprompt_core::backbone::pretrained::load_backbone;
use teprompt_core::checkpoint::{load_model, model_dtype, save_model, write_json};
use teprompt_core::corpus::{
    load_corpus, save_corpus, split_by_sections, synthetic::generate_synthetic, CorpusFormat,
    CorpusSplit, DiscourseInstance, Sense, ALL_SENSES, PDTB3_SPLIT_COUNTS,
};
use teprompt_core::eval::{evaluate, instance_outputs, predict, sense_aggregate};
use teprompt_core::float::Float;
use teprompt_core::model::{build_pretrained_model, build_toy_model, PromptModel};
use teprompt_core::train::{train, write_training_log};
use teprompt_core::verbalizer::AnswerSpace;

use crate::config::{BackboneKind, CorpusSource, Precision, RunConfig};

/// Command failures carry an exit-code class: bad configuration or input
/// files versus runtime failures.
pub enum CmdError {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::Config(_) => 2,
            CmdError::Runtime(_) => 1,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            CmdError::Config(e) | CmdError::Runtime(e) => e,
        }
    }
}

pub type CmdResult<T = ()> = Result<T, CmdError>;

fn config_err<T>(r: anyhow::Result<T>) -> CmdResult<T> {
    r.map_err(CmdError::Config)
}

fn runtime_err<T>(r: anyhow::Result<T>) -> CmdResult<T> {
    r.map_err(CmdError::Runtime)
}

/// Writes to stdout, exiting quietly if the consumer closed the pipe.
macro_rules! emit {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let text = format!($($arg)*);
        let mut out = std::io::stdout().lock();
        if out.write_all(text.as_bytes()).is_err() || out.flush().is_err() {
            std::process::exit(0);
        }
    }};
}

macro_rules! emitln {
    () => { emit!("\n") };
    ($($arg:tt)*) => {{
        emit!($($arg)*);
        emit!("\n");
    }};
}

/// Classifies a core error by its own config/runtime split.
fn core_err<T>(r: teprompt_core::Result<T>) -> CmdResult<T> {
    r.map_err(|e| {
        if e.is_config() {
            CmdError::Config(anyhow!(e))
        } else {
            CmdError::Runtime(anyhow!(e))
        }
    })
}

fn corpus_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("corpus")
}

fn checkpoint_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("checkpoint")
}

#[derive(Debug, Serialize, Deserialize)]
struct ClassCounts {
    comparison: usize,
    contingency: usize,
    expansion: usize,
    temporal: usize,
    total: usize,
}

impl ClassCounts {
    fn from_row(row: &[usize; 4]) -> ClassCounts {
        ClassCounts {
            comparison: row[Sense::Comparison.index()],
            contingency: row[Sense::Contingency.index()],
            expansion: row[Sense::Expansion.index()],
            temporal: row[Sense::Temporal.index()],
            total: row.iter().sum(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ReferenceCheck {
    matches: bool,
    mismatches: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitManifest {
    source: String,
    seed: u64,
    train: ClassCounts,
    dev: ClassCounts,
    test: ClassCounts,
    excluded: usize,
    /// Present for file-based corpora: comparison against the standard
    /// PDTB 3.0 four-way split statistics (informational only).
    reference_check: Option<ReferenceCheck>,
}

fn reference_check(split: &CorpusSplit) -> ReferenceCheck {
    let counts = split.class_counts();
    let mut mismatches = Vec::new();
    let part_names = ["train", "dev", "test"];
    for (p, name) in part_names.iter().enumerate() {
        for sense in ALL_SENSES {
            let got = counts[p][sense.index()];
            let expected = PDTB3_SPLIT_COUNTS[p][sense.index()];
            if got != expected {
                mismatches.push(format!(
                    "{name} {}: {got} (standard PDTB 3.0 split has {expected})",
                    sense.label()
                ));
            }
        }
    }
    ReferenceCheck {
        matches: mismatches.is_empty(),
        mismatches,
    }
}

/// Materializes the corpus split and its manifest.
fn resolve_split(cfg: &RunConfig) -> CmdResult<(CorpusSplit, String, Option<ReferenceCheck>)> {
    match cfg.corpus.source {
        CorpusSource::Synthetic => {
            let split = generate_synthetic(cfg.corpus.num_train, cfg.corpus.num_test, cfg.seed);
            Ok((split, "synthetic".to_string(), None))
        }
        CorpusSource::File => {
            let path = cfg.corpus.path.as_ref().expect("validated");
            let instances = core_err(load_corpus(path, cfg.corpus.format))?;
            let split = split_by_sections(instances);
            core_err(split.check_unique_ids())?;
            let check = reference_check(&split);
            if !check.matches {
                eprintln!(
                    "note: corpus differs from the standard PDTB 3.0 split statistics ({} fields); see manifest",
                    check.mismatches.len()
                );
            }
            Ok((split, path.display().to_string(), Some(check)))
        }
    }
}

fn write_split(dir: &Path, split: &CorpusSplit) -> CmdResult {
    runtime_err(
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())),
    )?;
    for (name, part) in [
        ("train", &split.train),
        ("dev", &split.dev),
        ("test", &split.test),
    ] {
        core_err(save_corpus(
            dir.join(format!("{name}.jsonl")),
            part,
            CorpusFormat::Jsonl,
        ))?;
    }
    Ok(())
}

fn load_split(dir: &Path) -> CmdResult<CorpusSplit> {
    for name in ["train", "dev", "test"] {
        if !dir.join(format!("{name}.jsonl")).exists() {
            return Err(CmdError::Config(anyhow!(
                "prepared corpus not found at {} (run `teprompt prepare` first)",
                dir.display()
            )));
        }
    }
    Ok(CorpusSplit {
        train: core_err(load_corpus(dir.join("train.jsonl"), CorpusFormat::Jsonl))?,
        dev: core_err(load_corpus(dir.join("dev.jsonl"), CorpusFormat::Jsonl))?,
        test: core_err(load_corpus(dir.join("test.jsonl"), CorpusFormat::Jsonl))?,
        excluded: 0,
    })
}

pub fn cmd_prepare(cfg: &RunConfig) -> CmdResult {
    config_err(cfg.validate())?;
    let (split, source, check) = resolve_split(cfg)?;
    let dir = corpus_dir(cfg);
    write_split(&dir, &split)?;
    let counts = split.class_counts();
    let manifest = SplitManifest {
        source,
        seed: cfg.seed,
        train: ClassCounts::from_row(&counts[0]),
        dev: ClassCounts::from_row(&counts[1]),
        test: ClassCounts::from_row(&counts[2]),
        excluded: split.excluded,
        reference_check: check,
    };
    core_err(write_json(&dir.join("manifest.json"), &manifest))?;
    runtime_err(cfg.write_resolved(&cfg.output_dir).map(|_| ()))?;
    emitln!(
        "prepared corpus at {}: train {} / dev {} / test {} (excluded {})",
        dir.display(),
        split.train.len(),
        split.dev.len(),
        split.test.len(),
        split.excluded
    );
    Ok(())
}

fn build_model<F: Float>(cfg: &RunConfig, split: &CorpusSplit, hash: &str) -> CmdResult<PromptModel<F>> {
    match cfg.backbone.kind {
        BackboneKind::Toy => core_err(build_toy_model(
            &split.train,
            &cfg.toy_config(),
            &cfg.template,
            cfg.training.variant,
            hash.to_string(),
        )),
        BackboneKind::Pretrained => {
            let dir = cfg.backbone.pretrained_dir.as_ref().expect("validated");
            let backbone = core_err(load_backbone::<F>(dir))?;
            core_err(build_pretrained_model(
                backbone,
                &split.train,
                &cfg.template,
                cfg.training.variant,
                cfg.seed,
                hash.to_string(),
            ))
        }
    }
}

fn run_train<F: Float>(cfg: &RunConfig) -> CmdResult {
    let split = load_split(&corpus_dir(cfg))?;
    let hash = config_err(cfg.hash())?;
    let model = build_model::<F>(cfg, &split, &hash)?;
    emitln!(
        "training variant {} | beta {} gamma {} | lr {} batch {} epochs {} | seed {} | {}",
        cfg.training.variant,
        cfg.training.beta,
        cfg.training.gamma,
        cfg.training.learning_rate,
        cfg.training.batch_size,
        cfg.training.epochs,
        cfg.seed,
        F::DTYPE,
    );
    let outcome = core_err(train(&split, &cfg.training_config(), model))?;

    let ckpt = checkpoint_dir(cfg);
    core_err(save_model(&ckpt, &outcome.model, outcome.steps, outcome.best_epoch))?;
    core_err(write_training_log(
        &cfg.output_dir.join("training_log.jsonl"),
        &outcome.records,
    ))?;
    runtime_err(
        std::fs::write(
            cfg.output_dir.join("answer_spaces.txt"),
            outcome.model.spaces.listing(),
        )
        .context("writing answer space listing"),
    )?;
    runtime_err(cfg.write_resolved(&cfg.output_dir).map(|_| ()))?;

    if let Some(last) = outcome.records.last() {
        emitln!(
            "final dev metrics: accuracy {:?} macro F1 {:?} (best epoch {:?})",
            last.dev_accuracy, last.dev_macro_f1, outcome.best_epoch
        );
    }
    emitln!("checkpoint written to {}", ckpt.display());
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig) -> CmdResult {
    config_err(cfg.validate())?;
    match cfg.precision {
        Precision::F32 => run_train::<f32>(cfg),
        Precision::F64 => run_train::<f64>(cfg),
    }
}

fn run_evaluate<F: Float>(cfg: &RunConfig, ckpt: &Path, test: &[DiscourseInstance]) -> CmdResult {
    let (model, _meta) = core_err(load_model::<F>(ckpt))?;
    let report = core_err(evaluate(test, &model, model.variant))?;
    let out = cfg.output_dir.join("evaluation");
    runtime_err(std::fs::create_dir_all(&out).context("creating evaluation dir"))?;
    core_err(write_json(&out.join("report.json"), &report))?;
    runtime_err(
        std::fs::write(out.join("report.txt"), report.render_text()).context("writing report"),
    )?;
    runtime_err(cfg.write_resolved(&cfg.output_dir).map(|_| ()))?;
    emit!("{}", report.render_text());
    Ok(())
}

pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: Option<&Path>) -> CmdResult {
    config_err(cfg.validate())?;
    let default_ckpt = checkpoint_dir(cfg);
    let ckpt = checkpoint.unwrap_or(&default_ckpt);
    if !ckpt.exists() {
        return Err(CmdError::Config(anyhow!(
            "checkpoint {} does not exist",
            ckpt.display()
        )));
    }
    let split = load_split(&corpus_dir(cfg))?;
    match core_err(model_dtype(ckpt))?.as_str() {
        "f32" => run_evaluate::<f32>(cfg, ckpt, &split.test),
        "f64" => run_evaluate::<f64>(cfg, ckpt, &split.test),
        other => Err(CmdError::Runtime(anyhow!("unknown checkpoint dtype {other}"))),
    }
}

fn run_ablate<F: Float>(cfg: &RunConfig, split: &CorpusSplit) -> CmdResult {
    let hash = config_err(cfg.hash())?;
    let out = cfg.output_dir.join("ablation");
    let reports = core_err(teprompt_core::ablation::run_ablation_matrix::<F>(
        split,
        &cfg.training_config(),
        &cfg.toy_config(),
        &cfg.template,
        &hash,
        Some(&out),
    ))?;
    runtime_err(cfg.write_resolved(&cfg.output_dir).map(|_| ()))?;
    emit!("{}", teprompt_core::ablation::render_table(&reports));
    emitln!("ablation artifacts written to {}", out.display());
    Ok(())
}

pub fn cmd_ablate(cfg: &RunConfig) -> CmdResult {
    config_err(cfg.validate())?;
    if cfg.backbone.kind == BackboneKind::Pretrained {
        return Err(CmdError::Config(anyhow!(
            "the ablation matrix drives the toy backbone; run single variants against a pretrained backbone with `train`"
        )));
    }
    // Use the prepared corpus when present so every command sees the same
    // data; otherwise materialize it now.
    let dir = corpus_dir(cfg);
    let split = if dir.join("train.jsonl").exists() {
        load_split(&dir)?
    } else {
        let (split, _, _) = resolve_split(cfg)?;
        write_split(&dir, &split)?;
        split
    };
    match cfg.precision {
        Precision::F32 => run_ablate::<f32>(cfg, &split),
        Precision::F64 => run_ablate::<f64>(cfg, &split),
    }
}

pub enum InspectTarget {
    Id(String),
    Pair { arg1: String, arg2: String },
}

fn find_instance(dir: &Path, id: &str) -> CmdResult<DiscourseInstance> {
    for name in ["test", "dev", "train"] {
        let path = dir.join(format!("{name}.jsonl"));
        if !path.exists() {
            continue;
        }
        let instances = core_err(load_corpus(&path, CorpusFormat::Jsonl))?;
        if let Some(inst) = instances.into_iter().find(|i| i.instance_id == id) {
            return Ok(inst);
        }
    }
    Err(CmdError::Config(anyhow!(
        "instance {id:?} not found in the prepared corpus at {}",
        dir.display()
    )))
}

fn head_table<F: Float>(title: &str, probs: &[F], space: &AnswerSpace) -> String {
    let mut rows: Vec<(f64, String)> = probs
        .iter()
        .zip(space.entries.iter())
        .map(|(p, e)| (p.to_f64_lossy(), e.surface.clone()))
        .collect();
    rows.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut out = format!("{title} ({} answers):\n", space.len());
    for (p, surface) in rows.iter().take(16) {
        let _ = writeln!(out, "  {surface:<16} {p:.4}");
    }
    if rows.len() > 16 {
        let _ = writeln!(out, "  ... {} more", rows.len() - 16);
    }
    out
}

fn run_inspect<F: Float>(cfg: &RunConfig, ckpt: &Path, instance: &DiscourseInstance) -> CmdResult {
    let (model, _) = core_err(load_model::<F>(ckpt))?;
    let outputs = core_err(instance_outputs(&model, instance))?;

    emitln!("instance {}:", instance.instance_id);
    emitln!("  arg1: {}", instance.arg1_text);
    emitln!("  arg2: {}", instance.arg2_text);
    emitln!("  prompt length: {} tokens", outputs.encoding.length());

    if let Some(probs) = &outputs.drr_probs {
        emit!("{}", head_table::<F>("relation head", probs, &model.spaces.drr));
        let agg = sense_aggregate(probs, &model.spaces.drr, &model.spaces.map);
        emitln!("sense-aggregated relation probabilities:");
        for sense in ALL_SENSES {
            emitln!("  {:<12} {:.4}", sense.label(), agg[sense.index()]);
        }
    }
    if let Some(probs) = &outputs.ssc_probs {
        emit!("{}", head_table::<F>("sense head", probs, &model.spaces.ssc));
    }
    if let Some(probs) = &outputs.acp_probs {
        emit!("{}", head_table::<F>("connective head", probs, &model.spaces.acp));
    }
    let (sense, _) = core_err(predict(instance, &model, model.variant))?;
    emitln!("predicted sense: {sense}");

    // Columnar dump of the raw and fused relation states for plotting.
    if let (Some(raw), Some(fused)) = (&outputs.raw_drr_state, &outputs.fused_state) {
        let out = cfg.output_dir.join("inspect");
        runtime_err(std::fs::create_dir_all(&out).context("creating inspect dir"))?;
        let mut csv = String::from("dim,raw_mask_state,fused_state\n");
        for i in 0..raw.len() {
            let _ = writeln!(
                csv,
                "{i},{},{}",
                raw[i].to_f64_lossy(),
                fused[i].to_f64_lossy()
            );
        }
        let path = out.join("states.csv");
        runtime_err(std::fs::write(&path, csv).context("writing states.csv"))?;
        emitln!("decision states written to {}", path.display());
    }
    runtime_err(cfg.write_resolved(&cfg.output_dir).map(|_| ()))?;
    Ok(())
}

pub fn cmd_inspect(cfg: &RunConfig, checkpoint: Option<&Path>, target: InspectTarget) -> CmdResult {
    let default_ckpt = checkpoint_dir(cfg);
    let ckpt = checkpoint.unwrap_or(&default_ckpt);
    if !ckpt.exists() {
        return Err(CmdError::Config(anyhow!(
            "checkpoint {} does not exist",
            ckpt.display()
        )));
    }
    let instance = match target {
        InspectTarget::Id(id) => find_instance(&corpus_dir(cfg), &id)?,
        InspectTarget::Pair { arg1, arg2 } => {
            for (name, text) in [("arg1", &arg1), ("arg2", &arg2)] {
                if text.trim().is_empty() {
                    return Err(CmdError::Config(anyhow!("{name} must not be empty")));
                }
            }
            DiscourseInstance {
                arg1_text: arg1,
                arg2_text: arg2,
                sense: Sense::Expansion, // placeholder; inference ignores gold fields
                connective: "and".into(),
                section: 0,
                instance_id: "ad-hoc".into(),
            }
        }
    };
    match core_err(model_dtype(ckpt))?.as_str() {
        "f32" => run_inspect::<f32>(cfg, ckpt, &instance),
        "f64" => run_inspect::<f64>(cfg, ckpt, &instance),
        other => Err(CmdError::Runtime(anyhow!("unknown checkpoint dtype {other}"))),
    }
}
