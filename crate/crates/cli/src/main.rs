//! Pipeline driver: ingest → generate → filter → evaluate → split → export
//! → summarize/correlate, steered by a TOML config file whose values any
//! command-line flag can override. Logs are one JSON object per line on
//! stderr; data outputs are written atomically so interrupted runs never
//! leave partial files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use cod_forge::analytics::{correlation_report, render_table, summarize, GroupBy, ScorePair};
use cod_forge::corpus::{
    compute_corpus_stats, ingest_documents, write_documents_jsonl, Document, DocumentSet,
    IngestFormat,
};
use cod_forge::dataset::{
    export_generator_pairs, export_sft_jsonl, read_dialogues_jsonl, split, write_dialogues_jsonl,
    SftRecord, SplitResult,
};
use cod_forge::engine::{
    filter_dialogue, Dialogue, DialogueGenerator, FilterThresholds, FilterVerdict,
    GenerationConfig, Mode,
};
use cod_forge::evaluator::{CrMethod, DialogueEvaluation, Evaluator};
use cod_forge::gateway::{BackendConfig, ChatBackend, HttpBackend, ScriptedBackend};
use cod_forge::io::{read_jsonl, write_atomic, write_jsonl};

// --- failure taxonomy ----------------------------------------------------

/// What went wrong, mapped onto the documented exit codes: bad
/// configuration exits 3, anything that breaks mid-run exits 1. Usage
/// errors never reach here — clap exits 2 on its own.
#[derive(Debug)]
enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn exit_code(&self) -> ExitCode {
        match self {
            Failure::Config(_) => ExitCode::from(3),
            Failure::Runtime(_) => ExitCode::from(1),
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Runtime(m) => m,
        }
    }

    fn category(&self) -> &'static str {
        match self {
            Failure::Config(_) => "config",
            Failure::Runtime(_) => "runtime",
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn log(event: &str, detail: serde_json::Value) {
    let mut line = serde_json::json!({ "level": "info", "event": event });
    if let (Some(obj), Some(extra)) = (line.as_object_mut(), detail.as_object()) {
        for (k, v) in extra {
            obj.insert(k.clone(), v.clone());
        }
    }
    eprintln!("{line}");
}

// --- command line --------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "cod-forge",
    version,
    about = "Turn raw documents into grounded multi-turn dialogue datasets and score them"
)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct CommonArgs {
    /// TOML config file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Generation mode: direct, cot, or cod.
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Generation backend kind.
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendKind>,
    /// Judge backend kind.
    #[arg(long, global = true, value_enum)]
    judge: Option<BackendKind>,
    /// Script file for a mock generation backend.
    #[arg(long, global = true, value_name = "FILE")]
    script: Option<PathBuf>,
    /// Script file for a mock judge backend.
    #[arg(long, global = true, value_name = "FILE")]
    judge_script: Option<PathBuf>,
    /// Worker pool size for per-document work.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// Overrides the generation/split seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Validate everything, write nothing.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Coverage method: judge or deterministic.
    #[arg(long, global = true, value_name = "METHOD", value_parser = parse_cr_method)]
    cr: Option<CrMethod>,
    /// Fraction of dialogue ids assigned to the test split.
    #[arg(long, global = true)]
    test_fraction: Option<f64>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    Mode::from_str(s).map_err(|e| e.to_string())
}

fn parse_cr_method(s: &str) -> Result<CrMethod, String> {
    CrMethod::from_str(s).map_err(|e| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Normalize a raw corpus into the documents file.
    Ingest {
        /// Raw input: a JSONL file or a directory of plain-text files.
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
        /// Where the normalized documents JSONL goes.
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
        /// Input layout; inferred from the path when omitted.
        #[arg(long, value_enum)]
        format: Option<IngestFormatArg>,
    },
    /// Generate one dialogue per document and keep the ones that pass the
    /// filter.
    Generate {
        /// Documents JSONL (defaults to paths.documents).
        #[arg(long, value_name = "FILE")]
        input: Option<PathBuf>,
        /// Dialogue JSONL output (defaults to paths.dialogues).
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
    },
    /// Judge previously generated dialogues and print a summary table.
    Evaluate {
        /// Dialogue JSONL to judge (defaults to paths.dialogues).
        #[arg(long, value_name = "FILE")]
        dialogues: Option<PathBuf>,
        /// Source documents JSONL (defaults to paths.documents).
        #[arg(long, value_name = "FILE")]
        documents: Option<PathBuf>,
        /// Evaluation JSONL output (defaults to paths.evaluations).
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
    },
    /// Partition dialogue ids into train and test sets.
    Split {
        /// Dialogue JSONL whose ids get partitioned (defaults to paths.dialogues).
        #[arg(long, value_name = "FILE")]
        dialogues: Option<PathBuf>,
        /// Split JSON output (defaults to paths.split).
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
    },
    /// Write SFT chat data and generator training pairs.
    Export {
        /// Dialogue JSONL to export (defaults to paths.dialogues).
        #[arg(long, value_name = "FILE")]
        dialogues: Option<PathBuf>,
        /// Source documents JSONL, needed for pairs (defaults to paths.documents).
        #[arg(long, value_name = "FILE")]
        documents: Option<PathBuf>,
        /// SFT chat JSONL output (defaults to paths.sft).
        #[arg(long, value_name = "FILE")]
        sft: Option<PathBuf>,
        /// Generator pair JSONL output (defaults to paths.generator_pairs).
        #[arg(long, value_name = "FILE")]
        pairs: Option<PathBuf>,
        /// Which export(s) to produce.
        #[arg(long, value_enum, default_value_t = ExportKind::Both)]
        kind: ExportKind,
    },
    /// Corpus and dataset size statistics.
    Stats {
        /// Documents JSONL (defaults to paths.documents).
        #[arg(long, value_name = "FILE")]
        documents: Option<PathBuf>,
        /// Optional dialogue JSONL to count instructions and turns.
        #[arg(long, value_name = "FILE")]
        dialogues: Option<PathBuf>,
        /// Optional split JSON to report train/test sizes.
        #[arg(long, value_name = "FILE")]
        split: Option<PathBuf>,
    },
    /// Judge-versus-human correlation over a score-pair JSONL file.
    Correlate {
        /// Lines of {"item_id","judge_score","human_score"[,"metric"]}.
        pairs: PathBuf,
        /// Pool all pairs or correlate each tagged metric separately.
        #[arg(long, value_enum, default_value_t = Pooling::Pooled)]
        pooling: Pooling,
    },
    /// Load, merge, and validate configuration, then print the result.
    ValidateConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum IngestFormatArg {
    Jsonl,
    Dir,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExportKind {
    Sft,
    Pairs,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Pooling {
    Pooled,
    PerMetric,
}

// --- configuration -------------------------------------------------------

/// One backend section of the config file. Mock backends replay a script;
/// HTTP backends use the flattened connection settings and read their key
/// from `COD_FORGE_API_KEY`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct BackendSpec {
    kind: BackendKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    script: Option<PathBuf>,
    #[serde(flatten)]
    settings: BackendConfig,
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec {
            kind: BackendKind::Mock,
            script: None,
            settings: BackendConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PathsSpec {
    documents: PathBuf,
    dialogues: PathBuf,
    evaluations: PathBuf,
    split: PathBuf,
    sft: PathBuf,
    generator_pairs: PathBuf,
}

impl Default for PathsSpec {
    fn default() -> Self {
        PathsSpec {
            documents: "out/documents.jsonl".into(),
            dialogues: "out/dialogues.jsonl".into(),
            evaluations: "out/evaluations.jsonl".into(),
            split: "out/split.json".into(),
            sft: "out/sft.jsonl".into(),
            generator_pairs: "out/generator_pairs.jsonl".into(),
        }
    }
}

/// The fully merged pipeline configuration: defaults, then the config file,
/// then command-line flags, later layers winning.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PipelineConfig {
    mode: Mode,
    cr_method: CrMethod,
    backend: BackendSpec,
    judge: BackendSpec,
    generation: GenerationConfig,
    thresholds: FilterThresholds,
    paths: PathsSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mode: Mode::CoD,
            cr_method: CrMethod::Deterministic,
            backend: BackendSpec::default(),
            judge: BackendSpec::default(),
            generation: GenerationConfig::default(),
            thresholds: FilterThresholds::default(),
            paths: PathsSpec::default(),
        }
    }
}

/// Run-shaping knobs that live on the command line only.
#[derive(Debug)]
struct RunOptions {
    parallelism: usize,
    dry_run: bool,
    test_fraction: f64,
}

fn resolve_config(common: &CommonArgs) -> Result<(PipelineConfig, RunOptions), Failure> {
    let mut cfg = match &common.config {
        Some(path) => {
            let raw = fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str::<PipelineConfig>(&raw)
                .map_err(|e| Failure::Config(format!("bad config {}: {e}", path.display())))?
        }
        None => PipelineConfig::default(),
    };

    if let Some(mode) = common.mode {
        cfg.mode = mode;
    }
    if let Some(cr) = common.cr {
        cfg.cr_method = cr;
    }
    if let Some(kind) = common.backend {
        cfg.backend.kind = kind;
    }
    if let Some(script) = &common.script {
        cfg.backend.script = Some(script.clone());
    }
    if let Some(kind) = common.judge {
        cfg.judge.kind = kind;
    }
    if let Some(script) = &common.judge_script {
        cfg.judge.script = Some(script.clone());
    }
    if let Some(seed) = common.seed {
        cfg.generation.seed = seed;
    }

    cfg.generation.validate().map_err(config_err)?;
    if !(0.0..=1.0).contains(&cfg.thresholds.min_grounded) {
        return Err(Failure::Config(format!(
            "thresholds.min_grounded {} outside [0, 1]",
            cfg.thresholds.min_grounded
        )));
    }

    let test_fraction = common.test_fraction.unwrap_or(0.1);
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Failure::Config(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let parallelism = common.parallelism.unwrap_or(4);
    if parallelism == 0 {
        return Err(Failure::Config("parallelism must be at least 1".into()));
    }

    Ok((
        cfg,
        RunOptions {
            parallelism,
            dry_run: common.dry_run,
            test_fraction,
        },
    ))
}

fn validate_backend(spec: &BackendSpec, which: &str) -> Result<(), Failure> {
    match spec.kind {
        BackendKind::Mock => match &spec.script {
            Some(path) if path.is_file() => Ok(()),
            Some(path) => Err(Failure::Config(format!(
                "{which} script not found: {}",
                path.display()
            ))),
            None => Err(Failure::Config(format!(
                "{which} is a mock but no script path is configured"
            ))),
        },
        BackendKind::Http => spec
            .settings
            .validate()
            .map_err(|e| Failure::Config(format!("{which}: {e}"))),
    }
}

fn make_backend(spec: &BackendSpec) -> Result<Box<dyn ChatBackend>, Failure> {
    match spec.kind {
        BackendKind::Mock => {
            let path = spec
                .script
                .as_ref()
                .ok_or_else(|| Failure::Config("mock backend has no script path".into()))?;
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "script".into());
            let backend = ScriptedBackend::from_path(path)
                .map_err(config_err)?
                .with_name(format!("mock:{stem}"));
            Ok(Box::new(backend))
        }
        BackendKind::Http => Ok(Box::new(
            HttpBackend::new(spec.settings.clone()).map_err(config_err)?,
        )),
    }
}

fn ensure_input(path: &Path, what: &str) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Config(format!(
            "{what} not found: {}",
            path.display()
        )))
    }
}

fn prepare_output(path: &Path) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| {
                Failure::Runtime(format!("cannot create {}: {e}", parent.display()))
            })?;
        }
    }
    Ok(())
}

// --- worker pool ----------------------------------------------------------

/// Run `work` over `items` on a bounded pool, returning results in input
/// order regardless of which worker finished first.
fn parallel_map<T, R, F>(items: &[T], workers: usize, work: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let n = items.len();
    if n == 0 {
        return Vec::new();
    }
    let workers = workers.clamp(1, n);
    let next = AtomicUsize::new(0);
    let mut indexed: Vec<(usize, R)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut local = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= n {
                            break;
                        }
                        local.push((i, work(&items[i])));
                    }
                    local
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    indexed.sort_by_key(|(i, _)| *i);
    indexed.into_iter().map(|(_, r)| r).collect()
}

// --- subcommands ----------------------------------------------------------

fn read_documents(path: &Path) -> Result<DocumentSet, Failure> {
    let docs: Vec<Document> = read_jsonl(path).map_err(runtime_err)?;
    DocumentSet::new(docs).map_err(runtime_err)
}

fn cmd_ingest(
    cfg: &PipelineConfig,
    run: &RunOptions,
    input: Option<PathBuf>,
    output: Option<PathBuf>,
    format: Option<IngestFormatArg>,
) -> Result<(), Failure> {
    let input = input.ok_or_else(|| Failure::Config("ingest needs --input".into()))?;
    ensure_input(&input, "raw corpus")?;
    let format = match format {
        Some(IngestFormatArg::Jsonl) => IngestFormat::Jsonl,
        Some(IngestFormatArg::Dir) => IngestFormat::PlainDir,
        None if input.is_dir() => IngestFormat::PlainDir,
        None => IngestFormat::Jsonl,
    };
    let (docs, report) = ingest_documents(&input, format).map_err(runtime_err)?;
    for rejection in &report.rejections {
        log(
            "document_rejected",
            serde_json::json!({
                "location": rejection.location,
                "id": rejection.id,
                "reason": rejection.reason,
            }),
        );
    }
    log(
        "ingest_done",
        serde_json::json!({ "accepted": report.accepted, "rejected": report.rejections.len() }),
    );
    if run.dry_run {
        log("dry_run", serde_json::json!({ "writes_skipped": 1 }));
        return Ok(());
    }
    let output = output.unwrap_or_else(|| cfg.paths.documents.clone());
    prepare_output(&output)?;
    let written = write_documents_jsonl(&output, &docs).map_err(runtime_err)?;
    log(
        "documents_written",
        serde_json::json!({ "path": output.display().to_string(), "count": written }),
    );
    Ok(())
}

fn cmd_generate(
    cfg: &PipelineConfig,
    run: &RunOptions,
    input: Option<PathBuf>,
    output: Option<PathBuf>,
) -> Result<(), Failure> {
    validate_backend(&cfg.backend, "backend")?;
    let input = input.unwrap_or_else(|| cfg.paths.documents.clone());
    ensure_input(&input, "documents file")?;
    let docs = read_documents(&input)?;
    log(
        "generation_planned",
        serde_json::json!({
            "documents": docs.len(),
            "mode": cfg.mode.to_string(),
            "parallelism": run.parallelism,
        }),
    );
    if run.dry_run {
        log("dry_run", serde_json::json!({ "writes_skipped": 1 }));
        return Ok(());
    }

    let results = parallel_map(docs.documents(), run.parallelism, |doc| {
        let backend = make_backend(&cfg.backend)?;
        let generator = DialogueGenerator::new(backend.as_ref(), cfg.generation.clone())
            .map_err(runtime_err)?;
        let outcome = generator
            .generate_dialogue(doc, cfg.mode)
            .map_err(|e| Failure::Runtime(format!("document {}: {e}", doc.id)))?;
        let verdict = filter_dialogue(&outcome.dialogue, doc, &cfg.thresholds);
        Ok::<_, Failure>((outcome, verdict))
    });

    let mut accepted: Vec<Dialogue> = Vec::new();
    let mut rejected = 0usize;
    for result in results {
        let (outcome, verdict) = result?;
        for event in &outcome.events {
            log(
                "build_event",
                serde_json::json!({
                    "dialogue": outcome.dialogue.id,
                    "detail": serde_json::to_value(event).unwrap_or_default(),
                }),
            );
        }
        match verdict {
            FilterVerdict::Accept => accepted.push(outcome.dialogue),
            FilterVerdict::Reject { reason } => {
                rejected += 1;
                log(
                    "dialogue_rejected",
                    serde_json::json!({ "dialogue": outcome.dialogue.id, "reason": reason }),
                );
            }
        }
    }

    let output = output.unwrap_or_else(|| cfg.paths.dialogues.clone());
    prepare_output(&output)?;
    let written = write_dialogues_jsonl(&accepted, &output).map_err(runtime_err)?;
    log(
        "dialogues_written",
        serde_json::json!({
            "path": output.display().to_string(),
            "accepted": written,
            "rejected": rejected,
        }),
    );
    Ok(())
}

fn cmd_evaluate(
    cfg: &PipelineConfig,
    run: &RunOptions,
    dialogues: Option<PathBuf>,
    documents: Option<PathBuf>,
    output: Option<PathBuf>,
) -> Result<(), Failure> {
    validate_backend(&cfg.judge, "judge")?;
    let dialogues_path = dialogues.unwrap_or_else(|| cfg.paths.dialogues.clone());
    let documents_path = documents.unwrap_or_else(|| cfg.paths.documents.clone());
    ensure_input(&dialogues_path, "dialogues file")?;
    ensure_input(&documents_path, "documents file")?;
    let dlgs = read_dialogues_jsonl(&dialogues_path).map_err(runtime_err)?;
    let docs = read_documents(&documents_path)?;
    log(
        "evaluation_planned",
        serde_json::json!({
            "dialogues": dlgs.len(),
            "cr_method": serde_json::to_value(cfg.cr_method).unwrap_or_default(),
            "parallelism": run.parallelism,
        }),
    );
    if run.dry_run {
        log("dry_run", serde_json::json!({ "writes_skipped": 1 }));
        return Ok(());
    }

    let results = parallel_map(&dlgs, run.parallelism, |dlg| {
        let doc = docs.get(&dlg.document_id).ok_or_else(|| {
            Failure::Runtime(format!(
                "dialogue {} references missing document {}",
                dlg.id, dlg.document_id
            ))
        })?;
        let judge = make_backend(&cfg.judge)?;
        Evaluator::new(judge.as_ref(), cfg.cr_method)
            .with_thresholds(cfg.thresholds.clone())
            .evaluate(dlg, doc)
            .map_err(|e| Failure::Runtime(format!("dialogue {}: {e}", dlg.id)))
    });

    let mut evaluations: Vec<DialogueEvaluation> = Vec::new();
    let mut gapped = 0usize;
    for result in results {
        let evaluation = result?;
        if !evaluation.gaps.is_empty() {
            gapped += 1;
            log(
                "evaluation_gaps",
                serde_json::json!({
                    "dialogue": evaluation.dialogue_id,
                    "gaps": evaluation.gaps,
                }),
            );
        }
        evaluations.push(evaluation);
    }

    let output = output.unwrap_or_else(|| cfg.paths.evaluations.clone());
    prepare_output(&output)?;
    let written = write_jsonl(&output, &evaluations).map_err(runtime_err)?;
    log(
        "evaluations_written",
        serde_json::json!({
            "path": output.display().to_string(),
            "count": written,
            "with_gaps": gapped,
        }),
    );

    if evaluations.iter().any(|e| e.is_complete()) {
        let rows = summarize(&evaluations, GroupBy::Mode).map_err(runtime_err)?;
        print!("{}", render_table(&rows));
    }
    Ok(())
}

fn cmd_split(
    cfg: &PipelineConfig,
    run: &RunOptions,
    dialogues: Option<PathBuf>,
    output: Option<PathBuf>,
) -> Result<(), Failure> {
    let dialogues_path = dialogues.unwrap_or_else(|| cfg.paths.dialogues.clone());
    ensure_input(&dialogues_path, "dialogues file")?;
    let dlgs = read_dialogues_jsonl(&dialogues_path).map_err(runtime_err)?;
    let ids: Vec<String> = dlgs.iter().map(|d| d.id.clone()).collect();
    let result = split(&ids, run.test_fraction, cfg.generation.seed).map_err(runtime_err)?;
    log(
        "split_done",
        serde_json::json!({
            "train": result.train.len(),
            "test": result.test.len(),
            "seed": result.seed,
            "test_fraction": result.test_fraction,
        }),
    );
    if run.dry_run {
        log("dry_run", serde_json::json!({ "writes_skipped": 1 }));
        return Ok(());
    }
    let output = output.unwrap_or_else(|| cfg.paths.split.clone());
    prepare_output(&output)?;
    let mut body = serde_json::to_string_pretty(&result)
        .map_err(|e| Failure::Runtime(format!("cannot serialize split: {e}")))?;
    body.push('\n');
    write_atomic(&output, body.as_bytes()).map_err(runtime_err)?;
    log(
        "split_written",
        serde_json::json!({ "path": output.display().to_string() }),
    );
    Ok(())
}

fn cmd_export(
    cfg: &PipelineConfig,
    run: &RunOptions,
    dialogues: Option<PathBuf>,
    documents: Option<PathBuf>,
    sft: Option<PathBuf>,
    pairs: Option<PathBuf>,
    kind: ExportKind,
) -> Result<(), Failure> {
    let dialogues_path = dialogues.unwrap_or_else(|| cfg.paths.dialogues.clone());
    ensure_input(&dialogues_path, "dialogues file")?;
    let dlgs = read_dialogues_jsonl(&dialogues_path).map_err(runtime_err)?;

    let want_sft = matches!(kind, ExportKind::Sft | ExportKind::Both);
    let want_pairs = matches!(kind, ExportKind::Pairs | ExportKind::Both);

    let docs = if want_pairs {
        let documents_path = documents.unwrap_or_else(|| cfg.paths.documents.clone());
        ensure_input(&documents_path, "documents file")?;
        Some(read_documents(&documents_path)?)
    } else {
        None
    };

    if run.dry_run {
        // Validation without the write: every record must be exportable.
        for dlg in &dlgs {
            SftRecord::from_dialogue(dlg).map_err(runtime_err)?;
            if let Some(docs) = &docs {
                if docs.get(&dlg.document_id).is_none() {
                    return Err(Failure::Runtime(format!(
                        "dialogue {} references missing document {}",
                        dlg.id, dlg.document_id
                    )));
                }
            }
        }
        log("dry_run", serde_json::json!({ "writes_skipped": 1 }));
        return Ok(());
    }

    if want_sft {
        let path = sft.unwrap_or_else(|| cfg.paths.sft.clone());
        prepare_output(&path)?;
        let written = export_sft_jsonl(&dlgs, &path).map_err(runtime_err)?;
        log(
            "sft_written",
            serde_json::json!({ "path": path.display().to_string(), "count": written }),
        );
    }
    if let Some(docs) = &docs {
        let path = pairs.unwrap_or_else(|| cfg.paths.generator_pairs.clone());
        prepare_output(&path)?;
        let written = export_generator_pairs(docs, &dlgs, &path).map_err(runtime_err)?;
        log(
            "pairs_written",
            serde_json::json!({ "path": path.display().to_string(), "count": written }),
        );
    }
    Ok(())
}

fn cmd_stats(
    cfg: &PipelineConfig,
    documents: Option<PathBuf>,
    dialogues: Option<PathBuf>,
    split_path: Option<PathBuf>,
) -> Result<(), Failure> {
    let documents_path = documents.unwrap_or_else(|| cfg.paths.documents.clone());
    ensure_input(&documents_path, "documents file")?;
    let docs = read_documents(&documents_path)?;

    let dlgs: Option<Vec<Dialogue>> = match dialogues {
        Some(path) => {
            ensure_input(&path, "dialogues file")?;
            Some(read_dialogues_jsonl(&path).map_err(runtime_err)?)
        }
        None if cfg.paths.dialogues.is_file() => {
            Some(read_dialogues_jsonl(&cfg.paths.dialogues).map_err(runtime_err)?)
        }
        None => None,
    };
    let split_result: Option<SplitResult> = match split_path {
        Some(path) => {
            ensure_input(&path, "split file")?;
            let raw = fs::read_to_string(&path)
                .map_err(|e| Failure::Runtime(format!("cannot read {}: {e}", path.display())))?;
            Some(serde_json::from_str(&raw).map_err(runtime_err)?)
        }
        None if cfg.paths.split.is_file() => {
            let raw = fs::read_to_string(&cfg.paths.split).map_err(runtime_err)?;
            Some(serde_json::from_str(&raw).map_err(runtime_err)?)
        }
        None => None,
    };

    let stats =
        compute_corpus_stats(&docs, dlgs.as_deref(), split_result.as_ref()).map_err(runtime_err)?;
    print!("{}", stats.render_table());
    Ok(())
}

fn cmd_correlate(pairs_path: &Path, pooling: Pooling) -> Result<(), Failure> {
    ensure_input(pairs_path, "score pairs file")?;
    let pairs: Vec<ScorePair> = read_jsonl(pairs_path).map_err(runtime_err)?;
    match pooling {
        Pooling::Pooled => {
            let report = correlation_report(&pairs).map_err(runtime_err)?;
            println!(
                "{}",
                serde_json::json!({
                    "pooling": "pooled",
                    "n": report.n,
                    "pearson": report.pearson,
                    "spearman": report.spearman,
                })
            );
        }
        Pooling::PerMetric => {
            let mut groups: std::collections::BTreeMap<String, Vec<ScorePair>> =
                std::collections::BTreeMap::new();
            let mut untagged = 0usize;
            for pair in pairs {
                match &pair.metric {
                    Some(metric) => groups.entry(metric.clone()).or_default().push(pair),
                    None => untagged += 1,
                }
            }
            if groups.is_empty() {
                return Err(Failure::Runtime(
                    "per-metric pooling needs \"metric\" tags on the score pairs".into(),
                ));
            }
            if untagged > 0 {
                log(
                    "untagged_pairs_skipped",
                    serde_json::json!({ "count": untagged }),
                );
            }
            for (metric, group) in groups {
                let report = correlation_report(&group).map_err(runtime_err)?;
                println!(
                    "{}",
                    serde_json::json!({
                        "pooling": "per-metric",
                        "metric": metric,
                        "n": report.n,
                        "pearson": report.pearson,
                        "spearman": report.spearman,
                    })
                );
            }
        }
    }
    Ok(())
}

fn cmd_validate_config(cfg: &PipelineConfig) -> Result<(), Failure> {
    validate_backend(&cfg.backend, "backend")?;
    validate_backend(&cfg.judge, "judge")?;
    let rendered =
        toml::to_string(cfg).map_err(|e| Failure::Runtime(format!("cannot render config: {e}")))?;
    print!("{rendered}");
    Ok(())
}

// --- entry point -----------------------------------------------------------

fn run(cli: Cli) -> Result<(), Failure> {
    let (cfg, run) = resolve_config(&cli.common)?;
    match cli.command {
        Command::Ingest {
            input,
            output,
            format,
        } => cmd_ingest(&cfg, &run, input, output, format),
        Command::Generate { input, output } => cmd_generate(&cfg, &run, input, output),
        Command::Evaluate {
            dialogues,
            documents,
            output,
        } => cmd_evaluate(&cfg, &run, dialogues, documents, output),
        Command::Split { dialogues, output } => cmd_split(&cfg, &run, dialogues, output),
        Command::Export {
            dialogues,
            documents,
            sft,
            pairs,
            kind,
        } => cmd_export(&cfg, &run, dialogues, documents, sft, pairs, kind),
        Command::Stats {
            documents,
            dialogues,
            split,
        } => cmd_stats(&cfg, documents, dialogues, split),
        Command::Correlate { pairs, pooling } => cmd_correlate(&pairs, pooling),
        Command::ValidateConfig => cmd_validate_config(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!(
                "{}",
                serde_json::json!({
                    "level": "error",
                    "category": failure.category(),
                    "message": failure.message(),
                })
            );
            failure.exit_code()
        }
    }
}
