//! `hmtl`: train, evaluate, probe and ablate hierarchical multi-task models.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a configuration
//! error (including command-line usage errors).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use hmtl::checkpoint;
use hmtl::config::setup_tasks;
use hmtl::corpus::{generate_synthetic_corpus, split_documents, write_jsonl, SyntheticConfig};
use hmtl::metrics::{MetricReport, TaskMetrics};
use hmtl::model::Model;
use hmtl::probe::{self, ProbeConfig, ProbeLayer, ProbeSizes, ProbeTask};
use hmtl::trainer::{self, TrainReport};
use hmtl::{Document, Error, Result, RunConfig, Task};
use serde_json::{json, Value};

const SEED_VAR: &str = "HMTL_SEED";

#[derive(Parser)]
#[command(name = "hmtl", version, about = "Hierarchical multi-task learning for NER, EMD, RE and coreference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints plus reports.
    Train(TrainArgs),
    /// Score a checkpoint on a data file.
    Eval(EvalArgs),
    /// Run logistic-regression probes over a checkpoint's sentence embeddings.
    Probe(ProbeArgs),
    /// Train a list of setups or embedding ablations and tabulate them.
    Ablate(AblateArgs),
    /// Write a synthetic corpus and probe tasks.
    GenerateData(GenerateArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines. Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key; repeatable, applied after the file and HMTL_SEED.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint directory, or a `train` output directory.
    #[arg(long)]
    checkpoint: PathBuf,
    /// `best` or `final` when --checkpoint is a train output directory.
    #[arg(long)]
    which: Option<String>,
    /// JSONL documents, or CoNLL columns for NER-only checkpoints.
    #[arg(long)]
    data: String,
    /// Score coreference on gold mentions.
    #[arg(long)]
    gold_mentions: bool,
    /// Comma-separated subset of the checkpoint's tasks.
    #[arg(long)]
    tasks: Option<String>,
    /// Refuse to run unless the checkpoint matches this config's architecture.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    which: Option<String>,
    /// Probe task files (`split<TAB>label<TAB>sentence`), comma-separated.
    #[arg(long, value_delimiter = ',')]
    tasks: Vec<PathBuf>,
    /// Generate SentLen, WC and BShift instead of reading files.
    #[arg(long)]
    synthetic: bool,
    /// Comma-separated layers, e.g. `g_emb-max,g_ner`. Defaults to all.
    #[arg(long)]
    layers: Option<String>,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    l2: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Setup letters (`B,C,D,E`) or embedding removals (`-context,-context-chars`).
    #[arg(long)]
    spec: String,
    /// Train the runs on separate threads.
    #[arg(long)]
    parallel: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    docs: usize,
    /// Defaults to HMTL_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Probe(a) => cmd_probe(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::GenerateData(a) => cmd_generate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_VAR}: expected an unsigned integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

/// File, then HMTL_SEED, then `--set` overrides.
fn resolve_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path).map_err(|e| match e {
            Error::Io { path, source } => Error::Config(format!("config: cannot read {}: {source}", path.display())),
            e => e,
        })?,
        None => RunConfig::default(),
    };
    if let Some(seed) = env_seed()? {
        cfg.seed = seed;
    }
    for item in &args.overrides {
        cfg.apply_override(item)?;
    }
    cfg.validate()?;
    check_data_paths(&cfg)?;
    Ok(cfg)
}

/// Missing data is a configuration problem, reported with the key to fix.
fn check_data_paths(cfg: &RunConfig) -> Result<()> {
    if cfg.data.synthetic_docs > 0 {
        return Ok(());
    }
    for &t in &cfg.tasks {
        let own = cfg.data.for_task(t);
        let slots = [
            ("train", &own.train, &cfg.data.shared.train),
            ("dev", &own.dev, &cfg.data.shared.dev),
            ("test", &own.test, &cfg.data.shared.test),
        ];
        for (split, task_path, shared_path) in slots {
            let (key, path) = match (task_path, shared_path) {
                (Some(p), _) => (format!("data.{t}.{split}"), p),
                (None, Some(p)) => (format!("data.{split}"), p),
                (None, None) if split == "train" => {
                    return Err(Error::Config(format!(
                        "data.train: no training data for task {t} (set data.train, data.{t}.train or data.synthetic_docs)"
                    )))
                }
                (None, None) => continue,
            };
            if !Path::new(path).is_file() {
                return Err(Error::Config(format!("{key}: {path} does not exist")));
            }
        }
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Train output directories hold `checkpoint/` (best dev) and `final/`.
fn resolve_checkpoint(path: &Path, which: Option<&str>) -> Result<(PathBuf, String)> {
    if path.join("manifest.json").is_file() {
        return Ok((path.to_path_buf(), "given".into()));
    }
    let which = match which {
        Some(w) => w.to_string(),
        None => match RunConfig::load(path.join("config.txt")) {
            Ok(cfg) => cfg.probe_checkpoint,
            Err(_) => "best".into(),
        },
    };
    let dir = match which.as_str() {
        "best" => path.join("checkpoint"),
        "final" => path.join("final"),
        _ => return Err(Error::Config(format!("--which: expected best or final, got {which:?}"))),
    };
    if !dir.join("manifest.json").is_file() {
        return Err(Error::Config(format!(
            "--checkpoint: no checkpoint at {} or {}",
            path.display(),
            dir.display()
        )));
    }
    Ok((dir, which))
}

/// The stored spec without its vocabularies, for embedding in reports.
fn spec_summary(model: &Model) -> Result<Value> {
    let mut v = serde_json::to_value(&model.spec)?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("word_vocab");
        obj.remove("char_vocab");
    }
    Ok(v)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = resolve_config(&args.config)?;
    create_dir(&args.out)?;
    let config_text = cfg.to_text();
    write_text(&args.out.join("config.txt"), &config_text)?;
    let data = trainer::load_data(&cfg)?;
    let started = Instant::now();
    let outcome = trainer::train(&cfg, &data)?;
    let wall = started.elapsed().as_secs_f64();
    let test = trainer::evaluate_all(&outcome.model, &data, cfg.gold_mentions, false)?;
    trainer::write_json(args.out.join("report.json"), &outcome.report)?;
    trainer::write_json(
        args.out.join("metrics.json"),
        &json!({
            "command": "train",
            "config": config_text,
            "seed": cfg.seed,
            "checkpoint": "best",
            "best_update": outcome.report.best_update,
            "dev": outcome.report.best_dev,
            "test": test,
        }),
    )?;
    let mut model = outcome.model;
    checkpoint::save(&model, &args.out.join("checkpoint"))?;
    model.store = outcome.final_params;
    checkpoint::save(&model, &args.out.join("final"))?;
    trainer::write_json(
        args.out.join("timing.json"),
        &json!({ "wall_seconds": wall, "updates": outcome.report.updates }),
    )?;
    println!(
        "stopped after {} updates ({}), best dev at update {}",
        outcome.report.updates, outcome.report.stop_reason, outcome.report.best_update
    );
    print!("dev\n{}", outcome.report.best_dev.to_table());
    if !test.tasks.is_empty() {
        print!("test\n{}", test.to_table());
    }
    Ok(())
}

/// Architecture fields that must agree between a config and a checkpoint.
fn check_compatible(cfg: &RunConfig, model: &Model) -> Result<()> {
    let spec = &model.spec;
    let mismatch = |what: &str| Err(Error::Dimension(format!("checkpoint and config disagree on {what}")));
    if cfg.tasks != spec.tasks {
        return mismatch("tasks");
    }
    if cfg.order != spec.order {
        return mismatch("order");
    }
    if cfg.embed != spec.embed {
        return mismatch("embed.*");
    }
    if cfg.encoder.hidden != spec.encoder.hidden || cfg.encoder.layers != spec.encoder.layers {
        return mismatch("encoder.hidden/encoder.layers");
    }
    if cfg.coref.hidden != spec.coref.hidden
        || cfg.coref.feature_dim != spec.coref.feature_dim
        || cfg.coref.max_width != spec.coref.max_width
    {
        return mismatch("coref.*");
    }
    if cfg.relation.hidden != spec.relation.hidden {
        return mismatch("relation.hidden");
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (dir, which) = resolve_checkpoint(&args.checkpoint, args.which.as_deref())?;
    let model = checkpoint::load(&dir)?;
    if let Some(path) = &args.config {
        check_compatible(&RunConfig::load(path)?, &model)?;
    }
    if args.gold_mentions && !model.has(Task::Cr) {
        return Err(Error::Config(
            "--gold-mentions: the checkpoint has no coreference task".into(),
        ));
    }
    let tasks: Vec<Task> = match &args.tasks {
        None => model.spec.tasks.clone(),
        Some(list) => {
            let mut out = Vec::new();
            for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                let t = Task::parse(part).ok_or_else(|| Error::Config(format!("--tasks: unknown task {part:?}")))?;
                if !model.has(t) {
                    return Err(Error::Config(format!("--tasks: the checkpoint has no {t} task")));
                }
                out.push(t);
            }
            out
        }
    };
    if !Path::new(&args.data).is_file() {
        return Err(Error::Config(format!("--data: {} does not exist", args.data)));
    }
    let mut report = MetricReport::default();
    let mut cache: BTreeMap<bool, Vec<Document>> = BTreeMap::new();
    for &t in &tasks {
        let key = t == Task::Ner;
        if !cache.contains_key(&key) {
            cache.insert(key, trainer::load_docs(&args.data, t)?);
        }
        let docs: Vec<&Document> = cache[&key].iter().collect();
        report.tasks.insert(t, model.evaluate(t, &docs, args.gold_mentions)?);
    }
    create_dir(&args.out)?;
    trainer::write_json(
        args.out.join("metrics.json"),
        &json!({
            "command": "eval",
            "checkpoint": dir.display().to_string(),
            "which": which,
            "data": args.data,
            "gold_mentions": args.gold_mentions,
            "seed": model.spec.seed,
            "model": spec_summary(&model)?,
            "metrics": report,
        }),
    )?;
    let table = report.to_table();
    write_text(&args.out.join("metrics.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_probe(args: ProbeArgs) -> Result<()> {
    let (dir, which) = resolve_checkpoint(&args.checkpoint, args.which.as_deref())?;
    let model = checkpoint::load(&dir)?;
    let seed = env_seed()?.unwrap_or(model.spec.seed);
    let mut tasks = Vec::new();
    for path in &args.tasks {
        if !path.is_file() {
            return Err(Error::Config(format!("--tasks: {} does not exist", path.display())));
        }
        tasks.push(ProbeTask::load(path)?);
    }
    if args.synthetic {
        let sizes = ProbeSizes::default();
        tasks.push(probe::sentence_length_task(seed, sizes)?);
        tasks.push(probe::word_content_task(seed, sizes)?);
        tasks.push(probe::bigram_shift_task(seed, sizes)?);
    }
    if tasks.is_empty() {
        return Err(Error::Config("probe: pass --tasks or --synthetic".into()));
    }
    let layers = match &args.layers {
        None => ProbeLayer::available(&model),
        Some(list) => list
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| ProbeLayer::parse(p).ok_or_else(|| Error::Config(format!("--layers: unknown layer {p:?}"))))
            .collect::<Result<Vec<_>>>()?,
    };
    for l in &layers {
        if let ProbeLayer::Task(t) = l {
            if !model.has(*t) {
                return Err(Error::Config(format!("--layers: the checkpoint has no {l} layer")));
            }
        }
    }
    let cfg = ProbeConfig {
        epochs: args.epochs,
        l2: args.l2,
    };
    let grid = probe::run_probe_suite(&model, &tasks, &layers, &cfg)?;
    create_dir(&args.out)?;
    trainer::write_json(
        args.out.join("probe.json"),
        &json!({
            "command": "probe",
            "checkpoint": dir.display().to_string(),
            "which": which,
            "seed": seed,
            "model": spec_summary(&model)?,
            "probe": cfg,
            "grid": grid,
        }),
    )?;
    let table = grid.to_tsv();
    write_text(&args.out.join("probe.tsv"), &table)?;
    print!("{table}");
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
enum Variant {
    Setup(String),
    /// Embeddings to switch off: any of `word`, `chars`, `context`.
    Remove(Vec<String>),
}

fn parse_ablation(spec: &str) -> Result<Vec<(String, Variant)>> {
    let mut out = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let variant = if let Some(rest) = item.strip_prefix('-') {
            let mut removed = Vec::new();
            for part in rest.split('-') {
                match part {
                    "word" | "chars" | "context" if !removed.iter().any(|r: &String| r == part) => {
                        removed.push(part.to_string())
                    }
                    _ => {
                        return Err(Error::Config(format!(
                            "ablate: {item:?} must remove word, chars or context, each at most once"
                        )))
                    }
                }
            }
            Variant::Remove(removed)
        } else {
            setup_tasks(item)?;
            Variant::Setup(item.to_ascii_uppercase())
        };
        out.push((item.to_string(), variant));
    }
    if out.is_empty() {
        return Err(Error::Config("ablate: the ablation spec is empty".into()));
    }
    Ok(out)
}

fn apply_variant(base: &RunConfig, variant: &Variant) -> Result<RunConfig> {
    let mut cfg = base.clone();
    match variant {
        Variant::Setup(s) => cfg.set("setup", s)?,
        Variant::Remove(parts) => {
            for p in parts {
                cfg.set(&format!("embed.{p}"), "false")?;
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

struct RunResult {
    name: String,
    cfg: RunConfig,
    report: TrainReport,
    test: MetricReport,
}

fn run_one(name: &str, cfg: &RunConfig, dir: &Path) -> Result<RunResult> {
    log::info!("ablation run {name}");
    create_dir(dir)?;
    write_text(&dir.join("config.txt"), &cfg.to_text())?;
    let data = trainer::load_data(cfg)?;
    let outcome = trainer::train(cfg, &data)?;
    let test = trainer::evaluate_all(&outcome.model, &data, cfg.gold_mentions, false)?;
    trainer::write_json(dir.join("report.json"), &outcome.report)?;
    trainer::write_json(
        dir.join("metrics.json"),
        &json!({
            "command": "ablate",
            "run": name,
            "config": cfg.to_text(),
            "seed": cfg.seed,
            "dev": outcome.report.best_dev,
            "test": test,
        }),
    )?;
    Ok(RunResult {
        name: name.to_string(),
        cfg: cfg.clone(),
        report: outcome.report,
        test,
    })
}

fn run_dir_name(index: usize, name: &str) -> String {
    let clean: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    format!("{index:02}-{clean}")
}

/// Table rows in task-ablation column order; test scores when a test split
/// exists, best dev otherwise.
fn ablation_table(runs: &[RunResult]) -> String {
    let mut out = String::from("run\ttasks\tword\tchars\tcontext\tNER\tEMD\tRE\tMUC\tB3\tCEAFe\tCR avg\tbest update\n");
    let pct = |x: f64| format!("{:.2}", 100.0 * x);
    for r in runs {
        let scores = if r.test.tasks.is_empty() { &r.report.best_dev } else { &r.test };
        let f1 = |t: Task| scores.get(t).map(|m| pct(m.primary())).unwrap_or_else(|| "-".into());
        let coref = match scores.get(Task::Cr) {
            Some(TaskMetrics::Coref(c)) => [pct(c.muc.f1), pct(c.b_cubed.f1), pct(c.ceaf_e.f1), pct(c.avg_f1)],
            _ => ["-".into(), "-".into(), "-".into(), "-".into()],
        };
        let tasks: Vec<&str> = r.cfg.tasks.iter().map(|t| t.as_str()).collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.name,
            tasks.join(","),
            r.cfg.embed.word,
            r.cfg.embed.chars,
            r.cfg.embed.context,
            f1(Task::Ner),
            f1(Task::Emd),
            f1(Task::Re),
            coref.join("\t"),
            r.report.best_update
        ));
    }
    out
}

/// Multi-task runs against single-task runs sharing their embedding flags.
fn speed_rows(runs: &[RunResult]) -> Vec<(String, String, trainer::SpeedRow)> {
    let mut out = Vec::new();
    for m in runs.iter().filter(|r| r.cfg.tasks.len() > 1) {
        for s in runs.iter().filter(|r| r.cfg.tasks.len() == 1 && r.cfg.embed == m.cfg.embed) {
            for row in trainer::compare_speed(&m.report, &s.report) {
                out.push((m.name.clone(), s.name.clone(), row));
            }
        }
    }
    out
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let base = resolve_config(&args.config)?;
    let variants = parse_ablation(&args.spec)?;
    let configs = variants
        .iter()
        .map(|(name, v)| Ok((name.clone(), apply_variant(&base, v)?)))
        .collect::<Result<Vec<_>>>()?;
    create_dir(&args.out)?;
    let dirs: Vec<PathBuf> = configs
        .iter()
        .enumerate()
        .map(|(i, (name, _))| args.out.join(run_dir_name(i, name)))
        .collect();
    let runs: Vec<RunResult> = if args.parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = configs
                .iter()
                .zip(&dirs)
                .map(|((name, cfg), dir)| scope.spawn(move || run_one(name, cfg, dir)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::Probe("ablation worker panicked".into()))))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        configs
            .iter()
            .zip(&dirs)
            .map(|((name, cfg), dir)| run_one(name, cfg, dir))
            .collect::<Result<Vec<_>>>()?
    };
    let table = ablation_table(&runs);
    let speed = speed_rows(&runs);
    let mut speed_tsv = String::from("multi\tsingle\ttask\tsingle updates\tmulti updates\tdelta updates %\tdelta F1\n");
    for (m, s, r) in &speed {
        speed_tsv.push_str(&format!(
            "{m}\t{s}\t{}\t{}\t{}\t{:+.0}\t{:+.2}\n",
            r.task, r.single_updates, r.multi_updates, r.delta_updates_pct, r.delta_f1
        ));
    }
    write_text(&args.out.join("ablation.tsv"), &table)?;
    write_text(&args.out.join("speed.tsv"), &speed_tsv)?;
    let runs_json: Vec<Value> = runs
        .iter()
        .map(|r| {
            json!({
                "run": r.name,
                "config": r.cfg.to_text(),
                "seed": r.cfg.seed,
                "tasks": r.cfg.tasks,
                "embed": { "word": r.cfg.embed.word, "chars": r.cfg.embed.chars, "context": r.cfg.embed.context },
                "encoder_input_dims": r.report.encoder_input_dims,
                "best_update": r.report.best_update,
                "dev": r.report.best_dev,
                "test": r.test,
            })
        })
        .collect();
    let speed_json: Vec<Value> = speed
        .iter()
        .map(|(m, s, r)| json!({ "multi": m, "single": s, "row": r }))
        .collect();
    trainer::write_json(
        args.out.join("ablation.json"),
        &json!({
            "command": "ablate",
            "spec": args.spec,
            "base_config": base.to_text(),
            "seed": base.seed,
            "runs": runs_json,
            "speed": speed_json,
        }),
    )?;
    print!("{table}");
    if !speed.is_empty() {
        print!("\n{speed_tsv}");
    }
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    if args.docs < 3 {
        return Err(Error::Config("--docs: need at least 3 documents for train/dev/test".into()));
    }
    let seed = match args.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let docs = generate_synthetic_corpus(seed, args.docs, &SyntheticConfig::default());
    let (train, dev, test) = split_documents(&docs, (0.8, 0.1, 0.1), seed)?;
    create_dir(&args.out)?;
    let mut config = format!("seed = {seed}\n");
    for (name, split) in [("train", &train), ("dev", &dev), ("test", &test)] {
        let path = args.out.join(format!("{name}.jsonl"));
        write_jsonl(&path, split)?;
        let shown = fs::canonicalize(&path).unwrap_or(path);
        config.push_str(&format!("data.{name} = {}\n", shown.display()));
    }
    write_text(&args.out.join("config.txt"), &config)?;
    let probe_dir = args.out.join("probe");
    create_dir(&probe_dir)?;
    let sizes = ProbeSizes::default();
    for task in [
        probe::sentence_length_task(seed, sizes)?,
        probe::word_content_task(seed, sizes)?,
        probe::bigram_shift_task(seed, sizes)?,
    ] {
        write_text(&probe_dir.join(format!("{}.tsv", task.name)), &task.to_tsv())?;
    }
    println!(
        "wrote {} train, {} dev, {} test documents and 3 probe tasks to {}",
        train.len(),
        dev.len(),
        test.len(),
        args.out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_spec_parsing() {
        let v = parse_ablation("B, C,-context,-context-chars").unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v[0].1, Variant::Setup("B".into()));
        assert_eq!(v[3].1, Variant::Remove(vec!["context".into(), "chars".into()]));
        assert!(parse_ablation(" , ").unwrap_err().is_config());
        assert!(parse_ablation("Z").unwrap_err().is_config());
        assert!(parse_ablation("-glove").unwrap_err().is_config());
        assert!(parse_ablation("-chars-chars").unwrap_err().is_config());
    }

    #[test]
    fn run_dirs_are_distinct() {
        assert_eq!(run_dir_name(3, "-context-chars"), "03-_context_chars");
        assert_ne!(run_dir_name(0, "A-GM"), run_dir_name(1, "A-GM"));
    }
}
