//! Commands behind the `xlsm` binary, usable as a library by tests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use xlsm_core::analysis::{alignment_score, AlignmentReport};
use xlsm_core::config::ExperimentConfig;
use xlsm_core::corpus::{corpus_stats, load_corpus, render_stats, save_corpus, Corpus};
use xlsm_core::eval::{read_items, read_results, render_table, run_benchmark, write_items, write_results, BenchOptions, EvalItem, EvalResult};
use xlsm_core::model::checkpoint::Checkpoint;
use xlsm_core::model::{ModelParams, ScoreOptions};
use xlsm_core::synthlang::{generate_cloze, generate_minimal_pairs, generate_parallel_corpus, ClozeKind, PairKind};
use xlsm_core::train::{arm_dir, run_pipeline, TokenBudgetLedger};
use xlsm_core::{Error, ErrorClass, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_INCOMPLETE: i32 = 5;

pub fn exit_code(err: &Error) -> i32 {
    match err.class() {
        ErrorClass::Config => EXIT_CONFIG,
        ErrorClass::Data => EXIT_DATA,
        ErrorClass::Numeric => EXIT_NUMERIC,
        ErrorClass::Io => EXIT_OTHER,
    }
}

/// Exclusive ownership of a directory for the lifetime of the value.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(dir.to_path_buf())),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn corpus_for(cfg: &ExperimentConfig) -> Result<Corpus> {
    match &cfg.corpus {
        Some(dir) => load_corpus(dir),
        None => generate_parallel_corpus(&cfg.synth),
    }
}

/// Benchmark item sets named by kind, generated from the synthetic config.
pub fn benchmark_items(cfg: &ExperimentConfig) -> Result<Vec<(&'static str, Vec<EvalItem>)>> {
    let e = &cfg.eval;
    let mut sets = Vec::new();
    if e.topic_items > 0 {
        sets.push(("topic", generate_cloze(&cfg.synth, ClozeKind::Topic, e.topic_items)?));
    }
    if e.story_items > 0 {
        sets.push(("story", generate_cloze(&cfg.synth, ClozeKind::Story, e.story_items)?));
    }
    for (name, kind, n) in [
        ("syntax", PairKind::Syntax, e.syntax_items),
        ("lexical", PairKind::Lexical, e.lexical_items),
    ] {
        if n > 0 {
            let items = generate_minimal_pairs(&cfg.synth, kind, n)?
                .into_iter()
                .enumerate()
                .map(|(i, p)| {
                    let id = format!("{name}-{:05}-{}", i / 2, p.positive.lang);
                    p.into_eval_item(id)
                })
                .collect();
            sets.push((name, items));
        }
    }
    Ok(sets)
}

pub fn bench_options(cfg: &ExperimentConfig) -> BenchOptions {
    BenchOptions {
        score: ScoreOptions {
            normalize: cfg.eval.normalize,
            bos: cfg.synth.vocab.bos_id(),
        },
        strict_ties: cfg.eval.strict_ties,
    }
}

pub fn evaluate(params: &ModelParams<f32>, items: &[EvalItem], cfg: &ExperimentConfig) -> Result<Vec<EvalResult>> {
    run_benchmark(params, items, &bench_options(cfg))
}

pub fn analyze(params: &ModelParams<f32>, corpus: &Corpus, cfg: &ExperimentConfig) -> Result<AlignmentReport> {
    let pairs: Vec<_> = corpus.pairs().collect();
    alignment_score(params, &pairs, cfg.analysis.sample_n, cfg.seed)
}

/// Scores `items` and writes `eval.jsonl` and `eval.txt` to `dir`. With
/// length normalization on, the raw scores go to `eval-unnormalized.jsonl`
/// as well.
fn evaluate_into(
    dir: &Path,
    params: &ModelParams<f32>,
    items: &[EvalItem],
    cfg: &ExperimentConfig,
    label: &str,
) -> Result<String> {
    let results = evaluate(params, items, cfg)?;
    write_results(&dir.join("eval.jsonl"), &results)?;
    if cfg.eval.normalize {
        let mut raw = bench_options(cfg);
        raw.score.normalize = false;
        write_results(&dir.join("eval-unnormalized.jsonl"), &run_benchmark(params, items, &raw)?)?;
    }
    let table = render_table(&[(label, &results)]);
    write_file(&dir.join("eval.txt"), &table)?;
    Ok(table)
}

/// Writes the corpus, benchmark items and a config snapshot under `out`
/// and returns the statistics table.
pub fn cmd_synth_corpus(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let _lock = RunLock::acquire(out)?;
    write_file(&out.join("config.toml"), cfg.to_toml()?)?;
    let corpus = generate_parallel_corpus(&cfg.synth)?;
    let corpus_dir = out.join("corpus");
    fs::create_dir_all(&corpus_dir).map_err(|e| Error::io(&corpus_dir, e))?;
    save_corpus(&corpus, &corpus_dir)?;
    let items_dir = out.join("items");
    fs::create_dir_all(&items_dir).map_err(|e| Error::io(&items_dir, e))?;
    for (name, items) in benchmark_items(cfg)? {
        write_items(&items_dir.join(format!("{name}.jsonl")), &items)?;
    }
    Ok(render_stats(&corpus_stats(&corpus)))
}

#[derive(Debug, Serialize)]
struct Fingerprint {
    package: &'static str,
    version: &'static str,
    target_os: &'static str,
    target_arch: &'static str,
    debug_assertions: bool,
}

fn fingerprint() -> Fingerprint {
    Fingerprint {
        package: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        target_os: std::env::consts::OS,
        target_arch: std::env::consts::ARCH,
        debug_assertions: cfg!(debug_assertions),
    }
}

#[derive(Debug, Serialize)]
pub struct ArmSummary {
    pub name: String,
    pub artifacts: Vec<String>,
    pub tokens: std::collections::BTreeMap<String, u64>,
    pub total_tokens: u64,
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub started_unix: u64,
    pub finished_unix: u64,
    pub seed: u64,
    pub artifacts: Vec<String>,
    pub arms: Vec<ArmSummary>,
}

fn relative(root: &Path, p: &Path) -> String {
    p.strip_prefix(root).unwrap_or(p).display().to_string()
}

/// Trains every configured arm into `out` and, when enabled, scores the
/// benchmarks and alignment for each.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    let _lock = RunLock::acquire(out)?;
    let started_unix = unix_now();
    write_file(&out.join("config.toml"), cfg.to_toml()?)?;
    write_file(
        &out.join("fingerprint.json"),
        serde_json::to_string_pretty(&fingerprint())? + "\n",
    )?;
    let corpus = corpus_for(cfg)?;
    let corpus_dir = out.join("corpus");
    fs::create_dir_all(&corpus_dir).map_err(|e| Error::io(&corpus_dir, e))?;
    save_corpus(&corpus, &corpus_dir)?;

    let outcomes = run_pipeline(&corpus, &cfg.pipeline(), &cfg.arms, Some(out))?;

    let items = if cfg.train.evaluate && cfg.corpus.is_none() {
        benchmark_items(cfg)?.into_iter().flat_map(|(_, v)| v).collect()
    } else {
        if cfg.train.evaluate {
            log::warn!("external corpus: run `xlsm eval` with an items file to score the arms");
        }
        Vec::new()
    };
    let mut arms = Vec::new();
    for o in &outcomes {
        let dir = arm_dir(out, &o.name);
        if !items.is_empty() {
            log::info!("{}: scoring {} benchmark items", o.name, items.len());
            evaluate_into(&dir, &o.state.params, &items, cfg, &o.name)?;
            analyze(&o.state.params, &corpus, cfg)?.write(&dir.join("alignment.jsonl"))?;
        }
        let mut artifacts: Vec<String> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| relative(out, &e.path()))
            .collect();
        artifacts.sort();
        arms.push(ArmSummary {
            name: o.name.clone(),
            artifacts,
            tokens: o.state.ledger.totals(),
            total_tokens: o.state.ledger.grand_total(),
        });
    }
    let summary = RunSummary {
        started_unix,
        finished_unix: unix_now(),
        seed: cfg.seed,
        artifacts: vec![
            "config.toml".into(),
            "fingerprint.json".into(),
            "corpus/manifest.json".into(),
        ],
        arms,
    };
    write_file(&out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

fn items_from(path: &Path) -> Result<Vec<EvalItem>> {
    if !path.is_dir() {
        return read_items(path);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut items = Vec::new();
    for f in files {
        items.extend(read_items(&f)?);
    }
    Ok(items)
}

fn out_dir_for(checkpoint: &Path, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf).unwrap_or_else(|| {
        checkpoint
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."))
            .to_path_buf()
    })
}

/// Scores a checkpoint on an items file (or a directory of them).
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path, items: &Path, out: Option<&Path>) -> Result<String> {
    let dir = out_dir_for(checkpoint, out);
    let _lock = RunLock::acquire(&dir)?;
    let ck = Checkpoint::load(checkpoint)?;
    let items = items_from(items)?;
    if items.is_empty() {
        return Err(Error::InsufficientStories("no benchmark items found".into()));
    }
    let label = checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    evaluate_into(&dir, &ck.params, &items, cfg, label)
}

pub fn cmd_analyze(cfg: &ExperimentConfig, checkpoint: &Path, corpus: &Path, out: Option<&Path>) -> Result<AlignmentReport> {
    let dir = out_dir_for(checkpoint, out);
    let _lock = RunLock::acquire(&dir)?;
    let ck = Checkpoint::load(checkpoint)?;
    let corpus = load_corpus(corpus)?;
    let report = analyze(&ck.params, &corpus, cfg)?;
    report.write(&dir.join("alignment.jsonl"))?;
    Ok(report)
}

pub const ARM_ARTIFACTS: [&str; 5] = ["final.ckpt", "metrics.jsonl", "ledger.json", "eval.jsonl", "alignment.jsonl"];

pub struct Report {
    pub text: String,
    /// Arms with missing artifacts, each with the names of what is missing.
    pub incomplete: Vec<(String, Vec<String>)>,
}

/// Consolidated accuracy, alignment and token tables for a run directory.
/// Also written to `report.txt`.
pub fn cmd_report(run_dir: &Path) -> Result<Report> {
    let _lock = RunLock::acquire(run_dir)?;
    let cfg = ExperimentConfig::load(Some(&run_dir.join("config.toml")), &[])?;
    let mut evals: Vec<(String, Vec<EvalResult>)> = Vec::new();
    let mut aligns: Vec<(String, AlignmentReport)> = Vec::new();
    let mut ledgers: Vec<(String, TokenBudgetLedger)> = Vec::new();
    let mut incomplete = Vec::new();
    for arm in &cfg.arms {
        let dir = arm_dir(run_dir, &arm.name);
        let missing: Vec<String> = ARM_ARTIFACTS
            .iter()
            .filter(|a| !dir.join(a).is_file())
            .map(|a| a.to_string())
            .collect();
        if dir.join("eval.jsonl").is_file() {
            evals.push((arm.name.clone(), read_results(&dir.join("eval.jsonl"))?));
        }
        if dir.join("alignment.jsonl").is_file() {
            aligns.push((arm.name.clone(), AlignmentReport::read(&dir.join("alignment.jsonl"))?));
        }
        let ledger_path = dir.join("ledger.json");
        if ledger_path.is_file() {
            let text = fs::read_to_string(&ledger_path).map_err(|e| Error::io(&ledger_path, e))?;
            ledgers.push((arm.name.clone(), serde_json::from_str(&text)?));
        }
        if !missing.is_empty() {
            incomplete.push((arm.name.clone(), missing));
        }
    }

    let mut text = format!("run: {}\n\naccuracy (%)\n", run_dir.display());
    let groups: Vec<(&str, &[EvalResult])> = evals.iter().map(|(n, r)| (n.as_str(), r.as_slice())).collect();
    text.push_str(&render_table(&groups));
    text.push_str("\nalignment (mean layer-wise cosine)\n");
    let w = cfg.arms.iter().map(|a| a.name.len()).max().unwrap_or(3).max(3);
    for (name, a) in &aligns {
        let layers: Vec<String> = a.per_layer.iter().map(|c| format!("{c:+.4}")).collect();
        text.push_str(&format!(
            "{name:<w$}  overall {:+.4}  layers [{}]  pairs {}\n",
            a.overall,
            layers.join(", "),
            a.pair_count
        ));
    }
    text.push_str("\ntokens\n");
    for (name, l) in &ledgers {
        let per: Vec<String> = l.totals().iter().map(|(k, v)| format!("{k} {v}")).collect();
        text.push_str(&format!("{name:<w$}  {}  total {}\n", per.join("  "), l.grand_total()));
    }
    if !incomplete.is_empty() {
        text.push_str("\nincomplete\n");
        for (name, missing) in &incomplete {
            text.push_str(&format!("{name:<w$}  missing {}\n", missing.join(", ")));
        }
    }
    write_file(&run_dir.join("report.txt"), &text)?;
    Ok(Report { text, incomplete })
}
