use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use xlsm_tool::*;
use xlsm_core::config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "xlsm", version, about = "Cross-lingual interleaving experiments on synthetic languages")]
struct Cli {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Config override, e.g. `--set optim.peak_lr=1e-3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Use the small smoke preset as the base config.
    #[arg(long, global = true)]
    smoke: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the parallel corpus and benchmark items.
    SynthCorpus,
    /// Train all arms of the experiment.
    Train,
    /// Score a checkpoint on benchmark items.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Items file, or a directory of `.jsonl` item files.
        #[arg(long)]
        items: PathBuf,
    },
    /// Measure cross-lingual alignment of a checkpoint.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Summarize a run directory.
    Report { run_dir: Option<PathBuf> },
}

fn load_config(cli: &Cli) -> xlsm_core::Result<ExperimentConfig> {
    let mut overrides = cli.set.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    if cli.smoke && cli.config.is_none() {
        return ExperimentConfig::smoke().with_overrides(&overrides);
    }
    ExperimentConfig::load(cli.config.as_deref(), &overrides)
}

fn require_out(cli: &Cli) -> xlsm_core::Result<PathBuf> {
    cli.out
        .clone()
        .ok_or_else(|| xlsm_core::Error::Config("--out is required for this command".into()))
}

fn run(cli: &Cli) -> xlsm_core::Result<i32> {
    match &cli.command {
        Command::SynthCorpus => {
            let cfg = load_config(cli)?;
            print!("{}", cmd_synth_corpus(&cfg, &require_out(cli)?)?);
        }
        Command::Train => {
            let cfg = load_config(cli)?;
            let out = require_out(cli)?;
            let summary = cmd_train(&cfg, &out)?;
            for arm in &summary.arms {
                println!("{}: {} tokens", arm.name, arm.total_tokens);
            }
            println!("run written to {}", out.display());
        }
        Command::Eval { checkpoint, items } => {
            let cfg = load_config(cli)?;
            print!("{}", cmd_eval(&cfg, checkpoint, items, cli.out.as_deref())?);
        }
        Command::Analyze { checkpoint, corpus } => {
            let cfg = load_config(cli)?;
            let r = cmd_analyze(&cfg, checkpoint, corpus, cli.out.as_deref())?;
            for (layer, c) in r.per_layer.iter().enumerate() {
                println!("layer {layer}: {c:+.4}");
            }
            println!("overall: {:+.4} over {} pairs", r.overall, r.pair_count);
        }
        Command::Report { run_dir } => {
            let dir = run_dir.clone().or_else(|| cli.out.clone()).ok_or_else(|| {
                xlsm_core::Error::Config("report needs a run directory".into())
            })?;
            let report = cmd_report(&dir)?;
            print!("{}", report.text);
            if !report.incomplete.is_empty() {
                return Ok(EXIT_INCOMPLETE);
            }
        }
    }
    Ok(EXIT_OK)
}

fn status(cli: &Cli) -> i32 {
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            exit_code(&e)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    ExitCode::from(status(&Cli::parse()) as u8)
}

#[cfg(test)]
mod tests {
    use std::path::Path;

    use super::*;

    fn xlsm(args: &[&str]) -> i32 {
        let argv = std::iter::once("xlsm").chain(args.iter().copied());
        status(&Cli::parse_from(argv))
    }

    fn path(p: &Path) -> &str {
        p.to_str().unwrap()
    }

    #[test]
    fn synth_corpus_is_byte_identical_per_seed() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
        for (out, seed) in [(&a, "3"), (&b, "3"), (&c, "4")] {
            let set = format!("synth.seed={seed}");
            assert_eq!(xlsm(&["--smoke", "--set", &set, "--out", path(out), "synth-corpus"]), 0);
        }
        let read = |root: &Path, f: &str| std::fs::read(root.join(f)).unwrap();
        for f in ["config.toml", "corpus/manifest.json", "corpus/sentences.en.jsonl", "items/topic.jsonl", "items/lexical.jsonl"] {
            assert_eq!(read(&a, f), read(&b, f), "{f}");
        }
        assert_ne!(read(&a, "corpus/sentences.en.jsonl"), read(&c, "corpus/sentences.en.jsonl"));
        assert!(!a.join(".lock").exists());
    }

    #[test]
    fn train_eval_analyze_report() {
        let dir = tempfile::tempdir().unwrap();
        let run = dir.path().join("run");
        assert_eq!(xlsm(&["--smoke", "--out", path(&run), "train"]), 0);

        let summary: serde_json::Value =
            serde_json::from_slice(&std::fs::read(run.join("summary.json")).unwrap()).unwrap();
        for a in summary["artifacts"].as_array().unwrap() {
            assert!(run.join(a.as_str().unwrap()).is_file(), "{a}");
        }
        let arms = summary["arms"].as_array().unwrap();
        assert_eq!(arms.len(), 5);
        for arm in arms {
            for a in arm["artifacts"].as_array().unwrap() {
                assert!(run.join(a.as_str().unwrap()).is_file(), "{a}");
            }
        }

        assert_eq!(xlsm(&["report", path(&run)]), 0);
        let text = std::fs::read_to_string(run.join("report.txt")).unwrap();
        assert!(text.contains("interleave+ft") && text.contains("en→fr"));

        // Re-score one arm from files written by synth-corpus.
        let data = dir.path().join("data");
        assert_eq!(xlsm(&["--smoke", "--out", path(&data), "synth-corpus"]), 0);
        let ckpt = run.join("arms/interleave/final.ckpt");
        let items = data.join("items");
        let out = dir.path().join("eval");
        assert_eq!(
            xlsm(&["--smoke", "--out", path(&out), "eval", "--checkpoint", path(&ckpt), "--items", path(&items)]),
            0
        );
        assert_eq!(
            std::fs::read(out.join("eval.jsonl")).unwrap(),
            std::fs::read(run.join("arms/interleave/eval.jsonl")).unwrap()
        );
        let corpus = data.join("corpus");
        assert_eq!(
            xlsm(&["--smoke", "--out", path(&out), "analyze", "--checkpoint", path(&ckpt), "--corpus", path(&corpus)]),
            0
        );
        assert_eq!(
            std::fs::read(out.join("alignment.jsonl")).unwrap(),
            std::fs::read(run.join("arms/interleave/alignment.jsonl")).unwrap()
        );

        std::fs::remove_file(run.join("arms/en+fr/eval.jsonl")).unwrap();
        assert_eq!(xlsm(&["report", path(&run)]), EXIT_INCOMPLETE);
        assert!(std::fs::read_to_string(run.join("report.txt")).unwrap().contains("missing eval.jsonl"));
    }

    #[test]
    fn normalized_scoring_keeps_raw_scores_too() {
        let dir = tempfile::tempdir().unwrap();
        let run = dir.path().join("run");
        let args = ["--smoke", "--set", "eval.normalize=true", "--set", "arms=[]", "--out", path(&run), "train"];
        assert_eq!(xlsm(&args), EXIT_CONFIG);
        let args = ["--smoke", "--set", "eval.normalize=true", "--out", path(&run), "train"];
        assert_eq!(xlsm(&args), 0);
        let arm = run.join("arms/interleave");
        // Both hold accuracy rows; a smoke model may rank every pair the same way under both.
        for f in ["eval.jsonl", "eval-unnormalized.jsonl"] {
            let rows = std::fs::read_to_string(arm.join(f)).unwrap();
            assert!(rows.lines().count() > 0, "{f}");
        }
    }

    #[test]
    fn exit_codes() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("x");
        assert_eq!(xlsm(&["--smoke", "--set", "model.d_model=15", "--out", path(&out), "train"]), EXIT_CONFIG);
        assert_eq!(xlsm(&["--smoke", "--set", "nonsense.key=1", "--out", path(&out), "train"]), EXIT_CONFIG);
        assert_eq!(xlsm(&["--smoke", "train"]), EXIT_CONFIG);

        std::fs::create_dir_all(&out).unwrap();
        std::fs::write(out.join(".lock"), "1").unwrap();
        let cli = Cli::parse_from(["xlsm", "--smoke", "--out", path(&out), "synth-corpus"]);
        assert!(matches!(run(&cli), Err(xlsm_core::Error::Locked(_))));
        assert_eq!(status(&cli), EXIT_OTHER);

        let bad = dir.path().join("items.jsonl");
        std::fs::write(&bad, "{not json}\n").unwrap();
        let good_ckpt = dir.path().join("none.ckpt");
        let code = xlsm(&["--out", path(dir.path()), "eval", "--checkpoint", path(&good_ckpt), "--items", path(&bad)]);
        assert_ne!(code, EXIT_OK);
    }
}
