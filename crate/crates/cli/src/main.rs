//! `admux` — command-line front end for the advertisement analysis
//! pipeline: feature extraction and caching, effectiveness model
//! training and evaluation, dominant-emotion reports, and forest-based
//! feature importance.
//!
//! All settings live in one JSON configuration file (`--config`);
//! individual flags override file values. The cache directory falls
//! back to `ADMUX_CACHE_DIR` when neither a flag nor the file sets it.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use admux_core::data::Modality;
use admux_core::pipeline::{
    cmd_emotion, cmd_eval, cmd_extract, cmd_importance, cmd_mcnemar, cmd_train, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "admux",
    version,
    about = "Multimodal advertisement analysis: extract features, train and \
             evaluate effectiveness models, report emotions and feature importance"
)]
struct Cli {
    /// JSON run-configuration file (flags override file values).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Seed for every random choice (splits, init, forests).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for extraction (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    /// Recompute cache entries even when they are valid.
    #[arg(long, global = true)]
    force: bool,

    /// Manifest of advertisements (JSON Lines).
    #[arg(long, global = true, value_name = "FILE")]
    manifest: Option<PathBuf>,

    /// Feature cache directory.
    #[arg(long, global = true, value_name = "DIR")]
    cache_dir: Option<PathBuf>,

    /// Directory that receives all reports and checkpoints.
    #[arg(long, global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,

    /// Effectiveness model: lstm or dbm.
    #[arg(long, global = true)]
    model: Option<String>,

    /// Modalities to feed the model: "all" or a comma list of
    /// video,audio,text.
    #[arg(long, global = true, value_parser = parse_modalities)]
    modalities: Option<Vec<Modality>>,

    /// Ground truth: user_study, comment_sentiment, or likes_views.
    #[arg(long, global = true)]
    ground_truth: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract video, audio, and text features for every manifest
    /// record into the cache. Valid entries are skipped unless
    /// --force; unreadable ones are recomputed.
    Extract,
    /// Train the configured model on every manifest record and write a
    /// checkpoint plus the per-epoch loss curve.
    Train,
    /// Repeatedly split the manifest, train, and score held-out
    /// records; writes metrics (JSON + CSV) and per-run predictions.
    Eval {
        /// Compare two predictions.json files from previous eval runs
        /// with an exact paired significance test instead.
        #[arg(long, num_args = 2, value_names = ["A", "B"])]
        mcnemar: Option<Vec<PathBuf>>,
        /// Number of train/test repetitions.
        #[arg(long)]
        runs: Option<usize>,
        /// Training records per repetition.
        #[arg(long)]
        train_size: Option<usize>,
        /// Held-out records per repetition.
        #[arg(long)]
        test_size: Option<usize>,
    },
    /// Per-advertisement emotion distributions with per-category
    /// aggregates.
    Emotion {
        /// Detector: lexicon or lstm.
        #[arg(long)]
        detector: Option<String>,
    },
    /// Rank audio-visual summary features by forest importance.
    Importance {
        /// How many top features to report.
        #[arg(long)]
        top_k: Option<usize>,
    },
}

fn parse_modalities(s: &str) -> Result<Vec<Modality>, String> {
    if s.trim() == "all" {
        return Ok(Modality::ALL.to_vec());
    }
    s.split(',')
        .map(|part| match part.trim() {
            "video" => Ok(Modality::Video),
            "audio" => Ok(Modality::Audio),
            "text" => Ok(Modality::Text),
            other => Err(format!(
                "unknown modality '{other}' (expected all, video, audio, or text)"
            )),
        })
        .collect()
}

/// Builds the effective configuration: file values first, then the
/// `ADMUX_CACHE_DIR` fallback when the file leaves the cache directory
/// unset, then flag overrides on top.
fn build_config(cli: &Cli) -> Result<RunConfig> {
    let (mut cfg, file_sets_cache_dir) = match &cli.config {
        Some(path) => {
            let raw = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            let value: serde_json::Value = serde_json::from_str(&raw)
                .with_context(|| format!("parsing config {}", path.display()))?;
            let has_key = value.get("cache_dir").is_some();
            (RunConfig::load(path)?, has_key)
        }
        None => (RunConfig::default(), false),
    };
    if cli.cache_dir.is_none() && !file_sets_cache_dir {
        if let Ok(dir) = std::env::var("ADMUX_CACHE_DIR") {
            if !dir.is_empty() {
                cfg.cache_dir = PathBuf::from(dir);
            }
        }
    }
    if let Some(v) = &cli.manifest {
        cfg.manifest = v.clone();
    }
    if let Some(v) = &cli.cache_dir {
        cfg.cache_dir = v.clone();
    }
    if let Some(v) = &cli.output_dir {
        cfg.output_dir = v.clone();
    }
    if let Some(v) = &cli.model {
        cfg.model = v.clone();
    }
    if let Some(v) = &cli.modalities {
        cfg.modalities = v.clone();
    }
    if let Some(v) = &cli.ground_truth {
        cfg.ground_truth = v.clone();
    }
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    match &cli.command {
        Command::Eval {
            runs,
            train_size,
            test_size,
            ..
        } => {
            if let Some(v) = runs {
                cfg.runs = *v;
            }
            if let Some(v) = train_size {
                cfg.train_size = *v;
            }
            if let Some(v) = test_size {
                cfg.test_size = *v;
            }
        }
        Command::Emotion { detector } => {
            if let Some(v) = detector {
                cfg.emotion_detector = v.clone();
            }
        }
        Command::Importance { top_k } => {
            if let Some(v) = top_k {
                cfg.top_k = *v;
            }
        }
        _ => {}
    }
    Ok(cfg)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = build_config(&cli)?;
    match &cli.command {
        Command::Extract => {
            let outcome = cmd_extract(&cfg, cli.jobs, cli.force)?;
            println!(
                "extract: {} computed, {} skipped, {} healed -> {}",
                outcome.fresh,
                outcome.skipped,
                outcome.healed,
                cfg.cache_dir.display()
            );
        }
        Command::Train => {
            let artifacts = cmd_train(&cfg)?;
            let last = artifacts.curve.last().copied().unwrap_or(f64::NAN);
            println!(
                "train: {} epochs, final loss {last:.6}\ncheckpoint: {}\nloss log:   {}",
                artifacts.curve.len(),
                artifacts.checkpoint.display(),
                artifacts.loss_log.display()
            );
        }
        Command::Eval { mcnemar, .. } => match mcnemar {
            Some(files) => {
                let [a, b] = files.as_slice() else {
                    bail!("--mcnemar takes exactly two prediction files");
                };
                let result = cmd_mcnemar(a, b)?;
                println!(
                    "mcnemar: first-only errors b={}, second-only errors c={}, p={:.6}",
                    result.b, result.c, result.p_value
                );
            }
            None => {
                let artifacts = cmd_eval(&cfg)?;
                println!(
                    "eval: model {} vs {} over {} runs: mean accuracy {:.4}, mean F1 {:.4}",
                    artifacts.report.model,
                    artifacts.report.ground_truth,
                    artifacts.report.runs.len(),
                    artifacts.report.mean_accuracy,
                    artifacts.report.mean_f1
                );
                println!("metrics:     {}", artifacts.metrics_json.display());
                println!("metrics CSV: {}", artifacts.metrics_csv.display());
                println!("predictions: {}", artifacts.predictions_json.display());
            }
        },
        Command::Emotion { .. } => {
            let (report, path) = cmd_emotion(&cfg)?;
            println!(
                "emotion: {} ads in {} categories ({} detector)",
                report.entries.len(),
                report.categories.len(),
                report.detector
            );
            for cat in &report.categories {
                println!("  {}: {} ads, dominant {}", cat.category, cat.count, cat.dominant);
            }
            println!("report: {}", path.display());
        }
        Command::Importance { .. } => {
            let (report, path) = cmd_importance(&cfg)?;
            println!(
                "importance: top {} of {} features ({} forest, {} ground truth)",
                report.top.len(),
                report.considered_features,
                report.variant,
                report.ground_truth
            );
            for (rank, entry) in report.top.iter().enumerate() {
                println!("  {:>2}. {:<28} {:.4}", rank + 1, entry.feature, entry.importance);
            }
            println!("report: {}", path.display());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(args).expect("arguments parse")
    }

    #[test]
    fn modality_lists_parse() {
        assert_eq!(parse_modalities("all").unwrap(), Modality::ALL.to_vec());
        assert_eq!(
            parse_modalities("video, text").unwrap(),
            vec![Modality::Video, Modality::Text]
        );
        assert!(parse_modalities("video,bogus").is_err());
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(
            &path,
            r#"{"seed": 5, "model": "dbm", "cache_dir": "from_file", "runs": 3}"#,
        )
        .unwrap();
        let cli = parse(&[
            "admux",
            "--config",
            path.to_str().unwrap(),
            "--seed",
            "9",
            "--model",
            "lstm",
            "eval",
            "--runs",
            "7",
        ]);
        let cfg = build_config(&cli).unwrap();
        assert_eq!(cfg.seed, 9, "flag beats file");
        assert_eq!(cfg.model, "lstm", "flag beats file");
        assert_eq!(cfg.runs, 7, "subcommand flag beats file");
        assert_eq!(cfg.cache_dir, PathBuf::from("from_file"), "file beats default");
        assert_eq!(cfg.ground_truth, "user_study", "untouched fields keep defaults");
    }

    #[test]
    fn subcommand_overrides_apply() {
        let cli = parse(&["admux", "emotion", "--detector", "lstm"]);
        assert_eq!(build_config(&cli).unwrap().emotion_detector, "lstm");
        let cli = parse(&["admux", "importance", "--top-k", "3"]);
        assert_eq!(build_config(&cli).unwrap().top_k, 3);
        let cli = parse(&["admux", "eval", "--train-size", "12", "--test-size", "4"]);
        let cfg = build_config(&cli).unwrap();
        assert_eq!((cfg.train_size, cfg.test_size), (12, 4));
    }

    /// All `ADMUX_CACHE_DIR` handling lives in one test because the
    /// process environment is shared across test threads.
    #[test]
    fn env_cache_dir_is_only_a_fallback() {
        let dir = tempfile::tempdir().unwrap();
        let with_key = dir.path().join("with.json");
        std::fs::write(&with_key, r#"{"cache_dir": "file_cache"}"#).unwrap();
        let without_key = dir.path().join("without.json");
        std::fs::write(&without_key, r#"{"seed": 1}"#).unwrap();

        std::env::set_var("ADMUX_CACHE_DIR", "env_cache");
        // No file, no flag: the environment fills the gap.
        let cfg = build_config(&parse(&["admux", "extract"])).unwrap();
        assert_eq!(cfg.cache_dir, PathBuf::from("env_cache"));
        // File sets the key: the environment must not override it.
        let cli = parse(&["admux", "--config", with_key.to_str().unwrap(), "extract"]);
        assert_eq!(build_config(&cli).unwrap().cache_dir, PathBuf::from("file_cache"));
        // File present but silent on the key: environment applies.
        let cli = parse(&["admux", "--config", without_key.to_str().unwrap(), "extract"]);
        assert_eq!(build_config(&cli).unwrap().cache_dir, PathBuf::from("env_cache"));
        // Flag beats everything.
        let cli = parse(&["admux", "--cache-dir", "flag_cache", "extract"]);
        assert_eq!(build_config(&cli).unwrap().cache_dir, PathBuf::from("flag_cache"));
        std::env::remove_var("ADMUX_CACHE_DIR");
        // Nothing set anywhere: the built-in default.
        let cfg = build_config(&parse(&["admux", "extract"])).unwrap();
        assert_eq!(cfg.cache_dir, RunConfig::default().cache_dir);
    }

    #[test]
    fn config_errors_are_reported() {
        let cli = parse(&["admux", "--config", "/no/such/config.json", "extract"]);
        let err = build_config(&cli).unwrap_err().to_string();
        assert!(err.contains("reading config"), "got: {err}");

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.json");
        std::fs::write(&path, "{ not json").unwrap();
        let cli = parse(&["admux", "--config", path.to_str().unwrap(), "extract"]);
        let err = build_config(&cli).unwrap_err().to_string();
        assert!(err.contains("parsing config"), "got: {err}");
    }
}
