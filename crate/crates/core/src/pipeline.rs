//! Orchestration: run configuration, feature extraction into the
//! on-disk cache, model training, the repeated train/test evaluation
//! protocol, emotion reporting, and feature-importance reporting.
//!
//! Every command is deterministic given the configuration, the seed,
//! and the cache state, and writes only beneath the configured output
//! directory (the cache directory for `extract`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::wav::read_wav;
use crate::audio::{extract_audio_features, AudioError, DEFAULT_ONSET_THRESHOLD};
use crate::data::{
    cache, load_manifest, AdRecord, DataError, EffectivenessLabel, Modality, ModalityFeatures,
};
use crate::emotion::{
    dominant_emotion, train_emotion_lstm, Emotion, EmotionDetector, EmotionDistribution,
    EmotionError, EmotionLexicon, EmotionLstmConfig, EmotionSample, LexiconDetector, LstmDetector,
};
use crate::eval::{
    create_labeler, evaluate, forest_importance, mcnemar_exact, split_dataset, EvalError,
    ForestConfig, McNemarResult, MetricsReport, RankTransform, RunRecord, SentimentLexicon,
};
use crate::matrix::Matrix;
use crate::mdbm::DbmConfig;
use crate::model::{create_model, ModelError, ModelInput, ModelSettings, MODEL_NAMES};
use crate::neural::{LstmModelConfig, NeuralError, TrainConfig};
use crate::rng::SplitMix64;
use crate::summary::{audio_summary, text_summary, video_summary, NamedVector, SummaryError};
use crate::text::{
    embed_tokens, extract_text_features, load_embeddings, tokenize, EmbeddingTable, TextError,
    EMBEDDING_DIM,
};
use crate::video::{extract_video_features_from_dir, VideoError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config {path}: {reason}")]
    Config { path: PathBuf, reason: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no cached {modality} features for \"{id}\" — run `extract` first")]
    MissingCache { id: String, modality: Modality },
    #[error("feature name '{0}' matches neither a summary feature nor a sequence dimension")]
    UnknownFeatureName(String),
    #[error("feature selection leaves no usable modality for model '{model}'")]
    NothingLeft { model: String },
    #[error("include and exclude feature lists cannot both be set")]
    ConflictingSelection,
    #[error("emotion detector 'lstm' needs emotion_train (a TSV of emotion<TAB>text lines)")]
    NeedsEmotionTraining,
    #[error("unknown emotion detector '{0}' (expected lexicon or lstm)")]
    UnknownDetector(String),
    #[error("emotion training file {path}, line {line}: {reason}")]
    EmotionTrainFormat {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("prediction files disagree on {0}")]
    PredictionMismatch(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Summary(#[from] SummaryError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Emotion(#[from] EmotionError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// The full run configuration. Loaded from one JSON file; command-line
/// flags override individual fields after loading.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// JSON-Lines manifest of advertisements.
    pub manifest: PathBuf,
    /// Feature cache directory (`ADMUX_CACHE_DIR` supplies a fallback).
    pub cache_dir: PathBuf,
    /// All reports and checkpoints land in per-command subdirectories
    /// of this directory.
    pub output_dir: PathBuf,
    /// Word-embedding table path.
    pub embeddings: PathBuf,
    pub embedding_dim: usize,
    /// Sentiment lexicon path; the bundled starter set when absent.
    pub sentiment_lexicon: Option<PathBuf>,
    /// Emotion lexicon path; the bundled starter set when absent.
    pub emotion_lexicon: Option<PathBuf>,
    /// Labeled texts (TSV `emotion<TAB>text`) for the recurrent emotion
    /// detector.
    pub emotion_train: Option<PathBuf>,
    /// Effectiveness model: "lstm" or "dbm".
    pub model: String,
    /// Modalities the model consumes.
    pub modalities: Vec<Modality>,
    /// Ground-truth metric: user_study, comment_sentiment, likes_views.
    pub ground_truth: String,
    /// Dominant-emotion strategy: "lexicon" or "lstm".
    pub emotion_detector: String,
    pub seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub runs: usize,
    /// Terms stripped from transcripts during extraction (one per
    /// line). Changing this invalidates cached text features; re-run
    /// extraction with --force or a fresh cache directory.
    pub ablate_terms: Option<PathBuf>,
    /// Feature names removed before training (matched against summary
    /// names and sequence dimension names).
    pub exclude_features: Vec<String>,
    /// When non-empty, keep ONLY these features (same matching rule).
    pub include_features: Vec<String>,
    /// How many features the importance report lists.
    pub top_k: usize,
    pub train: TrainConfig,
    pub lstm: LstmModelConfig,
    pub dbm: DbmConfig,
    pub forest: ForestConfig,
    pub emotion_lstm: EmotionLstmConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("manifest.jsonl"),
            cache_dir: PathBuf::from(".admux-cache"),
            output_dir: PathBuf::from("runs"),
            embeddings: PathBuf::from("embeddings.txt"),
            embedding_dim: EMBEDDING_DIM,
            sentiment_lexicon: None,
            emotion_lexicon: None,
            emotion_train: None,
            model: "lstm".to_string(),
            modalities: Modality::ALL.to_vec(),
            ground_truth: "user_study".to_string(),
            emotion_detector: "lexicon".to_string(),
            seed: 0,
            train_size: 150,
            test_size: 50,
            runs: 50,
            ablate_terms: None,
            exclude_features: Vec::new(),
            include_features: Vec::new(),
            top_k: 10,
            train: TrainConfig::default(),
            lstm: LstmModelConfig::default(),
            dbm: DbmConfig::default(),
            forest: ForestConfig::default(),
            emotion_lstm: EmotionLstmConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| PipelineError::Config {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Ok(cfg)
    }

    /// Cross-field checks shared by every command.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let complain = |reason: String| PipelineError::Config {
            path: self.manifest.clone(),
            reason,
        };
        if !MODEL_NAMES.contains(&self.model.as_str()) {
            return Err(complain(format!(
                "unknown model '{}' (expected one of {MODEL_NAMES:?})",
                self.model
            )));
        }
        if self.modalities.is_empty() {
            return Err(complain("no modalities selected".to_string()));
        }
        let mut seen = Vec::new();
        for m in &self.modalities {
            if seen.contains(m) {
                return Err(complain(format!("modality {m} listed twice")));
            }
            seen.push(*m);
        }
        if !crate::eval::LABELER_NAMES.contains(&self.ground_truth.as_str()) {
            return Err(complain(format!(
                "unknown ground truth '{}' (expected one of {:?})",
                self.ground_truth,
                crate::eval::LABELER_NAMES
            )));
        }
        if !self.exclude_features.is_empty() && !self.include_features.is_empty() {
            return Err(PipelineError::ConflictingSelection);
        }
        if self.runs == 0 || self.train_size == 0 || self.test_size == 0 {
            return Err(complain(
                "runs, train_size and test_size must all be positive".to_string(),
            ));
        }
        Ok(())
    }

    /// Deterministic per-command output directory.
    pub fn run_dir(&self, command: &str) -> PathBuf {
        self.output_dir.join(format!("{command}-seed{}", self.seed))
    }

    fn sentiment(&self) -> Result<SentimentLexicon, PipelineError> {
        Ok(match &self.sentiment_lexicon {
            Some(p) => SentimentLexicon::from_file(p)?,
            None => SentimentLexicon::bundled(),
        })
    }

    fn emotion_lexicon(&self) -> Result<EmotionLexicon, PipelineError> {
        Ok(match &self.emotion_lexicon {
            Some(p) => EmotionLexicon::from_file(p)?,
            None => EmotionLexicon::bundled(),
        })
    }

    fn ablation_terms(&self) -> Result<Vec<String>, PipelineError> {
        let Some(path) = &self.ablate_terms else {
            return Ok(Vec::new());
        };
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Ok(text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect())
    }
}

// ---------------------------------------------------------------------------
// extract
// ---------------------------------------------------------------------------

/// What extraction did, per cache entry.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ExtractOutcome {
    /// Entries computed for the first time (or recomputed under
    /// --force).
    pub fresh: usize,
    /// Valid entries left untouched.
    pub skipped: usize,
    /// Corrupt entries that were recomputed.
    pub healed: usize,
}

/// Extracts and caches all three modalities for every manifest record.
/// Idempotent: valid cache entries are skipped unless `force`; corrupt
/// entries are recomputed. Fans out across records up to `jobs` threads
/// (0 = library default).
pub fn cmd_extract(
    cfg: &RunConfig,
    jobs: usize,
    force: bool,
) -> Result<ExtractOutcome, PipelineError> {
    cfg.validate()?;
    let records = load_manifest(&cfg.manifest)?;
    let table = load_embeddings(&cfg.embeddings, cfg.embedding_dim)?;
    let ablate = cfg.ablation_terms()?;

    let run = || -> Result<Vec<ExtractOutcome>, PipelineError> {
        records
            .par_iter()
            .map(|r| extract_one(cfg, r, &table, &ablate, force))
            .collect()
    };
    let outcomes = if jobs == 0 {
        run()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| PipelineError::Config {
                path: cfg.manifest.clone(),
                reason: format!("thread pool: {e}"),
            })?;
        pool.install(run)?
    };
    Ok(outcomes.into_iter().fold(ExtractOutcome::default(), |a, b| {
        ExtractOutcome {
            fresh: a.fresh + b.fresh,
            skipped: a.skipped + b.skipped,
            healed: a.healed + b.healed,
        }
    }))
}

fn extract_one(
    cfg: &RunConfig,
    record: &AdRecord,
    table: &EmbeddingTable,
    ablate: &[String],
    force: bool,
) -> Result<ExtractOutcome, PipelineError> {
    let mut out = ExtractOutcome::default();
    for modality in Modality::ALL {
        let mut healed = false;
        if !force {
            match cache::read_features(&cfg.cache_dir, &record.id, modality) {
                Ok(_) => {
                    out.skipped += 1;
                    continue;
                }
                Err(DataError::CacheMissing { .. }) => {}
                Err(DataError::CacheCorrupt { .. }) | Err(DataError::CacheVersion { .. }) => {
                    healed = true
                }
                Err(e) => return Err(e.into()),
            }
        }
        let features = match modality {
            Modality::Video => extract_video_features_from_dir(&record.frames_dir)?,
            Modality::Audio => {
                let audio = read_wav(&record.audio_path)?;
                extract_audio_features(&audio, None, DEFAULT_ONSET_THRESHOLD)?
            }
            Modality::Text => extract_text_features(&record.transcript, table, ablate).0,
        };
        cache::write_features(&cfg.cache_dir, &record.id, &features)?;
        if healed {
            out.healed += 1;
        } else {
            out.fresh += 1;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Input assembly (cache → model inputs, with feature selection)
// ---------------------------------------------------------------------------

/// Whether a feature-selection list removes matches or keeps only
/// matches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SelectionMode {
    DropListed,
    KeepListed,
}

/// Model-ready inputs for every record, after feature selection.
#[derive(Debug, Clone)]
pub struct AssembledInputs {
    pub ids: Vec<String>,
    pub inputs: Vec<ModelInput>,
    /// Modalities that survived feature selection, aligned with each
    /// input's sequences/vectors.
    pub modalities: Vec<Modality>,
    /// Per-modality summary feature names (vector columns).
    pub summary_names: Vec<Vec<String>>,
    /// Per-modality sequence dimension names (sequence columns).
    pub sequence_names: Vec<Vec<String>>,
}

fn summary_for(features: &ModalityFeatures) -> Result<NamedVector, SummaryError> {
    match features.modality {
        Modality::Video => video_summary(features),
        Modality::Audio => audio_summary(features),
        Modality::Text => text_summary(features),
    }
}

/// Columns of `names` that survive selection, in original order.
fn surviving_columns(names: &[String], selected: &[String], mode: SelectionMode) -> Vec<usize> {
    names
        .iter()
        .enumerate()
        .filter(|(_, n)| {
            let hit = selected.contains(n);
            match mode {
                SelectionMode::DropListed => !hit,
                SelectionMode::KeepListed => hit,
            }
        })
        .map(|(i, _)| i)
        .collect()
}

/// Reads cached features for the configured modalities of every record
/// and applies feature selection. A modality whose representation
/// relevant to the chosen model (sequences for "lstm", summary vectors
/// for "dbm") loses every column is dropped entirely; dropping them all
/// is an error.
pub fn assemble_inputs(
    cfg: &RunConfig,
    records: &[AdRecord],
) -> Result<AssembledInputs, PipelineError> {
    let (selected, mode) = if !cfg.include_features.is_empty() {
        (cfg.include_features.as_slice(), SelectionMode::KeepListed)
    } else {
        (cfg.exclude_features.as_slice(), SelectionMode::DropListed)
    };

    // Pull everything from the cache first, translating misses into an
    // actionable message.
    let mut per_modality: Vec<(Modality, Vec<ModalityFeatures>)> = Vec::new();
    for &modality in &cfg.modalities {
        let mut all = Vec::with_capacity(records.len());
        for r in records {
            let features = cache::read_features(&cfg.cache_dir, &r.id, modality).map_err(|e| {
                match e {
                    DataError::CacheMissing { id, modality } => {
                        PipelineError::MissingCache { id, modality }
                    }
                    other => other.into(),
                }
            })?;
            all.push(features);
        }
        per_modality.push((modality, all));
    }

    // Every requested feature name must exist somewhere.
    if !selected.is_empty() {
        let mut known: Vec<&String> = Vec::new();
        for (_, all) in &per_modality {
            let sample = &all[0];
            known.extend(sample.dims_schema.iter());
        }
        let mut summary_known: Vec<String> = Vec::new();
        for (_, all) in &per_modality {
            summary_known.extend(summary_for(&all[0])?.names);
        }
        for want in selected {
            if !known.iter().any(|n| *n == want) && !summary_known.contains(want) {
                return Err(PipelineError::UnknownFeatureName(want.clone()));
            }
        }
    }

    // Decide surviving columns per modality (schemas are uniform across
    // records of one modality, so the first record decides).
    struct Plan {
        modality: Modality,
        seq_cols: Vec<usize>,
        seq_names: Vec<String>,
        vec_cols: Vec<usize>,
        vec_names: Vec<String>,
    }
    let mut plans = Vec::new();
    for (modality, all) in &per_modality {
        let schema = &all[0].dims_schema;
        let summary0 = summary_for(&all[0])?;
        let (seq_cols, vec_cols) = if selected.is_empty() {
            (
                (0..schema.len()).collect::<Vec<_>>(),
                (0..summary0.names.len()).collect::<Vec<_>>(),
            )
        } else {
            (
                surviving_columns(schema, selected, mode),
                surviving_columns(&summary0.names, selected, mode),
            )
        };
        let relevant_empty = match cfg.model.as_str() {
            "dbm" => vec_cols.is_empty(),
            _ => seq_cols.is_empty(),
        };
        if relevant_empty {
            continue; // this modality contributes nothing to the model
        }
        plans.push(Plan {
            modality: *modality,
            seq_names: seq_cols.iter().map(|&i| schema[i].clone()).collect(),
            vec_names: vec_cols.iter().map(|&i| summary0.names[i].clone()).collect(),
            seq_cols,
            vec_cols,
        });
    }
    if plans.is_empty() {
        return Err(PipelineError::NothingLeft {
            model: cfg.model.clone(),
        });
    }

    let mut inputs: Vec<ModelInput> = (0..records.len())
        .map(|_| ModelInput {
            sequences: Vec::with_capacity(plans.len()),
            vectors: Vec::with_capacity(plans.len()),
        })
        .collect();
    for plan in &plans {
        let all = &per_modality
            .iter()
            .find(|(m, _)| *m == plan.modality)
            .expect("plan comes from this list")
            .1;
        for (record_idx, features) in all.iter().enumerate() {
            let seq = features.high_res.select_columns(&plan.seq_cols);
            let summary = summary_for(features)?;
            let vector: Vec<f64> = plan.vec_cols.iter().map(|&i| summary.values[i]).collect();
            inputs[record_idx].sequences.push(seq);
            inputs[record_idx].vectors.push(vector);
        }
    }

    Ok(AssembledInputs {
        ids: records.iter().map(|r| r.id.clone()).collect(),
        inputs,
        modalities: plans.iter().map(|p| p.modality).collect(),
        summary_names: plans.iter().map(|p| p.vec_names.clone()).collect(),
        sequence_names: plans.iter().map(|p| p.seq_names.clone()).collect(),
    })
}

// ---------------------------------------------------------------------------
// Normalization over assembled inputs
// ---------------------------------------------------------------------------

/// Per-modality rank transforms for sequences and summary vectors, fit
/// on training records only.
pub struct InputNormalizer {
    seq: Vec<RankTransform>,
    vec: Vec<RankTransform>,
}

impl InputNormalizer {
    /// Fits on the training subset (indices into `inputs`).
    pub fn fit(inputs: &[ModelInput], train_idx: &[usize]) -> Result<Self, PipelineError> {
        let n_modalities = inputs[train_idx[0]].sequences.len();
        let mut seq = Vec::with_capacity(n_modalities);
        let mut vec_t = Vec::with_capacity(n_modalities);
        for m in 0..n_modalities {
            let mut rows: Vec<Vec<f64>> = Vec::new();
            for &i in train_idx {
                let s = &inputs[i].sequences[m];
                for r in 0..s.rows() {
                    rows.push(s.row(r).to_vec());
                }
            }
            seq.push(RankTransform::fit(&Matrix::from_rows(&rows))?);
            let vec_rows: Vec<Vec<f64>> =
                train_idx.iter().map(|&i| inputs[i].vectors[m].clone()).collect();
            vec_t.push(RankTransform::fit(&Matrix::from_rows(&vec_rows))?);
        }
        Ok(Self { seq, vec: vec_t })
    }

    pub fn apply(&self, input: &ModelInput) -> Result<ModelInput, PipelineError> {
        let mut sequences = Vec::with_capacity(input.sequences.len());
        for (m, s) in input.sequences.iter().enumerate() {
            sequences.push(self.seq[m].transform(s)?);
        }
        let mut vectors = Vec::with_capacity(input.vectors.len());
        for (m, v) in input.vectors.iter().enumerate() {
            let row = Matrix::from_rows(&[v.clone()]);
            vectors.push(self.vec[m].transform(&row)?.row(0).to_vec());
        }
        Ok(ModelInput { sequences, vectors })
    }
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

/// Files written by `train`.
#[derive(Debug, Clone, Serialize)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub curve: Vec<f64>,
}

fn labels_for(cfg: &RunConfig, records: &[AdRecord]) -> Result<Vec<EffectivenessLabel>, PipelineError> {
    let labeler = create_labeler(&cfg.ground_truth, cfg.sentiment()?)?;
    Ok(labeler.label_all(records)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).expect("serializable report");
    std::fs::write(path, text).map_err(io_err(path))
}

/// Trains the configured model on every manifest record (normalization
/// fit on the same data) and writes a checkpoint plus the per-epoch
/// loss curve.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainArtifacts, PipelineError> {
    cfg.validate()?;
    let records = load_manifest(&cfg.manifest)?;
    let labels = labels_for(cfg, &records)?;
    let assembled = assemble_inputs(cfg, &records)?;
    let all_idx: Vec<usize> = (0..assembled.inputs.len()).collect();
    let normalizer = InputNormalizer::fit(&assembled.inputs, &all_idx)?;
    let inputs: Vec<ModelInput> = assembled
        .inputs
        .iter()
        .map(|i| normalizer.apply(i))
        .collect::<Result<_, _>>()?;

    let settings = ModelSettings {
        modalities: assembled.modalities.clone(),
        lstm: cfg.lstm.clone(),
        dbm: cfg.dbm.clone(),
    };
    let mut model = create_model(&cfg.model, &settings)?;
    let mut tc = cfg.train.clone();
    tc.seed = cfg.seed;
    let curve = model.train(&inputs, &labels, &tc)?;

    let dir = cfg.run_dir("train");
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let checkpoint = dir.join("model.ckpt");
    model.save(&checkpoint)?;
    let loss_log = dir.join("loss.json");
    write_json(&loss_log, &curve)?;
    Ok(TrainArtifacts {
        checkpoint,
        loss_log,
        curve,
    })
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

/// One test-set prediction, kept alongside its truth for later paired
/// significance tests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionItem {
    pub id: String,
    pub truth: EffectivenessLabel,
    pub predicted: EffectivenessLabel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunPredictions {
    pub run: usize,
    pub items: Vec<PredictionItem>,
}

/// Everything needed to compare two models pair-by-pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionsFile {
    pub model: String,
    pub ground_truth: String,
    pub seed: u64,
    pub runs: Vec<RunPredictions>,
}

/// Files written by `eval`.
#[derive(Debug, Clone)]
pub struct EvalArtifacts {
    pub report: MetricsReport,
    pub metrics_json: PathBuf,
    pub metrics_csv: PathBuf,
    pub predictions_json: PathBuf,
}

/// The repeated protocol: for each run, split the manifest, fit
/// normalization on the training part, train a fresh model, and score
/// the held-out part. Per-run seeds derive from the top-level seed, so
/// one seed pins every file this writes, byte for byte.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalArtifacts, PipelineError> {
    cfg.validate()?;
    let records = load_manifest(&cfg.manifest)?;
    let labels = labels_for(cfg, &records)?;
    let assembled = assemble_inputs(cfg, &records)?;
    let splits = split_dataset(
        records.len(),
        cfg.seed,
        cfg.train_size,
        cfg.test_size,
        cfg.runs,
    )?;
    let settings = ModelSettings {
        modalities: assembled.modalities.clone(),
        lstm: cfg.lstm.clone(),
        dbm: cfg.dbm.clone(),
    };

    let seed_stream = SplitMix64::new(cfg.seed);
    let mut run_records = Vec::with_capacity(cfg.runs);
    let mut run_predictions = Vec::with_capacity(cfg.runs);
    for (run, split) in splits.iter().enumerate() {
        let normalizer = InputNormalizer::fit(&assembled.inputs, &split.train)?;
        let train_inputs: Vec<ModelInput> = split
            .train
            .iter()
            .map(|&i| normalizer.apply(&assembled.inputs[i]))
            .collect::<Result<_, _>>()?;
        let train_labels: Vec<EffectivenessLabel> =
            split.train.iter().map(|&i| labels[i]).collect();

        let mut model = create_model(&cfg.model, &settings)?;
        let mut tc = cfg.train.clone();
        tc.seed = seed_stream.substream(run as u64).next_u64();
        model.train(&train_inputs, &train_labels, &tc)?;

        let mut predictions = Vec::with_capacity(split.test.len());
        let mut truths = Vec::with_capacity(split.test.len());
        let mut items = Vec::with_capacity(split.test.len());
        for &i in &split.test {
            let input = normalizer.apply(&assembled.inputs[i])?;
            let predicted = model.predict(&input)?;
            predictions.push(predicted);
            truths.push(labels[i]);
            items.push(PredictionItem {
                id: assembled.ids[i].clone(),
                truth: labels[i],
                predicted,
            });
        }
        let confusion = evaluate(&predictions, &truths)?;
        run_records.push(RunRecord {
            run,
            accuracy: confusion.accuracy(),
            f1: confusion.f1(),
            confusion,
        });
        run_predictions.push(RunPredictions { run, items });
    }

    let report = MetricsReport::from_runs(&cfg.model, &cfg.ground_truth, run_records);
    let dir = cfg.run_dir("eval");
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let metrics_json = dir.join("metrics.json");
    write_json(&metrics_json, &report)?;
    let metrics_csv = dir.join("metrics.csv");
    std::fs::write(&metrics_csv, report.to_csv()).map_err(io_err(&metrics_csv))?;
    let predictions_json = dir.join("predictions.json");
    write_json(
        &predictions_json,
        &PredictionsFile {
            model: cfg.model.clone(),
            ground_truth: cfg.ground_truth.clone(),
            seed: cfg.seed,
            runs: run_predictions,
        },
    )?;
    Ok(EvalArtifacts {
        report,
        metrics_json,
        metrics_csv,
        predictions_json,
    })
}

/// Paired McNemar comparison between two `predictions.json` files from
/// `eval` runs over the same manifest, ground truth and seed.
pub fn cmd_mcnemar(a_path: &Path, b_path: &Path) -> Result<McNemarResult, PipelineError> {
    let load = |p: &Path| -> Result<PredictionsFile, PipelineError> {
        let text = std::fs::read_to_string(p).map_err(io_err(p))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Config {
            path: p.to_path_buf(),
            reason: e.to_string(),
        })
    };
    let a = load(a_path)?;
    let b = load(b_path)?;
    if a.ground_truth != b.ground_truth {
        return Err(PipelineError::PredictionMismatch(format!(
            "ground truth ({} vs {})",
            a.ground_truth, b.ground_truth
        )));
    }
    if a.runs.len() != b.runs.len() {
        return Err(PipelineError::PredictionMismatch(format!(
            "run counts ({} vs {})",
            a.runs.len(),
            b.runs.len()
        )));
    }
    let mut b_count = 0u64;
    let mut c_count = 0u64;
    for (ra, rb) in a.runs.iter().zip(&b.runs) {
        if ra.items.len() != rb.items.len() {
            return Err(PipelineError::PredictionMismatch(format!(
                "test sizes in run {}",
                ra.run
            )));
        }
        for (ia, ib) in ra.items.iter().zip(&rb.items) {
            if ia.id != ib.id || ia.truth != ib.truth {
                return Err(PipelineError::PredictionMismatch(format!(
                    "items in run {} (id {} vs {})",
                    ra.run, ia.id, ib.id
                )));
            }
            let a_right = ia.predicted == ia.truth;
            let b_right = ib.predicted == ib.truth;
            match (a_right, b_right) {
                (true, false) => b_count += 1,
                (false, true) => c_count += 1,
                _ => {}
            }
        }
    }
    Ok(mcnemar_exact(b_count, c_count))
}

// ---------------------------------------------------------------------------
// emotion
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmotionEntry {
    pub id: String,
    pub category: String,
    pub dominant: Emotion,
    pub distribution: EmotionDistribution,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategorySummary {
    pub category: String,
    pub count: usize,
    pub dominant: Emotion,
    pub mean_distribution: EmotionDistribution,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmotionReport {
    pub detector: String,
    pub entries: Vec<EmotionEntry>,
    pub categories: Vec<CategorySummary>,
}

fn build_detector(cfg: &RunConfig) -> Result<Box<dyn EmotionDetector>, PipelineError> {
    match cfg.emotion_detector.as_str() {
        "lexicon" => Ok(Box::new(LexiconDetector {
            lexicon: cfg.emotion_lexicon()?,
        })),
        "lstm" => {
            let train_path = cfg
                .emotion_train
                .as_ref()
                .ok_or(PipelineError::NeedsEmotionTraining)?;
            let table = load_embeddings(&cfg.embeddings, cfg.embedding_dim)?;
            let samples = load_emotion_training(train_path, &table)?;
            let mut tc = cfg.train.clone();
            tc.seed = cfg.seed;
            let (model, _) = train_emotion_lstm(&samples, &cfg.emotion_lstm, &tc)?;
            Ok(Box::new(LstmDetector {
                model,
                embeddings: table,
            }))
        }
        other => Err(PipelineError::UnknownDetector(other.to_string())),
    }
}

/// Parses `emotion<TAB>text` lines into embedded training samples.
fn load_emotion_training(
    path: &Path,
    table: &EmbeddingTable,
) -> Result<Vec<EmotionSample>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut samples = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fail = |reason: String| PipelineError::EmotionTrainFormat {
            path: path.to_path_buf(),
            line: idx + 1,
            reason,
        };
        let (emotion, body) = line
            .split_once('\t')
            .ok_or_else(|| fail("expected emotion<TAB>text".to_string()))?;
        let emotion = Emotion::from_name(emotion.trim())
            .ok_or_else(|| fail(format!("unknown emotion '{}'", emotion.trim())))?;
        let tokens = tokenize(body);
        let (inputs, _) = embed_tokens(&tokens, table);
        samples.push(EmotionSample { inputs, emotion });
    }
    Ok(samples)
}

/// Runs the configured detector over every transcript and aggregates
/// per manifest category.
pub fn cmd_emotion(cfg: &RunConfig) -> Result<(EmotionReport, PathBuf), PipelineError> {
    cfg.validate()?;
    let records = load_manifest(&cfg.manifest)?;
    let detector = build_detector(cfg)?;
    let mut entries = Vec::with_capacity(records.len());
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (idx, r) in records.iter().enumerate() {
        let tokens = tokenize(&r.transcript);
        let distribution = detector.detect(&tokens)?;
        let category = r
            .category
            .clone()
            .unwrap_or_else(|| "uncategorized".to_string());
        groups.entry(category.clone()).or_default().push(idx);
        entries.push(EmotionEntry {
            id: r.id.clone(),
            category,
            dominant: dominant_emotion(&distribution),
            distribution,
        });
    }
    let categories = groups
        .into_iter()
        .map(|(category, members)| {
            let mut mean = [0.0; 8];
            for &i in &members {
                for (acc, p) in mean.iter_mut().zip(entries[i].distribution.as_slice()) {
                    *acc += p;
                }
            }
            for v in &mut mean {
                *v /= members.len() as f64;
            }
            let mean_distribution =
                EmotionDistribution::from_counts(&mean);
            CategorySummary {
                category,
                count: members.len(),
                dominant: dominant_emotion(&mean_distribution),
                mean_distribution,
            }
        })
        .collect();
    let report = EmotionReport {
        detector: cfg.emotion_detector.clone(),
        entries,
        categories,
    };
    let dir = cfg.run_dir("emotion");
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let path = dir.join("emotion.json");
    write_json(&path, &report)?;
    Ok((report, path))
}

// ---------------------------------------------------------------------------
// importance
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub feature: String,
    pub importance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub ground_truth: String,
    pub variant: String,
    pub considered_features: usize,
    pub top: Vec<ImportanceEntry>,
}

/// Ranks the named video+audio summary features by forest importance
/// and reports the top k (all of them when k exceeds the count).
pub fn cmd_importance(cfg: &RunConfig) -> Result<(ImportanceReport, PathBuf), PipelineError> {
    cfg.validate()?;
    let records = load_manifest(&cfg.manifest)?;
    let labels = labels_for(cfg, &records)?;

    // Importance reporting reads the audio-visual summary features,
    // regardless of which modalities the classifier consumes.
    let mut av_cfg = cfg.clone();
    av_cfg.modalities = vec![Modality::Video, Modality::Audio];
    av_cfg.model = "dbm".to_string(); // summary vectors are the relevant representation
    let assembled = assemble_inputs(&av_cfg, &records)?;

    let mut names = Vec::new();
    for block in &assembled.summary_names {
        names.extend(block.iter().cloned());
    }
    let rows: Vec<Vec<f64>> = assembled
        .inputs
        .iter()
        .map(|i| {
            let mut row = Vec::with_capacity(names.len());
            for v in &i.vectors {
                row.extend_from_slice(v);
            }
            row
        })
        .collect();
    let data = Matrix::from_rows(&rows);
    let ranked = forest_importance(&names, &data, &labels, &cfg.forest, cfg.seed)?;
    let k = cfg.top_k.min(ranked.len());
    let report = ImportanceReport {
        ground_truth: cfg.ground_truth.clone(),
        variant: cfg.forest.variant.name().to_string(),
        considered_features: ranked.len(),
        top: ranked[..k]
            .iter()
            .map(|(feature, importance)| ImportanceEntry {
                feature: feature.clone(),
                importance: *importance,
            })
            .collect(),
    };
    let dir = cfg.run_dir("importance");
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let path = dir.join("importance.json");
    write_json(&path, &report)?;
    Ok((report, path))
}
