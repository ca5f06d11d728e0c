//! Ground-truth labeling, input normalization, the repeated train/test
//! protocol, accuracy/F1 reporting, an exact McNemar significance test,
//! and random-forest feature importance.

pub mod forest;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{AdRecord, EffectivenessLabel};
use crate::matrix::Matrix;
use crate::rng::SplitMix64;
use crate::text::tokenize;

pub use forest::{forest_importance, Forest, ForestConfig, ForestVariant};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no study ratings to average")]
    EmptyRatings,
    #[error("lexicon line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("record {id} has no study ratings")]
    MissingRatings { id: String },
    #[error("unknown ground-truth metric '{0}'")]
    UnknownLabeler(String),
    #[error("split needs {need} records but only {have} exist")]
    SplitTooLarge { need: usize, have: usize },
    #[error("predictions and labels differ in length ({predictions} vs {labels})")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("cannot evaluate zero predictions")]
    EmptyEvaluation,
    #[error("training data contains a single class")]
    SingleClass,
    #[error("feature name '{0}' not found")]
    UnknownFeature(String),
    #[error("feature matrix has {names} names but {cols} columns")]
    SchemaMismatch { names: usize, cols: usize },
    #[error("no training rows")]
    EmptyTraining,
    #[error("no feature columns to train on")]
    NoFeatures,
}

// ---------------------------------------------------------------------------
// Sentiment lexicon and the three ground-truth labelers
// ---------------------------------------------------------------------------

/// Word → integer sentiment strength in [−5, 5], zero disallowed.
#[derive(Debug, Clone, Default)]
pub struct SentimentLexicon {
    entries: HashMap<String, i8>,
}

impl SentimentLexicon {
    /// Parses the TSV format `word<TAB>strength`; blank lines and `#`
    /// comments are skipped; words are lowercased.
    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let mut entries = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, strength) = line.split_once('\t').ok_or_else(|| EvalError::Parse {
                line: idx + 1,
                reason: "expected word<TAB>strength".to_string(),
            })?;
            let word = word.trim().to_lowercase();
            if word.is_empty() {
                return Err(EvalError::Parse {
                    line: idx + 1,
                    reason: "empty word".to_string(),
                });
            }
            let value: i8 = strength.trim().parse().map_err(|_| EvalError::Parse {
                line: idx + 1,
                reason: format!("strength '{}' is not an integer", strength.trim()),
            })?;
            if value == 0 || !(-5..=5).contains(&value) {
                return Err(EvalError::Parse {
                    line: idx + 1,
                    reason: format!("strength {value} outside the nonzero [-5,5] scale"),
                });
            }
            entries.insert(word, value);
        }
        Ok(Self { entries })
    }

    pub fn from_file(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// The small built-in starter vocabulary.
    pub fn bundled() -> Self {
        Self::parse(include_str!("../assets/sentiment_lexicon.tsv"))
            .expect("bundled lexicon is well-formed")
    }

    pub fn strength(&self, word: &str) -> Option<i8> {
        self.entries.get(word).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Mean strength over lexicon-hit tokens, 0 when nothing hits, clamped
/// to the [−5, 5] scale.
pub fn sentiment_score(comment: &str, lexicon: &SentimentLexicon) -> f64 {
    let tokens = tokenize(comment);
    let mut total = 0.0;
    let mut hits = 0usize;
    for token in &tokens {
        if let Some(s) = lexicon.strength(token) {
            total += f64::from(s);
            hits += 1;
        }
    }
    if hits == 0 {
        0.0
    } else {
        (total / hits as f64).clamp(-5.0, 5.0)
    }
}

/// Survey route: mean respondent rating ≤ 3 reads ineffective. Empty
/// rating lists are an error — silence is not a verdict.
pub fn label_user_study(ratings: &[f64]) -> Result<EffectivenessLabel, EvalError> {
    if ratings.is_empty() {
        return Err(EvalError::EmptyRatings);
    }
    let mean = crate::matrix::mean(ratings);
    Ok(EffectivenessLabel::from_bool(mean > 3.0))
}

/// Comment route: mean of per-comment sentiment scores strictly above
/// 2.5 reads effective; an ad with no comments reads ineffective.
pub fn label_comment_sentiment(
    comments: &[String],
    lexicon: &SentimentLexicon,
) -> EffectivenessLabel {
    if comments.is_empty() {
        return EffectivenessLabel::Ineffective;
    }
    let scores: Vec<f64> = comments
        .iter()
        .map(|c| sentiment_score(c, lexicon))
        .collect();
    EffectivenessLabel::from_bool(crate::matrix::mean(&scores) > 2.5)
}

/// Popularity route, dataset-relative: likes/views ratio strictly above
/// the mean ratio of all records reads effective. Zero views give
/// ratio 0.
pub fn label_likes_views(records: &[(u64, u64)]) -> Vec<EffectivenessLabel> {
    let ratios: Vec<f64> = records
        .iter()
        .map(|&(likes, views)| {
            if views == 0 {
                0.0
            } else {
                likes as f64 / views as f64
            }
        })
        .collect();
    if ratios.is_empty() {
        return Vec::new();
    }
    let mean = crate::matrix::mean(&ratios);
    ratios
        .iter()
        .map(|&r| EffectivenessLabel::from_bool(r > mean))
        .collect()
}

/// A pluggable ground-truth strategy: given the whole manifest, produce
/// one label per record. Whole-dataset signature because one route is
/// dataset-relative.
pub trait GroundTruthLabeler: Send + Sync {
    fn name(&self) -> &'static str;
    fn label_all(&self, records: &[AdRecord]) -> Result<Vec<EffectivenessLabel>, EvalError>;
}

/// Names accepted by labeler selection, in presentation order.
pub const LABELER_NAMES: [&str; 3] = ["user_study", "comment_sentiment", "likes_views"];

pub struct UserStudyLabeler;

impl GroundTruthLabeler for UserStudyLabeler {
    fn name(&self) -> &'static str {
        "user_study"
    }

    fn label_all(&self, records: &[AdRecord]) -> Result<Vec<EffectivenessLabel>, EvalError> {
        records
            .iter()
            .map(|r| {
                let ratings = r.study_ratings.as_deref().ok_or(EvalError::MissingRatings {
                    id: r.id.clone(),
                })?;
                label_user_study(ratings).map_err(|_| EvalError::MissingRatings {
                    id: r.id.clone(),
                })
            })
            .collect()
    }
}

pub struct CommentSentimentLabeler {
    pub lexicon: SentimentLexicon,
}

impl GroundTruthLabeler for CommentSentimentLabeler {
    fn name(&self) -> &'static str {
        "comment_sentiment"
    }

    fn label_all(&self, records: &[AdRecord]) -> Result<Vec<EffectivenessLabel>, EvalError> {
        Ok(records
            .iter()
            .map(|r| label_comment_sentiment(&r.comments, &self.lexicon))
            .collect())
    }
}

pub struct LikesViewsLabeler;

impl GroundTruthLabeler for LikesViewsLabeler {
    fn name(&self) -> &'static str {
        "likes_views"
    }

    fn label_all(&self, records: &[AdRecord]) -> Result<Vec<EffectivenessLabel>, EvalError> {
        let pairs: Vec<(u64, u64)> = records.iter().map(|r| (r.likes, r.views)).collect();
        Ok(label_likes_views(&pairs))
    }
}

/// Looks a labeler up by name; the comment route needs the sentiment
/// lexicon it will score with.
pub fn create_labeler(
    name: &str,
    sentiment: SentimentLexicon,
) -> Result<Box<dyn GroundTruthLabeler>, EvalError> {
    match name {
        "user_study" => Ok(Box::new(UserStudyLabeler)),
        "comment_sentiment" => Ok(Box::new(CommentSentimentLabeler { lexicon: sentiment })),
        "likes_views" => Ok(Box::new(LikesViewsLabeler)),
        other => Err(EvalError::UnknownLabeler(other.to_string())),
    }
}

// ---------------------------------------------------------------------------
// Rank normalization
// ---------------------------------------------------------------------------

/// Per-dimension empirical rank transform fit on training data: maps
/// each value to its mid-rank (ties averaged) scaled by 1/(N+1), so
/// train columns land in [1/(N+1), N/(N+1)] and look uniform. Unseen
/// values interpolate by rank and clamp to that same interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankTransform {
    /// Sorted training values, one vector per column.
    sorted_columns: Vec<Vec<f64>>,
}

impl RankTransform {
    pub fn fit(train: &Matrix) -> Result<Self, EvalError> {
        if train.rows() == 0 {
            return Err(EvalError::EmptyTraining);
        }
        let sorted_columns = (0..train.cols())
            .map(|c| {
                let mut col = train.column(c);
                col.sort_by(|a, b| a.partial_cmp(b).expect("finite features"));
                col
            })
            .collect();
        Ok(Self { sorted_columns })
    }

    pub fn dims(&self) -> usize {
        self.sorted_columns.len()
    }

    /// Rank of `x` in column `c`: (#below + 0.5 + 0.5·#equal)/(N+1),
    /// clamped to [1/(N+1), N/(N+1)]. A constant training column maps
    /// its own value to exactly 0.5.
    pub fn transform_value(&self, c: usize, x: f64) -> f64 {
        let col = &self.sorted_columns[c];
        let n = col.len() as f64;
        let below = col.partition_point(|&v| v < x) as f64;
        let through = col.partition_point(|&v| v <= x) as f64;
        let equal = through - below;
        let raw = (below + 0.5 + 0.5 * equal) / (n + 1.0);
        raw.clamp(1.0 / (n + 1.0), n / (n + 1.0))
    }

    pub fn transform(&self, data: &Matrix) -> Result<Matrix, EvalError> {
        if data.cols() != self.dims() {
            return Err(EvalError::SchemaMismatch {
                names: self.dims(),
                cols: data.cols(),
            });
        }
        let mut out = Matrix::zeros(data.rows(), data.cols());
        for r in 0..data.rows() {
            for c in 0..data.cols() {
                out.set(r, c, self.transform_value(c, data.get(r, c)));
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Split protocol
// ---------------------------------------------------------------------------

/// One train/test partition by record index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Draws `runs` independent shuffles from per-run substreams of the
/// seed, taking the first `train_n` indices for training and the next
/// `test_n` for testing. Same seed, same splits.
pub fn split_dataset(
    n_records: usize,
    seed: u64,
    train_n: usize,
    test_n: usize,
    runs: usize,
) -> Result<Vec<Split>, EvalError> {
    if train_n + test_n > n_records {
        return Err(EvalError::SplitTooLarge {
            need: train_n + test_n,
            have: n_records,
        });
    }
    let base = SplitMix64::new(seed);
    Ok((0..runs)
        .map(|run| {
            let mut rng = base.substream(run as u64);
            let mut indices: Vec<usize> = (0..n_records).collect();
            rng.shuffle(&mut indices);
            Split {
                train: indices[..train_n].to_vec(),
                test: indices[train_n..train_n + test_n].to_vec(),
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Confusion counts with "effective" as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.true_positives + self.false_positives + self.true_negatives + self.false_negatives
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            (self.true_positives + self.true_negatives) as f64 / total as f64
        }
    }

    /// F1 = 2TP / (2TP + FP + FN); defined as 0 when that denominator
    /// is 0 (no positives anywhere).
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.true_positives + self.false_positives + self.false_negatives;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.true_positives as f64 / denom as f64
        }
    }
}

/// Tallies predictions against labels.
pub fn evaluate(
    predictions: &[EffectivenessLabel],
    labels: &[EffectivenessLabel],
) -> Result<ConfusionCounts, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    let mut counts = ConfusionCounts::default();
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p.is_effective(), l.is_effective()) {
            (true, true) => counts.true_positives += 1,
            (true, false) => counts.false_positives += 1,
            (false, false) => counts.true_negatives += 1,
            (false, true) => counts.false_negatives += 1,
        }
    }
    Ok(counts)
}

/// Metrics for one train/test run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub accuracy: f64,
    pub f1: f64,
    pub confusion: ConfusionCounts,
}

/// The full multi-run report: per-run rows plus their means.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub ground_truth: String,
    pub runs: Vec<RunRecord>,
    pub mean_accuracy: f64,
    pub mean_f1: f64,
}

impl MetricsReport {
    pub fn from_runs(model: &str, ground_truth: &str, runs: Vec<RunRecord>) -> Self {
        let n = runs.len().max(1) as f64;
        let mean_accuracy = runs.iter().map(|r| r.accuracy).sum::<f64>() / n;
        let mean_f1 = runs.iter().map(|r| r.f1).sum::<f64>() / n;
        Self {
            model: model.to_string(),
            ground_truth: ground_truth.to_string(),
            runs,
            mean_accuracy,
            mean_f1,
        }
    }

    /// Flat rows `model,ground_truth,run,accuracy,f1` for external
    /// plotting, header included.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,ground_truth,run,accuracy,f1\n");
        for r in &self.runs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.model, self.ground_truth, r.run, r.accuracy, r.f1
            ));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// McNemar's exact test
// ---------------------------------------------------------------------------

/// Result of the exact two-sided McNemar test on discordant pairs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct McNemarResult {
    pub b: u64,
    pub c: u64,
    pub p_value: f64,
}

/// Exact two-sided binomial test: p = min(1, 2·P(X ≤ min(b,c))) with
/// X ~ Binomial(b+c, 1/2). The cumulative sum is evaluated in log space
/// so large discordant counts cannot underflow; b = c = 0 degenerates
/// to p = 1.
pub fn mcnemar_exact(b: u64, c: u64) -> McNemarResult {
    let n = b + c;
    let k = b.min(c);
    // log pmf(0) = −n·ln2; log pmf(i+1) = log pmf(i) + ln((n−i)/(i+1)).
    let mut log_terms = Vec::with_capacity(k as usize + 1);
    log_terms.push(-(n as f64) * std::f64::consts::LN_2);
    for i in 0..k {
        let last = *log_terms.last().expect("seeded");
        log_terms.push(last + ((n - i) as f64 / (i + 1) as f64).ln());
    }
    let max = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = log_terms.iter().map(|&t| (t - max).exp()).sum();
    let log_cum = max + sum.ln();
    let p_value = (2.0 * log_cum.exp()).min(1.0);
    McNemarResult { b, c, p_value }
}

// ---------------------------------------------------------------------------
// Feature ablation
// ---------------------------------------------------------------------------

/// Whether the named features are removed or are the only ones kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationMode {
    Drop,
    Keep,
}

/// Removes (or keeps only) named columns from a named feature matrix,
/// preserving the original column order. Every requested name must
/// exist; the result may legitimately have zero columns — training
/// sites guard against that separately.
pub fn feature_ablation(
    names: &[String],
    data: &Matrix,
    selected: &[String],
    mode: AblationMode,
) -> Result<(Vec<String>, Matrix), EvalError> {
    if names.len() != data.cols() {
        return Err(EvalError::SchemaMismatch {
            names: names.len(),
            cols: data.cols(),
        });
    }
    for want in selected {
        if !names.contains(want) {
            return Err(EvalError::UnknownFeature(want.clone()));
        }
    }
    let keep: Vec<usize> = names
        .iter()
        .enumerate()
        .filter(|(_, n)| {
            let hit = selected.contains(n);
            match mode {
                AblationMode::Drop => !hit,
                AblationMode::Keep => hit,
            }
        })
        .map(|(i, _)| i)
        .collect();
    let kept_names = keep.iter().map(|&i| names[i].clone()).collect();
    Ok((kept_names, data.select_columns(&keep)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strs(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn user_study_boundaries() {
        assert_eq!(
            label_user_study(&[2.9]).unwrap(),
            EffectivenessLabel::Ineffective
        );
        // A mean of exactly 3 is ineffective: the rule is ≤ 3.
        assert_eq!(
            label_user_study(&[3.0]).unwrap(),
            EffectivenessLabel::Ineffective
        );
        assert_eq!(
            label_user_study(&[3.01]).unwrap(),
            EffectivenessLabel::Effective
        );
        assert_eq!(
            label_user_study(&[2.0, 4.0]).unwrap(),
            EffectivenessLabel::Ineffective
        );
        assert!(matches!(
            label_user_study(&[]),
            Err(EvalError::EmptyRatings)
        ));
    }

    fn scoring_lexicon() -> SentimentLexicon {
        SentimentLexicon::parse("great\t4\nsuperb\t5\nawful\t-5\nbad\t-3\n").unwrap()
    }

    #[test]
    fn sentiment_score_examples() {
        let lex = scoring_lexicon();
        assert_eq!(sentiment_score("nothing matches here", &lex), 0.0);
        assert_eq!(sentiment_score("great superb", &lex), 4.5);
        assert_eq!(sentiment_score("awful awful", &lex), -5.0);
        // Non-hits dilute nothing: mean over hits only.
        assert_eq!(sentiment_score("truly great stuff", &lex), 4.0);
    }

    #[test]
    fn comment_sentiment_boundaries() {
        let lex = scoring_lexicon();
        let effective = strs(&["great superb", "superb"]);
        assert_eq!(
            label_comment_sentiment(&effective, &lex),
            EffectivenessLabel::Effective
        );
        // Mean exactly 2.5 is NOT above 2.5.
        let lex25 = SentimentLexicon::parse("soso\t2\nnicest\t3\n").unwrap();
        let boundary = strs(&["soso", "nicest"]);
        assert_eq!(
            label_comment_sentiment(&boundary, &lex25),
            EffectivenessLabel::Ineffective
        );
        assert_eq!(
            label_comment_sentiment(&[], &lex),
            EffectivenessLabel::Ineffective
        );
    }

    #[test]
    fn likes_views_is_dataset_relative_and_strict() {
        let labels = label_likes_views(&[(1, 100), (3, 100), (2, 100)]);
        assert_eq!(
            labels,
            vec![
                EffectivenessLabel::Ineffective,
                EffectivenessLabel::Effective,
                EffectivenessLabel::Ineffective,
            ]
        );
        // All equal ratios sit exactly at the mean: nothing is above it.
        let equal = label_likes_views(&[(1, 10), (2, 20), (3, 30)]);
        assert!(equal.iter().all(|l| !l.is_effective()));
        // Zero views read as ratio 0.
        let with_zero = label_likes_views(&[(5, 0), (1, 100)]);
        assert_eq!(with_zero[0], EffectivenessLabel::Ineffective);
        assert_eq!(with_zero[1], EffectivenessLabel::Effective);
    }

    #[test]
    fn sentiment_lexicon_rejects_bad_strengths() {
        assert!(matches!(
            SentimentLexicon::parse("word\t0\n"),
            Err(EvalError::Parse { line: 1, .. })
        ));
        assert!(SentimentLexicon::parse("word\t6\n").is_err());
        assert!(SentimentLexicon::parse("word\t-6\n").is_err());
        assert!(SentimentLexicon::parse("word\tx\n").is_err());
        assert!(SentimentLexicon::parse("word only\n").is_err());
    }

    #[test]
    fn bundled_sentiment_lexicon_loads() {
        let lex = SentimentLexicon::bundled();
        assert!(!lex.is_empty());
        assert_eq!(lex.strength("superb"), Some(5));
        assert_eq!(lex.strength("horrible"), Some(-5));
    }

    #[test]
    fn labeler_registry_covers_all_routes() {
        for name in LABELER_NAMES {
            let labeler = create_labeler(name, SentimentLexicon::bundled()).unwrap();
            assert_eq!(labeler.name(), name);
        }
        assert!(matches!(
            create_labeler("nope", SentimentLexicon::bundled()),
            Err(EvalError::UnknownLabeler(_))
        ));
    }

    #[test]
    fn rank_transform_maps_train_range() {
        let train = Matrix::from_rows(&[
            vec![1.0, 10.0],
            vec![2.0, 10.0],
            vec![3.0, 10.0],
            vec![4.0, 10.0],
        ]);
        let t = RankTransform::fit(&train).unwrap();
        let mapped = t.transform(&train).unwrap();
        // Column 0: min maps to 1/(N+1), max to N/(N+1).
        assert!((mapped.get(0, 0) - 0.2).abs() < 1e-15);
        assert!((mapped.get(3, 0) - 0.8).abs() < 1e-15);
        // Constant column: everything maps to exactly 0.5.
        for r in 0..4 {
            assert_eq!(mapped.get(r, 1), 0.5);
        }
    }

    #[test]
    fn rank_transform_preserves_order_and_clamps() {
        let train = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![5.0], vec![9.0]]);
        let t = RankTransform::fit(&train).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for x in [-10.0, 0.0, 0.5, 1.0, 4.0, 5.0, 8.9, 9.0, 100.0] {
            let y = t.transform_value(0, x);
            assert!(y >= prev, "{x} broke monotonicity");
            assert!((0.2..=0.8).contains(&y), "{x} mapped to {y}");
            prev = y;
        }
        // Strictly below everything clamps to the train minimum rank.
        assert_eq!(t.transform_value(0, -10.0), 0.2);
        assert_eq!(t.transform_value(0, 100.0), 0.8);
    }

    #[test]
    fn splits_are_disjoint_and_deterministic() {
        let a = split_dataset(20, 7, 15, 5, 50).unwrap();
        let b = split_dataset(20, 7, 15, 5, 50).unwrap();
        assert_eq!(a.len(), 50);
        for (sa, sb) in a.iter().zip(&b) {
            assert_eq!(sa.train, sb.train);
            assert_eq!(sa.test, sb.test);
            assert_eq!(sa.train.len(), 15);
            assert_eq!(sa.test.len(), 5);
            for idx in &sa.test {
                assert!(!sa.train.contains(idx));
            }
        }
        assert!(matches!(
            split_dataset(10, 0, 8, 3, 1),
            Err(EvalError::SplitTooLarge { need: 11, have: 10 })
        ));
    }

    #[test]
    fn every_record_reaches_some_test_set() {
        // 4 records, train 3 / test 1, 50 runs: chance a record never
        // lands in a test slot is (3/4)^50 ≈ 6e−7.
        let splits = split_dataset(4, 3, 3, 1, 50).unwrap();
        let mut seen = [false; 4];
        for s in &splits {
            seen[s.test[0]] = true;
        }
        assert!(seen.iter().all(|&b| b), "{seen:?}");
    }

    #[test]
    fn metrics_formulas() {
        use EffectivenessLabel::{Effective as E, Ineffective as I};
        let perfect = evaluate(&[E, I, E], &[E, I, E]).unwrap();
        assert_eq!(perfect.accuracy(), 1.0);
        assert_eq!(perfect.f1(), 1.0);

        let all_negative = evaluate(&[I, I, I, I], &[E, E, I, I]).unwrap();
        assert_eq!(all_negative.accuracy(), 0.5);
        assert_eq!(all_negative.f1(), 0.0);

        let counts = ConfusionCounts {
            true_positives: 3,
            false_positives: 1,
            true_negatives: 5,
            false_negatives: 1,
        };
        assert_eq!(counts.accuracy(), 0.8);
        assert_eq!(counts.f1(), 0.75);

        assert!(matches!(
            evaluate(&[E], &[E, I]),
            Err(EvalError::LengthMismatch { .. })
        ));
        assert!(matches!(evaluate(&[], &[]), Err(EvalError::EmptyEvaluation)));
    }

    /// Hand enumeration over every confusion matrix with total ≤ 6.
    #[test]
    fn metrics_match_hand_enumeration_small_totals() {
        for total in 1..=6usize {
            for tp in 0..=total {
                for fp in 0..=(total - tp) {
                    for tn in 0..=(total - tp - fp) {
                        let fn_ = total - tp - fp - tn;
                        let c = ConfusionCounts {
                            true_positives: tp,
                            false_positives: fp,
                            true_negatives: tn,
                            false_negatives: fn_,
                        };
                        let acc = (tp + tn) as f64 / total as f64;
                        assert!((c.accuracy() - acc).abs() < 1e-15);
                        let denom = 2 * tp + fp + fn_;
                        let f1 = if denom == 0 {
                            0.0
                        } else {
                            2.0 * tp as f64 / denom as f64
                        };
                        assert!((c.f1() - f1).abs() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn report_means_and_csv() {
        let runs = vec![
            RunRecord {
                run: 0,
                accuracy: 0.8,
                f1: 0.75,
                confusion: ConfusionCounts::default(),
            },
            RunRecord {
                run: 1,
                accuracy: 0.6,
                f1: 0.5,
                confusion: ConfusionCounts::default(),
            },
        ];
        let report = MetricsReport::from_runs("lstm", "user_study", runs);
        assert!((report.mean_accuracy - 0.7).abs() < 1e-15);
        assert!((report.mean_f1 - 0.625).abs() < 1e-15);
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "model,ground_truth,run,accuracy,f1");
        assert_eq!(lines[1], "lstm,user_study,0,0.8,0.75");
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn mcnemar_exact_values() {
        // b=1, c=9: p = 2·(C(10,0)+C(10,1))/2^10 = 22/1024.
        let r = mcnemar_exact(1, 9);
        assert!((r.p_value - 0.021484375).abs() < 1e-12, "{}", r.p_value);
        assert_eq!(mcnemar_exact(0, 0).p_value, 1.0);
        assert_eq!(mcnemar_exact(5, 5).p_value, 1.0);
        // One-sided mass doubling caps at 1.
        assert!(mcnemar_exact(4, 5).p_value <= 1.0);
    }

    #[test]
    fn mcnemar_is_symmetric_on_a_sample() {
        for b in 0..=12u64 {
            for c in 0..=12u64 {
                let p1 = mcnemar_exact(b, c).p_value;
                let p2 = mcnemar_exact(c, b).p_value;
                assert!((p1 - p2).abs() < 1e-15, "({b},{c})");
                assert!((0.0..=1.0).contains(&p1));
            }
        }
    }

    #[test]
    fn mcnemar_survives_large_counts() {
        let r = mcnemar_exact(1000, 1024);
        assert!(r.p_value > 0.5 && r.p_value <= 1.0, "{}", r.p_value);
        let lopsided = mcnemar_exact(0, 2000);
        assert!(lopsided.p_value < 1e-300);
    }

    #[test]
    fn ablation_drop_and_keep() {
        let names = strs(&["a", "b", "c"]);
        let data = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        let (kept, matrix) =
            feature_ablation(&names, &data, &strs(&["b"]), AblationMode::Drop).unwrap();
        assert_eq!(kept, strs(&["a", "c"]));
        assert_eq!(matrix.row(0), &[1.0, 3.0]);

        let (kept, matrix) =
            feature_ablation(&names, &data, &strs(&["c", "a"]), AblationMode::Keep).unwrap();
        // Original column order survives regardless of request order.
        assert_eq!(kept, strs(&["a", "c"]));
        assert_eq!(matrix.row(1), &[4.0, 6.0]);

        let (kept, matrix) = feature_ablation(&names, &data, &[], AblationMode::Drop).unwrap();
        assert_eq!(kept, names);
        assert_eq!(matrix.as_slice(), data.as_slice());

        let (kept, matrix) =
            feature_ablation(&names, &data, &names, AblationMode::Drop).unwrap();
        assert!(kept.is_empty());
        assert_eq!(matrix.cols(), 0);

        assert!(matches!(
            feature_ablation(&names, &data, &strs(&["ghost"]), AblationMode::Drop),
            Err(EvalError::UnknownFeature(_))
        ));
    }
}
