//! Dominant-emotion detection for advertisement text over a fixed
//! eight-emotion universe, with two interchangeable strategies: a
//! dictionary lookup and a recurrent classifier.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::neural::dense::Dense;
use crate::neural::loss::{bce_loss, softmax, softmax_bce_grad};
use crate::neural::lstm::{LstmParams, SequenceDropout};
use crate::neural::{AdamOpt, NeuralError, TensorBag, TrainConfig};
use crate::rng::SplitMix64;
use crate::text::{embed_tokens, EmbeddingTable};

/// The fixed, ordered emotion universe. The order matters: ties in
/// dominance resolve toward the earlier entry, and distributions are
/// always aligned to this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Joy,
    Surprise,
    Anticipation,
    Trust,
    Sadness,
    Anger,
    Fear,
    Disgust,
}

impl Emotion {
    pub const ALL: [Emotion; 8] = [
        Emotion::Joy,
        Emotion::Surprise,
        Emotion::Anticipation,
        Emotion::Trust,
        Emotion::Sadness,
        Emotion::Anger,
        Emotion::Fear,
        Emotion::Disgust,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&e| e == self).expect("member")
    }

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Joy => "joy",
            Emotion::Surprise => "surprise",
            Emotion::Anticipation => "anticipation",
            Emotion::Trust => "trust",
            Emotion::Sadness => "sadness",
            Emotion::Anger => "anger",
            Emotion::Fear => "fear",
            Emotion::Disgust => "disgust",
        }
    }

    pub fn from_name(name: &str) -> Option<Emotion> {
        Self::ALL.iter().copied().find(|e| e.name() == name)
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum EmotionError {
    #[error("lexicon line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a probability distribution (sum {0})")]
    NotSimplex(f64),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// A probability distribution over the eight emotions, aligned to
/// [`Emotion::ALL`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionDistribution {
    probs: [f64; 8],
}

impl EmotionDistribution {
    pub fn uniform() -> Self {
        Self { probs: [0.125; 8] }
    }

    /// Normalizes non-negative counts; an all-zero count vector becomes
    /// the uniform distribution.
    pub fn from_counts(counts: &[f64; 8]) -> Self {
        let total: f64 = counts.iter().sum();
        if total <= 0.0 {
            return Self::uniform();
        }
        let mut probs = [0.0; 8];
        for (p, c) in probs.iter_mut().zip(counts) {
            *p = c / total;
        }
        Self { probs }
    }

    /// Wraps raw probabilities after checking non-negativity and that
    /// the mass sums to 1 within 1e−9.
    pub fn from_probs(probs: [f64; 8]) -> Result<Self, EmotionError> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(EmotionError::NotSimplex(sum));
        }
        Ok(Self { probs })
    }

    pub fn get(&self, e: Emotion) -> f64 {
        self.probs[e.index()]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }
}

/// Maps words to the subset of emotions they evoke.
#[derive(Debug, Clone, Default)]
pub struct EmotionLexicon {
    entries: HashMap<String, Vec<Emotion>>,
}

impl EmotionLexicon {
    /// Parses the TSV format `word<TAB>emotion[,emotion...]`, one entry
    /// per line; blank lines and `#` comments are skipped. Words are
    /// lowercased to match the tokenizer.
    pub fn parse(text: &str) -> Result<Self, EmotionError> {
        let mut entries: HashMap<String, Vec<Emotion>> = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, emotions) = line.split_once('\t').ok_or_else(|| EmotionError::Parse {
                line: idx + 1,
                reason: "expected word<TAB>emotion[,emotion...]".to_string(),
            })?;
            let word = word.trim().to_lowercase();
            if word.is_empty() {
                return Err(EmotionError::Parse {
                    line: idx + 1,
                    reason: "empty word".to_string(),
                });
            }
            let mut parsed = Vec::new();
            for name in emotions.split(',') {
                let name = name.trim();
                let emotion = Emotion::from_name(name).ok_or_else(|| EmotionError::Parse {
                    line: idx + 1,
                    reason: format!("unknown emotion '{name}'"),
                })?;
                if !parsed.contains(&emotion) {
                    parsed.push(emotion);
                }
            }
            if parsed.is_empty() {
                return Err(EmotionError::Parse {
                    line: idx + 1,
                    reason: "no emotions listed".to_string(),
                });
            }
            entries.entry(word).or_default().extend(parsed);
        }
        for list in entries.values_mut() {
            list.sort_by_key(|e| e.index());
            list.dedup();
        }
        Ok(Self { entries })
    }

    pub fn from_file(path: &Path) -> Result<Self, EmotionError> {
        let text = std::fs::read_to_string(path).map_err(|source| EmotionError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// The small built-in starter vocabulary.
    pub fn bundled() -> Self {
        Self::parse(include_str!("assets/emotion_lexicon.tsv"))
            .expect("bundled lexicon is well-formed")
    }

    pub fn emotions_for(&self, word: &str) -> Option<&[Emotion]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Dictionary route: count token hits per emotion and normalize. A
/// token naming several emotions counts once toward each; texts with no
/// hits at all come out uniform.
pub fn detect_lexicon(tokens: &[String], lexicon: &EmotionLexicon) -> EmotionDistribution {
    let mut counts = [0.0; 8];
    for token in tokens {
        if let Some(emotions) = lexicon.emotions_for(token) {
            for &e in emotions {
                counts[e.index()] += 1.0;
            }
        }
    }
    EmotionDistribution::from_counts(&counts)
}

/// Highest-mass emotion; exact ties resolve to the earlier entry of the
/// fixed order.
pub fn dominant_emotion(dist: &EmotionDistribution) -> Emotion {
    let mut best = Emotion::ALL[0];
    let mut best_mass = dist.probs[0];
    for &e in &Emotion::ALL[1..] {
        let mass = dist.get(e);
        if mass > best_mass {
            best = e;
            best_mass = mass;
        }
    }
    best
}

/// Recurrent classifier settings: one recurrent layer, heavy dropout on
/// both the input vectors and the recurrent connections while training.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EmotionLstmConfig {
    pub hidden: usize,
    pub dropout_p: f64,
    pub use_bias: bool,
}

impl Default for EmotionLstmConfig {
    fn default() -> Self {
        Self {
            hidden: 100,
            dropout_p: 0.6,
            use_bias: false,
        }
    }
}

/// A single recurrent layer whose final hidden state feeds an
/// eight-way softmax.
#[derive(Debug, Clone)]
pub struct EmotionLstm {
    pub cfg: EmotionLstmConfig,
    pub lstm: LstmParams,
    pub head: Dense,
}

/// One labeled training text, already embedded (T×dim).
#[derive(Debug, Clone)]
pub struct EmotionSample {
    pub inputs: Matrix,
    pub emotion: Emotion,
}

impl EmotionLstm {
    pub fn new(cfg: EmotionLstmConfig, input_dim: usize, rng: &mut SplitMix64) -> Self {
        let lstm = LstmParams::new(input_dim, cfg.hidden, cfg.use_bias, rng);
        let head = Dense::new(cfg.hidden, 8, rng);
        Self { cfg, lstm, head }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            cfg: self.cfg.clone(),
            lstm: self.lstm.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.lstm.input_size()
    }

    /// Eval-mode forward pass: no dropout, nothing sampled.
    pub fn predict(&self, inputs: &Matrix) -> Result<EmotionDistribution, EmotionError> {
        let (outputs, _) = self.lstm.forward_sequence(inputs, None)?;
        let h_final = outputs.row(outputs.rows() - 1);
        let logits = self.head.forward(h_final);
        let probs = softmax(&logits);
        let mut arr = [0.0; 8];
        arr.copy_from_slice(&probs);
        Ok(EmotionDistribution { probs: arr })
    }

    /// Training-mode forward + backward for one sample; returns the
    /// cross-entropy loss and accumulates into `grads`.
    fn accumulate_gradients(
        &self,
        sample: &EmotionSample,
        drop: Option<&SequenceDropout>,
        grads: &mut EmotionLstm,
    ) -> Result<f64, EmotionError> {
        let (outputs, cache) = self.lstm.forward_sequence(&sample.inputs, drop)?;
        let t_len = outputs.rows();
        let h_final = outputs.row(t_len - 1);
        let logits = self.head.forward(h_final);
        let probs = softmax(&logits);
        let y = sample.emotion.index();
        let loss = bce_loss(probs[y]);
        let dlogits = softmax_bce_grad(&probs, y);
        let dh_final = self.head.backward(h_final, &dlogits, &mut grads.head);
        let mut dh_inject = Matrix::zeros(t_len, self.cfg.hidden);
        dh_inject
            .row_mut(t_len - 1)
            .copy_from_slice(&dh_final);
        self.lstm
            .backward_sequence(&cache, &dh_inject, &mut grads.lstm);
        Ok(loss)
    }
}

impl TensorBag for EmotionLstm {
    fn for_each_tensor(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        self.lstm.visit("lstm", f);
        f("head.w", &mut self.head.w);
        f("head.b", &mut self.head.b);
    }
}

/// Trains the recurrent classifier with full-batch Adam on
/// cross-entropy, drawing fresh per-sequence dropout masks for every
/// sample each epoch. Deterministic given `tc.seed`.
pub fn train_emotion_lstm(
    samples: &[EmotionSample],
    cfg: &EmotionLstmConfig,
    tc: &TrainConfig,
) -> Result<(EmotionLstm, Vec<f64>), EmotionError> {
    tc.validate()?;
    if samples.len() < 2 {
        return Err(NeuralError::TooFewSamples(samples.len()).into());
    }
    let mut seen = [false; 8];
    for s in samples {
        seen[s.emotion.index()] = true;
    }
    if seen.iter().filter(|&&b| b).count() < 2 {
        return Err(NeuralError::SingleClass.into());
    }
    let dim = samples[0].inputs.cols();
    for s in samples {
        if s.inputs.cols() != dim {
            return Err(NeuralError::ShapeMismatch {
                place: "emotion dataset",
                expected: format!("{dim} embedding columns"),
                found: format!("{}", s.inputs.cols()),
            }
            .into());
        }
    }

    let mut rng = SplitMix64::new(tc.seed);
    let mut model = EmotionLstm::new(cfg.clone(), dim, &mut rng);
    let mut opt = AdamOpt::new(tc);
    let mut curve = Vec::with_capacity(tc.epochs);
    for _ in 0..tc.epochs {
        let mut grads = model.zeros_like();
        let mut total = 0.0;
        for sample in samples {
            let drop = if cfg.dropout_p > 0.0 {
                Some(SequenceDropout::draw(
                    dim,
                    cfg.hidden,
                    cfg.dropout_p,
                    &mut rng,
                ))
            } else {
                None
            };
            total += model.accumulate_gradients(sample, drop.as_ref(), &mut grads)?;
        }
        let scale = 1.0 / samples.len() as f64;
        crate::neural::scale_tensors(&mut grads, scale);
        let gmap = crate::neural::tensor_map(&mut grads);
        opt.step(&mut model, &gmap);
        curve.push(total * scale);
    }
    if !curve.iter().all(|v| v.is_finite()) {
        return Err(NeuralError::NonFinite("emotion training").into());
    }
    Ok((model, curve))
}

/// Recurrent route on raw tokens: embed (unknown words become zero
/// vectors, empty texts a single zero row) and run the classifier.
pub fn detect_lstm(
    model: &EmotionLstm,
    tokens: &[String],
    table: &EmbeddingTable,
) -> Result<EmotionDistribution, EmotionError> {
    let (inputs, _oov) = embed_tokens(tokens, table);
    model.predict(&inputs)
}

/// A pluggable dominant-emotion strategy; implementations are immutable
/// once built, so sharing across threads is safe.
pub trait EmotionDetector: Send + Sync {
    fn name(&self) -> &'static str;
    fn detect(&self, tokens: &[String]) -> Result<EmotionDistribution, EmotionError>;
}

/// Names accepted by detector selection, in presentation order.
pub const DETECTOR_NAMES: [&str; 2] = ["lexicon", "lstm"];

pub struct LexiconDetector {
    pub lexicon: EmotionLexicon,
}

impl EmotionDetector for LexiconDetector {
    fn name(&self) -> &'static str {
        "lexicon"
    }

    fn detect(&self, tokens: &[String]) -> Result<EmotionDistribution, EmotionError> {
        Ok(detect_lexicon(tokens, &self.lexicon))
    }
}

pub struct LstmDetector {
    pub model: EmotionLstm,
    pub embeddings: EmbeddingTable,
}

impl EmotionDetector for LstmDetector {
    fn name(&self) -> &'static str {
        "lstm"
    }

    fn detect(&self, tokens: &[String]) -> Result<EmotionDistribution, EmotionError> {
        detect_lstm(&self.model, tokens, &self.embeddings)
    }
}
