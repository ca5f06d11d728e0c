//! The multimodal effectiveness classifier: one two-layer LSTM encoder
//! per selected modality, concatenation of the final hidden states,
//! inverted dropout on the fused vector, two ReLU dense layers, and a
//! two-logit softmax head, trained with Adam on binary cross-entropy.

use crate::data::{EffectivenessLabel, Modality};
use crate::matrix::Matrix;
use crate::rng::SplitMix64;

use super::dense::{relu, relu_backward, Dense};
use super::loss::{bce_loss, softmax, softmax_bce_grad};
use super::lstm::LstmEncoder;
use super::{dropout_mask, AdamOpt, NeuralError, TensorBag, TrainConfig};

/// Architecture settings. Hidden size 100 per encoder layer; the dense
/// head narrows 128 → 32 before the two output logits.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LstmModelConfig {
    pub hidden: usize,
    pub dense1: usize,
    pub dense2: usize,
    pub dropout_p: f64,
    pub use_bias: bool,
    pub modalities: Vec<Modality>,
}

impl Default for LstmModelConfig {
    fn default() -> Self {
        Self {
            hidden: 100,
            dense1: 128,
            dense2: 32,
            dropout_p: 0.5,
            use_bias: false,
            modalities: Modality::ALL.to_vec(),
        }
    }
}

/// Concatenates per-modality embeddings in the fixed video, audio, text
/// order (or whichever subset the model was built with).
pub fn fuse(parts: &[Vec<f64>], hidden: usize) -> Result<Vec<f64>, NeuralError> {
    let mut out = Vec::with_capacity(parts.len() * hidden);
    for p in parts {
        if p.len() != hidden {
            return Err(NeuralError::ShapeMismatch {
                place: "fuse",
                expected: format!("embedding length {hidden}"),
                found: format!("{}", p.len()),
            });
        }
        out.extend_from_slice(p);
    }
    Ok(out)
}

/// One training/inference sample: one sequence per selected modality, in
/// the model's modality order.
#[derive(Debug, Clone)]
pub struct MultimodalSample {
    pub sequences: Vec<Matrix>,
    pub label: EffectivenessLabel,
}

impl EffectivenessLabel {
    /// Class index used by two-way softmax heads: effective = 1.
    pub fn class_index(&self) -> usize {
        usize::from(self.is_effective())
    }
}

/// The trained model: per-modality encoders plus the fused dense head.
#[derive(Clone)]
pub struct MultimodalClassifier {
    pub cfg: LstmModelConfig,
    pub encoders: Vec<(Modality, LstmEncoder)>,
    pub dense1: Dense,
    pub dense2: Dense,
    pub output: Dense,
}

struct ForwardTrace {
    caches: Vec<super::lstm::EncoderCache>,
    fused: Vec<f64>,
    dropped: Vec<f64>,
    pre1: Vec<f64>,
    act1: Vec<f64>,
    pre2: Vec<f64>,
    act2: Vec<f64>,
    probs: Vec<f64>,
}

impl MultimodalClassifier {
    /// Builds a fresh model. `input_dims` gives the per-modality input
    /// column counts, aligned with `cfg.modalities`.
    pub fn new(
        cfg: &LstmModelConfig,
        input_dims: &[usize],
        rng: &mut SplitMix64,
    ) -> Result<Self, NeuralError> {
        if cfg.modalities.is_empty() || input_dims.len() != cfg.modalities.len() {
            return Err(NeuralError::ShapeMismatch {
                place: "classifier config",
                expected: format!("{} input dims", cfg.modalities.len()),
                found: format!("{}", input_dims.len()),
            });
        }
        let encoders = cfg
            .modalities
            .iter()
            .zip(input_dims)
            .map(|(&m, &dim)| (m, LstmEncoder::new(dim, cfg.hidden, cfg.use_bias, rng)))
            .collect::<Vec<_>>();
        let fused_len = cfg.hidden * encoders.len();
        Ok(Self {
            cfg: cfg.clone(),
            dense1: Dense::new(fused_len, cfg.dense1, rng),
            dense2: Dense::new(cfg.dense1, cfg.dense2, rng),
            output: Dense::new(cfg.dense2, 2, rng),
            encoders,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            cfg: self.cfg.clone(),
            encoders: self
                .encoders
                .iter()
                .map(|(m, e)| (*m, e.zeros_like()))
                .collect(),
            dense1: self.dense1.zeros_like(),
            dense2: self.dense2.zeros_like(),
            output: self.output.zeros_like(),
        }
    }

    pub fn fused_len(&self) -> usize {
        self.cfg.hidden * self.encoders.len()
    }

    fn check_sample(&self, sequences: &[Matrix]) -> Result<(), NeuralError> {
        if sequences.len() != self.encoders.len() {
            return Err(NeuralError::ShapeMismatch {
                place: "sample",
                expected: format!("{} modality sequences", self.encoders.len()),
                found: format!("{}", sequences.len()),
            });
        }
        Ok(())
    }

    fn forward(
        &self,
        sequences: &[Matrix],
        mask: Option<&[f64]>,
    ) -> Result<ForwardTrace, NeuralError> {
        self.check_sample(sequences)?;
        let mut parts = Vec::with_capacity(self.encoders.len());
        let mut caches = Vec::with_capacity(self.encoders.len());
        for ((_, enc), seq) in self.encoders.iter().zip(sequences) {
            let (h, cache) = enc.encode(seq)?;
            parts.push(h);
            caches.push(cache);
        }
        let fused = fuse(&parts, self.cfg.hidden)?;
        let dropped = super::dropout(&fused, mask);
        let pre1 = self.dense1.forward(&dropped);
        let act1 = relu(&pre1);
        let pre2 = self.dense2.forward(&act1);
        let act2 = relu(&pre2);
        let logits = self.output.forward(&act2);
        let probs = softmax(&logits);
        Ok(ForwardTrace {
            caches,
            fused,
            dropped,
            pre1,
            act1,
            pre2,
            act2,
            probs,
        })
    }

    /// Eval-mode class probabilities `[p_ineffective, p_effective]`.
    pub fn predict(&self, sequences: &[Matrix]) -> Result<[f64; 2], NeuralError> {
        let trace = self.forward(sequences, None)?;
        Ok([trace.probs[0], trace.probs[1]])
    }

    /// Forward + backward for one sample; accumulates into `grads` and
    /// returns the sample loss.
    pub fn accumulate_gradients(
        &self,
        sample: &MultimodalSample,
        mask: Option<&[f64]>,
        grads: &mut MultimodalClassifier,
    ) -> Result<f64, NeuralError> {
        let trace = self.forward(&sample.sequences, mask)?;
        let y = sample.label.class_index();
        let loss = bce_loss(trace.probs[y]);

        let dlogits = softmax_bce_grad(&trace.probs, y);
        let dact2 = self.output.backward(&trace.act2, &dlogits, &mut grads.output);
        let dpre2 = relu_backward(&trace.pre2, &dact2);
        let dact1 = self.dense2.backward(&trace.act1, &dpre2, &mut grads.dense2);
        let dpre1 = relu_backward(&trace.pre1, &dact1);
        let ddropped = self
            .dense1
            .backward(&trace.dropped, &dpre1, &mut grads.dense1);
        let dfused: Vec<f64> = match mask {
            Some(m) => ddropped.iter().zip(m).map(|(d, k)| d * k).collect(),
            None => ddropped,
        };
        let hidden = self.cfg.hidden;
        for (idx, ((_, enc), cache)) in self.encoders.iter().zip(&trace.caches).enumerate() {
            let slice = &dfused[idx * hidden..(idx + 1) * hidden];
            enc.backward(cache, slice, &mut grads.encoders[idx].1);
        }
        let _ = trace.fused;
        Ok(loss)
    }
}

impl TensorBag for MultimodalClassifier {
    fn for_each_tensor(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        for (m, enc) in &mut self.encoders {
            enc.visit(&format!("enc.{m}"), f);
        }
        f("head.d1.w", &mut self.dense1.w);
        f("head.d1.b", &mut self.dense1.b);
        f("head.d2.w", &mut self.dense2.w);
        f("head.d2.b", &mut self.dense2.b);
        f("head.out.w", &mut self.output.w);
        f("head.out.b", &mut self.output.b);
    }
}

fn validate_dataset(
    samples: &[MultimodalSample],
    modality_count: usize,
) -> Result<Vec<usize>, NeuralError> {
    if samples.len() < 2 {
        return Err(NeuralError::TooFewSamples(samples.len()));
    }
    let effective = samples.iter().filter(|s| s.label.is_effective()).count();
    if effective == 0 || effective == samples.len() {
        return Err(NeuralError::SingleClass);
    }
    let mut dims = vec![0usize; modality_count];
    for s in samples {
        if s.sequences.len() != modality_count {
            return Err(NeuralError::ShapeMismatch {
                place: "dataset",
                expected: format!("{modality_count} sequences per sample"),
                found: format!("{}", s.sequences.len()),
            });
        }
        for (i, seq) in s.sequences.iter().enumerate() {
            if seq.rows() == 0 {
                return Err(NeuralError::EmptySequence);
            }
            if dims[i] == 0 {
                dims[i] = seq.cols();
            } else if dims[i] != seq.cols() {
                return Err(NeuralError::ShapeMismatch {
                    place: "dataset",
                    expected: format!("{} columns in modality {i}", dims[i]),
                    found: format!("{}", seq.cols()),
                });
            }
        }
    }
    Ok(dims)
}

/// Trains a fresh classifier with full-batch Adam. Deterministic given
/// `tc.seed`; returns the model and the per-epoch mean loss curve.
pub fn train_multimodal(
    samples: &[MultimodalSample],
    cfg: &LstmModelConfig,
    tc: &TrainConfig,
) -> Result<(MultimodalClassifier, Vec<f64>), NeuralError> {
    tc.validate()?;
    let dims = validate_dataset(samples, cfg.modalities.len())?;
    let mut rng = SplitMix64::new(tc.seed);
    let mut model = MultimodalClassifier::new(cfg, &dims, &mut rng)?;
    let mut opt = AdamOpt::new(tc);
    let mut curve = Vec::with_capacity(tc.epochs);
    let fused_len = model.fused_len();
    for _epoch in 0..tc.epochs {
        let mut grads = model.zeros_like();
        let mut total = 0.0;
        for sample in samples {
            let mask = dropout_mask(fused_len, cfg.dropout_p, &mut rng);
            total += model.accumulate_gradients(sample, Some(&mask), &mut grads)?;
        }
        let scale = 1.0 / samples.len() as f64;
        super::scale_tensors(&mut grads, scale);
        let gmap = super::tensor_map(&mut grads);
        opt.step(&mut model, &gmap);
        curve.push(total * scale);
    }
    if !curve.iter().all(|v| v.is_finite()) {
        return Err(NeuralError::NonFinite("training"));
    }
    Ok((model, curve))
}
