//! From-scratch neural machinery: the bias-free LSTM cell, two-layer
//! per-modality encoders, the fusion/dropout/dense/softmax classifier,
//! binary cross-entropy, Adam, full reverse-mode gradients, and a
//! finite-difference gradient checker.
//!
//! Everything runs in 64-bit floats so gradient checks can be tight, and
//! every training routine is deterministic given its seed.

pub mod adam;
pub mod checkpoint;
pub mod classifier;
pub mod dense;
pub mod loss;
pub mod lstm;

pub use adam::AdamOpt;
pub use classifier::{
    fuse, train_multimodal, LstmModelConfig, MultimodalClassifier, MultimodalSample,
};
pub use dense::Dense;
pub use loss::{bce_loss, softmax, PROB_FLOOR};
pub use lstm::{encode_sequence, lstm_step, LstmEncoder, LstmParams, LstmState, SequenceDropout};

use std::collections::HashMap;

use thiserror::Error;

use crate::matrix::Matrix;
use crate::rng::SplitMix64;

/// Errors from model construction, training, and checkpointing.
#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch in {place}: expected {expected}, got {found}")]
    ShapeMismatch {
        place: &'static str,
        expected: String,
        found: String,
    },
    #[error("input sequence is empty")]
    EmptySequence,
    #[error("training needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("training data contains a single class; both classes are required")]
    SingleClass,
    #[error("non-finite value encountered during {0}")]
    NonFinite(&'static str),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Optimizer and schedule settings shared by every trainable model.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.epochs == 0 || self.learning_rate <= 0.0 {
            return Err(NeuralError::ShapeMismatch {
                place: "train config",
                expected: "epochs >= 1 and learning_rate > 0".to_string(),
                found: format!(
                    "epochs {}, learning_rate {}",
                    self.epochs, self.learning_rate
                ),
            });
        }
        Ok(())
    }
}

/// Half-open uniform initialization range used for every weight matrix.
pub const INIT_RANGE: f64 = 0.08;

/// Walks a model's named tensors in a fixed order.
///
/// `for_each_tensor` visits the trainable tensors (the optimizer and the
/// gradient checker use it); `for_each_saved_tensor` visits everything a
/// checkpoint must persist and defaults to the trainable set.
pub trait TensorBag {
    fn for_each_tensor(&mut self, f: &mut dyn FnMut(&str, &mut Matrix));

    fn for_each_saved_tensor(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        self.for_each_tensor(f);
    }
}

/// Collects a clone of every trainable tensor, keyed by name.
pub fn tensor_map<M: TensorBag + ?Sized>(model: &mut M) -> HashMap<String, Matrix> {
    let mut map = HashMap::new();
    model.for_each_tensor(&mut |name, t| {
        map.insert(name.to_string(), t.clone());
    });
    map
}

/// Runs `body` with mutable access to one entry of one named tensor.
pub fn with_tensor_entry<M, R>(
    model: &mut M,
    name: &str,
    index: usize,
    body: impl FnOnce(&mut f64) -> R,
) -> R
where
    M: TensorBag + ?Sized,
{
    let mut body = Some(body);
    let mut out = None;
    model.for_each_tensor(&mut |n, t| {
        if n == name {
            if let Some(b) = body.take() {
                out = Some(b(&mut t.as_mut_slice()[index]));
            }
        }
    });
    out.unwrap_or_else(|| panic!("tensor {name:?} not found"))
}

/// Scales every trainable tensor in place (used to turn per-sample
/// gradient sums into batch means).
pub fn scale_tensors<M: TensorBag + ?Sized>(model: &mut M, factor: f64) {
    model.for_each_tensor(&mut |_, t| {
        for v in t.as_mut_slice() {
            *v *= factor;
        }
    });
}

/// Draws an inverted-dropout mask: each entry is 0 with probability `p`
/// and 1/(1−p) otherwise, so the masked vector keeps its expectation.
pub fn dropout_mask(len: usize, p: f64, rng: &mut SplitMix64) -> Vec<f64> {
    assert!((0.0..1.0).contains(&p), "dropout probability {p} not in [0,1)");
    if p == 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if rng.bernoulli(p) { 0.0 } else { keep })
        .collect()
}

/// Applies a dropout mask during training; eval mode is the identity.
pub fn dropout(v: &[f64], mask: Option<&[f64]>) -> Vec<f64> {
    match mask {
        Some(m) => v.iter().zip(m).map(|(x, k)| x * k).collect(),
        None => v.to_vec(),
    }
}

/// Relative-error comparison for one gradient entry: relative where the
/// magnitudes are meaningful, absolute below a noise floor.
pub fn gradient_agreement(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs());
    if denom < 1e-6 {
        // Both effectively zero: report an "error" that passes iff the
        // absolute difference is below the noise floor.
        if (analytic - numeric).abs() < 1e-8 {
            0.0
        } else {
            1.0
        }
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// Central-difference step used by the gradient checker.
pub const GRADCHECK_H: f64 = 1e-5;

/// One gradient-check disagreement record: tensor name, flat entry
/// index, analytic value, numeric value, and the agreement error.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub error: f64,
}

/// Checks every entry of every trainable tensor against central finite
/// differences of `loss`, returning the single worst entry (None only
/// for a model with no tensors).
pub fn gradient_check_report<M: TensorBag>(
    model: &mut M,
    analytic: &HashMap<String, Matrix>,
    mut loss: impl FnMut(&mut M) -> f64,
) -> Option<GradCheckEntry> {
    let shapes: Vec<(String, usize)> = {
        let mut v = Vec::new();
        model.for_each_tensor(&mut |name, t| v.push((name.to_string(), t.as_slice().len())));
        v
    };
    let mut worst: Option<GradCheckEntry> = None;
    for (name, len) in shapes {
        let grad = analytic
            .get(&name)
            .unwrap_or_else(|| panic!("no analytic gradient for tensor {name:?}"));
        for idx in 0..len {
            let original = with_tensor_entry(model, &name, idx, |v| *v);
            with_tensor_entry(model, &name, idx, |v| *v = original + GRADCHECK_H);
            let up = loss(model);
            with_tensor_entry(model, &name, idx, |v| *v = original - GRADCHECK_H);
            let down = loss(model);
            with_tensor_entry(model, &name, idx, |v| *v = original);
            let numeric = (up - down) / (2.0 * GRADCHECK_H);
            let err = gradient_agreement(grad.as_slice()[idx], numeric);
            if worst.as_ref().map_or(true, |w| err > w.error) {
                worst = Some(GradCheckEntry {
                    tensor: name.clone(),
                    index: idx,
                    analytic: grad.as_slice()[idx],
                    numeric,
                    error: err,
                });
            }
        }
    }
    worst
}

/// Checks every entry of every trainable tensor against central finite
/// differences of `loss`. Returns the worst relative error.
pub fn gradient_check<M: TensorBag>(
    model: &mut M,
    analytic: &HashMap<String, Matrix>,
    loss: impl FnMut(&mut M) -> f64,
) -> f64 {
    gradient_check_report(model, analytic, loss).map_or(0.0, |w| w.error)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Toy {
        a: Matrix,
        b: Matrix,
    }

    impl TensorBag for Toy {
        fn for_each_tensor(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
            f("a", &mut self.a);
            f("b", &mut self.b);
        }
    }

    #[test]
    fn with_tensor_entry_reads_and_writes() {
        let mut toy = Toy {
            a: Matrix::from_vec(1, 2, vec![1.0, 2.0]),
            b: Matrix::from_vec(2, 1, vec![3.0, 4.0]),
        };
        with_tensor_entry(&mut toy, "b", 1, |v| *v = 9.0);
        assert_eq!(toy.b.get(1, 0), 9.0);
        let read = with_tensor_entry(&mut toy, "a", 0, |v| *v);
        assert_eq!(read, 1.0);
    }

    #[test]
    fn dropout_eval_mode_is_identity() {
        let v = vec![1.0, -2.0, 3.0];
        assert_eq!(dropout(&v, None), v);
    }

    #[test]
    fn dropout_p_zero_is_identity() {
        let mut rng = SplitMix64::new(7);
        let mask = dropout_mask(5, 0.0, &mut rng);
        assert_eq!(mask, vec![1.0; 5]);
    }

    #[test]
    fn dropout_expectation_is_preserved() {
        let mut rng = SplitMix64::new(11);
        let len = 16;
        let trials = 100_000;
        let mut sums = vec![0.0; len];
        for _ in 0..trials {
            let mask = dropout_mask(len, 0.5, &mut rng);
            for (s, m) in sums.iter_mut().zip(&mask) {
                *s += m;
            }
        }
        for s in sums {
            let meanv = s / trials as f64;
            assert!((meanv - 1.0).abs() < 0.02, "mean {meanv}");
        }
    }

    #[test]
    fn gradient_check_validates_a_quadratic() {
        // loss = 0.5 * sum(a^2) + sum(b); gradients are a and 1.
        let mut toy = Toy {
            a: Matrix::from_vec(1, 3, vec![0.5, -1.0, 2.0]),
            b: Matrix::from_vec(1, 2, vec![0.0, 0.0]),
        };
        let mut analytic = HashMap::new();
        analytic.insert("a".to_string(), toy.a.clone());
        analytic.insert("b".to_string(), Matrix::from_vec(1, 2, vec![1.0, 1.0]));
        let worst = gradient_check(&mut toy, &analytic, |m| {
            0.5 * m.a.as_slice().iter().map(|v| v * v).sum::<f64>()
                + m.b.as_slice().iter().sum::<f64>()
        });
        assert!(worst <= 1e-4, "worst {worst}");
    }

    #[test]
    fn gradient_check_catches_a_wrong_gradient() {
        let mut toy = Toy {
            a: Matrix::from_vec(1, 1, vec![1.0]),
            b: Matrix::from_vec(1, 1, vec![1.0]),
        };
        let mut analytic = HashMap::new();
        // Claim the gradient of 0.5*a^2 is 3a (wrong).
        analytic.insert("a".to_string(), Matrix::from_vec(1, 1, vec![3.0]));
        analytic.insert("b".to_string(), Matrix::from_vec(1, 1, vec![1.0]));
        let worst = gradient_check(&mut toy, &analytic, |m| {
            0.5 * m.a.as_slice()[0].powi(2) + m.b.as_slice()[0]
        });
        assert!(worst > 0.1, "worst {worst}");
    }

    #[test]
    fn scale_tensors_scales_everything() {
        let mut toy = Toy {
            a: Matrix::from_vec(1, 2, vec![2.0, 4.0]),
            b: Matrix::from_vec(1, 1, vec![8.0]),
        };
        scale_tensors(&mut toy, 0.5);
        assert_eq!(toy.a.as_slice(), &[1.0, 2.0]);
        assert_eq!(toy.b.as_slice(), &[4.0]);
    }
}
