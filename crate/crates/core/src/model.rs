//! The effectiveness-model strategy registry: every classifier variant
//! hides behind one trait and is picked by name at runtime, so the
//! pipeline code never branches on model internals.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{EffectivenessLabel, Modality};
use crate::matrix::Matrix;
use crate::mdbm::{
    finetune_as_classifier, pretrain_greedy, DbmClassifier, DbmConfig, DbmPathway, DbmSample,
    DbmStack, MdbmError,
};
use crate::neural::checkpoint::{
    load_checkpoint_raw, load_into, save_checkpoint, MODEL_TAG_DBM, MODEL_TAG_LSTM,
};
use crate::neural::dense::Dense;
use crate::neural::{
    train_multimodal, LstmModelConfig, MultimodalClassifier, MultimodalSample, NeuralError,
    TrainConfig,
};
use crate::rng::SplitMix64;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown model '{0}' (expected one of lstm, dbm)")]
    UnknownModel(String),
    #[error("model has not been trained yet")]
    NotTrained,
    #[error("bad model input: {0}")]
    BadInput(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Mdbm(#[from] MdbmError),
    #[error("checkpoint config: {0}")]
    BadCheckpointConfig(String),
}

/// Everything one advertisement offers a model: per-modality
/// high-resolution sequences (time steps × dims, consumed by the
/// recurrent route) and flat named summary vectors (consumed by the
/// Boltzmann route), both aligned to the model's modality order.
#[derive(Debug, Clone)]
pub struct ModelInput {
    pub sequences: Vec<Matrix>,
    pub vectors: Vec<Vec<f64>>,
}

/// A binary effectiveness classifier behind a uniform interface.
pub trait EffectivenessModel: Send {
    /// Registry name ("lstm" or "dbm").
    fn kind(&self) -> &'static str;

    /// Modalities this model consumes, in input order.
    fn modalities(&self) -> &[Modality];

    fn is_trained(&self) -> bool;

    /// Trains from scratch on the given inputs; returns the per-epoch
    /// loss curve. Deterministic given `tc.seed`.
    fn train(
        &mut self,
        inputs: &[ModelInput],
        labels: &[EffectivenessLabel],
        tc: &TrainConfig,
    ) -> Result<Vec<f64>, ModelError>;

    /// Class probabilities `[p_ineffective, p_effective]`.
    fn predict_proba(&self, input: &ModelInput) -> Result<[f64; 2], ModelError>;

    fn predict(&self, input: &ModelInput) -> Result<EffectivenessLabel, ModelError> {
        let p = self.predict_proba(input)?;
        Ok(EffectivenessLabel::from_bool(p[1] > p[0]))
    }

    /// Writes a self-describing checkpoint loadable by [`load_model`].
    fn save(&self, path: &Path) -> Result<(), ModelError>;
}

/// Names accepted by [`create_model`], in presentation order.
pub const MODEL_NAMES: [&str; 2] = ["lstm", "dbm"];

/// Configuration for both registry entries; the selected name decides
/// which half is used.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub modalities: Vec<Modality>,
    pub lstm: LstmModelConfig,
    pub dbm: DbmConfig,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            modalities: Modality::ALL.to_vec(),
            lstm: LstmModelConfig::default(),
            dbm: DbmConfig::default(),
        }
    }
}

/// Builds an untrained model by registry name.
pub fn create_model(
    name: &str,
    settings: &ModelSettings,
) -> Result<Box<dyn EffectivenessModel>, ModelError> {
    if settings.modalities.is_empty() {
        return Err(ModelError::BadInput("no modalities selected".to_string()));
    }
    match name {
        "lstm" => {
            let mut cfg = settings.lstm.clone();
            cfg.modalities = settings.modalities.clone();
            Ok(Box::new(LstmEffectiveness { cfg, trained: None }))
        }
        "dbm" => Ok(Box::new(DbmEffectiveness {
            cfg: settings.dbm.clone(),
            modalities: settings.modalities.clone(),
            trained: None,
        })),
        other => Err(ModelError::UnknownModel(other.to_string())),
    }
}

// ---------------------------------------------------------------------------
// Recurrent route
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct LstmMeta {
    cfg: LstmModelConfig,
    input_dims: Vec<usize>,
}

pub struct LstmEffectiveness {
    cfg: LstmModelConfig,
    trained: Option<MultimodalClassifier>,
}

impl EffectivenessModel for LstmEffectiveness {
    fn kind(&self) -> &'static str {
        "lstm"
    }

    fn modalities(&self) -> &[Modality] {
        &self.cfg.modalities
    }

    fn is_trained(&self) -> bool {
        self.trained.is_some()
    }

    fn train(
        &mut self,
        inputs: &[ModelInput],
        labels: &[EffectivenessLabel],
        tc: &TrainConfig,
    ) -> Result<Vec<f64>, ModelError> {
        if inputs.len() != labels.len() {
            return Err(ModelError::BadInput(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        let want = self.cfg.modalities.len();
        let samples: Vec<MultimodalSample> = inputs
            .iter()
            .zip(labels)
            .map(|(input, &label)| {
                if input.sequences.len() != want {
                    return Err(ModelError::BadInput(format!(
                        "expected {want} sequences per sample, got {}",
                        input.sequences.len()
                    )));
                }
                Ok(MultimodalSample {
                    sequences: input.sequences.clone(),
                    label,
                })
            })
            .collect::<Result<_, _>>()?;
        let (model, curve) = train_multimodal(&samples, &self.cfg, tc)?;
        self.trained = Some(model);
        Ok(curve)
    }

    fn predict_proba(&self, input: &ModelInput) -> Result<[f64; 2], ModelError> {
        let model = self.trained.as_ref().ok_or(ModelError::NotTrained)?;
        Ok(model.predict(&input.sequences)?)
    }

    fn save(&self, path: &Path) -> Result<(), ModelError> {
        let model = self.trained.as_ref().ok_or(ModelError::NotTrained)?;
        let meta = LstmMeta {
            cfg: self.cfg.clone(),
            input_dims: model
                .encoders
                .iter()
                .map(|(_, enc)| enc.layer1.input_size())
                .collect(),
        };
        let json = serde_json::to_string(&meta)
            .map_err(|e| ModelError::BadCheckpointConfig(e.to_string()))?;
        let mut clone = model.clone();
        save_checkpoint(path, MODEL_TAG_LSTM, &json, &mut clone)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Boltzmann route
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct DbmMeta {
    cfg: DbmConfig,
    modalities: Vec<Modality>,
    visible: Vec<usize>,
}

pub struct DbmEffectiveness {
    cfg: DbmConfig,
    modalities: Vec<Modality>,
    trained: Option<DbmClassifier>,
}

impl EffectivenessModel for DbmEffectiveness {
    fn kind(&self) -> &'static str {
        "dbm"
    }

    fn modalities(&self) -> &[Modality] {
        &self.modalities
    }

    fn is_trained(&self) -> bool {
        self.trained.is_some()
    }

    fn train(
        &mut self,
        inputs: &[ModelInput],
        labels: &[EffectivenessLabel],
        tc: &TrainConfig,
    ) -> Result<Vec<f64>, ModelError> {
        if inputs.len() != labels.len() {
            return Err(ModelError::BadInput(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if inputs.is_empty() {
            return Err(NeuralError::TooFewSamples(0).into());
        }
        let want = self.modalities.len();
        for input in inputs {
            if input.vectors.len() != want {
                return Err(ModelError::BadInput(format!(
                    "expected {want} summary vectors per sample, got {}",
                    input.vectors.len()
                )));
            }
        }
        // Unsupervised pretraining sees the whole training matrix per
        // modality; widths must agree across samples.
        let mut per_modality = Vec::with_capacity(want);
        for (idx, &modality) in self.modalities.iter().enumerate() {
            let width = inputs[0].vectors[idx].len();
            for input in inputs {
                if input.vectors[idx].len() != width {
                    return Err(ModelError::BadInput(format!(
                        "inconsistent {modality} vector width ({} vs {width})",
                        input.vectors[idx].len()
                    )));
                }
            }
            if width == 0 {
                return Err(ModelError::BadInput(format!(
                    "{modality} summary vector is empty"
                )));
            }
            let rows: Vec<Vec<f64>> = inputs.iter().map(|i| i.vectors[idx].clone()).collect();
            per_modality.push((modality, Matrix::from_rows(&rows)));
        }
        let stack = pretrain_greedy(&self.cfg, &per_modality, tc.seed)?;
        let samples: Vec<DbmSample> = inputs
            .iter()
            .zip(labels)
            .map(|(input, &label)| DbmSample {
                vectors: input.vectors.clone(),
                label,
            })
            .collect();
        let (model, curve) = finetune_as_classifier(stack, &samples, tc)?;
        self.trained = Some(model);
        Ok(curve)
    }

    fn predict_proba(&self, input: &ModelInput) -> Result<[f64; 2], ModelError> {
        let model = self.trained.as_ref().ok_or(ModelError::NotTrained)?;
        Ok(model.predict(&input.vectors)?)
    }

    fn save(&self, path: &Path) -> Result<(), ModelError> {
        let model = self.trained.as_ref().ok_or(ModelError::NotTrained)?;
        let meta = DbmMeta {
            cfg: self.cfg.clone(),
            modalities: self.modalities.clone(),
            visible: model
                .stack
                .pathways
                .iter()
                .map(|(_, p)| p.visible_size())
                .collect(),
        };
        let json = serde_json::to_string(&meta)
            .map_err(|e| ModelError::BadCheckpointConfig(e.to_string()))?;
        let mut clone = model.clone();
        save_checkpoint(path, MODEL_TAG_DBM, &json, &mut clone)?;
        Ok(())
    }
}

/// A stack of the right shapes whose values a checkpoint will overwrite.
fn shell_stack(cfg: &DbmConfig, modalities: &[Modality], visible: &[usize]) -> DbmStack {
    DbmStack {
        pathways: modalities
            .iter()
            .zip(visible)
            .map(|(&m, &v)| {
                (
                    m,
                    DbmPathway {
                        sigma: Matrix::from_vec(1, v, vec![1.0; v]),
                        w1: Matrix::zeros(cfg.h1, v),
                        b1_vis: Matrix::zeros(1, v),
                        b1_hid: Matrix::zeros(1, cfg.h1),
                        w2: Matrix::zeros(cfg.h2, cfg.h1),
                        b2_hid: Matrix::zeros(1, cfg.h2),
                    },
                )
            })
            .collect(),
        joint: modalities.iter().map(|_| Matrix::zeros(cfg.h3, cfg.h2)).collect(),
        h3: cfg.h3,
    }
}

/// Restores a trained model from a checkpoint written by
/// [`EffectivenessModel::save`]; the tag byte selects the route.
pub fn load_model(path: &Path) -> Result<Box<dyn EffectivenessModel>, ModelError> {
    let (tag, config, tensors) = load_checkpoint_raw(path)?;
    match tag {
        MODEL_TAG_LSTM => {
            let meta: LstmMeta = serde_json::from_str(&config)
                .map_err(|e| ModelError::BadCheckpointConfig(e.to_string()))?;
            let mut rng = SplitMix64::new(0);
            let mut model = MultimodalClassifier::new(&meta.cfg, &meta.input_dims, &mut rng)?;
            load_into(path, &mut model, tensors)?;
            Ok(Box::new(LstmEffectiveness {
                cfg: meta.cfg,
                trained: Some(model),
            }))
        }
        MODEL_TAG_DBM => {
            let meta: DbmMeta = serde_json::from_str(&config)
                .map_err(|e| ModelError::BadCheckpointConfig(e.to_string()))?;
            let stack = shell_stack(&meta.cfg, &meta.modalities, &meta.visible);
            let mut rng = SplitMix64::new(0);
            let mut model = DbmClassifier {
                stack,
                head: Dense::new(meta.cfg.h3, 2, &mut rng),
            };
            load_into(path, &mut model, tensors)?;
            Ok(Box::new(DbmEffectiveness {
                cfg: meta.cfg,
                modalities: meta.modalities,
                trained: Some(model),
            }))
        }
        other => Err(ModelError::BadCheckpointConfig(format!(
            "unknown model tag {other}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Ten separable samples: class decides the sign of every value in
    /// both the sequences and the summary vectors.
    fn separable_inputs(n: usize, seed: u64) -> (Vec<ModelInput>, Vec<EffectivenessLabel>) {
        let mut rng = SplitMix64::new(seed);
        let mut inputs = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for k in 0..n {
            let effective = k % 2 == 0;
            let shift = if effective { 0.8 } else { -0.8 };
            let sequences = (0..3)
                .map(|_| {
                    let rows: Vec<Vec<f64>> = (0..3)
                        .map(|_| (0..2).map(|_| shift + rng.uniform(-0.3, 0.3)).collect())
                        .collect();
                    Matrix::from_rows(&rows)
                })
                .collect();
            let vectors = (0..3)
                .map(|_| (0..3).map(|_| shift + rng.uniform(-0.3, 0.3)).collect())
                .collect();
            inputs.push(ModelInput { sequences, vectors });
            labels.push(EffectivenessLabel::from_bool(effective));
        }
        (inputs, labels)
    }

    fn toy_settings() -> ModelSettings {
        ModelSettings {
            modalities: Modality::ALL.to_vec(),
            lstm: LstmModelConfig {
                hidden: 8,
                dense1: 16,
                dense2: 8,
                dropout_p: 0.0,
                ..LstmModelConfig::default()
            },
            dbm: DbmConfig {
                h1: 6,
                h2: 4,
                h3: 4,
                pretrain_epochs: 5,
                pretrain_lr: 0.05,
                ..DbmConfig::default()
            },
        }
    }

    fn toy_tc() -> TrainConfig {
        TrainConfig {
            epochs: 200,
            learning_rate: 0.02,
            seed: 9,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn registry_knows_both_models_and_rejects_strangers() {
        let settings = toy_settings();
        for name in MODEL_NAMES {
            let model = create_model(name, &settings).unwrap();
            assert_eq!(model.kind(), name);
            assert!(!model.is_trained());
            assert_eq!(model.modalities(), Modality::ALL);
        }
        assert!(matches!(
            create_model("svm", &settings),
            Err(ModelError::UnknownModel(_))
        ));
    }

    #[test]
    fn untrained_models_refuse_to_predict() {
        let (inputs, _) = separable_inputs(2, 0);
        for name in MODEL_NAMES {
            let model = create_model(name, &toy_settings()).unwrap();
            assert!(matches!(
                model.predict_proba(&inputs[0]),
                Err(ModelError::NotTrained)
            ));
        }
    }

    #[test]
    fn both_routes_overfit_and_round_trip_through_checkpoints() {
        let (inputs, labels) = separable_inputs(10, 1);
        let dir = tempfile::tempdir().unwrap();
        for name in MODEL_NAMES {
            let mut model = create_model(name, &toy_settings()).unwrap();
            let curve = model.train(&inputs, &labels, &toy_tc()).unwrap();
            assert_eq!(curve.len(), 200);
            assert!(model.is_trained());
            let correct = inputs
                .iter()
                .zip(&labels)
                .filter(|(i, &l)| model.predict(i).unwrap() == l)
                .count();
            assert_eq!(correct, inputs.len(), "{name} failed to overfit");

            let path = dir.path().join(format!("{name}.ckpt"));
            model.save(&path).unwrap();
            let restored = load_model(&path).unwrap();
            assert_eq!(restored.kind(), name);
            for input in &inputs {
                // Bit-equal round trip: same tensors, same arithmetic.
                assert_eq!(
                    model.predict_proba(input).unwrap(),
                    restored.predict_proba(input).unwrap(),
                    "{name} round trip"
                );
            }
        }
    }

    #[test]
    fn arity_mismatches_are_rejected() {
        let (mut inputs, labels) = separable_inputs(4, 2);
        inputs[1].sequences.pop();
        let mut lstm = create_model("lstm", &toy_settings()).unwrap();
        assert!(matches!(
            lstm.train(&inputs, &labels, &toy_tc()),
            Err(ModelError::BadInput(_))
        ));
        let (mut inputs, labels) = separable_inputs(4, 3);
        inputs[2].vectors[1].pop();
        let mut dbm = create_model("dbm", &toy_settings()).unwrap();
        assert!(matches!(
            dbm.train(&inputs, &labels, &toy_tc()),
            Err(ModelError::BadInput(_))
        ));
    }

    #[test]
    fn text_only_selection_trains_one_encoder() {
        let settings = ModelSettings {
            modalities: vec![Modality::Text],
            ..toy_settings()
        };
        let (inputs, labels) = separable_inputs(6, 4);
        let narrowed: Vec<ModelInput> = inputs
            .iter()
            .map(|i| ModelInput {
                sequences: vec![i.sequences[2].clone()],
                vectors: vec![i.vectors[2].clone()],
            })
            .collect();
        for name in MODEL_NAMES {
            let mut model = create_model(name, &settings).unwrap();
            let tc = TrainConfig {
                epochs: 60,
                ..toy_tc()
            };
            model.train(&narrowed, &labels, &tc).unwrap();
            assert_eq!(model.modalities(), [Modality::Text]);
            model.predict(&narrowed[0]).unwrap();
        }
    }
}
