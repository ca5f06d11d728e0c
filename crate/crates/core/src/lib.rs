//! Multimodal advertisement analysis.
//!
//! This crate extracts visual, auditory and textual features from
//! advertisement media, trains effectiveness classifiers (stacked-LSTM and
//! multimodal deep Boltzmann machine variants), derives ground-truth labels
//! from viewer signals, and evaluates the results with a repeated-split
//! protocol, exact significance testing, emotion profiling and
//! forest-based feature importance.
//!
//! The major pieces:
//!
//! * [`data`] — advertisement records, manifest loading, feature cache.
//! * [`video`] / [`audio`] / [`text`] — per-modality feature extraction.
//! * [`summary`] — fixed-length named feature vectors derived per modality.
//! * [`neural`] — from-scratch f64 LSTM stacks, dense heads, Adam, loss.
//! * [`mdbm`] — Gaussian-Bernoulli RBMs and the multimodal DBM stack.
//! * [`emotion`] — lexicon and LSTM emotion detectors.
//! * [`eval`] — labelers, normalization, splits, metrics, McNemar, forests.
//! * [`model`] — the effectiveness-model strategy registry.
//! * [`pipeline`] — command drivers shared by the CLI.

pub mod audio;
pub mod data;
pub mod emotion;
pub mod eval;
pub mod matrix;
pub mod mdbm;
pub mod model;
pub mod neural;
pub mod pipeline;
pub mod rng;
pub mod summary;
pub mod text;
pub mod timeline;
pub mod video;
