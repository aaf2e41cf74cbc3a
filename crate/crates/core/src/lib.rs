//! Playlist generation from within-track transitions.
//!
//! Tracks are split into structural segments (self-similarity + checkerboard
//! novelty), each segment is summarised by a tag-probability vector, and a
//! two-layer LSTM learns to predict the next segment vector from the previous
//! ones. At generation time the model's prediction is compared against the
//! first segment of every candidate track and the best match is appended.
//!
//! Module map:
//!
//! - [`catalog`]: data model, JSON-lines catalog I/O, model file I/O and
//!   training-pair construction.
//! - [`segmentation`]: self-similarity, novelty curve, peak picking.
//! - [`features`]: per-dimension standardization and the synthetic catalog
//!   generator.
//! - [`rnn`]: LSTM forward pass, BPTT gradients and training.
//! - [`similarity`]: cosine / l2 / DCG scoring and candidate ranking.
//! - [`playlist`]: the generation loop, transition-matrix export and
//!   coherence diagnostics.
//! - [`cli`]: the `trackflow` command line.

pub mod catalog;
pub mod cli;
pub mod error;
pub mod features;
pub mod matrix;
pub mod playlist;
pub mod rnn;
pub mod segmentation;
pub mod similarity;

pub use catalog::{Catalog, FeatureVector, FrameMatrix, Segment, Track, TrainingPair};
pub use error::{Error, Result};
pub use rnn::{SequenceModel, TrainConfig};
pub use similarity::Metric;
