//! Speech emotion recognition: waveform preprocessing, augmentation,
//! embedding backends, a focal-loss classification head, leave-one-session-out
//! evaluation, 8-bit head quantization and a voice-note inference pipeline.

pub mod augment;
pub mod config;
pub mod corpus;
pub mod dsp;
pub mod embed;
pub mod error;
pub mod head;
pub mod metrics;
pub mod pipeline;
pub mod quant;
pub mod runner;
pub mod synth;

pub use corpus::{EmotionLabel, Manifest, UtteranceRecord};
pub use dsp::AudioClip;
pub use embed::{Embedder, EmbedderSpec, Embedding};
pub use error::{Error, Result};
pub use head::{HeadParams, ProbabilityVector};
