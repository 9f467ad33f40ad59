//! Fixed-dimension utterance embeddings.
//!
//! Two backends share one contract: a frozen external encoder loaded from an
//! ONNX file (mean-pooled over time), and a mel-statistics stub that needs no
//! model file at all.

mod mel;
#[cfg(feature = "onnx")]
mod onnx;
#[cfg(feature = "onnx")]
pub use onnx::write_reshape_encoder;

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::{AudioClip, CLIP_SAMPLES, TARGET_RATE};
use crate::error::{Error, Result};

pub use mel::{MelFilterbank, MelStats, LOG_FLOOR};

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EmbedderSpec {
    /// Per-band mean and standard deviation of log mel energies.
    MelStatStub {
        #[serde(default = "default_n_mels")]
        n_mels: usize,
        #[serde(default = "default_frame")]
        frame: usize,
        #[serde(default = "default_hop")]
        hop: usize,
    },
    /// Frozen encoder: input `[1, 128000]` samples, output `[1, T, H]`.
    EncoderFile {
        model_path: PathBuf,
        input_name: String,
        output_name: String,
        /// Expected `H`; checked against the model when set.
        #[serde(default)]
        dim: Option<usize>,
    },
}

fn default_n_mels() -> usize {
    64
}
fn default_frame() -> usize {
    400
}
fn default_hop() -> usize {
    160
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        EmbedderSpec::MelStatStub {
            n_mels: default_n_mels(),
            frame: default_frame(),
            hop: default_hop(),
        }
    }
}

impl EmbedderSpec {
    /// Short hex digest of the canonical JSON form; stored next to trained
    /// heads so a head is never paired with a different embedder silently.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        let hash = Sha256::digest(json.as_bytes());
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

enum Backend {
    Mel(MelStats),
    #[cfg(feature = "onnx")]
    Onnx(onnx::OnnxEncoder),
}

/// A ready-to-run embedding backend.
pub struct Embedder {
    spec: EmbedderSpec,
    backend: Backend,
}

impl std::fmt::Debug for Embedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Embedder")
            .field("spec", &self.spec)
            .field("dim", &self.dim())
            .finish()
    }
}

impl Embedder {
    pub fn from_spec(spec: &EmbedderSpec) -> Result<Self> {
        let backend = match spec {
            EmbedderSpec::MelStatStub { n_mels, frame, hop } => {
                Backend::Mel(MelStats::new(*n_mels, *frame, *hop, TARGET_RATE)?)
            }
            #[cfg(feature = "onnx")]
            EmbedderSpec::EncoderFile {
                model_path,
                input_name,
                output_name,
                dim,
            } => {
                let enc = onnx::OnnxEncoder::load(model_path, input_name, output_name)?;
                if let Some(d) = dim {
                    if *d != enc.dim() {
                        return Err(Error::DimensionMismatch {
                            expected: *d,
                            got: enc.dim(),
                        });
                    }
                }
                Backend::Onnx(enc)
            }
            #[cfg(not(feature = "onnx"))]
            EmbedderSpec::EncoderFile { .. } => {
                return Err(Error::Embed(
                    "encoder-file backend needs the `onnx` feature".into(),
                ))
            }
        };
        Ok(Embedder {
            spec: spec.clone(),
            backend,
        })
    }

    pub fn mel_stub() -> Self {
        Self::from_spec(&EmbedderSpec::default()).expect("default stub is valid")
    }

    pub fn spec(&self) -> &EmbedderSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        match &self.backend {
            Backend::Mel(m) => m.dim(),
            #[cfg(feature = "onnx")]
            Backend::Onnx(e) => e.dim(),
        }
    }

    /// Embeds one fixed-length (128000 samples, 16 kHz) clip.
    pub fn embed(&self, clip: &AudioClip) -> Result<Embedding> {
        if clip.sample_rate != TARGET_RATE || clip.len() != CLIP_SAMPLES {
            return Err(Error::InvalidInput(format!(
                "embedder expects {CLIP_SAMPLES} samples at {TARGET_RATE} Hz, got {} at {} Hz",
                clip.len(),
                clip.sample_rate
            )));
        }
        let v = match &self.backend {
            Backend::Mel(m) => m.compute(&clip.samples),
            #[cfg(feature = "onnx")]
            Backend::Onnx(e) => e.run(&clip.samples)?,
        };
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("embedding".into()));
        }
        Ok(Embedding(v))
    }

    /// Order-preserving; element `i` equals `embed(&clips[i])`. The first
    /// failing element is reported with its index.
    pub fn embed_batch(&self, clips: &[AudioClip]) -> Result<Vec<Embedding>> {
        clips
            .par_iter()
            .enumerate()
            .map(|(index, c)| {
                self.embed(c).map_err(|e| Error::Batch {
                    index,
                    source: Box::new(e),
                })
            })
            .collect::<Vec<_>>()
            .into_iter()
            .collect()
    }
}
