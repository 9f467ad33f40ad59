//! Classification head over frozen embeddings and its training stack.
//!
//! The default head is a single linear layer (embedding to K logits). An
//! optional ReLU hidden layer with dropout can be switched on through
//! [`TrainConfig::hidden_dim`].

pub mod loss;
pub mod optim;
pub mod train;

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{EmotionLabel, NUM_CLASSES};
use crate::embed::{Embedding, EmbedderSpec};
use crate::error::{Error, Result};

pub use loss::{focal_loss, focal_loss_from_logits, focal_loss_grad, softmax};
pub use optim::{adamw_step, cosine_warmup_lr, AdamWState};
pub use train::{evaluate, train_head, EmbeddedSet, EpochRecord, ExampleSet, TrainConfig, TrainOutcome};

/// Dense layer, row-major `rows x cols` weights (`rows` outputs).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Layer {
            rows,
            cols,
            weight: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    fn xavier(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        Layer {
            rows,
            cols,
            weight: (0..rows * cols)
                .map(|_| rng.random_range(-limit..limit))
                .collect(),
            bias: vec![0.0; rows],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .chunks(self.cols)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the layer input.
    fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Layer) -> Vec<f64> {
        let mut dx = vec![0.0; self.cols];
        for (r, &d) in dy.iter().enumerate() {
            grad.bias[r] += d;
            let row = &self.weight[r * self.cols..(r + 1) * self.cols];
            let grow = &mut grad.weight[r * self.cols..(r + 1) * self.cols];
            for c in 0..self.cols {
                grow[c] += d * x[c];
                dx[c] += d * row[c];
            }
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub hidden: Option<Layer>,
    pub output: Layer,
}

/// Intermediate values kept from a training forward pass.
pub(crate) struct ForwardCache {
    input: Vec<f64>,
    /// Post-ReLU, post-dropout activations of the hidden layer.
    hidden_out: Option<Vec<f64>>,
    /// Combined ReLU/dropout multiplier per hidden unit.
    hidden_mask: Option<Vec<f64>>,
}

impl HeadParams {
    /// All-zero head. `hidden_dim = 0` gives a linear head.
    pub fn zeros(input_dim: usize, classes: usize, hidden_dim: usize) -> Self {
        if hidden_dim == 0 {
            HeadParams {
                hidden: None,
                output: Layer::zeros(classes, input_dim),
            }
        } else {
            HeadParams {
                hidden: Some(Layer::zeros(hidden_dim, input_dim)),
                output: Layer::zeros(classes, hidden_dim),
            }
        }
    }

    /// Training start point: zeros for a linear head (the objective is
    /// convex there), seeded Xavier-uniform weights otherwise.
    pub fn init(input_dim: usize, classes: usize, hidden_dim: usize, seed: u64) -> Self {
        if hidden_dim == 0 {
            return Self::zeros(input_dim, classes, 0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        HeadParams {
            hidden: Some(Layer::xavier(hidden_dim, input_dim, &mut rng)),
            output: Layer::xavier(classes, hidden_dim, &mut rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.as_ref().unwrap_or(&self.output).cols
    }

    pub fn classes(&self) -> usize {
        self.output.rows
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden.as_ref().map_or(0, |h| h.rows)
    }

    /// Same shapes, all zeros; used as a gradient buffer.
    pub fn zeroed(&self) -> Self {
        Self::zeros(self.input_dim(), self.classes(), self.hidden_dim())
    }

    /// Tensors in serialization order.
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> = Vec::with_capacity(4);
        if let Some(h) = &self.hidden {
            out.push(("hidden.weight", &h.weight));
            out.push(("hidden.bias", &h.bias));
        }
        out.push(("output.weight", &self.output.weight));
        out.push(("output.bias", &self.output.bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out: Vec<(&'static str, &mut [f64])> = Vec::with_capacity(4);
        if let Some(h) = &mut self.hidden {
            out.push(("hidden.weight", &mut h.weight));
            out.push(("hidden.bias", &mut h.bias));
        }
        out.push(("output.weight", &mut self.output.weight));
        out.push(("output.bias", &mut self.output.bias));
        out
    }

    pub fn scale_all(&mut self, factor: f64) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Inference logits (dropout disabled).
    pub fn logits(&self, e: &[f64]) -> Result<Vec<f64>> {
        if e.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: e.len(),
            });
        }
        Ok(match &self.hidden {
            Some(h) => {
                let a: Vec<f64> = h.forward(e).into_iter().map(|v| v.max(0.0)).collect();
                self.output.forward(&a)
            }
            None => self.output.forward(e),
        })
    }

    pub(crate) fn forward_train(
        &self,
        e: &[f64],
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> (Vec<f64>, ForwardCache) {
        match &self.hidden {
            None => (
                self.output.forward(e),
                ForwardCache {
                    input: e.to_vec(),
                    hidden_out: None,
                    hidden_mask: None,
                },
            ),
            Some(h) => {
                let keep = 1.0 - dropout;
                let pre = h.forward(e);
                let mask: Vec<f64> = pre
                    .iter()
                    .map(|&v| {
                        let dropped = dropout > 0.0 && rng.random::<f64>() < dropout;
                        if v <= 0.0 || dropped {
                            0.0
                        } else {
                            1.0 / keep
                        }
                    })
                    .collect();
                let a: Vec<f64> = pre.iter().zip(&mask).map(|(v, m)| v * m).collect();
                let logits = self.output.forward(&a);
                (
                    logits,
                    ForwardCache {
                        input: e.to_vec(),
                        hidden_out: Some(a),
                        hidden_mask: Some(mask),
                    },
                )
            }
        }
    }

    pub(crate) fn backward(&self, cache: &ForwardCache, dlogits: &[f64], grads: &mut HeadParams) {
        match (&self.hidden, &mut grads.hidden) {
            (Some(h), Some(gh)) => {
                let a = cache.hidden_out.as_ref().expect("hidden cache");
                let mask = cache.hidden_mask.as_ref().expect("hidden mask");
                let da = self.output.backward(a, dlogits, &mut grads.output);
                let dpre: Vec<f64> = da.iter().zip(mask).map(|(d, m)| d * m).collect();
                h.backward(&cache.input, &dpre, gh);
            }
            _ => {
                self.output.backward(&cache.input, dlogits, &mut grads.output);
            }
        }
    }
}

/// Class probabilities in [`EmotionLabel`] index order.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(pub Vec<f64>);

impl ProbabilityVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn label(&self) -> EmotionLabel {
        EmotionLabel::from_index(self.argmax()).expect("four-class head")
    }
}

pub fn predict(head: &HeadParams, e: &Embedding) -> Result<ProbabilityVector> {
    Ok(ProbabilityVector(softmax(&head.logits(e.as_slice())?)))
}

pub const HEAD_MAGIC: &[u8; 4] = b"SERH";
pub const HEAD_VERSION: u16 = 1;

/// `SERH`, version (u16), K, D, H (u32 each), then each tensor as
/// little-endian f32 in [`HeadParams::tensors`] order.
pub fn encode_head(head: &HeadParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(HEAD_MAGIC);
    out.extend_from_slice(&HEAD_VERSION.to_le_bytes());
    for v in [head.classes(), head.input_dim(), head.hidden_dim()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for (_, t) in head.tensors() {
        for &v in t {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Format(format!("truncated file at byte {}", self.pos)))?;
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(Error::Format(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )))
        }
    }
}

pub(crate) fn read_shape_header(r: &mut ByteReader<'_>, magic: &[u8; 4]) -> Result<(usize, usize, usize)> {
    if r.take(4)? != magic {
        return Err(Error::Format(format!(
            "bad magic, expected {}",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.u16()?;
    if version != HEAD_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let k = r.u32()? as usize;
    let d = r.u32()? as usize;
    let h = r.u32()? as usize;
    if k == 0 || d == 0 {
        return Err(Error::Format("zero-sized head".into()));
    }
    Ok((k, d, h))
}

pub fn decode_head(bytes: &[u8]) -> Result<HeadParams> {
    let mut r = ByteReader::new(bytes);
    let (k, d, h) = read_shape_header(&mut r, HEAD_MAGIC)?;
    let mut head = HeadParams::zeros(d, k, h);
    for (_, t) in head.tensors_mut() {
        for v in t.iter_mut() {
            *v = r.f32()? as f64;
        }
    }
    r.finish()?;
    Ok(head)
}

/// Sidecar record stored next to a head file.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadMeta {
    pub classes: Vec<String>,
    pub embedder_digest: String,
    pub embedder: EmbedderSpec,
}

impl HeadMeta {
    pub fn for_embedder(spec: &EmbedderSpec) -> Self {
        HeadMeta {
            classes: EmotionLabel::ALL.iter().map(|l| l.as_str().to_owned()).collect(),
            embedder_digest: spec.digest(),
            embedder: spec.clone(),
        }
    }

    pub fn to_text(&self, format: &str) -> String {
        format!(
            "format={format}\nversion={HEAD_VERSION}\nclasses={}\nembedder_digest={}\nembedder={}\n",
            self.classes.join(","),
            self.embedder_digest,
            serde_json::to_string(&self.embedder).expect("spec serializes"),
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut classes = None;
        let mut digest = None;
        let mut embedder = None;
        for line in text.lines() {
            let Some((key, value)) = line.split_once('=') else {
                continue;
            };
            match key.trim() {
                "classes" => classes = Some(value.split(',').map(str::to_owned).collect()),
                "embedder_digest" => digest = Some(value.trim().to_owned()),
                "embedder" => {
                    embedder = Some(
                        serde_json::from_str(value)
                            .map_err(|e| Error::Format(format!("head metadata embedder: {e}")))?,
                    )
                }
                _ => {}
            }
        }
        match (classes, digest, embedder) {
            (Some(classes), Some(embedder_digest), Some(embedder)) => Ok(HeadMeta {
                classes,
                embedder_digest,
                embedder,
            }),
            _ => Err(Error::Format("head metadata is missing fields".into())),
        }
    }
}

pub fn meta_path(head_path: &Path) -> PathBuf {
    let mut s = head_path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

pub fn write_head(path: &Path, head: &HeadParams, meta: &HeadMeta) -> Result<()> {
    fs::write(path, encode_head(head)).map_err(|e| Error::io(path, e))?;
    let mp = meta_path(path);
    fs::write(&mp, meta.to_text("SERH")).map_err(|e| Error::io(&mp, e))
}

/// Reads a head file and, when present, its sidecar metadata.
pub fn read_head(path: &Path) -> Result<(HeadParams, Option<HeadMeta>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let head = decode_head(&bytes)?;
    Ok((head, read_meta(path)?))
}

pub(crate) fn read_meta(path: &Path) -> Result<Option<HeadMeta>> {
    let mp = meta_path(path);
    if !mp.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    HeadMeta::from_text(&text).map(Some)
}

/// Checks a loaded head against the number of classes used everywhere.
pub fn check_classes(head: &HeadParams) -> Result<()> {
    if head.classes() != NUM_CLASSES {
        return Err(Error::DimensionMismatch {
            expected: NUM_CLASSES,
            got: head.classes(),
        });
    }
    Ok(())
}
