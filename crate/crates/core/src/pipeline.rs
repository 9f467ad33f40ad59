//! Long-form voice-note inference: energy VAD, fixed windows, per-window
//! classification and averaged aggregation.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{EmotionLabel, NUM_CLASSES};
use crate::dsp::{self, AudioClip, CLIP_SAMPLES, TARGET_RATE};
use crate::embed::Embedder;
use crate::error::{Error, Result};
use crate::head::{predict, HeadParams, ProbabilityVector};
use crate::quant::{dequantize_head, QuantizedHead};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VadConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
    /// Speech threshold in dB below the loudest frame.
    pub threshold_db: f64,
    pub min_speech_ms: f64,
    pub hangover_ms: f64,
    pub window_s: f64,
    pub min_tail_s: f64,
    /// Cut windows inside each speech segment instead of across the
    /// concatenated speech.
    pub per_segment: bool,
}

impl Default for VadConfig {
    fn default() -> Self {
        VadConfig {
            frame_ms: 25.0,
            hop_ms: 10.0,
            threshold_db: 30.0,
            min_speech_ms: 200.0,
            hangover_ms: 100.0,
            window_s: 8.0,
            min_tail_s: 1.0,
            per_segment: false,
        }
    }
}

fn ms_to_samples(ms: f64, rate: u32) -> usize {
    (ms * rate as f64 / 1000.0).round() as usize
}

impl VadConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("frame_ms", self.frame_ms),
            ("hop_ms", self.hop_ms),
            ("threshold_db", self.threshold_db),
            ("min_speech_ms", self.min_speech_ms),
            ("hangover_ms", self.hangover_ms),
            ("window_s", self.window_s),
            ("min_tail_s", self.min_tail_s),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("vad.{name} must be positive, got {v}")));
            }
        }
        if ms_to_samples(self.hop_ms, TARGET_RATE) == 0 || self.hop_ms > self.frame_ms {
            return Err(Error::Config("vad.hop_ms must be at least one sample and at most frame_ms".into()));
        }
        Ok(())
    }
}

/// Sorted, disjoint `[start, end)` sample intervals judged to contain speech.
///
/// Frames at or above `peak_rms * 10^(-threshold_db/20)` are speech. Runs of
/// speech frames separated by gaps of at most `hangover_ms` are merged, then
/// spans shorter than `min_speech_ms` are dropped.
pub fn vad_segments(clip: &AudioClip, cfg: &VadConfig) -> Vec<(usize, usize)> {
    let rate = clip.sample_rate;
    let frame = ms_to_samples(cfg.frame_ms, rate).max(1);
    let hop = ms_to_samples(cfg.hop_ms, rate).max(1);
    let rms = dsp::frame_rms(&clip.samples, frame, hop);
    let peak = rms.iter().cloned().fold(0.0f64, f64::max);
    if peak <= 0.0 {
        return Vec::new();
    }
    let threshold = peak * 10f64.powf(-cfg.threshold_db / 20.0);

    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < rms.len() {
        if rms[i] >= threshold {
            let first = i;
            while i + 1 < rms.len() && rms[i + 1] >= threshold {
                i += 1;
            }
            runs.push((first, i));
        }
        i += 1;
    }

    let hangover = ms_to_samples(cfg.hangover_ms, rate);
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for run in runs {
        match merged.last_mut() {
            Some(prev) if (run.0 - prev.1 - 1) * hop <= hangover => prev.1 = run.1,
            _ => merged.push(run),
        }
    }

    let min_len = ms_to_samples(cfg.min_speech_ms, rate);
    merged
        .into_iter()
        .map(|(a, b)| dsp::frame_run_span(a, b, rms.len(), frame, hop, clip.len()))
        .filter(|(s, e)| e - s >= min_len)
        .collect()
}

/// A window of concatenated speech and the sample range it covers there.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeechWindow {
    pub clip: AudioClip,
    pub start: usize,
    /// End of real (unpadded) content.
    pub end: usize,
}

/// Consecutive non-overlapping windows of `window_s`. A final remainder is
/// zero-padded and kept when it lasts at least `min_tail_s`.
pub fn segment_windows(speech: &AudioClip, window_s: f64, min_tail_s: f64) -> Vec<SpeechWindow> {
    let rate = speech.sample_rate as f64;
    let win = (window_s * rate).round() as usize;
    let min_tail = (min_tail_s * rate).round() as usize;
    if win == 0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start < speech.len() {
        let end = (start + win).min(speech.len());
        if end - start < win && end - start < min_tail {
            break;
        }
        let mut samples = speech.samples[start..end].to_vec();
        samples.resize(win, 0.0);
        out.push(SpeechWindow {
            clip: speech.with_samples(samples),
            start,
            end,
        });
        start = end;
    }
    out
}

/// Float or quantized head. The quantized form runs the float forward pass
/// on dequantized weights.
#[derive(Debug, Clone)]
pub enum Classifier {
    Float(HeadParams),
    Quantized { head: QuantizedHead, dequantized: HeadParams },
}

impl Classifier {
    pub fn quantized(head: QuantizedHead) -> Self {
        let dequantized = dequantize_head(&head);
        Classifier::Quantized { head, dequantized }
    }

    fn params(&self) -> &HeadParams {
        match self {
            Classifier::Float(h) => h,
            Classifier::Quantized { dequantized, .. } => dequantized,
        }
    }
}

/// Embeds and scores one already-normalized 128000-sample window.
pub fn classify_clip(clip: &AudioClip, embedder: &Embedder, head: &Classifier) -> Result<ProbabilityVector> {
    if clip.len() != CLIP_SAMPLES {
        return Err(Error::InvalidInput(format!(
            "window must have {CLIP_SAMPLES} samples, got {}",
            clip.len()
        )));
    }
    predict(head.params(), &embedder.embed(clip)?)
}

/// Mean of the window vectors and its argmax (ties to the lowest index).
pub fn aggregate_note(windows: &[ProbabilityVector]) -> Result<(ProbabilityVector, EmotionLabel)> {
    let Some(first) = windows.first() else {
        return Err(Error::NoSpeech);
    };
    let k = first.0.len();
    if let Some(bad) = windows.iter().find(|w| w.0.len() != k) {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: bad.0.len(),
        });
    }
    let n = windows.len() as f64;
    let mean: Vec<f64> = (0..k)
        .map(|c| windows.iter().map(|w| w.0[c]).sum::<f64>() / n)
        .collect();
    let p = ProbabilityVector(mean);
    let label = EmotionLabel::from_index(p.argmax())
        .ok_or_else(|| Error::InvalidInput(format!("expected {NUM_CLASSES} classes, got {k}")))?;
    Ok((p, label))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub start_s: f64,
    pub end_s: f64,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteReport {
    pub label: EmotionLabel,
    pub aggregate: Vec<f64>,
    pub window_count: usize,
    pub speech_segments: Vec<(f64, f64)>,
    pub windows: Vec<WindowResult>,
}

pub const WINDOW_CSV_HEADER: &str = "start_s,end_s,anger,happiness,neutral,sadness";

impl NoteReport {
    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn windows_csv(&self) -> String {
        let mut out = String::from(WINDOW_CSV_HEADER);
        out.push('\n');
        for w in &self.windows {
            let probs: Vec<String> = w.probs.iter().map(|p| format!("{p:.6}")).collect();
            out.push_str(&format!("{:.3},{:.3},{}\n", w.start_s, w.end_s, probs.join(",")));
        }
        out
    }

    /// `label=anger p=(0.9000,0.0300,0.0400,0.0300)`
    pub fn summary_line(&self) -> String {
        let probs: Vec<String> = self.aggregate.iter().map(|p| format!("{p:.4}")).collect();
        format!("label={} p=({})", self.label, probs.join(","))
    }
}

/// Parses per-window rows written by [`NoteReport::windows_csv`].
pub fn parse_window_csv(text: &str) -> Result<Vec<ProbabilityVector>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Format(format!("window row {}: {e}", i + 1)))?;
        let probs = row
            .iter()
            .skip(2)
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(format!("window row {}: {e}", i + 1)))?;
        if probs.len() != NUM_CLASSES {
            return Err(Error::Format(format!(
                "window row {}: expected {NUM_CLASSES} probabilities, got {}",
                i + 1,
                probs.len()
            )));
        }
        out.push(ProbabilityVector(probs));
    }
    Ok(out)
}

/// Maps a position in concatenated speech back to the source timeline.
fn to_source(segments: &[(usize, usize)], pos: usize) -> usize {
    let mut offset = 0;
    for &(s, e) in segments {
        let len = e - s;
        if pos < offset + len {
            return s + (pos - offset);
        }
        offset += len;
    }
    segments.last().map_or(0, |&(_, e)| e)
}

/// Full deployment path on an in-memory clip at any sample rate.
pub fn analyze_clip(clip: &AudioClip, vad: &VadConfig, embedder: &Embedder, head: &Classifier) -> Result<NoteReport> {
    vad.validate()?;
    let clip = dsp::resample(clip, TARGET_RATE)?;
    let segments = vad_segments(&clip, vad);
    let mut speech = Vec::new();
    for &(s, e) in &segments {
        speech.extend_from_slice(&clip.samples[s..e]);
    }
    let speech = dsp::peak_normalize(&dsp::pre_emphasis(&clip.with_samples(speech)));
    let windows = if vad.per_segment {
        let mut out = Vec::new();
        let mut offset = 0;
        for &(s, e) in &segments {
            let part = speech.with_samples(speech.samples[offset..offset + e - s].to_vec());
            out.extend(segment_windows(&part, vad.window_s, vad.min_tail_s).into_iter().map(|w| SpeechWindow {
                start: w.start + offset,
                end: w.end + offset,
                ..w
            }));
            offset += e - s;
        }
        out
    } else {
        segment_windows(&speech, vad.window_s, vad.min_tail_s)
    };
    if windows.is_empty() {
        return Err(Error::NoSpeech);
    }
    let probs = windows
        .par_iter()
        .map(|w| classify_clip(&w.clip, embedder, head))
        .collect::<Result<Vec<_>>>()?;
    let (aggregate, label) = aggregate_note(&probs)?;

    let rate = TARGET_RATE as f64;
    let results = windows
        .iter()
        .zip(&probs)
        .map(|(w, p)| WindowResult {
            start_s: to_source(&segments, w.start) as f64 / rate,
            end_s: (to_source(&segments, w.end - 1) + 1) as f64 / rate,
            probs: p.0.clone(),
        })
        .collect();
    Ok(NoteReport {
        label,
        aggregate: aggregate.0,
        window_count: windows.len(),
        speech_segments: segments
            .iter()
            .map(|&(s, e)| (s as f64 / rate, e as f64 / rate))
            .collect(),
        windows: results,
    })
}

pub fn analyze_voice_note(path: &Path, vad: &VadConfig, embedder: &Embedder, head: &Classifier) -> Result<NoteReport> {
    analyze_clip(&dsp::read_wav(path)?, vad, embedder, head)
}
