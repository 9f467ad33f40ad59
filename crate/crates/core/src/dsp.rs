//! Waveform preprocessing: resample to 16 kHz, trim leading/trailing
//! silence, pre-emphasis, peak normalization and fixed-length padding.

use std::path::Path;

use crate::error::{Error, Result};

pub const TARGET_RATE: u32 = 16_000;
pub const CLIP_SECONDS: f64 = 8.0;
/// Samples in a fixed-duration clip at [`TARGET_RATE`].
pub const CLIP_SAMPLES: usize = 128_000;

pub const TRIM_TOP_DB: f64 = 20.0;
pub const TRIM_FRAME: usize = 2048;
pub const TRIM_HOP: usize = 512;
pub const PRE_EMPHASIS: f64 = 0.97;
pub const PEAK: f64 = 0.95;

/// Mono waveform with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("audio samples".into()));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        AudioClip {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub(crate) fn with_samples(&self, samples: Vec<f64>) -> Self {
        AudioClip {
            samples,
            sample_rate: self.sample_rate,
        }
    }
}

/// Decodes a RIFF/PCM file (16-bit integer or 32-bit float). Multichannel
/// audio is averaged to mono.
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav(other),
    })?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::Format(format!(
                "{}: unsupported sample format {fmt:?}/{bits} bits",
                path.display()
            )))
        }
    };
    let samples = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / frame.len() as f64)
        .collect();
    AudioClip::new(samples, spec.sample_rate)
}

/// Writes 16-bit mono PCM. Samples are clamped to [-1, 1].
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav(other),
    })?;
    for &x in &clip.samples {
        let v = (x.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v)?;
    }
    w.finalize()?;
    Ok(())
}

/// Linear-interpolation resampling. Output length is
/// `round(len * target / source)`. There is no anti-alias filter, so content
/// above the target Nyquist folds back when downsampling.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::InvalidInput("target rate must be positive".into()));
    }
    if clip.is_empty() {
        return Err(Error::InvalidInput("cannot resample an empty clip".into()));
    }
    if clip.sample_rate == target_rate {
        return Ok(clip.clone());
    }
    let step = clip.sample_rate as f64 / target_rate as f64;
    let out_len = (clip.len() as f64 * target_rate as f64 / clip.sample_rate as f64).round() as usize;
    Ok(AudioClip {
        samples: interpolate(&clip.samples, step, out_len),
        sample_rate: target_rate,
    })
}

/// Reads `src` at positions `j * step` for `j < out_len`, linearly
/// interpolating between neighbours and holding the last sample past the end.
pub(crate) fn interpolate(src: &[f64], step: f64, out_len: usize) -> Vec<f64> {
    let last = src.len() - 1;
    (0..out_len)
        .map(|j| {
            let t = j as f64 * step;
            let i = t.floor() as usize;
            if i >= last {
                return src[last];
            }
            let frac = t - i as f64;
            src[i] + (src[i + 1] - src[i]) * frac
        })
        .collect()
}

/// Per-frame RMS over frames starting at multiples of `hop`. A clip shorter
/// than one frame yields a single frame over whatever samples exist.
pub(crate) fn frame_rms(samples: &[f64], frame: usize, hop: usize) -> Vec<f64> {
    if samples.is_empty() {
        return Vec::new();
    }
    let n_frames = if samples.len() >= frame {
        (samples.len() - frame) / hop + 1
    } else {
        1
    };
    (0..n_frames)
        .map(|i| {
            let start = i * hop;
            let end = (start + frame).min(samples.len());
            let energy: f64 = samples[start..end].iter().map(|x| x * x).sum();
            (energy / frame as f64).sqrt()
        })
        .collect()
}

/// Sample span of a run of active frames `first..=last`.
///
/// A sample counts as active only when every frame covering it is active, so
/// the span starts in the last hop of the first frame and ends after the
/// first hop of the last frame. Samples before the second frame's start or
/// after the final frame's end are covered only by the edge frame.
pub(crate) fn frame_run_span(
    first: usize,
    last: usize,
    n_frames: usize,
    frame: usize,
    hop: usize,
    len: usize,
) -> (usize, usize) {
    let start = if first == 0 {
        0
    } else {
        (first * hop + frame - hop).min(len)
    };
    let end = if last + 1 == n_frames {
        len
    } else {
        ((last + 1) * hop).min(len)
    };
    (start, end.max(start))
}

pub fn trim_silence(clip: &AudioClip) -> AudioClip {
    trim_silence_with(clip, TRIM_TOP_DB, TRIM_FRAME, TRIM_HOP)
}

/// Removes leading and trailing frames whose RMS falls more than `top_db`
/// below the loudest frame. Interior quiet stretches are kept. An all-silent
/// clip trims to empty.
pub fn trim_silence_with(clip: &AudioClip, top_db: f64, frame: usize, hop: usize) -> AudioClip {
    let rms = frame_rms(&clip.samples, frame, hop);
    let peak = rms.iter().cloned().fold(0.0f64, f64::max);
    if peak <= 0.0 {
        return clip.with_samples(Vec::new());
    }
    let threshold = peak * 10f64.powf(-top_db / 20.0);
    let first = rms.iter().position(|&r| r >= threshold);
    let last = rms.iter().rposition(|&r| r >= threshold);
    match (first, last) {
        (Some(first), Some(last)) => {
            let (start, end) = frame_run_span(first, last, rms.len(), frame, hop, clip.len());
            clip.with_samples(clip.samples[start..end].to_vec())
        }
        _ => clip.with_samples(Vec::new()),
    }
}

pub fn pre_emphasis(clip: &AudioClip) -> AudioClip {
    pre_emphasis_with(clip, PRE_EMPHASIS)
}

/// `y[0] = x[0]`, `y[n] = x[n] - a * x[n-1]`.
pub fn pre_emphasis_with(clip: &AudioClip, a: f64) -> AudioClip {
    let x = &clip.samples;
    let mut y = Vec::with_capacity(x.len());
    if let Some(&first) = x.first() {
        y.push(first);
        y.extend(x.windows(2).map(|w| w[1] - a * w[0]));
    }
    clip.with_samples(y)
}

pub fn peak_normalize(clip: &AudioClip) -> AudioClip {
    peak_normalize_to(clip, PEAK)
}

/// Scales so the largest magnitude equals `peak`. Silence passes through.
pub fn peak_normalize_to(clip: &AudioClip, peak: f64) -> AudioClip {
    let current = clip.peak();
    if current == 0.0 {
        return clip.clone();
    }
    let gain = peak / current;
    clip.with_samples(clip.samples.iter().map(|x| x * gain).collect())
}

pub fn fix_duration(clip: &AudioClip) -> AudioClip {
    fix_length(clip, CLIP_SAMPLES)
}

/// Zero-pads or truncates at the tail so the onset is always preserved.
pub fn fix_length(clip: &AudioClip, len: usize) -> AudioClip {
    let mut samples = clip.samples.clone();
    samples.resize(len, 0.0);
    clip.with_samples(samples)
}

/// resample → trim → pre-emphasis → peak-normalize → fix duration.
pub fn preprocess(clip: &AudioClip) -> Result<AudioClip> {
    let clip = resample(clip, TARGET_RATE)?;
    let trimmed = trim_silence(&clip);
    if trimmed.is_empty() {
        return Err(Error::NoSignal);
    }
    Ok(fix_duration(&peak_normalize(&pre_emphasis(&trimmed))))
}
