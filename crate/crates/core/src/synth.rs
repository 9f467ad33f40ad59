//! Synthetic four-class corpus for exercising the pipeline without licensed
//! recordings. Each class is a mixture of amplitude-modulated partials and
//! light noise confined to its own frequency band.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::corpus::{load_manifest_with_sessions, CorpusRole, EmotionLabel, Manifest, UtteranceRecord};
use crate::dsp::{write_wav, AudioClip, TARGET_RATE};
use crate::error::{Error, Result};

/// Partial-frequency band per class, in Hz. Neighbouring bands are further
/// apart than a two-semitone pitch shift plus speaker jitter.
pub fn class_band(label: EmotionLabel) -> (f64, f64) {
    match label {
        EmotionLabel::Anger => (2200.0, 3400.0),
        EmotionLabel::Happiness => (1000.0, 1500.0),
        EmotionLabel::Neutral => (420.0, 650.0),
        EmotionLabel::Sadness => (150.0, 260.0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub sessions: u32,
    pub speakers_per_session: usize,
    pub per_class_per_session: usize,
    pub train_only_speakers: usize,
    pub train_only_per_class: usize,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sessions: 5,
            speakers_per_session: 2,
            per_class_per_session: 40,
            train_only_speakers: 2,
            train_only_per_class: 20,
            min_duration_s: 3.0,
            max_duration_s: 3.5,
            seed: 7,
        }
    }
}

/// Per-speaker frequency factor in [0.95, 1.05].
fn speaker_factor(speaker: &str, seed: u64) -> f64 {
    let h = speaker.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    });
    let mut rng = ChaCha8Rng::seed_from_u64(h ^ seed);
    rng.random_range(0.95..=1.05)
}

/// Voiced portion only: three partials in the class band with a slow
/// syllable-rate envelope and a little broadband noise.
pub fn class_signal<R: Rng + ?Sized>(label: EmotionLabel, seconds: f64, factor: f64, rng: &mut R) -> Vec<f64> {
    let n = (seconds * TARGET_RATE as f64).round() as usize;
    let (lo, hi) = class_band(label);
    let sr = TARGET_RATE as f64;
    let partials: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(lo..hi) * factor,
                rng.random_range(0.4..1.0),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let rate = rng.random_range(2.5..5.0);
    let env_phase = rng.random_range(0.0..2.0 * PI);
    let noise = Normal::new(0.0, 0.01).expect("valid sigma");
    let norm: f64 = partials.iter().map(|p| p.1).sum();
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let env = 0.6 + 0.4 * (2.0 * PI * rate * t + env_phase).sin();
            let tone: f64 = partials
                .iter()
                .map(|&(f, a, ph)| a * (2.0 * PI * f * t + ph).sin())
                .sum();
            0.5 * env * tone / norm + noise.sample(rng)
        })
        .collect()
}

/// Utterance with short silent margins at both ends.
pub fn utterance<R: Rng + ?Sized>(label: EmotionLabel, seconds: f64, factor: f64, rng: &mut R) -> AudioClip {
    let lead = (rng.random_range(0.1..0.4) * TARGET_RATE as f64) as usize;
    let tail = (rng.random_range(0.1..0.4) * TARGET_RATE as f64) as usize;
    let mut samples = vec![0.0; lead];
    samples.extend(class_signal(label, seconds, factor, rng));
    samples.extend(std::iter::repeat_n(0.0, tail));
    AudioClip::new(samples, TARGET_RATE).expect("finite synthetic samples")
}

/// `silence_s` of digital silence followed by `speech_s` of one class,
/// delivered as phrases separated by short pauses (counted in `speech_s`).
pub fn voice_note(label: EmotionLabel, silence_s: f64, speech_s: f64, seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = TARGET_RATE as f64;
    let total = ((silence_s + speech_s) * sr).round() as usize;
    let mut samples = vec![0.0; (silence_s * sr).round() as usize];
    while samples.len() < total {
        let phrase = (rng.random_range(2.0..4.0) * sr) as usize;
        let n = phrase.min(total - samples.len());
        samples.extend(class_signal(label, n as f64 / sr, 1.0, &mut rng));
        let pause = ((0.3 * sr) as usize).min(total - samples.len());
        samples.extend(std::iter::repeat_n(0.0, pause));
    }
    samples.truncate(total);
    AudioClip::new(samples, TARGET_RATE).expect("finite synthetic samples")
}

struct Plan {
    id: String,
    role: CorpusRole,
    session: u32,
    speaker: String,
    label: EmotionLabel,
}

fn plan(cfg: &SynthConfig) -> Vec<Plan> {
    let mut out = Vec::new();
    for s in 1..=cfg.sessions {
        for label in EmotionLabel::ALL {
            for n in 0..cfg.per_class_per_session {
                let spk = n % cfg.speakers_per_session.max(1);
                out.push(Plan {
                    id: format!("s{s}_{label}_{n:03}"),
                    role: CorpusRole::PrimaryEval,
                    session: s,
                    speaker: format!("s{s}spk{spk}"),
                    label,
                });
            }
        }
    }
    for label in EmotionLabel::ALL {
        for n in 0..cfg.train_only_per_class {
            let spk = n % cfg.train_only_speakers.max(1);
            out.push(Plan {
                id: format!("xc_{label}_{n:03}"),
                role: CorpusRole::TrainOnly,
                session: 0,
                speaker: format!("xcspk{spk}"),
                label,
            });
        }
    }
    out
}

/// Writes `audio/*.wav` and `manifest.csv` under `dir` and returns the
/// loaded manifest. Output depends only on `cfg`.
pub fn generate_corpus(dir: &Path, cfg: &SynthConfig) -> Result<Manifest> {
    if cfg.sessions < 3 || cfg.min_duration_s <= 0.0 || cfg.max_duration_s < cfg.min_duration_s {
        return Err(Error::Config("synthetic corpus needs >= 3 sessions and a valid duration range".into()));
    }
    let audio = dir.join("audio");
    fs::create_dir_all(&audio).map_err(|e| Error::io(&audio, e))?;
    let plans = plan(cfg);
    let records = plans
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ i as u64);
            let secs = rng.random_range(cfg.min_duration_s..=cfg.max_duration_s);
            let clip = utterance(p.label, secs, speaker_factor(&p.speaker, cfg.seed), &mut rng);
            let rel = PathBuf::from("audio").join(format!("{}.wav", p.id));
            write_wav(&dir.join(&rel), &clip)?;
            Ok(UtteranceRecord {
                id: p.id.clone(),
                corpus_role: p.role,
                session_id: p.session,
                speaker_id: p.speaker.clone(),
                label: p.label,
                audio_path: rel,
                duration_s: (clip.duration_s() * 1000.0).round() / 1000.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest::new(records, cfg.sessions)?;
    let path = dir.join("manifest.csv");
    manifest.write_csv(&path)?;
    load_manifest_with_sessions(&path, cfg.sessions)
}
