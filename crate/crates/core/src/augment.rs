//! Training-time waveform augmentation.
//!
//! Four transforms run in a fixed order (gain, noise, pitch, polarity), each
//! applied independently with probability `p`. Every random choice comes
//! from an explicit seeded stream so a (clip, config, seed) triple always
//! produces the same output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dsp::{self, AudioClip};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub gain_db_range: [f64; 2],
    pub noise_sigma_range: [f64; 2],
    pub pitch_semitone_range: [f64; 2],
    /// Per-transform application probability.
    pub p: f64,
    pub seed: u64,
    /// Augmented variants precomputed per training utterance; epoch `e`
    /// trains on variant `e mod views`.
    pub views: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: true,
            gain_db_range: [-18.0, 6.0],
            noise_sigma_range: [0.001, 0.015],
            pitch_semitone_range: [-2.0, 2.0],
            p: 0.5,
            seed: 0,
            views: 2,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [
            ("gain_db_range", self.gain_db_range),
            ("noise_sigma_range", self.noise_sigma_range),
            ("pitch_semitone_range", self.pitch_semitone_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!("augment.{name} must be ordered low <= high")));
            }
        }
        if self.noise_sigma_range[0] < 0.0 {
            return Err(Error::Config("augment.noise_sigma_range must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Config("augment.p must lie in [0, 1]".into()));
        }
        if self.views == 0 {
            return Err(Error::Config("augment.views must be at least 1".into()));
        }
        Ok(())
    }

    /// Independent stream for one utterance variant: the config seed mixed
    /// with the utterance index (and the variant number in the high bits).
    pub fn rng_for(&self, utterance_index: usize, view: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ utterance_index as u64 ^ ((view as u64) << 32))
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn clamp_unit(samples: impl Iterator<Item = f64>) -> Vec<f64> {
    samples.map(|x| x.clamp(-1.0, 1.0)).collect()
}

/// Multiplies by `10^(db/20)` and clamps to [-1, 1].
pub fn apply_gain_db(clip: &AudioClip, db: f64) -> AudioClip {
    let g = 10f64.powf(db / 20.0);
    AudioClip {
        samples: clamp_unit(clip.samples.iter().map(|x| x * g)),
        sample_rate: clip.sample_rate,
    }
}

pub fn draw_gain_db<R: Rng + ?Sized>(cfg: &AugmentConfig, rng: &mut R) -> f64 {
    uniform(rng, cfg.gain_db_range)
}

pub fn random_gain<R: Rng + ?Sized>(clip: &AudioClip, cfg: &AugmentConfig, rng: &mut R) -> AudioClip {
    apply_gain_db(clip, draw_gain_db(cfg, rng))
}

/// Adds zero-mean Gaussian noise with standard deviation `sigma`, clamped.
pub fn add_noise_sigma<R: Rng + ?Sized>(clip: &AudioClip, sigma: f64, rng: &mut R) -> AudioClip {
    if sigma <= 0.0 {
        return clip.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    AudioClip {
        samples: clamp_unit(clip.samples.iter().map(|x| x + normal.sample(rng))),
        sample_rate: clip.sample_rate,
    }
}

pub fn add_gaussian_noise<R: Rng + ?Sized>(
    clip: &AudioClip,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> AudioClip {
    let sigma = uniform(rng, cfg.noise_sigma_range);
    add_noise_sigma(clip, sigma, rng)
}

/// Resamples by `2^(semitones/12)` while keeping the sample-rate label:
/// pitch scales by that ratio and duration by its inverse.
pub fn pitch_shift_semitones(clip: &AudioClip, semitones: f64) -> AudioClip {
    if semitones == 0.0 || clip.is_empty() {
        return clip.clone();
    }
    let ratio = 2f64.powf(semitones / 12.0);
    let out_len = ((clip.len() as f64 / ratio).round() as usize).max(1);
    AudioClip {
        samples: dsp::interpolate(&clip.samples, ratio, out_len),
        sample_rate: clip.sample_rate,
    }
}

pub fn pitch_shift<R: Rng + ?Sized>(clip: &AudioClip, cfg: &AugmentConfig, rng: &mut R) -> AudioClip {
    pitch_shift_semitones(clip, uniform(rng, cfg.pitch_semitone_range))
}

pub fn polarity_invert(clip: &AudioClip) -> AudioClip {
    AudioClip {
        samples: clip.samples.iter().map(|x| -x).collect(),
        sample_rate: clip.sample_rate,
    }
}

/// Full stochastic chain followed by a fresh duration fix.
pub fn augment<R: Rng + ?Sized>(clip: &AudioClip, cfg: &AugmentConfig, rng: &mut R) -> AudioClip {
    let mut out = clip.clone();
    if rng.random::<f64>() < cfg.p {
        out = random_gain(&out, cfg, rng);
    }
    if rng.random::<f64>() < cfg.p {
        out = add_gaussian_noise(&out, cfg, rng);
    }
    if rng.random::<f64>() < cfg.p {
        out = pitch_shift(&out, cfg, rng);
    }
    if rng.random::<f64>() < cfg.p {
        out = polarity_invert(&out);
    }
    dsp::fix_duration(&out)
}
