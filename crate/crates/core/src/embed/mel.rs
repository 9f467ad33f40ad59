use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// `ln(1e-10)`: log energies never go below this.
pub const LOG_FLOOR: f64 = -23.025850929940457;
const ENERGY_FLOOR: f64 = 1e-10;

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters equally spaced on the mel scale between `f_min` and
/// `f_max`, evaluated at the FFT bin centre frequencies. Filters narrower
/// than a bin spacing can end up with no weight at all.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `n_mels` rows of `n_fft / 2 + 1` weights.
    weights: Vec<Vec<f64>>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: u32, f_min: f64, f_max: f64) -> Self {
        let n_bins = n_fft / 2 + 1;
        let (m_lo, m_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let weights = (0..n_mels)
            .map(|m| {
                let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                (0..n_bins)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        let rise = (f - lo) / (mid - lo);
                        let fall = (hi - f) / (hi - mid);
                        rise.min(fall).max(0.0)
                    })
                    .collect()
            })
            .collect();
        MelFilterbank { weights }
    }

    pub fn n_mels(&self) -> usize {
        self.weights.len()
    }

    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (o, w) in out.iter_mut().zip(&self.weights) {
            *o = w.iter().zip(power).map(|(a, b)| a * b).sum();
        }
    }
}

/// Mel-statistics embedding: Hann-windowed frames, power spectrum, mel
/// filterbank, floored natural log, then per-band mean and (population)
/// standard deviation over frames.
pub struct MelStats {
    frame: usize,
    hop: usize,
    n_fft: usize,
    window: Vec<f64>,
    bank: MelFilterbank,
    fft: Arc<dyn Fft<f64>>,
}

impl MelStats {
    pub fn new(n_mels: usize, frame: usize, hop: usize, sample_rate: u32) -> Result<Self> {
        if n_mels == 0 || frame == 0 || hop == 0 {
            return Err(Error::InvalidInput(
                "mel stub needs positive n_mels, frame and hop".into(),
            ));
        }
        let n_fft = frame.next_power_of_two();
        let window = (0..frame)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / frame as f64).cos())
            .collect();
        let bank = MelFilterbank::new(n_mels, n_fft, sample_rate, 0.0, sample_rate as f64 / 2.0);
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Ok(MelStats {
            frame,
            hop,
            n_fft,
            window,
            bank,
            fft,
        })
    }

    pub fn dim(&self) -> usize {
        2 * self.bank.n_mels()
    }

    pub fn compute(&self, samples: &[f64]) -> Vec<f64> {
        let n_mels = self.bank.n_mels();
        let n_frames = if samples.len() >= self.frame {
            (samples.len() - self.frame) / self.hop + 1
        } else {
            1
        };
        let mut sum = vec![0.0; n_mels];
        let mut sum_sq = vec![0.0; n_mels];
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; self.n_fft / 2 + 1];
        let mut bands = vec![0.0; n_mels];

        for i in 0..n_frames {
            let start = i * self.hop;
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (j, w) in self.window.iter().enumerate() {
                if let Some(&x) = samples.get(start + j) {
                    buf[j].re = x * w;
                }
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            self.bank.apply(&power, &mut bands);
            for b in 0..n_mels {
                let v = if bands[b] > ENERGY_FLOOR {
                    bands[b].ln()
                } else {
                    LOG_FLOOR
                };
                let d = v - LOG_FLOOR;
                sum[b] += d;
                sum_sq[b] += d * d;
            }
        }

        let n = n_frames as f64;
        let mut out = Vec::with_capacity(2 * n_mels);
        // Accumulated relative to the floor so silent bands come out exact.
        let shifted: Vec<f64> = sum.iter().map(|s| s / n).collect();
        out.extend(shifted.iter().map(|m| LOG_FLOOR + m));
        out.extend(
            sum_sq
                .iter()
                .zip(&shifted)
                .map(|(sq, m)| (sq / n - m * m).max(0.0).sqrt()),
        );
        out
    }
}
