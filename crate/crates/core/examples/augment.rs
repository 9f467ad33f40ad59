//! Draws a few augmented views of one utterance and shows that each view is
//! reproducible from (seed, utterance, view).
//!
//! cargo run --example augment

use ser_core::augment::{augment, AugmentConfig};
use ser_core::dsp::preprocess;
use ser_core::synth::utterance;
use ser_core::EmotionLabel;

use rand::SeedableRng;

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn main() -> ser_core::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let clip = preprocess(&utterance(EmotionLabel::Happiness, 2.5, 1.0, &mut rng))?;
    let cfg = AugmentConfig { seed: 42, ..AugmentConfig::default() };
    println!("clean   rms {:.4} peak {:.4}", rms(&clip.samples), clip.peak());
    for view in 0..4 {
        let a = augment(&clip, &cfg, &mut cfg.rng_for(0, view));
        let again = augment(&clip, &cfg, &mut cfg.rng_for(0, view));
        assert_eq!(a, again);
        println!("view {view}  rms {:.4} peak {:.4}", rms(&a.samples), a.peak());
    }
    let off = AugmentConfig { p: 0.0, ..cfg.clone() };
    assert_eq!(augment(&clip, &off, &mut off.rng_for(0, 0)), clip);
    println!("p = 0 leaves the clip unchanged");
    Ok(())
}
