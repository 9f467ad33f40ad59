//! Runs the fixed preprocessing chain on a 44.1 kHz clip with silent margins
//! and prints what each stage did.
//!
//! cargo run --example preprocess [-- in.wav]

use ser_core::dsp::{
    fix_duration, peak_normalize, pre_emphasis, preprocess, read_wav, resample, trim_silence, AudioClip, TARGET_RATE,
};

fn describe(stage: &str, c: &AudioClip) {
    println!("{stage:<14} {:>7} samples @ {} Hz  {:5.2}s  peak {:.4}", c.len(), c.sample_rate, c.duration_s(), c.peak());
}

fn demo_clip() -> AudioClip {
    let sr = 44_100;
    let mut s = vec![0.0; sr / 2];
    s.extend((0..sr * 2).map(|i| 0.3 * (2.0 * std::f64::consts::PI * 330.0 * i as f64 / sr as f64).sin()));
    s.extend(vec![0.0; sr]);
    AudioClip::new(s, sr as u32).expect("finite samples")
}

fn main() -> ser_core::Result<()> {
    let input = match std::env::args().nth(1) {
        Some(p) => read_wav(p.as_ref())?,
        None => demo_clip(),
    };
    describe("input", &input);
    let c = resample(&input, TARGET_RATE)?;
    describe("resample", &c);
    let c = trim_silence(&c);
    describe("trim", &c);
    let c = pre_emphasis(&c);
    describe("pre-emphasis", &c);
    let c = peak_normalize(&c);
    describe("normalize", &c);
    let c = fix_duration(&c);
    describe("fix duration", &c);
    assert_eq!(c, preprocess(&input)?);
    Ok(())
}
