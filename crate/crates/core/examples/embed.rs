//! Embeds two tones with the mel-statistics stub and, with the `onnx`
//! feature, with a tiny generated encoder model.
//!
//! cargo run --example embed

use ser_core::dsp::{fix_duration, AudioClip, TARGET_RATE};
use ser_core::Embedder;

fn tone(hz: f64) -> AudioClip {
    let s = (0..TARGET_RATE as usize * 2)
        .map(|i| (2.0 * std::f64::consts::PI * hz * i as f64 / TARGET_RATE as f64).sin())
        .collect();
    fix_duration(&AudioClip::new(s, TARGET_RATE).expect("finite samples"))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (n(a) * n(b))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (a, b) = (tone(440.0), tone(880.0));
    let mel = Embedder::mel_stub();
    let (ea, eb) = (mel.embed(&a)?, mel.embed(&b)?);
    println!("mel stub: dim {} cosine(440 Hz, 880 Hz) = {:.4}", mel.dim(), cosine(&ea.0, &eb.0));

    #[cfg(feature = "onnx")]
    {
        use ser_core::EmbedderSpec;
        let dir = std::env::temp_dir().join("ser-embed-example");
        std::fs::create_dir_all(&dir)?;
        let model = dir.join("reshape.onnx");
        ser_core::embed::write_reshape_encoder(&model, 256, 1.0)?;
        let enc = Embedder::from_spec(&EmbedderSpec::EncoderFile {
            model_path: model,
            input_name: "audio".into(),
            output_name: "frames".into(),
            dim: Some(256),
        })?;
        let (fa, fb) = (enc.embed(&a)?, enc.embed(&b)?);
        println!("encoder file: dim {} cosine(440 Hz, 880 Hz) = {:.4}", enc.dim(), cosine(&fa.0, &fb.0));
    }
    Ok(())
}
