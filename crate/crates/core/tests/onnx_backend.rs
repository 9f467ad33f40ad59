#![cfg(feature = "onnx")]

use ser_core::dsp::{AudioClip, CLIP_SAMPLES, TARGET_RATE};
use ser_core::embed::write_reshape_encoder;
use ser_core::{Embedder, EmbedderSpec, Error};

fn spec(path: &std::path::Path, dim: Option<usize>) -> EmbedderSpec {
    EmbedderSpec::EncoderFile {
        model_path: path.to_path_buf(),
        input_name: "audio".into(),
        output_name: "frames".into(),
        dim,
    }
}

fn ramp_clip() -> AudioClip {
    let samples = (0..CLIP_SAMPLES)
        .map(|i| ((i % 97) as f64 / 97.0) - 0.5)
        .collect();
    AudioClip::new(samples, TARGET_RATE).unwrap()
}

#[test]
fn encoder_output_is_mean_pooled_over_frames() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("enc.onnx");
    write_reshape_encoder(&model, 128, 2.0).unwrap();
    let e = Embedder::from_spec(&spec(&model, Some(128))).unwrap();
    assert_eq!(e.dim(), 128);

    let clip = ramp_clip();
    let got = e.embed(&clip).unwrap();
    // Oracle: frame t, column h holds sample t*128 + h.
    let frames = CLIP_SAMPLES / 128;
    for h in 0..128 {
        let expected: f64 = (0..frames)
            .map(|t| 2.0 * (clip.samples[t * 128 + h] as f32) as f64)
            .sum::<f64>()
            / frames as f64;
        assert!((got.0[h] - expected).abs() < 1e-5, "column {h}: {} vs {expected}", got.0[h]);
    }
    assert_eq!(e.embed(&clip).unwrap(), got);
    let batch = e.embed_batch(&[clip.clone(), clip]).unwrap();
    assert_eq!(batch[1], got);
}

#[test]
fn declared_dimension_is_checked() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("enc.onnx");
    write_reshape_encoder(&model, 64, 1.0).unwrap();
    let err = Embedder::from_spec(&spec(&model, Some(128))).unwrap_err();
    assert!(matches!(err, Error::DimensionMismatch { expected: 128, got: 64 }), "{err}");
}

#[test]
fn wrong_tensor_names_and_garbage_files_fail() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("enc.onnx");
    write_reshape_encoder(&model, 128, 1.0).unwrap();
    let bad = EmbedderSpec::EncoderFile {
        model_path: model.clone(),
        input_name: "audio".into(),
        output_name: "nope".into(),
        dim: None,
    };
    assert!(matches!(Embedder::from_spec(&bad), Err(Error::Embed(_))));

    let junk = dir.path().join("junk.onnx");
    std::fs::write(&junk, b"not a model").unwrap();
    assert!(matches!(Embedder::from_spec(&spec(&junk, None)), Err(Error::Embed(_))));
}
