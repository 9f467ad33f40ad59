//! 8-bit post-training quantization of head tensors.
//!
//! Each tensor gets one asymmetric affine map `w ≈ (q - zero_point) * scale`
//! with `q` in `i8`. Inference dequantizes and runs the float head.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::embed::Embedding;
use crate::error::{Error, Result};
use crate::head::{
    encode_head, predict, read_meta, read_shape_header, ByteReader, HeadMeta, HeadParams,
    ProbabilityVector, HEAD_VERSION,
};

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub values: Vec<i8>,
    pub scale: f32,
    pub zero_point: i8,
}

/// Largest positive f32 that is not above `x`.
fn f32_at_most(x: f64) -> f32 {
    let s = x as f32;
    let s = if (s as f64) > x { s.next_down() } else { s };
    s.max(f32::MIN_POSITIVE)
}

/// Asymmetric affine quantization over the tensor range widened to include
/// zero: `scale = (max - min) / 255`, `zero_point = -128 - round(min/scale)`,
/// `q = clamp(round(w/scale) + zero_point, -128, 127)`. The scale is rounded
/// down to f32 so the range ends always land on codes -128 and 127, which
/// makes re-quantizing dequantized values reproduce the same codes.
///
/// A constant tensor `c` is stored as `scale = |c|`, `zero_point = 0`,
/// `q = sign(c)`, which reproduces it exactly (scale 1 when `c = 0`).
pub fn quantize_tensor(w: &[f64]) -> Result<QuantizedTensor> {
    if w.is_empty() {
        return Err(Error::InvalidInput("cannot quantize an empty tensor".into()));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("tensor to quantize".into()));
    }
    let min = w.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    if min == max {
        let c = min;
        let scale = if c == 0.0 { 1.0 } else { c.abs() as f32 };
        if c != 0.0 && scale as f64 == c.abs() {
            let q = if c > 0.0 { 1 } else { -1 };
            return Ok(QuantizedTensor {
                values: vec![q; w.len()],
                scale,
                zero_point: 0,
            });
        }
        if c == 0.0 {
            return Ok(QuantizedTensor {
                values: vec![0; w.len()],
                scale,
                zero_point: 0,
            });
        }
        // |c| is not an f32; fall through to the general grid.
    }

    let lo = min.min(0.0);
    let hi = max.max(0.0);
    let scale = f32_at_most((hi - lo) / 255.0);
    let s = scale as f64;
    let zero_point = (-128.0 - (lo / s).round()).clamp(-128.0, 127.0);
    let values = w
        .iter()
        .map(|v| ((v / s).round() + zero_point).clamp(-128.0, 127.0) as i8)
        .collect();
    Ok(QuantizedTensor {
        values,
        scale,
        zero_point: zero_point as i8,
    })
}

pub fn dequantize(q: &QuantizedTensor) -> Vec<f64> {
    let s = q.scale as f64;
    let zp = q.zero_point as f64;
    q.values.iter().map(|&v| (v as f64 - zp) * s).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedHead {
    pub classes: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Same order as [`HeadParams::tensors`].
    pub tensors: Vec<QuantizedTensor>,
}

pub fn quantize_head(head: &HeadParams) -> Result<QuantizedHead> {
    Ok(QuantizedHead {
        classes: head.classes(),
        input_dim: head.input_dim(),
        hidden_dim: head.hidden_dim(),
        tensors: head
            .tensors()
            .into_iter()
            .map(|(_, t)| quantize_tensor(t))
            .collect::<Result<_>>()?,
    })
}

pub fn dequantize_head(q: &QuantizedHead) -> HeadParams {
    let mut head = HeadParams::zeros(q.input_dim, q.classes, q.hidden_dim);
    for ((_, dst), src) in head.tensors_mut().into_iter().zip(&q.tensors) {
        dst.copy_from_slice(&dequantize(src));
    }
    head
}

/// Fake-quantized inference: dequantize, then the float forward pass.
pub fn quantized_predict(q: &QuantizedHead, e: &Embedding) -> Result<ProbabilityVector> {
    predict(&dequantize_head(q), e)
}

pub const QUANT_MAGIC: &[u8; 4] = b"SERQ";

/// `SERQ`, version (u16), K, D, H (u32 each), then per tensor: scale (f32),
/// zero point (i8), values (i8, row-major).
pub fn encode_quantized(q: &QuantizedHead) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(QUANT_MAGIC);
    out.extend_from_slice(&HEAD_VERSION.to_le_bytes());
    for v in [q.classes, q.input_dim, q.hidden_dim] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for t in &q.tensors {
        out.extend_from_slice(&t.scale.to_le_bytes());
        out.push(t.zero_point as u8);
        out.extend(t.values.iter().map(|&v| v as u8));
    }
    out
}

pub fn decode_quantized(bytes: &[u8]) -> Result<QuantizedHead> {
    let mut r = ByteReader::new(bytes);
    let (k, d, h) = read_shape_header(&mut r, QUANT_MAGIC)?;
    let shapes = HeadParams::zeros(d, k, h);
    let mut tensors = Vec::new();
    for (_, t) in shapes.tensors() {
        let scale = r.f32()?;
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Format(format!("invalid scale {scale}")));
        }
        let zero_point = r.take(1)?[0] as i8;
        let values = r.take(t.len())?.iter().map(|&b| b as i8).collect();
        tensors.push(QuantizedTensor {
            values,
            scale,
            zero_point,
        });
    }
    r.finish()?;
    Ok(QuantizedHead {
        classes: k,
        input_dim: d,
        hidden_dim: h,
        tensors,
    })
}

pub fn write_quantized(path: &Path, q: &QuantizedHead, meta: &HeadMeta) -> Result<()> {
    fs::write(path, encode_quantized(q)).map_err(|e| Error::io(path, e))?;
    let mp = crate::head::meta_path(path);
    fs::write(&mp, meta.to_text("SERQ")).map_err(|e| Error::io(&mp, e))
}

pub fn read_quantized(path: &Path) -> Result<(QuantizedHead, Option<HeadMeta>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((decode_quantized(&bytes)?, read_meta(path)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeReport {
    /// Serialized float head, header included.
    pub float_bytes: usize,
    /// Serialized quantized head, header included.
    pub quant_bytes: usize,
    /// Tensor payload only (4 bytes per weight).
    pub float_payload: usize,
    /// Tensor payload only (1 byte per weight).
    pub quant_payload: usize,
    pub ratio: f64,
    /// Size of the encoder model file when one is configured.
    pub encoder_bytes: Option<u64>,
}

pub fn size_report(head: &HeadParams, q: &QuantizedHead, encoder: Option<&Path>) -> Result<SizeReport> {
    let float_bytes = encode_head(head).len();
    let quant_bytes = encode_quantized(q).len();
    let weights: usize = head.tensors().iter().map(|(_, t)| t.len()).sum();
    let encoder_bytes = match encoder {
        Some(p) => Some(fs::metadata(p).map_err(|e| Error::io(p, e))?.len()),
        None => None,
    };
    Ok(SizeReport {
        float_bytes,
        quant_bytes,
        float_payload: 4 * weights,
        quant_payload: weights,
        ratio: float_bytes as f64 / quant_bytes as f64,
        encoder_bytes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn max_err(w: &[f64], q: &QuantizedTensor) -> f64 {
        dequantize(q)
            .iter()
            .zip(w)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn symmetric_unit_range() {
        let w = [-1.0, 0.0, 1.0];
        let q = quantize_tensor(&w).unwrap();
        assert!(((q.scale as f64) - 2.0 / 255.0).abs() < 1e-9);
        assert!(max_err(&w, &q) <= 1.0 / 255.0 + 1e-7);
    }

    #[test]
    fn constant_and_zero_tensors_are_exact() {
        for w in [vec![0.5, 0.5], vec![0.0; 6], vec![-3.25; 3]] {
            let q = quantize_tensor(&w).unwrap();
            assert_eq!(dequantize(&q), w);
        }
    }

    #[test]
    fn round_trip_within_half_step() {
        let w = [-0.5, 0.25, 1.5];
        let q = quantize_tensor(&w).unwrap();
        // Widened range [-0.5, 1.5] gives scale 2/255.
        assert!(max_err(&w, &q) <= (2.0 / 255.0) / 2.0 + 1e-7);
    }

    #[test]
    fn requantizing_is_a_fixed_point() {
        let w = [-1.0, 0.0, 1.0, 0.3, -0.77];
        let q1 = quantize_tensor(&w).unwrap();
        let q2 = quantize_tensor(&dequantize(&q1)).unwrap();
        assert_eq!(q1, q2);
    }

    #[test]
    fn positive_only_range_stays_accurate() {
        let w = [1.0, 1.5, 2.0];
        let q = quantize_tensor(&w).unwrap();
        assert!(max_err(&w, &q) <= q.scale as f64 / 2.0 + 1e-7);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(quantize_tensor(&[]).is_err());
        assert!(quantize_tensor(&[1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn zero_head_quantizes_to_uniform() {
        let q = quantize_head(&HeadParams::zeros(16, 4, 0)).unwrap();
        let p = quantized_predict(&q, &Embedding(vec![0.7; 16])).unwrap();
        assert!(p.0.iter().all(|v| (v - 0.25).abs() < 1e-12));
    }

    fn random_head(d: usize, h: usize, seed: u64) -> HeadParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut head = HeadParams::zeros(d, 4, h);
        for (_, t) in head.tensors_mut() {
            t.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
        head
    }

    #[test]
    fn file_round_trip_and_sizes() {
        let head = random_head(128, 0, 1);
        let q = quantize_head(&head).unwrap();
        let bytes = encode_quantized(&q);
        assert_eq!(&bytes[..4], b"SERQ");
        assert_eq!(decode_quantized(&bytes).unwrap(), q);

        let r = size_report(&head, &q, None).unwrap();
        assert_eq!(r.float_payload, 2064);
        assert_eq!(r.quant_payload, 516);
        assert_eq!(r.quant_bytes, 18 + 516 + 2 * 5);
        assert!(r.ratio >= 3.5, "{}", r.ratio);
        assert!(r.quant_bytes as f64 <= 0.3 * r.float_bytes as f64);
        assert_eq!(r.encoder_bytes, None);
    }

    #[test]
    fn hidden_head_sizes_and_encoder_file() {
        let dir = tempfile::tempdir().unwrap();
        let enc = dir.path().join("enc.onnx");
        fs::write(&enc, vec![0u8; 1234]).unwrap();
        let head = random_head(64, 32, 2);
        let q = quantize_head(&head).unwrap();
        let r = size_report(&head, &q, Some(&enc)).unwrap();
        assert_eq!(r.encoder_bytes, Some(1234));
        assert_eq!(r.quant_payload, 64 * 32 + 32 + 32 * 4 + 4);
        assert!(r.quant_bytes as f64 <= 0.3 * r.float_bytes as f64);
    }

    #[test]
    fn scaled_weights_keep_argmax() {
        let head = random_head(32, 0, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for c in [0.1, 3.0, 40.0] {
            let mut scaled = head.clone();
            scaled.scale_all(c);
            let qa = quantize_head(&head).unwrap();
            let qb = quantize_head(&scaled).unwrap();
            for _ in 0..200 {
                let e = Embedding((0..32).map(|_| rng.random_range(-1.0..1.0)).collect());
                let la = dequantize_head(&qa).logits(e.as_slice()).unwrap();
                let mut sorted = la.clone();
                sorted.sort_by(f64::total_cmp);
                if sorted[3] - sorted[2] < 1e-6 {
                    continue;
                }
                assert_eq!(
                    quantized_predict(&qa, &e).unwrap().argmax(),
                    quantized_predict(&qb, &e).unwrap().argmax()
                );
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn tensor() -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(-100.0f64..100.0, 1..200)
        }

        proptest! {
            #[test]
            fn error_bounded_by_half_scale(w in tensor()) {
                let q = quantize_tensor(&w).unwrap();
                prop_assert!(max_err(&w, &q) <= q.scale as f64 / 2.0 + 1e-7);
            }

            #[test]
            fn requantize_is_idempotent(w in tensor()) {
                let q1 = quantize_tensor(&w).unwrap();
                let q2 = quantize_tensor(&dequantize(&q1)).unwrap();
                prop_assert_eq!(q1, q2);
            }

            #[test]
            fn near_boundary_values(base in -1.0f64..1.0, k in 0i32..255) {
                // Points sitting on half-steps of the grid spanning [-1, 1].
                let step = 2.0 / 255.0;
                let w = vec![-1.0, 1.0, base, -1.0 + (k as f64 + 0.5) * step];
                let q = quantize_tensor(&w).unwrap();
                prop_assert!(max_err(&w, &q) <= q.scale as f64 / 2.0 + 1e-7);
            }
        }
    }
}
