//! Quantizes a randomly initialized head to 8 bits, writes both files and
//! compares sizes and predictions.
//!
//! cargo run --example quantize

use rand::{Rng, SeedableRng};

use ser_core::head::{encode_head, predict, HeadMeta, HeadParams};
use ser_core::quant::{dequantize, quantize_head, quantized_predict, size_report, write_quantized};
use ser_core::{Embedder, Embedding};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let head = HeadParams::init(128, 4, 32, 5);
    let q = quantize_head(&head)?;

    for (t, (name, f)) in q.tensors.iter().zip(head.tensors()) {
        let err = dequantize(t).iter().zip(f).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!("{name:<13} {:4} values: scale {:.3e} zero point {:4} max error {:.3e}", f.len(), t.scale, t.zero_point, err);
    }

    let mut agree = 0;
    for _ in 0..1000 {
        let e = Embedding((0..128).map(|_| rng.random_range(-30.0..5.0)).collect());
        agree += (predict(&head, &e)?.argmax() == quantized_predict(&q, &e)?.argmax()) as usize;
    }
    println!("argmax agreement {agree}/1000");

    let dir = std::env::temp_dir().join("ser-quantize-example");
    std::fs::create_dir_all(&dir)?;
    write_quantized(&dir.join("head.q8"), &q, &HeadMeta::for_embedder(Embedder::mel_stub().spec()))?;
    let r = size_report(&head, &q, None)?;
    println!(
        "float {} bytes, quantized {} bytes ({:.1}x smaller); float encoding {} bytes",
        r.float_bytes,
        r.quant_bytes,
        r.ratio,
        encode_head(&head).len()
    );
    Ok(())
}
