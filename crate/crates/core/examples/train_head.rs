//! Trains a linear head with focal loss on mel-stub embeddings of a small
//! synthetic corpus, holding out session 5.
//!
//! cargo run --example train_head

use ser_core::dsp::{preprocess, read_wav};
use ser_core::head::{evaluate, train_head, EmbeddedSet, TrainConfig};
use ser_core::metrics::compute_metrics;
use ser_core::synth::{generate_corpus, SynthConfig};
use ser_core::Embedder;

fn main() -> ser_core::Result<()> {
    let dir = std::env::temp_dir().join("ser-train-head");
    let cfg = SynthConfig { per_class_per_session: 10, train_only_per_class: 0, ..SynthConfig::default() };
    let manifest = generate_corpus(&dir, &cfg)?;
    let embedder = Embedder::mel_stub();

    let (mut train, mut test) = (EmbeddedSet::new(), EmbeddedSet::new());
    for r in &manifest.records {
        let e = embedder.embed(&preprocess(&read_wav(&r.audio_path)?)?)?;
        if r.session_id == 5 { test.push(r.label, e) } else { train.push(r.label, e) }
    }

    let tc = TrainConfig { epochs: 15, seed: 1, ..TrainConfig::default() };
    let out = train_head(&train, &test, &tc)?;
    for h in out.history.iter().step_by(3) {
        println!("epoch {:2} loss {:.4} val UA {:.3} lr {:.2e}", h.epoch, h.train_loss, h.val_ua, h.lr);
    }
    let report = compute_metrics(&evaluate(&out.head, &test)?)?;
    println!("class weights {:.3?}", out.class_weights);
    println!("best epoch {} held-out UA {:.3} WA {:.3}", out.best_epoch, report.ua, report.wa);
    Ok(())
}
