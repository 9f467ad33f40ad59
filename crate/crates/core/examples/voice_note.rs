//! Trains a head on a small synthetic corpus, then runs the voice-note
//! pipeline (VAD, 8 s windows, averaged aggregation) on a 30 s note.
//!
//! cargo run --example voice_note

use ser_core::config::RunConfig;
use ser_core::pipeline::{analyze_clip, Classifier, VadConfig};
use ser_core::runner::run_eval_loso_with;
use ser_core::synth::{generate_corpus, voice_note, SynthConfig};
use ser_core::{Embedder, EmotionLabel};

fn main() -> ser_core::Result<()> {
    let work = tempfile_dir();
    let synth = SynthConfig {
        per_class_per_session: 12,
        train_only_per_class: 6,
        ..SynthConfig::default()
    };
    let manifest = generate_corpus(&work.join("corpus"), &synth)?;
    let mut cfg = RunConfig::default();
    cfg.output.dir = work.join("runs");
    let embedder = Embedder::mel_stub();
    let loso = run_eval_loso_with(&cfg, &manifest, &embedder)?;
    let head = Classifier::Float(loso.folds[0].outcome.head.clone());

    for label in EmotionLabel::ALL {
        let note = voice_note(label, 10.0, 20.0, 11);
        let report = analyze_clip(&note, &VadConfig::default(), &embedder, &head)?;
        println!("true={label:<9} windows={} {}", report.window_count, report.summary_line());
        for w in &report.windows {
            println!("    {:6.2}s..{:6.2}s  {:?}", w.start_s, w.end_s, w.probs);
        }
    }
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join("ser-voice-note");
    let _ = std::fs::remove_dir_all(&dir);
    dir
}
