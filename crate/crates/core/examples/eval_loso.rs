//! Generates a synthetic five-session corpus and runs leave-one-session-out
//! evaluation with the mel-statistics embedder.
//!
//! cargo run --example eval_loso [-- <work dir>]

use std::path::PathBuf;

use ser_core::config::RunConfig;
use ser_core::runner::run_eval_loso_with;
use ser_core::synth::{generate_corpus, SynthConfig};
use ser_core::Embedder;

fn main() -> ser_core::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let work = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("ser-eval-loso"));

    let manifest = generate_corpus(&work.join("corpus"), &SynthConfig::default())?;
    let mut cfg = RunConfig::default();
    cfg.seed = 7;
    cfg.output.dir = work.join("runs");

    let out = run_eval_loso_with(&cfg, &manifest, &Embedder::mel_stub())?;
    for f in &out.folds {
        println!(
            "fold {}: test session {} UA {:.3} WA {:.3} (best epoch {})",
            f.plan.fold_index, f.plan.test_session, f.report.ua, f.report.wa, f.outcome.best_epoch
        );
    }
    let ua = out.summary.get("ua").expect("ua summary");
    println!("mean UA {:.4} ± {:.4}", ua.mean, ua.std.unwrap_or(0.0));
    println!("results in {}", out.run_dir.display());
    Ok(())
}
