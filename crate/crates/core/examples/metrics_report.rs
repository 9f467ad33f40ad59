//! Builds per-fold confusion matrices, summarizes them across folds and
//! renders the pooled heatmap.
//!
//! cargo run --example metrics_report

use rand::{Rng, SeedableRng};

use ser_core::metrics::{compute_metrics, fold_summary, ConfusionMatrix};
use ser_core::runner::render_report;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let dir = std::env::temp_dir().join("ser-metrics-example");
    std::fs::create_dir_all(&dir)?;

    let mut reports = Vec::new();
    for fold in 1..=5 {
        let mut cm = ConfusionMatrix::zeros(4);
        for _ in 0..400 {
            let truth = rng.random_range(0..4);
            let pred = if rng.random_bool(0.7) { truth } else { rng.random_range(0..4) };
            cm.add(truth, pred);
        }
        let r = compute_metrics(&cm)?;
        println!("fold {fold}: WA {:.3} UA {:.3} macro F1 {:.3}", r.wa, r.ua, r.macro_f1);
        std::fs::write(dir.join(format!("fold-{fold}.confusion.csv")), cm.to_csv())?;
        reports.push(r);
    }
    print!("{}", fold_summary(&reports)?.to_json_lines());
    let files = render_report(&dir, &dir)?;
    println!("pooled {} predictions; wrote {}", files.matrix.total(), files.svg.display());
    Ok(())
}
