//! End-to-end commands: LOSO evaluation, single training runs, inference,
//! quantization and report rendering. Each writes plain files under a run
//! directory so results can be diffed between runs.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::augment::{augment, AugmentConfig};
use crate::config::RunConfig;
use crate::corpus::{
    load_manifest_with_sessions, materialize_fold, plan_loso_folds, CorpusRole, FoldPlan, Manifest, UtteranceRecord,
};
use crate::dsp::{preprocess, read_wav};
use crate::embed::{Embedder, Embedding};
use crate::error::{Error, Result};
use crate::head::train::evaluate;
use crate::head::{read_head, train_head, write_head, EmbeddedSet, HeadMeta, TrainOutcome};
use crate::metrics::{class_names, compute_metrics, fold_summary, ConfusionMatrix, FoldSummary, MetricsReport};
use crate::pipeline::{analyze_voice_note, Classifier, NoteReport};
use crate::quant::{quantize_head, read_quantized, size_report, write_quantized, SizeReport, QUANT_MAGIC};

pub const SUMMARY_FILE: &str = "summary.jsonl";

/// Clean and augmented embeddings for every manifest record, by index.
#[derive(Debug, Clone)]
pub struct EmbeddingCache {
    pub clean: Vec<Embedding>,
    /// Augmented variants per record; empty when augmentation is off.
    pub views: Vec<Vec<Embedding>>,
}

/// Embeds every record once: the preprocessed clip, plus `views` augmented
/// copies when augmentation is enabled.
pub fn embed_corpus(manifest: &Manifest, embedder: &Embedder, aug: &AugmentConfig) -> Result<EmbeddingCache> {
    let rows: Vec<(Embedding, Vec<Embedding>)> = manifest
        .records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            embed_record(r, i, embedder, aug).map_err(|e| Error::Batch {
                index: i,
                source: Box::new(Error::InvalidInput(format!("{}: {e}", r.id))),
            })
        })
        .collect::<Result<_>>()?;
    let (clean, views) = rows.into_iter().unzip();
    Ok(EmbeddingCache { clean, views })
}

fn embed_record(r: &UtteranceRecord, index: usize, embedder: &Embedder, aug: &AugmentConfig) -> Result<(Embedding, Vec<Embedding>)> {
    let clip = preprocess(&read_wav(&r.audio_path)?)?;
    let clean = embedder.embed(&clip)?;
    let mut views = Vec::new();
    if aug.enabled {
        for v in 0..aug.views {
            let mut rng = aug.rng_for(index, v);
            views.push(embedder.embed(&augment(&clip, aug, &mut rng))?);
        }
    }
    Ok((clean, views))
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitIds {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub plan: FoldPlan,
    pub report: MetricsReport,
    pub outcome: TrainOutcome,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct LosoOutcome {
    pub run_dir: PathBuf,
    pub folds: Vec<FoldResult>,
    pub summary: FoldSummary,
    pub cache: EmbeddingCache,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn index_of(manifest: &Manifest) -> HashMap<&str, usize> {
    manifest
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.as_str(), i))
        .collect()
}

fn training_set(indices: &[usize], manifest: &Manifest, cache: &EmbeddingCache) -> EmbeddedSet {
    let mut set = EmbeddedSet::new();
    for &i in indices {
        let variants = if cache.views[i].is_empty() {
            vec![cache.clean[i].clone()]
        } else {
            cache.views[i].clone()
        };
        set.push_variants(manifest.records[i].label, variants);
    }
    set
}

fn clean_set(indices: &[usize], manifest: &Manifest, cache: &EmbeddingCache) -> EmbeddedSet {
    EmbeddedSet::from_pairs(indices.iter().map(|&i| (manifest.records[i].label, cache.clean[i].clone())))
}

/// Leave-one-session-out evaluation of a manifest with a given embedder.
/// Fold outputs are written as each fold finishes; the summary is written
/// only when every fold succeeded.
pub fn run_eval_loso_with(cfg: &RunConfig, manifest: &Manifest, embedder: &Embedder) -> Result<LosoOutcome> {
    let run_dir = cfg.run_dir();
    fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    write(&run_dir.join("config.toml"), cfg.to_toml())?;

    let aug = cfg.augment_config();
    let train_cfg = cfg.train_config();
    log::info!("embedding {} utterances", manifest.len());
    let cache = embed_corpus(manifest, embedder, &aug)?;
    let ids = index_of(manifest);
    let meta = HeadMeta::for_embedder(embedder.spec());

    let mut plans = plan_loso_folds(manifest)?;
    for p in &mut plans {
        p.include_train_only = cfg.corpus.include_train_only;
    }

    let results: Vec<Result<FoldResult>> = plans
        .par_iter()
        .map(|plan| {
            let k = plan.fold_index as usize;
            run_fold(plan, manifest, &ids, &cache, &train_cfg, &meta, &run_dir).map_err(|e| Error::Fold {
                fold: k,
                source: Box::new(e),
            })
        })
        .collect();

    let mut folds = Vec::new();
    for r in results {
        folds.push(r?);
    }
    let reports: Vec<MetricsReport> = folds.iter().map(|f| f.report.clone()).collect();
    let summary = fold_summary(&reports)?;
    write(&run_dir.join(SUMMARY_FILE), summary.to_json_lines())?;
    Ok(LosoOutcome {
        run_dir,
        folds,
        summary,
        cache,
    })
}

fn run_fold(
    plan: &FoldPlan,
    manifest: &Manifest,
    ids: &HashMap<&str, usize>,
    cache: &EmbeddingCache,
    train_cfg: &crate::head::TrainConfig,
    meta: &HeadMeta,
    run_dir: &Path,
) -> Result<FoldResult> {
    let k = plan.fold_index;
    let split = materialize_fold(manifest, plan)?;
    let idx = |rs: &[&UtteranceRecord]| rs.iter().map(|r| ids[r.id.as_str()]).collect::<Vec<_>>();
    let (train, val, test) = (idx(&split.train), idx(&split.val), idx(&split.test));
    let split_ids = SplitIds {
        train: split.train.iter().map(|r| r.id.clone()).collect(),
        val: split.val.iter().map(|r| r.id.clone()).collect(),
        test: split.test.iter().map(|r| r.id.clone()).collect(),
    };
    write(
        &run_dir.join(format!("fold-{k}.split.json")),
        serde_json::to_string(&split_ids).expect("ids serialize") + "\n",
    )?;

    let outcome = train_head(
        &training_set(&train, manifest, cache),
        &clean_set(&val, manifest, cache),
        train_cfg,
    )?;
    let cm = evaluate(&outcome.head, &clean_set(&test, manifest, cache))?;
    let report = compute_metrics(&cm)?;
    log::info!("fold {k}: test UA {:.4} WA {:.4} (best epoch {})", report.ua, report.wa, outcome.best_epoch);

    write(&run_dir.join(format!("fold-{k}.metrics.jsonl")), report.to_json_line())?;
    write(&run_dir.join(format!("fold-{k}.confusion.csv")), cm.to_csv())?;
    let history: String = outcome
        .history
        .iter()
        .map(|h| serde_json::to_string(h).expect("history serializes") + "\n")
        .collect();
    write(&run_dir.join(format!("fold-{k}.history.jsonl")), history)?;
    write_head(&run_dir.join(format!("fold-{k}.head.bin")), &outcome.head, meta)?;

    Ok(FoldResult {
        plan: plan.clone(),
        report,
        outcome,
        train,
        val,
        test,
    })
}

pub fn load_run_manifest(cfg: &RunConfig) -> Result<Manifest> {
    load_manifest_with_sessions(&cfg.corpus.manifest, cfg.corpus.n_sessions)
}

pub fn run_eval_loso(cfg: &RunConfig) -> Result<LosoOutcome> {
    cfg.validate(true)?;
    let manifest = load_run_manifest(cfg)?;
    let embedder = Embedder::from_spec(&cfg.embed)?;
    run_eval_loso_with(cfg, &manifest, &embedder)
}

/// Trains one head on every primary session except `val_session` (plus
/// train-only records when enabled), validating on `val_session`.
pub fn run_train(cfg: &RunConfig, val_session: u32, out: &Path) -> Result<TrainOutcome> {
    cfg.validate(true)?;
    let manifest = load_run_manifest(cfg)?;
    if !(1..=manifest.n_sessions).contains(&val_session) {
        return Err(Error::InvalidInput(format!(
            "validation session {val_session} outside 1..={}",
            manifest.n_sessions
        )));
    }
    let embedder = Embedder::from_spec(&cfg.embed)?;
    let cache = embed_corpus(&manifest, &embedder, &cfg.augment_config())?;
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, r) in manifest.records.iter().enumerate() {
        match r.corpus_role {
            CorpusRole::TrainOnly if cfg.corpus.include_train_only => train.push(i),
            CorpusRole::TrainOnly => {}
            CorpusRole::PrimaryEval if r.session_id == val_session => val.push(i),
            CorpusRole::PrimaryEval => train.push(i),
        }
    }
    let outcome = train_head(
        &training_set(&train, &manifest, &cache),
        &clean_set(&val, &manifest, &cache),
        &cfg.train_config(),
    )?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_head(out, &outcome.head, &HeadMeta::for_embedder(embedder.spec()))?;
    Ok(outcome)
}

/// Loads a float or quantized head (by file magic) with its embedder.
pub fn load_classifier(head_path: &Path, fallback: &RunConfig) -> Result<(Classifier, Embedder)> {
    let bytes = fs::read(head_path).map_err(|e| Error::io(head_path, e))?;
    let (classifier, meta) = if bytes.starts_with(QUANT_MAGIC) {
        let (q, meta) = read_quantized(head_path)?;
        (Classifier::quantized(q), meta)
    } else {
        let (h, meta) = read_head(head_path)?;
        (Classifier::Float(h), meta)
    };
    let spec = match meta {
        Some(m) => {
            if m.embedder_digest != m.embedder.digest() {
                return Err(Error::Format(format!(
                    "{}: embedder digest does not match the recorded spec",
                    head_path.display()
                )));
            }
            m.embedder
        }
        None => {
            log::warn!("{} has no metadata; using the configured embedder", head_path.display());
            fallback.embed.clone()
        }
    };
    Ok((classifier, Embedder::from_spec(&spec)?))
}

/// Runs the voice-note pipeline and writes `<out>.json` and `<out>.windows.csv`.
pub fn run_infer(audio: &Path, head_path: &Path, cfg: &RunConfig, out: Option<&Path>) -> Result<NoteReport> {
    let (classifier, embedder) = load_classifier(head_path, cfg)?;
    let report = analyze_voice_note(audio, &cfg.vad, &embedder, &classifier)?;
    if let Some(out) = out {
        write(&out.with_extension("json"), report.to_text())?;
        write(&out.with_extension("windows.csv"), report.windows_csv())?;
    }
    Ok(report)
}

/// Quantizes a float head file and writes the result with copied metadata.
pub fn quantize_file(head_path: &Path, out: &Path, encoder: Option<&Path>) -> Result<SizeReport> {
    let (head, meta) = read_head(head_path)?;
    let q = quantize_head(&head)?;
    let meta = meta.ok_or_else(|| {
        Error::Format(format!("{} has no metadata sidecar", head_path.display()))
    })?;
    write_quantized(out, &q, &meta)?;
    size_report(&head, &q, encoder)
}

#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub csv: PathBuf,
    pub svg: PathBuf,
    pub matrix: ConfusionMatrix,
}

fn fold_confusion_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<(u32, PathBuf)> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            let k = name.strip_prefix("fold-")?.strip_suffix(".confusion.csv")?.parse().ok()?;
            Some((k, e.path()))
        })
        .collect();
    files.sort();
    Ok(files.into_iter().map(|(_, p)| p).collect())
}

/// Pools the per-fold confusion matrices in `dir` and writes
/// `confusion.csv` and a row-normalized heatmap `confusion.svg` to `out`.
pub fn render_report(dir: &Path, out: &Path) -> Result<ReportFiles> {
    let files = if dir.is_dir() { fold_confusion_files(dir)? } else { Vec::new() };
    if files.is_empty() {
        let expected: Vec<String> = (1..=crate::corpus::DEFAULT_SESSIONS)
            .map(|k| format!("fold-{k}.confusion.csv"))
            .collect();
        return Err(Error::InvalidInput(format!(
            "no fold confusion matrices in {}; expected files named {}",
            dir.display(),
            expected.join(", ")
        )));
    }
    let mut pooled: Option<ConfusionMatrix> = None;
    for f in &files {
        let text = fs::read_to_string(f).map_err(|e| Error::io(f, e))?;
        let cm = ConfusionMatrix::from_csv(&text)?;
        pooled = Some(match pooled {
            Some(p) => p.merge(&cm)?,
            None => cm,
        });
    }
    let matrix = pooled.expect("at least one file");
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let csv = out.join("confusion.csv");
    let svg = out.join("confusion.svg");
    write(&csv, matrix.to_csv())?;
    write(&svg, heatmap_svg(&matrix))?;
    Ok(ReportFiles { csv, svg, matrix })
}

/// Row-normalized percentages; each cell shows the percentage and count.
pub fn heatmap_svg(cm: &ConfusionMatrix) -> String {
    let k = cm.k();
    let names = class_names(k);
    let (cell, left, top) = (90, 110, 60);
    let width = left + cell * k + 20;
    let height = top + cell * k + 40;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="13">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle">predicted</text>"#,
        left + cell * k / 2
    );
    for (j, n) in names.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{n}</text>"#,
            left + j * cell + cell / 2,
            top - 10
        );
    }
    for (i, n) in names.iter().enumerate() {
        let row = cm.row_sum(i);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{n}</text>"#,
            left - 8,
            top + i * cell + cell / 2 + 5
        );
        for j in 0..k {
            let count = cm.counts[i][j];
            let pct = if row == 0 { 0.0 } else { 100.0 * count as f64 / row as f64 };
            let shade = (255.0 - 2.2 * pct).round().clamp(35.0, 255.0) as u8;
            let ink = if pct > 55.0 { "white" } else { "black" };
            let (x, y) = (left + j * cell, top + i * cell);
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" stroke="gray"/>"#
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}" data-count="{count}">{pct:.1}%</text>"#,
                x + cell / 2,
                y + cell / 2
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}" font-size="10">({count})</text>"#,
                x + cell / 2,
                y + cell / 2 + 16
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">true</text>"#,
        left / 2,
        top + cell * k + 25
    );
    s.push_str("</svg>\n");
    s
}

/// Reads `fold-*.metrics.jsonl` from a run directory in fold order.
pub fn read_fold_reports(dir: &Path) -> Result<Vec<MetricsReport>> {
    let mut out = Vec::new();
    for f in fold_confusion_files(dir)? {
        let name = f.file_name().unwrap_or_default().to_string_lossy().replace(".confusion.csv", ".metrics.jsonl");
        let path = dir.join(name);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        out.push(MetricsReport::from_json_line(&text)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(n: u64) -> ConfusionMatrix {
        let mut cm = ConfusionMatrix::zeros(4);
        for c in 0..4 {
            cm.counts[c][c] = n;
        }
        cm
    }

    #[test]
    fn diagonal_heatmap_is_full() {
        let svg = heatmap_svg(&diag(7));
        assert_eq!(svg.matches("100.0%").count(), 4);
        assert_eq!(svg.matches(">0.0%").count(), 12);
    }

    #[test]
    fn report_cells_match_csv() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = diag(3);
        a.counts[0][1] = 2;
        fs::write(dir.path().join("fold-1.confusion.csv"), a.to_csv()).unwrap();
        fs::write(dir.path().join("fold-2.confusion.csv"), diag(1).to_csv()).unwrap();
        let r = render_report(dir.path(), dir.path()).unwrap();
        let csv = ConfusionMatrix::from_csv(&fs::read_to_string(&r.csv).unwrap()).unwrap();
        assert_eq!(csv, r.matrix);
        assert_eq!(csv.counts[0], vec![4, 2, 0, 0]);
        let svg = fs::read_to_string(&r.svg).unwrap();
        for row in &csv.counts {
            for c in row {
                assert!(svg.contains(&format!("data-count=\"{c}\"")));
            }
        }
    }

    #[test]
    fn empty_report_dir_lists_expected_files() {
        let dir = tempfile::tempdir().unwrap();
        let err = render_report(dir.path(), dir.path()).unwrap_err().to_string();
        assert!(err.contains("fold-1.confusion.csv"), "{err}");
        assert!(err.contains("fold-5.confusion.csv"), "{err}");
        assert!(render_report(&dir.path().join("missing"), dir.path()).is_err());
    }
}
