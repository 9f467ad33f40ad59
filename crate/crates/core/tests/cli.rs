use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ser_core::config::RunConfig;
use ser_core::dsp::{write_wav, AudioClip, TARGET_RATE};
use ser_core::synth::{generate_corpus, voice_note, SynthConfig};
use ser_core::EmotionLabel;

fn ser(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ser"))
        .current_dir(dir)
        .env_remove("SER_CONFIG")
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> String {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        o.status.code(),
        stdout(&o),
        String::from_utf8_lossy(&o.stderr)
    );
    stdout(&o)
}

fn small_project(dir: &Path) -> PathBuf {
    let synth = SynthConfig {
        per_class_per_session: 6,
        train_only_per_class: 2,
        ..SynthConfig::default()
    };
    generate_corpus(&dir.join("corpus"), &synth).unwrap();
    let mut cfg = RunConfig::default();
    cfg.corpus.manifest = "corpus/manifest.csv".into();
    cfg.train.epochs = 6;
    cfg.augment.views = 1;
    let path = dir.join("run.toml");
    fs::write(&path, cfg.to_toml()).unwrap();
    path
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ser(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(ser(dir.path(), &["infer"]).status.code(), Some(2));
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[train]\nepochz = 3\n").unwrap();
    let o = ser(dir.path(), &["--config", "bad.toml", "plan-folds"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epochz"));
    assert_eq!(ser(dir.path(), &["preprocess", "missing.wav", "out.wav"]).status.code(), Some(3));
}

#[test]
fn preprocess_writes_eight_seconds() {
    let dir = tempfile::tempdir().unwrap();
    let clip = AudioClip::new(vec![0.25; 3 * 22050], 22050).unwrap();
    write_wav(&dir.path().join("in.wav"), &clip).unwrap();
    let out = ok(ser(dir.path(), &["preprocess", "in.wav", "out.wav"]));
    assert!(out.contains("128000 samples"), "{out}");
    let back = ser_core::dsp::read_wav(&dir.path().join("out.wav")).unwrap();
    assert_eq!((back.len(), back.sample_rate), (128_000, TARGET_RATE));
}

#[test]
fn end_to_end_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_project(dir);
    let base = ["--config", "run.toml"];
    let with = |extra: &[&str]| -> Vec<String> {
        base.iter().chain(extra).map(|s| s.to_string()).collect()
    };
    let run = |extra: &[&str]| {
        let args = with(extra);
        ser(dir, &args.iter().map(String::as_str).collect::<Vec<_>>())
    };

    let plans = ok(run(&["plan-folds"]));
    assert_eq!(plans.lines().count(), 5);
    assert!(plans.lines().next().unwrap().contains("\"test_session\":1"), "{plans}");

    let loso = ok(run(&["eval-loso"]));
    assert_eq!(loso.lines().filter(|l| l.starts_with("fold=")).count(), 5);
    let run_dir = PathBuf::from(loso.lines().last().unwrap().strip_prefix("run_dir=").unwrap());
    let run_dir = if run_dir.is_absolute() { run_dir } else { dir.join(run_dir) };
    assert!(run_dir.join("summary.jsonl").is_file());
    for k in 1..=5 {
        assert!(run_dir.join(format!("fold-{k}.confusion.csv")).is_file());
    }

    let report = ok(run(&["report", run_dir.to_str().unwrap()]));
    assert!(report.contains("confusion.svg"));
    assert!(fs::read_to_string(run_dir.join("confusion.svg")).unwrap().starts_with("<svg"));

    let head = run_dir.join("fold-1.head.bin");
    let quant = dir.join("head.q8");
    let sizes = ok(run(&["quantize", head.to_str().unwrap(), "--out", "head.q8"]));
    let sizes: serde_json::Value = serde_json::from_str(sizes.trim()).unwrap();
    assert!(sizes["quant_bytes"].as_f64().unwrap() <= 0.30 * sizes["float_bytes"].as_f64().unwrap());
    assert!(quant.is_file());

    write_wav(&dir.join("note.wav"), &voice_note(EmotionLabel::Sadness, 10.0, 20.0, 3)).unwrap();
    let line = ok(run(&["infer", "note.wav", "--head", head.to_str().unwrap(), "--out", "note"]));
    assert!(line.starts_with("label=sadness p=("), "{line}");
    assert!(dir.join("note.json").is_file());

    let agg = ok(run(&["aggregate", "note.windows.csv"]));
    assert_eq!(agg.trim(), line.trim());

    let q_line = ok(run(&["infer", "note.wav", "--head", "head.q8", "--quantized"]));
    assert!(q_line.starts_with("label=sadness"), "{q_line}");
    let refused = run(&["infer", "note.wav", "--head", head.to_str().unwrap(), "--quantized"]);
    assert_eq!(refused.status.code(), Some(3));

    write_wav(&dir.join("silence.wav"), &AudioClip::new(vec![0.0; 160_000], TARGET_RATE).unwrap()).unwrap();
    let silent = run(&["infer", "silence.wav", "--head", "head.q8"]);
    assert_eq!(silent.status.code(), Some(4));

    let out = ok(run(&["train", "--val-session", "2", "--out", "single/head.bin"]));
    assert!(out.contains("val UA"), "{out}");
    assert!(dir.join("single/head.bin.meta").is_file());
}
