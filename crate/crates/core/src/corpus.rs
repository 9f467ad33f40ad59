//! Utterance catalog, leave-one-session-out fold planning and class weighting.
//!
//! The primary corpus is split by recording session. Every fold tests on one
//! session, validates on the next one (cyclically) and trains on the rest.
//! Records from train-only corpora carry session 0 and can only ever land in
//! a training set.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, RowError};

pub const NUM_CLASSES: usize = 4;
pub const DEFAULT_SESSIONS: u32 = 5;

/// The four emotion categories. The discriminant is the class index used in
/// every vector, matrix and file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Anger = 0,
    Happiness = 1,
    Neutral = 2,
    Sadness = 3,
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; NUM_CLASSES] = [
        EmotionLabel::Anger,
        EmotionLabel::Happiness,
        EmotionLabel::Neutral,
        EmotionLabel::Sadness,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EmotionLabel::Anger => "anger",
            EmotionLabel::Happiness => "happiness",
            EmotionLabel::Neutral => "neutral",
            EmotionLabel::Sadness => "sadness",
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EmotionLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "anger" => Ok(EmotionLabel::Anger),
            "happiness" => Ok(EmotionLabel::Happiness),
            "neutral" => Ok(EmotionLabel::Neutral),
            "sadness" => Ok(EmotionLabel::Sadness),
            other => Err(format!(
                "unknown label `{other}` (expected anger|happiness|neutral|sadness)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CorpusRole {
    /// Split by session into train/val/test.
    #[serde(rename = "primary-eval")]
    PrimaryEval,
    /// Only ever used for training.
    #[serde(rename = "train-only")]
    TrainOnly,
}

impl CorpusRole {
    pub fn as_str(self) -> &'static str {
        match self {
            CorpusRole::PrimaryEval => "primary-eval",
            CorpusRole::TrainOnly => "train-only",
        }
    }
}

impl FromStr for CorpusRole {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "primary-eval" => Ok(CorpusRole::PrimaryEval),
            "train-only" => Ok(CorpusRole::TrainOnly),
            other => Err(format!(
                "unknown corpus role `{other}` (expected primary-eval|train-only)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub corpus_role: CorpusRole,
    pub session_id: u32,
    pub speaker_id: String,
    pub label: EmotionLabel,
    pub audio_path: PathBuf,
    pub duration_s: f64,
}

pub const MANIFEST_HEADER: [&str; 7] = [
    "id",
    "corpus_role",
    "session_id",
    "speaker_id",
    "label",
    "audio_path",
    "duration_s",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub records: Vec<UtteranceRecord>,
    pub n_sessions: u32,
}

impl Manifest {
    /// Validates ids, session ranges and roles.
    pub fn new(records: Vec<UtteranceRecord>, n_sessions: u32) -> Result<Self> {
        let mut errors = Vec::new();
        let mut first_row: HashMap<&str, usize> = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            let row = i + 1;
            if let Some(prev) = first_row.insert(r.id.as_str(), row) {
                errors.push(RowError {
                    row,
                    field: "id".into(),
                    message: format!("duplicate id `{}` (rows {prev} and {row})", r.id),
                });
                first_row.insert(r.id.as_str(), prev);
            }
            if let Err(message) = check_session(r, n_sessions) {
                errors.push(RowError {
                    row,
                    field: "session_id".into(),
                    message,
                });
            }
        }
        if errors.is_empty() {
            Ok(Manifest {
                records,
                n_sessions,
            })
        } else {
            Err(Error::Manifest(errors))
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Writes the delimited-text form, header first.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(MANIFEST_HEADER).map_err(|e| csv_err(path, e))?;
        for r in &self.records {
            w.write_record([
                r.id.as_str(),
                r.corpus_role.as_str(),
                &r.session_id.to_string(),
                r.speaker_id.as_str(),
                r.label.as_str(),
                &r.audio_path.to_string_lossy(),
                &r.duration_s.to_string(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}

fn check_session(r: &UtteranceRecord, n_sessions: u32) -> std::result::Result<(), String> {
    match r.corpus_role {
        CorpusRole::PrimaryEval if !(1..=n_sessions).contains(&r.session_id) => Err(format!(
            "primary-eval session {} outside 1..={n_sessions}",
            r.session_id
        )),
        CorpusRole::TrainOnly if r.session_id != 0 => Err(format!(
            "train-only records must use session 0, got {}",
            r.session_id
        )),
        _ => Ok(()),
    }
}

/// Reads a manifest with the default session count.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    load_manifest_with_sessions(path, DEFAULT_SESSIONS)
}

/// Reads either the delimited-text form (header row required) or
/// line-delimited JSON records with the same field names. The JSON form is
/// chosen for `.jsonl`/`.ndjson` files or when the first non-blank character
/// is `{`. Relative audio paths are resolved against the manifest directory.
pub fn load_manifest_with_sessions(path: &Path, n_sessions: u32) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let jsonl = matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl") | Some("ndjson")
    ) || text.trim_start().starts_with('{');
    let rows = if jsonl {
        jsonl_rows(&text)?
    } else {
        csv_rows(&text)?
    };
    let base = path.parent().unwrap_or(Path::new(""));

    let mut errors = Vec::new();
    let mut records = Vec::with_capacity(rows.len());
    for (i, fields) in rows.iter().enumerate() {
        match parse_row(i + 1, fields, base) {
            Ok(r) => records.push(r),
            Err(mut e) => errors.append(&mut e),
        }
    }
    if !errors.is_empty() {
        return Err(Error::Manifest(errors));
    }
    Manifest::new(records, n_sessions)
}

type RawRow = HashMap<String, String>;

fn csv_rows(text: &str) -> Result<Vec<RawRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Format(format!("manifest header: {e}")))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Format(format!("manifest: {e}")))?;
        let row = header
            .iter()
            .zip(rec.iter())
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, v)| (k.clone(), v.to_owned()))
            .collect();
        rows.push(row);
    }
    Ok(rows)
}

fn jsonl_rows(text: &str) -> Result<Vec<RawRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| Error::Format(format!("manifest line {}: {e}", i + 1)))?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Format(format!("manifest line {}: not an object", i + 1)))?;
        let row = obj
            .iter()
            .filter_map(|(k, v)| {
                let s = match v {
                    serde_json::Value::String(s) => s.clone(),
                    serde_json::Value::Number(n) => n.to_string(),
                    serde_json::Value::Null => return None,
                    other => other.to_string(),
                };
                Some((k.clone(), s))
            })
            .collect();
        rows.push(row);
    }
    Ok(rows)
}

fn parse_row(
    row: usize,
    fields: &RawRow,
    base: &Path,
) -> std::result::Result<UtteranceRecord, Vec<RowError>> {
    let mut errors = Vec::new();
    let mut get = |name: &str| -> Option<&str> {
        let v = fields.get(name).map(String::as_str);
        if v.is_none() {
            errors.push(RowError {
                row,
                field: name.into(),
                message: "missing field".into(),
            });
        }
        v
    };
    let id = get("id");
    let role = get("corpus_role");
    let session = get("session_id");
    let speaker = get("speaker_id");
    let label = get("label");
    let audio = get("audio_path");
    let duration = get("duration_s");

    let mut bad = |field: &str, message: String| {
        errors.push(RowError {
            row,
            field: field.into(),
            message,
        })
    };
    let role = role.and_then(|s| s.parse::<CorpusRole>().map_err(|m| bad("corpus_role", m)).ok());
    let session = session.and_then(|s| {
        s.parse::<u32>()
            .map_err(|_| bad("session_id", format!("not a session number: `{s}`")))
            .ok()
    });
    let label = label.and_then(|s| s.parse::<EmotionLabel>().map_err(|m| bad("label", m)).ok());
    let duration = duration.and_then(|s| match s.parse::<f64>() {
        Ok(d) if d.is_finite() && d >= 0.0 => Some(d),
        _ => {
            bad("duration_s", format!("not a nonnegative number: `{s}`"));
            None
        }
    });

    match (id, role, session, speaker, label, audio, duration) {
        (Some(id), Some(corpus_role), Some(session_id), Some(speaker), Some(label), Some(audio), Some(duration_s))
            if errors.is_empty() =>
        {
            let audio = PathBuf::from(audio);
            let audio_path = if audio.is_relative() {
                base.join(audio)
            } else {
                audio
            };
            Ok(UtteranceRecord {
                id: id.to_owned(),
                corpus_role,
                session_id,
                speaker_id: speaker.to_owned(),
                label,
                audio_path,
                duration_s,
            })
        }
        _ => Err(errors),
    }
}

/// Session roles for one leave-one-session-out fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub fold_index: u32,
    pub test_session: u32,
    pub val_session: u32,
    pub train_sessions: BTreeSet<u32>,
    pub include_train_only: bool,
}

/// Fold `k` tests on session `k`, validates on the next session (wrapping
/// from `S` back to 1) and trains on the remaining `S - 2`.
pub fn plan_loso_folds(manifest: &Manifest) -> Result<Vec<FoldPlan>> {
    plan_folds_for(manifest.n_sessions)
}

pub fn plan_folds_for(n_sessions: u32) -> Result<Vec<FoldPlan>> {
    if n_sessions < 3 {
        return Err(Error::InvalidInput(format!(
            "leave-one-session-out needs at least 3 sessions, got {n_sessions}"
        )));
    }
    Ok((1..=n_sessions)
        .map(|k| {
            let val = k % n_sessions + 1;
            FoldPlan {
                fold_index: k,
                test_session: k,
                val_session: val,
                train_sessions: (1..=n_sessions).filter(|&s| s != k && s != val).collect(),
                include_train_only: true,
            }
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct FoldSplit<'a> {
    pub train: Vec<&'a UtteranceRecord>,
    pub val: Vec<&'a UtteranceRecord>,
    pub test: Vec<&'a UtteranceRecord>,
}

pub fn materialize_fold<'a>(manifest: &'a Manifest, plan: &FoldPlan) -> Result<FoldSplit<'a>> {
    let all: BTreeSet<u32> = (1..=manifest.n_sessions).collect();
    let mut covered = plan.train_sessions.clone();
    covered.insert(plan.test_session);
    covered.insert(plan.val_session);
    if plan.test_session == plan.val_session
        || plan.train_sessions.contains(&plan.test_session)
        || plan.train_sessions.contains(&plan.val_session)
        || covered != all
    {
        return Err(Error::InvalidInput(format!(
            "fold {} does not partition sessions 1..={}",
            plan.fold_index, manifest.n_sessions
        )));
    }

    let mut split = FoldSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for r in &manifest.records {
        match r.corpus_role {
            CorpusRole::TrainOnly => {
                if plan.include_train_only {
                    split.train.push(r);
                }
            }
            CorpusRole::PrimaryEval => {
                if r.session_id == plan.test_session {
                    split.test.push(r);
                } else if r.session_id == plan.val_session {
                    split.val.push(r);
                } else if plan.train_sessions.contains(&r.session_id) {
                    split.train.push(r);
                }
            }
        }
    }
    if split.test.is_empty() {
        return Err(Error::InvalidInput(format!(
            "fold {}: test session {} has no records",
            plan.fold_index, plan.test_session
        )));
    }
    Ok(split)
}

/// Ids present in more than one of the three sets. Empty for any split
/// produced by [`materialize_fold`].
pub fn overlapping_ids(split: &FoldSplit<'_>) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut dup = Vec::new();
    for r in split.train.iter().chain(&split.val).chain(&split.test) {
        if !seen.insert(r.id.as_str()) {
            dup.push(r.id.clone());
        }
    }
    dup
}

pub fn class_counts<'a>(records: impl IntoIterator<Item = &'a UtteranceRecord>) -> [usize; NUM_CLASSES] {
    let mut counts = [0usize; NUM_CLASSES];
    for r in records {
        counts[r.label.index()] += 1;
    }
    counts
}

/// Balanced weights `N / (K * N_c)`.
pub fn class_weights_from_counts(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::InvalidInput("class count list is empty".into()));
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::ZeroCountClass(c));
    }
    let total: usize = counts.iter().sum();
    let k = counts.len() as f64;
    Ok(counts
        .iter()
        .map(|&n| total as f64 / (k * n as f64))
        .collect())
}

pub fn class_weights<'a>(records: impl IntoIterator<Item = &'a UtteranceRecord>) -> Result<Vec<f64>> {
    class_weights_from_counts(&class_counts(records))
}
