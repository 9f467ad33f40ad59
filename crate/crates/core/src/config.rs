//! Run configuration: one TOML file with a section per module.
//!
//! ```toml
//! seed = 7
//!
//! [corpus]
//! manifest = "data/manifest.csv"
//!
//! [embed]
//! kind = "mel-stat-stub"
//!
//! [train]
//! epochs = 25
//!
//! [output]
//! dir = "runs"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentConfig;
use crate::corpus::DEFAULT_SESSIONS;
use crate::embed::EmbedderSpec;
use crate::error::{Error, Result};
use crate::head::TrainConfig;
use crate::pipeline::VadConfig;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "SER_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub manifest: PathBuf,
    pub n_sessions: u32,
    pub include_train_only: bool,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            manifest: PathBuf::from("manifest.csv"),
            n_sessions: DEFAULT_SESSIONS,
            include_train_only: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds training and augmentation; overrides the per-section seeds.
    pub seed: u64,
    pub corpus: CorpusSection,
    pub embed: EmbedderSpec,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub vad: VadConfig,
    pub output: OutputSection,
}

impl RunConfig {
    /// Parses TOML; relative paths are taken relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus.manifest);
        fix(&mut self.output.dir);
        if let EmbedderSpec::EncoderFile { model_path, .. } = &mut self.embed {
            fix(model_path);
        }
    }

    /// Checks value ranges; `need_manifest` also requires the manifest file.
    pub fn validate(&self, need_manifest: bool) -> Result<()> {
        self.train_config().validate()?;
        self.augment_config().validate()?;
        self.vad.validate()?;
        if self.corpus.n_sessions < 3 {
            return Err(Error::Config("corpus.n_sessions must be at least 3".into()));
        }
        if need_manifest && !self.corpus.manifest.is_file() {
            return Err(Error::Config(format!(
                "corpus.manifest {} does not exist",
                self.corpus.manifest.display()
            )));
        }
        if let EmbedderSpec::EncoderFile { model_path, .. } = &self.embed {
            if !model_path.is_file() {
                return Err(Error::Config(format!("embed.model_path {} does not exist", model_path.display())));
            }
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            seed: self.seed,
            ..self.augment.clone()
        }
    }

    /// Hex digest of everything that affects results (the output location
    /// and the seed are excluded; the seed is part of the run name).
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output = OutputSection::default();
        c.seed = 0;
        let json = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .take(6)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output
            .dir
            .join(format!("run-{}-{}", self.digest(), self.seed))
    }
}
