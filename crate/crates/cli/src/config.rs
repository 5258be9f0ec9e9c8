//! The experiment config: one JSON document holding every setting of a run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use coolkws::dataset::{DEFAULT_HOLDOUT_SIZE, DEFAULT_WORDS, SCHEMA_VERSION};
use coolkws::dsp::DspConfig;
use coolkws::model::Arch;
use coolkws::online::{OnlineConfig, RunMode};
use coolkws::report::{GainConvention, StdKind};
use coolkws::stream::{Scenario, StreamConfig};
use coolkws::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::exit::usage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineSection {
    #[serde(flatten)]
    pub learner: OnlineConfig,
    #[serde(default = "all_modes")]
    pub modes: Vec<RunMode>,
}

fn all_modes() -> Vec<RunMode> {
    RunMode::ALL.to_vec()
}

impl Default for OnlineSection {
    fn default() -> Self {
        Self {
            learner: OnlineConfig::default(),
            modes: all_modes(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub gain: GainConvention,
    pub std: StdKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Speech Commands root; `COOLKWS_DATA` overrides it.
    pub gsc_root: PathBuf,
    /// Defaults to `validation_list.txt` under the corpus root.
    #[serde(default)]
    pub validation_list: Option<PathBuf>,
    /// Defaults to `testing_list.txt` under the corpus root.
    #[serde(default)]
    pub testing_list: Option<PathBuf>,
    /// Noise recording (a WAV file or a folder of them) per noisy scenario.
    #[serde(default)]
    pub dcase: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub dsp: DspConfig,
    #[serde(default)]
    pub arch: Arch,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub stream: StreamConfig,
    #[serde(default)]
    pub online: OnlineSection,
    #[serde(default)]
    pub report: ReportSection,
    #[serde(default = "default_holdout")]
    pub holdout_size: usize,
    #[serde(default = "default_words")]
    pub words: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
}

fn default_holdout() -> usize {
    DEFAULT_HOLDOUT_SIZE
}

fn default_words() -> Vec<String> {
    DEFAULT_WORDS.iter().map(|w| w.to_string()).collect()
}

impl ExperimentConfig {
    /// A config with every default, rooted at the given paths.
    pub fn new(gsc_root: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            gsc_root: gsc_root.into(),
            validation_list: None,
            testing_list: None,
            dcase: BTreeMap::new(),
            dsp: DspConfig::default(),
            arch: Arch::default(),
            train: TrainConfig::default(),
            stream: StreamConfig::default(),
            online: OnlineSection::default(),
            report: ReportSection::default(),
            holdout_size: DEFAULT_HOLDOUT_SIZE,
            words: default_words(),
            seed: 0,
            output_dir: output_dir.into(),
        }
    }

    /// Reads and validates a config. Relative paths are resolved against the
    /// config file's directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(usage(format!(
                "{}: schema_version {}, expected {SCHEMA_VERSION}",
                path.display(),
                cfg.schema_version
            )));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.gsc_root);
        fix(&mut cfg.output_dir);
        cfg.validation_list.iter_mut().for_each(fix);
        cfg.testing_list.iter_mut().for_each(fix);
        cfg.dcase.values_mut().for_each(fix);
        if let Ok(root) = std::env::var("COOLKWS_DATA") {
            cfg.gsc_root = PathBuf::from(root);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let bad = |e: coolkws::Error| usage(e.to_string());
        self.dsp.validate().map_err(bad)?;
        self.arch.validate().map_err(bad)?;
        self.train.validate().map_err(bad)?;
        self.stream.validate().map_err(bad)?;
        self.online.learner.validate().map_err(bad)?;
        if self.words.is_empty() {
            return Err(usage("config lists no words"));
        }
        for name in self.dcase.keys() {
            match Scenario::parse(name) {
                Some(Scenario::Clean) | None => {
                    return Err(usage(format!("dcase entry {name:?} is not a noisy scenario")));
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn validation_list(&self) -> PathBuf {
        self.validation_list
            .clone()
            .unwrap_or_else(|| self.gsc_root.join("validation_list.txt"))
    }

    pub fn testing_list(&self) -> PathBuf {
        self.testing_list.clone().unwrap_or_else(|| self.gsc_root.join("testing_list.txt"))
    }

    pub fn noise_path(&self, scenario: Scenario) -> Option<&Path> {
        self.dcase
            .iter()
            .find(|(k, _)| Scenario::parse(k) == Some(scenario))
            .map(|(_, v)| v.as_path())
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
