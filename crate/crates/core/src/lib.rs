//! Keyword spotting with conditional online learning.
//!
//! The crate covers the whole loop of a small-footprint keyword spotter that
//! keeps learning after deployment:
//!
//! * [`dataset`]: Speech Commands style corpora, manifests and binary keyword tasks.
//! * [`dsp`]: 32×40 MFCC windows and time-shift augmentation.
//! * [`model`]: the `cnn-one-fstride4` network with exact backpropagation and checkpoints.
//! * [`trainer`]: offline pretraining with Adam and early stopping.
//! * [`stream`]: labeled, noise-mixed audio streams built from test clips.
//! * [`online`]: the conditional online learner, plus naive and frozen baselines.
//! * [`report`]: per-scenario accuracy tables, gains and cumulative-accuracy curves.
//!
//! ```
//! use coolkws::model::{Arch, ModelParams};
//! use coolkws::online::{run_features, OnlineConfig, RunMode};
//! use coolkws::dsp::FeatureWindow;
//! use coolkws::Label;
//!
//! let m0 = ModelParams::<f32>::init(Arch::shrunken(), 7);
//! let x = FeatureWindow::zeros(0);
//! let holdout = vec![(x.clone(), Label::Target), (x.clone(), Label::NonTarget)];
//! let items = vec![(x.clone(), Label::NonTarget); 4];
//! let out = run_features(&m0, Some(&holdout), &items, &[], RunMode::Cool, &OnlineConfig::default())?;
//! assert_eq!(out.log.records.len(), 4);
//! # Ok::<(), coolkws::Error>(())
//! ```

pub mod audio;
pub mod dataset;
pub mod dsp;
mod error;
pub mod model;
pub mod online;
pub mod report;
pub mod seed;
pub mod stream;
pub mod synth;
pub mod trainer;

pub use audio::AudioClip;
pub use error::{Error, Result};

use serde::{Deserialize, Serialize};

/// Sample rate every clip and stream in the toolkit runs at.
pub const SAMPLE_RATE: u32 = 16_000;

/// Binary keyword label. Class index 0 is the non-target class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    NonTarget,
    Target,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::NonTarget => 0,
            Label::Target => 1,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Label::NonTarget),
            1 => Ok(Label::Target),
            _ => Err(Error::Range(format!("class index {i} is not 0 or 1"))),
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::NonTarget => "non-target",
            Label::Target => "target",
        })
    }
}

/// The book's chapters, compiled so their snippets run as doctests.
#[cfg(doctest)]
pub mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/features.md")]
    pub mod features {}
    #[doc = include_str!("../../../book/src/model.md")]
    pub mod model {}
    #[doc = include_str!("../../../book/src/pretraining.md")]
    pub mod pretraining {}
    #[doc = include_str!("../../../book/src/streams.md")]
    pub mod streams {}
    #[doc = include_str!("../../../book/src/online.md")]
    pub mod online {}
    #[doc = include_str!("../../../book/src/reporting.md")]
    pub mod reporting {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
