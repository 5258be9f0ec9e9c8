//! Simulated production streams.
//!
//! Test clips are zero-padded by 500 ms on both sides and concatenated. A
//! 1 s window starts every 100 ms; it is labeled target when at least 80% of
//! some target word's extent falls inside it. Scenario streams are mixed with
//! noise at a fixed SNR and can be chained into one sequential stream.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{read_f32_wav, write_f32_wav};
use crate::dataset::{read_json, write_json, SCHEMA_VERSION};
use crate::seed::rng_for;
use crate::{AudioClip, Error, Label, Result, SAMPLE_RATE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamConfig {
    /// Zeros added before and after every clip.
    pub pad: usize,
    pub snr_db: f64,
    /// Fraction of a target word that must lie inside a window for a positive label.
    pub overlap_threshold: f64,
    pub window_len: usize,
    pub hop: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            pad: 8000,
            snr_db: 25.0,
            overlap_threshold: 0.8,
            window_len: 16_000,
            hop: 1600,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.overlap_threshold > 0.0 && self.overlap_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "overlap_threshold {} not in (0, 1]",
                self.overlap_threshold
            )));
        }
        if self.hop == 0 || self.window_len == 0 || self.window_len % self.hop != 0 {
            return Err(Error::Config(format!(
                "hop {} must be positive and divide window_len {}",
                self.hop, self.window_len
            )));
        }
        Ok(())
    }
}

/// Acoustic condition of a stream segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    Clean,
    BabyCrying,
    GlassBreak,
    GunShot,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::Clean, Scenario::BabyCrying, Scenario::GlassBreak, Scenario::GunShot];

    /// Order of the sequential experiment.
    pub const SEQUENTIAL: [Scenario; 5] = [
        Scenario::Clean,
        Scenario::BabyCrying,
        Scenario::GlassBreak,
        Scenario::GunShot,
        Scenario::Clean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Clean => "Clean",
            Scenario::BabyCrying => "BabyCrying",
            Scenario::GlassBreak => "GlassBreak",
            Scenario::GunShot => "GunShot",
        }
    }

    pub fn parse(name: &str) -> Option<Scenario> {
        Scenario::ALL.into_iter().find(|s| s.name().eq_ignore_ascii_case(name))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamWindow {
    pub origin: usize,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioMark {
    pub name: String,
    pub start_sample: usize,
}

/// Half-open sample range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extent {
    pub start: usize,
    pub end: usize,
}

impl Extent {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlap(&self, start: usize, end: usize) -> usize {
        self.end.min(end).saturating_sub(self.start.max(start))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledStream {
    pub samples: Vec<f32>,
    pub windows: Vec<StreamWindow>,
    pub scenarios: Vec<ScenarioMark>,
    /// Where each target word sits in the stream.
    pub target_extents: Vec<Extent>,
    pub window_len: usize,
    pub hop: usize,
    /// Free-form provenance carried into the sidecar (noise source, gain, ...).
    pub notes: BTreeMap<String, String>,
}

impl LabeledStream {
    pub fn window_samples(&self, w: &StreamWindow) -> &[f32] {
        &self.samples[w.origin..w.origin + self.window_len]
    }

    /// Replaces the scenario marks with a single mark at sample 0.
    pub fn named(mut self, name: &str) -> Self {
        self.scenarios = vec![ScenarioMark {
            name: name.to_string(),
            start_sample: 0,
        }];
        self
    }

    pub fn positives(&self) -> usize {
        self.windows.iter().filter(|w| w.label == Label::Target).count()
    }
}

/// One test clip with the sample range its word occupies.
#[derive(Debug, Clone)]
pub struct StreamClip {
    pub clip: AudioClip,
    pub label: Label,
    pub word_extent: (usize, usize),
}

/// Concatenates padded clips and labels every window.
///
/// The stream tail is zero-padded to a whole number of hops so streams can be
/// chained without windows straddling the joins.
pub fn concat_with_labels(clips: &[StreamClip], cfg: &StreamConfig) -> Result<LabeledStream> {
    cfg.validate()?;
    if clips.is_empty() {
        return Err(Error::Config("no clips to concatenate".into()));
    }
    let mut samples = Vec::new();
    let mut target_extents = Vec::new();
    for (i, c) in clips.iter().enumerate() {
        let (s, e) = c.word_extent;
        if s >= e || e > c.clip.len() {
            return Err(Error::Config(format!(
                "clip {i}: word extent {s}..{e} outside clip of {} samples",
                c.clip.len()
            )));
        }
        if c.clip.len() > cfg.window_len {
            return Err(Error::Config(format!(
                "clip {i} has {} samples, longer than the {}-sample window",
                c.clip.len(),
                cfg.window_len
            )));
        }
        samples.resize(samples.len() + cfg.pad, 0.0);
        let base = samples.len();
        samples.extend_from_slice(&c.clip.samples);
        samples.resize(samples.len() + cfg.pad, 0.0);
        if c.label == Label::Target {
            target_extents.push(Extent {
                start: base + s,
                end: base + e,
            });
        }
    }
    let tail = samples.len() % cfg.hop;
    if tail != 0 {
        samples.resize(samples.len() + cfg.hop - tail, 0.0);
    }
    let windows = label_windows(samples.len(), &target_extents, cfg);
    Ok(LabeledStream {
        samples,
        windows,
        scenarios: vec![ScenarioMark {
            name: "stream".into(),
            start_sample: 0,
        }],
        target_extents,
        window_len: cfg.window_len,
        hop: cfg.hop,
        notes: BTreeMap::new(),
    })
}

fn label_windows(total: usize, extents: &[Extent], cfg: &StreamConfig) -> Vec<StreamWindow> {
    if total < cfg.window_len {
        return Vec::new();
    }
    // Extents are sorted, so only a short run of them can touch any window.
    let mut first = 0;
    (0..=(total - cfg.window_len) / cfg.hop)
        .map(|k| {
            let o = k * cfg.hop;
            let end = o + cfg.window_len;
            while first < extents.len() && extents[first].end <= o {
                first += 1;
            }
            let hit = extents[first..]
                .iter()
                .take_while(|e| e.start < end)
                .any(|e| covers(e, o, end, cfg.overlap_threshold));
            StreamWindow {
                origin: o,
                label: if hit { Label::Target } else { Label::NonTarget },
            }
        })
        .collect()
}

/// Whether at least `threshold` of the word lies in `[start, end)`. The
/// comparison allows a relative slack of 1e-9 so an exact 80% is inclusive
/// despite binary rounding of the threshold.
pub fn covers(word: &Extent, start: usize, end: usize, threshold: f64) -> bool {
    let len = word.len() as f64;
    word.overlap(start, end) as f64 >= threshold * len - 1e-9 * len
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixOutcome {
    pub stream: LabeledStream,
    /// Factor applied to the tiled noise.
    pub gain: f64,
    /// Offset into the noise clip where tiling started.
    pub noise_offset: usize,
    /// Samples saturated at ±1 after mixing.
    pub clipped: usize,
}

fn rms(x: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = x.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// The noise clip tiled circularly from `offset` to `len` samples.
pub fn tile_noise(noise: &[f32], offset: usize, len: usize) -> impl Iterator<Item = f64> + '_ {
    (0..len).map(move |i| noise[(offset + i) % noise.len()] as f64)
}

/// Adds noise scaled to `snr_db` below the stream's RMS.
///
/// `g = rms(stream) / (rms(tiled noise) · 10^(snr/20))`, with the noise
/// RMS measured on the exact tiled segment that gets added.
pub fn mix_noise(stream: &LabeledStream, noise: &AudioClip, snr_db: f64, seed: u64) -> Result<MixOutcome> {
    if noise.is_empty() {
        return Err(Error::InvalidNoise("noise clip is empty".into()));
    }
    let offset = rng_for(seed, "stream/noise-offset").gen_range(0..noise.len());
    let n = stream.samples.len();
    let noise_rms = rms(tile_noise(&noise.samples, offset, n));
    if !(noise_rms > 0.0) {
        return Err(Error::InvalidNoise(format!("{} is silent", noise.source_path)));
    }
    let clean_rms = rms(stream.samples.iter().map(|&v| v as f64));
    let gain = clean_rms / (noise_rms * 10f64.powf(snr_db / 20.0));
    let mut clipped = 0;
    let samples = stream
        .samples
        .iter()
        .zip(tile_noise(&noise.samples, offset, n))
        .map(|(&s, v)| {
            let m = s as f64 + gain * v;
            if m.abs() > 1.0 {
                clipped += 1;
            }
            m.clamp(-1.0, 1.0) as f32
        })
        .collect();
    let mut out = stream.clone();
    out.samples = samples;
    out.notes.insert("noise".into(), noise.source_path.clone());
    out.notes.insert("snr_db".into(), snr_db.to_string());
    out.notes.insert("noise_gain".into(), gain.to_string());
    out.notes.insert("clipped".into(), clipped.to_string());
    if clipped > 0 {
        log::warn!("{clipped} samples clipped while mixing {}", noise.source_path);
    }
    Ok(MixOutcome {
        stream: out,
        gain,
        noise_offset: offset,
        clipped,
    })
}

/// Chains per-scenario streams, adding one scenario mark per input.
pub fn build_sequential_stream(per_scenario: &[(String, LabeledStream)]) -> Result<LabeledStream> {
    let Some((_, first)) = per_scenario.first() else {
        return Err(Error::Config("no scenario streams to chain".into()));
    };
    let mut out = LabeledStream {
        samples: Vec::new(),
        windows: Vec::new(),
        scenarios: Vec::new(),
        target_extents: Vec::new(),
        window_len: first.window_len,
        hop: first.hop,
        notes: BTreeMap::new(),
    };
    for (name, s) in per_scenario {
        if s.window_len != out.window_len || s.hop != out.hop {
            return Err(Error::Config(format!(
                "scenario {name} uses window {}/hop {}, expected {}/{}",
                s.window_len, s.hop, out.window_len, out.hop
            )));
        }
        let base = out.samples.len();
        out.scenarios.push(ScenarioMark {
            name: name.clone(),
            start_sample: base,
        });
        out.samples.extend_from_slice(&s.samples);
        out.windows.extend(s.windows.iter().map(|w| StreamWindow {
            origin: w.origin + base,
            label: w.label,
        }));
        out.target_extents.extend(s.target_extents.iter().map(|e| Extent {
            start: e.start + base,
            end: e.end + base,
        }));
    }
    Ok(out)
}

/// Locates the spoken word inside a clip from 10 ms frame energies: the span
/// from the first to the last frame within 20 dB of the loudest one. A silent
/// clip yields its full length.
pub fn estimate_word_extent(clip: &AudioClip) -> (usize, usize) {
    const FRAME: usize = SAMPLE_RATE as usize / 100;
    let energies: Vec<f64> = clip
        .samples
        .chunks(FRAME)
        .map(|c| rms(c.iter().map(|&v| v as f64)))
        .collect();
    let peak = energies.iter().cloned().fold(0.0, f64::max);
    let threshold = (peak * 0.1).max(1e-4);
    let first = energies.iter().position(|&e| e >= threshold);
    let last = energies.iter().rposition(|&e| e >= threshold);
    match (first, last) {
        (Some(a), Some(b)) => (a * FRAME, ((b + 1) * FRAME).min(clip.len())),
        _ => (0, clip.len().max(1)),
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    schema_version: u32,
    sample_rate: u32,
    total_samples: usize,
    window_len: usize,
    hop: usize,
    windows: Vec<StreamWindow>,
    scenarios: Vec<ScenarioMark>,
    target_extents: Vec<Extent>,
    notes: BTreeMap<String, String>,
}

pub fn sidecar_path(wav: &Path) -> PathBuf {
    wav.with_extension("json")
}

/// Writes the samples as 32-bit float WAV plus a JSON sidecar next to it.
pub fn save_stream(stream: &LabeledStream, wav: &Path) -> Result<()> {
    write_f32_wav(&stream.samples, wav)?;
    let side = Sidecar {
        schema_version: SCHEMA_VERSION,
        sample_rate: SAMPLE_RATE,
        total_samples: stream.samples.len(),
        window_len: stream.window_len,
        hop: stream.hop,
        windows: stream.windows.clone(),
        scenarios: stream.scenarios.clone(),
        target_extents: stream.target_extents.clone(),
        notes: stream.notes.clone(),
    };
    write_json(&side, &sidecar_path(wav))
}

pub fn load_stream(wav: &Path) -> Result<LabeledStream> {
    let side: Sidecar = read_json(&sidecar_path(wav))?;
    let samples = read_f32_wav(wav)?;
    if samples.len() != side.total_samples {
        return Err(Error::Schema(format!(
            "{} has {} samples, sidecar says {}",
            wav.display(),
            samples.len(),
            side.total_samples
        )));
    }
    if side.windows.iter().any(|w| w.origin + side.window_len > samples.len()) {
        return Err(Error::Schema(format!("{}: window past end of stream", wav.display())));
    }
    Ok(LabeledStream {
        samples,
        windows: side.windows,
        scenarios: side.scenarios,
        target_extents: side.target_extents,
        window_len: side.window_len,
        hop: side.hop,
        notes: side.notes,
    })
}
