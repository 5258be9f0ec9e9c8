//! Conditional online learning over a labeled stream.
//!
//! Every window is first predicted with the current model and only then
//! offered to the learner (test-then-train). Three learners share the loop:
//!
//! * `frozen` never changes the base model;
//! * `naive` takes an unconditional SGD step on every window;
//! * `cool` buffers target and non-target windows separately. Once each buffer
//!   holds `b/2` windows it takes one SGD step on the `b/2` newest of each and
//!   keeps the step only if the batch loss went down and the hold-out loss is
//!   still no worse than the base model's. Both buffers are then emptied.
//!
//! The hold-out reference loss `l_v` is measured once, on the base model, and
//! never re-baselined; every consolidated model therefore has hold-out loss
//! at most `l_v`.

use std::collections::VecDeque;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SCHEMA_VERSION;
use crate::dsp::{DspConfig, FeatureWindow, MfccExtractor};
use crate::model::{argmax, Classifier};
use crate::stream::{LabeledStream, ScenarioMark};
use crate::trainer::evaluate;
use crate::{Error, Label, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Frozen,
    Naive,
    Cool,
}

impl RunMode {
    pub const ALL: [RunMode; 3] = [RunMode::Frozen, RunMode::Naive, RunMode::Cool];

    pub fn name(self) -> &'static str {
        match self {
            RunMode::Frozen => "frozen",
            RunMode::Naive => "naive",
            RunMode::Cool => "cool",
        }
    }

    pub fn parse(s: &str) -> Option<RunMode> {
        RunMode::ALL.into_iter().find(|m| m.name().eq_ignore_ascii_case(s.trim()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnlineConfig {
    /// Online batch size `b`; half of it comes from each class.
    pub batch_size: usize,
    pub lr: f64,
    /// Per-class buffer cap; the oldest window is evicted first.
    pub max_buffer: usize,
    /// Naive learner uses the COOL batching (without any checks) instead of
    /// one SGD step per window.
    pub naive_batched: bool,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            lr: 1e-3,
            max_buffer: 64,
            naive_batched: false,
        }
    }
}

impl OnlineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return Err(Error::Config(format!(
                "online batch size {} must be even and >= 2",
                self.batch_size
            )));
        }
        if self.max_buffer < self.batch_size / 2 {
            return Err(Error::Config(format!(
                "max_buffer {} is smaller than half a batch",
                self.max_buffer
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("online learning rate {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecisionReason {
    Consolidated,
    RevertedHoldout,
    RevertedBatch,
}

/// Outcome of one update attempt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDecision {
    /// Index of the window that completed the batch.
    pub step_index: usize,
    pub attempted: bool,
    pub consolidated: bool,
    /// Batch loss before the step.
    pub l: f64,
    /// Batch loss after the step.
    pub l_prime: f64,
    /// Hold-out loss after the step.
    pub l_v_prime: f64,
    pub reason: DecisionReason,
}

/// Runtime state of the conditional learner.
#[derive(Debug, Clone)]
pub struct OnlineState<M> {
    pub params: M,
    pub buf_target: VecDeque<(FeatureWindow, Label)>,
    pub buf_nontarget: VecDeque<(FeatureWindow, Label)>,
    l_v: f64,
    /// Update attempts so far.
    pub j: u64,
    pub cfg: OnlineConfig,
    /// Windows offered so far, including skipped ones.
    pub seen: usize,
    /// Windows dropped because their features were not finite.
    pub skipped: usize,
}

impl<M> OnlineState<M> {
    /// Hold-out loss of the base model.
    pub fn l_v(&self) -> f64 {
        self.l_v
    }
}

pub fn init_state<M: Classifier>(
    m0: &M,
    holdout: &[(FeatureWindow, Label)],
    cfg: &OnlineConfig,
) -> Result<OnlineState<M>> {
    cfg.validate()?;
    if holdout.is_empty() {
        return Err(Error::Config("the conditional learner needs a non-empty hold-out set".into()));
    }
    Ok(OnlineState {
        params: m0.clone(),
        buf_target: VecDeque::new(),
        buf_nontarget: VecDeque::new(),
        l_v: evaluate(m0, holdout)?.loss,
        j: 0,
        cfg: cfg.clone(),
        seen: 0,
        skipped: 0,
    })
}

impl<M: Classifier> OnlineState<M> {
    fn push(&mut self, x: FeatureWindow, y: Label) {
        let buf = match y {
            Label::Target => &mut self.buf_target,
            Label::NonTarget => &mut self.buf_nontarget,
        };
        buf.push_back((x, y));
        if buf.len() > self.cfg.max_buffer {
            buf.pop_front();
        }
    }

    /// The `b/2` newest windows of each class, once both buffers have them.
    fn take_batch(&mut self) -> Option<Vec<(FeatureWindow, Label)>> {
        let half = self.cfg.batch_size / 2;
        if self.buf_target.len() < half || self.buf_nontarget.len() < half {
            return None;
        }
        let newest = |b: &VecDeque<(FeatureWindow, Label)>| b.iter().skip(b.len() - half).cloned().collect::<Vec<_>>();
        let mut batch = newest(&self.buf_target);
        batch.extend(newest(&self.buf_nontarget));
        self.buf_target.clear();
        self.buf_nontarget.clear();
        Some(batch)
    }
}

/// Offers one labeled window to the conditional learner.
///
/// Returns the decision when the window completed a batch, `None` otherwise.
/// Windows with non-finite features are counted in `skipped` and ignored.
pub fn observe<M: Classifier>(
    state: &mut OnlineState<M>,
    x: FeatureWindow,
    y: Label,
    holdout: &[(FeatureWindow, Label)],
) -> Result<Option<StepDecision>> {
    state.seen += 1;
    if !x.is_finite() {
        log::warn!("window {} has non-finite features; skipped", state.seen - 1);
        state.skipped += 1;
        return Ok(None);
    }
    state.push(x, y);
    let Some(batch) = state.take_batch() else {
        return Ok(None);
    };
    let mut decision = cool_update(state, &batch, holdout)?;
    decision.step_index = state.seen - 1;
    state.j += 1;
    Ok(Some(decision))
}

/// One gated SGD step on a balanced batch.
pub fn cool_update<M: Classifier>(
    state: &mut OnlineState<M>,
    batch: &[(FeatureWindow, Label)],
    holdout: &[(FeatureWindow, Label)],
) -> Result<StepDecision> {
    let b = state.cfg.batch_size;
    let targets = batch.iter().filter(|(_, y)| *y == Label::Target).count();
    if batch.len() != b || targets != b / 2 {
        return Err(Error::Config(format!(
            "batch of {} with {targets} targets, expected {b} with {}",
            batch.len(),
            b / 2
        )));
    }
    let (l, grad) = state.params.loss_and_grad(batch)?;
    let candidate = state.params.sgd_step(&grad, state.cfg.lr);
    let l_prime = candidate.mean_loss(batch)?;
    let l_v_prime = evaluate(&candidate, holdout)?.loss;

    let reason = if !(l_prime.is_finite() && l_v_prime.is_finite()) {
        DecisionReason::RevertedBatch
    } else if l_v_prime > state.l_v {
        DecisionReason::RevertedHoldout
    } else if l_prime >= l {
        DecisionReason::RevertedBatch
    } else {
        DecisionReason::Consolidated
    };
    let consolidated = reason == DecisionReason::Consolidated;
    if consolidated {
        state.params = candidate;
    }
    Ok(StepDecision {
        step_index: state.seen.saturating_sub(1),
        attempted: true,
        consolidated,
        l,
        l_prime,
        l_v_prime,
        reason,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub index: usize,
    pub origin_sample: usize,
    pub label: Label,
    pub predicted: Label,
    pub correct: bool,
}

/// Identifies what a log was produced from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub task: String,
    pub stream: String,
    pub checkpoint_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub mode: RunMode,
    pub meta: RunMeta,
    pub config: OnlineConfig,
    pub records: Vec<WindowRecord>,
    pub decisions: Vec<StepDecision>,
    pub scenarios: Vec<ScenarioMark>,
    /// Base-model hold-out loss (conditional runs only).
    pub l_v: Option<f64>,
    /// Hold-out loss of the final model (conditional runs only).
    pub final_holdout_loss: Option<f64>,
}

impl RunLog {
    pub fn accuracy(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.correct).count() as f64 / self.records.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput<M> {
    pub log: RunLog,
    pub final_params: M,
}

/// Runs a learner prequentially over precomputed feature windows.
pub fn run_features<M: Classifier>(
    m0: &M,
    holdout: Option<&[(FeatureWindow, Label)]>,
    items: &[(FeatureWindow, Label)],
    scenarios: &[ScenarioMark],
    mode: RunMode,
    cfg: &OnlineConfig,
) -> Result<RunOutput<M>> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(Error::Config("stream has no windows".into()));
    }
    let holdout = match (mode, holdout) {
        (RunMode::Cool, None) => return Err(Error::Config("mode cool requires a hold-out set".into())),
        (RunMode::Cool, Some([])) => return Err(Error::Config("mode cool requires a non-empty hold-out set".into())),
        (_, h) => h.unwrap_or(&[]),
    };

    let mut records = Vec::with_capacity(items.len());
    let mut decisions = Vec::new();
    let mut cool = match mode {
        RunMode::Cool => Some(init_state(m0, holdout, cfg)?),
        _ => None,
    };
    let mut naive = match mode {
        RunMode::Naive if cfg.naive_batched => Some(OnlineState {
            params: m0.clone(),
            buf_target: VecDeque::new(),
            buf_nontarget: VecDeque::new(),
            l_v: f64::NAN,
            j: 0,
            cfg: cfg.clone(),
            seen: 0,
            skipped: 0,
        }),
        _ => None,
    };
    let mut params = m0.clone();

    for (index, (x, y)) in items.iter().enumerate() {
        let current = match (&cool, &naive) {
            (Some(s), _) | (_, Some(s)) => &s.params,
            _ => &params,
        };
        let predicted = argmax(current.predict(x)?);
        records.push(WindowRecord {
            index,
            origin_sample: x.origin_sample,
            label: *y,
            predicted,
            correct: predicted == *y,
        });
        match mode {
            RunMode::Frozen => {}
            RunMode::Cool => {
                let state = cool.as_mut().expect("cool state");
                if let Some(d) = observe(state, x.clone(), *y, holdout)? {
                    decisions.push(d);
                }
            }
            RunMode::Naive => {
                if !x.is_finite() {
                    continue;
                }
                if let Some(state) = naive.as_mut() {
                    state.seen += 1;
                    state.push(x.clone(), *y);
                    if let Some(batch) = state.take_batch() {
                        let (_, g) = state.params.loss_and_grad(&batch)?;
                        state.params = state.params.sgd_step(&g, cfg.lr);
                        state.j += 1;
                    }
                } else {
                    let (_, g) = params.loss_and_grad(std::slice::from_ref(&(x.clone(), *y)))?;
                    params = params.sgd_step(&g, cfg.lr);
                }
            }
        }
    }

    let (final_params, l_v, final_holdout_loss) = match (cool, naive) {
        (Some(s), _) => {
            let fin = evaluate(&s.params, holdout)?.loss;
            (s.params, Some(s.l_v), Some(fin))
        }
        (_, Some(s)) => (s.params, None, None),
        _ => (params, None, None),
    };
    Ok(RunOutput {
        log: RunLog {
            mode,
            meta: RunMeta::default(),
            config: cfg.clone(),
            records,
            decisions,
            scenarios: scenarios.to_vec(),
            l_v,
            final_holdout_loss,
        },
        final_params,
    })
}

/// Extracts MFCCs for every stream window, in parallel and in window order.
pub fn stream_features(stream: &LabeledStream, dsp: &DspConfig) -> Result<Vec<(FeatureWindow, Label)>> {
    let ex = MfccExtractor::new(dsp)?;
    stream
        .windows
        .par_iter()
        .map(|w| Ok((ex.extract(stream.window_samples(w), w.origin)?, w.label)))
        .collect()
}

/// Runs a learner over a labeled audio stream.
pub fn run_stream<M: Classifier>(
    m0: &M,
    holdout: Option<&[(FeatureWindow, Label)]>,
    stream: &LabeledStream,
    mode: RunMode,
    dsp: &DspConfig,
    cfg: &OnlineConfig,
) -> Result<RunOutput<M>> {
    if mode == RunMode::Cool && holdout.map_or(true, |h| h.is_empty()) {
        return Err(Error::Config("mode cool requires a non-empty hold-out set".into()));
    }
    let items = stream_features(stream, dsp)?;
    run_features(m0, holdout, &items, &stream.scenarios, mode, cfg)
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    mode: RunMode,
    #[serde(flatten)]
    meta: RunMeta,
    config: OnlineConfig,
    scenarios: Vec<ScenarioMark>,
    l_v: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Line {
    Header(Header),
    Window(WindowRecord),
    Decision(StepDecision),
    Summary { final_holdout_loss: Option<f64> },
}

/// JSON lines: a header, one line per window, one per decision, a summary.
pub fn write_run_log(log: &RunLog, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    let mut emit = |line: &Line| -> Result<()> {
        serde_json::to_writer(&mut out, line)?;
        out.write_all(b"\n")?;
        Ok(())
    };
    emit(&Line::Header(Header {
        schema_version: SCHEMA_VERSION,
        mode: log.mode,
        meta: log.meta.clone(),
        config: log.config.clone(),
        scenarios: log.scenarios.clone(),
        l_v: log.l_v,
    }))?;
    for r in &log.records {
        emit(&Line::Window(*r))?;
    }
    for d in &log.decisions {
        emit(&Line::Decision(*d))?;
    }
    emit(&Line::Summary {
        final_holdout_loss: log.final_holdout_loss,
    })?;
    out.flush()?;
    Ok(())
}

pub fn read_run_log(path: &Path) -> Result<RunLog> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut log: Option<RunLog> = None;
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line)?;
        match (parsed, log.as_mut()) {
            (Line::Header(h), None) => {
                if h.schema_version != SCHEMA_VERSION {
                    return Err(Error::Schema(format!("{}: schema_version {}", path.display(), h.schema_version)));
                }
                log = Some(RunLog {
                    mode: h.mode,
                    meta: h.meta,
                    config: h.config,
                    records: Vec::new(),
                    decisions: Vec::new(),
                    scenarios: h.scenarios,
                    l_v: h.l_v,
                    final_holdout_loss: None,
                });
            }
            (Line::Window(r), Some(l)) => l.records.push(r),
            (Line::Decision(d), Some(l)) => l.decisions.push(d),
            (Line::Summary { final_holdout_loss }, Some(l)) => l.final_holdout_loss = final_holdout_loss,
            _ => {
                return Err(Error::Schema(format!(
                    "{}:{}: header must come first and only once",
                    path.display(),
                    n + 1
                )))
            }
        }
    }
    log.ok_or_else(|| Error::Schema(format!("{}: empty run log", path.display())))
}
