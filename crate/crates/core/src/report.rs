//! Accuracy tables, gains and cumulative-accuracy curves from run logs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::online::{RunLog, RunMode, WindowRecord};
use crate::trainer::EpochMetrics;
use crate::{Error, Result};

/// How a gain between a base and an adapted accuracy is expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GainConvention {
    /// `100·(cool − base)/cool`.
    #[default]
    RelativeToCool,
    /// `100·(cool − base)/base`.
    RelativeToBase,
    /// `100·(cool − base)`, in percentage points.
    PercentagePoints,
}

impl GainConvention {
    pub fn describe(self) -> &'static str {
        match self {
            GainConvention::RelativeToCool => "100*(cool-base)/cool",
            GainConvention::RelativeToBase => "100*(cool-base)/base",
            GainConvention::PercentagePoints => "100*(cool-base) [percentage points]",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StdKind {
    #[default]
    Population,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioAccuracy {
    pub scenario: String,
    /// Position of the segment in its stream.
    pub segment: usize,
    pub task: String,
    pub mode: RunMode,
    pub accuracy: f64,
    pub correct: usize,
    pub window_count: usize,
}

/// Splits a log's records by scenario mark, using each window's origin.
fn segments(log: &RunLog) -> Vec<(String, &[WindowRecord])> {
    let marks = &log.scenarios;
    if marks.is_empty() {
        return vec![("stream".to_string(), &log.records[..])];
    }
    let mut out = Vec::with_capacity(marks.len());
    let mut lo = log.records.iter().position(|r| r.origin_sample >= marks[0].start_sample).unwrap_or(log.records.len());
    for (k, m) in marks.iter().enumerate() {
        let hi = match marks.get(k + 1) {
            Some(next) => lo + log.records[lo..].iter().take_while(|r| r.origin_sample < next.start_sample).count(),
            None => log.records.len(),
        };
        out.push((m.name.clone(), &log.records[lo..hi]));
        lo = hi;
    }
    out
}

fn correct(records: &[WindowRecord]) -> usize {
    records.iter().filter(|r| r.correct).count()
}

/// Accuracy of every scenario segment; empty segments are dropped with a warning.
pub fn scenario_accuracy(log: &RunLog) -> Vec<ScenarioAccuracy> {
    segments(log)
        .into_iter()
        .enumerate()
        .filter_map(|(segment, (scenario, recs))| {
            if recs.is_empty() {
                log::warn!("{}: scenario {scenario} (segment {segment}) has no windows", log.meta.task);
                return None;
            }
            let c = correct(recs);
            Some(ScenarioAccuracy {
                scenario,
                segment,
                task: log.meta.task.clone(),
                mode: log.mode,
                accuracy: c as f64 / recs.len() as f64,
                correct: c,
                window_count: recs.len(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64], kind: StdKind) -> Result<MeanStd> {
        let n = values.len();
        if n == 0 {
            return Err(Error::Config("cannot aggregate zero values".into()));
        }
        if values.iter().all(|v| *v == values[0]) {
            return Ok(MeanStd { mean: values[0], std: 0.0, n });
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        let std = match kind {
            StdKind::Population => (ss / n as f64).sqrt(),
            StdKind::Sample if n > 1 => (ss / (n - 1) as f64).sqrt(),
            StdKind::Sample => 0.0,
        };
        Ok(MeanStd { mean, std, n })
    }

    pub fn cell(&self) -> String {
        format!("{:.2}±{:.2}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub scenario: String,
    pub mode: RunMode,
    pub stats: MeanStd,
    pub note: Option<String>,
}

/// Mean and standard deviation across tasks for every (scenario, mode) pair,
/// in first-seen order.
pub fn aggregate(rows: &[ScenarioAccuracy], kind: StdKind) -> Result<Vec<Aggregate>> {
    let mut order: Vec<(String, RunMode)> = Vec::new();
    let mut groups: BTreeMap<(String, &'static str), Vec<f64>> = BTreeMap::new();
    for r in rows {
        let key = (r.scenario.clone(), r.mode.name());
        if !groups.contains_key(&key) {
            order.push((r.scenario.clone(), r.mode));
        }
        groups.entry(key).or_default().push(r.accuracy);
    }
    order
        .into_iter()
        .map(|(scenario, mode)| {
            let values = &groups[&(scenario.clone(), mode.name())];
            let stats = MeanStd::of(values, kind)?;
            Ok(Aggregate {
                note: (values.len() == 1).then(|| "single task: std is 0".to_string()),
                scenario,
                mode,
                stats,
            })
        })
        .collect()
}

/// Gain of `cool_acc` over `base_acc`, in percent.
pub fn relative_gain(base_acc: f64, cool_acc: f64, conv: GainConvention) -> Result<f64> {
    let reference = match conv {
        GainConvention::RelativeToCool => cool_acc,
        GainConvention::RelativeToBase => base_acc,
        GainConvention::PercentagePoints => return Ok(100.0 * (cool_acc - base_acc)),
    };
    if !(reference > 0.0) {
        return Err(Error::UndefinedGain(format!(
            "reference accuracy {reference} under {}",
            conv.describe()
        )));
    }
    Ok(100.0 * (cool_acc - base_acc) / reference)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub scenario: String,
    pub isolated_gain: f64,
    pub cumulative_gain: f64,
}

fn check_compatible(base: &RunLog, cool: &RunLog) -> Result<()> {
    if base.scenarios != cool.scenarios {
        return Err(Error::IncompatibleLogs("scenario marks differ".into()));
    }
    if base.records.len() != cool.records.len() {
        return Err(Error::IncompatibleLogs(format!(
            "{} windows vs {}",
            base.records.len(),
            cool.records.len()
        )));
    }
    if let Some((a, _)) = base
        .records
        .iter()
        .zip(&cool.records)
        .find(|(a, b)| a.origin_sample != b.origin_sample || a.label != b.label)
    {
        return Err(Error::IncompatibleLogs(format!("window {} differs", a.index)));
    }
    Ok(())
}

/// Per-segment counts `(correct, windows)` and the running totals through each segment.
fn segment_counts(log: &RunLog) -> Vec<(String, (usize, usize), (usize, usize))> {
    let mut total = (0, 0);
    segments(log)
        .into_iter()
        .map(|(name, recs)| {
            let seg = (correct(recs), recs.len());
            total = (total.0 + seg.0, total.1 + seg.1);
            (name, seg, total)
        })
        .collect()
}

fn ratio((c, n): (usize, usize)) -> f64 {
    if n == 0 {
        0.0
    } else {
        c as f64 / n as f64
    }
}

/// Isolated and cumulative gains of one task's sequential run.
pub fn sequential_gains(base: &RunLog, cool: &RunLog, conv: GainConvention) -> Result<Vec<GainRow>> {
    sequential_gains_across(&[(base.clone(), cool.clone())], conv)
}

/// Sequential gains across tasks: per segment, the gain between the
/// task-averaged base and adapted accuracies.
pub fn sequential_gains_across(pairs: &[(RunLog, RunLog)], conv: GainConvention) -> Result<Vec<GainRow>> {
    let Some((first, _)) = pairs.first() else {
        return Err(Error::Config("no run pairs to compare".into()));
    };
    let mut per_task = Vec::with_capacity(pairs.len());
    for (base, cool) in pairs {
        check_compatible(base, cool)?;
        if base.scenarios.len() != first.scenarios.len() {
            return Err(Error::IncompatibleLogs(format!(
                "task {} has {} segments, task {} has {}",
                base.meta.task,
                base.scenarios.len(),
                first.meta.task,
                first.scenarios.len()
            )));
        }
        per_task.push((segment_counts(base), segment_counts(cool)));
    }
    let n = pairs.len() as f64;
    let names: Vec<String> = per_task[0].0.iter().map(|s| s.0.clone()).collect();
    names
        .into_iter()
        .enumerate()
        .map(|(k, scenario)| {
            let (mut iso, mut cum) = ([0.0; 2], [0.0; 2]);
            for (b, c) in &per_task {
                iso[0] += ratio(b[k].1);
                iso[1] += ratio(c[k].1);
                cum[0] += ratio(b[k].2);
                cum[1] += ratio(c[k].2);
            }
            Ok(GainRow {
                scenario,
                isolated_gain: relative_gain(iso[0] / n, iso[1] / n, conv)?,
                cumulative_gain: relative_gain(cum[0] / n, cum[1] / n, conv)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub cumulative_accuracy: f64,
    pub scenario: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeCurve {
    pub points: Vec<CurvePoint>,
}

impl CumulativeCurve {
    pub fn last(&self) -> Option<f64> {
        self.points.last().map(|p| p.cumulative_accuracy)
    }
}

/// Running accuracy: point `k` is the fraction correct among windows `0..=k`.
pub fn cumulative_curve(log: &RunLog) -> Result<CumulativeCurve> {
    if log.records.is_empty() {
        return Err(Error::Config("cannot draw a curve for an empty log".into()));
    }
    let mut hits = 0usize;
    let mut points = Vec::with_capacity(log.records.len());
    for (name, recs) in segments(log) {
        for r in recs {
            hits += r.correct as usize;
            let step = points.len();
            points.push(CurvePoint {
                step,
                cumulative_accuracy: hits as f64 / (step + 1) as f64,
                scenario: name.clone(),
            });
        }
    }
    Ok(CumulativeCurve { points })
}

/// Pointwise mean of several curves, truncated to the shortest.
pub fn average_curves(curves: &[CumulativeCurve]) -> Result<CumulativeCurve> {
    let len = curves
        .iter()
        .map(|c| c.points.len())
        .min()
        .ok_or_else(|| Error::Config("no curves to average".into()))?;
    if curves.iter().any(|c| c.points.len() != len) {
        log::warn!("curves differ in length; truncating to {len} steps");
    }
    let n = curves.len() as f64;
    let points = (0..len)
        .map(|k| CurvePoint {
            step: k,
            cumulative_accuracy: curves.iter().map(|c| c.points[k].cumulative_accuracy).sum::<f64>() / n,
            scenario: curves[0].points[k].scenario.clone(),
        })
        .collect();
    Ok(CumulativeCurve { points })
}

pub fn curve_csv(curve: &CumulativeCurve) -> String {
    let mut s = String::from("step,cumulative_accuracy,scenario\n");
    for p in &curve.points {
        let _ = writeln!(s, "{},{},{}", p.step, p.cumulative_accuracy, p.scenario);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub word: String,
    pub metrics: EpochMetrics,
}

pub fn table1_csv(rows: &[Table1Row]) -> String {
    let mut s = String::from("target_word,train_loss,val_loss,train_acc,val_acc\n");
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(s, "{},{},{},{},{}", r.word, m.train_loss, m.val_loss, m.train_acc, m.val_acc);
    }
    s
}

pub fn table1_text(rows: &[Table1Row]) -> String {
    let mut s = format!(
        "{:<12} {:>10} {:>10} {:>10} {:>10}\n",
        "Target word", "Train loss", "Val. loss", "Train acc.", "Val. acc."
    );
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            s,
            "{:<12} {:>10.2} {:>10.2} {:>10.2} {:>10.2}",
            r.word, m.train_loss, m.val_loss, m.train_acc, m.val_acc
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Row {
    pub scenario: String,
    pub base: MeanStd,
    pub cool: MeanStd,
    pub delta: f64,
}

/// Base-versus-adapted accuracy per scenario, plus an `Average` row pooled over
/// every task×scenario cell.
pub fn table2(base: &[ScenarioAccuracy], cool: &[ScenarioAccuracy], kind: StdKind, conv: GainConvention) -> Result<Vec<Table2Row>> {
    let mut scenarios: Vec<String> = Vec::new();
    for r in base {
        if !scenarios.contains(&r.scenario) {
            scenarios.push(r.scenario.clone());
        }
    }
    let pick = |rows: &[ScenarioAccuracy], sc: Option<&str>| -> Vec<f64> {
        rows.iter()
            .filter(|r| sc.map_or(true, |s| r.scenario == s))
            .map(|r| r.accuracy)
            .collect()
    };
    let row = |name: String, sc: Option<&str>| -> Result<Table2Row> {
        let b = MeanStd::of(&pick(base, sc), kind)?;
        let c = MeanStd::of(&pick(cool, sc), kind)
            .map_err(|_| Error::IncompatibleLogs(format!("no adapted runs for scenario {name}")))?;
        Ok(Table2Row {
            delta: relative_gain(b.mean, c.mean, conv)?,
            scenario: name,
            base: b,
            cool: c,
        })
    };
    let mut out = scenarios
        .iter()
        .map(|s| row(s.clone(), Some(s)))
        .collect::<Result<Vec<_>>>()?;
    out.push(row("Average".into(), None)?);
    Ok(out)
}

pub fn table2_csv(rows: &[Table2Row]) -> String {
    let mut s = String::from("scenario,base_mean,base_std,cool_mean,cool_std,delta_pct,n\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.scenario, r.base.mean, r.base.std, r.cool.mean, r.cool.std, r.delta, r.base.n
        );
    }
    s
}

pub fn table2_text(rows: &[Table2Row], kind: StdKind, conv: GainConvention) -> String {
    let mut s = format!("# gain: {}; std: {kind:?}\n", conv.describe());
    let _ = writeln!(s, "{:<12} {:>12} {:>12} {:>9}", "", "Base model", "COOL", "Δ%");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<12} {:>12} {:>12} {:>8.2}%",
            r.scenario,
            r.base.cell(),
            r.cool.cell(),
            r.delta
        );
    }
    s
}

pub fn table3_csv(rows: &[GainRow]) -> String {
    let mut s = String::from("scenario,isolated_gain_pct,cumulative_gain_pct\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.scenario, r.isolated_gain, r.cumulative_gain);
    }
    s
}

pub fn table3_text(rows: &[GainRow], conv: GainConvention) -> String {
    let mut s = format!("# gain: {}\n", conv.describe());
    let _ = writeln!(s, "{:<12} {:>14} {:>16}", "", "Isolated gain", "Cumulative gain");
    for r in rows {
        let _ = writeln!(s, "{:<12} {:>13.2}% {:>15.2}%", r.scenario, r.isolated_gain, r.cumulative_gain);
    }
    s
}
