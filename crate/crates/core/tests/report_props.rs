mod common;

use coolkws::online::{OnlineConfig, RunLog, RunMeta, RunMode, WindowRecord};
use coolkws::report::{
    aggregate, cumulative_curve, relative_gain, scenario_accuracy, sequential_gains, sequential_gains_across,
    GainConvention, ScenarioAccuracy, StdKind,
};
use coolkws::stream::ScenarioMark;
use coolkws::Label;
use proptest::prelude::*;
use rand::Rng;

fn synthetic_log(correct: &[bool], cuts: &[usize], mode: RunMode, task: &str) -> RunLog {
    RunLog {
        mode,
        meta: RunMeta {
            task: task.into(),
            ..Default::default()
        },
        config: OnlineConfig::default(),
        records: correct
            .iter()
            .enumerate()
            .map(|(i, &c)| WindowRecord {
                index: i,
                origin_sample: i * 1600,
                label: Label::NonTarget,
                predicted: if c { Label::NonTarget } else { Label::Target },
                correct: c,
            })
            .collect(),
        decisions: vec![],
        scenarios: cuts
            .iter()
            .enumerate()
            .map(|(k, &c)| ScenarioMark {
                name: format!("S{k}"),
                start_sample: c * 1600,
            })
            .collect(),
        l_v: None,
        final_holdout_loss: None,
    }
}

fn random_pair(seed: u64) -> (RunLog, RunLog) {
    let mut r = common::rng(seed);
    let n = r.gen_range(20..200);
    let mut cuts = vec![0];
    for _ in 0..r.gen_range(0..5) {
        cuts.push(r.gen_range(1..n));
    }
    cuts.sort();
    cuts.dedup();
    let base: Vec<bool> = (0..n).map(|_| r.gen_bool(0.5)).collect();
    let mut cool: Vec<bool> = (0..n).map(|_| r.gen_bool(0.8)).collect();
    // gains are undefined for a segment the adapted model gets entirely wrong
    for &c in &cuts {
        cool[c] = true;
    }
    (
        synthetic_log(&base, &cuts, RunMode::Frozen, "t"),
        synthetic_log(&cool, &cuts, RunMode::Cool, "t"),
    )
}

proptest! {
    #[test]
    fn gain_is_zero_at_equality(a in 1e-6f64..=1.0) {
        prop_assert_eq!(relative_gain(a, a, GainConvention::RelativeToCool).unwrap(), 0.0);
    }

    #[test]
    fn curve_stays_in_bounds(seed in any::<u64>()) {
        let (base, _) = random_pair(seed);
        let c = cumulative_curve(&base).unwrap();
        for (k, p) in c.points.iter().enumerate() {
            prop_assert!((0.0..=1.0).contains(&p.cumulative_accuracy));
            if k > 0 {
                prop_assert!((p.cumulative_accuracy - c.points[k - 1].cumulative_accuracy).abs() <= 1.0 / (k + 1) as f64 + 1e-15);
            }
        }
        prop_assert_eq!(c.last().unwrap(), base.accuracy());
    }

    #[test]
    fn pooled_counts_recover_whole_run(seed in any::<u64>()) {
        let (base, _) = random_pair(seed);
        let rows = scenario_accuracy(&base);
        let c: usize = rows.iter().map(|r| r.correct).sum();
        let n: usize = rows.iter().map(|r| r.window_count).sum();
        prop_assert_eq!(n, base.records.len());
        prop_assert_eq!(c, base.records.iter().filter(|r| r.correct).count());
        let weighted: f64 = rows.iter().map(|r| r.accuracy * r.window_count as f64).sum::<f64>() / n as f64;
        prop_assert!((weighted - base.accuracy()).abs() < 1e-12);
    }

    #[test]
    fn cumulative_gain_is_gain_of_pooled_counts(seed in any::<u64>()) {
        let (base, cool) = random_pair(seed);
        let rows = sequential_gains(&base, &cool, GainConvention::RelativeToCool).unwrap();
        let mut end = 0;
        for (k, row) in rows.iter().enumerate() {
            end = match base.scenarios.get(k + 1) {
                Some(m) => m.start_sample / 1600,
                None => base.records.len(),
            };
            let pooled = |l: &RunLog| l.records[..end].iter().filter(|r| r.correct).count() as f64 / end as f64;
            let want = relative_gain(pooled(&base), pooled(&cool), GainConvention::RelativeToCool).unwrap();
            prop_assert_eq!(row.cumulative_gain, want);
        }
        prop_assert_eq!(end, base.records.len());
        let whole = relative_gain(base.accuracy(), cool.accuracy(), GainConvention::RelativeToCool).unwrap();
        prop_assert_eq!(rows.last().unwrap().cumulative_gain, whole);
    }

    #[test]
    fn single_row_aggregate_is_identity(acc in 0.0f64..=1.0) {
        let row = ScenarioAccuracy {
            scenario: "Clean".into(), segment: 0, task: "yes".into(), mode: RunMode::Cool,
            accuracy: acc, correct: 0, window_count: 1,
        };
        let a = aggregate(&[row], StdKind::Population).unwrap();
        prop_assert_eq!((a[0].stats.mean, a[0].stats.std), (acc, 0.0));
    }
}

#[test]
fn eight_task_aggregate_matches_recomputation() {
    let accs = [0.52, 0.91, 0.33, 0.77, 0.64, 0.48, 0.85, 0.59];
    let rows: Vec<_> = accs
        .iter()
        .enumerate()
        .map(|(i, &a)| ScenarioAccuracy {
            scenario: "GunShot".into(),
            segment: 0,
            task: format!("w{i}"),
            mode: RunMode::Frozen,
            accuracy: a,
            correct: 0,
            window_count: 1,
        })
        .collect();
    let a = aggregate(&rows, StdKind::Population).unwrap();
    // spreadsheet AVERAGE and STDEV.P
    let mean = 5.09 / 8.0;
    let var = accs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 8.0;
    assert!((a[0].stats.mean - mean).abs() < 1e-12);
    assert!((a[0].stats.std - var.sqrt()).abs() < 1e-12);
    let s = aggregate(&rows, StdKind::Sample).unwrap();
    assert!((s[0].stats.std - (var * 8.0 / 7.0).sqrt()).abs() < 1e-12);
}

#[test]
fn across_tasks_uses_mean_accuracies() {
    let cuts = [0usize, 10, 30];
    let mut r = common::rng(9);
    let pairs: Vec<_> = (0..3)
        .map(|_| {
            let b: Vec<bool> = (0..50).map(|_| r.gen_bool(0.5)).collect();
            let c: Vec<bool> = (0..50).map(|_| r.gen_bool(0.8)).collect();
            (
                synthetic_log(&b, &cuts, RunMode::Frozen, "t"),
                synthetic_log(&c, &cuts, RunMode::Cool, "t"),
            )
        })
        .collect();
    let rows = sequential_gains_across(&pairs, GainConvention::RelativeToCool).unwrap();
    let acc = |l: &RunLog, lo: usize, hi: usize| l.records[lo..hi].iter().filter(|r| r.correct).count() as f64 / (hi - lo) as f64;
    let mb: f64 = pairs.iter().map(|p| acc(&p.0, 10, 30)).sum::<f64>() / 3.0;
    let mc: f64 = pairs.iter().map(|p| acc(&p.1, 10, 30)).sum::<f64>() / 3.0;
    assert!((rows[1].isolated_gain - 100.0 * (mc - mb) / mc).abs() < 1e-12);
}
