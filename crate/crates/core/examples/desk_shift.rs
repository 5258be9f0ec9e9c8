//! Runs the synthetic distribution-shift experiment and prints the outcome.
//!
//! `cargo run --release -p coolkws --example desk_shift [seed]`

use coolkws::report::{cumulative_curve, scenario_accuracy};
use coolkws::synth::{desk_experiment, DeskConfig};

fn main() -> coolkws::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let t = std::time::Instant::now();
    let cfg = DeskConfig {
        seed,
        ..Default::default()
    };
    let out = desk_experiment(&cfg)?;
    println!(
        "base: val acc {:.3}, hold-out loss {:.4} acc {:.3}",
        out.base_validation.acc, out.base_holdout.loss, out.base_holdout.acc
    );
    for log in [&out.frozen, &out.naive, &out.cool] {
        let segs: Vec<String> = scenario_accuracy(log)
            .iter()
            .map(|s| format!("{} {:.3}", s.scenario, s.accuracy))
            .collect();
        println!(
            "{:<6} whole-run {:.3} final cumulative {:.3} | {}",
            log.mode.name(),
            log.accuracy(),
            cumulative_curve(log)?.last().unwrap_or(0.0),
            segs.join(", ")
        );
    }
    let consolidated = out.cool.decisions.iter().filter(|d| d.consolidated).count();
    println!(
        "cool: {consolidated}/{} updates kept; {:.1}s",
        out.cool.decisions.len(),
        t.elapsed().as_secs_f64()
    );
    Ok(())
}
