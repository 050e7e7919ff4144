//! Track a figure-eight with a trained policy and dump the flight log.
//!
//! The reference is a 4 m x 2 m lemniscate flown over one period (~14 s)
//! with peak speed 1.0 m/s and peak acceleration 0.5 m/s^2. The time-series
//! CSV (goal pose, load pose, per-MAV positions, raw commands) lands next to
//! the metrics so it can be plotted directly.
//!
//!     cargo run --release --example figure_eight [CHECKPOINT]

use std::path::PathBuf;

use swarmlift::eval::{figure_eight_period, run_scenario, Scenario};
use swarmlift::marl::Policy;

fn main() -> swarmlift::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| "artifacts/desk_accbr/checkpoint_final.ckpt".into());
    let policy = Policy::from_checkpoint(&path)?;
    let env = policy.env_params()?;

    let mut scenario = Scenario::figure_eight();
    scenario.seed = 5;
    let out = std::env::temp_dir().join("swarmlift_figure_eight");

    println!(
        "flying one {:.2} s lemniscate period with {}",
        figure_eight_period(),
        path.display()
    );
    let report = run_scenario(&policy, &env, &scenario, Some(&out))?;
    let s = &report.summary;
    println!(
        "pos RMSE {:.3} m, att RMSE {:.2} deg, worst position error {:.3} m",
        s.pos_rmse,
        s.att_rmse_deg,
        report.runs[0].pos_max
    );
    println!("flight log -> {}", out.join("series_0.csv").display());
    Ok(())
}
