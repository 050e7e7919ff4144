//! Evaluate a trained checkpoint on the full-pose setpoint step: a 2 m
//! translation combined with a (30, -20, -90) degree attitude command.
//!
//! Defaults to the desk-scale checkpoint shipped in `artifacts/`; pass a
//! path to evaluate your own run:
//!
//!     cargo run --release --example evaluate_setpoint [CHECKPOINT]

use std::path::PathBuf;

use swarmlift::eval::{
    run_scenario, Scenario, NMPC_ATT_RMSE_DEG, NMPC_POS_RMSE_M, NMPC_TIME_TO_TARGET_S,
};
use swarmlift::marl::Policy;

fn main() -> swarmlift::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| "artifacts/desk_accbr/checkpoint_final.ckpt".into());
    let policy = Policy::from_checkpoint(&path)?;
    let env = policy.env_params()?;

    let mut scenario = Scenario::setpoint_step();
    scenario.repeats = 5;
    scenario.seed = 9;

    println!("evaluating {} ({} repeats)", path.display(), scenario.repeats);
    let report = run_scenario(&policy, &env, &scenario, None)?;
    println!(
        "{:>4} {:>10} {:>14} {:>16} {:>9}",
        "run", "pos RMSE", "att RMSE [deg]", "time-to-target", "reached"
    );
    for (i, run) in report.runs.iter().enumerate() {
        println!(
            "{i:>4} {:>10.3} {:>14.2} {:>16.2} {:>9}",
            run.pos_rmse, run.att_rmse_deg, run.time_to_target, run.reached
        );
    }
    let s = &report.summary;
    println!(
        "mean: pos RMSE {:.3} m, att RMSE {:.2} deg, time-to-target {:.2} s",
        s.pos_rmse, s.att_rmse_deg, s.time_to_target
    );
    println!(
        "offboard NMPC reference: {NMPC_POS_RMSE_M} m, {NMPC_ATT_RMSE_DEG} deg, \
         {NMPC_TIME_TO_TARGET_S} s"
    );
    Ok(())
}
