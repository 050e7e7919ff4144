//! Kill one MAV mid-hover and watch the remaining two hold the load.
//!
//! The failed vehicle's rotors spin down and it becomes dead weight on its
//! cable; nobody tells the survivors, which only see its one-hot identity
//! and their own observations. The decentralized policy has to absorb the
//! lost lift and the shifted equilibrium on its own.
//!
//!     cargo run --release --example mav_failure [CHECKPOINT]

use std::path::PathBuf;

use swarmlift::eval::{run_scenario, Scenario};
use swarmlift::marl::Policy;

fn main() -> swarmlift::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| "artifacts/desk_accbr/checkpoint_final.ckpt".into());
    let policy = Policy::from_checkpoint(&path)?;
    let env = policy.env_params()?;

    let mut scenario = Scenario::mav_failure();
    scenario.repeats = 3;
    scenario.seed = 21;

    println!("cutting MAV 0 after settle; scoring 10 s of degraded flight");
    let report = run_scenario(&policy, &env, &scenario, None)?;
    for (i, run) in report.runs.iter().enumerate() {
        println!(
            "run {i}: worst position error {:6.3} m, completed {}",
            run.pos_max, run.completed
        );
    }
    let bounded = report.runs.iter().filter(|r| r.completed && r.pos_max < 1.0).count();
    println!(
        "{bounded}/{} runs kept the load within 1 m of the goal throughout",
        report.runs.len()
    );
    Ok(())
}
