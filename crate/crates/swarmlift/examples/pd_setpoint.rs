//! Fly a 2 m setpoint step with a hand-tuned PD law instead of a policy.
//!
//! Each MAV holds its own spawn offset relative to the commanded load
//! position, so the team translates rigidly. No learning is involved; this
//! is the same scripted law the heterogeneous-teammate scenario uses, and it
//! shows what the action interfaces look like from caller code.
//!
//!     cargo run --release --example pd_setpoint

use swarmlift::env::{Env, EnvParams};
use swarmlift::eval::pd_override_action;
use swarmlift::geom::Vec3;

fn main() -> swarmlift::Result<()> {
    let params = EnvParams::default();
    let (n, dim) = (params.n_mavs, params.action.dim());
    let kind = params.action;

    let mut env = Env::new(params, 11, 0)?;
    env.reset_to(Vec3::new(0.0, 0.0, 1.0), 0.0, 10.0);
    let start = env.goal().0;
    let target = start + Vec3::new(2.0, 0.0, 0.0);

    // Per-MAV formation offsets captured at spawn, preserved during the move.
    let offsets: Vec<Vec3> = (0..n).map(|i| env.world().mavs[i].pos - start).collect();

    // Settle for a second, then command the step.
    let mut action = vec![0.0; dim * n];
    for step in 0..1100 {
        if step == 100 {
            env.set_goal(target, env.goal().1);
            println!("t={:4.1}s  commanding +2 m step in x", env.time());
        }
        let goal = env.goal().0;
        for i in 0..n {
            let setpoint = goal + offsets[i];
            pd_override_action(kind, setpoint, &env.world().mavs[i], &mut action[i * dim..(i + 1) * dim])?;
        }
        let outcome = env.step(&action)?;
        if let Some(reason) = outcome.terminated {
            println!("terminated: {reason:?}");
            return Ok(());
        }
        if step % 200 == 99 {
            let err = (env.world().load.pos - goal).norm();
            println!("t={:4.1}s  load-to-goal error {err:6.3} m", env.time());
        }
    }
    let final_err = (env.world().load.pos - target).norm();
    println!("final error {final_err:.3} m after 10 s of PD flight");
    Ok(())
}
