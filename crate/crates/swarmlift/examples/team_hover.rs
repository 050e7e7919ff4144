//! Hold a three-MAV team in hover with no policy at all.
//!
//! Each MAV gets a zero velocity command, so everything you see comes from
//! the low-level controller: it estimates the cable force pulling on its
//! vehicle and compensates it, which is what keeps the suspended load from
//! dragging the team out of the sky. Each cable settles near its static
//! share of the load weight, 1.4 kg x 9.81 / 3 = 4.58 N.
//!
//! (A zero *acceleration* command holds too from this equilibrium spawn,
//! but only barely: acceleration interfaces preserve velocity rather than
//! position, so the few mm/s left over from the spawn transient never decay
//! and the team drifts centimeters per minute. Rejecting that drift — and
//! everything larger — is the policy's job.)
//!
//!     cargo run --release --example team_hover

use swarmlift::env::{Env, EnvParams};
use swarmlift::geom::Vec3;
use swarmlift::lowlevel::ActionKind;

fn main() -> swarmlift::Result<()> {
    let params = EnvParams {
        action: ActionKind::Vel,
        ..EnvParams::default()
    };
    let n = params.n_mavs;
    let action = vec![0.0; params.action.dim() * n];

    let mut env = Env::new(params, 7, 0)?;
    env.reset_to(Vec3::new(0.0, 0.0, 1.0), 0.0, 15.0);
    let start = env.world().load.pos;

    println!("holding {n} MAVs + 1.4 kg load with zero velocity commands");
    println!("{:>5} {:>12} {:>12} {:>22}", "t [s]", "drift [m]", "speed [m/s]", "tensions [N]");
    for step in 1..=500 {
        let outcome = env.step(&action)?;
        if let Some(reason) = outcome.terminated {
            println!("terminated: {reason:?}");
            return Ok(());
        }
        if step % 100 == 0 {
            let load = &env.world().load;
            let tensions: Vec<String> =
                env.tensions().iter().map(|t| format!("{t:6.2}")).collect();
            println!(
                "{:5.1} {:12.4} {:12.4}   [{}]",
                env.time(),
                (load.pos - start).norm(),
                load.vel.norm(),
                tensions.join(" ")
            );
        }
    }
    println!("still flying after 5 s; the compensation is doing its job");
    Ok(())
}
