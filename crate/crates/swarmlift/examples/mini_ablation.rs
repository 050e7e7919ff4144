//! Compare the four action spaces at toy scale with equal budgets.
//!
//! Real ablations take a full training budget per arm; this one shrinks
//! everything (2 environments, a tiny network, a few thousand steps) so the
//! whole four-way comparison finishes in about a minute. The numbers are
//! meaningless at this scale — what the example shows is the machinery:
//! every arm gets an identical budget, trains, evaluates on the same
//! scenario, and lands in one comparison table.
//!
//!     cargo run --release --example mini_ablation

use swarmlift::env::EnvParams;
use swarmlift::eval::{ablation_suite, AblationKind, Scenario};
use swarmlift::marl::TrainerParams;

fn main() -> swarmlift::Result<()> {
    let env = EnvParams {
        episode_duration: 2.0,
        ..EnvParams::default()
    };
    let trainer = TrainerParams {
        n_envs: 2,
        rollout_len: 64,
        minibatches: 2,
        hidden: vec![32, 32],
        total_env_steps: 2048,
        ..TrainerParams::default()
    };
    let mut scenario = Scenario::hover();
    scenario.duration = 3.0;

    let out = std::env::temp_dir().join("swarmlift_mini_ablation");
    let table = ablation_suite(
        AblationKind::ActionSpace,
        &env,
        &trainer,
        &scenario,
        3,
        &out,
        true,
    )?;

    println!("{}", std::fs::read_to_string(&table)?);
    println!("table -> {}", table.display());
    Ok(())
}
