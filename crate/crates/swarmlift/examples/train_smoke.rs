//! Train a miniature policy end to end in a few seconds.
//!
//! Two environments, short rollouts, a tiny network: nothing here learns to
//! fly, but every stage of the pipeline runs — parallel collection, reward
//! normalization, advantage filtering, the clipped-surrogate update, and
//! checkpointing — and the run is bit-reproducible for a fixed seed.
//!
//!     cargo run --release --example train_smoke

use swarmlift::env::EnvParams;
use swarmlift::marl::{Trainer, TrainerParams};

fn main() -> swarmlift::Result<()> {
    let env = EnvParams {
        episode_duration: 2.0,
        ..EnvParams::default()
    };
    let params = TrainerParams {
        n_envs: 2,
        rollout_len: 64,
        minibatches: 2,
        hidden: vec![32, 32],
        total_env_steps: 1024,
        ..TrainerParams::default()
    };

    let out = std::env::temp_dir().join("swarmlift_train_smoke");
    let mut trainer = Trainer::new(env, params, 0)?;
    let report = trainer.train(&out, false)?;

    println!();
    println!(
        "{} iterations, {} env steps, {:.2}s wall",
        report.iterations, report.env_steps, report.wall_s
    );
    println!("metrics    -> {}", report.metrics_path.display());
    println!("checkpoint -> {}", report.checkpoint_path.display());
    println!("(rerun with the same seed and the files are byte-identical)");
    Ok(())
}
