use swarmlift::env::{Env, EnvParams};
use swarmlift::geom::Vec3;

fn main() -> swarmlift::Result<()> {
    let params = EnvParams::default();
    let n = params.n_mavs;
    let action = vec![0.0; params.action.dim() * n];
    let mut env = Env::new(params, 7, 0)?;
    env.reset_to(Vec3::new(0.0, 0.0, 1.0), 0.0, 15.0);
    let start = env.world().load.pos;
    for step in 1..=2000 {
        let out = env.step(&action)?;
        if let Some(reason) = out.terminated {
            println!("terminated at {:.2}s: {reason:?}", step as f64 * 0.01);
            return Ok(());
        }
        if step % 400 == 0 {
            let load = &env.world().load;
            println!(
                "t {:5.1}  drift {:.4} m  speed {:.4} m/s",
                env.time(),
                (load.pos - start).norm(),
                load.vel.norm()
            );
        }
    }
    Ok(())
}
