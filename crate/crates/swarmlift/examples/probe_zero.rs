use rand::Rng;
use swarmlift::env::{Env, EnvParams};
use swarmlift::physics::GRAVITY;
use swarmlift::rng;

fn main() -> swarmlift::Result<()> {
    let params = EnvParams::default();
    let n = params.n_mavs;
    let dim = params.action.dim() * n;
    let weight = (n as f64 * params.mav_mass + params.load_mass) * GRAVITY;
    let fmax = params.actuator.thrust_coeff * params.actuator.max_rotor_speed.powi(2);
    println!("total weight {weight:.2} N, rotor max {fmax:.2} N");

    for sigma in [0.0, 0.3, 0.6, 1.0, 1.5] {
        let mut env = Env::new(params.clone(), 3, 0)?;
        let mut r = rng::stream(99, 5);
        let mut thrust_sum = 0.0;
        let mut vert_sum = 0.0;
        let mut sat_hi = 0usize;
        let mut rotor_ticks = 0usize;
        let mut steps = 0usize;
        let mut end_times = Vec::new();
        for _ in 0..8 {
            env.reset()?;
            for step in 0..2000 {
                let a: Vec<f64> = (0..dim).map(|_| sigma * r.gen_range(-1.732..1.732)).collect();
                let out = env.step(&a)?;
                let w = env.world();
                for (i, rot) in w.rotors.iter().enumerate() {
                    let up = w.mavs[i].quat.body_z();
                    for s in rot.speeds {
                        let f = params.actuator.thrust_coeff * s * s;
                        thrust_sum += f;
                        vert_sum += f * up.z;
                        if s >= params.actuator.max_rotor_speed * 0.999 {
                            sat_hi += 1;
                        }
                        rotor_ticks += 1;
                    }
                }
                steps += 1;
                if let Some(_why) = out.terminated {
                    end_times.push((step + 1) as f64 * 0.01);
                    break;
                }
            }
            if end_times.len() < 8 && steps % 2000 == 0 {
                end_times.push(20.0);
            }
        }
        println!(
            "sigma {sigma:.1}: mean |thrust| {:.2} N  mean vertical {:.2} N  (weight {weight:.2})  sat_hi {:.1}%  mean end {:.2}s",
            thrust_sum / steps as f64,
            vert_sum / steps as f64,
            100.0 * sat_hi as f64 / rotor_ticks as f64,
            end_times.iter().sum::<f64>() / end_times.len().max(1) as f64,
        );
    }
    Ok(())
}
