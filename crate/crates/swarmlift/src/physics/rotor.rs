//! Quadratic rotor model for an X-configuration quadrotor: per-rotor thrust
//! `f = k_f * omega^2` and drag torque `tau = k_m * omega^2`, first-order
//! speed lag, and the (orthogonal, hence trivially invertible) allocation
//! between rotor thrusts and the collective-thrust/body-torque wrench.

use crate::geom::Vec3;
use serde::{Deserialize, Serialize};

/// Rotor/propulsion parameters shared by all MAVs of the team.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActuatorParams {
    /// Thrust coefficient `k_f` in N/(rad/s)^2.
    pub thrust_coeff: f64,
    /// Yaw drag coefficient `k_m` in N*m/(rad/s)^2.
    pub torque_coeff: f64,
    /// Distance from body center to each rotor hub (m).
    pub arm_length: f64,
    /// Speed ceiling (rad/s). Commands are clamped to `[0, max]`.
    pub max_rotor_speed: f64,
    /// First-order lag time constant (s) of the speed loop.
    pub time_constant: f64,
}

impl ActuatorParams {
    /// Largest thrust a single rotor can produce.
    pub fn max_rotor_thrust(&self) -> f64 {
        self.thrust_coeff * self.max_rotor_speed * self.max_rotor_speed
    }

    /// Largest collective thrust (all four rotors at the ceiling).
    pub fn max_collective_thrust(&self) -> f64 {
        4.0 * self.max_rotor_thrust()
    }

    /// X layout: rotor arms at 45 degrees off the body axes. Returns the
    /// body-frame hub position and spin sign (+1 yields +z drag torque)
    /// of each rotor.
    pub fn rotor_layout(&self) -> [(Vec3, f64); 4] {
        let d = self.arm_length / std::f64::consts::SQRT_2;
        [
            (Vec3::new(d, d, 0.0), 1.0),
            (Vec3::new(-d, d, 0.0), -1.0),
            (Vec3::new(-d, -d, 0.0), 1.0),
            (Vec3::new(d, -d, 0.0), -1.0),
        ]
    }

    /// Rotor speed that produces thrust `f` on one rotor, clamped to range.
    pub fn speed_for_thrust(&self, f: f64) -> f64 {
        (f.max(0.0) / self.thrust_coeff)
            .sqrt()
            .clamp(0.0, self.max_rotor_speed)
    }
}

/// Instantaneous rotor speeds of one MAV (rad/s).
#[derive(Debug, Clone, Default)]
pub struct ActuatorState {
    pub speeds: [f64; 4],
}

impl ActuatorState {
    /// Speeds such that the vehicle of mass `mass` hovers (per-rotor share).
    pub fn hover(params: &ActuatorParams, mass: f64, gravity: f64) -> Self {
        let w = params.speed_for_thrust(mass * gravity / 4.0);
        ActuatorState { speeds: [w; 4] }
    }
}

/// First-order lag toward the (clamped) commanded speeds:
/// `omega += (dt / tau) * (cmd - omega)`. The blend factor saturates at 1 so
/// coarse steps (dt >= tau) land on the command instead of overshooting.
pub fn rotor_step(params: &ActuatorParams, state: &mut ActuatorState, cmd: &[f64; 4], dt: f64) {
    let k = (dt / params.time_constant).min(1.0);
    for (w, &c) in state.speeds.iter_mut().zip(cmd.iter()) {
        let c = c.clamp(0.0, params.max_rotor_speed);
        *w += k * (c - *w);
    }
}

/// Per-rotor thrusts for the current speeds.
pub fn rotor_thrusts(params: &ActuatorParams, state: &ActuatorState) -> [f64; 4] {
    let mut f = [0.0; 4];
    for j in 0..4 {
        f[j] = params.thrust_coeff * state.speeds[j] * state.speeds[j];
    }
    f
}

/// Body-frame wrench produced by the current rotor speeds: collective thrust
/// along +z and the torque from thrust moments plus spin drag.
pub fn rotor_wrench(params: &ActuatorParams, state: &ActuatorState) -> (f64, Vec3) {
    let layout = params.rotor_layout();
    let mut collective = 0.0;
    let mut torque = Vec3::ZERO;
    for (j, (pos, spin)) in layout.iter().enumerate() {
        let w = state.speeds[j];
        let f = params.thrust_coeff * w * w;
        collective += f;
        // r x (0, 0, f) = (y*f, -x*f, 0)
        torque += Vec3::new(pos.y * f, -pos.x * f, spin * params.torque_coeff * w * w);
    }
    (collective, torque)
}

/// Invert the wrench map: find per-rotor thrusts realizing the desired
/// collective thrust and body torque. The X layout's mixing matrix has
/// mutually orthogonal rows, so the inverse is a scaled transpose. Thrusts
/// are clamped to `[0, max_rotor_thrust]`; returns whether clamping occurred.
pub fn allocate_rotor_thrusts(
    params: &ActuatorParams,
    collective: f64,
    torque: Vec3,
) -> ([f64; 4], bool) {
    let d = params.arm_length / std::f64::consts::SQRT_2;
    let c = params.torque_coeff / params.thrust_coeff;
    // Sign patterns of the forward map's rows (see `rotor_layout`).
    let px = [1.0, 1.0, -1.0, -1.0]; // roll torque / d
    let py = [-1.0, 1.0, 1.0, -1.0]; // pitch torque / d
    let pz = [1.0, -1.0, 1.0, -1.0]; // yaw torque / c
    let fmax = params.max_rotor_thrust();
    let mut f = [0.0; 4];
    let mut saturated = false;
    for j in 0..4 {
        let raw = 0.25
            * (collective + torque.x / d * px[j] + torque.y / d * py[j] + torque.z / c * pz[j]);
        let clamped = raw.clamp(0.0, fmax);
        if (clamped - raw).abs() > 1e-12 {
            saturated = true;
        }
        f[j] = clamped;
    }
    (f, saturated)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> ActuatorParams {
        ActuatorParams {
            thrust_coeff: 1.8167e-6,
            torque_coeff: 2.9067e-8,
            arm_length: 0.15,
            max_rotor_speed: 1500.0,
            time_constant: 0.02,
        }
    }

    #[test]
    fn hover_speeds_produce_exact_weight() {
        let p = params();
        let mass = 0.6;
        let s = ActuatorState::hover(&p, mass, 9.81);
        let (f, tau) = rotor_wrench(&p, &s);
        assert!((f - mass * 9.81).abs() < 1e-9, "collective {f}");
        assert!(tau.norm() < 1e-12, "torque {tau:?}");
    }

    #[test]
    fn thrust_is_quadratic_in_speed() {
        let p = params();
        let s1 = ActuatorState { speeds: [500.0; 4] };
        let s2 = ActuatorState { speeds: [1000.0; 4] };
        let (f1, _) = rotor_wrench(&p, &s1);
        let (f2, _) = rotor_wrench(&p, &s2);
        assert!((f2 / f1 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn first_order_lag_step_response() {
        let p = params();
        let mut s = ActuatorState::default();
        let cmd = [1000.0; 4];
        // Integrate up to t = tau with a fine step; 63.2% of the gap closes.
        let dt = p.time_constant / 2000.0;
        for _ in 0..2000 {
            rotor_step(&p, &mut s, &cmd, dt);
        }
        let frac = s.speeds[0] / 1000.0;
        let expect = 1.0 - (-1.0f64).exp();
        assert!(
            (frac - expect).abs() < 0.01,
            "closed {frac}, expected {expect}"
        );
    }

    #[test]
    fn lag_clamps_command_to_speed_range() {
        let p = params();
        let mut s = ActuatorState { speeds: [1400.0; 4] };
        rotor_step(&p, &mut s, &[1e9; 4], 1.0);
        assert!(s.speeds.iter().all(|&w| w <= p.max_rotor_speed + 1e-9));
        rotor_step(&p, &mut s, &[-50.0; 4], 1.0);
        assert!(s.speeds.iter().all(|&w| w >= -1e-9));
    }

    #[test]
    fn allocation_equal_thrust_when_torque_free() {
        let p = params();
        let (f, sat) = allocate_rotor_thrusts(&p, 8.0, Vec3::ZERO);
        assert!(!sat);
        for fj in f {
            assert!((fj - 2.0).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn prop_allocation_round_trips(
            collective in 0.5..12.0f64,
            tx in -0.2..0.2f64,
            ty in -0.2..0.2f64,
            tz in -0.02..0.02f64,
        ) {
            let p = params();
            let torque = Vec3::new(tx, ty, tz);
            let (f, sat) = allocate_rotor_thrusts(&p, collective, torque);
            prop_assume!(!sat);
            // Reconstruct the wrench from the allocated thrusts.
            let layout = p.rotor_layout();
            let mut col = 0.0;
            let mut tau = Vec3::ZERO;
            let c = p.torque_coeff / p.thrust_coeff;
            for (j, (pos, spin)) in layout.iter().enumerate() {
                col += f[j];
                tau += Vec3::new(pos.y * f[j], -pos.x * f[j], spin * c * f[j]);
            }
            prop_assert!((col - collective).abs() < 1e-9);
            prop_assert!((tau - torque).norm() < 1e-9);
        }
    }
}
