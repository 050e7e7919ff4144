//! Onboard low-level controller: turns high-level action commands into rotor
//! speed commands at 300 Hz while compensating external (cable) forces.
//!
//! The force estimator is filter-based rather than model-based: the residual
//! between filtered measured acceleration and filtered applied thrust,
//! `f_ext = m * a_filtered - f_thrust_filtered`, where both signals pass
//! through *identical* second-order Butterworth low-passes so their phase
//! lags match and the difference stays meaningful during transients.
//!
//! Action spaces:
//! * `Accbr` - linear acceleration reference + body-rate feedforward (full
//!   cascade, the default);
//! * `Acc`   - acceleration reference only;
//! * `Vel`   - velocity reference, converted by a proportional outer loop;
//! * `Ctbr`  - collective thrust + body rates, bypassing the acceleration
//!   and attitude loops entirely (rate loop and allocation only).

use crate::geom::{Quat, Vec3};
use crate::physics::{
    allocate_rotor_thrusts, gravity_vec, rotor_wrench, ActuatorParams, ActuatorState,
    RigidBodyState,
};
use serde::{Deserialize, Serialize};

// ---------------------------------------------------------------------------
// Butterworth low-pass
// ---------------------------------------------------------------------------

/// Coefficients of a discrete second-order Butterworth low-pass (bilinear
/// transform with frequency pre-warping).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ButterworthCoeffs {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl ButterworthCoeffs {
    pub fn design(cutoff_hz: f64, sample_hz: f64) -> Self {
        assert!(
            cutoff_hz > 0.0 && cutoff_hz < sample_hz / 2.0,
            "cutoff must lie below Nyquist"
        );
        let k = (std::f64::consts::PI * cutoff_hz / sample_hz).tan();
        let k2 = k * k;
        let norm = 1.0 / (1.0 + std::f64::consts::SQRT_2 * k + k2);
        ButterworthCoeffs {
            b0: k2 * norm,
            b1: 2.0 * k2 * norm,
            b2: k2 * norm,
            a1: 2.0 * (k2 - 1.0) * norm,
            a2: (1.0 - std::f64::consts::SQRT_2 * k + k2) * norm,
        }
    }
}

/// Second-order low-pass over `Vec3` signals (three identical channels),
/// direct form II transposed.
#[derive(Debug, Clone)]
pub struct LowPass3 {
    coeffs: ButterworthCoeffs,
    s1: Vec3,
    s2: Vec3,
}

impl LowPass3 {
    pub fn new(cutoff_hz: f64, sample_hz: f64) -> Self {
        LowPass3 {
            coeffs: ButterworthCoeffs::design(cutoff_hz, sample_hz),
            s1: Vec3::ZERO,
            s2: Vec3::ZERO,
        }
    }

    pub fn coeffs(&self) -> ButterworthCoeffs {
        self.coeffs
    }

    /// Set the internal state to the steady state for constant input `x`,
    /// so the first output equals `x` with no start-up transient.
    pub fn reset_to(&mut self, x: Vec3) {
        let c = self.coeffs;
        // Steady state of DF2T for constant input/output pair (x, x):
        // s1 = (b1 - a1) x + s2;  s2 = (b2 - a2) x.
        self.s2 = x * (c.b2 - c.a2);
        self.s1 = x * (c.b1 - c.a1) + self.s2;
    }

    pub fn update(&mut self, x: Vec3) -> Vec3 {
        let c = self.coeffs;
        let y = x * c.b0 + self.s1;
        self.s1 = x * c.b1 - y * c.a1 + self.s2;
        self.s2 = x * c.b2 - y * c.a2;
        y
    }
}

// ---------------------------------------------------------------------------
// Actions
// ---------------------------------------------------------------------------

/// Which high-level command set the policy emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Accbr,
    Acc,
    Vel,
    Ctbr,
}

impl ActionKind {
    /// Per-agent action dimension.
    pub fn dim(self) -> usize {
        match self {
            ActionKind::Accbr => 6,
            ActionKind::Acc => 3,
            ActionKind::Vel => 3,
            ActionKind::Ctbr => 4,
        }
    }

    /// Slice of a raw action vector holding body rates, if this kind has any.
    pub fn rate_slice(self, raw: &[f64]) -> Option<&[f64]> {
        match self {
            ActionKind::Accbr => Some(&raw[3..6]),
            ActionKind::Ctbr => Some(&raw[1..4]),
            _ => None,
        }
    }
}

impl std::fmt::Display for ActionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ActionKind::Accbr => "accbr",
            ActionKind::Acc => "acc",
            ActionKind::Vel => "vel",
            ActionKind::Ctbr => "ctbr",
        })
    }
}

impl std::str::FromStr for ActionKind {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> crate::error::Result<ActionKind> {
        match s {
            "accbr" => Ok(ActionKind::Accbr),
            "acc" => Ok(ActionKind::Acc),
            "vel" => Ok(ActionKind::Vel),
            "ctbr" => Ok(ActionKind::Ctbr),
            other => Err(crate::error::Error::Config(format!(
                "unknown action kind {other:?}"
            ))),
        }
    }
}

/// Componentwise command limits applied before execution.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ActionBounds {
    /// Acceleration reference bound per axis (m/s^2).
    pub accel: f64,
    /// Body-rate reference bound per axis (rad/s).
    pub rate: f64,
    /// Velocity reference bound per axis (m/s).
    pub velocity: f64,
}

impl Default for ActionBounds {
    fn default() -> Self {
        ActionBounds { accel: 5.0, rate: 2.0, velocity: 2.0 }
    }
}

/// A clamped, executable high-level command.
#[derive(Debug, Clone, Copy)]
pub enum Action {
    Accbr { accel: Vec3, rates: Vec3 },
    Acc { accel: Vec3 },
    Vel { velocity: Vec3 },
    /// `thrust` is the collective thrust in newtons (already mapped from the
    /// policy's normalized output).
    Ctbr { thrust: f64, rates: Vec3 },
}

impl Action {
    /// Clamp a raw policy output into an executable command. `raw` must have
    /// exactly `kind.dim()` entries. For `Ctbr`, the first entry is treated
    /// as normalized thrust in [-1, 1] and mapped affinely onto
    /// `[0, max_collective]`.
    pub fn from_raw(kind: ActionKind, raw: &[f64], bounds: &ActionBounds, max_collective: f64) -> Action {
        assert_eq!(raw.len(), kind.dim(), "raw action has wrong dimension");
        let vec3 = |s: &[f64], b: f64| Vec3::new(s[0], s[1], s[2]).clamp_abs(b);
        match kind {
            ActionKind::Accbr => Action::Accbr {
                accel: vec3(&raw[0..3], bounds.accel),
                rates: vec3(&raw[3..6], bounds.rate),
            },
            ActionKind::Acc => Action::Acc { accel: vec3(&raw[0..3], bounds.accel) },
            ActionKind::Vel => Action::Vel { velocity: vec3(&raw[0..3], bounds.velocity) },
            ActionKind::Ctbr => Action::Ctbr {
                thrust: (raw[0].clamp(-1.0, 1.0) + 1.0) * 0.5 * max_collective,
                rates: vec3(&raw[1..4], bounds.rate),
            },
        }
    }
}

// ---------------------------------------------------------------------------
// Controller
// ---------------------------------------------------------------------------

/// Controller tuning. The rate loop has time constant `1/rate_gain`; the
/// attitude loop sits on top with natural frequency
/// `sqrt(rate_gain * attitude_gain)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LowLevelParams {
    pub attitude_gain: f64,
    pub rate_gain: f64,
    /// Outer proportional gain mapping velocity error to acceleration.
    pub velocity_gain: f64,
    pub filter_cutoff_hz: f64,
    /// Controller sample rate (Hz); also the filters' sample rate.
    pub rate_hz: f64,
    /// Specific-thrust magnitude (m/s^2) below which the acceleration
    /// command would demand free fall; the controller then holds attitude at
    /// this minimum instead of inverting a near-zero direction.
    pub min_specific_thrust: f64,
    /// Disable to fly without external-force compensation (ablation hook).
    pub compensation: bool,
}

impl Default for LowLevelParams {
    fn default() -> Self {
        LowLevelParams {
            attitude_gain: 8.0,
            rate_gain: 24.0,
            velocity_gain: 3.0,
            filter_cutoff_hz: 10.0,
            rate_hz: 300.0,
            min_specific_thrust: 0.5,
            compensation: true,
        }
    }
}

/// Counters for exceptional controller events, reset per episode.
#[derive(Debug, Clone, Copy, Default)]
pub struct LowLevelEvents {
    /// Acceleration commands that demanded (near) free fall and were clamped
    /// to the minimum-thrust attitude hold.
    pub free_fall_clamps: u64,
    /// Allocation outputs clipped against rotor thrust limits.
    pub saturations: u64,
}

/// Per-MAV low-level controller state.
#[derive(Debug, Clone)]
pub struct LowLevel {
    pub params: LowLevelParams,
    mass: f64,
    inertia: Vec3,
    actuator: ActuatorParams,
    accel_filter: LowPass3,
    thrust_filter: LowPass3,
    /// Heading reference held fixed over an episode (set at reset).
    pub yaw_ref: f64,
    pub events: LowLevelEvents,
    last_force_estimate: Vec3,
}

impl LowLevel {
    pub fn new(params: LowLevelParams, mass: f64, inertia: Vec3, actuator: ActuatorParams) -> Self {
        let accel_filter = LowPass3::new(params.filter_cutoff_hz, params.rate_hz);
        let thrust_filter = LowPass3::new(params.filter_cutoff_hz, params.rate_hz);
        LowLevel {
            params,
            mass,
            inertia,
            actuator,
            accel_filter,
            thrust_filter,
            yaw_ref: 0.0,
            events: LowLevelEvents::default(),
            last_force_estimate: Vec3::ZERO,
        }
    }

    /// Both filters must run with identical coefficients for the residual
    /// `m a - f` to cancel correctly during transients.
    pub fn filters_matched(&self) -> bool {
        self.accel_filter.coeffs() == self.thrust_filter.coeffs()
    }

    /// Prepare for a new episode: hold heading `yaw_ref`, warm-start the
    /// filters at the hover operating point of the current rotor state.
    pub fn reset(&mut self, yaw_ref: f64, state: &RigidBodyState, rotors: &ActuatorState) {
        self.yaw_ref = yaw_ref;
        self.events = LowLevelEvents::default();
        // At-rest accelerometer reading is -g (specific force).
        self.accel_filter.reset_to(-gravity_vec());
        let (collective, _) = rotor_wrench(&self.actuator, rotors);
        self.thrust_filter
            .reset_to(state.quat.rotate(Vec3::new(0.0, 0.0, collective)));
        self.last_force_estimate = Vec3::ZERO;
    }

    /// Latest external-force estimate (world frame, newtons).
    pub fn force_estimate(&self) -> Vec3 {
        self.last_force_estimate
    }

    /// One 300 Hz controller tick: consume the current IMU specific-force
    /// reading and rotor speeds, produce rotor speed commands.
    pub fn command(
        &mut self,
        action: &Action,
        state: &RigidBodyState,
        accel_meas: Vec3,
        rotors: &ActuatorState,
    ) -> [f64; 4] {
        // Force estimate: runs every tick regardless of action kind so the
        // filter states stay warm.
        let (collective_now, _) = rotor_wrench(&self.actuator, rotors);
        let thrust_world = state.quat.rotate(Vec3::new(0.0, 0.0, collective_now));
        let a_f = self.accel_filter.update(accel_meas);
        let f_f = self.thrust_filter.update(thrust_world);
        // The accelerometer measures specific force a - g, so add g back to
        // compare against applied thrust: m(a - g) - f = f_ext - m g ... with
        // the -g convention folded in, f_ext = m * a_f - f_f directly uses
        // the specific-force reading (gravity never appears in either term).
        let f_ext = if self.params.compensation {
            a_f * self.mass - f_f
        } else {
            Vec3::ZERO
        };
        self.last_force_estimate = a_f * self.mass - f_f;

        let g = gravity_vec();
        let (z_des, omega_ff, collective_des) = match *action {
            Action::Ctbr { thrust, rates } => (None, rates, thrust),
            Action::Accbr { accel, rates } => {
                let (z, f) = self.acceleration_setpoint(accel, f_ext, g, state);
                (z, rates, f)
            }
            Action::Acc { accel } => {
                let (z, f) = self.acceleration_setpoint(accel, f_ext, g, state);
                (z, Vec3::ZERO, f)
            }
            Action::Vel { velocity } => {
                let accel = (velocity - state.vel) * self.params.velocity_gain;
                let (z, f) = self.acceleration_setpoint(accel, f_ext, g, state);
                (z, Vec3::ZERO, f)
            }
        };

        let (thrusts, saturated) = attitude_rate_control(
            &self.params,
            self.inertia,
            &self.actuator,
            state.quat,
            state.ang_vel,
            z_des,
            omega_ff,
            collective_des,
            self.yaw_ref,
        );
        if saturated {
            self.events.saturations += 1;
        }
        let mut speeds = [0.0; 4];
        for (s, f) in speeds.iter_mut().zip(thrusts) {
            *s = self.actuator.speed_for_thrust(f);
        }
        speeds
    }

    /// Desired thrust direction and collective magnitude realizing `a_ref`
    /// against gravity and the estimated external force. Near-free-fall
    /// demands collapse to a minimum-thrust attitude hold.
    fn acceleration_setpoint(
        &mut self,
        a_ref: Vec3,
        f_ext: Vec3,
        g: Vec3,
        state: &RigidBodyState,
    ) -> (Option<Vec3>, f64) {
        let t = a_ref - g - f_ext / self.mass;
        let n = t.norm();
        if n < self.params.min_specific_thrust {
            self.events.free_fall_clamps += 1;
            (
                Some(state.quat.body_z()),
                self.mass * self.params.min_specific_thrust,
            )
        } else {
            (Some(t / n), self.mass * n)
        }
    }
}

/// Cascaded attitude -> body-rate -> allocation step, shared by every action
/// variant. `z_des = None` skips attitude control entirely (pure rate mode).
/// Returns per-rotor thrusts and whether allocation saturated.
#[allow(clippy::too_many_arguments)]
pub fn attitude_rate_control(
    params: &LowLevelParams,
    inertia: Vec3,
    actuator: &ActuatorParams,
    quat: Quat,
    ang_vel_world: Vec3,
    z_des: Option<Vec3>,
    omega_ff_body: Vec3,
    collective: f64,
    yaw_ref: f64,
) -> ([f64; 4], bool) {
    let omega_body = quat.rotate_inv(ang_vel_world);

    let omega_sp = match z_des {
        None => omega_ff_body,
        Some(z) => {
            let r = quat.to_matrix();
            let r_des = frame_from_z_yaw(z, yaw_ref);
            // e_R = 1/2 vee(R_des^T R - R^T R_des)
            let a = r_des.transpose().matmul(&r);
            let e = Vec3::new(
                a.get(2, 1) - a.get(1, 2),
                a.get(0, 2) - a.get(2, 0),
                a.get(1, 0) - a.get(0, 1),
            ) * 0.5;
            omega_ff_body - e * params.attitude_gain
        }
    };

    // Rate loop with gyroscopic feedforward.
    let iw = Vec3::new(
        inertia.x * omega_body.x,
        inertia.y * omega_body.y,
        inertia.z * omega_body.z,
    );
    let err = omega_sp - omega_body;
    let torque = Vec3::new(
        inertia.x * params.rate_gain * err.x,
        inertia.y * params.rate_gain * err.y,
        inertia.z * params.rate_gain * err.z,
    ) + omega_body.cross(iw);

    let collective = collective.clamp(0.0, actuator.max_collective_thrust());
    allocate_rotor_thrusts(actuator, collective, torque)
}

/// Right-handed frame whose z-axis is `z_des` and whose x-axis heading is as
/// close to `yaw` as the tilt allows. Falls back to the y-heading when the
/// desired z is (anti)parallel to the heading vector.
fn frame_from_z_yaw(z_des: Vec3, yaw: f64) -> crate::geom::RotMat {
    let z = z_des.normalized().unwrap_or(Vec3::Z);
    let x_c = Vec3::new(yaw.cos(), yaw.sin(), 0.0);
    let y = match z.cross(x_c).normalized() {
        Some(y) if z.cross(x_c).norm() > 1e-6 => y,
        _ => {
            let y_c = Vec3::new(-yaw.sin(), yaw.cos(), 0.0);
            (y_c - z * y_c.dot(z)).normalized().unwrap_or(Vec3::Y)
        }
    };
    let x = y.cross(z);
    crate::geom::RotMat::from_columns(x, y, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{
        accelerometer, step, BodyParams, SystemModel, WorldState, GRAVITY,
    };

    fn actuator() -> ActuatorParams {
        ActuatorParams {
            thrust_coeff: 1.8167e-6,
            torque_coeff: 2.9067e-8,
            arm_length: 0.15,
            max_rotor_speed: 1500.0,
            time_constant: 0.02,
        }
    }

    fn mav_params() -> BodyParams {
        BodyParams { mass: 0.6, inertia: Vec3::new(0.005, 0.005, 0.009) }
    }

    fn single_mav_model() -> SystemModel {
        SystemModel::new(
            1,
            mav_params(),
            BodyParams { mass: 1.4, inertia: Vec3::new(0.015, 0.015, 0.028) },
            vec![],
            actuator(),
            4,
            8,
        )
        .unwrap()
    }

    fn hover_world(model: &SystemModel) -> WorldState {
        let mut world = WorldState::new(1, 0);
        world.mavs[0].pos = Vec3::new(0.0, 0.0, 1.0);
        world.rotors[0] = ActuatorState::hover(&model.actuator, model.mav.mass, GRAVITY);
        world
    }

    fn controller() -> LowLevel {
        LowLevel::new(LowLevelParams::default(), 0.6, mav_params().inertia, actuator())
    }

    /// Run one MAV closed-loop at 300 Hz under a constant action.
    fn run_closed_loop(
        model: &SystemModel,
        world: &mut WorldState,
        ctrl: &mut LowLevel,
        action: &Action,
        seconds: f64,
    ) {
        let dt = 1.0 / ctrl.params.rate_hz;
        let mut rng = crate::rng::stream(0, 0);
        for _ in 0..(seconds * ctrl.params.rate_hz) as usize {
            let meas = accelerometer(world, 0, 0.0, &mut rng);
            let cmd = ctrl.command(action, &world.mavs[0], meas, &world.rotors[0]);
            step(model, world, &[cmd], dt).unwrap();
        }
    }

    // --- filters ---

    #[test]
    fn filter_dc_gain_is_unity() {
        let mut f = LowPass3::new(10.0, 300.0);
        let x = Vec3::new(1.0, -2.0, 0.5);
        let mut y = Vec3::ZERO;
        for _ in 0..3000 {
            y = f.update(x);
        }
        assert!((y - x).norm() < 1e-9, "settled at {y:?}");
    }

    #[test]
    fn filter_warm_start_has_no_transient() {
        let mut f = LowPass3::new(10.0, 300.0);
        let x = Vec3::new(3.0, 1.0, -4.0);
        f.reset_to(x);
        for _ in 0..10 {
            let y = f.update(x);
            assert!((y - x).norm() < 1e-12);
        }
    }

    #[test]
    fn filter_attenuates_above_cutoff() {
        // 30 Hz sine through a 10 Hz second-order Butterworth:
        // |H| = 1/sqrt(1 + (30/10)^4) ~= 0.110 (analog prototype).
        let mut f = LowPass3::new(10.0, 300.0);
        let mut peak = 0.0f64;
        for k in 0..3000 {
            let t = k as f64 / 300.0;
            let x = (std::f64::consts::TAU * 30.0 * t).sin();
            let y = f.update(Vec3::new(x, 0.0, 0.0));
            if k > 600 {
                peak = peak.max(y.x.abs());
            }
        }
        let expected = 1.0 / (1.0f64 + 3.0f64.powi(4)).sqrt();
        assert!(
            (peak - expected).abs() / expected < 0.15,
            "peak {peak} vs {expected}"
        );
    }

    #[test]
    fn estimator_filters_share_coefficients() {
        assert!(controller().filters_matched());
    }

    // --- actions ---

    #[test]
    fn raw_actions_are_clamped() {
        let b = ActionBounds::default();
        match Action::from_raw(ActionKind::Accbr, &[9.0, -9.0, 1.0, 5.0, -5.0, 0.1], &b, 16.0) {
            Action::Accbr { accel, rates } => {
                assert_eq!(accel, Vec3::new(5.0, -5.0, 1.0));
                assert_eq!(rates, Vec3::new(2.0, -2.0, 0.1));
            }
            _ => panic!(),
        }
        match Action::from_raw(ActionKind::Ctbr, &[3.0, 0.0, 0.0, 0.0], &b, 16.0) {
            Action::Ctbr { thrust, .. } => assert_eq!(thrust, 16.0),
            _ => panic!(),
        }
        match Action::from_raw(ActionKind::Ctbr, &[-3.0, 0.0, 0.0, 0.0], &b, 16.0) {
            Action::Ctbr { thrust, .. } => assert_eq!(thrust, 0.0),
            _ => panic!(),
        }
    }

    #[test]
    fn rate_slice_extraction() {
        let raw6 = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(ActionKind::Accbr.rate_slice(&raw6).unwrap(), &[4.0, 5.0, 6.0]);
        let raw4 = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(ActionKind::Ctbr.rate_slice(&raw4).unwrap(), &[2.0, 3.0, 4.0]);
        assert!(ActionKind::Acc.rate_slice(&[0.0; 3]).is_none());
    }

    // --- attitude/rate cascade ---

    #[test]
    fn equilibrium_produces_zero_torque_and_exact_collective() {
        // Aligned attitude, zero rates: allocation must distribute the
        // collective evenly and produce no torque, to machine precision.
        let p = LowLevelParams::default();
        let (thrusts, sat) = attitude_rate_control(
            &p,
            mav_params().inertia,
            &actuator(),
            Quat::IDENTITY,
            Vec3::ZERO,
            Some(Vec3::Z),
            Vec3::ZERO,
            4.0,
            0.0,
        );
        assert!(!sat);
        let total: f64 = thrusts.iter().sum();
        assert!((total - 4.0).abs() < 1e-9);
        for f in thrusts {
            assert!((f - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn attitude_step_settles_fast_without_overshoot() {
        // Command a 10-degree tilt via the acceleration interface and watch
        // the body-z angle: settle below 0.5 s, overshoot below 5%.
        let model = single_mav_model();
        let mut world = hover_world(&model);
        let mut ctrl = controller();
        ctrl.reset(0.0, &world.mavs[0], &world.rotors[0]);

        let tilt: f64 = 10.0f64.to_radians();
        // a_ref - g tilted by 10 degrees: a_x = g tan(tilt).
        let action = Action::Accbr {
            accel: Vec3::new(GRAVITY * tilt.tan(), 0.0, 0.0),
            rates: Vec3::ZERO,
        };
        let dt = 1.0 / 300.0;
        let mut rng = crate::rng::stream(0, 0);
        let mut max_tilt = 0.0f64;
        let mut settled_from = f64::INFINITY;
        for k in 0..(1.5 * 300.0) as usize {
            let meas = accelerometer(&world, 0, 0.0, &mut rng);
            let cmd = ctrl.command(&action, &world.mavs[0], meas, &world.rotors[0]);
            step(&model, &mut world, &[cmd], dt).unwrap();
            let angle = world.mavs[0].quat.body_z().dot(Vec3::Z).clamp(-1.0, 1.0).acos();
            max_tilt = max_tilt.max(angle);
            let t = (k + 1) as f64 * dt;
            let within = (angle - tilt).abs() <= 0.05 * tilt;
            if within {
                settled_from = settled_from.min(t);
            } else {
                settled_from = f64::INFINITY;
            }
        }
        assert!(
            max_tilt <= tilt * 1.05,
            "overshoot: max tilt {:.3} deg vs command {:.3} deg",
            max_tilt.to_degrees(),
            tilt.to_degrees()
        );
        assert!(
            settled_from <= 0.5,
            "settling time {settled_from:.3}s exceeds 0.5s"
        );
    }

    #[test]
    fn external_force_estimate_converges_within_ten_percent() {
        // Hovering MAV with a constant unseen 2 N downward pull (a taut
        // cable stand-in): the filter-residual estimator should find it.
        let mut model = single_mav_model();
        model.mav_external_force[0] = Vec3::new(0.0, 0.0, -2.0);
        let mut world = hover_world(&model);
        let mut ctrl = controller();
        ctrl.reset(0.0, &world.mavs[0], &world.rotors[0]);

        let action = Action::Accbr { accel: Vec3::ZERO, rates: Vec3::ZERO };
        run_closed_loop(&model, &mut world, &mut ctrl, &action, 2.0);
        let est = ctrl.force_estimate();
        let truth = Vec3::new(0.0, 0.0, -2.0);
        assert!(
            (est - truth).norm() / truth.norm() < 0.10,
            "estimate {est:?} vs {truth:?}"
        );
    }

    #[test]
    fn compensation_rejects_disturbance_an_order_of_magnitude_better() {
        // Velocity hold (v_ref = 0) under a constant 1 N side force, 5 s:
        // the compensated controller must accrue < 10% of the uncompensated
        // position offset.
        let offset_with = |compensation: bool| -> f64 {
            let mut model = single_mav_model();
            model.mav_external_force[0] = Vec3::new(1.0, 0.0, 0.0);
            let mut world = hover_world(&model);
            let mut params = LowLevelParams::default();
            params.compensation = compensation;
            let mut ctrl = LowLevel::new(params, 0.6, mav_params().inertia, actuator());
            ctrl.reset(0.0, &world.mavs[0], &world.rotors[0]);
            let action = Action::Vel { velocity: Vec3::ZERO };
            run_closed_loop(&model, &mut world, &mut ctrl, &action, 5.0);
            (world.mavs[0].pos - Vec3::new(0.0, 0.0, 1.0)).norm()
        };
        let with = offset_with(true);
        let without = offset_with(false);
        assert!(
            with < 0.10 * without,
            "compensated offset {with:.4} m vs uncompensated {without:.4} m"
        );
    }

    #[test]
    fn velocity_action_tracks_reference() {
        let model = single_mav_model();
        let mut world = hover_world(&model);
        let mut ctrl = controller();
        ctrl.reset(0.0, &world.mavs[0], &world.rotors[0]);
        let action = Action::Vel { velocity: Vec3::new(0.5, 0.0, 0.0) };
        run_closed_loop(&model, &mut world, &mut ctrl, &action, 3.0);
        let v = world.mavs[0].vel;
        assert!(
            (v - Vec3::new(0.5, 0.0, 0.0)).norm() < 0.05,
            "velocity {v:?}"
        );
    }

    #[test]
    fn ctbr_rates_are_tracked_without_attitude_loop() {
        let model = single_mav_model();
        let mut world = hover_world(&model);
        let mut ctrl = controller();
        ctrl.reset(0.0, &world.mavs[0], &world.rotors[0]);
        // Hover-weight collective with a roll-rate command.
        let action = Action::Ctbr {
            thrust: 0.6 * GRAVITY,
            rates: Vec3::new(1.0, 0.0, 0.0),
        };
        run_closed_loop(&model, &mut world, &mut ctrl, &action, 0.5);
        let wb = world.mavs[0].quat.rotate_inv(world.mavs[0].ang_vel);
        assert!((wb.x - 1.0).abs() < 0.05, "body roll rate {}", wb.x);
    }

    #[test]
    fn free_fall_demand_is_clamped_and_flagged() {
        let model = single_mav_model();
        let world = hover_world(&model);
        let mut ctrl = controller();
        ctrl.reset(0.0, &world.mavs[0], &world.rotors[0]);
        // a_ref = g: the thrust demand vanishes.
        let action = Action::Acc { accel: gravity_vec() };
        let mut rng = crate::rng::stream(0, 0);
        let meas = accelerometer(&world, 0, 0.0, &mut rng);
        let cmd = ctrl.command(&action, &world.mavs[0], meas, &world.rotors[0]);
        assert_eq!(ctrl.events.free_fall_clamps, 1);
        // Minimum specific thrust, spread across four rotors.
        let f_total: f64 = cmd
            .iter()
            .map(|&w| 1.8167e-6 * w * w)
            .sum();
        let expect = 0.6 * LowLevelParams::default().min_specific_thrust;
        assert!((f_total - expect).abs() < 1e-6, "clamped thrust {f_total}");
    }

    #[test]
    fn yaw_degenerate_tilt_still_produces_valid_frame() {
        // z_des horizontal and aligned with the yaw heading: the primary
        // frame construction degenerates; the fallback must stay orthonormal.
        let m = frame_from_z_yaw(Vec3::X, 0.0);
        assert!(m.is_orthonormal(1e-9));
        let (thrusts, _) = attitude_rate_control(
            &LowLevelParams::default(),
            mav_params().inertia,
            &actuator(),
            Quat::IDENTITY,
            Vec3::ZERO,
            Some(Vec3::X),
            Vec3::ZERO,
            4.0,
            0.0,
        );
        assert!(thrusts.iter().all(|f| f.is_finite()));
    }
}
