//! The cooperative lifting task as a decentralized multi-agent environment:
//! episode spawning, per-agent observation assembly with history stacking,
//! the shared shaped reward, and the termination rules. One [`Env`] owns one
//! physical world; training runs many independent instances.
//!
//! Frame conventions: all observation quantities are world-frame; rotation
//! matrices are flattened row-major; the goal enters only through relative
//! quantities (position offset `goal - load` and rotation `R_load^T *
//! R_goal`), so the policy never learns absolute goal coordinates.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{
    line_plane_intersection, quat_error_angle, segment_segment_distance, Quat, RotMat, Vec3,
};
use crate::lowlevel::{Action, ActionBounds, ActionKind, LowLevel, LowLevelParams};
use crate::physics::{
    self, accelerometer, ActuatorParams, ActuatorState, BodyParams, BodyRef, CableModel,
    SystemModel, WorldState, GRAVITY,
};
use crate::rng::{stream, uniform, STREAM_ENV_BASE};

/// Distance substituted when a MAV's thrust line is parallel to the load
/// plane: far enough to saturate the downwash reward term, but finite.
pub const DOWNWASH_PARALLEL_DISTANCE: f64 = 10.0;

/// What each agent sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationMode {
    /// Load pose, relative goal, ego state, one-hot ID; stacked over history.
    Partial,
    /// `Partial` plus load twist and the other agents' positions.
    PartialAugmented,
    /// The centralized critic's global state (history forced to 1, no ID).
    Full,
}

impl ObservationMode {
    /// Width of a single (un-stacked) observation frame.
    pub fn frame_dim(self, n_mavs: usize) -> usize {
        match self {
            // p_L(3) + R_L(9) + [d_G(3) + R_G(9)] + ego(18) + one-hot(N)
            ObservationMode::Partial => 42 + n_mavs,
            // + load twist(6) + (N-1) neighbor positions
            ObservationMode::PartialAugmented => 42 + n_mavs + 6 + 3 * (n_mavs - 1),
            // load(18) + goal(12) + N * mav(18)
            ObservationMode::Full => 30 + 18 * n_mavs,
        }
    }

    /// History length actually used: full state carries no history.
    pub fn effective_history(self, history: usize) -> usize {
        match self {
            ObservationMode::Full => 1,
            _ => history,
        }
    }

    pub fn obs_dim(self, n_mavs: usize, history: usize) -> usize {
        self.frame_dim(n_mavs) * self.effective_history(history)
    }
}

impl std::fmt::Display for ObservationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ObservationMode::Partial => "partial",
            ObservationMode::PartialAugmented => "partial_augmented",
            ObservationMode::Full => "full",
        })
    }
}

impl std::str::FromStr for ObservationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<ObservationMode> {
        match s {
            "partial" => Ok(ObservationMode::Partial),
            "partial_augmented" => Ok(ObservationMode::PartialAugmented),
            "full" => Ok(ObservationMode::Full),
            other => Err(Error::Config(format!("unknown observation mode {other:?}"))),
        }
    }
}

/// Shaping weights. `l1..l9` follow the component order: position amplitude,
/// position exponent, orientation amplitude, orientation exponent, downwash
/// amplitude, downwash exponent, action-smoothness, body-rate, thrust.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardWeights {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
    pub l5: f64,
    pub l6: f64,
    pub l7: f64,
    pub l8: f64,
    pub l9: f64,
}

impl Default for RewardWeights {
    fn default() -> RewardWeights {
        RewardWeights {
            l1: 1.5,
            l2: 1.5,
            l3: 1.5,
            l4: 1.5,
            l5: 0.5,
            l6: 3.0,
            l7: 0.5,
            l8: 0.5,
            l9: 0.5,
        }
    }
}

impl RewardWeights {
    /// Largest possible un-scaled per-step reward (every exponential at its
    /// optimum); the exponent weights l2, l4, l6 do not bound anything.
    pub fn max_step_reward(&self) -> f64 {
        self.l1 + self.l3 + self.l5 + self.l7 + self.l8 + self.l9
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("l1", self.l1),
            ("l2", self.l2),
            ("l3", self.l3),
            ("l4", self.l4),
            ("l5", self.l5),
            ("l6", self.l6),
            ("l7", self.l7),
            ("l8", self.l8),
            ("l9", self.l9),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!("reward weight {name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Everything that defines one task instance. `Default` is the 3-MAV team
/// carrying a 1.4 kg load on 1 m cables; [`EnvParams::for_team`] adapts the
/// cable model and load-mass randomization for larger teams.
#[derive(Debug, Clone)]
pub struct EnvParams {
    pub n_mavs: usize,
    pub action: ActionKind,
    pub observation: ObservationMode,
    /// Stacked frames per observation (current + past).
    pub history: usize,
    pub episode_duration: f64,
    /// Agent decision period (s).
    pub control_dt: f64,
    /// Inner-loop controller updates per control period.
    pub lowlevel_per_control: usize,
    /// Physics substeps per inner-loop update.
    pub substeps: usize,
    pub solver_iterations: usize,

    pub mav_mass: f64,
    pub mav_inertia: Vec3,
    pub load_mass: f64,
    pub load_inertia: Vec3,
    /// Per-episode load-mass sampling range; `None` keeps `load_mass` fixed.
    pub load_mass_range: Option<(f64, f64)>,
    pub cable_length: f64,
    /// 1 = rigid rod, 3 = chain of three linked segments.
    pub cable_segments: usize,
    /// Radius of the attachment ring on the load.
    pub attach_radius: f64,
    pub node_mass: f64,
    pub actuator: ActuatorParams,
    pub lowlevel: LowLevelParams,
    pub bounds: ActionBounds,
    pub accel_noise_std: f64,
    pub weights: RewardWeights,

    /// Load spawn: xy uniform in +-spawn_xy, z uniform in spawn_z.
    pub spawn_xy: f64,
    pub spawn_z: (f64, f64),
    /// Cable cone half-angle range at spawn (degrees from vertical).
    pub spawn_cone_deg: (f64, f64),
    /// Goal roll/pitch sampling bound (degrees); yaw is always full-circle.
    pub goal_tilt_deg: f64,
    pub max_spawn_attempts: usize,

    // Termination thresholds.
    pub ground_clearance: f64,
    pub cable_load_angle_deg: f64,
    pub cable_mav_angle_deg: f64,
    pub cable_clearance: f64,
    pub mav_clearance: f64,
    pub bbox_xy: f64,
    pub bbox_z: f64,
    /// Minimum cable tension before an episode counts as slack (teams > 3).
    pub tension_min: f64,
}

impl Default for EnvParams {
    fn default() -> EnvParams {
        EnvParams {
            n_mavs: 3,
            action: ActionKind::Accbr,
            observation: ObservationMode::Partial,
            history: 3,
            episode_duration: 20.0,
            control_dt: 0.01,
            lowlevel_per_control: 3,
            substeps: 4,
            solver_iterations: 8,
            mav_mass: 0.6,
            mav_inertia: Vec3::new(0.005, 0.005, 0.009),
            load_mass: 1.4,
            load_inertia: Vec3::new(0.015, 0.015, 0.028),
            load_mass_range: None,
            cable_length: 1.0,
            cable_segments: 1,
            attach_radius: 0.2,
            node_mass: 0.001,
            actuator: ActuatorParams {
                thrust_coeff: 1.8167e-6,
                torque_coeff: 2.9067e-8,
                arm_length: 0.15,
                max_rotor_speed: 1500.0,
                time_constant: 0.02,
            },
            lowlevel: LowLevelParams::default(),
            bounds: ActionBounds::default(),
            accel_noise_std: 0.0,
            weights: RewardWeights::default(),
            spawn_xy: 1.0,
            spawn_z: (0.5, 1.5),
            spawn_cone_deg: (10.0, 25.0),
            goal_tilt_deg: 45.0,
            max_spawn_attempts: 100,
            ground_clearance: 0.1,
            cable_load_angle_deg: 70.0,
            cable_mav_angle_deg: 70.0,
            cable_clearance: 0.08,
            mav_clearance: 0.3,
            bbox_xy: 4.0,
            bbox_z: 4.0,
            tension_min: 0.1,
        }
    }
}

impl EnvParams {
    /// Defaults for an `n`-MAV team: rigid rods up to 3 MAVs; beyond that
    /// the system is overconstrained, so cables become 3-segment chains and
    /// the load mass is randomized per episode.
    pub fn for_team(n: usize) -> EnvParams {
        let mut p = EnvParams { n_mavs: n, ..EnvParams::default() };
        if n > 3 {
            p.cable_segments = 3;
            p.load_mass_range = Some((1.0, 1.8));
        }
        p
    }

    pub fn episode_steps(&self) -> usize {
        (self.episode_duration / self.control_dt).round() as usize
    }

    pub fn obs_dim(&self) -> usize {
        self.observation.obs_dim(self.n_mavs, self.history)
    }

    pub fn global_dim(&self) -> usize {
        ObservationMode::Full.frame_dim(self.n_mavs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mavs < 2 {
            return Err(Error::Config("the lifting task needs at least 2 MAVs".into()));
        }
        if self.history == 0 {
            return Err(Error::Config("history length must be at least 1".into()));
        }
        let steps = self.episode_duration / self.control_dt;
        if (steps - steps.round()).abs() > 1e-9 || steps < 1.0 {
            return Err(Error::Config(format!(
                "episode duration {} s is not a whole number of {} s control steps",
                self.episode_duration, self.control_dt
            )));
        }
        let lowlevel_dt = self.control_dt / self.lowlevel_per_control as f64;
        if (lowlevel_dt * self.lowlevel.rate_hz - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "inner-loop rate {} Hz does not match control_dt {} / {} iterations",
                self.lowlevel.rate_hz, self.control_dt, self.lowlevel_per_control
            )));
        }
        if self.cable_segments != 1 && self.cable_segments != 3 {
            return Err(Error::Config(format!(
                "cable_segments must be 1 or 3, got {}",
                self.cable_segments
            )));
        }
        for (name, v) in [
            ("mav_mass", self.mav_mass),
            ("load_mass", self.load_mass),
            ("cable_length", self.cable_length),
            ("attach_radius", self.attach_radius),
            ("control_dt", self.control_dt),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some((lo, hi)) = self.load_mass_range {
            if !(lo > 0.0 && hi >= lo) {
                return Err(Error::Config(format!(
                    "load mass range ({lo}, {hi}) must be positive and ordered"
                )));
            }
        }
        if self.spawn_z.0 > self.spawn_z.1 || self.spawn_cone_deg.0 > self.spawn_cone_deg.1 {
            return Err(Error::Config("spawn ranges must be ordered".into()));
        }
        self.weights.validate()
    }

    /// Attachment point of cable `i` on the load, in the load body frame.
    pub fn attachment_local(&self, i: usize) -> Vec3 {
        let phi = std::f64::consts::TAU * i as f64 / self.n_mavs as f64;
        Vec3::new(self.attach_radius * phi.cos(), self.attach_radius * phi.sin(), 0.0)
    }

    fn build_model(&self) -> Result<SystemModel> {
        let cables = (0..self.n_mavs)
            .map(|i| CableModel {
                length: self.cable_length,
                segments: self.cable_segments,
                attach_load: self.attachment_local(i),
                attach_mav: Vec3::ZERO,
                node_mass: self.node_mass,
            })
            .collect();
        SystemModel::new(
            self.n_mavs,
            BodyParams { mass: self.mav_mass, inertia: self.mav_inertia },
            BodyParams { mass: self.load_mass, inertia: self.load_inertia },
            cables,
            self.actuator.clone(),
            self.substeps,
            self.solver_iterations,
        )
    }
}

/// Why an episode ended early.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationReason {
    Ground,
    CableLoadAngle,
    CableMavAngle,
    CableCableCollision,
    MavMavCollision,
    OutOfBounds,
    CableSlack,
    Diverged,
}

impl TerminationReason {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminationReason::Ground => "ground",
            TerminationReason::CableLoadAngle => "cable_load_angle",
            TerminationReason::CableMavAngle => "cable_mav_angle",
            TerminationReason::CableCableCollision => "cable_cable_collision",
            TerminationReason::MavMavCollision => "mav_mav_collision",
            TerminationReason::OutOfBounds => "out_of_bounds",
            TerminationReason::CableSlack => "cable_slack",
            TerminationReason::Diverged => "diverged",
        }
    }
}

impl std::fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Un-scaled reward components; the step reward is their sum times the
/// control period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardParts {
    pub pos: f64,
    pub ori: f64,
    pub down: f64,
    pub act: f64,
    pub br: f64,
    pub thrust: f64,
}

impl RewardParts {
    pub fn sum(&self) -> f64 {
        self.pos + self.ori + self.down + self.act + self.br + self.thrust
    }
}

/// Inputs to the shared reward, gathered after the control period.
pub struct RewardInputs<'a> {
    pub load_pos: Vec3,
    pub load_quat: Quat,
    pub goal_pos: Vec3,
    pub goal_quat: Quat,
    /// Closest thrust-line/load-plane intersection distance over the team.
    pub downwash_dist: f64,
    /// Current and previous raw policy outputs, concatenated over agents.
    pub raw: &'a [f64],
    pub last_raw: &'a [f64],
    pub action: ActionKind,
    pub n_mavs: usize,
    pub rotor_thrusts: &'a [[f64; 4]],
    pub max_rotor_thrust: f64,
}

/// Shared shaping reward. Every term is a bounded positive exponential, so
/// the policy is always pulled toward the goal pose, away from stacking
/// above the load, and toward smooth low-effort commands.
pub fn reward_parts(w: &RewardWeights, inp: &RewardInputs) -> RewardParts {
    let n = inp.n_mavs as f64;
    let pos = w.l1 * (-w.l2 * (inp.goal_pos - inp.load_pos).norm()).exp();
    let angle = quat_error_angle(inp.goal_quat, inp.load_quat)
        .expect("reward inputs carry unit quaternions");
    let ori = w.l3 * (-w.l4 * angle).exp();
    let down = w.l5 * (1.0 - (-w.l6 * inp.downwash_dist).exp());

    debug_assert_eq!(inp.raw.len(), inp.last_raw.len());
    let d2: f64 = inp
        .raw
        .iter()
        .zip(inp.last_raw)
        .map(|(a, b)| {
            let d = (a - b) / n;
            d * d
        })
        .sum();
    let act = w.l7 * (-d2).exp();

    let br2: f64 = inp
        .raw
        .chunks_exact(inp.action.dim())
        .filter_map(|agent_raw| inp.action.rate_slice(agent_raw))
        .flat_map(|rates| rates.iter().map(|r| (r / n) * (r / n)))
        .sum();
    let br = w.l8 * (-br2.sqrt()).exp();

    let peak = inp
        .rotor_thrusts
        .iter()
        .flat_map(|t| t.iter())
        .fold(0.0f64, |m, &t| m.max(t / inp.max_rotor_thrust));
    let thrust = w.l9 * (-peak).exp();

    RewardParts { pos, ori, down, act, br, thrust }
}

/// Distance from the load to the nearest intersection of any MAV's thrust
/// line with the load plane — a geometric proxy for how directly downwash
/// hits the load. Thrust lines parallel to the plane contribute
/// [`DOWNWASH_PARALLEL_DISTANCE`].
pub fn downwash_distance(world: &WorldState) -> f64 {
    let normal = world.load.quat.body_z();
    world
        .mavs
        .iter()
        .map(|m| {
            match line_plane_intersection(m.pos, -m.quat.body_z(), world.load.pos, normal) {
                Some(p) => (p - world.load.pos).norm(),
                None => DOWNWASH_PARALLEL_DISTANCE,
            }
        })
        .fold(f64::INFINITY, f64::min)
}

/// What one control step produced.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// Shared scalar reward, already scaled by the control period.
    pub reward: f64,
    pub parts: RewardParts,
    pub terminated: Option<TerminationReason>,
    /// True only when the step limit was reached without termination.
    pub timeout: bool,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminated.is_some() || self.timeout
    }
}

/// One task instance: world, inner-loop controllers, goal, and observation
/// history. Created in a freshly spawned episode; callers drive it with
/// [`Env::step`] and start new episodes with [`Env::reset`].
pub struct Env {
    params: EnvParams,
    model: SystemModel,
    world: WorldState,
    controllers: Vec<LowLevel>,
    goal_pos: Vec3,
    goal_quat: Quat,
    /// Per-agent stacked observation, newest frame first.
    history: Vec<Vec<f64>>,
    last_raw: Vec<f64>,
    last_tension: Vec<f64>,
    /// Rotor commands are forced to zero for failed MAVs (evaluation hook).
    pub failed: Vec<bool>,
    rng: ChaCha8Rng,
    steps: usize,
}

impl Env {
    /// Build and spawn. `index` separates the random streams of parallel
    /// instances sharing one seed.
    pub fn new(params: EnvParams, seed: u64, index: u64) -> Result<Env> {
        params.validate()?;
        let model = params.build_model()?;
        let world = WorldState::new(params.n_mavs, model.n_nodes());
        let n = params.n_mavs;
        let mut env = Env {
            controllers: (0..n)
                .map(|_| {
                    LowLevel::new(
                        params.lowlevel.clone(),
                        params.mav_mass,
                        params.mav_inertia,
                        params.actuator.clone(),
                    )
                })
                .collect(),
            goal_pos: Vec3::ZERO,
            goal_quat: Quat::IDENTITY,
            history: vec![Vec::new(); n],
            last_raw: vec![0.0; n * params.action.dim()],
            last_tension: Vec::new(),
            failed: vec![false; n],
            rng: stream(seed, STREAM_ENV_BASE + index),
            steps: 0,
            params,
            model,
            world,
        };
        env.reset()?;
        Ok(env)
    }

    pub fn params(&self) -> &EnvParams {
        &self.params
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    /// Mutable world access for evaluation perturbations and tests. Normal
    /// stepping never needs this.
    pub fn world_mut(&mut self) -> &mut WorldState {
        &mut self.world
    }

    pub fn model(&self) -> &SystemModel {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut SystemModel {
        &mut self.model
    }

    pub fn goal(&self) -> (Vec3, Quat) {
        (self.goal_pos, self.goal_quat)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn time(&self) -> f64 {
        self.world.time
    }

    pub fn obs_dim(&self) -> usize {
        self.params.obs_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.params.action.dim()
    }

    /// Latest per-cable tensions (empty before the first step of an episode).
    pub fn tensions(&self) -> &[f64] {
        &self.last_tension
    }

    /// Persistent load-mass override (model-mismatch studies); survives
    /// resets unless a sampling range is configured.
    pub fn set_load_mass(&mut self, mass: f64) {
        self.params.load_mass = mass;
        self.model.load.mass = mass;
    }

    /// Bolt an extra point mass onto the load at `offset` (load frame).
    /// The combined body is heavier, its center of mass moves toward the
    /// object, and the rotational inertia picks up the parallel-axis terms
    /// (products of inertia are dropped; the stored inertia is diagonal).
    /// Attachment points keep their physical location, so their body-frame
    /// coordinates shift opposite the center-of-mass move, and the tracked
    /// pose is re-anchored to the new center of mass.
    pub fn apply_load_mismatch(&mut self, delta_mass: f64, offset: Vec3) {
        assert!(delta_mass >= 0.0, "mismatch mass must be non-negative");
        if delta_mass == 0.0 {
            return;
        }
        let m_old = self.model.load.mass;
        let m_new = m_old + delta_mass;
        // New center of mass, expressed in the old body frame.
        let shift = offset * (delta_mass / m_new);
        let parallel_axis = |m: f64, d: Vec3| {
            Vec3::new(
                m * (d.y * d.y + d.z * d.z),
                m * (d.x * d.x + d.z * d.z),
                m * (d.x * d.x + d.y * d.y),
            )
        };
        self.model.load.mass = m_new;
        self.model.load.inertia = self.model.load.inertia
            + parallel_axis(m_old, shift)
            + parallel_axis(delta_mass, offset - shift);
        for cable in &mut self.model.cables {
            cable.attach_load -= shift;
        }
        for c in &mut self.model.constraints {
            if matches!(c.a, BodyRef::Load) {
                c.anchor_a -= shift;
            }
            if matches!(c.b, BodyRef::Load) {
                c.anchor_b -= shift;
            }
        }
        self.world.load.pos += self.world.load.quat.rotate(shift);
        self.params.load_mass = m_new;
    }

    /// Start a fresh randomized episode.
    pub fn reset(&mut self) -> Result<()> {
        for _ in 0..self.params.max_spawn_attempts {
            let spawn = self.sample_spawn();
            self.install(&spawn);
            if self.termination().is_none() {
                return Ok(());
            }
        }
        Err(Error::SpawnFailed(format!(
            "no valid spawn in {} attempts",
            self.params.max_spawn_attempts
        )))
    }

    /// Deterministic placement for scripted scenarios: load at `load_pos`
    /// with yaw `load_yaw`, cables on a cone `cone_deg` from vertical, all
    /// MAV yaws zero, goal initialized to the spawn pose (hold in place).
    pub fn reset_to(&mut self, load_pos: Vec3, load_yaw: f64, cone_deg: f64) {
        let spawn = Spawn {
            load_pos,
            load_quat: Quat::from_euler_zyx(0.0, 0.0, load_yaw),
            cone: cone_deg.to_radians(),
            mav_yaws: vec![0.0; self.params.n_mavs],
            goal_pos: load_pos,
            goal_quat: Quat::from_euler_zyx(0.0, 0.0, load_yaw),
            load_mass: self.params.load_mass,
        };
        self.install(&spawn);
    }

    /// Change the goal pose. At the start of an episode the observation
    /// history is refilled so stale goals never leak into stacked frames;
    /// mid-episode (moving references) past frames keep the goal they saw.
    pub fn set_goal(&mut self, pos: Vec3, quat: Quat) {
        self.goal_pos = pos;
        self.goal_quat = quat;
        if self.steps == 0 {
            self.refill_history();
        } else {
            for i in 0..self.params.n_mavs {
                let frame = self.frame(i);
                self.history[i][..frame.len()].copy_from_slice(&frame);
            }
        }
    }

    /// Stacked observation of agent `i` (newest frame first).
    pub fn observation(&self, i: usize) -> &[f64] {
        &self.history[i]
    }

    /// The critic's global state vector.
    pub fn global_state(&self) -> Vec<f64> {
        let mut buf = Vec::with_capacity(self.params.global_dim());
        self.write_global(&mut buf);
        buf
    }

    /// Advance one control period. `raw` is the concatenated un-clamped
    /// policy output for all agents (`n_mavs * action_dim` values); clamping
    /// to the configured bounds happens here, but the reward's smoothness
    /// terms see the raw values.
    pub fn step(&mut self, raw: &[f64]) -> Result<StepOutcome> {
        let n = self.params.n_mavs;
        let dim = self.params.action.dim();
        if raw.len() != n * dim {
            return Err(Error::Contract(format!(
                "expected {} action values ({} agents x {}), got {}",
                n * dim,
                n,
                dim,
                raw.len()
            )));
        }
        let max_collective = self.params.actuator.max_collective_thrust();
        let actions: Vec<Action> = raw
            .chunks_exact(dim)
            .map(|r| Action::from_raw(self.params.action, r, &self.params.bounds, max_collective))
            .collect();

        let lowlevel_dt = self.params.control_dt / self.params.lowlevel_per_control as f64;
        let mut cmds = vec![[0.0; 4]; n];
        let mut info = None;
        let mut diverged = false;
        for _ in 0..self.params.lowlevel_per_control {
            for i in 0..n {
                if self.failed[i] {
                    cmds[i] = [0.0; 4];
                    continue;
                }
                let meas =
                    accelerometer(&self.world, i, self.params.accel_noise_std, &mut self.rng);
                cmds[i] = self.controllers[i].command(
                    &actions[i],
                    &self.world.mavs[i],
                    meas,
                    &self.world.rotors[i],
                );
            }
            match physics::step(&self.model, &mut self.world, &cmds, lowlevel_dt) {
                Ok(step_info) => info = Some(step_info),
                Err(Error::SimulationDiverged { .. }) => {
                    diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        self.steps += 1;

        if diverged {
            // The episode ends with zero reward; the world is left as-is
            // (non-finite) and must be reset before further use.
            self.last_raw.copy_from_slice(raw);
            return Ok(StepOutcome {
                reward: 0.0,
                parts: RewardParts { pos: 0.0, ori: 0.0, down: 0.0, act: 0.0, br: 0.0, thrust: 0.0 },
                terminated: Some(TerminationReason::Diverged),
                timeout: false,
            });
        }
        let info = info.expect("at least one inner-loop iteration");
        self.last_tension = info.cable_tension.clone();

        let parts = reward_parts(
            &self.params.weights,
            &RewardInputs {
                load_pos: self.world.load.pos,
                load_quat: self.world.load.quat,
                goal_pos: self.goal_pos,
                goal_quat: self.goal_quat,
                downwash_dist: downwash_distance(&self.world),
                raw,
                last_raw: &self.last_raw,
                action: self.params.action,
                n_mavs: n,
                rotor_thrusts: &info.rotor_thrusts,
                max_rotor_thrust: self.params.actuator.max_rotor_thrust(),
            },
        );
        self.last_raw.copy_from_slice(raw);

        let terminated = self.termination();
        let timeout = terminated.is_none() && self.steps >= self.params.episode_steps();

        for i in 0..n {
            let frame = self.frame(i);
            let hist = &mut self.history[i];
            let fd = frame.len();
            let len = hist.len();
            hist.copy_within(0..len - fd, fd);
            hist[..fd].copy_from_slice(&frame);
        }

        Ok(StepOutcome {
            reward: parts.sum() * self.params.control_dt,
            parts,
            terminated,
            timeout,
        })
    }

    /// Evaluate the early-termination rules on the current world, in their
    /// declared precedence order.
    pub fn termination(&self) -> Option<TerminationReason> {
        let p = &self.params;
        let w = &self.world;
        let n = p.n_mavs;

        if w.load.pos.z < p.ground_clearance
            || w.mavs.iter().any(|m| m.pos.z < p.ground_clearance)
        {
            return Some(TerminationReason::Ground);
        }

        let polylines: Vec<Vec<Vec3>> = (0..n).map(|i| self.cable_points(i)).collect();
        let load_normal = w.load.quat.body_z();
        let max_load_angle = p.cable_load_angle_deg.to_radians();
        let max_mav_angle = p.cable_mav_angle_deg.to_radians();
        for (i, pts) in polylines.iter().enumerate() {
            let k = pts.len();
            if let Some(dir) = (pts[k - 2] - pts[k - 1]).normalized() {
                if dir.dot(load_normal).clamp(-1.0, 1.0).acos() > max_load_angle {
                    return Some(TerminationReason::CableLoadAngle);
                }
            }
            if let Some(dir) = (pts[1] - pts[0]).normalized() {
                let down = -w.mavs[i].quat.body_z();
                if dir.dot(down).clamp(-1.0, 1.0).acos() > max_mav_angle {
                    return Some(TerminationReason::CableMavAngle);
                }
            }
        }

        for i in 0..n {
            for j in i + 1..n {
                for a in polylines[i].windows(2) {
                    for b in polylines[j].windows(2) {
                        if segment_segment_distance(a[0], a[1], b[0], b[1]) < p.cable_clearance {
                            return Some(TerminationReason::CableCableCollision);
                        }
                    }
                }
            }
        }

        for i in 0..n {
            for j in i + 1..n {
                if (w.mavs[i].pos - w.mavs[j].pos).norm() < p.mav_clearance {
                    return Some(TerminationReason::MavMavCollision);
                }
            }
        }

        let out = |pos: Vec3| {
            pos.x.abs() > p.bbox_xy || pos.y.abs() > p.bbox_xy || pos.z < 0.0 || pos.z > p.bbox_z
        };
        if out(w.load.pos)
            || w.mavs.iter().any(|m| out(m.pos))
            || w.nodes.iter().any(|nd| out(nd.pos))
        {
            return Some(TerminationReason::OutOfBounds);
        }

        if n > 3
            && !self.last_tension.is_empty()
            && self.last_tension.iter().any(|&t| t < p.tension_min)
        {
            return Some(TerminationReason::CableSlack);
        }
        None
    }

    /// World-space points along cable `i`, ordered MAV end to load end.
    fn cable_points(&self, i: usize) -> Vec<Vec3> {
        let cable = &self.model.cables[i];
        let mav = &self.world.mavs[i];
        let mut pts = vec![mav.pos + mav.quat.rotate(cable.attach_mav)];
        if cable.segments == 3 {
            let base: usize =
                self.model.cables[..i].iter().filter(|c| c.segments == 3).count() * 2;
            pts.push(self.world.nodes[base].pos);
            pts.push(self.world.nodes[base + 1].pos);
        }
        pts.push(self.world.load.pos + self.world.load.quat.rotate(cable.attach_load));
        pts
    }

    fn sample_spawn(&mut self) -> Spawn {
        let p = &self.params;
        let rng = &mut self.rng;
        let load_pos = Vec3::new(
            uniform(rng, -p.spawn_xy, p.spawn_xy),
            uniform(rng, -p.spawn_xy, p.spawn_xy),
            uniform(rng, p.spawn_z.0, p.spawn_z.1),
        );
        let load_quat =
            Quat::from_euler_zyx(0.0, 0.0, uniform(rng, -std::f64::consts::PI, std::f64::consts::PI));
        let cone = uniform(rng, p.spawn_cone_deg.0, p.spawn_cone_deg.1).to_radians();
        let mav_yaws = (0..p.n_mavs)
            .map(|_| uniform(rng, -std::f64::consts::PI, std::f64::consts::PI))
            .collect();
        let goal_pos = Vec3::new(
            uniform(rng, -p.spawn_xy, p.spawn_xy),
            uniform(rng, -p.spawn_xy, p.spawn_xy),
            uniform(rng, p.spawn_z.0, p.spawn_z.1),
        );
        let tilt = p.goal_tilt_deg.to_radians();
        let goal_quat = Quat::from_euler_zyx(
            uniform(rng, -tilt, tilt),
            uniform(rng, -tilt, tilt),
            uniform(rng, -std::f64::consts::PI, std::f64::consts::PI),
        );
        let load_mass = match p.load_mass_range {
            Some((lo, hi)) => uniform(rng, lo, hi),
            None => p.load_mass,
        };
        Spawn { load_pos, load_quat, cone, mav_yaws, goal_pos, goal_quat, load_mass }
    }

    /// Place the system in a taut, velocity-free configuration: each MAV
    /// sits at cable length from its attachment point, on a cone tilted
    /// outward from vertical, rotors pre-spun to single-vehicle hover.
    fn install(&mut self, spawn: &Spawn) {
        let p = &self.params;
        let n = p.n_mavs;
        self.model.load.mass = spawn.load_mass;

        let mut world = WorldState::new(n, self.model.n_nodes());
        world.load.pos = spawn.load_pos;
        world.load.quat = spawn.load_quat;

        let mut node_idx = 0;
        for i in 0..n {
            let attach = spawn.load_pos + spawn.load_quat.rotate(p.attachment_local(i));
            let phi = std::f64::consts::TAU * i as f64 / n as f64;
            let outward = spawn.load_quat.rotate(Vec3::new(phi.cos(), phi.sin(), 0.0));
            let dir = outward * spawn.cone.sin() + Vec3::Z * spawn.cone.cos();
            let mav_pos = attach + dir * p.cable_length;
            world.mavs[i].pos = mav_pos;
            world.mavs[i].quat = Quat::from_euler_zyx(0.0, 0.0, spawn.mav_yaws[i]);
            // Static equilibrium spin-up: each rotor set carries the MAV plus
            // its share of the load, so a taut zero-velocity spawn starts with
            // the vertical force balance already closed and the disturbance
            // filters (reset below) converged to the true cable force.
            // Single-vehicle hover here would make every episode open with a
            // sink the policy cannot prevent — an acceleration interface
            // preserves whatever velocity the spin-up transient leaves.
            world.rotors[i] =
                ActuatorState::hover(&p.actuator, p.mav_mass + spawn.load_mass / n as f64, GRAVITY);
            if p.cable_segments == 3 {
                // Interior nodes evenly spaced on the straight taut line.
                world.nodes[node_idx].pos = mav_pos + (attach - mav_pos) * (1.0 / 3.0);
                world.nodes[node_idx + 1].pos = mav_pos + (attach - mav_pos) * (2.0 / 3.0);
                node_idx += 2;
            }
        }
        self.world = world;

        for (i, ctrl) in self.controllers.iter_mut().enumerate() {
            ctrl.reset(spawn.mav_yaws[i], &self.world.mavs[i], &self.world.rotors[i]);
        }
        self.goal_pos = spawn.goal_pos;
        self.goal_quat = spawn.goal_quat;
        self.last_raw.iter_mut().for_each(|v| *v = 0.0);
        self.last_tension.clear();
        self.failed.iter_mut().for_each(|f| *f = false);
        self.steps = 0;
        self.refill_history();
    }

    fn refill_history(&mut self) {
        let h = self.params.observation.effective_history(self.params.history);
        for i in 0..self.params.n_mavs {
            let frame = self.frame(i);
            self.history[i] = frame.repeat(h);
        }
    }

    /// One un-stacked observation frame for agent `i`.
    fn frame(&self, i: usize) -> Vec<f64> {
        let p = &self.params;
        let mut buf = Vec::with_capacity(p.observation.frame_dim(p.n_mavs));
        match p.observation {
            ObservationMode::Partial | ObservationMode::PartialAugmented => {
                push_vec(&mut buf, self.world.load.pos);
                push_mat(&mut buf, &self.world.load.quat.to_matrix());
                self.write_goal(&mut buf);
                self.write_mav(&mut buf, i);
                if p.observation == ObservationMode::PartialAugmented {
                    push_vec(&mut buf, self.world.load.vel);
                    push_vec(&mut buf, self.world.load.ang_vel);
                    for j in 0..p.n_mavs {
                        if j != i {
                            push_vec(&mut buf, self.world.mavs[j].pos);
                        }
                    }
                }
                for j in 0..p.n_mavs {
                    buf.push(if j == i { 1.0 } else { 0.0 });
                }
            }
            ObservationMode::Full => self.write_global(&mut buf),
        }
        debug_assert_eq!(buf.len(), p.observation.frame_dim(p.n_mavs));
        buf
    }

    /// Relative goal block: position offset then relative rotation.
    fn write_goal(&self, buf: &mut Vec<f64>) {
        push_vec(buf, self.goal_pos - self.world.load.pos);
        let rel = self.world.load.quat.to_matrix().transpose().matmul(&self.goal_quat.to_matrix());
        push_mat(buf, &rel);
    }

    fn write_mav(&self, buf: &mut Vec<f64>, i: usize) {
        let m = &self.world.mavs[i];
        push_vec(buf, m.pos);
        push_mat(buf, &m.quat.to_matrix());
        push_vec(buf, m.vel);
        push_vec(buf, m.ang_vel);
    }

    fn write_global(&self, buf: &mut Vec<f64>) {
        push_vec(buf, self.world.load.pos);
        push_mat(buf, &self.world.load.quat.to_matrix());
        push_vec(buf, self.world.load.vel);
        push_vec(buf, self.world.load.ang_vel);
        self.write_goal(buf);
        for i in 0..self.params.n_mavs {
            self.write_mav(buf, i);
        }
    }
}

struct Spawn {
    load_pos: Vec3,
    load_quat: Quat,
    cone: f64,
    mav_yaws: Vec<f64>,
    goal_pos: Vec3,
    goal_quat: Quat,
    load_mass: f64,
}

fn push_vec(buf: &mut Vec<f64>, v: Vec3) {
    buf.extend_from_slice(&[v.x, v.y, v.z]);
}

fn push_mat(buf: &mut Vec<f64>, m: &RotMat) {
    for r in 0..3 {
        push_vec(buf, m.row(r));
    }
}
