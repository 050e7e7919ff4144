//! Rigid-body simulation of the MAV-cable-load system.
//!
//! Bodies (the load, each MAV, and optional cable chain nodes) are integrated
//! with semi-implicit Euler, then coupled through inextensible distance
//! constraints solved position-based: predicted positions are projected onto
//! the constraint manifold (Gauss-Seidel), velocities are rebuilt from the
//! projected transforms, and a velocity-level pass removes any residual
//! relative motion along each cable. Constraint impulses are accumulated per
//! cable to provide a tension estimate.
//!
//! All states live in the world frame; angular velocity is stored world-frame
//! and converted to the body frame only inside the integrator.

mod constraint;
mod rotor;

pub use constraint::{build_cable_constraints, BodyRef, CableModel, DistanceConstraint};
pub use rotor::{
    allocate_rotor_thrusts, rotor_step, rotor_thrusts, rotor_wrench, ActuatorParams, ActuatorState,
};

use crate::error::{Error, Result};
use crate::geom::{Quat, Vec3};
use crate::rng::standard_normal;
use rand::Rng;

/// Standard gravity (m/s^2), pointing along -z.
pub const GRAVITY: f64 = 9.81;

/// Gravity as a world-frame vector.
pub fn gravity_vec() -> Vec3 {
    Vec3::new(0.0, 0.0, -GRAVITY)
}

/// Mass and diagonal body-frame inertia of one rigid body.
#[derive(Debug, Clone)]
pub struct BodyParams {
    pub mass: f64,
    pub inertia: Vec3,
}

/// Pose and twist of a rigid body. `ang_vel` is world-frame.
#[derive(Debug, Clone, Default)]
pub struct RigidBodyState {
    pub pos: Vec3,
    pub quat: Quat,
    pub vel: Vec3,
    pub ang_vel: Vec3,
}

impl RigidBodyState {
    pub fn at(pos: Vec3, quat: Quat) -> Self {
        RigidBodyState { pos, quat, vel: Vec3::ZERO, ang_vel: Vec3::ZERO }
    }

    pub fn is_finite(&self) -> bool {
        self.pos.is_finite() && self.quat.is_finite() && self.vel.is_finite()
            && self.ang_vel.is_finite()
    }
}

/// A cable chain node: point mass, no orientation.
#[derive(Debug, Clone, Copy, Default)]
pub struct PointState {
    pub pos: Vec3,
    pub vel: Vec3,
}

/// Everything that changes during simulation.
#[derive(Debug, Clone)]
pub struct WorldState {
    pub time: f64,
    pub load: RigidBodyState,
    pub mavs: Vec<RigidBodyState>,
    pub nodes: Vec<PointState>,
    pub rotors: Vec<ActuatorState>,
    /// Net world-frame linear acceleration of each MAV averaged over the
    /// last `step` call (gravity included). Zero before the first step,
    /// which matches a vehicle at rest or in steady hover.
    pub last_accel: Vec<Vec3>,
}

impl WorldState {
    pub fn new(n_mavs: usize, n_nodes: usize) -> Self {
        WorldState {
            time: 0.0,
            load: RigidBodyState::default(),
            mavs: vec![RigidBodyState::default(); n_mavs],
            nodes: vec![PointState::default(); n_nodes],
            rotors: vec![ActuatorState::default(); n_mavs],
            last_accel: vec![Vec3::ZERO; n_mavs],
        }
    }
}

/// Static description of the simulated system.
#[derive(Debug, Clone)]
pub struct SystemModel {
    pub n_mavs: usize,
    pub mav: BodyParams,
    pub load: BodyParams,
    pub cables: Vec<CableModel>,
    pub actuator: ActuatorParams,
    pub constraints: Vec<DistanceConstraint>,
    pub node_masses: Vec<f64>,
    /// Integration substeps per `step` call.
    pub substeps: usize,
    /// Gauss-Seidel passes for each of the position and velocity solves.
    pub solver_iterations: usize,
    /// Isotropic linear drag coefficient (N per m/s), applied to every body.
    pub linear_drag: f64,
    /// Test/scenario hooks: pinned bodies skip integration entirely.
    pub load_fixed: bool,
    pub fixed_mavs: Vec<bool>,
    /// Constant world-frame disturbance force on each MAV (N).
    pub mav_external_force: Vec<Vec3>,
    /// Constant world-frame disturbance force on the load COM (N).
    pub load_external_force: Vec3,
}

impl SystemModel {
    /// Build a model; `cables` must be empty (uncoupled bodies) or contain
    /// exactly one cable per MAV.
    pub fn new(
        n_mavs: usize,
        mav: BodyParams,
        load: BodyParams,
        cables: Vec<CableModel>,
        actuator: ActuatorParams,
        substeps: usize,
        solver_iterations: usize,
    ) -> Result<Self> {
        if n_mavs == 0 {
            return Err(Error::Config("team size must be at least 1".into()));
        }
        if !cables.is_empty() && cables.len() != n_mavs {
            return Err(Error::Config(format!(
                "expected one cable per MAV ({n_mavs}), got {}",
                cables.len()
            )));
        }
        if substeps == 0 || solver_iterations == 0 {
            return Err(Error::Config(
                "substeps and solver iterations must be positive".into(),
            ));
        }
        let (constraints, n_nodes) = build_cable_constraints(&cables)?;
        let mut node_masses = vec![0.0; n_nodes];
        for c in &cables {
            if c.segments == 3 {
                // Two nodes per chain cable, appended in cable order.
                let base = node_masses.iter().position(|&m| m == 0.0).unwrap();
                node_masses[base] = c.node_mass;
                node_masses[base + 1] = c.node_mass;
            }
        }
        Ok(SystemModel {
            n_mavs,
            mav,
            load,
            cables,
            actuator,
            constraints,
            node_masses,
            substeps,
            solver_iterations,
            linear_drag: 0.0,
            load_fixed: false,
            fixed_mavs: vec![false; n_mavs],
            mav_external_force: vec![Vec3::ZERO; n_mavs],
            load_external_force: Vec3::ZERO,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.node_masses.len()
    }

    /// Combined mass of load, MAVs, and chain nodes.
    pub fn total_mass(&self) -> f64 {
        self.load.mass
            + self.n_mavs as f64 * self.mav.mass
            + self.node_masses.iter().sum::<f64>()
    }
}

/// Per-step simulation outputs consumed by the controller and environment.
#[derive(Debug, Clone)]
pub struct StepInfo {
    /// Mean net world-frame linear acceleration of each MAV over the step.
    pub mav_accel: Vec<Vec3>,
    /// Estimated tension (N) in each cable's MAV-side segment; positive when
    /// taut, negative under compression.
    pub cable_tension: Vec<f64>,
    /// End-of-step per-rotor thrusts (N) for each MAV.
    pub rotor_thrusts: Vec<[f64; 4]>,
}

/// IMU accelerometer model: specific force (acceleration minus gravity) in
/// the world frame, with optional zero-mean Gaussian noise per axis.
pub fn accelerometer<R: Rng + ?Sized>(
    world: &WorldState,
    mav: usize,
    noise_std: f64,
    rng: &mut R,
) -> Vec3 {
    let mut f = world.last_accel[mav] - gravity_vec();
    if noise_std > 0.0 {
        f += Vec3::new(
            noise_std * standard_normal(rng),
            noise_std * standard_normal(rng),
            noise_std * standard_normal(rng),
        );
    }
    f
}

/// Total mechanical energy: kinetic (linear + rotational) plus gravitational
/// potential, pinned bodies excluded.
pub fn total_energy(model: &SystemModel, world: &WorldState) -> f64 {
    let mut e = 0.0;
    let mut add_rigid = |body: &RigidBodyState, params: &BodyParams, fixed: bool| {
        if fixed {
            return;
        }
        let wb = body.quat.rotate_inv(body.ang_vel);
        e += 0.5 * params.mass * body.vel.norm_squared()
            + 0.5
                * (params.inertia.x * wb.x * wb.x
                    + params.inertia.y * wb.y * wb.y
                    + params.inertia.z * wb.z * wb.z)
            + params.mass * GRAVITY * body.pos.z;
    };
    add_rigid(&world.load, &model.load, model.load_fixed);
    for (i, m) in world.mavs.iter().enumerate() {
        add_rigid(m, &model.mav, model.fixed_mavs[i]);
    }
    for (n, &mass) in world.nodes.iter().zip(&model.node_masses) {
        e += 0.5 * mass * n.vel.norm_squared() + mass * GRAVITY * n.pos.z;
    }
    e
}

/// Total linear momentum of all non-pinned bodies.
pub fn total_momentum(model: &SystemModel, world: &WorldState) -> Vec3 {
    let mut p = Vec3::ZERO;
    if !model.load_fixed {
        p += world.load.vel * model.load.mass;
    }
    for (i, m) in world.mavs.iter().enumerate() {
        if !model.fixed_mavs[i] {
            p += m.vel * model.mav.mass;
        }
    }
    for (n, &mass) in world.nodes.iter().zip(&model.node_masses) {
        p += n.vel * mass;
    }
    p
}

// ---------------------------------------------------------------------------
// Stepper internals
// ---------------------------------------------------------------------------

fn inv_mass(model: &SystemModel, body: BodyRef) -> f64 {
    match body {
        BodyRef::Load => {
            if model.load_fixed {
                0.0
            } else {
                1.0 / model.load.mass
            }
        }
        BodyRef::Mav(i) => {
            if model.fixed_mavs[i] {
                0.0
            } else {
                1.0 / model.mav.mass
            }
        }
        BodyRef::Node(k) => 1.0 / model.node_masses[k],
    }
}

/// Apply the body's world-frame inverse inertia tensor to a world vector.
fn inv_inertia_world(quat: Quat, inertia: Vec3, v: Vec3) -> Vec3 {
    let b = quat.rotate_inv(v);
    quat.rotate(Vec3::new(b.x / inertia.x, b.y / inertia.y, b.z / inertia.z))
}

/// World anchor position and world lever arm of a constraint endpoint.
fn anchor_world(world: &WorldState, body: BodyRef, anchor: Vec3) -> (Vec3, Vec3) {
    match body {
        BodyRef::Load => {
            let r = world.load.quat.rotate(anchor);
            (world.load.pos + r, r)
        }
        BodyRef::Mav(i) => {
            let r = world.mavs[i].quat.rotate(anchor);
            (world.mavs[i].pos + r, r)
        }
        BodyRef::Node(k) => (world.nodes[k].pos, Vec3::ZERO),
    }
}

/// Generalized inverse mass seen by an impulse along `n` applied at lever `r`.
fn gen_inv_mass(model: &SystemModel, world: &WorldState, body: BodyRef, r: Vec3, n: Vec3) -> f64 {
    let w_lin = inv_mass(model, body);
    if w_lin == 0.0 {
        return 0.0;
    }
    match body {
        BodyRef::Load => {
            let rxn = r.cross(n);
            w_lin + rxn.dot(inv_inertia_world(world.load.quat, model.load.inertia, rxn))
        }
        BodyRef::Mav(i) => {
            let rxn = r.cross(n);
            w_lin + rxn.dot(inv_inertia_world(world.mavs[i].quat, model.mav.inertia, rxn))
        }
        BodyRef::Node(_) => w_lin,
    }
}

/// Shift a body's pose by a position-space impulse `imp` applied at lever `r`.
fn apply_position_impulse(
    model: &SystemModel,
    world: &mut WorldState,
    body: BodyRef,
    r: Vec3,
    imp: Vec3,
) {
    let w_lin = inv_mass(model, body);
    if w_lin == 0.0 {
        return;
    }
    match body {
        BodyRef::Load => {
            world.load.pos += imp * w_lin;
            let dw = inv_inertia_world(world.load.quat, model.load.inertia, r.cross(imp));
            world.load.quat = (Quat::from_scaled_axis(dw) * world.load.quat).normalized();
        }
        BodyRef::Mav(i) => {
            world.mavs[i].pos += imp * w_lin;
            let dw = inv_inertia_world(world.mavs[i].quat, model.mav.inertia, r.cross(imp));
            world.mavs[i].quat = (Quat::from_scaled_axis(dw) * world.mavs[i].quat).normalized();
        }
        BodyRef::Node(k) => {
            world.nodes[k].pos += imp * w_lin;
        }
    }
}

/// Change a body's velocity state by a momentum impulse `imp` at lever `r`.
fn apply_velocity_impulse(
    model: &SystemModel,
    world: &mut WorldState,
    body: BodyRef,
    r: Vec3,
    imp: Vec3,
) {
    let w_lin = inv_mass(model, body);
    if w_lin == 0.0 {
        return;
    }
    match body {
        BodyRef::Load => {
            world.load.vel += imp * w_lin;
            world.load.ang_vel +=
                inv_inertia_world(world.load.quat, model.load.inertia, r.cross(imp));
        }
        BodyRef::Mav(i) => {
            let dw = inv_inertia_world(world.mavs[i].quat, model.mav.inertia, r.cross(imp));
            world.mavs[i].vel += imp * w_lin;
            world.mavs[i].ang_vel += dw;
        }
        BodyRef::Node(k) => {
            world.nodes[k].vel += imp * w_lin;
        }
    }
}

/// Velocity of a constraint endpoint (linear + rotational contribution).
fn point_velocity(world: &WorldState, body: BodyRef, r: Vec3) -> Vec3 {
    match body {
        BodyRef::Load => world.load.vel + world.load.ang_vel.cross(r),
        BodyRef::Mav(i) => world.mavs[i].vel + world.mavs[i].ang_vel.cross(r),
        BodyRef::Node(k) => world.nodes[k].vel,
    }
}

/// Advance the coupled system by `dt`, holding `rotor_cmds` constant.
/// Returns per-step acceleration, tension, and thrust summaries.
pub fn step(
    model: &SystemModel,
    world: &mut WorldState,
    rotor_cmds: &[[f64; 4]],
    dt: f64,
) -> Result<StepInfo> {
    if rotor_cmds.len() != model.n_mavs {
        return Err(Error::Contract(format!(
            "expected {} rotor commands, got {}",
            model.n_mavs,
            rotor_cmds.len()
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::Contract(format!("step dt must be positive, got {dt}")));
    }

    let dt_sub = dt / model.substeps as f64;
    let v_start: Vec<Vec3> = world.mavs.iter().map(|m| m.vel).collect();
    let mut tension_impulse = vec![0.0; model.cables.len()];

    for _ in 0..model.substeps {
        substep(model, world, rotor_cmds, dt_sub, &mut tension_impulse);
    }

    // Divergence check once per step; report the first offending body.
    let bad_body = if !world.load.is_finite() {
        Some("load".to_string())
    } else {
        world
            .mavs
            .iter()
            .position(|m| !m.is_finite())
            .map(|i| format!("mav {i}"))
            .or_else(|| {
                world
                    .nodes
                    .iter()
                    .position(|n| !(n.pos.is_finite() && n.vel.is_finite()))
                    .map(|k| format!("node {k}"))
            })
    };
    if let Some(body) = bad_body {
        return Err(Error::SimulationDiverged { body, time: world.time });
    }

    let mav_accel: Vec<Vec3> = world
        .mavs
        .iter()
        .zip(&v_start)
        .map(|(m, &v0)| (m.vel - v0) / dt)
        .collect();
    let thrusts: Vec<[f64; 4]> = world
        .rotors
        .iter()
        .map(|r| rotor_thrusts(&model.actuator, r))
        .collect();
    let cable_tension: Vec<f64> = tension_impulse.iter().map(|&j| j / dt).collect();

    world.time += dt;
    world.last_accel.clone_from(&mav_accel);

    Ok(StepInfo { mav_accel, cable_tension, rotor_thrusts: thrusts })
}

fn substep(
    model: &SystemModel,
    world: &mut WorldState,
    rotor_cmds: &[[f64; 4]],
    dt: f64,
    tension_impulse: &mut [f64],
) {
    let g = gravity_vec();
    let drag = model.linear_drag;

    // Rotor speed lag runs at the substep rate.
    for (rotor, cmd) in world.rotors.iter_mut().zip(rotor_cmds) {
        rotor_step(&model.actuator, rotor, cmd, dt);
    }

    // Remember pre-step transforms: velocities are rebuilt from the
    // projected positions afterwards.
    let prev_load = (world.load.pos, world.load.quat);
    let prev_mavs: Vec<(Vec3, Quat)> = world.mavs.iter().map(|m| (m.pos, m.quat)).collect();
    let prev_nodes: Vec<Vec3> = world.nodes.iter().map(|n| n.pos).collect();

    // Free-motion prediction (semi-implicit Euler).
    for i in 0..model.n_mavs {
        if model.fixed_mavs[i] {
            world.mavs[i].vel = Vec3::ZERO;
            world.mavs[i].ang_vel = Vec3::ZERO;
            continue;
        }
        let (collective, torque_b) = rotor_wrench(&model.actuator, &world.rotors[i]);
        let m = &mut world.mavs[i];
        let thrust_world = m.quat.rotate(Vec3::new(0.0, 0.0, collective));
        let force = thrust_world + model.mav_external_force[i] - m.vel * drag;
        m.vel += (g + force / model.mav.mass) * dt;
        m.pos += m.vel * dt;

        let inertia = model.mav.inertia;
        let mut wb = m.quat.rotate_inv(m.ang_vel);
        let coriolis = wb.cross(Vec3::new(inertia.x * wb.x, inertia.y * wb.y, inertia.z * wb.z));
        let dwb = Vec3::new(
            (torque_b.x - coriolis.x) / inertia.x,
            (torque_b.y - coriolis.y) / inertia.y,
            (torque_b.z - coriolis.z) / inertia.z,
        );
        wb += dwb * dt;
        m.quat = (m.quat * Quat::from_scaled_axis(wb * dt)).normalized();
        m.ang_vel = m.quat.rotate(wb);
    }

    if !model.load_fixed {
        let l = &mut world.load;
        let force = model.load_external_force - l.vel * drag;
        l.vel += (g + force / model.load.mass) * dt;
        l.pos += l.vel * dt;
        let inertia = model.load.inertia;
        let mut wb = l.quat.rotate_inv(l.ang_vel);
        let coriolis = wb.cross(Vec3::new(inertia.x * wb.x, inertia.y * wb.y, inertia.z * wb.z));
        let dwb = Vec3::new(
            -coriolis.x / inertia.x,
            -coriolis.y / inertia.y,
            -coriolis.z / inertia.z,
        );
        wb += dwb * dt;
        l.quat = (l.quat * Quat::from_scaled_axis(wb * dt)).normalized();
        l.ang_vel = l.quat.rotate(wb);
    } else {
        world.load.vel = Vec3::ZERO;
        world.load.ang_vel = Vec3::ZERO;
    }

    // Chain nodes feel gravity only; their masses are far too small for the
    // body drag coefficient to apply sensibly.
    for n in world.nodes.iter_mut() {
        n.vel += g * dt;
        n.pos += n.vel * dt;
    }

    // Position projection: Gauss-Seidel along each constraint's gradient
    // evaluated at the *pre-substep* configuration (the SHAKE scheme).
    // Correcting along the stale gradient instead of the predicted one keeps
    // the integrator symplectic; the naive variant bleeds a few percent of a
    // pendulum's energy per minute. The violation magnitude is always
    // re-evaluated at the current configuration, and we fall back to the
    // current gradient when the two directions disagree badly (violent
    // configuration changes, where energy purity no longer matters).
    let anchor_prev = |body: BodyRef, anchor: Vec3| -> (Vec3, Vec3) {
        match body {
            BodyRef::Load => {
                let r = prev_load.1.rotate(anchor);
                (prev_load.0 + r, r)
            }
            BodyRef::Mav(i) => {
                let r = prev_mavs[i].1.rotate(anchor);
                (prev_mavs[i].0 + r, r)
            }
            BodyRef::Node(k) => (prev_nodes[k], Vec3::ZERO),
        }
    };
    let grad_prev: Vec<(Vec3, Vec3, Vec3)> = model
        .constraints
        .iter()
        .map(|c| {
            let (xa, ra) = anchor_prev(c.a, c.anchor_a);
            let (xb, rb) = anchor_prev(c.b, c.anchor_b);
            let n = (xa - xb).normalized().unwrap_or(Vec3::Z);
            (n, ra, rb)
        })
        .collect();
    for _ in 0..model.solver_iterations {
        for (c, &(n_prev, ra_prev, rb_prev)) in model.constraints.iter().zip(&grad_prev) {
            let (xa, _) = anchor_world(world, c.a, c.anchor_a);
            let (xb, _) = anchor_world(world, c.b, c.anchor_b);
            let d = xa - xb;
            let dist = d.norm();
            if dist < 1e-9 {
                continue;
            }
            let n_cur = d / dist;
            let violation = dist - c.length;
            if violation == 0.0 {
                continue;
            }
            let n = if n_prev.dot(n_cur) >= 0.5 { n_prev } else { n_cur };
            let w = gen_inv_mass(model, world, c.a, ra_prev, n)
                + gen_inv_mass(model, world, c.b, rb_prev, n);
            if w <= 0.0 {
                continue;
            }
            let lambda = -violation / w;
            apply_position_impulse(model, world, c.a, ra_prev, n * lambda);
            apply_position_impulse(model, world, c.b, rb_prev, n * -lambda);
            if c.probe {
                // Stretched constraints (violation > 0, lambda < 0) mean
                // tension; convert the position impulse to momentum units.
                tension_impulse[c.cable] += -lambda / dt;
            }
        }
    }

    // Rebuild velocities from the projected transforms.
    let rebuild = |pos: Vec3, prev: Vec3| (pos - prev) / dt;
    world.load.vel = rebuild(world.load.pos, prev_load.0);
    world.load.ang_vel = {
        let dq = (world.load.quat * prev_load.1.conjugate()).canonicalized();
        dq.to_scaled_axis() / dt
    };
    for (i, m) in world.mavs.iter_mut().enumerate() {
        m.vel = rebuild(m.pos, prev_mavs[i].0);
        let dq = (m.quat * prev_mavs[i].1.conjugate()).canonicalized();
        m.ang_vel = dq.to_scaled_axis() / dt;
    }
    for (k, n) in world.nodes.iter_mut().enumerate() {
        n.vel = rebuild(n.pos, prev_nodes[k]);
    }

    // Velocity projection: cancel residual relative velocity along each
    // constraint so cables neither stretch nor store elastic energy. The
    // normal is evaluated at the midpoint of the pre-/post-projection anchor
    // positions: rebuilt velocities follow the chord between the two
    // configurations, which is orthogonal to the midpoint normal on a
    // circular arc, so legitimate swinging motion is left untouched.
    for _ in 0..model.solver_iterations {
        for c in &model.constraints {
            let (xa, ra) = anchor_world(world, c.a, c.anchor_a);
            let (xb, rb) = anchor_world(world, c.b, c.anchor_b);
            let mid_a = (xa + anchor_prev(c.a, c.anchor_a).0) * 0.5;
            let mid_b = (xb + anchor_prev(c.b, c.anchor_b).0) * 0.5;
            let d = mid_a - mid_b;
            let dist = d.norm();
            if dist < 1e-9 {
                continue;
            }
            let n = d / dist;
            let vn = n.dot(point_velocity(world, c.a, ra) - point_velocity(world, c.b, rb));
            if vn == 0.0 {
                continue;
            }
            let w = gen_inv_mass(model, world, c.a, ra, n)
                + gen_inv_mass(model, world, c.b, rb, n);
            if w <= 0.0 {
                continue;
            }
            let impulse = -vn / w;
            apply_velocity_impulse(model, world, c.a, ra, n * impulse);
            apply_velocity_impulse(model, world, c.b, rb, n * -impulse);
            if c.probe {
                tension_impulse[c.cable] += -impulse;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mav_params() -> BodyParams {
        BodyParams { mass: 0.6, inertia: Vec3::new(0.005, 0.005, 0.009) }
    }

    fn load_params() -> BodyParams {
        BodyParams { mass: 1.4, inertia: Vec3::new(0.015, 0.015, 0.028) }
    }

    fn actuator() -> ActuatorParams {
        ActuatorParams {
            thrust_coeff: 1.8167e-6,
            torque_coeff: 2.9067e-8,
            arm_length: 0.15,
            max_rotor_speed: 1500.0,
            time_constant: 0.02,
        }
    }

    /// Fixed anchor MAV with the load hanging on a 1 m rod.
    fn pendulum_model() -> SystemModel {
        let cables = vec![CableModel {
            length: 1.0,
            segments: 1,
            attach_load: Vec3::ZERO,
            attach_mav: Vec3::ZERO,
            node_mass: 0.0,
        }];
        let mut model = SystemModel::new(
            1,
            mav_params(),
            load_params(),
            cables,
            actuator(),
            4,
            8,
        )
        .unwrap();
        model.fixed_mavs[0] = true;
        model
    }

    #[test]
    fn pendulum_period_matches_analytic_small_angle() {
        let model = pendulum_model();
        let mut world = WorldState::new(1, 0);
        world.mavs[0].pos = Vec3::ZERO;
        // 5-degree initial displacement: small-angle period 2*pi*sqrt(L/g).
        let theta0: f64 = 5.0f64.to_radians();
        world.load.pos = Vec3::new(theta0.sin(), 0.0, -theta0.cos());

        let dt = 1.0 / 300.0;
        let mut prev_x = world.load.pos.x;
        let mut crossings = Vec::new();
        for _ in 0..(8.0 * 300.0) as usize {
            step(&model, &mut world, &[[0.0; 4]], dt).unwrap();
            let x = world.load.pos.x;
            if prev_x > 0.0 && x <= 0.0 {
                // Linear interpolation of the downward zero crossing.
                let t = world.time - dt * x / (x - prev_x);
                crossings.push(t);
            }
            prev_x = x;
        }
        assert!(crossings.len() >= 3, "pendulum did not oscillate");
        let period = (crossings[crossings.len() - 1] - crossings[0])
            / (crossings.len() - 1) as f64;
        let analytic = std::f64::consts::TAU * (1.0f64 / GRAVITY).sqrt();
        assert!(
            (period - analytic).abs() / analytic < 0.01,
            "period {period} vs analytic {analytic}"
        );
    }

    #[test]
    fn pendulum_energy_drift_below_one_percent_over_ten_seconds() {
        let model = pendulum_model();
        let mut world = WorldState::new(1, 0);
        world.load.pos = Vec3::new(0.6, 0.0, -0.8); // 36.87 degrees, on the rod

        let dt = 1.0 / 300.0;
        let e0 = total_energy(&model, &world);
        // Reference scale: energy relative to the pendulum's lowest point.
        let e_min = -model.load.mass * GRAVITY * 1.0;
        let scale = e0 - e_min;
        let mut max_drift = 0.0f64;
        for _ in 0..(10.0 * 300.0) as usize {
            step(&model, &mut world, &[[0.0; 4]], dt).unwrap();
            let drift = (total_energy(&model, &world) - e0).abs() / scale;
            max_drift = max_drift.max(drift);
        }
        assert!(max_drift < 0.01, "energy drift {max_drift}");
    }

    #[test]
    fn chain_momentum_changes_only_by_gravity() {
        // Four MAVs on segmented cables, everything free, no thrust: internal
        // constraint impulses must cancel pairwise, so total momentum changes
        // by exactly M*g*dt each step.
        let n = 4;
        let cables: Vec<CableModel> = (0..n)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / n as f64;
                CableModel {
                    length: 1.0,
                    segments: 3,
                    attach_load: Vec3::new(0.2 * a.cos(), 0.2 * a.sin(), 0.0),
                    attach_mav: Vec3::ZERO,
                    node_mass: 0.001,
                }
            })
            .collect();
        let model = SystemModel::new(
            n,
            mav_params(),
            load_params(),
            cables.clone(),
            actuator(),
            4,
            8,
        )
        .unwrap();
        let mut world = WorldState::new(n, model.n_nodes());
        // Messy but valid initial geometry: MAVs above their attachments,
        // nodes strung on the line, and some sideways initial velocity.
        for i in 0..n {
            let attach = cables[i].attach_load;
            world.mavs[i].pos = attach + Vec3::new(0.3, 0.0, 0.8);
            world.mavs[i].vel = Vec3::new(0.2 * i as f64, -0.1, 0.05);
            for s in 0..2 {
                let t = (s + 1) as f64 / 3.0;
                world.nodes[2 * i + s].pos =
                    world.mavs[i].pos + (attach - world.mavs[i].pos) * t;
            }
        }
        world.load.vel = Vec3::new(-0.3, 0.2, 0.0);

        let dt = 1.0 / 300.0;
        let mg = model.total_mass() * GRAVITY;
        for _ in 0..300 {
            let p0 = total_momentum(&model, &world);
            step(&model, &mut world, &[[0.0; 4]; 4], dt).unwrap();
            let p1 = total_momentum(&model, &world);
            let expected = p0 + Vec3::new(0.0, 0.0, -mg * dt);
            assert!(
                (p1 - expected).norm() < 1e-6,
                "momentum residual {} at t={}",
                (p1 - expected).norm(),
                world.time
            );
        }
    }

    #[test]
    fn static_hang_matches_force_balance() {
        // Three pinned MAVs, cables tilted 30 degrees from vertical:
        // per-cable tension T = W / (3 cos 30); vertical components sum to W.
        let n = 3;
        let r_att = 0.2;
        let tilt_offset = 0.5; // horizontal distance between anchor and attachment
        let cables: Vec<CableModel> = (0..n)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / n as f64;
                CableModel {
                    length: 1.0,
                    segments: 1,
                    attach_load: Vec3::new(r_att * a.cos(), r_att * a.sin(), 0.0),
                    attach_mav: Vec3::ZERO,
                    node_mass: 0.0,
                }
            })
            .collect();
        let mut model = SystemModel::new(
            n,
            mav_params(),
            load_params(),
            cables,
            actuator(),
            4,
            8,
        )
        .unwrap();
        model.fixed_mavs = vec![true; n];
        model.linear_drag = 0.3; // damp the settling transient

        let h = (1.0f64 - tilt_offset * tilt_offset).sqrt();
        let mut world = WorldState::new(n, 0);
        world.load.pos = Vec3::new(0.0, 0.0, -h);
        for i in 0..n {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            world.mavs[i].pos = Vec3::new(
                (r_att + tilt_offset) * a.cos(),
                (r_att + tilt_offset) * a.sin(),
                0.0,
            );
        }

        let dt = 1.0 / 300.0;
        let mut tensions = vec![0.0; n];
        let steps = (3.0 * 300.0) as usize;
        let tail = 150; // average the final 0.5 s
        let mut count = 0;
        for k in 0..steps {
            let info = step(&model, &mut world, &[[0.0; 4]; 3], dt).unwrap();
            if k >= steps - tail {
                for i in 0..n {
                    tensions[i] += info.cable_tension[i];
                }
                count += 1;
            }
        }
        let weight = model.load.mass * GRAVITY;
        let cos_tilt = h; // cos(theta) with 1 m cables
        let expected = weight / (n as f64 * cos_tilt);
        let mut vertical_support = 0.0;
        for t in tensions.iter_mut() {
            *t /= count as f64;
            assert!(
                (*t - expected).abs() / expected < 0.02,
                "tension {t} vs static analysis {expected}"
            );
            vertical_support += *t * cos_tilt;
        }
        assert!(
            (vertical_support - weight).abs() / weight < 0.02,
            "support {vertical_support} vs weight {weight}"
        );
    }

    #[test]
    fn hover_commands_hold_single_mav_still() {
        // Free MAV with rotors pre-spun to hover speed and commanded to stay
        // there: thrust cancels gravity identically.
        let model = SystemModel::new(
            1,
            mav_params(),
            load_params(),
            vec![],
            actuator(),
            4,
            8,
        )
        .unwrap();
        let mut world = WorldState::new(1, 0);
        world.mavs[0].pos = Vec3::new(0.0, 0.0, 1.0);
        world.rotors[0] = ActuatorState::hover(&model.actuator, model.mav.mass, GRAVITY);
        let hover_cmd = world.rotors[0].speeds;

        let dt = 1.0 / 300.0;
        for _ in 0..300 {
            step(&model, &mut world, &[hover_cmd], dt).unwrap();
        }
        assert!((world.mavs[0].pos - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-9);
        assert!(world.mavs[0].vel.norm() < 1e-9);
    }

    #[test]
    fn accelerometer_reads_specific_force() {
        let model = SystemModel::new(
            1,
            mav_params(),
            load_params(),
            vec![],
            actuator(),
            4,
            8,
        )
        .unwrap();
        let mut world = WorldState::new(1, 0);
        let mut rng = crate::rng::stream(0, 0);

        // Before any step: at-rest convention reads +g on z.
        let f = accelerometer(&world, 0, 0.0, &mut rng);
        assert!((f - Vec3::new(0.0, 0.0, GRAVITY)).norm() < 1e-12);

        // Free fall (no thrust): specific force is zero.
        step(&model, &mut world, &[[0.0; 4]], 1.0 / 300.0).unwrap();
        let f = accelerometer(&world, 0, 0.0, &mut rng);
        assert!(f.norm() < 1e-9, "free-fall reading {f:?}");

        // Hover: reads +g again.
        world.rotors[0] = ActuatorState::hover(&model.actuator, model.mav.mass, GRAVITY);
        let cmd = world.rotors[0].speeds;
        step(&model, &mut world, &[cmd], 1.0 / 300.0).unwrap();
        let f = accelerometer(&world, 0, 0.0, &mut rng);
        assert!((f - Vec3::new(0.0, 0.0, GRAVITY)).norm() < 1e-9);
    }

    #[test]
    fn step_is_deterministic() {
        let model = pendulum_model();
        let run = || {
            let mut world = WorldState::new(1, 0);
            world.load.pos = Vec3::new(0.6, 0.0, -0.8);
            for _ in 0..500 {
                step(&model, &mut world, &[[300.0; 4]], 1.0 / 300.0).unwrap();
            }
            world
        };
        let a = run();
        let b = run();
        assert_eq!(a.load.pos, b.load.pos);
        assert_eq!(a.load.vel, b.load.vel);
        assert_eq!(a.mavs[0].quat, b.mavs[0].quat);
    }

    #[test]
    fn divergence_is_reported_with_body_name() {
        let model = pendulum_model();
        let mut world = WorldState::new(1, 0);
        world.load.pos = Vec3::new(0.0, 0.0, -1.0);
        world.load.vel.x = f64::NAN;
        let err = step(&model, &mut world, &[[0.0; 4]], 1.0 / 300.0).unwrap_err();
        match err {
            Error::SimulationDiverged { body, .. } => assert_eq!(body, "load"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn wrong_command_count_is_a_contract_error() {
        let model = pendulum_model();
        let mut world = WorldState::new(1, 0);
        assert!(matches!(
            step(&model, &mut world, &[], 0.01),
            Err(Error::Contract(_))
        ));
    }
}
