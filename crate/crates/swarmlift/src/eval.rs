//! Scenario runner and tracking metrics for trained policies: setpoint
//! steps, figure-eight trajectory tracking, mid-flight motor failure, a
//! scripted non-cooperative teammate, and load model mismatch, plus the
//! paired train-and-compare ablation suites.
//!
//! Evaluation is pure: the policy runs with frozen preprocessor statistics
//! and deterministic (mean) actions, so every scenario is bit-reproducible
//! under a fixed seed.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::env::{Env, EnvParams, ObservationMode};
use crate::error::{Error, Result};
use crate::geom::{quat_error_angle, Quat, Vec3};
use crate::lowlevel::ActionKind;
use crate::marl::{CriticKind, Policy, Trainer, TrainerParams};
use crate::nn::Workspace;
use crate::physics::RigidBodyState;
use crate::rng::{stream, uniform, STREAM_EVAL};

/// Published model-predictive-control baseline numbers, kept only as
/// context constants for reports; the baseline itself is not implemented.
pub const NMPC_POS_RMSE_M: f64 = 0.45;
pub const NMPC_ATT_RMSE_DEG: f64 = 16.24;
pub const NMPC_TIME_TO_TARGET_S: f64 = 6.84;
pub const NMPC_SOLVE_TIME_MS: f64 = 78.0;

/// Tolerance band defining "on target": position and attitude error must
/// both stay inside it through the end of the run.
pub const TOL_POS_M: f64 = 0.10;
pub const TOL_ATT_DEG: f64 = 10.0;

/// Gains of the stand-in PD setpoint controller used for the scripted
/// teammate (critically damped at ~1.4 rad/s).
const PD_KP: f64 = 2.0;
const PD_KD: f64 = 2.8;

// ---------------------------------------------------------------------------
// Scenario definitions
// ---------------------------------------------------------------------------

/// One scripted setpoint for the overridden teammate: from time `t`
/// (relative to scenario onset) it holds `offset` from its onset position.
#[derive(Debug, Clone, Copy)]
pub struct ScriptPoint {
    pub t: f64,
    pub offset: Vec3,
}

#[derive(Debug, Clone)]
pub enum ScenarioKind {
    /// Command a displaced, rotated goal pose from hover.
    SetpointStep { displacement: Vec3, attitude_deg: Vec3 },
    /// Track a moving goal along a planar figure-eight.
    FigureEight,
    /// Cut one MAV's rotors mid-flight; it stays attached and hangs.
    MavFailure { mav: usize },
    /// Replace one MAV's policy with a PD position controller following a
    /// scripted offset timeline.
    Heterogeneous { mav: usize, script: Vec<ScriptPoint> },
    /// Add an unmodeled object to the load, then fly the setpoint step.
    LoadMismatch { delta_mass: f64, offset: Vec3, displacement: Vec3, attitude_deg: Vec3 },
}

/// A complete evaluation scenario: settle in closed loop, apply the
/// scenario event, measure for `duration` seconds.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub kind: ScenarioKind,
    /// Closed-loop stabilization time before measurement starts (s).
    pub settle: f64,
    /// Measured flight time after scenario onset (s).
    pub duration: f64,
    pub repeats: usize,
    pub seed: u64,
}

impl Scenario {
    /// The headline experiment: 2 m displacement with a
    /// (30 deg, -20 deg, -90 deg) roll/pitch/yaw attitude command.
    pub fn setpoint_step() -> Scenario {
        Scenario {
            kind: ScenarioKind::SetpointStep {
                displacement: Vec3::new(2.0, 0.0, 0.0),
                attitude_deg: Vec3::new(30.0, -20.0, -90.0),
            },
            settle: 2.0,
            duration: 10.0,
            repeats: 1,
            seed: 0,
        }
    }

    /// Null command: hold the spawn pose (stabilization / noise floor).
    pub fn hover() -> Scenario {
        Scenario {
            kind: ScenarioKind::SetpointStep {
                displacement: Vec3::ZERO,
                attitude_deg: Vec3::ZERO,
            },
            ..Scenario::setpoint_step()
        }
    }

    pub fn figure_eight() -> Scenario {
        Scenario {
            kind: ScenarioKind::FigureEight,
            duration: (figure_eight_period() / 0.01).round() * 0.01,
            ..Scenario::setpoint_step()
        }
    }

    pub fn mav_failure() -> Scenario {
        Scenario { kind: ScenarioKind::MavFailure { mav: 0 }, ..Scenario::setpoint_step() }
    }

    /// Paper timeline: the scripted teammate moves 0.7 m outward on y,
    /// then 0.3 m back in.
    pub fn heterogeneous() -> Scenario {
        Scenario {
            kind: ScenarioKind::Heterogeneous {
                mav: 0,
                script: vec![
                    ScriptPoint { t: 1.0, offset: Vec3::new(0.0, 0.7, 0.0) },
                    ScriptPoint { t: 5.0, offset: Vec3::new(0.0, 0.4, 0.0) },
                ],
            },
            ..Scenario::setpoint_step()
        }
    }

    /// 0.216 kg (15.4% of the default load) bolted on off-center, then the
    /// standard setpoint step.
    pub fn load_mismatch() -> Scenario {
        Scenario {
            kind: ScenarioKind::LoadMismatch {
                delta_mass: 0.216,
                offset: Vec3::new(0.05, 0.0, 0.0),
                displacement: Vec3::new(2.0, 0.0, 0.0),
                attitude_deg: Vec3::new(30.0, -20.0, -90.0),
            },
            ..Scenario::setpoint_step()
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            ScenarioKind::SetpointStep { .. } => "setpoint_step",
            ScenarioKind::FigureEight => "figure_eight",
            ScenarioKind::MavFailure { .. } => "mav_failure",
            ScenarioKind::Heterogeneous { .. } => "heterogeneous",
            ScenarioKind::LoadMismatch { .. } => "load_mismatch",
        }
    }

    pub fn by_name(name: &str) -> Result<Scenario> {
        match name {
            "setpoint_step" => Ok(Scenario::setpoint_step()),
            "hover" => Ok(Scenario::hover()),
            "figure_eight" => Ok(Scenario::figure_eight()),
            "mav_failure" => Ok(Scenario::mav_failure()),
            "heterogeneous" => Ok(Scenario::heterogeneous()),
            "load_mismatch" => Ok(Scenario::load_mismatch()),
            other => Err(Error::Config(format!("unknown scenario {other:?}"))),
        }
    }

    pub fn validate(&self, env: &EnvParams) -> Result<()> {
        if !(self.settle >= 0.0 && self.duration > 0.0) {
            return Err(Error::Config("scenario times must be non-negative".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("scenario needs at least one repeat".into()));
        }
        let index = match &self.kind {
            ScenarioKind::MavFailure { mav } => Some(*mav),
            ScenarioKind::Heterogeneous { mav, .. } => Some(*mav),
            _ => None,
        };
        if let Some(mav) = index {
            if mav >= env.n_mavs {
                return Err(Error::Config(format!(
                    "scenario MAV index {mav} out of range for a team of {}",
                    env.n_mavs
                )));
            }
        }
        if let ScenarioKind::LoadMismatch { delta_mass, offset, .. } = &self.kind {
            if *delta_mass < 0.0 || offset.norm() > 0.1 {
                return Err(Error::Config(
                    "mismatch mass must be non-negative and its offset within 0.1 m".into(),
                ));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Figure-eight reference
// ---------------------------------------------------------------------------

/// Position offset of the figure-eight reference from its anchor at time
/// `t`. The curve is a 4 m x 1 m planar lemniscate with amplitude 2 m and
/// angular rate 1/sqrt(5) rad/s, which makes the peak speed exactly
/// 1.0 m/s and the peak acceleration exactly 0.5 m/s^2.
pub fn figure_eight_offset(t: f64) -> Vec3 {
    let theta = t / 5f64.sqrt();
    Vec3::new(2.0 * theta.sin(), theta.sin() * theta.cos(), 0.0)
}

/// Time for one full traversal (theta sweeping 2 pi).
pub fn figure_eight_period() -> f64 {
    2.0 * std::f64::consts::PI * 5f64.sqrt()
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Tracking quality of one scenario run. Errors are between the load pose
/// and the commanded goal pose, sampled at the control rate over the
/// measurement window.
#[derive(Debug, Clone, Copy)]
pub struct TrackingMetrics {
    pub pos_rmse: f64,
    pub att_rmse_deg: f64,
    /// First time after which both errors stay inside the tolerance band;
    /// equals the window duration when the band is never held.
    pub time_to_target: f64,
    pub reached: bool,
    /// Mean errors over the final second of the window.
    pub final_pos_err: f64,
    pub final_att_err_deg: f64,
    /// Peak position error (containment metric for failure studies).
    pub pos_max: f64,
    /// False when the episode terminated before the window finished.
    pub completed: bool,
}

/// Root-mean-square of a pointwise error series.
pub fn rmse(errors: &[f64]) -> f64 {
    if errors.is_empty() {
        return f64::INFINITY;
    }
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

/// First time from which both error series stay below their tolerances
/// through the end; `(window_duration, false)` when they never do. Sample
/// `i` is taken at time `i * dt`, so holding from sample `k` onward means
/// the target was reached at `k * dt`.
pub fn time_to_target(
    pos_err: &[f64],
    att_err_deg: &[f64],
    dt: f64,
    tol_pos: f64,
    tol_att_deg: f64,
) -> (f64, bool) {
    assert_eq!(pos_err.len(), att_err_deg.len());
    let duration = pos_err.len() as f64 * dt;
    let mut first_held = pos_err.len();
    for i in (0..pos_err.len()).rev() {
        if pos_err[i] < tol_pos && att_err_deg[i] < tol_att_deg {
            first_held = i;
        } else {
            break;
        }
    }
    if first_held == pos_err.len() {
        (duration, false)
    } else {
        (first_held as f64 * dt, true)
    }
}

fn compute_metrics(
    pos_err: &[f64],
    att_err_deg: &[f64],
    dt: f64,
    window: f64,
    completed: bool,
) -> TrackingMetrics {
    let (ttt, reached) = if completed {
        time_to_target(pos_err, att_err_deg, dt, TOL_POS_M, TOL_ATT_DEG)
    } else {
        (window, false)
    };
    let tail = ((1.0 / dt).round() as usize).min(pos_err.len()).max(1);
    let mean_tail = |s: &[f64]| {
        if s.is_empty() {
            f64::INFINITY
        } else {
            s[s.len() - tail.min(s.len())..].iter().sum::<f64>() / tail.min(s.len()) as f64
        }
    };
    TrackingMetrics {
        pos_rmse: rmse(pos_err),
        att_rmse_deg: rmse(att_err_deg),
        time_to_target: ttt,
        reached,
        final_pos_err: mean_tail(pos_err),
        final_att_err_deg: mean_tail(att_err_deg),
        pos_max: if pos_err.is_empty() {
            f64::INFINITY
        } else {
            pos_err.iter().cloned().fold(0.0, f64::max)
        },
        completed,
    }
}

pub fn metrics_csv_header() -> &'static str {
    "repeat,completed,pos_rmse,att_rmse_deg,time_to_target,reached,\
     final_pos_err,final_att_err_deg,pos_max"
}

impl TrackingMetrics {
    pub fn csv_row(&self, repeat: usize) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            repeat,
            self.completed as u8,
            self.pos_rmse,
            self.att_rmse_deg,
            self.time_to_target,
            self.reached as u8,
            self.final_pos_err,
            self.final_att_err_deg,
            self.pos_max
        )
    }
}

/// Mean over completed runs, used for suite summaries. Counts tell how many
/// runs completed and reached tolerance.
#[derive(Debug, Clone, Copy)]
pub struct MetricsSummary {
    pub runs: usize,
    pub completed: usize,
    pub reached: usize,
    pub pos_rmse: f64,
    pub att_rmse_deg: f64,
    pub time_to_target: f64,
    pub final_pos_err: f64,
    pub final_att_err_deg: f64,
    pub pos_max: f64,
}

pub fn summarize(runs: &[TrackingMetrics]) -> MetricsSummary {
    let done: Vec<&TrackingMetrics> = runs.iter().filter(|m| m.completed).collect();
    let mean = |f: fn(&TrackingMetrics) -> f64| {
        if done.is_empty() {
            f64::INFINITY
        } else {
            done.iter().map(|m| f(m)).sum::<f64>() / done.len() as f64
        }
    };
    MetricsSummary {
        runs: runs.len(),
        completed: done.len(),
        reached: runs.iter().filter(|m| m.reached).count(),
        pos_rmse: mean(|m| m.pos_rmse),
        att_rmse_deg: mean(|m| m.att_rmse_deg),
        time_to_target: mean(|m| m.time_to_target),
        final_pos_err: mean(|m| m.final_pos_err),
        final_att_err_deg: mean(|m| m.final_att_err_deg),
        pos_max: mean(|m| m.pos_max),
    }
}

// ---------------------------------------------------------------------------
// Scripted-teammate override
// ---------------------------------------------------------------------------

/// PD position-setpoint law expressed in the policy's own action space:
/// acceleration commands for the acceleration-based spaces, a proportional
/// velocity command for the velocity space. Collective-thrust actions have
/// no direct positional handle, so they are not supported.
pub fn pd_override_action(
    kind: ActionKind,
    setpoint: Vec3,
    state: &RigidBodyState,
    out: &mut [f64],
) -> Result<()> {
    assert_eq!(out.len(), kind.dim());
    out.fill(0.0);
    let err = setpoint - state.pos;
    match kind {
        ActionKind::Accbr | ActionKind::Acc => {
            let acc = err * PD_KP - state.vel * PD_KD;
            out[0] = acc.x;
            out[1] = acc.y;
            out[2] = acc.z;
            Ok(())
        }
        ActionKind::Vel => {
            let vel = err * (PD_KP / PD_KD);
            out[0] = vel.x;
            out[1] = vel.y;
            out[2] = vel.z;
            Ok(())
        }
        ActionKind::Ctbr => Err(Error::Config(
            "scripted-teammate override needs an acceleration or velocity action space".into(),
        )),
    }
}

/// Script lookup: the last point whose start time has passed, else zero.
pub fn script_offset(script: &[ScriptPoint], t: f64) -> Vec3 {
    script.iter().rev().find(|p| t >= p.t).map_or(Vec3::ZERO, |p| p.offset)
}

// ---------------------------------------------------------------------------
// Scenario runner
// ---------------------------------------------------------------------------

/// Everything produced by one scenario evaluation.
#[derive(Debug)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    pub runs: Vec<TrackingMetrics>,
    pub summary: MetricsSummary,
    /// Written only when an output directory was given.
    pub metrics_path: Option<PathBuf>,
}

fn series_csv_header(n_mavs: usize, act_dim: usize) -> String {
    let mut s = String::from(
        "t,goal_px,goal_py,goal_pz,goal_qw,goal_qx,goal_qy,goal_qz,\
         load_px,load_py,load_pz,load_qw,load_qx,load_qy,load_qz,pos_err,att_err_deg",
    );
    for i in 0..n_mavs {
        let _ = write!(s, ",mav{i}_px,mav{i}_py,mav{i}_pz");
        for j in 0..act_dim {
            let _ = write!(s, ",cmd{i}_{j}");
        }
    }
    s
}

/// Run every repeat of a scenario in closed loop with deterministic policy
/// actions. When `out_dir` is given, writes `metrics.csv` plus one
/// `series_<repeat>.csv` of pose-vs-time per repeat.
pub fn run_scenario(
    policy: &Policy,
    env_params: &EnvParams,
    scenario: &Scenario,
    out_dir: Option<&Path>,
) -> Result<ScenarioReport> {
    policy.check_compatible(env_params)?;
    scenario.validate(env_params)?;

    // Episodes must outlast the scenario so the timeout never truncates it.
    let mut params = env_params.clone();
    params.episode_duration =
        ((scenario.settle + scenario.duration) / params.control_dt).ceil() * params.control_dt
            + 1.0;
    params.load_mass_range = None;
    params.validate()?;
    let dt = params.control_dt;
    let n = params.n_mavs;
    let ad = params.action.dim();

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }

    let mut env = Env::new(params.clone(), scenario.seed, 0)?;
    let mut spawn_rng = stream(scenario.seed, STREAM_EVAL);
    let mut ws = Workspace::new();
    let mut raw = vec![0.0; n * ad];
    let mut runs = Vec::with_capacity(scenario.repeats);

    for repeat in 0..scenario.repeats {
        // Deterministic spawn, drawn from the evaluation stream.
        let load_pos = Vec3::new(
            uniform(&mut spawn_rng, -params.spawn_xy, params.spawn_xy),
            uniform(&mut spawn_rng, -params.spawn_xy, params.spawn_xy),
            uniform(&mut spawn_rng, params.spawn_z.0, params.spawn_z.1),
        );
        let yaw = uniform(&mut spawn_rng, -std::f64::consts::PI, std::f64::consts::PI);
        env.reset_to(load_pos, yaw, 15.0);

        if let ScenarioKind::LoadMismatch { delta_mass, offset, .. } = &scenario.kind {
            env.apply_load_mismatch(*delta_mass, *offset);
        }

        let mut series = out_dir
            .map(|dir| -> Result<_> {
                let mut f = std::io::BufWriter::new(fs::File::create(
                    dir.join(format!("series_{repeat}.csv")),
                )?);
                writeln!(f, "{}", series_csv_header(n, ad))?;
                Ok(f)
            })
            .transpose()?;

        // Settle phase: hold the spawn pose in closed loop.
        let settle_steps = (scenario.settle / dt).round() as usize;
        let mut completed = true;
        for _ in 0..settle_steps {
            for i in 0..n {
                policy.act_mean(env.observation(i), &mut ws, &mut raw[i * ad..(i + 1) * ad]);
            }
            if env.step(&raw)?.terminated.is_some() {
                completed = false;
                break;
            }
        }

        // Scenario onset.
        let (goal_pos0, goal_quat0) = env.goal();
        let mut hetero: Option<(usize, &[ScriptPoint], Vec3)> = None;
        if completed {
            match &scenario.kind {
                ScenarioKind::SetpointStep { displacement, attitude_deg }
                | ScenarioKind::LoadMismatch {
                    displacement, attitude_deg, ..
                } => {
                    let q = Quat::from_euler_zyx(
                        attitude_deg.x.to_radians(),
                        attitude_deg.y.to_radians(),
                        attitude_deg.z.to_radians(),
                    );
                    env.set_goal(goal_pos0 + *displacement, q);
                }
                ScenarioKind::FigureEight => {}
                ScenarioKind::MavFailure { mav } => env.failed[*mav] = true,
                ScenarioKind::Heterogeneous { mav, script } => {
                    hetero = Some((*mav, script.as_slice(), env.world().mavs[*mav].pos));
                }
            }
        }

        // Measurement phase.
        let meas_steps = (scenario.duration / dt).round() as usize;
        let mut pos_err = Vec::with_capacity(meas_steps);
        let mut att_err = Vec::with_capacity(meas_steps);
        for k in 0..meas_steps {
            if !completed {
                break;
            }
            let t = k as f64 * dt;
            if matches!(scenario.kind, ScenarioKind::FigureEight) {
                env.set_goal(goal_pos0 + figure_eight_offset(t), goal_quat0);
            }

            let (goal_pos, goal_quat) = env.goal();
            let load = env.world().load.clone();
            let e_pos = (goal_pos - load.pos).norm();
            let e_att = quat_error_angle(goal_quat, load.quat)?.to_degrees();
            pos_err.push(e_pos);
            att_err.push(e_att);

            for i in 0..n {
                policy.act_mean(env.observation(i), &mut ws, &mut raw[i * ad..(i + 1) * ad]);
            }
            if let Some((mav, script, anchor)) = hetero {
                let setpoint = anchor + script_offset(script, t);
                pd_override_action(
                    params.action,
                    setpoint,
                    &env.world().mavs[mav],
                    &mut raw[mav * ad..(mav + 1) * ad],
                )?;
            }

            if let Some(f) = series.as_mut() {
                let mut row = format!(
                    "{t},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{e_pos},{e_att}",
                    goal_pos.x,
                    goal_pos.y,
                    goal_pos.z,
                    goal_quat.w,
                    goal_quat.x,
                    goal_quat.y,
                    goal_quat.z,
                    load.pos.x,
                    load.pos.y,
                    load.pos.z,
                    load.quat.w,
                    load.quat.x,
                    load.quat.y,
                    load.quat.z,
                );
                for i in 0..n {
                    let p = env.world().mavs[i].pos;
                    let _ = write!(row, ",{},{},{}", p.x, p.y, p.z);
                    for j in 0..ad {
                        let _ = write!(row, ",{}", raw[i * ad + j]);
                    }
                }
                writeln!(f, "{row}")?;
            }

            if env.step(&raw)?.terminated.is_some() {
                completed = false;
            }
        }

        runs.push(compute_metrics(&pos_err, &att_err, dt, scenario.duration, completed));
    }

    let metrics_path = out_dir
        .map(|dir| -> Result<PathBuf> {
            let path = dir.join("metrics.csv");
            let mut f = std::io::BufWriter::new(fs::File::create(&path)?);
            writeln!(f, "{}", metrics_csv_header())?;
            for (r, m) in runs.iter().enumerate() {
                writeln!(f, "{}", m.csv_row(r))?;
            }
            Ok(path)
        })
        .transpose()?;

    Ok(ScenarioReport {
        scenario: scenario.clone(),
        summary: summarize(&runs),
        runs,
        metrics_path,
    })
}

// ---------------------------------------------------------------------------
// Ablation suites
// ---------------------------------------------------------------------------

/// Which design axis an ablation sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationKind {
    ActionSpace,
    ObservationSpace,
    HistoryLength,
    Critic,
}

impl std::str::FromStr for AblationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<AblationKind> {
        match s {
            "action_space" => Ok(AblationKind::ActionSpace),
            "observation_space" => Ok(AblationKind::ObservationSpace),
            "history_length" => Ok(AblationKind::HistoryLength),
            "critic" => Ok(AblationKind::Critic),
            other => Err(Error::Config(format!("unknown ablation {other:?}"))),
        }
    }
}

/// One arm of an ablation: a name plus the full configuration pair.
#[derive(Debug, Clone)]
pub struct AblationVariant {
    pub name: String,
    pub env: EnvParams,
    pub trainer: TrainerParams,
}

/// Expand an ablation axis into its matched configurations. Every variant
/// keeps the base step budget so comparisons are at equal cost.
pub fn ablation_variants(
    kind: AblationKind,
    base_env: &EnvParams,
    base_trainer: &TrainerParams,
) -> Vec<AblationVariant> {
    let make = |name: &str, env: EnvParams, trainer: TrainerParams| AblationVariant {
        name: name.to_string(),
        env,
        trainer,
    };
    match kind {
        AblationKind::ActionSpace => [ActionKind::Accbr, ActionKind::Acc, ActionKind::Vel, ActionKind::Ctbr]
            .into_iter()
            .map(|a| {
                make(
                    &a.to_string(),
                    EnvParams { action: a, ..base_env.clone() },
                    base_trainer.clone(),
                )
            })
            .collect(),
        AblationKind::ObservationSpace => [
            ObservationMode::Full,
            ObservationMode::PartialAugmented,
            ObservationMode::Partial,
        ]
        .into_iter()
        .map(|o| {
            make(
                &o.to_string(),
                EnvParams { observation: o, ..base_env.clone() },
                base_trainer.clone(),
            )
        })
        .collect(),
        AblationKind::HistoryLength => [1usize, 3]
            .into_iter()
            .map(|h| {
                make(
                    &format!("h{h}"),
                    EnvParams { history: h, ..base_env.clone() },
                    base_trainer.clone(),
                )
            })
            .collect(),
        AblationKind::Critic => [CriticKind::Centralized, CriticKind::Local]
            .into_iter()
            .map(|c| {
                make(
                    &c.to_string(),
                    base_env.clone(),
                    TrainerParams { critic: c, ..base_trainer.clone() },
                )
            })
            .collect(),
    }
}

pub fn ablation_csv_header() -> &'static str {
    "variant,iterations,env_steps,first_return,final_return,wall_s,\
     eval_runs,eval_completed,eval_reached,pos_rmse,att_rmse_deg,time_to_target"
}

/// Train every variant on an equal step budget, evaluate each with the same
/// scenario, and write a side-by-side comparison CSV. Per-variant artifacts
/// (metrics, checkpoints, evaluation series) land in subdirectories.
pub fn ablation_suite(
    kind: AblationKind,
    base_env: &EnvParams,
    base_trainer: &TrainerParams,
    scenario: &Scenario,
    seed: u64,
    out_dir: &Path,
    quiet: bool,
) -> Result<PathBuf> {
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join("comparison.csv");
    let mut csv = std::io::BufWriter::new(fs::File::create(&path)?);
    writeln!(csv, "{}", ablation_csv_header())?;

    for variant in ablation_variants(kind, base_env, base_trainer) {
        let dir = out_dir.join(&variant.name);
        if !quiet {
            println!("== variant {} ==", variant.name);
        }
        let mut trainer = Trainer::new(variant.env.clone(), variant.trainer.clone(), seed)?;
        let report = trainer.train(&dir, quiet)?;
        let policy = trainer.policy();
        let eval = run_scenario(&policy, &variant.env, scenario, Some(&dir.join("eval")))?;
        let s = eval.summary;
        writeln!(
            csv,
            "{},{},{},{},{},{:.1},{},{},{},{},{},{}",
            variant.name,
            report.iterations,
            report.env_steps,
            report.first_return,
            report.final_return,
            report.wall_s,
            s.runs,
            s.completed,
            s.reached,
            s.pos_rmse,
            s.att_rmse_deg,
            s.time_to_target
        )?;
        csv.flush()?;
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_matches_hand_arithmetic() {
        assert!((rmse(&[3.0, 4.0]) - 3.5355339059327378).abs() < 1e-12);
        assert_eq!(rmse(&[0.0, 0.0, 0.0]), 0.0);
        assert!(rmse(&[]).is_infinite());
    }

    #[test]
    fn time_to_target_finds_the_last_crossing() {
        // Constant zero error: on target from the start.
        let zeros = vec![0.0; 100];
        let (t, reached) = time_to_target(&zeros, &zeros, 0.01, TOL_POS_M, TOL_ATT_DEG);
        assert_eq!(t, 0.0);
        assert!(reached);

        // Crosses the band at 6.84 s and stays: the published baseline
        // number used as a synthetic fixture.
        let n = 1000;
        let pos: Vec<f64> = (0..n).map(|i| if (i as f64) * 0.01 < 6.84 { 0.2 } else { 0.05 }).collect();
        let att = vec![0.0; n];
        let (t, reached) = time_to_target(&pos, &att, 0.01, TOL_POS_M, TOL_ATT_DEG);
        assert!((t - 6.84).abs() < 1e-12, "{t}");
        assert!(reached);

        // A late excursion in either series resets the clock.
        let mut att_bad = att.clone();
        att_bad[n - 2] = 20.0;
        let (t, reached) = time_to_target(&pos, &att_bad, 0.01, TOL_POS_M, TOL_ATT_DEG);
        assert!((t - (n as f64 - 1.0) * 0.01).abs() < 1e-12);
        assert!(reached);

        // Never reaching the band: flagged, duration returned.
        let high = vec![0.5; 200];
        let (t, reached) = time_to_target(&high, &att[..200].to_vec(), 0.01, TOL_POS_M, TOL_ATT_DEG);
        assert_eq!(t, 2.0);
        assert!(!reached);
    }

    #[test]
    fn figure_eight_meets_speed_and_acceleration_bounds_exactly() {
        let period = figure_eight_period();
        let h = 1e-5;
        let mut vmax: f64 = 0.0;
        let mut amax: f64 = 0.0;
        let samples = 20_000;
        for k in 0..=samples {
            let t = period * k as f64 / samples as f64;
            let p0 = figure_eight_offset(t - h);
            let p1 = figure_eight_offset(t);
            let p2 = figure_eight_offset(t + h);
            let v = (p2 - p0) * (1.0 / (2.0 * h));
            let a = (p2 - p1 * 2.0 + p0) * (1.0 / (h * h));
            vmax = vmax.max(v.norm());
            amax = amax.max(a.norm());
        }
        assert!((vmax - 1.0).abs() < 0.01, "peak speed {vmax}");
        assert!((amax - 0.5).abs() < 0.01, "peak acceleration {amax}");

        // Closed curve.
        assert!((figure_eight_offset(0.0) - figure_eight_offset(period)).norm() < 1e-9);
        assert_eq!(figure_eight_offset(0.0), Vec3::ZERO);
    }

    #[test]
    fn script_lookup_is_piecewise_constant_from_each_start_time() {
        let script = [
            ScriptPoint { t: 1.0, offset: Vec3::new(0.0, 0.7, 0.0) },
            ScriptPoint { t: 5.0, offset: Vec3::new(0.0, 0.4, 0.0) },
        ];
        assert_eq!(script_offset(&script, 0.0), Vec3::ZERO);
        assert_eq!(script_offset(&script, 1.0).y, 0.7);
        assert_eq!(script_offset(&script, 4.99).y, 0.7);
        assert_eq!(script_offset(&script, 5.0).y, 0.4);
        assert_eq!(script_offset(&script, 100.0).y, 0.4);
    }

    #[test]
    fn pd_override_produces_proportional_derivative_accelerations() {
        let state = RigidBodyState {
            pos: Vec3::new(1.0, 0.0, 1.0),
            vel: Vec3::new(0.0, 0.5, 0.0),
            ..RigidBodyState::at(Vec3::ZERO, Quat::IDENTITY)
        };
        let setpoint = Vec3::new(1.0, 0.7, 1.0);
        let mut out = vec![0.0; 6];
        pd_override_action(ActionKind::Accbr, setpoint, &state, &mut out).unwrap();
        assert!((out[1] - (0.7 * PD_KP - 0.5 * PD_KD)).abs() < 1e-12);
        assert_eq!(out[0], 0.0);
        assert_eq!(&out[3..], &[0.0, 0.0, 0.0]);

        let mut out = vec![0.0; 4];
        assert!(pd_override_action(ActionKind::Ctbr, setpoint, &state, &mut out).is_err());
    }

    #[test]
    fn load_mismatch_conserves_physical_attachment_points() {
        let mut env = Env::new(EnvParams::default(), 1, 0).unwrap();
        env.reset_to(Vec3::new(0.0, 0.0, 1.0), 0.3, 15.0);
        let before: Vec<Vec3> = {
            let w = env.world();
            let m = env.model();
            (0..3).map(|i| w.load.pos + w.load.quat.rotate(m.cables[i].attach_load)).collect()
        };
        let mass_before = env.model().load.mass;
        let inertia_before = env.model().load.inertia;

        env.apply_load_mismatch(0.216, Vec3::new(0.05, 0.0, 0.0));

        assert!((env.model().load.mass - (mass_before + 0.216)).abs() < 1e-12);
        assert!(env.model().load.inertia.y > inertia_before.y);
        assert!(env.model().load.inertia.z > inertia_before.z);
        let w = env.world();
        let m = env.model();
        for (i, b) in before.iter().enumerate() {
            let after = w.load.pos + w.load.quat.rotate(m.cables[i].attach_load);
            assert!((after - *b).norm() < 1e-12, "attachment {i} moved");
        }

        // Zero added mass is the identity.
        let mut env2 = Env::new(EnvParams::default(), 1, 0).unwrap();
        env2.reset_to(Vec3::new(0.0, 0.0, 1.0), 0.3, 15.0);
        let before = env2.model().load.inertia;
        env2.apply_load_mismatch(0.0, Vec3::new(0.05, 0.0, 0.0));
        assert_eq!(env2.model().load.mass, EnvParams::default().load_mass);
        assert_eq!(env2.model().load.inertia, before);
    }

    #[test]
    fn scenario_defaults_match_the_published_parameters() {
        let s = Scenario::setpoint_step();
        if let ScenarioKind::SetpointStep { displacement, attitude_deg } = s.kind {
            assert_eq!(displacement.norm(), 2.0);
            assert_eq!(attitude_deg, Vec3::new(30.0, -20.0, -90.0));
        } else {
            panic!("wrong kind");
        }
        let s = Scenario::load_mismatch();
        if let ScenarioKind::LoadMismatch { delta_mass, .. } = s.kind {
            // 15.4% of the default 1.4 kg load.
            assert!((delta_mass / EnvParams::default().load_mass - 0.154).abs() < 2e-3);
        } else {
            panic!("wrong kind");
        }
        assert!(Scenario::by_name("nonsense").is_err());

        let bad = Scenario { repeats: 0, ..Scenario::hover() };
        assert!(bad.validate(&EnvParams::default()).is_err());
        let bad = Scenario {
            kind: ScenarioKind::MavFailure { mav: 7 },
            ..Scenario::mav_failure()
        };
        assert!(bad.validate(&EnvParams::default()).is_err());
    }

    fn quick_policy(env: &EnvParams) -> Policy {
        let trainer = Trainer::new(
            env.clone(),
            TrainerParams {
                n_envs: 1,
                rollout_len: 1,
                hidden: vec![16, 16],
                total_env_steps: 1,
                ..TrainerParams::default()
            },
            42,
        )
        .unwrap();
        trainer.policy()
    }

    #[test]
    fn scenario_rollouts_are_bit_reproducible_and_write_well_formed_csv() {
        let env = EnvParams::default();
        let policy = quick_policy(&env);
        let scenario = Scenario {
            settle: 0.1,
            duration: 0.3,
            repeats: 2,
            seed: 7,
            ..Scenario::hover()
        };

        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let a = run_scenario(&policy, &env, &scenario, Some(dir_a.path())).unwrap();
        let b = run_scenario(&policy, &env, &scenario, Some(dir_b.path())).unwrap();

        assert_eq!(a.runs.len(), 2);
        for (ma, mb) in a.runs.iter().zip(&b.runs) {
            assert_eq!(ma.pos_rmse.to_bits(), mb.pos_rmse.to_bits());
            assert_eq!(ma.att_rmse_deg.to_bits(), mb.att_rmse_deg.to_bits());
        }
        for r in 0..2 {
            let fa = fs::read(dir_a.path().join(format!("series_{r}.csv"))).unwrap();
            let fb = fs::read(dir_b.path().join(format!("series_{r}.csv"))).unwrap();
            assert_eq!(fa, fb, "series files differ for repeat {r}");
        }

        // Well-formed CSV: constant column count, numeric cells.
        let text = fs::read_to_string(dir_a.path().join("series_0.csv")).unwrap();
        let mut lines = text.lines();
        let cols = lines.next().unwrap().split(',').count();
        assert_eq!(cols, 17 + 3 * (3 + 6));
        let mut rows = 0;
        for line in lines {
            let cells: Vec<&str> = line.split(',').collect();
            assert_eq!(cells.len(), cols);
            for c in cells {
                c.parse::<f64>().unwrap();
            }
            rows += 1;
        }
        assert!(rows <= 30);
        assert!(a.metrics_path.is_some());
        let metrics = fs::read_to_string(a.metrics_path.unwrap()).unwrap();
        assert_eq!(metrics.lines().count(), 3);
    }

    #[test]
    fn incompatible_checkpoint_is_rejected_before_flying() {
        let env = EnvParams::default();
        let policy = quick_policy(&env);
        let other = EnvParams { n_mavs: 4, ..EnvParams::for_team(4) };
        let err = run_scenario(&policy, &other, &Scenario::hover(), None).unwrap_err();
        assert!(matches!(err, Error::Mismatch(_)), "{err}");
    }

    #[test]
    fn ablation_variants_cover_each_axis_at_equal_budget() {
        let env = EnvParams::default();
        let tp = TrainerParams::default();
        let action = ablation_variants(AblationKind::ActionSpace, &env, &tp);
        assert_eq!(action.len(), 4);
        assert_eq!(action[0].name, "accbr");
        assert_eq!(action[3].name, "ctbr");
        let obs = ablation_variants(AblationKind::ObservationSpace, &env, &tp);
        assert_eq!(obs.len(), 3);
        let hist = ablation_variants(AblationKind::HistoryLength, &env, &tp);
        assert_eq!(hist.len(), 2);
        assert_eq!(hist[0].env.history, 1);
        let critic = ablation_variants(AblationKind::Critic, &env, &tp);
        assert_eq!(critic.len(), 2);
        assert_eq!(critic[1].trainer.critic, CriticKind::Local);
        for v in action.iter().chain(&obs).chain(&hist).chain(&critic) {
            assert_eq!(v.trainer.total_env_steps, tp.total_env_steps);
        }
        assert!("action_space".parse::<AblationKind>().is_ok());
        assert!("bogus".parse::<AblationKind>().is_err());
    }
}
