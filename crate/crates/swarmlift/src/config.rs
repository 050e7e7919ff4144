//! Run configuration: a TOML file with `[system]`, `[lowlevel]`, `[env]`,
//! `[marl]`, and `[eval]` sections, every field optional and falling back
//! to the built-in defaults. Unknown keys are rejected, dotted
//! `key=value` command-line overrides are applied onto the parsed file
//! before resolution, and the post-override document is hashed (FNV-1a)
//! so run manifests and checkpoints can identify their configuration.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{EnvParams, RewardWeights};
use crate::error::{Error, Result};
use crate::eval::{Scenario, ScenarioKind, ScriptPoint};
use crate::geom::Vec3;
use crate::marl::{CriticKind, TrainerParams};
use crate::nn::Activation;

/// 64-bit FNV-1a over a byte string.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Physical plant: team size, masses, cables, actuators.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemSection {
    pub n_mavs: Option<usize>,
    pub mav_mass: Option<f64>,
    pub mav_inertia: Option<[f64; 3]>,
    pub load_mass: Option<f64>,
    pub load_inertia: Option<[f64; 3]>,
    /// Per-episode uniform load-mass range; omit to keep the mass fixed.
    pub load_mass_range: Option<[f64; 2]>,
    pub cable_length: Option<f64>,
    pub cable_segments: Option<usize>,
    pub attach_radius: Option<f64>,
    pub node_mass: Option<f64>,
    pub thrust_coeff: Option<f64>,
    pub torque_coeff: Option<f64>,
    pub arm_length: Option<f64>,
    pub max_rotor_speed: Option<f64>,
    pub rotor_time_constant: Option<f64>,
    pub accel_noise_std: Option<f64>,
    pub substeps: Option<usize>,
    pub solver_iterations: Option<usize>,
}

/// Inner-loop controller gains and command bounds.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LowLevelSection {
    pub attitude_gain: Option<f64>,
    pub rate_gain: Option<f64>,
    pub velocity_gain: Option<f64>,
    pub filter_cutoff_hz: Option<f64>,
    pub min_specific_thrust: Option<f64>,
    pub compensation: Option<bool>,
    pub accel_bound: Option<f64>,
    pub rate_bound: Option<f64>,
    pub velocity_bound: Option<f64>,
}

/// Task definition: action/observation spaces, episode shape, spawning,
/// reward weights, termination thresholds.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub action: Option<String>,
    pub observation: Option<String>,
    pub history: Option<usize>,
    pub episode_duration: Option<f64>,
    pub control_dt: Option<f64>,
    pub lowlevel_per_control: Option<usize>,
    /// The nine shaping weights, in component order.
    pub reward_weights: Option<[f64; 9]>,
    pub spawn_xy: Option<f64>,
    pub spawn_z: Option<[f64; 2]>,
    pub spawn_cone_deg: Option<[f64; 2]>,
    pub goal_tilt_deg: Option<f64>,
    pub max_spawn_attempts: Option<usize>,
    pub ground_clearance: Option<f64>,
    pub cable_load_angle_deg: Option<f64>,
    pub cable_mav_angle_deg: Option<f64>,
    pub cable_clearance: Option<f64>,
    pub mav_clearance: Option<f64>,
    pub bbox_xy: Option<f64>,
    pub bbox_z: Option<f64>,
    pub tension_min: Option<f64>,
}

/// Optimizer and network hyperparameters.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarlSection {
    pub envs: Option<usize>,
    pub rollouts: Option<usize>,
    pub epochs: Option<usize>,
    pub minibatches: Option<usize>,
    pub gamma: Option<f64>,
    pub gae_lambda: Option<f64>,
    pub ratio_clip: Option<f64>,
    pub value_clip: Option<f64>,
    pub entropy_scale: Option<f64>,
    pub value_scale: Option<f64>,
    pub grad_clip: Option<f64>,
    pub lr_actor: Option<f64>,
    pub lr_critic: Option<f64>,
    pub advantage_keep: Option<f64>,
    pub kl_threshold: Option<f64>,
    pub hidden: Option<Vec<usize>>,
    pub activation: Option<String>,
    pub critic: Option<String>,
    pub init_log_std: Option<f64>,
    pub actor_out_gain: Option<f64>,
    pub total_env_steps: Option<u64>,
    pub checkpoint_every: Option<usize>,
}

/// Evaluation scenario selection and parameters.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub scenario: Option<String>,
    pub repeats: Option<usize>,
    pub settle: Option<f64>,
    pub duration: Option<f64>,
    pub displacement: Option<[f64; 3]>,
    pub attitude_deg: Option<[f64; 3]>,
    /// Index of the failed or overridden MAV.
    pub mav: Option<usize>,
    pub mismatch_mass: Option<f64>,
    pub mismatch_offset: Option<[f64; 3]>,
    /// Scripted-teammate timeline: rows of [t, dx, dy, dz].
    pub script: Option<Vec<[f64; 4]>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub system: SystemSection,
    pub lowlevel: LowLevelSection,
    pub env: EnvSection,
    pub marl: MarlSection,
    pub eval: EvalSection,
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

/// Parse one TOML value from override text; bare words fall back to strings
/// so `env.action=ctbr` works without quoting.
fn parse_override_value(text: &str) -> toml::Value {
    format!("v = {text}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

/// Set `table[a][b]... = value` for a dotted key path, creating
/// intermediate tables as needed.
fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key {key:?}")));
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        node = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| {
                Error::Config(format!("override key {key:?} descends into a non-table value"))
            })?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl Config {
    /// Parse a TOML document, then apply `key=value` overrides on top.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Config> {
        let mut table: toml::Table =
            text.parse().map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        for entry in overrides {
            let (key, value) = entry
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {entry:?} is not key=value")))?;
            set_dotted(&mut table, key.trim(), parse_override_value(value.trim()))?;
        }
        let config: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Config> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Config::parse(&text, overrides)
    }

    /// Canonical serialized form of the (post-override) configuration.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Identity of this configuration, stored in manifests and checkpoints.
    pub fn hash(&self) -> u64 {
        fnv1a64(self.canonical_toml().as_bytes())
    }

    /// Resolve the physical/task sections onto a validated `EnvParams`.
    pub fn env_params(&self) -> Result<EnvParams> {
        let n = self.system.n_mavs.unwrap_or(3);
        let mut p = EnvParams::for_team(n);
        let s = &self.system;
        set(&mut p.mav_mass, s.mav_mass);
        if let Some(v) = s.mav_inertia {
            p.mav_inertia = v3(v);
        }
        set(&mut p.load_mass, s.load_mass);
        if let Some(v) = s.load_inertia {
            p.load_inertia = v3(v);
        }
        if let Some([lo, hi]) = s.load_mass_range {
            p.load_mass_range = Some((lo, hi));
        }
        set(&mut p.cable_length, s.cable_length);
        set(&mut p.cable_segments, s.cable_segments);
        set(&mut p.attach_radius, s.attach_radius);
        set(&mut p.node_mass, s.node_mass);
        set(&mut p.actuator.thrust_coeff, s.thrust_coeff);
        set(&mut p.actuator.torque_coeff, s.torque_coeff);
        set(&mut p.actuator.arm_length, s.arm_length);
        set(&mut p.actuator.max_rotor_speed, s.max_rotor_speed);
        set(&mut p.actuator.time_constant, s.rotor_time_constant);
        set(&mut p.accel_noise_std, s.accel_noise_std);
        set(&mut p.substeps, s.substeps);
        set(&mut p.solver_iterations, s.solver_iterations);

        let l = &self.lowlevel;
        set(&mut p.lowlevel.attitude_gain, l.attitude_gain);
        set(&mut p.lowlevel.rate_gain, l.rate_gain);
        set(&mut p.lowlevel.velocity_gain, l.velocity_gain);
        set(&mut p.lowlevel.filter_cutoff_hz, l.filter_cutoff_hz);
        set(&mut p.lowlevel.min_specific_thrust, l.min_specific_thrust);
        set(&mut p.lowlevel.compensation, l.compensation);
        set(&mut p.bounds.accel, l.accel_bound);
        set(&mut p.bounds.rate, l.rate_bound);
        set(&mut p.bounds.velocity, l.velocity_bound);

        let e = &self.env;
        if let Some(a) = &e.action {
            p.action = a.parse()?;
        }
        if let Some(o) = &e.observation {
            p.observation = o.parse()?;
        }
        set(&mut p.history, e.history);
        set(&mut p.episode_duration, e.episode_duration);
        set(&mut p.control_dt, e.control_dt);
        set(&mut p.lowlevel_per_control, e.lowlevel_per_control);
        if let Some(w) = e.reward_weights {
            p.weights = RewardWeights {
                l1: w[0],
                l2: w[1],
                l3: w[2],
                l4: w[3],
                l5: w[4],
                l6: w[5],
                l7: w[6],
                l8: w[7],
                l9: w[8],
            };
        }
        set(&mut p.spawn_xy, e.spawn_xy);
        if let Some([lo, hi]) = e.spawn_z {
            p.spawn_z = (lo, hi);
        }
        if let Some([lo, hi]) = e.spawn_cone_deg {
            p.spawn_cone_deg = (lo, hi);
        }
        set(&mut p.goal_tilt_deg, e.goal_tilt_deg);
        set(&mut p.max_spawn_attempts, e.max_spawn_attempts);
        set(&mut p.ground_clearance, e.ground_clearance);
        set(&mut p.cable_load_angle_deg, e.cable_load_angle_deg);
        set(&mut p.cable_mav_angle_deg, e.cable_mav_angle_deg);
        set(&mut p.cable_clearance, e.cable_clearance);
        set(&mut p.mav_clearance, e.mav_clearance);
        set(&mut p.bbox_xy, e.bbox_xy);
        set(&mut p.bbox_z, e.bbox_z);
        set(&mut p.tension_min, e.tension_min);

        // The inner loop runs `lowlevel_per_control` times per decision, so
        // its sample rate is pinned by the two timing fields.
        p.lowlevel.rate_hz = p.lowlevel_per_control as f64 / p.control_dt;
        p.validate()?;
        Ok(p)
    }

    /// Resolve the optimizer section onto validated `TrainerParams`.
    pub fn trainer_params(&self) -> Result<TrainerParams> {
        let mut t = TrainerParams { config_hash: self.hash(), ..TrainerParams::default() };
        let m = &self.marl;
        set(&mut t.n_envs, m.envs);
        set(&mut t.rollout_len, m.rollouts);
        set(&mut t.epochs, m.epochs);
        set(&mut t.minibatches, m.minibatches);
        set(&mut t.gamma, m.gamma);
        set(&mut t.gae_lambda, m.gae_lambda);
        set(&mut t.clip, m.ratio_clip);
        set(&mut t.value_clip, m.value_clip);
        set(&mut t.entropy_coef, m.entropy_scale);
        set(&mut t.value_loss_scale, m.value_scale);
        set(&mut t.grad_norm, m.grad_clip);
        set(&mut t.actor_lr, m.lr_actor);
        set(&mut t.critic_lr, m.lr_critic);
        set(&mut t.advantage_keep, m.advantage_keep);
        set(&mut t.kl_threshold, m.kl_threshold);
        if let Some(h) = &m.hidden {
            t.hidden = h.clone();
        }
        if let Some(a) = &m.activation {
            t.activation = a.parse::<Activation>().map_err(Error::Config)?;
        }
        if let Some(c) = &m.critic {
            t.critic = c.parse::<CriticKind>()?;
        }
        set(&mut t.init_log_std, m.init_log_std);
        set(&mut t.actor_out_gain, m.actor_out_gain);
        set(&mut t.total_env_steps, m.total_env_steps);
        set(&mut t.checkpoint_every, m.checkpoint_every);
        t.validate()?;
        Ok(t)
    }

    /// Resolve the evaluation section into a scenario, validated against
    /// this config's own environment parameters.
    pub fn scenario(&self, seed: u64) -> Result<Scenario> {
        self.scenario_for(&self.env_params()?, seed)
    }

    /// Like [`Config::scenario`] but validated against a caller-supplied
    /// environment (used when a checkpoint, not the config, defines the
    /// system). The named scenario supplies defaults; explicit fields
    /// override the ones it uses.
    pub fn scenario_for(&self, env: &EnvParams, seed: u64) -> Result<Scenario> {
        let e = &self.eval;
        let mut s = Scenario::by_name(e.scenario.as_deref().unwrap_or("setpoint_step"))?;
        s.seed = seed;
        set(&mut s.repeats, e.repeats);
        set(&mut s.settle, e.settle);
        set(&mut s.duration, e.duration);
        match &mut s.kind {
            ScenarioKind::SetpointStep { displacement, attitude_deg } => {
                if let Some(d) = e.displacement {
                    *displacement = v3(d);
                }
                if let Some(a) = e.attitude_deg {
                    *attitude_deg = v3(a);
                }
            }
            ScenarioKind::LoadMismatch { delta_mass, offset, displacement, attitude_deg } => {
                set(delta_mass, e.mismatch_mass);
                if let Some(o) = e.mismatch_offset {
                    *offset = v3(o);
                }
                if let Some(d) = e.displacement {
                    *displacement = v3(d);
                }
                if let Some(a) = e.attitude_deg {
                    *attitude_deg = v3(a);
                }
            }
            ScenarioKind::MavFailure { mav } => set(mav, e.mav),
            ScenarioKind::Heterogeneous { mav, script } => {
                set(mav, e.mav);
                if let Some(rows) = &e.script {
                    *script = rows
                        .iter()
                        .map(|r| ScriptPoint { t: r[0], offset: Vec3::new(r[1], r[2], r[3]) })
                        .collect();
                }
            }
            ScenarioKind::FigureEight => {}
        }
        s.validate(env)?;
        Ok(s)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}
