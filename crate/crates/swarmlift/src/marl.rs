//! Multi-agent PPO with centralized training and decentralized execution:
//! one shared actor maps each agent's local observation to a Gaussian action
//! distribution, while a critic scores the global state (or, as an ablation,
//! the local observation). Rollouts from many parallel environments feed a
//! clipped-surrogate update with generalized advantage estimation, running
//! input/value standardization, and advantage-magnitude filtering.
//!
//! Everything is deterministic for a fixed seed: environment streams,
//! action sampling, minibatch shuffling, and the update arithmetic.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Env, EnvParams, ObservationMode, TerminationReason};
use crate::error::{Error, Result};
use crate::lowlevel::ActionKind;
use crate::nn::{
    clip_global_norm, Activation, Adam, Checkpoint, CheckpointMeta, GaussianHead, Mlp,
    RunningScaler, Workspace, MICRO_BATCH,
};
use crate::rng::{stream, STREAM_POLICY_INIT, STREAM_TRAINER};

/// What the value function sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticKind {
    /// Privileged global state (training-only information).
    Centralized,
    /// The agent's own observation; used to measure what centralization buys.
    Local,
}

impl std::fmt::Display for CriticKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CriticKind::Centralized => "centralized",
            CriticKind::Local => "local",
        })
    }
}

impl std::str::FromStr for CriticKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<CriticKind> {
        match s {
            "centralized" => Ok(CriticKind::Centralized),
            "local" => Ok(CriticKind::Local),
            other => Err(Error::Config(format!("unknown critic kind {other:?}"))),
        }
    }
}

/// Optimization hyperparameters. Defaults are the desk-scale training setup;
/// the full-size network is a config override away.
#[derive(Debug, Clone)]
pub struct TrainerParams {
    pub n_envs: usize,
    /// Control steps collected per environment per iteration.
    pub rollout_len: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    /// PPO probability-ratio clip.
    pub clip: f64,
    /// Clip on value-prediction drift within an update.
    pub value_clip: f64,
    pub entropy_coef: f64,
    pub value_loss_scale: f64,
    /// Global gradient-norm bound, applied per model.
    pub grad_norm: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Fraction of agent-transitions kept per rollout, largest |advantage|
    /// first.
    pub advantage_keep: f64,
    /// Stop an update's epochs early when approximate KL exceeds this;
    /// 0 disables the check.
    pub kl_threshold: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub critic: CriticKind,
    pub init_log_std: f64,
    /// Orthogonal-init gain of the actor output layer (small values start
    /// the policy near zero-mean actions).
    pub actor_out_gain: f64,
    pub total_env_steps: u64,
    /// Write a numbered checkpoint every this many iterations (0 = final only).
    pub checkpoint_every: usize,
    /// Recorded in checkpoints so evaluation can refuse mismatched configs.
    pub config_hash: u64,
}

impl Default for TrainerParams {
    fn default() -> TrainerParams {
        TrainerParams {
            n_envs: 256,
            rollout_len: 128,
            epochs: 5,
            minibatches: 4,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.1,
            value_clip: 0.1,
            entropy_coef: 0.001,
            value_loss_scale: 1.0,
            grad_norm: 1.0,
            actor_lr: 5e-4,
            critic_lr: 1e-4,
            advantage_keep: 0.5,
            kl_threshold: 0.0,
            hidden: vec![256, 128, 64, 64],
            activation: Activation::Elu,
            critic: CriticKind::Centralized,
            init_log_std: 0.0,
            actor_out_gain: 0.01,
            total_env_steps: 5_000_000,
            checkpoint_every: 0,
            config_hash: 0,
        }
    }
}

impl TrainerParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_envs == 0 || self.rollout_len == 0 {
            return Err(Error::Config("n_envs and rollout_len must be positive".into()));
        }
        if self.epochs == 0 || self.minibatches == 0 {
            return Err(Error::Config("epochs and minibatches must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::Config("gamma and gae_lambda must lie in [0, 1]".into()));
        }
        if !(self.advantage_keep > 0.0 && self.advantage_keep <= 1.0) {
            return Err(Error::Config(format!(
                "advantage_keep must lie in (0, 1], got {}",
                self.advantage_keep
            )));
        }
        for (name, v) in [
            ("clip", self.clip),
            ("value_clip", self.value_clip),
            ("grad_norm", self.grad_norm),
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be non-empty and positive".into()));
        }
        Ok(())
    }

    /// Iterations needed to reach the environment-step budget.
    pub fn iterations(&self) -> usize {
        let per_iter = (self.n_envs * self.rollout_len) as u64;
        (self.total_env_steps.div_ceil(per_iter)).max(1) as usize
    }
}

/// Generalized advantage estimation over one trajectory lane. `dones[t]`
/// marks episode ends (termination or timeout) after step `t`; the chain and
/// the bootstrap both cut there. Timeout value bootstrapping is handled
/// upstream by folding `gamma * V(terminal)` into the reward, which is
/// algebraically identical to using the terminal value in the delta.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
    advantages: &mut [f64],
) {
    assert_eq!(rewards.len(), values.len());
    assert_eq!(rewards.len(), dones.len());
    assert_eq!(rewards.len(), advantages.len());
    let mut acc = 0.0;
    let mut next_value = last_value;
    for t in (0..rewards.len()).rev() {
        let not_done = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * not_done - values[t];
        acc = delta + gamma * lambda * not_done * acc;
        advantages[t] = acc;
        next_value = values[t];
    }
}

/// Indices of the `keep_fraction` samples with the largest advantage
/// magnitude; ties resolve toward the lower index so the selection is
/// deterministic.
pub fn filter_by_advantage(advantages: &[f64], keep_fraction: f64) -> Vec<u32> {
    let keep = ((advantages.len() as f64 * keep_fraction).round() as usize)
        .clamp(1, advantages.len());
    let mut idx: Vec<u32> = (0..advantages.len() as u32).collect();
    idx.sort_unstable_by(|&a, &b| {
        let ma = advantages[a as usize].abs();
        let mb = advantages[b as usize].abs();
        mb.partial_cmp(&ma).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    idx.truncate(keep);
    idx
}

/// One rollout's storage, laid out time-major. Sample `s` maps to
/// `(t, env, agent)` as `s = (t * E + env) * N + agent`; observations are
/// stored already normalized (they are what the update re-feeds).
/// One collected batch, exposed read-only through [`Trainer::rollout`] for
/// logging and contract verification.
///
/// Per-sample tensors are laid out time-major with agents innermost: sample
/// `(t, e, a)` lives at index `(t * n_envs + e) * n_mavs + a`. Observations
/// are stored already normalized (the scaler the actor saw); `global` holds
/// one normalized state per `(t, e)`; `rewards` replicate the shared scalar
/// across an environment's agents.
pub struct Rollout {
    pub obs: Vec<f64>,
    pub global: Vec<f64>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    /// De-standardized value predictions (environment reward scale).
    pub values: Vec<f64>,
    /// Shared rewards, plus `gamma * V(terminal)` folded in on timeouts.
    pub rewards: Vec<f64>,
    /// Episode ended after this step (per environment).
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Returns / old values standardized for the clipped value loss.
    pub norm_returns: Vec<f64>,
    pub norm_old_values: Vec<f64>,
    /// Bootstrap value per lane (`e * n_mavs + a`) for the step after the
    /// rollout window.
    pub last_values: Vec<f64>,
}

impl Rollout {
    fn new(t: usize, e: usize, n: usize, obs_dim: usize, global_dim: usize, act: usize) -> Rollout {
        let samples = t * e * n;
        Rollout {
            obs: vec![0.0; samples * obs_dim],
            global: vec![0.0; t * e * global_dim],
            actions: vec![0.0; samples * act],
            log_probs: vec![0.0; samples],
            values: vec![0.0; samples],
            rewards: vec![0.0; samples],
            dones: vec![false; t * e],
            advantages: vec![0.0; samples],
            returns: vec![0.0; samples],
            norm_returns: vec![0.0; samples],
            norm_old_values: vec![0.0; samples],
            last_values: vec![0.0; e * n],
        }
    }
}

/// Per-iteration training record; one CSV row.
#[derive(Debug, Clone)]
pub struct IterationStats {
    pub iteration: usize,
    pub env_steps: u64,
    pub elapsed_s: f64,
    pub episodes: usize,
    pub ep_return_mean: f64,
    pub ep_len_mean: f64,
    /// Mean per-episode accumulated reward components
    /// (pos, ori, down, act, br, thrust).
    pub parts_mean: [f64; 6],
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_frac: f64,
    pub actor_grad_norm: f64,
    pub critic_grad_norm: f64,
    pub log_std_mean: f64,
    /// Counts per termination reason, in `TERMINATION_ORDER`.
    pub terminations: [usize; 8],
    pub timeouts: usize,
}

const TERMINATION_ORDER: [TerminationReason; 8] = [
    TerminationReason::Ground,
    TerminationReason::CableLoadAngle,
    TerminationReason::CableMavAngle,
    TerminationReason::CableCableCollision,
    TerminationReason::MavMavCollision,
    TerminationReason::OutOfBounds,
    TerminationReason::CableSlack,
    TerminationReason::Diverged,
];

pub fn metrics_csv_header() -> String {
    let mut s = String::from(
        "iteration,env_steps,elapsed_s,episodes,ep_return_mean,ep_len_mean,\
         r_pos,r_ori,r_down,r_act,r_br,r_thrust,\
         policy_loss,value_loss,entropy,approx_kl,clip_frac,\
         actor_grad_norm,critic_grad_norm,log_std_mean",
    );
    for r in TERMINATION_ORDER {
        let _ = write!(s, ",term_{}", r.as_str());
    }
    s.push_str(",timeouts");
    s
}

impl IterationStats {
    pub fn csv_row(&self) -> String {
        let mut s = format!(
            "{},{},{:.3},{},{},{}",
            self.iteration,
            self.env_steps,
            self.elapsed_s,
            self.episodes,
            self.ep_return_mean,
            self.ep_len_mean
        );
        for p in self.parts_mean {
            let _ = write!(s, ",{p}");
        }
        let _ = write!(
            s,
            ",{},{},{},{},{},{},{},{}",
            self.policy_loss,
            self.value_loss,
            self.entropy,
            self.approx_kl,
            self.clip_frac,
            self.actor_grad_norm,
            self.critic_grad_norm,
            self.log_std_mean
        );
        for c in self.terminations {
            let _ = write!(s, ",{c}");
        }
        let _ = write!(s, ",{}", self.timeouts);
        s
    }
}

/// Result of a full training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub iterations: usize,
    pub env_steps: u64,
    pub wall_s: f64,
    /// Mean episodic return of the first and last iterations (first value in
    /// the log, and the final smoothed value).
    pub first_return: f64,
    pub final_return: f64,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

/// Running episode accumulators for one environment.
#[derive(Clone, Default)]
struct EpisodeAccum {
    ret: f64,
    len: usize,
    parts: [f64; 6],
}

/// The MAPPO trainer: environments, networks, preprocessors, optimizers.
pub struct Trainer {
    pub env_params: EnvParams,
    pub params: TrainerParams,
    envs: Vec<Env>,
    actor: Mlp,
    head: GaussianHead,
    critic: Mlp,
    obs_scaler: RunningScaler,
    global_scaler: RunningScaler,
    value_scaler: RunningScaler,
    opt_actor: Adam,
    opt_critic: Adam,
    rng: ChaCha8Rng,
    seed: u64,
    rollout: Rollout,
    ws: Workspace,
    iteration: usize,
    env_steps: u64,
    started: Instant,
    accum: Vec<EpisodeAccum>,
    /// Carried forward over iterations with no completed episodes.
    last_ep_return: f64,
    last_ep_len: f64,
    last_parts: [f64; 6],
}

impl Trainer {
    pub fn new(env_params: EnvParams, params: TrainerParams, seed: u64) -> Result<Trainer> {
        env_params.validate()?;
        params.validate()?;

        let obs_dim = env_params.obs_dim();
        let global_dim = env_params.global_dim();
        let act_dim = env_params.action.dim();
        let critic_in = match params.critic {
            CriticKind::Centralized => global_dim,
            CriticKind::Local => obs_dim,
        };

        let mut init_rng = stream(seed, STREAM_POLICY_INIT);
        let mut actor_sizes = vec![obs_dim];
        actor_sizes.extend_from_slice(&params.hidden);
        actor_sizes.push(act_dim);
        let actor =
            Mlp::orthogonal(&actor_sizes, params.activation, params.actor_out_gain, &mut init_rng);
        let mut critic_sizes = vec![critic_in];
        critic_sizes.extend_from_slice(&params.hidden);
        critic_sizes.push(1);
        let critic = Mlp::orthogonal(&critic_sizes, params.activation, 1.0, &mut init_rng);
        let head = GaussianHead::new(act_dim, params.init_log_std);

        let envs = (0..params.n_envs)
            .map(|i| Env::new(env_params.clone(), seed, i as u64))
            .collect::<Result<Vec<_>>>()?;

        let opt_actor = Adam::new(params.actor_lr, &[actor.num_params(), act_dim]);
        let opt_critic = Adam::new(params.critic_lr, &[critic.num_params()]);
        let rollout = Rollout::new(
            params.rollout_len,
            params.n_envs,
            env_params.n_mavs,
            obs_dim,
            global_dim,
            act_dim,
        );

        Ok(Trainer {
            accum: vec![EpisodeAccum::default(); params.n_envs],
            obs_scaler: RunningScaler::new(obs_dim),
            global_scaler: RunningScaler::new(global_dim),
            value_scaler: RunningScaler::new(1),
            opt_actor,
            opt_critic,
            rng: stream(seed, STREAM_TRAINER),
            seed,
            rollout,
            ws: Workspace::new(),
            iteration: 0,
            env_steps: 0,
            started: Instant::now(),
            last_ep_return: 0.0,
            last_ep_len: 0.0,
            last_parts: [0.0; 6],
            env_params,
            params,
            envs,
            actor,
            head,
            critic,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn head(&self) -> &GaussianHead {
        &self.head
    }

    /// The most recently collected batch (zeros before the first
    /// [`Trainer::collect`] / [`Trainer::run_iteration`]).
    pub fn rollout(&self) -> &Rollout {
        &self.rollout
    }

    /// Snapshot the current policy for evaluation (observation scaler frozen).
    pub fn policy(&self) -> Policy {
        let mut obs_scaler = self.obs_scaler.clone();
        obs_scaler.frozen = true;
        Policy {
            meta: self.meta(),
            actor: self.actor.clone(),
            head: self.head.clone(),
            obs_scaler,
        }
    }

    fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            config_hash: format!("{:016x}", self.params.config_hash),
            seed: self.seed.to_string(),
            n_mavs: self.env_params.n_mavs,
            history: self.env_params.history,
            observation: self.env_params.observation.to_string(),
            action_kind: self.env_params.action.to_string(),
            critic: self.params.critic.to_string(),
            obs_dim: self.env_params.obs_dim(),
            global_dim: self.env_params.global_dim(),
            action_dim: self.env_params.action.dim(),
            hidden: self.params.hidden.clone(),
            activation: self.params.activation.to_string(),
            env_steps: self.env_steps,
            iteration: self.iteration as u64,
        }
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut ckpt = Checkpoint::new(self.meta());
        ckpt.insert("actor.params", self.actor.params().to_vec());
        ckpt.insert("actor.log_std", self.head.log_std().to_vec());
        ckpt.insert("critic.params", self.critic.params().to_vec());
        for (name, scaler) in [
            ("obs", &self.obs_scaler),
            ("global", &self.global_scaler),
            ("value", &self.value_scaler),
        ] {
            ckpt.insert(&format!("scaler.{name}.mean"), scaler.mean().to_vec());
            ckpt.insert(&format!("scaler.{name}.var"), scaler.var().to_vec());
            ckpt.insert(&format!("scaler.{name}.count"), vec![scaler.count()]);
        }
        ckpt.save(path)
    }

    /// Run the full collect/update loop, appending one metrics row per
    /// iteration to `out_dir/metrics.csv` and writing the final checkpoint
    /// to `out_dir/checkpoint_final.ckpt`.
    pub fn train(&mut self, out_dir: &Path, quiet: bool) -> Result<TrainReport> {
        fs::create_dir_all(out_dir)?;
        let metrics_path = out_dir.join("metrics.csv");
        let mut metrics = std::io::BufWriter::new(fs::File::create(&metrics_path)?);
        writeln!(metrics, "{}", metrics_csv_header())?;

        self.started = Instant::now();
        let iterations = self.params.iterations();
        let mut first_return = f64::NAN;
        let mut final_return = f64::NAN;
        for _ in 0..iterations {
            let stats = self.run_iteration()?;
            if stats.iteration == 1 {
                first_return = stats.ep_return_mean;
            }
            final_return = stats.ep_return_mean;
            writeln!(metrics, "{}", stats.csv_row())?;
            metrics.flush()?;
            if !quiet {
                println!(
                    "iter {:4}/{iterations}  steps {:>9}  return {:8.3}  len {:6.1}  \
                     policy {:+.4}  value {:.4}  kl {:.4}  elapsed {:.0}s",
                    stats.iteration,
                    stats.env_steps,
                    stats.ep_return_mean,
                    stats.ep_len_mean,
                    stats.policy_loss,
                    stats.value_loss,
                    stats.approx_kl,
                    stats.elapsed_s
                );
            }
            if self.params.checkpoint_every > 0
                && stats.iteration % self.params.checkpoint_every == 0
            {
                self.save_checkpoint(
                    &out_dir.join(format!("checkpoint_{:05}.ckpt", stats.iteration)),
                )?;
            }
        }
        let checkpoint_path = out_dir.join("checkpoint_final.ckpt");
        self.save_checkpoint(&checkpoint_path)?;
        Ok(TrainReport {
            iterations,
            env_steps: self.env_steps,
            wall_s: self.started.elapsed().as_secs_f64(),
            first_return,
            final_return,
            metrics_path,
            checkpoint_path,
        })
    }

    /// One collect + update cycle.
    pub fn run_iteration(&mut self) -> Result<IterationStats> {
        self.iteration += 1;
        let mut stats = self.collect()?;
        self.compute_advantages();
        self.update(&mut stats)?;
        stats.elapsed_s = self.started.elapsed().as_secs_f64();
        Ok(stats)
    }

    /// Batched actor mean for `n` already-normalized observations.
    fn actor_means(&mut self, obs: &[f64], n: usize, out: &mut [f64]) {
        let od = self.actor.input_dim();
        let ad = self.actor.output_dim();
        let mut start = 0;
        while start < n {
            let k = (n - start).min(MICRO_BATCH);
            self.actor.forward_batch(
                &obs[start * od..(start + k) * od],
                k,
                &mut self.ws,
                &mut out[start * ad..(start + k) * ad],
            );
            start += k;
        }
    }

    /// Batched critic predictions (standardized value space).
    fn critic_values(&mut self, inputs: &[f64], n: usize, out: &mut [f64]) {
        let id = self.critic.input_dim();
        let mut start = 0;
        while start < n {
            let k = (n - start).min(MICRO_BATCH);
            self.critic.forward_batch(
                &inputs[start * id..(start + k) * id],
                k,
                &mut self.ws,
                &mut out[start..start + k],
            );
            start += k;
        }
    }

    /// Critic value of one environment's current (post-step) state, in
    /// environment reward scale; used for timeout bootstraps.
    fn bootstrap_values(&mut self, e: usize, out: &mut [f64]) {
        let n = self.env_params.n_mavs;
        match self.params.critic {
            CriticKind::Centralized => {
                let mut g = self.envs[e].global_state();
                self.global_scaler.apply(&mut g);
                let mut v = [0.0];
                self.critic.forward_batch(&g, 1, &mut self.ws, &mut v);
                out[..n].fill(self.value_scaler.inverse_scalar(v[0]));
            }
            CriticKind::Local => {
                for i in 0..n {
                    let mut o = self.envs[e].observation(i).to_vec();
                    self.obs_scaler.apply(&mut o);
                    let mut v = [0.0];
                    self.critic.forward_batch(&o, 1, &mut self.ws, &mut v);
                    out[i] = self.value_scaler.inverse_scalar(v[0]);
                }
            }
        }
    }

    /// Collect one rollout without updating any parameters. Advances the
    /// environments, the sampling RNG, and the observation/state scalers
    /// exactly as a training iteration would; the result is readable through
    /// [`Trainer::rollout`]. [`Trainer::run_iteration`] calls this itself —
    /// use this directly only to examine what collection produces.
    pub fn collect(&mut self) -> Result<IterationStats> {
        let t_len = self.params.rollout_len;
        let e_len = self.params.n_envs;
        let n = self.env_params.n_mavs;
        let od = self.env_params.obs_dim();
        let gd = self.env_params.global_dim();
        let ad = self.env_params.action.dim();
        let lanes = e_len * n;

        let mut episodes = 0usize;
        let mut ep_return_sum = 0.0;
        let mut ep_len_sum = 0usize;
        let mut parts_sum = [0.0; 6];
        let mut terminations = [0usize; 8];
        let mut timeouts = 0usize;

        let mut obs_step = vec![0.0; lanes * od];
        let mut means = vec![0.0; lanes * ad];
        let mut values_norm = vec![0.0; lanes];
        let mut global_step = vec![0.0; e_len * gd];
        let mut boot = vec![0.0; n];

        for t in 0..t_len {
            // Observation batch: standardize with freshly updated statistics
            // (training mode), then record — the update phase re-feeds these
            // exact vectors.
            for e in 0..e_len {
                for i in 0..n {
                    let dst = (e * n + i) * od;
                    obs_step[dst..dst + od].copy_from_slice(self.envs[e].observation(i));
                }
            }
            self.obs_scaler.update(&obs_step);
            self.obs_scaler.apply(&mut obs_step);
            let obs_off = t * lanes * od;
            self.rollout.obs[obs_off..obs_off + lanes * od].copy_from_slice(&obs_step);

            // Global state batch for the centralized critic.
            for (e, chunk) in global_step.chunks_exact_mut(gd).enumerate() {
                chunk.copy_from_slice(&self.envs[e].global_state());
            }
            self.global_scaler.update(&global_step);
            self.global_scaler.apply(&mut global_step);
            let g_off = t * e_len * gd;
            self.rollout.global[g_off..g_off + e_len * gd].copy_from_slice(&global_step);

            // Policy heads and value predictions.
            self.actor_means(&obs_step, lanes, &mut means);
            match self.params.critic {
                CriticKind::Centralized => {
                    let mut env_vals = vec![0.0; e_len];
                    self.critic_values(&global_step, e_len, &mut env_vals);
                    for e in 0..e_len {
                        values_norm[e * n..(e + 1) * n].fill(env_vals[e]);
                    }
                }
                CriticKind::Local => {
                    self.critic_values(&obs_step, lanes, &mut values_norm);
                }
            }

            // Sample actions lane by lane (fixed RNG order).
            let act_off = t * lanes * ad;
            let s_off = t * lanes;
            for lane in 0..lanes {
                let mean = &means[lane * ad..(lane + 1) * ad];
                let action = self.head.sample(mean, &mut self.rng);
                let lp = self.head.log_prob(mean, &action);
                self.rollout.actions[act_off + lane * ad..act_off + (lane + 1) * ad]
                    .copy_from_slice(&action);
                self.rollout.log_probs[s_off + lane] = lp;
                self.rollout.values[s_off + lane] =
                    self.value_scaler.inverse_scalar(values_norm[lane]);
            }

            // Step every environment and handle episode boundaries.
            for e in 0..e_len {
                let raw =
                    self.rollout.actions[act_off + e * n * ad..act_off + (e + 1) * n * ad].to_vec();
                let out = self.envs[e].step(&raw)?;
                self.env_steps += 1;

                let lane0 = s_off + e * n;
                self.rollout.rewards[lane0..lane0 + n].fill(out.reward);
                self.rollout.dones[t * e_len + e] = out.done();

                let acc = &mut self.accum[e];
                acc.ret += out.reward;
                acc.len += 1;
                let dt = self.env_params.control_dt;
                for (slot, comp) in acc.parts.iter_mut().zip([
                    out.parts.pos,
                    out.parts.ori,
                    out.parts.down,
                    out.parts.act,
                    out.parts.br,
                    out.parts.thrust,
                ]) {
                    *slot += comp * dt;
                }

                if out.done() {
                    if out.timeout {
                        // The episode ran out of time in a live state: fold
                        // the discounted terminal value into the reward so
                        // the return estimate does not treat it as absorbing.
                        self.bootstrap_values(e, &mut boot);
                        for i in 0..n {
                            self.rollout.rewards[lane0 + i] += self.params.gamma * boot[i];
                        }
                        timeouts += 1;
                    } else if let Some(reason) = out.terminated {
                        let slot = TERMINATION_ORDER.iter().position(|&r| r == reason).unwrap();
                        terminations[slot] += 1;
                    }
                    episodes += 1;
                    ep_return_sum += self.accum[e].ret;
                    ep_len_sum += self.accum[e].len;
                    for (sum, p) in parts_sum.iter_mut().zip(self.accum[e].parts) {
                        *sum += p;
                    }
                    self.accum[e] = EpisodeAccum::default();
                    self.envs[e].reset()?;
                }
            }
        }

        // Boundary bootstrap: value of the state each lane is left in.
        let mut last = vec![0.0; lanes];
        for e in 0..e_len {
            self.bootstrap_values(e, &mut boot);
            last[e * n..(e + 1) * n].copy_from_slice(&boot[..n]);
        }
        self.rollout.last_values.copy_from_slice(&last);

        if episodes > 0 {
            self.last_ep_return = ep_return_sum / episodes as f64;
            self.last_ep_len = ep_len_sum as f64 / episodes as f64;
            for (slot, sum) in self.last_parts.iter_mut().zip(parts_sum) {
                *slot = sum / episodes as f64;
            }
        }

        Ok(IterationStats {
            iteration: self.iteration,
            env_steps: self.env_steps,
            elapsed_s: 0.0,
            episodes,
            ep_return_mean: self.last_ep_return,
            ep_len_mean: self.last_ep_len,
            parts_mean: self.last_parts,
            policy_loss: 0.0,
            value_loss: 0.0,
            entropy: 0.0,
            approx_kl: 0.0,
            clip_frac: 0.0,
            actor_grad_norm: 0.0,
            critic_grad_norm: 0.0,
            log_std_mean: 0.0,
            terminations,
            timeouts,
        })
    }

    /// GAE over every (env, agent) lane. Rewards are shared and dones are
    /// per-environment, so with a centralized critic all agents of an
    /// environment get identical advantages.
    fn compute_advantages(&mut self) {
        let t_len = self.params.rollout_len;
        let e_len = self.params.n_envs;
        let n = self.env_params.n_mavs;
        let lanes = e_len * n;

        let mut rew = vec![0.0; t_len];
        let mut val = vec![0.0; t_len];
        let mut done = vec![false; t_len];
        let mut adv = vec![0.0; t_len];
        for lane in 0..lanes {
            let e = lane / n;
            for t in 0..t_len {
                let s = t * lanes + lane;
                rew[t] = self.rollout.rewards[s];
                val[t] = self.rollout.values[s];
                done[t] = self.rollout.dones[t * e_len + e];
            }
            compute_gae(
                &rew,
                &val,
                &done,
                self.rollout.last_values[lane],
                self.params.gamma,
                self.params.gae_lambda,
                &mut adv,
            );
            for t in 0..t_len {
                let s = t * lanes + lane;
                self.rollout.advantages[s] = adv[t];
                self.rollout.returns[s] = adv[t] + val[t];
            }
        }
    }

    fn update(&mut self, stats: &mut IterationStats) -> Result<()> {
        let n = self.env_params.n_mavs;
        let od = self.env_params.obs_dim();
        let gd = self.env_params.global_dim();
        let ad = self.env_params.action.dim();

        // Standardize value targets; old predictions are mapped with the
        // same (updated) statistics so the value clip compares like to like.
        self.value_scaler.update(&self.rollout.returns);
        self.rollout.norm_returns.copy_from_slice(&self.rollout.returns);
        self.value_scaler.apply(&mut self.rollout.norm_returns);
        self.rollout.norm_old_values.copy_from_slice(&self.rollout.values);
        self.value_scaler.apply(&mut self.rollout.norm_old_values);

        let kept = filter_by_advantage(&self.rollout.advantages, self.params.advantage_keep);
        let mut order = kept;

        let mut actor_grads = vec![0.0; self.actor.num_params()];
        let mut log_std_grads = vec![0.0; ad];
        let mut critic_grads = vec![0.0; self.critic.num_params()];

        // Scratch for gathered minibatch lanes.
        let mut xb = vec![0.0; MICRO_BATCH * od];
        let mut cb = vec![0.0; MICRO_BATCH * gd.max(od)];
        let mut mb_mean = vec![0.0; MICRO_BATCH * ad];
        let mut dys = vec![0.0; MICRO_BATCH * ad];
        let mut vys = vec![0.0; MICRO_BATCH];
        let mut dvs = vec![0.0; MICRO_BATCH];
        let mut d_mean = vec![0.0; ad];
        let mut d_ls = vec![0.0; ad];

        let mut policy_loss_sum = 0.0;
        let mut value_loss_sum = 0.0;
        let mut entropy_sum = 0.0;
        let mut kl_sum = 0.0;
        let mut clip_count = 0usize;
        let mut sample_count = 0usize;
        let mut actor_norm_sum = 0.0;
        let mut critic_norm_sum = 0.0;
        let mut minibatch_steps = 0usize;

        let mb_size = order.len().div_ceil(self.params.minibatches);
        let cin = self.critic.input_dim();

        'epochs: for epoch in 0..self.params.epochs {
            // Deterministic Fisher-Yates reshuffle each epoch.
            for i in (1..order.len()).rev() {
                let j = self.rng.gen_range(0..=i);
                order.swap(i, j);
            }
            for (mb_index, mb) in order.chunks(mb_size).enumerate() {
                // Advantage standardization within the minibatch.
                let mean: f64 =
                    mb.iter().map(|&s| self.rollout.advantages[s as usize]).sum::<f64>()
                        / mb.len() as f64;
                let var: f64 = mb
                    .iter()
                    .map(|&s| {
                        let d = self.rollout.advantages[s as usize] - mean;
                        d * d
                    })
                    .sum::<f64>()
                    / mb.len() as f64;
                let inv_std = 1.0 / (var.sqrt() + 1e-8);

                actor_grads.iter_mut().for_each(|g| *g = 0.0);
                log_std_grads.iter_mut().for_each(|g| *g = 0.0);
                critic_grads.iter_mut().for_each(|g| *g = 0.0);
                let mut mb_policy_loss = 0.0;
                let mut mb_value_loss = 0.0;
                let mut mb_kl = 0.0;
                let inv_b = 1.0 / mb.len() as f64;

                let mut start = 0;
                while start < mb.len() {
                    let k = (mb.len() - start).min(MICRO_BATCH);
                    let chunk = &mb[start..start + k];
                    for (b, &s) in chunk.iter().enumerate() {
                        let s = s as usize;
                        xb[b * od..(b + 1) * od]
                            .copy_from_slice(&self.rollout.obs[s * od..(s + 1) * od]);
                        let src: &[f64] = match self.params.critic {
                            CriticKind::Centralized => {
                                let coff = (s / n) * gd;
                                &self.rollout.global[coff..coff + gd]
                            }
                            CriticKind::Local => &self.rollout.obs[s * od..(s + 1) * od],
                        };
                        cb[b * cin..(b + 1) * cin].copy_from_slice(src);
                    }

                    // Actor pass.
                    self.actor.forward_batch(&xb[..k * od], k, &mut self.ws, &mut mb_mean[..k * ad]);
                    for (b, &s) in chunk.iter().enumerate() {
                        let s = s as usize;
                        let mean_b = &mb_mean[b * ad..(b + 1) * ad];
                        let action = &self.rollout.actions[s * ad..(s + 1) * ad];
                        let lp_new =
                            self.head.log_prob_with_grad(mean_b, action, &mut d_mean, &mut d_ls);
                        let lp_old = self.rollout.log_probs[s];
                        let ratio = (lp_new - lp_old).exp();
                        let a_norm = (self.rollout.advantages[s] - mean) * inv_std;

                        let lo = 1.0 - self.params.clip;
                        let hi = 1.0 + self.params.clip;
                        let surr1 = ratio * a_norm;
                        let surr2 = ratio.clamp(lo, hi) * a_norm;
                        mb_policy_loss -= surr1.min(surr2) * inv_b;
                        mb_kl += ((ratio - 1.0) - (lp_new - lp_old)) * inv_b;
                        if (ratio - 1.0).abs() > self.params.clip {
                            clip_count += 1;
                        }
                        sample_count += 1;

                        // Gradient flows through the ratio only when the
                        // active surrogate branch is unclipped.
                        let through_ratio =
                            surr1 <= surr2 || (lo..=hi).contains(&ratio);
                        let coeff = if through_ratio { -a_norm * ratio * inv_b } else { 0.0 };
                        for (dy, dm) in
                            dys[b * ad..(b + 1) * ad].iter_mut().zip(d_mean.iter())
                        {
                            *dy = coeff * dm;
                        }
                        for (g, dl) in log_std_grads.iter_mut().zip(d_ls.iter()) {
                            *g += coeff * dl;
                        }
                    }
                    self.actor.backward_batch(&dys[..k * ad], &mut self.ws, &mut actor_grads);

                    // Critic pass with clipped value targets.
                    self.critic.forward_batch(&cb[..k * cin], k, &mut self.ws, &mut vys[..k]);
                    for (b, &s) in chunk.iter().enumerate() {
                        let s = s as usize;
                        let old = self.rollout.norm_old_values[s];
                        let target = self.rollout.norm_returns[s];
                        let diff = vys[b] - old;
                        let clipped = old + diff.clamp(-self.params.value_clip, self.params.value_clip);
                        let err = clipped - target;
                        mb_value_loss += self.params.value_loss_scale * err * err * inv_b;
                        dvs[b] = if diff.abs() <= self.params.value_clip {
                            2.0 * self.params.value_loss_scale * err * inv_b
                        } else {
                            0.0
                        };
                    }
                    self.critic.backward_batch(&dvs[..k], &mut self.ws, &mut critic_grads);

                    start += k;
                }

                // Entropy bonus: state-independent, so its gradient lands on
                // the log-std parameters once per minibatch.
                let entropy = self.head.entropy();
                self.head.entropy_grad(&mut d_ls);
                for (g, dl) in log_std_grads.iter_mut().zip(d_ls.iter()) {
                    *g -= self.params.entropy_coef * dl;
                }
                let mb_loss =
                    mb_policy_loss - self.params.entropy_coef * entropy + mb_value_loss;
                if !mb_loss.is_finite() {
                    return Err(Error::NanLoss {
                        iteration: self.iteration,
                        epoch,
                        minibatch: mb_index,
                    });
                }

                let a_norm_pre = clip_global_norm(
                    &mut [&mut actor_grads, &mut log_std_grads],
                    self.params.grad_norm,
                );
                let c_norm_pre = clip_global_norm(&mut [&mut critic_grads], self.params.grad_norm);
                if !a_norm_pre.is_finite() || !c_norm_pre.is_finite() {
                    return Err(Error::NanLoss {
                        iteration: self.iteration,
                        epoch,
                        minibatch: mb_index,
                    });
                }

                self.opt_actor.step(
                    &mut [self.actor.params_mut(), self.head.log_std_mut()],
                    &[&actor_grads, &log_std_grads],
                );
                self.opt_critic.step(&mut [self.critic.params_mut()], &[&critic_grads]);

                policy_loss_sum += mb_policy_loss;
                value_loss_sum += mb_value_loss;
                entropy_sum += entropy;
                kl_sum += mb_kl;
                actor_norm_sum += a_norm_pre;
                critic_norm_sum += c_norm_pre;
                minibatch_steps += 1;

                if self.params.kl_threshold > 0.0 && mb_kl > self.params.kl_threshold {
                    break 'epochs;
                }
            }
        }

        let inv_steps = 1.0 / minibatch_steps.max(1) as f64;
        stats.policy_loss = policy_loss_sum * inv_steps;
        stats.value_loss = value_loss_sum * inv_steps;
        stats.entropy = entropy_sum * inv_steps;
        stats.approx_kl = kl_sum * inv_steps;
        stats.clip_frac = clip_count as f64 / sample_count.max(1) as f64;
        stats.actor_grad_norm = actor_norm_sum * inv_steps;
        stats.critic_grad_norm = critic_norm_sum * inv_steps;
        stats.log_std_mean =
            self.head.log_std().iter().sum::<f64>() / self.head.log_std().len() as f64;
        Ok(())
    }
}

/// A deployable policy: the shared actor, its action distribution, and the
/// frozen observation preprocessor.
#[derive(Debug, Clone)]
pub struct Policy {
    pub meta: CheckpointMeta,
    pub actor: Mlp,
    pub head: GaussianHead,
    pub obs_scaler: RunningScaler,
}

impl Policy {
    pub fn from_checkpoint(path: &Path) -> Result<Policy> {
        let ckpt = Checkpoint::load(path)?;
        let meta = ckpt.meta.clone();
        let mut sizes = vec![meta.obs_dim];
        sizes.extend_from_slice(&meta.hidden);
        sizes.push(meta.action_dim);
        let activation: Activation = meta.activation.parse().map_err(Error::Checkpoint)?;
        let params = ckpt.require("actor.params")?.to_vec();
        let expected: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if params.len() != expected {
            return Err(Error::Checkpoint(format!(
                "actor parameter tensor has {} values, layer sizes {:?} need {expected}",
                params.len(),
                sizes
            )));
        }
        let actor = Mlp::from_params(&sizes, activation, params);
        let log_std = ckpt.require("actor.log_std")?.to_vec();
        if log_std.len() != meta.action_dim {
            return Err(Error::Checkpoint(format!(
                "log-std tensor has {} values, expected {}",
                log_std.len(),
                meta.action_dim
            )));
        }
        let mean = ckpt.require("scaler.obs.mean")?.to_vec();
        let var = ckpt.require("scaler.obs.var")?.to_vec();
        let count = ckpt.require("scaler.obs.count")?[0];
        if mean.len() != meta.obs_dim || var.len() != meta.obs_dim {
            return Err(Error::Checkpoint(
                "observation scaler dimensions do not match metadata".into(),
            ));
        }
        let mut obs_scaler = RunningScaler::from_parts(mean, var, count);
        obs_scaler.frozen = true;
        Ok(Policy { meta, actor, head: GaussianHead::from_params(log_std), obs_scaler })
    }

    /// Environment parameters matching this policy's structural metadata
    /// (team size, action/observation spaces, history length). Physics and
    /// task fields take their defaults; callers who trained with a custom
    /// configuration should resolve it from their config instead.
    pub fn env_params(&self) -> Result<EnvParams> {
        let m = &self.meta;
        let mut p = EnvParams::for_team(m.n_mavs);
        p.action = m.action_kind.parse()?;
        p.observation = m.observation.parse()?;
        p.history = m.history;
        p.validate()?;
        Ok(p)
    }

    /// Check that this policy was trained for the given task shape.
    pub fn check_compatible(&self, env: &EnvParams) -> Result<()> {
        let checks = [
            ("team size", self.meta.n_mavs.to_string(), env.n_mavs.to_string()),
            ("history", self.meta.history.to_string(), env.history.to_string()),
            ("observation", self.meta.observation.clone(), env.observation.to_string()),
            ("action space", self.meta.action_kind.clone(), env.action.to_string()),
        ];
        for (what, have, want) in checks {
            if have != want {
                return Err(Error::Mismatch(format!(
                    "checkpoint {what} is {have}, environment expects {want}"
                )));
            }
        }
        Ok(())
    }

    pub fn action_kind(&self) -> Result<ActionKind> {
        self.meta.action_kind.parse()
    }

    pub fn observation_mode(&self) -> Result<ObservationMode> {
        self.meta.observation.parse()
    }

    /// Deterministic action: the distribution mean for this observation.
    pub fn act_mean(&self, obs_raw: &[f64], ws: &mut Workspace, out: &mut [f64]) {
        let mut obs = obs_raw.to_vec();
        self.obs_scaler.apply(&mut obs);
        self.actor.forward(&obs, ws, out);
    }

    /// Stochastic action (training-style exploration).
    pub fn act_sample(
        &self,
        obs_raw: &[f64],
        ws: &mut Workspace,
        rng: &mut ChaCha8Rng,
        out: &mut [f64],
    ) {
        let mut mean = vec![0.0; self.actor.output_dim()];
        self.act_mean(obs_raw, ws, &mut mean);
        out.copy_from_slice(&self.head.sample(&mean, rng));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn tiny_env_params() -> EnvParams {
        EnvParams { episode_duration: 0.5, ..EnvParams::default() }
    }

    fn tiny_trainer_params() -> TrainerParams {
        TrainerParams {
            n_envs: 2,
            rollout_len: 4,
            epochs: 2,
            minibatches: 2,
            hidden: vec![16, 16],
            total_env_steps: 16,
            ..TrainerParams::default()
        }
    }

    #[test]
    fn gae_matches_hand_recursion() {
        // gamma=0.99, lambda=0.95, r=[1,1], V=[0,0], terminal V=0:
        // delta = [1, 1]; A1 = 1; A0 = 1 + 0.99*0.95 = 1.9405.
        let mut adv = [0.0; 2];
        compute_gae(&[1.0, 1.0], &[0.0, 0.0], &[false, false], 0.0, 0.99, 0.95, &mut adv);
        assert!((adv[0] - 1.9405).abs() < 1e-12);
        assert!((adv[1] - 1.0).abs() < 1e-12);

        // lambda = 0 reduces to one-step TD errors.
        let mut adv = [0.0; 3];
        let rewards = [0.5, -0.2, 1.0];
        let values = [0.3, 0.1, -0.4];
        compute_gae(&rewards, &values, &[false; 3], 0.2, 0.99, 0.0, &mut adv);
        for t in 0..3 {
            let next = if t == 2 { 0.2 } else { values[t + 1] };
            let delta = rewards[t] + 0.99 * next - values[t];
            assert!((adv[t] - delta).abs() < 1e-12, "t={t}");
        }

        // A done flag cuts both bootstrap and accumulation.
        let mut adv = [0.0; 2];
        compute_gae(&[1.0, 1.0], &[0.0, 0.0], &[true, false], 5.0, 0.99, 0.95, &mut adv);
        assert!((adv[0] - 1.0).abs() < 1e-12); // no term from t=1 or V1
        assert!((adv[1] - (1.0 + 0.99 * 5.0)).abs() < 1e-12);

        // Zero rewards and values stay zero.
        let mut adv = [0.0; 4];
        compute_gae(&[0.0; 4], &[0.0; 4], &[false; 4], 0.0, 0.99, 0.95, &mut adv);
        assert!(adv.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn advantage_filter_keeps_largest_magnitudes_with_stable_ties() {
        let kept = filter_by_advantage(&[0.1, -2.0, 0.5, -0.05], 0.5);
        assert_eq!(kept, vec![1, 2]);

        let kept = filter_by_advantage(&[0.3, 0.3, 0.3, 0.3], 0.5);
        assert_eq!(kept, vec![0, 1]);

        let mut kept = filter_by_advantage(&[0.1, -2.0, 0.5, -0.05], 1.0);
        kept.sort_unstable();
        assert_eq!(kept, vec![0, 1, 2, 3]);
    }

    #[test]
    fn collection_ratio_is_exactly_one_before_any_update() {
        let mut tr = Trainer::new(tiny_env_params(), tiny_trainer_params(), 11).unwrap();
        tr.iteration += 1;
        tr.collect().unwrap();
        tr.compute_advantages();

        let ad = tr.env_params.action.dim();
        let od = tr.env_params.obs_dim();
        let mut ws = Workspace::new();
        let mut mean = vec![0.0; ad];
        let samples = tr.params.rollout_len * tr.params.n_envs * tr.env_params.n_mavs;
        for s in 0..samples {
            tr.actor.forward(&tr.rollout.obs[s * od..(s + 1) * od], &mut ws, &mut mean);
            let lp = tr.head.log_prob(&mean, &tr.rollout.actions[s * ad..(s + 1) * ad]);
            let ratio = (lp - tr.rollout.log_probs[s]).exp();
            assert!((ratio - 1.0).abs() < 1e-6, "sample {s}: ratio {ratio}");
        }
    }

    #[test]
    fn shared_rewards_give_identical_centralized_advantages_across_agents() {
        let mut tr = Trainer::new(tiny_env_params(), tiny_trainer_params(), 5).unwrap();
        tr.iteration += 1;
        tr.collect().unwrap();
        tr.compute_advantages();

        let n = tr.env_params.n_mavs;
        let lanes = tr.params.n_envs * n;
        for t in 0..tr.params.rollout_len {
            for e in 0..tr.params.n_envs {
                let base = t * lanes + e * n;
                for i in 1..n {
                    assert_eq!(
                        tr.rollout.rewards[base].to_bits(),
                        tr.rollout.rewards[base + i].to_bits(),
                        "rewards differ within a step"
                    );
                    assert!(
                        (tr.rollout.advantages[base] - tr.rollout.advantages[base + i]).abs()
                            < 1e-12,
                        "centralized advantages differ within a step"
                    );
                }
            }
        }
    }

    #[test]
    fn one_iteration_is_bit_deterministic_per_seed() {
        // Zero the one wall-clock column so only numerics are compared.
        let strip_elapsed = |row: String| {
            let mut cols: Vec<&str> = row.split(',').collect();
            cols[2] = "0";
            cols.join(",")
        };
        let run = || {
            let mut tr = Trainer::new(tiny_env_params(), tiny_trainer_params(), 9).unwrap();
            let stats = tr.run_iteration().unwrap();
            (
                tr.actor.params().to_vec(),
                tr.head.log_std().to_vec(),
                strip_elapsed(stats.csv_row()),
            )
        };
        let (pa, la, ra) = run();
        let (pb, lb, rb) = run();
        assert_eq!(ra, rb);
        assert_eq!(la, lb);
        for (a, b) in pa.iter().zip(&pb) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn advantage_sign_flip_negates_the_policy_gradient() {
        // One-sample minibatch at ratio 1: the surrogate is linear in the
        // advantage, so flipping its sign must flip every actor gradient.
        let mut rng = rng::stream(3, 0);
        let mut actor = Mlp::orthogonal(&[4, 8, 2], Activation::Elu, 0.5, &mut rng);
        let head = GaussianHead::new(2, -0.2);
        let obs = [0.3, -0.8, 0.5, 0.1];
        let mut ws = Workspace::new();
        let mut mean = vec![0.0; 2];
        actor.forward(&obs, &mut ws, &mut mean);
        let action = [mean[0] + 0.3, mean[1] - 0.4];
        let lp_old = head.log_prob(&mean, &action);

        let mut grad_for = |adv: f64| {
            let mut grads = vec![0.0; actor.num_params()];
            let mut d_mean = vec![0.0; 2];
            let mut d_ls = vec![0.0; 2];
            let mut m = vec![0.0; 2];
            actor.forward_batch(&obs, 1, &mut ws, &mut m);
            let lp = head.log_prob_with_grad(&m, &action, &mut d_mean, &mut d_ls);
            let ratio = (lp - lp_old).exp();
            assert!((ratio - 1.0).abs() < 1e-12);
            let coeff = -adv * ratio;
            let dys: Vec<f64> = d_mean.iter().map(|d| coeff * d).collect();
            actor.backward_batch(&dys, &mut ws, &mut grads);
            grads
        };
        let plus = grad_for(1.0);
        let minus = grad_for(-1.0);
        let mut nonzero = 0;
        for (a, b) in plus.iter().zip(&minus) {
            assert!((a + b).abs() < 1e-12);
            if a.abs() > 1e-12 {
                nonzero += 1;
            }
        }
        assert!(nonzero > 10, "gradient unexpectedly sparse");
    }

    /// Clipped-surrogate loss as a pure function of the actor parameters,
    /// for finite-difference checking.
    fn ppo_loss(
        actor: &Mlp,
        head: &GaussianHead,
        obs: &[f64],
        action: &[f64],
        lp_old: f64,
        adv: f64,
        clip: f64,
    ) -> f64 {
        let mut ws = Workspace::new();
        let mut mean = vec![0.0; actor.output_dim()];
        actor.forward(obs, &mut ws, &mut mean);
        let lp = head.log_prob(&mean, action);
        let ratio = (lp - lp_old).exp();
        let surr1 = ratio * adv;
        let surr2 = ratio.clamp(1.0 - clip, 1.0 + clip) * adv;
        -surr1.min(surr2)
    }

    #[test]
    fn single_transition_clipped_loss_gradient_matches_finite_differences() {
        let mut rng = rng::stream(17, 0);
        let mut actor = Mlp::orthogonal(&[3, 6, 2], Activation::Tanh, 0.8, &mut rng);
        let head = GaussianHead::new(2, 0.1);
        let obs = [0.4, -0.2, 0.9];
        let mut ws = Workspace::new();
        let mut mean = vec![0.0; 2];
        actor.forward(&obs, &mut ws, &mut mean);
        let action = [mean[0] + 0.5, mean[1] - 0.2];

        // In-band ratio; clipped with zero gradient (positive advantage);
        // out-of-band but unclipped branch active (negative advantage, so
        // the minimum picks the raw surrogate and gradient still flows).
        for (shift, adv) in [(0.05, 1.3), (0.3, 0.7), (-0.25, -0.9), (0.3, -0.7)] {
            let lp_old = head.log_prob(&mean, &action) - shift;

            // Analytic gradient through the ratio branch logic.
            let mut grads = vec![0.0; actor.num_params()];
            let mut d_mean = vec![0.0; 2];
            let mut d_ls = vec![0.0; 2];
            let mut m = vec![0.0; 2];
            actor.forward_batch(&obs, 1, &mut ws, &mut m);
            let lp = head.log_prob_with_grad(&m, &action, &mut d_mean, &mut d_ls);
            let ratio = (lp - lp_old).exp();
            let (lo, hi) = (1.0 - 0.1, 1.0 + 0.1);
            let surr1 = ratio * adv;
            let surr2 = ratio.clamp(lo, hi) * adv;
            let through = surr1 <= surr2 || (lo..=hi).contains(&ratio);
            let coeff = if through { -adv * ratio } else { 0.0 };
            let dys: Vec<f64> = d_mean.iter().map(|d| coeff * d).collect();
            actor.backward_batch(&dys, &mut ws, &mut grads);

            // Finite differences over a spread of parameters.
            let m_params = actor.num_params();
            for &k in &[0usize, 3, 7, m_params / 2, m_params - 1] {
                let eps = 1e-6;
                let base = actor.params()[k];
                actor.params_mut()[k] = base + eps;
                let hi_l = ppo_loss(&actor, &head, &obs, &action, lp_old, adv, 0.1);
                actor.params_mut()[k] = base - eps;
                let lo_l = ppo_loss(&actor, &head, &obs, &action, lp_old, adv, 0.1);
                actor.params_mut()[k] = base;
                let num = (hi_l - lo_l) / (2.0 * eps);
                let denom = num.abs().max(grads[k].abs()).max(1e-4);
                assert!(
                    ((num - grads[k]) / denom).abs() < 1e-4,
                    "shift {shift}, param {k}: fd {num} vs analytic {}",
                    grads[k]
                );
            }
        }
    }

    #[test]
    fn clipped_value_loss_gradient_matches_finite_differences() {
        let mut rng = rng::stream(19, 0);
        let mut critic = Mlp::orthogonal(&[3, 6, 1], Activation::Elu, 1.0, &mut rng);
        let mut ws = Workspace::new();
        let input = [0.2, -0.5, 0.7];
        let mut v = [0.0];
        critic.forward(&input, &mut ws, &mut v);

        // In-band case: old value close to the prediction.
        let cases = [(v[0] - 0.05, 1.0), (v[0] - 0.5, 1.0)]; // second is clipped
        for (old, target) in cases {
            let clip = 0.1;
            let loss_of = |c: &Mlp| {
                let mut ws = Workspace::new();
                let mut v = [0.0];
                c.forward(&input, &mut ws, &mut v);
                let clipped = old + (v[0] - old).clamp(-clip, clip);
                (clipped - target) * (clipped - target)
            };

            let mut grads = vec![0.0; critic.num_params()];
            critic.forward_batch(&input, 1, &mut ws, &mut v);
            let diff = v[0] - old;
            let clipped = old + diff.clamp(-clip, clip);
            let dv = if diff.abs() <= clip { 2.0 * (clipped - target) } else { 0.0 };
            critic.backward_batch(&[dv], &mut ws, &mut grads);

            for &k in &[0usize, 5, critic.num_params() - 1] {
                let eps = 1e-6;
                let base = critic.params()[k];
                critic.params_mut()[k] = base + eps;
                let hi = loss_of(&critic);
                critic.params_mut()[k] = base - eps;
                let lo = loss_of(&critic);
                critic.params_mut()[k] = base;
                let num = (hi - lo) / (2.0 * eps);
                let denom = num.abs().max(grads[k].abs()).max(1e-4);
                assert!(
                    ((num - grads[k]) / denom).abs() < 1e-4,
                    "old {old}: fd {num} vs {}",
                    grads[k]
                );
            }
        }
    }

    #[test]
    fn policy_is_a_single_function_of_the_observation() {
        // Parameter sharing: identical observation content produces the
        // identical action distribution, regardless of which agent slot it
        // came from.
        let tr = Trainer::new(tiny_env_params(), tiny_trainer_params(), 23).unwrap();
        let policy = tr.policy();
        let obs = vec![0.25; tr.env_params.obs_dim()];
        let mut ws = Workspace::new();
        let mut a = vec![0.0; 6];
        let mut b = vec![0.0; 6];
        policy.act_mean(&obs, &mut ws, &mut a);
        policy.act_mean(&obs, &mut ws, &mut b);
        assert_eq!(a, b);
    }

    #[test]
    fn smoke_training_writes_parseable_metrics_and_reloadable_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let mut tr = Trainer::new(
            tiny_env_params(),
            TrainerParams { total_env_steps: 16, ..tiny_trainer_params() },
            31,
        )
        .unwrap();
        let report = tr.train(dir.path(), true).unwrap();
        assert_eq!(report.iterations, 2);
        assert_eq!(report.env_steps, 16);

        let csv = fs::read_to_string(&report.metrics_path).unwrap();
        let mut lines = csv.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let mut rows = 0;
        for line in lines {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols.len(), header.len());
            for c in &cols {
                c.parse::<f64>().unwrap_or_else(|_| panic!("non-numeric cell {c:?}"));
            }
            rows += 1;
        }
        assert_eq!(rows, 2);

        // Checkpoint round-trips into an identical policy.
        let policy = Policy::from_checkpoint(&report.checkpoint_path).unwrap();
        policy.check_compatible(&tr.env_params).unwrap();
        let obs: Vec<f64> = (0..tr.env_params.obs_dim()).map(|i| (i as f64) * 0.01).collect();
        let mut ws = Workspace::new();
        let mut from_trainer = vec![0.0; 6];
        let mut from_file = vec![0.0; 6];
        tr.policy().act_mean(&obs, &mut ws, &mut from_trainer);
        policy.act_mean(&obs, &mut ws, &mut from_file);
        for (a, b) in from_trainer.iter().zip(&from_file) {
            assert_eq!(a.to_bits(), b.to_bits());
        }

        // Incompatible environments are rejected.
        let other = EnvParams { action: ActionKind::Ctbr, ..tiny_env_params() };
        assert!(matches!(policy.check_compatible(&other), Err(Error::Mismatch(_))));
    }

    #[test]
    fn local_critic_swaps_input_assembly_only() {
        let mut tr = Trainer::new(
            tiny_env_params(),
            TrainerParams { critic: CriticKind::Local, ..tiny_trainer_params() },
            13,
        )
        .unwrap();
        assert_eq!(tr.critic.input_dim(), tr.env_params.obs_dim());
        tr.run_iteration().unwrap();

        let central = Trainer::new(tiny_env_params(), tiny_trainer_params(), 13).unwrap();
        assert_eq!(central.critic.input_dim(), central.env_params.global_dim());
    }

    #[test]
    fn poisoned_network_surfaces_as_nan_loss_error() {
        let mut tr = Trainer::new(tiny_env_params(), tiny_trainer_params(), 37).unwrap();
        tr.critic.params_mut()[0] = f64::NAN;
        let err = tr.run_iteration().unwrap_err();
        assert!(matches!(err, Error::NanLoss { .. }), "{err}");
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn trainer_params_validation_catches_bad_ranges() {
        let bad = TrainerParams { advantage_keep: 0.0, ..TrainerParams::default() };
        assert!(bad.validate().is_err());
        let bad = TrainerParams { gamma: 1.2, ..TrainerParams::default() };
        assert!(bad.validate().is_err());
        let bad = TrainerParams { hidden: vec![], ..TrainerParams::default() };
        assert!(bad.validate().is_err());
        assert_eq!(
            TrainerParams { total_env_steps: 100, ..tiny_trainer_params() }.iterations(),
            13
        );
    }
}
