//! Decentralized full-pose control of a cable-suspended load carried by a
//! team of quadrotor MAVs, trained with multi-agent PPO.
//!
//! The crate is organised bottom-up:
//!
//! * [`geom`] — vectors, quaternions, rotation matrices, and the geometric
//!   predicates the rest of the stack consumes.
//! * [`physics`] — rigid bodies connected by inextensible cables, integrated
//!   with a position-based constraint solver, plus the quadratic rotor model.
//! * [`lowlevel`] — the onboard controller that turns high-level action
//!   commands into rotor speeds while compensating estimated cable forces.
//! * [`env`] — the multi-agent environment: observations, rewards,
//!   terminations, and vectorised episode stepping.
//! * [`nn`] — small dense networks, running input scalers, Adam, and the
//!   checkpoint container. No autograd framework; gradients are hand-derived.
//! * [`marl`] — rollout collection, generalized advantage estimation, and the
//!   clipped-surrogate policy/value update with parameter sharing.
//! * [`eval`] — scripted evaluation scenarios (setpoint steps, trajectory
//!   tracking, robustness probes) and their metrics.
//! * [`config`] — the TOML-backed configuration schema shared by the CLI,
//!   the library API, and the checkpoint compatibility check.
//! * [`cli`] — run manifests, checkpoint inspection, and artifact export
//!   behind the binary's subcommands.
//!
//! The `swarmlift` binary (see `src/main.rs`) is a thin wrapper exposing
//! `train`, `eval`, `ablate`, `inspect`, and `export` subcommands. The
//! `examples/` directory demonstrates each major capability in isolation.

pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod eval;
pub mod geom;
pub mod lowlevel;
pub mod marl;
pub mod nn;
pub mod physics;
pub mod rng;

pub use error::{Error, Result};
