//! Neural-network building blocks: flat-parameter MLPs with hand-derived
//! backprop, a diagonal-Gaussian action distribution, running input
//! standardization, Adam, and the binary checkpoint container. Everything
//! runs in f64 so training is bit-reproducible for a fixed seed.

pub mod adam;
pub mod checkpoint;
pub mod mlp;
pub mod scaler;

pub use adam::{clip_global_norm, Adam};
pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use mlp::{Activation, Mlp, Workspace, MICRO_BATCH};
pub use scaler::RunningScaler;

use rand_chacha::ChaCha8Rng;

use crate::rng::standard_normal;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const LN_2PI: f64 = 1.8378770664093453;

/// Diagonal Gaussian over actions with a state-independent, learned
/// log-standard-deviation vector. The mean comes from an MLP forward pass;
/// this type owns only the distribution math and the `log_std` parameters.
#[derive(Debug, Clone)]
pub struct GaussianHead {
    log_std: Vec<f64>,
}

impl GaussianHead {
    pub fn new(action_dim: usize, init_log_std: f64) -> GaussianHead {
        GaussianHead { log_std: vec![init_log_std; action_dim] }
    }

    pub fn from_params(log_std: Vec<f64>) -> GaussianHead {
        GaussianHead { log_std }
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn log_std_mut(&mut self) -> &mut [f64] {
        &mut self.log_std
    }

    /// Standard deviation for dimension `k`, with log-std clamped to the
    /// stability interval before exponentiation.
    fn sigma(&self, k: usize) -> f64 {
        self.log_std[k].clamp(LOG_STD_MIN, LOG_STD_MAX).exp()
    }

    /// Whether the clamp is inactive for dimension `k` (gradient passes).
    fn gate(&self, k: usize) -> f64 {
        let ls = self.log_std[k];
        if (LOG_STD_MIN..=LOG_STD_MAX).contains(&ls) {
            1.0
        } else {
            0.0
        }
    }

    pub fn sample(&self, mean: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        assert_eq!(mean.len(), self.log_std.len());
        mean.iter()
            .enumerate()
            .map(|(k, &m)| m + self.sigma(k) * standard_normal(rng))
            .collect()
    }

    pub fn log_prob(&self, mean: &[f64], action: &[f64]) -> f64 {
        assert_eq!(mean.len(), self.log_std.len());
        assert_eq!(action.len(), self.log_std.len());
        let mut lp = 0.0;
        for k in 0..self.log_std.len() {
            let ls = self.log_std[k].clamp(LOG_STD_MIN, LOG_STD_MAX);
            let z = (action[k] - mean[k]) / self.sigma(k);
            lp += -0.5 * z * z - ls - 0.5 * LN_2PI;
        }
        lp
    }

    /// Log-probability together with its gradients: `d_mean[k] = d lp / d
    /// mean[k]` (to be backpropagated through the actor) and `d_log_std[k] =
    /// d lp / d log_std[k]` (a direct parameter gradient, zero where the
    /// clamp is active).
    pub fn log_prob_with_grad(
        &self,
        mean: &[f64],
        action: &[f64],
        d_mean: &mut [f64],
        d_log_std: &mut [f64],
    ) -> f64 {
        assert_eq!(d_mean.len(), self.log_std.len());
        assert_eq!(d_log_std.len(), self.log_std.len());
        let mut lp = 0.0;
        for k in 0..self.log_std.len() {
            let ls = self.log_std[k].clamp(LOG_STD_MIN, LOG_STD_MAX);
            let sigma = self.sigma(k);
            let z = (action[k] - mean[k]) / sigma;
            lp += -0.5 * z * z - ls - 0.5 * LN_2PI;
            d_mean[k] = z / sigma;
            d_log_std[k] = (z * z - 1.0) * self.gate(k);
        }
        lp
    }

    /// Differential entropy; state-independent because the covariance is.
    pub fn entropy(&self) -> f64 {
        (0..self.log_std.len())
            .map(|k| self.log_std[k].clamp(LOG_STD_MIN, LOG_STD_MAX) + 0.5 * (LN_2PI + 1.0))
            .sum()
    }

    /// `d entropy / d log_std[k]`, which is 1 wherever the clamp passes.
    pub fn entropy_grad(&self, d_log_std: &mut [f64]) {
        for (k, g) in d_log_std.iter_mut().enumerate() {
            *g = self.gate(k);
        }
    }
}
