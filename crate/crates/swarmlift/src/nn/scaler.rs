//! Running input standardization. Statistics accumulate across batches with
//! the parallel (Chan et al.) mean/variance merge, using population variance;
//! `apply` standardizes with `(x - mean) / sqrt(var + eps)`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunningScaler {
    mean: Vec<f64>,
    var: Vec<f64>,
    count: f64,
    eps: f64,
    /// Frozen scalers apply but never update (evaluation mode).
    pub frozen: bool,
}

impl RunningScaler {
    pub fn new(dim: usize) -> RunningScaler {
        RunningScaler {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            count: 0.0,
            eps: 1e-8,
            frozen: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> f64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    /// Rebuild from checkpoint tensors.
    pub fn from_parts(mean: Vec<f64>, var: Vec<f64>, count: f64) -> RunningScaler {
        assert_eq!(mean.len(), var.len());
        RunningScaler { mean, var, count, eps: 1e-8, frozen: false }
    }

    /// Merge a batch of `rows.len() / dim` samples into the running
    /// statistics. No-op when frozen or empty.
    pub fn update(&mut self, rows: &[f64]) {
        if self.frozen || rows.is_empty() {
            return;
        }
        let dim = self.dim();
        assert_eq!(rows.len() % dim, 0, "batch length not a multiple of dim");
        let n_b = (rows.len() / dim) as f64;

        // Per-dimension batch mean and population variance.
        let mut mean_b = vec![0.0; dim];
        for row in rows.chunks_exact(dim) {
            for (m, &x) in mean_b.iter_mut().zip(row) {
                *m += x;
            }
        }
        for m in mean_b.iter_mut() {
            *m /= n_b;
        }
        let mut var_b = vec![0.0; dim];
        for row in rows.chunks_exact(dim) {
            for ((v, &x), &m) in var_b.iter_mut().zip(row).zip(&mean_b) {
                let d = x - m;
                *v += d * d;
            }
        }
        for v in var_b.iter_mut() {
            *v /= n_b;
        }

        if self.count == 0.0 {
            self.mean = mean_b;
            self.var = var_b;
            self.count = n_b;
            return;
        }
        let n_a = self.count;
        let total = n_a + n_b;
        for k in 0..dim {
            let delta = mean_b[k] - self.mean[k];
            let m2 = self.var[k] * n_a + var_b[k] * n_b + delta * delta * n_a * n_b / total;
            self.mean[k] += delta * n_b / total;
            self.var[k] = m2 / total;
        }
        self.count = total;
    }

    /// Standardize in place: `(x - mean) / sqrt(var + eps)`. Before any
    /// update the scaler is the identity (mean 0, var 1).
    pub fn apply(&self, x: &mut [f64]) {
        let dim = self.dim();
        assert_eq!(x.len() % dim, 0);
        for row in x.chunks_exact_mut(dim) {
            for ((v, &m), &s2) in row.iter_mut().zip(&self.mean).zip(&self.var) {
                *v = (*v - m) / (s2 + self.eps).sqrt();
            }
        }
    }

    /// Undo `apply` (used to de-standardize value predictions).
    pub fn inverse(&self, x: &mut [f64]) {
        let dim = self.dim();
        assert_eq!(x.len() % dim, 0);
        for row in x.chunks_exact_mut(dim) {
            for ((v, &m), &s2) in row.iter_mut().zip(&self.mean).zip(&self.var) {
                *v = *v * (s2 + self.eps).sqrt() + m;
            }
        }
    }

    /// Scalar convenience for one-dimensional scalers.
    pub fn apply_scalar(&self, x: f64) -> f64 {
        debug_assert_eq!(self.dim(), 1);
        (x - self.mean[0]) / (self.var[0] + self.eps).sqrt()
    }

    pub fn inverse_scalar(&self, x: f64) -> f64 {
        debug_assert_eq!(self.dim(), 1);
        x * (self.var[0] + self.eps).sqrt() + self.mean[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal, stream};

    /// Two-pass oracle over the whole dataset.
    fn oracle(rows: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>) {
        let n = (rows.len() / dim) as f64;
        let mut mean = vec![0.0; dim];
        for row in rows.chunks_exact(dim) {
            for (m, &x) in mean.iter_mut().zip(row) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; dim];
        for row in rows.chunks_exact(dim) {
            for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m) / n;
            }
        }
        (mean, var)
    }

    #[test]
    fn chunked_updates_match_two_pass_statistics() {
        let mut rng = stream(5, 0);
        let dim = 3;
        let data: Vec<f64> = (0..dim * 1000)
            .map(|i| 4.0 * standard_normal(&mut rng) + (i % dim) as f64)
            .collect();
        let (mean, var) = oracle(&data, dim);

        // Ragged chunk sizes, including single rows.
        let mut scaler = RunningScaler::new(dim);
        let mut off = 0;
        for (k, chunk) in [1usize, 7, 64, 128, 300, 500].iter().enumerate() {
            let take = (chunk * dim).min(data.len() - off);
            scaler.update(&data[off..off + take]);
            off += take;
            let _ = k;
        }
        scaler.update(&data[off..]);

        assert_eq!(scaler.count(), 1000.0);
        for k in 0..dim {
            assert!((scaler.mean()[k] - mean[k]).abs() < 1e-10, "mean[{k}]");
            assert!((scaler.var()[k] - var[k]).abs() < 1e-10, "var[{k}]");
        }
    }

    #[test]
    fn apply_then_inverse_round_trips() {
        let mut scaler = RunningScaler::new(2);
        scaler.update(&[1.0, 10.0, 3.0, 30.0, 5.0, 50.0, 7.0, 70.0]);
        let orig = vec![2.5, 25.0];
        let mut x = orig.clone();
        scaler.apply(&mut x);
        scaler.inverse(&mut x);
        for (a, b) in x.iter().zip(&orig) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn standardized_output_has_unit_scale() {
        let mut rng = stream(6, 0);
        let mut scaler = RunningScaler::new(1);
        let data: Vec<f64> = (0..5000).map(|_| 7.0 + 3.0 * standard_normal(&mut rng)).collect();
        scaler.update(&data);
        let mut x = data.clone();
        scaler.apply(&mut x);
        let mean: f64 = x.iter().sum::<f64>() / x.len() as f64;
        let var: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / x.len() as f64;
        assert!(mean.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn identity_before_first_update_and_frozen_stops_learning() {
        let mut scaler = RunningScaler::new(1);
        let mut x = vec![4.2];
        scaler.apply(&mut x);
        assert!((x[0] - 4.2 / (1.0f64 + 1e-8).sqrt()).abs() < 1e-12);

        scaler.update(&[1.0, 1.0, 1.0]);
        let before = (scaler.mean().to_vec(), scaler.var().to_vec(), scaler.count());
        scaler.frozen = true;
        scaler.update(&[100.0; 32]);
        assert_eq!(before.0, scaler.mean());
        assert_eq!(before.1, scaler.var());
        assert_eq!(before.2, scaler.count());
    }
}
