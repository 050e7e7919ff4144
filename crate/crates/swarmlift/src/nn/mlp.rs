//! Dense multi-layer perceptron over `f64` with hand-derived gradients.
//!
//! Parameters live in one flat vector (`[W0 | b0 | W1 | b1 | ...]`, weights
//! row-major `[out][in]`) so the optimizer can treat the whole network as a
//! single tensor group. Forward/backward operate on micro-batches: each
//! weight row is streamed once per batch instead of once per sample, which
//! is the difference between L2-bandwidth-bound and compute-bound on the
//! training hot path.

use crate::rng::standard_normal;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Elu,
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp() - 1.0
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation value.
    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "elu" => Ok(Activation::Elu),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(format!("unknown activation '{other}'")),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Elu => "elu",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        })
    }
}

/// Largest micro-batch processed in one sweep. Activations for a full batch
/// stay L1-resident at this size for the widths used here.
pub const MICRO_BATCH: usize = 8;

/// Feed-forward network: `sizes[0]` inputs, hidden layers with `act`, linear
/// output layer of `sizes.last()` units.
#[derive(Debug, Clone)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
    /// Column-major mirrors of each weight matrix for the backward pass
    /// (sequential reads when computing input gradients).
    transposed: Vec<f64>,
    transposed_stale: bool,
    act: Activation,
}

/// Per-layer parameter offsets into the flat vector.
#[derive(Debug, Clone, Copy)]
struct LayerSlice {
    w: usize,
    b: usize,
    rows: usize,
    cols: usize,
}

impl Mlp {
    /// Orthogonal initialization: hidden layers scaled by sqrt(2), the output
    /// layer by `out_gain`. Biases start at zero.
    pub fn orthogonal<R: Rng + ?Sized>(
        sizes: &[usize],
        act: Activation,
        out_gain: f64,
        rng: &mut R,
    ) -> Mlp {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        assert!(sizes.iter().all(|&s| s > 0), "zero-width layer");
        let mut params = Vec::new();
        let n_layers = sizes.len() - 1;
        for l in 0..n_layers {
            let (rows, cols) = (sizes[l + 1], sizes[l]);
            let gain = if l + 1 == n_layers { out_gain } else { 2.0f64.sqrt() };
            params.extend_from_slice(&orthogonal_matrix(rows, cols, gain, rng));
            params.extend(std::iter::repeat_n(0.0, rows));
        }
        let mut mlp = Mlp {
            sizes: sizes.to_vec(),
            transposed: vec![0.0; params.len()],
            params,
            transposed_stale: true,
            act,
        };
        mlp.refresh_transposed();
        mlp
    }

    /// Rebuild from a flat parameter vector (checkpoint load).
    pub fn from_params(sizes: &[usize], act: Activation, params: Vec<f64>) -> Mlp {
        let expect: usize = (0..sizes.len() - 1)
            .map(|l| sizes[l + 1] * sizes[l] + sizes[l + 1])
            .sum();
        assert_eq!(params.len(), expect, "parameter count mismatch");
        let mut mlp = Mlp {
            sizes: sizes.to_vec(),
            transposed: vec![0.0; params.len()],
            params,
            transposed_stale: true,
            act,
        };
        mlp.refresh_transposed();
        mlp
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.act
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access for the optimizer. Call [`Mlp::refresh_transposed`]
    /// (or let `backward` do it lazily) after writing.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.transposed_stale = true;
        &mut self.params
    }

    /// Multiply-accumulate count of one single-sample forward pass.
    pub fn macs_per_forward(&self) -> usize {
        (0..self.sizes.len() - 1)
            .map(|l| self.sizes[l + 1] * self.sizes[l])
            .sum()
    }

    fn layers(&self) -> impl Iterator<Item = LayerSlice> + '_ {
        let mut off = 0;
        (0..self.sizes.len() - 1).map(move |l| {
            let (rows, cols) = (self.sizes[l + 1], self.sizes[l]);
            let s = LayerSlice { w: off, b: off + rows * cols, rows, cols };
            off += rows * cols + rows;
            s
        })
    }

    pub fn refresh_transposed(&mut self) {
        let layers: Vec<LayerSlice> = self.layers().collect();
        for s in layers {
            for r in 0..s.rows {
                for c in 0..s.cols {
                    self.transposed[s.w + c * s.rows + r] = self.params[s.w + r * s.cols + c];
                }
            }
        }
        self.transposed_stale = false;
    }

    /// Forward a micro-batch of `n <= MICRO_BATCH` stacked inputs
    /// (`xs.len() == n * input_dim`), writing stacked outputs. Activations
    /// and pre-activations are recorded in `ws` for a subsequent backward.
    pub fn forward_batch(&self, xs: &[f64], n: usize, ws: &mut Workspace, ys: &mut [f64]) {
        assert!((1..=MICRO_BATCH).contains(&n));
        assert_eq!(xs.len(), n * self.input_dim());
        assert_eq!(ys.len(), n * self.output_dim());
        ws.ensure(&self.sizes);
        ws.batch = n;
        ws.acts[0][..xs.len()].copy_from_slice(xs);

        let n_layers = self.sizes.len() - 1;
        for (l, s) in self.layers().enumerate() {
            let last = l + 1 == n_layers;
            // Split so the input buffer and the output buffer of the layer
            // can be borrowed simultaneously.
            let (head, tail) = ws.acts.split_at_mut(l + 1);
            let x = &head[l][..n * s.cols];
            let pre = &mut ws.pre[l][..n * s.rows];
            let out = &mut tail[0][..n * s.rows];
            for r in 0..s.rows {
                let row = &self.params[s.w + r * s.cols..s.w + (r + 1) * s.cols];
                let bias = self.params[s.b + r];
                for b in 0..n {
                    let xb = &x[b * s.cols..(b + 1) * s.cols];
                    let mut acc = bias;
                    for (w, v) in row.iter().zip(xb) {
                        acc += w * v;
                    }
                    pre[b * s.rows + r] = acc;
                }
            }
            if last {
                out[..n * s.rows].copy_from_slice(&pre[..n * s.rows]);
            } else {
                for i in 0..n * s.rows {
                    out[i] = self.act.apply(pre[i]);
                }
            }
        }
        ys.copy_from_slice(&ws.acts[n_layers][..n * self.output_dim()]);
    }

    /// Convenience single-sample forward.
    pub fn forward(&self, x: &[f64], ws: &mut Workspace, y: &mut [f64]) {
        self.forward_batch(x, 1, ws, y);
    }

    /// Backward for the micro-batch recorded in `ws` by the last
    /// `forward_batch`. `dys` holds stacked output gradients; parameter
    /// gradients are *accumulated* into `grads` (flat layout identical to
    /// `params`). Requires the transposed cache to be current.
    pub fn backward_batch(&mut self, dys: &[f64], ws: &mut Workspace, grads: &mut [f64]) {
        if self.transposed_stale {
            self.refresh_transposed();
        }
        let n = ws.batch;
        assert_eq!(dys.len(), n * self.output_dim());
        assert_eq!(grads.len(), self.params.len());

        let layers: Vec<LayerSlice> = self.layers().collect();
        let n_layers = layers.len();
        ws.delta[..dys.len()].copy_from_slice(dys);

        for l in (0..n_layers).rev() {
            let s = layers[l];
            // Nonlinearity gradient (hidden layers only; output is linear).
            if l + 1 != n_layers {
                let pre = &ws.pre[l][..n * s.rows];
                for (d, &p) in ws.delta[..n * s.rows].iter_mut().zip(pre) {
                    *d *= self.act.derivative(p);
                }
            }
            let x = &ws.acts[l][..n * s.cols];
            let delta = &ws.delta[..n * s.rows];
            // Bias and weight gradients.
            for r in 0..s.rows {
                let grow = &mut grads[s.w + r * s.cols..s.w + (r + 1) * s.cols];
                let mut gb = 0.0;
                for b in 0..n {
                    let d = delta[b * s.rows + r];
                    gb += d;
                    let xb = &x[b * s.cols..(b + 1) * s.cols];
                    for (g, v) in grow.iter_mut().zip(xb) {
                        *g += d * v;
                    }
                }
                grads[s.b + r] += gb;
            }
            // Input gradient via the transposed weights (skip for layer 0:
            // nothing consumes gradients w.r.t. the network input here).
            if l > 0 {
                let dx = &mut ws.delta_next[..n * s.cols];
                for c in 0..s.cols {
                    let col = &self.transposed[s.w + c * s.rows..s.w + (c + 1) * s.rows];
                    for b in 0..n {
                        let db = &delta[b * s.rows..(b + 1) * s.rows];
                        let mut acc = 0.0;
                        for (w, d) in col.iter().zip(db) {
                            acc += w * d;
                        }
                        dx[b * s.cols + c] = acc;
                    }
                }
                let len = n * s.cols;
                let (d, dn) = (&mut ws.delta, &mut ws.delta_next);
                d[..len].copy_from_slice(&dn[..len]);
            }
        }
    }
}

/// Scratch buffers reused across forward/backward calls.
#[derive(Debug, Default, Clone)]
pub struct Workspace {
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
    batch: usize,
    sized_for: Vec<usize>,
}

impl Workspace {
    pub fn new() -> Workspace {
        Workspace::default()
    }

    fn ensure(&mut self, sizes: &[usize]) {
        if self.sized_for == sizes {
            return;
        }
        let max_width = *sizes.iter().max().unwrap();
        self.acts = sizes.iter().map(|&s| vec![0.0; s * MICRO_BATCH]).collect();
        self.pre = sizes[1..].iter().map(|&s| vec![0.0; s * MICRO_BATCH]).collect();
        self.delta = vec![0.0; max_width * MICRO_BATCH];
        self.delta_next = vec![0.0; max_width * MICRO_BATCH];
        self.sized_for = sizes.to_vec();
    }
}

/// Random matrix with orthonormal rows (rows <= cols) or columns
/// (rows > cols), scaled by `gain`, flattened row-major.
fn orthogonal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    // Orthonormalize the smaller side with modified Gram-Schmidt.
    let (m, n) = (rows.max(cols), rows.min(cols)); // m x n with m >= n
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..m).map(|_| standard_normal(rng)).collect();
        for u in &basis {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= d * ui;
            }
        }
        let norm: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            for vi in v.iter_mut() {
                *vi /= norm;
            }
            basis.push(v);
        }
        // Degenerate draws are vanishingly rare; loop simply retries.
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            // basis is n vectors of length m; orient to the requested shape.
            let val = if rows <= cols { basis[r][c] } else { basis[c][r] };
            out[r * cols + c] = gain * val;
        }
    }
    out
}
