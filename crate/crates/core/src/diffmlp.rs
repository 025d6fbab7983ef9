//! Fully-connected networks with reverse-mode parameter gradients and
//! forward-mode propagation of first and second input derivatives.
//!
//! The forward-mode pass carries `(u, J_u, H_u)` through every layer, so one
//! evaluation yields the value, the Jacobian, and the full Hessian tensor at
//! O(width²·m²) cost per layer — no graph, no tapes.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{sigmoid, softplus, Matrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MlpError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(&'static str),
    #[error("shape mismatch in {0}")]
    ShapeMismatch(&'static str),
    #[error("model i/o failed: {0}")]
    Io(String),
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
}

/// Hidden-layer activation; the final layer is always affine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Softplus,
}

impl Activation {
    /// Value, first, and second derivative at pre-activation `x`.
    fn eval2(self, x: f64) -> (f64, f64, f64) {
        match self {
            Activation::Tanh => {
                let s = x.tanh();
                let d1 = 1.0 - s * s;
                (s, d1, -2.0 * s * d1)
            }
            Activation::Softplus => {
                let sg = sigmoid(x);
                (softplus(x), sg, sg * (1.0 - sg))
            }
        }
    }

    fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Softplus => softplus(x),
        }
    }

    fn d1(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let s = x.tanh();
                1.0 - s * s
            }
            Activation::Softplus => sigmoid(x),
        }
    }
}

/// Value, Jacobian, and Hessian tensor of a network at one input.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffEval {
    pub n: usize,
    pub m: usize,
    /// length n
    pub value: Vec<f64>,
    /// n×m, row-major
    pub jacobian: Vec<f64>,
    /// n×m×m; slice i is the symmetric Hessian of output i
    pub hessian: Vec<f64>,
}

impl DiffEval {
    pub fn jac_row(&self, i: usize) -> &[f64] {
        &self.jacobian[i * self.m..(i + 1) * self.m]
    }

    pub fn hess_slice(&self, i: usize) -> &[f64] {
        &self.hessian[i * self.m * self.m..(i + 1) * self.m * self.m]
    }
}

/// Per-layer parameter gradients, shape-congruent with an [`Mlp`].
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.weights.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn accumulate(&mut self, other: &ParamGrads) {
        for (w, o) in self.weights.iter_mut().zip(&other.weights) {
            for i in 0..w.rows() {
                let (wr, or) = (i, o.row(i).to_vec());
                let row = w.row_mut(wr);
                for j in 0..row.len() {
                    row[j] += or[j];
                }
            }
        }
        for (b, o) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in b.iter_mut().zip(o) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for w in &mut self.weights {
            for i in 0..w.rows() {
                for v in w.row_mut(i) {
                    *v *= c;
                }
            }
        }
        for b in &mut self.biases {
            for v in b.iter_mut() {
                *v *= c;
            }
        }
    }
}

/// Sidecar metadata stored next to the flat parameter file.
#[derive(Debug, Serialize, Deserialize)]
struct MlpMeta {
    layer_dims: Vec<usize>,
    activation: Activation,
}

/// Fully-connected network; hidden layers share one activation, the final
/// layer is affine.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    /// weights[l] maps dims[l] → dims[l+1], stored (out × in)
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
}

/// `c (rows×cols) += a (rows×inner) · b (inner×cols)`, flat row-major.
/// The axpy inner loop is the hot path of Hessian propagation; keep it
/// contiguous so it auto-vectorizes.
fn gemm_acc(rows: usize, inner: usize, cols: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), rows * inner);
    debug_assert_eq!(b.len(), inner * cols);
    debug_assert_eq!(c.len(), rows * cols);
    for i in 0..rows {
        let crow = &mut c[i * cols..(i + 1) * cols];
        let arow = &a[i * inner..(i + 1) * inner];
        for (k, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[k * cols..(k + 1) * cols];
            for j in 0..cols {
                crow[j] += av * brow[j];
            }
        }
    }
}

impl Mlp {
    pub fn from_parts(
        layer_dims: Vec<usize>,
        weights: Vec<Matrix>,
        biases: Vec<Vec<f64>>,
        activation: Activation,
    ) -> Result<Self, MlpError> {
        validate_dims(&layer_dims)?;
        if weights.len() != layer_dims.len() - 1 || biases.len() != weights.len() {
            return Err(MlpError::ShapeMismatch("layer count"));
        }
        for l in 0..weights.len() {
            if weights[l].rows() != layer_dims[l + 1]
                || weights[l].cols() != layer_dims[l]
                || biases[l].len() != layer_dims[l + 1]
            {
                return Err(MlpError::ShapeMismatch("layer parameter shape"));
            }
        }
        Ok(Self { layer_dims, weights, biases, activation })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn param_count(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.rows() * w.cols() + b.len())
            .sum()
    }

    fn affine(&self, l: usize, u: &[f64], out: &mut Vec<f64>) {
        let w = &self.weights[l];
        let b = &self.biases[l];
        out.clear();
        out.reserve(w.rows());
        for i in 0..w.rows() {
            let row = w.row(i);
            let mut acc = b[i];
            for j in 0..row.len() {
                acc += row[j] * u[j];
            }
            out.push(acc);
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, MlpError> {
        if x.len() != self.input_dim() {
            return Err(MlpError::ShapeMismatch("forward input length"));
        }
        let last = self.weights.len() - 1;
        let mut u = x.to_vec();
        let mut z = Vec::new();
        for l in 0..self.weights.len() {
            self.affine(l, &u, &mut z);
            if l != last {
                for v in &mut z {
                    *v = self.activation.eval(*v);
                }
            }
            std::mem::swap(&mut u, &mut z);
        }
        Ok(u)
    }

    /// Forward pass carrying first and second input derivatives.
    ///
    /// Affine layer: `J ← W·J`, `H[k] ← Σⱼ W[k,j]·H[j]` (one GEMM over the
    /// flattened m² trailing block). Activation: `J[k] ← s′(uₖ)·J[k]`,
    /// `H[k] ← s′(uₖ)·H[k] + s″(uₖ)·J[k]J[k]ᵀ`.
    pub fn forward_with_input_derivatives(&self, x: &[f64]) -> Result<DiffEval, MlpError> {
        let m = self.input_dim();
        if x.len() != m {
            return Err(MlpError::ShapeMismatch("forward input length"));
        }
        let mm = m * m;
        let last = self.weights.len() - 1;

        let mut u = x.to_vec();
        let mut jac = vec![0.0; m * m];
        for i in 0..m {
            jac[i * m + i] = 1.0;
        }
        let mut hess = vec![0.0; m * mm];

        let mut z = Vec::new();
        for l in 0..self.weights.len() {
            let w = &self.weights[l];
            let (w_out, w_in) = (w.rows(), w.cols());

            self.affine(l, &u, &mut z);

            let mut jac_next = vec![0.0; w_out * m];
            gemm_acc(w_out, w_in, m, w.data(), &jac, &mut jac_next);
            let mut hess_next = vec![0.0; w_out * mm];
            gemm_acc(w_out, w_in, mm, w.data(), &hess, &mut hess_next);

            if l != last {
                for k in 0..w_out {
                    let (s, d1, d2) = self.activation.eval2(z[k]);
                    z[k] = s;
                    let jrow = &mut jac_next[k * m..(k + 1) * m];
                    let hslice = &mut hess_next[k * mm..(k + 1) * mm];
                    for v in hslice.iter_mut() {
                        *v *= d1;
                    }
                    for a in 0..m {
                        let ja = jrow[a];
                        if ja != 0.0 {
                            let row = &mut hslice[a * m..(a + 1) * m];
                            let f = d2 * ja;
                            for b in 0..m {
                                row[b] += f * jrow[b];
                            }
                        }
                    }
                    for v in jrow.iter_mut() {
                        *v *= d1;
                    }
                }
            }

            std::mem::swap(&mut u, &mut z);
            jac = jac_next;
            hess = hess_next;
        }

        Ok(DiffEval { n: self.output_dim(), m, value: u, jacobian: jac, hessian: hess })
    }

    /// Reverse-mode gradients of `⟨upstream, f(x)⟩` with respect to all
    /// parameters, accumulated into `grads`.
    pub fn backprop_into(
        &self,
        x: &[f64],
        upstream: &[f64],
        grads: &mut ParamGrads,
    ) -> Result<(), MlpError> {
        if x.len() != self.input_dim() {
            return Err(MlpError::ShapeMismatch("backprop input length"));
        }
        if upstream.len() != self.output_dim() {
            return Err(MlpError::ShapeMismatch("backprop upstream length"));
        }
        let last = self.weights.len() - 1;

        // forward, caching the input of every affine layer and hidden pre-activations
        let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(self.weights.len());
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(last);
        let mut u = x.to_vec();
        let mut z = Vec::new();
        for l in 0..self.weights.len() {
            inputs.push(u.clone());
            self.affine(l, &u, &mut z);
            if l != last {
                pre.push(z.clone());
                for v in &mut z {
                    *v = self.activation.eval(*v);
                }
            }
            std::mem::swap(&mut u, &mut z);
        }

        // backward
        let mut g = upstream.to_vec();
        for l in (0..self.weights.len()).rev() {
            let w = &self.weights[l];
            let input = &inputs[l];
            let gw = &mut grads.weights[l];
            for i in 0..w.rows() {
                let gi = g[i];
                grads.biases[l][i] += gi;
                if gi != 0.0 {
                    let row = gw.row_mut(i);
                    for j in 0..input.len() {
                        row[j] += gi * input[j];
                    }
                }
            }
            if l > 0 {
                let mut g_prev = vec![0.0; w.cols()];
                for i in 0..w.rows() {
                    let gi = g[i];
                    if gi == 0.0 {
                        continue;
                    }
                    let row = w.row(i);
                    for j in 0..row.len() {
                        g_prev[j] += gi * row[j];
                    }
                }
                let p = &pre[l - 1];
                for j in 0..g_prev.len() {
                    g_prev[j] *= self.activation.d1(p[j]);
                }
                g = g_prev;
            }
        }
        Ok(())
    }

    pub fn backprop_params(&self, x: &[f64], upstream: &[f64]) -> Result<ParamGrads, MlpError> {
        let mut grads = ParamGrads::zeros_like(self);
        self.backprop_into(x, upstream, &mut grads)?;
        Ok(grads)
    }

    /// In-place SGD-style update `θ ← θ + delta` with congruent deltas;
    /// the optimizer computes deltas, this applies them.
    pub fn apply_update(&mut self, delta: &ParamGrads) {
        for (w, d) in self.weights.iter_mut().zip(&delta.weights) {
            for i in 0..w.rows() {
                let drow = d.row(i).to_vec();
                let row = w.row_mut(i);
                for j in 0..row.len() {
                    row[j] += drow[j];
                }
            }
        }
        for (b, d) in self.biases.iter_mut().zip(&delta.biases) {
            for (x, y) in b.iter_mut().zip(d) {
                *x += y;
            }
        }
    }

    /// True when every weight and bias is finite.
    pub fn params_finite(&self) -> bool {
        self.weights.iter().all(|w| w.data().iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Parameters flattened layer by layer (weights row-major, then bias).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
        out
    }

    /// Overwrites parameters from the [`flat_params`](Self::flat_params) layout.
    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<(), MlpError> {
        if flat.len() != self.param_count() {
            return Err(MlpError::ShapeMismatch("flat parameter length"));
        }
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            let wl = w.rows() * w.cols();
            let src = &flat[off..off + wl];
            for i in 0..w.rows() {
                let cols = w.cols();
                w.row_mut(i).copy_from_slice(&src[i * cols..(i + 1) * cols]);
            }
            off += wl;
            let bl = b.len();
            b.copy_from_slice(&flat[off..off + bl]);
            off += bl;
        }
        Ok(())
    }

    /// Writes parameters as a flat little-endian f64 array plus a JSON
    /// sidecar with the architecture.
    pub fn save(&self, params_path: &Path, meta_path: &Path) -> Result<(), MlpError> {
        let flat = self.flat_params();
        let mut bytes = Vec::with_capacity(flat.len() * 8);
        for v in flat {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(params_path, bytes).map_err(|e| MlpError::Io(e.to_string()))?;
        let meta = MlpMeta { layer_dims: self.layer_dims.clone(), activation: self.activation };
        let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
        fs::write(meta_path, json).map_err(|e| MlpError::Io(e.to_string()))
    }

    pub fn load(params_path: &Path, meta_path: &Path) -> Result<Self, MlpError> {
        let json = fs::read_to_string(meta_path).map_err(|e| MlpError::Io(e.to_string()))?;
        let meta: MlpMeta =
            serde_json::from_str(&json).map_err(|e| MlpError::CorruptModel(e.to_string()))?;
        let mut net = init_mlp(&meta.layer_dims, meta.activation, 0)?;
        let bytes = fs::read(params_path).map_err(|e| MlpError::Io(e.to_string()))?;
        if bytes.len() != net.param_count() * 8 {
            return Err(MlpError::CorruptModel(format!(
                "expected {} parameter bytes, found {}",
                net.param_count() * 8,
                bytes.len()
            )));
        }
        let flat: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        net.set_flat_params(&flat)?;
        Ok(net)
    }
}

fn validate_dims(layer_dims: &[usize]) -> Result<(), MlpError> {
    if layer_dims.len() < 2 {
        return Err(MlpError::InvalidArchitecture("need at least input and output dims"));
    }
    if layer_dims.iter().any(|&d| d < 1) {
        return Err(MlpError::InvalidArchitecture("every layer dim must be >= 1"));
    }
    Ok(())
}

/// Glorot-uniform initialization: weights from
/// `U(−√(6/(fan_in+fan_out)), +√(6/(fan_in+fan_out)))`, biases zero,
/// deterministic in `seed`.
pub fn init_mlp(layer_dims: &[usize], activation: Activation, seed: u64) -> Result<Mlp, MlpError> {
    validate_dims(layer_dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::with_capacity(layer_dims.len() - 1);
    let mut biases = Vec::with_capacity(layer_dims.len() - 1);
    for l in 0..layer_dims.len() - 1 {
        let (fan_in, fan_out) = (layer_dims[l], layer_dims[l + 1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut w = Matrix::zeros(fan_out, fan_in);
        for i in 0..fan_out {
            for v in w.row_mut(i) {
                *v = rng.random_range(-limit..limit);
            }
        }
        weights.push(w);
        biases.push(vec![0.0; fan_out]);
    }
    Ok(Mlp { layer_dims: layer_dims.to_vec(), weights, biases, activation })
}
