//! Convolutional Q-network: forward pass, reverse-mode gradients, parameter storage.
//!
//! Activations are height × width × channel. Parameters live in one flat
//! vector, layer by layer, weights then biases:
//!
//! * conv: `w[ky][kx][in_c][out_c]`, `b[out_c]` (valid cross-correlation)
//! * dense: `w[in][out]`, `b[out]`, where `in` flattens the previous HWC map
//!
//! Hidden layers use a rectifier, the output layer is linear, and the optional
//! pool is 2×2 max with stride 2 after the first convolution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{FrameStack, FRAME_COUNT};
use crate::error::{Error, Result};
use crate::signal::NUM_ACTIONS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub out_channels: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_size: usize,
    pub input_channels: usize,
    pub convs: Vec<ConvSpec>,
    /// 2×2 stride-2 max pool between the first and second convolution.
    pub pool_after_first: bool,
    /// Width of the rectified dense layer; `None` connects straight to the output.
    pub hidden: Option<usize>,
    pub outputs: usize,
}

impl NetworkSpec {
    /// 80×80×4 input: 8×8/4 ×16, max-pool, 4×4/2 ×32, 3×3/1 ×32, dense 256.
    pub fn large() -> NetworkSpec {
        NetworkSpec {
            input_size: 80,
            input_channels: FRAME_COUNT,
            convs: vec![
                ConvSpec { kernel: 8, stride: 4, out_channels: 16 },
                ConvSpec { kernel: 4, stride: 2, out_channels: 32 },
                ConvSpec { kernel: 3, stride: 1, out_channels: 32 },
            ],
            pool_after_first: true,
            hidden: Some(256),
            outputs: NUM_ACTIONS,
        }
    }

    /// 24×24×4 input without pooling: 6×6/2 ×16, 4×4/2 ×32, 3×3/1 ×32, dense 128.
    pub fn small() -> NetworkSpec {
        NetworkSpec {
            input_size: 24,
            input_channels: FRAME_COUNT,
            convs: vec![
                ConvSpec { kernel: 6, stride: 2, out_channels: 16 },
                ConvSpec { kernel: 4, stride: 2, out_channels: 32 },
                ConvSpec { kernel: 3, stride: 1, out_channels: 32 },
            ],
            pool_after_first: false,
            hidden: Some(128),
            outputs: NUM_ACTIONS,
        }
    }

    pub fn for_matrix_size(size: usize) -> Result<NetworkSpec> {
        match size {
            80 => Ok(NetworkSpec::large()),
            24 => Ok(NetworkSpec::small()),
            other => Err(Error::UnsupportedSize(other)),
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_size * self.input_size * self.input_channels
    }

    fn plan(&self) -> Result<Plan> {
        if self.outputs == 0 || self.input_size == 0 || self.input_channels == 0 {
            return Err(Error::ShapeMismatch("network dimensions must be positive".into()));
        }
        let mut convs = Vec::new();
        let mut side = self.input_size;
        let mut channels = self.input_channels;
        let mut offset = 0;
        let mut pool = None;
        for (i, c) in self.convs.iter().enumerate() {
            if c.kernel == 0 || c.stride == 0 || c.out_channels == 0 || side < c.kernel {
                return Err(Error::ShapeMismatch(format!("conv {i}: kernel {} does not fit a {side}-wide map", c.kernel)));
            }
            let out_side = (side - c.kernel) / c.stride + 1;
            let w_len = c.kernel * c.kernel * channels * c.out_channels;
            convs.push(ConvGeom {
                in_side: side,
                in_c: channels,
                out_side,
                out_c: c.out_channels,
                k: c.kernel,
                s: c.stride,
                w: offset,
                b: offset + w_len,
            });
            offset += w_len + c.out_channels;
            side = out_side;
            channels = c.out_channels;
            if i == 0 && self.pool_after_first {
                if side < 2 {
                    return Err(Error::ShapeMismatch("pooling needs a map at least 2 wide".into()));
                }
                pool = Some(PoolGeom { in_side: side, c: channels, out_side: side / 2 });
                side /= 2;
            }
        }
        let flat = side * side * channels;
        let mut dense = Vec::new();
        let mut inputs = flat;
        for out in self.hidden.into_iter().chain(std::iter::once(self.outputs)) {
            if out == 0 {
                return Err(Error::ShapeMismatch("dense width must be positive".into()));
            }
            dense.push(DenseGeom { inputs, outputs: out, w: offset, b: offset + inputs * out });
            offset += inputs * out + out;
            inputs = out;
        }
        Ok(Plan { convs, pool, dense, n_params: offset })
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.plan()?.n_params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvGeom {
    in_side: usize,
    in_c: usize,
    out_side: usize,
    out_c: usize,
    k: usize,
    s: usize,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PoolGeom {
    in_side: usize,
    c: usize,
    out_side: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct DenseGeom {
    inputs: usize,
    outputs: usize,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Plan {
    convs: Vec<ConvGeom>,
    pool: Option<PoolGeom>,
    dense: Vec<DenseGeom>,
    n_params: usize,
}

/// Network input: a dense HWC tensor, or the set cells of a binary one.
#[derive(Debug, Clone, Copy)]
pub enum Input<'a> {
    Dense(&'a [f64]),
    /// Flat HWC indices of the cells equal to one; every other cell is zero.
    Binary(&'a [u32]),
}

/// Layer activations kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct Activations {
    /// Rectified output of each convolution (before pooling).
    conv_out: Vec<Vec<f64>>,
    pooled: Vec<f64>,
    pool_argmax: Vec<u32>,
    /// Output of each dense layer; the last one is the Q-vector.
    dense_out: Vec<Vec<f64>>,
}

impl Activations {
    pub fn q_values(&self) -> &[f64] {
        self.dense_out.last().map_or(&[], |v| v.as_slice())
    }
}

/// Loss applied to the chosen action's Q-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LossKind {
    Huber { delta: f64 },
    Squared,
}

impl Default for LossKind {
    fn default() -> Self {
        LossKind::Huber { delta: 1.0 }
    }
}

impl LossKind {
    /// Loss and its derivative with respect to the prediction.
    pub fn eval(self, pred: f64, target: f64) -> (f64, f64) {
        let e = pred - target;
        match self {
            LossKind::Squared => (e * e, 2.0 * e),
            LossKind::Huber { delta } => {
                if e.abs() <= delta {
                    (0.5 * e * e, e)
                } else {
                    (delta * (e.abs() - 0.5 * delta), delta * e.signum())
                }
            }
        }
    }
}

/// Weights and biases plus the geometry derived from the spec.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    spec: NetworkSpec,
    plan: Plan,
    params: Vec<f64>,
    /// Per input coordinate, the (kernel offset, output coordinate) pairs of the first conv.
    taps: Vec<Vec<(u16, u16)>>,
}

impl QNetwork {
    pub fn zeros(spec: NetworkSpec) -> Result<QNetwork> {
        let plan = spec.plan()?;
        let params = vec![0.0; plan.n_params];
        Ok(Self::assemble(spec, plan, params))
    }

    /// Uniform fan-in initialisation: rectified layers draw from ±√(6/fan_in),
    /// the output layer from ±1/√fan_in; biases start at zero.
    pub fn initialized(spec: NetworkSpec, seed: u64) -> Result<QNetwork> {
        let mut net = QNetwork::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_dense = net.plan.dense.len();
        for c in net.plan.convs.clone() {
            let bound = (6.0 / (c.k * c.k * c.in_c) as f64).sqrt();
            for w in &mut net.params[c.w..c.b] {
                *w = rng.random_range(-bound..bound);
            }
        }
        for (i, d) in net.plan.dense.clone().into_iter().enumerate() {
            let bound = if i + 1 == n_dense {
                1.0 / (d.inputs as f64).sqrt()
            } else {
                (6.0 / d.inputs as f64).sqrt()
            };
            for w in &mut net.params[d.w..d.b] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn from_params(spec: NetworkSpec, params: Vec<f64>) -> Result<QNetwork> {
        let plan = spec.plan()?;
        if params.len() != plan.n_params {
            return Err(Error::ShapeMismatch(format!("spec needs {} parameters, got {}", plan.n_params, params.len())));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::ShapeMismatch("parameters must be finite".into()));
        }
        Ok(Self::assemble(spec, plan, params))
    }

    fn assemble(spec: NetworkSpec, plan: Plan, params: Vec<f64>) -> QNetwork {
        let taps = match plan.convs.first() {
            Some(c) => (0..c.in_side)
                .map(|y| {
                    (0..c.k)
                        .filter(|&ky| y >= ky && (y - ky) % c.s == 0 && (y - ky) / c.s < c.out_side)
                        .map(|ky| (ky as u16, ((y - ky) / c.s) as u16))
                        .collect()
                })
                .collect(),
            None => Vec::new(),
        };
        QNetwork { spec, plan, params, taps }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Weight and bias slices of layer `index`, convolutions first then dense layers.
    pub fn layer(&self, index: usize) -> (&[f64], &[f64]) {
        let nc = self.plan.convs.len();
        if index < nc {
            let c = self.plan.convs[index];
            (&self.params[c.w..c.b], &self.params[c.b..c.b + c.out_c])
        } else {
            let d = self.plan.dense[index - nc];
            (&self.params[d.w..d.b], &self.params[d.b..d.b + d.outputs])
        }
    }

    pub fn layer_count(&self) -> usize {
        self.plan.convs.len() + self.plan.dense.len()
    }

    fn check_input(&self, input: &Input<'_>) -> Result<()> {
        let n = self.spec.input_len();
        match input {
            Input::Dense(x) if x.len() != n => {
                Err(Error::ShapeMismatch(format!("dense input has {} values, expected {n}", x.len())))
            }
            Input::Binary(idx) if idx.iter().any(|&i| i as usize >= n) => {
                Err(Error::ShapeMismatch(format!("binary input index out of range 0..{n}")))
            }
            _ => Ok(()),
        }
    }

    pub fn forward(&self, input: Input<'_>) -> Result<Vec<f64>> {
        Ok(self.forward_cached(input)?.dense_out.pop().unwrap_or_default())
    }

    /// Q-values for a frame stack, using the binary fast path.
    pub fn forward_stack(&self, stack: &FrameStack) -> Result<Vec<f64>> {
        if stack.size() != self.spec.input_size || self.spec.input_channels != FRAME_COUNT {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} frame stack fed to a {}x{}x{} network",
                stack.size(),
                stack.size(),
                self.spec.input_size,
                self.spec.input_size,
                self.spec.input_channels
            )));
        }
        let mut idx = Vec::new();
        stack.active_indices(&mut idx);
        self.forward(Input::Binary(&idx))
    }

    pub fn forward_cached(&self, input: Input<'_>) -> Result<Activations> {
        self.check_input(&input)?;
        let mut acts = Activations::default();
        let mut current: Vec<f64> = Vec::new();
        for (i, c) in self.plan.convs.iter().enumerate() {
            let mut out = vec![0.0; c.out_side * c.out_side * c.out_c];
            match (i, input) {
                (0, Input::Binary(idx)) => self.conv_binary(c, idx, &mut out),
                (0, Input::Dense(x)) => conv_dense(&self.params, c, x, &mut out),
                _ => conv_dense(&self.params, c, &current, &mut out),
            }
            out.iter_mut().for_each(|v| *v = v.max(0.0));
            current = out.clone();
            acts.conv_out.push(out);
            if i == 0 {
                if let Some(p) = self.plan.pool {
                    let (pooled, arg) = max_pool(&p, &current);
                    current = pooled.clone();
                    acts.pooled = pooled;
                    acts.pool_argmax = arg;
                }
            }
        }
        if self.plan.convs.is_empty() {
            current = match input {
                Input::Dense(x) => x.to_vec(),
                Input::Binary(idx) => {
                    let mut v = vec![0.0; self.spec.input_len()];
                    idx.iter().for_each(|&i| v[i as usize] = 1.0);
                    v
                }
            };
        }
        let n_dense = self.plan.dense.len();
        for (i, d) in self.plan.dense.iter().enumerate() {
            let mut out = self.params[d.b..d.b + d.outputs].to_vec();
            let w = &self.params[d.w..d.b];
            for (j, &x) in current.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let row = &w[j * d.outputs..(j + 1) * d.outputs];
                out.iter_mut().zip(row).for_each(|(o, w)| *o += x * w);
            }
            if i + 1 < n_dense {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            current = out.clone();
            acts.dense_out.push(out);
        }
        Ok(acts)
    }

    fn conv_binary(&self, c: &ConvGeom, idx: &[u32], out: &mut [f64]) {
        for o in out.chunks_exact_mut(c.out_c) {
            o.copy_from_slice(&self.params[c.b..c.b + c.out_c]);
        }
        for &flat in idx {
            let (y, x, ci) = unflatten(flat as usize, c.in_side, c.in_c);
            for &(ky, oy) in &self.taps[y] {
                for &(kx, ox) in &self.taps[x] {
                    let wo = c.w + ((ky as usize * c.k + kx as usize) * c.in_c + ci) * c.out_c;
                    let w = &self.params[wo..wo + c.out_c];
                    let oo = (oy as usize * c.out_side + ox as usize) * c.out_c;
                    out[oo..oo + c.out_c].iter_mut().zip(w).for_each(|(o, w)| *o += w);
                }
            }
        }
    }

    /// Accumulates into `grad` the gradient of `Σ dq·Q` for one sample.
    pub fn backward(&self, input: Input<'_>, acts: &Activations, dq: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let n_dense = self.plan.dense.len();
        let mut delta = dq.to_vec();
        for i in (0..n_dense).rev() {
            let d = self.plan.dense[i];
            let x: &[f64] = if i > 0 {
                &acts.dense_out[i - 1]
            } else if let Some(last) = self.last_conv_output(acts) {
                last
            } else {
                &[]
            };
            let dense_input;
            let x = if x.is_empty() {
                dense_input = match input {
                    Input::Dense(v) => v.to_vec(),
                    Input::Binary(idx) => {
                        let mut v = vec![0.0; self.spec.input_len()];
                        idx.iter().for_each(|&k| v[k as usize] = 1.0);
                        v
                    }
                };
                &dense_input[..]
            } else {
                x
            };
            for (g, dv) in grad[d.b..d.b + d.outputs].iter_mut().zip(&delta) {
                *g += dv;
            }
            let w = &self.params[d.w..d.b];
            let mut dx = vec![0.0; d.inputs];
            for (j, &xv) in x.iter().enumerate() {
                let row = j * d.outputs..(j + 1) * d.outputs;
                if xv != 0.0 {
                    grad[d.w + row.start..d.w + row.end].iter_mut().zip(&delta).for_each(|(g, dv)| *g += xv * dv);
                }
                dx[j] = w[row].iter().zip(&delta).map(|(w, dv)| w * dv).sum();
            }
            // rectifier on every layer feeding this one
            let feeds_from_relu = i > 0 || !self.plan.convs.is_empty();
            if feeds_from_relu {
                dx.iter_mut().zip(x).for_each(|(g, &xv)| {
                    if xv <= 0.0 {
                        *g = 0.0
                    }
                });
            }
            delta = dx;
        }
        if self.plan.convs.len() == 1 {
            if let Some(p) = self.plan.pool {
                delta = unpool(&p, &acts.pool_argmax, &delta);
            }
        }
        for i in (0..self.plan.convs.len()).rev() {
            let c = self.plan.convs[i];
            let need_dx = i > 0;
            if i == 0 {
                match input {
                    Input::Binary(idx) => self.conv_binary_backward(&c, idx, &delta, grad),
                    Input::Dense(x) => {
                        conv_dense_backward(&self.params, &c, x, &delta, grad, None);
                    }
                }
                break;
            }
            let x: &[f64] = if i == 1 && self.plan.pool.is_some() { &acts.pooled } else { &acts.conv_out[i - 1] };
            let mut dx = vec![0.0; x.len()];
            conv_dense_backward(&self.params, &c, x, &delta, grad, need_dx.then_some(&mut dx[..]));
            if i == 1 {
                if let Some(p) = self.plan.pool {
                    dx = unpool(&p, &acts.pool_argmax, &dx);
                }
            }
            let a = &acts.conv_out[i - 1];
            dx.iter_mut().zip(a).for_each(|(g, &av)| {
                if av <= 0.0 {
                    *g = 0.0
                }
            });
            delta = dx;
        }
    }

    fn last_conv_output<'a>(&self, acts: &'a Activations) -> Option<&'a [f64]> {
        let n = self.plan.convs.len();
        if n == 0 {
            None
        } else if n == 1 && self.plan.pool.is_some() {
            Some(&acts.pooled)
        } else {
            Some(&acts.conv_out[n - 1])
        }
    }

    fn conv_binary_backward(&self, c: &ConvGeom, idx: &[u32], dout: &[f64], grad: &mut [f64]) {
        for o in dout.chunks_exact(c.out_c) {
            grad[c.b..c.b + c.out_c].iter_mut().zip(o).for_each(|(g, d)| *g += d);
        }
        for &flat in idx {
            let (y, x, ci) = unflatten(flat as usize, c.in_side, c.in_c);
            for &(ky, oy) in &self.taps[y] {
                for &(kx, ox) in &self.taps[x] {
                    let wo = c.w + ((ky as usize * c.k + kx as usize) * c.in_c + ci) * c.out_c;
                    let oo = (oy as usize * c.out_side + ox as usize) * c.out_c;
                    grad[wo..wo + c.out_c]
                        .iter_mut()
                        .zip(&dout[oo..oo + c.out_c])
                        .for_each(|(g, d)| *g += d);
                }
            }
        }
    }
}

fn unflatten(flat: usize, side: usize, channels: usize) -> (usize, usize, usize) {
    let ci = flat % channels;
    let pix = flat / channels;
    (pix / side, pix % side, ci)
}

fn conv_dense(params: &[f64], c: &ConvGeom, x: &[f64], out: &mut [f64]) {
    let bias = &params[c.b..c.b + c.out_c];
    for oy in 0..c.out_side {
        for ox in 0..c.out_side {
            let oo = (oy * c.out_side + ox) * c.out_c;
            let o = &mut out[oo..oo + c.out_c];
            o.copy_from_slice(bias);
            for ky in 0..c.k {
                for kx in 0..c.k {
                    let xi = ((oy * c.s + ky) * c.in_side + ox * c.s + kx) * c.in_c;
                    for ci in 0..c.in_c {
                        let v = x[xi + ci];
                        if v == 0.0 {
                            continue;
                        }
                        let wo = c.w + ((ky * c.k + kx) * c.in_c + ci) * c.out_c;
                        o.iter_mut().zip(&params[wo..wo + c.out_c]).for_each(|(o, w)| *o += v * w);
                    }
                }
            }
        }
    }
}

fn conv_dense_backward(
    params: &[f64],
    c: &ConvGeom,
    x: &[f64],
    dout: &[f64],
    grad: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    for oy in 0..c.out_side {
        for ox in 0..c.out_side {
            let oo = (oy * c.out_side + ox) * c.out_c;
            let d = &dout[oo..oo + c.out_c];
            if d.iter().all(|v| *v == 0.0) {
                continue;
            }
            grad[c.b..c.b + c.out_c].iter_mut().zip(d).for_each(|(g, dv)| *g += dv);
            for ky in 0..c.k {
                for kx in 0..c.k {
                    let xi = ((oy * c.s + ky) * c.in_side + ox * c.s + kx) * c.in_c;
                    for ci in 0..c.in_c {
                        let wo = c.w + ((ky * c.k + kx) * c.in_c + ci) * c.out_c;
                        let v = x[xi + ci];
                        if v != 0.0 {
                            grad[wo..wo + c.out_c].iter_mut().zip(d).for_each(|(g, dv)| *g += v * dv);
                        }
                        if let Some(dx) = dx.as_deref_mut() {
                            dx[xi + ci] += params[wo..wo + c.out_c].iter().zip(d).map(|(w, dv)| w * dv).sum::<f64>();
                        }
                    }
                }
            }
        }
    }
}

/// Routes pooled gradients back to the element that won each window.
fn unpool(p: &PoolGeom, argmax: &[u32], d: &[f64]) -> Vec<f64> {
    let mut up = vec![0.0; p.in_side * p.in_side * p.c];
    for (k, &src) in argmax.iter().enumerate() {
        up[src as usize] += d[k];
    }
    up
}

fn max_pool(p: &PoolGeom, x: &[f64]) -> (Vec<f64>, Vec<u32>) {
    let mut out = vec![0.0; p.out_side * p.out_side * p.c];
    let mut arg = vec![0u32; out.len()];
    for oy in 0..p.out_side {
        for ox in 0..p.out_side {
            for ch in 0..p.c {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = 0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let i = ((2 * oy + dy) * p.in_side + 2 * ox + dx) * p.c + ch;
                        if x[i] > best {
                            best = x[i];
                            best_i = i;
                        }
                    }
                }
                let o = (oy * p.out_side + ox) * p.c + ch;
                out[o] = best;
                arg[o] = best_i as u32;
            }
        }
    }
    (out, arg)
}

/// One minibatch sample: network input and the action whose Q-value is regressed.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub input: Input<'a>,
    pub action: usize,
}

/// Mean loss over the minibatch and its exact gradient with respect to every parameter.
pub fn gradients(net: &QNetwork, batch: &[Sample<'_>], targets: &[f64], loss: LossKind) -> Result<(f64, Vec<f64>)> {
    if batch.len() != targets.len() || batch.is_empty() {
        return Err(Error::ShapeMismatch(format!("{} samples with {} targets", batch.len(), targets.len())));
    }
    let mut grad = vec![0.0; net.params.len()];
    let mut total = 0.0;
    let scale = 1.0 / batch.len() as f64;
    let mut dq = vec![0.0; net.spec.outputs];
    for (s, &t) in batch.iter().zip(targets) {
        if s.action >= net.spec.outputs {
            return Err(Error::ShapeMismatch(format!("action {} outside {} outputs", s.action, net.spec.outputs)));
        }
        let acts = net.forward_cached(s.input)?;
        let (l, dl) = loss.eval(acts.q_values()[s.action], t);
        total += l;
        dq.iter_mut().for_each(|v| *v = 0.0);
        dq[s.action] = dl * scale;
        net.backward(s.input, &acts, &dq, &mut grad);
    }
    let mean = total * scale;
    if !mean.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss { step: 0, detail: format!("minibatch loss {mean}") });
    }
    Ok((mean, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_of_standard_specs() {
        let big = NetworkSpec::large().plan().unwrap();
        assert_eq!(big.convs[0].out_side, 19);
        assert_eq!(big.pool.unwrap().out_side, 9);
        assert_eq!(big.convs[1].out_side, 3);
        assert_eq!(big.convs[2].out_side, 1);
        let small = NetworkSpec::small().plan().unwrap();
        assert_eq!(small.convs[0].out_side, 10);
        assert_eq!(small.convs[1].out_side, 4);
        assert_eq!(small.convs[2].out_side, 2);
        assert_eq!(small.dense[0].inputs, 2 * 2 * 32);
    }

    #[test]
    fn kernel_larger_than_map_rejected() {
        let mut s = NetworkSpec::small();
        s.convs.push(ConvSpec { kernel: 5, stride: 1, out_channels: 4 });
        assert!(matches!(QNetwork::zeros(s), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = QNetwork::zeros(NetworkSpec::small()).unwrap();
        let x = vec![1.0; NetworkSpec::small().input_len()];
        assert_eq!(net.forward(Input::Dense(&x)).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn identity_one_by_one_conv() {
        let spec = NetworkSpec {
            input_size: 3,
            input_channels: 1,
            convs: vec![ConvSpec { kernel: 1, stride: 1, out_channels: 1 }],
            pool_after_first: false,
            hidden: None,
            outputs: 9,
        };
        let mut net = QNetwork::zeros(spec).unwrap();
        // conv weight 1, then a dense identity readout
        net.params[0] = 1.0;
        let d = net.plan.dense[0];
        for i in 0..9 {
            net.params[d.w + i * 9 + i] = 1.0;
        }
        let x = [0.5, 1.0, 2.0, 0.0, 3.0, 0.25, 4.0, 0.0, 1.5];
        assert_eq!(net.forward(Input::Dense(&x)).unwrap(), x.to_vec());
        let acts = net.forward_cached(Input::Dense(&x)).unwrap();
        assert_eq!(acts.conv_out[0], x.to_vec());
    }

    #[test]
    fn binary_path_matches_dense_path() {
        for spec in [NetworkSpec::small(), NetworkSpec::large()] {
            let net = QNetwork::initialized(spec.clone(), 7).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut dense = vec![0.0; spec.input_len()];
            let mut idx = Vec::new();
            for (i, v) in dense.iter_mut().enumerate() {
                if rng.random_bool(0.2) {
                    *v = 1.0;
                    idx.push(i as u32);
                }
            }
            let a = net.forward(Input::Dense(&dense)).unwrap();
            let b = net.forward(Input::Binary(&idx)).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
            let acts_d = net.forward_cached(Input::Dense(&dense)).unwrap();
            let acts_b = net.forward_cached(Input::Binary(&idx)).unwrap();
            let dq = [0.3, -1.0, 0.0, 2.0, 0.5];
            let mut gd = vec![0.0; net.params.len()];
            let mut gb = vec![0.0; net.params.len()];
            net.backward(Input::Dense(&dense), &acts_d, &dq, &mut gd);
            net.backward(Input::Binary(&idx), &acts_b, &dq, &mut gb);
            for (x, y) in gd.iter().zip(&gb) {
                assert!((x - y).abs() < 1e-10, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn zero_loss_zero_gradient() {
        let net = QNetwork::initialized(NetworkSpec::small(), 1).unwrap();
        let x = vec![1.0; NetworkSpec::small().input_len()];
        let q = net.forward(Input::Dense(&x)).unwrap();
        let batch = [Sample { input: Input::Dense(&x), action: 3 }];
        let (loss, g) = gradients(&net, &batch, &[q[3]], LossKind::default()).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_dense_layer_squared_loss() {
        let spec = NetworkSpec {
            input_size: 2,
            input_channels: 1,
            convs: vec![],
            pool_after_first: false,
            hidden: None,
            outputs: 2,
        };
        let params = vec![0.5, -1.0, 2.0, 0.25, 1.0, -0.5, 0.0, 3.0, 0.1, 0.2];
        let net = QNetwork::from_params(spec, params).unwrap();
        let x = [1.0, 2.0, -1.0, 0.5];
        let pred = net.forward(Input::Dense(&x)).unwrap()[1];
        let target = 4.0;
        let (_, g) = gradients(&net, &[Sample { input: Input::Dense(&x), action: 1 }], &[target], LossKind::Squared).unwrap();
        for j in 0..4 {
            assert!((g[j * 2 + 1] - 2.0 * (pred - target) * x[j]).abs() < 1e-12);
            assert_eq!(g[j * 2], 0.0);
        }
        assert!((g[9] - 2.0 * (pred - target)).abs() < 1e-12);
    }

    #[test]
    fn huber_branches() {
        let h = LossKind::Huber { delta: 1.0 };
        assert_eq!(h.eval(0.5, 0.0), (0.125, 0.5));
        assert_eq!(h.eval(-3.0, 0.0), (2.5, -1.0));
    }
}
