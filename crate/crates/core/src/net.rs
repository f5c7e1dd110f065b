//! Dense feedforward networks with a flat parameter vector.
//!
//! Parameters are stored layer by layer: for each affine map `W·a + b` the
//! weight matrix (row-major, `d_out × d_in`) is followed by the bias vector.
//! `tanh` is applied after every layer except the last.
//!
//! Three evaluation routes are provided:
//!
//! - [`Mlp::forward_jet`] pushes spatial [`Jet2`]s through the network.
//! - [`Mlp::forward_with_param_tangent`] additionally differentiates the output
//!   jet with respect to one parameter using a [`Dual`] channel.
//! - [`JetTape`] records a multi-direction forward pass and back-propagates a
//!   linear functional of the output jets to all parameters at once. This is
//!   the batched equivalent of the one-parameter tangent and is what training
//!   uses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jet::{Dual, Jet2, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("a network needs at least an input and an output layer, got {0} layer(s)")]
    TooFewLayers(usize),
    #[error("layer {0} has zero width")]
    ZeroWidth(usize),
    #[error("expected {expected} input(s), got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("scalar output required, network has {0} outputs")]
    NonScalarOutput(usize),
    #[error("parameter index {index} out of range for {len} parameters")]
    ParamIndex { index: usize, len: usize },
    #[error("parameter vector has length {got}, network needs {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error("could not parse parameter on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// `W ~ U[-sqrt(6/(fan_in+fan_out)), +sqrt(...)]`, `b = 0`.
    GlorotUniform,
    /// `W ~ U[-1, 1]`, `b = 0`.
    UniformWeightsZeroBias,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InitScheme {
    pub kind: InitKind,
    pub seed: u64,
}

impl InitScheme {
    pub fn new(kind: InitKind, seed: u64) -> Self {
        Self { kind, seed }
    }
}

/// Number of parameters of a dense network with the given layer widths.
pub fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes
        .windows(2)
        .map(|w| w[0] * w[1] + w[1])
        .sum()
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<(), NetError> {
    if layer_sizes.len() < 2 {
        return Err(NetError::TooFewLayers(layer_sizes.len()));
    }
    if let Some(i) = layer_sizes.iter().position(|&d| d == 0) {
        return Err(NetError::ZeroWidth(i));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

impl Mlp {
    pub fn new(layer_sizes: &[usize], init: InitScheme) -> Result<Self, NetError> {
        validate_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(init.seed);
        let mut params = Vec::with_capacity(param_count(layer_sizes));
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = match init.kind {
                InitKind::GlorotUniform => (6.0 / (fan_in + fan_out) as f64).sqrt(),
                InitKind::UniformWeightsZeroBias => 1.0,
            };
            params.extend((0..fan_in * fan_out).map(|_| rng.gen_range(-bound..=bound)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activation: Activation::Tanh,
            params,
        })
    }

    pub fn from_params(layer_sizes: &[usize], params: Vec<f64>) -> Result<Self, NetError> {
        validate_sizes(layer_sizes)?;
        let expected = param_count(layer_sizes);
        if params.len() != expected {
            return Err(NetError::ParamLength {
                expected,
                got: params.len(),
            });
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activation: Activation::Tanh,
            params,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    fn check_scalar_io(&self, got: usize) -> Result<(), NetError> {
        if got != self.input_dim() {
            return Err(NetError::DimensionMismatch {
                expected: self.input_dim(),
                got,
            });
        }
        if self.output_dim() != 1 {
            return Err(NetError::NonScalarOutput(self.output_dim()));
        }
        Ok(())
    }

    /// Plain value evaluation.
    pub fn forward(&self, x: &[f64]) -> Result<f64, NetError> {
        let input: Vec<Jet2> = x.iter().map(|&v| Jet2::constant(v)).collect();
        Ok(self.forward_jet(&input)?.val)
    }

    pub fn forward_jet(&self, input: &[Jet2]) -> Result<Jet2, NetError> {
        self.check_scalar_io(input.len())?;
        Ok(forward_jet_generic(&self.layer_sizes, &self.params, input))
    }

    /// Derivative of the output jet `(u, u', u'')` with respect to parameter
    /// `param_index`, by forward-mode differentiation in that parameter alone.
    pub fn forward_with_param_tangent(
        &self,
        input: &[Jet2],
        param_index: usize,
    ) -> Result<Jet2, NetError> {
        self.check_scalar_io(input.len())?;
        if param_index >= self.params.len() {
            return Err(NetError::ParamIndex {
                index: param_index,
                len: self.params.len(),
            });
        }
        let params = dual_params(&self.params, param_index);
        let input: Vec<Jet2<Dual>> = input.iter().map(|j| lift_jet(*j)).collect();
        let out = forward_jet_generic(&self.layer_sizes, &params, &input);
        Ok(Jet2::new(out.val.eps, out.d1.eps, out.d2.eps))
    }

    /// Whitespace-separated text form of the parameter vector, one value per line.
    pub fn params_to_text(&self) -> String {
        let mut s = String::with_capacity(self.params.len() * 24);
        for p in &self.params {
            s.push_str(&format!("{p:e}\n"));
        }
        s
    }

    pub fn params_from_text(layer_sizes: &[usize], text: &str) -> Result<Self, NetError> {
        let params = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                l.trim().parse::<f64>().map_err(|e| NetError::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_params(layer_sizes, params)
    }
}

/// Lifts an `f64` parameter vector to duals with a unit tangent at `index`.
pub fn dual_params(params: &[f64], index: usize) -> Vec<Dual> {
    params
        .iter()
        .enumerate()
        .map(|(i, &p)| Dual::new(p, if i == index { 1.0 } else { 0.0 }))
        .collect()
}

pub fn lift_jet(j: Jet2) -> Jet2<Dual> {
    Jet2::new(
        Dual::constant(j.val),
        Dual::constant(j.d1),
        Dual::constant(j.d2),
    )
}

/// Jet evaluation with parameters of any scalar type. The caller guarantees
/// `params.len() == param_count(layer_sizes)`, `input.len() == layer_sizes[0]`
/// and a scalar output layer.
pub fn forward_jet_generic<S: Scalar>(
    layer_sizes: &[usize],
    params: &[S],
    input: &[Jet2<S>],
) -> Jet2<S> {
    let n_layers = layer_sizes.len() - 1;
    let mut act: Vec<Jet2<S>> = input.to_vec();
    let mut off = 0;
    for (l, w) in layer_sizes.windows(2).enumerate() {
        let (n_in, n_out) = (w[0], w[1]);
        let weights = &params[off..off + n_in * n_out];
        let bias = &params[off + n_in * n_out..off + n_in * n_out + n_out];
        off += n_in * n_out + n_out;
        let mut next = Vec::with_capacity(n_out);
        for i in 0..n_out {
            let mut z = Jet2::constant(bias[i]);
            for (j, a) in act.iter().enumerate() {
                z = z + a.scale(weights[i * n_in + j]);
            }
            next.push(if l + 1 < n_layers { z.tanh() } else { z });
        }
        act = next;
    }
    act[0]
}

/// Channels per unit in [`JetTape`]: value, `d1` per direction, `d2` per direction.
const CH: usize = 5;

#[inline]
fn d1c(ax: usize) -> usize {
    1 + ax
}

#[inline]
fn d2c(ax: usize) -> usize {
    3 + ax
}

/// Recorded multi-direction forward pass through one network.
///
/// All directions share the value channel; each direction `ax` has its own
/// first and second derivative channels. Every unit stores its channels
/// contiguously; unused direction channels stay zero. Buffers are reused
/// between calls.
#[derive(Clone, Debug, Default)]
pub struct JetTape {
    axes: usize,
    /// Start of each layer boundary in `act`/`pre`.
    offsets: Vec<usize>,
    /// Post-activation channels (boundary 0 is the network input).
    act: Vec<[f64; CH]>,
    /// Pre-activation channels.
    pre: Vec<[f64; CH]>,
    g: Vec<[f64; CH]>,
    h: Vec<[f64; CH]>,
}

/// Output jet of a multi-direction pass: a shared value and per-direction `(d1, d2)`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct AxisJets {
    pub val: f64,
    pub d1: [f64; 2],
    pub d2: [f64; 2],
}

impl JetTape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Forward pass for `inputs[ax]`, the input jets seeded along direction `ax`
    /// (at most two directions). Value parts are taken from direction 0.
    pub fn forward(&mut self, net: &Mlp, inputs: &[&[Jet2]]) -> AxisJets {
        let axes = inputs.len();
        debug_assert!((1..=2).contains(&axes));
        debug_assert_eq!(net.output_dim(), 1);
        self.axes = axes;
        let sizes = &net.layer_sizes;
        let n_layers = sizes.len() - 1;
        self.offsets.clear();
        let mut total = 0;
        for &w in sizes {
            self.offsets.push(total);
            total += w;
        }
        self.act.resize(total, [0.0; CH]);
        self.pre.resize(total, [0.0; CH]);

        for j in 0..sizes[0] {
            let unit = &mut self.act[j];
            *unit = [0.0; CH];
            unit[0] = inputs[0][j].val;
            for (ax, inp) in inputs.iter().enumerate() {
                unit[d1c(ax)] = inp[j].d1;
                unit[d2c(ax)] = inp[j].d2;
            }
        }

        let params = &net.params;
        let mut off = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let weights = &params[off..off + n_in * n_out];
            let bias = &params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let (o_in, o_out) = (self.offsets[l], self.offsets[l + 1]);
            let (lo, hi) = self.act.split_at_mut(o_out);
            let a_in = &lo[o_in..o_in + n_in];
            let a_out = &mut hi[..n_out];
            let z_out = &mut self.pre[o_out..o_out + n_out];
            let last = l + 1 == n_layers;
            for i in 0..n_out {
                let row = &weights[i * n_in..(i + 1) * n_in];
                let mut z = [0.0; CH];
                for (w, a) in row.iter().zip(a_in) {
                    for c in 0..CH {
                        z[c] += w * a[c];
                    }
                }
                z[0] += bias[i];
                z_out[i] = z;
                if last {
                    a_out[i] = z;
                } else {
                    let t = z[0].tanh();
                    let s = 1.0 - t * t;
                    let mut a = [0.0; CH];
                    a[0] = t;
                    for ax in 0..2 {
                        let z1 = z[d1c(ax)];
                        a[d1c(ax)] = s * z1;
                        a[d2c(ax)] = s * z[d2c(ax)] - 2.0 * t * s * z1 * z1;
                    }
                    a_out[i] = a;
                }
            }
        }

        let o = self.act[self.offsets[n_layers]];
        let mut out = AxisJets {
            val: o[0],
            ..Default::default()
        };
        for ax in 0..axes {
            out.d1[ax] = o[d1c(ax)];
            out.d2[ax] = o[d2c(ax)];
        }
        out
    }

    /// Accumulates `scale · ∂φ/∂θ` into `grad`, where
    /// `φ = seed.val·u + Σ_ax (seed.d1[ax]·u'_ax + seed.d2[ax]·u''_ax)`
    /// is a linear functional of the output jets of the last [`forward`](Self::forward).
    pub fn backward(&mut self, net: &Mlp, seed: &AxisJets, scale: f64, grad: &mut [f64]) {
        let sizes = &net.layer_sizes;
        let n_layers = sizes.len() - 1;
        debug_assert_eq!(grad.len(), net.params.len());

        // Adjoint of the last pre-activation (identity output layer).
        let mut g0 = [0.0; CH];
        g0[0] = seed.val * scale;
        for ax in 0..self.axes {
            g0[d1c(ax)] = seed.d1[ax] * scale;
            g0[d2c(ax)] = seed.d2[ax] * scale;
        }
        self.g.clear();
        self.g.push(g0);

        let mut off_end = net.params.len();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let off = off_end - (n_in * n_out + n_out);
            let weights = &net.params[off..off + n_in * n_out];
            let a_in = &self.act[self.offsets[l]..self.offsets[l] + n_in];
            {
                let (gw, gb) = grad[off..off_end].split_at_mut(n_in * n_out);
                for (i, g) in self.g.iter().enumerate() {
                    gb[i] += g[0];
                    for (w, a) in gw[i * n_in..(i + 1) * n_in].iter_mut().zip(a_in) {
                        let mut acc = 0.0;
                        for c in 0..CH {
                            acc += g[c] * a[c];
                        }
                        *w += acc;
                    }
                }
            }
            off_end = off;
            if l == 0 {
                break;
            }

            // Adjoint of the activations feeding layer l: Wᵀ·g.
            self.h.clear();
            self.h.resize(n_in, [0.0; CH]);
            for (i, g) in self.g.iter().enumerate() {
                for (w, h) in weights[i * n_in..(i + 1) * n_in].iter().zip(self.h.iter_mut()) {
                    for c in 0..CH {
                        h[c] += w * g[c];
                    }
                }
            }

            // Through the tanh jet rule to the pre-activation adjoint of layer l.
            let z_in = &self.pre[self.offsets[l]..self.offsets[l] + n_in];
            self.g.clear();
            for ((h, a), z) in self.h.iter().zip(a_in).zip(z_in) {
                let t = a[0];
                let s = 1.0 - t * t;
                let ts = t * s;
                let dts = s * s - 2.0 * t * ts;
                let mut g = [0.0; CH];
                let mut gv = h[0] * s;
                for ax in 0..2 {
                    let (z1, z2) = (z[d1c(ax)], z[d2c(ax)]);
                    let (h1, h2) = (h[d1c(ax)], h[d2c(ax)]);
                    g[d2c(ax)] = h2 * s;
                    g[d1c(ax)] = h1 * s - 4.0 * ts * z1 * h2;
                    gv += -2.0 * ts * (h1 * z1 + h2 * z2) - 2.0 * h2 * z1 * z1 * dts;
                }
                g[0] = gv;
                self.g.push(g);
            }
        }
    }
}
