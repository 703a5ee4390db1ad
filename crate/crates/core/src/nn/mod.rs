//! Dense feed-forward networks with hand-written reverse-mode gradients.
//!
//! A [`Network`] is an ordered list of dense layers, each `act(W x + b)`,
//! optionally residual (`act(W x + b) + x`). All parameters live in one flat
//! [`WeightVector`]; layer `l` owns a row-major `out x in` matrix followed by
//! its `out` biases.
//!
//! Batched evaluation works on row-major `(batch, width)` matrices and is
//! split into fixed-size chunks (see [`crate::exec`]) so that gradient sums
//! are reduced in the same order regardless of worker count.

mod fastmath;
mod init;
pub mod gradcheck;
pub mod io;
mod optim;

pub use init::{init_weights, init_weights_scaled};
pub use optim::{polyak_average, OptimizerConfig, OptimizerKind, OptimizerState};

use ndarray::{linalg::general_mat_mul, s, Array1, Array2, ArrayView2, ArrayViewMut2, Axis};
use serde::{Deserialize, Serialize};
use std::ops::{Deref, DerefMut};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::exec::{map_chunks, ExecMode, CHUNK_ROWS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    fn apply_in_place(self, z: &mut Array2<f64>) {
        match self {
            Activation::Tanh => match z.as_slice_mut() {
                Some(v) => fastmath::tanh_in_place(v),
                None => z.mapv_inplace(f64::tanh),
            },
            _ => z.mapv_inplace(|v| self.apply(v)),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_width: usize,
    pub out_width: usize,
    pub activation: Activation,
    #[serde(default)]
    pub residual: bool,
}

impl LayerSpec {
    pub fn dense(in_width: usize, out_width: usize, activation: Activation) -> Self {
        Self {
            in_width,
            out_width,
            activation,
            residual: false,
        }
    }

    pub fn residual(width: usize, activation: Activation) -> Self {
        Self {
            in_width: width,
            out_width: width,
            activation,
            residual: true,
        }
    }

    pub fn param_count(&self) -> usize {
        self.in_width * self.out_width + self.out_width
    }
}

/// Builds `input -> hidden x depth -> output` with the given hidden
/// activation and a linear output layer.
pub fn mlp_spec(input: usize, hidden: usize, depth: usize, output: usize, act: Activation) -> Vec<LayerSpec> {
    let mut layers = Vec::with_capacity(depth + 1);
    let mut width = input;
    for _ in 0..depth {
        layers.push(LayerSpec::dense(width, hidden, act));
        width = hidden;
    }
    layers.push(LayerSpec::dense(width, output, Activation::Identity));
    layers
}

/// Checks widths chain and residual layers are square. Returns total
/// parameter count.
pub fn validate_topology(layers: &[LayerSpec]) -> Result<usize> {
    if layers.is_empty() {
        return Err(Error::Topology("network has no layers".into()));
    }
    let mut total = 0;
    for (i, l) in layers.iter().enumerate() {
        if l.in_width == 0 || l.out_width == 0 {
            return Err(Error::Topology(format!("layer {i} has zero width")));
        }
        if l.residual && l.in_width != l.out_width {
            return Err(Error::Topology(format!(
                "residual layer {i} must be square, got {} -> {}",
                l.in_width, l.out_width
            )));
        }
        if i > 0 && layers[i - 1].out_width != l.in_width {
            return Err(Error::Topology(format!(
                "layer {} outputs {} but layer {i} expects {}",
                i - 1,
                layers[i - 1].out_width,
                l.in_width
            )));
        }
        total += l.param_count();
    }
    Ok(total)
}

/// Flat parameter vector of a network.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(pub Vec<f64>);

impl WeightVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for WeightVector {
    type Target = Vec<f64>;
    fn deref(&self) -> &Vec<f64> {
        &self.0
    }
}

impl DerefMut for WeightVector {
    fn deref_mut(&mut self) -> &mut Vec<f64> {
        &mut self.0
    }
}

impl From<Vec<f64>> for WeightVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Per-output `[lower, upper]` box the network output is squashed into via
/// `center + half_width * tanh(z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl OutputBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim("output bounds", lower.len(), upper.len())?;
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::Topology("output bounds need finite lower < upper".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn symmetric(limit: f64, dim: usize) -> Result<Self> {
        Self::new(vec![-limit; dim], vec![limit; dim])
    }

    #[inline]
    fn center(&self, j: usize) -> f64 {
        0.5 * (self.lower[j] + self.upper[j])
    }

    #[inline]
    fn half_width(&self, j: usize) -> f64 {
        0.5 * (self.upper[j] - self.lower[j])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<LayerSpec>,
    weights: WeightVector,
    output_bounds: Option<OutputBounds>,
    offsets: Vec<usize>,
}

/// Activations cached by a batched forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation `W x + b` of each layer.
    pre: Vec<Array2<f64>>,
    /// Post-activation of each layer, before the residual add.
    act: Vec<Array2<f64>>,
}

impl Network {
    pub fn new(layers: Vec<LayerSpec>, weights: WeightVector, output_bounds: Option<OutputBounds>) -> Result<Self> {
        let count = validate_topology(&layers)?;
        check_dim("weight vector", count, weights.len())?;
        if !weights.is_finite() {
            return Err(Error::NonFinite("network weights".into()));
        }
        if let Some(b) = &output_bounds {
            check_dim("output bounds", layers.last().unwrap().out_width, b.lower.len())?;
        }
        let mut offsets = Vec::with_capacity(layers.len());
        let mut off = 0;
        for l in &layers {
            offsets.push(off);
            off += l.param_count();
        }
        Ok(Self {
            layers,
            weights,
            output_bounds,
            offsets,
        })
    }

    /// Network with freshly initialized weights.
    pub fn initialized(layers: Vec<LayerSpec>, seed: u64, output_bounds: Option<OutputBounds>) -> Result<Self> {
        let w = init_weights(&layers, seed)?;
        Self::new(layers, w, output_bounds)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn output_bounds(&self) -> Option<&OutputBounds> {
        self.output_bounds.as_ref()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_width
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_width
    }

    pub fn param_count(&self) -> usize {
        self.weights.len()
    }

    pub fn set_weights(&mut self, w: WeightVector) -> Result<()> {
        check_dim("weight vector", self.weights.len(), w.len())?;
        self.weights = w;
        Ok(())
    }

    /// Same topology with different weights.
    pub fn with_weights(&self, w: WeightVector) -> Result<Self> {
        let mut n = self.clone();
        n.set_weights(w)?;
        Ok(n)
    }

    fn layer_params(&self, l: usize) -> (ArrayView2<'_, f64>, &[f64]) {
        let spec = &self.layers[l];
        let off = self.offsets[l];
        let nw = spec.in_width * spec.out_width;
        let w = ArrayView2::from_shape((spec.out_width, spec.in_width), &self.weights[off..off + nw]).unwrap();
        let b = &self.weights[off + nw..off + nw + spec.out_width];
        (w, b)
    }

    /// Single-sample evaluation.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("network input", self.input_dim(), x.len())?;
        check_finite("network input", x)?;
        let xs = ArrayView2::from_shape((1, x.len()), x).unwrap();
        let (out, _) = self.forward_tape(xs);
        Ok(out.into_raw_vec_and_offset().0)
    }

    /// Evaluates every row of `xs`; row order is preserved.
    pub fn forward_batch(&self, mode: ExecMode, xs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_dim("network input", self.input_dim(), xs.ncols())?;
        if xs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input batch".into()));
        }
        Ok(self.forward_batch_unchecked(mode, xs))
    }

    pub(crate) fn forward_batch_unchecked(&self, mode: ExecMode, xs: ArrayView2<'_, f64>) -> Array2<f64> {
        let n = xs.nrows();
        if n == 0 {
            return Array2::zeros((0, self.output_dim()));
        }
        let parts = map_chunks(mode, n, CHUNK_ROWS, |a, b| self.forward_plain(xs.slice(s![a..b, ..])));
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        ndarray::concatenate(Axis(0), &views).unwrap()
    }

    /// Forward pass without recording a tape.
    pub fn forward_plain(&self, xs: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut h = xs.to_owned();
        for (l, spec) in self.layers.iter().enumerate() {
            let (w, b) = self.layer_params(l);
            let mut z = affine(h.view(), w, b);
            spec.activation.apply_in_place(&mut z);
            if spec.residual {
                z += &h;
            }
            h = z;
        }
        self.apply_bounds(&mut h);
        h
    }

    /// Forward pass recording everything needed for [`Network::backward`].
    pub fn forward_tape(&self, xs: ArrayView2<'_, f64>) -> (Array2<f64>, Tape) {
        let nl = self.layers.len();
        let mut tape = Tape {
            inputs: Vec::with_capacity(nl),
            pre: Vec::with_capacity(nl),
            act: Vec::with_capacity(nl),
        };
        let mut h = xs.to_owned();
        for (l, spec) in self.layers.iter().enumerate() {
            let (w, b) = self.layer_params(l);
            let z = affine(h.view(), w, b);
            let mut a = z.clone();
            spec.activation.apply_in_place(&mut a);
            let mut next = a.clone();
            if spec.residual {
                next += &h;
            }
            tape.inputs.push(h);
            tape.pre.push(z);
            tape.act.push(a);
            h = next;
        }
        self.apply_bounds(&mut h);
        (h, tape)
    }

    fn apply_bounds(&self, h: &mut Array2<f64>) {
        if let Some(bounds) = &self.output_bounds {
            for mut row in h.rows_mut() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = bounds.center(j) + bounds.half_width(j) * v.tanh();
                }
            }
        }
    }

    /// Reverse pass. `d_out` is the cotangent of the (bounded) output for each
    /// row. Returns the input cotangent; when `grad` is given, the weight
    /// gradient summed over rows is accumulated into it.
    pub fn backward(&self, tape: &Tape, d_out: ArrayView2<'_, f64>, mut grad: Option<&mut [f64]>) -> Array2<f64> {
        let nl = self.layers.len();
        let mut delta = d_out.to_owned();
        if let Some(bounds) = &self.output_bounds {
            // Raw output of the last layer (before squashing).
            let last = &tape.act[nl - 1];
            let raw_last: Array2<f64> = if self.layers[nl - 1].residual {
                last + &tape.inputs[nl - 1]
            } else {
                last.clone()
            };
            for (mut drow, rrow) in delta.rows_mut().into_iter().zip(raw_last.rows()) {
                for (j, (d, r)) in drow.iter_mut().zip(rrow.iter()).enumerate() {
                    let t = r.tanh();
                    *d *= bounds.half_width(j) * (1.0 - t * t);
                }
            }
        }
        for l in (0..nl).rev() {
            let spec = &self.layers[l];
            let (w, _) = self.layer_params(l);
            // d(pre) = delta * act'(pre)
            let mut dz = delta.clone();
            ndarray::Zip::from(&mut dz)
                .and(&tape.pre[l])
                .and(&tape.act[l])
                .for_each(|d, &z, &a| *d *= spec.activation.derivative(z, a));
            if let Some(g) = grad.as_deref_mut() {
                let off = self.offsets[l];
                let nw = spec.in_width * spec.out_width;
                let mut gw = ArrayViewMut2::from_shape((spec.out_width, spec.in_width), &mut g[off..off + nw]).unwrap();
                general_mat_mul(1.0, &dz.t(), &tape.inputs[l], 1.0, &mut gw);
                let gb = &mut g[off + nw..off + nw + spec.out_width];
                for row in dz.rows() {
                    for (acc, v) in gb.iter_mut().zip(row.iter()) {
                        *acc += v;
                    }
                }
            }
            let mut d_in = dz.dot(&w);
            if spec.residual {
                d_in += &delta;
            }
            delta = d_in;
        }
        delta
    }

    /// Gradient of `<upstream, forward(x)>` with respect to all weights.
    pub fn weight_gradient(&self, x: &[f64], upstream: &[f64]) -> Result<WeightVector> {
        check_dim("network input", self.input_dim(), x.len())?;
        check_dim("output cotangent", self.output_dim(), upstream.len())?;
        check_finite("network input", x)?;
        let xs = ArrayView2::from_shape((1, x.len()), x).unwrap();
        let us = ArrayView2::from_shape((1, upstream.len()), upstream).unwrap();
        let (_, tape) = self.forward_tape(xs);
        let mut g = vec![0.0; self.param_count()];
        self.backward(&tape, us, Some(&mut g));
        Ok(WeightVector(g))
    }

    /// Gradient of `<upstream, forward(x)>` with respect to `x`.
    pub fn input_gradient(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        check_dim("network input", self.input_dim(), x.len())?;
        check_dim("output cotangent", self.output_dim(), upstream.len())?;
        check_finite("network input", x)?;
        let xs = ArrayView2::from_shape((1, x.len()), x).unwrap();
        let us = ArrayView2::from_shape((1, upstream.len()), upstream).unwrap();
        let (_, tape) = self.forward_tape(xs);
        Ok(self.backward(&tape, us, None).into_raw_vec_and_offset().0)
    }

    /// Weight gradient of `sum_i <upstream_i, forward(x_i)>` over a batch.
    pub fn weight_gradient_batch(
        &self,
        mode: ExecMode,
        xs: ArrayView2<'_, f64>,
        upstream: ArrayView2<'_, f64>,
    ) -> Result<WeightVector> {
        check_dim("network input", self.input_dim(), xs.ncols())?;
        check_dim("output cotangent", self.output_dim(), upstream.ncols())?;
        check_dim("batch rows", xs.nrows(), upstream.nrows())?;
        let np = self.param_count();
        let parts = map_chunks(mode, xs.nrows(), CHUNK_ROWS, |a, b| {
            let (_, tape) = self.forward_tape(xs.slice(s![a..b, ..]));
            let mut g = vec![0.0; np];
            self.backward(&tape, upstream.slice(s![a..b, ..]), Some(&mut g));
            g
        });
        Ok(WeightVector(sum_in_order(np, parts)))
    }
}

/// `x W^T + b` for a row batch `x`.
fn affine(x: ArrayView2<'_, f64>, w: ArrayView2<'_, f64>, b: &[f64]) -> Array2<f64> {
    let bias = Array1::from(b.to_vec());
    let mut z = Array2::from_shape_fn((x.nrows(), w.nrows()), |(_, j)| bias[j]);
    general_mat_mul(1.0, &x, &w.t(), 1.0, &mut z);
    z
}

/// Sums per-chunk vectors in chunk order.
pub(crate) fn sum_in_order(len: usize, parts: Vec<Vec<f64>>) -> Vec<f64> {
    let mut acc = vec![0.0; len];
    for p in parts {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn identity_net(n: usize) -> Network {
        let spec = vec![LayerSpec::dense(n, n, Activation::Identity)];
        let mut w = vec![0.0; n * n + n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        Network::new(spec, w.into(), None).unwrap()
    }

    #[test]
    fn counts_parameters() {
        let spec = vec![
            LayerSpec::dense(2, 4, Activation::Tanh),
            LayerSpec::dense(4, 1, Activation::Identity),
        ];
        assert_eq!(validate_topology(&spec).unwrap(), 17);
        assert_eq!(init_weights(&spec, 3).unwrap().len(), 17);
    }

    #[test]
    fn rejects_bad_topology() {
        let spec = vec![
            LayerSpec::dense(2, 4, Activation::Tanh),
            LayerSpec::dense(5, 1, Activation::Identity),
        ];
        assert!(matches!(validate_topology(&spec), Err(Error::Topology(_))));
        let res = vec![LayerSpec {
            in_width: 2,
            out_width: 3,
            activation: Activation::Relu,
            residual: true,
        }];
        assert!(matches!(init_weights(&res, 0), Err(Error::Topology(_))));
    }

    #[test]
    fn identity_layer_is_pass_through() {
        let net = identity_net(3);
        let x = [0.5, -1.5, 2.0];
        assert_eq!(net.forward(&x).unwrap(), x.to_vec());
        let up = [0.1, 0.2, -0.3];
        assert_eq!(net.input_gradient(&x, &up).unwrap(), up.to_vec());
    }

    #[test]
    fn zero_residual_block_is_identity() {
        let spec = vec![LayerSpec::residual(2, Activation::Relu)];
        let net = Network::new(spec, WeightVector::zeros(6), None).unwrap();
        assert_eq!(net.forward(&[0.3, -0.2]).unwrap(), vec![0.3, -0.2]);
    }

    #[test]
    fn zero_scale_init_gives_activation_of_zero() {
        let spec = mlp_spec(2, 8, 3, 1, Activation::Tanh);
        let w = init_weights_scaled(&spec, 1, 0.0).unwrap();
        let net = Network::new(spec, w, None).unwrap();
        assert_eq!(net.forward(&[1.0, -4.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn dead_relu_has_zero_input_gradient() {
        let spec = vec![
            LayerSpec::dense(2, 3, Activation::Relu),
            LayerSpec::dense(3, 1, Activation::Identity),
        ];
        let mut w = vec![1.0; validate_topology(&spec).unwrap()];
        // biases of the hidden layer strongly negative
        for b in &mut w[6..9] {
            *b = -100.0;
        }
        let net = Network::new(spec, w.into(), None).unwrap();
        assert_eq!(net.input_gradient(&[0.5, 0.5], &[1.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn zero_upstream_zero_gradient() {
        let net = Network::initialized(mlp_spec(3, 5, 2, 2, Activation::Tanh), 9, None).unwrap();
        let g = net.weight_gradient(&[0.1, 0.2, 0.3], &[0.0, 0.0]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_errors() {
        let net = identity_net(2);
        assert!(matches!(net.forward(&[1.0]), Err(Error::Dimension { .. })));
        assert!(matches!(net.forward(&[1.0, f64::NAN]), Err(Error::NonFinite(_))));
        assert!(net.weight_gradient(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn batch_matches_single_and_handles_empty() {
        let net = Network::initialized(mlp_spec(2, 16, 2, 1, Activation::Tanh), 4, None).unwrap();
        let xs = Array2::from_shape_fn((300, 2), |(i, j)| ((i * 7 + j * 3) % 11) as f64 * 0.3 - 1.5);
        let out = net.forward_batch(ExecMode::Parallel, xs.view()).unwrap();
        for i in [0, 17, 299] {
            let single = net.forward(xs.row(i).as_slice().unwrap()).unwrap();
            assert!((single[0] - out[[i, 0]]).abs() < 1e-14);
        }
        let empty = net.forward_batch(ExecMode::Sequential, Array2::zeros((0, 2)).view()).unwrap();
        assert_eq!(empty.dim(), (0, 1));
    }

    #[test]
    fn batch_gradient_is_sum_of_per_sample() {
        let net = Network::initialized(mlp_spec(2, 6, 2, 1, Activation::Tanh), 5, None).unwrap();
        let xs = ndarray::arr2(&[[0.1, 0.4], [-0.3, 0.9], [1.2, -0.5]]);
        let up = ndarray::arr2(&[[1.0], [-0.5], [2.0]]);
        let g = net.weight_gradient_batch(ExecMode::Sequential, xs.view(), up.view()).unwrap();
        let mut expect = vec![0.0; net.param_count()];
        for i in 0..3 {
            let gi = net
                .weight_gradient(xs.row(i).as_slice().unwrap(), up.row(i).as_slice().unwrap())
                .unwrap();
            for (e, v) in expect.iter_mut().zip(gi.iter()) {
                *e += v;
            }
        }
        for (a, b) in g.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn bounded_outputs_stay_in_box(seed in 0u64..1000, scale in 0.1f64..50.0, x0 in -10.0f64..10.0, x1 in -10.0f64..10.0) {
            let spec = mlp_spec(2, 8, 2, 2, Activation::Relu);
            let w = init_weights_scaled(&spec, seed, scale).unwrap();
            let bounds = OutputBounds::new(vec![-1.0, -0.3], vec![1.0, 0.3]).unwrap();
            let net = Network::new(spec, w, Some(bounds)).unwrap();
            let y = net.forward(&[x0, x1]).unwrap();
            prop_assert!(y[0].abs() <= 1.0);
            prop_assert!(y[1].abs() <= 0.3);
        }

        #[test]
        fn batch_permutation_permutes_outputs(seed in 0u64..100) {
            let net = Network::initialized(mlp_spec(2, 8, 2, 1, Activation::Relu), seed, None).unwrap();
            let xs = ndarray::arr2(&[[0.1, 0.2], [0.5, -0.7], [-1.0, 0.3]]);
            let perm = ndarray::arr2(&[[-1.0, 0.3], [0.1, 0.2], [0.5, -0.7]]);
            let a = net.forward_batch(ExecMode::Sequential, xs.view()).unwrap();
            let b = net.forward_batch(ExecMode::Sequential, perm.view()).unwrap();
            prop_assert_eq!(a[[2, 0]], b[[0, 0]]);
            prop_assert_eq!(a[[0, 0]], b[[1, 0]]);
            prop_assert_eq!(a[[1, 0]], b[[2, 0]]);
        }
    }
}
