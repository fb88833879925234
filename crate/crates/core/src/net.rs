//! Fully connected encoder-decoder networks trained by mini-batch Adam.
//!
//! A network is a chain of dense layers, optionally preceded by a fixed
//! cartesian-to-polar layer. The narrowest layer is the bottleneck; its
//! activations are the encoder output. Hidden layers use ELU, while the
//! bottleneck and output layers are affine.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetInstance};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{Purpose, SeedSpec};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[inline]
pub fn elu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        v.exp_m1()
    }
}

/// Derivative of [`elu`]; equals 1 at the origin from both sides.
#[inline]
pub fn elu_prime(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        v.exp()
    }
}

/// `(r, θ)` with `θ` in `(-π, π]`.
pub fn polar_forward(x: &[f64]) -> Result<[f64; 2]> {
    let r = x[0].hypot(x[1]);
    if r == 0.0 {
        return Err(Error::Domain("polar coordinates are undefined at the origin".into()));
    }
    Ok([r, x[1].atan2(x[0])])
}

/// Jacobian of [`polar_forward`], rows `∂r` and `∂θ`.
fn polar_jacobian(x: &[f64]) -> Result<[[f64; 2]; 2]> {
    let r2 = x[0] * x[0] + x[1] * x[1];
    if r2 == 0.0 {
        return Err(Error::Domain("polar coordinates are not differentiable at the origin".into()));
    }
    let r = r2.sqrt();
    Ok([[x[0] / r, x[1] / r], [-x[1] / r2, x[0] / r2]])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Elu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Elu => elu(v),
            Activation::Identity => v,
        }
    }

    #[inline]
    fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Elu => elu_prime(v),
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { in_dim: usize, out_dim: usize, activation: Activation },
    Polar,
}

impl LayerSpec {
    pub fn in_dim(&self) -> usize {
        match self {
            LayerSpec::Dense { in_dim, .. } => *in_dim,
            LayerSpec::Polar => 2,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            LayerSpec::Dense { out_dim, .. } => *out_dim,
            LayerSpec::Polar => 2,
        }
    }
}

/// Affine layer `a(W x + b)` with prune masks (`true` = active).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub weight_mask: Vec<bool>,
    pub bias_mask: Vec<bool>,
}

impl Dense {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Self {
        let n = weights.rows() * weights.cols();
        let nb = bias.len();
        Self { weights, bias, activation, weight_mask: vec![true; n], bias_mask: vec![true; nb] }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weight_mask.len() + self.bias_mask.len()
    }

    pub fn pruned_count(&self) -> usize {
        self.weight_mask.iter().chain(&self.bias_mask).filter(|a| !**a).count()
    }

    /// Zeroes every masked parameter.
    pub fn apply_masks(&mut self) {
        for (w, &m) in self.weights.as_mut_slice().iter_mut().zip(&self.weight_mask) {
            if !m {
                *w = 0.0;
            }
        }
        for (b, &m) in self.bias.iter_mut().zip(&self.bias_mask) {
            if !m {
                *b = 0.0;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Polar,
}

impl Layer {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense(d) => LayerSpec::Dense { in_dim: d.in_dim(), out_dim: d.out_dim(), activation: d.activation },
            Layer::Polar => LayerSpec::Polar,
        }
    }

    pub fn as_dense(&self) -> Option<&Dense> {
        match self {
            Layer::Dense(d) => Some(d),
            Layer::Polar => None,
        }
    }

    pub fn as_dense_mut(&mut self) -> Option<&mut Dense> {
        match self {
            Layer::Dense(d) => Some(d),
            Layer::Polar => None,
        }
    }
}

/// Layer-size string such as `2-4-1-4-2` or `2-[2]-4-4-1-4-4-2`, where `[2]`
/// marks the parameter-free polar layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    widths: Vec<usize>,
    /// Position in `widths` after which a polar layer is inserted.
    polar_after: Option<usize>,
}

impl Architecture {
    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("non-empty")
    }

    pub fn has_polar(&self) -> bool {
        self.polar_after.is_some()
    }

    /// Width of the bottleneck.
    pub fn bottleneck_width(&self) -> usize {
        self.widths[self.bottleneck_position()]
    }

    fn bottleneck_position(&self) -> usize {
        let inner = &self.widths[1..self.widths.len() - 1];
        let min = *inner.iter().min().expect("validated");
        1 + inner.iter().position(|&w| w == min).expect("validated")
    }

    /// Layer specs in order; hidden layers get ELU.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let bottleneck = self.bottleneck_position();
        let last = self.widths.len() - 1;
        let mut specs = Vec::new();
        for i in 0..last {
            if self.polar_after == Some(i) {
                specs.push(LayerSpec::Polar);
            }
            let out = i + 1;
            let activation = if out == bottleneck || out == last { Activation::Identity } else { Activation::Elu };
            specs.push(LayerSpec::Dense { in_dim: self.widths[i], out_dim: self.widths[out], activation });
        }
        specs
    }

    /// Parameter count: weights plus biases of every dense layer.
    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Config(format!("layer sizes `{s}`: {msg}"));
        let mut widths = Vec::new();
        let mut polar_after = None;
        for tok in s.split('-').map(str::trim) {
            if let Some(inner) = tok.strip_prefix('[').and_then(|t| t.strip_suffix(']')) {
                if widths.len() != 1 || polar_after.is_some() || inner != "2" || widths[0] != 2 {
                    return Err(bad("the polar layer `[2]` may only follow a 2-dimensional input"));
                }
                polar_after = Some(0);
                continue;
            }
            let w: usize = tok.parse().map_err(|_| bad(&format!("`{tok}` is not a width")))?;
            if w == 0 {
                return Err(bad("widths must be positive"));
            }
            widths.push(w);
        }
        if widths.len() < 3 {
            return Err(bad("need input, bottleneck and output widths"));
        }
        let inner = &widths[1..widths.len() - 1];
        let min = *inner.iter().min().expect("non-empty");
        if inner.iter().filter(|&&w| w == min).count() != 1 {
            return Err(bad("the narrowest hidden width must be unique"));
        }
        Ok(Architecture { widths, polar_after })
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        for (i, w) in self.widths.iter().enumerate() {
            parts.push(w.to_string());
            if self.polar_after == Some(i) {
                parts.push("[2]".into());
            }
        }
        write!(f, "{}", parts.join("-"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
    /// Index of the layer whose output is the slow view.
    pub bottleneck_index: usize,
}

/// Per-sample activations kept for the reverse sweep.
#[derive(Debug, Clone, Default)]
pub struct Cache {
    /// `inputs[l]` is the input of layer `l`; the last entry is the output.
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activations of dense layers (empty for polar layers).
    pub pre: Vec<Vec<f64>>,
}

/// Gradients aligned with the dense layers of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| l.as_dense().map(|d| (vec![0.0; d.weight_mask.len()], vec![0.0; d.bias.len()])))
            .collect();
        Self { layers }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flatten().flat_map(|(w, b)| w.iter().chain(b).copied())
    }

    fn clear(&mut self) {
        for (w, b) in self.layers.iter_mut().flatten() {
            w.fill(0.0);
            b.fill(0.0);
        }
    }
}

impl Network {
    /// Builds a network with uniform `±√(6/(fan_in+fan_out))` weights and zero
    /// biases.
    pub fn new(arch: &Architecture, seed: &SeedSpec) -> Self {
        let mut rng = seed.derive(Purpose::Init, 0).stream();
        let specs = arch.layer_specs();
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            match spec {
                LayerSpec::Polar => layers.push(Layer::Polar),
                LayerSpec::Dense { in_dim, out_dim, activation } => {
                    let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
                    let w: Vec<f64> = (0..in_dim * out_dim).map(|_| limit * (2.0 * rng.uniform_open() - 1.0)).collect();
                    let weights = Matrix::from_vec(out_dim, in_dim, w).expect("sized");
                    layers.push(Layer::Dense(Dense::new(weights, vec![0.0; out_dim], activation)));
                }
            }
        }
        let bottleneck_width = arch.bottleneck_width();
        let bottleneck_index = layers
            .iter()
            .position(|l| matches!(l.spec(), LayerSpec::Dense { out_dim, .. } if out_dim == bottleneck_width))
            .expect("bottleneck exists");
        Network { layers, bottleneck_index }
    }

    /// Assembles a network from explicit layers, checking that dimensions chain.
    pub fn from_layers(layers: Vec<Layer>, bottleneck_index: usize) -> Result<Self> {
        if layers.is_empty() || bottleneck_index >= layers.len() {
            return Err(Error::Config("bottleneck index out of range".into()));
        }
        for w in layers.windows(2) {
            if w[0].spec().out_dim() != w[1].spec().in_dim() {
                return Err(Error::Dimension(format!("layer dims do not chain: {:?} -> {:?}", w[0].spec(), w[1].spec())));
            }
        }
        for l in &layers {
            if let Layer::Dense(d) = l {
                if d.bias.len() != d.out_dim()
                    || d.weight_mask.len() != d.in_dim() * d.out_dim()
                    || d.bias_mask.len() != d.out_dim()
                {
                    return Err(Error::Dimension("dense layer parts have inconsistent sizes".into()));
                }
            }
        }
        if layers[bottleneck_index].as_dense().is_none() {
            return Err(Error::Config("the bottleneck must be a dense layer".into()));
        }
        Ok(Network { layers, bottleneck_index })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec().in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").spec().out_dim()
    }

    pub fn slow_dim(&self) -> usize {
        self.layers[self.bottleneck_index].spec().out_dim()
    }

    pub fn output_index(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().filter_map(Layer::as_dense).map(Dense::param_count).sum()
    }

    pub fn architecture_string(&self) -> String {
        let mut parts = vec![self.input_dim().to_string()];
        for l in &self.layers {
            match l {
                Layer::Polar => parts.push("[2]".into()),
                Layer::Dense(d) => parts.push(d.out_dim().to_string()),
            }
        }
        parts.join("-")
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension(format!("input of length {} for a network with {} inputs", x.len(), self.input_dim())));
        }
        Ok(())
    }

    /// Runs layers `0..=upto`, recording what the reverse sweep needs.
    fn forward_upto(&self, x: &[f64], upto: usize, cache: &mut Cache) -> Result<()> {
        self.check_input(x)?;
        cache.inputs.resize(upto + 2, Vec::new());
        cache.pre.resize(upto + 1, Vec::new());
        cache.inputs[0].clear();
        cache.inputs[0].extend_from_slice(x);
        for l in 0..=upto {
            let (head, tail) = cache.inputs.split_at_mut(l + 1);
            let input = &head[l];
            let out = &mut tail[0];
            out.clear();
            match &self.layers[l] {
                Layer::Polar => {
                    out.extend_from_slice(&polar_forward(input)?);
                    cache.pre[l].clear();
                }
                Layer::Dense(d) => {
                    let pre = &mut cache.pre[l];
                    pre.clear();
                    let n_in = d.in_dim();
                    let w = d.weights.as_slice();
                    for o in 0..d.out_dim() {
                        let row = &w[o * n_in..(o + 1) * n_in];
                        let z = d.bias[o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                        pre.push(z);
                        out.push(d.activation.apply(z));
                    }
                }
            }
        }
        Ok(())
    }

    /// Network output together with the cache of intermediate values.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Cache)> {
        let mut cache = Cache::default();
        self.forward_upto(x, self.output_index(), &mut cache)?;
        let out = cache.inputs.last().expect("output").clone();
        Ok((out, cache))
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.0)
    }

    /// Slow view: activations of the bottleneck layer.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut cache = Cache::default();
        self.forward_upto(x, self.bottleneck_index, &mut cache)?;
        Ok(cache.inputs.pop().expect("bottleneck output"))
    }

    /// Propagates `delta` (gradient w.r.t. the output of layer `upto`) back to
    /// the input, accumulating parameter gradients when `grads` is given.
    fn reverse(&self, cache: &Cache, upto: usize, mut delta: Vec<f64>, mut grads: Option<&mut Gradients>) -> Result<Vec<f64>> {
        for l in (0..=upto).rev() {
            let input = &cache.inputs[l];
            match &self.layers[l] {
                Layer::Polar => {
                    let j = polar_jacobian(input)?;
                    delta = vec![j[0][0] * delta[0] + j[1][0] * delta[1], j[0][1] * delta[0] + j[1][1] * delta[1]];
                }
                Layer::Dense(d) => {
                    let pre = &cache.pre[l];
                    for (dz, &z) in delta.iter_mut().zip(pre) {
                        *dz *= d.activation.derivative(z);
                    }
                    let n_in = d.in_dim();
                    if let Some(g) = grads.as_deref_mut() {
                        let (gw, gb) = g.layers[l].as_mut().expect("dense gradient slot");
                        for (o, &dz) in delta.iter().enumerate() {
                            if dz == 0.0 {
                                continue;
                            }
                            gb[o] += dz;
                            let row = &mut gw[o * n_in..(o + 1) * n_in];
                            for (gwi, &a) in row.iter_mut().zip(input) {
                                *gwi += dz * a;
                            }
                        }
                    }
                    if l == 0 && grads.is_some() {
                        break;
                    }
                    let w = d.weights.as_slice();
                    let mut back = vec![0.0; n_in];
                    for (o, &dz) in delta.iter().enumerate() {
                        let row = &w[o * n_in..(o + 1) * n_in];
                        for (b, &wi) in back.iter_mut().zip(row) {
                            *b += dz * wi;
                        }
                    }
                    delta = back;
                }
            }
        }
        Ok(delta)
    }

    /// Mean-squared-error loss over a batch and its gradient with respect to
    /// every parameter. Masked parameters get exactly zero gradient.
    pub fn backward(&self, batch: &[(&[f64], &[f64])]) -> Result<(f64, Gradients)> {
        let mut grads = Gradients::zeros_like(self);
        let loss = self.accumulate(batch, &mut grads, &mut Cache::default())?;
        Ok((loss, grads))
    }

    fn accumulate(&self, batch: &[(&[f64], &[f64])], grads: &mut Gradients, cache: &mut Cache) -> Result<f64> {
        grads.clear();
        if batch.is_empty() {
            return Ok(0.0);
        }
        let out_idx = self.output_index();
        let d_out = self.output_dim();
        let scale = 1.0 / (batch.len() * d_out) as f64;
        let mut loss = 0.0;
        for (x, t) in batch {
            if t.len() != d_out {
                return Err(Error::Dimension(format!("target of length {} for {d_out} outputs", t.len())));
            }
            self.forward_upto(x, out_idx, cache)?;
            let out = cache.inputs.last().expect("output");
            let mut delta = Vec::with_capacity(d_out);
            for (o, tv) in out.iter().zip(t.iter()) {
                let r = o - tv;
                loss += r * r;
                delta.push(2.0 * r * scale);
            }
            self.reverse(cache, out_idx, delta, Some(grads))?;
        }
        for (layer, slot) in self.layers.iter().zip(grads.layers.iter_mut()) {
            if let (Layer::Dense(d), Some((gw, gb))) = (layer, slot) {
                for (g, &m) in gw.iter_mut().zip(&d.weight_mask) {
                    if !m {
                        *g = 0.0;
                    }
                }
                for (g, &m) in gb.iter_mut().zip(&d.bias_mask) {
                    if !m {
                        *g = 0.0;
                    }
                }
            }
        }
        Ok(loss * scale)
    }

    /// Jacobian of the encoder at `x`, a `slow_dim x input_dim` matrix built
    /// from one reverse sweep per bottleneck unit.
    pub fn input_jacobian(&self, x: &[f64]) -> Result<Matrix> {
        let mut cache = Cache::default();
        let b = self.bottleneck_index;
        self.forward_upto(x, b, &mut cache)?;
        let k = self.slow_dim();
        let mut jac = Matrix::zeros(k, self.input_dim());
        for row in 0..k {
            let mut seed = vec![0.0; k];
            seed[row] = 1.0;
            let grad = self.reverse(&cache, b, seed, None)?;
            for (j, g) in grad.into_iter().enumerate() {
                jac[(row, j)] = g;
            }
        }
        Ok(jac)
    }

    /// Mean squared error of the network over a dataset.
    pub fn evaluate(&self, data: &[DatasetInstance]) -> Result<f64> {
        let pairs: Vec<(&[f64], &[f64])> = data.iter().map(|i| (i.x.as_slice(), i.px.as_slice())).collect();
        self.mse(&pairs)
    }

    pub fn mse(&self, pairs: &[(&[f64], &[f64])]) -> Result<f64> {
        if pairs.is_empty() {
            return Ok(0.0);
        }
        let mut cache = Cache::default();
        let mut total = 0.0;
        for (x, t) in pairs {
            self.forward_upto(x, self.output_index(), &mut cache)?;
            let out = cache.inputs.last().expect("output");
            total += out.iter().zip(t.iter()).map(|(o, t)| (o - t) * (o - t)).sum::<f64>();
        }
        Ok(total / (pairs.len() * self.output_dim()) as f64)
    }

    pub fn apply_masks(&mut self) {
        for d in self.layers.iter_mut().filter_map(Layer::as_dense_mut) {
            d.apply_masks();
        }
    }

    pub fn dense_layers(&self) -> impl Iterator<Item = (usize, &Dense)> {
        self.layers.iter().enumerate().filter_map(|(i, l)| l.as_dense().map(|d| (i, d)))
    }
}

/// Mean over batch and coordinates of the squared difference.
pub fn loss_mse(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Dimension(format!("{} predictions for {} targets", pred.len(), target.len())));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for (p, t) in pred.iter().zip(target) {
        if p.len() != t.len() {
            return Err(Error::Dimension("prediction and target lengths differ".into()));
        }
        total += p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        n += p.len();
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
}

fn default_batch() -> usize {
    16
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl TrainConfig {
    pub fn new(epochs: usize, learning_rate: f64) -> Self {
        Self { epochs, batch_size: 16, learning_rate, beta1: 0.9, beta2: 0.999, adam_eps: 1e-8 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate must be finite and non-negative, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// First and second moment estimates for every dense parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Gradients,
    pub second: Gradients,
    pub step: u64,
}

impl AdamState {
    pub fn new(net: &Network) -> Self {
        Self { first: Gradients::zeros_like(net), second: Gradients::zeros_like(net), step: 0 }
    }
}

/// One bias-corrected Adam update. Masked parameters stay exactly zero.
pub fn adam_step(net: &mut Network, grads: &Gradients, state: &mut AdamState, cfg: &TrainConfig) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (l, layer) in net.layers.iter_mut().enumerate() {
        let Layer::Dense(d) = layer else { continue };
        let (gw, gb) = grads.layers[l].as_ref().expect("dense gradient");
        let (mw, mb) = state.first.layers[l].as_mut().expect("dense moment");
        let (vw, vb) = state.second.layers[l].as_mut().expect("dense moment");
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64, active: bool| {
            if !active {
                *p = 0.0;
                return;
            }
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        };
        let params = d.weights.as_mut_slice();
        for i in 0..params.len() {
            update(&mut params[i], gw[i], &mut mw[i], &mut vw[i], d.weight_mask[i]);
        }
        for i in 0..d.bias.len() {
            update(&mut d.bias[i], gb[i], &mut mb[i], &mut vb[i], d.bias_mask[i]);
        }
    }
}

/// Called after every epoch; returns whether the network's masks changed.
pub trait TrainHook {
    fn on_epoch_end(&mut self, epoch: usize, net: &mut Network) -> Result<bool>;

    /// Ends training after `epoch` when true.
    fn should_stop(&self, _epoch: usize) -> bool {
        false
    }
}

impl<F: FnMut(usize, &mut Network) -> Result<bool>> TrainHook for F {
    fn on_epoch_end(&mut self, epoch: usize, net: &mut Network) -> Result<bool> {
        self(epoch, net)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Snapshot with the smallest validation loss since the last mask change.
    pub best: Network,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Network after the final epoch.
    pub last: Network,
    pub history: Vec<EpochRecord>,
}

/// Mini-batch Adam on the MSE between network outputs and projections.
///
/// Epochs are numbered from 1. Each epoch visits the training set in a fresh
/// random order (the short last batch is kept), then records the training and
/// validation loss, snapshots the network if validation improved, and runs
/// the hooks. A hook that changes masks resets the snapshot, so the returned
/// model always carries the final masks.
pub fn train(
    mut net: Network,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    seed: &SeedSpec,
    hooks: &mut [&mut dyn TrainHook],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    for ds in [train_set, val_set] {
        if let Some(d) = ds.dim() {
            if d != net.input_dim() || d != net.output_dim() {
                return Err(Error::Dimension(format!(
                    "dataset dimension {d} does not match the {}-input/{}-output network",
                    net.input_dim(),
                    net.output_dim()
                )));
            }
        }
    }
    if train_set.is_empty() {
        return Err(Error::Argument("empty training set".into()));
    }
    let pairs: Vec<(&[f64], &[f64])> =
        train_set.instances.iter().map(|i| (i.x.as_slice(), i.px.as_slice())).collect();
    let val_pairs: Vec<(&[f64], &[f64])> =
        val_set.instances.iter().map(|i| (i.x.as_slice(), i.px.as_slice())).collect();

    net.apply_masks();
    let mut adam = AdamState::new(&net);
    let mut grads = Gradients::zeros_like(&net);
    let mut cache = Cache::default();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut batch: Vec<(&[f64], &[f64])> = Vec::with_capacity(cfg.batch_size);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(Network, usize, f64)> = None;

    for epoch in 1..=cfg.epochs {
        let mut rng = seed.derive(Purpose::Shuffle, epoch as u64).stream();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| pairs[i]));
            let loss = net.accumulate(&batch, &mut grads, &mut cache)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            adam_step(&mut net, &grads, &mut adam, cfg);
        }
        let train_loss = net.mse(&pairs)?;
        let val_loss = if val_pairs.is_empty() { train_loss } else { net.mse(&val_pairs)? };
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Divergence { epoch, loss: if train_loss.is_finite() { val_loss } else { train_loss } });
        }
        history.push(EpochRecord { epoch, train_loss, val_loss });
        if best.as_ref().map_or(true, |(_, _, v)| val_loss < *v) {
            best = Some((net.clone(), epoch, val_loss));
        }
        let mut changed = false;
        for hook in hooks.iter_mut() {
            changed |= hook.on_epoch_end(epoch, &mut net)?;
        }
        if changed {
            net.apply_masks();
            best = None;
        }
        if hooks.iter().any(|h| h.should_stop(epoch)) {
            break;
        }
    }

    let (best, best_epoch, best_val_loss) = match best {
        Some(b) => b,
        None => {
            // masks changed after the final epoch; the last state is the only valid snapshot
            let v = if val_pairs.is_empty() { net.mse(&pairs)? } else { net.mse(&val_pairs)? };
            (net.clone(), history.last().map_or(0, |r| r.epoch), v)
        }
    };
    Ok(TrainOutcome { best, best_epoch, best_val_loss, last: net, history })
}

/// Autoencoder control: inputs replaced by their projections, so the network
/// only ever sees points near the slow manifold.
pub fn make_autoencoder_dataset(ds: &Dataset) -> Dataset {
    Dataset {
        meta: ds.meta.clone(),
        instances: ds
            .instances
            .iter()
            .map(|i| DatasetInstance { x: i.px.clone(), px: i.px.clone(), cov: i.cov.clone() })
            .collect(),
    }
}

// ----------------------------------------------------------- checkpoints

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LayerRecord {
    Dense {
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        weights: Vec<Vec<f64>>,
        bias: Vec<f64>,
        weight_mask: Vec<Vec<u8>>,
        bias_mask: Vec<u8>,
    },
    Polar,
}

#[derive(Serialize, Deserialize)]
struct CheckpointRecord {
    format_version: u32,
    architecture: String,
    bottleneck_index: usize,
    layers: Vec<LayerRecord>,
    #[serde(default)]
    training: serde_json::Value,
}

/// A network plus free-form training metadata (configuration, dataset
/// digest, best epoch).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub training: serde_json::Value,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let layers = self
            .network
            .layers
            .iter()
            .map(|l| match l {
                Layer::Polar => LayerRecord::Polar,
                Layer::Dense(d) => LayerRecord::Dense {
                    in_dim: d.in_dim(),
                    out_dim: d.out_dim(),
                    activation: d.activation,
                    weights: d.weights.to_rows(),
                    bias: d.bias.clone(),
                    weight_mask: d.weight_mask.chunks(d.in_dim()).map(|r| r.iter().map(|&m| m as u8).collect()).collect(),
                    bias_mask: d.bias_mask.iter().map(|&m| m as u8).collect(),
                },
            })
            .collect();
        let rec = CheckpointRecord {
            format_version: CHECKPOINT_FORMAT_VERSION,
            architecture: self.network.architecture_string(),
            bottleneck_index: self.network.bottleneck_index,
            layers,
            training: self.training.clone(),
        };
        Ok(serde_json::to_string_pretty(&rec)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        match raw.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == CHECKPOINT_FORMAT_VERSION as u64 => {}
            other => return Err(Error::Format(format!("unsupported checkpoint format_version {other:?}"))),
        }
        let rec: CheckpointRecord = serde_json::from_value(raw)?;
        let mut layers = Vec::with_capacity(rec.layers.len());
        for l in rec.layers {
            layers.push(match l {
                LayerRecord::Polar => Layer::Polar,
                LayerRecord::Dense { in_dim, out_dim, activation, weights, bias, weight_mask, bias_mask } => {
                    let weights = Matrix::from_rows(&weights)?;
                    if weights.rows() != out_dim || weights.cols() != in_dim {
                        return Err(Error::Format("checkpoint weight shape disagrees with layer dims".into()));
                    }
                    let weight_mask: Vec<bool> = weight_mask.into_iter().flatten().map(|m| m != 0).collect();
                    let bias_mask = bias_mask.into_iter().map(|m| m != 0).collect();
                    Layer::Dense(Dense { weights, bias, activation, weight_mask, bias_mask })
                }
            });
        }
        let network = Network::from_layers(layers, rec.bottleneck_index)?;
        Ok(Checkpoint { network, training: rec.training })
    }
}
