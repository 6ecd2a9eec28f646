//! Minimal dense-network machinery: forward/backward passes over explicit
//! parameter vectors, Adam, Polyak averaging, and a central-difference
//! gradient oracle.
//!
//! Everything is 64-bit and deterministic given a seed. `backward` returns the
//! gradient with respect to the inputs alongside the parameter gradients in a
//! single pass, because the actor and regulator losses need the critics'
//! input gradients with the critic parameters frozen.
//!
//! Weights are row-major per layer with shape `(out_dim, in_dim)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::math;
use crate::rng::uniform_symmetric;
use crate::{Error, Result};

/// Pre-activation clamp that keeps `tanh` strictly inside (-1, 1) in f64.
const TANH_CLAMP: f64 = 17.0;
/// Pre-activation clamp that keeps `sigmoid` strictly inside (0, 1) in f64.
const SIGMOID_CLAMP: f64 = 35.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Tanh => math::tanh(x.clamp(-TANH_CLAMP, TANH_CLAMP)),
            Activation::Identity => x,
            Activation::Sigmoid => {
                let z = x.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP);
                if z >= 0.0 {
                    1.0 / (1.0 + math::exp(-z))
                } else {
                    let e = math::exp(z);
                    e / (1.0 + e)
                }
            }
        }
    }

    /// Derivative given the pre-activation and the activated output.
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - post * post,
            Activation::Identity => 1.0,
            Activation::Sigmoid => post * (1.0 - post),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

/// A fully connected feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork {
    sizes: Vec<usize>,
    hidden_activation: Activation,
    output_activation: Activation,
    /// Row-major `(out, in)` weight matrix per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl DenseNetwork {
    /// Random initialization, uniform in `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`
    /// for weights and biases alike.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(sizes, hidden_activation, output_activation)?;
        for l in 0..net.layer_count() {
            let bound = 1.0 / math::sqrt(net.sizes[l] as f64);
            for w in net.weights[l].iter_mut() {
                *w = uniform_symmetric(rng, bound);
            }
            for b in net.biases[l].iter_mut() {
                *b = uniform_symmetric(rng, bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(
        sizes: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Config(format!(
                "network needs at least input and output sizes, got {sizes:?}"
            )));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config(format!("zero-width layer in {sizes:?}")));
        }
        let mut weights = Vec::with_capacity(sizes.len() - 1);
        let mut biases = Vec::with_capacity(sizes.len() - 1);
        for l in 0..sizes.len() - 1 {
            weights.push(vec![0.0; sizes[l] * sizes[l + 1]]);
            biases.push(vec![0.0; sizes[l + 1]]);
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            hidden_activation,
            output_activation,
            weights,
            biases,
        })
    }

    /// Rebuild a network from serialized parts, validating shapes.
    pub fn from_parts(
        sizes: Vec<usize>,
        hidden_activation: Activation,
        output_activation: Activation,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let mut net = Self::zeros(&sizes, hidden_activation, output_activation)?;
        if weights.len() != net.layer_count() || biases.len() != net.layer_count() {
            return Err(Error::Checkpoint("layer count mismatch".into()));
        }
        for l in 0..net.layer_count() {
            if weights[l].len() != net.weights[l].len() || biases[l].len() != net.biases[l].len() {
                return Err(Error::Checkpoint(format!("layer {l} shape mismatch")));
            }
        }
        net.weights = weights;
        net.biases = biases;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("validated in constructor")
    }

    pub fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    pub fn layer_weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn layer_biases(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    fn activation_for(&self, layer: usize) -> Activation {
        if layer + 1 == self.layer_count() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    /// Forward pass recording per-layer pre-activations and activations.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let mut cache = ForwardCache::for_network(self);
        self.forward_into(input, &mut cache)?;
        Ok((cache.output().to_vec(), cache))
    }

    /// Forward pass into a reusable cache (the hot path).
    pub fn forward_into(&self, input: &[f64], cache: &mut ForwardCache) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Config(format!(
                "input length {} does not match network input width {}",
                input.len(),
                self.input_dim()
            )));
        }
        cache.ensure_shape(self);
        cache.input.clear();
        cache.input.extend_from_slice(input);
        for l in 0..self.layer_count() {
            let act = self.activation_for(l);
            let in_dim = self.sizes[l];
            let out_dim = self.sizes[l + 1];
            let w = &self.weights[l];
            let b = &self.biases[l];
            // Split so we can read layer l-1's output while writing layer l's.
            let (done, rest) = cache.post.split_at_mut(l);
            let x: &[f64] = if l == 0 { &cache.input } else { &done[l - 1] };
            let pre = &mut cache.pre[l];
            let post = &mut rest[0];
            for j in 0..out_dim {
                let row = &w[j * in_dim..(j + 1) * in_dim];
                let mut acc = b[j];
                for i in 0..in_dim {
                    acc += row[i] * x[i];
                }
                pre[j] = acc;
                post[j] = act.apply(acc);
            }
        }
        Ok(())
    }

    /// Convenience forward pass that only returns the output vector.
    pub fn forward_value(&self, input: &[f64], scratch: &mut ForwardCache) -> Result<Vec<f64>> {
        self.forward_into(input, scratch)?;
        Ok(scratch.output().to_vec())
    }

    /// Backward pass for the scalar objective `output_gradient . output`.
    ///
    /// Returns the gradients with respect to every parameter and with respect
    /// to the input vector.
    pub fn backward(&self, cache: &ForwardCache, output_gradient: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        let mut grads = Gradients::zeros_like(self);
        let input_grad = self.backward_accumulate(cache, output_gradient, &mut grads)?;
        Ok((grads, input_grad))
    }

    /// Backward pass accumulating into `grads` (the hot path for minibatches).
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache,
        output_gradient: &[f64],
        grads: &mut Gradients,
    ) -> Result<Vec<f64>> {
        if output_gradient.len() != self.output_dim() {
            return Err(Error::Internal(format!(
                "output gradient length {} does not match output width {}",
                output_gradient.len(),
                self.output_dim()
            )));
        }
        if !cache.matches(self) {
            return Err(Error::Internal("stale forward cache for backward pass".into()));
        }
        if !grads.matches(self) {
            return Err(Error::Internal("gradient buffer shape mismatch".into()));
        }

        let last = self.layer_count() - 1;
        let mut delta: Vec<f64> = Vec::with_capacity(self.output_dim());
        {
            let act = self.activation_for(last);
            let pre = &cache.pre[last];
            let post = &cache.post[last];
            for j in 0..self.output_dim() {
                delta.push(output_gradient[j] * act.derivative(pre[j], post[j]));
            }
        }

        let mut dx: Vec<f64> = Vec::new();
        for l in (0..=last).rev() {
            let in_dim = self.sizes[l];
            let out_dim = self.sizes[l + 1];
            let x: &[f64] = if l == 0 { &cache.input } else { &cache.post[l - 1] };
            let w = &self.weights[l];
            let gw = &mut grads.weights[l];
            let gb = &mut grads.biases[l];

            dx.clear();
            dx.resize(in_dim, 0.0);
            for j in 0..out_dim {
                let dj = delta[j];
                gb[j] += dj;
                if dj == 0.0 {
                    continue;
                }
                let row = &w[j * in_dim..(j + 1) * in_dim];
                let grow = &mut gw[j * in_dim..(j + 1) * in_dim];
                for i in 0..in_dim {
                    grow[i] += dj * x[i];
                    dx[i] += row[i] * dj;
                }
            }

            if l > 0 {
                let act = self.activation_for(l - 1);
                let pre = &cache.pre[l - 1];
                let post = &cache.post[l - 1];
                delta.clear();
                for i in 0..in_dim {
                    delta.push(dx[i] * act.derivative(pre[i], post[i]));
                }
            }
        }
        Ok(dx)
    }

    /// Gradient with respect to the input only, skipping parameter gradients
    /// entirely (for frozen-network queries inside other losses).
    pub fn backward_to_input(
        &self,
        cache: &ForwardCache,
        output_gradient: &[f64],
        input_gradient: &mut Vec<f64>,
    ) -> Result<()> {
        if output_gradient.len() != self.output_dim() {
            return Err(Error::Internal("output gradient width mismatch".into()));
        }
        if !cache.matches(self) {
            return Err(Error::Internal("stale forward cache for backward pass".into()));
        }
        let last = self.layer_count() - 1;
        let mut delta: Vec<f64> = Vec::with_capacity(self.output_dim());
        {
            let act = self.activation_for(last);
            let pre = &cache.pre[last];
            let post = &cache.post[last];
            for j in 0..self.output_dim() {
                delta.push(output_gradient[j] * act.derivative(pre[j], post[j]));
            }
        }
        for l in (0..=last).rev() {
            let in_dim = self.sizes[l];
            let out_dim = self.sizes[l + 1];
            let w = &self.weights[l];
            input_gradient.clear();
            input_gradient.resize(in_dim, 0.0);
            for j in 0..out_dim {
                let dj = delta[j];
                if dj == 0.0 {
                    continue;
                }
                let row = &w[j * in_dim..(j + 1) * in_dim];
                for i in 0..in_dim {
                    input_gradient[i] += row[i] * dj;
                }
            }
            if l > 0 {
                let act = self.activation_for(l - 1);
                let pre = &cache.pre[l - 1];
                let post = &cache.post[l - 1];
                delta.clear();
                for i in 0..in_dim {
                    delta.push(input_gradient[i] * act.derivative(pre[i], post[i]));
                }
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Flatten all parameters (weights then biases, layer by layer).
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in 0..self.layer_count() {
            out.extend_from_slice(&self.weights[l]);
            out.extend_from_slice(&self.biases[l]);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut k = 0;
        for l in 0..self.layer_count() {
            for w in self.weights[l].iter_mut() {
                *w = flat[k];
                k += 1;
            }
            for b in self.biases[l].iter_mut() {
                *b = flat[k];
                k += 1;
            }
        }
        Ok(())
    }

    pub fn same_architecture(&self, other: &DenseNetwork) -> bool {
        self.sizes == other.sizes
            && self.hidden_activation == other.hidden_activation
            && self.output_activation == other.output_activation
    }
}

/// Per-layer pre-activations and activations recorded during a forward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn for_network(net: &DenseNetwork) -> Self {
        let mut cache = Self::default();
        cache.ensure_shape(net);
        cache
    }

    fn ensure_shape(&mut self, net: &DenseNetwork) {
        if self.matches(net) {
            return;
        }
        self.input = vec![0.0; net.input_dim()];
        self.pre = net.sizes[1..].iter().map(|&s| vec![0.0; s]).collect();
        self.post = net.sizes[1..].iter().map(|&s| vec![0.0; s]).collect();
    }

    fn matches(&self, net: &DenseNetwork) -> bool {
        self.input.len() == net.input_dim()
            && self.pre.len() == net.layer_count()
            && self
                .pre
                .iter()
                .zip(net.sizes[1..].iter())
                .all(|(v, &s)| v.len() == s)
            && self
                .post
                .iter()
                .zip(net.sizes[1..].iter())
                .all(|(v, &s)| v.len() == s)
    }

    /// Output of the recorded forward pass.
    pub fn output(&self) -> &[f64] {
        self.post.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn input(&self) -> &[f64] {
        &self.input
    }
}

/// Parameter gradients shaped like a network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNetwork) -> Self {
        Self {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn reset(&mut self) {
        for w in self.weights.iter_mut() {
            w.fill(0.0);
        }
        for b in self.biases.iter_mut() {
            b.fill(0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in self.weights.iter_mut() {
            for v in w.iter_mut() {
                *v *= factor;
            }
        }
        for b in self.biases.iter_mut() {
            for v in b.iter_mut() {
                *v *= factor;
            }
        }
    }

    fn matches(&self, net: &DenseNetwork) -> bool {
        self.weights.len() == net.weights.len()
            && self
                .weights
                .iter()
                .zip(net.weights.iter())
                .all(|(a, b)| a.len() == b.len())
            && self
                .biases
                .iter()
                .zip(net.biases.iter())
                .all(|(a, b)| a.len() == b.len())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in 0..self.weights.len() {
            out.extend_from_slice(&self.weights[l]);
            out.extend_from_slice(&self.biases[l]);
        }
        out
    }
}

/// Adam accumulators for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Gradients,
    v: Gradients,
    step: u64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl AdamState {
    pub fn new(net: &DenseNetwork) -> Self {
        Self {
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Serialize as (beta1, beta2, epsilon, step, m..., v...) alongside shapes
    /// taken from the owning network.
    pub fn to_flat(&self) -> (f64, f64, f64, u64, Vec<f64>, Vec<f64>) {
        (
            self.beta1,
            self.beta2,
            self.epsilon,
            self.step,
            self.m.to_flat(),
            self.v.to_flat(),
        )
    }

    pub fn from_flat(
        net: &DenseNetwork,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        step: u64,
        m_flat: &[f64],
        v_flat: &[f64],
    ) -> Result<Self> {
        let mut state = Self::new(net);
        state.beta1 = beta1;
        state.beta2 = beta2;
        state.epsilon = epsilon;
        state.step = step;
        fill_from_flat(&mut state.m, m_flat)?;
        fill_from_flat(&mut state.v, v_flat)?;
        Ok(state)
    }
}

fn fill_from_flat(grads: &mut Gradients, flat: &[f64]) -> Result<()> {
    let total: usize =
        grads.weights.iter().map(Vec::len).sum::<usize>() + grads.biases.iter().map(Vec::len).sum::<usize>();
    if flat.len() != total {
        return Err(Error::Checkpoint(format!(
            "optimizer state length {} does not match parameter count {total}",
            flat.len()
        )));
    }
    let mut k = 0;
    for l in 0..grads.weights.len() {
        for w in grads.weights[l].iter_mut() {
            *w = flat[k];
            k += 1;
        }
        for b in grads.biases[l].iter_mut() {
            *b = flat[k];
            k += 1;
        }
    }
    Ok(())
}

/// Bias-corrected Adam update applied in place.
pub fn adam_step(
    net: &mut DenseNetwork,
    grads: &Gradients,
    state: &mut AdamState,
    learning_rate: f64,
) -> Result<()> {
    if !grads.matches(net) || !state.m.matches(net) {
        return Err(Error::Config("adam state shape mismatch".into()));
    }
    for (l, gw) in grads.weights.iter().enumerate() {
        if gw.iter().chain(grads.biases[l].iter()).any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in layer {l}")));
        }
    }
    state.step += 1;
    let t = state.step;
    let bc1 = 1.0 - math::powf(state.beta1, t as f64);
    let bc2 = 1.0 - math::powf(state.beta2, t as f64);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);

    let apply = |params: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for i in 0..params.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            params[i] -= learning_rate * m_hat / (math::sqrt(v_hat) + eps);
        }
    };
    for l in 0..net.layer_count() {
        apply(
            &mut net.weights[l],
            &grads.weights[l],
            &mut state.m.weights[l],
            &mut state.v.weights[l],
        );
        apply(
            &mut net.biases[l],
            &grads.biases[l],
            &mut state.m.biases[l],
            &mut state.v.biases[l],
        );
    }
    for l in 0..net.layer_count() {
        if net.weights[l]
            .iter()
            .chain(net.biases[l].iter())
            .any(|p| !p.is_finite())
        {
            return Err(Error::Numeric(format!("non-finite parameter in layer {l} after update")));
        }
    }
    Ok(())
}

/// Polyak average: every target parameter becomes
/// `tau * online + (1 - tau) * target`.
pub fn polyak_update(target: &mut DenseNetwork, online: &DenseNetwork, tau: f64) -> Result<()> {
    if !target.same_architecture(online) {
        return Err(Error::Config("polyak update across mismatched architectures".into()));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("tau {tau} outside [0, 1]")));
    }
    for l in 0..target.layer_count() {
        for (t, o) in target.weights[l].iter_mut().zip(online.weights[l].iter()) {
            *t = tau * *o + (1.0 - tau) * *t;
        }
        for (t, o) in target.biases[l].iter_mut().zip(online.biases[l].iter()) {
            *t = tau * *o + (1.0 - tau) * *t;
        }
    }
    Ok(())
}

/// Central-difference gradient estimate `(f(x+h e_i) - f(x-h e_i)) / 2h`.
pub fn finite_diff_gradient<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if h <= 0.0 {
        return Err(Error::Config(format!("finite-difference step {h} must be positive")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite function value near coordinate {i}"
            )));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use approx::assert_relative_eq;

    #[test]
    fn zero_network_maps_to_zero() {
        let net = DenseNetwork::zeros(&[3, 4, 2], Activation::Relu, Activation::Identity).unwrap();
        let (out, _) = net.forward(&[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer_is_identity_map() {
        let mut net = DenseNetwork::zeros(&[2, 2], Activation::Relu, Activation::Identity).unwrap();
        net.set_params_flat(&[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let (out, _) = net.forward(&[1.0, 2.0]).unwrap();
        assert_eq!(out, vec![1.0, 2.0]);
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        // Independent re-implementation of the same arithmetic, same op order.
        let mut rng = stream_rng(42, 0);
        let net = DenseNetwork::new(&[4, 8, 2], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let input = [0.25, -0.5, 1.5, -2.0];

        let mut x: Vec<f64> = input.to_vec();
        for l in 0..net.layer_count() {
            let in_dim = net.sizes()[l];
            let out_dim = net.sizes()[l + 1];
            let mut next = Vec::with_capacity(out_dim);
            for j in 0..out_dim {
                let mut acc = net.layer_biases(l)[j];
                for i in 0..in_dim {
                    acc += net.layer_weights(l)[j * in_dim + i] * x[i];
                }
                if l + 1 < net.layer_count() && acc < 0.0 {
                    acc = 0.0;
                }
                next.push(acc);
            }
            x = next;
        }

        let (out, _) = net.forward(&input).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn forward_is_pure() {
        let mut rng = stream_rng(3, 0);
        let net = DenseNetwork::new(&[5, 7, 3], Activation::Tanh, Activation::Sigmoid, &mut rng).unwrap();
        let input = [0.1, 0.2, -0.3, 0.4, -0.5];
        let (a, _) = net.forward(&input).unwrap();
        let (b, _) = net.forward(&input).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let net = DenseNetwork::zeros(&[3, 2], Activation::Relu, Activation::Identity).unwrap();
        assert!(matches!(net.forward(&[1.0, 2.0]), Err(Error::Config(_))));
    }

    #[test]
    fn sigmoid_and_tanh_outputs_stay_strictly_inside_range() {
        let mut net = DenseNetwork::zeros(&[1, 1], Activation::Relu, Activation::Sigmoid).unwrap();
        net.set_params_flat(&[1e9, 0.0]).unwrap();
        let (hi, _) = net.forward(&[1e9]).unwrap();
        let (lo, _) = net.forward(&[-1e9]).unwrap();
        assert!(hi[0] < 1.0 && hi[0] > 0.0);
        assert!(lo[0] > 0.0 && lo[0] < 1.0);

        let mut net = DenseNetwork::zeros(&[1, 1], Activation::Relu, Activation::Tanh).unwrap();
        net.set_params_flat(&[1e9, 0.0]).unwrap();
        let (hi, _) = net.forward(&[1e9]).unwrap();
        let (lo, _) = net.forward(&[-1e9]).unwrap();
        assert!(hi[0] < 1.0 && lo[0] > -1.0);
    }

    #[test]
    fn backward_identity_passes_gradient_through() {
        let mut net = DenseNetwork::zeros(&[1, 1], Activation::Relu, Activation::Identity).unwrap();
        net.set_params_flat(&[1.0, 0.0]).unwrap();
        let (_, cache) = net.forward(&[2.5]).unwrap();
        let (grads, input_grad) = net.backward(&cache, &[1.0]).unwrap();
        assert_eq!(input_grad, vec![1.0]);
        assert_eq!(grads.weights[0], vec![2.5]);
        assert_eq!(grads.biases[0], vec![1.0]);
    }

    #[test]
    fn backward_zero_gradient_gives_zero_everywhere() {
        let mut rng = stream_rng(9, 0);
        let net = DenseNetwork::new(&[3, 5, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let (_, cache) = net.forward(&[0.1, 0.2, 0.3]).unwrap();
        let (grads, input_grad) = net.backward(&cache, &[0.0, 0.0]).unwrap();
        assert!(input_grad.iter().all(|&g| g == 0.0));
        assert!(grads.to_flat().iter().all(|&g| g == 0.0));
    }

    /// Relative error with a floor so near-zero gradients compare sanely.
    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
    }

    #[test]
    fn backward_matches_finite_differences_on_params_and_inputs() {
        let mut rng = stream_rng(17, 0);
        let net = DenseNetwork::new(&[3, 5, 1], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let input = [0.3, -0.7, 0.5];
        let (_, cache) = net.forward(&input).unwrap();
        let (grads, input_grad) = net.backward(&cache, &[1.0]).unwrap();

        let base = net.params_flat();
        let fd_params = finite_diff_gradient(
            |p| {
                let mut probe = net.clone();
                probe.set_params_flat(p).unwrap();
                probe.forward(&input).unwrap().0[0]
            },
            &base,
            1e-5,
        )
        .unwrap();
        for (a, f) in grads.to_flat().iter().zip(fd_params.iter()) {
            assert!(rel_err(*a, *f) < 1e-4, "param grad {a} vs fd {f}");
        }

        let fd_input =
            finite_diff_gradient(|x| net.forward(x).unwrap().0[0], &input, 1e-5).unwrap();
        for (a, f) in input_grad.iter().zip(fd_input.iter()) {
            assert!(rel_err(*a, *f) < 1e-4, "input grad {a} vs fd {f}");
        }
    }

    #[test]
    fn finite_diff_oracle_on_analytic_functions() {
        let g = finite_diff_gradient(|x| x[0] * x[0], &[3.0], 1e-5).unwrap();
        assert_relative_eq!(g[0], 6.0, epsilon = 1e-6);

        let g = finite_diff_gradient(|_| 4.25, &[1.0, 2.0, 3.0], 1e-5).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));

        let g = finite_diff_gradient(
            |x| x.iter().map(|&v| libm::sin(v)).sum(),
            &[0.0, core::f64::consts::FRAC_PI_2],
            1e-5,
        )
        .unwrap();
        assert_relative_eq!(g[0], 1.0, epsilon = 1e-6);
        assert_relative_eq!(g[1], 0.0, epsilon = 1e-6);
    }

    #[test]
    fn adam_zero_gradient_leaves_params_unchanged() {
        let mut rng = stream_rng(5, 0);
        let mut net = DenseNetwork::new(&[2, 3, 1], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let before = net.params_flat();
        let grads = Gradients::zeros_like(&net);
        let mut state = AdamState::new(&net);
        adam_step(&mut net, &grads, &mut state, 0.01).unwrap();
        assert_eq!(net.params_flat(), before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adam_first_step_moves_against_gradient_sign() {
        let mut net = DenseNetwork::zeros(&[1, 1], Activation::Relu, Activation::Identity).unwrap();
        net.set_params_flat(&[0.5, -0.5]).unwrap();
        let mut grads = Gradients::zeros_like(&net);
        grads.weights[0][0] = 3.0;
        grads.biases[0][0] = -0.2;
        let mut state = AdamState::new(&net);
        adam_step(&mut net, &grads, &mut state, 0.1).unwrap();
        let p = net.params_flat();
        assert_relative_eq!(p[0], 0.5 - 0.1, epsilon = 1e-6);
        assert_relative_eq!(p[1], -0.5 + 0.1, epsilon = 1e-6);
    }

    #[test]
    fn adam_converges_on_scalar_quadratic() {
        // min (x - 2)^2 from x = 0 with lr 0.1.
        let mut net = DenseNetwork::zeros(&[1, 1], Activation::Relu, Activation::Identity).unwrap();
        net.set_params_flat(&[0.0, 0.0]).unwrap();
        let mut state = AdamState::new(&net);
        for _ in 0..100 {
            let x = net.layer_biases(0)[0];
            let mut grads = Gradients::zeros_like(&net);
            grads.biases[0][0] = 2.0 * (x - 2.0);
            adam_step(&mut net, &grads, &mut state, 0.1).unwrap();
        }
        let x = net.layer_biases(0)[0];
        assert!((x - 2.0).abs() < 0.1, "x={x}");
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut net = DenseNetwork::zeros(&[1, 2, 1], Activation::Relu, Activation::Identity).unwrap();
        let mut grads = Gradients::zeros_like(&net);
        grads.weights[1][0] = f64::NAN;
        let mut state = AdamState::new(&net);
        let err = adam_step(&mut net, &grads, &mut state, 0.1).unwrap_err();
        match err {
            Error::Numeric(msg) => assert!(msg.contains("layer 1"), "{msg}"),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn polyak_endpoints_and_midpoint() {
        let mut rng = stream_rng(8, 0);
        let online = DenseNetwork::new(&[2, 2], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let zero = DenseNetwork::zeros(&[2, 2], Activation::Relu, Activation::Identity).unwrap();

        let mut target = zero.clone();
        polyak_update(&mut target, &online, 1.0).unwrap();
        assert_eq!(target.params_flat(), online.params_flat());

        let mut target = zero.clone();
        polyak_update(&mut target, &online, 0.0).unwrap();
        assert_eq!(target.params_flat(), zero.params_flat());

        let mut target = DenseNetwork::zeros(&[1, 1], Activation::Relu, Activation::Identity).unwrap();
        let mut online = target.clone();
        online.set_params_flat(&[2.0, 2.0]).unwrap();
        polyak_update(&mut target, &online, 0.5).unwrap();
        assert_eq!(target.params_flat(), vec![1.0, 1.0]);
    }

    #[test]
    fn polyak_rejects_architecture_mismatch() {
        let a = DenseNetwork::zeros(&[2, 3], Activation::Relu, Activation::Identity).unwrap();
        let mut b = DenseNetwork::zeros(&[2, 4], Activation::Relu, Activation::Identity).unwrap();
        assert!(matches!(polyak_update(&mut b, &a, 0.5), Err(Error::Config(_))));
    }

    #[test]
    fn cached_forward_replay_is_bit_exact() {
        let mut rng = stream_rng(21, 0);
        let net = DenseNetwork::new(&[4, 6, 3], Activation::Tanh, Activation::Sigmoid, &mut rng).unwrap();
        let input = [0.9, -0.1, 0.4, 0.0];
        let (out, cache) = net.forward(&input).unwrap();
        let (replay, _) = net.forward(cache.input()).unwrap();
        assert_eq!(out, replay);
        assert_eq!(cache.output(), replay.as_slice());
    }
}
