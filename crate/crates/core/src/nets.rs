//! Dense policy/value networks with hand-written backpropagation.
//!
//! A [`PolicyValueNet`] is a stack of tanh layers (the shared trunk) with two
//! linear heads on top: one producing action logits, one producing a scalar
//! state value. Everything is `f64`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Shape of a network: `layer_dims = [input, hidden.., trunk]`. A single
/// entry means the heads read the input directly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub layer_dims: Vec<usize>,
    pub num_actions: usize,
}

impl NetSpec {
    pub fn new(input: usize, hidden: &[usize], num_actions: usize) -> Self {
        let mut layer_dims = vec![input];
        layer_dims.extend_from_slice(hidden);
        NetSpec {
            layer_dims,
            num_actions,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.is_empty() {
            return Err(Error::config("layer_dims must not be empty"));
        }
        if let Some(i) = self.layer_dims.iter().position(|&d| d == 0) {
            return Err(Error::config(format!("layer_dims[{i}] must be positive")));
        }
        if self.num_actions == 0 {
            return Err(Error::config("num_actions must be positive"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn trunk_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn hidden(&self) -> &[usize] {
        &self.layer_dims[1..]
    }
}

/// One affine block. Weights are stored input-major: `weights[i * fan_out + j]`
/// connects input `i` to output `j`, so a one-hot input touches a single
/// contiguous row.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            fan_in,
            fan_out,
            weights: vec![0.0; fan_in * fan_out],
            biases: vec![0.0; fan_out],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat view index: weights first, then biases.
    pub fn get(&self, idx: usize) -> f64 {
        if idx < self.weights.len() {
            self.weights[idx]
        } else {
            self.biases[idx - self.weights.len()]
        }
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut f64 {
        let nw = self.weights.len();
        if idx < nw {
            &mut self.weights[idx]
        } else {
            &mut self.biases[idx - nw]
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.biases.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.biases.iter_mut())
    }

    fn same_shape(&self, other: &Dense) -> bool {
        self.fan_in == other.fan_in && self.fan_out == other.fan_out
    }

    /// `out = b + x W`. Zero inputs are skipped, which makes one-hot grid
    /// observations cheap.
    fn affine(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.biases);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.weights[i * self.fan_out..(i + 1) * self.fan_out];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
    }
}

/// Intermediate values from a forward pass, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct Activations {
    /// `layers[0]` is the input; `layers[l + 1]` is the output of hidden
    /// layer `l`. The last entry is the trunk.
    pub layers: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub value: f64,
}

impl Activations {
    pub fn trunk(&self) -> &[f64] {
        self.layers.last().unwrap()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyValueNet {
    spec: NetSpec,
    hidden: Vec<Dense>,
    policy: Dense,
    value: Dense,
}

impl PolicyValueNet {
    /// Network with every parameter set to zero.
    pub fn zeros(spec: &NetSpec) -> Result<Self> {
        spec.validate()?;
        let hidden = spec
            .layer_dims
            .windows(2)
            .map(|w| Dense::zeros(w[0], w[1]))
            .collect();
        Ok(PolicyValueNet {
            spec: spec.clone(),
            hidden,
            policy: Dense::zeros(spec.trunk_dim(), spec.num_actions),
            value: Dense::zeros(spec.trunk_dim(), 1),
        })
    }

    /// Deterministic initialisation: weights uniform in `±1/sqrt(fan_in)`,
    /// biases zero.
    pub fn init(spec: &NetSpec, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        let mut rng = rng::rng_from_seed(seed);
        for layer in net.layers_mut() {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            for w in layer.weights.iter_mut() {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    /// Assemble a network from explicit layers, checking every shape.
    pub fn from_layers(spec: NetSpec, layers: Vec<Dense>) -> Result<Self> {
        let template = Self::zeros(&spec)?;
        if layers.len() != template.num_layers() {
            return Err(Error::shape(format!(
                "expected {} layers, got {}",
                template.num_layers(),
                layers.len()
            )));
        }
        for (i, (got, want)) in layers.iter().zip(template.layers()).enumerate() {
            if !got.same_shape(want)
                || got.weights.len() != want.weights.len()
                || got.biases.len() != want.biases.len()
            {
                return Err(Error::shape(format!("layer {i} does not match spec")));
            }
        }
        let mut layers = layers;
        let value = layers.pop().unwrap();
        let policy = layers.pop().unwrap();
        Ok(PolicyValueNet {
            spec,
            hidden: layers,
            policy,
            value,
        })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn num_actions(&self) -> usize {
        self.spec.num_actions
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    /// Hidden layers, then the policy head, then the value head.
    pub fn num_layers(&self) -> usize {
        self.hidden.len() + 2
    }

    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.hidden
            .iter()
            .chain(std::iter::once(&self.policy))
            .chain(std::iter::once(&self.value))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.hidden
            .iter_mut()
            .chain(std::iter::once(&mut self.policy))
            .chain(std::iter::once(&mut self.value))
    }

    pub fn layer(&self, idx: usize) -> &Dense {
        let h = self.hidden.len();
        match idx {
            i if i < h => &self.hidden[i],
            i if i == h => &self.policy,
            _ => &self.value,
        }
    }

    pub fn layer_mut(&mut self, idx: usize) -> &mut Dense {
        let h = self.hidden.len();
        match idx {
            i if i < h => &mut self.hidden[i],
            i if i == h => &mut self.policy,
            _ => &mut self.value,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(Dense::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers().all(|l| l.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, observation: &[f64]) -> Result<()> {
        if observation.len() != self.input_dim() {
            return Err(Error::config(format!(
                "observation has length {}, network expects {}",
                observation.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Policy logits and state value for one observation.
    pub fn forward(&self, observation: &[f64]) -> Result<(Vec<f64>, f64)> {
        let acts = self.forward_cached(observation)?;
        Ok((acts.logits, acts.value))
    }

    pub fn forward_cached(&self, observation: &[f64]) -> Result<Activations> {
        self.check_input(observation)?;
        let mut layers = Vec::with_capacity(self.hidden.len() + 1);
        layers.push(observation.to_vec());
        for dense in &self.hidden {
            let mut out = vec![0.0; dense.fan_out];
            dense.affine(layers.last().unwrap(), &mut out);
            for v in out.iter_mut() {
                *v = v.tanh();
            }
            layers.push(out);
        }
        let trunk = layers.last().unwrap();
        let mut logits = vec![0.0; self.spec.num_actions];
        self.policy.affine(trunk, &mut logits);
        let mut value = [0.0];
        self.value.affine(trunk, &mut value);
        Ok(Activations {
            layers,
            logits,
            value: value[0],
        })
    }

    /// Gradient of `logits . d_logits + value * d_value` with respect to every
    /// parameter.
    pub fn backward(
        &self,
        observation: &[f64],
        d_logits: &[f64],
        d_value: f64,
    ) -> Result<GradientBuffer> {
        let acts = self.forward_cached(observation)?;
        let mut buf = GradientBuffer::zeros_like(self);
        self.backward_into(&acts, d_logits, d_value, &mut buf)?;
        Ok(buf)
    }

    /// Accumulate the same gradient as [`backward`](Self::backward) into
    /// `buf`, reusing cached activations.
    pub fn backward_into(
        &self,
        acts: &Activations,
        d_logits: &[f64],
        d_value: f64,
        buf: &mut GradientBuffer,
    ) -> Result<()> {
        if d_logits.len() != self.spec.num_actions {
            return Err(Error::shape(format!(
                "d_logits has length {}, policy head has {} outputs",
                d_logits.len(),
                self.spec.num_actions
            )));
        }
        if !buf.is_congruent(self) {
            return Err(Error::shape("gradient buffer does not match network"));
        }
        let h = self.hidden.len();
        let trunk = acts.trunk();

        let mut upstream = vec![0.0; self.spec.trunk_dim()];
        {
            let gp = &mut buf.layers[h];
            let a = self.spec.num_actions;
            for (k, &t) in trunk.iter().enumerate() {
                let row = &self.policy.weights[k * a..(k + 1) * a];
                let grow = &mut gp.weights[k * a..(k + 1) * a];
                let mut s = 0.0;
                for j in 0..a {
                    s += row[j] * d_logits[j];
                    grow[j] += t * d_logits[j];
                }
                upstream[k] = s + self.value.weights[k] * d_value;
            }
            for (b, &d) in gp.biases.iter_mut().zip(d_logits) {
                *b += d;
            }
            let gv = &mut buf.layers[h + 1];
            for (g, &t) in gv.weights.iter_mut().zip(trunk) {
                *g += t * d_value;
            }
            gv.biases[0] += d_value;
        }

        for l in (0..h).rev() {
            let dense = &self.hidden[l];
            let out = &acts.layers[l + 1];
            let input = &acts.layers[l];
            let delta: Vec<f64> = upstream
                .iter()
                .zip(out)
                .map(|(&g, &y)| g * (1.0 - y * y))
                .collect();
            let grad = &mut buf.layers[l];
            for (b, &d) in grad.biases.iter_mut().zip(&delta) {
                *b += d;
            }
            let fo = dense.fan_out;
            for (i, &xi) in input.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                for (g, &d) in grad.weights[i * fo..(i + 1) * fo].iter_mut().zip(&delta) {
                    *g += xi * d;
                }
            }
            if l > 0 {
                upstream = (0..dense.fan_in)
                    .map(|i| {
                        dense.weights[i * fo..(i + 1) * fo]
                            .iter()
                            .zip(&delta)
                            .map(|(w, d)| w * d)
                            .sum()
                    })
                    .collect();
            }
        }
        Ok(())
    }
}

/// Parameter-shaped accumulator. Also used for optimizer moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBuffer {
    layers: Vec<Dense>,
}

impl GradientBuffer {
    pub fn zeros_like(net: &PolicyValueNet) -> Self {
        GradientBuffer {
            layers: net
                .layers()
                .map(|l| Dense::zeros(l.fan_in, l.fan_out))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn is_congruent(&self, net: &PolicyValueNet) -> bool {
        self.layers.len() == net.num_layers()
            && self.layers.iter().zip(net.layers()).all(|(a, b)| a.same_shape(b))
    }

    pub fn zero(&mut self) {
        for l in &mut self.layers {
            l.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &GradientBuffer, scale: f64) -> Result<()> {
        if self.layers.len() != other.layers.len()
            || self.layers.iter().zip(&other.layers).any(|(a, b)| !a.same_shape(b))
        {
            return Err(Error::shape("gradient buffers differ in shape"));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Index of the first layer holding a non-finite entry.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.layers
            .iter()
            .position(|l| l.iter().any(|v| !v.is_finite()))
    }
}

/// RMSProp with per-parameter second-moment accumulators:
///
/// ```text
/// ms <- decay * ms + (1 - decay) * g^2
/// p  <- p - lr * g / (sqrt(ms) + eps)
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    accum: GradientBuffer,
}

impl RmsProp {
    pub const DEFAULT_DECAY: f64 = 0.99;
    pub const DEFAULT_EPSILON: f64 = 1e-6;

    pub fn new(net: &PolicyValueNet, learning_rate: f64) -> Self {
        Self::with_params(net, learning_rate, Self::DEFAULT_DECAY, Self::DEFAULT_EPSILON)
    }

    pub fn with_params(net: &PolicyValueNet, learning_rate: f64, decay: f64, epsilon: f64) -> Self {
        RmsProp {
            learning_rate,
            decay,
            epsilon,
            accum: GradientBuffer::zeros_like(net),
        }
    }

    pub fn accumulators(&self) -> &GradientBuffer {
        &self.accum
    }

    /// Apply one step. A non-finite gradient rejects the whole step and
    /// leaves both the network and the accumulators untouched.
    pub fn apply_update(&mut self, net: &mut PolicyValueNet, grads: &GradientBuffer) -> Result<()> {
        if !grads.is_congruent(net) || !self.accum.is_congruent(net) {
            return Err(Error::shape("gradient/optimizer state does not match network"));
        }
        if let Some(layer) = grads.first_non_finite() {
            return Err(Error::NonFinite {
                what: "gradient".into(),
                layer: Some(layer),
            });
        }
        let (decay, eps, lr) = (self.decay, self.epsilon, self.learning_rate);
        for (li, ((param, grad), ms)) in net
            .layers_mut()
            .zip(&grads.layers)
            .zip(&mut self.accum.layers)
            .enumerate()
        {
            for ((p, &g), m) in param.iter_mut().zip(grad.iter()).zip(ms.iter_mut()) {
                *m = decay * *m + (1.0 - decay) * g * g;
                *p -= lr * g / (m.sqrt() + eps);
            }
            if param.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "parameter after update".into(),
                    layer: Some(li),
                });
            }
        }
        Ok(())
    }
}
