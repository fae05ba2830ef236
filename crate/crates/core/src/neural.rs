//! Small dense feed-forward networks with hand-written backpropagation.
//!
//! Networks here are tiny (a few thousand parameters) and evaluated one
//! sample at a time, so plain `Vec<f64>` storage is all that is needed.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CHECKPOINT_MAGIC: &[u8; 4] = b"AGNT";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    0.01 * x
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative given the pre-activation `x` and the output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.01
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::LeakyRelu => 1,
            Activation::Tanh => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => Activation::Relu,
            1 => Activation::LeakyRelu,
            2 => Activation::Tanh,
            t => return Err(Error::Checkpoint(format!("unknown activation tag {t}"))),
        })
    }
}

/// How the last affine layer is turned into the network output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    Linear,
    /// `bound * tanh(y)`, strictly inside `(-bound, bound)`.
    TanhScaled(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.inputs).zip(&self.biases) {
            out.push(row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentNet {
    layers: Vec<Dense>,
    activation: Activation,
    head: OutputHead,
}

/// Gradient accumulators congruent with an [`AgentNet`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradBuffer {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl GradBuffer {
    pub fn zeros_like(net: &AgentNet) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    pub fn clear(&mut self) {
        self.weights.iter_mut().flatten().for_each(|g| *g = 0.0);
        self.biases.iter_mut().flatten().for_each(|g| *g = 0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .flatten()
            .chain(self.biases.iter().flatten())
            .all(|g| g.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .flatten()
            .chain(self.biases.iter().flatten())
            .fold(0.0, |m, g| m.max(g.abs()))
    }

    /// Same order as [`AgentNet::params_mut`]: each layer's weights, then
    /// its biases.
    fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b))
    }
}

/// Per-layer values kept by [`AgentNet::forward_cached`] for backprop.
#[derive(Clone, Debug, Default)]
pub struct ForwardCache {
    /// Input of every layer; `inputs[0]` is the network input.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of every layer.
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

impl AgentNet {
    /// All-zero parameters.
    pub fn zeros(layer_sizes: &[usize], activation: Activation, head: OutputHead) -> Self {
        assert!(layer_sizes.len() >= 2, "a network needs an input and an output width");
        let layers = layer_sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Self {
            layers,
            activation,
            head,
        }
    }

    /// Uniform `+-1/sqrt(fan_in)` initialization; the last layer instead uses
    /// `+-final_scale` when given.
    pub fn new<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        activation: Activation,
        head: OutputHead,
        final_scale: Option<f64>,
        rng: &mut R,
    ) -> Self {
        let mut net = Self::zeros(layer_sizes, activation, head);
        let n = net.layers.len();
        for (k, layer) in net.layers.iter_mut().enumerate() {
            let bound = match final_scale {
                Some(s) if k + 1 == n => s,
                _ => 1.0 / (layer.inputs as f64).sqrt(),
            };
            for p in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *p = rng.random_range(-bound..=bound);
            }
        }
        net
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].inputs];
        sizes.extend(self.layers.iter().map(|l| l.outputs));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn head(&self) -> OutputHead {
        self.head
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases))
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(input)?.output)
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache> {
        self.check_input(input)?;
        let n = self.layers.len();
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            output: Vec::new(),
        };
        let mut x = input.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.outputs);
            layer.affine(&x, &mut z);
            let y: Vec<f64> = if k + 1 < n {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            } else {
                match self.head {
                    OutputHead::Linear => z.clone(),
                    OutputHead::TanhScaled(g) => z.iter().map(|v| g * v.tanh()).collect(),
                }
            };
            cache.inputs.push(x);
            cache.pre.push(z);
            x = y;
        }
        cache.output = x;
        Ok(cache)
    }

    /// Backpropagates `upstream = dL/d(output)`; returns parameter gradients
    /// and `dL/d(input)`.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<(GradBuffer, Vec<f64>)> {
        let mut grads = GradBuffer::zeros_like(self);
        let dx = self.backward_into(cache, upstream, &mut grads)?;
        Ok((grads, dx))
    }

    /// As [`AgentNet::backward`], accumulating into `grads`.
    pub fn backward_into(&self, cache: &ForwardCache, upstream: &[f64], grads: &mut GradBuffer) -> Result<Vec<f64>> {
        if upstream.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "upstream gradient",
                expected: self.output_dim(),
                actual: upstream.len(),
            });
        }
        if cache.pre.len() != self.layers.len() {
            return Err(Error::DimensionMismatch {
                context: "forward cache",
                expected: self.layers.len(),
                actual: cache.pre.len(),
            });
        }
        let n = self.layers.len();
        let mut delta: Vec<f64> = match self.head {
            OutputHead::Linear => upstream.to_vec(),
            OutputHead::TanhScaled(g) => upstream
                .iter()
                .zip(&cache.pre[n - 1])
                .map(|(u, z)| {
                    let t = z.tanh();
                    u * g * (1.0 - t * t)
                })
                .collect(),
        };
        for k in (0..n).rev() {
            let layer = &self.layers[k];
            let x = &cache.inputs[k];
            let gw = &mut grads.weights[k];
            let gb = &mut grads.biases[k];
            let mut dx = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                gb[o] += d;
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                let grow = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                for j in 0..layer.inputs {
                    grow[j] += d * x[j];
                    dx[j] += d * row[j];
                }
            }
            if k > 0 {
                let pre = &cache.pre[k - 1];
                for (j, d) in dx.iter_mut().enumerate() {
                    *d *= self.activation.derivative(pre[j], x[j]);
                }
            }
            delta = dx;
        }
        Ok(delta)
    }

    /// `target <- tau * online + (1 - tau) * target`, per parameter.
    pub fn blend_from(&mut self, online: &AgentNet, tau: f64) {
        if tau == 1.0 {
            self.clone_from(online);
            return;
        }
        for (t, o) in self.params_mut().zip(online.params()) {
            *t = tau * o + (1.0 - tau) * *t;
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 8 * self.n_params());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(self.activation.tag());
        match self.head {
            OutputHead::Linear => {
                out.push(0);
                out.extend_from_slice(&0f64.to_le_bytes());
            }
            OutputHead::TanhScaled(g) => {
                out.push(1);
                out.extend_from_slice(&g.to_le_bytes());
            }
        }
        let sizes = self.layer_sizes();
        out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
        for s in sizes {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        for p in self.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let activation = Activation::from_tag(r.u8()?)?;
        let head_tag = r.u8()?;
        let bound = r.f64()?;
        let head = match head_tag {
            0 => OutputHead::Linear,
            1 => OutputHead::TanhScaled(bound),
            t => return Err(Error::Checkpoint(format!("unknown head tag {t}"))),
        };
        let n = r.u32()? as usize;
        if n < 2 {
            return Err(Error::Checkpoint(format!("{n} layer sizes")));
        }
        let sizes = (0..n)
            .map(|_| r.u32().map(|s| s as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut net = Self::zeros(&sizes, activation, head);
        for p in net.params_mut() {
            *p = r.f64()?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub(crate) struct ByteReader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Checkpoint("truncated".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn check_shapes(net: &AgentNet, grads: &GradBuffer) -> Result<()> {
    let ok = grads.weights.len() == net.layers.len()
        && net
            .layers
            .iter()
            .enumerate()
            .all(|(k, l)| grads.weights[k].len() == l.weights.len() && grads.biases[k].len() == l.biases.len());
    if ok {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context: "gradient buffer",
            expected: net.n_params(),
            actual: grads.iter().count(),
        })
    }
}

/// Plain gradient step `p <- p - lr * g`. Non-finite gradients leave the
/// network untouched.
pub fn sgd_step(net: &mut AgentNet, grads: &GradBuffer, lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::Precondition(format!("learning rate {lr} must be positive")));
    }
    check_shapes(net, grads)?;
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    for (p, g) in net.params_mut().zip(grads.iter()) {
        *p -= lr * g;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(net: &AgentNet) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; net.n_params()],
            v: vec![0.0; net.n_params()],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

/// Optimizer bound to one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Optimizer {
    Sgd,
    Adam(AdamState),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, net: &AgentNet) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(net)),
        }
    }

    pub fn step(&mut self, net: &mut AgentNet, grads: &GradBuffer, lr: f64) -> Result<()> {
        match self {
            Optimizer::Sgd => sgd_step(net, grads, lr),
            Optimizer::Adam(s) => {
                if !(lr > 0.0) {
                    return Err(Error::Precondition(format!("learning rate {lr} must be positive")));
                }
                check_shapes(net, grads)?;
                if !grads.is_finite() {
                    return Err(Error::NonFinite("gradient"));
                }
                s.step += 1;
                let c1 = 1.0 - s.beta1.powi(s.step as i32);
                let c2 = 1.0 - s.beta2.powi(s.step as i32);
                for (((p, g), m), v) in net
                    .params_mut()
                    .zip(grads.iter())
                    .zip(s.m.iter_mut())
                    .zip(s.v.iter_mut())
                {
                    *m = s.beta1 * *m + (1.0 - s.beta1) * g;
                    *v = s.beta2 * *v + (1.0 - s.beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + s.eps);
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_net_with_tanh_head_outputs_zero() {
        let net = AgentNet::zeros(&[3, 8, 1], Activation::Relu, OutputHead::TanhScaled(1.5));
        assert_eq!(net.forward(&[1.0, -4.0, 9.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn tanh_head_saturates_at_bound() {
        let mut net = AgentNet::zeros(&[1, 1], Activation::Relu, OutputHead::TanhScaled(1.5));
        net.layers_mut()[0].biases[0] = 50.0;
        let out = net.forward(&[0.0]).unwrap()[0];
        assert!((out - 1.5).abs() < 1e-6);
        assert!(out <= 1.5);
    }

    #[test]
    fn identity_linear_net() {
        let mut net = AgentNet::zeros(&[3, 3], Activation::Relu, OutputHead::Linear);
        for k in 0..3 {
            net.layers_mut()[0].weights[k * 3 + k] = 1.0;
        }
        assert_eq!(net.forward(&[0.5, -2.0, 7.0]).unwrap(), vec![0.5, -2.0, 7.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let net = AgentNet::zeros(&[3, 2], Activation::Relu, OutputHead::Linear);
        assert!(matches!(net.forward(&[1.0]), Err(Error::DimensionMismatch { .. })));
        let cache = net.forward_cached(&[1.0, 2.0, 3.0]).unwrap();
        assert!(net.backward(&cache, &[1.0]).is_err());
    }

    #[test]
    fn linear_layer_weight_grad_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = AgentNet::new(&[3, 2], Activation::Relu, OutputHead::Linear, None, &mut rng);
        let x = [0.3, -1.2, 2.0];
        let g = [0.7, -0.4];
        let cache = net.forward_cached(&x).unwrap();
        let (grads, dx) = net.backward(&cache, &g).unwrap();
        for o in 0..2 {
            for j in 0..3 {
                assert_relative_eq!(grads.weights[0][o * 3 + j], g[o] * x[j]);
            }
            assert_relative_eq!(grads.biases[0][o], g[o]);
        }
        let w = &net.layers()[0].weights;
        for j in 0..3 {
            assert_relative_eq!(dx[j], g[0] * w[j] + g[1] * w[3 + j], epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = AgentNet::new(
            &[4, 6, 6, 2],
            Activation::Tanh,
            OutputHead::TanhScaled(2.0),
            None,
            &mut rng,
        );
        let cache = net.forward_cached(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let (grads, dx) = net.backward(&cache, &[0.0, 0.0]).unwrap();
        assert_eq!(grads.max_abs(), 0.0);
        assert!(dx.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn sgd_examples() {
        let mut net = AgentNet::zeros(&[1, 1], Activation::Relu, OutputHead::Linear);
        net.layers_mut()[0].weights[0] = 1.0;
        let mut g = GradBuffer::zeros_like(&net);
        g.weights[0][0] = 2.0;
        sgd_step(&mut net, &g, 0.1).unwrap();
        assert_relative_eq!(net.layers()[0].weights[0], 0.8, epsilon = 1e-15);

        let before = net.clone();
        sgd_step(&mut net, &g, 1e-30).unwrap();
        assert!((net.layers()[0].weights[0] - before.layers()[0].weights[0]).abs() < 1e-20);

        g.biases[0][0] = f64::NAN;
        let before = net.clone();
        assert!(matches!(sgd_step(&mut net, &g, 0.1), Err(Error::NonFinite(_))));
        assert_eq!(net, before);
    }

    #[test]
    fn sgd_moves_each_parameter_by_its_own_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = AgentNet::new(&[3, 4, 2, 1], Activation::Tanh, OutputHead::Linear, None, &mut rng);
        let cache = net.forward_cached(&[0.2, -0.7, 1.1]).unwrap();
        let (g, _) = net.backward(&cache, &[1.0]).unwrap();
        let before: Vec<f64> = net.params().copied().collect();
        sgd_step(&mut net, &g, 0.1).unwrap();
        let mut k = 0;
        for (layer, (gw, gb)) in net.layers().iter().zip(g.weights.iter().zip(&g.biases)) {
            for (p, d) in layer.weights.iter().chain(&layer.biases).zip(gw.iter().chain(gb)) {
                assert_relative_eq!(*p, before[k] - 0.1 * d, epsilon = 1e-15);
                k += 1;
            }
        }
        assert_eq!(k, before.len());
    }

    #[test]
    fn adam_rejects_nan_and_moves_against_gradient() {
        let mut net = AgentNet::zeros(&[1, 1], Activation::Relu, OutputHead::Linear);
        let mut opt = Optimizer::new(OptimizerKind::Adam, &net);
        let mut g = GradBuffer::zeros_like(&net);
        g.weights[0][0] = 5.0;
        opt.step(&mut net, &g, 0.01).unwrap();
        // first Adam step has magnitude lr regardless of gradient scale
        assert_relative_eq!(net.layers()[0].weights[0], -0.01, epsilon = 1e-9);
        g.weights[0][0] = f64::INFINITY;
        assert!(opt.step(&mut net, &g, 0.01).is_err());
    }

    #[test]
    fn blend_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let online = AgentNet::new(&[2, 4, 1], Activation::Relu, OutputHead::Linear, None, &mut rng);
        let mut target = AgentNet::zeros(&[2, 4, 1], Activation::Relu, OutputHead::Linear);
        target.blend_from(&online, 1.0);
        assert_eq!(target, online);

        let mut a = AgentNet::zeros(&[1, 1], Activation::Relu, OutputHead::Linear);
        let mut b = a.clone();
        b.layers_mut()[0].weights[0] = 1.0;
        a.blend_from(&b, 0.01);
        assert_relative_eq!(a.layers()[0].weights[0], 0.01);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = AgentNet::new(
            &[3, 5, 5, 1],
            Activation::LeakyRelu,
            OutputHead::TanhScaled(0.5),
            Some(1e-3),
            &mut rng,
        );
        let bytes = net.to_bytes();
        let back = AgentNet::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert!(back.params().zip(net.params()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(AgentNet::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(AgentNet::from_bytes(&bad).is_err());
    }

    #[test]
    fn deterministic_updates() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            let mut net = AgentNet::new(&[2, 8, 1], Activation::Relu, OutputHead::Linear, None, &mut rng);
            let mut opt = Optimizer::new(OptimizerKind::Adam, &net);
            for k in 0..20 {
                let x = [k as f64 * 0.1, 1.0 - k as f64 * 0.05];
                let cache = net.forward_cached(&x).unwrap();
                let (g, _) = net.backward(&cache, &[cache.output()[0] - 1.0]).unwrap();
                opt.step(&mut net, &g, 1e-2).unwrap();
            }
            net.to_bytes()
        };
        assert_eq!(run(), run());
    }
}
