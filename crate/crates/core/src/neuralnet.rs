//! Dense feed-forward networks with hand-written backpropagation.
//!
//! Parameters of all layers live in one flat vector. Layer `l` stores its
//! `out × in` weight matrix row-major, followed by its `out` biases. Gradient
//! buffers share this layout, which keeps the optimizers and checkpoints
//! trivial.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sigmoid;
use crate::rng::Seed;

const CHECKPOINT_MAGIC: &str = "COCOA-MLP 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Mse,
    Bce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub output_activation: OutputActivation,
    pub init_seed: u64,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation, output_activation: OutputActivation) -> Self {
        MlpSpec {
            layer_sizes,
            activation,
            output_activation,
            init_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::spec("an MLP needs at least an input and an output layer"));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::spec("layer sizes must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSpec {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 50,
            l2: 0.0,
            seed: 0,
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::spec("learning_rate must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::spec("batch_size must be at least 1"));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::spec("l2 must be non-negative"));
        }
        Ok(())
    }
}

/// A multilayer perceptron.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    output_activation: OutputActivation,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `acts[0]` is the input; `acts[l+1]` is the output of layer `l`.
    pub acts: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pub pre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Randomly initialized network: He-uniform weights for ReLU layers,
    /// Xavier-uniform for tanh (and for the output layer); zero biases.
    pub fn new(spec: &MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut net = Mlp::zeros(&spec.layer_sizes, spec.activation, spec.output_activation)?;
        let mut rng = Seed(spec.init_seed).derive("mlp-init").rng();
        let layers = net.num_layers();
        for l in 0..layers {
            let (fan_in, fan_out) = (net.sizes[l], net.sizes[l + 1]);
            let limit = match (spec.activation, l + 1 == layers) {
                (Activation::Relu, false) => (6.0 / fan_in as f64).sqrt(),
                _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            };
            let (w, _) = net.layer_offsets(l);
            for p in &mut net.params[w..w + fan_in * fan_out] {
                *p = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], activation: Activation, output_activation: OutputActivation) -> Result<Self> {
        MlpSpec::new(sizes.to_vec(), activation, output_activation).validate()?;
        Ok(Mlp {
            sizes: sizes.to_vec(),
            activation,
            output_activation,
            params: vec![0.0; param_count(sizes)],
        })
    }

    pub fn from_params(
        sizes: &[usize],
        activation: Activation,
        output_activation: OutputActivation,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut net = Mlp::zeros(sizes, activation, output_activation)?;
        if params.len() != net.params.len() {
            return Err(Error::DimensionMismatch {
                expected: net.params.len(),
                got: params.len(),
            });
        }
        net.params = params;
        Ok(net)
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

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Offsets of the weight block and the bias block of layer `l`.
    pub fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let start = param_count(&self.sizes[..=l]);
        (start, start + self.sizes[l] * self.sizes[l + 1])
    }

    /// Mask selecting weights (true) versus biases (false).
    fn weight_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.params.len()];
        for l in 0..self.num_layers() {
            let (w, b) = self.layer_offsets(l);
            mask[w..b].iter_mut().for_each(|m| *m = true);
        }
        mask
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.trace_unchecked(x).acts.pop().unwrap())
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        Ok(self.trace_unchecked(x))
    }

    fn trace_unchecked(&self, x: &[f64]) -> Trace {
        let layers = self.num_layers();
        let mut acts = Vec::with_capacity(layers + 1);
        let mut pre = Vec::with_capacity(layers);
        acts.push(x.to_vec());
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, b) = self.layer_offsets(l);
            let input = &acts[l];
            let z: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &self.params[w + o * n_in..w + (o + 1) * n_in];
                    self.params[b + o] + row.iter().zip(input).map(|(a, v)| a * v).sum::<f64>()
                })
                .collect();
            let a = if l + 1 == layers {
                match self.output_activation {
                    OutputActivation::Identity => z.clone(),
                    OutputActivation::Sigmoid => z.iter().map(|&v| sigmoid(v)).collect(),
                }
            } else {
                match self.activation {
                    Activation::Relu => z.iter().map(|&v| v.max(0.0)).collect(),
                    Activation::Tanh => z.iter().map(|v| v.tanh()).collect(),
                }
            };
            pre.push(z);
            acts.push(a);
        }
        Trace { acts, pre }
    }

    /// Converts `dL/d(output)` into `dL/d(output pre-activation)`.
    pub fn output_delta(&self, trace: &Trace, d_output: &[f64]) -> Vec<f64> {
        match self.output_activation {
            OutputActivation::Identity => d_output.to_vec(),
            OutputActivation::Sigmoid => trace
                .output()
                .iter()
                .zip(d_output)
                .map(|(p, g)| g * p * (1.0 - p))
                .collect(),
        }
    }

    /// Accumulates parameter gradients into `grads` given the gradient of
    /// the loss with respect to the last layer's pre-activation.
    pub fn backprop(&self, trace: &Trace, output_delta: &[f64], grads: &mut [f64]) {
        let mut delta = output_delta.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, b) = self.layer_offsets(l);
            let input = &trace.acts[l];
            for o in 0..n_out {
                let d = delta[o];
                grads[b + o] += d;
                if d != 0.0 {
                    let g = &mut grads[w + o * n_in..w + (o + 1) * n_in];
                    for (gi, v) in g.iter_mut().zip(input) {
                        *gi += d * v;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &self.params[w + o * n_in..w + (o + 1) * n_in];
                for (p, a) in prev.iter_mut().zip(row) {
                    *p += a * d;
                }
            }
            match self.activation {
                Activation::Relu => {
                    for (p, z) in prev.iter_mut().zip(&trace.pre[l - 1]) {
                        if *z <= 0.0 {
                            *p = 0.0;
                        }
                    }
                }
                Activation::Tanh => {
                    for (p, a) in prev.iter_mut().zip(&trace.acts[l]) {
                        *p *= 1.0 - a * a;
                    }
                }
            }
            delta = prev;
        }
    }

    /// Serializes to the versioned text checkpoint format.
    pub fn to_checkpoint(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{CHECKPOINT_MAGIC}").unwrap();
        let sizes: Vec<String> = self.sizes.iter().map(usize::to_string).collect();
        writeln!(s, "sizes {}", sizes.join(" ")).unwrap();
        let act = match self.activation {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        };
        let out = match self.output_activation {
            OutputActivation::Identity => "identity",
            OutputActivation::Sigmoid => "sigmoid",
        };
        writeln!(s, "activation {act}").unwrap();
        writeln!(s, "output {out}").unwrap();
        writeln!(s, "params {}", self.params.len()).unwrap();
        for p in &self.params {
            writeln!(s, "{}", crate::data::fmt_f64(*p)).unwrap();
        }
        s
    }

    /// Parses a checkpoint from the front of `lines`, consuming exactly the
    /// lines it owns.
    pub fn read_checkpoint<'a>(lines: &mut impl Iterator<Item = &'a str>) -> Result<Self> {
        let mut next = |what: &str| {
            lines
                .next()
                .map(str::trim)
                .ok_or_else(|| Error::Checkpoint(format!("missing {what}")))
        };
        if next("magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic header".into()));
        }
        let field = |line: &'a str, key: &str| -> Result<&'a str> {
            line.strip_prefix(key)
                .map(str::trim)
                .ok_or_else(|| Error::Checkpoint(format!("expected `{key}`")))
        };
        let sizes = field(next("sizes")?, "sizes")?
            .split_whitespace()
            .map(|v| v.parse::<usize>().map_err(|e| Error::Checkpoint(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let activation = match field(next("activation")?, "activation")? {
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            other => return Err(Error::Checkpoint(format!("unknown activation {other}"))),
        };
        let output = match field(next("output")?, "output")? {
            "identity" => OutputActivation::Identity,
            "sigmoid" => OutputActivation::Sigmoid,
            other => return Err(Error::Checkpoint(format!("unknown output activation {other}"))),
        };
        let count: usize = field(next("params")?, "params")?
            .parse()
            .map_err(|_| Error::Checkpoint("bad parameter count".into()))?;
        let params = (0..count)
            .map(|_| {
                next("parameter")?
                    .parse::<f64>()
                    .map_err(|e| Error::Checkpoint(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Mlp::from_params(&sizes, activation, output, params).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        Self::read_checkpoint(&mut text.lines())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_checkpoint()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&text)
    }
}

/// Mean loss over a batch for given network outputs (or, for BCE,
/// pre-activations) without touching gradients.
fn sample_loss(net: &Mlp, trace: &Trace, target: &[f64], loss: Loss) -> f64 {
    match loss {
        Loss::Mse => {
            trace
                .output()
                .iter()
                .zip(target)
                .map(|(y, t)| (y - t) * (y - t))
                .sum::<f64>()
                / net.output_dim() as f64
        }
        Loss::Bce => {
            let z = trace.pre.last().unwrap();
            z.iter()
                .zip(target)
                .map(|(&z, &t)| z.max(0.0) - t * z + (-z.abs()).exp().ln_1p())
                .sum::<f64>()
                / net.output_dim() as f64
        }
    }
}

fn check_batch(net: &Mlp, inputs: &[Vec<f64>], targets: &[Vec<f64>], loss: Loss) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::Empty("batch".into()));
    }
    if inputs.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: inputs.len(),
            got: targets.len(),
        });
    }
    for t in targets {
        if t.len() != net.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: net.output_dim(),
                got: t.len(),
            });
        }
    }
    if loss == Loss::Bce {
        if net.output_activation != OutputActivation::Sigmoid {
            return Err(Error::spec("binary cross-entropy requires a sigmoid output"));
        }
        if targets.iter().flatten().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::spec("binary cross-entropy targets must lie in [0, 1]"));
        }
    }
    Ok(())
}

/// Mean loss over the batch.
pub fn batch_loss(net: &Mlp, inputs: &[Vec<f64>], targets: &[Vec<f64>], loss: Loss) -> Result<f64> {
    check_batch(net, inputs, targets, loss)?;
    let mut total = 0.0;
    for (x, t) in inputs.iter().zip(targets) {
        total += sample_loss(net, &net.forward_trace(x)?, t, loss);
    }
    Ok(total / inputs.len() as f64)
}

/// Mean loss over the batch and its gradient with respect to every
/// parameter (flat layout).
///
/// MSE averages squared errors over samples and outputs. BCE is evaluated
/// on the sigmoid's pre-activation, so its gradient there is `p − t`.
pub fn backward(net: &Mlp, inputs: &[Vec<f64>], targets: &[Vec<f64>], loss: Loss) -> Result<(f64, Vec<f64>)> {
    check_batch(net, inputs, targets, loss)?;
    let mut grads = vec![0.0; net.num_params()];
    let mut total = 0.0;
    let scale = 1.0 / (inputs.len() * net.output_dim()) as f64;
    for (x, t) in inputs.iter().zip(targets) {
        let trace = net.forward_trace(x)?;
        total += sample_loss(net, &trace, t, loss);
        let delta = match loss {
            Loss::Mse => {
                let d_out: Vec<f64> = trace.output().iter().zip(t).map(|(y, t)| 2.0 * (y - t) * scale).collect();
                net.output_delta(&trace, &d_out)
            }
            Loss::Bce => trace.output().iter().zip(t).map(|(p, t)| (p - t) * scale).collect(),
        };
        net.backprop(&trace, &delta, &mut grads);
    }
    Ok((total / inputs.len() as f64, grads))
}

/// Per-coordinate comparison of [`backward`] against central finite
/// differences. Returns the largest relative error
/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(net: &Mlp, inputs: &[Vec<f64>], targets: &[Vec<f64>], loss: Loss, h: f64) -> Result<f64> {
    let (_, analytic) = backward(net, inputs, targets, loss)?;
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for k in 0..net.num_params() {
        let orig = probe.params[k];
        probe.params[k] = orig + h;
        let up = batch_loss(&probe, inputs, targets, loss)?;
        probe.params[k] = orig - h;
        let down = batch_loss(&probe, inputs, targets, loss)?;
        probe.params[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[k];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// First-order optimizer state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: i32,
}

impl Optimizer {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(kind: OptimizerKind, lr: f64, n: usize) -> Self {
        Optimizer {
            kind,
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            steps: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                self.steps += 1;
                let c1 = 1.0 - Self::BETA1.powi(self.steps);
                let c2 = 1.0 - Self::BETA2.powi(self.steps);
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                    *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= self.lr * m_hat / (v_hat.sqrt() + Self::EPS);
                }
            }
        }
    }
}

/// Result of [`train`]: the fitted network and mean training loss per epoch.
#[derive(Debug, Clone)]
pub struct Trained {
    pub net: Mlp,
    pub loss_trace: Vec<f64>,
}

/// Mini-batch training. Each epoch visits the samples in a seeded random
/// order. The L2 penalty applies to weights, not biases.
pub fn train(net: &Mlp, inputs: &[Vec<f64>], targets: &[Vec<f64>], loss: Loss, spec: &TrainSpec) -> Result<Trained> {
    spec.validate()?;
    check_batch(net, inputs, targets, loss)?;
    let mut net = net.clone();
    let mut opt = Optimizer::new(spec.optimizer, spec.learning_rate, net.num_params());
    let mask = net.weight_mask();
    let mut rng = Seed(spec.seed).derive("mlp-shuffle").rng();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut trace = Vec::with_capacity(spec.epochs);
    let mut bx = Vec::with_capacity(spec.batch_size);
    let mut by = Vec::with_capacity(spec.batch_size);
    for epoch in 0..spec.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(spec.batch_size) {
            bx.clear();
            by.clear();
            bx.extend(chunk.iter().map(|&i| inputs[i].clone()));
            by.extend(chunk.iter().map(|&i| targets[i].clone()));
            let (l, mut g) = backward(&net, &bx, &by, loss)?;
            if !l.is_finite() {
                return Err(Error::Divergence { epoch: epoch + 1 });
            }
            total += l * chunk.len() as f64;
            if spec.l2 > 0.0 {
                for ((gi, p), w) in g.iter_mut().zip(&net.params).zip(&mask) {
                    if *w {
                        *gi += spec.l2 * p;
                    }
                }
            }
            opt.step(&mut net.params, &g);
        }
        let mean = total / inputs.len() as f64;
        if !mean.is_finite() || net.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence { epoch: epoch + 1 });
        }
        trace.push(mean);
    }
    Ok(Trained { net, loss_trace: trace })
}
