//! Minimal dense network with exact manual backpropagation.
//!
//! Layers are stored row-major with weight shape `(outputs, inputs)`. Hidden
//! layers use ReLU and the final layer emits raw logits. All reductions run in
//! a fixed order, so forward, backward and optimizer steps are bit-for-bit
//! deterministic for identical inputs.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Floor applied to probabilities before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged rows"));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// Gather the given rows into a new matrix, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    inputs: usize,
    outputs: usize,
    /// `outputs x inputs`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl Layer {
    pub fn new(
        inputs: usize,
        outputs: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(Error::invalid("layer dimensions must be positive"));
        }
        if weights.len() != inputs * outputs || bias.len() != outputs {
            return Err(Error::invalid(format!(
                "layer {inputs}->{outputs} given {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite layer parameter"));
        }
        Ok(Layer {
            inputs,
            outputs,
            weights,
            bias,
            activation,
        })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot(inputs: usize, outputs: usize, activation: Activation, rng: &mut Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Layer {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    fn apply(&self, input: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(input.rows, self.outputs);
        for i in 0..input.rows {
            let x = input.row(i);
            let z = out.row_mut(i);
            for (o, zo) in z.iter_mut().enumerate() {
                let w = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                let v = dot(w, x) + self.bias[o];
                *zo = match self.activation {
                    Activation::Relu => v.max(0.0),
                    Activation::Identity => v,
                };
            }
        }
        out
    }
}

/// Parameter-shaped buffers: gradients or momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerParams>,
}

impl Gradients {
    fn zeros_like(net: &Network) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerParams {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    fn congruent(&self, net: &Network) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weights.len() == l.weights.len() && g.bias.len() == l.bias.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    momentum: Gradients,
}

impl Network {
    /// Assemble a network from explicit layers. Momentum starts at zero.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let last = layers
            .last()
            .ok_or_else(|| Error::invalid("network needs at least one layer"))?;
        if last.activation != Activation::Identity {
            return Err(Error::invalid("final layer must emit identity logits"));
        }
        if last.outputs < 2 {
            return Err(Error::invalid("final layer must produce at least 2 logits"));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::invalid(format!(
                    "layer output {} does not feed next layer input {}",
                    pair[0].outputs, pair[1].inputs
                )));
            }
        }
        let mut net = Network {
            layers,
            momentum: Gradients { layers: Vec::new() },
        };
        net.momentum = Gradients::zeros_like(&net);
        Ok(net)
    }

    /// ReLU multilayer perceptron `input -> hidden... -> classes`.
    pub fn mlp(input: usize, hidden: &[usize], classes: usize, rng: &mut Rng) -> Result<Self> {
        if input == 0 || hidden.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(classes);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 2 == dims.len() {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                Layer::glorot(w[0], w[1], act, rng)
            })
            .collect();
        Network::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn momentum(&self) -> &Gradients {
        &self.momentum
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn classes(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn check_input(&self, features: &Matrix) -> Result<()> {
        if features.cols != self.input_dim() {
            return Err(Error::invalid(format!(
                "features have {} columns, network expects {}",
                features.cols,
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Post-activation outputs of every layer, preceded by the input.
    fn activations(&self, features: &Matrix) -> Vec<Matrix> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(features.clone());
        for layer in &self.layers {
            let next = layer.apply(acts.last().expect("nonempty"));
            acts.push(next);
        }
        acts
    }

    /// Serialize to the flat snapshot layout (see [`Network::from_bytes`]).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.parameter_count());
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&(l.inputs as u32).to_le_bytes());
            out.extend_from_slice(&(l.outputs as u32).to_le_bytes());
            out.push(match l.activation {
                Activation::Identity => 0,
                Activation::Relu => 1,
            });
        }
        for l in &self.layers {
            for v in l.weights.iter().chain(&l.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parse a snapshot.
    ///
    /// Layout, all integers little-endian:
    ///
    /// ```text
    /// b"CFNN"                          magic
    /// u32                              layer count L
    /// L x (u32 inputs, u32 outputs, u8 activation)   0 = identity, 1 = relu
    /// L x (f64 weights[outputs*inputs] row-major, f64 bias[outputs])
    /// ```
    ///
    /// Momentum buffers are not stored; a loaded network starts with zero
    /// momentum.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = ByteCursor { bytes, pos: 0 };
        if cur.take(4)? != SNAPSHOT_MAGIC {
            return Err(Error::invalid("snapshot magic mismatch"));
        }
        let count = cur.u32()? as usize;
        if count == 0 || count > 1024 {
            return Err(Error::invalid(format!("implausible layer count {count}")));
        }
        let mut shapes = Vec::with_capacity(count);
        for _ in 0..count {
            let inputs = cur.u32()? as usize;
            let outputs = cur.u32()? as usize;
            let act = match cur.take(1)?[0] {
                0 => Activation::Identity,
                1 => Activation::Relu,
                other => {
                    return Err(Error::invalid(format!("unknown activation tag {other}")));
                }
            };
            shapes.push((inputs, outputs, act));
        }
        let mut layers = Vec::with_capacity(count);
        for (inputs, outputs, act) in shapes {
            let weights = cur.f64s(inputs * outputs)?;
            let bias = cur.f64s(outputs)?;
            layers.push(Layer::new(inputs, outputs, weights, bias, act)?);
        }
        if cur.pos != bytes.len() {
            return Err(Error::invalid("trailing bytes after snapshot"));
        }
        Network::new(layers)
    }
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"CFNN";

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::invalid(format!(
                "snapshot truncated at byte {}",
                self.pos
            ))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::invalid("size overflow"))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

/// SGD hyper-parameters and the cosine schedule horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub total_epochs: usize,
    pub lr_decay_factor: f64,
}

impl OptimizerConfig {
    pub fn new(
        lr0: f64,
        momentum: f64,
        weight_decay: f64,
        total_epochs: usize,
        lr_decay_factor: f64,
    ) -> Result<Self> {
        let cfg = OptimizerConfig {
            lr0,
            momentum,
            weight_decay,
            total_epochs,
            lr_decay_factor,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::invalid(format!(
                "lr0 must be positive, got {}",
                self.lr0
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid(format!(
                "weight decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        if !(self.lr_decay_factor >= 1.0 && self.lr_decay_factor.is_finite()) {
            return Err(Error::invalid(format!(
                "lr decay factor must be >= 1, got {}",
                self.lr_decay_factor
            )));
        }
        Ok(())
    }

    pub fn lr_min(&self) -> f64 {
        self.lr0 / self.lr_decay_factor
    }
}

impl Default for OptimizerConfig {
    /// SGD with momentum 0.9, weight decay 5e-4, lr 0.02 annealed by a
    /// factor of 100 over 300 epochs.
    fn default() -> Self {
        OptimizerConfig {
            lr0: 0.02,
            momentum: 0.9,
            weight_decay: 5e-4,
            total_epochs: 300,
            lr_decay_factor: 100.0,
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.len() < 2 {
        return Err(Error::invalid("softmax needs at least two logits"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite logit"));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// `-ln(max(probs[label], PROB_FLOOR))`.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    let p = probs.get(label).ok_or_else(|| {
        Error::invalid(format!(
            "label {label} out of range for {} classes",
            probs.len()
        ))
    })?;
    Ok(clamped_nll(*p))
}

#[inline]
pub(crate) fn clamped_nll(p: f64) -> f64 {
    -p.max(PROB_FLOOR).ln()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Logits for every row of `features`.
pub fn forward(net: &Network, features: &Matrix) -> Result<Matrix> {
    net.check_input(features)?;
    let mut acts = net.activations(features);
    Ok(acts.pop().expect("at least one layer"))
}

/// Softmax probabilities for every row of `features`.
pub fn predict_proba(net: &Network, features: &Matrix) -> Result<Matrix> {
    let mut logits = forward(net, features)?;
    for i in 0..logits.rows {
        softmax_in_place(logits.row_mut(i));
    }
    Ok(logits)
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::invalid(format!(
            "{} labels for {rows} feature rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    Ok(())
}

/// Gradient of the mean cross-entropy over the batch, and that mean loss.
pub fn backward(net: &Network, features: &Matrix, labels: &[usize]) -> Result<(Gradients, f64)> {
    net.check_input(features)?;
    let m = features.rows;
    if m == 0 {
        return Err(Error::invalid("empty batch"));
    }
    check_labels(labels, m, net.classes())?;

    let acts = net.activations(features);
    let mut delta = acts.last().expect("logits").clone();
    let scale = 1.0 / m as f64;
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = delta.row_mut(i);
        softmax_in_place(row);
        loss += clamped_nll(row[y]);
        row[y] -= 1.0;
        for v in row.iter_mut() {
            *v *= scale;
        }
    }

    let mut grads = Gradients::zeros_like(net);
    for l in (0..net.layers.len()).rev() {
        let layer = &net.layers[l];
        let input = &acts[l];
        let g = &mut grads.layers[l];
        for i in 0..m {
            let d = delta.row(i);
            let a = input.row(i);
            for (o, &dv) in d.iter().enumerate() {
                if dv != 0.0 {
                    axpy(
                        dv,
                        a,
                        &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs],
                    );
                }
                g.bias[o] += dv;
            }
        }
        if l == 0 {
            break;
        }
        let below_relu = net.layers[l - 1].activation == Activation::Relu;
        let mut prev = Matrix::zeros(m, layer.inputs);
        for i in 0..m {
            let d = delta.row(i);
            let p = prev.row_mut(i);
            for (o, &dv) in d.iter().enumerate() {
                if dv != 0.0 {
                    axpy(
                        dv,
                        &layer.weights[o * layer.inputs..(o + 1) * layer.inputs],
                        p,
                    );
                }
            }
            if below_relu {
                for (pv, &av) in p.iter_mut().zip(input.row(i)) {
                    if av <= 0.0 {
                        *pv = 0.0;
                    }
                }
            }
        }
        delta = prev;
    }
    Ok((grads, loss * scale))
}

/// One SGD step with coupled weight decay and heavy-ball momentum:
/// `buf = momentum * buf + grad + weight_decay * param; param -= lr * buf`.
pub fn sgd_step(
    net: &mut Network,
    grads: &Gradients,
    lr: f64,
    cfg: &OptimizerConfig,
) -> Result<()> {
    if !grads.congruent(net) {
        return Err(Error::invalid("gradient shapes do not match network"));
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::invalid(format!(
            "learning rate must be nonnegative, got {lr}"
        )));
    }
    for ((layer, g), buf) in net
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(net.momentum.layers.iter_mut())
    {
        update(&mut layer.weights, &g.weights, &mut buf.weights, lr, cfg);
        update(&mut layer.bias, &g.bias, &mut buf.bias, lr, cfg);
    }
    Ok(())
}

fn update(params: &mut [f64], grad: &[f64], buf: &mut [f64], lr: f64, cfg: &OptimizerConfig) {
    for ((p, &g), b) in params.iter_mut().zip(grad).zip(buf.iter_mut()) {
        *b = cfg.momentum * *b + g + cfg.weight_decay * *p;
        *p -= lr * *b;
    }
}

/// Cosine annealing from `lr0` at epoch 0 to `lr0 / lr_decay_factor` at
/// `total_epochs`.
pub fn cosine_lr(epoch: usize, cfg: &OptimizerConfig) -> Result<f64> {
    if epoch > cfg.total_epochs {
        return Err(Error::invalid(format!(
            "epoch {epoch} beyond schedule horizon {}",
            cfg.total_epochs
        )));
    }
    if cfg.total_epochs == 0 {
        return Ok(cfg.lr0);
    }
    let lr_min = cfg.lr_min();
    let phase = std::f64::consts::PI * epoch as f64 / cfg.total_epochs as f64;
    // written from lr0 down so that epoch 0 returns lr0 exactly
    Ok(cfg.lr0 - (cfg.lr0 - lr_min) * (1.0 - phase.cos()) / 2.0)
}

/// Dot product with four independent accumulators, combined in a fixed order.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;

    fn naive_forward(net: &Network, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for l in net.layers() {
            let mut z = vec![0.0; l.outputs()];
            for o in 0..l.outputs() {
                let mut s = l.bias()[o];
                for j in 0..l.inputs() {
                    s += l.weights()[o * l.inputs() + j] * a[j];
                }
                z[o] = if l.activation() == Activation::Relu {
                    s.max(0.0)
                } else {
                    s
                };
            }
            a = z;
        }
        a
    }

    fn mean_loss(net: &Network, x: &Matrix, y: &[usize]) -> f64 {
        let p = predict_proba(net, x).unwrap();
        y.iter()
            .enumerate()
            .map(|(i, &l)| -p.row(i)[l].ln())
            .sum::<f64>()
            / y.len() as f64
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax(&[1.0, 2.0, 3.0]).unwrap();
        // exp-normalize evaluated in extended precision
        let expected = [
            0.090_030_573_170_380_46,
            0.244_728_471_054_797_6,
            0.665_240_955_774_821_9,
        ];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
        let shifted = softmax(&[101.0, 102.0, 103.0]).unwrap();
        for (a, b) in p.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(softmax(&[1.0, f64::NAN]).is_err());
        assert!(softmax(&[1.0]).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[0.0, 1.0, 0.0], 1).unwrap(), 0.0);
        let u = cross_entropy(&[0.25; 4], 2).unwrap();
        assert!((u - 4f64.ln()).abs() < 1e-15);
        let v = cross_entropy(&[0.1, 0.9], 0).unwrap();
        assert!((v - std::f64::consts::LN_10).abs() < 1e-14);
        assert!(cross_entropy(&[1.0, 0.0], 1).unwrap().is_finite());
        assert!(cross_entropy(&[0.5, 0.5], 2).is_err());
    }

    #[test]
    fn zero_and_identity_nets() {
        let zero = Network::new(vec![Layer::new(
            3,
            2,
            vec![0.0; 6],
            vec![0.0; 2],
            Activation::Identity,
        )
        .unwrap()])
        .unwrap();
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.5, 0.5]]).unwrap();
        assert!(forward(&zero, &x)
            .unwrap()
            .as_slice()
            .iter()
            .all(|&v| v == 0.0));

        let ident = Network::new(vec![Layer::new(
            2,
            2,
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.0; 2],
            Activation::Identity,
        )
        .unwrap()])
        .unwrap();
        let x = Matrix::from_rows(&[vec![1.5, -2.0], vec![0.0, 7.0]]).unwrap();
        assert_eq!(forward(&ident, &x).unwrap(), x);

        let bad = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(forward(&ident, &bad).is_err());
    }

    #[test]
    fn forward_matches_naive_matmul() {
        let mut rng = stream(11, Stream::Init, 0);
        let net = Network::mlp(5, &[7], 3, &mut rng).unwrap();
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..5).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let logits = forward(&net, &x).unwrap();
        for (i, r) in rows.iter().enumerate() {
            for (a, b) in logits.row(i).iter().zip(naive_forward(&net, r)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn network_invariants() {
        let l1 = Layer::new(2, 3, vec![0.0; 6], vec![0.0; 3], Activation::Relu).unwrap();
        let l2 = Layer::new(4, 2, vec![0.0; 8], vec![0.0; 2], Activation::Identity).unwrap();
        assert!(Network::new(vec![l1.clone(), l2]).is_err());
        let relu_out = Layer::new(3, 2, vec![0.0; 6], vec![0.0; 2], Activation::Relu).unwrap();
        assert!(Network::new(vec![l1, relu_out]).is_err());
        let mut rng = stream(1, Stream::Init, 0);
        let net = Network::mlp(4, &[8, 8], 3, &mut rng).unwrap();
        assert!(net.momentum().layers.iter().all(|b| b
            .weights
            .iter()
            .chain(&b.bias)
            .all(|&v| v == 0.0)));
        assert_eq!(net.parameter_count(), 4 * 8 + 8 + 8 * 8 + 8 + 8 * 3 + 3);
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = stream(2, Stream::Init, 0);
        let l = Layer::glorot(10, 6, Activation::Relu, &mut rng);
        let lim = (6.0f64 / 16.0).sqrt();
        assert!(l.weights().iter().all(|w| w.abs() <= lim));
        assert!(l.bias().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        for case in 0..20u32 {
            let mut rng = stream(100 + case as u64, Stream::Init, 0);
            let mut net = Network::mlp(4, &[6, 5], 3, &mut rng).unwrap();
            for l in net.layers_mut() {
                for b in l.bias_mut() {
                    *b = rng.random_range(-0.5..0.5);
                }
            }
            let x = Matrix::from_vec(6, 4, (0..24).map(|_| rng.random_range(-1.0..1.0)).collect())
                .unwrap();
            let y: Vec<usize> = (0..6).map(|_| rng.random_range(0..3)).collect();
            let (g, _) = backward(&net, &x, &y).unwrap();
            let h = 1e-4;
            for li in 0..net.layers().len() {
                for wi in 0..net.layers()[li].weights().len() {
                    let mut plus = net.clone();
                    plus.layers_mut()[li].weights_mut()[wi] += h;
                    let mut minus = net.clone();
                    minus.layers_mut()[li].weights_mut()[wi] -= h;
                    let fd = (mean_loss(&plus, &x, &y) - mean_loss(&minus, &x, &y)) / (2.0 * h);
                    let an = g.layers[li].weights[wi];
                    let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-6);
                    assert!(rel < 1e-4, "case {case} layer {li} w{wi}: fd {fd} an {an}");
                }
            }
        }
    }

    #[test]
    fn duplicated_batch_has_same_gradient() {
        let mut rng = stream(5, Stream::Init, 0);
        let net = Network::mlp(3, &[4], 2, &mut rng).unwrap();
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let y = vec![0, 1, 1];
        let x = Matrix::from_rows(&rows).unwrap();
        let mut doubled = rows.clone();
        doubled.extend(rows.iter().cloned());
        let x2 = Matrix::from_rows(&doubled).unwrap();
        let y2: Vec<usize> = y.iter().chain(&y).copied().collect();
        let (g1, l1) = backward(&net, &x, &y).unwrap();
        let (g2, l2) = backward(&net, &x2, &y2).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        for (a, b) in g1.layers.iter().zip(&g2.layers) {
            for (u, v) in a
                .weights
                .iter()
                .chain(&a.bias)
                .zip(b.weights.iter().chain(&b.bias))
            {
                assert!((u - v).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_logits_balanced_labels_give_zero_output_bias_grad() {
        let out = Layer::new(2, 3, vec![0.0; 6], vec![0.0; 3], Activation::Identity).unwrap();
        let net = Network::new(vec![out]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.3, 0.3]]).unwrap();
        let (g, loss) = backward(&net, &x, &[0, 1, 2]).unwrap();
        assert!(g.layers[0].bias.iter().all(|b| b.abs() < 1e-15));
        assert!((loss - 3f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn sgd_step_examples() {
        let layer =
            Layer::new(1, 2, vec![1.0, -1.0], vec![0.5, 0.25], Activation::Identity).unwrap();
        let base = Network::new(vec![layer]).unwrap();
        let g = Gradients {
            layers: vec![LayerParams {
                weights: vec![0.2, -0.4],
                bias: vec![1.0, 0.0],
            }],
        };

        let cfg = OptimizerConfig::new(0.1, 0.9, 1e-2, 10, 100.0).unwrap();
        let mut net = base.clone();
        sgd_step(&mut net, &g, 0.0, &cfg).unwrap();
        assert_eq!(net.layers(), base.layers());
        assert_ne!(net.momentum(), base.momentum());

        let plain = OptimizerConfig::new(0.1, 0.0, 0.0, 10, 100.0).unwrap();
        let mut net = base.clone();
        sgd_step(&mut net, &g, 0.1, &plain).unwrap();
        assert!((net.layers()[0].weights()[0] - (1.0 - 0.1 * 0.2)).abs() < 1e-15);
        assert!((net.layers()[0].bias()[0] - (0.5 - 0.1)).abs() < 1e-15);

        let heavy = OptimizerConfig::new(0.1, 0.9, 0.0, 10, 100.0).unwrap();
        let mut net = base.clone();
        sgd_step(&mut net, &g, 0.1, &heavy).unwrap();
        sgd_step(&mut net, &g, 0.1, &heavy).unwrap();
        let moved = 1.0 - net.layers()[0].weights()[0];
        assert!((moved - 0.1 * (0.2 + 1.9 * 0.2)).abs() < 1e-15);

        let wrong = Gradients { layers: vec![] };
        assert!(sgd_step(&mut net, &wrong, 0.1, &heavy).is_err());
    }

    #[test]
    fn cosine_schedule_examples() {
        let cfg = OptimizerConfig::new(0.02, 0.9, 5e-4, 300, 100.0).unwrap();
        assert_eq!(cosine_lr(0, &cfg).unwrap(), 0.02);
        assert!((cosine_lr(300, &cfg).unwrap() - 0.0002).abs() < 1e-16);
        assert!((cosine_lr(150, &cfg).unwrap() - 0.0101).abs() < 1e-15);
        assert!(cosine_lr(301, &cfg).is_err());
        let mut prev = f64::INFINITY;
        for e in 0..=300 {
            let lr = cosine_lr(e, &cfg).unwrap();
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn optimizer_validation() {
        assert!(OptimizerConfig::new(0.0, 0.9, 0.0, 1, 1.0).is_err());
        assert!(OptimizerConfig::new(0.1, 1.0, 0.0, 1, 1.0).is_err());
        assert!(OptimizerConfig::new(0.1, 0.5, -1.0, 1, 1.0).is_err());
        assert!(OptimizerConfig::new(0.1, 0.5, 0.0, 1, 0.5).is_err());
        assert_eq!(
            OptimizerConfig::default(),
            OptimizerConfig::new(0.02, 0.9, 5e-4, 300, 100.0).unwrap()
        );
    }

    #[test]
    fn snapshot_round_trip_and_corruption() {
        let mut rng = stream(3, Stream::Init, 0);
        let net = Network::mlp(3, &[5], 4, &mut rng).unwrap();
        let bytes = net.to_bytes();
        let back = Network::from_bytes(&bytes).unwrap();
        assert_eq!(back.layers(), net.layers());
        assert!(Network::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Network::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Network::from_bytes(&extra).is_err());
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(logits in proptest::collection::vec(-1e3f64..1e3, 2..12)) {
            let p = softmax(&logits).unwrap();
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&v| v >= 0.0 && v <= 1.0));
        }

        #[test]
        fn softmax_shift_invariant(logits in proptest::collection::vec(-30f64..30.0, 2..8), c in -50f64..50.0) {
            let a = softmax(&logits).unwrap();
            let shifted: Vec<f64> = logits.iter().map(|v| v + c).collect();
            let b = softmax(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
