//! Small fully connected networks trained by backpropagation.
//!
//! Used for the density-ratio classifier, the nonlinear outcome generator and
//! the nonlinear downstream regressor. Every network has a single output unit.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{permutation, Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    Linear,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    WeightedMse,
    /// Binary cross-entropy on the output logit.
    WeightedBce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    /// Epochs without validation improvement before stopping; 0 disables early stopping.
    pub early_stop_patience: usize,
    pub validation_fraction: f64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            max_epochs: 100,
            batch_size: 64,
            weight_decay: 0.0,
            early_stop_patience: 10,
            validation_fraction: 0.2,
            optimizer: Optimizer::Sgd,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be > 0"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight_decay must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::invalid("validation_fraction must be in [0, 1)"));
        }
        Ok(())
    }
}

/// One dense layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn affine(&self, input: &[f64], out: &mut [f64]) {
        for (o, (w_row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.inputs).zip(&self.bias))
        {
            *o = b + w_row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    layers: Vec<Layer>,
    activation: Activation,
    output_head: OutputHead,
}

#[derive(Serialize, Deserialize)]
struct MlpDocument {
    layer_sizes: Vec<usize>,
    activation: Activation,
    output_head: OutputHead,
    parameters: Vec<f64>,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::invalid(format!(
            "a network needs at least an input and an output size, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::invalid("layer sizes must be positive"));
    }
    if *layer_sizes.last().unwrap() != 1 {
        return Err(Error::invalid(
            "the output layer must have exactly one unit",
        ));
    }
    Ok(())
}

/// Per-sample scratch space for forward/backward passes.
struct Workspace {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases.
    pub fn init(
        layer_sizes: &[usize],
        activation: Activation,
        output_head: OutputHead,
        rng: &mut Rng,
    ) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    inputs: fan_in,
                    outputs: fan_out,
                    weights: (0..fan_in * fan_out)
                        .map(|_| rng.random_range(-bound..=bound))
                        .collect(),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            layers,
            activation,
            output_head,
        })
    }

    /// Network with every parameter set to zero.
    pub fn zeros(
        layer_sizes: &[usize],
        activation: Activation,
        output_head: OutputHead,
    ) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let n = Self::count_params(layer_sizes);
        Self::from_parameters(layer_sizes, activation, output_head, &vec![0.0; n])
    }

    pub fn from_parameters(
        layer_sizes: &[usize],
        activation: Activation,
        output_head: OutputHead,
        params: &[f64],
    ) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let expected = Self::count_params(layer_sizes);
        if params.len() != expected {
            return Err(Error::mismatch(
                "network parameter count",
                expected,
                params.len(),
            ));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("network parameters must be finite"));
        }
        let mut offset = 0;
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (i, o) = (w[0], w[1]);
                let weights = params[offset..offset + i * o].to_vec();
                offset += i * o;
                let bias = params[offset..offset + o].to_vec();
                offset += o;
                Layer {
                    inputs: i,
                    outputs: o,
                    weights,
                    bias,
                }
            })
            .collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            layers,
            activation,
            output_head,
        })
    }

    fn count_params(layer_sizes: &[usize]) -> usize {
        layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn output_head(&self) -> OutputHead {
        self.output_head
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_parameters(&self) -> usize {
        Self::count_params(&self.layer_sizes)
    }

    /// Flattened parameters: per layer, weights row-major followed by biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    fn set_parameters(&mut self, params: &[f64]) {
        let mut offset = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[offset..offset + nw]);
            offset += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[offset..offset + nb]);
            offset += nb;
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = MlpDocument {
            layer_sizes: self.layer_sizes.clone(),
            activation: self.activation,
            output_head: self.output_head,
            parameters: self.parameters(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: MlpDocument = serde_json::from_str(s)?;
        Self::from_parameters(
            &doc.layer_sizes,
            doc.activation,
            doc.output_head,
            &doc.parameters,
        )
    }

    fn workspace(&self) -> Workspace {
        Workspace {
            acts: self.layer_sizes.iter().map(|&s| vec![0.0; s]).collect(),
            deltas: self.layer_sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    /// Forward pass for one sample; returns the output pre-activation (logit).
    fn forward_one(&self, x: &[f64], ws: &mut Workspace) -> f64 {
        ws.acts[0].copy_from_slice(x);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, after) = ws.acts.split_at_mut(l + 1);
            let out = &mut after[0];
            layer.affine(&before[l], out);
            if l < last {
                match self.activation {
                    Activation::Relu => out.iter_mut().for_each(|v| *v = v.max(0.0)),
                    Activation::Tanh => out.iter_mut().for_each(|v| *v = v.tanh()),
                }
            }
        }
        ws.acts[last + 1][0]
    }

    fn head(&self, z: f64) -> f64 {
        match self.output_head {
            OutputHead::Linear => z,
            OutputHead::Sigmoid => sigmoid(z),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.input_dim() {
            return Err(Error::mismatch("network input", self.input_dim(), x.cols()));
        }
        let mut ws = self.workspace();
        Ok(x.row_iter()
            .map(|r| self.head(self.forward_one(r, &mut ws)))
            .collect())
    }

    /// Sample loss and its derivative with respect to the output logit.
    fn sample_loss(&self, z: f64, t: f64, loss: LossKind) -> (f64, f64) {
        match loss {
            LossKind::WeightedBce => (softplus(z) - t * z, sigmoid(z) - t),
            LossKind::WeightedMse => match self.output_head {
                OutputHead::Linear => ((z - t) * (z - t), 2.0 * (z - t)),
                OutputHead::Sigmoid => {
                    let s = sigmoid(z);
                    ((s - t) * (s - t), 2.0 * (s - t) * s * (1.0 - s))
                }
            },
        }
    }

    fn backward_one(&self, dz: f64, scale: f64, ws: &mut Workspace, grad: &mut [f64]) {
        let nl = self.layers.len();
        ws.deltas[nl][0] = dz;
        let mut offsets = Vec::with_capacity(nl);
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.weights.len() + l.bias.len();
        }
        for l in (0..nl).rev() {
            let layer = &self.layers[l];
            let off = offsets[l];
            let (lower, upper) = ws.deltas.split_at_mut(l + 1);
            let delta = &upper[0];
            let input = &ws.acts[l];
            for o in 0..layer.outputs {
                let d = delta[o] * scale;
                if d != 0.0 {
                    let g_row = &mut grad[off + o * layer.inputs..off + (o + 1) * layer.inputs];
                    for (g, a) in g_row.iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
                grad[off + layer.weights.len() + o] += d;
            }
            if l > 0 {
                let prev = &mut lower[l];
                prev.iter_mut().for_each(|v| *v = 0.0);
                for o in 0..layer.outputs {
                    let d = delta[o];
                    if d != 0.0 {
                        let w_row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                        for (p, w) in prev.iter_mut().zip(w_row) {
                            *p += d * w;
                        }
                    }
                }
                match self.activation {
                    Activation::Relu => {
                        for (p, a) in prev.iter_mut().zip(input) {
                            if *a <= 0.0 {
                                *p = 0.0;
                            }
                        }
                    }
                    Activation::Tanh => {
                        for (p, a) in prev.iter_mut().zip(input) {
                            *p *= 1.0 - a * a;
                        }
                    }
                }
            }
        }
    }

    fn decay_penalty(&self, weight_decay: f64) -> f64 {
        if weight_decay == 0.0 {
            return 0.0;
        }
        0.5 * weight_decay
            * self
                .layers
                .iter()
                .flat_map(|l| l.weights.iter())
                .map(|w| w * w)
                .sum::<f64>()
    }

    fn add_decay_gradient(&self, weight_decay: f64, grad: &mut [f64]) {
        if weight_decay == 0.0 {
            return;
        }
        let mut off = 0;
        for l in &self.layers {
            for (g, w) in grad[off..off + l.weights.len()].iter_mut().zip(&l.weights) {
                *g += weight_decay * w;
            }
            off += l.weights.len() + l.bias.len();
        }
    }

    /// Weighted mean loss `Σ wᵢ ℓᵢ / Σ wᵢ` over the selected rows.
    fn subset_loss_grad(
        &self,
        x: &Matrix,
        targets: &[f64],
        weights: Option<&[f64]>,
        rows: &[usize],
        loss: LossKind,
        ws: &mut Workspace,
        mut grad: Option<&mut [f64]>,
    ) -> Option<f64> {
        let total_w: f64 = match weights {
            Some(w) => rows.iter().map(|&i| w[i]).sum(),
            None => rows.len() as f64,
        };
        if !(total_w > 0.0) {
            return None;
        }
        let mut acc = 0.0;
        for &i in rows {
            let wi = weights.map_or(1.0, |w| w[i]);
            if wi == 0.0 {
                continue;
            }
            let z = self.forward_one(x.row(i), ws);
            let (l, dz) = self.sample_loss(z, targets[i], loss);
            acc += wi * l;
            if let Some(g) = grad.as_deref_mut() {
                self.backward_one(dz, wi / total_w, ws, g);
            }
        }
        Some(acc / total_w)
    }

    /// Weighted loss (normalized by the total weight) plus weight decay, and its
    /// gradient in [`MlpModel::parameters`] order.
    pub fn loss_and_gradient(
        &self,
        x: &Matrix,
        targets: &[f64],
        weights: Option<&[f64]>,
        loss: LossKind,
        weight_decay: f64,
    ) -> Result<(f64, Vec<f64>)> {
        check_inputs(self, x, targets, weights)?;
        let rows: Vec<usize> = (0..x.rows()).collect();
        let mut grad = vec![0.0; self.num_parameters()];
        let mut ws = self.workspace();
        let l = self
            .subset_loss_grad(x, targets, weights, &rows, loss, &mut ws, Some(&mut grad))
            .ok_or_else(|| Error::InvalidWeights("total sample weight is zero".into()))?;
        self.add_decay_gradient(weight_decay, &mut grad);
        Ok((l + self.decay_penalty(weight_decay), grad))
    }

    pub fn loss(
        &self,
        x: &Matrix,
        targets: &[f64],
        weights: Option<&[f64]>,
        loss: LossKind,
    ) -> Result<f64> {
        check_inputs(self, x, targets, weights)?;
        let rows: Vec<usize> = (0..x.rows()).collect();
        let mut ws = self.workspace();
        self.subset_loss_grad(x, targets, weights, &rows, loss, &mut ws, None)
            .ok_or_else(|| Error::InvalidWeights("total sample weight is zero".into()))
    }
}

fn check_inputs(
    model: &MlpModel,
    x: &Matrix,
    targets: &[f64],
    weights: Option<&[f64]>,
) -> Result<()> {
    if x.cols() != model.input_dim() {
        return Err(Error::mismatch(
            "network input",
            model.input_dim(),
            x.cols(),
        ));
    }
    if targets.len() != x.rows() {
        return Err(Error::mismatch("targets", x.rows(), targets.len()));
    }
    if let Some(w) = weights {
        if w.len() != x.rows() {
            return Err(Error::mismatch("sample weights", x.rows(), w.len()));
        }
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidWeights(
                "sample weights must be finite and nonnegative".into(),
            ));
        }
    }
    Ok(())
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Mini-batch training with early stopping on a held-out validation split.
///
/// The returned model is the best checkpoint by validation loss (training loss
/// when no validation split is used). If that checkpoint has a higher training
/// loss than the starting point, the starting model is returned.
pub fn mlp_train(
    model: &MlpModel,
    x: &Matrix,
    targets: &[f64],
    weights: Option<&[f64]>,
    loss: LossKind,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<MlpModel> {
    cfg.validate()?;
    check_inputs(model, x, targets, weights)?;
    let n = x.rows();
    let perm = permutation(n, rng);
    let n_val = if cfg.early_stop_patience > 0 {
        (cfg.validation_fraction * n as f64).floor() as usize
    } else {
        0
    };
    let (val_rows, train_rows) = if n_val >= 1 && n - n_val >= 1 {
        let (v, t) = perm.split_at(n_val);
        (v.to_vec(), t.to_vec())
    } else {
        (Vec::new(), perm)
    };
    let all_rows: Vec<usize> = (0..n).collect();

    let mut current = model.clone();
    let mut ws = current.workspace();
    let initial_loss = current
        .subset_loss_grad(x, targets, weights, &all_rows, loss, &mut ws, None)
        .ok_or_else(|| Error::InvalidWeights("total sample weight is zero".into()))?;
    if !initial_loss.is_finite() {
        return Err(Error::NonFinite {
            what: "training loss".into(),
            iteration: 0,
        });
    }
    let monitor_rows = if val_rows.is_empty() {
        &train_rows
    } else {
        &val_rows
    };
    let monitor = |m: &MlpModel, ws: &mut Workspace| {
        m.subset_loss_grad(x, targets, weights, monitor_rows, loss, ws, None)
            .unwrap_or(f64::INFINITY)
    };
    let mut best_monitor = monitor(&current, &mut ws);
    let mut best_params = current.parameters();
    let mut stale = 0usize;

    let n_params = current.num_parameters();
    let mut grad = vec![0.0; n_params];
    let mut params = current.parameters();
    let mut adam = AdamState {
        m: vec![0.0; n_params],
        v: vec![0.0; n_params],
        t: 0,
    };
    let mut order = train_rows.clone();

    for epoch in 1..=cfg.max_epochs {
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let Some(batch_loss) = current.subset_loss_grad(
                x,
                targets,
                weights,
                batch,
                loss,
                &mut ws,
                Some(&mut grad),
            ) else {
                continue;
            };
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite {
                    what: "training loss".into(),
                    iteration: epoch,
                });
            }
            current.add_decay_gradient(cfg.weight_decay, &mut grad);
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for (p, g) in params.iter_mut().zip(&grad) {
                        *p -= cfg.learning_rate * g;
                    }
                }
                Optimizer::Adam => {
                    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
                    adam.t += 1;
                    let c1 = 1.0 - b1.powi(adam.t);
                    let c2 = 1.0 - b2.powi(adam.t);
                    for k in 0..n_params {
                        adam.m[k] = b1 * adam.m[k] + (1.0 - b1) * grad[k];
                        adam.v[k] = b2 * adam.v[k] + (1.0 - b2) * grad[k] * grad[k];
                        params[k] -=
                            cfg.learning_rate * (adam.m[k] / c1) / ((adam.v[k] / c2).sqrt() + eps);
                    }
                }
            }
            current.set_parameters(&params);
        }
        let m = monitor(&current, &mut ws);
        if !m.is_finite() {
            return Err(Error::NonFinite {
                what: "monitored loss".into(),
                iteration: epoch,
            });
        }
        if m < best_monitor {
            best_monitor = m;
            best_params.copy_from_slice(&params);
            stale = 0;
        } else {
            stale += 1;
            if cfg.early_stop_patience > 0 && stale >= cfg.early_stop_patience {
                break;
            }
        }
    }

    current.set_parameters(&best_params);
    let final_loss = current
        .subset_loss_grad(x, targets, weights, &all_rows, loss, &mut ws, None)
        .unwrap_or(f64::INFINITY);
    if final_loss > initial_loss {
        return Ok(model.clone());
    }
    Ok(current)
}
