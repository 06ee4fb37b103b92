//! Minimal dense network core: masked affine layers, exact backpropagation,
//! the four losses both estimators train with, Adam, and dropout.
//!
//! Everything is 64-bit and single-threaded per network, so training is
//! bitwise reproducible for a fixed seed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability clamp applied inside logs and to sigmoid outputs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            // clamped away from 0/1 so log-losses and their gradients stay finite
            Activation::Sigmoid => (1.0 / (1.0 + (-z).exp())).clamp(PROB_EPS, 1.0 - PROB_EPS),
            Activation::Identity => z,
        }
    }

    fn derivative(&self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected layer with an optional binary connectivity mask. The
/// effective weight is `mask ⊙ weights`; masked-out entries receive exactly
/// zero gradient.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim × in_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// Row-major `out_dim × in_dim` of 0.0/1.0, if masked.
    pub mask: Option<Vec<f64>>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn init(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        // uniform in ±sqrt(6 / (fan_in + fan_out))
        let r = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim).map(|_| rng.random::<f64>() * 2.0 * r - r).collect();
        Self { in_dim, out_dim, weights, bias: vec![0.0; out_dim], mask: None, activation }
    }

    pub fn with_mask(mut self, mask: Vec<f64>) -> Self {
        assert_eq!(mask.len(), self.weights.len());
        self.mask = Some(mask);
        self
    }

    /// Units whose entire incoming mask row is zero carry no signal; dropout
    /// skips them when asked to respect masks.
    pub fn mask_active_rows(&self) -> Vec<bool> {
        match &self.mask {
            Some(m) => (0..self.out_dim)
                .map(|r| m[r * self.in_dim..(r + 1) * self.in_dim].iter().any(|&x| x != 0.0))
                .collect(),
            None => vec![true; self.out_dim],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<DenseLayer>,
}

/// Per-layer state retained by a forward pass for the backward pass.
pub struct ForwardCache {
    /// Input actually fed to each layer (post-dropout of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations per layer.
    zs: Vec<Vec<f64>>,
    /// Post-activations per layer.
    activations: Vec<Vec<f64>>,
    /// Dropout scale per unit (0 or 1/(1-p)) for each hidden layer, if any.
    dropout: Vec<Option<Vec<f64>>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("network has layers")
    }
}

/// Dropout configuration for one training pass.
pub struct DropoutPlan {
    pub p: f64,
    /// Eligibility per hidden layer; `None` means every unit is eligible.
    pub eligible: Vec<Option<Vec<bool>>>,
}

impl DropoutPlan {
    /// Drop only mask-active units, per the incremental-training contract.
    pub fn mask_respecting(network: &Network, p: f64) -> Self {
        let eligible = network.layers[..network.layers.len() - 1]
            .iter()
            .map(|l| Some(l.mask_active_rows()))
            .collect();
        Self { p, eligible }
    }

    pub fn all_units(network: &Network, p: f64) -> Self {
        Self { p, eligible: vec![None; network.layers.len() - 1] }
    }
}

#[derive(Debug, Clone)]
pub struct LayerGradients {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGradients>,
}

impl Gradients {
    pub fn zeros(network: &Network) -> Self {
        Self {
            layers: network
                .layers
                .iter()
                .map(|l| LayerGradients {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for l in &mut self.layers {
            for x in &mut l.weights {
                *x *= c;
            }
            for x in &mut l.bias {
                *x *= c;
            }
        }
    }
}

impl Network {
    /// Build a network from `sizes[0] -> sizes[1] -> ...` with the given
    /// hidden activation and output activation.
    pub fn init(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let layers = (0..sizes.len() - 1)
            .map(|i| {
                let act = if i + 2 == sizes.len() { output } else { hidden };
                DenseLayer::init(sizes[i], sizes[i + 1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().expect("network has layers").in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("network has layers").out_dim
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Inference forward pass; dropout is never applied here.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(input, None, &mut crate::rng::seeded(0))?.output().to_vec())
    }

    /// Forward pass retaining the per-layer cache; applies dropout to hidden
    /// activations when a plan is given.
    pub fn forward_cached(
        &self,
        input: &[f64],
        dropout: Option<&DropoutPlan>,
        rng: &mut impl Rng,
    ) -> Result<ForwardCache> {
        if input.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input length {} does not match first layer ({})",
                input.len(),
                self.input_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut zs = Vec::with_capacity(self.layers.len());
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut scales: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = layer.bias.clone();
            for row in 0..layer.out_dim {
                let w = &layer.weights[row * layer.in_dim..(row + 1) * layer.in_dim];
                let acc: f64 = match &layer.mask {
                    Some(m) => {
                        let mr = &m[row * layer.in_dim..(row + 1) * layer.in_dim];
                        w.iter().zip(mr).zip(&x).map(|((w, m), x)| w * m * x).sum()
                    }
                    None => w.iter().zip(&x).map(|(w, x)| w * x).sum(),
                };
                z[row] += acc;
            }
            let mut a: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            inputs.push(x);
            let scale = match dropout {
                Some(plan) if li + 1 < self.layers.len() && plan.p > 0.0 => {
                    let eligible = plan.eligible.get(li).and_then(|e| e.as_deref());
                    Some(apply_dropout(&mut a, plan.p, rng, eligible)?)
                }
                _ => None,
            };
            scales.push(scale);
            zs.push(z);
            activations.push(a.clone());
            x = a;
        }
        Ok(ForwardCache { inputs, zs, activations, dropout: scales })
    }

    /// Exact reverse-mode gradients for the given gradient of the loss with
    /// respect to the network output. Masked entries receive zero gradient.
    pub fn backward(&self, cache: &ForwardCache, output_gradient: &[f64]) -> Result<Gradients> {
        if output_gradient.len() != self.output_dim() {
            return Err(Error::ShapeMismatch(format!(
                "output gradient length {} does not match last layer ({})",
                output_gradient.len(),
                self.output_dim()
            )));
        }
        let mut grads = Gradients::zeros(self);
        let mut upstream = output_gradient.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            // dropout on this layer's output scales its gradient likewise
            if let Some(scale) = &cache.dropout[li] {
                for (g, s) in upstream.iter_mut().zip(scale) {
                    *g *= s;
                }
            }
            let z = &cache.zs[li];
            let a = &cache.activations[li];
            let input = &cache.inputs[li];
            let mut dz = vec![0.0; layer.out_dim];
            for row in 0..layer.out_dim {
                dz[row] = upstream[row] * layer.activation.derivative(z[row], a[row]);
            }
            let lg = &mut grads.layers[li];
            for row in 0..layer.out_dim {
                let base = row * layer.in_dim;
                let out = &mut lg.weights[base..base + layer.in_dim];
                match &layer.mask {
                    Some(m) => {
                        let mr = &m[base..base + layer.in_dim];
                        for col in 0..layer.in_dim {
                            out[col] = mr[col] * dz[row] * input[col];
                        }
                    }
                    None => {
                        for col in 0..layer.in_dim {
                            out[col] = dz[row] * input[col];
                        }
                    }
                }
                lg.bias[row] = dz[row];
            }
            if li > 0 {
                let mut prev = vec![0.0; layer.in_dim];
                for row in 0..layer.out_dim {
                    let base = row * layer.in_dim;
                    let w = &layer.weights[base..base + layer.in_dim];
                    match &layer.mask {
                        Some(m) => {
                            let mr = &m[base..base + layer.in_dim];
                            for col in 0..layer.in_dim {
                                prev[col] += w[col] * mr[col] * dz[row];
                            }
                        }
                        None => {
                            for col in 0..layer.in_dim {
                                prev[col] += w[col] * dz[row];
                            }
                        }
                    }
                }
                upstream = prev;
            }
        }
        Ok(grads)
    }
}

/// Inverted dropout: each eligible unit is zeroed with probability `p`,
/// survivors are scaled by `1/(1-p)`. Returns the per-unit scales applied.
pub fn apply_dropout(
    activations: &mut [f64],
    p: f64,
    rng: &mut impl Rng,
    eligible: Option<&[bool]>,
) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("dropout probability {p} not in [0, 1)")));
    }
    let keep_scale = 1.0 / (1.0 - p);
    let mut scales = vec![1.0; activations.len()];
    if p == 0.0 {
        return Ok(scales);
    }
    for (i, a) in activations.iter_mut().enumerate() {
        if eligible.is_some_and(|e| !e[i]) {
            continue;
        }
        if rng.random::<f64>() < p {
            *a = 0.0;
            scales[i] = 0.0;
        } else {
            *a *= keep_scale;
            scales[i] = keep_scale;
        }
    }
    Ok(scales)
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    WeightedBce,
    Mse,
    QError,
}

/// How the two q-error ratios combine in the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QErrorForm {
    /// `max(s/ŝ, ŝ/s)`, matching the evaluation metric.
    #[default]
    Max,
    /// `s/ŝ + ŝ/s`; kept behind a switch for comparison runs.
    Sum,
}

/// Binary cross entropy summed over bits, with the gradient with respect to
/// the predictions. Predictions are clamped into `[ε, 1-ε]`.
pub fn bce_loss(predictions: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
    debug_assert_eq!(predictions.len(), targets.len());
    let mut loss = 0.0;
    let mut grad = vec![0.0; predictions.len()];
    for i in 0..predictions.len() {
        let p = predictions[i].clamp(PROB_EPS, 1.0 - PROB_EPS);
        let x = targets[i];
        loss += -x * p.ln() - (1.0 - x) * (1.0 - p).ln();
        grad[i] = (p - x) / (p * (1.0 - p));
    }
    (loss, grad)
}

/// `w · bce`; the gradient scales likewise.
pub fn weighted_bce_loss(predictions: &[f64], targets: &[f64], weight: f64) -> Result<(f64, Vec<f64>)> {
    if weight < 0.0 {
        return Err(Error::InvalidArgument(format!("negative loss weight {weight}")));
    }
    let (loss, mut grad) = bce_loss(predictions, targets);
    for g in &mut grad {
        *g *= weight;
    }
    Ok((loss * weight, grad))
}

/// Sum of squared errors with its gradient.
pub fn mse_loss(predictions: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
    debug_assert_eq!(predictions.len(), targets.len());
    let mut loss = 0.0;
    let mut grad = vec![0.0; predictions.len()];
    for i in 0..predictions.len() {
        let d = predictions[i] - targets[i];
        loss += d * d;
        grad[i] = 2.0 * d;
    }
    (loss, grad)
}

/// Log + min-max selectivity transform shared by the regressor and the
/// q-error loss. Transformed values live in `[0, 1]`, with 0 at the largest
/// training selectivity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelTransform {
    /// Smallest `abs(log10 s)` over the training set.
    pub min_abslog: f64,
    /// Largest `abs(log10 s)` over the training set.
    pub max_abslog: f64,
}

impl SelTransform {
    pub fn fit(selectivities: &[f64]) -> Result<Self> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &s in selectivities {
            if !(s > 0.0 && s <= 1.0) {
                return Err(Error::InvalidArgument(format!("selectivity {s} outside (0, 1]")));
            }
            let a = s.log10().abs();
            min = min.min(a);
            max = max.max(a);
        }
        if max <= min {
            return Err(Error::InvalidArgument(
                "degenerate selectivity transform: all abs-log values equal".into(),
            ));
        }
        Ok(Self { min_abslog: min, max_abslog: max })
    }

    /// `s -> (abs(log10 s) - min) / (max - min)`.
    pub fn transform(&self, s: f64) -> f64 {
        (s.log10().abs() - self.min_abslog) / (self.max_abslog - self.min_abslog)
    }

    /// Transform with out-of-range abs-logs clamped to the fitted boundary,
    /// for incremental batches labeled after fitting.
    pub fn transform_clamped(&self, s: f64) -> f64 {
        let a = s.log10().abs().clamp(self.min_abslog, self.max_abslog);
        (a - self.min_abslog) / (self.max_abslog - self.min_abslog)
    }

    /// Inverse map from the unit interval back to a selectivity.
    pub fn inverse(&self, unit: f64) -> f64 {
        let abslog = self.min_abslog + unit * (self.max_abslog - self.min_abslog);
        10f64.powf(-abslog)
    }

    /// d inverse / d unit at `unit`, given `s = inverse(unit)`.
    fn inverse_derivative(&self, s: f64) -> f64 {
        -s * (self.max_abslog - self.min_abslog) * std::f64::consts::LN_10
    }
}

/// Q-error loss for a scalar prediction in unit space. The prediction is
/// mapped through the inverse transform, clamped to `[eps_sel, 1]`, and
/// compared against the true selectivity. Returns the loss and its gradient
/// with respect to the unit-space prediction.
pub fn qerror_loss(
    prediction_unit: f64,
    target_sel: f64,
    transform: &SelTransform,
    eps_sel: f64,
    form: QErrorForm,
) -> Result<(f64, f64)> {
    if target_sel <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "q-error loss needs a positive true selectivity, got {target_sel}"
        )));
    }
    let raw = transform.inverse(prediction_unit);
    let s_hat = raw.clamp(eps_sel, 1.0);
    let clamped = s_hat != raw;
    let s = target_sel;
    let (loss, dloss_dshat) = match form {
        QErrorForm::Max => {
            if s_hat > s {
                (s_hat / s, 1.0 / s)
            } else if s_hat < s {
                (s / s_hat, -s / (s_hat * s_hat))
            } else {
                // subgradient 0 at the kink
                (1.0, 0.0)
            }
        }
        QErrorForm::Sum => (s / s_hat + s_hat / s, -s / (s_hat * s_hat) + 1.0 / s),
    };
    let grad = if clamped { 0.0 } else { dloss_dshat * transform.inverse_derivative(s_hat) };
    Ok((loss, grad))
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { alpha: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First/second moment accumulators shaped like the network parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<LayerGradients>,
    v: Vec<LayerGradients>,
}

impl AdamState {
    pub fn new(network: &Network, config: AdamConfig) -> Self {
        let zeros = || {
            network
                .layers
                .iter()
                .map(|l| LayerGradients {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect::<Vec<_>>()
        };
        Self { config, t: 0, m: zeros(), v: zeros() }
    }

    /// One bias-corrected Adam update in place.
    pub fn step(&mut self, network: &mut Network, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != network.layers.len() {
            return Err(Error::ShapeMismatch("gradient/network layer mismatch".into()));
        }
        self.t += 1;
        let c = self.config;
        let m_corr = 1.0 - c.beta1.powi(self.t as i32);
        let v_corr = 1.0 - c.beta2.powi(self.t as i32);
        for (li, layer) in network.layers.iter_mut().enumerate() {
            let g = &grads.layers[li];
            let m = &mut self.m[li];
            let v = &mut self.v[li];
            for (i, w) in layer.weights.iter_mut().enumerate() {
                m.weights[i] = c.beta1 * m.weights[i] + (1.0 - c.beta1) * g.weights[i];
                v.weights[i] = c.beta2 * v.weights[i] + (1.0 - c.beta2) * g.weights[i] * g.weights[i];
                let m_hat = m.weights[i] / m_corr;
                let v_hat = v.weights[i] / v_corr;
                *w -= c.alpha * m_hat / (v_hat.sqrt() + c.epsilon);
            }
            for (i, b) in layer.bias.iter_mut().enumerate() {
                m.bias[i] = c.beta1 * m.bias[i] + (1.0 - c.beta1) * g.bias[i];
                v.bias[i] = c.beta2 * v.bias[i] + (1.0 - c.beta2) * g.bias[i] * g.bias[i];
                let m_hat = m.bias[i] / m_corr;
                let v_hat = v.bias[i] / v_corr;
                *b -= c.alpha * m_hat / (v_hat.sqrt() + c.epsilon);
            }
        }
        Ok(())
    }
}

/// Shuffled minibatch index blocks for one epoch.
pub fn minibatches(n: usize, batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn tiny_net(sizes: &[usize], output: Activation, seed: u64) -> Network {
        Network::init(sizes, Activation::Relu, output, &mut rng::seeded(seed))
    }

    #[test]
    fn zero_weight_sigmoid_outputs_half() {
        let mut net = tiny_net(&[3, 4], Activation::Sigmoid, 1);
        for l in &mut net.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        let out = net.forward(&[0.3, -1.0, 2.0]).unwrap();
        assert!(out.iter().all(|&o| o == 0.5));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut net = tiny_net(&[2, 2], Activation::Identity, 2);
        net.layers[0].weights = vec![1.0, 0.0, 0.0, 1.0];
        net.layers[0].bias = vec![0.0, 0.0];
        let out = net.forward(&[0.7, -0.2]).unwrap();
        assert_eq!(out, vec![0.7, -0.2]);
    }

    #[test]
    fn relu_clips_negative_preactivation() {
        let mut net = tiny_net(&[1, 1], Activation::Relu, 3);
        net.layers[0].weights = vec![-1.0];
        net.layers[0].bias = vec![0.0];
        assert_eq!(net.forward(&[2.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn forward_rejects_bad_input_length() {
        let net = tiny_net(&[3, 2], Activation::Identity, 4);
        assert!(net.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn bce_matches_hand_summed_formula() {
        // direct evaluation of the summed cross entropy on a 5-bit case
        let preds: [f64; 5] = [0.9, 0.2, 0.6, 0.51, 0.03];
        let targets: [f64; 5] = [1.0, 0.0, 1.0, 0.0, 0.0];
        let mut expected = 0.0;
        for i in 0..5 {
            expected += -targets[i] * preds[i].ln() - (1.0 - targets[i]) * (1.0 - preds[i]).ln();
        }
        let (loss, _) = bce_loss(&preds, &targets);
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn bce_at_half_is_d_ln2_and_nonneg() {
        let preds = vec![0.5; 7];
        let targets = vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0];
        let (loss, _) = bce_loss(&preds, &targets);
        assert!((loss - 7.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!(loss >= 0.0);
    }

    #[test]
    fn bce_is_near_zero_on_exact_predictions() {
        let targets = [1.0, 0.0, 1.0];
        let (loss, _) = bce_loss(&targets, &targets);
        // bounded by the clamp epsilon
        assert!(loss < 1e-5);
    }

    #[test]
    fn weighted_bce_scales_loss_and_gradient() {
        let preds = [0.3, 0.8];
        let targets = [1.0, 0.0];
        let (l1, g1) = bce_loss(&preds, &targets);
        let (lw, gw) = weighted_bce_loss(&preds, &targets, 3.0).unwrap();
        assert!((lw - 3.0 * l1).abs() < 1e-12);
        for (a, b) in gw.iter().zip(&g1) {
            assert!((a - 3.0 * b).abs() < 1e-12);
        }
        let (l0, g0) = weighted_bce_loss(&preds, &targets, 0.0).unwrap();
        assert_eq!(l0, 0.0);
        assert!(g0.iter().all(|&g| g == 0.0));
        let (le, ge) = weighted_bce_loss(&preds, &targets, 1.0).unwrap();
        assert_eq!(le, l1);
        assert_eq!(ge, g1);
        assert!(weighted_bce_loss(&preds, &targets, -1.0).is_err());
    }

    #[test]
    fn qerror_loss_examples() {
        let t = SelTransform { min_abslog: 0.0, max_abslog: 4.0 };
        // prediction equal to the target: loss 1, zero subgradient at the kink
        let s = 0.01;
        let unit = t.transform(s);
        let (loss, grad) = qerror_loss(unit, s, &t, 1e-9, QErrorForm::Max).unwrap();
        assert!((loss - 1.0).abs() < 1e-9);
        assert_eq!(grad, 0.0);
        // overestimate by 2x
        let unit = t.transform(0.02);
        let (loss, _) = qerror_loss(unit, 0.01, &t, 1e-9, QErrorForm::Max).unwrap();
        assert!((loss - 2.0).abs() < 1e-9);
        assert!(qerror_loss(0.5, 0.0, &t, 1e-9, QErrorForm::Max).is_err());
    }

    #[test]
    fn qerror_gradient_matches_finite_differences() {
        let t = SelTransform { min_abslog: 0.0, max_abslog: 4.0 };
        let mut r = rng::seeded(11);
        let mut checked = 0;
        while checked < 20 {
            let unit: f64 = r.random::<f64>() * 0.9 + 0.05;
            let s: f64 = 10f64.powf(-(r.random::<f64>() * 3.5 + 0.2));
            let pred = t.inverse(unit);
            // stay away from the kink where the max switches branches
            if (pred / s).max(s / pred) < 1.05 {
                continue;
            }
            for form in [QErrorForm::Max, QErrorForm::Sum] {
                let h = 1e-6;
                let (_, grad) = qerror_loss(unit, s, &t, 1e-12, form).unwrap();
                let (lp, _) = qerror_loss(unit + h, s, &t, 1e-12, form).unwrap();
                let (lm, _) = qerror_loss(unit - h, s, &t, 1e-12, form).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let rel = (grad - fd).abs() / fd.abs().max(1e-9);
                assert!(rel < 1e-4, "form {form:?}: grad {grad} vs fd {fd}");
            }
            checked += 1;
        }
    }

    #[test]
    fn sum_form_differs_from_max_form() {
        let t = SelTransform { min_abslog: 0.0, max_abslog: 4.0 };
        let unit = t.transform(0.02);
        let (lmax, _) = qerror_loss(unit, 0.01, &t, 1e-12, QErrorForm::Max).unwrap();
        let (lsum, _) = qerror_loss(unit, 0.01, &t, 1e-12, QErrorForm::Sum).unwrap();
        assert!((lmax - 2.0).abs() < 1e-9);
        assert!((lsum - 2.5).abs() < 1e-9);
    }

    /// Central finite differences over every parameter of a network.
    fn finite_diff_check(
        net: &Network,
        input: &[f64],
        loss_of: &dyn Fn(&Network) -> f64,
        grads: &Gradients,
        tol: f64,
    ) {
        let h = 1e-5;
        let mut net = net.clone();
        for li in 0..net.layers.len() {
            for wi in 0..net.layers[li].weights.len() {
                let masked = net.layers[li]
                    .mask
                    .as_ref()
                    .is_some_and(|m| m[wi] == 0.0);
                let orig = net.layers[li].weights[wi];
                net.layers[li].weights[wi] = orig + h;
                let lp = loss_of(&net);
                net.layers[li].weights[wi] = orig - h;
                let lm = loss_of(&net);
                net.layers[li].weights[wi] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let an = grads.layers[li].weights[wi];
                if masked {
                    assert_eq!(an, 0.0, "masked weight must get zero gradient");
                    assert!(fd.abs() < 1e-9, "masked weight changed the loss");
                    continue;
                }
                let denom = fd.abs().max(an.abs()).max(1e-6);
                assert!(
                    (an - fd).abs() / denom < tol,
                    "layer {li} weight {wi}: analytic {an} vs fd {fd} (input {input:?})"
                );
            }
            for bi in 0..net.layers[li].bias.len() {
                let orig = net.layers[li].bias[bi];
                net.layers[li].bias[bi] = orig + h;
                let lp = loss_of(&net);
                net.layers[li].bias[bi] = orig - h;
                let lm = loss_of(&net);
                net.layers[li].bias[bi] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let an = grads.layers[li].bias[bi];
                let denom = fd.abs().max(an.abs()).max(1e-6);
                assert!((an - fd).abs() / denom < tol, "layer {li} bias {bi}: {an} vs {fd}");
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences_on_two_layer_net() {
        let mut r = rng::seeded(42);
        for case in 0..5 {
            let mut net = Network::init(&[3, 4, 2], Activation::Relu, Activation::Sigmoid, &mut r);
            if case % 2 == 1 {
                // mask half the first layer
                let mask: Vec<f64> = (0..12).map(|i| ((i * 7 + case) % 2) as f64).collect();
                net.layers[0].mask = Some(mask);
            }
            let input: Vec<f64> = (0..3).map(|_| r.random::<f64>() * 2.0 - 1.0).collect();
            let targets: Vec<f64> = (0..2).map(|_| (r.random::<f64>() > 0.5) as u8 as f64).collect();
            let cache = net.forward_cached(&input, None, &mut rng::seeded(0)).unwrap();
            let (_, out_grad) = bce_loss(cache.output(), &targets);
            let grads = net.backward(&cache, &out_grad).unwrap();
            let loss_of = |n: &Network| {
                let out = n.forward(&input).unwrap();
                bce_loss(&out, &targets).0
            };
            finite_diff_check(&net, &input, &loss_of, &grads, 1e-4);
        }
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradients() {
        let net = tiny_net(&[3, 4, 2], Activation::Sigmoid, 5);
        let cache = net.forward_cached(&[0.1, 0.2, 0.3], None, &mut rng::seeded(0)).unwrap();
        let grads = net.backward(&cache, &[0.0, 0.0]).unwrap();
        for l in &grads.layers {
            assert!(l.weights.iter().all(|&g| g == 0.0));
            assert!(l.bias.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn mask_invariance_of_forward_output() {
        let mut r = rng::seeded(9);
        let mut net = Network::init(&[4, 3, 2], Activation::Relu, Activation::Sigmoid, &mut r);
        let mask: Vec<f64> = (0..12).map(|i| (i % 3 != 0) as u8 as f64).collect();
        net.layers[0].mask = Some(mask.clone());
        let input = [0.5, -0.3, 0.9, 0.1];
        let before = net.forward(&input).unwrap();
        for (i, m) in mask.iter().enumerate() {
            if *m == 0.0 {
                net.layers[0].weights[i] = 1234.5;
            }
        }
        let after = net.forward(&input).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn adam_zero_gradient_leaves_parameters_unchanged() {
        let net0 = tiny_net(&[2, 3, 1], Activation::Sigmoid, 6);
        let mut net = net0.clone();
        let mut adam = AdamState::new(&net, AdamConfig::default());
        let grads = Gradients::zeros(&net);
        adam.step(&mut net, &grads).unwrap();
        assert_eq!(adam.t, 1);
        for (a, b) in net.layers.iter().zip(&net0.layers) {
            assert_eq!(a.weights, b.weights);
            assert_eq!(a.bias, b.bias);
        }
    }

    #[test]
    fn adam_first_step_matches_hand_evaluation() {
        // scalar parameter, g = 1, alpha = 0.1: step = -0.1 / (1 + 1e-8)
        let mut net = Network {
            layers: vec![DenseLayer {
                in_dim: 1,
                out_dim: 1,
                weights: vec![0.0],
                bias: vec![0.0],
                mask: None,
                activation: Activation::Identity,
            }],
        };
        let cfg = AdamConfig { alpha: 0.1, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 };
        let mut adam = AdamState::new(&net, cfg);
        let grads = Gradients {
            layers: vec![LayerGradients { weights: vec![1.0], bias: vec![0.0] }],
        };
        adam.step(&mut net, &grads).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((net.layers[0].weights[0] - expected).abs() < 1e-15);
        adam.step(&mut net, &grads).unwrap();
        assert_eq!(adam.t, 2);
    }

    #[test]
    fn dropout_identity_at_zero_and_rate_at_half() {
        let mut acts = vec![1.0; 8];
        let scales = apply_dropout(&mut acts, 0.0, &mut rng::seeded(3), None).unwrap();
        assert!(acts.iter().all(|&a| a == 1.0));
        assert!(scales.iter().all(|&s| s == 1.0));

        let mut dropped = 0usize;
        let total = 100_000usize;
        let mut r = rng::seeded(17);
        for _ in 0..total / 10 {
            let mut acts = vec![1.0; 10];
            apply_dropout(&mut acts, 0.5, &mut r, None).unwrap();
            dropped += acts.iter().filter(|&&a| a == 0.0).count();
        }
        let frac = dropped as f64 / total as f64;
        assert!((frac - 0.5).abs() < 0.01, "drop fraction {frac}");

        assert!(apply_dropout(&mut [1.0], 1.0, &mut r, None).is_err());
    }

    #[test]
    fn dropout_respects_eligibility() {
        let mut r = rng::seeded(23);
        for _ in 0..200 {
            let mut acts = vec![1.0, 1.0, 1.0];
            let eligible = [false, true, false];
            apply_dropout(&mut acts, 0.9, &mut r, Some(&eligible)).unwrap();
            assert_eq!(acts[0], 1.0);
            assert_eq!(acts[2], 1.0);
        }
    }

    #[test]
    fn inference_forward_never_applies_dropout() {
        let net = tiny_net(&[4, 8, 2], Activation::Sigmoid, 8);
        let input = [0.1, 0.4, -0.2, 0.9];
        let a = net.forward(&input).unwrap();
        let b = net.forward(&input).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn transform_round_trips() {
        let t = SelTransform::fit(&[0.1, 0.01, 0.001]).unwrap();
        let mut r = rng::seeded(31);
        for _ in 0..100 {
            let s = 10f64.powf(-(r.random::<f64>() * 2.0 + 1.0));
            let back = t.inverse(t.transform(s));
            assert!((back - s).abs() / s < 1e-9, "{s} -> {back}");
        }
    }
}
