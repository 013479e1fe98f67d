//! Fully connected ReLU network with a softmax output, trained by plain SGD
//! on the mean cross-entropy loss.
//!
//! Parameters live in one flat `f64` vector: every layer's weight matrix in
//! layer order (each stored row-major as `out x in`), followed by every
//! layer's bias vector in layer order.

use std::borrow::Borrow;
use std::io::{Read, Write};
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::{LabeledDataset, LabeledSample};
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Layer widths `[input, hidden.., classes]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchSpec {
    layer_sizes: Vec<usize>,
}

impl ArchSpec {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::arg(
                "an architecture needs at least input and output sizes",
            ));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::arg("layer sizes must be positive"));
        }
        Ok(Self { layer_sizes })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    fn num_weights(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1]).sum()
    }

    pub fn num_params(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// `(weight_offset, bias_offset, fan_in, fan_out)` for each layer.
    fn layout(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut w_off = 0;
        let mut b_off = self.num_weights();
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let entry = (w_off, b_off, w[0], w[1]);
                w_off += w[0] * w[1];
                b_off += w[1];
                entry
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: ArchSpec,
    pub values: Vec<f64>,
}

/// Gradient in the same layout as [`ModelParams::values`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector(pub Vec<f64>);

impl GradVector {
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

impl ModelParams {
    pub fn zeros(arch: ArchSpec) -> Self {
        let n = arch.num_params();
        Self {
            arch,
            values: vec![0.0; n],
        }
    }

    pub fn from_values(arch: ArchSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.num_params() {
            return Err(Error::arg(format!(
                "architecture needs {} values, got {}",
                arch.num_params(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("parameter values must be finite"));
        }
        Ok(Self { arch, values })
    }

    /// SHA-256 over the little-endian parameter bytes, hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.values {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Checkpoint: `u64` layer count, `u64` layer sizes, then `f64` values,
    /// all little-endian.
    pub fn write_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let sizes = self.arch.layer_sizes();
        let mut buf = Vec::with_capacity(8 * (1 + sizes.len() + self.values.len()));
        buf.extend_from_slice(&(sizes.len() as u64).to_le_bytes());
        for &s in sizes {
            buf.extend_from_slice(&(s as u64).to_le_bytes());
        }
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        let bad = |msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: msg.to_string(),
        };
        if buf.len() % 8 != 0 || buf.len() < 8 {
            return Err(bad(
                "checkpoint length is not a whole number of 8-byte words",
            ));
        }
        let words: Vec<[u8; 8]> = buf.chunks_exact(8).map(|c| c.try_into().unwrap()).collect();
        let n_layers = u64::from_le_bytes(words[0]) as usize;
        if words.len() < 1 + n_layers {
            return Err(bad("checkpoint truncated inside the layer table"));
        }
        let sizes = words[1..=n_layers]
            .iter()
            .map(|w| u64::from_le_bytes(*w) as usize)
            .collect();
        let arch = ArchSpec::new(sizes)?;
        let values = words[1 + n_layers..]
            .iter()
            .map(|w| f64::from_le_bytes(*w))
            .collect();
        ModelParams::from_values(arch, values)
    }
}

/// He (fan-in) initialization: weights ~ N(0, 2 / fan_in), biases zero.
pub fn init_he(arch: &ArchSpec, seed: u64) -> ModelParams {
    let mut rng = seeded(seed);
    let mut params = ModelParams::zeros(arch.clone());
    for (w_off, _, fan_in, fan_out) in arch.layout() {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
        for v in &mut params.values[w_off..w_off + fan_in * fan_out] {
            *v = normal.sample(&mut rng);
        }
    }
    params
}

/// Per-layer activations of one forward pass. `acts[0]` is the input,
/// `acts[l + 1]` is layer `l`'s output (post-ReLU for hidden layers, raw
/// logits for the last layer).
struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Trace {
    fn new(arch: &ArchSpec) -> Self {
        Self {
            acts: arch.layer_sizes().iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn run(&mut self, p: &ModelParams, x: &[f64]) {
        self.acts[0].copy_from_slice(x);
        let layout = p.arch.layout();
        let last = layout.len() - 1;
        for (l, &(w_off, b_off, fan_in, fan_out)) in layout.iter().enumerate() {
            let (inputs, outputs) = self.acts.split_at_mut(l + 1);
            let input = &inputs[l];
            let out = &mut outputs[0];
            debug_assert_eq!(out.len(), fan_out);
            for (j, o) in out.iter_mut().enumerate() {
                let row = &p.values[w_off + j * fan_in..w_off + (j + 1) * fan_in];
                let z =
                    p.values[b_off + j] + row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>();
                *o = if l < last { z.max(0.0) } else { z };
            }
        }
    }

    fn logits(&self) -> &[f64] {
        self.acts.last().unwrap()
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// `-ln softmax(z)[label]`, computed as `logsumexp(z) - z[label]`.
fn cross_entropy(z: &[f64], label: usize) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - z[label]
}

fn check_input(p: &ModelParams, x: &[f64]) -> Result<()> {
    if x.len() != p.arch.input_dim() {
        return Err(Error::arg(format!(
            "input has {} features, model expects {}",
            x.len(),
            p.arch.input_dim()
        )));
    }
    Ok(())
}

fn check_sample(p: &ModelParams, s: &LabeledSample) -> Result<()> {
    check_input(p, &s.features)?;
    if s.label >= p.arch.num_classes() {
        return Err(Error::arg(format!(
            "label {} out of range for {} classes",
            s.label,
            p.arch.num_classes()
        )));
    }
    Ok(())
}

/// Class probabilities for one input.
pub fn forward(p: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    check_input(p, x)?;
    let mut trace = Trace::new(&p.arch);
    trace.run(p, x);
    let mut probs = trace.logits().to_vec();
    softmax_in_place(&mut probs);
    Ok(probs)
}

/// Mean cross-entropy over `batch` and its gradient by backpropagation.
pub fn loss_and_grad<S: Borrow<LabeledSample>>(
    p: &ModelParams,
    batch: &[S],
) -> Result<(f64, GradVector)> {
    if batch.is_empty() {
        return Err(Error::arg("loss_and_grad needs a nonempty batch"));
    }
    let arch = &p.arch;
    let layout = arch.layout();
    let n_layers = arch.num_layers();
    let mut grad = vec![0.0; p.values.len()];
    let mut trace = Trace::new(arch);
    let mut deltas: Vec<Vec<f64>> = arch.layer_sizes()[1..]
        .iter()
        .map(|&n| vec![0.0; n])
        .collect();
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f64;

    for s in batch {
        let s = s.borrow();
        check_sample(p, s)?;
        trace.run(p, &s.features);
        loss += cross_entropy(trace.logits(), s.label);

        // output delta: softmax(z) - onehot(label)
        let top = &mut deltas[n_layers - 1];
        top.copy_from_slice(trace.logits());
        softmax_in_place(top);
        top[s.label] -= 1.0;

        for l in (0..n_layers).rev() {
            let (w_off, b_off, fan_in, fan_out) = layout[l];
            let input = &trace.acts[l];
            {
                let delta = &deltas[l];
                for j in 0..fan_out {
                    let d = delta[j] * scale;
                    if d == 0.0 {
                        continue;
                    }
                    grad[b_off + j] += d;
                    let row = &mut grad[w_off + j * fan_in..w_off + (j + 1) * fan_in];
                    for (g, a) in row.iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
            }
            if l > 0 {
                let (lower, upper) = deltas.split_at_mut(l);
                let delta = &upper[0];
                let below = &mut lower[l - 1];
                for (i, b) in below.iter_mut().enumerate() {
                    // ReLU derivative, taken as 0 at the kink
                    if input[i] <= 0.0 {
                        *b = 0.0;
                        continue;
                    }
                    *b = (0..fan_out)
                        .map(|j| p.values[w_off + j * fan_in + i] * delta[j])
                        .sum();
                }
            }
        }
    }
    Ok((loss * scale, GradVector(grad)))
}

fn batch_loss<S: Borrow<LabeledSample>>(p: &ModelParams, batch: &[S]) -> f64 {
    let mut trace = Trace::new(&p.arch);
    let total: f64 = batch
        .iter()
        .map(|s| {
            let s = s.borrow();
            trace.run(p, &s.features);
            cross_entropy(trace.logits(), s.label)
        })
        .sum();
    total / batch.len() as f64
}

/// `values - eta * g`.
pub fn sgd_step(p: &ModelParams, g: &GradVector, eta: f64) -> Result<ModelParams> {
    let mut next = p.clone();
    sgd_step_in_place(&mut next, g, eta)?;
    Ok(next)
}

pub fn sgd_step_in_place(p: &mut ModelParams, g: &GradVector, eta: f64) -> Result<()> {
    if g.0.len() != p.values.len() {
        return Err(Error::arg(format!(
            "gradient has {} entries, parameters have {}",
            g.0.len(),
            p.values.len()
        )));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::arg("learning rate must be positive and finite"));
    }
    for (v, d) in p.values.iter_mut().zip(&g.0) {
        *v -= eta * d;
    }
    Ok(())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

pub fn evaluate(p: &ModelParams, ds: &LabeledDataset) -> Result<Evaluation> {
    if ds.is_empty() {
        return Err(Error::arg("cannot evaluate on an empty dataset"));
    }
    let mut trace = Trace::new(&p.arch);
    let mut probs = vec![0.0; p.arch.num_classes()];
    let mut correct = 0usize;
    let mut loss = 0.0;
    for s in &ds.samples {
        check_sample(p, s)?;
        trace.run(p, &s.features);
        loss += cross_entropy(trace.logits(), s.label);
        probs.copy_from_slice(trace.logits());
        softmax_in_place(&mut probs);
        if argmax(&probs) == s.label {
            correct += 1;
        }
    }
    let n = ds.len() as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        loss: loss / n,
    })
}

/// Largest relative disagreement between the backprop gradient and central
/// finite differences over all coordinates.
pub fn finite_diff_check<S: Borrow<LabeledSample>>(
    p: &ModelParams,
    batch: &[S],
    eps: f64,
) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::arg("eps must be positive and finite"));
    }
    let (_, g) = loss_and_grad(p, batch)?;
    let mut probe = p.clone();
    let mut worst: f64 = 0.0;
    for i in 0..p.values.len() {
        let orig = p.values[i];
        probe.values[i] = orig + eps;
        let up = batch_loss(&probe, batch);
        probe.values[i] = orig - eps;
        let down = batch_loss(&probe, batch);
        probe.values[i] = orig;
        let diff = (up - down) / (2.0 * eps);
        let err = (diff - g.0[i]).abs() / (diff.abs() + g.0[i].abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Convex combination of parameter vectors with normalized weights.
pub fn average_params(models: &[ModelParams], weights: &[f64]) -> Result<ModelParams> {
    let first = models
        .first()
        .ok_or_else(|| Error::arg("average_params needs at least one model"))?;
    if weights.len() != models.len() {
        return Err(Error::arg("one weight per model is required"));
    }
    if let Some(m) = models.iter().find(|m| m.arch != first.arch) {
        return Err(Error::arg(format!(
            "architecture mismatch: {:?} vs {:?}",
            first.arch.layer_sizes(),
            m.arch.layer_sizes()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::arg("weights must be finite and non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::arg("weights must have a positive sum"));
    }
    let mut values = vec![0.0; first.values.len()];
    for (m, w) in models.iter().zip(weights) {
        let w = w / total;
        for (acc, v) in values.iter_mut().zip(&m.values) {
            *acc += w * v;
        }
    }
    Ok(ModelParams {
        arch: first.arch.clone(),
        values,
    })
}
