//! Losses, analytic gradients, and the full-batch gradient-descent loop.
//!
//! Per keyword the batch couples the neutral-prompt embedding with one
//! embedding per attribute. The semantic-consistency loss penalizes
//! displacement of every embedding under the mapping; the fairness loss is
//! the root-variance of the mapped neutral embedding's distances to the
//! mapped attributed embeddings. Gradients are hand-derived reverse
//! accumulation through the affine stack, the distance terms, and the
//! variance; the square-root and distance singularities are guarded on the
//! gradient path only, never in reported loss values.

use crate::embedding::{EmbeddingStore, EmbeddingVector};
use crate::error::{Error, Result};
use crate::lexicon::{AttributeSet, Keyword};
use crate::network::MappingNetwork;
use std::io::Write;
use std::path::Path;

/// Embeddings for one keyword: the neutral prompt plus one vector per
/// attribute, in attribute-set order.
#[derive(Debug, Clone)]
pub struct KeywordBatch {
    keyword: Keyword,
    neutral: EmbeddingVector,
    attributed: Vec<EmbeddingVector>,
}

impl KeywordBatch {
    pub fn new(
        keyword: Keyword,
        neutral: EmbeddingVector,
        attributed: Vec<EmbeddingVector>,
    ) -> Result<Self> {
        if attributed.len() < 2 {
            return Err(Error::Invalid(format!(
                "keyword {:?} needs at least 2 attributed embeddings, got {}",
                keyword.text(),
                attributed.len()
            )));
        }
        for v in &attributed {
            if v.dim() != neutral.dim() {
                return Err(Error::DimMismatch {
                    expected: neutral.dim(),
                    got: v.dim(),
                });
            }
        }
        Ok(KeywordBatch {
            keyword,
            neutral,
            attributed,
        })
    }

    pub fn keyword(&self) -> &Keyword {
        &self.keyword
    }

    pub fn neutral(&self) -> &EmbeddingVector {
        &self.neutral
    }

    pub fn attributed(&self) -> &[EmbeddingVector] {
        &self.attributed
    }

    pub fn dim(&self) -> usize {
        self.neutral.dim()
    }
}

/// Assembles one batch per keyword from a store, matching records by
/// (keyword, attribute) metadata. Missing prompts are reported exhaustively.
pub fn build_batches(
    store: &EmbeddingStore,
    keywords: &[Keyword],
    attrs: &AttributeSet,
) -> Result<Vec<KeywordBatch>> {
    let mut missing = Vec::new();
    let mut batches = Vec::new();
    for kw in keywords {
        let neutral = store.find_by_meta(kw.text(), None)?;
        if neutral.is_none() {
            missing.push(format!("{} (neutral)", kw.text()));
        }
        let mut attributed = Vec::with_capacity(attrs.len());
        for member in attrs.members() {
            match store.find_by_meta(kw.text(), Some(member))? {
                Some(record) => attributed.push(record.vector.clone()),
                None => missing.push(format!("{} ({member})", kw.text())),
            }
        }
        if let (Some(record), true) = (neutral, attributed.len() == attrs.len()) {
            batches.push(KeywordBatch::new(
                kw.clone(),
                record.vector.clone(),
                attributed,
            )?);
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingPrompts(missing));
    }
    Ok(batches)
}

/// Hyperparameters of the descent loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub lambda: f64,
    /// Guard for the square-root and distance singularities on the gradient
    /// path. Loss values never see it.
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            epochs: 500,
            lambda: 0.1,
            eps: 1e-12,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Invalid("learning rate must be positive".into()));
        }
        if self.eps <= 0.0 || !self.eps.is_finite() {
            return Err(Error::Invalid("eps must be positive".into()));
        }
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::Invalid("lambda must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Loss values for one batch or one epoch mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Losses {
    pub text: f64,
    pub fair: f64,
    pub total: f64,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

struct BatchForward {
    /// Per-input layer caches; index 0 is the neutral prompt, then one per
    /// attribute.
    caches: Vec<crate::network::ForwardCache>,
    distances: Vec<f64>,
    mean_distance: f64,
    variance: f64,
    losses: Losses,
}

fn forward_batch(batch: &KeywordBatch, net: &MappingNetwork, lambda: f64) -> Result<BatchForward> {
    if batch.dim() != net.dim() {
        return Err(Error::DimMismatch {
            expected: net.dim(),
            got: batch.dim(),
        });
    }
    let m = batch.attributed.len();
    let mut caches = Vec::with_capacity(m + 1);
    caches.push(net.forward_cached(batch.neutral.values()));
    for v in &batch.attributed {
        caches.push(net.forward_cached(v.values()));
    }

    let mapped_neutral = &caches[0].2;
    let mut text_sum = squared_distance(mapped_neutral, batch.neutral.values());
    let mut distances = Vec::with_capacity(m);
    for (cache, original) in caches[1..].iter().zip(&batch.attributed) {
        text_sum += squared_distance(&cache.2, original.values());
        distances.push(squared_distance(&cache.2, mapped_neutral).sqrt());
    }
    let text = text_sum / (m + 1) as f64;

    let mean_distance = distances.iter().sum::<f64>() / m as f64;
    let variance = distances
        .iter()
        .map(|d| (d - mean_distance) * (d - mean_distance))
        .sum::<f64>()
        / m as f64;
    let fair = variance.max(0.0).sqrt();
    let total = text + lambda * fair;
    if !total.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok(BatchForward {
        caches,
        distances,
        mean_distance,
        variance,
        losses: Losses { text, fair, total },
    })
}

/// Semantic-consistency loss: mean squared displacement of every embedding
/// in the batch under the mapping.
pub fn loss_text(batch: &KeywordBatch, net: &MappingNetwork) -> Result<f64> {
    Ok(forward_batch(batch, net, 0.0)?.losses.text)
}

/// Fairness loss: root-variance of the mapped neutral embedding's distances
/// to the mapped attributed embeddings. The value is the exact root-variance;
/// no guard enters here.
pub fn loss_fair(batch: &KeywordBatch, net: &MappingNetwork) -> Result<f64> {
    Ok(forward_batch(batch, net, 0.0)?.losses.fair)
}

/// Combined per-keyword loss: text + lambda * fair.
pub fn loss_total(batch: &KeywordBatch, net: &MappingNetwork, config: &TrainConfig) -> Result<f64> {
    Ok(forward_batch(batch, net, config.lambda)?.losses.total)
}

/// All three loss values in one pass.
pub fn batch_losses(batch: &KeywordBatch, net: &MappingNetwork, config: &TrainConfig) -> Result<Losses> {
    Ok(forward_batch(batch, net, config.lambda)?.losses)
}

/// Mean losses over a set of batches.
pub fn mean_losses(
    batches: &[KeywordBatch],
    net: &MappingNetwork,
    config: &TrainConfig,
) -> Result<Losses> {
    if batches.is_empty() {
        return Err(Error::Invalid("no batches".into()));
    }
    let mut sums = Losses {
        text: 0.0,
        fair: 0.0,
        total: 0.0,
    };
    for batch in batches {
        let l = batch_losses(batch, net, config)?;
        sums.text += l.text;
        sums.fair += l.fair;
        sums.total += l.total;
    }
    let n = batches.len() as f64;
    Ok(Losses {
        text: sums.text / n,
        fair: sums.fair / n,
        total: sums.total / n,
    })
}

/// Per-layer gradient container with the same shape as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGradient {
    pub layers: Vec<LayerGradient>,
}

impl NetworkGradient {
    pub fn zeros_like(net: &MappingNetwork) -> Self {
        let dim = net.dim();
        NetworkGradient {
            layers: net
                .layers()
                .iter()
                .map(|_| LayerGradient {
                    weight: vec![vec![0.0; dim]; dim],
                    bias: vec![0.0; dim],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &NetworkGradient) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (ra, rb) in a.weight.iter_mut().zip(&b.weight) {
                for (wa, wb) in ra.iter_mut().zip(rb) {
                    *wa += wb;
                }
            }
            for (ba, bb) in a.bias.iter_mut().zip(&b.bias) {
                *ba += bb;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weight.iter().flatten().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite())
        })
    }

    /// Flat view over every component, layer by layer, weights row-major
    /// then bias. Matches the iteration order of the finite-difference
    /// oracle.
    pub fn components(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| {
            l.weight
                .iter()
                .flatten()
                .copied()
                .chain(l.bias.iter().copied())
        })
    }
}

/// Backpropagates `out_grad` (gradient w.r.t. the network output) through
/// one cached forward pass, accumulating into `grad`.
fn backprop(
    net: &MappingNetwork,
    inputs: &[Vec<f64>],
    pre_acts: &[Vec<f64>],
    out_grad: &[f64],
    grad: &mut NetworkGradient,
) {
    let last = net.layers().len() - 1;
    let mut delta = out_grad.to_vec();
    for l in (0..net.layers().len()).rev() {
        // No activation after the last layer.
        if l < last {
            for (d, z) in delta.iter_mut().zip(&pre_acts[l]) {
                *d *= net.activation().derivative(*z);
            }
        }
        let layer_grad = &mut grad.layers[l];
        let layer_input = &inputs[l];
        for (r, d) in delta.iter().enumerate() {
            let row = &mut layer_grad.weight[r];
            for (slot, x) in row.iter_mut().zip(layer_input) {
                *slot += d * x;
            }
            layer_grad.bias[r] += d;
        }
        if l > 0 {
            let weight = &net.layers()[l].weight;
            let mut lower = vec![0.0; delta.len()];
            for (r, d) in delta.iter().enumerate() {
                for (slot, w) in lower.iter_mut().zip(&weight[r]) {
                    *slot += d * w;
                }
            }
            delta = lower;
        }
    }
}

fn grad_and_losses(
    batch: &KeywordBatch,
    net: &MappingNetwork,
    config: &TrainConfig,
) -> Result<(NetworkGradient, Losses)> {
    config.validate()?;
    let fwd = forward_batch(batch, net, config.lambda)?;
    let m = batch.attributed.len();
    let dim = net.dim();
    let text_scale = 2.0 / (m + 1) as f64;
    // Guards: the loss value is sqrt(variance), whose derivative blows up at
    // zero variance; the distance terms divide by d_j. Both are replaced by
    // guarded forms here only.
    let guarded_root = (fwd.variance.max(0.0) + config.eps).sqrt();
    let mapped_neutral = &fwd.caches[0].2;

    // Gradient w.r.t. the mapped neutral embedding.
    let mut neutral_grad = vec![0.0; dim];
    for (slot, (v, f)) in neutral_grad
        .iter_mut()
        .zip(mapped_neutral.iter().zip(batch.neutral.values()))
    {
        *slot = text_scale * (v - f);
    }
    // Gradients w.r.t. each mapped attributed embedding.
    let mut attr_grads = vec![vec![0.0; dim]; m];
    for (k, grad_k) in attr_grads.iter_mut().enumerate() {
        let mapped_k = &fwd.caches[k + 1].2;
        let fair_coeff =
            config.lambda * (fwd.distances[k] - fwd.mean_distance) / (m as f64 * guarded_root);
        let inv_d = 1.0 / fwd.distances[k].max(config.eps);
        for i in 0..dim {
            let text_term = text_scale * (mapped_k[i] - batch.attributed[k].values()[i]);
            let direction = mapped_neutral[i] - mapped_k[i];
            grad_k[i] = text_term - fair_coeff * direction * inv_d;
            neutral_grad[i] += fair_coeff * direction * inv_d;
        }
    }

    let mut grad = NetworkGradient::zeros_like(net);
    backprop(net, &fwd.caches[0].0, &fwd.caches[0].1, &neutral_grad, &mut grad);
    for (k, grad_k) in attr_grads.iter().enumerate() {
        backprop(net, &fwd.caches[k + 1].0, &fwd.caches[k + 1].1, grad_k, &mut grad);
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok((grad, fwd.losses))
}

/// Analytic gradient of the combined loss for one batch with respect to
/// every weight and bias.
pub fn grad_total(
    batch: &KeywordBatch,
    net: &MappingNetwork,
    config: &TrainConfig,
) -> Result<NetworkGradient> {
    Ok(grad_and_losses(batch, net, config)?.0)
}

/// One row of the training trace: losses at the start of the epoch, before
/// that epoch's update. Epochs are 1-based, so row 1 holds the initial
/// losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub epoch: usize,
    pub l_text: f64,
    pub l_fair: f64,
    pub l_total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub entries: Vec<TraceEntry>,
}

impl TrainTrace {
    /// Writes the trace as CSV with full-precision numbers.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
        let file = std::fs::File::create(path).map_err(io_err)?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "epoch,l_text,l_fair,l_total").map_err(io_err)?;
        for entry in &self.entries {
            writeln!(
                w,
                "{},{},{},{}",
                entry.epoch, entry.l_text, entry.l_fair, entry.l_total
            )
            .map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }
}

fn apply_step(net: &mut MappingNetwork, grad: &NetworkGradient, step: f64) {
    for (layer, g) in net.layers_mut().iter_mut().zip(&grad.layers) {
        for (row, grow) in layer.weight.iter_mut().zip(&g.weight) {
            for (w, gw) in row.iter_mut().zip(grow) {
                *w -= step * gw;
            }
        }
        for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
            *b -= step * gb;
        }
    }
}

/// Full-batch gradient descent at the configured hyperparameters: per epoch,
/// the mean gradient over all batches updates every parameter by
/// -learning_rate * gradient. Deterministic given (net, batches, config).
/// The trace records losses at the start of each epoch.
pub fn train(
    batches: &[KeywordBatch],
    net: &MappingNetwork,
    config: &TrainConfig,
) -> Result<(MappingNetwork, TrainTrace)> {
    config.validate()?;
    if batches.is_empty() {
        return Err(Error::Invalid("no training batches".into()));
    }
    for batch in batches {
        if batch.dim() != net.dim() {
            return Err(Error::DimMismatch {
                expected: net.dim(),
                got: batch.dim(),
            });
        }
    }
    let mut net = net.clone();
    let mut trace = TrainTrace::default();
    let count = batches.len() as f64;
    for epoch in 1..=config.epochs {
        let mut grad_sum = NetworkGradient::zeros_like(&net);
        let mut loss_sum = Losses {
            text: 0.0,
            fair: 0.0,
            total: 0.0,
        };
        for batch in batches {
            let (grad, losses) =
                grad_and_losses(batch, &net, config).map_err(|e| match e {
                    Error::NonFinite(_) => Error::Divergence { epoch },
                    other => other,
                })?;
            grad_sum.add_assign(&grad);
            loss_sum.text += losses.text;
            loss_sum.fair += losses.fair;
            loss_sum.total += losses.total;
        }
        let mean = Losses {
            text: loss_sum.text / count,
            fair: loss_sum.fair / count,
            total: loss_sum.total / count,
        };
        if !mean.total.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        trace.entries.push(TraceEntry {
            epoch,
            l_text: mean.text,
            l_fair: mean.fair,
            l_total: mean.total,
        });
        apply_step(&mut net, &grad_sum, config.learning_rate / count);
    }
    Ok((net, trace))
}
