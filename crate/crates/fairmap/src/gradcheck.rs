//! Central finite-difference oracle for gradient verification.
//!
//! The oracle re-derives the combined loss directly from the network's
//! layer data and the loss definitions, evaluated in double-double
//! arithmetic (~31 significant digits). It shares no code with the analytic
//! backpropagation path it checks, and the extended precision removes the
//! f64 cancellation floor from the central difference, leaving only the
//! O(step^2) truncation term.

use crate::error::Result;
use crate::network::{Activation, MappingNetwork};
use crate::training::{KeywordBatch, NetworkGradient, TrainConfig};

/// Double-double value: an unevaluated sum hi + lo with |lo| <= ulp(hi)/2.
/// The usual error-free transformations (Dekker/Knuth); products use fused
/// multiply-add.
#[derive(Debug, Clone, Copy)]
struct Dd {
    hi: f64,
    lo: f64,
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    // requires |a| >= |b| or a == 0
    let s = a + b;
    (s, b - (s - a))
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    fn new(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    fn add(self, b: Dd) -> Dd {
        let (s1, s2) = two_sum(self.hi, b.hi);
        let (t1, t2) = two_sum(self.lo, b.lo);
        let (s1, s2) = quick_two_sum(s1, s2 + t1);
        let (hi, lo) = quick_two_sum(s1, s2 + t2);
        Dd { hi, lo }
    }

    fn add_f64(self, b: f64) -> Dd {
        let (s1, s2) = two_sum(self.hi, b);
        let (hi, lo) = quick_two_sum(s1, s2 + self.lo);
        Dd { hi, lo }
    }

    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    fn sub(self, b: Dd) -> Dd {
        self.add(b.neg())
    }

    fn mul(self, b: Dd) -> Dd {
        let (p1, p2) = two_prod(self.hi, b.hi);
        let (hi, lo) = quick_two_sum(p1, p2 + (self.hi * b.lo + self.lo * b.hi));
        Dd { hi, lo }
    }

    fn mul_f64(self, b: f64) -> Dd {
        let (p1, p2) = two_prod(self.hi, b);
        let (hi, lo) = quick_two_sum(p1, p2 + self.lo * b);
        Dd { hi, lo }
    }

    fn div_f64(self, b: f64) -> Dd {
        let q1 = self.hi / b;
        let r = self.sub(Dd::new(q1).mul_f64(b));
        let q2 = r.hi / b;
        let r = r.sub(Dd::new(q2).mul_f64(b));
        let q3 = r.hi / b;
        let (s, e) = quick_two_sum(q1, q2);
        Dd { hi: s, lo: e }.add_f64(q3)
    }

    /// One Newton step in double-double from the correctly rounded f64 root.
    fn sqrt(self) -> Dd {
        if self.hi <= 0.0 {
            return Dd::ZERO;
        }
        let y = Dd::new(self.hi.sqrt());
        let residual = self.sub(y.mul(y));
        y.add(residual.div_f64(2.0 * y.hi))
    }

    fn is_positive(self) -> bool {
        self.hi > 0.0 || (self.hi == 0.0 && self.lo > 0.0)
    }

    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

/// Which parameter a loss evaluation perturbs.
#[derive(Clone, Copy)]
struct Perturbation {
    layer: usize,
    row: usize,
    /// Weight column, or the bias entry when None.
    column: Option<usize>,
    delta: f64,
}

fn dd_activation(activation: Activation, z: Dd) -> Dd {
    match activation {
        Activation::Identity => z,
        Activation::LeakyRelu { slope } => {
            if z.is_positive() {
                z
            } else {
                z.mul_f64(slope)
            }
        }
    }
}

fn dd_forward(net: &MappingNetwork, x: &[f64], p: Perturbation) -> Vec<Dd> {
    let last = net.layers().len() - 1;
    let mut h: Vec<Dd> = x.iter().map(|&v| Dd::new(v)).collect();
    for (l, layer) in net.layers().iter().enumerate() {
        let mut next = Vec::with_capacity(h.len());
        for (r, row) in layer.weight.iter().enumerate() {
            let mut acc = Dd::ZERO;
            for (c, (&w, hv)) in row.iter().zip(&h).enumerate() {
                let mut w = Dd::new(w);
                if p.layer == l && p.row == r && p.column == Some(c) {
                    w = w.add_f64(p.delta);
                }
                acc = acc.add(w.mul(*hv));
            }
            let mut bias = Dd::new(layer.bias[r]);
            if p.layer == l && p.row == r && p.column.is_none() {
                bias = bias.add_f64(p.delta);
            }
            let z = acc.add(bias);
            next.push(if l < last { dd_activation(net.activation(), z) } else { z });
        }
        h = next;
    }
    h
}

fn dd_squared_distance_to(mapped: &[Dd], original: &[f64]) -> Dd {
    let mut acc = Dd::ZERO;
    for (m, &o) in mapped.iter().zip(original) {
        let diff = m.add_f64(-o);
        acc = acc.add(diff.mul(diff));
    }
    acc
}

fn dd_squared_distance(a: &[Dd], b: &[Dd]) -> Dd {
    let mut acc = Dd::ZERO;
    for (x, y) in a.iter().zip(b) {
        let diff = x.sub(*y);
        acc = acc.add(diff.mul(diff));
    }
    acc
}

/// Combined loss at the perturbed parameters, straight from the loss
/// definitions: mean squared displacement plus lambda times the
/// root-variance of neutral-to-attribute distances.
fn dd_loss_total(
    batch: &KeywordBatch,
    net: &MappingNetwork,
    lambda: f64,
    p: Perturbation,
) -> Dd {
    let m = batch.attributed().len();
    let mapped_neutral = dd_forward(net, batch.neutral().values(), p);
    let mut text = dd_squared_distance_to(&mapped_neutral, batch.neutral().values());
    let mut distances = Vec::with_capacity(m);
    for original in batch.attributed() {
        let mapped = dd_forward(net, original.values(), p);
        text = text.add(dd_squared_distance_to(&mapped, original.values()));
        distances.push(dd_squared_distance(&mapped, &mapped_neutral).sqrt());
    }
    let text = text.div_f64((m + 1) as f64);

    let mut mean = Dd::ZERO;
    for d in &distances {
        mean = mean.add(*d);
    }
    let mean = mean.div_f64(m as f64);
    let mut variance = Dd::ZERO;
    for d in &distances {
        let dev = d.sub(mean);
        variance = variance.add(dev.mul(dev));
    }
    let fair = variance.div_f64(m as f64).sqrt();
    text.add(fair.mul_f64(lambda))
}

/// Gradient of the combined loss estimated by central differences: each
/// parameter is displaced by exactly +/-step (in double-double the
/// displaced value is exact) and the loss difference is formed in extended
/// precision before the single rounding to f64.
pub fn finite_difference_gradient(
    batch: &KeywordBatch,
    net: &MappingNetwork,
    config: &TrainConfig,
    step: f64,
) -> Result<NetworkGradient> {
    let mut grad = NetworkGradient::zeros_like(net);
    let dim = net.dim();
    let eval = |layer: usize, row: usize, column: Option<usize>| {
        let plus = dd_loss_total(
            batch,
            net,
            config.lambda,
            Perturbation {
                layer,
                row,
                column,
                delta: step,
            },
        );
        let minus = dd_loss_total(
            batch,
            net,
            config.lambda,
            Perturbation {
                layer,
                row,
                column,
                delta: -step,
            },
        );
        plus.sub(minus).to_f64() / (2.0 * step)
    };
    for l in 0..net.layers().len() {
        for r in 0..dim {
            for c in 0..dim {
                grad.layers[l].weight[r][c] = eval(l, r, Some(c));
            }
            grad.layers[l].bias[r] = eval(l, r, None);
        }
    }
    Ok(grad)
}

/// Outcome of comparing an analytic gradient against the oracle.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradComparison {
    /// Components whose magnitude cleared the gate and were compared.
    pub compared: usize,
    /// Components below the magnitude gate, skipped.
    pub skipped: usize,
    /// Largest relative error among compared components.
    pub max_rel_error: f64,
}

/// Compares component-wise with relative error |a - n| / (|a| + |n|),
/// skipping components where both magnitudes are at most `min_magnitude`.
pub fn compare_gradients(
    analytic: &NetworkGradient,
    numeric: &NetworkGradient,
    min_magnitude: f64,
) -> GradComparison {
    let mut result = GradComparison::default();
    for (a, n) in analytic.components().zip(numeric.components()) {
        if a.abs().max(n.abs()) <= min_magnitude {
            result.skipped += 1;
            continue;
        }
        result.compared += 1;
        let rel = (a - n).abs() / (a.abs() + n.abs());
        if rel > result.max_rel_error {
            result.max_rel_error = rel;
        }
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EncoderHandle;
    use crate::lexicon::{Keyword, KeywordCategory};
    use crate::network::InitMode;
    use crate::training::{grad_total, loss_total};

    #[test]
    fn dd_arithmetic_is_exacter_than_f64() {
        // 0.1 + 0.2 - 0.3 in double-double is the exact residue of the
        // three f64 representations: tiny but nonzero.
        let x = Dd::new(0.1).add(Dd::new(0.2)).sub(Dd::new(0.3));
        assert!(x.to_f64().abs() < 1e-16);
        assert!(x.to_f64() != 0.0);

        // Plain f64 rounds the 1 away here; double-double keeps it.
        let y = Dd::new(1e16).add_f64(1.0).add_f64(-1e16);
        assert_eq!(y.to_f64(), 1.0);

        let two = Dd::new(2.0);
        let root = two.sqrt();
        let back = root.mul(root).sub(two);
        assert!(back.to_f64().abs() < 1e-30);

        let third = Dd::new(1.0).div_f64(3.0);
        let back = third.mul_f64(3.0).add_f64(-1.0);
        assert!(back.to_f64().abs() < 1e-30);
    }

    fn synthetic_batch(dim: usize, seed: u64, n_attrs: usize) -> KeywordBatch {
        let enc = EncoderHandle::synthetic(dim, seed).unwrap();
        let neutral = enc.encode("neutral").unwrap();
        let attributed = (0..n_attrs)
            .map(|j| enc.encode(&format!("attr {j}")).unwrap())
            .collect();
        KeywordBatch::new(
            Keyword::new("probe", KeywordCategory::Custom).unwrap(),
            neutral,
            attributed,
        )
        .unwrap()
    }

    #[test]
    fn dd_loss_agrees_with_f64_loss_at_unperturbed_point() {
        let net = MappingNetwork::init(6, 3, InitMode::SeededRandom { seed: 8 }).unwrap();
        let batch = synthetic_batch(6, 21, 3);
        let config = TrainConfig::default();
        let f64_loss = loss_total(&batch, &net, &config).unwrap();
        let dd_loss = dd_loss_total(
            &batch,
            &net,
            config.lambda,
            Perturbation {
                layer: 0,
                row: 0,
                column: Some(0),
                delta: 0.0,
            },
        )
        .to_f64();
        assert!(
            (f64_loss - dd_loss).abs() <= 1e-14 * f64_loss.abs().max(1.0),
            "{f64_loss} vs {dd_loss}"
        );
    }

    #[test]
    fn analytic_gradient_matches_oracle() {
        let net = MappingNetwork::init(8, 3, InitMode::SeededRandom { seed: 5 }).unwrap();
        let batch = synthetic_batch(8, 9, 2);
        let config = TrainConfig::default();
        let analytic = grad_total(&batch, &net, &config).unwrap();
        let numeric = finite_difference_gradient(&batch, &net, &config, 1e-5).unwrap();
        let cmp = compare_gradients(&analytic, &numeric, 1e-8);
        assert!(cmp.compared > 0);
        assert!(
            cmp.max_rel_error < 1e-5,
            "max relative error {}",
            cmp.max_rel_error
        );
    }

    #[test]
    fn oracle_detects_a_broken_gradient() {
        let net = MappingNetwork::init(4, 2, InitMode::SeededRandom { seed: 6 }).unwrap();
        let batch = synthetic_batch(4, 10, 2);
        let config = TrainConfig::default();
        let mut analytic = grad_total(&batch, &net, &config).unwrap();
        analytic.layers[0].weight[0][0] += 0.5;
        let numeric = finite_difference_gradient(&batch, &net, &config, 1e-5).unwrap();
        let cmp = compare_gradients(&analytic, &numeric, 1e-8);
        assert!(cmp.max_rel_error > 1e-2);
    }
}
