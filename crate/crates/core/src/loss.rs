//! Loss layers: the weighted logistic pair loss over a score map, the
//! softmax-squared-error triplet loss over a hard positive/negative pair,
//! and the learned two-weight combination with clamp threshold.
//!
//! All loss math runs in 64-bit regardless of the feature precision; the
//! triplet gradient's fourth-power terms underflow quickly in 32-bit.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::scalar::Scalar;
use crate::tensor::Grid;

/// Per-cell ground-truth labels, +1 or -1, with both classes present.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap {
    h: usize,
    w: usize,
    labels: Vec<i8>,
    positives: usize,
}

impl LabelMap {
    pub fn new(h: usize, w: usize, labels: Vec<i8>) -> Result<Self> {
        if labels.len() != h * w {
            return Err(Error::ShapeMismatch(format!(
                "label data length {} does not match {}x{}",
                labels.len(),
                h,
                w
            )));
        }
        if labels.iter().any(|&l| l != 1 && l != -1) {
            return Err(Error::InvalidArgument("labels must be +1 or -1".into()));
        }
        let positives = labels.iter().filter(|&&l| l == 1).count();
        if positives == 0 || positives == labels.len() {
            return Err(Error::InvalidArgument(
                "label map needs at least one positive and one negative cell".into(),
            ));
        }
        Ok(LabelMap {
            h,
            w,
            labels,
            positives,
        })
    }

    pub fn height(&self) -> usize {
        self.h
    }
    pub fn width(&self) -> usize {
        self.w
    }
    pub fn labels(&self) -> &[i8] {
        &self.labels
    }
    #[inline]
    pub fn at(&self, r: usize, c: usize) -> i8 {
        self.labels[r * self.w + c]
    }
    pub fn positive_count(&self) -> usize {
        self.positives
    }
    pub fn negative_count(&self) -> usize {
        self.labels.len() - self.positives
    }
}

/// Per-cell pair-loss weights: strictly positive, summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMap {
    h: usize,
    w: usize,
    weights: Vec<f64>,
}

impl WeightMap {
    /// The sum constraint is checked to 1e-9; construction sites normalize
    /// explicitly so the post-normalization drift stays near 1e-16.
    pub fn new(h: usize, w: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != h * w {
            return Err(Error::ShapeMismatch(format!(
                "weight data length {} does not match {}x{}",
                weights.len(),
                h,
                w
            )));
        }
        if weights
            .iter()
            .any(|&v| v.partial_cmp(&0.0) != Some(core::cmp::Ordering::Greater) || !v.is_finite())
        {
            return Err(Error::InvalidArgument(
                "instance weights must be strictly positive and finite".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "instance weights must sum to 1 (got {sum})"
            )));
        }
        Ok(WeightMap { h, w, weights })
    }

    pub fn uniform(h: usize, w: usize) -> Self {
        let n = h * w;
        WeightMap {
            h,
            w,
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn height(&self) -> usize {
        self.h
    }
    pub fn width(&self) -> usize {
        self.w
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.weights[r * self.w + c]
    }
    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub(crate) fn from_raw_normalized(h: usize, w: usize, mut weights: Vec<f64>) -> Self {
        let sum: f64 = weights.iter().sum();
        for v in &mut weights {
            *v /= sum;
        }
        WeightMap { h, w, weights }
    }
}

/// The two learnable loss-combination weights and their clamp threshold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    w: [f64; 2],
    threshold: f64,
}

impl LossWeights {
    pub fn new(w: [f64; 2], threshold: f64) -> Self {
        LossWeights { w, threshold }
    }

    pub fn values(&self) -> [f64; 2] {
        self.w
    }
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn set(&mut self, w: [f64; 2]) {
        self.w = w;
    }
}

/// Replace each weight by `max(T, w)`; the threshold keeps both weights
/// strictly positive under SGD.
pub fn clamp_weights(weights: LossWeights) -> LossWeights {
    LossWeights {
        w: [
            weights.w[0].max(weights.threshold),
            weights.w[1].max(weights.threshold),
        ],
        threshold: weights.threshold,
    }
}

/// Stable softplus: `ln(1 + exp(x)) = max(x, 0) + ln1p(exp(-|x|))`.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + math::ln_1p(math::exp(-x.abs()))
}

/// Stable logistic sigmoid.
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + math::exp(-x))
    } else {
        let e = math::exp(x);
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug)]
pub struct PairLossOut {
    pub loss: f64,
    /// dL1/dv per cell, in 64-bit.
    pub grad: Grid<f64>,
}

/// Weighted averaged logistic loss over the score map:
/// `L1 = sum_u w[u] * ln(1 + exp(-y[u] v[u]))`, evaluated in its
/// overflow-free form, with gradient `-w[u] y[u] sigma(-y[u] v[u])`.
pub fn pair_loss<T: Scalar>(v: &Grid<T>, y: &LabelMap, w: &WeightMap) -> Result<PairLossOut> {
    if (v.height(), v.width()) != (y.height(), y.width())
        || (v.height(), v.width()) != (w.height(), w.width())
    {
        return Err(Error::ShapeMismatch(format!(
            "pair_loss: score {}x{}, labels {}x{}, weights {}x{}",
            v.height(),
            v.width(),
            y.height(),
            y.width(),
            w.height(),
            w.width()
        )));
    }
    let sum = w.sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "pair_loss: weights must be normalized (sum {sum})"
        )));
    }
    let mut loss = 0.0;
    let mut grad = Grid::zeros(v.height(), v.width());
    for r in 0..v.height() {
        for c in 0..v.width() {
            let yi = y.at(r, c) as f64;
            let wi = w.at(r, c);
            let t = yi * v.at(r, c).to_f64();
            loss += wi * softplus(-t);
            *grad.at_mut(r, c) = -wi * yi * sigmoid(-t);
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite(
            "pair_loss produced a non-finite value".into(),
        ));
    }
    Ok(PairLossOut { loss, grad })
}

#[derive(Clone, Copy, Debug)]
pub struct TripletOut {
    pub s_plus: f64,
    pub s_minus: f64,
    pub loss: f64,
    pub d_f_plus: f64,
    pub d_f_minus: f64,
}

/// Softmax of the two similarity scores followed by squared error against
/// the ideal (1, 0). The shared max is subtracted before exponentiation so
/// arbitrarily large scores stay finite. Gradients are `-4 s+ s-^2` and
/// `+4 s+ s-^2`.
pub fn triplet_loss(f_plus: f64, f_minus: f64) -> Result<TripletOut> {
    if !f_plus.is_finite() || !f_minus.is_finite() {
        return Err(Error::NonFinite(format!(
            "triplet_loss inputs must be finite (got {f_plus}, {f_minus})"
        )));
    }
    // The losing side comes from the division, so it stays positive out to
    // the subnormal floor; the winner is its complement and the computed
    // sum lands on 1.0 bit-for-bit.
    let (s_plus, s_minus) = if f_plus >= f_minus {
        let sm = 1.0 / (1.0 + math::exp(f_plus - f_minus));
        (1.0 - sm, sm)
    } else {
        let sp = 1.0 / (1.0 + math::exp(f_minus - f_plus));
        (sp, 1.0 - sp)
    };
    let loss = (s_plus - 1.0) * (s_plus - 1.0) + s_minus * s_minus;
    let g = 4.0 * s_plus * s_minus * s_minus;
    Ok(TripletOut {
        s_plus,
        s_minus,
        loss,
        d_f_plus: -g,
        d_f_minus: g,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct CombineOut {
    pub loss: f64,
    pub d_l1: f64,
    pub d_l2: f64,
    pub d_w: [f64; 2],
}

/// Normalized weighted sum `L = (w1 L1 + w2 L2) / (w1 + w2)` with its
/// partial derivatives with respect to the losses and the weights.
pub fn combine_loss(l1: f64, l2: f64, weights: &LossWeights) -> Result<CombineOut> {
    let [w1, w2] = weights.w;
    if w1 < weights.threshold || w2 < weights.threshold {
        return Err(Error::InvalidArgument(format!(
            "combine_loss: weights ({w1}, {w2}) below threshold {}; clamp first",
            weights.threshold
        )));
    }
    let ws = w1 + w2;
    let weighted = w1 * l1 + w2 * l2;
    let loss = weighted / ws;
    // The complement form keeps d_l1 + d_l2 summing to exactly one.
    let d_l1 = w1 / ws;
    Ok(CombineOut {
        loss,
        d_l1,
        d_l2: 1.0 - d_l1,
        d_w: [
            (ws * l1 - weighted) / (ws * ws),
            (ws * l2 - weighted) / (ws * ws),
        ],
    })
}
