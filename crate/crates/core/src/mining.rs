//! The precompute phase of a training iteration: build the centered label
//! map, initialize class-balanced weights, double the weights of negatives
//! that outscore the weakest positive, and pick the hard positive/negative
//! pair feeding the triplet loss.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::loss::{LabelMap, WeightMap};
use crate::scalar::Scalar;
use crate::tensor::Grid;

/// How the hard pair is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MiningMode {
    /// Lowest-scoring positive, highest-scoring negative.
    General,
    /// The center cell as the positive, highest-scoring negative; the mode
    /// used during tracking-style training where the target sits at the
    /// search center.
    Tracking,
}

/// Outcome of the precompute phase.
#[derive(Clone, Debug)]
pub struct MiningResult {
    pub pos_index: (usize, usize),
    pub neg_index: (usize, usize),
    pub weights: WeightMap,
}

/// Square label map of odd side `map_size`: cells whose Euclidean distance
/// from the center is at most `radius` are +1, the rest -1.
pub fn build_label_map(map_size: usize, radius: f64) -> Result<LabelMap> {
    if map_size == 0 || map_size.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "label map size must be odd (got {map_size})"
        )));
    }
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must be rejected too
    if !(radius > 0.0) || radius >= map_size as f64 / 2.0 {
        return Err(Error::InvalidArgument(format!(
            "label radius {radius} out of range for map size {map_size}"
        )));
    }
    let c = (map_size / 2) as i64;
    let r2 = radius * radius;
    let mut labels = Vec::with_capacity(map_size * map_size);
    for r in 0..map_size as i64 {
        for x in 0..map_size as i64 {
            let d2 = ((r - c) * (r - c) + (x - c) * (x - c)) as f64;
            labels.push(if d2 <= r2 { 1 } else { -1 });
        }
    }
    LabelMap::new(map_size, map_size, labels)
}

/// Class-balancing initialization: positives get `1/(2 |Dp|)`, negatives
/// `1/(2 |Dn|)`, so each class carries half the total mass.
pub fn init_balance_weights(y: &LabelMap) -> Result<WeightMap> {
    let np = y.positive_count();
    let nn = y.negative_count();
    if np == 0 || nn == 0 {
        return Err(Error::InvalidArgument(
            "balance weights need both classes present".into(),
        ));
    }
    let wp = 1.0 / (2.0 * np as f64);
    let wn = 1.0 / (2.0 * nn as f64);
    let weights = y
        .labels()
        .iter()
        .map(|&l| if l == 1 { wp } else { wn })
        .collect();
    WeightMap::new(y.height(), y.width(), weights)
}

/// Double the weight of every negative cell whose score strictly exceeds
/// the minimum positive score, then renormalize to sum one. Equality does
/// not trigger doubling: it carries no ordering evidence.
pub fn adapt_weights<T: Scalar>(v: &Grid<T>, y: &LabelMap, w: &WeightMap) -> Result<WeightMap> {
    if (v.height(), v.width()) != (y.height(), y.width())
        || (v.height(), v.width()) != (w.height(), w.width())
    {
        return Err(Error::ShapeMismatch(format!(
            "adapt_weights: score {}x{}, labels {}x{}, weights {}x{}",
            v.height(),
            v.width(),
            y.height(),
            y.width(),
            w.height(),
            w.width()
        )));
    }
    let mut min_pos: Option<T> = None;
    for r in 0..v.height() {
        for c in 0..v.width() {
            if y.at(r, c) == 1 {
                let s = v.at(r, c);
                min_pos = Some(match min_pos {
                    Some(m) if m <= s => m,
                    _ => s,
                });
            }
        }
    }
    let min_pos = min_pos.expect("label map invariant guarantees a positive cell");
    let mut out = Vec::with_capacity(w.weights().len());
    for r in 0..v.height() {
        for c in 0..v.width() {
            let wi = w.at(r, c);
            let violates = y.at(r, c) == -1 && v.at(r, c) > min_pos;
            out.push(if violates { 2.0 * wi } else { wi });
        }
    }
    Ok(WeightMap::from_raw_normalized(w.height(), w.width(), out))
}

/// Pick the hard positive and negative cells; ties break to the first cell
/// in row-major scan order.
pub fn select_hard_pair<T: Scalar>(
    v: &Grid<T>,
    y: &LabelMap,
    mode: MiningMode,
) -> Result<MiningResult> {
    if (v.height(), v.width()) != (y.height(), y.width()) {
        return Err(Error::ShapeMismatch(format!(
            "select_hard_pair: score {}x{} vs labels {}x{}",
            v.height(),
            v.width(),
            y.height(),
            y.width()
        )));
    }
    let mut pos: Option<((usize, usize), T)> = None;
    let mut neg: Option<((usize, usize), T)> = None;
    for r in 0..v.height() {
        for c in 0..v.width() {
            let s = v.at(r, c);
            if y.at(r, c) == 1 {
                if pos.is_none_or(|(_, best)| s < best) {
                    pos = Some(((r, c), s));
                }
            } else if neg.is_none_or(|(_, best)| s > best) {
                neg = Some(((r, c), s));
            }
        }
    }
    let (neg_index, _) = neg.expect("label map invariant guarantees a negative cell");
    let pos_index = match mode {
        MiningMode::General => {
            pos.expect("label map invariant guarantees a positive cell")
                .0
        }
        MiningMode::Tracking => {
            if v.height().is_multiple_of(2) || v.width().is_multiple_of(2) {
                return Err(Error::InvalidArgument(
                    "tracking-mode mining needs an odd map for a center cell".into(),
                ));
            }
            (v.height() / 2, v.width() / 2)
        }
    };
    Ok(MiningResult {
        pos_index,
        neg_index,
        weights: WeightMap::uniform(1, 1),
    })
}

/// The full precompute phase: balance weights, adapt them against the
/// score map, and select the hard pair.
pub fn precompute<T: Scalar>(v: &Grid<T>, y: &LabelMap, mode: MiningMode) -> Result<MiningResult> {
    let base = init_balance_weights(y)?;
    let adapted = adapt_weights(v, y, &base)?;
    let sel = select_hard_pair(v, y, mode)?;
    Ok(MiningResult {
        pos_index: sel.pos_index,
        neg_index: sel.neg_index,
        weights: adapted,
    })
}
