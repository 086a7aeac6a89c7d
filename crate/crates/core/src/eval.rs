//! Benchmark metrics and protocols: distance-precision and overlap-success
//! curves with their headline numbers, plus the one-pass (OPE), spatial-
//! robustness (SRE), and temporal-robustness (TRE) drivers.

use alloc::string::String;
use alloc::vec::Vec;

use crate::bbox::BoundingBox;
use crate::data::SequenceSource;
use crate::error::{Error, Result};
use crate::track::Tracker;

/// Precision curve thresholds: 0..=50 pixels, step 1.
pub const PRECISION_POINTS: usize = 51;
/// Success curve thresholds: 0..=1 IoU, step 0.05.
pub const SUCCESS_POINTS: usize = 21;
/// Headline read-outs: precision at 20 px, success at IoU 0.5.
pub const PRECISION_HEADLINE_PX: usize = 20;
pub const SUCCESS_HEADLINE_IDX: usize = 10;

pub fn success_threshold(i: usize) -> f64 {
    i as f64 / (SUCCESS_POINTS - 1) as f64
}

/// Intersection-over-union of two boxes, in [0, 1].
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (a.area() + b.area() - inter)
}

/// Euclidean distance between box centers, in pixels.
pub fn center_error(a: &BoundingBox, b: &BoundingBox) -> f64 {
    a.center_distance(b)
}

/// One set of evaluation curves with headline numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveSet {
    pub precision: Vec<f64>,
    pub success: Vec<f64>,
    pub precision_at_20: f64,
    pub success_at_0_5: f64,
    pub auc: f64,
    pub mean_iou: f64,
}

pub(crate) fn curves_from_frames(errs: &[f64], ious: &[f64]) -> Result<CurveSet> {
    if errs.is_empty() || errs.len() != ious.len() {
        return Err(Error::InvalidArgument(alloc::format!(
            "curve computation needs matching non-empty frame lists ({} vs {})",
            errs.len(),
            ious.len()
        )));
    }
    let n = errs.len() as f64;
    let precision: Vec<f64> = (0..PRECISION_POINTS)
        .map(|t| errs.iter().filter(|&&e| e <= t as f64).count() as f64 / n)
        .collect();
    // Strict inequality: a frame counts as a success only above the bar.
    let success: Vec<f64> = (0..SUCCESS_POINTS)
        .map(|i| {
            let tau = success_threshold(i);
            ious.iter().filter(|&&v| v > tau).count() as f64 / n
        })
        .collect();
    let auc = success.iter().sum::<f64>() / SUCCESS_POINTS as f64;
    let mean_iou = ious.iter().sum::<f64>() / n;
    Ok(CurveSet {
        precision_at_20: precision[PRECISION_HEADLINE_PX],
        success_at_0_5: success[SUCCESS_HEADLINE_IDX],
        precision,
        success,
        auc,
        mean_iou,
    })
}

/// Per-frame metrics for a predicted trajectory against ground truth.
pub fn curves(pred: &[BoundingBox], gt: &[BoundingBox]) -> Result<CurveSet> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(alloc::format!(
            "trajectory lengths differ: {} predictions vs {} ground-truth boxes",
            pred.len(),
            gt.len()
        )));
    }
    let errs: Vec<f64> = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| center_error(p, g))
        .collect();
    let ious: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| iou(p, g)).collect();
    curves_from_frames(&errs, &ious)
}

/// Pointwise mean of several curve sets. Sums are anchored at the first
/// element, so aggregating identical inputs reproduces them exactly.
pub fn aggregate(sets: &[CurveSet]) -> Result<CurveSet> {
    if sets.is_empty() {
        return Err(Error::EmptyInput("no curve sets to aggregate".into()));
    }
    let n = sets.len() as f64;
    let mean_at = |get: &dyn Fn(&CurveSet) -> f64| -> f64 {
        let anchor = get(&sets[0]);
        anchor + sets.iter().map(|s| get(s) - anchor).sum::<f64>() / n
    };
    let precision: Vec<f64> = (0..PRECISION_POINTS)
        .map(|i| mean_at(&|s: &CurveSet| s.precision[i]))
        .collect();
    let success: Vec<f64> = (0..SUCCESS_POINTS)
        .map(|i| mean_at(&|s: &CurveSet| s.success[i]))
        .collect();
    Ok(CurveSet {
        precision_at_20: mean_at(&|s: &CurveSet| s.precision_at_20),
        success_at_0_5: mean_at(&|s: &CurveSet| s.success_at_0_5),
        auc: mean_at(&|s: &CurveSet| s.auc),
        mean_iou: mean_at(&|s: &CurveSet| s.mean_iou),
        precision,
        success,
    })
}

/// Evaluation outcome: per-sequence curves plus their aggregate.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub per_sequence: Vec<(String, CurveSet)>,
    pub aggregate: CurveSet,
}

fn assemble(per_sequence: Vec<(String, CurveSet)>) -> Result<EvalResult> {
    let sets: Vec<CurveSet> = per_sequence.iter().map(|(_, c)| c.clone()).collect();
    Ok(EvalResult {
        aggregate: aggregate(&sets)?,
        per_sequence,
    })
}

fn gt_slice(seq: &dyn SequenceSource, start: usize, len: usize) -> Vec<BoundingBox> {
    (start..start + len).map(|i| seq.ground_truth(i)).collect()
}

/// One-pass evaluation of a single sequence: ground-truth init on frame 0.
pub fn ope_sequence<T: Tracker + ?Sized>(
    tracker: &T,
    seq: &dyn SequenceSource,
) -> Result<CurveSet> {
    let n = seq.len();
    if n == 0 {
        return Err(Error::EmptyInput(alloc::format!(
            "sequence `{}` is empty",
            seq.name()
        )));
    }
    let pred = tracker.track(seq, seq.ground_truth(0), 0, n)?;
    curves(&pred, &gt_slice(seq, 0, n))
}

/// The 12 SRE init perturbations: 8 shifts of 10% of the box size along
/// the axes and diagonals, and 4 scale variants (80/90/110/120%), all
/// clamped inside the frame.
pub fn sre_variants(init: &BoundingBox, frame_w: f64, frame_h: f64) -> Vec<BoundingBox> {
    let clamp = |b: BoundingBox| -> BoundingBox {
        let w = b.w.min(frame_w);
        let h = b.h.min(frame_h);
        BoundingBox {
            x: b.x.clamp(0.0, (frame_w - w).max(0.0)),
            y: b.y.clamp(0.0, (frame_h - h).max(0.0)),
            w,
            h,
        }
    };
    let mut out = Vec::with_capacity(12);
    let (dx, dy) = (0.1 * init.w, 0.1 * init.h);
    for (sx, sy) in [
        (-1.0, 0.0),
        (1.0, 0.0),
        (0.0, -1.0),
        (0.0, 1.0),
        (-1.0, -1.0),
        (-1.0, 1.0),
        (1.0, -1.0),
        (1.0, 1.0),
    ] {
        out.push(clamp(BoundingBox {
            x: init.x + sx * dx,
            y: init.y + sy * dy,
            w: init.w,
            h: init.h,
        }));
    }
    let (cx, cy) = init.center();
    for s in [0.8, 0.9, 1.1, 1.2] {
        out.push(clamp(BoundingBox {
            x: cx - init.w * s / 2.0,
            y: cy - init.h * s / 2.0,
            w: init.w * s,
            h: init.h * s,
        }));
    }
    out
}

/// Spatial-robustness evaluation of one sequence: mean over the 12 runs.
pub fn sre_sequence<T: Tracker + ?Sized>(
    tracker: &T,
    seq: &dyn SequenceSource,
) -> Result<CurveSet> {
    let n = seq.len();
    if n == 0 {
        return Err(Error::EmptyInput(alloc::format!(
            "sequence `{}` is empty",
            seq.name()
        )));
    }
    let (fw, fh) = seq.dims();
    let gt = gt_slice(seq, 0, n);
    let mut sets = Vec::with_capacity(12);
    for init in sre_variants(&seq.ground_truth(0), fw as f64, fh as f64) {
        let pred = tracker.track(seq, init, 0, n)?;
        sets.push(curves(&pred, &gt)?);
    }
    aggregate(&sets)
}

/// TRE segment starts: up to 20 evenly spaced frames; each run goes from
/// its start frame to the end of the sequence.
pub fn tre_starts(len: usize) -> Vec<usize> {
    let mut starts: Vec<usize> = (0..20).map(|i| i * len / 20).filter(|&s| s < len).collect();
    starts.dedup();
    starts
}

/// Temporal-robustness evaluation of one sequence: frames from all segment
/// runs are pooled, which weights each run by its length.
pub fn tre_sequence<T: Tracker + ?Sized>(
    tracker: &T,
    seq: &dyn SequenceSource,
) -> Result<CurveSet> {
    let n = seq.len();
    if n == 0 {
        return Err(Error::EmptyInput(alloc::format!(
            "sequence `{}` is empty",
            seq.name()
        )));
    }
    let mut errs = Vec::new();
    let mut ious = Vec::new();
    for start in tre_starts(n) {
        let len = n - start;
        let pred = tracker.track(seq, seq.ground_truth(start), start, len)?;
        for (p, g) in pred.iter().zip(gt_slice(seq, start, len)) {
            errs.push(center_error(p, &g));
            ious.push(iou(p, &g));
        }
    }
    curves_from_frames(&errs, &ious)
}

pub fn run_ope<S: SequenceSource, T: Tracker>(tracker: &T, seqs: &[S]) -> Result<EvalResult> {
    run_protocol(seqs, |seq| ope_sequence(tracker, seq))
}

pub fn run_sre<S: SequenceSource, T: Tracker>(tracker: &T, seqs: &[S]) -> Result<EvalResult> {
    run_protocol(seqs, |seq| sre_sequence(tracker, seq))
}

pub fn run_tre<S: SequenceSource, T: Tracker>(tracker: &T, seqs: &[S]) -> Result<EvalResult> {
    run_protocol(seqs, |seq| tre_sequence(tracker, seq))
}

fn run_protocol<S: SequenceSource>(
    seqs: &[S],
    mut per_seq: impl FnMut(&dyn SequenceSource) -> Result<CurveSet>,
) -> Result<EvalResult> {
    if seqs.is_empty() {
        return Err(Error::EmptyInput("no sequences to evaluate".into()));
    }
    let mut out = Vec::with_capacity(seqs.len());
    for s in seqs {
        out.push((String::from(s.name()), per_seq(s)?));
    }
    assemble(out)
}
