//! Online tracking: embed the exemplar once, then per frame score a
//! three-scale search pyramid, upsample the score map 16x, take the argmax,
//! and map the peak back to frame pixels with damped scale updates.

use alloc::format;
use alloc::vec::Vec;

use crate::bbox::BoundingBox;
use crate::data::SequenceSource;
use crate::embed::{forward_features, EmbedNet, EXEMPLAR_INPUT, SEARCH_INPUT};
use crate::error::{Error, Result};
use crate::math;
use crate::score::score_map;
use crate::tensor::{bicubic_resize, sample_patch, Grid, Tensor};

/// Score-map upsample factor (17 -> 272).
pub const RESPONSE_UP: usize = 16;

/// Context-padded square exemplar side for a `w x h` target:
/// `sqrt((w + p)(h + p))` with margin `p = (w + h) / 2`.
pub fn exemplar_side(w: f64, h: f64) -> f64 {
    let p = (w + h) / 2.0;
    math::sqrt((w + p) * (h + p))
}

/// Search-region side keeping the exemplar/search resize ratio.
pub fn search_side(w: f64, h: f64) -> f64 {
    exemplar_side(w, h) * SEARCH_INPUT as f64 / EXEMPLAR_INPUT as f64
}

/// Displacement of an upsampled-map peak from the map center, in search
/// image pixels: `(peak - up_center) * stride / up_factor` per axis.
/// Returns `(dx, dy)`.
pub fn peak_displacement(
    peak: (usize, usize),
    map_size: usize,
    stride: usize,
    up: usize,
) -> (f64, f64) {
    let center = (up * (map_size - 1) / 2) as f64;
    let k = stride as f64 / up as f64;
    ((peak.1 as f64 - center) * k, (peak.0 as f64 - center) * k)
}

#[derive(Clone, Copy, Debug)]
pub struct TrackParams {
    /// Geometric step between pyramid scales.
    pub scale_step: f64,
    /// Interpolation weight of the newly chosen scale.
    pub scale_damping: f64,
    /// Optional cosine-window blend weight applied to the normalized
    /// response; off by default.
    pub window_blend: Option<f64>,
}

impl Default for TrackParams {
    fn default() -> Self {
        TrackParams {
            scale_step: 1.0375,
            scale_damping: 0.59,
            window_blend: None,
        }
    }
}

/// Per-sequence tracker state. The exemplar feature is computed exactly
/// once, at init; `exemplar_embed_count` keeps that auditable.
#[derive(Clone, Debug)]
pub struct TrackState {
    exemplar_feat: Tensor<f32>,
    pub center: (f64, f64),
    pub init_size: (f64, f64),
    /// Current scale multiplier applied to the initial geometry.
    pub scale: f64,
    base_search_side: f64,
    pub exemplar_embed_count: u32,
}

impl TrackState {
    pub fn current_box(&self) -> BoundingBox {
        let w = self.init_size.0 * self.scale;
        let h = self.init_size.1 * self.scale;
        BoundingBox {
            x: self.center.0 - w / 2.0,
            y: self.center.1 - h / 2.0,
            w,
            h,
        }
    }
}

/// Crop the context-padded exemplar around `init`, embed it, and build the
/// tracker state.
pub fn track_init(
    net: &EmbedNet<f32>,
    frame: &Tensor<f32>,
    init: &BoundingBox,
) -> Result<TrackState> {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must be rejected too
    if !(init.w > 0.0 && init.h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "track_init: degenerate box ({}, {}, {}, {})",
            init.x, init.y, init.w, init.h
        )));
    }
    let center = init.center();
    let side = exemplar_side(init.w, init.h);
    let patch = sample_patch(frame, center, side, EXEMPLAR_INPUT)?;
    let exemplar_feat = forward_features(net, &patch)?;
    Ok(TrackState {
        exemplar_feat,
        center,
        init_size: (init.w, init.h),
        scale: 1.0,
        base_search_side: search_side(init.w, init.h),
        exemplar_embed_count: 1,
    })
}

fn apply_window(resp: &mut Grid<f32>, alpha: f64) {
    // Normalize to a distribution before blending with the cosine window.
    let min = resp.data().iter().cloned().fold(f32::INFINITY, f32::min);
    let mut sum = 0.0f64;
    for v in resp.data_mut() {
        *v -= min;
        sum += *v as f64;
    }
    if sum > 0.0 {
        for v in resp.data_mut() {
            *v = (*v as f64 / sum) as f32;
        }
    }
    let (h, w) = (resp.height(), resp.width());
    let hann = |i: usize, n: usize| -> f64 {
        0.5 * (1.0 - math::cos(2.0 * core::f64::consts::PI * i as f64 / (n - 1) as f64))
    };
    for r in 0..h {
        for c in 0..w {
            let win = hann(r, h) * hann(c, w);
            let v = resp.at(r, c) as f64;
            *resp.at_mut(r, c) = ((1.0 - alpha) * v + alpha * win) as f32;
        }
    }
}

/// One tracking step: score the three-scale pyramid, localize the global
/// argmax (scale ties prefer 1.0, then the smaller scale), move the center,
/// and damp the scale multiplier toward the chosen scale.
pub fn track_step(
    net: &EmbedNet<f32>,
    params: &TrackParams,
    state: &mut TrackState,
    frame: &Tensor<f32>,
) -> Result<BoundingBox> {
    let scales = [1.0 / params.scale_step, 1.0, params.scale_step];
    // Evaluation order realizes the tie preference: 1.0 first, then smaller.
    let order = [1usize, 0, 2];
    let mut best: Option<(f32, usize, (usize, usize), usize)> = None;
    for &si in &order {
        let side = state.base_search_side * state.scale * scales[si];
        let patch = sample_patch(frame, state.center, side, SEARCH_INPUT)?;
        let feat = forward_features(net, &patch)?;
        let sm = score_map(net, &state.exemplar_feat, &feat)?;
        let map_size = sm.values.height();
        let mut up = bicubic_resize(&sm.values, map_size * RESPONSE_UP, map_size * RESPONSE_UP)?;
        if let Some(alpha) = params.window_blend {
            apply_window(&mut up, alpha);
        }
        let (peak, val) = up.argmax();
        if best.is_none_or(|(b, _, _, _)| val > b) {
            best = Some((val, si, peak, map_size));
        }
    }
    let (_, si, peak, map_size) = best.expect("three scales were evaluated");
    let chosen = scales[si];
    let (dx_search, dy_search) = peak_displacement(peak, map_size, net.total_stride(), RESPONSE_UP);
    let side = state.base_search_side * state.scale * chosen;
    let to_frame = side / SEARCH_INPUT as f64;
    state.center.0 += dx_search * to_frame;
    state.center.1 += dy_search * to_frame;
    let g = params.scale_damping;
    state.scale = (1.0 - g) * state.scale + g * (state.scale * chosen);
    Ok(state.current_box())
}

/// Track a full in-memory frame list; the first output box is the init box.
pub fn track_sequence(
    net: &EmbedNet<f32>,
    params: &TrackParams,
    frames: &[Tensor<f32>],
    init: &BoundingBox,
) -> Result<Vec<BoundingBox>> {
    if frames.is_empty() {
        return Err(Error::EmptyInput(
            "track_sequence needs at least one frame".into(),
        ));
    }
    let mut state = track_init(net, &frames[0], init)?;
    let mut boxes = Vec::with_capacity(frames.len());
    boxes.push(*init);
    for frame in &frames[1..] {
        boxes.push(track_step(net, params, &mut state, frame)?);
    }
    Ok(boxes)
}

/// Anything that can produce one predicted box per frame of a sequence
/// segment, given the ground-truth box of the segment's first frame.
pub trait Tracker {
    fn track(
        &self,
        seq: &dyn SequenceSource,
        init: BoundingBox,
        start: usize,
        len: usize,
    ) -> Result<Vec<BoundingBox>>;
}

/// The network-backed tracker.
pub struct NetTracker<'a> {
    pub net: &'a EmbedNet<f32>,
    pub params: TrackParams,
}

impl<'a> NetTracker<'a> {
    pub fn new(net: &'a EmbedNet<f32>) -> Self {
        NetTracker {
            net,
            params: TrackParams::default(),
        }
    }
}

impl Tracker for NetTracker<'_> {
    fn track(
        &self,
        seq: &dyn SequenceSource,
        init: BoundingBox,
        start: usize,
        len: usize,
    ) -> Result<Vec<BoundingBox>> {
        if len == 0 || start + len > seq.len() {
            return Err(Error::InvalidArgument(format!(
                "segment {start}+{len} out of range for {} frames",
                seq.len()
            )));
        }
        let mut state = track_init(self.net, &seq.frame(start)?, &init)?;
        let mut boxes = Vec::with_capacity(len);
        boxes.push(init);
        for i in start + 1..start + len {
            boxes.push(track_step(
                self.net,
                &self.params,
                &mut state,
                &seq.frame(i)?,
            )?);
        }
        Ok(boxes)
    }
}

/// Baseline that never moves: predicts the init box for every frame.
pub struct StaticTracker;

impl Tracker for StaticTracker {
    fn track(
        &self,
        seq: &dyn SequenceSource,
        init: BoundingBox,
        start: usize,
        len: usize,
    ) -> Result<Vec<BoundingBox>> {
        if len == 0 || start + len > seq.len() {
            return Err(Error::InvalidArgument(format!(
                "segment {start}+{len} out of range for {} frames",
                seq.len()
            )));
        }
        Ok(alloc::vec![init; len])
    }
}
