//! Sequence abstraction consumed by training, tracking, and evaluation.
//! Frame pixels are fetched on demand so disk-backed datasets never hold a
//! whole video in memory; the in-memory implementation backs tests and
//! synthetic fixtures.

use alloc::string::String;
use alloc::vec::Vec;

use crate::bbox::BoundingBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A named, ordered sequence of frames with one ground-truth box per frame.
pub trait SequenceSource {
    fn name(&self) -> &str;
    /// Number of frames; equals the number of ground-truth boxes.
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Frame size `(width, height)` in pixels, uniform over the sequence.
    fn dims(&self) -> (usize, usize);
    /// Decode frame `idx` as a `1 x 3 x H x W` tensor scaled to [0, 1].
    fn frame(&self, idx: usize) -> Result<Tensor<f32>>;
    fn ground_truth(&self, idx: usize) -> BoundingBox;
}

/// Fully in-memory sequence.
#[derive(Clone, Debug)]
pub struct MemorySequence {
    name: String,
    frames: Vec<Tensor<f32>>,
    boxes: Vec<BoundingBox>,
}

impl MemorySequence {
    pub fn new(name: String, frames: Vec<Tensor<f32>>, boxes: Vec<BoundingBox>) -> Result<Self> {
        if frames.is_empty() || frames.len() != boxes.len() {
            return Err(Error::InvalidArgument(alloc::format!(
                "sequence `{name}`: {} frames vs {} ground-truth boxes",
                frames.len(),
                boxes.len()
            )));
        }
        let dims = (frames[0].width(), frames[0].height());
        if frames
            .iter()
            .any(|f| (f.width(), f.height()) != dims || f.channels() != 3 || f.batch() != 1)
        {
            return Err(Error::InvalidArgument(alloc::format!(
                "sequence `{name}`: frames must all be 1x3 tensors of equal size"
            )));
        }
        Ok(MemorySequence {
            name,
            frames,
            boxes,
        })
    }
}

impl SequenceSource for MemorySequence {
    fn name(&self) -> &str {
        &self.name
    }
    fn len(&self) -> usize {
        self.frames.len()
    }
    fn dims(&self) -> (usize, usize) {
        (self.frames[0].width(), self.frames[0].height())
    }
    fn frame(&self, idx: usize) -> Result<Tensor<f32>> {
        self.frames
            .get(idx)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(alloc::format!("frame index {idx} out of range")))
    }
    fn ground_truth(&self, idx: usize) -> BoundingBox {
        self.boxes[idx]
    }
}
