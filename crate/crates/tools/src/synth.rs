//! Seeded synthetic video generator: textured-noise backgrounds, a
//! high-contrast textured rectangle target on a velocity random walk with
//! slow scale drift, and optional distractor rectangles sharing the
//! target's texture statistics. Output is byte-identical per seed.

use std::path::Path;

use quadtrack_core::rng::{derive, Rng};
use quadtrack_core::{BoundingBox, Tensor};

use crate::config::parse_kv;
use crate::error::{Error, Result};
use crate::pnm;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub num_sequences: usize,
    pub frames_per_sequence: usize,
    pub image_size: usize,
    pub target_min: usize,
    pub target_max: usize,
    pub motion_amplitude: f64,
    pub scale_drift: f64,
    pub texture_seed: u64,
    pub distractors: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_sequences: 8,
            frames_per_sequence: 40,
            image_size: 144,
            target_min: 24,
            target_max: 34,
            motion_amplitude: 2.0,
            scale_drift: 0.01,
            texture_seed: 0,
            distractors: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_sequences == 0 || self.frames_per_sequence == 0 || self.image_size == 0 {
            return Err(Error::Data(
                "synth spec: counts and sizes must be positive".into(),
            ));
        }
        if self.target_min == 0 || self.target_min > self.target_max {
            return Err(Error::Data(
                "synth spec: need 0 < target_min <= target_max".into(),
            ));
        }
        // Leave motion headroom: the largest target (with drift up to 1.5x)
        // must fit inside the image.
        if (self.target_max as f64 * 1.5) as usize + 4 >= self.image_size {
            return Err(Error::Data(format!(
                "synth spec: target_max {} too large for image_size {}",
                self.target_max, self.image_size
            )));
        }
        if self.motion_amplitude < 0.0 || self.scale_drift < 0.0 {
            return Err(Error::Data(
                "synth spec: amplitudes must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = SynthSpec::default();
        for (line_no, key, value) in parse_kv(&text) {
            let bad = |msg: String| Error::parse(path, line_no, msg);
            let parse_usize = |field: &mut usize| -> Result<()> {
                *field = value
                    .parse()
                    .map_err(|_| bad(format!("invalid integer `{value}`")))?;
                Ok(())
            };
            match key.as_str() {
                "num_sequences" => parse_usize(&mut spec.num_sequences)?,
                "frames_per_sequence" => parse_usize(&mut spec.frames_per_sequence)?,
                "image_size" => parse_usize(&mut spec.image_size)?,
                "target_min" => parse_usize(&mut spec.target_min)?,
                "target_max" => parse_usize(&mut spec.target_max)?,
                "distractors" => parse_usize(&mut spec.distractors)?,
                "motion_amplitude" => {
                    spec.motion_amplitude = value
                        .parse()
                        .map_err(|_| bad(format!("invalid float `{value}`")))?
                }
                "scale_drift" => {
                    spec.scale_drift = value
                        .parse()
                        .map_err(|_| bad(format!("invalid float `{value}`")))?
                }
                "texture_seed" => {
                    spec.texture_seed = value
                        .parse()
                        .map_err(|_| bad(format!("invalid seed `{value}`")))?
                }
                other => return Err(bad(format!("unknown synth key `{other}`"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Value-noise background: a coarse random lattice interpolated bilinearly
/// plus fine per-pixel noise, per channel.
fn background(size: usize, rng: &mut Rng) -> Tensor<f32> {
    let cell = 8usize;
    let lat = size / cell + 2;
    let mut lattice = vec![0.0f64; 3 * lat * lat];
    for v in lattice.iter_mut() {
        *v = rng.uniform(0.15, 0.7);
    }
    let mut out = Tensor::zeros([1, 3, size, size]);
    for c in 0..3 {
        for y in 0..size {
            let fy = y as f64 / cell as f64;
            let (iy, ty) = (fy as usize, fy.fract());
            for x in 0..size {
                let fx = x as f64 / cell as f64;
                let (ix, tx) = (fx as usize, fx.fract());
                let at = |r: usize, q: usize| lattice[(c * lat + r) * lat + q];
                let v = at(iy, ix) * (1.0 - ty) * (1.0 - tx)
                    + at(iy, ix + 1) * (1.0 - ty) * tx
                    + at(iy + 1, ix) * ty * (1.0 - tx)
                    + at(iy + 1, ix + 1) * ty * tx;
                *out.at_mut(0, c, y, x) = v as f32;
            }
        }
    }
    // Fine noise over the smooth field.
    for v in out.data_mut() {
        *v = (*v + rng.uniform(-0.05, 0.05) as f32).clamp(0.0, 1.0);
    }
    out
}

/// High-contrast texture tile for targets and distractors.
fn texture_tile(n: usize, rng: &mut Rng) -> Vec<[f32; 3]> {
    let mut tile = vec![[0.0f32; 3]; n * n];
    for px in tile.iter_mut() {
        // Blocky two-level texture with occasional mid tones.
        let bright = rng.next_f64() < 0.5;
        for (c, slot) in px.iter_mut().enumerate() {
            let base = if bright { 0.9 } else { 0.08 };
            let tint = 0.12 * ((c as f64 + 1.0) * 0.3);
            *slot = ((base + rng.uniform(-0.06, 0.06) + if bright { -tint } else { tint }) as f32)
                .clamp(0.0, 1.0);
        }
    }
    // Coarsen: expand 1 sample to 3x3 blocks for visible structure.
    let mut out = vec![[0.0f32; 3]; n * n];
    for y in 0..n {
        for x in 0..n {
            out[y * n + x] = tile[(y / 3) * n + (x / 3)];
        }
    }
    out
}

fn sample_tile(tile: &[[f32; 3]], n: usize, u: f64, v: f64, c: usize) -> f32 {
    let fx = (u * (n - 1) as f64).clamp(0.0, (n - 1) as f64);
    let fy = (v * (n - 1) as f64).clamp(0.0, (n - 1) as f64);
    let (ix, iy) = (fx as usize, fy as usize);
    let (tx, ty) = (fx - ix as f64, fy - iy as f64);
    let (ix1, iy1) = ((ix + 1).min(n - 1), (iy + 1).min(n - 1));
    let at = |r: usize, q: usize| tile[r * n + q][c] as f64;
    (at(iy, ix) * (1.0 - ty) * (1.0 - tx)
        + at(iy, ix1) * (1.0 - ty) * tx
        + at(iy1, ix) * ty * (1.0 - tx)
        + at(iy1, ix1) * ty * tx) as f32
}

/// Paint a textured rectangle at a sub-pixel position with edge coverage.
fn draw_rect(frame: &mut Tensor<f32>, tile: &[[f32; 3]], tn: usize, b: &BoundingBox) {
    let size = frame.height();
    let y0 = b.y.floor().max(0.0) as usize;
    let x0 = b.x.floor().max(0.0) as usize;
    let y1 = ((b.y + b.h).ceil() as usize).min(size);
    let x1 = ((b.x + b.w).ceil() as usize).min(size);
    for y in y0..y1 {
        let cov_y = ((y as f64 + 1.0).min(b.y + b.h) - (y as f64).max(b.y)).clamp(0.0, 1.0);
        for x in x0..x1 {
            let cov_x = ((x as f64 + 1.0).min(b.x + b.w) - (x as f64).max(b.x)).clamp(0.0, 1.0);
            let cov = (cov_x * cov_y) as f32;
            if cov <= 0.0 {
                continue;
            }
            let u = ((x as f64 + 0.5 - b.x) / b.w).clamp(0.0, 1.0);
            let v = ((y as f64 + 0.5 - b.y) / b.h).clamp(0.0, 1.0);
            for c in 0..3 {
                let t = sample_tile(tile, tn, u, v, c);
                let bg = frame.at(0, c, y, x);
                *frame.at_mut(0, c, y, x) = bg * (1.0 - cov) + t * cov;
            }
        }
    }
}

struct Walker {
    cx: f64,
    cy: f64,
    vx: f64,
    vy: f64,
    scale: f64,
    base_w: f64,
    base_h: f64,
}

impl Walker {
    fn new(spec: &SynthSpec, rng: &mut Rng) -> Self {
        let w = rng.uniform(spec.target_min as f64, spec.target_max as f64 + 1.0);
        let h = rng.uniform(spec.target_min as f64, spec.target_max as f64 + 1.0);
        let margin = (w.max(h) * 0.75 + 2.0).max(4.0);
        let hi = spec.image_size as f64 - margin;
        Walker {
            cx: rng.uniform(margin, hi),
            cy: rng.uniform(margin, hi),
            vx: rng.uniform(-spec.motion_amplitude, spec.motion_amplitude),
            vy: rng.uniform(-spec.motion_amplitude, spec.motion_amplitude),
            scale: 1.0,
            base_w: w,
            base_h: h,
        }
    }

    fn bbox(&self) -> BoundingBox {
        let w = self.base_w * self.scale;
        let h = self.base_h * self.scale;
        BoundingBox {
            x: self.cx - w / 2.0,
            y: self.cy - h / 2.0,
            w,
            h,
        }
    }

    fn step(&mut self, spec: &SynthSpec, rng: &mut Rng) {
        let a = spec.motion_amplitude;
        self.vx = (self.vx + rng.uniform(-a / 2.0, a / 2.0)).clamp(-a, a);
        self.vy = (self.vy + rng.uniform(-a / 2.0, a / 2.0)).clamp(-a, a);
        self.cx += self.vx;
        self.cy += self.vy;
        self.scale =
            (self.scale * (1.0 + rng.uniform(-spec.scale_drift, spec.scale_drift))).clamp(0.7, 1.5);
        // Keep the whole box inside the frame; bounce on contact.
        let w = self.base_w * self.scale;
        let h = self.base_h * self.scale;
        let lo_x = w / 2.0 + 1.0;
        let hi_x = spec.image_size as f64 - w / 2.0 - 1.0;
        if self.cx < lo_x {
            self.cx = lo_x;
            self.vx = self.vx.abs();
        } else if self.cx > hi_x {
            self.cx = hi_x;
            self.vx = -self.vx.abs();
        }
        let lo_y = h / 2.0 + 1.0;
        let hi_y = spec.image_size as f64 - h / 2.0 - 1.0;
        if self.cy < lo_y {
            self.cy = lo_y;
            self.vy = self.vy.abs();
        } else if self.cy > hi_y {
            self.cy = hi_y;
            self.vy = -self.vy.abs();
        }
    }
}

/// Render one sequence in memory: frames plus ground-truth boxes.
pub fn render_sequence(
    spec: &SynthSpec,
    seed: u64,
    index: usize,
) -> Result<(Vec<Tensor<f32>>, Vec<BoundingBox>)> {
    spec.validate()?;
    let mut rng = Rng::from_seed(derive(seed, index as u64));
    let mut tex_rng = Rng::from_seed(derive(
        spec.texture_seed ^ seed,
        (index as u64).wrapping_add(0x7e57),
    ));
    let bg = background(spec.image_size, &mut tex_rng);
    const TILE: usize = 48;
    let target_tile = texture_tile(TILE, &mut tex_rng);
    let mut target = Walker::new(spec, &mut rng);
    // Distractors are near-twins of the target: its texture with mild
    // pixel jitter. Appearance matching alone cannot separate them, so
    // discrimination has to come from training.
    let mut distractors: Vec<(Walker, Vec<[f32; 3]>)> = (0..spec.distractors)
        .map(|_| {
            let w = Walker::new(spec, &mut rng);
            let tile = target_tile
                .iter()
                .map(|px| {
                    let mut out = *px;
                    for c in out.iter_mut() {
                        *c = (*c + tex_rng.uniform(-0.12, 0.12) as f32).clamp(0.0, 1.0);
                    }
                    out
                })
                .collect();
            (w, tile)
        })
        .collect();

    // Alternate z-order across sequences: in odd sequences the distractors
    // pass over the target, so path crossings occlude it for a few frames.
    let distractors_on_top = index % 2 == 1;
    let mut frames = Vec::with_capacity(spec.frames_per_sequence);
    let mut boxes = Vec::with_capacity(spec.frames_per_sequence);
    for f in 0..spec.frames_per_sequence {
        if f > 0 {
            target.step(spec, &mut rng);
            for (d, _) in distractors.iter_mut() {
                d.step(spec, &mut rng);
            }
        }
        let mut frame = bg.clone();
        let b = target.bbox();
        if distractors_on_top {
            draw_rect(&mut frame, &target_tile, TILE, &b);
            for (d, tile) in &distractors {
                draw_rect(&mut frame, tile, TILE, &d.bbox());
            }
        } else {
            for (d, tile) in &distractors {
                draw_rect(&mut frame, tile, TILE, &d.bbox());
            }
            draw_rect(&mut frame, &target_tile, TILE, &b);
        }
        frames.push(frame);
        boxes.push(b);
    }
    Ok((frames, boxes))
}

fn write_sequence(dir: &Path, frames: &[Tensor<f32>], boxes: &[BoundingBox]) -> Result<()> {
    let img = dir.join("img");
    std::fs::create_dir_all(&img).map_err(|e| Error::io(&img, e))?;
    for (i, frame) in frames.iter().enumerate() {
        pnm::write_p6(&img.join(format!("{:04}.ppm", i + 1)), frame)?;
    }
    let mut gt = String::new();
    for b in boxes {
        // 1-based corner on disk.
        gt.push_str(&format!(
            "{:.2},{:.2},{:.2},{:.2}\n",
            b.x + 1.0,
            b.y + 1.0,
            b.w,
            b.h
        ));
    }
    let path = dir.join("groundtruth_rect.txt");
    std::fs::write(&path, gt).map_err(|e| Error::io(&path, e))
}

/// Generate the dataset on disk: one `seqNNNN` directory per sequence.
/// Sequences are derived from `(seed, index)` so any worker order produces
/// the same bytes.
pub fn synth_generate(
    spec: &SynthSpec,
    seed: u64,
    out_dir: &Path,
    threads: usize,
) -> Result<usize> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let jobs: Vec<usize> = (0..spec.num_sequences).collect();
    let results = crate::parallel::parallel_map(jobs, threads, |i| -> Result<()> {
        let (frames, boxes) = render_sequence(spec, seed, i)?;
        write_sequence(&out_dir.join(format!("seq{i:04}")), &frames, &boxes)
    });
    for r in results {
        r?;
    }
    Ok(spec.num_sequences)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::TempDir;

    fn small_spec() -> SynthSpec {
        SynthSpec {
            num_sequences: 2,
            frames_per_sequence: 3,
            image_size: 72,
            target_min: 16,
            target_max: 20,
            ..SynthSpec::default()
        }
    }

    fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut files = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in std::fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    files.push((
                        p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(),
                        std::fs::read(&p).unwrap(),
                    ));
                }
            }
        }
        files.sort();
        files
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = small_spec();
        let t1 = TempDir::new("synth1");
        let t2 = TempDir::new("synth2");
        synth_generate(&spec, 9, t1.path(), 1).unwrap();
        synth_generate(&spec, 9, t2.path(), 2).unwrap();
        assert_eq!(tree_bytes(t1.path()), tree_bytes(t2.path()));
    }

    #[test]
    fn boxes_stay_inside_image() {
        let spec = SynthSpec {
            motion_amplitude: 6.0,
            ..small_spec()
        };
        let (_, boxes) = render_sequence(&spec, 3, 0).unwrap();
        for b in boxes {
            assert!(b.x >= 0.0 && b.y >= 0.0);
            assert!(b.x + b.w <= spec.image_size as f64);
            assert!(b.y + b.h <= spec.image_size as f64);
        }
    }

    #[test]
    fn zero_motion_is_static() {
        let spec = SynthSpec {
            motion_amplitude: 0.0,
            scale_drift: 0.0,
            ..small_spec()
        };
        let (_, boxes) = render_sequence(&spec, 5, 1).unwrap();
        for b in &boxes[1..] {
            assert_eq!(b, &boxes[0]);
        }
    }

    #[test]
    fn oversized_target_rejected() {
        let spec = SynthSpec {
            target_min: 60,
            target_max: 70,
            image_size: 72,
            ..small_spec()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn spec_file_round_trip_and_unknown_key() {
        let tmp = TempDir::new("spec");
        let p = tmp.path().join("s.cfg");
        std::fs::write(&p, "# demo\nnum_sequences = 4\nmotion_amplitude = 1.25\n").unwrap();
        let spec = SynthSpec::from_file(&p).unwrap();
        assert_eq!(spec.num_sequences, 4);
        assert_eq!(spec.motion_amplitude, 1.25);
        std::fs::write(&p, "nope = 1\n").unwrap();
        assert!(SynthSpec::from_file(&p).is_err());
    }
}
