//! Disk-backed sequences in the benchmark directory convention
//! (`img/` frames plus `groundtruth_rect.txt`), prediction-box files, and
//! dataset loading. Ground-truth coordinates are 1-based on disk and
//! 0-based in memory.

use std::path::{Path, PathBuf};

use quadtrack_core::data::SequenceSource;
use quadtrack_core::{BoundingBox, Tensor};

use crate::error::{Error, Result};
use crate::pnm;

/// Sequence whose frames stay on disk and decode on demand.
#[derive(Clone, Debug)]
pub struct DiskSequence {
    name: String,
    frame_paths: Vec<PathBuf>,
    boxes: Vec<BoundingBox>,
    dims: (usize, usize),
}

impl DiskSequence {
    pub fn frame_path(&self, idx: usize) -> &Path {
        &self.frame_paths[idx]
    }
}

impl SequenceSource for DiskSequence {
    fn name(&self) -> &str {
        &self.name
    }
    fn len(&self) -> usize {
        self.frame_paths.len()
    }
    fn dims(&self) -> (usize, usize) {
        self.dims
    }
    fn frame(&self, idx: usize) -> quadtrack_core::Result<Tensor<f32>> {
        pnm::decode_file(&self.frame_paths[idx])
            .map_err(|e| quadtrack_core::Error::External(e.to_string()))
    }
    fn ground_truth(&self, idx: usize) -> BoundingBox {
        self.boxes[idx]
    }
}

fn parse_gt_line(line: &str) -> Option<BoundingBox> {
    let fields: Vec<&str> = if line.contains(',') {
        line.split(',').collect()
    } else {
        line.split_whitespace().collect()
    };
    if fields.len() != 4 {
        return None;
    }
    let mut v = [0.0f64; 4];
    for (slot, f) in v.iter_mut().zip(&fields) {
        *slot = f.trim().parse().ok()?;
    }
    // 1-based corner on disk.
    BoundingBox::new(v[0] - 1.0, v[1] - 1.0, v[2], v[3]).ok()
}

/// Load one sequence directory: sorted `img/*` frames and one ground-truth
/// line per frame.
pub fn load_sequence(dir: &Path) -> Result<DiskSequence> {
    let img_dir = dir.join("img");
    let mut frame_paths: Vec<PathBuf> = std::fs::read_dir(&img_dir)
        .map_err(|e| Error::io(&img_dir, e))?
        .filter_map(|e| e.ok().map(|x| x.path()))
        .filter(|p| p.is_file())
        .collect();
    frame_paths.sort();
    let gt_path = dir.join("groundtruth_rect.txt");
    let text = std::fs::read_to_string(&gt_path).map_err(|e| Error::io(&gt_path, e))?;
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let b = parse_gt_line(line).ok_or_else(|| {
            Error::parse(
                &gt_path,
                i + 1,
                format!("unparseable ground-truth line `{line}`"),
            )
        })?;
        boxes.push(b);
    }
    if boxes.len() != frame_paths.len() {
        return Err(Error::Data(format!(
            "{}: {} frames but {} ground-truth lines",
            dir.display(),
            frame_paths.len(),
            boxes.len()
        )));
    }
    if frame_paths.is_empty() {
        return Err(Error::Data(format!("{}: no frames", dir.display())));
    }
    let first = pnm::decode_file(&frame_paths[0])?;
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sequence".into());
    Ok(DiskSequence {
        name,
        frame_paths,
        boxes,
        dims: (first.width(), first.height()),
    })
}

/// Load every sequence subdirectory of `dir`, sorted by name. Sequences
/// shorter than two frames are skipped with a warning: they cannot form
/// training pairs and carry no tracking information.
pub fn load_dataset(dir: &Path) -> Result<Vec<DiskSequence>> {
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|x| x.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        return Err(Error::Data(format!(
            "{}: no sequence directories",
            dir.display()
        )));
    }
    let mut out = Vec::with_capacity(subdirs.len());
    for sub in subdirs {
        let seq = load_sequence(&sub)?;
        if seq.len() < 2 {
            crate::log_info!("warning: skipping single-frame sequence {}", sub.display());
            continue;
        }
        out.push(seq);
    }
    if out.is_empty() {
        return Err(Error::Data(format!(
            "{}: every sequence was shorter than two frames",
            dir.display()
        )));
    }
    Ok(out)
}

/// Write predictions as `frame_index,x,y,w,h` with two decimals, one line
/// per frame, 0-based indices.
pub fn write_boxes(path: &Path, boxes: &[BoundingBox]) -> Result<()> {
    let mut out = String::new();
    for (i, b) in boxes.iter().enumerate() {
        out.push_str(&format!(
            "{i},{:.2},{:.2},{:.2},{:.2}\n",
            b.x, b.y, b.w, b.h
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read a predictions file; frame indices must be contiguous from zero.
pub fn read_boxes(path: &Path) -> Result<Vec<BoundingBox>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (li, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let bad = |msg: &str| Error::parse(path, li + 1, msg.to_string());
        if fields.len() != 5 {
            return Err(bad(&format!(
                "expected 5 comma-separated fields, got {}",
                fields.len()
            )));
        }
        let idx: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| bad("bad frame index"))?;
        if idx != out.len() {
            return Err(bad(&format!(
                "out-of-order frame index {idx} (expected {})",
                out.len()
            )));
        }
        let mut v = [0.0f64; 4];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f.trim().parse().map_err(|_| bad("bad coordinate"))?;
        }
        out.push(
            BoundingBox::new(v[0], v[1], v[2], v[3])
                .map_err(|e| bad(&format!("invalid box: {e}")))?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::TempDir;

    #[test]
    fn gt_line_one_based_shift_and_tabs() {
        let b = parse_gt_line("10,20,30,40").unwrap();
        assert_eq!((b.x, b.y, b.w, b.h), (9.0, 19.0, 30.0, 40.0));
        let t = parse_gt_line("10\t20\t30\t40").unwrap();
        assert_eq!((t.x, t.y, t.w, t.h), (9.0, 19.0, 30.0, 40.0));
    }

    #[test]
    fn sequence_round_trip_on_disk() {
        let tmp = TempDir::new("seq");
        let dir = tmp.path().join("toy");
        std::fs::create_dir_all(dir.join("img")).unwrap();
        for i in 0..2 {
            let f = Tensor::from_fn([1, 3, 8, 8], |_, c, y, x| {
                ((c + y + x + i) % 7) as f32 / 7.0
            });
            pnm::write_p6(&dir.join("img").join(format!("{:04}.ppm", i + 1)), &f).unwrap();
        }
        std::fs::write(dir.join("groundtruth_rect.txt"), "1,2,3,4\n2,3,3,4\n").unwrap();
        let seq = load_sequence(&dir).unwrap();
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.dims(), (8, 8));
        assert_eq!(seq.ground_truth(0).x, 0.0);
        assert!(seq.frame(1).is_ok());
    }

    #[test]
    fn sequence_count_mismatch_rejected() {
        let tmp = TempDir::new("mismatch");
        let dir = tmp.path().join("toy");
        std::fs::create_dir_all(dir.join("img")).unwrap();
        let f = Tensor::zeros([1, 3, 4, 4]);
        pnm::write_p6(&dir.join("img").join("0001.ppm"), &f).unwrap();
        std::fs::write(dir.join("groundtruth_rect.txt"), "1,1,2,2\n1,1,2,2\n").unwrap();
        assert!(matches!(load_sequence(&dir), Err(Error::Data(_))));
    }

    #[test]
    fn gt_parse_error_carries_line_number() {
        let tmp = TempDir::new("badline");
        let dir = tmp.path().join("toy");
        std::fs::create_dir_all(dir.join("img")).unwrap();
        let f = Tensor::zeros([1, 3, 4, 4]);
        pnm::write_p6(&dir.join("img").join("0001.ppm"), &f).unwrap();
        std::fs::write(dir.join("groundtruth_rect.txt"), "1,1,2,nope\n").unwrap();
        let err = load_sequence(&dir).unwrap_err();
        assert!(err.to_string().contains(":1:"), "{err}");
    }

    #[test]
    fn boxes_round_trip_at_two_decimals() {
        let tmp = TempDir::new("boxes");
        let path = tmp.path().join("pred.txt");
        let boxes = vec![
            BoundingBox::new(1.234, 5.678, 9.105, 3.499).unwrap(),
            BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
        ];
        write_boxes(&path, &boxes).unwrap();
        let back = read_boxes(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert!((back[0].x - 1.23).abs() < 1e-12);
        assert!((back[0].w - 9.10).abs() < 1e-9 || (back[0].w - 9.11).abs() < 1e-9);
        assert_eq!(back[1].w, 1.0);
    }

    #[test]
    fn boxes_empty_file_and_out_of_order() {
        let tmp = TempDir::new("boxes2");
        let path = tmp.path().join("pred.txt");
        std::fs::write(&path, "").unwrap();
        assert!(read_boxes(&path).unwrap().is_empty());
        std::fs::write(&path, "1,0,0,1,1\n").unwrap();
        let err = read_boxes(&path).unwrap_err();
        assert!(err.to_string().contains("out-of-order"));
    }
}
