//! Dataset handling: clip/frame containers, grayscale decoding behind one
//! narrow interface, bilinear preprocessing, clip-level train/validation
//! splitting, plus the UCSD directory loader and the synthetic generator.

mod synth;
mod ucsd;

pub use synth::{generate_synthetic, load_synthetic, write_synthetic, AnomalyKind, SyntheticConfig};
pub use ucsd::{load_ucsd, UcsdSplit, UcsdSubset};

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One video clip: ordered grayscale frames with values in [0, 1], each
/// shaped `[H, W, 1]`.
#[derive(Clone, Debug)]
pub struct FrameSequence {
    /// Clip identifier (directory name).
    pub id: String,
    pub frames: Vec<Tensor<f32>>,
    /// Frame dimensions before any resizing, as (height, width).
    pub source_dims: (usize, usize),
}

impl FrameSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Per-clip, per-frame binary anomaly labels (`true` = anomalous frame).
/// Clips without a label source are simply absent from the map.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GroundTruth {
    pub labels: BTreeMap<String, Vec<bool>>,
}

impl GroundTruth {
    /// Validates the length invariant against a set of clips.
    pub fn check_against(&self, clips: &[FrameSequence]) -> Result<()> {
        for clip in clips {
            if let Some(labels) = self.labels.get(&clip.id) {
                if labels.len() != clip.len() {
                    return Err(Error::format(
                        0,
                        format!(
                            "clip '{}' has {} frames but {} labels",
                            clip.id,
                            clip.len(),
                            labels.len()
                        ),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Decodes an image file to grayscale, returning `(pixels/255, (h, w))`.
/// This is the only place codecs are touched; RGB inputs fall back to luma.
pub(crate) fn decode_gray(path: &Path) -> Result<(Vec<f32>, (usize, usize))> {
    let img = image::open(path).map_err(|e| {
        Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()),
        )
    })?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    let data = gray.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
    Ok((data, (h as usize, w as usize)))
}

pub(crate) fn is_frame_file(path: &Path) -> bool {
    let name = match path.file_name().and_then(|n| n.to_str()) {
        Some(n) => n,
        None => return false,
    };
    if name.starts_with('.') || name.starts_with('_') {
        return false;
    }
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref(),
        Some("tif" | "tiff" | "bmp" | "png" | "jpg" | "jpeg")
    )
}

/// Loads every image in `dir` (lexicographic name order) as one clip.
pub(crate) fn load_clip_dir(dir: &Path, id: &str) -> Result<FrameSequence> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(dir, e))?
        .into_iter()
        .map(|entry| entry.path())
        .filter(|p| p.is_file() && is_frame_file(p))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::format(0, format!("clip '{id}' has zero frames ({})", dir.display())));
    }
    let mut frames = Vec::with_capacity(files.len());
    let mut dims = None;
    for file in &files {
        let (data, (h, w)) = decode_gray(file)?;
        match dims {
            None => dims = Some((h, w)),
            Some(d) if d != (h, w) => {
                return Err(Error::format(
                    0,
                    format!(
                        "frame {} is {h}x{w} but clip '{id}' started at {}x{}",
                        file.display(),
                        d.0,
                        d.1
                    ),
                ));
            }
            _ => {}
        }
        frames.push(Tensor::new(vec![h, w, 1], data)?);
    }
    Ok(FrameSequence {
        id: id.to_string(),
        frames,
        source_dims: dims.unwrap(),
    })
}

/// Loads an arbitrary directory of frames: image-holding subdirectories
/// become clips; otherwise the directory itself is treated as a single clip.
pub fn load_frame_dir(dir: &Path) -> Result<Vec<FrameSequence>> {
    let mut subdirs: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(dir, e))?
        .into_iter()
        .map(|entry| entry.path())
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        let id = dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("input")
            .to_string();
        return Ok(vec![load_clip_dir(dir, &id)?]);
    }
    use rayon::prelude::*;
    subdirs
        .par_iter()
        .map(|sub| {
            let id = sub.file_name().and_then(|n| n.to_str()).unwrap_or("clip");
            load_clip_dir(sub, id)
        })
        .collect()
}

/// Bilinear resize (half-pixel convention) to `target = (height, width)`,
/// clamped to [0, 1]. Already-target-sized frames pass through bit-exact.
pub fn preprocess(frame: &Tensor<f32>, target: (usize, usize)) -> Result<Tensor<f32>> {
    if frame.rank() != 3 || frame.shape()[2] != 1 {
        return Err(Error::dimension(
            "frame shape",
            "[H, W, 1]",
            format!("{:?}", frame.shape()),
        ));
    }
    let (src_h, src_w) = (frame.shape()[0], frame.shape()[1]);
    let (dst_h, dst_w) = target;
    if dst_h == 0 || dst_w == 0 {
        return Err(Error::Config("preprocess target must be nonzero".into()));
    }
    if (src_h, src_w) == (dst_h, dst_w) {
        return Ok(frame.clone());
    }

    let src = frame.data();
    let scale_y = src_h as f64 / dst_h as f64;
    let scale_x = src_w as f64 / dst_w as f64;
    let sample = |r: isize, c: isize| -> f64 {
        let r = r.clamp(0, src_h as isize - 1) as usize;
        let c = c.clamp(0, src_w as isize - 1) as usize;
        src[r * src_w + c] as f64
    };
    let mut out = vec![0.0f32; dst_h * dst_w];
    for r in 0..dst_h {
        let sy = (r as f64 + 0.5) * scale_y - 0.5;
        let y0 = sy.floor();
        let wy = sy - y0;
        let y0 = y0 as isize;
        for c in 0..dst_w {
            let sx = (c as f64 + 0.5) * scale_x - 0.5;
            let x0 = sx.floor();
            let wx = sx - x0;
            let x0 = x0 as isize;
            let top = (1.0 - wx) * sample(y0, x0) + wx * sample(y0, x0 + 1);
            let bottom = (1.0 - wx) * sample(y0 + 1, x0) + wx * sample(y0 + 1, x0 + 1);
            let v = (1.0 - wy) * top + wy * bottom;
            out[r * dst_w + c] = v.clamp(0.0, 1.0) as f32;
        }
    }
    Tensor::new(vec![dst_h, dst_w, 1], out)
}

/// Splits clips into train and validation sets at clip granularity: the last
/// `ceil(val_fraction * count)` clips by sorted name become validation.
pub fn split_train_val(
    mut clips: Vec<FrameSequence>,
    val_fraction: f64,
) -> Result<(Vec<FrameSequence>, Vec<FrameSequence>)> {
    if !(0.0..=1.0).contains(&val_fraction) {
        return Err(Error::Config(format!(
            "val_fraction must be in [0, 1], got {val_fraction}"
        )));
    }
    clips.sort_by(|a, b| a.id.cmp(&b.id));
    let n_val = (val_fraction * clips.len() as f64).ceil() as usize;
    if n_val == 0 {
        log::warn!("validation split is empty (val_fraction = {val_fraction})");
        return Ok((clips, Vec::new()));
    }
    let val = clips.split_off(clips.len() - n_val);
    Ok((clips, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::Rng;

    fn clip(id: &str, n: usize) -> FrameSequence {
        FrameSequence {
            id: id.to_string(),
            frames: vec![Tensor::zeros(&[4, 4, 1]); n],
            source_dims: (4, 4),
        }
    }

    #[test]
    fn preprocess_is_idempotent_at_target_size() {
        let mut rng = crate::testutil::rng(70);
        let frame = Tensor::from_fn(&[8, 8, 1], |_| rng.gen_range(0.0f64..1.0) as f32);
        let out = preprocess(&frame, (8, 8)).unwrap();
        assert_eq!(out, frame);
    }

    #[test]
    fn preprocess_preserves_constants() {
        let frame = Tensor::filled(&[3, 5, 1], 0.37f32);
        let out = preprocess(&frame, (7, 4)).unwrap();
        assert_eq!(out.shape(), &[7, 4, 1]);
        for &v in out.data() {
            assert!((v - 0.37).abs() < 1e-6);
        }
    }

    #[test]
    fn preprocess_matches_hand_computed_bilinear_grid() {
        // columns [0, 1] upscaled 2x with the half-pixel convention
        let frame = Tensor::new(vec![2, 2, 1], vec![0.0f32, 1.0, 0.0, 1.0]).unwrap();
        let out = preprocess(&frame, (4, 4)).unwrap();
        let want_row = [0.0f32, 0.25, 0.75, 1.0];
        for r in 0..4 {
            for c in 0..4 {
                let got = out.data()[r * 4 + c];
                assert!(
                    (got - want_row[c]).abs() < 1e-7,
                    "row {r} col {c}: {got} vs {}",
                    want_row[c]
                );
            }
        }
    }

    #[test]
    fn split_sixteen_clips_at_15_percent() {
        let clips: Vec<_> = (0..16).map(|i| clip(&format!("clip{i:03}"), 2)).collect();
        let (train, val) = split_train_val(clips, 0.15).unwrap();
        assert_eq!(train.len(), 13);
        assert_eq!(val.len(), 3);
        // validation takes the last names in sorted order
        assert_eq!(val[0].id, "clip013");
        let train_ids: Vec<_> = train.iter().map(|c| c.id.clone()).collect();
        assert!(val.iter().all(|v| !train_ids.contains(&v.id)));
    }

    #[test]
    fn split_zero_fraction_gives_empty_validation() {
        let clips: Vec<_> = (0..5).map(|i| clip(&format!("c{i}"), 1)).collect();
        let (train, val) = split_train_val(clips, 0.0).unwrap();
        assert_eq!(train.len(), 5);
        assert!(val.is_empty());
    }

    #[test]
    fn split_rejects_bad_fraction() {
        assert!(split_train_val(vec![clip("a", 1)], 1.5).is_err());
    }

    #[test]
    fn ground_truth_length_invariant() {
        let clips = vec![clip("a", 3)];
        let mut gt = GroundTruth::default();
        gt.labels.insert("a".into(), vec![false, true]);
        assert!(gt.check_against(&clips).is_err());
        gt.labels.insert("a".into(), vec![false, true, true]);
        assert!(gt.check_against(&clips).is_ok());
    }
}
