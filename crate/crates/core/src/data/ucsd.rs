//! UCSD pedestrian dataset loader.
//!
//! Expected layout under the dataset root:
//!
//! ```text
//! <root>/UCSDped2/Train/Train001/*.tif
//! <root>/UCSDped2/Test/Test001/*.tif
//! <root>/UCSDped2/Test/Test001_gt/*.bmp      (per-frame anomaly masks)
//! <root>/UCSDped2/Test/UCSDped2.m            (gt_frame range annotations)
//! ```
//!
//! Frame labels come from a clip's `_gt` mask folder when present (a frame is
//! anomalous iff any mask pixel is nonzero), otherwise from the matching
//! `gt_frame = a:b` entry of the annotation file. Masks win when both exist.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::data::{decode_gray, is_frame_file, load_clip_dir, FrameSequence, GroundTruth};
use crate::error::{Error, Result};

/// Camera scene of the UCSD pedestrian dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UcsdSubset {
    Ped1,
    Ped2,
}

impl UcsdSubset {
    fn dir_name(self) -> &'static str {
        match self {
            UcsdSubset::Ped1 => "UCSDped1",
            UcsdSubset::Ped2 => "UCSDped2",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UcsdSplit {
    Train,
    Test,
}

impl UcsdSplit {
    fn dir_name(self) -> &'static str {
        match self {
            UcsdSplit::Train => "Train",
            UcsdSplit::Test => "Test",
        }
    }
}

/// Loads every clip of one subset/split, sorted by clip name, plus ground
/// truth for whichever test clips have a label source.
pub fn load_ucsd(
    root: &Path,
    subset: UcsdSubset,
    split: UcsdSplit,
) -> Result<(Vec<FrameSequence>, Option<GroundTruth>)> {
    let base = root.join(subset.dir_name()).join(split.dir_name());
    if !base.is_dir() {
        return Err(Error::io(
            &base,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("expected dataset directory {}", base.display()),
            ),
        ));
    }

    let mut clip_dirs: Vec<PathBuf> = std::fs::read_dir(&base)
        .map_err(|e| Error::io(&base, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(&base, e))?
        .into_iter()
        .map(|entry| entry.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| !n.ends_with("_gt") && !n.starts_with('.'))
        })
        .collect();
    clip_dirs.sort();
    if clip_dirs.is_empty() {
        return Err(Error::format(
            0,
            format!("no clip directories under {}", base.display()),
        ));
    }

    let clips: Vec<FrameSequence> = clip_dirs
        .par_iter()
        .map(|dir| {
            let id = dir.file_name().and_then(|n| n.to_str()).unwrap_or("clip");
            load_clip_dir(dir, id)
        })
        .collect::<Result<_>>()?;

    let ranges = parse_range_annotations(&base)?;
    let mut labels = BTreeMap::new();
    for (index, clip) in clips.iter().enumerate() {
        let mask_dir = base.join(format!("{}_gt", clip.id));
        if mask_dir.is_dir() {
            labels.insert(clip.id.clone(), mask_labels(&mask_dir, clip)?);
        } else if let Some(ranges) = ranges.as_ref().and_then(|r| r.get(index)) {
            let frame_labels = (0..clip.len())
                .map(|t| {
                    // annotation ranges are 1-based inclusive
                    ranges.iter().any(|&(a, b)| t + 1 >= a && t + 1 <= b)
                })
                .collect();
            labels.insert(clip.id.clone(), frame_labels);
        }
    }

    let gt = (!labels.is_empty()).then_some(GroundTruth { labels });
    if let Some(gt) = &gt {
        gt.check_against(&clips)?;
    }
    Ok((clips, gt))
}

/// Per-frame labels from a mask folder: anomalous iff any pixel is nonzero.
fn mask_labels(mask_dir: &Path, clip: &FrameSequence) -> Result<Vec<bool>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(mask_dir)
        .map_err(|e| Error::io(mask_dir, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(mask_dir, e))?
        .into_iter()
        .map(|entry| entry.path())
        .filter(|p| p.is_file() && is_frame_file(p))
        .collect();
    files.sort();
    if files.len() != clip.len() {
        return Err(Error::format(
            0,
            format!(
                "mask folder {} has {} frames, clip '{}' has {}",
                mask_dir.display(),
                files.len(),
                clip.id,
                clip.len()
            ),
        ));
    }
    files
        .iter()
        .map(|f| {
            let (pixels, _) = decode_gray(f)?;
            Ok(pixels.iter().any(|&v| v > 0.0))
        })
        .collect()
}

/// Parses `gt_frame = a:b` (or `[a:b, c:d]`) lines from any `.m` file in the
/// split directory; the i-th line labels the i-th clip in sorted order.
fn parse_range_annotations(base: &Path) -> Result<Option<Vec<Vec<(usize, usize)>>>> {
    let m_file = std::fs::read_dir(base)
        .map_err(|e| Error::io(base, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .find(|p| {
            p.is_file()
                && p.extension().and_then(|e| e.to_str()) == Some("m")
                && !p
                    .file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with('.'))
        });
    let Some(m_file) = m_file else {
        return Ok(None);
    };
    let text = std::fs::read_to_string(&m_file).map_err(|e| Error::io(&m_file, e))?;
    let mut all = Vec::new();
    for line in text.lines() {
        if !line.contains("gt_frame") {
            continue;
        }
        let mut ranges = Vec::new();
        // scan for every "a:b" integer pair on the line
        let bytes = line.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            if bytes[i] == b':' {
                let left_start = line[..i]
                    .rfind(|c: char| !c.is_ascii_digit())
                    .map_or(0, |p| p + 1);
                let right_end = line[i + 1..]
                    .find(|c: char| !c.is_ascii_digit())
                    .map_or(line.len(), |p| i + 1 + p);
                if left_start < i && i + 1 < right_end {
                    if let (Ok(a), Ok(b)) = (
                        line[left_start..i].parse::<usize>(),
                        line[i + 1..right_end].parse::<usize>(),
                    ) {
                        ranges.push((a, b));
                    }
                }
            }
            i += 1;
        }
        if ranges.is_empty() {
            return Err(Error::format(
                0,
                format!("gt_frame line without parsable ranges in {}: {line:?}", m_file.display()),
            ));
        }
        all.push(ranges);
    }
    Ok((!all.is_empty()).then_some(all))
}
