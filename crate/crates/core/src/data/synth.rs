//! Deterministic synthetic dataset: slow bright blobs drifting over a static
//! noisy background stand in for normal pedestrian motion; anomalous clips
//! add a fast (motion-blurred) or oversized blob from an onset frame onward.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{load_clip_dir, FrameSequence, GroundTruth};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Anomaly injected into labeled clips.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnomalyKind {
    /// A blob moving several times faster than normal; rendered with motion
    /// blur so single frames are visually distinct.
    FastBlob,
    /// A blob several times larger than normal.
    LargeBlob,
}

/// Parameters of the synthetic dataset. Output is a pure function of the
/// config (including `seed`).
#[derive(Clone, Debug)]
pub struct SyntheticConfig {
    pub frame_height: usize,
    pub frame_width: usize,
    pub clip_len: usize,
    /// Inclusive range of normal blobs per clip.
    pub blob_count: (usize, usize),
    /// Blob radius range in pixels.
    pub blob_radius: (f64, f64),
    /// Normal blob speed range in pixels per frame.
    pub blob_speed: (f64, f64),
    pub anomaly: AnomalyKind,
    /// First anomalous frame index within an anomalous clip.
    pub anomaly_onset: usize,
    /// Amplitude of the static background noise.
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            frame_height: 64,
            frame_width: 64,
            clip_len: 60,
            blob_count: (1, 3),
            blob_radius: (2.0, 3.0),
            blob_speed: (0.2, 0.8),
            anomaly: AnomalyKind::FastBlob,
            anomaly_onset: 10,
            noise_level: 0.05,
            seed: 42,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if self.frame_height < 8 || self.frame_width < 8 {
            return Err(Error::Config("synthetic frames must be at least 8x8".into()));
        }
        if self.clip_len == 0 {
            return Err(Error::Config("clip_len must be >= 1".into()));
        }
        if self.anomaly_onset >= self.clip_len {
            return Err(Error::Config(format!(
                "anomaly_onset {} must precede clip_len {}",
                self.anomaly_onset, self.clip_len
            )));
        }
        if self.blob_count.0 > self.blob_count.1 || self.blob_count.0 == 0 {
            return Err(Error::Config(format!(
                "blob_count range {:?} is invalid",
                self.blob_count
            )));
        }
        Ok(())
    }
}

struct Blob {
    x0: f64,
    y0: f64,
    vx: f64,
    vy: f64,
    radius: f64,
    amplitude: f64,
    /// Vertical range the blob bounces within (lets anomalies roam the dark
    /// ground where they stay visible).
    y_range: (f64, f64),
}

impl Blob {
    /// Closed-form position at (fractional) time `t`, reflecting off walls.
    fn position(&self, t: f64, width: usize) -> (f64, f64) {
        let fold = |p: f64, limit: f64| -> f64 {
            if limit <= 0.0 {
                return 0.0;
            }
            let period = 2.0 * limit;
            let q = p.rem_euclid(period);
            if q > limit {
                period - q
            } else {
                q
            }
        };
        let (y_lo, y_hi) = self.y_range;
        (
            fold(self.x0 + self.vx * t, width as f64 - 1.0),
            y_lo + fold(self.y0 - y_lo + self.vy * t, y_hi - y_lo),
        )
    }
}

/// Motion-blur subsamples per rendered blob.
const BLUR_STEPS: usize = 4;

fn render_blob(frame: &mut [f64], blob: &Blob, t: f64, height: usize, width: usize) {
    let sub_amp = blob.amplitude / BLUR_STEPS as f64;
    let inv_two_r2 = 1.0 / (2.0 * blob.radius * blob.radius);
    for j in 0..BLUR_STEPS {
        let tj = t - j as f64 / BLUR_STEPS as f64;
        let (cx, cy) = blob.position(tj, width);
        // only touch pixels within 3 radii
        let reach = (3.0 * blob.radius).ceil() as isize;
        let (cyi, cxi) = (cy.round() as isize, cx.round() as isize);
        for r in (cyi - reach).max(0)..=(cyi + reach).min(height as isize - 1) {
            for c in (cxi - reach).max(0)..=(cxi + reach).min(width as isize - 1) {
                let dy = r as f64 - cy;
                let dx = c as f64 - cx;
                let d2 = dx * dx + dy * dy;
                frame[r as usize * width + c as usize] +=
                    sub_amp * (-d2 * inv_two_r2).exp();
            }
        }
    }
}

fn sample_blob(rng: &mut ChaCha8Rng, cfg: &SyntheticConfig, y_range: (f64, f64)) -> Blob {
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let speed = rng.gen_range(cfg.blob_speed.0..=cfg.blob_speed.1);
    Blob {
        x0: rng.gen_range(0.0..cfg.frame_width as f64 - 1.0),
        y0: rng.gen_range(y_range.0..y_range.1),
        vx: speed * angle.cos(),
        vy: speed * angle.sin(),
        radius: rng.gen_range(cfg.blob_radius.0..=cfg.blob_radius.1),
        amplitude: rng.gen_range(0.6..0.8),
        y_range,
    }
}

/// The static scene shared by every clip (fixed camera): a bright walkway
/// band across otherwise dark ground.
struct Scene {
    band_top: usize,
    band_bottom: usize,
}

impl Scene {
    fn of(cfg: &SyntheticConfig) -> Scene {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let h = cfg.frame_height as f64;
        let top = (rng.gen_range(0.20..0.40) * h) as usize;
        let height = (rng.gen_range(0.30..0.45) * h) as usize;
        Scene {
            band_top: top,
            band_bottom: (top + height).min(cfg.frame_height - 1),
        }
    }
}

fn generate_clip(cfg: &SyntheticConfig, scene: &Scene, index: usize, anomalous: bool) -> FrameSequence {
    let (h, w) = (cfg.frame_height, cfg.frame_width);
    let mut rng = ChaCha8Rng::seed_from_u64(
        cfg.seed
            .wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
    );

    // static per-clip background over the shared scene
    let background: Vec<f64> = (0..h * w)
        .map(|i| {
            let row = i / w;
            let base = if (scene.band_top..=scene.band_bottom).contains(&row) {
                0.72
            } else {
                0.12
            };
            base + cfg.noise_level * rng.gen::<f64>()
        })
        .collect();

    let full_range = (0.0, h as f64 - 1.0);
    let n_blobs = rng.gen_range(cfg.blob_count.0..=cfg.blob_count.1);
    let blobs: Vec<Blob> = (0..n_blobs)
        .map(|_| sample_blob(&mut rng, cfg, full_range))
        .collect();

    let anomaly = anomalous.then(|| {
        // anomalies roam the taller dark strip so the band never hides them
        let above = (0.0, (scene.band_top.saturating_sub(1)) as f64);
        let below = (scene.band_bottom as f64 + 1.0, h as f64 - 1.0);
        let dark = if above.1 - above.0 >= below.1 - below.0 { above } else { below };
        let mut blob = sample_blob(&mut rng, cfg, dark);
        match cfg.anomaly {
            AnomalyKind::FastBlob => {
                // a fast bright object: motion-blurred but high-energy
                blob.vx *= 8.0;
                blob.vy *= 8.0;
                blob.amplitude *= 2.0;
                blob.radius *= 1.5;
            }
            AnomalyKind::LargeBlob => blob.radius *= 3.5,
        }
        blob
    });

    let frames = (0..cfg.clip_len)
        .map(|t| {
            let mut frame = background.clone();
            for blob in &blobs {
                render_blob(&mut frame, blob, t as f64, h, w);
            }
            if let Some(anomaly) = &anomaly {
                if t >= cfg.anomaly_onset {
                    render_blob(&mut frame, anomaly, t as f64, h, w);
                }
            }
            let data: Vec<f32> = frame.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect();
            Tensor::new(vec![h, w, 1], data).expect("synthetic frame")
        })
        .collect();

    FrameSequence {
        id: format!("clip{index:03}"),
        frames,
        source_dims: (h, w),
    }
}

/// Generates `n_clips` deterministic clips; roughly `anomaly_rate` of them
/// (spread evenly, within one clip of the exact count) contain an anomaly
/// from `anomaly_onset` onward, and the labels mark exactly those frames.
pub fn generate_synthetic(
    cfg: &SyntheticConfig,
    n_clips: usize,
    anomaly_rate: f64,
) -> Result<(Vec<FrameSequence>, GroundTruth)> {
    cfg.validate()?;
    if n_clips == 0 {
        return Err(Error::Config("n_clips must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&anomaly_rate) {
        return Err(Error::Config(format!(
            "anomaly_rate must be in [0, 1], got {anomaly_rate}"
        )));
    }
    let anomalous: Vec<bool> = (0..n_clips)
        .map(|i| ((i + 1) as f64 * anomaly_rate).floor() > (i as f64 * anomaly_rate).floor())
        .collect();
    let scene = Scene::of(cfg);
    let clips: Vec<FrameSequence> = (0..n_clips)
        .into_par_iter()
        .map(|i| generate_clip(cfg, &scene, i, anomalous[i]))
        .collect();
    let mut labels = BTreeMap::new();
    for (clip, &anom) in clips.iter().zip(&anomalous) {
        let clip_labels = (0..cfg.clip_len)
            .map(|t| anom && t >= cfg.anomaly_onset)
            .collect();
        labels.insert(clip.id.clone(), clip_labels);
    }
    Ok((clips, GroundTruth { labels }))
}

/// Writes clips as `clipNNN/frameNNNN.png` under `dir` plus a `labels.csv`
/// with header `clip,frame,label` and one row per frame.
pub fn write_synthetic(dir: &Path, clips: &[FrameSequence], gt: &GroundTruth) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for clip in clips {
        let clip_dir = dir.join(&clip.id);
        std::fs::create_dir_all(&clip_dir).map_err(|e| Error::io(&clip_dir, e))?;
        for (t, frame) in clip.frames.iter().enumerate() {
            let (h, w) = (frame.shape()[0], frame.shape()[1]);
            let pixels: Vec<u8> = frame
                .data()
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect();
            let img = image::GrayImage::from_raw(w as u32, h as u32, pixels)
                .expect("frame buffer size");
            let path = clip_dir.join(format!("frame{t:04}.png"));
            img.save(&path).map_err(|e| {
                Error::io(
                    &path,
                    std::io::Error::new(std::io::ErrorKind::Other, e.to_string()),
                )
            })?;
        }
    }
    let csv_path = dir.join("labels.csv");
    let mut out = Vec::new();
    writeln!(out, "clip,frame,label").unwrap();
    for clip in clips {
        let labels = gt.labels.get(&clip.id);
        for t in 0..clip.len() {
            let label = labels.map_or(0, |l| u8::from(l[t]));
            writeln!(out, "{},{t},{label}", clip.id).unwrap();
        }
    }
    std::fs::write(&csv_path, out).map_err(|e| Error::io(&csv_path, e))
}

/// Loads a directory written by [`write_synthetic`] (or any `clipNNN/` tree).
/// Returns labels only when `labels.csv` is present.
pub fn load_synthetic(dir: &Path) -> Result<(Vec<FrameSequence>, Option<GroundTruth>)> {
    let mut clip_dirs: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(dir, e))?
        .into_iter()
        .map(|entry| entry.path())
        .filter(|p| p.is_dir())
        .collect();
    clip_dirs.sort();
    if clip_dirs.is_empty() {
        return Err(Error::format(0, format!("no clip directories under {}", dir.display())));
    }
    let clips: Vec<FrameSequence> = clip_dirs
        .par_iter()
        .map(|sub| {
            let id = sub.file_name().and_then(|n| n.to_str()).unwrap_or("clip");
            load_clip_dir(sub, id)
        })
        .collect::<Result<_>>()?;

    let csv_path = dir.join("labels.csv");
    if !csv_path.exists() {
        return Ok((clips, None));
    }
    let text = std::fs::read_to_string(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("clip,frame,label") => {}
        other => {
            return Err(Error::format(
                0,
                format!("labels.csv header must be 'clip,frame,label', found {other:?}"),
            ));
        }
    }
    let mut labels: BTreeMap<String, Vec<(usize, bool)>> = BTreeMap::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let (clip, frame, label) = (|| {
            let clip = parts.next()?;
            let frame: usize = parts.next()?.parse().ok()?;
            let label: u8 = parts.next()?.parse().ok()?;
            if parts.next().is_some() || label > 1 {
                return None;
            }
            Some((clip.to_string(), frame, label == 1))
        })()
        .ok_or_else(|| {
            Error::format(0, format!("labels.csv line {} is malformed: {line:?}", lineno + 2))
        })?;
        labels.entry(clip).or_default().push((frame, label));
    }
    let mut gt = GroundTruth::default();
    for (clip, mut rows) in labels {
        rows.sort_by_key(|&(frame, _)| frame);
        if rows.iter().enumerate().any(|(i, &(frame, _))| frame != i) {
            return Err(Error::format(
                0,
                format!("labels.csv frames for clip '{clip}' are not contiguous from 0"),
            ));
        }
        gt.labels.insert(clip, rows.into_iter().map(|(_, l)| l).collect());
    }
    gt.check_against(&clips)?;
    Ok((clips, Some(gt)))
}
