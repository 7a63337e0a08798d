//! Per-frame anomaly scoring and evaluation: reconstruction-error scores,
//! min-max normalization over the scored set, quantile thresholding, and
//! frame-level accuracy / ROC-AUC / EER.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::data::FrameSequence;
use crate::error::{Error, Result};
use crate::model::Autoencoder;
use crate::optimize::bce_loss;
use crate::tensor::Tensor;

/// Reconstruction-error score of a single frame.
#[derive(Clone, Debug)]
pub struct FrameScore {
    pub clip: String,
    pub frame: usize,
    /// Mean per-frame BCE between the frame and its reconstruction.
    pub raw_error: f64,
    /// Min-max normalized over the scored set; 0.5 when all errors tie.
    pub normalized: f64,
}

/// Frame-level evaluation at a fixed threshold.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub threshold: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    /// `None` when the labels contain a single class.
    pub auc: Option<f64>,
    /// Equal error rate on the ROC; `None` for single-class labels.
    pub eer: Option<f64>,
    /// Normalized score trace per clip, in frame order.
    pub traces: BTreeMap<String, Vec<f64>>,
}

/// Scores every frame of every clip by its reconstruction BCE. Frames are
/// resized to the model input if needed; scoring fans out across frames and
/// is deterministic.
pub fn score_frames(model: &Autoencoder<f32>, clips: &[FrameSequence]) -> Result<Vec<FrameScore>> {
    if clips.is_empty() || clips.iter().all(|c| c.is_empty()) {
        return Err(Error::Domain("score_frames needs at least one frame".into()));
    }
    let target = (model.config().input_height, model.config().input_width);
    let jobs: Vec<(&str, usize, &Tensor<f32>)> = clips
        .iter()
        .flat_map(|c| {
            c.frames
                .iter()
                .enumerate()
                .map(move |(t, f)| (c.id.as_str(), t, f))
        })
        .collect();
    let raw: Vec<f64> = jobs
        .par_iter()
        .map(|(_, _, frame)| -> Result<f64> {
            let frame = crate::data::preprocess(frame, target)?;
            let batch = frame.reshaped(&[1, target.0, target.1, 1])?;
            let recon = model.forward(&batch)?;
            bce_loss(&batch, &recon)
        })
        .collect::<Result<_>>()?;
    let normalized = normalize_scores(&raw);
    Ok(jobs
        .into_iter()
        .zip(raw)
        .zip(normalized)
        .map(|(((clip, frame, _), raw_error), normalized)| FrameScore {
            clip: clip.to_string(),
            frame,
            raw_error,
            normalized,
        })
        .collect())
}

/// Min-max rescaling onto [0, 1]; a degenerate all-equal set maps to 0.5.
pub fn normalize_scores(raw: &[f64]) -> Vec<f64> {
    let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return vec![0.5; raw.len()];
    }
    raw.iter().map(|&r| (r - min) / (max - min)).collect()
}

/// Quantile of a score sample with linear interpolation between order
/// statistics. `quantile` 0.5 is the median, 1.0 the maximum.
pub fn fit_threshold(scores: &[f64], quantile: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Domain("fit_threshold needs a non-empty sample".into()));
    }
    if !(0.0..=1.0).contains(&quantile) {
        return Err(Error::Domain(format!(
            "quantile must be in [0, 1], got {quantile}"
        )));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = quantile * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < sorted.len() {
        Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
    } else {
        Ok(sorted[lo])
    }
}

/// ROC-AUC by the rank (Mann-Whitney) formulation; ties count one half.
/// Returns `None` when only one class is present.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // average ranks over tie groups (1-based ranks)
    let mut rank_sum_positive = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] {
                rank_sum_positive += avg_rank;
            }
        }
        i = j;
    }
    let p = positives as f64;
    let n = negatives as f64;
    Some((rank_sum_positive - p * (p + 1.0) / 2.0) / (p * n))
}

/// ROC curve points (FPR, TPR), from (0, 0) to (1, 1), thresholds descending.
fn roc_points(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64)> {
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let negatives = (labels.len() - labels.iter().filter(|&&l| l).count()) as f64;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        points.push((fp as f64 / negatives, tp as f64 / positives));
        i = j;
    }
    points
}

/// Equal error rate: the ROC point where FPR equals FNR, linearly
/// interpolated. `None` for single-class labels.
pub fn equal_error_rate(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return None;
    }
    let points = roc_points(scores, labels);
    // d = fpr - fnr is -1 at (0,0) and +1 at (1,1)
    let d = |&(fpr, tpr): &(f64, f64)| fpr - (1.0 - tpr);
    for w in points.windows(2) {
        let (d0, d1) = (d(&w[0]), d(&w[1]));
        if d0 <= 0.0 && d1 >= 0.0 {
            if (d1 - d0).abs() < f64::EPSILON {
                return Some(w[0].0);
            }
            let t = -d0 / (d1 - d0);
            return Some(w[0].0 + t * (w[1].0 - w[0].0));
        }
    }
    // numerically the sweep always crosses; fall back to the closest point
    points
        .iter()
        .min_by(|a, b| d(a).abs().partial_cmp(&d(b).abs()).unwrap())
        .map(|p| p.0)
}

/// Evaluates thresholded predictions against frame labels. A frame is
/// predicted anomalous iff its normalized score strictly exceeds the
/// threshold.
pub fn evaluate(scores: &[FrameScore], labels: &[bool], threshold: f64) -> Result<EvalReport> {
    if scores.len() != labels.len() {
        return Err(Error::dimension("labels", scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(Error::Domain("evaluate needs at least one frame".into()));
    }
    let normalized: Vec<f64> = scores.iter().map(|s| s.normalized).collect();
    let predictions: Vec<bool> = normalized.iter().map(|&s| s > threshold).collect();

    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut tn = 0usize;
    let mut fnc = 0usize;
    for (&pred, &label) in predictions.iter().zip(labels) {
        match (pred, label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fnc += 1,
        }
    }
    let total = scores.len() as f64;
    let accuracy = (tp + tn) as f64 / total;
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if tp + fnc > 0 {
        tp as f64 / (tp + fnc) as f64
    } else {
        0.0
    };

    let mut traces: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for s in scores {
        traces.entry(s.clip.clone()).or_default().push(s.normalized);
    }

    Ok(EvalReport {
        threshold,
        accuracy,
        precision,
        recall,
        auc: roc_auc(&normalized, labels),
        eer: equal_error_rate(&normalized, labels),
        traces,
    })
}

/// Writes the scores CSV with header
/// `clip,frame,raw_error,normalized_score,label,prediction`. Label and
/// prediction columns are left empty when unknown.
pub fn write_scores_csv(
    path: &Path,
    scores: &[FrameScore],
    labels: Option<&[bool]>,
    threshold: Option<f64>,
) -> Result<()> {
    if let Some(labels) = labels {
        if labels.len() != scores.len() {
            return Err(Error::dimension("labels", scores.len(), labels.len()));
        }
    }
    let mut out = Vec::new();
    writeln!(out, "clip,frame,raw_error,normalized_score,label,prediction").unwrap();
    for (i, s) in scores.iter().enumerate() {
        let label = labels.map_or(String::new(), |l| u8::from(l[i]).to_string());
        let prediction = threshold.map_or(String::new(), |t| u8::from(s.normalized > t).to_string());
        writeln!(
            out,
            "{},{},{:.9},{:.9},{},{}",
            s.clip, s.frame, s.raw_error, s.normalized, label, prediction
        )
        .unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
