//! Implementations of the five subcommands.

use std::collections::BTreeSet;

use caedet_core::checkpoint::{load_checkpoint, save_checkpoint, AdamSnapshot};
use caedet_core::data::{
    generate_synthetic, load_frame_dir, load_synthetic, load_ucsd, preprocess, split_train_val,
    FrameSequence, GroundTruth, SyntheticConfig, UcsdSplit, UcsdSubset,
};
use caedet_core::detect::{evaluate, fit_threshold, score_frames, write_scores_csv, FrameScore};
use caedet_core::error::{Error, Result};
use caedet_core::model::{Autoencoder, ModelConfig};
use caedet_core::optimize::AdamConfig;
use caedet_core::tensor::Tensor;
use caedet_core::train::{evaluate_reconstruction, train_autoencoder, TrainOptions};

use crate::{metrics, DatasetKind, EvalArgs, PlotArgs, ScoreArgs, SynthArgs, TrainArgs};

/// Clips that carry no anomalous label (normal clips train the model).
fn normal_clips(clips: &[FrameSequence], gt: Option<&GroundTruth>) -> Vec<FrameSequence> {
    clips
        .iter()
        .filter(|c| {
            gt.and_then(|g| g.labels.get(&c.id))
                .map_or(true, |labels| labels.iter().all(|&l| !l))
        })
        .cloned()
        .collect()
}

/// Preprocesses every frame of every clip to the model input size.
fn frames_of(clips: &[FrameSequence], target: (usize, usize)) -> Result<Vec<Tensor<f32>>> {
    let mut out = Vec::new();
    for clip in clips {
        for frame in &clip.frames {
            out.push(preprocess(frame, target)?);
        }
    }
    Ok(out)
}

fn resize_clips(clips: &[FrameSequence], target: (usize, usize)) -> Result<Vec<FrameSequence>> {
    clips
        .iter()
        .map(|c| {
            Ok(FrameSequence {
                id: c.id.clone(),
                frames: c
                    .frames
                    .iter()
                    .map(|f| preprocess(f, target))
                    .collect::<Result<_>>()?,
                source_dims: c.source_dims,
            })
        })
        .collect()
}

fn ucsd_subset(kind: DatasetKind) -> UcsdSubset {
    match kind {
        DatasetKind::Ped1 => UcsdSubset::Ped1,
        DatasetKind::Ped2 => UcsdSubset::Ped2,
        DatasetKind::Synth => unreachable!("synth handled separately"),
    }
}

fn validate_fraction(name: &str, value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::Config(format!("{name} must be in [0, 1], got {value}")));
    }
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    validate_fraction("--val-fraction", args.val_fraction)?;
    if args.batch == 0 {
        return Err(Error::Config("--batch must be >= 1".into()));
    }

    // Load training clips: UCSD Train splits are all-normal; synthetic clips
    // are filtered to the unlabeled (normal) ones.
    let (clips, input_size) = match args.dataset {
        DatasetKind::Synth => {
            let (clips, gt) = load_synthetic(&args.data)?;
            let normal = normal_clips(&clips, gt.as_ref());
            if normal.len() < clips.len() {
                log::info!(
                    "training on {} normal clips ({} anomalous clips excluded)",
                    normal.len(),
                    clips.len() - normal.len()
                );
            }
            let size = (normal[0].frames[0].shape()[0], normal[0].frames[0].shape()[1]);
            (normal, size)
        }
        ped => {
            let (clips, _) = load_ucsd(&args.data, ucsd_subset(ped), UcsdSplit::Train)?;
            (clips, (256, 256))
        }
    };

    let (train_clips, val_clips) = split_train_val(clips, args.val_fraction)?;
    let train_frames = frames_of(&train_clips, input_size)?;
    let val_frames = frames_of(&val_clips, input_size)?;
    log::info!(
        "training on {} frames from {} clips, validating on {} frames from {} clips",
        train_frames.len(),
        train_clips.len(),
        val_frames.len(),
        val_clips.len()
    );

    let run_info = serde_json::json!({
        "dataset": args.dataset,
        "data_root": args.data.display().to_string(),
        "epochs": args.epochs,
        "batch_size": args.batch,
        "learning_rate": args.lr,
        "seed": args.seed,
        "scale_factor": args.scale,
        "val_fraction": args.val_fraction,
        "checkpoint_path": args.ckpt.display().to_string(),
        "metrics_path": args.metrics.display().to_string(),
    });
    let config = ModelConfig {
        input_height: input_size.0,
        input_width: input_size.1,
        scale_factor: args.scale,
        seed: args.seed,
        run: Some(run_info),
        ..ModelConfig::default()
    };
    let mut model = Autoencoder::<f32>::new(config)?;
    log::info!(
        "model: {}x{} input, scale {}, {} parameters",
        input_size.0,
        input_size.1,
        args.scale,
        model.param_count()
    );

    let opts = TrainOptions {
        epochs: args.epochs,
        batch_size: args.batch,
        seed: args.seed,
        adam: AdamConfig {
            learning_rate: args.lr,
            ..AdamConfig::default()
        },
    };
    let (rows, optimizer) = train_autoencoder(&mut model, &train_frames, &val_frames, &opts)?;
    metrics::write_metrics_csv(&args.metrics, &rows)?;
    save_checkpoint(&model, Some(&AdamSnapshot::of(&optimizer)), &args.ckpt)?;
    println!(
        "trained {} epochs; metrics -> {}, checkpoint -> {}",
        rows.len(),
        args.metrics.display(),
        args.ckpt.display()
    );
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    validate_fraction("--val-fraction", args.val_fraction)?;
    validate_fraction("--quantile", args.quantile)?;
    let (model, _) = load_checkpoint(&args.ckpt)?;
    if let Some(scale) = args.scale {
        if scale != model.config().scale_factor {
            return Err(Error::Config(format!(
                "checkpoint was trained at scale {}, --scale {} given",
                model.config().scale_factor,
                scale
            )));
        }
    }
    let input_size = (model.config().input_height, model.config().input_width);

    // fit_clips: normal validation clips for the threshold; test_clips: the
    // evaluation targets. Both are scored together so one normalization
    // covers the whole set.
    let (fit_clips, test_clips, gt) = match args.dataset {
        DatasetKind::Synth => {
            let (clips, gt) = load_synthetic(&args.data)?;
            let normal = normal_clips(&clips, gt.as_ref());
            let (_, val) = split_train_val(normal, args.val_fraction)?;
            (val, clips, gt)
        }
        ped => {
            let subset = ucsd_subset(ped);
            let (train_clips, _) = load_ucsd(&args.data, subset, UcsdSplit::Train)?;
            let (_, val) = split_train_val(train_clips, args.val_fraction)?;
            let (test_clips, gt) = load_ucsd(&args.data, subset, UcsdSplit::Test)?;
            (val, test_clips, gt)
        }
    };

    let fit_clips = resize_clips(&fit_clips, input_size)?;
    let test_clips = resize_clips(&test_clips, input_size)?;

    // (a) reconstruction quality on the test set
    let test_frames = frames_of(&test_clips, input_size)?;
    let recon = evaluate_reconstruction(&model, &test_frames, args.batch)?;
    println!(
        "reconstruction: pixel accuracy {:.4}, mean BCE {:.6} over {} frames",
        recon.pixel_accuracy, recon.loss, recon.batch_size
    );

    // (b) frame-level detection at the fitted threshold
    let test_ids: BTreeSet<&str> = test_clips.iter().map(|c| c.id.as_str()).collect();
    let mut all_clips: Vec<FrameSequence> = Vec::new();
    for c in &fit_clips {
        if !test_ids.contains(c.id.as_str()) {
            all_clips.push(c.clone());
        }
    }
    let fit_ids: BTreeSet<String> = fit_clips.iter().map(|c| c.id.clone()).collect();
    all_clips.extend(test_clips.iter().cloned());
    let scores = score_frames(&model, &all_clips)?;

    let fit_scores: Vec<f64> = scores
        .iter()
        .filter(|s| fit_ids.contains(&s.clip))
        .map(|s| s.normalized)
        .collect();
    if fit_scores.is_empty() {
        log::warn!("no validation clips available; skipping detection metrics");
        write_scores_csv(&args.scores, &scores, None, None)?;
        println!("scores -> {}", args.scores.display());
        return Ok(());
    }
    let threshold = fit_threshold(&fit_scores, args.quantile)?;

    let test_scores: Vec<FrameScore> = scores
        .iter()
        .filter(|s| test_ids.contains(s.clip.as_str()))
        .cloned()
        .collect();

    let Some(gt) = gt else {
        log::warn!("no ground truth found; detection metrics skipped");
        write_scores_csv(&args.scores, &test_scores, None, Some(threshold))?;
        println!("scores -> {}", args.scores.display());
        return Ok(());
    };

    // align labels with the scored frames; clips without labels are skipped
    let mut labeled_scores = Vec::new();
    let mut labels = Vec::new();
    let mut skipped: BTreeSet<&str> = BTreeSet::new();
    for s in &test_scores {
        match gt.labels.get(&s.clip) {
            Some(clip_labels) => {
                labeled_scores.push(s.clone());
                labels.push(clip_labels[s.frame]);
            }
            None => {
                skipped.insert(s.clip.as_str());
            }
        }
    }
    if !skipped.is_empty() {
        log::warn!("{} clips have no labels and are excluded from detection metrics", skipped.len());
    }
    if labeled_scores.is_empty() {
        log::warn!("no labeled frames; detection metrics skipped");
        write_scores_csv(&args.scores, &test_scores, None, Some(threshold))?;
        println!("scores -> {}", args.scores.display());
        return Ok(());
    }

    let report = evaluate(&labeled_scores, &labels, threshold)?;
    println!(
        "detection: threshold {:.6} ({} quantile of {} validation scores)",
        report.threshold,
        args.quantile,
        fit_scores.len()
    );
    println!(
        "detection: accuracy {:.4}, precision {:.4}, recall {:.4}",
        report.accuracy, report.precision, report.recall
    );
    match (report.auc, report.eer) {
        (Some(auc), Some(eer)) => println!("detection: ROC-AUC {auc:.4}, EER {eer:.4}"),
        _ => println!("detection: ROC-AUC undefined (single-class labels)"),
    }
    write_scores_csv(&args.scores, &labeled_scores, Some(&labels), Some(threshold))?;
    println!("scores -> {}", args.scores.display());
    Ok(())
}

pub fn score(args: ScoreArgs) -> Result<()> {
    let (model, _) = load_checkpoint(&args.ckpt)?;
    let clips = load_frame_dir(&args.data)?;
    let input_size = (model.config().input_height, model.config().input_width);
    let clips = resize_clips(&clips, input_size)?;
    let scores = score_frames(&model, &clips)?;
    write_scores_csv(&args.scores, &scores, None, None)?;
    println!("scored {} frames -> {}", scores.len(), args.scores.display());
    Ok(())
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let config = SyntheticConfig {
        seed: args.seed,
        ..SyntheticConfig::default()
    };
    let (clips, gt) = generate_synthetic(&config, args.clips, args.anomaly_rate)?;
    caedet_core::data::write_synthetic(&args.out, &clips, &gt)?;
    let anomalous = gt.labels.values().filter(|l| l.iter().any(|&x| x)).count();
    println!(
        "wrote {} clips ({} anomalous) of {} frames at {}x{} -> {}",
        clips.len(),
        anomalous,
        config.clip_len,
        config.frame_height,
        config.frame_width,
        args.out.display()
    );
    Ok(())
}

pub fn plot(args: PlotArgs) -> Result<()> {
    let rows = metrics::read_metrics_csv(&args.metrics)?;
    let svg = crate::plot::render_metrics_svg(&rows);
    std::fs::write(&args.out, svg).map_err(|e| Error::io(args.out.as_path(), e))?;
    println!("plot -> {}", args.out.display());
    Ok(())
}
