//! Epoch-based training of the autoencoder on preprocessed frames: seeded
//! frame-level shuffling, BCE + Adam updates per batch, and per-epoch
//! train/validation loss and pixel accuracy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::Autoencoder;
use crate::optimize::{bce_grad, bce_loss, pixel_accuracy, Adam, AdamConfig, LossReport};
use crate::tensor::Tensor;

/// Knobs of one training run.
#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub epochs: u32,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 10,
            batch_size: 16,
            seed: 42,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        self.adam.validate()
    }
}

/// One row of the training metrics table. Validation columns are NaN when
/// the validation set is empty.
#[derive(Clone, Copy, Debug)]
pub struct EpochMetrics {
    pub epoch: u32,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

/// Stacks `[H, W, 1]` frames into a `[B, H, W, 1]` batch.
fn stack_frames(frames: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = frames[0].shape();
    let mut data = Vec::with_capacity(frames.len() * frames[0].len());
    for f in frames {
        if f.shape() != first {
            return Err(Error::dimension(
                "batch frame shape",
                format!("{first:?}"),
                format!("{:?}", f.shape()),
            ));
        }
        data.extend_from_slice(f.data());
    }
    Tensor::new(vec![frames.len(), first[0], first[1], first[2]], data)
}

/// Mean loss and pixel accuracy of reconstructions over `frames`, batched
/// inference only.
pub fn evaluate_reconstruction(
    model: &Autoencoder<f32>,
    frames: &[Tensor<f32>],
    batch_size: usize,
) -> Result<LossReport> {
    if frames.is_empty() {
        return Ok(LossReport {
            loss: f64::NAN,
            pixel_accuracy: f64::NAN,
            batch_size: 0,
        });
    }
    let mut loss_sum = 0.0;
    let mut acc_sum = 0.0;
    let mut elements = 0usize;
    for chunk in frames.chunks(batch_size.max(1)) {
        let refs: Vec<&Tensor<f32>> = chunk.iter().collect();
        let batch = stack_frames(&refs)?;
        let recon = model.forward(&batch)?;
        let n = batch.len() as f64;
        loss_sum += bce_loss(&batch, &recon)? * n;
        acc_sum += pixel_accuracy(&batch, &recon)? * n;
        elements += batch.len();
    }
    Ok(LossReport {
        loss: loss_sum / elements as f64,
        pixel_accuracy: acc_sum / elements as f64,
        batch_size: frames.len(),
    })
}

/// Trains the model in place for `opts.epochs` epochs, returning one metrics
/// row per epoch along with the optimizer (for checkpointing or resuming).
/// Bitwise deterministic for a fixed (model seed, options).
pub fn train_autoencoder(
    model: &mut Autoencoder<f32>,
    train_frames: &[Tensor<f32>],
    val_frames: &[Tensor<f32>],
    opts: &TrainOptions,
) -> Result<(Vec<EpochMetrics>, Adam<f32>)> {
    opts.validate()?;
    if train_frames.is_empty() {
        return Err(Error::Domain("training set is empty".into()));
    }
    let mut optimizer = Adam::new(opts.adam)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut metrics = Vec::with_capacity(opts.epochs as usize);
    let mut order: Vec<usize> = (0..train_frames.len()).collect();
    let start_epoch = model.config().epochs_completed;

    for epoch in 1..=opts.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut acc_sum = 0.0;
        let mut elements = 0usize;

        for (batch_index, chunk) in order.chunks(opts.batch_size).enumerate() {
            let refs: Vec<&Tensor<f32>> = chunk.iter().map(|&i| &train_frames[i]).collect();
            let batch = stack_frames(&refs)?;
            let with_batch_context = |e: Error| match e {
                Error::NonFinite { context, index, value } => Error::NonFinite {
                    context: format!("epoch {epoch}, batch {batch_index}: {context}"),
                    index,
                    value,
                },
                other => other,
            };

            model.zero_grads();
            let recon = model.forward_training(&batch).map_err(with_batch_context)?;
            let loss = bce_loss(&batch, &recon).map_err(with_batch_context)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("epoch {epoch}, batch {batch_index}: loss"),
                    index: 0,
                    value: loss,
                });
            }
            let acc = pixel_accuracy(&batch, &recon)?;
            let grad = bce_grad(&batch, &recon)?;
            model.backward(&grad).map_err(with_batch_context)?;

            let mut params = model.params_mut();
            let mut pairs: Vec<(&mut Tensor<f32>, &Tensor<f32>)> = params
                .iter_mut()
                .map(|p| {
                    let crate::layers::Param { value, grad, .. } = &mut **p;
                    (&mut *value, &*grad)
                })
                .collect();
            optimizer.step(&mut pairs).map_err(with_batch_context)?;

            let n = batch.len() as f64;
            loss_sum += loss * n;
            acc_sum += acc * n;
            elements += batch.len();
        }

        let val = evaluate_reconstruction(model, val_frames, opts.batch_size)?;
        let row = EpochMetrics {
            epoch,
            train_loss: loss_sum / elements as f64,
            train_acc: acc_sum / elements as f64,
            val_loss: val.loss,
            val_acc: val.pixel_accuracy,
        };
        log::info!(
            "epoch {}/{}: train_loss={:.6} train_acc={:.4} val_loss={:.6} val_acc={:.4}",
            epoch,
            opts.epochs,
            row.train_loss,
            row.train_acc,
            row.val_loss,
            row.val_acc
        );
        metrics.push(row);
        model.set_epochs_completed(start_epoch + epoch);
    }
    Ok((metrics, optimizer))
}
