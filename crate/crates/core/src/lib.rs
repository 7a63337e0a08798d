//! Convolutional autoencoder for video anomaly detection.
//!
//! The crate provides the full pipeline: a shape-checked tensor type with
//! from-scratch convolution/dense kernels and their gradients, stateful
//! layers with a finite-difference gradient checker, the encoder/decoder
//! builders, BCE + Adam training, UCSD-style and synthetic datasets, and
//! per-frame reconstruction-error scoring with threshold-based evaluation.

pub mod checkpoint;
pub mod data;
pub mod detect;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod layers;
pub mod model;
pub mod optimize;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, AdamSnapshot};
pub use data::{generate_synthetic, load_frame_dir, load_synthetic, load_ucsd, preprocess, split_train_val, write_synthetic, AnomalyKind, FrameSequence, GroundTruth, SyntheticConfig, UcsdSplit, UcsdSubset};
pub use detect::{equal_error_rate, evaluate, fit_threshold, normalize_scores, roc_auc, score_frames, write_scores_csv, EvalReport, FrameScore};
pub use error::{Error, Result};
pub use gradcheck::{grad_check, relative_error};
pub use layers::{forward_stack, infer_stack, backward_stack, shape_chain, zero_grads_stack, Layer, LayerSpec, Param};
pub use kernels::{
    activation_forward, activation_vjp, conv2d_forward, conv2d_vjp, conv_transpose2d_forward,
    conv_transpose2d_vjp, dense_forward, dense_vjp, sigmoid, ActivationKind, ConvGeometry,
};
pub use model::{decoder_specs, encoder_specs, Autoencoder, ModelConfig};
pub use optimize::{adam_step, bce_grad, bce_loss, pixel_accuracy, Adam, AdamConfig, LossReport};
pub use tensor::{Scalar, Tensor};
pub use train::{evaluate_reconstruction, train_autoencoder, EpochMetrics, TrainOptions};
