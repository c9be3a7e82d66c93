//! Heatmap detector, multi-branch lifting autoencoder, losses and training.

mod config;
mod detector;
mod infer;
mod layers;
mod lifter;
mod loss;
mod train;

pub use config::{BranchConfig, DetectorConfig, LifterConfig, LossWeights, RotationTarget, Z_SIZES};
pub use detector::{image_statistics, normalize_image, stored_statistics, Detector, IMAGE_MEAN, IMAGE_STD};
pub use infer::{add_image_noise, detect, predict_heatmaps, predict_images, predict_noisy_records, predict_records, Prediction};
pub use layers::{update_running_stats, Pass};
pub use lifter::{Heads, Lifter, LifterOutputs};
pub use loss::{loss_2d, loss_ae, AeTargets, LossTerms, QuatSignDistance, RotationExtract};
pub use train::{
    detector_loss, detector_step, end2end_loss, end2end_step, image_batch, lifter_loss, lifter_step, mean_pose_flat,
    prepare_train_records, render_batch, resample_batch, train, validate_lifter, DetectorModel, EpochLog, ImageSource,
    InitModels, LifterModel, Stage, TrainConfig, TrainOutcome,
};
