//! Losses, augmentation and the SGD training loop.

mod augment;
mod loss;
mod train;

pub use augment::{augment, AugmentationParams};
pub use loss::{
    combined_loss, dice_loss, inverse_frequency_weights, weighted_ce, LossConfig, LossValue,
    REFERENCE_CLASS_FRACTIONS,
};
pub use train::{load_patches, log_csv, train, train_patches, EpochLog, Sgd, TrainConfig};
