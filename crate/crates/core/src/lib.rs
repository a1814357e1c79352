//! Flood segmentation for multispectral scenes.
//!
//! The crate covers the whole desk-scale pipeline: band-sequential rasters and
//! 2-bit class masks, a seeded scene generator, NDWI baselines, a small
//! fully-convolutional network with hand-written backpropagation, training
//! with weighted cross-entropy plus Dice, water-class evaluation, and the
//! deployment side (scene-level inference, mask packing, downlink accounting
//! and throughput measurement).

pub mod baselines;
pub mod error;
pub mod eval;
pub mod nnet;
pub mod onboard;
pub mod raster;
pub mod rng;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use eval::{ConfusionMatrix, EvalReport, PrCurve, Segmenter};
pub use nnet::{Model, ModelKind, Tensor};
pub use raster::{BandId, Class, ClassMask, MultiBandImage, PatchGrid};
