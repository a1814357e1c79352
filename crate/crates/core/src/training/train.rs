use std::fmt::Write as _;

use super::augment::{augment, AugmentationParams};
use super::loss::{combined_loss, LossConfig};
use crate::error::{Error, Result};
use crate::eval::evaluate_dataset;
use crate::nnet::{batch_tensor, Model, ModelKind};
use crate::onboard::{ModelSegmenter, DEFAULT_OVERLAP};
use crate::raster::{self, tile, Class, ClassMask, MultiBandImage};
use crate::rng::Rng;
use crate::synth::Manifest;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub patch_size: usize,
    pub augment: bool,
    pub augmentation: AugmentationParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 16,
            learning_rate: 1e-3,
            momentum: 0.9,
            seed: 0,
            patch_size: 64,
            augment: true,
            augmentation: AugmentationParams::default(),
        }
    }
}

impl TrainConfig {
    /// Defaults with the learning rate suited to `kind`.
    pub fn for_kind(kind: ModelKind) -> Self {
        TrainConfig {
            learning_rate: match kind {
                ModelKind::Linear => 1e-2,
                ModelKind::Scnn => 1e-3,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Argument("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 || self.patch_size == 0 {
            return Err(Error::Argument("batch and patch size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument(format!(
                "learning rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Argument("momentum must be in [0, 1)".into()));
        }
        if self.augment {
            self.augmentation.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Optimiser steps taken so far.
    pub step: usize,
    /// Mean batch loss over the epoch.
    pub loss: f64,
    pub val_water_iou: Option<f64>,
    pub val_water_recall: Option<f64>,
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,step,loss,val_water_iou,val_water_recall\n");
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
    for e in log {
        writeln!(
            out,
            "{},{},{:.8},{},{}",
            e.epoch,
            e.step,
            e.loss,
            opt(e.val_water_iou),
            opt(e.val_water_recall)
        )
        .unwrap();
    }
    out
}

/// SGD with heavy-ball momentum: `v = μv + g; w -= lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Sgd {
            learning_rate,
            momentum,
            velocity: Vec::new(),
        }
    }

    /// Applies accumulated gradients and leaves them in place.
    pub fn step(&mut self, model: &mut Model) {
        let (lr, mu) = (self.learning_rate as f32, self.momentum as f32);
        let first = self.velocity.is_empty();
        for (i, p) in model.parameters_mut().enumerate() {
            if first {
                self.velocity.push(vec![0.0; p.len()]);
            }
            let Some(g) = p.grad().map(<[f32]>::to_vec) else { continue };
            let v = &mut self.velocity[i];
            for (v, g) in v.iter_mut().zip(&g) {
                *v = mu * *v + g;
            }
            for (w, v) in p.data_mut().iter_mut().zip(v.iter()) {
                *w -= lr * v;
            }
        }
    }
}

/// Reads every manifest scene and cuts it into non-overlapping training
/// patches (the last row and column shifted inward).
pub fn load_patches(manifest: &Manifest, patch_size: usize) -> Result<Vec<(MultiBandImage, ClassMask)>> {
    let mut out = Vec::new();
    for e in &manifest.entries {
        let image = raster::read_image(&e.image)?;
        let mask = raster::read_mask(&e.mask)?;
        for p in tile(&image, Some(&mask), patch_size, patch_size)? {
            let mask = p.mask.expect("tiled with a mask");
            if mask.labels().iter().any(|&c| c != Class::Invalid) {
                out.push((p.image, mask));
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Argument("training set has no valid patches".into()));
    }
    Ok(out)
}

/// Trains on the scenes of `manifest`, optionally scoring a validation split
/// after each epoch.
pub fn train(
    model: &mut Model,
    manifest: &Manifest,
    validation: Option<&Manifest>,
    config: &TrainConfig,
    loss: &LossConfig,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    config.validate()?;
    let patches = load_patches(manifest, config.patch_size)?;
    train_patches(model, &patches, validation, config, loss, on_epoch)
}

/// The epoch loop over in-memory patches. All randomness (shuffling and
/// augmentation) comes from `config.seed`.
pub fn train_patches(
    model: &mut Model,
    patches: &[(MultiBandImage, ClassMask)],
    validation: Option<&Manifest>,
    config: &TrainConfig,
    loss: &LossConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    config.validate()?;
    loss.validate()?;
    if patches.is_empty() {
        return Err(Error::Argument("no training patches".into()));
    }
    let mut rng = Rng::new(config.seed);
    let mut opt = Sgd::new(config.learning_rate, config.momentum);
    let mut order: Vec<usize> = (0..patches.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let mut images = Vec::with_capacity(chunk.len());
            let mut truth = Vec::with_capacity(chunk.len() * patches[0].1.len());
            for &i in chunk {
                let (img, mask) = &patches[i];
                let (img, mask) = if config.augment {
                    augment(img, mask, &config.augmentation, &mut rng)?
                } else {
                    (img.clone(), mask.clone())
                };
                truth.extend_from_slice(mask.labels());
                images.push(img);
            }
            if truth.iter().all(|&c| c == Class::Invalid) {
                continue;
            }
            let refs: Vec<&MultiBandImage> = images.iter().collect();
            let x = batch_tensor::<f32>(&refs)?;
            let value = train_step(model, &mut opt, &x, &truth, loss)
                .map_err(|e| diverged(e, epoch, step))?;
            total += value;
            batches += 1;
            step += 1;
        }
        let (val_water_iou, val_water_recall) = match validation {
            Some(v) => {
                let seg = ModelSegmenter {
                    model: model.clone(),
                    patch_size: config.patch_size,
                    overlap: DEFAULT_OVERLAP.min(config.patch_size / 2),
                };
                let water = evaluate_dataset(&seg, v)?.water();
                (Some(water.iou), Some(water.recall))
            }
            None => (None, None),
        };
        let entry = EpochLog {
            epoch,
            step,
            loss: total / batches.max(1) as f64,
            val_water_iou,
            val_water_recall,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(log)
}

fn diverged(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::Numeric { op } => Error::Numeric {
            op: format!("{op} at epoch {epoch} step {step}"),
        },
        other => other,
    }
}

/// One forward/backward/update. Returns the batch loss.
pub(crate) fn train_step(
    model: &mut Model,
    opt: &mut Sgd,
    x: &crate::nnet::Tensor<f32>,
    truth: &[Class],
    loss: &LossConfig,
) -> Result<f64> {
    model.zero_grad();
    let trace = model.forward_trace(x)?;
    trace.output.check_finite("forward")?;
    let value = combined_loss(&trace.output, truth, loss)?;
    if !value.loss.is_finite() {
        return Err(Error::Numeric { op: "loss".into() });
    }
    model.backward(&trace, &value.grad)?;
    opt.step(model);
    Ok(value.loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SceneSpec, SpectralProfile};

    fn patch(seed: u64, size: usize) -> (MultiBandImage, ClassMask) {
        let spec = SceneSpec {
            width: size,
            height: size,
            seed,
            water_fraction: 0.3,
            cloud_fraction: 0.2,
            ..SceneSpec::default()
        };
        generate(&spec, &SpectralProfile::sentinel2(), 0.0).unwrap()
    }

    fn tiny_model(seed: u64) -> Model {
        let mut m = Model::scnn_with_widths(13, &[4, 4, 4]).unwrap();
        m.init_he_uniform(seed);
        m
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let data = vec![patch(1, 16), patch(2, 16)];
        let mut m = tiny_model(3);
        let before = m.clone();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 1,
            learning_rate: 0.0,
            patch_size: 16,
            ..TrainConfig::default()
        };
        train_patches(&mut m, &data, None, &cfg, &LossConfig::default(), |_| {}).unwrap();
        let w = |m: &Model| m.parameters().flat_map(|p| p.data().to_vec()).collect::<Vec<f32>>();
        assert_eq!(w(&m), w(&before));
    }

    #[test]
    fn same_seed_same_weights() {
        let data = vec![patch(1, 16), patch(2, 16), patch(3, 16)];
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 2,
            learning_rate: 1e-2,
            patch_size: 16,
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = tiny_model(4);
            let log = train_patches(&mut m, &data, None, &cfg, &LossConfig::default(), |_| {}).unwrap();
            (m, log)
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert_eq!(la.len(), 2);
        assert_eq!(la[1].step, 4);
    }

    #[test]
    fn loss_goes_down() {
        let data: Vec<_> = (0..8).map(|s| patch(s, 16)).collect();
        let mut m = tiny_model(5);
        let cfg = TrainConfig {
            epochs: 6,
            batch_size: 4,
            learning_rate: 0.05,
            patch_size: 16,
            augment: false,
            ..TrainConfig::default()
        };
        let log = train_patches(&mut m, &data, None, &cfg, &LossConfig::default(), |_| {}).unwrap();
        assert!(log[5].loss < log[0].loss, "{log:?}");
    }

    #[test]
    fn divergence_names_the_step() {
        let data = vec![patch(1, 16)];
        let mut m = tiny_model(6);
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 1,
            learning_rate: 1e30,
            patch_size: 16,
            augment: false,
            ..TrainConfig::default()
        };
        match train_patches(&mut m, &data, None, &cfg, &LossConfig::default(), |_| {}) {
            Err(Error::Numeric { op }) => assert!(op.contains("step"), "{op}"),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: -1.0, ..TrainConfig::default() }.validate().is_err());
        assert_eq!(TrainConfig::for_kind(ModelKind::Linear).learning_rate, 1e-2);
    }

    #[test]
    fn csv_log_layout() {
        let log = vec![EpochLog { epoch: 0, step: 3, loss: 0.5, val_water_iou: Some(0.25), val_water_recall: None }];
        assert_eq!(
            log_csv(&log),
            "epoch,step,loss,val_water_iou,val_water_recall\n0,3,0.50000000,0.250000,\n"
        );
    }
}
