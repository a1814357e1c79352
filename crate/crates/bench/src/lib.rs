//! Shared fixtures for the criterion benchmarks.

use floodseg::nnet::{batch_tensor, Model, Tensor};
use floodseg::onboard::random_scene;
use floodseg::{MultiBandImage, Result};

/// He-initialised default SCNN for `bands` inputs.
pub fn scnn(bands: usize, seed: u64) -> Result<Model> {
    let mut model = Model::scnn(bands)?;
    model.init_he_uniform(seed);
    Ok(model)
}

/// A batch of `n` random square patches as one NCHW tensor.
pub fn patch_batch(n: usize, size: usize, bands: usize, seed: u64) -> Result<Tensor<f32>> {
    let patches: Vec<MultiBandImage> = (0..n as u64)
        .map(|i| random_scene(size, size, bands, seed + i))
        .collect::<Result<_>>()?;
    let refs: Vec<&MultiBandImage> = patches.iter().collect();
    batch_tensor(&refs)
}
