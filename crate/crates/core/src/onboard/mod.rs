//! Deployment side: whole-scene inference by overlapping patches, 2-bit map
//! packing, downlink accounting and the throughput benchmark.

mod downlink;
mod pack;

use std::time::{Duration, Instant};

pub use downlink::{reduction_factor, DownlinkSpec, CLAIMED_REDUCTION_FACTOR};
pub use pack::{pack_mask, packed_len, unpack_mask};

use crate::error::{Error, Result};
use crate::eval::Segmenter;
use crate::nnet::{argmax_mask, batch_tensor, image_tensor, Model, CLASS_COUNT};
use crate::raster::{BandId, ClassMask, MultiBandImage, PatchGrid, ScoreAccumulator};
use crate::rng::Rng;

pub const DEFAULT_PATCH_SIZE: usize = 64;
pub const DEFAULT_OVERLAP: usize = 8;

/// Patches inferred per forward call; bounds activation memory.
const PATCH_BATCH: usize = 32;

/// How a scene is cut for inference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SceneLayout {
    /// The scene fits in one patch and is run whole.
    Whole,
    Grid(PatchGrid),
}

pub fn scene_layout(height: usize, width: usize, patch_size: usize, overlap: usize) -> Result<SceneLayout> {
    if patch_size == 0 {
        return Err(Error::Argument("patch size must be > 0".into()));
    }
    if height <= patch_size && width <= patch_size {
        return Ok(SceneLayout::Whole);
    }
    let patch = patch_size.min(height).min(width);
    if overlap >= patch {
        return Err(Error::Argument(format!(
            "overlap {overlap} must be smaller than the patch size {patch}"
        )));
    }
    Ok(SceneLayout::Grid(PatchGrid::new(height, width, patch, patch - overlap)?))
}

/// Multiply-add count of one `scene_probabilities` call.
pub fn scene_flops(model: &Model, height: usize, width: usize, patch_size: usize, overlap: usize) -> Result<u64> {
    Ok(match scene_layout(height, width, patch_size, overlap)? {
        SceneLayout::Whole => model.flop_count(height, width),
        SceneLayout::Grid(g) => model.flop_count(g.patch_size, g.patch_size) * g.len() as u64,
    })
}

/// Softmax probabilities (3×H×W, channel-major) averaged over overlapping
/// patches. Patches are merged in row-major order, so the result does not
/// depend on the thread count.
pub fn scene_probabilities(
    model: &Model,
    image: &MultiBandImage,
    patch_size: usize,
    overlap: usize,
) -> Result<Vec<f32>> {
    if image.band_count() != model.input_bands() {
        return Err(Error::Argument(format!(
            "model expects {} bands, image has {}",
            model.input_bands(),
            image.band_count()
        )));
    }
    let (h, w) = (image.height(), image.width());
    let grid = match scene_layout(h, w, patch_size, overlap)? {
        SceneLayout::Whole => return Ok(model.probabilities(&image_tensor(image)?)?.into_data()),
        SceneLayout::Grid(g) => g,
    };
    let p = grid.patch_size;
    let block = CLASS_COUNT * p * p;
    let mut acc = ScoreAccumulator::new(CLASS_COUNT, h, w);
    for chunk in grid.offsets().chunks(PATCH_BATCH) {
        let patches = chunk
            .iter()
            .map(|&(r, c)| image.crop(r, c, p, p))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&MultiBandImage> = patches.iter().collect();
        let probs = model.probabilities(&batch_tensor(&refs)?)?;
        for (scores, &off) in probs.data().chunks(block).zip(chunk) {
            acc.add(scores, p, off)?;
        }
    }
    acc.finish()
}

/// Tile, infer, stitch, argmax.
pub fn segment_scene(model: &Model, image: &MultiBandImage, patch_size: usize, overlap: usize) -> Result<ClassMask> {
    let probs = scene_probabilities(model, image, patch_size, overlap)?;
    argmax_mask(&probs, image.width(), image.height())
}

/// A model plus its scene-inference settings.
#[derive(Debug, Clone)]
pub struct ModelSegmenter {
    pub model: Model,
    pub patch_size: usize,
    pub overlap: usize,
}

impl ModelSegmenter {
    pub fn new(model: Model) -> Self {
        ModelSegmenter {
            model,
            patch_size: DEFAULT_PATCH_SIZE,
            overlap: DEFAULT_OVERLAP,
        }
    }
}

impl Segmenter for ModelSegmenter {
    fn name(&self) -> String {
        format!("{:?}", self.model.kind()).to_lowercase()
    }

    fn segment(&self, image: &MultiBandImage) -> Result<ClassMask> {
        segment_scene(&self.model, image, self.patch_size, self.overlap)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub pixels: u64,
    /// Median over repetitions.
    pub wall: Duration,
    pub px_per_s: f64,
    pub flops: u64,
    pub patches: usize,
    pub peak_memory_bytes: u64,
}

impl BenchResult {
    pub const CSV_HEADER: &'static str = "pixels,wall_ms,px_per_s,flops";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.3},{:.1},{}",
            self.pixels,
            self.wall.as_secs_f64() * 1e3,
            self.px_per_s,
            self.flops
        )
    }

    pub fn flops_per_s(&self) -> f64 {
        self.flops as f64 / self.wall.as_secs_f64()
    }
}

/// Uniform random reflectances in [0, 0.5).
pub fn random_scene(width: usize, height: usize, bands: usize, seed: u64) -> Result<MultiBandImage> {
    let mut rng = Rng::new(seed);
    let data = (0..width * height * bands).map(|_| (rng.uniform() * 0.5) as f32).collect();
    MultiBandImage::new(width, height, BandId::canonical(bands), data)
}

/// Rough upper bound on resident bytes during `scene_probabilities`.
fn memory_estimate(model: &Model, height: usize, width: usize, layout: &SceneLayout) -> u64 {
    let px = (height * width) as u64;
    let bands = model.input_bands() as u64;
    let widest = model
        .convs()
        .map(|c| c.out_channels().max(c.in_channels()))
        .max()
        .unwrap_or(1) as u64;
    let widest_cols = model
        .convs()
        .map(|c| c.in_channels() * c.kernel() * c.kernel())
        .max()
        .unwrap_or(1) as u64;
    let scene = 4 * px * bands;
    let accumulator = px * (8 * CLASS_COUNT as u64 + 4) + 4 * CLASS_COUNT as u64 * px;
    let (batch, patch_px) = match layout {
        SceneLayout::Whole => (1, px),
        SceneLayout::Grid(g) => (g.len().min(PATCH_BATCH) as u64, (g.patch_size * g.patch_size) as u64),
    };
    let activations = 2 * 4 * batch * widest * patch_px;
    let cols = 4 * rayon::current_num_threads() as u64 * widest_cols * patch_px;
    scene + accumulator + activations + cols
}

/// Times `segment_scene` on a seeded random scene, excluding scene synthesis.
pub fn benchmark(
    model: &Model,
    width: usize,
    height: usize,
    bands: usize,
    repetitions: usize,
    seed: u64,
) -> Result<BenchResult> {
    if repetitions == 0 {
        return Err(Error::Argument("need at least one repetition".into()));
    }
    let layout = scene_layout(height, width, DEFAULT_PATCH_SIZE, DEFAULT_OVERLAP)?;
    let scene = random_scene(width, height, bands, seed)?;
    let mut times = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        let mask = segment_scene(model, &scene, DEFAULT_PATCH_SIZE, DEFAULT_OVERLAP)?;
        times.push(start.elapsed());
        drop(mask);
    }
    times.sort();
    let wall = times[(times.len() - 1) / 2];
    let pixels = (width * height) as u64;
    Ok(BenchResult {
        pixels,
        wall,
        px_per_s: pixels as f64 / wall.as_secs_f64().max(f64::MIN_POSITIVE),
        flops: scene_flops(model, height, width, DEFAULT_PATCH_SIZE, DEFAULT_OVERLAP)?,
        patches: match &layout {
            SceneLayout::Whole => 1,
            SceneLayout::Grid(g) => g.len(),
        },
        peak_memory_bytes: memory_estimate(model, height, width, &layout),
    })
}
