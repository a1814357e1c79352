use super::{ClassMask, MultiBandImage};
use crate::error::{Error, Result};

/// Patch layout over an image. Offsets step by `stride` and the last patch
/// on each axis is shifted inward so it ends exactly at the border; there is
/// never any padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub stride: usize,
    pub row_offsets: Vec<usize>,
    pub col_offsets: Vec<usize>,
}

fn axis_offsets(dim: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut o = 0;
    loop {
        if o + patch >= dim {
            out.push(dim - patch);
            return out;
        }
        out.push(o);
        o += stride;
    }
}

impl PatchGrid {
    pub fn new(height: usize, width: usize, patch_size: usize, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Argument("stride must be >= 1".into()));
        }
        if patch_size == 0 || patch_size > height || patch_size > width {
            return Err(Error::Argument(format!(
                "patch size {patch_size} does not fit a {height}x{width} image"
            )));
        }
        Ok(PatchGrid {
            patch_size,
            stride,
            row_offsets: axis_offsets(height, patch_size, stride),
            col_offsets: axis_offsets(width, patch_size, stride),
        })
    }

    /// Row-major list of (row, col) patch origins.
    pub fn offsets(&self) -> Vec<(usize, usize)> {
        self.row_offsets
            .iter()
            .flat_map(|&r| self.col_offsets.iter().map(move |&c| (r, c)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.row_offsets.len() * self.col_offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct Patch {
    pub image: MultiBandImage,
    pub mask: Option<ClassMask>,
    pub offset: (usize, usize),
}

pub fn tile(
    image: &MultiBandImage,
    mask: Option<&ClassMask>,
    patch_size: usize,
    stride: usize,
) -> Result<Vec<Patch>> {
    if let Some(m) = mask {
        m.check_same_dims(image.width(), image.height())?;
    }
    let grid = PatchGrid::new(image.height(), image.width(), patch_size, stride)?;
    grid.offsets()
        .into_iter()
        .map(|(r, c)| {
            Ok(Patch {
                image: image.crop(r, c, patch_size, patch_size)?,
                mask: mask
                    .map(|m| m.crop(r, c, patch_size, patch_size))
                    .transpose()?,
                offset: (r, c),
            })
        })
        .collect()
}

/// Running per-pixel mean of channel-major score patches.
///
/// Patches are added one at a time so very large scenes never hold every
/// patch output in memory. Sums are kept in f64 and the merge order is the
/// order of `add` calls, which makes the result independent of how the patch
/// scores were computed.
#[derive(Debug, Clone)]
pub struct ScoreAccumulator {
    channels: usize,
    height: usize,
    width: usize,
    sums: Vec<f64>,
    counts: Vec<u32>,
}

impl ScoreAccumulator {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        ScoreAccumulator {
            channels,
            height,
            width,
            sums: vec![0.0; channels * height * width],
            counts: vec![0; height * width],
        }
    }

    /// Adds a `channels`×`patch`×`patch` score block at `offset`.
    pub fn add(&mut self, scores: &[f32], patch: usize, offset: (usize, usize)) -> Result<()> {
        let (r0, c0) = offset;
        if scores.len() != self.channels * patch * patch {
            return Err(Error::Shape {
                expected: vec![self.channels, patch, patch],
                actual: vec![scores.len()],
            });
        }
        if r0 + patch > self.height || c0 + patch > self.width {
            return Err(Error::Argument(format!(
                "patch at ({r0},{c0}) of size {patch} exceeds {}x{}",
                self.height, self.width
            )));
        }
        let plane = self.height * self.width;
        for ch in 0..self.channels {
            for r in 0..patch {
                let src = &scores[(ch * patch + r) * patch..(ch * patch + r + 1) * patch];
                let base = ch * plane + (r0 + r) * self.width + c0;
                for (dst, &s) in self.sums[base..base + patch].iter_mut().zip(src) {
                    *dst += s as f64;
                }
            }
        }
        for r in 0..patch {
            let base = (r0 + r) * self.width + c0;
            for c in &mut self.counts[base..base + patch] {
                *c += 1;
            }
        }
        Ok(())
    }

    /// Mean scores, channel-major. Fails on the first uncovered pixel.
    pub fn finish(self) -> Result<Vec<f32>> {
        if let Some(i) = self.counts.iter().position(|&c| c == 0) {
            return Err(Error::Coverage {
                row: i / self.width,
                col: i % self.width,
            });
        }
        let plane = self.height * self.width;
        Ok(self
            .sums
            .iter()
            .enumerate()
            .map(|(i, &s)| (s / self.counts[i % plane] as f64) as f32)
            .collect())
    }
}

/// Averages overlapping patch predictions into a full-scene score map
/// (`channels`×`height`×`width`).
pub fn stitch(
    patch_scores: &[Vec<f32>],
    offsets: &[(usize, usize)],
    patch_size: usize,
    channels: usize,
    height: usize,
    width: usize,
) -> Result<Vec<f32>> {
    if patch_scores.len() != offsets.len() {
        return Err(Error::Argument(format!(
            "{} patch predictions but {} offsets",
            patch_scores.len(),
            offsets.len()
        )));
    }
    let mut acc = ScoreAccumulator::new(channels, height, width);
    for (scores, &off) in patch_scores.iter().zip(offsets) {
        acc.add(scores, patch_size, off)?;
    }
    acc.finish()
}
