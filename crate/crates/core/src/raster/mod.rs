//! Multiband scenes, class masks and the raster operations shared by every
//! other module: file formats, tiling/stitching, degradation and rendering.

mod degrade;
mod io;
mod render;
mod tiling;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub use degrade::degrade;
pub use io::{
    decode_image, decode_mask, encode_image, encode_mask, read_image, read_mask, write_image,
    write_mask, IMAGE_HEADER_LEN, IMAGE_MAGIC, MASK_HEADER_LEN, MASK_MAGIC,
};
pub use render::{encode_ppm, render_mask, PALETTE};
pub use tiling::{stitch, tile, Patch, PatchGrid, ScoreAccumulator};

/// Spectral band identifier. The thirteen Sentinel-2 MSI bands in their
/// native order, plus generic numbered bands for synthetic or hyperspectral
/// inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BandId {
    B01,
    B02,
    B03,
    B04,
    B05,
    B06,
    B07,
    B08,
    B8A,
    B09,
    B10,
    B11,
    B12,
    Generic(u32),
}

impl BandId {
    pub const SENTINEL2: [BandId; 13] = [
        BandId::B01,
        BandId::B02,
        BandId::B03,
        BandId::B04,
        BandId::B05,
        BandId::B06,
        BandId::B07,
        BandId::B08,
        BandId::B8A,
        BandId::B09,
        BandId::B10,
        BandId::B11,
        BandId::B12,
    ];

    /// Canonical band list for a given band count: the Sentinel-2 set for 13
    /// bands, generic indices otherwise. This is also what the WFB reader
    /// assigns, since the file stores only the count.
    pub fn canonical(count: usize) -> Vec<BandId> {
        if count == Self::SENTINEL2.len() {
            Self::SENTINEL2.to_vec()
        } else {
            (0..count as u32).map(BandId::Generic).collect()
        }
    }
}

impl fmt::Display for BandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BandId::Generic(n) => write!(f, "G{n}"),
            other => write!(f, "{other:?}"),
        }
    }
}

impl FromStr for BandId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase();
        if let Some(b) = BandId::SENTINEL2.iter().find(|b| b.to_string() == up) {
            return Ok(*b);
        }
        // Accept "B2" / "B8" style shorthand as well as "G<n>".
        if let Some(rest) = up.strip_prefix('B') {
            if let Ok(n) = rest.parse::<u32>() {
                let idx = match n {
                    1..=8 => Some(n as usize - 1),
                    9..=12 => Some(n as usize),
                    _ => None,
                };
                if let Some(i) = idx {
                    return Ok(BandId::SENTINEL2[i]);
                }
            }
        }
        if let Some(rest) = up.strip_prefix('G') {
            if let Ok(n) = rest.parse::<u32>() {
                return Ok(BandId::Generic(n));
            }
        }
        Err(Error::Argument(format!("unknown band identifier {s:?}")))
    }
}

/// Per-pixel label. Codes are fixed and fit in two bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Class {
    Invalid = 0,
    Land = 1,
    Water = 2,
    Cloud = 3,
}

impl Class {
    pub const ALL: [Class; 4] = [Class::Invalid, Class::Land, Class::Water, Class::Cloud];
    /// Semantic classes a model scores, in score-channel order.
    pub const SEMANTIC: [Class; 3] = [Class::Land, Class::Water, Class::Cloud];

    pub fn from_code(code: u8) -> Option<Class> {
        Class::ALL.get(code as usize).copied()
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    /// Score-channel index for semantic classes; `None` for `Invalid`.
    pub fn channel(self) -> Option<usize> {
        match self {
            Class::Invalid => None,
            c => Some(c as usize - 1),
        }
    }

    pub fn from_channel(ch: usize) -> Class {
        Class::SEMANTIC[ch]
    }
}

/// H×W×C scene, band-sequential and row-major within each band.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiBandImage {
    width: usize,
    height: usize,
    bands: Vec<BandId>,
    data: Vec<f32>,
}

impl MultiBandImage {
    pub fn new(width: usize, height: usize, bands: Vec<BandId>, data: Vec<f32>) -> Result<Self> {
        if bands.is_empty() {
            return Err(Error::Argument("image needs at least one band".into()));
        }
        let unique: HashSet<_> = bands.iter().collect();
        if unique.len() != bands.len() {
            return Err(Error::Argument("duplicate band identifiers".into()));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|p| p.checked_mul(bands.len()))
            .ok_or_else(|| Error::Argument("image dimensions overflow".into()))?;
        if data.len() != expected {
            return Err(Error::Shape {
                expected: vec![bands.len(), height, width],
                actual: vec![data.len()],
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite reflectance at sample {i}")));
        }
        Ok(MultiBandImage {
            width,
            height,
            bands,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, bands: Vec<BandId>) -> Result<Self> {
        let n = width * height * bands.len();
        Self::new(width, height, bands, vec![0.0; n])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn band_count(&self) -> usize {
        self.bands.len()
    }

    pub fn bands(&self) -> &[BandId] {
        &self.bands
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn band_index(&self, id: BandId) -> Option<usize> {
        self.bands.iter().position(|&b| b == id)
    }

    pub fn band(&self, index: usize) -> &[f32] {
        let n = self.pixels();
        &self.data[index * n..(index + 1) * n]
    }

    pub fn band_by_id(&self, id: BandId) -> Result<&[f32]> {
        self.band_index(id)
            .map(|i| self.band(i))
            .ok_or_else(|| Error::Argument(format!("band {id} not present in image")))
    }

    pub fn get(&self, band: usize, row: usize, col: usize) -> f32 {
        self.data[(band * self.height + row) * self.width + col]
    }

    /// Copy of the `size_h`×`size_w` window whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, size_h: usize, size_w: usize) -> Result<Self> {
        if row + size_h > self.height || col + size_w > self.width {
            return Err(Error::Argument(format!(
                "crop {size_h}x{size_w} at ({row},{col}) exceeds {}x{} image",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(size_h * size_w * self.bands.len());
        for b in 0..self.bands.len() {
            let band = self.band(b);
            for r in row..row + size_h {
                let start = r * self.width + col;
                data.extend_from_slice(&band[start..start + size_w]);
            }
        }
        Ok(MultiBandImage {
            width: size_w,
            height: size_h,
            bands: self.bands.clone(),
            data,
        })
    }
}

/// Per-pixel class labels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMask {
    width: usize,
    height: usize,
    labels: Vec<Class>,
}

impl ClassMask {
    pub fn new(width: usize, height: usize, labels: Vec<Class>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::Shape {
                expected: vec![height, width],
                actual: vec![labels.len()],
            });
        }
        Ok(ClassMask {
            width,
            height,
            labels,
        })
    }

    pub fn filled(width: usize, height: usize, class: Class) -> Self {
        ClassMask {
            width,
            height,
            labels: vec![class; width * height],
        }
    }

    pub fn from_codes(width: usize, height: usize, codes: &[u8]) -> Result<Self> {
        let labels = codes
            .iter()
            .map(|&c| {
                Class::from_code(c).ok_or_else(|| Error::Argument(format!("class code {c} > 3")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(width, height, labels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[Class] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [Class] {
        &mut self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> Class {
        self.labels[row * self.width + col]
    }

    /// Pixel counts indexed by class code.
    pub fn class_counts(&self) -> [u64; 4] {
        let mut counts = [0u64; 4];
        for &c in &self.labels {
            counts[c as usize] += 1;
        }
        counts
    }

    pub fn crop(&self, row: usize, col: usize, size_h: usize, size_w: usize) -> Result<Self> {
        if row + size_h > self.height || col + size_w > self.width {
            return Err(Error::Argument(format!(
                "crop {size_h}x{size_w} at ({row},{col}) exceeds {}x{} mask",
                self.height, self.width
            )));
        }
        let mut labels = Vec::with_capacity(size_h * size_w);
        for r in row..row + size_h {
            let start = r * self.width + col;
            labels.extend_from_slice(&self.labels[start..start + size_w]);
        }
        Ok(ClassMask {
            width: size_w,
            height: size_h,
            labels,
        })
    }

    pub fn check_same_dims(&self, width: usize, height: usize) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(Error::Shape {
                expected: vec![height, width],
                actual: vec![self.height, self.width],
            });
        }
        Ok(())
    }
}
