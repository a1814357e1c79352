use num_rational::Ratio;

use crate::error::{Error, Result};

/// Ratio claimed for the 49-band, 16-bit instrument with a 2-bit map.
pub const CLAIMED_REDUCTION_FACTOR: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DownlinkSpec {
    pub source_bands: u64,
    pub bits_per_sample: u64,
    pub map_bits: u64,
}

impl Default for DownlinkSpec {
    fn default() -> Self {
        DownlinkSpec {
            source_bands: 49,
            bits_per_sample: 16,
            map_bits: 2,
        }
    }
}

impl DownlinkSpec {
    pub fn new(source_bands: u64, bits_per_sample: u64, map_bits: u64) -> Result<Self> {
        if source_bands == 0 || bits_per_sample == 0 {
            return Err(Error::Argument("band count and sample bits must be > 0".into()));
        }
        if ![1, 2, 4, 8].contains(&map_bits) {
            return Err(Error::Argument(format!("map bits must be 1, 2, 4 or 8, got {map_bits}")));
        }
        Ok(DownlinkSpec {
            source_bands,
            bits_per_sample,
            map_bits,
        })
    }

    pub fn raw_bits_per_pixel(&self) -> u64 {
        self.source_bands * self.bits_per_sample
    }
}

/// Raw-to-map data volume ratio, exact.
pub fn reduction_factor(spec: &DownlinkSpec) -> Ratio<u64> {
    Ratio::new(spec.raw_bits_per_pixel(), spec.map_bits)
}
