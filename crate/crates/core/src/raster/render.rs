use std::fs;
use std::path::Path;

use super::{Class, ClassMask};
use crate::error::{Error, Result};

/// RGB colour per class code.
pub const PALETTE: [[u8; 3]; 4] = [[0, 0, 0], [34, 139, 34], [0, 0, 255], [255, 255, 255]];

/// Binary PPM (P6) rendering of a mask.
pub fn encode_ppm(mask: &ClassMask) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", mask.width(), mask.height());
    let mut out = Vec::with_capacity(header.len() + mask.len() * 3);
    out.extend_from_slice(header.as_bytes());
    for &c in mask.labels() {
        out.extend_from_slice(&PALETTE[c as usize]);
    }
    out
}

pub fn render_mask(mask: &ClassMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(mask)).map_err(|e| Error::io(path, e))
}

impl Class {
    pub fn rgb(self) -> [u8; 3] {
        PALETTE[self as usize]
    }
}
