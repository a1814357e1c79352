//! WFB (image) and WFL (mask) codecs.
//!
//! WFB: `"WFB1" | u32 width | u32 height | u32 band_count | u32 dtype`
//! followed by band-sequential row-major little-endian f32 samples.
//! WFL: `"WFL1" | u32 width | u32 height` followed by the 2-bit packed labels
//! (see [`crate::onboard::pack_mask`]).

use std::fs;
use std::path::Path;

use super::{BandId, ClassMask, MultiBandImage};
use crate::error::{Error, Result};
use crate::onboard::{pack_mask, packed_len, unpack_mask};

pub const IMAGE_MAGIC: &[u8; 4] = b"WFB1";
pub const MASK_MAGIC: &[u8; 4] = b"WFL1";
pub const IMAGE_HEADER_LEN: usize = 20;
pub const MASK_HEADER_LEN: usize = 12;

const DTYPE_F32: u32 = 0;

fn read_u32(bytes: &[u8], at: usize, field: &'static str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(field, "header truncated"))
}

fn check_magic(bytes: &[u8], magic: &[u8; 4]) -> Result<()> {
    match bytes.get(..4) {
        Some(m) if m == magic => Ok(()),
        Some(m) => Err(Error::format(
            "magic",
            format!("expected {:?}, found {:?}", String::from_utf8_lossy(magic), String::from_utf8_lossy(m)),
        )),
        None => Err(Error::format("magic", "file shorter than magic")),
    }
}

pub fn encode_image(image: &MultiBandImage) -> Result<Vec<u8>> {
    if image.bands() != BandId::canonical(image.band_count()).as_slice() {
        return Err(Error::format(
            "bands",
            "WFB stores only the band count; bands must be in canonical order",
        ));
    }
    let mut out = Vec::with_capacity(IMAGE_HEADER_LEN + image.data().len() * 4);
    out.extend_from_slice(IMAGE_MAGIC);
    for v in [image.width(), image.height(), image.band_count()] {
        let v = u32::try_from(v).map_err(|_| Error::format("header", "dimension exceeds u32"))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&DTYPE_F32.to_le_bytes());
    for v in image.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_image(bytes: &[u8]) -> Result<MultiBandImage> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let width = read_u32(bytes, 4, "width")? as usize;
    let height = read_u32(bytes, 8, "height")? as usize;
    let band_count = read_u32(bytes, 12, "band_count")? as usize;
    let dtype = read_u32(bytes, 16, "dtype")?;
    if dtype != DTYPE_F32 {
        return Err(Error::format("dtype", format!("unsupported dtype {dtype}")));
    }
    if band_count == 0 {
        return Err(Error::format("band_count", "zero bands"));
    }
    let samples = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(band_count))
        .ok_or_else(|| Error::format("band_count", "width*height*band_count overflows"))?;
    let payload_len = samples
        .checked_mul(4)
        .ok_or_else(|| Error::format("band_count", "payload size overflows"))?;
    let payload = &bytes[IMAGE_HEADER_LEN..];
    if payload.len() < payload_len {
        return Err(Error::format(
            "payload",
            format!(
                "truncated: header declares {band_count} bands of {width}x{height} ({payload_len} bytes), found {} bytes",
                payload.len()
            ),
        ));
    }
    if payload.len() > payload_len {
        return Err(Error::format(
            "payload",
            format!("{} trailing bytes after samples", payload.len() - payload_len),
        ));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::format("payload", format!("non-finite sample at index {i}")));
    }
    MultiBandImage::new(width, height, BandId::canonical(band_count), data)
}

pub fn encode_mask(mask: &ClassMask) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(MASK_HEADER_LEN + packed_len(mask.len()));
    out.extend_from_slice(MASK_MAGIC);
    for v in [mask.width(), mask.height()] {
        let v = u32::try_from(v).map_err(|_| Error::format("header", "dimension exceeds u32"))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&pack_mask(mask));
    Ok(out)
}

pub fn decode_mask(bytes: &[u8]) -> Result<ClassMask> {
    check_magic(bytes, MASK_MAGIC)?;
    let width = read_u32(bytes, 4, "width")? as usize;
    let height = read_u32(bytes, 8, "height")? as usize;
    let payload = &bytes[MASK_HEADER_LEN..];
    let pixels = width
        .checked_mul(height)
        .ok_or_else(|| Error::format("height", "width*height overflows"))?;
    if payload.len() > packed_len(pixels) {
        return Err(Error::format(
            "payload",
            format!("{} trailing bytes after packed labels", payload.len() - packed_len(pixels)),
        ));
    }
    unpack_mask(payload, width, height)
}

pub fn write_image(image: &MultiBandImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_image(image)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_image(path: impl AsRef<Path>) -> Result<MultiBandImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

pub fn write_mask(mask: &ClassMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_mask(mask)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<ClassMask> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mask(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Class;

    fn field_of(err: Error) -> &'static str {
        match err {
            Error::Format { field, .. } => field,
            other => panic!("expected format error, got {other}"),
        }
    }

    #[test]
    fn small_image_roundtrip_is_bit_exact() {
        let img = MultiBandImage::new(2, 2, BandId::canonical(1), vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let bytes = encode_image(&img).unwrap();
        assert_eq!(bytes.len(), IMAGE_HEADER_LEN + 16);
        let back = decode_image(&bytes).unwrap();
        assert_eq!(back.width(), 2);
        let bits: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
        let want: Vec<u32> = [0.1f32, 0.2, 0.3, 0.4].iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, want);
    }

    #[test]
    fn full_patch_file_size() {
        let img = MultiBandImage::zeros(256, 256, BandId::canonical(13)).unwrap();
        let bytes = encode_image(&img).unwrap();
        assert_eq!(bytes.len(), 3_407_892);
        assert_eq!(decode_image(&bytes).unwrap(), img);
    }

    #[test]
    fn missing_band_is_truncation() {
        let img = MultiBandImage::zeros(3, 2, BandId::canonical(3)).unwrap();
        let mut bytes = encode_image(&img).unwrap();
        bytes.truncate(IMAGE_HEADER_LEN + 2 * 6 * 4);
        assert_eq!(field_of(decode_image(&bytes).unwrap_err()), "payload");
    }

    #[test]
    fn header_errors_name_their_field() {
        assert_eq!(field_of(decode_image(b"WFB2").unwrap_err()), "magic");
        assert_eq!(field_of(decode_image(b"WF").unwrap_err()), "magic");
        assert_eq!(field_of(decode_image(b"WFB1\x01\x00").unwrap_err()), "width");

        let mut hdr = Vec::from(&IMAGE_MAGIC[..]);
        for v in [u32::MAX, u32::MAX, u32::MAX, 0] {
            hdr.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(field_of(decode_image(&hdr).unwrap_err()), "band_count");

        let mut hdr = Vec::from(&IMAGE_MAGIC[..]);
        for v in [1u32, 1, 1, 7] {
            hdr.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(field_of(decode_image(&hdr).unwrap_err()), "dtype");
    }

    #[test]
    fn non_canonical_bands_rejected_on_write() {
        let img = MultiBandImage::new(1, 1, vec![BandId::B08], vec![0.5]).unwrap();
        assert_eq!(field_of(encode_image(&img).unwrap_err()), "bands");
    }

    #[test]
    fn mask_payload_examples() {
        let m = ClassMask::from_codes(2, 2, &[1, 2, 3, 0]).unwrap();
        let bytes = encode_mask(&m).unwrap();
        assert_eq!(&bytes[MASK_HEADER_LEN..], &[0x39]);
        assert_eq!(decode_mask(&bytes).unwrap(), m);

        let m = ClassMask::filled(4, 1, Class::Invalid);
        assert_eq!(&encode_mask(&m).unwrap()[MASK_HEADER_LEN..], &[0x00]);

        let m = ClassMask::filled(5, 1, Class::Water);
        assert_eq!(&encode_mask(&m).unwrap()[MASK_HEADER_LEN..], &[0xAA, 0x02]);
    }

    #[test]
    fn mask_nonzero_padding_rejected() {
        let m = ClassMask::filled(5, 1, Class::Water);
        let mut bytes = encode_mask(&m).unwrap();
        *bytes.last_mut().unwrap() |= 0x40;
        assert_eq!(field_of(decode_mask(&bytes).unwrap_err()), "padding");
        bytes.pop();
        assert_eq!(field_of(decode_mask(&bytes).unwrap_err()), "payload");
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let img = MultiBandImage::new(3, 1, BandId::canonical(2), vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let mask = ClassMask::from_codes(3, 1, &[3, 2, 1]).unwrap();
        write_image(&img, dir.path().join("a.wfb")).unwrap();
        write_mask(&mask, dir.path().join("a.wfl")).unwrap();
        assert_eq!(read_image(dir.path().join("a.wfb")).unwrap(), img);
        assert_eq!(read_mask(dir.path().join("a.wfl")).unwrap(), mask);
        assert!(matches!(read_image(dir.path().join("missing.wfb")), Err(Error::Io { .. })));
    }
}
