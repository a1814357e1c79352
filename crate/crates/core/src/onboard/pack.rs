use crate::error::{Error, Result};
use crate::raster::{Class, ClassMask};

/// Bytes needed for `pixels` 2-bit labels.
pub fn packed_len(pixels: usize) -> usize {
    pixels.div_ceil(4)
}

/// Packs labels four per byte: row-major pixel order, LSB-first 2-bit
/// fields, final byte zero-padded.
pub fn pack_mask(mask: &ClassMask) -> Vec<u8> {
    let mut out = vec![0u8; packed_len(mask.len())];
    for (i, &c) in mask.labels().iter().enumerate() {
        out[i / 4] |= c.code() << ((i % 4) * 2);
    }
    out
}

pub fn unpack_mask(bytes: &[u8], width: usize, height: usize) -> Result<ClassMask> {
    let pixels = width
        .checked_mul(height)
        .ok_or_else(|| Error::format("height", "width*height overflows"))?;
    let need = packed_len(pixels);
    if bytes.len() < need {
        return Err(Error::format(
            "payload",
            format!("truncated: {pixels} labels need {need} bytes, found {}", bytes.len()),
        ));
    }
    let used_bits = (pixels % 4) * 2;
    if used_bits != 0 && bytes[need - 1] >> used_bits != 0 {
        return Err(Error::format("padding", "nonzero bits after the last label"));
    }
    let labels = (0..pixels)
        .map(|i| {
            let code = (bytes[i / 4] >> ((i % 4) * 2)) & 0b11;
            Class::ALL[code as usize]
        })
        .collect();
    ClassMask::new(width, height, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bit(bytes: &[u8], k: usize) -> u8 {
        (bytes[k / 8] >> (k % 8)) & 1
    }

    #[test]
    fn fixed_vectors() {
        let m = ClassMask::from_codes(4, 1, &[1, 2, 3, 0]).unwrap();
        assert_eq!(pack_mask(&m), vec![0x39]);
        let m = ClassMask::from_codes(2, 2, &[2, 2, 2, 2]).unwrap();
        assert_eq!(pack_mask(&m), vec![0xAA]);
    }

    #[test]
    fn short_payload_rejected() {
        assert!(matches!(
            unpack_mask(&[0xAA], 5, 1),
            Err(Error::Format { field: "payload", .. })
        ));
    }

    #[test]
    fn padding_rule() {
        assert!(unpack_mask(&[0xAA, 0x02], 5, 1).is_ok());
        assert!(matches!(
            unpack_mask(&[0xAA, 0x06], 5, 1),
            Err(Error::Format { field: "padding", .. })
        ));
    }

    proptest! {
        #[test]
        fn pack_matches_per_bit_oracle(w in 1usize..=33, h in 1usize..=17, seed in any::<u64>()) {
            let mut rng = crate::rng::Rng::new(seed);
            let codes: Vec<u8> = (0..w * h).map(|_| rng.below(4) as u8).collect();
            let m = ClassMask::from_codes(w, h, &codes).unwrap();
            let packed = pack_mask(&m);
            prop_assert_eq!(packed.len(), (w * h * 2).div_ceil(8));
            for (i, &code) in codes.iter().enumerate() {
                let lo = bit(&packed, 2 * i);
                let hi = bit(&packed, 2 * i + 1);
                prop_assert_eq!(lo | (hi << 1), code);
            }
            for k in 2 * w * h..packed.len() * 8 {
                prop_assert_eq!(bit(&packed, k), 0);
            }
            prop_assert_eq!(unpack_mask(&packed, w, h).unwrap(), m);
        }
    }
}
