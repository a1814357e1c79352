use super::{Class, ClassMask, MultiBandImage};
use crate::error::{Error, Result};

/// Block-averages reflectances and majority-votes labels over
/// `factor`×`factor` blocks (10 m -> 80 m for `factor = 8`).
///
/// Label rule: a block with more than half INVALID pixels is INVALID;
/// otherwise the most frequent of LAND/WATER/CLOUD wins, ties resolved
/// WATER > CLOUD > LAND.
pub fn degrade(
    image: &MultiBandImage,
    mask: &ClassMask,
    factor: usize,
) -> Result<(MultiBandImage, ClassMask)> {
    if factor == 0 {
        return Err(Error::Argument("degradation factor must be >= 1".into()));
    }
    mask.check_same_dims(image.width(), image.height())?;
    let (w, h) = (image.width(), image.height());
    if w % factor != 0 || h % factor != 0 {
        return Err(Error::Argument(format!(
            "{h}x{w} image is not divisible by factor {factor}; crop first"
        )));
    }
    let (ow, oh) = (w / factor, h / factor);
    let block = (factor * factor) as f64;

    let mut data = Vec::with_capacity(ow * oh * image.band_count());
    for b in 0..image.band_count() {
        let band = image.band(b);
        for orow in 0..oh {
            for ocol in 0..ow {
                let mut sum = 0.0f64;
                for r in orow * factor..(orow + 1) * factor {
                    let start = r * w + ocol * factor;
                    sum += band[start..start + factor].iter().map(|&v| v as f64).sum::<f64>();
                }
                data.push((sum / block) as f32);
            }
        }
    }

    let mut labels = Vec::with_capacity(ow * oh);
    for orow in 0..oh {
        for ocol in 0..ow {
            let mut counts = [0usize; 4];
            for r in orow * factor..(orow + 1) * factor {
                for c in ocol * factor..(ocol + 1) * factor {
                    counts[mask.get(r, c) as usize] += 1;
                }
            }
            labels.push(block_label(counts, factor * factor));
        }
    }

    Ok((
        MultiBandImage::new(ow, oh, image.bands().to_vec(), data)?,
        ClassMask::new(ow, oh, labels)?,
    ))
}

fn block_label(counts: [usize; 4], total: usize) -> Class {
    if 2 * counts[Class::Invalid as usize] > total {
        return Class::Invalid;
    }
    // Later entries win ties because of `>=`.
    let mut best = Class::Land;
    for c in [Class::Cloud, Class::Water] {
        if counts[c as usize] >= counts[best as usize] {
            best = c;
        }
    }
    if counts[best as usize] == 0 {
        Class::Invalid
    } else {
        best
    }
}
