use crate::error::{Error, Result};
use crate::raster::{ClassMask, MultiBandImage};
use crate::rng::Rng;

/// Random augmentation ranges. Every range contains the identity, and an
/// operation whose drawn parameter is the identity is skipped, so
/// [`AugmentationParams::identity`] returns the input bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationParams {
    pub flip_horizontal: f64,
    pub flip_vertical: f64,
    /// Allowed quarter turns (0..=3), drawn uniformly.
    pub rotations: Vec<u8>,
    /// Multiplicative per-band factor range.
    pub jitter: (f64, f64),
    /// Signal-dependent noise: `x + N(0, sqrt(max(x, 0) * scale))`.
    pub poisson_scale: f64,
    /// Additive brightness offset range.
    pub brightness: (f64, f64),
    /// Contrast factor range, applied around each band's mean.
    pub contrast: (f64, f64),
}

impl Default for AugmentationParams {
    fn default() -> Self {
        AugmentationParams {
            flip_horizontal: 0.5,
            flip_vertical: 0.5,
            rotations: vec![0, 1, 2, 3],
            jitter: (0.95, 1.05),
            poisson_scale: 1e-4,
            brightness: (-0.02, 0.02),
            contrast: (0.9, 1.1),
        }
    }
}

impl AugmentationParams {
    pub fn identity() -> Self {
        AugmentationParams {
            flip_horizontal: 0.0,
            flip_vertical: 0.0,
            rotations: vec![0],
            jitter: (1.0, 1.0),
            poisson_scale: 0.0,
            brightness: (0.0, 0.0),
            contrast: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        let contains = |r: (f64, f64), v: f64| r.0 <= v && v <= r.1;
        if !prob(self.flip_horizontal) || !prob(self.flip_vertical) {
            return Err(Error::Argument("flip probabilities must be in [0, 1]".into()));
        }
        if self.rotations.is_empty() || self.rotations.iter().any(|&r| r > 3) {
            return Err(Error::Argument("rotations must be quarter turns in 0..=3".into()));
        }
        if !contains(self.jitter, 1.0) || !contains(self.contrast, 1.0) || !contains(self.brightness, 0.0) {
            return Err(Error::Argument("augmentation ranges must contain the identity".into()));
        }
        if self.poisson_scale.is_nan() || self.poisson_scale < 0.0 {
            return Err(Error::Argument("poisson scale must be >= 0".into()));
        }
        Ok(())
    }

    fn rotates(&self) -> bool {
        self.rotations.iter().any(|&r| r != 0)
    }
}

#[derive(Debug, Clone, Copy)]
enum Geometric {
    FlipHorizontal,
    FlipVertical,
    /// Quarter turn counter-clockwise; square planes only.
    Rotate,
}

fn transform_plane<T: Copy>(src: &[T], w: usize, h: usize, op: Geometric) -> Vec<T> {
    let mut out = Vec::with_capacity(src.len());
    for r in 0..h {
        for c in 0..w {
            let (sr, sc) = match op {
                Geometric::FlipHorizontal => (r, w - 1 - c),
                Geometric::FlipVertical => (h - 1 - r, c),
                Geometric::Rotate => (c, w - 1 - r),
            };
            out.push(src[sr * w + sc]);
        }
    }
    out
}

fn apply_geometric(
    data: &mut Vec<f32>,
    labels: &mut Vec<crate::raster::Class>,
    bands: usize,
    w: usize,
    h: usize,
    op: Geometric,
) {
    let n = w * h;
    let mut next = Vec::with_capacity(data.len());
    for b in 0..bands {
        next.extend(transform_plane(&data[b * n..(b + 1) * n], w, h, op));
    }
    *data = next;
    *labels = transform_plane(labels, w, h, op);
}

/// Applies random flips/rotations to image and mask together, then
/// photometric perturbations (jitter, brightness, contrast, signal-dependent
/// noise) to the image only. Reflectances are clamped to be non-negative.
pub fn augment(
    image: &MultiBandImage,
    mask: &ClassMask,
    params: &AugmentationParams,
    rng: &mut Rng,
) -> Result<(MultiBandImage, ClassMask)> {
    mask.check_same_dims(image.width(), image.height())?;
    let (w, h) = (image.width(), image.height());
    if params.rotates() && w != h {
        return Err(Error::Argument(format!(
            "rotations need a square patch, got {h}x{w}"
        )));
    }
    let bands = image.band_count();
    let n = w * h;
    let mut data = image.data().to_vec();
    let mut labels = mask.labels().to_vec();

    if rng.bernoulli(params.flip_horizontal) {
        apply_geometric(&mut data, &mut labels, bands, w, h, Geometric::FlipHorizontal);
    }
    if rng.bernoulli(params.flip_vertical) {
        apply_geometric(&mut data, &mut labels, bands, w, h, Geometric::FlipVertical);
    }
    let turns = if params.rotations.len() > 1 {
        params.rotations[rng.below(params.rotations.len())]
    } else {
        params.rotations[0]
    };
    for _ in 0..turns {
        apply_geometric(&mut data, &mut labels, bands, w, h, Geometric::Rotate);
    }

    let mut touched = false;
    if params.jitter != (1.0, 1.0) {
        for b in 0..bands {
            let f = rng.uniform_range(params.jitter.0, params.jitter.1) as f32;
            data[b * n..(b + 1) * n].iter_mut().for_each(|v| *v *= f);
        }
        touched = true;
    }
    if params.brightness != (0.0, 0.0) {
        let delta = rng.uniform_range(params.brightness.0, params.brightness.1) as f32;
        data.iter_mut().for_each(|v| *v += delta);
        touched = true;
    }
    if params.contrast != (1.0, 1.0) {
        let gamma = rng.uniform_range(params.contrast.0, params.contrast.1) as f32;
        for b in 0..bands {
            let plane = &mut data[b * n..(b + 1) * n];
            let mean = (plane.iter().map(|&v| v as f64).sum::<f64>() / n as f64) as f32;
            plane.iter_mut().for_each(|v| *v = (*v - mean) * gamma + mean);
        }
        touched = true;
    }
    if params.poisson_scale > 0.0 {
        for v in data.iter_mut() {
            let sd = ((*v).max(0.0) as f64 * params.poisson_scale).sqrt();
            *v += (rng.normal() * sd) as f32;
        }
        touched = true;
    }
    if touched {
        data.iter_mut().for_each(|v| *v = v.max(0.0));
    }

    Ok((
        MultiBandImage::new(w, h, image.bands().to_vec(), data)?,
        ClassMask::new(w, h, labels)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{BandId, Class};

    fn sample(w: usize, h: usize, seed: u64) -> (MultiBandImage, ClassMask) {
        let mut rng = Rng::new(seed);
        let data = (0..w * h * 3).map(|_| rng.uniform() as f32).collect();
        let codes: Vec<u8> = (0..w * h).map(|_| rng.below(4) as u8).collect();
        (
            MultiBandImage::new(w, h, BandId::canonical(3), data).unwrap(),
            ClassMask::from_codes(w, h, &codes).unwrap(),
        )
    }

    #[test]
    fn identity_params_return_input() {
        let (img, mask) = sample(6, 6, 1);
        let (a, m) = augment(&img, &mask, &AugmentationParams::identity(), &mut Rng::new(3)).unwrap();
        assert_eq!(a, img);
        assert_eq!(m, mask);
    }

    #[test]
    fn double_flip_is_identity() {
        let (img, mask) = sample(5, 4, 2);
        let once = transform_plane(img.data(), 5, 4 * 3, Geometric::FlipHorizontal);
        let twice = transform_plane(&once, 5, 4 * 3, Geometric::FlipHorizontal);
        assert_eq!(twice, img.data());
        let params = AugmentationParams {
            flip_horizontal: 1.0,
            ..AugmentationParams::identity()
        };
        let (a, m) = augment(&img, &mask, &params, &mut Rng::new(0)).unwrap();
        let (b, m2) = augment(&a, &m, &params, &mut Rng::new(0)).unwrap();
        assert_eq!(b, img);
        assert_eq!(m2, mask);
        assert_ne!(a, img);
    }

    #[test]
    fn four_rotations_are_identity() {
        let (img, mask) = sample(4, 4, 5);
        let params = AugmentationParams {
            rotations: vec![1],
            ..AugmentationParams::identity()
        };
        let mut cur = (img.clone(), mask.clone());
        for _ in 0..4 {
            cur = augment(&cur.0, &cur.1, &params, &mut Rng::new(0)).unwrap();
        }
        assert_eq!(cur.0, img);
        assert_eq!(cur.1, mask);
    }

    #[test]
    fn geometric_ops_move_image_and_mask_together() {
        let (img, mask) = sample(8, 8, 6);
        let params = AugmentationParams {
            jitter: (1.0, 1.0),
            poisson_scale: 0.0,
            brightness: (0.0, 0.0),
            contrast: (1.0, 1.0),
            ..AugmentationParams::default()
        };
        let mut rng = Rng::new(10);
        for _ in 0..20 {
            let (a, m) = augment(&img, &mask, &params, &mut rng).unwrap();
            // locate every augmented pixel in the source by its band-0 value
            for r in 0..8 {
                for c in 0..8 {
                    let v = a.get(0, r, c);
                    let src = img.band(0).iter().position(|&x| x == v).unwrap();
                    assert_eq!(m.get(r, c), mask.labels()[src]);
                    assert_eq!(a.get(2, r, c), img.band(2)[src]);
                }
            }
        }
    }

    #[test]
    fn photometric_ops_keep_labels_and_are_reproducible() {
        let (img, mask) = sample(8, 8, 7);
        let params = AugmentationParams {
            flip_horizontal: 0.0,
            flip_vertical: 0.0,
            rotations: vec![0],
            jitter: (0.5, 1.5),
            poisson_scale: 0.01,
            brightness: (-0.2, 0.2),
            contrast: (0.5, 1.5),
        };
        let (a, m) = augment(&img, &mask, &params, &mut Rng::new(42)).unwrap();
        let (b, _) = augment(&img, &mask, &params, &mut Rng::new(42)).unwrap();
        assert_eq!(a, b);
        assert_eq!(m, mask);
        assert_eq!(m.class_counts()[Class::Water as usize], mask.class_counts()[Class::Water as usize]);
        assert_ne!(a, img);
        assert!(a.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn rotation_of_non_square_patch_rejected() {
        let (img, mask) = sample(6, 4, 8);
        let err = augment(&img, &mask, &AugmentationParams::default(), &mut Rng::new(0));
        assert!(matches!(err, Err(Error::Argument(_))));
        let flips_only = AugmentationParams {
            rotations: vec![0],
            ..AugmentationParams::default()
        };
        assert!(augment(&img, &mask, &flips_only, &mut Rng::new(0)).is_ok());
    }

    #[test]
    fn validation_requires_identity_in_ranges() {
        assert!(AugmentationParams::default().validate().is_ok());
        let bad = AugmentationParams {
            jitter: (1.01, 1.2),
            ..AugmentationParams::default()
        };
        assert!(bad.validate().is_err());
    }
}
