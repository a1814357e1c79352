//! Normalised-difference water index with a fixed or per-image tuned threshold.

use crate::error::{Error, Result};
use crate::eval::{confusion, metrics, Segmenter};
use crate::raster::{BandId, Class, ClassMask, MultiBandImage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NdwiConfig {
    pub band_a: BandId,
    pub band_b: BandId,
    pub threshold: f64,
}

impl Default for NdwiConfig {
    /// Blue (B02) against NIR (B08), threshold 0. Set `band_a` to B03 for the
    /// classic green/NIR index.
    fn default() -> Self {
        NdwiConfig {
            band_a: BandId::B02,
            band_b: BandId::B08,
            threshold: 0.0,
        }
    }
}

impl NdwiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.band_a == self.band_b {
            return Err(Error::Argument(format!(
                "NDWI needs two distinct bands, got {} twice",
                self.band_a
            )));
        }
        if !(-1.0..=1.0).contains(&self.threshold) {
            return Err(Error::Argument(format!(
                "NDWI threshold must be in [-1, 1], got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// `(a - b) / (a + b)` per pixel, 0 where `a + b == 0`.
pub fn ndwi(image: &MultiBandImage, band_a: BandId, band_b: BandId) -> Result<Vec<f32>> {
    let missing = |id: BandId| Error::Argument(format!("band {id} not present in image"));
    let a = image.band_by_id(band_a).map_err(|_| missing(band_a))?;
    let b = image.band_by_id(band_b).map_err(|_| missing(band_b))?;
    Ok(a.iter()
        .zip(b)
        .map(|(&a, &b)| {
            let (a, b) = (a as f64, b as f64);
            let s = a + b;
            if s == 0.0 {
                0.0
            } else {
                ((a - b) / s).clamp(-1.0, 1.0) as f32
            }
        })
        .collect())
}

fn threshold_map(index: &[f32], threshold: f64, validity: Option<&ClassMask>) -> Vec<Class> {
    index
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if validity.is_some_and(|m| m.labels()[i] == Class::Invalid) {
                Class::Invalid
            } else if v as f64 > threshold {
                Class::Water
            } else {
                Class::Land
            }
        })
        .collect()
}

/// WATER where the index exceeds the threshold, LAND otherwise. INVALID
/// pixels of `validity` pass through.
pub fn classify_fixed(
    image: &MultiBandImage,
    config: &NdwiConfig,
    validity: Option<&ClassMask>,
) -> Result<ClassMask> {
    config.validate()?;
    if let Some(m) = validity {
        m.check_same_dims(image.width(), image.height())?;
    }
    let index = ndwi(image, config.band_a, config.band_b)?;
    ClassMask::new(image.width(), image.height(), threshold_map(&index, config.threshold, validity))
}

/// 201 evenly spaced thresholds from -1 to 1 (step 0.01, includes 0).
pub fn default_grid() -> Vec<f64> {
    (0..=200).map(|i| (i as f64 - 100.0) / 100.0).collect()
}

/// Grid threshold with the best water IoU against `truth`; ties go to the
/// smallest threshold.
pub fn tune_threshold(
    image: &MultiBandImage,
    truth: &ClassMask,
    band_a: BandId,
    band_b: BandId,
    grid: &[f64],
) -> Result<(f64, f64)> {
    truth.check_same_dims(image.width(), image.height())?;
    if grid.is_empty() {
        return Err(Error::Argument("threshold grid is empty".into()));
    }
    if grid.iter().any(|t| !(-1.0..=1.0).contains(t)) {
        return Err(Error::Argument("grid thresholds must be in [-1, 1]".into()));
    }
    if truth.labels().iter().all(|&c| c == Class::Invalid) {
        return Err(Error::Evaluation("truth has no valid pixels".into()));
    }
    let index = ndwi(image, band_a, band_b)?;
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best: Option<(f64, f64)> = None;
    for &t in &sorted {
        let pred = ClassMask::new(image.width(), image.height(), threshold_map(&index, t, Some(truth)))?;
        let iou = metrics(&confusion(&pred, truth)?, Class::Water).iou;
        if best.is_none_or(|(_, b)| iou > b) {
            best = Some((t, iou));
        }
    }
    Ok(best.expect("grid is non-empty"))
}

/// Fixed-threshold NDWI as a [`Segmenter`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FixedNdwi(pub NdwiConfig);

impl Segmenter for FixedNdwi {
    fn name(&self) -> String {
        format!("ndwi-fixed({},{},{})", self.0.band_a, self.0.band_b, self.0.threshold)
    }

    fn segment(&self, image: &MultiBandImage) -> Result<ClassMask> {
        classify_fixed(image, &self.0, None)
    }
}

/// Per-image oracle threshold. Only usable where truth is available.
#[derive(Debug, Clone, PartialEq)]
pub struct TunedNdwi {
    pub band_a: BandId,
    pub band_b: BandId,
    pub grid: Vec<f64>,
}

impl Default for TunedNdwi {
    fn default() -> Self {
        let cfg = NdwiConfig::default();
        TunedNdwi {
            band_a: cfg.band_a,
            band_b: cfg.band_b,
            grid: default_grid(),
        }
    }
}

impl Segmenter for TunedNdwi {
    fn name(&self) -> String {
        format!("ndwi-tuned({},{})", self.band_a, self.band_b)
    }

    fn segment(&self, _image: &MultiBandImage) -> Result<ClassMask> {
        Err(Error::Argument("tuned NDWI needs the truth mask".into()))
    }

    fn segment_with_truth(&self, image: &MultiBandImage, truth: &ClassMask) -> Result<ClassMask> {
        let (t, _) = tune_threshold(image, truth, self.band_a, self.band_b, &self.grid)?;
        let cfg = NdwiConfig {
            band_a: self.band_a,
            band_b: self.band_b,
            threshold: t,
        };
        classify_fixed(image, &cfg, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_band(a: Vec<f32>, b: Vec<f32>, w: usize, h: usize) -> MultiBandImage {
        let mut data = a;
        data.extend(b);
        MultiBandImage::new(w, h, vec![BandId::B02, BandId::B08], data).unwrap()
    }

    /// Builds an image whose NDWI equals `index` exactly enough for threshold tests.
    fn from_index(index: &[f32]) -> MultiBandImage {
        let a = index.iter().map(|v| 1.0 + v).collect();
        let b = index.iter().map(|v| 1.0 - v).collect();
        two_band(a, b, index.len(), 1)
    }

    #[test]
    fn direct_values() {
        let img = two_band(vec![0.3, 0.2, 0.0], vec![0.1, 0.2, 0.0], 3, 1);
        let v = ndwi(&img, BandId::B02, BandId::B08).unwrap();
        assert!((v[0] - 0.5).abs() < 1e-6);
        assert_eq!(v[1], 0.0);
        assert_eq!(v[2], 0.0);
    }

    #[test]
    fn missing_band_is_argument_error() {
        let img = two_band(vec![0.3], vec![0.1], 1, 1);
        assert!(matches!(ndwi(&img, BandId::B03, BandId::B08), Err(Error::Argument(_))));
    }

    #[test]
    fn fixed_threshold_rule() {
        let img = from_index(&[0.5, -0.2]);
        let m = classify_fixed(&img, &NdwiConfig::default(), None).unwrap();
        assert_eq!(m.labels(), &[Class::Water, Class::Land]);
        let strict = NdwiConfig { threshold: 1.0, ..NdwiConfig::default() };
        let m = classify_fixed(&two_band(vec![1.0], vec![0.0], 1, 1), &strict, None).unwrap();
        assert_eq!(m.labels(), &[Class::Land]);
    }

    #[test]
    fn validity_mask_passes_invalid_through() {
        let img = from_index(&[0.5, 0.5]);
        let valid = ClassMask::new(2, 1, vec![Class::Invalid, Class::Land]).unwrap();
        let m = classify_fixed(&img, &NdwiConfig::default(), Some(&valid)).unwrap();
        assert_eq!(m.labels(), &[Class::Invalid, Class::Water]);
    }

    #[test]
    fn hand_enumerated_tuning() {
        let img = from_index(&[0.6, 0.4, -0.1, -0.5]);
        let truth = ClassMask::new(4, 1, vec![Class::Water, Class::Water, Class::Land, Class::Land]).unwrap();
        let (t, iou) = tune_threshold(&img, &truth, BandId::B02, BandId::B08, &[-0.3, 0.2, 0.5]).unwrap();
        assert_eq!(t, 0.2);
        assert_eq!(iou, 1.0);
    }

    #[test]
    fn all_land_truth_picks_smallest_threshold() {
        let img = from_index(&[0.3, -0.3]);
        let truth = ClassMask::filled(2, 1, Class::Land);
        let (t, iou) = tune_threshold(&img, &truth, BandId::B02, BandId::B08, &[0.5, -0.5, 0.9]).unwrap();
        assert_eq!((t, iou), (-0.5, 0.0));
        let invalid = ClassMask::filled(2, 1, Class::Invalid);
        assert!(matches!(
            tune_threshold(&img, &invalid, BandId::B02, BandId::B08, &[0.0]),
            Err(Error::Evaluation(_))
        ));
    }

    #[test]
    fn default_grid_shape() {
        let g = default_grid();
        assert_eq!(g.len(), 201);
        assert_eq!((g[0], g[100], g[200]), (-1.0, 0.0, 1.0));
    }

    proptest! {
        #[test]
        fn antisymmetric_and_scale_invariant(
            px in prop::collection::vec((0.0f32..1.0, 0.0f32..1.0), 1..40),
            c in 0.01f32..100.0,
        ) {
            let (a, b): (Vec<f32>, Vec<f32>) = px.iter().cloned().unzip();
            let n = a.len();
            let img = two_band(a.clone(), b.clone(), n, 1);
            let fwd = ndwi(&img, BandId::B02, BandId::B08).unwrap();
            let rev = ndwi(&img, BandId::B08, BandId::B02).unwrap();
            for (x, y) in fwd.iter().zip(&rev) {
                prop_assert_eq!(*x, -*y);
                prop_assert!((-1.0..=1.0).contains(x));
            }
            let scaled = two_band(a.iter().map(|v| v * c).collect(), b.iter().map(|v| v * c).collect(), n, 1);
            let s = ndwi(&scaled, BandId::B02, BandId::B08).unwrap();
            for (x, y) in fwd.iter().zip(&s) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }

        #[test]
        fn tuned_result_is_grid_argmax(
            index in prop::collection::vec(-0.99f32..0.99, 4..30),
            water in prop::collection::vec(any::<bool>(), 30),
        ) {
            let n = index.len();
            let img = from_index(&index);
            let labels: Vec<Class> = (0..n).map(|i| if water[i] { Class::Water } else { Class::Land }).collect();
            let truth = ClassMask::new(n, 1, labels.clone()).unwrap();
            let grid = default_grid();
            let (t, best) = tune_threshold(&img, &truth, BandId::B02, BandId::B08, &grid).unwrap();
            let nd = ndwi(&img, BandId::B02, BandId::B08).unwrap();
            // brute force IoU by set counting
            let iou_at = |th: f64| {
                let (mut tp, mut fp, mut fn_) = (0u32, 0u32, 0u32);
                for i in 0..n {
                    let p = nd[i] as f64 > th;
                    let w = labels[i] == Class::Water;
                    match (p, w) {
                        (true, true) => tp += 1,
                        (true, false) => fp += 1,
                        (false, true) => fn_ += 1,
                        _ => {}
                    }
                }
                let d = tp + fp + fn_;
                if d == 0 { 0.0 } else { tp as f64 / d as f64 }
            };
            let expect = grid.iter().map(|&g| iou_at(g)).fold(0.0, f64::max);
            prop_assert_eq!(best, expect);
            prop_assert_eq!(iou_at(t), best);
            let first = grid.iter().find(|&&g| iou_at(g) == expect).unwrap();
            prop_assert_eq!(t, *first);
            prop_assert!(best >= iou_at(0.0));
        }
    }
}
