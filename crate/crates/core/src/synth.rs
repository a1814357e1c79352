//! Seeded procedural scenes with known labels.
//!
//! Scene layout: an optional straight-edged INVALID swath border, cloud blobs,
//! then water blobs among the remaining pixels, everything else LAND. Blobs
//! are quantile-thresholded smoothed noise fields, so class fractions hit
//! their targets to within one pixel. Spectra are class means plus Gaussian
//! noise: an isotropic term and a one-dimensional mixing term that pulls a
//! pixel toward its class's "confuser" spectrum (shoreline and wet-soil
//! mixtures). Muddy water swaps in a brighter red/NIR mean, which flips the
//! sign of the blue/NIR index while staying separable in the SWIR bands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::raster::{self, BandId, Class, ClassMask, MultiBandImage};
use crate::rng::Rng;

pub const MANIFEST_NAME: &str = "manifest.tsv";

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub water_fraction: f64,
    pub cloud_fraction: f64,
    pub invalid_fraction: f64,
    pub band_count: usize,
    pub noise_sigma: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 64,
            height: 64,
            seed: 0,
            water_fraction: 0.2,
            cloud_fraction: 0.15,
            invalid_fraction: 0.02,
            band_count: 13,
            noise_sigma: 0.01,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return Err(Error::Argument(format!(
                "scene must be at least 16x16, got {}x{}",
                self.height, self.width
            )));
        }
        let fr = [self.water_fraction, self.cloud_fraction, self.invalid_fraction];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || fr.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(Error::Argument(format!(
                "class fractions must be >= 0 and sum to <= 1, got water {} cloud {} invalid {}",
                fr[0], fr[1], fr[2]
            )));
        }
        if self.band_count == 0 {
            return Err(Error::Argument("band count must be > 0".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Argument("noise sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Class-conditional spectra, indexed by score channel (LAND, WATER, CLOUD).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralProfile {
    pub means: [Vec<f64>; 3],
    pub muddy_water: Vec<f64>,
    /// Multiplier on the scene's isotropic noise sigma, per class.
    pub noise_scale: [f64; 3],
    /// Standard deviation of the mixing coefficient toward the confuser.
    pub mixing_sigma: [f64; 3],
    /// Channel each class mixes toward.
    pub confuser: [usize; 3],
}

const S2_LAND: [f64; 13] = [0.13, 0.14, 0.12, 0.13, 0.17, 0.22, 0.24, 0.25, 0.26, 0.09, 0.005, 0.26, 0.17];
const S2_WATER: [f64; 13] = [0.11, 0.10, 0.09, 0.06, 0.04, 0.03, 0.02, 0.01, 0.01, 0.005, 0.002, 0.005, 0.003];
const S2_CLOUD: [f64; 13] = [0.52, 0.50, 0.49, 0.49, 0.49, 0.48, 0.48, 0.47, 0.47, 0.30, 0.10, 0.38, 0.30];
const S2_MUDDY: [f64; 13] = [0.12, 0.11, 0.14, 0.16, 0.17, 0.15, 0.14, 0.13, 0.12, 0.04, 0.003, 0.03, 0.02];

impl SpectralProfile {
    /// Thirteen-band Sentinel-2 profile.
    pub fn sentinel2() -> Self {
        SpectralProfile {
            means: [S2_LAND.to_vec(), S2_WATER.to_vec(), S2_CLOUD.to_vec()],
            muddy_water: S2_MUDDY.to_vec(),
            noise_scale: [1.0, 1.0, 1.0],
            mixing_sigma: [0.14, 0.30, 0.15],
            confuser: [1, 0, 0],
        }
    }

    /// The Sentinel-2 profile linearly resampled onto `bands` evenly spaced
    /// positions (e.g. a 49-band hyperspectral stand-in).
    pub fn resampled(bands: usize) -> Self {
        let base = Self::sentinel2();
        if bands == 13 {
            return base;
        }
        let resample = |v: &[f64]| -> Vec<f64> {
            (0..bands)
                .map(|i| {
                    let x = if bands == 1 { 0.0 } else { i as f64 * 12.0 / (bands - 1) as f64 };
                    let lo = x.floor() as usize;
                    let hi = (lo + 1).min(12);
                    let t = x - lo as f64;
                    v[lo] * (1.0 - t) + v[hi] * t
                })
                .collect()
        };
        SpectralProfile {
            means: [resample(&base.means[0]), resample(&base.means[1]), resample(&base.means[2])],
            muddy_water: resample(&base.muddy_water),
            ..base
        }
    }

    pub fn band_count(&self) -> usize {
        self.means[0].len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.band_count();
        let all = self.means.iter().chain(std::iter::once(&self.muddy_water));
        for m in all {
            if m.len() != n {
                return Err(Error::Argument("profile means differ in band count".into()));
            }
            if m.iter().any(|v| !(0.0..=1.2).contains(v)) {
                return Err(Error::Argument("profile means must lie in [0, 1.2]".into()));
            }
        }
        if self.confuser.iter().any(|&c| c > 2) {
            return Err(Error::Argument("confuser must be a class channel".into()));
        }
        if n == 13 {
            // water must absorb in the NIR relative to the visible bands
            let w = &self.means[1];
            if w[7] >= w[2] || w[7] >= w[1] {
                return Err(Error::Argument("water NIR mean must be below green and blue".into()));
            }
        }
        Ok(())
    }
}

/// Sum of two box-blurred white-noise fields at different scales.
fn smooth_noise(rng: &mut Rng, w: usize, h: usize) -> Vec<f64> {
    let coarse = (w.max(h) / 6).max(2);
    let fine = (w.max(h) / 24).max(1);
    let a = blurred(rng, w, h, coarse);
    let b = blurred(rng, w, h, fine);
    a.iter().zip(&b).map(|(x, y)| x + 0.35 * y).collect()
}

fn blurred(rng: &mut Rng, w: usize, h: usize, radius: usize) -> Vec<f64> {
    let mut f: Vec<f64> = (0..w * h).map(|_| rng.normal()).collect();
    for _ in 0..3 {
        f = box_pass(&f, w, h, radius, true);
        f = box_pass(&f, w, h, radius, false);
    }
    // normalise so the two scales mix with predictable weight
    let mean = f.iter().sum::<f64>() / f.len() as f64;
    let var = f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / f.len() as f64;
    let sd = var.sqrt().max(1e-12);
    f.iter().map(|v| (v - mean) / sd).collect()
}

fn box_pass(src: &[f64], w: usize, h: usize, r: usize, horizontal: bool) -> Vec<f64> {
    let (len, lines) = if horizontal { (w, h) } else { (h, w) };
    let at = |line: usize, i: usize| if horizontal { line * w + i } else { i * w + line };
    let mut out = vec![0.0; src.len()];
    for line in 0..lines {
        for i in 0..len {
            let lo = i.saturating_sub(r);
            let hi = (i + r).min(len - 1);
            let s: f64 = (lo..=hi).map(|j| src[at(line, j)]).sum();
            out[at(line, i)] = s / (hi - lo + 1) as f64;
        }
    }
    out
}

/// Indices of the `k` highest-scoring candidates (ties by index).
fn top_k(candidates: &[usize], score: &[f64], k: usize) -> Vec<usize> {
    let mut c = candidates.to_vec();
    c.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
    c.truncate(k);
    c
}

fn count(fraction: f64, total: usize) -> usize {
    ((fraction * total as f64).round() as usize).min(total)
}

/// Generates one labelled scene; identical inputs give bit-identical output.
pub fn generate(
    spec: &SceneSpec,
    profile: &SpectralProfile,
    muddy_water_fraction: f64,
) -> Result<(MultiBandImage, ClassMask)> {
    spec.validate()?;
    profile.validate()?;
    if profile.band_count() != spec.band_count {
        return Err(Error::Argument(format!(
            "profile has {} bands, scene wants {}",
            profile.band_count(),
            spec.band_count
        )));
    }
    if !(0.0..=1.0).contains(&muddy_water_fraction) {
        return Err(Error::Argument("muddy water fraction must be in [0, 1]".into()));
    }
    let (w, h) = (spec.width, spec.height);
    let n = w * h;
    let mut rng = Rng::new(spec.seed);
    let mut labels = vec![Class::Land; n];

    // swath border: everything beyond a random straight line
    let theta = rng.uniform() * std::f64::consts::TAU;
    let edge: Vec<f64> = (0..n)
        .map(|i| (i % w) as f64 * theta.cos() + (i / w) as f64 * theta.sin())
        .collect();
    let all: Vec<usize> = (0..n).collect();
    for i in top_k(&all, &edge, count(spec.invalid_fraction, n)) {
        labels[i] = Class::Invalid;
    }

    let cloud_field = smooth_noise(&mut rng, w, h);
    let free: Vec<usize> = (0..n).filter(|&i| labels[i] == Class::Land).collect();
    for i in top_k(&free, &cloud_field, count(spec.cloud_fraction, n)) {
        labels[i] = Class::Cloud;
    }

    let water_field = smooth_noise(&mut rng, w, h);
    let free: Vec<usize> = (0..n).filter(|&i| labels[i] == Class::Land).collect();
    let water = top_k(&free, &water_field, count(spec.water_fraction, n));
    for &i in &water {
        labels[i] = Class::Water;
    }

    let mud_field = smooth_noise(&mut rng, w, h);
    let mut muddy = vec![false; n];
    for i in top_k(&water, &mud_field, count(muddy_water_fraction, water.len())) {
        muddy[i] = true;
    }

    let bands = spec.band_count;
    let mut data = vec![0.0f32; n * bands];
    for i in 0..n {
        let Some(ch) = labels[i].channel() else {
            continue;
        };
        let mean = if muddy[i] { &profile.muddy_water } else { &profile.means[ch] };
        let other = &profile.means[profile.confuser[ch]];
        let g = rng.normal() * profile.mixing_sigma[ch];
        let sigma = spec.noise_sigma * profile.noise_scale[ch];
        for b in 0..bands {
            let v = mean[b] + g * (other[b] - mean[b]) + sigma * rng.normal();
            data[b * n + i] = v.max(0.0) as f32;
        }
    }

    Ok((
        MultiBandImage::new(w, h, BandId::canonical(bands), data)?,
        ClassMask::new(w, h, labels)?,
    ))
}

/// Template for a generated split.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    /// Scene `i` uses seed `scene.seed + i`.
    pub scene: SceneSpec,
    pub profile: SpectralProfile,
    /// Fraction of water pixels that are muddy in a muddy scene.
    pub muddy_water_fraction: f64,
    /// Fraction of scenes that are muddy, spread evenly over the indices.
    pub muddy_scene_fraction: f64,
}

impl DatasetSpec {
    pub fn new(scene: SceneSpec) -> Self {
        let profile = SpectralProfile::resampled(scene.band_count);
        DatasetSpec {
            scene,
            profile,
            muddy_water_fraction: 0.0,
            muddy_scene_fraction: 0.0,
        }
    }

    pub fn is_muddy(&self, index: usize) -> bool {
        let f = self.muddy_scene_fraction;
        f > 0.0 && ((index + 1) as f64 * f).floor() > (index as f64 * f).floor()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub mask: PathBuf,
    /// INVALID, LAND, WATER, CLOUD pixel counts.
    pub counts: [u64; 4],
}

impl ManifestEntry {
    pub fn id(&self) -> String {
        self.image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

/// Scene list. Paths are stored relative to the manifest's directory.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// LAND, WATER, CLOUD fractions over all valid pixels.
    pub fn class_fractions(&self) -> [f64; 3] {
        let mut tot = [0u64; 4];
        for e in &self.entries {
            for (t, c) in tot.iter_mut().zip(e.counts) {
                *t += c;
            }
        }
        let valid = (tot[1] + tot[2] + tot[3]).max(1) as f64;
        [tot[1] as f64 / valid, tot[2] as f64 / valid, tot[3] as f64 / valid]
    }

    pub fn extend(&mut self, other: Manifest) {
        self.entries.extend(other.entries);
    }

    pub fn to_text(&self, base: &Path) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).to_string_lossy().into_owned();
            let c = e.counts;
            writeln!(out, "{}\t{}\t{},{},{},{}", rel(&e.image), rel(&e.mask), c[0], c[1], c[2], c[3])
                .expect("writing to a String");
        }
        out
    }

    pub fn parse(text: &str, base: &Path) -> Result<Manifest> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |why: &str| Error::format("manifest", format!("line {}: {why}", lineno + 1));
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(bad("expected 3 tab-separated columns"));
            }
            let counts: Vec<u64> = cols[2]
                .split(',')
                .map(|v| v.trim().parse::<u64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("class counts must be integers"))?;
            let counts: [u64; 4] = counts.try_into().map_err(|_| bad("expected 4 class counts"))?;
            entries.push(ManifestEntry {
                image: base.join(cols[0]),
                mask: base.join(cols[1]),
                counts,
            });
        }
        Ok(Manifest { entries })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new(""));
        fs::write(path, self.to_text(base)).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Manifest> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Manifest::parse(&text, path.parent().unwrap_or(Path::new("")))
    }

    /// Reads either a manifest file or a directory holding `manifest.tsv`.
    pub fn open(path: impl AsRef<Path>) -> Result<Manifest> {
        let path = path.as_ref();
        if path.is_dir() {
            Self::read(path.join(MANIFEST_NAME))
        } else {
            Self::read(path)
        }
    }
}

/// Writes `n_scenes` WFB/WFL pairs and `manifest.tsv` into `out_dir`.
pub fn make_dataset(spec: &DatasetSpec, n_scenes: usize, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    if n_scenes == 0 {
        return Err(Error::Argument("need at least one scene".into()));
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = Manifest::default();
    for i in 0..n_scenes {
        let scene = SceneSpec {
            seed: spec.scene.seed.wrapping_add(i as u64),
            ..spec.scene.clone()
        };
        let muddy = if spec.is_muddy(i) { spec.muddy_water_fraction } else { 0.0 };
        let (image, mask) = generate(&scene, &spec.profile, muddy)?;
        let image_path = out_dir.join(format!("scene_{i:04}.wfb"));
        let mask_path = out_dir.join(format!("scene_{i:04}.wfl"));
        raster::write_image(&image, &image_path)?;
        raster::write_mask(&mask, &mask_path)?;
        manifest.entries.push(ManifestEntry {
            image: image_path,
            mask: mask_path,
            counts: mask.class_counts(),
        });
    }
    manifest.write(out_dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(seed: u64, water: f64, cloud: f64) -> SceneSpec {
        SceneSpec {
            width: 128,
            height: 128,
            seed,
            water_fraction: water,
            cloud_fraction: cloud,
            invalid_fraction: 0.0,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn zero_water_fraction_gives_no_water() {
        let (_, mask) = generate(&spec(1, 0.0, 0.3), &SpectralProfile::sentinel2(), 0.0).unwrap();
        assert_eq!(mask.class_counts()[Class::Water as usize], 0);
    }

    #[test]
    fn deterministic_per_seed() {
        let p = SpectralProfile::sentinel2();
        let a = generate(&spec(5, 0.2, 0.2), &p, 0.3).unwrap();
        let b = generate(&spec(5, 0.2, 0.2), &p, 0.3).unwrap();
        assert_eq!(a, b);
        let c = generate(&spec(6, 0.2, 0.2), &p, 0.3).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn measured_fractions_near_targets() {
        let (_, mask) = generate(&spec(7, 0.2, 0.2), &SpectralProfile::sentinel2(), 0.0).unwrap();
        let c = mask.class_counts();
        let n = mask.len() as f64;
        assert!((c[Class::Water as usize] as f64 / n - 0.2).abs() <= 0.1);
        assert!((c[Class::Cloud as usize] as f64 / n - 0.2).abs() <= 0.1);

        let with_invalid = SceneSpec { invalid_fraction: 0.1, ..spec(7, 0.3, 0.1) };
        let (img, mask) = generate(&with_invalid, &SpectralProfile::sentinel2(), 0.0).unwrap();
        let c = mask.class_counts();
        assert!((c[0] as f64 / n - 0.1).abs() <= 0.1);
        // invalid pixels carry no signal
        for (i, &l) in mask.labels().iter().enumerate() {
            if l == Class::Invalid {
                assert_eq!(img.band(0)[i], 0.0);
            }
        }
    }

    #[test]
    fn unsatisfiable_fractions_rejected() {
        let p = SpectralProfile::sentinel2();
        assert!(matches!(generate(&spec(1, 0.7, 0.5), &p, 0.0), Err(Error::Argument(_))));
        let tiny = SceneSpec { width: 8, ..spec(1, 0.1, 0.1) };
        assert!(generate(&tiny, &p, 0.0).is_err());
        assert!(generate(&spec(1, -0.1, 0.1), &p, 0.0).is_err());
    }

    #[test]
    fn profile_invariants() {
        let p = SpectralProfile::sentinel2();
        p.validate().unwrap();
        let w = &p.means[1];
        assert!(w[7] < w[2]);
        let cloud = &p.means[2];
        let (lo, hi) = cloud[..9].iter().fold((1.0f64, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
        assert!(lo > 0.4 && hi - lo < 0.1);
        assert_eq!(SpectralProfile::resampled(49).band_count(), 49);
        SpectralProfile::resampled(49).validate().unwrap();
    }

    #[test]
    fn muddy_water_raises_nir_over_blue() {
        let p = SpectralProfile::sentinel2();
        assert!(p.muddy_water[7] > p.muddy_water[1]);
        assert!(p.muddy_water[3] > p.means[1][3]);
        // and stays far from land in the SWIR
        assert!(p.means[0][11] - p.muddy_water[11] > 0.2);
    }

    #[test]
    fn muddy_scenes_spread_evenly() {
        let mut ds = DatasetSpec::new(SceneSpec::default());
        ds.muddy_scene_fraction = 0.5;
        let flags: Vec<bool> = (0..6).map(|i| ds.is_muddy(i)).collect();
        assert_eq!(flags, vec![false, true, false, true, false, true]);
        ds.muddy_scene_fraction = 1.0;
        assert!((0..5).all(|i| ds.is_muddy(i)));
        ds.muddy_scene_fraction = 0.0;
        assert!((0..5).all(|i| !ds.is_muddy(i)));
    }

    #[test]
    fn manifest_text_roundtrip() {
        let base = Path::new("/data/split");
        let m = Manifest {
            entries: vec![ManifestEntry {
                image: base.join("scene_0000.wfb"),
                mask: base.join("scene_0000.wfl"),
                counts: [1, 2, 3, 4],
            }],
        };
        let text = m.to_text(base);
        assert_eq!(text, "scene_0000.wfb\tscene_0000.wfl\t1,2,3,4\n");
        assert_eq!(Manifest::parse(&text, base).unwrap(), m);
        assert!(Manifest::parse("a\tb\t1,2,3\n", base).is_err());
        assert!(Manifest::parse("a\tb\n", base).is_err());
    }
}
