use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use floodseg::baselines::{classify_fixed, default_grid, tune_threshold, FixedNdwi, NdwiConfig, TunedNdwi};
use floodseg::eval::{evaluate_dataset, operating_point, pr_curve, uniform_thresholds, Segmenter};
use floodseg::nnet::{load_model, save_model, MODEL_MAGIC};
use floodseg::onboard::{
    benchmark, pack_mask, reduction_factor, scene_probabilities, segment_scene, DownlinkSpec, ModelSegmenter,
    DEFAULT_OVERLAP, DEFAULT_PATCH_SIZE, CLAIMED_REDUCTION_FACTOR,
};
use floodseg::raster::{self, degrade, render_mask};
use floodseg::synth::{make_dataset, DatasetSpec, Manifest, ManifestEntry, SceneSpec, MANIFEST_NAME};
use floodseg::training::{
    inverse_frequency_weights, log_csv, train, AugmentationParams, LossConfig, TrainConfig,
    REFERENCE_CLASS_FRACTIONS,
};
use floodseg::{BandId, Class, Error, Model, ModelKind, Result};

use crate::Command;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Degrade(a) => degrade_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::PrCurve(a) => pr(a),
        Command::Ndwi(a) => ndwi_cmd(a),
        Command::Pack(a) => pack(a),
        Command::Bandwidth(a) => bandwidth(a),
        Command::Flops(a) => flops(a),
        Command::Bench(a) => bench(a),
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
    }
    fs::write(path, bytes).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `lo,hi`, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(a)?, parse(b)?))
}

fn band(s: &str) -> std::result::Result<BandId, String> {
    s.parse::<BandId>().map_err(|e| e.to_string())
}

/// A saved model file, or a freshly initialised `scnn` / `linear`.
fn model_source(spec: &str, bands: usize, seed: u64) -> Result<Model> {
    let path = Path::new(spec);
    if path.is_file() {
        let mut head = [0u8; 4];
        let bytes = fs::read(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
        head.copy_from_slice(bytes.get(..4).unwrap_or(b"????"));
        if &head == MODEL_MAGIC {
            return load_model(path);
        }
    }
    let kind: ModelKind = spec.parse()?;
    let mut m = Model::new(kind, bands)?;
    m.init_he_uniform(seed);
    Ok(m)
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of scenes.
    #[arg(long)]
    pub n: usize,
    /// Base seed; scene i uses seed + i.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (receives the scenes and manifest.tsv).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 0.2)]
    pub water_fraction: f64,
    #[arg(long, default_value_t = 0.15)]
    pub cloud_fraction: f64,
    #[arg(long, default_value_t = 0.02)]
    pub invalid_fraction: f64,
    #[arg(long, default_value_t = 13)]
    pub bands: usize,
    /// Isotropic per-band noise, reflectance units.
    #[arg(long, default_value_t = 0.01)]
    pub noise_sigma: f64,
    /// Fraction of scenes containing muddy water.
    #[arg(long, default_value_t = 0.0)]
    pub muddy_scenes: f64,
    /// Fraction of the water pixels that are muddy in a muddy scene.
    #[arg(long, default_value_t = 0.6)]
    pub muddy_water: f64,
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec = DatasetSpec::new(SceneSpec {
        width: a.width,
        height: a.height,
        seed: a.seed,
        water_fraction: a.water_fraction,
        cloud_fraction: a.cloud_fraction,
        invalid_fraction: a.invalid_fraction,
        band_count: a.bands,
        noise_sigma: a.noise_sigma,
    });
    spec.muddy_scene_fraction = a.muddy_scenes;
    spec.muddy_water_fraction = a.muddy_water;
    if !(0.0..=1.0).contains(&a.muddy_scenes) {
        return Err(Error::Argument("muddy scene fraction must be in [0, 1]".into()));
    }
    let m = make_dataset(&spec, a.n, &a.out)?;
    let [land, water, cloud] = m.class_fractions();
    println!("scenes: {}", m.len());
    println!("manifest: {}", a.out.join(MANIFEST_NAME).display());
    println!("fractions: land {land:.4} water {water:.4} cloud {cloud:.4}");
    Ok(())
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    /// Block size (8 turns 10 m pixels into 80 m pixels).
    #[arg(long, default_value_t = 8)]
    pub factor: usize,
    /// Dataset directory or manifest to degrade as a whole.
    #[arg(long, conflicts_with_all = ["image", "mask"])]
    pub data: Option<PathBuf>,
    #[arg(long, requires = "mask")]
    pub image: Option<PathBuf>,
    #[arg(long, requires = "image")]
    pub mask: Option<PathBuf>,
    /// Output directory (dataset mode) or output image path.
    #[arg(long)]
    pub out: PathBuf,
    /// Output mask path (single-scene mode).
    #[arg(long)]
    pub out_mask: Option<PathBuf>,
}

fn degrade_cmd(a: DegradeArgs) -> Result<()> {
    if let Some(data) = &a.data {
        let src = Manifest::open(data)?;
        fs::create_dir_all(&a.out).map_err(|e| Error::Io { path: a.out.clone(), source: e })?;
        let mut out = Manifest::default();
        for e in &src.entries {
            let (img, mask) = degrade(&raster::read_image(&e.image)?, &raster::read_mask(&e.mask)?, a.factor)?;
            let name = |p: &Path| a.out.join(p.file_name().expect("manifest paths name files"));
            let entry = ManifestEntry { image: name(&e.image), mask: name(&e.mask), counts: mask.class_counts() };
            raster::write_image(&img, &entry.image)?;
            raster::write_mask(&mask, &entry.mask)?;
            out.entries.push(entry);
        }
        out.write(a.out.join(MANIFEST_NAME))?;
        println!("scenes: {}", out.len());
        return Ok(());
    }
    let (Some(image), Some(mask)) = (&a.image, &a.mask) else {
        return Err(Error::Argument("give either --data or --image with --mask".into()));
    };
    let out_mask = a
        .out_mask
        .clone()
        .ok_or_else(|| Error::Argument("single-scene mode needs --out-mask".into()))?;
    let (img, m) = degrade(&raster::read_image(image)?, &raster::read_mask(mask)?, a.factor)?;
    raster::write_image(&img, &a.out)?;
    raster::write_mask(&m, &out_mask)?;
    println!("size: {}x{}", img.height(), img.width());
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training dataset directory or manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Validation dataset scored after every epoch.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// `scnn`, `linear`, or an existing model file to continue from.
    #[arg(long, default_value = "scnn")]
    pub model: String,
    /// Where to save the trained model.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch CSV log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Seed for weight initialisation, shuffling and augmentation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 40)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Defaults to 1e-3 for scnn and 1e-2 for linear.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 64)]
    pub patch_size: usize,
    /// `reference` (flood dataset class frequencies), `observed` (this
    /// training set), or explicit `land,water,cloud`.
    #[arg(long, default_value = "reference")]
    pub class_weights: String,
    #[arg(long, default_value_t = 1.0)]
    pub dice_weight: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub dice_epsilon: f64,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub augment: bool,
    #[arg(long, default_value_t = 0.5)]
    pub flip_horizontal: f64,
    #[arg(long, default_value_t = 0.5)]
    pub flip_vertical: f64,
    /// Allowed quarter turns, e.g. `0,1,2,3`.
    #[arg(long, default_value = "0,1,2,3")]
    pub rotations: String,
    /// Per-band multiplicative jitter range.
    #[arg(long, default_value = "0.95,1.05", value_parser = pair)]
    pub jitter: (f64, f64),
    #[arg(long, default_value_t = 1e-4)]
    pub poisson_scale: f64,
    #[arg(long, default_value = "-0.02,0.02", value_parser = pair, allow_hyphen_values = true)]
    pub brightness: (f64, f64),
    #[arg(long, default_value = "0.9,1.1", value_parser = pair)]
    pub contrast: (f64, f64),
}

fn class_weights(spec: &str, manifest: &Manifest) -> Result<[f64; 3]> {
    match spec {
        "reference" => inverse_frequency_weights(REFERENCE_CLASS_FRACTIONS),
        "observed" => inverse_frequency_weights(manifest.class_fractions()),
        explicit => {
            let v: Vec<f64> = explicit
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Argument(format!("bad class weights {explicit:?}")))?;
            v.try_into()
                .map_err(|_| Error::Argument("class weights need three values".into()))
        }
    }
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let manifest = Manifest::open(&a.data)?;
    let validation = a.val.as_ref().map(Manifest::open).transpose()?;
    let first = manifest
        .entries
        .first()
        .ok_or_else(|| Error::Argument("training manifest is empty".into()))?;
    let bands = raster::read_image(&first.image)?.band_count();
    let mut model = model_source(&a.model, bands, a.seed)?;
    let rotations = a
        .rotations
        .split(',')
        .map(|s| s.trim().parse::<u8>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::Argument(format!("bad rotation list {:?}", a.rotations)))?;
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a
            .learning_rate
            .unwrap_or_else(|| TrainConfig::for_kind(model.kind()).learning_rate),
        momentum: a.momentum,
        seed: a.seed,
        patch_size: a.patch_size,
        augment: a.augment,
        augmentation: AugmentationParams {
            flip_horizontal: a.flip_horizontal,
            flip_vertical: a.flip_vertical,
            rotations,
            jitter: a.jitter,
            poisson_scale: a.poisson_scale,
            brightness: a.brightness,
            contrast: a.contrast,
        },
    };
    let loss = LossConfig {
        class_weights: class_weights(&a.class_weights, &manifest)?,
        dice_weight: a.dice_weight,
        epsilon: a.dice_epsilon,
    };
    eprintln!("learning-rate (effective) = {}", config.learning_rate);
    eprintln!("class-weights (effective) = {:?}", loss.class_weights);
    let log = train(&mut model, &manifest, validation.as_ref(), &config, &loss, |e| {
        let val = match (e.val_water_iou, e.val_water_recall) {
            (Some(i), Some(r)) => format!(" val_iou {i:.4} val_recall {r:.4}"),
            _ => String::new(),
        };
        println!("epoch {} step {} loss {:.6}{val}", e.epoch, e.step, e.loss);
    })?;
    save_model(&model, &a.out)?;
    if let Some(p) = &a.log {
        write(p, log_csv(&log))?;
    }
    println!("model: {}", a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Output class mask (WFL).
    #[arg(long)]
    pub out: PathBuf,
    /// Optional colour rendering (PPM).
    #[arg(long)]
    pub render: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PATCH_SIZE)]
    pub patch_size: usize,
    #[arg(long, default_value_t = DEFAULT_OVERLAP)]
    pub overlap: usize,
}

fn infer(a: InferArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let image = raster::read_image(&a.image)?;
    let mask = segment_scene(&model, &image, a.patch_size, a.overlap)?;
    raster::write_mask(&mask, &a.out)?;
    if let Some(r) = &a.render {
        render_mask(&mask, r)?;
    }
    let c = mask.class_counts();
    println!(
        "pixels: {} land {} water {} cloud {}",
        mask.len(),
        c[Class::Land as usize],
        c[Class::Water as usize],
        c[Class::Cloud as usize]
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct NdwiOptions {
    #[arg(long, default_value = "B02", value_parser = band)]
    pub band_a: BandId,
    #[arg(long, default_value = "B08", value_parser = band)]
    pub band_b: BandId,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub threshold: f64,
}

impl NdwiOptions {
    fn config(&self) -> NdwiConfig {
        NdwiConfig { band_a: self.band_a, band_b: self.band_b, threshold: self.threshold }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset directory or manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Trained model file. Mutually exclusive with --ndwi.
    #[arg(long, conflicts_with = "ndwi", required_unless_present = "ndwi")]
    pub model: Option<PathBuf>,
    /// NDWI baseline instead of a model: `fixed` or `tuned`.
    #[arg(long, value_parser = ["fixed", "tuned"])]
    pub ndwi: Option<String>,
    #[command(flatten)]
    pub ndwi_options: NdwiOptions,
    /// Report CSV with per-image rows and an AGGREGATE row.
    #[arg(long)]
    pub out: PathBuf,
    /// Aggregate 3x3 confusion counts.
    #[arg(long)]
    pub confusion: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PATCH_SIZE)]
    pub patch_size: usize,
    #[arg(long, default_value_t = DEFAULT_OVERLAP)]
    pub overlap: usize,
}

fn eval(a: EvalArgs) -> Result<()> {
    let manifest = Manifest::open(&a.data)?;
    let segmenter: Box<dyn Segmenter> = match (&a.model, a.ndwi.as_deref()) {
        (Some(path), _) => Box::new(ModelSegmenter {
            model: load_model(path)?,
            patch_size: a.patch_size,
            overlap: a.overlap,
        }),
        (None, Some("tuned")) => Box::new(TunedNdwi {
            band_a: a.ndwi_options.band_a,
            band_b: a.ndwi_options.band_b,
            grid: default_grid(),
        }),
        (None, _) => Box::new(FixedNdwi(a.ndwi_options.config())),
    };
    let report = evaluate_dataset(segmenter.as_ref(), &manifest)?;
    write(&a.out, report.to_csv())?;
    if let Some(c) = &a.confusion {
        write(c, report.confusion_csv())?;
    }
    let w = report.water();
    println!("method: {}", segmenter.name());
    println!("images: {}", report.images.len());
    println!("water precision {:.6} recall {:.6} iou {:.6}", w.precision, w.recall, w.iou);
    Ok(())
}

#[derive(Debug, Args)]
pub struct PrCurveArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Curve CSV (threshold,precision,recall).
    #[arg(long)]
    pub out: PathBuf,
    /// Optional SVG plot.
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Number of threshold intervals over [0, 1].
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.95)]
    pub min_recall: f64,
    #[arg(long, default_value_t = DEFAULT_PATCH_SIZE)]
    pub patch_size: usize,
    #[arg(long, default_value_t = DEFAULT_OVERLAP)]
    pub overlap: usize,
}

fn pr(a: PrCurveArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let manifest = Manifest::open(&a.data)?;
    let mut probs = Vec::new();
    let mut truths = Vec::new();
    for e in &manifest.entries {
        let image = raster::read_image(&e.image)?;
        let p = scene_probabilities(&model, &image, a.patch_size, a.overlap)?;
        let plane = image.pixels();
        let water = Class::Water.channel().expect("semantic class");
        probs.push(p[water * plane..(water + 1) * plane].to_vec());
        truths.push(raster::read_mask(&e.mask)?);
    }
    let prefs: Vec<&[f32]> = probs.iter().map(Vec::as_slice).collect();
    let trefs: Vec<_> = truths.iter().collect();
    let curve = pr_curve(&prefs, &trefs, &uniform_thresholds(a.steps))?;
    write(&a.out, curve.to_csv())?;
    if let Some(s) = &a.svg {
        write(s, curve.to_svg(a.min_recall))?;
    }
    let op = operating_point(&curve, a.min_recall)?;
    let note = if op.meets_recall { "" } else { " (recall target not reached; max-recall point)" };
    println!(
        "operating point: threshold {:.4} precision {:.6} recall {:.6}{note}",
        op.point.threshold, op.point.precision, op.point.recall
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct NdwiArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Output class mask (WFL).
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub ndwi_options: NdwiOptions,
    /// Truth mask: tune the threshold on it and mark its INVALID pixels.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

fn ndwi_cmd(a: NdwiArgs) -> Result<()> {
    let image = raster::read_image(&a.image)?;
    let mut cfg = a.ndwi_options.config();
    let truth = a.truth.as_ref().map(raster::read_mask).transpose()?;
    if let Some(t) = &truth {
        let (th, iou) = tune_threshold(&image, t, cfg.band_a, cfg.band_b, &default_grid())?;
        println!("tuned threshold {th:.2} water iou {iou:.6}");
        cfg.threshold = th;
    }
    let mask = classify_fixed(&image, &cfg, truth.as_ref())?;
    raster::write_mask(&mask, &a.out)?;
    let c = mask.class_counts();
    println!("threshold {} water pixels {}", cfg.threshold, c[Class::Water as usize]);
    Ok(())
}

#[derive(Debug, Args)]
pub struct PackArgs {
    /// Class mask (WFL) to pack.
    #[arg(long)]
    pub mask: PathBuf,
    /// Raw 2-bit payload, no header.
    #[arg(long)]
    pub out: PathBuf,
    /// Source bands, for the size comparison.
    #[arg(long, default_value_t = 49)]
    pub bands: u64,
    /// Bits per source sample, for the size comparison.
    #[arg(long, default_value_t = 16)]
    pub bits: u64,
}

fn pack(a: PackArgs) -> Result<()> {
    let mask = raster::read_mask(&a.mask)?;
    let payload = pack_mask(&mask);
    write(&a.out, &payload)?;
    let raw_bits = mask.len() as u64 * a.bands * a.bits;
    println!("pixels: {}", mask.len());
    println!("packed-bytes: {}", payload.len());
    println!("raw-bytes: {}", raw_bits.div_ceil(8));
    Ok(())
}

#[derive(Debug, Args)]
pub struct BandwidthArgs {
    #[arg(long, default_value_t = 49)]
    pub bands: u64,
    /// Bits per raw sample.
    #[arg(long, default_value_t = 16)]
    pub bits: u64,
    /// Bits per flood-map pixel.
    #[arg(long, default_value_t = 2)]
    pub map_bits: u64,
}

fn bandwidth(a: BandwidthArgs) -> Result<()> {
    let spec = DownlinkSpec::new(a.bands, a.bits, a.map_bits)?;
    let r = reduction_factor(&spec);
    println!("raw-ratio: {r}");
    println!("paper-claimed: {CLAIMED_REDUCTION_FACTOR}");
    Ok(())
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    /// `scnn`, `linear`, or a model file.
    #[arg(long, default_value = "scnn")]
    pub model: String,
    #[arg(long, default_value_t = 13)]
    pub bands: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
}

fn flops(a: FlopsArgs) -> Result<()> {
    let model = model_source(&a.model, a.bands, 0)?;
    let f = model.flop_count(a.height, a.width);
    println!("parameters: {}", model.param_count());
    println!("flops: {f}");
    println!("gflops: {:.4}", f as f64 / 1e9);
    Ok(())
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// `scnn`, `linear`, or a model file.
    #[arg(long, default_value = "scnn")]
    pub model: String,
    #[arg(long, default_value_t = 4000)]
    pub width: usize,
    #[arg(long, default_value_t = 3000)]
    pub height: usize,
    #[arg(long, default_value_t = 13)]
    pub bands: usize,
    #[arg(long, default_value_t = 1)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV with one row: pixels,wall_ms,px_per_s,flops.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn bench(a: BenchArgs) -> Result<()> {
    let model = model_source(&a.model, a.bands, a.seed)?;
    let r = benchmark(&model, a.width, a.height, a.bands, a.repetitions, a.seed)?;
    let row = r.csv_row();
    if let Some(p) = &a.out {
        write(p, format!("{}\n{row}\n", floodseg::onboard::BenchResult::CSV_HEADER))?;
    }
    println!("{}", floodseg::onboard::BenchResult::CSV_HEADER);
    println!("{row}");
    println!("patches: {}", r.patches);
    println!("gflop/s: {:.2}", r.flops_per_s() / 1e9);
    println!("peak-memory-estimate-mib: {:.1}", r.peak_memory_bytes as f64 / (1024.0 * 1024.0));
    println!("threads: {}", rayon::current_num_threads());
    Ok(())
}
