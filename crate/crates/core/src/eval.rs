//! Water-class evaluation: confusion matrices, precision/recall/IoU, PR
//! curves over the water probability and dataset-level reports.
//!
//! Every ratio with a zero denominator is reported as 0. Dataset aggregates
//! pool pixel counts over all images rather than averaging per image.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{self, Class, ClassMask, MultiBandImage};
use crate::synth::Manifest;

/// 3×3 pixel counts over valid pixels; rows are truth, columns prediction,
/// both indexed by score channel (LAND, WATER, CLOUD).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (row, o) in self.counts.iter_mut().zip(&other.counts) {
            for (c, v) in row.iter_mut().zip(o) {
                *c += v;
            }
        }
    }

    pub fn get(&self, truth: Class, pred: Class) -> u64 {
        match (truth.channel(), pred.channel()) {
            (Some(t), Some(p)) => self.counts[t][p],
            _ => 0,
        }
    }
}

/// Tallies `pred` against `truth`, skipping pixels whose truth is INVALID.
pub fn confusion(pred: &ClassMask, truth: &ClassMask) -> Result<ConfusionMatrix> {
    pred.check_same_dims(truth.width(), truth.height())?;
    let mut m = ConfusionMatrix::default();
    for (i, (&p, &t)) in pred.labels().iter().zip(truth.labels()).enumerate() {
        let Some(tc) = t.channel() else { continue };
        let pc = p.channel().ok_or_else(|| {
            Error::Evaluation(format!(
                "prediction is INVALID at ({}, {}) where truth is valid",
                i / truth.width(),
                i % truth.width()
            ))
        })?;
        m.counts[tc][pc] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub iou: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// One-vs-rest precision, recall and IoU for `class`.
pub fn metrics(m: &ConfusionMatrix, class: Class) -> Metrics {
    let Some(k) = class.channel() else {
        return Metrics::default();
    };
    let tp = m.counts[k][k];
    let fp: u64 = (0..3).filter(|&t| t != k).map(|t| m.counts[t][k]).sum();
    let fn_: u64 = (0..3).filter(|&p| p != k).map(|p| m.counts[k][p]).sum();
    Metrics {
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        iou: ratio(tp, tp + fp + fn_),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Water-class precision/recall at strictly increasing thresholds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

/// `steps + 1` evenly spaced thresholds over [0, 1].
pub fn uniform_thresholds(steps: usize) -> Vec<f64> {
    let steps = steps.max(1);
    (0..=steps).map(|i| i as f64 / steps as f64).collect()
}

/// A pixel counts as WATER iff its water probability is `>= τ`. Counts are
/// pooled over every (probability map, truth) pair.
pub fn pr_curve(water_probs: &[&[f32]], truths: &[&ClassMask], thresholds: &[f64]) -> Result<PrCurve> {
    if thresholds.is_empty() {
        return Err(Error::Argument("no thresholds given".into()));
    }
    if water_probs.len() != truths.len() {
        return Err(Error::Argument(format!(
            "{} probability maps but {} truth masks",
            water_probs.len(),
            truths.len()
        )));
    }
    let mut ts: Vec<f64> = thresholds.to_vec();
    if ts.iter().any(|t| t.is_nan()) {
        return Err(Error::Argument("NaN threshold".into()));
    }
    ts.sort_by(f64::total_cmp);
    ts.dedup();

    // tp[i] / fp[i]: pixels at or above threshold i
    let mut tp = vec![0u64; ts.len()];
    let mut fp = vec![0u64; ts.len()];
    let mut positives = 0u64;
    for (probs, truth) in water_probs.iter().zip(truths) {
        if probs.len() != truth.len() {
            return Err(Error::Shape {
                expected: vec![truth.height(), truth.width()],
                actual: vec![probs.len()],
            });
        }
        for (&p, &t) in probs.iter().zip(truth.labels()) {
            if t == Class::Invalid {
                continue;
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Argument(format!("probability {p} outside [0, 1]")));
            }
            let water = t == Class::Water;
            positives += water as u64;
            // number of thresholds <= p
            let reached = ts.partition_point(|&th| th <= p as f64);
            let counter = if water { &mut tp } else { &mut fp };
            counter[..reached].iter_mut().for_each(|c| *c += 1);
        }
    }
    let points = ts
        .iter()
        .enumerate()
        .map(|(i, &threshold)| PrPoint {
            threshold,
            precision: ratio(tp[i], tp[i] + fp[i]),
            recall: ratio(tp[i], positives),
        })
        .collect();
    Ok(PrCurve { points })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub point: PrPoint,
    /// False when no point reached the requested recall and the max-recall
    /// point was returned instead.
    pub meets_recall: bool,
}

/// Highest-precision point with recall `>= min_recall` (ties: higher recall,
/// then lower threshold). Falls back to the highest-recall point.
pub fn operating_point(curve: &PrCurve, min_recall: f64) -> Result<OperatingPoint> {
    let better = |a: &PrPoint, b: &PrPoint, key: fn(&PrPoint) -> (f64, f64)| {
        let (ka, kb) = (key(a), key(b));
        ka.0 > kb.0 || (ka.0 == kb.0 && (ka.1 > kb.1 || (ka.1 == kb.1 && a.threshold < b.threshold)))
    };
    let pick = |pts: &mut dyn Iterator<Item = &PrPoint>, key: fn(&PrPoint) -> (f64, f64)| {
        pts.fold(None::<PrPoint>, |best, p| match best {
            Some(b) if !better(p, &b, key) => Some(b),
            _ => Some(*p),
        })
    };
    if curve.points.is_empty() {
        return Err(Error::Argument("empty PR curve".into()));
    }
    let qualifying = pick(
        &mut curve.points.iter().filter(|p| p.recall >= min_recall),
        |p| (p.precision, p.recall),
    );
    Ok(match qualifying {
        Some(point) => OperatingPoint { point, meets_recall: true },
        None => OperatingPoint {
            point: pick(&mut curve.points.iter(), |p| (p.recall, p.precision)).expect("non-empty"),
            meets_recall: false,
        },
    })
}

impl PrCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,precision,recall\n");
        for p in &self.points {
            writeln!(out, "{:.6},{:.6},{:.6}", p.threshold, p.precision, p.recall).unwrap();
        }
        out
    }

    /// Line plot of precision against recall with a marker at `marker_recall`.
    pub fn to_svg(&self, marker_recall: f64) -> String {
        let (w, h, m) = (480.0, 360.0, 40.0);
        let x = |r: f64| m + r * (w - 2.0 * m);
        let y = |p: f64| h - m - p * (h - 2.0 * m);
        let mut path = String::new();
        for (i, p) in self.points.iter().enumerate() {
            let cmd = if i == 0 { 'M' } else { 'L' };
            write!(path, "{cmd}{:.2},{:.2} ", x(p.recall), y(p.precision)).unwrap();
        }
        let mut svg = String::new();
        writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#).unwrap();
        writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
        writeln!(
            svg,
            r#"<path d="M{m},{m} L{m},{b} L{r},{b}" fill="none" stroke="black"/>"#,
            b = h - m,
            r = w - m
        )
        .unwrap();
        writeln!(
            svg,
            r#"<line x1="{mx:.2}" y1="{m}" x2="{mx:.2}" y2="{b}" stroke="red" stroke-dasharray="4 3"/>"#,
            mx = x(marker_recall),
            b = h - m
        )
        .unwrap();
        writeln!(svg, r#"<path d="{}" fill="none" stroke="blue" stroke-width="2"/>"#, path.trim_end()).unwrap();
        writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">recall</text>"#, w / 2.0, h - 10.0).unwrap();
        writeln!(
            svg,
            r#"<text x="12" y="{}" font-size="12" transform="rotate(-90 12 {})">precision</text>"#,
            h / 2.0,
            h / 2.0
        )
        .unwrap();
        svg.push_str("</svg>\n");
        svg
    }
}

/// Anything that maps a scene to a class mask.
pub trait Segmenter: Sync {
    fn name(&self) -> String;

    fn segment(&self, image: &MultiBandImage) -> Result<ClassMask>;

    /// Used during evaluation. Oracle baselines override this to look at
    /// the truth; everything else segments blind.
    fn segment_with_truth(&self, image: &MultiBandImage, _truth: &ClassMask) -> Result<ClassMask> {
        self.segment(image)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageResult {
    pub id: String,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub images: Vec<ImageResult>,
    pub aggregate: ConfusionMatrix,
}

impl EvalReport {
    pub fn from_images(images: Vec<ImageResult>) -> Self {
        let mut aggregate = ConfusionMatrix::default();
        for r in &images {
            aggregate.merge(&r.confusion);
        }
        EvalReport { images, aggregate }
    }

    pub fn water(&self) -> Metrics {
        metrics(&self.aggregate, Class::Water)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("image_id,precision_water,recall_water,iou_water\n");
        let row = |out: &mut String, id: &str, m: Metrics| {
            writeln!(out, "{id},{:.6},{:.6},{:.6}", m.precision, m.recall, m.iou).unwrap();
        };
        for r in &self.images {
            row(&mut out, &r.id, metrics(&r.confusion, Class::Water));
        }
        row(&mut out, "AGGREGATE", self.water());
        out
    }

    /// Aggregate confusion counts with class names, for raw export.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("truth,pred_land,pred_water,pred_cloud\n");
        for (k, row) in self.aggregate.counts.iter().enumerate() {
            let name = format!("{:?}", Class::from_channel(k)).to_lowercase();
            writeln!(out, "{name},{},{},{}", row[0], row[1], row[2]).unwrap();
        }
        out
    }
}

/// Segments every manifest scene and tallies it against its mask. Images
/// are processed in parallel; the report keeps manifest order.
pub fn evaluate_dataset(segmenter: &dyn Segmenter, manifest: &Manifest) -> Result<EvalReport> {
    let images = manifest
        .entries
        .par_iter()
        .map(|e| {
            let image = raster::read_image(&e.image)?;
            let truth = raster::read_mask(&e.mask)?;
            truth.check_same_dims(image.width(), image.height())?;
            let pred = segmenter.segment_with_truth(&image, &truth)?;
            Ok(ImageResult {
                id: e.id(),
                confusion: confusion(&pred, &truth)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_images(images))
}
