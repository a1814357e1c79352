//! Inverse-frequency weighted cross-entropy, generalised Dice, and their sum.
//!
//! All losses take raw N×3×H×W scores plus flattened per-pixel truth
//! (N·H·W labels in batch, row, column order) and return the scalar loss
//! together with its exact gradient with respect to the scores. Pixels
//! labelled INVALID are skipped entirely.

use crate::error::{Error, Result};
use crate::nnet::{Scalar, Tensor, CLASS_COUNT};
use crate::raster::Class;

/// Training-split class fractions (land, water, cloud) of the reference
/// flood dataset, used for the default loss weights.
pub const REFERENCE_CLASS_FRACTIONS: [f64; 3] = [0.3719, 0.0258, 0.5635];

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// LAND, WATER, CLOUD
    pub class_weights: [f64; 3],
    pub dice_weight: f64,
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            class_weights: inverse_frequency_weights(REFERENCE_CLASS_FRACTIONS)
                .expect("reference fractions are positive"),
            dice_weight: 1.0,
            epsilon: 1e-6,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.class_weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::Argument(format!(
                "class weights must be finite and > 0, got {:?}",
                self.class_weights
            )));
        }
        if !(self.dice_weight >= 0.0 && self.dice_weight.is_finite()) {
            return Err(Error::Argument("dice weight must be >= 0".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Argument("dice epsilon must be > 0".into()));
        }
        Ok(())
    }
}

/// `w_c = 1 / fraction_c`, rescaled so the three weights average to 1.
pub fn inverse_frequency_weights(fractions: [f64; 3]) -> Result<[f64; 3]> {
    if fractions.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
        return Err(Error::Argument(format!(
            "class fractions must be > 0, got {fractions:?}"
        )));
    }
    let raw = fractions.map(|f| 1.0 / f);
    let mean = raw.iter().sum::<f64>() / 3.0;
    Ok(raw.map(|w| w / mean))
}

#[derive(Debug, Clone)]
pub struct LossValue<T> {
    pub loss: f64,
    /// Gradient with respect to the raw scores.
    pub grad: Tensor<T>,
}

struct Layout {
    n: usize,
    hw: usize,
}

fn layout<T: Scalar>(scores: &Tensor<T>, truth: &[Class]) -> Result<Layout> {
    let (n, c, h, w) = scores.dims4()?;
    if c != CLASS_COUNT || truth.len() != n * h * w {
        return Err(Error::Shape {
            expected: vec![n, CLASS_COUNT, h, w],
            actual: vec![truth.len()],
        });
    }
    if truth.iter().all(|&t| t == Class::Invalid) {
        return Err(Error::Loss("every pixel is INVALID".into()));
    }
    Ok(Layout { n, hw: h * w })
}

/// Softmax probabilities for one pixel, in f64.
fn pixel_probs<T: Scalar>(scores: &[T], base: usize, hw: usize, p: usize) -> ([f64; 3], f64) {
    let z = [0, 1, 2].map(|k| scores[base + k * hw + p].as_f64());
    let max = z[0].max(z[1]).max(z[2]);
    let e = z.map(|v| (v - max).exp());
    let sum = e[0] + e[1] + e[2];
    (e.map(|v| v / sum), max + sum.ln())
}

fn finish<T: Scalar>(scores: &Tensor<T>, loss: f64, grad: Vec<f64>, name: &str) -> Result<LossValue<T>> {
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric { op: name.to_string() });
    }
    Ok(LossValue {
        loss,
        grad: Tensor::new(scores.shape().to_vec(), grad.into_iter().map(T::of).collect())?,
    })
}

/// `-(1 / Σ w_t) Σ w_t log p_t` over valid pixels.
pub fn weighted_ce<T: Scalar>(
    scores: &Tensor<T>,
    truth: &[Class],
    weights: &[f64; 3],
) -> Result<LossValue<T>> {
    let Layout { n, hw } = layout(scores, truth)?;
    let s = scores.data();
    let mut total_weight = 0.0;
    for &t in truth {
        if let Some(ch) = t.channel() {
            total_weight += weights[ch];
        }
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0f64; s.len()];
    for b in 0..n {
        let base = b * CLASS_COUNT * hw;
        for p in 0..hw {
            let Some(tc) = truth[b * hw + p].channel() else {
                continue;
            };
            let (probs, log_z) = pixel_probs(s, base, hw, p);
            let w = weights[tc] / total_weight;
            loss -= w * (s[base + tc * hw + p].as_f64() - log_z);
            for k in 0..CLASS_COUNT {
                let delta = if k == tc { 1.0 } else { 0.0 };
                grad[base + k * hw + p] = w * (probs[k] - delta);
            }
        }
    }
    finish(scores, loss, grad, "weighted cross-entropy")
}

/// Generalised soft Dice: per-class `1 - (2Σpt + ε)/(Σp + Σt + ε)`, averaged
/// with class weights `1/(Σt)²` (zero for classes absent from the truth).
pub fn dice_loss<T: Scalar>(scores: &Tensor<T>, truth: &[Class], epsilon: f64) -> Result<LossValue<T>> {
    let Layout { n, hw } = layout(scores, truth)?;
    let s = scores.data();

    let mut probs = vec![0.0f64; s.len()];
    let mut inter = [0.0f64; 3];
    let mut pred_sum = [0.0f64; 3];
    let mut truth_sum = [0.0f64; 3];
    for b in 0..n {
        let base = b * CLASS_COUNT * hw;
        for p in 0..hw {
            let Some(tc) = truth[b * hw + p].channel() else {
                continue;
            };
            let (pr, _) = pixel_probs(s, base, hw, p);
            for k in 0..CLASS_COUNT {
                probs[base + k * hw + p] = pr[k];
                pred_sum[k] += pr[k];
            }
            inter[tc] += pr[tc];
            truth_sum[tc] += 1.0;
        }
    }

    let class_w = truth_sum.map(|t| if t > 0.0 { 1.0 / (t * t) } else { 0.0 });
    let norm: f64 = class_w.iter().sum();
    let mut loss = 0.0;
    // dL/dp for a pixel is a[c] + b[c]·t_c
    let mut coef_a = [0.0f64; 3];
    let mut coef_b = [0.0f64; 3];
    for c in 0..CLASS_COUNT {
        if class_w[c] == 0.0 {
            continue;
        }
        let denom = pred_sum[c] + truth_sum[c] + epsilon;
        let numer = 2.0 * inter[c] + epsilon;
        let wc = class_w[c] / norm;
        loss += wc * (1.0 - numer / denom);
        coef_a[c] = wc * numer / (denom * denom);
        coef_b[c] = -wc * 2.0 / denom;
    }

    let mut grad = vec![0.0f64; s.len()];
    for b in 0..n {
        let base = b * CLASS_COUNT * hw;
        for p in 0..hw {
            let Some(tc) = truth[b * hw + p].channel() else {
                continue;
            };
            let pr = [0, 1, 2].map(|k| probs[base + k * hw + p]);
            let dp = [0, 1, 2].map(|k| coef_a[k] + if k == tc { coef_b[k] } else { 0.0 });
            let dot: f64 = (0..CLASS_COUNT).map(|k| pr[k] * dp[k]).sum();
            for k in 0..CLASS_COUNT {
                grad[base + k * hw + p] = pr[k] * (dp[k] - dot);
            }
        }
    }
    finish(scores, loss, grad, "dice loss")
}

/// Weighted cross-entropy plus `dice_weight` times Dice; gradients add.
pub fn combined_loss<T: Scalar>(
    scores: &Tensor<T>,
    truth: &[Class],
    config: &LossConfig,
) -> Result<LossValue<T>> {
    let ce = weighted_ce(scores, truth, &config.class_weights)?;
    if config.dice_weight == 0.0 {
        return Ok(ce);
    }
    let dice = dice_loss(scores, truth, config.epsilon)?;
    let dw = T::of(config.dice_weight);
    let grad: Vec<T> = ce
        .grad
        .data()
        .iter()
        .zip(dice.grad.data())
        .map(|(&a, &b)| a + dw * b)
        .collect();
    Ok(LossValue {
        loss: ce.loss + config.dice_weight * dice.loss,
        grad: Tensor::new(scores.shape().to_vec(), grad)?,
    })
}
