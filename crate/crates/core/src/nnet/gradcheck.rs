//! Central finite-difference checks for the analytic backward passes.
//!
//! Run these in f64. Each check perturbs a sample of coordinates by `±step`
//! and compares `(L(x+h) - L(x-h)) / 2h` with the analytic gradient.

use super::activation::{relu_backward, relu_forward};
use super::conv::ConvLayer;
use super::model::Model;
use super::tensor::Tensor;
use crate::error::Result;
use crate::raster::Class;
use crate::rng::Rng;
use crate::training::{combined_loss, dice_loss, weighted_ce, LossConfig, LossValue};

pub const DEFAULT_STEP: f64 = 1e-5;
/// Gradients below this magnitude are compared absolutely.
pub const ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    /// Probes skipped because `x ± step` crosses a ReLU kink.
    pub skipped: usize,
    pub max_rel_error: f64,
    /// Where the largest error occurred.
    pub worst: String,
}

impl GradCheck {
    fn record(&mut self, what: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        if err > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = self.max_rel_error.max(err);
            self.worst = format!("{} (analytic {analytic:e}, numeric {numeric:e})", what());
        }
    }

    pub fn merge(&mut self, other: GradCheck) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ERROR_FLOOR)
}

/// `samples` distinct indices below `len` (all of them if `len <= samples`).
fn pick(rng: &mut Rng, len: usize, samples: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    if len > samples {
        rng.shuffle(&mut idx);
        idx.truncate(samples);
        idx.sort_unstable();
    }
    idx
}

fn central(f: &mut dyn FnMut(f64) -> Result<f64>, x: f64, h: f64) -> Result<f64> {
    Ok((f(x + h)? - f(x - h)?) / (2.0 * h))
}

fn random_tensor(rng: &mut Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.normal()).collect()).expect("consistent shape")
}

/// Checks a convolution's input, weight and bias gradients under the probe
/// loss `Σ r ⊙ conv(x)` with random `r`.
pub fn check_conv(layer: &ConvLayer<f64>, input: &Tensor<f64>, samples: usize, seed: u64) -> Result<GradCheck> {
    let mut rng = Rng::new(seed);
    let out = layer.forward(input)?;
    let r = random_tensor(&mut rng, out.shape().to_vec());
    let probe = |y: &Tensor<f64>| y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>();
    let grads = layer.backward(input, &r, true)?;
    let gin = grads.input.expect("requested");
    let mut report = GradCheck::default();
    let h = DEFAULT_STEP;

    for i in pick(&mut rng, input.len(), samples) {
        let mut f = |v: f64| {
            let mut x = input.clone();
            x.data_mut()[i] = v;
            Ok(probe(&layer.forward(&x)?))
        };
        let n = central(&mut f, input.data()[i], h)?;
        report.record(|| format!("conv input[{i}]"), gin.data()[i], n);
    }
    for i in pick(&mut rng, layer.weight.len(), samples) {
        let mut f = |v: f64| {
            let mut l = layer.clone();
            l.weight.data_mut()[i] = v;
            Ok(probe(&l.forward(input)?))
        };
        let n = central(&mut f, layer.weight.data()[i], h)?;
        report.record(|| format!("conv weight[{i}]"), grads.weight[i], n);
    }
    for i in 0..layer.bias.len() {
        let mut f = |v: f64| {
            let mut l = layer.clone();
            l.bias.data_mut()[i] = v;
            Ok(probe(&l.forward(input)?))
        };
        let n = central(&mut f, layer.bias.data()[i], h)?;
        report.record(|| format!("conv bias[{i}]"), grads.bias[i], n);
    }
    Ok(report)
}

/// ReLU gradient check; inputs closer than `10·step` to the kink are skipped.
pub fn check_relu(input: &Tensor<f64>, seed: u64) -> Result<GradCheck> {
    let mut rng = Rng::new(seed);
    let r = random_tensor(&mut rng, input.shape().to_vec());
    let g = relu_backward(input, &r)?;
    let h = DEFAULT_STEP;
    let mut report = GradCheck::default();
    for i in 0..input.len() {
        if input.data()[i].abs() < 10.0 * h {
            continue;
        }
        let mut f = |v: f64| {
            let mut x = input.clone();
            x.data_mut()[i] = v;
            Ok(relu_forward(&x).data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
        };
        let n = central(&mut f, input.data()[i], h)?;
        report.record(|| format!("relu[{i}]"), g.data()[i], n);
    }
    Ok(report)
}

/// Checks a loss (softmax folded in) with respect to every score.
pub fn check_loss(
    loss: &dyn Fn(&Tensor<f64>) -> Result<LossValue<f64>>,
    scores: &Tensor<f64>,
    name: &str,
) -> Result<GradCheck> {
    let analytic = loss(scores)?.grad;
    let mut report = GradCheck::default();
    for i in 0..scores.len() {
        let mut f = |v: f64| {
            let mut s = scores.clone();
            s.data_mut()[i] = v;
            Ok(loss(&s)?.loss)
        };
        let n = central(&mut f, scores.data()[i], DEFAULT_STEP)?;
        report.record(|| format!("{name} score[{i}]"), analytic.data()[i], n);
    }
    Ok(report)
}

/// Weighted CE, Dice and their combination on the same scores.
pub fn check_losses(scores: &Tensor<f64>, truth: &[Class], config: &LossConfig) -> Result<GradCheck> {
    let mut report = check_loss(&|s| weighted_ce(s, truth, &config.class_weights), scores, "ce")?;
    report.merge(check_loss(&|s| dice_loss(s, truth, config.epsilon), scores, "dice")?);
    report.merge(check_loss(&|s| combined_loss(s, truth, config), scores, "combined")?);
    Ok(report)
}

/// End-to-end check of `combined_loss(model(input))` against a sample of
/// parameters in every layer and of input values. Probes whose `±step`
/// moves any hidden ReLU input across zero are skipped and counted.
pub fn check_model(
    model: &Model<f64>,
    input: &Tensor<f64>,
    truth: &[Class],
    config: &LossConfig,
    samples_per_tensor: usize,
    seed: u64,
) -> Result<GradCheck> {
    let mut rng = Rng::new(seed);
    let mut m = model.clone();
    m.zero_grad();
    let trace = m.forward_trace(input)?;
    let value = combined_loss(&trace.output, truth, config)?;
    let gin = m.backward(&trace, &value.grad)?;
    let base = m.relu_pattern(&trace);
    // Loss at a probe, or None when the probe changes any ReLU's side.
    let loss_at = |m: &Model<f64>, x: &Tensor<f64>| -> Result<Option<f64>> {
        let t = m.forward_trace(x)?;
        if m.relu_pattern(&t) != base {
            return Ok(None);
        }
        Ok(Some(combined_loss(&t.output, truth, config)?.loss))
    };
    let h = DEFAULT_STEP;
    let mut report = GradCheck::default();
    let probe = |report: &mut GradCheck,
                     what: &dyn Fn() -> String,
                     analytic: f64,
                     f: &dyn Fn(f64) -> Result<Option<f64>>,
                     x: f64|
     -> Result<()> {
        match (f(x + h)?, f(x - h)?) {
            (Some(a), Some(b)) => report.record(what, analytic, (a - b) / (2.0 * h)),
            _ => report.skipped += 1,
        }
        Ok(())
    };

    let grads: Vec<Vec<f64>> = m.parameters().map(|p| p.grad().expect("backward ran").to_vec()).collect();
    let values: Vec<Vec<f64>> = m.parameters().map(|p| p.data().to_vec()).collect();
    for (t, (g, vals)) in grads.iter().zip(&values).enumerate() {
        for i in pick(&mut rng, vals.len(), samples_per_tensor) {
            let f = |v: f64| {
                let mut perturbed = model.clone();
                perturbed.parameters_mut().nth(t).expect("same layout").data_mut()[i] = v;
                loss_at(&perturbed, input)
            };
            probe(&mut report, &|| format!("parameter tensor {t} [{i}]"), g[i], &f, vals[i])?;
        }
    }
    for i in pick(&mut rng, input.len(), samples_per_tensor) {
        let f = |v: f64| {
            let mut x = input.clone();
            x.data_mut()[i] = v;
            loss_at(model, &x)
        };
        probe(&mut report, &|| format!("input[{i}]"), gin.data()[i], &f, input.data()[i])?;
    }
    Ok(report)
}
