use super::activation::{relu_backward, relu_forward, softmax};
use super::conv::ConvLayer;
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::raster::{Class, ClassMask, MultiBandImage};
use crate::rng::Rng;

/// Number of semantic output classes (LAND, WATER, CLOUD).
pub const CLASS_COUNT: usize = 3;
/// Hidden widths of the default SCNN: 229,379 parameters with 13 input bands.
pub const DEFAULT_SCNN_WIDTHS: [usize; 3] = [64, 128, 128];

const SOFTMAX_OPS_PER_ELEMENT: u64 = 5;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T = f32> {
    Conv(ConvLayer<T>),
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// One 1×1 convolution: a per-pixel linear classifier.
    Linear,
    /// Stack of 3×3 convolutions with ReLU, closed by a 1×1 classifier.
    Scnn,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(ModelKind::Linear),
            "scnn" => Ok(ModelKind::Scnn),
            other => Err(Error::Argument(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Sequential fully-convolutional classifier producing N×3×H×W scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T = f32> {
    kind: ModelKind,
    layers: Vec<Layer<T>>,
}

/// Per-layer inputs recorded during a forward pass, consumed by backward.
#[derive(Debug)]
pub struct Trace<T> {
    inputs: Vec<Tensor<T>>,
    pub output: Tensor<T>,
}

impl<T: Scalar> Model<T> {
    pub fn linear(bands: usize) -> Result<Self> {
        Self::from_layers(vec![Layer::Conv(ConvLayer::zeros(bands, CLASS_COUNT, 1)?)])
    }

    pub fn scnn(bands: usize) -> Result<Self> {
        Self::scnn_with_widths(bands, &DEFAULT_SCNN_WIDTHS)
    }

    pub fn scnn_with_widths(bands: usize, widths: &[usize]) -> Result<Self> {
        let mut layers = Vec::new();
        let mut cin = bands;
        for &wd in widths {
            layers.push(Layer::Conv(ConvLayer::zeros(cin, wd, 3)?));
            layers.push(Layer::Relu);
            cin = wd;
        }
        layers.push(Layer::Conv(ConvLayer::zeros(cin, CLASS_COUNT, 1)?));
        Self::from_layers(layers)
    }

    pub fn new(kind: ModelKind, bands: usize) -> Result<Self> {
        match kind {
            ModelKind::Linear => Self::linear(bands),
            ModelKind::Scnn => Self::scnn(bands),
        }
    }

    /// Validates a layer sequence: starts and ends with a convolution,
    /// channel counts chain, and the last layer emits [`CLASS_COUNT`] scores.
    pub fn from_layers(layers: Vec<Layer<T>>) -> Result<Self> {
        let convs: Vec<&ConvLayer<T>> = layers
            .iter()
            .filter_map(|l| match l {
                Layer::Conv(c) => Some(c),
                Layer::Relu => None,
            })
            .collect();
        match (layers.first(), layers.last()) {
            (Some(Layer::Conv(_)), Some(Layer::Conv(last))) => {
                if last.out_channels() != CLASS_COUNT {
                    return Err(Error::Argument(format!(
                        "final layer must emit {CLASS_COUNT} classes, emits {}",
                        last.out_channels()
                    )));
                }
            }
            _ => return Err(Error::Argument("model must start and end with a convolution".into())),
        }
        for pair in convs.windows(2) {
            if pair[0].out_channels() != pair[1].in_channels() {
                return Err(Error::Argument(format!(
                    "channel chain broken: {} -> {}",
                    pair[0].out_channels(),
                    pair[1].in_channels()
                )));
            }
        }
        let kind = if convs.len() == 1 && convs[0].kernel() == 1 {
            ModelKind::Linear
        } else {
            ModelKind::Scnn
        };
        Ok(Model { kind, layers })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn input_bands(&self) -> usize {
        match &self.layers[0] {
            Layer::Conv(c) => c.in_channels(),
            Layer::Relu => unreachable!("validated in from_layers"),
        }
    }

    pub fn convs(&self) -> impl Iterator<Item = &ConvLayer<T>> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Conv(c) => Some(c),
            Layer::Relu => None,
        })
    }

    pub fn convs_mut(&mut self) -> impl Iterator<Item = &mut ConvLayer<T>> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Conv(c) => Some(c),
            Layer::Relu => None,
        })
    }

    /// Weight and bias tensors in layer order.
    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.convs_mut()
            .flat_map(|c| [&mut c.weight, &mut c.bias].into_iter())
    }

    pub fn parameters(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.convs().flat_map(|c| [&c.weight, &c.bias].into_iter())
    }

    /// He-uniform initialisation of every convolution from one seed.
    pub fn init_he_uniform(&mut self, seed: u64) {
        let mut rng = Rng::new(seed);
        for conv in self.convs_mut() {
            conv.init_he_uniform(&mut rng);
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    pub fn param_count(&self) -> usize {
        self.convs().map(ConvLayer::param_count).sum()
    }

    /// Floating-point operations for one H×W input: 2 per multiply-accumulate
    /// in convolutions, 1 per ReLU element, 5 per softmax element.
    pub fn flop_count(&self, height: usize, width: usize) -> u64 {
        let hw = (height * width) as u64;
        let mut flops = 0u64;
        let mut channels = self.input_bands() as u64;
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => {
                    let k = c.kernel() as u64;
                    flops += 2 * hw * c.in_channels() as u64 * c.out_channels() as u64 * k * k;
                    channels = c.out_channels() as u64;
                }
                Layer::Relu => flops += hw * channels,
            }
        }
        flops + SOFTMAX_OPS_PER_ELEMENT * hw * CLASS_COUNT as u64
    }

    fn check_bands(&self, input: &Tensor<T>) -> Result<()> {
        let (n, c, h, w) = input.dims4()?;
        if c != self.input_bands() {
            return Err(Error::Shape {
                expected: vec![n, self.input_bands(), h, w],
                actual: input.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn apply(&self, index: usize, x: &Tensor<T>) -> Result<Tensor<T>> {
        let out = match &self.layers[index] {
            Layer::Conv(c) => c.forward(x)?,
            Layer::Relu => relu_forward(x),
        };
        out.check_finite(&format!("layer {index} forward"))?;
        Ok(out)
    }

    /// Raw class scores.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_bands(input)?;
        let mut x = self.apply(0, input)?;
        for i in 1..self.layers.len() {
            x = self.apply(i, &x)?;
        }
        Ok(x)
    }

    pub fn forward_trace(&self, input: &Tensor<T>) -> Result<Trace<T>> {
        self.check_bands(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for i in 0..self.layers.len() {
            let y = self.apply(i, &x)?;
            inputs.push(std::mem::replace(&mut x, y));
        }
        Ok(Trace { inputs, output: x })
    }

    /// Which ReLU inputs of a traced pass are positive.
    pub(crate) fn relu_pattern(&self, trace: &Trace<T>) -> Vec<bool> {
        self.layers
            .iter()
            .zip(&trace.inputs)
            .filter(|(l, _)| matches!(l, Layer::Relu))
            .flat_map(|(_, x)| x.data().iter().map(|&v| v > T::zero()))
            .collect()
    }

    /// Backpropagates `grad_scores` and adds parameter gradients into each
    /// tensor's gradient buffer. Returns the gradient w.r.t. the input.
    pub fn backward(&mut self, trace: &Trace<T>, grad_scores: &Tensor<T>) -> Result<Tensor<T>> {
        if grad_scores.shape() != trace.output.shape() {
            return Err(Error::Shape {
                expected: trace.output.shape().to_vec(),
                actual: grad_scores.shape().to_vec(),
            });
        }
        let mut g = grad_scores.clone();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            let input = &trace.inputs[i];
            g = match layer {
                Layer::Conv(conv) => {
                    let grads = conv.backward(input, &g, true)?;
                    conv.weight.accumulate_grad(&grads.weight);
                    conv.bias.accumulate_grad(&grads.bias);
                    grads.input.expect("input grad requested")
                }
                Layer::Relu => relu_backward(input, &g)?,
            };
            g.check_finite(&format!("layer {i} backward"))?;
        }
        Ok(g)
    }

    pub fn probabilities(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        softmax(&self.forward(input)?)
    }

    /// Per-pixel argmax class for a single patch. Ties go to the lowest class
    /// code; INVALID is never produced.
    pub fn predict(&self, patch: &MultiBandImage) -> Result<ClassMask> {
        let probs = self.probabilities(&image_tensor(patch)?)?;
        let probs: Vec<f32> = probs.data().iter().map(|v| v.as_f64() as f32).collect();
        argmax_mask(&probs, patch.width(), patch.height())
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            kind: self.kind,
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Conv(c) => Layer::Conv(ConvLayer {
                        weight: c.weight.cast(),
                        bias: c.bias.cast(),
                    }),
                    Layer::Relu => Layer::Relu,
                })
                .collect(),
        }
    }
}

/// 1×C×H×W tensor from a band-sequential image.
pub fn image_tensor<T: Scalar>(image: &MultiBandImage) -> Result<Tensor<T>> {
    batch_tensor(&[image])
}

pub fn batch_tensor<T: Scalar>(images: &[&MultiBandImage]) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Argument("empty batch".into()))?;
    let (c, h, w) = (first.band_count(), first.height(), first.width());
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    for img in images {
        if (img.band_count(), img.height(), img.width()) != (c, h, w) {
            return Err(Error::Shape {
                expected: vec![c, h, w],
                actual: vec![img.band_count(), img.height(), img.width()],
            });
        }
        data.extend(img.data().iter().map(|&v| T::of(v as f64)));
    }
    Tensor::new(vec![images.len(), c, h, w], data)
}

/// Argmax over a 3×H×W probability (or score) map.
pub fn argmax_mask(scores: &[f32], width: usize, height: usize) -> Result<ClassMask> {
    let hw = width * height;
    if scores.len() != CLASS_COUNT * hw {
        return Err(Error::Shape {
            expected: vec![CLASS_COUNT, height, width],
            actual: vec![scores.len()],
        });
    }
    let labels = (0..hw)
        .map(|p| {
            let mut best = 0;
            for k in 1..CLASS_COUNT {
                if scores[k * hw + p] > scores[best * hw + p] {
                    best = k;
                }
            }
            Class::from_channel(best)
        })
        .collect();
    ClassMask::new(width, height, labels)
}
