//! Stride-1, same-padded 2-D cross-correlation via im2col + GEMM.

use rayon::prelude::*;

use super::scalar::{gemm, Scalar, View};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T = f32> {
    /// Cout×Cin×k×k
    pub weight: Tensor<T>,
    /// Cout
    pub bias: Tensor<T>,
}

/// Gradients of one convolution with respect to its input and parameters.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::Argument(format!("kernel size must be odd, got {kernel}")));
        }
        Ok(ConvLayer {
            weight: Tensor::zeros(vec![out_channels, in_channels, kernel, kernel]),
            bias: Tensor::zeros(vec![out_channels]),
        })
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let (cout, _, kh, kw) = weight.dims4()?;
        if kh != kw || kh % 2 == 0 {
            return Err(Error::Argument(format!("kernel must be square and odd, got {kh}x{kw}")));
        }
        if bias.shape() != [cout] {
            return Err(Error::Shape {
                expected: vec![cout],
                actual: bias.shape().to_vec(),
            });
        }
        Ok(ConvLayer { weight, bias })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// He-uniform weights (bound `sqrt(6 / fan_in)`), zero bias.
    pub fn init_he_uniform(&mut self, rng: &mut Rng) {
        let fan_in = (self.in_channels() * self.kernel() * self.kernel()) as f64;
        let bound = (6.0 / fan_in).sqrt();
        for w in self.weight.data_mut() {
            *w = T::of(rng.uniform_range(-bound, bound));
        }
        self.bias.data_mut().iter_mut().for_each(|b| *b = T::zero());
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
        let (n, c, h, w) = input.dims4()?;
        if c != self.in_channels() || h == 0 || w == 0 {
            return Err(Error::Shape {
                expected: vec![n, self.in_channels(), h.max(1), w.max(1)],
                actual: input.shape().to_vec(),
            });
        }
        Ok((n, c, h, w))
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, cin, h, w) = self.check_input(input)?;
        let cout = self.out_channels();
        let k = self.kernel();
        let hw = h * w;
        let kk = cin * k * k;
        let weight = self.weight.data();
        let bias = self.bias.data();
        let mut out = vec![T::zero(); n * cout * hw];
        out.par_chunks_mut(cout * hw)
            .zip(input.data().par_chunks(cin * hw))
            .for_each(|(out_n, in_n)| {
                for (plane, &b) in out_n.chunks_mut(hw).zip(bias) {
                    plane.iter_mut().for_each(|v| *v = b);
                }
                let cols;
                let cols_ref = if k == 1 {
                    in_n
                } else {
                    cols = im2col(in_n, cin, h, w, k);
                    &cols[..]
                };
                gemm(
                    weight,
                    View::row_major(cout, kk),
                    cols_ref,
                    View::row_major(kk, hw),
                    T::one(),
                    out_n,
                );
            });
        Tensor::new(vec![n, cout, h, w], out)
    }

    /// Exact gradients given the forward input and the upstream gradient.
    /// Per-item parameter gradients are reduced in batch order, so the result
    /// does not depend on the thread count.
    pub fn backward(
        &self,
        input: &Tensor<T>,
        grad_out: &Tensor<T>,
        need_input_grad: bool,
    ) -> Result<ConvGrads<T>> {
        let (n, cin, h, w) = self.check_input(input)?;
        let cout = self.out_channels();
        if grad_out.shape() != [n, cout, h, w] {
            return Err(Error::Shape {
                expected: vec![n, cout, h, w],
                actual: grad_out.shape().to_vec(),
            });
        }
        let k = self.kernel();
        let hw = h * w;
        let kk = cin * k * k;
        let weight = self.weight.data();

        let per_item: Vec<(Option<Vec<T>>, Vec<T>, Vec<T>)> = input
            .data()
            .par_chunks(cin * hw)
            .zip(grad_out.data().par_chunks(cout * hw))
            .map(|(in_n, g_n)| {
                let cols;
                let cols_ref = if k == 1 {
                    in_n
                } else {
                    cols = im2col(in_n, cin, h, w, k);
                    &cols[..]
                };
                let mut dw = vec![T::zero(); cout * kk];
                gemm(
                    g_n,
                    View::row_major(cout, hw),
                    cols_ref,
                    View::row_major(kk, hw).transposed(),
                    T::zero(),
                    &mut dw,
                );
                let db: Vec<T> = g_n.chunks(hw).map(|p| p.iter().copied().sum()).collect();
                let din = need_input_grad.then(|| {
                    let mut dcols = vec![T::zero(); kk * hw];
                    gemm(
                        weight,
                        View::row_major(cout, kk).transposed(),
                        g_n,
                        View::row_major(cout, hw),
                        T::zero(),
                        &mut dcols,
                    );
                    if k == 1 {
                        dcols
                    } else {
                        col2im(&dcols, cin, h, w, k)
                    }
                });
                (din, dw, db)
            })
            .collect();

        let mut weight_grad = vec![T::zero(); cout * kk];
        let mut bias_grad = vec![T::zero(); cout];
        let mut input_grad = need_input_grad.then(|| Vec::with_capacity(n * cin * hw));
        for (din, dw, db) in per_item {
            for (acc, v) in weight_grad.iter_mut().zip(dw) {
                *acc += v;
            }
            for (acc, v) in bias_grad.iter_mut().zip(db) {
                *acc += v;
            }
            if let (Some(all), Some(d)) = (input_grad.as_mut(), din) {
                all.extend_from_slice(&d);
            }
        }
        Ok(ConvGrads {
            input: input_grad
                .map(|d| Tensor::new(vec![n, cin, h, w], d))
                .transpose()?,
            weight: weight_grad,
            bias: bias_grad,
        })
    }
}

/// Unfolds a C×H×W image into a (C·k·k)×(H·W) patch matrix, zero padded.
fn im2col<T: Scalar>(input: &[T], c: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut cols = vec![T::zero(); c * k * k * hw];
    for ci in 0..c {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut cols[((ci * k + ki) * k + kj) * hw..][..hw];
                let dy = ki as isize - pad;
                let dx = kj as isize - pad;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = sy as usize * w;
                    let sx0 = (x0 as isize + dx) as usize;
                    row[y * w + x0..y * w + x1]
                        .copy_from_slice(&plane[src + sx0..src + sx0 + (x1 - x0)]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch-matrix gradients back to the image.
fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut out = vec![T::zero(); c * hw];
    for ci in 0..c {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ki in 0..k {
            for kj in 0..k {
                let row = &cols[((ci * k + ki) * k + kj) * hw..][..hw];
                let dy = ki as isize - pad;
                let dx = kj as isize - pad;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = sy as usize * w;
                    let sx0 = (x0 as isize + dx) as usize;
                    for (d, &s) in plane[dst + sx0..dst + sx0 + (x1 - x0)]
                        .iter_mut()
                        .zip(&row[y * w + x0..y * w + x1])
                    {
                        *d += s;
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct six-loop cross-correlation, used as the forward oracle.
    fn naive_conv(input: &Tensor<f64>, layer: &ConvLayer<f64>) -> Vec<f64> {
        let (n, cin, h, w) = input.dims4().unwrap();
        let (cout, k) = (layer.out_channels(), layer.kernel());
        let p = (k / 2) as isize;
        let x = input.data();
        let wt = layer.weight.data();
        let mut out = vec![0.0; n * cout * h * w];
        for b in 0..n {
            for o in 0..cout {
                for y in 0..h {
                    for xx in 0..w {
                        let mut acc = layer.bias.data()[o];
                        for i in 0..cin {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let sy = y as isize + ki as isize - p;
                                    let sx = xx as isize + kj as isize - p;
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                        continue;
                                    }
                                    acc += wt[((o * cin + i) * k + ki) * k + kj]
                                        * x[((b * cin + i) * h + sy as usize) * w + sx as usize];
                                }
                            }
                        }
                        out[((b * cout + o) * h + y) * w + xx] = acc;
                    }
                }
            }
        }
        out
    }

    fn random_tensor(shape: Vec<usize>, rng: &mut Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn ones_kernel_counts_neighbours() {
        let mut layer = ConvLayer::<f32>::zeros(1, 1, 3).unwrap();
        layer.weight.data_mut().iter_mut().for_each(|v| *v = 1.0);
        let input = Tensor::new(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let out = layer.forward(&input).unwrap();
        assert_eq!(out.data(), &[4., 6., 4., 6., 9., 6., 4., 6., 4.]);
    }

    #[test]
    fn identity_kernel() {
        let mut layer = ConvLayer::<f32>::zeros(1, 1, 3).unwrap();
        layer.weight.data_mut()[4] = 1.0;
        let data: Vec<f32> = (0..20).map(|v| v as f32 * 0.25 - 1.0).collect();
        let input = Tensor::new(vec![1, 1, 4, 5], data.clone()).unwrap();
        assert_eq!(layer.forward(&input).unwrap().data(), &data[..]);
    }

    #[test]
    fn forward_matches_naive() {
        let mut rng = Rng::new(11);
        for &(k, h, w) in &[(1, 3, 4), (3, 5, 4), (5, 6, 7), (3, 1, 1), (3, 2, 9)] {
            let mut layer = ConvLayer::<f64>::zeros(3, 2, k).unwrap();
            layer.weight = random_tensor(vec![2, 3, k, k], &mut rng);
            layer.bias = random_tensor(vec![2], &mut rng);
            let input = random_tensor(vec![2, 3, h, w], &mut rng);
            let got = layer.forward(&input).unwrap();
            let want = naive_conv(&input, &layer);
            for (g, w) in got.data().iter().zip(&want) {
                assert!((g - w).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let layer = ConvLayer::<f32>::zeros(2, 1, 3).unwrap();
        let input = Tensor::zeros(vec![1, 3, 4, 4]);
        match layer.forward(&input) {
            Err(Error::Shape { expected, actual }) => {
                assert_eq!(expected[1], 2);
                assert_eq!(actual, vec![1, 3, 4, 4]);
            }
            other => panic!("{other:?}"),
        }
        assert!(ConvLayer::<f32>::zeros(2, 1, 2).is_err());
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let mut rng = Rng::new(5);
        let (c, h, w, k) = (2, 4, 5, 3);
        let x: Vec<f64> = (0..c * h * w).map(|_| rng.normal()).collect();
        let y: Vec<f64> = (0..c * k * k * h * w).map(|_| rng.normal()).collect();
        let lhs: f64 = im2col(&x, c, h, w, k).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&y, c, h, w, k)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
