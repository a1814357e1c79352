use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let data = input.data().iter().map(|&v| v.max(T::zero())).collect();
    Tensor::new(input.shape().to_vec(), data).expect("same shape")
}

/// Gates the upstream gradient by `x > 0`; the subgradient at 0 is 0.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != grad_out.shape() {
        return Err(Error::Shape {
            expected: input.shape().to_vec(),
            actual: grad_out.shape().to_vec(),
        });
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// Softmax over the class axis (axis 1) of an N×C×H×W score tensor,
/// max-subtracted so large scores cannot overflow.
pub fn softmax<T: Scalar>(scores: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = scores.dims4()?;
    let hw = h * w;
    let src = scores.data();
    let mut out = vec![T::zero(); src.len()];
    for b in 0..n {
        let base = b * c * hw;
        for p in 0..hw {
            let mut max = T::neg_infinity();
            for k in 0..c {
                max = max.max(src[base + k * hw + p]);
            }
            let mut sum = T::zero();
            for k in 0..c {
                let e = (src[base + k * hw + p] - max).exp();
                out[base + k * hw + p] = e;
                sum += e;
            }
            for k in 0..c {
                out[base + k * hw + p] = out[base + k * hw + p] / sum;
            }
        }
    }
    Tensor::new(scores.shape().to_vec(), out)
}
