//! Complex-valued layers built from pairs of real tensors.
//!
//! A complex activation or kernel is stored as separate real and imaginary
//! parts, so every complex operation lowers to real tensor ops that the tape
//! already knows how to differentiate. Pooling selects by amplitude and
//! applies the same element choice to both parts.

use crate::error::{DasError, Result};
use crate::tensor::{conv, Tape, Tensor};
use rand::Rng;
use std::sync::Arc;

#[derive(Debug, Clone)]
pub struct ComplexTensor {
    pub re: Tensor,
    pub im: Tensor,
}

impl ComplexTensor {
    pub fn new(re: Tensor, im: Tensor) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(DasError::Dimension(format!(
                "complex parts must share a shape, got {:?} and {:?}",
                re.shape(),
                im.shape()
            )));
        }
        Ok(Self { re, im })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            re: Tensor::zeros(shape),
            im: Tensor::zeros(shape),
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    /// Row gather along the first axis, applied to both parts.
    pub fn select_rows(&self, idx: &[usize]) -> ComplexTensor {
        ComplexTensor {
            re: self.re.select_rows(idx),
            im: self.im.select_rows(idx),
        }
    }

    /// Glorot-style uniform draw with each part scaled by 1/sqrt(2) so the
    /// expected complex magnitude matches the real initialization. Draws the
    /// real part fully, then the imaginary part.
    pub fn glorot<R: Rng>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt() / 2f64.sqrt();
        let re = Tensor::uniform(shape, -bound, bound, rng);
        let im = Tensor::uniform(shape, -bound, bound, rng);
        Self { re, im }
    }
}

/// Complex convolution via four real convolutions:
/// (xr + i xi) * (kr + i ki) = (xr*kr - xi*ki) + i (xr*ki + xi*kr).
/// The complex bias joins each part once.
pub fn cconv2d_same(
    tape: &mut Tape,
    x: &ComplexTensor,
    kernel: &ComplexTensor,
    bias: &ComplexTensor,
) -> Result<ComplexTensor> {
    let cout = kernel.shape()[0];
    let zero = Tensor::zeros(&[cout]);
    let rr = tape.conv2d_same(&x.re, &kernel.re, &bias.re)?;
    let ii = tape.conv2d_same(&x.im, &kernel.im, &zero)?;
    let ri = tape.conv2d_same(&x.re, &kernel.im, &bias.im)?;
    let ir = tape.conv2d_same(&x.im, &kernel.re, &zero)?;
    let re = tape.sub(&rr, &ii)?;
    let im = tape.add(&ri, &ir)?;
    Ok(ComplexTensor { re, im })
}

/// ReLU applied to each part independently.
pub fn crelu(tape: &mut Tape, x: &ComplexTensor) -> ComplexTensor {
    ComplexTensor {
        re: tape.relu(&x.re),
        im: tape.relu(&x.im),
    }
}

/// Elementwise magnitude sqrt(re^2 + im^2 + 1e-12), differentiable in both
/// parts. The small offset keeps the gradient finite at the origin.
pub fn camplitude(tape: &mut Tape, x: &ComplexTensor) -> Result<Tensor> {
    tape.amplitude(&x.re, &x.im)
}

/// 2x2/2 max pooling driven by amplitude: the element with the largest
/// magnitude in each window is kept, and the same position is gathered from
/// both parts so phase information survives the pooling.
pub fn cmaxpool2x2(tape: &mut Tape, x: &ComplexTensor) -> Result<ComplexTensor> {
    let xs = x.shape().to_vec();
    if xs.len() != 4 {
        return Err(DasError::Dimension(format!(
            "complex pooling expects 4-D input, got {xs:?}"
        )));
    }
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    if h < 2 || w < 2 {
        return Err(DasError::Dimension(format!(
            "complex pooling needs spatial extents >= 2, got {h}x{w}"
        )));
    }
    let rd = x.re.data();
    let id = x.im.data();
    let amp: Vec<f64> = rd
        .iter()
        .zip(id.iter())
        .map(|(&a, &b)| (a * a + b * b + 1e-12).sqrt())
        .collect();
    let (_, idx) = conv::maxpool_indices(&amp, n, c, h, w);
    let idx = Arc::new(idx);
    let out_shape = [n, c, h / 2, w / 2];
    let re = tape.pool_select(&x.re, &idx, &out_shape)?;
    let im = tape.pool_select(&x.im, &idx, &out_shape)?;
    Ok(ComplexTensor { re, im })
}
