//! Dense `f64` tensors with a reverse-mode gradient tape.
//!
//! [`Tensor`] is a plain value: a shape and row-major data. Differentiable
//! computation happens on a [`Tape`], which records every operation applied
//! to its [`Var`] handles and replays them in reverse on [`Tape::backward`].
//!
//! ```
//! use lowlight::tensor::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.param(&Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
//! let loss = x.mul(x).unwrap().sum();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

pub(crate) mod kernels;
mod tape;

pub use tape::{Gradients, Tape, Var};

use crate::error::{Error, Result};

/// N-dimensional row-major array of `f64`.
///
/// Images and feature maps use the `[batch, channels, height, width]` layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// A zero-dimensional tensor holding one value.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::shape(format!(
                "expected a single element, shape is {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Splits a rank-4 shape into `(batch, channels, height, width)`.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => Err(Error::shape(format!(
                "expected [batch, channels, height, width], got {:?}",
                self.shape
            ))),
        }
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn clamp01(&self) -> Self {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Extracts channel `c` of batch item 0 as a `[h, w]` plane slice.
    pub fn plane(&self, c: usize) -> Result<&[f64]> {
        let (_, ch, h, w) = self.dims4()?;
        if c >= ch {
            return Err(Error::shape(format!("channel {c} out of range for {ch}")));
        }
        Ok(&self.data[c * h * w..(c + 1) * h * w])
    }

    /// Spatial crop of a rank-4 tensor.
    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<Self> {
        let (b, c, h, w) = self.dims4()?;
        if y0 + height > h || x0 + width > w {
            return Err(Error::shape(format!(
                "crop {height}x{width} at ({y0},{x0}) exceeds {h}x{w}"
            )));
        }
        let mut data = Vec::with_capacity(b * c * height * width);
        for plane in self.data.chunks_exact(h * w) {
            for row in plane.chunks_exact(w).skip(y0).take(height) {
                data.extend_from_slice(&row[x0..x0 + width]);
            }
        }
        Self::new(vec![b, c, height, width], data)
    }

    /// Rearranges `[B, C*r*r, H, W]` into `[B, C, H*r, W*r]`.
    pub fn pixel_shuffle(&self, r: usize) -> Result<Self> {
        let (b, c, h, w) = self.dims4()?;
        let out_c = shuffle_out_channels(c, r)?;
        let mut out = vec![0.0; self.len()];
        kernels::pixel_shuffle(&self.data, &mut out, b, out_c, h, w, r);
        Self::new(vec![b, out_c, h * r, w * r], out)
    }

    /// Inverse of [`Tensor::pixel_shuffle`].
    pub fn pixel_unshuffle(&self, r: usize) -> Result<Self> {
        let (b, c, h, w) = self.dims4()?;
        if r == 0 || h % r != 0 || w % r != 0 {
            return Err(Error::shape(format!(
                "extents {h}x{w} are not divisible by factor {r}"
            )));
        }
        let mut out = vec![0.0; self.len()];
        kernels::pixel_unshuffle(&self.data, &mut out, b, c, h / r, w / r, r);
        Self::new(vec![b, c * r * r, h / r, w / r], out)
    }

    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }
}

pub(crate) fn shuffle_out_channels(c: usize, r: usize) -> Result<usize> {
    if r == 0 || !c.is_multiple_of(r * r) {
        return Err(Error::shape(format!(
            "{c} channels are not divisible by r^2 = {}",
            r * r
        )));
    }
    Ok(c / (r * r))
}
