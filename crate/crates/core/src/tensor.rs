//! Dense row-major tensors over a flat buffer.
//!
//! Deliberately minimal: the network kernels index into raw slices for speed,
//! so this type only carries shape bookkeeping plus the handful of
//! elementwise helpers the rest of the crate shares.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S = f32> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<S>) -> Self {
        let shape = shape.into();
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length must match shape product"
        );
        Self { shape, data }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![S::ZERO; n],
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: S) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> S) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: (0..n).map(|i| f(i)).collect(),
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Reinterpret the buffer under a new shape with the same element count.
    pub fn reshaped(mut self, shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape;
        self
    }

    /// Row-major offset of a 2-d index. Callers in hot loops do their own
    /// arithmetic; this is for tests and cold paths.
    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> S {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[i * self.shape[1] + j]
    }

    #[inline]
    pub fn at3(&self, i: usize, j: usize, k: usize) -> S {
        debug_assert_eq!(self.shape.len(), 3);
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&mut self, c: S) {
        for v in &mut self.data {
            *v *= c;
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += *b;
        }
    }

    /// `self += c * other`, the SGD/accumulation workhorse.
    pub fn axpy(&mut self, c: S, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += c * *b;
        }
    }

    pub fn iter(&self) -> core::slice::Iter<'_, S> {
        self.data.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn check_shape(&self, expect: &[usize], what: &str) -> Result<()> {
        if self.shape != expect {
            return Err(CoreError::ShapeMismatch(format_shape_err(
                what,
                expect,
                &self.shape,
            )));
        }
        Ok(())
    }
}

fn format_shape_err(what: &str, expect: &[usize], got: &[usize]) -> String {
    use alloc::format;
    format!("{what}: expected {expect:?}, got {got:?}")
}

/// Bilinear upsampling with half-pixel-center sampling, used to lift
/// patch-resolution maps (GradCAM, attention) to image resolution.
pub fn upsample_bilinear<S: Scalar>(src: &Tensor<S>, out_h: usize, out_w: usize) -> Tensor<S> {
    assert_eq!(src.shape().len(), 2, "upsample expects an H x W map");
    let (sh, sw) = (src.shape()[0], src.shape()[1]);
    let mut out = Tensor::zeros([out_h, out_w]);
    let scale_y = sh as f64 / out_h as f64;
    let scale_x = sw as f64 / out_w as f64;
    for oy in 0..out_h {
        let fy = ((oy as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = fy as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let wy = S::from_f64(fy - y0 as f64);
        for ox in 0..out_w {
            let fx = ((ox as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = fx as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let wx = S::from_f64(fx - x0 as f64);
            let one = S::ONE;
            let v = src.at2(y0, x0) * (one - wy) * (one - wx)
                + src.at2(y0, x1) * (one - wy) * wx
                + src.at2(y1, x0) * wy * (one - wx)
                + src.at2(y1, x1) * wy * wx;
            out.data_mut()[oy * out_w + ox] = v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_identity_when_same_size() {
        let t = Tensor::new([2, 2], vec![1.0f32, 2.0, 3.0, 4.0]);
        let u = upsample_bilinear(&t, 2, 2);
        assert_eq!(t, u);
    }

    #[test]
    fn upsample_constant_stays_constant() {
        let t = Tensor::full([3, 3], 0.7f32);
        let u = upsample_bilinear(&t, 12, 9);
        assert!(u.iter().all(|&v| (v - 0.7).abs() < 1e-6));
    }

    #[test]
    fn axpy_accumulates() {
        let mut a = Tensor::zeros([3]);
        let b = Tensor::new([3], vec![1.0f32, 2.0, 3.0]);
        a.axpy(2.0, &b);
        assert_eq!(a.data(), &[2.0, 4.0, 6.0]);
    }
}
