use crate::error::{Error, Result};
use crate::raster::RasterImage;
use crate::scalar::Scalar;

/// A single-sample feature map laid out channel-major (C×H×W).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![T::zero(); channels * height * width] }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: T) -> Self {
        Self { channels, height, width, data: vec![value; channels * height * width] }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {channels}×{height}×{width} tensor",
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(channels, height, width)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    pub fn ensure_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!("{what}: {:?} vs {:?}", self.shape(), other.shape())))
        }
    }

    /// Stacks `b`'s channels after `a`'s.
    pub fn concat_channels(a: &Self, b: &Self) -> Result<Self> {
        if (a.height, a.width) != (b.height, b.width) {
            return Err(Error::ShapeMismatch(format!("concat {:?} with {:?}", a.shape(), b.shape())));
        }
        let mut data = Vec::with_capacity(a.len() + b.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Ok(Self { channels: a.channels + b.channels, height: a.height, width: a.width, data })
    }

    /// Splits off the first `first` channels.
    pub fn split_channels(mut self, first: usize) -> (Self, Self) {
        let n = self.height * self.width;
        let rest = self.data.split_off(first * n);
        let (h, w) = (self.height, self.width);
        let tail = Self { channels: self.channels - first, height: h, width: w, data: rest };
        self.channels = first;
        (self, tail)
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert!(self.same_shape(other));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { data: self.data.iter().map(|&v| f(v)).collect(), ..*self }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }
}

/// Maps gray levels to `[-1, 1]`: `v = gray / 127.5 - 1`, so ink is -1.
pub fn to_tensor<T: Scalar>(image: &RasterImage) -> Tensor<T> {
    let data = image.pixels().iter().map(|&g| T::from_f64_lossy(g as f64 / 127.5 - 1.0)).collect();
    Tensor { channels: 1, height: image.height(), width: image.width(), data }
}

/// Inverse of [`to_tensor`]: `gray = round((v + 1) * 127.5)`, clamped.
///
/// Only the first channel is read.
pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> RasterImage {
    let pixels = t
        .plane(0)
        .iter()
        .map(|v| {
            let g = ((v.as_f64() + 1.0) * 127.5).round();
            if g.is_nan() {
                0
            } else {
                g.clamp(0.0, 255.0) as u8
            }
        })
        .collect();
    RasterImage::from_pixels(t.width(), t.height(), pixels).expect("tensor plane matches its shape")
}
