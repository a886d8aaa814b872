//! Real-valued functions on rectangular pixel grids.
//!
//! Values are stored row-major with channels interleaved: the entry for pixel
//! `(row, col)` and channel `c` lives at `(row * width + col) * channels + c`.
//! Grid spacing is 1 and inner products are plain Euclidean sums.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Shape {
            width,
            height,
            channels,
        }
    }

    /// Single-channel image shape.
    pub fn image(width: usize, height: usize) -> Self {
        Shape::new(width, height, 1)
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn ensure_same(&self, other: &Shape) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::dims(*self, *other))
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.width, self.height, self.channels)
    }
}

/// A real-valued function on a pixel grid. Immutable once built; the
/// arithmetic helpers return new grids.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    shape: Shape,
    values: Vec<f64>,
}

impl GridFunction {
    /// Builds a grid from raw values, rejecting wrong lengths, zero-sized
    /// shapes and non-finite entries.
    pub fn new(shape: Shape, values: Vec<f64>) -> Result<Self> {
        if shape.width == 0 || shape.height == 0 || shape.channels == 0 {
            return Err(Error::UnsupportedShape {
                shape,
                reason: "all dimensions must be positive".into(),
            });
        }
        if values.len() != shape.len() {
            return Err(Error::param(format!(
                "grid {shape} needs {} values, got {}",
                shape.len(),
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(GridFunction { shape, values })
    }

    /// Single-channel image from row-major values.
    pub fn image(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(Shape::image(width, height), values)
    }

    pub fn zeros(shape: Shape) -> Self {
        GridFunction {
            shape,
            values: vec![0.0; shape.len()],
        }
    }

    pub fn constant(shape: Shape, value: f64) -> Self {
        GridFunction {
            shape,
            values: vec![value; shape.len()],
        }
    }

    /// Single-channel image with `f(row, col)` at each pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                values.push(f(row, col));
            }
        }
        GridFunction {
            shape: Shape::image(width, height),
            values,
        }
    }

    /// Internal constructor for values produced by operators on finite input.
    pub(crate) fn from_parts(shape: Shape, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), shape.len());
        GridFunction { shape, values }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.values[(row * self.shape.width + col) * self.shape.channels + channel]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        GridFunction::from_parts(self.shape, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &GridFunction) -> Result<Self> {
        self.shape.ensure_same(&other.shape)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + s * b)
            .collect();
        Ok(GridFunction::from_parts(self.shape, values))
    }

    pub fn add(&self, other: &GridFunction) -> Result<Self> {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &GridFunction) -> Result<Self> {
        self.axpy(-1.0, other)
    }

    pub(crate) fn add_scaled_in_place(&mut self, s: f64, other: &GridFunction) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// `‖self − other‖₂`.
    pub fn distance(&self, other: &GridFunction) -> Result<f64> {
        self.shape.ensure_same(&other.shape)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}

/// Euclidean inner product `Σ aᵢ bᵢ`.
pub fn inner_product(a: &GridFunction, b: &GridFunction) -> Result<f64> {
    a.shape.ensure_same(&b.shape)?;
    Ok(dot(&a.values, &b.values))
}

pub fn norm_l2(a: &GridFunction) -> f64 {
    dot(&a.values, &a.values).sqrt()
}

pub fn norm_linf(a: &GridFunction) -> f64 {
    a.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
