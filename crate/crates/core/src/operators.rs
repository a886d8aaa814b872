//! Matrix-free linear operators on grids, each with an exact adjoint.
//!
//! * identity
//! * Gaussian blur with the "atmospheric turbulence" point spread function
//!   `k(d) = (κ/π) exp(−κ‖d‖²)`, truncated to a square stencil, renormalized
//!   to unit sum, reflective boundary
//! * forward-difference gradient (2-channel output, zero far edge)
//! * structural operator `f ↦ A(x) ∇f` with
//!   `A = I − (1 + c‖∇γ‖²)⁻¹ ∇γ ∇γᵀ`
//! * dense matrices (oracles and perturbations)

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{GridFunction, Shape};

/// Largest number of unknowns `assemble_dense` accepts by default.
pub const DEFAULT_DENSE_CAP: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorKind {
    Identity,
    GaussianBlur,
    Gradient,
    Structural,
    Dense,
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OperatorKind::Identity => "identity",
            OperatorKind::GaussianBlur => "gaussian_blur",
            OperatorKind::Gradient => "gradient",
            OperatorKind::Structural => "structural",
            OperatorKind::Dense => "dense",
        };
        f.write_str(s)
    }
}

/// Edge image `γ` and sharpness constant `c` for the structural operator.
#[derive(Clone, Debug)]
pub struct StructuralField {
    pub gamma: GridFunction,
    pub c: f64,
}

impl StructuralField {
    pub fn new(gamma: GridFunction, c: f64) -> Result<Self> {
        if gamma.channels() != 1 {
            return Err(Error::UnsupportedShape {
                shape: gamma.shape(),
                reason: "gamma must be a single-channel image".into(),
            });
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::param(format!("structural constant c must be positive, got {c}")));
        }
        Ok(StructuralField { gamma, c })
    }

    /// Per-pixel symmetric tensor `(a11, a12, a22)` of `A(x)`.
    pub fn tensor(&self) -> Vec<[f64; 3]> {
        let (w, h) = (self.gamma.width(), self.gamma.height());
        let mut grad = vec![0.0; 2 * w * h];
        forward_differences(w, h, self.gamma.values(), &mut grad);
        grad.chunks_exact(2)
            .map(|g| {
                let (gx, gy) = (g[0], g[1]);
                let s = 1.0 / (1.0 + self.c * (gx * gx + gy * gy));
                [1.0 - s * gx * gx, -s * gx * gy, 1.0 - s * gy * gy]
            })
            .collect()
    }
}

#[derive(Debug)]
enum Inner {
    Identity,
    Blur {
        kappa: f64,
        radius: usize,
        /// normalized 1D factor; the 2D stencil is its outer product
        kernel: Vec<f64>,
    },
    Gradient,
    Structural {
        c: f64,
        tensor: Vec<[f64; 3]>,
    },
    Dense {
        matrix: DMatrix<f64>,
    },
}

/// A linear map between grid shapes. Cheap to clone; safe to share across
/// threads.
#[derive(Clone, Debug)]
pub struct OperatorHandle {
    input_shape: Shape,
    output_shape: Shape,
    inner: Arc<Inner>,
}

impl OperatorHandle {
    pub fn identity(shape: Shape) -> Self {
        OperatorHandle {
            input_shape: shape,
            output_shape: shape,
            inner: Arc::new(Inner::Identity),
        }
    }

    /// Gaussian blur on a `width × height` image.
    pub fn gaussian_blur(width: usize, height: usize, kappa: f64, radius: usize) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::param(format!("blur kappa must be positive, got {kappa}")));
        }
        if radius == 0 {
            return Err(Error::param("blur radius must be at least 1"));
        }
        if width == 0 || height == 0 {
            return Err(Error::param("blur grid must be non-empty"));
        }
        let raw: Vec<f64> = (0..=2 * radius)
            .map(|i| {
                let d = i as f64 - radius as f64;
                (-kappa * d * d).exp()
            })
            .collect();
        let sum: f64 = raw.iter().sum();
        let kernel = raw.into_iter().map(|v| v / sum).collect();
        let shape = Shape::image(width, height);
        Ok(OperatorHandle {
            input_shape: shape,
            output_shape: shape,
            inner: Arc::new(Inner::Blur {
                kappa,
                radius,
                kernel,
            }),
        })
    }

    pub fn gradient(width: usize, height: usize) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::param(format!(
                "gradient needs at least a 2x2 grid, got {width}x{height}"
            )));
        }
        Ok(OperatorHandle {
            input_shape: Shape::image(width, height),
            output_shape: Shape::new(width, height, 2),
            inner: Arc::new(Inner::Gradient),
        })
    }

    pub fn structural(field: &StructuralField) -> Result<Self> {
        let (w, h) = (field.gamma.width(), field.gamma.height());
        if w < 2 || h < 2 {
            return Err(Error::param(format!(
                "structural operator needs at least a 2x2 grid, got {w}x{h}"
            )));
        }
        Ok(OperatorHandle {
            input_shape: Shape::image(w, h),
            output_shape: Shape::new(w, h, 2),
            inner: Arc::new(Inner::Structural {
                c: field.c,
                tensor: field.tensor(),
            }),
        })
    }

    /// Structural operator checked against an expected input shape.
    pub fn structural_for(field: &StructuralField, input: Shape) -> Result<Self> {
        field.gamma.shape().ensure_same(&input)?;
        Self::structural(field)
    }

    pub fn dense(input_shape: Shape, output_shape: Shape, matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != output_shape.len() || matrix.ncols() != input_shape.len() {
            return Err(Error::param(format!(
                "dense matrix is {}x{}, shapes need {}x{}",
                matrix.nrows(),
                matrix.ncols(),
                output_shape.len(),
                input_shape.len()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("dense matrix has non-finite entries"));
        }
        Ok(OperatorHandle {
            input_shape,
            output_shape,
            inner: Arc::new(Inner::Dense { matrix }),
        })
    }

    pub fn kind(&self) -> OperatorKind {
        match &*self.inner {
            Inner::Identity => OperatorKind::Identity,
            Inner::Blur { .. } => OperatorKind::GaussianBlur,
            Inner::Gradient => OperatorKind::Gradient,
            Inner::Structural { .. } => OperatorKind::Structural,
            Inner::Dense { .. } => OperatorKind::Dense,
        }
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn output_shape(&self) -> Shape {
        self.output_shape
    }

    /// Full 2D blur stencil (row-major, `(2r+1)²` weights summing to one).
    /// `None` for other kinds.
    pub fn blur_stencil(&self) -> Option<Vec<f64>> {
        match &*self.inner {
            Inner::Blur { kernel, .. } => Some(
                kernel
                    .iter()
                    .flat_map(|a| kernel.iter().map(move |b| a * b))
                    .collect(),
            ),
            _ => None,
        }
    }

    /// `(κ, radius)` for blur operators.
    pub fn blur_parameters(&self) -> Option<(f64, usize)> {
        match &*self.inner {
            Inner::Blur { kappa, radius, .. } => Some((*kappa, *radius)),
            _ => None,
        }
    }

    /// Per-pixel `A(x)` for structural operators.
    pub fn structural_tensor(&self) -> Option<(&[[f64; 3]], f64)> {
        match &*self.inner {
            Inner::Structural { tensor, c } => Some((tensor, *c)),
            _ => None,
        }
    }

    pub fn apply(&self, x: &GridFunction) -> Result<GridFunction> {
        x.shape().ensure_same(&self.input_shape)?;
        let (w, h) = (self.input_shape.width, self.input_shape.height);
        let mut out = vec![0.0; self.output_shape.len()];
        match &*self.inner {
            Inner::Identity => out.copy_from_slice(x.values()),
            Inner::Blur { kernel, .. } => {
                let mut tmp = vec![0.0; w * h];
                blur_rows(w, h, kernel, x.values(), &mut tmp);
                blur_cols(w, h, kernel, &tmp, &mut out);
            }
            Inner::Gradient => forward_differences(w, h, x.values(), &mut out),
            Inner::Structural { tensor, .. } => {
                forward_differences(w, h, x.values(), &mut out);
                apply_tensor(tensor, &mut out);
            }
            Inner::Dense { matrix } => {
                let v = matrix * DVector::from_column_slice(x.values());
                out.copy_from_slice(v.as_slice());
            }
        }
        Ok(GridFunction::from_parts(self.output_shape, out))
    }

    pub fn apply_adjoint(&self, y: &GridFunction) -> Result<GridFunction> {
        y.shape().ensure_same(&self.output_shape)?;
        let (w, h) = (self.input_shape.width, self.input_shape.height);
        let mut out = vec![0.0; self.input_shape.len()];
        match &*self.inner {
            Inner::Identity => out.copy_from_slice(y.values()),
            Inner::Blur { kernel, .. } => {
                let mut tmp = vec![0.0; w * h];
                blur_cols_transpose(w, h, kernel, y.values(), &mut tmp);
                blur_rows_transpose(w, h, kernel, &tmp, &mut out);
            }
            Inner::Gradient => forward_differences_adjoint(w, h, y.values(), &mut out),
            Inner::Structural { tensor, .. } => {
                let mut field = y.values().to_vec();
                apply_tensor(tensor, &mut field);
                forward_differences_adjoint(w, h, &field, &mut out);
            }
            Inner::Dense { matrix } => {
                let v = matrix.tr_mul(&DVector::from_column_slice(y.values()));
                out.copy_from_slice(v.as_slice());
            }
        }
        Ok(GridFunction::from_parts(self.input_shape, out))
    }

    /// Dense matrix whose column `j` is `apply(e_j)`, with the default cap.
    pub fn assemble_dense(&self) -> Result<DMatrix<f64>> {
        self.assemble_dense_capped(DEFAULT_DENSE_CAP)
    }

    pub fn assemble_dense_capped(&self, cap: usize) -> Result<DMatrix<f64>> {
        let n = self.input_shape.len();
        if n > cap {
            return Err(Error::DenseCap { dim: n, cap });
        }
        if let Inner::Dense { matrix } = &*self.inner {
            return Ok(matrix.clone());
        }
        let m = self.output_shape.len();
        let mut dense = DMatrix::zeros(m, n);
        let mut e = GridFunction::zeros(self.input_shape);
        for j in 0..n {
            e.values_mut()[j] = 1.0;
            let col = self.apply(&e)?;
            dense.column_mut(j).copy_from_slice(col.values());
            e.values_mut()[j] = 0.0;
        }
        Ok(dense)
    }

    /// Whether the operator has a trivial null space. Known structurally for
    /// every kind except dense matrices, which are checked by SVD when small
    /// enough; `None` means undetermined.
    pub fn is_injective(&self) -> Option<bool> {
        match &*self.inner {
            Inner::Identity => Some(true),
            // both annihilate constants
            Inner::Gradient | Inner::Structural { .. } => Some(false),
            Inner::Blur { kernel, .. } => {
                let (w, h) = (self.input_shape.width, self.input_shape.height);
                Some(
                    reflective_symbols(kernel, w).iter().all(|l| l.abs() > 1e-12)
                        && reflective_symbols(kernel, h).iter().all(|l| l.abs() > 1e-12),
                )
            }
            Inner::Dense { matrix } => {
                if matrix.ncols() > DEFAULT_DENSE_CAP {
                    return None;
                }
                if matrix.nrows() < matrix.ncols() {
                    return Some(false);
                }
                let sv = matrix.clone().singular_values();
                let max = sv.max();
                let min = sv.min();
                Some(max > 0.0 && min > 1e-12 * max)
            }
        }
    }
}

/// Half-sample symmetric index reflection onto `0..n`.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Eigenvalues of the 1D reflective convolution on `n` points: the DCT-II
/// diagonalizes symmetric convolution on the even `2n`-periodic extension.
fn reflective_symbols(kernel: &[f64], n: usize) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    (0..n)
        .map(|k| {
            kernel
                .iter()
                .enumerate()
                .map(|(i, &wt)| {
                    let d = i as isize - r;
                    wt * (std::f64::consts::PI * k as f64 * d as f64 / n as f64).cos()
                })
                .sum()
        })
        .collect()
}

fn blur_rows(w: usize, h: usize, kernel: &[f64], src: &[f64], dst: &mut [f64]) {
    let r = (kernel.len() / 2) as isize;
    for row in 0..h {
        let line = &src[row * w..(row + 1) * w];
        for col in 0..w {
            let mut acc = 0.0;
            for (i, &k) in kernel.iter().enumerate() {
                acc += k * line[reflect(col as isize + i as isize - r, w)];
            }
            dst[row * w + col] = acc;
        }
    }
}

fn blur_rows_transpose(w: usize, h: usize, kernel: &[f64], src: &[f64], dst: &mut [f64]) {
    let r = (kernel.len() / 2) as isize;
    dst.iter_mut().for_each(|v| *v = 0.0);
    for row in 0..h {
        for col in 0..w {
            let v = src[row * w + col];
            for (i, &k) in kernel.iter().enumerate() {
                dst[row * w + reflect(col as isize + i as isize - r, w)] += k * v;
            }
        }
    }
}

fn blur_cols(w: usize, h: usize, kernel: &[f64], src: &[f64], dst: &mut [f64]) {
    let r = (kernel.len() / 2) as isize;
    for row in 0..h {
        let out = &mut dst[row * w..(row + 1) * w];
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, &k) in kernel.iter().enumerate() {
            let src_row = reflect(row as isize + i as isize - r, h);
            let line = &src[src_row * w..(src_row + 1) * w];
            for (o, s) in out.iter_mut().zip(line) {
                *o += k * s;
            }
        }
    }
}

fn blur_cols_transpose(w: usize, h: usize, kernel: &[f64], src: &[f64], dst: &mut [f64]) {
    let r = (kernel.len() / 2) as isize;
    dst.iter_mut().for_each(|v| *v = 0.0);
    for row in 0..h {
        let line = &src[row * w..(row + 1) * w];
        for (i, &k) in kernel.iter().enumerate() {
            let dst_row = reflect(row as isize + i as isize - r, h);
            let out = &mut dst[dst_row * w..(dst_row + 1) * w];
            for (o, s) in out.iter_mut().zip(line) {
                *o += k * s;
            }
        }
    }
}

/// Forward differences into a 2-channel interleaved field. Channel 0 is
/// `f(i, j+1) − f(i, j)`, channel 1 is `f(i+1, j) − f(i, j)`; both are zero
/// on the far edge. Valid for any grid size.
pub(crate) fn forward_differences(w: usize, h: usize, f: &[f64], out: &mut [f64]) {
    for i in 0..h {
        for j in 0..w {
            let p = i * w + j;
            let v = f[p];
            out[2 * p] = if j + 1 < w { f[p + 1] - v } else { 0.0 };
            out[2 * p + 1] = if i + 1 < h { f[p + w] - v } else { 0.0 };
        }
    }
}

/// Adjoint of [`forward_differences`], i.e. the negative divergence.
pub(crate) fn forward_differences_adjoint(w: usize, h: usize, field: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..h {
        for j in 0..w {
            let p = i * w + j;
            if j + 1 < w {
                let v = field[2 * p];
                out[p + 1] += v;
                out[p] -= v;
            }
            if i + 1 < h {
                let v = field[2 * p + 1];
                out[p + w] += v;
                out[p] -= v;
            }
        }
    }
}

fn apply_tensor(tensor: &[[f64; 3]], field: &mut [f64]) {
    for (a, v) in tensor.iter().zip(field.chunks_exact_mut(2)) {
        let (x, y) = (v[0], v[1]);
        v[0] = a[0] * x + a[1] * y;
        v[1] = a[1] * x + a[2] * y;
    }
}
