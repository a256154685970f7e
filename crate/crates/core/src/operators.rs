//! Forward operators `A` with apply, vector-Jacobian product and JVP.
//!
//! Linear kinds: inpainting mask, block-average downsampling, 2-D convolution
//! and dense matrices. The nonlinear kind composes a convolution with the
//! saturation `s(u) = tanh(g u) / g`.

use alloc::vec;
use alloc::vec::Vec;

use crate::rng::RngStream;
use crate::{Error, Result, Tensor};

pub trait ForwardOperator {
    fn input_shape(&self) -> &[usize];
    fn output_shape(&self) -> &[usize];
    fn is_linear(&self) -> bool;

    /// `A(x)`; `x` already has the input shape.
    fn forward(&self, x: &Tensor) -> Tensor;

    /// `J(x)^T w`; shapes already checked.
    fn pullback(&self, x: &Tensor, w: &Tensor) -> Tensor;

    /// Analytic `J(x) d`; shapes already checked.
    fn pushforward(&self, x: &Tensor, d: &Tensor) -> Tensor;

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        x.ensure_shape(self.input_shape())?;
        Ok(self.forward(x))
    }

    fn vjp(&self, x: &Tensor, w: &Tensor) -> Result<Tensor> {
        x.ensure_shape(self.input_shape())?;
        w.ensure_shape(self.output_shape())?;
        Ok(self.pullback(x, w))
    }

    fn jvp(&self, x: &Tensor, d: &Tensor) -> Result<Tensor> {
        x.ensure_shape(self.input_shape())?;
        d.ensure_shape(self.input_shape())?;
        Ok(self.pushforward(x, d))
    }
}

/// Finite-difference Jacobian-vector product `(A(x + eta d) - A(x)) / eta`.
pub fn jvp_finite_difference<O: ForwardOperator + ?Sized>(
    op: &O,
    x: &Tensor,
    d: &Tensor,
    eta: f64,
) -> Result<Tensor> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::invalid("finite-difference step eta must be > 0"));
    }
    x.ensure_shape(op.input_shape())?;
    d.ensure_shape(op.input_shape())?;
    let mut shifted = x.clone();
    shifted.axpy(eta, d);
    let base = op.forward(x);
    Ok(op.forward(&shifted).zip_map(&base, |a, b| (a - b) / eta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    #[default]
    Replicate,
    Zero,
}

fn image_dims(shape: &[usize]) -> Result<(usize, usize)> {
    match *shape {
        [h, w] if h > 0 && w > 0 => Ok((h, w)),
        _ => Err(Error::invalid(alloc::format!(
            "expected a non-empty 2-D image shape, got {shape:?}"
        ))),
    }
}

/// Keeps the entries where `mask` is true and zeroes the rest (diagonal, self-adjoint).
#[derive(Debug, Clone, PartialEq)]
pub struct Inpaint {
    mask: Vec<bool>,
    shape: Vec<usize>,
}

impl Inpaint {
    pub fn new(shape: &[usize], mask: Vec<bool>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != mask.len() || shape.is_empty() {
            return Err(Error::invalid("mask length does not match shape"));
        }
        Ok(Inpaint {
            mask,
            shape: shape.to_vec(),
        })
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn kept(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    fn masked(&self, v: &Tensor) -> Tensor {
        let mut out = v.clone();
        for (o, &m) in out.as_mut_slice().iter_mut().zip(&self.mask) {
            if !m {
                *o = 0.0;
            }
        }
        out
    }
}

impl ForwardOperator for Inpaint {
    fn input_shape(&self) -> &[usize] {
        &self.shape
    }
    fn output_shape(&self) -> &[usize] {
        &self.shape
    }
    fn is_linear(&self) -> bool {
        true
    }
    fn forward(&self, x: &Tensor) -> Tensor {
        self.masked(x)
    }
    fn pullback(&self, _x: &Tensor, w: &Tensor) -> Tensor {
        self.masked(w)
    }
    fn pushforward(&self, _x: &Tensor, d: &Tensor) -> Tensor {
        self.masked(d)
    }
}

/// Block-average pooling by an integer factor along every axis (rank 1 or 2).
#[derive(Debug, Clone, PartialEq)]
pub struct Downsample {
    factor: usize,
    input: Vec<usize>,
    output: Vec<usize>,
}

impl Downsample {
    pub fn new(input_shape: &[usize], factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::invalid("downsampling factor must be >= 1"));
        }
        if input_shape.is_empty() || input_shape.len() > 2 {
            return Err(Error::invalid("downsampling supports rank 1 or 2"));
        }
        if input_shape.iter().any(|&n| n == 0 || n % factor != 0) {
            return Err(Error::invalid(alloc::format!(
                "shape {input_shape:?} not divisible by factor {factor}"
            )));
        }
        Ok(Downsample {
            factor,
            input: input_shape.to_vec(),
            output: input_shape.iter().map(|n| n / factor).collect(),
        })
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    fn block_len(&self) -> usize {
        self.factor.pow(self.input.len() as u32)
    }

    /// Output index of each input index.
    fn parent(&self, idx: usize) -> usize {
        let f = self.factor;
        match self.input.len() {
            1 => idx / f,
            _ => {
                let w = self.input[1];
                let (i, j) = (idx / w, idx % w);
                (i / f) * self.output[1] + j / f
            }
        }
    }
}

impl ForwardOperator for Downsample {
    fn input_shape(&self) -> &[usize] {
        &self.input
    }
    fn output_shape(&self) -> &[usize] {
        &self.output
    }
    fn is_linear(&self) -> bool {
        true
    }
    fn forward(&self, x: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(&self.output);
        let scale = 1.0 / self.block_len() as f64;
        let o = out.as_mut_slice();
        for (idx, &v) in x.as_slice().iter().enumerate() {
            o[self.parent(idx)] += v;
        }
        o.iter_mut().for_each(|v| *v *= scale);
        out
    }
    fn pullback(&self, _x: &Tensor, w: &Tensor) -> Tensor {
        let scale = 1.0 / self.block_len() as f64;
        let ws = w.as_slice();
        Tensor::from_fn(&self.input, |idx| ws[self.parent(idx)] * scale)
    }
    fn pushforward(&self, _x: &Tensor, d: &Tensor) -> Tensor {
        self.forward(d)
    }
}

/// 2-D convolution `y[i,j] = sum_{a,b} k[a,b] x[i+c-a, j+c-b]` with odd square kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    kernel: Tensor,
    boundary: Boundary,
    shape: Vec<usize>,
}

impl Conv2d {
    pub fn new(image_shape: &[usize], kernel: Tensor, boundary: Boundary) -> Result<Self> {
        image_dims(image_shape)?;
        let (kh, kw) = image_dims(kernel.shape())?;
        if kh != kw || kh % 2 == 0 {
            return Err(Error::invalid(
                "convolution kernel must be square and odd-sized",
            ));
        }
        Ok(Conv2d {
            kernel,
            boundary,
            shape: image_shape.to_vec(),
        })
    }

    pub fn kernel(&self) -> &Tensor {
        &self.kernel
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// Calls `f(out_index, src_index, weight)` for every tap that lands inside the image.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, f64)) {
        let (h, w) = (self.shape[0] as isize, self.shape[1] as isize);
        let k = self.kernel.shape()[0] as isize;
        let c = k / 2;
        let kern = self.kernel.as_slice();
        for i in 0..h {
            for j in 0..w {
                let out = (i * w + j) as usize;
                for a in 0..k {
                    for b in 0..k {
                        let weight = kern[(a * k + b) as usize];
                        if weight == 0.0 {
                            continue;
                        }
                        let (si, sj) = (i + c - a, j + c - b);
                        let src = match self.boundary {
                            Boundary::Replicate => si.clamp(0, h - 1) * w + sj.clamp(0, w - 1),
                            Boundary::Zero => {
                                if si < 0 || si >= h || sj < 0 || sj >= w {
                                    continue;
                                }
                                si * w + sj
                            }
                        };
                        f(out, src as usize, weight);
                    }
                }
            }
        }
    }

    fn convolve(&self, x: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(&self.shape);
        let xs = x.as_slice();
        let o = out.as_mut_slice();
        self.for_each_tap(|dst, src, k| o[dst] += k * xs[src]);
        out
    }

    fn correlate_adjoint(&self, w: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(&self.shape);
        let ws = w.as_slice();
        let o = out.as_mut_slice();
        self.for_each_tap(|dst, src, k| o[src] += k * ws[dst]);
        out
    }
}

impl ForwardOperator for Conv2d {
    fn input_shape(&self) -> &[usize] {
        &self.shape
    }
    fn output_shape(&self) -> &[usize] {
        &self.shape
    }
    fn is_linear(&self) -> bool {
        true
    }
    fn forward(&self, x: &Tensor) -> Tensor {
        self.convolve(x)
    }
    fn pullback(&self, _x: &Tensor, w: &Tensor) -> Tensor {
        self.correlate_adjoint(w)
    }
    fn pushforward(&self, _x: &Tensor, d: &Tensor) -> Tensor {
        self.convolve(d)
    }
}

/// Blur followed by elementwise saturation `tanh(gain * u) / gain`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaturatedBlur {
    blur: Conv2d,
    gain: f64,
}

impl SaturatedBlur {
    pub fn new(blur: Conv2d, gain: f64) -> Result<Self> {
        if !(gain > 0.0 && gain.is_finite()) {
            return Err(Error::invalid("saturation gain must be > 0"));
        }
        Ok(SaturatedBlur { blur, gain })
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn blur(&self) -> &Conv2d {
        &self.blur
    }

    /// `s'(Kx) = 1 - tanh^2(g Kx)`
    fn slope(&self, x: &Tensor) -> Tensor {
        let g = self.gain;
        self.blur.convolve(x).map(|u| {
            let th = libm::tanh(g * u);
            1.0 - th * th
        })
    }
}

impl ForwardOperator for SaturatedBlur {
    fn input_shape(&self) -> &[usize] {
        &self.blur.shape
    }
    fn output_shape(&self) -> &[usize] {
        &self.blur.shape
    }
    fn is_linear(&self) -> bool {
        false
    }
    fn forward(&self, x: &Tensor) -> Tensor {
        let g = self.gain;
        self.blur.convolve(x).map(|u| libm::tanh(g * u) / g)
    }
    fn pullback(&self, x: &Tensor, w: &Tensor) -> Tensor {
        self.blur.correlate_adjoint(&self.slope(x).mul(w))
    }
    fn pushforward(&self, x: &Tensor, d: &Tensor) -> Tensor {
        self.slope(x).mul(&self.blur.convolve(d))
    }
}

/// Row-major dense matrix acting on vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    input: [usize; 1],
    output: [usize; 1],
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::invalid("matrix data does not match rows * cols"));
        }
        Ok(DenseMatrix {
            rows,
            cols,
            data,
            input: [cols],
            output: [rows],
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::new(n, n, data).expect("square identity")
    }

    pub fn entry(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

impl ForwardOperator for DenseMatrix {
    fn input_shape(&self) -> &[usize] {
        &self.input
    }
    fn output_shape(&self) -> &[usize] {
        &self.output
    }
    fn is_linear(&self) -> bool {
        true
    }
    fn forward(&self, x: &Tensor) -> Tensor {
        let xs = x.as_slice();
        Tensor::from_fn(&self.output, |r| {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            row.iter().zip(xs).map(|(a, b)| a * b).sum()
        })
    }
    fn pullback(&self, _x: &Tensor, w: &Tensor) -> Tensor {
        let ws = w.as_slice();
        Tensor::from_fn(&self.input, |c| {
            (0..self.rows)
                .map(|r| self.data[r * self.cols + c] * ws[r])
                .sum()
        })
    }
    fn pushforward(&self, _x: &Tensor, d: &Tensor) -> Tensor {
        self.forward(d)
    }
}

/// Closed set of operator kinds used by the solvers and the harness.
#[derive(Debug, Clone, PartialEq)]
pub enum Operator {
    Inpaint(Inpaint),
    Downsample(Downsample),
    Conv2d(Conv2d),
    SaturatedBlur(SaturatedBlur),
    Dense(DenseMatrix),
}

macro_rules! dispatch {
    ($self:ident, $op:ident => $body:expr) => {
        match $self {
            Operator::Inpaint($op) => $body,
            Operator::Downsample($op) => $body,
            Operator::Conv2d($op) => $body,
            Operator::SaturatedBlur($op) => $body,
            Operator::Dense($op) => $body,
        }
    };
}

impl ForwardOperator for Operator {
    fn input_shape(&self) -> &[usize] {
        dispatch!(self, op => op.input_shape())
    }
    fn output_shape(&self) -> &[usize] {
        dispatch!(self, op => op.output_shape())
    }
    fn is_linear(&self) -> bool {
        dispatch!(self, op => op.is_linear())
    }
    fn forward(&self, x: &Tensor) -> Tensor {
        dispatch!(self, op => op.forward(x))
    }
    fn pullback(&self, x: &Tensor, w: &Tensor) -> Tensor {
        dispatch!(self, op => op.pullback(x, w))
    }
    fn pushforward(&self, x: &Tensor, d: &Tensor) -> Tensor {
        dispatch!(self, op => op.pushforward(x, d))
    }
}

/// Normalized isotropic Gaussian kernel of odd `size`.
pub fn gaussian_kernel(size: usize, std: f64) -> Result<Tensor> {
    check_kernel_size(size)?;
    if !(std > 0.0 && std.is_finite()) {
        return Err(Error::invalid("kernel std must be > 0"));
    }
    let c = (size / 2) as f64;
    normalized_kernel(size, |a, b| {
        let r2 = (a - c) * (a - c) + (b - c) * (b - c);
        libm::exp(-r2 / (2.0 * std * std))
    })
}

/// Line segment of `length` pixels through the centre at `angle_deg`, with a
/// Gaussian profile of `std` across the line. `angle_deg = 0` is horizontal.
pub fn motion_kernel(size: usize, length: usize, angle_deg: f64, std: f64) -> Result<Tensor> {
    check_kernel_size(size)?;
    if length == 0 || length > size {
        return Err(Error::invalid("motion length must be in 1..=size"));
    }
    if !(std > 0.0 && std.is_finite() && angle_deg.is_finite()) {
        return Err(Error::invalid("motion kernel std must be > 0"));
    }
    let c = (size / 2) as f64;
    let theta = angle_deg.to_radians();
    let (sin, cos) = (libm::sin(theta), libm::cos(theta));
    let half = (length as f64 - 1.0) / 2.0;
    normalized_kernel(size, |a, b| {
        let (dy, dx) = (a - c, b - c);
        let along = dx * cos - dy * sin;
        let across = dx * sin + dy * cos;
        if along.abs() > half + 1e-9 {
            0.0
        } else {
            libm::exp(-across * across / (2.0 * std * std))
        }
    })
}

fn check_kernel_size(size: usize) -> Result<()> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(Error::invalid(alloc::format!(
            "kernel size must be odd, got {size}"
        )));
    }
    Ok(())
}

fn normalized_kernel(size: usize, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let raw = Tensor::from_fn(&[size, size], |idx| {
        f((idx / size) as f64, (idx % size) as f64)
    });
    let total: f64 = raw.as_slice().iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("kernel has no mass"));
    }
    Ok(raw.scale(1.0 / total))
}

/// Description of an operator, independent of the image it will act on.
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorSpec {
    /// Random inpainting: each entry is dropped with probability `mask_ratio`.
    Inpaint {
        mask_ratio: f64,
    },
    Downsample {
        factor: usize,
    },
    GaussianBlur {
        size: usize,
        std: f64,
        boundary: Boundary,
    },
    MotionBlur {
        size: usize,
        length: usize,
        angle_deg: f64,
        std: f64,
        boundary: Boundary,
    },
    NonlinearBlur {
        size: usize,
        std: f64,
        gain: f64,
        boundary: Boundary,
    },
}

impl OperatorSpec {
    /// 9x9 Gaussian blur with std 1.5.
    pub fn default_gaussian_blur() -> Self {
        OperatorSpec::GaussianBlur {
            size: 9,
            std: 1.5,
            boundary: Boundary::Replicate,
        }
    }

    pub fn default_nonlinear_blur() -> Self {
        OperatorSpec::NonlinearBlur {
            size: 9,
            std: 1.5,
            gain: 3.0,
            boundary: Boundary::Replicate,
        }
    }
}

/// Build an operator for images of `input_shape`. Only inpainting draws from `rng`.
pub fn build_operator(
    spec: &OperatorSpec,
    input_shape: &[usize],
    rng: &mut RngStream,
) -> Result<Operator> {
    Ok(match *spec {
        OperatorSpec::Inpaint { mask_ratio } => {
            if !(0.0..1.0).contains(&mask_ratio) {
                return Err(Error::invalid(alloc::format!(
                    "mask_ratio must be in [0, 1), got {mask_ratio}"
                )));
            }
            let len: usize = input_shape.iter().product();
            let keep = 1.0 - mask_ratio;
            let mask = (0..len).map(|_| rng.bernoulli(keep)).collect();
            Operator::Inpaint(Inpaint::new(input_shape, mask)?)
        }
        OperatorSpec::Downsample { factor } => {
            Operator::Downsample(Downsample::new(input_shape, factor)?)
        }
        OperatorSpec::GaussianBlur {
            size,
            std,
            boundary,
        } => Operator::Conv2d(Conv2d::new(
            input_shape,
            gaussian_kernel(size, std)?,
            boundary,
        )?),
        OperatorSpec::MotionBlur {
            size,
            length,
            angle_deg,
            std,
            boundary,
        } => Operator::Conv2d(Conv2d::new(
            input_shape,
            motion_kernel(size, length, angle_deg, std)?,
            boundary,
        )?),
        OperatorSpec::NonlinearBlur {
            size,
            std,
            gain,
            boundary,
        } => {
            let blur = Conv2d::new(input_shape, gaussian_kernel(size, std)?, boundary)?;
            Operator::SaturatedBlur(SaturatedBlur::new(blur, gain)?)
        }
    })
}
