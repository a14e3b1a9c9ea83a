//! Dense row-major f64 tensors and the pure numeric kernels the rest of
//! the crate builds on.
//!
//! Every kernel here is a plain function of its inputs; the differentiable
//! wrappers live in [`crate::graph`]. Loops are written in a fixed order so
//! results are bit-identical across runs.

use crate::error::{Error, Result};

/// Dense N-dimensional array of f64, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

pub fn fmt_shape(shape: &[usize]) -> String {
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    format!("[{}]", dims.join("x"))
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Argument(format!(
                "tensor extents must be positive, got {}",
                fmt_shape(&shape)
            )));
        }
        if data.len() != numel {
            return Err(Error::Dimension(format!(
                "data length {} does not match shape {} (= {} elements)",
                data.len(),
                fmt_shape(&shape),
                numel
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Extent along axis `i`.
    pub fn dim(&self, i: usize) -> usize {
        self.shape[i]
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn scalar_value(&self) -> Result<f64> {
        if !self.is_scalar() {
            return Err(Error::Contract(format!(
                "expected a scalar tensor, got shape {}",
                fmt_shape(&self.shape)
            )));
        }
        Ok(self.data[0])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reinterprets the same data under a new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {} to {}",
                fmt_shape(&self.shape),
                fmt_shape(shape)
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "elementwise op on mismatched shapes {} vs {}",
                fmt_shape(&self.shape),
                fmt_shape(&other.shape)
            )));
        }
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// Extracts channel `b` of an H×W×C tensor as an H×W plane.
    pub fn channel(&self, b: usize) -> Result<Tensor> {
        if self.rank() != 3 || b >= self.shape[2] {
            return Err(Error::Dimension(format!(
                "no channel {b} in tensor of shape {}",
                fmt_shape(&self.shape)
            )));
        }
        let (h, w, c) = (self.shape[0], self.shape[1], self.shape[2]);
        let data = (0..h * w).map(|px| self.data[px * c + b]).collect();
        Tensor::new(vec![h, w], data)
    }

    /// 2D transpose.
    pub fn transpose2(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::Dimension(format!(
                "transpose2 expects rank 2, got {}",
                fmt_shape(&self.shape)
            )));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::new(vec![n, m], out)
    }
}

/// Standard matrix product a[m×k] · b[k×n].
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::Dimension(format!(
            "matmul expects two rank-2 tensors, got {} and {}",
            fmt_shape(a.shape()),
            fmt_shape(b.shape())
        )));
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner dimensions disagree: {} vs {}",
            fmt_shape(a.shape()),
            fmt_shape(b.shape())
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a.data[i * k + p];
            let brow = &b.data[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Column-stochastic softmax of a 2D score matrix: each column sums to 1.
/// Uses per-column max subtraction for stability.
pub fn softmax_columns(s: &Tensor) -> Result<Tensor> {
    if s.rank() != 2 {
        return Err(Error::Dimension(format!(
            "softmax_columns expects rank 2, got {}",
            fmt_shape(s.shape())
        )));
    }
    let (rows, cols) = (s.shape[0], s.shape[1]);
    let mut out = vec![0.0; rows * cols];
    for j in 0..cols {
        let mut mx = f64::NEG_INFINITY;
        for i in 0..rows {
            mx = mx.max(s.data[i * cols + j]);
        }
        let mut denom = 0.0;
        for i in 0..rows {
            let e = (s.data[i * cols + j] - mx).exp();
            out[i * cols + j] = e;
            denom += e;
        }
        for i in 0..rows {
            out[i * cols + j] /= denom;
        }
    }
    Tensor::new(vec![rows, cols], out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding, output extents equal input extents. Kernel extents must be odd.
    Same,
    /// No padding, output extents shrink by kernel-1.
    None,
}

/// Cross-correlation of x[H×W×Cin] with kernel[kh×kw×Cin×Cout].
pub fn conv2d(x: &Tensor, kernel: &Tensor, padding: Padding) -> Result<Tensor> {
    if x.rank() != 3 || kernel.rank() != 4 {
        return Err(Error::Dimension(format!(
            "conv2d expects x rank 3 and kernel rank 4, got {} and {}",
            fmt_shape(x.shape()),
            fmt_shape(kernel.shape())
        )));
    }
    let (h, w, cin) = (x.shape[0], x.shape[1], x.shape[2]);
    let (kh, kw, kcin, cout) = (
        kernel.shape[0],
        kernel.shape[1],
        kernel.shape[2],
        kernel.shape[3],
    );
    if cin != kcin {
        return Err(Error::Dimension(format!(
            "conv2d channel mismatch: input {} vs kernel {}",
            fmt_shape(x.shape()),
            fmt_shape(kernel.shape())
        )));
    }
    let (oh, ow, ph, pw) = conv_extents(h, w, kh, kw, padding)?;
    let mut out = vec![0.0; oh * ow * cout];
    for i in 0..oh {
        for j in 0..ow {
            for di in 0..kh {
                let y = (i + di) as isize - ph as isize;
                if y < 0 || y >= h as isize {
                    continue;
                }
                for dj in 0..kw {
                    let xx = (j + dj) as isize - pw as isize;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let xbase = (y as usize * w + xx as usize) * cin;
                    let kbase = (di * kw + dj) * cin * cout;
                    let obase = (i * ow + j) * cout;
                    for ci in 0..cin {
                        let xv = x.data[xbase + ci];
                        let krow = &kernel.data[kbase + ci * cout..kbase + (ci + 1) * cout];
                        for co in 0..cout {
                            out[obase + co] += xv * krow[co];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![oh, ow, cout], out)
}

/// Depthwise cross-correlation: kernel[kh×kw×C], one filter per channel.
pub fn conv2d_depthwise(x: &Tensor, kernel: &Tensor, padding: Padding) -> Result<Tensor> {
    if x.rank() != 3 || kernel.rank() != 3 {
        return Err(Error::Dimension(format!(
            "depthwise conv2d expects x rank 3 and kernel rank 3, got {} and {}",
            fmt_shape(x.shape()),
            fmt_shape(kernel.shape())
        )));
    }
    let (h, w, c) = (x.shape[0], x.shape[1], x.shape[2]);
    let (kh, kw, kc) = (kernel.shape[0], kernel.shape[1], kernel.shape[2]);
    if c != kc {
        return Err(Error::Dimension(format!(
            "depthwise conv2d channel mismatch: input {} vs kernel {}",
            fmt_shape(x.shape()),
            fmt_shape(kernel.shape())
        )));
    }
    let (oh, ow, ph, pw) = conv_extents(h, w, kh, kw, padding)?;
    let mut out = vec![0.0; oh * ow * c];
    for i in 0..oh {
        for j in 0..ow {
            for di in 0..kh {
                let y = (i + di) as isize - ph as isize;
                if y < 0 || y >= h as isize {
                    continue;
                }
                for dj in 0..kw {
                    let xx = (j + dj) as isize - pw as isize;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let xbase = (y as usize * w + xx as usize) * c;
                    let kbase = (di * kw + dj) * c;
                    let obase = (i * ow + j) * c;
                    for ch in 0..c {
                        out[obase + ch] += x.data[xbase + ch] * kernel.data[kbase + ch];
                    }
                }
            }
        }
    }
    Tensor::new(vec![oh, ow, c], out)
}

fn conv_extents(
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    padding: Padding,
) -> Result<(usize, usize, usize, usize)> {
    match padding {
        Padding::Same => {
            if kh % 2 == 0 || kw % 2 == 0 {
                return Err(Error::Argument(format!(
                    "same padding requires odd kernel extents, got {kh}x{kw}"
                )));
            }
            Ok((h, w, kh / 2, kw / 2))
        }
        Padding::None => {
            if kh > h || kw > w {
                return Err(Error::Dimension(format!(
                    "kernel {kh}x{kw} larger than input {h}x{w} with no padding"
                )));
            }
            Ok((h - kh + 1, w - kw + 1, 0, 0))
        }
    }
}

/// Gradient of conv2d w.r.t. its input: scatter of `gout` through the kernel.
pub(crate) fn conv2d_input_grad(
    gout: &Tensor,
    kernel: &Tensor,
    in_shape: &[usize],
    padding: Padding,
) -> Result<Tensor> {
    let (h, w, cin) = (in_shape[0], in_shape[1], in_shape[2]);
    let (kh, kw, cout) = (kernel.shape[0], kernel.shape[1], kernel.shape[3]);
    let (oh, ow, ph, pw) = conv_extents(h, w, kh, kw, padding)?;
    let mut gx = vec![0.0; h * w * cin];
    for i in 0..oh {
        for j in 0..ow {
            for di in 0..kh {
                let y = (i + di) as isize - ph as isize;
                if y < 0 || y >= h as isize {
                    continue;
                }
                for dj in 0..kw {
                    let xx = (j + dj) as isize - pw as isize;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let xbase = (y as usize * w + xx as usize) * cin;
                    let kbase = (di * kw + dj) * cin * cout;
                    let obase = (i * ow + j) * cout;
                    for ci in 0..cin {
                        let krow = &kernel.data[kbase + ci * cout..kbase + (ci + 1) * cout];
                        let mut acc = 0.0;
                        for co in 0..cout {
                            acc += gout.data[obase + co] * krow[co];
                        }
                        gx[xbase + ci] += acc;
                    }
                }
            }
        }
    }
    Tensor::new(in_shape.to_vec(), gx)
}

/// Gradient of conv2d w.r.t. its kernel.
pub(crate) fn conv2d_kernel_grad(
    gout: &Tensor,
    x: &Tensor,
    kernel_shape: &[usize],
    padding: Padding,
) -> Result<Tensor> {
    let (h, w, cin) = (x.shape[0], x.shape[1], x.shape[2]);
    let (kh, kw, cout) = (kernel_shape[0], kernel_shape[1], kernel_shape[3]);
    let (oh, ow, ph, pw) = conv_extents(h, w, kh, kw, padding)?;
    let mut gk = vec![0.0; kh * kw * cin * cout];
    for i in 0..oh {
        for j in 0..ow {
            for di in 0..kh {
                let y = (i + di) as isize - ph as isize;
                if y < 0 || y >= h as isize {
                    continue;
                }
                for dj in 0..kw {
                    let xx = (j + dj) as isize - pw as isize;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let xbase = (y as usize * w + xx as usize) * cin;
                    let kbase = (di * kw + dj) * cin * cout;
                    let obase = (i * ow + j) * cout;
                    for ci in 0..cin {
                        let xv = x.data[xbase + ci];
                        let grow = &gout.data[obase..obase + cout];
                        let kslice = &mut gk[kbase + ci * cout..kbase + (ci + 1) * cout];
                        for co in 0..cout {
                            kslice[co] += xv * grow[co];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(kernel_shape.to_vec(), gk)
}

pub(crate) fn conv2d_depthwise_input_grad(
    gout: &Tensor,
    kernel: &Tensor,
    in_shape: &[usize],
    padding: Padding,
) -> Result<Tensor> {
    let (h, w, c) = (in_shape[0], in_shape[1], in_shape[2]);
    let (kh, kw) = (kernel.shape[0], kernel.shape[1]);
    let (oh, ow, ph, pw) = conv_extents(h, w, kh, kw, padding)?;
    let mut gx = vec![0.0; h * w * c];
    for i in 0..oh {
        for j in 0..ow {
            for di in 0..kh {
                let y = (i + di) as isize - ph as isize;
                if y < 0 || y >= h as isize {
                    continue;
                }
                for dj in 0..kw {
                    let xx = (j + dj) as isize - pw as isize;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let xbase = (y as usize * w + xx as usize) * c;
                    let kbase = (di * kw + dj) * c;
                    let obase = (i * ow + j) * c;
                    for ch in 0..c {
                        gx[xbase + ch] += gout.data[obase + ch] * kernel.data[kbase + ch];
                    }
                }
            }
        }
    }
    Tensor::new(in_shape.to_vec(), gx)
}

pub(crate) fn conv2d_depthwise_kernel_grad(
    gout: &Tensor,
    x: &Tensor,
    kernel_shape: &[usize],
    padding: Padding,
) -> Result<Tensor> {
    let (h, w, c) = (x.shape[0], x.shape[1], x.shape[2]);
    let (kh, kw) = (kernel_shape[0], kernel_shape[1]);
    let (oh, ow, ph, pw) = conv_extents(h, w, kh, kw, padding)?;
    let mut gk = vec![0.0; kh * kw * c];
    for i in 0..oh {
        for j in 0..ow {
            for di in 0..kh {
                let y = (i + di) as isize - ph as isize;
                if y < 0 || y >= h as isize {
                    continue;
                }
                for dj in 0..kw {
                    let xx = (j + dj) as isize - pw as isize;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let xbase = (y as usize * w + xx as usize) * c;
                    let kbase = (di * kw + dj) * c;
                    let obase = (i * ow + j) * c;
                    for ch in 0..c {
                        gk[kbase + ch] += x.data[xbase + ch] * gout.data[obase + ch];
                    }
                }
            }
        }
    }
    Tensor::new(kernel_shape.to_vec(), gk)
}

/// Per-token layer normalization over the channel axis, then affine.
///
/// Returns (output, normalized values, inverse std per token); the extras
/// feed the backward rule. Variance is the population variance over C.
pub(crate) fn layer_norm_internal(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    eps: f64,
) -> Result<(Tensor, Tensor, Vec<f64>)> {
    if x.rank() != 2 {
        return Err(Error::Dimension(format!(
            "layer_norm expects rank 2 tokens, got {}",
            fmt_shape(x.shape())
        )));
    }
    let (t, c) = (x.shape[0], x.shape[1]);
    if gain.shape() != [c] || bias.shape() != [c] {
        return Err(Error::Dimension(format!(
            "layer_norm affine shapes {} / {} do not match channel count {}",
            fmt_shape(gain.shape()),
            fmt_shape(bias.shape()),
            c
        )));
    }
    if eps <= 0.0 {
        return Err(Error::Argument(format!("layer_norm eps must be > 0, got {eps}")));
    }
    let mut out = vec![0.0; t * c];
    let mut xhat = vec![0.0; t * c];
    let mut istd = vec![0.0; t];
    for row in 0..t {
        let xs = &x.data[row * c..(row + 1) * c];
        let mean = xs.iter().sum::<f64>() / c as f64;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let inv = 1.0 / (var + eps).sqrt();
        istd[row] = inv;
        for ch in 0..c {
            let n = (xs[ch] - mean) * inv;
            xhat[row * c + ch] = n;
            out[row * c + ch] = gain.data[ch] * n + bias.data[ch];
        }
    }
    Ok((
        Tensor::new(vec![t, c], out)?,
        Tensor::new(vec![t, c], xhat)?,
        istd,
    ))
}

pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    layer_norm_internal(x, gain, bias, eps).map(|(y, _, _)| y)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResampleMode {
    Nearest,
    Bilinear,
}

/// A positive rational resampling factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ratio {
    pub num: usize,
    pub den: usize,
}

impl Ratio {
    pub fn new(num: usize, den: usize) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::Argument(format!(
                "resample factor must be positive, got {num}/{den}"
            )));
        }
        Ok(Ratio { num, den })
    }

    pub fn integer(r: usize) -> Self {
        Ratio { num: r, den: 1 }
    }

    fn apply(&self, extent: usize) -> Result<usize> {
        let scaled = extent * self.num;
        if scaled % self.den != 0 {
            return Err(Error::Argument(format!(
                "factor {}/{} applied to extent {} yields a non-integer result",
                self.num, self.den, extent
            )));
        }
        Ok(scaled / self.den)
    }
}

/// Per-axis gather plan: for each output index, two source indices and the
/// interpolation weight of the second one. Sampling uses half-pixel centers.
fn axis_plan(n_in: usize, n_out: usize, mode: ResampleMode) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            match mode {
                ResampleMode::Nearest => {
                    let idx = (s.round() as usize).min(n_in - 1);
                    (idx, idx, 0.0)
                }
                ResampleMode::Bilinear => {
                    let i0 = s.floor() as usize;
                    let i1 = (i0 + 1).min(n_in - 1);
                    (i0, i1, s - i0 as f64)
                }
            }
        })
        .collect()
}

/// Resamples x[H×W×C] by a rational factor with half-pixel-center sampling.
pub fn resample(x: &Tensor, factor: Ratio, mode: ResampleMode) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(Error::Dimension(format!(
            "resample expects rank 3 input, got {}",
            fmt_shape(x.shape())
        )));
    }
    let (h, w, c) = (x.shape[0], x.shape[1], x.shape[2]);
    let oh = factor.apply(h)?;
    let ow = factor.apply(w)?;
    let rows = axis_plan(h, oh, mode);
    let cols = axis_plan(w, ow, mode);
    let mut out = vec![0.0; oh * ow * c];
    for (i, &(r0, r1, ty)) in rows.iter().enumerate() {
        for (j, &(c0, c1, tx)) in cols.iter().enumerate() {
            let obase = (i * ow + j) * c;
            for ch in 0..c {
                let v00 = x.data[(r0 * w + c0) * c + ch];
                let v01 = x.data[(r0 * w + c1) * c + ch];
                let v10 = x.data[(r1 * w + c0) * c + ch];
                let v11 = x.data[(r1 * w + c1) * c + ch];
                let top = v00 + tx * (v01 - v00);
                let bot = v10 + tx * (v11 - v10);
                out[obase + ch] = top + ty * (bot - top);
            }
        }
    }
    Tensor::new(vec![oh, ow, c], out)
}

/// Adjoint of [`resample`]: scatters output gradients back with the same weights.
pub(crate) fn resample_grad(
    gout: &Tensor,
    in_shape: &[usize],
    factor: Ratio,
    mode: ResampleMode,
) -> Result<Tensor> {
    let (h, w, c) = (in_shape[0], in_shape[1], in_shape[2]);
    let oh = factor.apply(h)?;
    let ow = factor.apply(w)?;
    let rows = axis_plan(h, oh, mode);
    let cols = axis_plan(w, ow, mode);
    let mut gx = vec![0.0; h * w * c];
    for (i, &(r0, r1, ty)) in rows.iter().enumerate() {
        for (j, &(c0, c1, tx)) in cols.iter().enumerate() {
            let obase = (i * ow + j) * c;
            for ch in 0..c {
                let g = gout.data[obase + ch];
                gx[(r0 * w + c0) * c + ch] += g * (1.0 - ty) * (1.0 - tx);
                gx[(r0 * w + c1) * c + ch] += g * (1.0 - ty) * tx;
                gx[(r1 * w + c0) * c + ch] += g * ty * (1.0 - tx);
                gx[(r1 * w + c1) * c + ch] += g * ty * tx;
            }
        }
    }
    Tensor::new(in_shape.to_vec(), gx)
}
