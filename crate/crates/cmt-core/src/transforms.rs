//! 2D discrete Fourier transform and orthonormal Haar wavelet transform,
//! with inverses for round-trip testing and differentiable wrappers for the
//! hybrid loss.
//!
//! Conventions, fixed so downstream values are bit-stable:
//! - Forward DFT is unnormalized with sign -1 in the exponent; the inverse
//!   carries the 1/(HW) factor. Twiddle angles are reduced modulo the axis
//!   length before evaluating sin/cos.
//! - The Haar analysis of a 2x2 block [[a,b],[c,d]] is
//!   LL=(a+b+c+d)/2, HL=(a-b+c-d)/2, LH=(a+b-c-d)/2, HH=(a-b-c+d)/2,
//!   an orthonormal filter bank, so total energy is preserved exactly.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::{fmt_shape, Tensor};

/// Real and imaginary planes of a 2D spectrum.
#[derive(Clone, Debug)]
pub struct ComplexPlane {
    pub real: Tensor,
    pub imag: Tensor,
}

impl ComplexPlane {
    pub fn new(real: Tensor, imag: Tensor) -> Result<Self> {
        if real.shape() != imag.shape() {
            return Err(Error::Dimension(format!(
                "complex planes disagree: {} vs {}",
                fmt_shape(real.shape()),
                fmt_shape(imag.shape())
            )));
        }
        Ok(ComplexPlane { real, imag })
    }
}

/// One level of detail subbands.
#[derive(Clone, Debug)]
pub struct WaveletLevel {
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
}

/// Haar analysis pyramid: detail subbands per level plus the coarsest
/// approximation.
#[derive(Clone, Debug)]
pub struct WaveletPyramid {
    pub levels: Vec<WaveletLevel>,
    pub coarsest: Tensor,
}

fn require_plane(x: &Tensor, op: &str) -> Result<(usize, usize)> {
    if x.rank() != 2 {
        return Err(Error::Dimension(format!(
            "{op} expects a rank-2 plane, got {}",
            fmt_shape(x.shape())
        )));
    }
    Ok((x.shape()[0], x.shape()[1]))
}

/// Twiddle table for axis length n: entry k holds e^(sign * 2*pi*i * k/n).
fn twiddles(n: usize, sign: f64) -> (Vec<f64>, Vec<f64>) {
    let mut re = Vec::with_capacity(n);
    let mut im = Vec::with_capacity(n);
    for k in 0..n {
        let angle = sign * 2.0 * std::f64::consts::PI * k as f64 / n as f64;
        re.push(angle.cos());
        im.push(angle.sin());
    }
    (re, im)
}

/// Separable complex DFT over both axes of an H×W plane pair.
/// sign -1 is the forward direction; no normalization is applied.
fn dft2_complex(re: &[f64], im: &[f64], h: usize, w: usize, sign: f64) -> (Vec<f64>, Vec<f64>) {
    // rows first
    let (twr, twi) = twiddles(w, sign);
    let mut row_re = vec![0.0; h * w];
    let mut row_im = vec![0.0; h * w];
    for n in 0..h {
        for v in 0..w {
            let mut acc_re = 0.0;
            let mut acc_im = 0.0;
            for m in 0..w {
                let k = (v * m) % w;
                let (c, s) = (twr[k], twi[k]);
                let (xr, xi) = (re[n * w + m], im[n * w + m]);
                acc_re += xr * c - xi * s;
                acc_im += xr * s + xi * c;
            }
            row_re[n * w + v] = acc_re;
            row_im[n * w + v] = acc_im;
        }
    }
    // then columns
    let (tcr, tci) = twiddles(h, sign);
    let mut out_re = vec![0.0; h * w];
    let mut out_im = vec![0.0; h * w];
    for v in 0..w {
        for u in 0..h {
            let mut acc_re = 0.0;
            let mut acc_im = 0.0;
            for n in 0..h {
                let k = (u * n) % h;
                let (c, s) = (tcr[k], tci[k]);
                let (xr, xi) = (row_re[n * w + v], row_im[n * w + v]);
                acc_re += xr * c - xi * s;
                acc_im += xr * s + xi * c;
            }
            out_re[u * w + v] = acc_re;
            out_im[u * w + v] = acc_im;
        }
    }
    (out_re, out_im)
}

/// Unnormalized forward 2D DFT of a real plane.
pub fn dft2(x: &Tensor) -> Result<ComplexPlane> {
    let (h, w) = require_plane(x, "dft2")?;
    let zeros = vec![0.0; h * w];
    let (re, im) = dft2_complex(x.data(), &zeros, h, w, -1.0);
    ComplexPlane::new(Tensor::new(vec![h, w], re)?, Tensor::new(vec![h, w], im)?)
}

/// Inverse 2D DFT with 1/(HW) normalization; returns the real plane.
pub fn idft2(f: &ComplexPlane) -> Result<Tensor> {
    let (h, w) = require_plane(&f.real, "idft2")?;
    let (re, _) = dft2_complex(f.real.data(), f.imag.data(), h, w, 1.0);
    let norm = 1.0 / (h * w) as f64;
    Tensor::new(vec![h, w], re.into_iter().map(|v| v * norm).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subband {
    Ll,
    Lh,
    Hl,
    Hh,
}

impl Subband {
    /// Analysis weights for the (a, b, c, d) corners of each 2x2 block,
    /// before the common 1/2 factor.
    fn signs(self) -> [f64; 4] {
        match self {
            Subband::Ll => [1.0, 1.0, 1.0, 1.0],
            Subband::Hl => [1.0, -1.0, 1.0, -1.0],
            Subband::Lh => [1.0, 1.0, -1.0, -1.0],
            Subband::Hh => [1.0, -1.0, -1.0, 1.0],
        }
    }
}

fn require_even(h: usize, w: usize, op: &str) -> Result<()> {
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Argument(format!(
            "{op} requires even extents at every level, got {h}x{w}"
        )));
    }
    Ok(())
}

/// Single-subband Haar analysis of an H×W plane (H, W even).
pub fn dwt_subband(x: &Tensor, subband: Subband) -> Result<Tensor> {
    let (h, w) = require_plane(x, "dwt_subband")?;
    require_even(h, w, "dwt_subband")?;
    let [sa, sb, sc, sd] = subband.signs();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            let a = x.data()[(2 * i) * w + 2 * j];
            let b = x.data()[(2 * i) * w + 2 * j + 1];
            let c = x.data()[(2 * i + 1) * w + 2 * j];
            let d = x.data()[(2 * i + 1) * w + 2 * j + 1];
            out[i * ow + j] = 0.5 * (sa * a + sb * b + sc * c + sd * d);
        }
    }
    Tensor::new(vec![oh, ow], out)
}

/// Full J-level orthonormal Haar analysis.
pub fn dwt2_haar(x: &Tensor, levels: usize) -> Result<WaveletPyramid> {
    let (h, w) = require_plane(x, "dwt2_haar")?;
    if levels == 0 {
        return Err(Error::Argument("dwt2_haar requires at least one level".into()));
    }
    let div = 1usize << levels;
    if h % div != 0 || w % div != 0 {
        return Err(Error::Argument(format!(
            "dwt2_haar with {levels} levels requires extents divisible by {div}, got {h}x{w}"
        )));
    }
    let mut ll = x.clone();
    let mut out_levels = Vec::with_capacity(levels);
    for _ in 0..levels {
        let lh = dwt_subband(&ll, Subband::Lh)?;
        let hl = dwt_subband(&ll, Subband::Hl)?;
        let hh = dwt_subband(&ll, Subband::Hh)?;
        let next = dwt_subband(&ll, Subband::Ll)?;
        out_levels.push(WaveletLevel { lh, hl, hh });
        ll = next;
    }
    Ok(WaveletPyramid {
        levels: out_levels,
        coarsest: ll,
    })
}

/// Exact inverse of [`dwt2_haar`].
pub fn idwt2_haar(p: &WaveletPyramid) -> Result<Tensor> {
    if p.levels.is_empty() {
        return Err(Error::Structure("wavelet pyramid has no levels".into()));
    }
    let mut ll = p.coarsest.clone();
    for level in p.levels.iter().rev() {
        let (h2, w2) = require_plane(&ll, "idwt2_haar")?;
        for band in [&level.lh, &level.hl, &level.hh] {
            if band.shape() != [h2, w2] {
                return Err(Error::Structure(format!(
                    "subband shape {} does not match approximation {}",
                    fmt_shape(band.shape()),
                    fmt_shape(&[h2, w2])
                )));
            }
        }
        let (h, w) = (h2 * 2, w2 * 2);
        let mut out = vec![0.0; h * w];
        for i in 0..h2 {
            for j in 0..w2 {
                let idx = i * w2 + j;
                let (vll, vhl, vlh, vhh) = (
                    ll.data()[idx],
                    level.hl.data()[idx],
                    level.lh.data()[idx],
                    level.hh.data()[idx],
                );
                out[(2 * i) * w + 2 * j] = 0.5 * (vll + vhl + vlh + vhh);
                out[(2 * i) * w + 2 * j + 1] = 0.5 * (vll - vhl + vlh - vhh);
                out[(2 * i + 1) * w + 2 * j] = 0.5 * (vll + vhl - vlh - vhh);
                out[(2 * i + 1) * w + 2 * j + 1] = 0.5 * (vll - vhl - vlh + vhh);
            }
        }
        ll = Tensor::new(vec![h, w], out)?;
    }
    Ok(ll)
}

// ---- differentiable wrappers ----

/// Spectrum node pair produced by [`dft2_node`].
#[derive(Clone, Copy, Debug)]
pub struct ComplexNodes {
    pub real: NodeId,
    pub imag: NodeId,
}

/// Differentiable forward DFT. The two output planes are separate nodes;
/// each side's backward rule is the adjoint (inverse-direction, unnormalized)
/// transform of its own gradient plane.
pub fn dft2_node(g: &mut Graph, x: NodeId) -> Result<ComplexNodes> {
    let (h, w) = require_plane(g.value(x), "dft2")?;
    let spectrum = dft2(g.value(x))?;
    let real = g.apply(spectrum.real, vec![x], Box::new(move |ctx| {
        let zeros = vec![0.0; h * w];
        let (gr, _) = dft2_complex(ctx.grad.data(), &zeros, h, w, 1.0);
        vec![Tensor::new(vec![h, w], gr).expect("shape")]
    }));
    let imag = g.apply(spectrum.imag, vec![x], Box::new(move |ctx| {
        let zeros = vec![0.0; h * w];
        // d(im[u,v])/dx[n,m] = sin(theta); adjoint is the imaginary part of
        // the +1-direction transform
        let (_, gi) = dft2_complex(ctx.grad.data(), &zeros, h, w, 1.0);
        vec![Tensor::new(vec![h, w], gi).expect("shape")]
    }));
    Ok(ComplexNodes { real, imag })
}

/// Differentiable single-subband Haar analysis step.
pub fn dwt_subband_node(g: &mut Graph, x: NodeId, subband: Subband) -> Result<NodeId> {
    let value = dwt_subband(g.value(x), subband)?;
    let (h, w) = (g.value(x).shape()[0], g.value(x).shape()[1]);
    Ok(g.apply(value, vec![x], Box::new(move |gctx| {
        let [sa, sb, sc, sd] = subband.signs();
        let (oh, ow) = (h / 2, w / 2);
        let mut gx = vec![0.0; h * w];
        for i in 0..oh {
            for j in 0..ow {
                let gv = 0.5 * gctx.grad.data()[i * ow + j];
                gx[(2 * i) * w + 2 * j] += sa * gv;
                gx[(2 * i) * w + 2 * j + 1] += sb * gv;
                gx[(2 * i + 1) * w + 2 * j] += sc * gv;
                gx[(2 * i + 1) * w + 2 * j + 1] += sd * gv;
            }
        }
        vec![Tensor::new(vec![h, w], gx).expect("shape")]
    })))
}

/// Node-level wavelet pyramid used by the loss.
pub struct PyramidNodes {
    pub levels: Vec<(NodeId, NodeId, NodeId)>,
    pub coarsest: NodeId,
}

pub fn dwt2_haar_nodes(g: &mut Graph, x: NodeId, levels: usize) -> Result<PyramidNodes> {
    let (h, w) = require_plane(g.value(x), "dwt2_haar")?;
    if levels == 0 {
        return Err(Error::Argument("dwt2_haar requires at least one level".into()));
    }
    let div = 1usize << levels;
    if h % div != 0 || w % div != 0 {
        return Err(Error::Argument(format!(
            "dwt2_haar with {levels} levels requires extents divisible by {div}, got {h}x{w}"
        )));
    }
    let mut ll = x;
    let mut out = Vec::with_capacity(levels);
    for _ in 0..levels {
        let lh = dwt_subband_node(g, ll, Subband::Lh)?;
        let hl = dwt_subband_node(g, ll, Subband::Hl)?;
        let hh = dwt_subband_node(g, ll, Subband::Hh)?;
        ll = dwt_subband_node(g, ll, Subband::Ll)?;
        out.push((lh, hl, hh));
    }
    Ok(PyramidNodes {
        levels: out,
        coarsest: ll,
    })
}
