//! Non-blind deconvolution once the kernel is known.
//!
//! Both methods solve on a periodic domain. [`deconvolve`] first embeds the
//! observation in a larger frame (replicate edges, then a cosine taper toward
//! the image mean) so that wrap-around seams are smooth, and crops back.

use std::f64::consts::PI;
use std::str::FromStr;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{crop, pad, BlurKernel, BoundaryPolicy, RasterImage};
use crate::latent::soft_shrink;

/// Width of the cosine blend at the outer frame edge, in pixels.
pub const EDGE_TAPER: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NonblindMethod {
    /// Quadratic gradient penalty, solved in closed form.
    TikhonovFrequency,
    /// Anisotropic ℓ1 gradient penalty via half-quadratic splitting.
    SparseGradient,
}

impl FromStr for NonblindMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tikhonov" | "tikhonov-frequency" => Ok(Self::TikhonovFrequency),
            "sparse" | "sparse-gradient" => Ok(Self::SparseGradient),
            other => Err(Error::config(format!("unknown non-blind method `{other}` (expected tikhonov or sparse)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonblindConfig {
    pub method: NonblindMethod,
    pub reg_weight: f64,
    /// Splitting rounds for the sparse method; ignored by Tikhonov.
    pub inner_iters: usize,
}

impl Default for NonblindConfig {
    fn default() -> Self {
        Self {
            method: NonblindMethod::TikhonovFrequency,
            reg_weight: 1e-3,
            inner_iters: 8,
        }
    }
}

impl NonblindConfig {
    /// Sparse-gradient stage paired with [`SolverConfig::tuned`](crate::config::SolverConfig::tuned).
    pub fn tuned() -> Self {
        Self {
            method: NonblindMethod::SparseGradient,
            reg_weight: 1e-3,
            inner_iters: 8,
        }
    }

    /// Looks up a named preset (`baseline` or `tuned`).
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "baseline" => Ok(Self::default()),
            "tuned" => Ok(Self::tuned()),
            other => Err(Error::config(format!("unknown preset `{other}` (expected baseline or tuned)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.reg_weight > 0.0 && self.reg_weight.is_finite()) {
            return Err(Error::config(format!("non-blind reg weight must be positive, got {}", self.reg_weight)));
        }
        if self.method == NonblindMethod::SparseGradient && self.inner_iters == 0 {
            return Err(Error::config("sparse non-blind method needs at least one iteration"));
        }
        Ok(())
    }
}

/// 2-D FFT over a row-major `w x h` buffer: rows first, then columns.
struct Fft2 {
    w: usize,
    h: usize,
    row_fwd: std::sync::Arc<dyn rustfft::Fft<f64>>,
    row_inv: std::sync::Arc<dyn rustfft::Fft<f64>>,
    col_fwd: std::sync::Arc<dyn rustfft::Fft<f64>>,
    col_inv: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl Fft2 {
    fn new(w: usize, h: usize) -> Self {
        let mut p = FftPlanner::new();
        Self {
            w,
            h,
            row_fwd: p.plan_fft_forward(w),
            row_inv: p.plan_fft_inverse(w),
            col_fwd: p.plan_fft_forward(h),
            col_inv: p.plan_fft_inverse(h),
        }
    }

    fn run(&self, buf: &mut [Complex64], inverse: bool) {
        let (w, h) = (self.w, self.h);
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        row.process(buf);
        let mut column = vec![Complex64::default(); h];
        for x in 0..w {
            for y in 0..h {
                column[y] = buf[y * w + x];
            }
            col.process(&mut column);
            for y in 0..h {
                buf[y * w + x] = column[y];
            }
        }
        if inverse {
            let n = (w * h) as f64;
            buf.iter_mut().for_each(|v| *v /= n);
        }
    }

    fn forward_real(&self, data: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.run(&mut buf, false);
        buf
    }

    fn inverse_real(&self, mut buf: Vec<Complex64>) -> Vec<f64> {
        self.run(&mut buf, true);
        buf.into_iter().map(|c| c.re).collect()
    }
}

/// Transfer function of `k` on a periodic `w x h` grid, kernel center at the origin.
fn kernel_otf(k: &BlurKernel, fft: &Fft2) -> Vec<Complex64> {
    let (w, h) = (fft.w, fft.h);
    let side = k.side();
    let r = side / 2;
    let mut grid = vec![0.0; w * h];
    for j in 0..side {
        for i in 0..side {
            let x = (i + w * side - r) % w;
            let y = (j + h * side - r) % h;
            grid[y * w + x] += k.weights()[j * side + i];
        }
    }
    fft.forward_real(&grid)
}

/// Frequency responses of the periodic forward differences along x and y.
fn difference_otfs(w: usize, h: usize) -> (Vec<Complex64>, Vec<Complex64>) {
    let mut dx = Vec::with_capacity(w * h);
    let mut dy = Vec::with_capacity(w * h);
    for v in 0..h {
        for u in 0..w {
            let ax = 2.0 * PI * u as f64 / w as f64;
            let ay = 2.0 * PI * v as f64 / h as f64;
            dx.push(Complex64::new(ax.cos() - 1.0, ax.sin()));
            dy.push(Complex64::new(ay.cos() - 1.0, ay.sin()));
        }
    }
    (dx, dy)
}

/// Exact minimizer of `‖k ⊛ x − y‖² + reg (‖∂x x‖² + ‖∂y x‖²)` with periodic
/// convolution and periodic forward differences. No clamping.
pub fn tikhonov_periodic(y: &RasterImage, k: &BlurKernel, reg_weight: f64) -> Result<RasterImage> {
    if !(reg_weight > 0.0 && reg_weight.is_finite()) {
        return Err(Error::config(format!("reg weight must be positive, got {reg_weight}")));
    }
    let (w, h) = y.dims();
    let fft = Fft2::new(w, h);
    let kf = kernel_otf(k, &fft);
    let (dx, dy) = difference_otfs(w, h);
    let yf = fft.forward_real(y.data());
    let xf: Vec<Complex64> = (0..w * h)
        .map(|i| {
            let den = kf[i].norm_sqr() + reg_weight * (dx[i].norm_sqr() + dy[i].norm_sqr());
            if den <= f64::MIN_POSITIVE {
                // only reachable when K(0) = 0, impossible for unit-sum kernels
                Complex64::default()
            } else {
                kf[i].conj() * yf[i] / den
            }
        })
        .collect();
    RasterImage::new(w, h, fft.inverse_real(xf))
}

/// Half-quadratic splitting for `‖k ⊛ x − y‖² + reg Σ (|∂x x| + |∂y x|)` on a
/// periodic domain. The penalty weight starts at `reg` and doubles each round.
pub fn sparse_gradient_periodic(y: &RasterImage, k: &BlurKernel, reg_weight: f64, iters: usize) -> Result<RasterImage> {
    if !(reg_weight > 0.0 && reg_weight.is_finite()) {
        return Err(Error::config(format!("reg weight must be positive, got {reg_weight}")));
    }
    let (w, h) = y.dims();
    let fft = Fft2::new(w, h);
    let kf = kernel_otf(k, &fft);
    let (dxf, dyf) = difference_otfs(w, h);
    let yf = fft.forward_real(y.data());
    let kty: Vec<Complex64> = kf.iter().zip(&yf).map(|(a, b)| a.conj() * b).collect();
    let mut x = tikhonov_periodic(y, k, reg_weight)?.into_data();
    let mut beta = reg_weight;
    for _ in 0..iters {
        beta *= 2.0;
        let tau = reg_weight / (2.0 * beta);
        let mut wx = vec![0.0; w * h];
        let mut wy = vec![0.0; w * h];
        for row in 0..h {
            for col in 0..w {
                let i = row * w + col;
                let right = row * w + (col + 1) % w;
                let down = ((row + 1) % h) * w + col;
                wx[i] = soft_shrink(x[right] - x[i], tau);
                wy[i] = soft_shrink(x[down] - x[i], tau);
            }
        }
        let wxf = fft.forward_real(&wx);
        let wyf = fft.forward_real(&wy);
        let xf: Vec<Complex64> = (0..w * h)
            .map(|i| {
                let num = kty[i] + beta * (dxf[i].conj() * wxf[i] + dyf[i].conj() * wyf[i]);
                let den = kf[i].norm_sqr() + beta * (dxf[i].norm_sqr() + dyf[i].norm_sqr());
                if den <= f64::MIN_POSITIVE {
                    Complex64::default()
                } else {
                    num / den
                }
            })
            .collect();
        x = fft.inverse_real(xf);
    }
    RasterImage::new(w, h, x)
}

/// Smallest `n' ≥ n` whose only prime factors are 2, 3 and 5.
pub fn efficient_size(n: usize) -> usize {
    (n.max(1)..)
        .find(|&m| {
            let mut v = m;
            for p in [2, 3, 5] {
                while v % p == 0 {
                    v /= p;
                }
            }
            v == 1
        })
        .expect("unbounded search")
}

/// Replicate-pads by the kernel radius plus the taper, grows to an FFT-friendly
/// size, and fades the outer band to the image mean.
fn periodic_frame(y: &RasterImage, radius: usize) -> (RasterImage, usize) {
    let margin = radius + 2 * EDGE_TAPER;
    let (w, h) = y.dims();
    let fw = efficient_size(w + 2 * margin);
    let fh = efficient_size(h + 2 * margin);
    let big = pad(y, margin + fw.max(fh), BoundaryPolicy::ReplicateEdge);
    let off = fw.max(fh);
    let framed = crop(&big, off, off, fw, fh).expect("frame fits inside padding");
    let mean = y.mean();
    // distance to the nearest frame edge, counting the wrap seam
    let fade = |d: usize| -> f64 {
        if d >= EDGE_TAPER {
            1.0
        } else {
            0.5 - 0.5 * (PI * (d as f64 + 0.5) / EDGE_TAPER as f64).cos()
        }
    };
    let data = framed.data();
    let out = (0..fw * fh)
        .map(|i| {
            let (x, yy) = (i % fw, i / fw);
            let a = fade(x.min(fw - 1 - x)) * fade(yy.min(fh - 1 - yy));
            if a == 1.0 {
                data[i]
            } else {
                mean + a * (data[i] - mean)
            }
        })
        .collect();
    (RasterImage::new(fw, fh, out).expect("finite frame"), margin)
}

/// Deconvolves `y` by `k`; the result has `y`'s dimensions and lies in `[0, 1]`.
pub fn deconvolve(y: &RasterImage, k: &BlurKernel, cfg: &NonblindConfig) -> Result<RasterImage> {
    cfg.validate()?;
    let (frame, margin) = periodic_frame(y, k.side() / 2);
    let solved = match cfg.method {
        NonblindMethod::TikhonovFrequency => tikhonov_periodic(&frame, k, cfg.reg_weight)?,
        NonblindMethod::SparseGradient => sparse_gradient_periodic(&frame, k, cfg.reg_weight, cfg.inner_iters)?,
    };
    let out = crop(&solved, margin, margin, y.width(), y.height())?;
    if !out.all_finite() {
        return Err(Error::NumericDivergence {
            stage: "nonblind",
            iteration: cfg.inner_iters,
        });
    }
    Ok(out.clamped(0.0, 1.0))
}

/// Applies [`deconvolve`] to each plane independently.
pub fn deconvolve_channels(planes: &[RasterImage], k: &BlurKernel, cfg: &NonblindConfig) -> Result<Vec<RasterImage>> {
    use rayon::prelude::*;
    planes.par_iter().map(|p| deconvolve(p, k, cfg)).collect()
}
