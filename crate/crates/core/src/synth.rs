//! Ground-truth blur synthesis: test kernels, additive noise and procedural
//! test images.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{convolve2d, BlurKernel, BoundaryPolicy, RasterImage};
use crate::pyramid::SeededRng;

/// Test kernel families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KernelSpec {
    Gaussian { side: usize, sigma: f64 },
    /// Line of `length` pixels through the center; `angle_deg` from the x axis.
    Motion { length: usize, angle_deg: f64 },
    Box { side: usize },
    RandomWalk { side: usize, seed: u64 },
}

impl KernelSpec {
    pub fn side(&self) -> usize {
        match *self {
            KernelSpec::Gaussian { side, .. } | KernelSpec::Box { side } | KernelSpec::RandomWalk { side, .. } => side,
            KernelSpec::Motion { length, .. } => length | 1,
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Gaussian { side, sigma } => write!(f, "gaussian:{side}:{sigma}"),
            KernelSpec::Motion { length, angle_deg } => write!(f, "motion:{length}:{angle_deg}"),
            KernelSpec::Box { side } => write!(f, "box:{side}"),
            KernelSpec::RandomWalk { side, seed } => write!(f, "walk:{side}:{seed}"),
        }
    }
}

impl FromStr for KernelSpec {
    type Err = Error;

    /// `gaussian:<side>:<sigma>`, `motion:<length>:<angle>`, `box:<side>`, `walk:<side>:<seed>`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| -> Result<&str> {
            parts
                .get(i)
                .copied()
                .ok_or_else(|| Error::config(format!("kernel spec `{s}` is missing field {i}")))
        };
        let bad = |e: &dyn fmt::Display| Error::config(format!("kernel spec `{s}`: {e}"));
        let spec = match parts[0] {
            "gaussian" if parts.len() == 3 => KernelSpec::Gaussian {
                side: num(1)?.parse().map_err(|e| bad(&e))?,
                sigma: num(2)?.parse().map_err(|e| bad(&e))?,
            },
            "motion" if parts.len() == 3 => KernelSpec::Motion {
                length: num(1)?.parse().map_err(|e| bad(&e))?,
                angle_deg: num(2)?.parse().map_err(|e| bad(&e))?,
            },
            "box" if parts.len() == 2 => KernelSpec::Box {
                side: num(1)?.parse().map_err(|e| bad(&e))?,
            },
            "walk" if parts.len() == 3 => KernelSpec::RandomWalk {
                side: num(1)?.parse().map_err(|e| bad(&e))?,
                seed: num(2)?.parse().map_err(|e| bad(&e))?,
            },
            _ => return Err(Error::config(format!("unrecognized kernel spec `{s}`"))),
        };
        Ok(spec)
    }
}

fn check_side(side: usize) -> Result<()> {
    if side == 0 || side % 2 == 0 {
        Err(Error::config(format!("kernel side must be odd, got {side}")))
    } else {
        Ok(())
    }
}

/// Adds `w` at fractional position `(x, y)` by bilinear splatting.
fn splat(grid: &mut [f64], side: usize, x: f64, y: f64, w: f64) {
    let max = (side - 1) as f64;
    let (x, y) = (x.clamp(0.0, max), y.clamp(0.0, max));
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let (x1, y1) = ((x0 + 1).min(side - 1), (y0 + 1).min(side - 1));
    for (cx, cy, cw) in [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x1, y0, fx * (1.0 - fy)),
        (x0, y1, (1.0 - fx) * fy),
        (x1, y1, fx * fy),
    ] {
        if cw > 0.0 {
            grid[cy * side + cx] += w * cw;
        }
    }
}

/// Builds a feasible kernel from a spec.
pub fn make_kernel(spec: &KernelSpec) -> Result<BlurKernel> {
    match *spec {
        KernelSpec::Gaussian { side, sigma } => {
            check_side(side)?;
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::config(format!("gaussian sigma must be positive, got {sigma}")));
            }
            let r = (side / 2) as f64;
            let w: Vec<f64> = (0..side * side)
                .map(|i| {
                    let (x, y) = ((i % side) as f64 - r, (i / side) as f64 - r);
                    (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
                })
                .collect();
            BlurKernel::from_projected(side, &w)
        }
        KernelSpec::Motion { length, angle_deg } => {
            if length == 0 || !angle_deg.is_finite() {
                return Err(Error::config(format!("motion blur needs length >= 1 and a finite angle, got {length}, {angle_deg}")));
            }
            let side = spec.side();
            let c = (side / 2) as f64;
            let mut grid = vec![0.0; side * side];
            let (s, co) = angle_deg.to_radians().sin_cos();
            let half = (length as f64 - 1.0) / 2.0;
            let samples = 16 * length.max(1) + 1;
            for i in 0..samples {
                let t = if samples == 1 { 0.0 } else { -half + 2.0 * half * i as f64 / (samples - 1) as f64 };
                // image rows grow downward; positive angles tilt the line upward
                splat(&mut grid, side, c + t * co, c - t * s, 1.0);
            }
            BlurKernel::from_projected(side, &grid)
        }
        KernelSpec::Box { side } => {
            check_side(side)?;
            BlurKernel::from_projected(side, &vec![1.0; side * side])
        }
        KernelSpec::RandomWalk { side, seed } => {
            check_side(side)?;
            let mut rng = SeededRng::new(seed);
            let c = (side / 2) as f64;
            let max = (side - 1) as f64;
            let mut grid = vec![0.0; side * side];
            let (mut x, mut y) = (c, c);
            let mut heading: f64 = rng.uniform() * std::f64::consts::TAU;
            for _ in 0..4 * side * side {
                splat(&mut grid, side, x, y, 1.0);
                heading += (rng.uniform() - 0.5) * 1.2;
                x = (x + 0.5 * heading.cos()).clamp(0.0, max);
                y = (y + 0.5 * heading.sin()).clamp(0.0, max);
            }
            BlurKernel::from_projected(side, &grid)
        }
    }
}

/// Additive i.i.d. Gaussian noise in `[0, 1]` intensity units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self { sigma: 0.0, seed: 0 }
    }
}

/// `clamp(x ⊛ k + n, 0, 1)` with replicate-edge boundaries.
pub fn synthesize(x: &RasterImage, k: &BlurKernel, noise: &NoiseSpec) -> Result<RasterImage> {
    if !(noise.sigma >= 0.0 && noise.sigma.is_finite()) {
        return Err(Error::config(format!("noise sigma must be >= 0, got {}", noise.sigma)));
    }
    let blurred = convolve2d(x, k, BoundaryPolicy::ReplicateEdge)?;
    if noise.sigma == 0.0 {
        return Ok(blurred.clamped(0.0, 1.0));
    }
    let mut rng = SeededRng::new(noise.seed);
    let normal = Normal::new(0.0, noise.sigma).map_err(|e| Error::config(e.to_string()))?;
    let data = blurred
        .data()
        .iter()
        .map(|v| (v + normal.sample(rng.inner())).clamp(0.0, 1.0))
        .collect();
    RasterImage::new(x.width(), x.height(), data)
}

/// A piecewise-smooth test scene: shaded background, rectangles, disks,
/// oriented bars and a ring, all placed from `seed`.
pub fn structured_image(width: usize, height: usize, seed: u64) -> Result<RasterImage> {
    let mut rng = SeededRng::new(seed);
    let (wf, hf) = (width as f64, height as f64);
    let mut img = vec![0.0; width * height];
    let shade_dir: f64 = rng.uniform() * std::f64::consts::TAU;
    for y in 0..height {
        for x in 0..width {
            let t = (x as f64 / wf) * shade_dir.cos() + (y as f64 / hf) * shade_dir.sin();
            img[y * width + x] = 0.35 + 0.15 * t;
        }
    }
    let scale = wf.min(hf);
    for _ in 0..6 {
        let (cx, cy) = (rng.uniform() * wf, rng.uniform() * hf);
        let (rw, rh) = (scale * (0.05 + 0.15 * rng.uniform()), scale * (0.05 + 0.15 * rng.uniform()));
        let v = rng.uniform();
        for y in 0..height {
            for x in 0..width {
                if (x as f64 - cx).abs() < rw && (y as f64 - cy).abs() < rh {
                    img[y * width + x] = v;
                }
            }
        }
    }
    for _ in 0..5 {
        let (cx, cy) = (rng.uniform() * wf, rng.uniform() * hf);
        let r = scale * (0.04 + 0.12 * rng.uniform());
        let v = rng.uniform();
        for y in 0..height {
            for x in 0..width {
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                if d < r {
                    img[y * width + x] = v;
                }
            }
        }
    }
    for _ in 0..4 {
        let (cx, cy) = (rng.uniform() * wf, rng.uniform() * hf);
        let a: f64 = rng.uniform() * std::f64::consts::PI;
        let (len, thick) = (scale * (0.2 + 0.3 * rng.uniform()), 1.0 + 2.5 * rng.uniform());
        let v = if rng.uniform() < 0.5 { 0.05 } else { 0.95 };
        let (s, c) = a.sin_cos();
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let along = dx * c + dy * s;
                let across = -dx * s + dy * c;
                if along.abs() < len / 2.0 && across.abs() < thick / 2.0 {
                    img[y * width + x] = v;
                }
            }
        }
    }
    let (cx, cy) = (wf * (0.3 + 0.4 * rng.uniform()), hf * (0.3 + 0.4 * rng.uniform()));
    let r_out = scale * 0.12;
    let r_in = r_out * 0.6;
    for y in 0..height {
        for x in 0..width {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            if d < r_out && d > r_in {
                img[y * width + x] = 0.9;
            }
        }
    }
    RasterImage::new(width, height, img)
}

/// Renders `f` over continuous coordinates with 4x4 supersampling per pixel,
/// giving anti-aliased edges like a camera's optical low-pass would.
fn supersampled(size: usize, f: impl Fn(f64, f64) -> f64) -> Result<RasterImage> {
    const SUB: usize = 4;
    RasterImage::from_fn(size, size, |x, y| {
        let mut acc = 0.0;
        for j in 0..SUB {
            for i in 0..SUB {
                acc += f(x as f64 + (i as f64 + 0.5) / SUB as f64, y as f64 + (j as f64 + 0.5) / SUB as f64);
            }
        }
        acc / (SUB * SUB) as f64
    })
}

/// Deterministic mix of procedural images: structured scenes, oblique bar
/// gratings, radial spokes and rotated random cells. Patterned images are
/// rendered anti-aliased and off the pixel axes, since edges aligned with the
/// 2x2 Haar grid leave no diagonal energy at all.
pub fn test_corpus(size: usize, count: usize) -> Result<Vec<RasterImage>> {
    let s = size as f64;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let img = match i % 5 {
            0 | 1 => structured_image(size, size, 1000 + i as u64)?,
            2 => {
                let period = 6.0 + (i % 7) as f64;
                let (sn, cs) = (20.0 + 7.0 * i as f64).to_radians().sin_cos();
                supersampled(size, |u, v| {
                    let t = u * cs + v * sn;
                    let bars = if (t / period).floor() as i64 % 2 == 0 { 0.8 } else { 0.2 };
                    bars * (0.7 + 0.3 * (v / s))
                })?
            }
            3 => {
                let spokes = 8.0 + (i % 4) as f64 * 2.0;
                supersampled(size, |u, v| {
                    let a = (v - s / 2.0).atan2(u - s / 2.0);
                    if (a * spokes / std::f64::consts::PI).floor() as i64 % 2 == 0 {
                        0.85
                    } else {
                        0.15
                    }
                })?
            }
            _ => {
                let cell = (8 + (i % 3) * 4) as f64;
                let (sn, cs) = (15.0 + 10.0 * (i % 3) as f64).to_radians().sin_cos();
                let salt = 77 + i as u64;
                supersampled(size, |u, v| {
                    let cx = ((u * cs + v * sn) / cell).floor() as i64;
                    let cy = ((v * cs - u * sn) / cell).floor() as i64;
                    let key = (cx.wrapping_mul(0x1F1F_1F1F) ^ cy) as u64;
                    (SeededRng::derive_seed(salt, key) % 1000) as f64 / 999.0
                })?
            }
        };
        out.push(img);
    }
    Ok(out)
}

/// Peak absolute deviation between two equally sized kernels.
pub fn max_abs_diff(a: &BlurKernel, b: &BlurKernel) -> f64 {
    a.weights().iter().zip(b.weights()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Pearson correlation between `estimate` and `truth`, maximized over integer
/// shifts of `estimate` up to `max_shift` pixels per axis. Entries shifted in
/// from outside the grid count as zero. Returns the best score and its shift.
pub fn aligned_ncc(estimate: &BlurKernel, truth: &BlurKernel, max_shift: usize) -> Result<(f64, (isize, isize))> {
    if estimate.side() != truth.side() {
        return Err(Error::dim(format!(
            "kernel sides differ: {} vs {}",
            estimate.side(),
            truth.side()
        )));
    }
    let n = truth.side() as isize;
    let t = truth.weights();
    let e = estimate.weights();
    let m = max_shift as isize;
    let mut best = (f64::NEG_INFINITY, (0, 0));
    for dy in -m..=m {
        for dx in -m..=m {
            let shifted: Vec<f64> = (0..n * n)
                .map(|i| {
                    let (x, y) = (i % n - dx, i / n - dy);
                    if (0..n).contains(&x) && (0..n).contains(&y) {
                        e[(y * n + x) as usize]
                    } else {
                        0.0
                    }
                })
                .collect();
            let r = pearson(&shifted, t);
            if r > best.0 {
                best = (r, (dx, dy));
            }
        }
    }
    Ok(best)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}
