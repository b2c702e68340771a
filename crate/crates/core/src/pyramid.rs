//! Coarse-to-fine schedule and the state carried between levels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gabor::{extract_gradients, GaborBank, GradientStack};
use crate::imgcore::{resample_to, BlurKernel, RasterImage};

/// One pyramid level. `index` counts from 1 at the finest level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PyramidLevel {
    pub index: usize,
    pub kernel_side: usize,
    pub image_scale: f64,
}

/// Levels ordered coarsest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyramidSchedule {
    pub levels: Vec<PyramidLevel>,
    pub scale_ratio: f64,
    pub max_kernel: usize,
}

/// Nearest odd integer to `v`; halfway cases go up.
pub fn snap_odd(v: f64) -> usize {
    let half = ((v - 1.0) / 2.0 + 0.5).floor().max(0.0);
    2 * half as usize + 1
}

/// Builds the kernel-size ladder by repeatedly dividing `max_kernel` by
/// `scale_ratio` and snapping to odd sizes no smaller than `min_side`.
pub fn build_schedule(max_kernel: usize, scale_ratio: f64, min_side: usize) -> Result<PyramidSchedule> {
    if max_kernel < 3 || max_kernel % 2 == 0 {
        return Err(Error::config(format!("kernel size must be odd and >= 3, got {max_kernel}")));
    }
    if min_side < 3 || min_side % 2 == 0 || min_side > max_kernel {
        return Err(Error::config(format!(
            "minimum kernel size must be odd, >= 3 and <= {max_kernel}, got {min_side}"
        )));
    }
    if !(scale_ratio > 1.0 && scale_ratio.is_finite()) {
        return Err(Error::config(format!("scale ratio must exceed 1, got {scale_ratio}")));
    }
    let mut sides = vec![max_kernel];
    let mut size = max_kernel as f64;
    while *sides.last().unwrap() > min_side {
        size /= scale_ratio;
        let side = snap_odd(size).max(min_side);
        if side < *sides.last().unwrap() {
            sides.push(side);
        }
    }
    let m = sides.len();
    let levels = sides
        .iter()
        .rev()
        .enumerate()
        .map(|(i, &side)| PyramidLevel {
            index: m - i,
            kernel_side: side,
            image_scale: side as f64 / max_kernel as f64,
        })
        .collect();
    Ok(PyramidSchedule {
        levels,
        scale_ratio,
        max_kernel,
    })
}

impl PyramidSchedule {
    /// Number of levels m.
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn coarsest(&self) -> &PyramidLevel {
        &self.levels[0]
    }

    pub fn finest(&self) -> &PyramidLevel {
        self.levels.last().expect("schedule is never empty")
    }

    /// Image dimensions at `level` for a full-resolution `width x height` input.
    pub fn level_dims(&self, level: &PyramidLevel, width: usize, height: usize) -> (usize, usize) {
        let scaled = |n: usize| ((n as f64 * level.image_scale).round() as usize).max(1);
        (scaled(width), scaled(height))
    }
}

/// Deterministic random source for initialization and synthesis.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    rng: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random()
    }

    pub fn inner(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Independent child seed for the `index`-th sub-task.
    pub fn derive_seed(master: u64, index: u64) -> u64 {
        // splitmix64 step
        let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// Random uniform kernel (projected) and the Gabor responses of the coarse observation.
pub fn init_coarsest(
    schedule: &PyramidSchedule,
    blurred_coarse: &RasterImage,
    bank: &GaborBank,
    rng: &mut SeededRng,
) -> Result<(BlurKernel, GradientStack)> {
    let side = schedule.coarsest().kernel_side;
    let draws: Vec<f64> = (0..side * side).map(|_| rng.uniform()).collect();
    let kernel = BlurKernel::from_projected(side, &draws)?;
    let latent = extract_gradients(blurred_coarse, bank)?;
    Ok((kernel, latent))
}

/// Resizes kernel and latent to the next finer level.
///
/// The kernel is bilinearly resampled to `to.kernel_side` and projected;
/// every latent channel is resampled to `to_dims`.
pub fn upscale_state(
    kernel: &BlurKernel,
    latent: &GradientStack,
    from: &PyramidLevel,
    to: &PyramidLevel,
    to_dims: (usize, usize),
) -> Result<(BlurKernel, GradientStack)> {
    if to.index + 1 != from.index {
        return Err(Error::dim(format!(
            "can only step one level finer (from {} to {})",
            from.index, to.index
        )));
    }
    if kernel.side() != from.kernel_side {
        return Err(Error::dim(format!(
            "kernel side {} does not belong to level {}",
            kernel.side(),
            from.index
        )));
    }
    if to_dims.0 < to.kernel_side || to_dims.1 < to.kernel_side {
        return Err(Error::dim(format!(
            "level {} image {}x{} is smaller than its {} kernel",
            to.index, to_dims.0, to_dims.1, to.kernel_side
        )));
    }
    let grid = RasterImage::new(kernel.side(), kernel.side(), kernel.weights().to_vec())?;
    let grown = resample_to(&grid, to.kernel_side, to.kernel_side)?;
    let kernel = BlurKernel::from_projected(to.kernel_side, grown.data())?;
    let channels = latent
        .channels()
        .iter()
        .map(|c| resample_to(c, to_dims.0, to_dims.1))
        .collect::<Result<Vec<_>>>()?;
    Ok((kernel, latent.with_channels(channels)?))
}
