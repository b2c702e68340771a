//! Coarse-to-fine blind kernel estimation and the full deblurring pipeline.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::gabor::{extract_gradients, make_bank, GradientStack};
use crate::imgcore::{resample_to, BlurKernel, RasterImage};
use crate::kernel_est::irls_solve;
use crate::latent::fista_solve;
use crate::nonblind::{deconvolve, NonblindConfig};
use crate::pyramid::{init_coarsest, upscale_state, PyramidSchedule, SeededRng};

/// State recorded after the last alternation at one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTrace {
    pub level: usize,
    pub kernel_side: usize,
    pub image_dims: (usize, usize),
    pub channels: usize,
    /// `‖x‖₁ / ‖x‖₂` of the latent stack; `None` if the stack vanished.
    pub ratio: Option<f64>,
    pub kernel: Vec<f64>,
    /// Excluded from the serialized trace so reruns produce identical files.
    #[serde(skip)]
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeblurRun {
    pub config: SolverConfig,
    pub schedule: PyramidSchedule,
    pub seed: u64,
    pub levels: Vec<LevelTrace>,
    pub final_kernel: Vec<f64>,
    #[serde(skip)]
    pub final_image: Option<RasterImage>,
}

impl DeblurRun {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace is always serializable")
    }

    pub fn total_ms(&self) -> f64 {
        self.levels.iter().map(|l| l.elapsed_ms).sum()
    }
}

/// `‖x‖₁ / ‖x‖₂` over the whole stack.
pub fn eval_ratio_diagnostic(x: &GradientStack) -> Result<f64> {
    let l2 = x.l2_norm();
    if l2 == 0.0 {
        return Err(Error::Degenerate("l1/l2 ratio is undefined for an all-zero stack".into()));
    }
    Ok(x.l1_norm() / l2)
}

/// Integer offset of the kernel's center of mass from the grid center.
pub fn centroid_offset(k: &BlurKernel) -> (isize, isize) {
    let n = k.side();
    let c = (n / 2) as f64;
    let (mut mx, mut my) = (0.0, 0.0);
    for (i, w) in k.weights().iter().enumerate() {
        mx += w * ((i % n) as f64 - c);
        my += w * ((i / n) as f64 - c);
    }
    (mx.round() as isize, my.round() as isize)
}

/// Moves the kernel's mass by `(-dx, -dy)` and the latent by `(dx, dy)`, so
/// that `x ⊛ k` is unchanged away from the borders. Mass pushed off the grid
/// is dropped before reprojection.
fn recenter(k: &BlurKernel, x: &GradientStack) -> Result<(BlurKernel, GradientStack)> {
    let (dx, dy) = centroid_offset(k);
    if dx == 0 && dy == 0 {
        return Ok((k.clone(), x.clone()));
    }
    let n = k.side() as isize;
    let w = k.weights();
    let moved: Vec<f64> = (0..n * n)
        .map(|i| {
            let (sx, sy) = (i % n + dx, i / n + dy);
            if (0..n).contains(&sx) && (0..n).contains(&sy) {
                w[(sy * n + sx) as usize]
            } else {
                0.0
            }
        })
        .collect();
    let kernel = BlurKernel::from_projected(k.side(), &moved)?;
    let channels = x
        .channels()
        .iter()
        .map(|c| {
            let (cw, ch) = (c.width() as isize, c.height() as isize);
            RasterImage::from_fn(c.width(), c.height(), |px, py| {
                let sx = (px as isize - dx).clamp(0, cw - 1) as usize;
                let sy = (py as isize - dy).clamp(0, ch - 1) as usize;
                c.get(sx, sy)
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((kernel, x.with_channels(channels)?))
}

/// Factor that brings `‖g‖₂²` to `√(N·C)`; 1 for an all-zero stack.
pub fn normalizing_gain(g: &GradientStack) -> f64 {
    let (w, h) = g.dims();
    let norm = g.l2_norm();
    if norm == 0.0 {
        return 1.0;
    }
    ((w * h * g.len()) as f64).powf(0.25) / norm
}

fn check_input(y: &RasterImage, schedule: &PyramidSchedule) -> Result<()> {
    for level in &schedule.levels {
        let (w, h) = schedule.level_dims(level, y.width(), y.height());
        if w < level.kernel_side || h < level.kernel_side {
            return Err(Error::dim(format!(
                "{}x{} input is too small for a {} kernel (level {} would be {w}x{h})",
                y.width(),
                y.height(),
                schedule.max_kernel,
                level.index
            )));
        }
    }
    Ok(())
}

/// Estimates the blur kernel of `y` from the coarsest level to the finest.
pub fn estimate_kernel(
    y: &RasterImage,
    config: &SolverConfig,
    schedule: &PyramidSchedule,
    rng: &mut SeededRng,
) -> Result<(BlurKernel, DeblurRun)> {
    config.validate()?;
    check_input(y, schedule)?;
    let bank = make_bank(&config.thetas, &config.gabor)?;
    let mut trace = Vec::with_capacity(schedule.depth());
    let mut state: Option<(BlurKernel, GradientStack)> = None;
    let mut prev_gain = 1.0;
    for (pos, level) in schedule.levels.iter().enumerate() {
        let started = Instant::now();
        let at = |e: Error| Error::AtLevel {
            level: level.index,
            source: Box::new(e),
        };
        let dims = schedule.level_dims(level, y.width(), y.height());
        let y_level = resample_to(y, dims.0, dims.1).map_err(at)?;
        let mut target = extract_gradients(&y_level, &bank).map_err(at)?;
        let gain = if config.normalize { normalizing_gain(&target) } else { 1.0 };
        target = target.scaled(gain);
        let (mut k, mut x) = match state.take() {
            None => {
                let (k, x) = init_coarsest(schedule, &y_level, &bank, rng).map_err(at)?;
                (k, x.scaled(gain))
            }
            Some((k, x)) => {
                let (k, x) = upscale_state(&k, &x, &schedule.levels[pos - 1], level, dims).map_err(at)?;
                (k, x.scaled(gain / prev_gain))
            }
        };
        prev_gain = gain;
        for _ in 0..config.em_iters {
            x = fista_solve(&target, &k, config, &x).map_err(at)?;
            k = irls_solve(&x, &target, &k, config).map_err(at)?;
        }
        if config.recenter {
            (k, x) = recenter(&k, &x).map_err(at)?;
        }
        let ratio = eval_ratio_diagnostic(&x).ok();
        let elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
        log::info!(
            "level {} kernel {} image {}x{} ratio {} ({elapsed_ms:.1} ms)",
            level.index,
            level.kernel_side,
            dims.0,
            dims.1,
            ratio.map_or("n/a".to_string(), |r| format!("{r:.4}"))
        );
        trace.push(LevelTrace {
            level: level.index,
            kernel_side: level.kernel_side,
            image_dims: dims,
            channels: x.len(),
            ratio,
            kernel: k.weights().to_vec(),
            elapsed_ms,
        });
        state = Some((k, x));
    }
    let (kernel, _) = state.expect("schedule is never empty");
    let run = DeblurRun {
        config: config.clone(),
        schedule: schedule.clone(),
        seed: rng.seed(),
        levels: trace,
        final_kernel: kernel.weights().to_vec(),
        final_image: None,
    };
    Ok((kernel, run))
}

/// Blind kernel estimation followed by non-blind deconvolution.
pub fn deblur(
    y: &RasterImage,
    config: &SolverConfig,
    schedule: &PyramidSchedule,
    nonblind: &NonblindConfig,
    rng: &mut SeededRng,
) -> Result<(RasterImage, BlurKernel, DeblurRun)> {
    nonblind.validate()?;
    let (kernel, mut run) = estimate_kernel(y, config, schedule, rng)?;
    let sharp = deconvolve(y, &kernel, nonblind)?.clamped(0.0, 1.0);
    run.final_image = Some(sharp.clone());
    Ok((sharp, kernel, run))
}
