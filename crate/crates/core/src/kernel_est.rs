//! Kernel estimation: IRLS on `ζ Σ_c ‖x_c ⊛ k − g_c‖² + ‖k‖₁`, each
//! reweighted least-squares problem solved with a few conjugate-gradient
//! steps, followed by projection onto `{k ≥ 0, Σk = 1}`.

use rayon::prelude::*;

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::gabor::GradientStack;
use crate::imgcore::{BlurKernel, BoundaryPolicy};

pub use crate::imgcore::project_simplex;

/// Floor on kernel magnitudes when forming IRLS weights.
pub const WEIGHT_FLOOR: f64 = 1e-6;

/// CG stops early once the residual norm drops below this.
pub const CG_RESIDUAL_TOL: f64 = 1e-9;

/// Result of a conjugate-gradient run.
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Plain conjugate gradients on `A k = b` from `k_init`, at most `iters` steps.
pub fn cg_solve(apply_a: impl Fn(&[f64]) -> Vec<f64>, b: &[f64], k_init: &[f64], iters: usize) -> Result<CgOutcome> {
    if b.len() != k_init.len() {
        return Err(Error::dim(format!("rhs has {} entries, initial guess {}", b.len(), k_init.len())));
    }
    let mut k = k_init.to_vec();
    let ak = apply_a(&k);
    let mut r: Vec<f64> = b.iter().zip(&ak).map(|(b, a)| b - a).collect();
    let mut d = r.clone();
    let mut rr = dot(&r, &r);
    let mut done = 0;
    while done < iters && rr.sqrt() >= CG_RESIDUAL_TOL {
        let ad = apply_a(&d);
        let curvature = dot(&d, &ad);
        if !(curvature > 0.0) {
            return Err(Error::NotPositiveDefinite { curvature });
        }
        let step = rr / curvature;
        for i in 0..k.len() {
            k[i] += step * d[i];
            r[i] -= step * ad[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..d.len() {
            d[i] = r[i] + beta * d[i];
        }
        rr = rr_new;
        done += 1;
        if !rr.is_finite() {
            return Err(Error::NumericDivergence { stage: "cg", iteration: done });
        }
    }
    Ok(CgOutcome {
        solution: k,
        iterations: done,
        residual_norm: rr.sqrt(),
    })
}

/// The maps `k ↦ x_c ⊛ k` for every latent channel, with the replicate-edge
/// boundary used by the rest of the pipeline.
pub struct LatentOperator {
    padded: Vec<Vec<f64>>,
    pw: usize,
    width: usize,
    height: usize,
    side: usize,
}

impl LatentOperator {
    pub fn new(latent: &GradientStack, side: usize) -> Result<Self> {
        let (w, h) = latent.dims();
        if side == 0 || side % 2 == 0 {
            return Err(Error::dim(format!("kernel side must be odd, got {side}")));
        }
        if side > w || side > h {
            return Err(Error::dim(format!("kernel of side {side} exceeds the {w}x{h} latent")));
        }
        let r = side / 2;
        let pw = w + 2 * r;
        let ph = h + 2 * r;
        let b = BoundaryPolicy::ReplicateEdge;
        let padded = latent
            .channels()
            .iter()
            .map(|c| {
                let mut p = Vec::with_capacity(pw * ph);
                for py in 0..ph {
                    let sy = b.index(py as isize - r as isize, h).unwrap_or(0);
                    for px in 0..pw {
                        let sx = b.index(px as isize - r as isize, w).unwrap_or(0);
                        p.push(c.get(sx, sy));
                    }
                }
                p
            })
            .collect();
        Ok(Self {
            padded,
            pw,
            width: w,
            height: h,
            side,
        })
    }

    pub fn channels(&self) -> usize {
        self.padded.len()
    }

    pub fn kernel_len(&self) -> usize {
        self.side * self.side
    }

    /// `x_c ⊛ k` as a flat image.
    pub fn forward(&self, channel: usize, k: &[f64]) -> Vec<f64> {
        let (w, h, side, pw) = (self.width, self.height, self.side, self.pw);
        let r = side / 2;
        let p = &self.padded[channel];
        let mut out = vec![0.0; w * h];
        for j in 0..side {
            for i in 0..side {
                let kv = k[j * side + i];
                if kv == 0.0 {
                    continue;
                }
                let (dx, dy) = (2 * r - i, 2 * r - j);
                for y in 0..h {
                    let src = &p[(y + dy) * pw + dx..(y + dy) * pw + dx + w];
                    for (o, s) in out[y * w..(y + 1) * w].iter_mut().zip(src) {
                        *o += kv * s;
                    }
                }
            }
        }
        out
    }

    /// Adjoint of [`forward`](Self::forward): correlates an image-sized
    /// residual against the padded latent at every kernel offset.
    pub fn adjoint(&self, channel: usize, resid: &[f64]) -> Vec<f64> {
        let (w, h, side, pw) = (self.width, self.height, self.side, self.pw);
        let r = side / 2;
        let p = &self.padded[channel];
        let mut out = vec![0.0; side * side];
        for j in 0..side {
            for i in 0..side {
                let (dx, dy) = (2 * r - i, 2 * r - j);
                let mut acc = 0.0;
                for y in 0..h {
                    let src = &p[(y + dy) * pw + dx..(y + dy) * pw + dx + w];
                    acc += dot(&resid[y * w..(y + 1) * w], src);
                }
                out[j * side + i] = acc;
            }
        }
        out
    }

    /// `Σ_c X_cᵀ X_c k`.
    pub fn gram_apply(&self, k: &[f64]) -> Vec<f64> {
        let parts: Vec<Vec<f64>> = (0..self.channels())
            .into_par_iter()
            .map(|c| self.adjoint(c, &self.forward(c, k)))
            .collect();
        sum_vectors(parts, k.len())
    }

    /// `Σ_c X_cᵀ g_c`.
    pub fn rhs(&self, target: &GradientStack) -> Vec<f64> {
        let parts: Vec<Vec<f64>> = (0..self.channels())
            .into_par_iter()
            .map(|c| self.adjoint(c, target.channels()[c].data()))
            .collect();
        sum_vectors(parts, self.kernel_len())
    }

    /// `Σ_c ‖x_c ⊛ k − g_c‖²`.
    pub fn misfit(&self, k: &[f64], target: &GradientStack) -> f64 {
        (0..self.channels())
            .into_par_iter()
            .map(|c| {
                self.forward(c, k)
                    .iter()
                    .zip(target.channels()[c].data())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .collect::<Vec<_>>()
            .iter()
            .sum()
    }
}

/// Sums in channel order so results do not depend on thread scheduling.
fn sum_vectors(parts: Vec<Vec<f64>>, len: usize) -> Vec<f64> {
    let mut acc = vec![0.0; len];
    for p in parts {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    acc
}

/// IRLS penalty weights `1 / (ζ · max(k_i, ε))`.
pub fn irls_weights(k: &[f64], zeta: f64) -> Vec<f64> {
    k.iter().map(|&v| 1.0 / (zeta * v.max(WEIGHT_FLOOR))).collect()
}

/// Snapshot of an IRLS run.
#[derive(Debug, Clone)]
pub struct IrlsState {
    pub kernel: Vec<f64>,
    pub weights: Vec<f64>,
    pub outer: usize,
    pub cg_iterations: usize,
}

/// Estimates the kernel mapping `latent` onto `target`, warm-started at `k0`.
pub fn irls_solve(latent: &GradientStack, target: &GradientStack, k0: &BlurKernel, config: &SolverConfig) -> Result<BlurKernel> {
    irls_solve_traced(latent, target, k0, config).map(|(k, _)| k)
}

/// As [`irls_solve`], also returning the final iterate state.
pub fn irls_solve_traced(
    latent: &GradientStack,
    target: &GradientStack,
    k0: &BlurKernel,
    config: &SolverConfig,
) -> Result<(BlurKernel, IrlsState)> {
    if !latent.same_shape(target) {
        return Err(Error::dim("latent and target stacks differ in shape"));
    }
    if latent.values().all(|v| v == 0.0) {
        return Err(Error::Degenerate("latent stack is identically zero; kernel normal equations are singular".into()));
    }
    let side = k0.side();
    let op = LatentOperator::new(latent, side)?;
    let b = op.rhs(target);
    let mut state = IrlsState {
        kernel: k0.weights().to_vec(),
        weights: Vec::new(),
        outer: 0,
        cg_iterations: 0,
    };
    for _ in 0..config.irls_outer {
        state.weights = irls_weights(&state.kernel, config.zeta);
        let w = &state.weights;
        let apply = |v: &[f64]| {
            let mut out = op.gram_apply(v);
            for ((o, wi), vi) in out.iter_mut().zip(w).zip(v) {
                *o += wi * vi;
            }
            out
        };
        let cg = cg_solve(apply, &b, &state.kernel, config.cg_inner)?;
        state.cg_iterations += cg.iterations;
        state.kernel = project_simplex(&cg.solution);
        state.outer += 1;
    }
    let k = BlurKernel::from_projected(side, &state.kernel)?;
    Ok((k, state))
}

/// Kernel objective `ζ Σ_c ‖x_c ⊛ k − g_c‖² + ‖k‖₁`, evaluated directly.
pub fn eval_objective_k(latent: &GradientStack, target: &GradientStack, k: &BlurKernel, zeta: f64) -> Result<f64> {
    let op = LatentOperator::new(latent, k.side())?;
    if !latent.same_shape(target) {
        return Err(Error::dim("latent and target stacks differ in shape"));
    }
    Ok(zeta * op.misfit(k.weights(), target) + k.weights().iter().map(|v| v.abs()).sum::<f64>())
}
