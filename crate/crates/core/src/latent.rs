//! Latent gradient-stack estimation.
//!
//! The ℓ1/ℓ2 prior is handled by freezing the denominator at the incoming
//! estimate, which leaves the convex problem
//!
//! ```text
//! min_x  μ Σ_c ‖k ⊛ x_c − g_c‖² + ‖x‖₁,      μ = α ‖x_in‖₂
//! ```
//!
//! solved with FISTA. The gradient step is `z − t·Kᵀ(K z − g)`; the
//! matching shrinkage threshold for this objective is `t / (2μ)`.

use rayon::prelude::*;

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::gabor::GradientStack;
use crate::imgcore::{convolve2d, convolve2d_adjoint, BlurKernel, BoundaryPolicy, RasterImage};

/// Relative floor for μ when the incoming latent estimate is all zero.
pub const MU_FLOOR: f64 = 1e-6;

const BOUNDARY: BoundaryPolicy = BoundaryPolicy::ReplicateEdge;

/// Soft shrinkage `max(|v| − τ, 0)·sign(v)`.
#[inline]
pub fn soft_shrink(v: f64, threshold: f64) -> f64 {
    debug_assert!(threshold >= 0.0);
    let m = v.abs() - threshold;
    if m > 0.0 {
        m.copysign(v)
    } else {
        0.0
    }
}

/// `μ = α ‖x‖₂` over every channel jointly.
pub fn compute_mu(x: &GradientStack, alpha: f64) -> f64 {
    alpha * x.l2_norm()
}

/// Next FISTA momentum scalar, `(1 + √(1 + 4q²)) / 2`.
#[inline]
pub fn next_momentum(q: f64) -> f64 {
    (1.0 + (1.0 + 4.0 * q * q).sqrt()) / 2.0
}

/// Shrinkage threshold that makes the FISTA step a proximal-gradient step
/// on `μ‖Kx − g‖² + ‖x‖₁` with gradient step `t·Kᵀ(Kx − g)`.
#[inline]
pub fn shrink_threshold(mu: f64, step: f64) -> f64 {
    step / (2.0 * mu)
}

/// `μ Σ_c ‖x_c ⊛ k − g_c‖² + ‖x‖₁`.
pub fn eval_objective_x(x: &GradientStack, k: &BlurKernel, g: &GradientStack, mu: f64) -> Result<f64> {
    if !x.same_shape(g) {
        return Err(Error::dim("latent and target stacks differ in shape"));
    }
    let fit: f64 = x
        .channels()
        .par_iter()
        .zip(g.channels())
        .map(|(xc, gc)| -> Result<f64> {
            let kx = convolve2d(xc, k, BOUNDARY)?;
            Ok(kx.data().iter().zip(gc.data()).map(|(a, b)| (a - b) * (a - b)).sum())
        })
        .collect::<Result<Vec<_>>>()?
        .iter()
        .sum();
    Ok(mu * fit + x.l1_norm())
}

/// Iterate state for one channel.
#[derive(Debug, Clone)]
pub struct FistaState {
    pub x_prev: RasterImage,
    pub x_curr: RasterImage,
    /// Momentum point z_j.
    pub z: RasterImage,
    pub q: f64,
    pub iteration: usize,
}

impl FistaState {
    pub fn new(x0: RasterImage) -> Self {
        Self {
            x_prev: x0.clone(),
            x_curr: x0.clone(),
            z: x0,
            q: 1.0,
            iteration: 0,
        }
    }

    /// One FISTA iteration against target `g` with step `t` and threshold `tau`.
    pub fn step(&mut self, g: &RasterImage, k: &BlurKernel, t: f64, tau: f64) -> Result<()> {
        self.iteration += 1;
        let mut resid = convolve2d(&self.z, k, BOUNDARY)?;
        for (r, gv) in resid.data_mut().iter_mut().zip(g.data()) {
            *r -= gv;
        }
        let grad = convolve2d_adjoint(&resid, k, BOUNDARY)?;
        let x_new = self.z.axpy(-t, &grad).map(|v| soft_shrink(v, tau));
        if !x_new.all_finite() {
            return Err(Error::NumericDivergence {
                stage: "fista",
                iteration: self.iteration,
            });
        }
        let q_next = next_momentum(self.q);
        let beta = (self.q - 1.0) / q_next;
        let delta = x_new.axpy(-1.0, &self.x_curr);
        self.z = x_new.axpy(beta, &delta);
        self.x_prev = std::mem::replace(&mut self.x_curr, x_new);
        self.q = q_next;
        Ok(())
    }
}

/// Runs `config.fista_iters` iterations per channel starting from `x0`.
///
/// μ is computed once from `x0` and held fixed for the whole call.
pub fn fista_solve(g: &GradientStack, k: &BlurKernel, config: &SolverConfig, x0: &GradientStack) -> Result<GradientStack> {
    if !g.same_shape(x0) {
        return Err(Error::dim("target and initial latent stacks differ in shape"));
    }
    let mu = compute_mu(x0, config.alpha).max(config.alpha * MU_FLOOR);
    let tau = shrink_threshold(mu, config.step_t);
    let channels = x0
        .channels()
        .par_iter()
        .zip(g.channels())
        .map(|(xc, gc)| {
            let mut state = FistaState::new(xc.clone());
            for _ in 0..config.fista_iters {
                state.step(gc, k, config.step_t, tau)?;
            }
            Ok(state.x_curr)
        })
        .collect::<Result<Vec<_>>>()?;
    x0.with_channels(channels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stack(rng: &mut ChaCha8Rng, n: usize, w: usize, h: usize) -> GradientStack {
        let chans = (0..n)
            .map(|_| RasterImage::from_fn(w, h, |_, _| rng.random_range(-1.0..1.0)).unwrap())
            .collect();
        GradientStack::new(chans, crate::gabor::evenly_spaced(n)).unwrap()
    }

    #[test]
    fn shrink_examples() {
        assert!((soft_shrink(0.5, 0.2) - 0.3).abs() < 1e-15);
        assert_eq!(soft_shrink(-0.1, 0.2), 0.0);
        assert!((soft_shrink(-0.5, 0.2) + 0.3).abs() < 1e-15);
        assert_eq!(soft_shrink(3.0, 0.0), 3.0);
    }

    #[test]
    fn momentum_sequence() {
        let q2 = next_momentum(1.0);
        assert!((q2 - 1.618_033_988_7).abs() < 1e-10);
        let mut q = 1.0;
        for j in 1..50 {
            assert!(q >= (j as f64 + 1.0) / 2.0);
            let n = next_momentum(q);
            assert!(n > q);
            q = n;
        }
    }

    #[test]
    fn mu_examples() {
        let zero = GradientStack::new(vec![RasterImage::zeros(3, 3).unwrap()], vec![0.0]).unwrap();
        assert_eq!(compute_mu(&zero, 100.0), 0.0);
        let one = GradientStack::new(vec![RasterImage::filled(1, 1, 1.0).unwrap()], vec![0.0]).unwrap();
        assert_eq!(compute_mu(&one, 100.0), 100.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = stack(&mut rng, 4, 8, 8);
        let mut acc = 0.0;
        for c in s.channels() {
            for y in 0..8 {
                for x in 0..8 {
                    acc += c.get(x, y).powi(2);
                }
            }
        }
        assert!((compute_mu(&s, 100.0) - 100.0 * acc.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn objective_special_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = stack(&mut rng, 2, 6, 6);
        let zero = g.scaled(0.0);
        let k = BlurKernel::delta(3).unwrap();
        assert_eq!(eval_objective_x(&zero, &k, &zero, 7.0).unwrap(), 0.0);
        let want = 7.0 * g.values().map(|v| v * v).sum::<f64>();
        assert!((eval_objective_x(&zero, &k, &g, 7.0).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn large_threshold_annihilates_identity_problem() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = stack(&mut rng, 2, 8, 8);
        let cfg = SolverConfig {
            alpha: 1e-9, // μ tiny ⇒ threshold t/(2μ) huge
            step_t: 0.5,
            ..SolverConfig::default()
        };
        let out = fista_solve(&g, &BlurKernel::delta(3).unwrap(), &cfg, &g).unwrap();
        assert!(out.values().all(|v| v == 0.0));
    }

    #[test]
    fn zero_gradient_step_never_adds_nonzeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut g = stack(&mut rng, 1, 8, 8);
        g = g.with_channels(vec![g.channels()[0].map(|v| if v.abs() < 0.5 { 0.0 } else { v })]).unwrap();
        let cfg = SolverConfig {
            alpha: 0.05,
            ..SolverConfig::default()
        };
        let out = fista_solve(&g, &BlurKernel::delta(3).unwrap(), &cfg, &g).unwrap();
        let nnz = |s: &GradientStack| s.values().filter(|v| *v != 0.0).count();
        assert!(nnz(&out) <= nnz(&g));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = stack(&mut rng, 2, 6, 6);
        let b = stack(&mut rng, 2, 7, 6);
        let k = BlurKernel::delta(3).unwrap();
        assert!(fista_solve(&a, &k, &SolverConfig::default(), &b).is_err());
        assert!(eval_objective_x(&a, &k, &b, 1.0).is_err());
    }
}
