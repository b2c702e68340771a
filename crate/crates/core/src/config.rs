use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gabor::{default_thetas, GaborParams};

/// Every constant the blind estimator uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Data weight α of the latent subproblem.
    pub alpha: f64,
    /// Data weight ζ of the kernel subproblem (α/β).
    pub zeta: f64,
    /// FISTA step t.
    pub step_t: f64,
    /// FISTA iterations M per latent update.
    pub fista_iters: usize,
    /// IRLS reweighting rounds N1.
    pub irls_outer: usize,
    /// CG iterations N2 per reweighting round.
    pub cg_inner: usize,
    /// Latent/kernel alternations per pyramid level.
    pub em_iters: usize,
    /// Ratio s between consecutive pyramid kernel sizes.
    pub scale_ratio: f64,
    /// Gabor orientations in degrees.
    pub thetas: Vec<f64>,
    /// Shared Gabor parameters (orientation is overridden per filter).
    pub gabor: GaborParams,
    /// Re-center the kernel on its center of mass after each level.
    pub recenter: bool,
    /// Rescale each level's gradient stack so `‖g‖₂² = √(N·C)`, making the
    /// relative shrinkage threshold `t / (2α)` independent of image size,
    /// filter gain and contrast.
    pub normalize: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: 100.0,
            zeta: 1000.0,
            step_t: 0.001,
            fista_iters: 2,
            irls_outer: 3,
            cg_inner: 5,
            em_iters: 5,
            scale_ratio: std::f64::consts::SQRT_2,
            thetas: default_thetas(),
            gabor: GaborParams::default(),
            recenter: true,
            normalize: false,
        }
    }
}

impl SolverConfig {
    /// Constants under which the sparse prior is active: gradient stacks are
    /// normalized, and a unit FISTA step with α = 1 shrinks by half the
    /// typical response magnitude.
    pub fn tuned() -> Self {
        Self {
            alpha: 1.0,
            step_t: 1.0,
            fista_iters: 5,
            normalize: true,
            ..Self::default()
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
        for (name, v) in [
            ("alpha", self.alpha),
            ("zeta", self.zeta),
            ("step-t", self.step_t),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("fista-iters", self.fista_iters),
            ("irls-outer", self.irls_outer),
            ("cg-inner", self.cg_inner),
            ("em-iters", self.em_iters),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        if !(self.scale_ratio > 1.0 && self.scale_ratio.is_finite()) {
            return Err(Error::config(format!("scale ratio must exceed 1, got {}", self.scale_ratio)));
        }
        if self.thetas.is_empty() {
            return Err(Error::config("at least one gabor orientation is required"));
        }
        self.gabor.validate()
    }
}
