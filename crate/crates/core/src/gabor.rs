//! Directional Gabor filters and the gradient stack they produce.
//!
//! A filter is a Gaussian envelope times a cosine carrier,
//!
//! ```text
//! g(u, v) = exp(-(u'^2 + γ^2 v'^2) / (2σ^2)) · cos(2π u' / λ + ψ)
//! u' =  u cos θ + v sin θ
//! v' = -u sin θ + v cos θ
//! ```
//!
//! sampled at integer offsets from the window center. With ψ = 90° the
//! carrier is odd along u', so every filter is zero-mean and responds to
//! edges whose normal points along θ.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{convolve2d, crop, pad, BoundaryPolicy, Filter2d, RasterImage};

/// Wavelength as printed for the original method. At integer sampling it
/// lies above the Nyquist limit: the 0° and 90° filters vanish identically.
pub const LITERAL_WAVELENGTH: f64 = 0.5;

/// Default carrier wavelength in pixels (two envelope widths).
pub const DEFAULT_WAVELENGTH: f64 = 8.0;

/// Two orientations closer than this (degrees, modulo 180) count as equal.
const THETA_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaborParams {
    /// Carrier wavelength λ in pixels.
    pub wavelength: f64,
    /// Orientation θ of the stripe normal, degrees.
    pub orientation_deg: f64,
    /// Carrier phase ψ, degrees.
    pub phase_deg: f64,
    /// Envelope standard deviation σ in pixels.
    pub sigma: f64,
    /// Spatial aspect ratio γ.
    pub aspect: f64,
    /// Odd window side in pixels.
    pub support: usize,
}

impl Default for GaborParams {
    fn default() -> Self {
        let sigma = 4.0;
        Self {
            wavelength: DEFAULT_WAVELENGTH,
            orientation_deg: 0.0,
            phase_deg: 90.0,
            sigma,
            aspect: 1.0,
            support: support_for_sigma(sigma),
        }
    }
}

/// Smallest odd window covering 4σ.
pub fn support_for_sigma(sigma: f64) -> usize {
    let s = (4.0 * sigma).ceil().max(3.0) as usize;
    if s % 2 == 0 {
        s + 1
    } else {
        s
    }
}

impl GaborParams {
    /// Parameters exactly as printed, including the sub-Nyquist wavelength.
    pub fn literal() -> Self {
        Self {
            wavelength: LITERAL_WAVELENGTH,
            ..Self::default()
        }
    }

    pub fn with_orientation(self, degrees: f64) -> Self {
        Self {
            orientation_deg: degrees,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("gabor {name} must be positive, got {v}")))
            }
        };
        positive(self.wavelength, "wavelength")?;
        positive(self.sigma, "sigma")?;
        positive(self.aspect, "aspect")?;
        if !self.orientation_deg.is_finite() || !self.phase_deg.is_finite() {
            return Err(Error::config("gabor angles must be finite"));
        }
        if self.support < 3 || self.support % 2 == 0 {
            return Err(Error::config(format!("gabor support must be odd and >= 3, got {}", self.support)));
        }
        Ok(())
    }

    /// Filter value at offset `(u, v)` from the center.
    pub fn eval(&self, u: f64, v: f64) -> f64 {
        let (s, c) = self.orientation_deg.to_radians().sin_cos();
        let ur = u * c + v * s;
        let vr = -u * s + v * c;
        let envelope = (-(ur * ur + self.aspect * self.aspect * vr * vr) / (2.0 * self.sigma * self.sigma)).exp();
        envelope * (2.0 * std::f64::consts::PI * ur / self.wavelength + self.phase_deg.to_radians()).cos()
    }
}

/// Samples one Gabor filter on its `support x support` window. The grid is
/// not normalized.
pub fn gabor_kernel(params: &GaborParams) -> Result<Filter2d> {
    params.validate()?;
    let side = params.support;
    let r = (side / 2) as f64;
    let mut w = Vec::with_capacity(side * side);
    for row in 0..side {
        for col in 0..side {
            w.push(params.eval(col as f64 - r, row as f64 - r));
        }
    }
    Filter2d::new(side, w)
}

/// An ordered set of oriented filters.
#[derive(Debug, Clone)]
pub struct GaborBank {
    thetas: Vec<f64>,
    filters: Vec<Filter2d>,
}

impl GaborBank {
    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn filters(&self) -> &[Filter2d] {
        &self.filters
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }
}

/// `n` orientations spaced `180/n` degrees apart, starting at 0.
pub fn evenly_spaced(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 * 180.0 / n as f64).collect()
}

/// Default four-direction set.
pub fn default_thetas() -> Vec<f64> {
    vec![0.0, 45.0, 90.0, 135.0]
}

/// Builds one filter per orientation from a shared parameter set.
///
/// Orientations are reduced modulo 180° and sorted; duplicates are a
/// configuration error.
pub fn make_bank(thetas: &[f64], params: &GaborParams) -> Result<GaborBank> {
    if thetas.is_empty() {
        return Err(Error::config("gabor bank needs at least one orientation"));
    }
    let mut reduced: Vec<f64> = thetas
        .iter()
        .map(|t| {
            if !t.is_finite() {
                return Err(Error::config(format!("orientation {t} is not finite")));
            }
            let m = t.rem_euclid(180.0);
            Ok(if 180.0 - m < THETA_EPS { 0.0 } else { m })
        })
        .collect::<Result<_>>()?;
    reduced.sort_by(f64::total_cmp);
    if let Some(w) = reduced.windows(2).find(|w| w[1] - w[0] < THETA_EPS) {
        return Err(Error::config(format!("duplicate orientation {}° (mod 180°)", w[0])));
    }
    let filters = reduced
        .iter()
        .map(|&t| gabor_kernel(&params.with_orientation(t)))
        .collect::<Result<_>>()?;
    Ok(GaborBank { thetas: reduced, filters })
}

/// Directional channels of one image (or of a latent estimate of it).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientStack {
    channels: Vec<RasterImage>,
    thetas: Vec<f64>,
}

impl GradientStack {
    pub fn new(channels: Vec<RasterImage>, thetas: Vec<f64>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::dim("gradient stack needs at least one channel"));
        }
        if channels.len() != thetas.len() {
            return Err(Error::dim(format!(
                "{} channels but {} orientations",
                channels.len(),
                thetas.len()
            )));
        }
        let dims = channels[0].dims();
        if channels.iter().any(|c| c.dims() != dims) {
            return Err(Error::dim("gradient channels differ in size"));
        }
        if thetas.windows(2).any(|w| w[1] <= w[0]) || thetas.iter().any(|t| !(0.0..180.0).contains(t)) {
            return Err(Error::config("orientations must increase strictly within [0, 180)"));
        }
        Ok(Self { channels, thetas })
    }

    /// Replaces the channels, keeping orientations. Shapes must agree.
    pub fn with_channels(&self, channels: Vec<RasterImage>) -> Result<Self> {
        Self::new(channels, self.thetas.clone())
    }

    pub fn channels(&self) -> &[RasterImage] {
        &self.channels
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.channels[0].dims()
    }

    pub fn same_shape(&self, other: &GradientStack) -> bool {
        self.len() == other.len() && self.dims() == other.dims()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.channels.iter().flat_map(|c| c.data().iter().copied())
    }

    /// Euclidean norm over all channels jointly.
    pub fn l2_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values().map(f64::abs).sum()
    }

    pub fn scaled(&self, c: f64) -> GradientStack {
        GradientStack {
            channels: self.channels.iter().map(|ch| ch.map(|v| v * c)).collect(),
            thetas: self.thetas.clone(),
        }
    }

    pub fn into_channels(self) -> Vec<RasterImage> {
        self.channels
    }
}

/// Convolves the image with every filter of the bank (replicate edges).
pub fn extract_gradients(image: &RasterImage, bank: &GaborBank) -> Result<GradientStack> {
    if bank.is_empty() {
        return Err(Error::config("empty gabor bank"));
    }
    let channels = bank
        .filters
        .par_iter()
        .map(|f| {
            let (w, h) = image.dims();
            if f.side() <= w && f.side() <= h {
                return convolve2d(image, f, BoundaryPolicy::ReplicateEdge);
            }
            // filter wider than a coarse level: extend first, then cut back
            let r = f.radius();
            let big = pad(image, r, BoundaryPolicy::ReplicateEdge);
            crop(&convolve2d(&big, f, BoundaryPolicy::ReplicateEdge)?, r, r, w, h)
        })
        .collect::<Result<Vec<_>>>()?;
    GradientStack::new(channels, bank.thetas.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn transpose(f: &Filter2d) -> Vec<f64> {
        let n = f.side();
        (0..n * n).map(|i| f.get(i / n, i % n)).collect()
    }

    #[test]
    fn center_tap_vanishes_at_quarter_phase() {
        for t in [0.0, 30.0, 45.0, 117.0] {
            let f = gabor_kernel(&GaborParams::default().with_orientation(t)).unwrap();
            let r = f.radius();
            assert!(f.get(r, r).abs() < 1e-15);
        }
    }

    #[test]
    fn right_angle_rotation_swaps_axes() {
        let p = GaborParams::default();
        let f0 = gabor_kernel(&p.with_orientation(0.0)).unwrap();
        let f90 = gabor_kernel(&p.with_orientation(90.0)).unwrap();
        for (a, b) in f90.weights().iter().zip(transpose(&f0)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn default_support_is_seventeen_and_filters_are_zero_mean() {
        let p = GaborParams::default();
        assert_eq!(p.support, 17);
        for t in evenly_spaced(8) {
            let f = gabor_kernel(&p.with_orientation(t)).unwrap();
            assert!(f.sum().abs() < 1e-9, "theta {t}: {}", f.sum());
        }
        let lit = gabor_kernel(&GaborParams::literal()).unwrap();
        assert!(lit.sum().abs() < 1e-9);
    }

    #[test]
    fn literal_wavelength_aliases_to_nothing_on_the_axes() {
        // cos(4πu + π/2) = −sin(4πu) is zero at every integer u.
        for t in [0.0, 90.0] {
            let f = gabor_kernel(&GaborParams::literal().with_orientation(t)).unwrap();
            assert!(f.weights().iter().all(|w| w.abs() < 1e-12), "theta {t}");
        }
        let diag = gabor_kernel(&GaborParams::literal().with_orientation(45.0)).unwrap();
        assert!(diag.weights().iter().any(|w| w.abs() > 0.1));
    }

    #[test]
    fn bank_sizes_follow_orientation_sets() {
        let p = GaborParams::default();
        assert_eq!(make_bank(&default_thetas(), &p).unwrap().len(), 4);
        assert_eq!(make_bank(&[0.0, 60.0, 120.0], &p).unwrap().len(), 3);
        for n in [3, 4, 5, 6, 8] {
            let bank = make_bank(&evenly_spaced(n), &p).unwrap();
            assert_eq!(bank.len(), n);
            for w in bank.thetas().windows(2) {
                assert!((w[1] - w[0] - 180.0 / n as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn duplicate_orientations_are_rejected() {
        let p = GaborParams::default();
        assert!(matches!(make_bank(&[0.0, 180.0], &p), Err(Error::Config(_))));
        assert!(make_bank(&[10.0, 190.0, 50.0], &p).is_err());
        assert!(make_bank(&[], &p).is_err());
        let b = make_bank(&[135.0, -90.0], &p).unwrap();
        assert_eq!(b.thetas(), &[90.0, 135.0]);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let bad = [
            GaborParams { wavelength: 0.0, ..Default::default() },
            GaborParams { sigma: -1.0, ..Default::default() },
            GaborParams { aspect: 0.0, ..Default::default() },
            GaborParams { support: 4, ..Default::default() },
            GaborParams { support: 1, ..Default::default() },
        ];
        for p in bad {
            assert!(gabor_kernel(&p).is_err(), "{p:?}");
        }
    }

    #[test]
    fn constant_image_gives_silent_channels() {
        let img = RasterImage::filled(32, 24, 0.6).unwrap();
        let bank = make_bank(&default_thetas(), &GaborParams::default()).unwrap();
        let g = extract_gradients(&img, &bank).unwrap();
        assert_eq!(g.len(), 4);
        assert_eq!(g.dims(), (32, 24));
        assert!(g.values().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn vertical_step_excites_only_the_horizontal_normal() {
        let img = RasterImage::from_fn(32, 32, |x, _| if x < 16 { 0.0 } else { 1.0 }).unwrap();
        let bank = make_bank(&[0.0, 90.0], &GaborParams::default()).unwrap();
        let g = extract_gradients(&img, &bank).unwrap();
        let peak = |c: &RasterImage| c.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let p0 = peak(&g.channels()[0]);
        let p90 = peak(&g.channels()[1]);
        assert!(p0 > 1.0, "θ=0 peak {p0}");
        assert!(p90 < 0.05 * p0, "θ=90 peak {p90} vs {p0}");
        // the strongest response sits on the edge columns
        let c0 = &g.channels()[0];
        let col_energy = |x: usize| (0..32).map(|y| c0.get(x, y).abs()).sum::<f64>();
        let best = (0..32).max_by(|&a, &b| col_energy(a).total_cmp(&col_energy(b))).unwrap();
        assert!((14..=17).contains(&best), "peak column {best}");
    }

    #[test]
    fn stack_invariants_enforced() {
        let a = RasterImage::zeros(4, 4).unwrap();
        let b = RasterImage::zeros(5, 4).unwrap();
        assert!(GradientStack::new(vec![], vec![]).is_err());
        assert!(GradientStack::new(vec![a.clone(), b], vec![0.0, 90.0]).is_err());
        assert!(GradientStack::new(vec![a.clone(), a.clone()], vec![90.0, 0.0]).is_err());
        assert!(GradientStack::new(vec![a.clone()], vec![180.0]).is_err());
        assert!(GradientStack::new(vec![a], vec![0.0]).is_ok());
    }

    #[test]
    fn filters_wider_than_the_image_match_a_padded_run() {
        let bank = make_bank(&default_thetas(), &GaborParams::default()).unwrap();
        let small = RasterImage::from_fn(9, 6, |x, y| ((x * 3 + y * 5) % 4) as f64).unwrap();
        let direct = extract_gradients(&small, &bank).unwrap();
        assert_eq!(direct.dims(), (9, 6));
        let big = crate::imgcore::pad(&small, 20, BoundaryPolicy::ReplicateEdge);
        let wide = extract_gradients(&big, &bank).unwrap();
        for (a, b) in direct.channels().iter().zip(wide.channels()) {
            let cut = crate::imgcore::crop(b, 20, 20, 9, 6).unwrap();
            for (u, v) in a.data().iter().zip(cut.data()) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }
}
