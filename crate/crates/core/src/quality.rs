//! Full-reference (MSE/PSNR) and no-reference (Haar defocus) quality metrics.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::imgcore::RasterImage;

/// Intensity scale applied before measuring the diagonal Haar band, so the
/// score is computed as if pixels were in 0..255.
pub const DEFAULT_DEFOCUS_SCALE: f64 = 255.0;

pub fn mse(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    a.ensure_same_dims(b, "mse")?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

/// `10 log10(max_i² / mse)`; identical images give `+∞`.
pub fn psnr(a: &RasterImage, b: &RasterImage, max_i: f64) -> Result<f64> {
    if !(max_i > 0.0 && max_i.is_finite()) {
        return Err(Error::config(format!("peak value must be positive, got {max_i}")));
    }
    let e = mse(a, b)?;
    Ok(psnr_from_mse(e, max_i))
}

pub fn psnr_from_mse(mse: f64, max_i: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_i * max_i / mse).log10()
    }
}

/// Single-level orthonormal Haar subbands.
#[derive(Debug, Clone, PartialEq)]
pub struct HaarSubbands {
    /// Approximation `(a+b+c+d)/2`.
    pub ll: RasterImage,
    /// Horizontal detail `(a−b+c−d)/2`.
    pub lh: RasterImage,
    /// Vertical detail `(a+b−c−d)/2`.
    pub hl: RasterImage,
    /// Diagonal detail `(a−b−c+d)/2`.
    pub hh: RasterImage,
}

/// One Haar level over 2x2 blocks `(a b; c d)`. Odd trailing rows or columns
/// are completed by replicating the last one.
pub fn haar_decompose(img: &RasterImage) -> Result<HaarSubbands> {
    let (w, h) = img.dims();
    if w < 2 || h < 2 {
        return Err(Error::dim(format!("haar transform needs at least 2x2, got {w}x{h}")));
    }
    let (hw, hh_) = (w.div_ceil(2), h.div_ceil(2));
    let n = hw * hh_;
    let (mut ll, mut lh, mut hl, mut hh) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for by in 0..hh_ {
        let y0 = 2 * by;
        let y1 = (y0 + 1).min(h - 1);
        for bx in 0..hw {
            let x0 = 2 * bx;
            let x1 = (x0 + 1).min(w - 1);
            let (a, b, c, d) = (img.get(x0, y0), img.get(x1, y0), img.get(x0, y1), img.get(x1, y1));
            ll.push((a + b + c + d) / 2.0);
            lh.push((a - b + c - d) / 2.0);
            hl.push((a + b - c - d) / 2.0);
            hh.push((a - b - c + d) / 2.0);
        }
    }
    Ok(HaarSubbands {
        ll: RasterImage::from_raw(hw, hh_, ll),
        lh: RasterImage::from_raw(hw, hh_, lh),
        hl: RasterImage::from_raw(hw, hh_, hl),
        hh: RasterImage::from_raw(hw, hh_, hh),
    })
}

/// Population standard deviation.
fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Defocus score `Q_B = exp(−σ_D)` with σ_D the spread of the diagonal Haar
/// coefficients at intensity scale `scale`. Returns `(Q_B, σ_D)`; blurrier
/// images score closer to 1.
pub fn defocus_score_scaled(img: &RasterImage, scale: f64) -> Result<(f64, f64)> {
    let bands = haar_decompose(img)?;
    let scaled: Vec<f64> = bands.hh.data().iter().map(|v| v * scale).collect();
    let sigma_d = std_dev(&scaled);
    Ok(((-sigma_d).exp(), sigma_d))
}

pub fn defocus_score(img: &RasterImage) -> Result<(f64, f64)> {
    defocus_score_scaled(img, DEFAULT_DEFOCUS_SCALE)
}

fn ser_psnr<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(p) if p.is_infinite() => s.serialize_str("inf"),
        Some(p) => s.serialize_f64(*p),
        None => s.serialize_none(),
    }
}

fn de_psnr<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }
    match Option::<Raw>::deserialize(d)? {
        None => Ok(None),
        Some(Raw::Num(v)) => Ok(Some(v)),
        Some(Raw::Text(t)) if t == "inf" => Ok(Some(f64::INFINITY)),
        Some(Raw::Text(t)) => Err(serde::de::Error::custom(format!("invalid psnr `{t}`"))),
    }
}

/// Metrics for one image, optionally against a reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse: Option<f64>,
    /// `"inf"` in JSON when the images are identical.
    #[serde(
        serialize_with = "ser_psnr",
        deserialize_with = "de_psnr",
        skip_serializing_if = "Option::is_none",
        default
    )]
    pub psnr_db: Option<f64>,
    pub defocus_score: f64,
    pub sigma_d: f64,
}

impl QualityReport {
    /// No-reference report.
    pub fn of(img: &RasterImage) -> Result<Self> {
        let (q, s) = defocus_score(img)?;
        Ok(Self {
            mse: None,
            psnr_db: None,
            defocus_score: q,
            sigma_d: s,
        })
    }

    /// Report for `img` against `reference` with peak value `max_i`.
    pub fn against(img: &RasterImage, reference: &RasterImage, max_i: f64) -> Result<Self> {
        let e = mse(img, reference)?;
        let (q, s) = defocus_score(img)?;
        if !(max_i > 0.0) {
            return Err(Error::config("peak value must be positive"));
        }
        Ok(Self {
            mse: Some(e),
            psnr_db: Some(psnr_from_mse(e, max_i)),
            defocus_score: q,
            sigma_d: s,
        })
    }
}
