use serde::{Deserialize, Serialize};

use super::{Filter2d, RasterImage};
use crate::error::{Error, Result};

/// How pixels outside the frame are synthesized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryPolicy {
    /// Repeat the nearest edge pixel.
    #[default]
    ReplicateEdge,
    /// Mirror about the edge pixel without repeating it (`d c b | a b c d`).
    Reflect,
    /// Treat everything outside the frame as zero.
    ZeroPad,
}

impl BoundaryPolicy {
    /// Maps a possibly out-of-range coordinate onto `0..n`, or `None` for zero padding.
    #[inline]
    pub fn index(self, i: isize, n: usize) -> Option<usize> {
        let n_i = n as isize;
        if (0..n_i).contains(&i) {
            return Some(i as usize);
        }
        match self {
            BoundaryPolicy::ReplicateEdge => Some(i.clamp(0, n_i - 1) as usize),
            BoundaryPolicy::Reflect => {
                if n == 1 {
                    return Some(0);
                }
                let period = 2 * (n_i - 1);
                let m = i.rem_euclid(period);
                Some(if m >= n_i { period - m } else { m } as usize)
            }
            BoundaryPolicy::ZeroPad => None,
        }
    }
}

/// Builds the frame extended by `pad` pixels on every side.
fn padded(image: &RasterImage, pad: usize, boundary: BoundaryPolicy) -> (Vec<f64>, usize) {
    let (w, h) = image.dims();
    let pw = w + 2 * pad;
    let ph = h + 2 * pad;
    let col_map: Vec<Option<usize>> = (0..pw)
        .map(|px| boundary.index(px as isize - pad as isize, w))
        .collect();
    let mut buf = vec![0.0; pw * ph];
    for py in 0..ph {
        let Some(sy) = boundary.index(py as isize - pad as isize, h) else {
            continue;
        };
        let src = &image.data()[sy * w..(sy + 1) * w];
        let dst = &mut buf[py * pw..(py + 1) * pw];
        for (d, m) in dst.iter_mut().zip(&col_map) {
            if let Some(sx) = *m {
                *d = src[sx];
            }
        }
    }
    (buf, pw)
}

fn check_fits(image: &RasterImage, filter: &Filter2d) -> Result<()> {
    let side = filter.side();
    if side > image.width() || side > image.height() {
        return Err(Error::dim(format!(
            "kernel of side {side} is larger than the {}x{} image",
            image.width(),
            image.height()
        )));
    }
    Ok(())
}

/// Extends `image` by `pad` pixels on every side using `boundary`.
pub fn pad(image: &RasterImage, pad: usize, boundary: BoundaryPolicy) -> RasterImage {
    let (buf, pw) = padded(image, pad, boundary);
    RasterImage::from_raw(pw, image.height() + 2 * pad, buf)
}

/// The `width x height` window with top-left corner `(x0, y0)`.
pub fn crop(image: &RasterImage, x0: usize, y0: usize, width: usize, height: usize) -> Result<RasterImage> {
    if width == 0 || height == 0 || x0 + width > image.width() || y0 + height > image.height() {
        return Err(Error::dim(format!(
            "crop {width}x{height}+{x0}+{y0} does not fit a {}x{} image",
            image.width(),
            image.height()
        )));
    }
    let w = image.width();
    let mut out = Vec::with_capacity(width * height);
    for y in y0..y0 + height {
        out.extend_from_slice(&image.data()[y * w + x0..y * w + x0 + width]);
    }
    Ok(RasterImage::from_raw(width, height, out))
}

/// True 2-D convolution: `out(p) = Σ_q k(q) · image(p − q + center)`.
///
/// The output has the input's dimensions; out-of-frame samples come from
/// `boundary`.
pub fn convolve2d<K: AsRef<Filter2d> + ?Sized>(
    image: &RasterImage,
    kernel: &K,
    boundary: BoundaryPolicy,
) -> Result<RasterImage> {
    let filter = kernel.as_ref();
    check_fits(image, filter)?;
    let (w, h) = image.dims();
    let side = filter.side();
    let r = filter.radius();
    let (buf, pw) = padded(image, r, boundary);
    let mut out = vec![0.0; w * h];
    // out(x, y) = Σ_{i,j} k(i, j) · P(x + 2r − i, y + 2r − j)
    for j in 0..side {
        for i in 0..side {
            let kv = filter.get(i, j);
            if kv == 0.0 {
                continue;
            }
            let dx = 2 * r - i;
            let dy = 2 * r - j;
            for y in 0..h {
                let src = &buf[(y + dy) * pw + dx..(y + dy) * pw + dx + w];
                let dst = &mut out[y * w..(y + 1) * w];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += kv * s;
                }
            }
        }
    }
    Ok(RasterImage::from_raw(w, h, out))
}

/// Correlation with `kernel`, i.e. convolution with the kernel flipped on
/// both axes. Under zero padding this is the adjoint of [`convolve2d`].
pub fn correlate2d<K: AsRef<Filter2d> + ?Sized>(
    image: &RasterImage,
    kernel: &K,
    boundary: BoundaryPolicy,
) -> Result<RasterImage> {
    convolve2d(image, &kernel.as_ref().flipped(), boundary)
}

/// Exact adjoint of [`convolve2d`] under the same boundary policy.
///
/// Interior pixels match [`correlate2d`]; contributions that the forward
/// operator read from the extended border are folded back onto the pixels
/// they were copied from. Under zero padding this equals [`correlate2d`].
pub fn convolve2d_adjoint<K: AsRef<Filter2d> + ?Sized>(
    residual: &RasterImage,
    kernel: &K,
    boundary: BoundaryPolicy,
) -> Result<RasterImage> {
    let filter = kernel.as_ref();
    check_fits(residual, filter)?;
    let (w, h) = residual.dims();
    let side = filter.side();
    let r = filter.radius();
    let pw = w + 2 * r;
    let ph = h + 2 * r;
    let mut ext = vec![0.0; pw * ph];
    for j in 0..side {
        for i in 0..side {
            let kv = filter.get(i, j);
            if kv == 0.0 {
                continue;
            }
            let dx = 2 * r - i;
            let dy = 2 * r - j;
            for y in 0..h {
                let src = &residual.data()[y * w..(y + 1) * w];
                let dst = &mut ext[(y + dy) * pw + dx..(y + dy) * pw + dx + w];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += kv * s;
                }
            }
        }
    }
    let mut out = vec![0.0; w * h];
    let col_map: Vec<Option<usize>> = (0..pw).map(|px| boundary.index(px as isize - r as isize, w)).collect();
    for py in 0..ph {
        let Some(sy) = boundary.index(py as isize - r as isize, h) else {
            continue;
        };
        for (px, m) in col_map.iter().enumerate() {
            if let Some(sx) = *m {
                out[sy * w + sx] += ext[py * pw + px];
            }
        }
    }
    Ok(RasterImage::from_raw(w, h, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::BlurKernel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop reference, written independently of the padded fast path.
    fn reference(image: &RasterImage, k: &Filter2d, boundary: BoundaryPolicy) -> Vec<f64> {
        let (w, h) = image.dims();
        let r = k.radius() as isize;
        let mut out = vec![0.0; w * h];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut acc = 0.0;
                for j in 0..k.side() as isize {
                    for i in 0..k.side() as isize {
                        let sx = boundary.index(x - (i - r), w);
                        let sy = boundary.index(y - (j - r), h);
                        if let (Some(sx), Some(sy)) = (sx, sy) {
                            acc += k.get(i as usize, j as usize) * image.get(sx, sy);
                        }
                    }
                }
                out[y as usize * w + x as usize] = acc;
            }
        }
        out
    }

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> RasterImage {
        RasterImage::from_fn(w, h, |_, _| rng.random::<f64>()).unwrap()
    }

    fn random_filter(rng: &mut ChaCha8Rng, side: usize) -> Filter2d {
        Filter2d::new(side, (0..side * side).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_kernel_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_image(&mut rng, 7, 5);
        let out = convolve2d(&img, &BlurKernel::identity(), BoundaryPolicy::ReplicateEdge).unwrap();
        assert_eq!(out, img);
        let out = correlate2d(&img, &BlurKernel::identity(), BoundaryPolicy::ZeroPad).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn constant_image_survives_unit_sum_kernel() {
        let img = RasterImage::filled(9, 6, 0.37).unwrap();
        let k = BlurKernel::new(5, vec![1.0 / 25.0; 25]).unwrap();
        let out = convolve2d(&img, &k, BoundaryPolicy::ReplicateEdge).unwrap();
        for v in out.data() {
            assert!((v - 0.37).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_nested_loop_reference_all_policies() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let img = random_image(&mut rng, 8, 8);
        let k = random_filter(&mut rng, 3);
        for policy in [BoundaryPolicy::ReplicateEdge, BoundaryPolicy::Reflect, BoundaryPolicy::ZeroPad] {
            let fast = convolve2d(&img, &k, policy).unwrap();
            let slow = reference(&img, &k, policy);
            for (a, b) in fast.data().iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "{policy:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn symmetric_kernel_correlation_equals_convolution() {
        let g = [1.0, 2.0, 1.0, 2.0, 4.0, 2.0, 1.0, 2.0, 1.0].map(|v| v / 16.0);
        let k = BlurKernel::new(3, g.to_vec()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = random_image(&mut rng, 6, 6);
        let a = convolve2d(&img, &k, BoundaryPolicy::Reflect).unwrap();
        let b = correlate2d(&img, &k, BoundaryPolicy::Reflect).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn adjoint_identity_under_zero_pad() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_image(&mut rng, 8, 8);
        let b = random_image(&mut rng, 8, 8);
        let k = random_filter(&mut rng, 3);
        let ka = convolve2d(&a, &k, BoundaryPolicy::ZeroPad).unwrap();
        let ktb = correlate2d(&b, &k, BoundaryPolicy::ZeroPad).unwrap();
        assert!((ka.dot(&b) - a.dot(&ktb)).abs() < 1e-10);
    }

    #[test]
    fn exact_adjoint_for_every_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_image(&mut rng, 9, 7);
        let b = random_image(&mut rng, 9, 7);
        let k = random_filter(&mut rng, 5);
        for policy in [BoundaryPolicy::ReplicateEdge, BoundaryPolicy::Reflect, BoundaryPolicy::ZeroPad] {
            let ka = convolve2d(&a, &k, policy).unwrap();
            let ktb = convolve2d_adjoint(&b, &k, policy).unwrap();
            assert!((ka.dot(&b) - a.dot(&ktb)).abs() < 1e-10, "{policy:?}");
        }
        let zp = convolve2d_adjoint(&b, &k, BoundaryPolicy::ZeroPad).unwrap();
        let corr = correlate2d(&b, &k, BoundaryPolicy::ZeroPad).unwrap();
        for (x, y) in zp.data().iter().zip(corr.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn oversized_kernel_is_rejected() {
        let img = RasterImage::zeros(4, 8).unwrap();
        let k = BlurKernel::delta(5).unwrap();
        assert!(matches!(
            convolve2d(&img, &k, BoundaryPolicy::ReplicateEdge),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn reflect_index_mirrors_without_repeating_edge() {
        let p = BoundaryPolicy::Reflect;
        let got: Vec<usize> = (-3..7).map(|i| p.index(i, 4).unwrap()).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(p.index(-5, 1), Some(0));
    }

    #[test]
    fn pad_then_crop_round_trips() {
        let img = RasterImage::from_fn(5, 3, |x, y| (x + 10 * y) as f64).unwrap();
        let big = pad(&img, 2, BoundaryPolicy::ReplicateEdge);
        assert_eq!(big.dims(), (9, 7));
        assert_eq!(big.get(0, 0), 0.0);
        assert_eq!(big.get(8, 6), 24.0);
        assert_eq!(crop(&big, 2, 2, 5, 3).unwrap(), img);
        assert!(crop(&big, 5, 5, 5, 3).is_err());
    }
}
