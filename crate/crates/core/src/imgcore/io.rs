//! Image and kernel files.
//!
//! Images: PGM (P5, 8 or 16 bit) and PNG (gray or RGB, 8 or 16 bit) are read;
//! 8-bit P5 PGM and 8-bit PNG are written, chosen by file extension. Color
//! inputs are reduced with `0.299 R + 0.587 G + 0.114 B`.
//!
//! Kernels: a text file whose first line is the side length, followed by
//! `side` rows of `side` whitespace-separated decimals.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ImageEncoder, ImageFormat, ImageReader};

use super::{BlurKernel, RasterImage};
use crate::error::{Error, Result};

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Negative kernel entries down to this value are treated as rounding noise.
const KERNEL_NEG_TOLERANCE: f64 = -1e-9;

fn format_err(path: &Path, reason: impl ToString) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn decode(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    if !matches!(reader.format(), Some(ImageFormat::Png | ImageFormat::Pnm)) {
        return Err(format_err(path, "expected a PNG or PGM file"));
    }
    reader.decode().map_err(|e| format_err(path, e))
}

fn gray_of(img: &DynamicImage) -> Option<(u32, u32, Vec<f64>)> {
    match img {
        DynamicImage::ImageLuma8(b) => Some((b.width(), b.height(), b.as_raw().iter().map(|&v| v as f64 / 255.0).collect())),
        DynamicImage::ImageLuma16(b) => {
            Some((b.width(), b.height(), b.as_raw().iter().map(|&v| v as f64 / 65535.0).collect()))
        }
        _ => None,
    }
}

fn rgb_of(img: &DynamicImage) -> (u32, u32, [Vec<f64>; 3]) {
    let (w, h, samples, scale): (u32, u32, Vec<f64>, f64) = match img {
        DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) | DynamicImage::ImageLumaA8(_) => {
            let b = img.to_rgb8();
            (b.width(), b.height(), b.as_raw().iter().map(|&v| v as f64).collect(), 255.0)
        }
        _ => {
            let b = img.to_rgb16();
            (b.width(), b.height(), b.as_raw().iter().map(|&v| v as f64).collect(), 65535.0)
        }
    };
    let mut planes: [Vec<f64>; 3] = Default::default();
    for px in samples.chunks_exact(3) {
        for c in 0..3 {
            planes[c].push(px[c] / scale);
        }
    }
    (w, h, planes)
}

/// Loads an image as a single luminance channel in `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let img = decode(path)?;
    if let Some((w, h, data)) = gray_of(&img) {
        return RasterImage::new(w as usize, h as usize, data);
    }
    let (w, h, [r, g, b]) = rgb_of(&img);
    let data = r
        .iter()
        .zip(&g)
        .zip(&b)
        .map(|((r, g), b)| LUMA[0] * r + LUMA[1] * g + LUMA[2] * b)
        .collect();
    RasterImage::new(w as usize, h as usize, data)
}

/// Loads an image keeping its color planes. Grayscale files yield one plane,
/// color files three (R, G, B).
pub fn load_channels(path: impl AsRef<Path>) -> Result<Vec<RasterImage>> {
    let path = path.as_ref();
    let img = decode(path)?;
    if let Some((w, h, data)) = gray_of(&img) {
        return Ok(vec![RasterImage::new(w as usize, h as usize, data)?]);
    }
    let (w, h, planes) = rgb_of(&img);
    planes
        .into_iter()
        .map(|p| RasterImage::new(w as usize, h as usize, p))
        .collect()
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode(path: &Path, width: u32, height: u32, bytes: &[u8], color: image::ExtendedColorType) -> Result<()> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let res = match ext.as_str() {
        "png" => image::codecs::png::PngEncoder::new(&mut out).write_image(bytes, width, height, color),
        "pgm" if color == image::ExtendedColorType::L8 => PnmEncoder::new(&mut out)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(bytes, width, height, color),
        "pgm" => return Err(format_err(path, "PGM output is grayscale only")),
        _ => return Err(format_err(path, "output extension must be .png or .pgm")),
    };
    res.map_err(|e| format_err(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Writes an 8-bit grayscale PGM or PNG (by extension); values are clamped to `[0, 1]`.
pub fn save_image(image: &RasterImage, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = image.data().iter().map(|&v| quantize(v)).collect();
    encode(
        path.as_ref(),
        image.width() as u32,
        image.height() as u32,
        &bytes,
        image::ExtendedColorType::L8,
    )
}

/// Writes one plane as grayscale or three planes as an 8-bit RGB PNG.
pub fn save_channels(planes: &[RasterImage], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match planes {
        [gray] => save_image(gray, path),
        [r, g, b] => {
            if !(r.same_dims(g) && r.same_dims(b)) {
                return Err(Error::dim("color planes differ in size"));
            }
            let mut bytes = Vec::with_capacity(3 * r.len());
            for i in 0..r.len() {
                bytes.extend([quantize(r.data()[i]), quantize(g.data()[i]), quantize(b.data()[i])]);
            }
            encode(path, r.width() as u32, r.height() as u32, &bytes, image::ExtendedColorType::Rgb8)
        }
        _ => Err(Error::dim(format!("expected 1 or 3 planes, got {}", planes.len()))),
    }
}

/// Serializes a kernel in the plain-text format.
pub fn kernel_to_string(kernel: &BlurKernel) -> String {
    let side = kernel.side();
    let mut s = format!("{side}\n");
    for row in kernel.weights().chunks(side) {
        let line: Vec<String> = row.iter().map(|w| w.to_string()).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

/// Parses the plain-text kernel format, renormalizing to unit sum.
pub fn parse_kernel(text: &str, path: &Path) -> Result<BlurKernel> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let side: usize = lines
        .next()
        .ok_or_else(|| format_err(path, "empty kernel file"))?
        .parse()
        .map_err(|e| format_err(path, format!("bad side length: {e}")))?;
    if side == 0 || side % 2 == 0 {
        return Err(format_err(path, format!("kernel side must be odd, got {side}")));
    }
    let mut weights = Vec::with_capacity(side * side);
    for row in 0..side {
        let line = lines
            .next()
            .ok_or_else(|| format_err(path, format!("missing kernel row {row}")))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| format_err(path, format!("row {row}: {e}")))?;
        if vals.len() != side {
            return Err(format_err(path, format!("row {row} has {} values, expected {side}", vals.len())));
        }
        weights.extend(vals);
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < KERNEL_NEG_TOLERANCE) {
        return Err(format_err(path, format!("invalid kernel weight {w}")));
    }
    let sum: f64 = weights.iter().map(|w| w.max(0.0)).sum();
    if sum <= 0.0 {
        return Err(format_err(path, "kernel weights sum to zero"));
    }
    BlurKernel::from_projected(side, &weights)
}

pub fn save_kernel(kernel: &BlurKernel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, kernel_to_string(kernel)).map_err(|e| Error::io(path, e))
}

pub fn load_kernel(path: impl AsRef<Path>) -> Result<BlurKernel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kernel(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{ImageBuffer, Luma, Rgb};

    fn ramp() -> RasterImage {
        RasterImage::from_fn(17, 9, |x, y| ((x * 13 + y * 7) % 101) as f64 / 100.0).unwrap()
    }

    #[test]
    fn eight_bit_round_trip_within_half_step() {
        let dir = tempfile::tempdir().unwrap();
        let img = ramp();
        for name in ["a.pgm", "a.png"] {
            let p = dir.path().join(name);
            save_image(&img, &p).unwrap();
            let back = load_image(&p).unwrap();
            assert_eq!(back.dims(), img.dims());
            for (a, b) in img.data().iter().zip(back.data()) {
                assert!((a - b).abs() <= 1.0 / 510.0 + 1e-12, "{name}");
            }
        }
    }

    #[test]
    fn pgm_output_is_p5() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.pgm");
        save_image(&ramp(), &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..2], b"P5");
    }

    #[test]
    fn sixteen_bit_inputs_scale_to_unit_range() {
        let dir = tempfile::tempdir().unwrap();
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_fn(4, 2, |x, _| Luma([if x == 0 { 65535 } else { 32768 }]));
        let png = dir.path().join("w.png");
        buf.save(&png).unwrap();
        let got = load_image(&png).unwrap();
        assert_eq!(got.get(0, 0), 1.0);
        assert!((got.get(1, 0) - 32768.0 / 65535.0).abs() < 1e-12);

        // hand-written 16-bit P5
        let pgm = dir.path().join("w.pgm");
        let mut raw = b"P5\n2 1\n65535\n".to_vec();
        raw.extend([0xff, 0xff, 0x00, 0x00]);
        fs::write(&pgm, raw).unwrap();
        let got = load_image(&pgm).unwrap();
        assert_eq!(got.data(), &[1.0, 0.0]);
    }

    #[test]
    fn gray_valued_color_matches_gray_channel() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        let buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_fn(5, 3, |x, y| {
            let v = (x * 40 + y * 10) as u8;
            Rgb([v, v, v])
        });
        buf.save(&p).unwrap();
        let lum = load_image(&p).unwrap();
        let planes = load_channels(&p).unwrap();
        assert_eq!(planes.len(), 3);
        for (l, g) in lum.data().iter().zip(planes[1].data()) {
            assert!((l - g).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_or_unsupported_files_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nope.png");
        let err = load_image(&p).unwrap_err().to_string();
        assert!(err.contains("nope.png"), "{err}");
        let txt = dir.path().join("notes.txt");
        fs::write(&txt, "hello").unwrap();
        assert!(load_image(&txt).unwrap_err().to_string().contains("notes.txt"));
        assert!(save_image(&ramp(), dir.path().join("x.bmp")).is_err());
    }

    #[test]
    fn kernel_text_round_trip_and_validation() {
        let k = BlurKernel::new(3, vec![0.0, 0.1, 0.0, 0.1, 0.6, 0.1, 0.0, 0.1, 0.0]).unwrap();
        let p = Path::new("k.txt");
        let back = parse_kernel(&kernel_to_string(&k), p).unwrap();
        assert_eq!(back, k);

        let unnormalized = parse_kernel("3\n1 1 1\n1 1 1\n1 1 1\n", p).unwrap();
        assert!(unnormalized.weights().iter().all(|w| (w - 1.0 / 9.0).abs() < 1e-15));
        assert!(parse_kernel("1\n-1e-10\n", p).is_err()); // sums to zero
        assert!(parse_kernel("3\n1 -1e-10 1\n1 1 1\n1 1 1\n", p).is_ok());
        assert!(parse_kernel("3\n1 -0.01 1\n1 1 1\n1 1 1\n", p).is_err());
        assert!(parse_kernel("2\n1 1\n1 1\n", p).is_err());
        assert!(parse_kernel("3\n1 1 1\n1 1\n1 1 1\n", p).is_err());
    }
}
