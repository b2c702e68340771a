//! C ABI for the omnideblur toolkit.
//!
//! Images and kernels cross the boundary as opaque handles that the caller
//! releases with the matching `*_free` function. Every fallible call returns
//! an [`OdStatus`]; on failure a description is available from
//! [`od_last_error_message`] until the next call on the same thread.
//! Panics are caught at the boundary and reported as [`OdStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use omnideblur::driver::estimate_kernel;
use omnideblur::gabor::GaborParams;
use omnideblur::imgcore::io::{load_image, load_kernel, save_image, save_kernel};
use omnideblur::nonblind::{deconvolve, NonblindConfig, NonblindMethod};
use omnideblur::pyramid::{build_schedule, PyramidSchedule, SeededRng};
use omnideblur::quality::{defocus_score, psnr};
use omnideblur::{BlurKernel, Error, RasterImage, SolverConfig};

/// Maximum number of Gabor orientations in [`OdConfig`].
pub const OD_MAX_THETAS: usize = 16;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidConfig = 2,
    Io = 3,
    Format = 4,
    Dimension = 5,
    Numeric = 6,
    Degenerate = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdNonblind {
    Tikhonov = 0,
    Sparse = 1,
}

/// Every tunable of one deblurring run.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdConfig {
    pub alpha: f64,
    pub zeta: f64,
    pub step_t: f64,
    pub fista_iters: u32,
    pub irls_outer: u32,
    pub cg_inner: u32,
    pub em_iters: u32,
    pub scale_ratio: f64,
    pub n_thetas: u32,
    /// Orientations in degrees; only the first `n_thetas` are read.
    pub thetas: [f64; OD_MAX_THETAS],
    pub gabor_lambda: f64,
    pub gabor_sigma: f64,
    pub gabor_psi: f64,
    pub gabor_gamma: f64,
    pub gabor_support: u32,
    pub normalize: bool,
    pub recenter: bool,
    pub nonblind: OdNonblind,
    pub nb_reg: f64,
    pub nb_iters: u32,
    /// Largest kernel side (odd).
    pub kernel_size: u32,
    pub min_kernel: u32,
    pub seed: u64,
}

/// Opaque grayscale image with values nominally in `[0, 1]`.
pub struct OdImage(RasterImage);

/// Opaque square blur kernel on the simplex.
pub struct OdKernel(BlurKernel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(e: &Error) -> OdStatus {
    match e.root() {
        Error::Config(_) => OdStatus::InvalidConfig,
        Error::Io { .. } => OdStatus::Io,
        Error::Format { .. } => OdStatus::Format,
        Error::Dimension(_) => OdStatus::Dimension,
        Error::NumericDivergence { .. } | Error::NotPositiveDefinite { .. } => OdStatus::Numeric,
        Error::Degenerate(_) => OdStatus::Degenerate,
        Error::AtLevel { .. } => unreachable!("root() strips level annotations"),
    }
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

/// Runs `f`, converting errors and panics into a status and recording the message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OdStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OdStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed for `{what}`"));
            OdStatus::NullArgument
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            OdStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::Config("path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

fn to_config(solver: &SolverConfig, nonblind: &NonblindConfig) -> OdConfig {
    let mut thetas = [0.0; OD_MAX_THETAS];
    let n = solver.thetas.len().min(OD_MAX_THETAS);
    thetas[..n].copy_from_slice(&solver.thetas[..n]);
    OdConfig {
        alpha: solver.alpha,
        zeta: solver.zeta,
        step_t: solver.step_t,
        fista_iters: solver.fista_iters as u32,
        irls_outer: solver.irls_outer as u32,
        cg_inner: solver.cg_inner as u32,
        em_iters: solver.em_iters as u32,
        scale_ratio: solver.scale_ratio,
        n_thetas: n as u32,
        thetas,
        gabor_lambda: solver.gabor.wavelength,
        gabor_sigma: solver.gabor.sigma,
        gabor_psi: solver.gabor.phase_deg,
        gabor_gamma: solver.gabor.aspect,
        gabor_support: solver.gabor.support as u32,
        normalize: solver.normalize,
        recenter: solver.recenter,
        nonblind: match nonblind.method {
            NonblindMethod::TikhonovFrequency => OdNonblind::Tikhonov,
            NonblindMethod::SparseGradient => OdNonblind::Sparse,
        },
        nb_reg: nonblind.reg_weight,
        nb_iters: nonblind.inner_iters as u32,
        kernel_size: 15,
        min_kernel: 3,
        seed: 0,
    }
}

struct Resolved {
    solver: SolverConfig,
    nonblind: NonblindConfig,
    schedule: PyramidSchedule,
    seed: u64,
}

fn from_config(c: &OdConfig) -> Result<Resolved, Failure> {
    let n = c.n_thetas as usize;
    if n == 0 || n > OD_MAX_THETAS {
        return Err(Error::Config(format!("n_thetas must be in 1..={OD_MAX_THETAS}, got {n}")).into());
    }
    let solver = SolverConfig {
        alpha: c.alpha,
        zeta: c.zeta,
        step_t: c.step_t,
        fista_iters: c.fista_iters as usize,
        irls_outer: c.irls_outer as usize,
        cg_inner: c.cg_inner as usize,
        em_iters: c.em_iters as usize,
        scale_ratio: c.scale_ratio,
        thetas: c.thetas[..n].to_vec(),
        gabor: GaborParams {
            wavelength: c.gabor_lambda,
            orientation_deg: 0.0,
            phase_deg: c.gabor_psi,
            sigma: c.gabor_sigma,
            aspect: c.gabor_gamma,
            support: c.gabor_support as usize,
        },
        recenter: c.recenter,
        normalize: c.normalize,
    };
    solver.validate()?;
    let nonblind = NonblindConfig {
        method: match c.nonblind {
            OdNonblind::Tikhonov => NonblindMethod::TikhonovFrequency,
            OdNonblind::Sparse => NonblindMethod::SparseGradient,
        },
        reg_weight: c.nb_reg,
        inner_iters: c.nb_iters as usize,
    };
    nonblind.validate()?;
    let schedule = build_schedule(c.kernel_size as usize, solver.scale_ratio, c.min_kernel as usize)?;
    Ok(Resolved {
        solver,
        nonblind,
        schedule,
        seed: c.seed,
    })
}

/// Fills `out` with the default parameters (kernel size 15, seed 0).
///
/// # Safety
/// `out` must be null or point to writable memory for one `OdConfig`.
#[no_mangle]
pub unsafe extern "C" fn od_config_default(out: *mut OdConfig) -> OdStatus {
    guard(|| {
        *out_ptr(out, "out")? = to_config(&SolverConfig::default(), &NonblindConfig::default());
        Ok(())
    })
}

/// Fills `out` with the tuned preset (normalized stacks, sparse non-blind pass).
///
/// # Safety
/// `out` must be null or point to writable memory for one `OdConfig`.
#[no_mangle]
pub unsafe extern "C" fn od_config_tuned(out: *mut OdConfig) -> OdStatus {
    guard(|| {
        *out_ptr(out, "out")? = to_config(&SolverConfig::tuned(), &NonblindConfig::tuned());
        Ok(())
    })
}

/// Creates an image from `width * height` row-major samples.
///
/// # Safety
/// `data` must point to `width * height` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn od_image_new(width: usize, height: usize, data: *const f64, out: *mut *mut OdImage) -> OdStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if data.is_null() {
            return Err(Failure::Null("data"));
        }
        let n = width
            .checked_mul(height)
            .ok_or_else(|| Error::Dimension("image size overflows".into()))?;
        let samples = std::slice::from_raw_parts(data, n).to_vec();
        *out = Box::into_raw(Box::new(OdImage(RasterImage::new(width, height, samples)?)));
        Ok(())
    })
}

/// Loads a PGM or PNG file as luminance.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn od_image_load(path: *const c_char, out: *mut *mut OdImage) -> OdStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let img = load_image(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(OdImage(img)));
        Ok(())
    })
}

/// Writes an 8-bit PGM or PNG, chosen by extension.
///
/// # Safety
/// `image` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn od_image_save(image: *const OdImage, path: *const c_char) -> OdStatus {
    guard(|| {
        let img = deref(image, "image")?;
        save_image(&img.0, path_arg(path)?)?;
        Ok(())
    })
}

/// Releases an image. Null is ignored.
///
/// # Safety
/// `image` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn od_image_free(image: *mut OdImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

/// Width in pixels, or 0 for a null handle.
///
/// # Safety
/// `image` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn od_image_width(image: *const OdImage) -> usize {
    image.as_ref().map_or(0, |i| i.0.width())
}

/// Height in pixels, or 0 for a null handle.
///
/// # Safety
/// `image` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn od_image_height(image: *const OdImage) -> usize {
    image.as_ref().map_or(0, |i| i.0.height())
}

/// Borrowed pointer to the row-major samples, valid while the handle lives.
///
/// # Safety
/// `image` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn od_image_data(image: *const OdImage) -> *const f64 {
    image.as_ref().map_or(ptr::null(), |i| i.0.data().as_ptr())
}

/// Creates a kernel from `side * side` non-negative weights summing to 1.
///
/// # Safety
/// `weights` must point to `side * side` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn od_kernel_new(side: usize, weights: *const f64, out: *mut *mut OdKernel) -> OdStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if weights.is_null() {
            return Err(Failure::Null("weights"));
        }
        let n = side
            .checked_mul(side)
            .ok_or_else(|| Error::Dimension("kernel size overflows".into()))?;
        let w = std::slice::from_raw_parts(weights, n).to_vec();
        *out = Box::into_raw(Box::new(OdKernel(BlurKernel::new(side, w)?)));
        Ok(())
    })
}

/// Loads a kernel text file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn od_kernel_load(path: *const c_char, out: *mut *mut OdKernel) -> OdStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let k = load_kernel(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(OdKernel(k)));
        Ok(())
    })
}

/// Writes a kernel text file.
///
/// # Safety
/// `kernel` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn od_kernel_save(kernel: *const OdKernel, path: *const c_char) -> OdStatus {
    guard(|| {
        let k = deref(kernel, "kernel")?;
        save_kernel(&k.0, path_arg(path)?)?;
        Ok(())
    })
}

/// Releases a kernel. Null is ignored.
///
/// # Safety
/// `kernel` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn od_kernel_free(kernel: *mut OdKernel) {
    if !kernel.is_null() {
        drop(Box::from_raw(kernel));
    }
}

/// Kernel side, or 0 for a null handle.
///
/// # Safety
/// `kernel` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn od_kernel_side(kernel: *const OdKernel) -> usize {
    kernel.as_ref().map_or(0, |k| k.0.side())
}

/// Borrowed pointer to the row-major weights, valid while the handle lives.
///
/// # Safety
/// `kernel` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn od_kernel_weights(kernel: *const OdKernel) -> *const f64 {
    kernel.as_ref().map_or(ptr::null(), |k| k.0.weights().as_ptr())
}

/// Blind kernel estimation only.
///
/// # Safety
/// `image` and `config` must be live; `out_kernel` must be writable.
#[no_mangle]
pub unsafe extern "C" fn od_estimate_kernel(
    image: *const OdImage,
    config: *const OdConfig,
    out_kernel: *mut *mut OdKernel,
) -> OdStatus {
    guard(|| {
        let img = deref(image, "image")?;
        let r = from_config(deref(config, "config")?)?;
        let out_kernel = out_ptr(out_kernel, "out_kernel")?;
        let mut rng = SeededRng::new(r.seed);
        let (k, _) = estimate_kernel(&img.0, &r.solver, &r.schedule, &mut rng)?;
        *out_kernel = Box::into_raw(Box::new(OdKernel(k)));
        Ok(())
    })
}

/// Non-blind restoration with a known kernel, using the config's non-blind fields.
///
/// # Safety
/// `image`, `kernel` and `config` must be live; `out_image` must be writable.
#[no_mangle]
pub unsafe extern "C" fn od_deconvolve(
    image: *const OdImage,
    kernel: *const OdKernel,
    config: *const OdConfig,
    out_image: *mut *mut OdImage,
) -> OdStatus {
    guard(|| {
        let img = deref(image, "image")?;
        let k = deref(kernel, "kernel")?;
        let c = deref(config, "config")?;
        let out_image = out_ptr(out_image, "out_image")?;
        let nonblind = NonblindConfig {
            method: match c.nonblind {
                OdNonblind::Tikhonov => NonblindMethod::TikhonovFrequency,
                OdNonblind::Sparse => NonblindMethod::SparseGradient,
            },
            reg_weight: c.nb_reg,
            inner_iters: c.nb_iters as usize,
        };
        nonblind.validate()?;
        let x = deconvolve(&img.0, &k.0, &nonblind)?;
        *out_image = Box::into_raw(Box::new(OdImage(x)));
        Ok(())
    })
}

/// Full pipeline: kernel estimation then non-blind restoration. On success
/// both outputs are new handles owned by the caller.
///
/// # Safety
/// `image` and `config` must be live; both output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn od_deblur(
    image: *const OdImage,
    config: *const OdConfig,
    out_image: *mut *mut OdImage,
    out_kernel: *mut *mut OdKernel,
) -> OdStatus {
    guard(|| {
        let img = deref(image, "image")?;
        let r = from_config(deref(config, "config")?)?;
        let out_image = out_ptr(out_image, "out_image")?;
        let out_kernel = out_ptr(out_kernel, "out_kernel")?;
        let mut rng = SeededRng::new(r.seed);
        let (k, _) = estimate_kernel(&img.0, &r.solver, &r.schedule, &mut rng)?;
        let x = deconvolve(&img.0, &k, &r.nonblind)?;
        *out_image = Box::into_raw(Box::new(OdImage(x)));
        *out_kernel = Box::into_raw(Box::new(OdKernel(k)));
        Ok(())
    })
}

/// PSNR in dB with peak `max_value`; identical images give `+inf`.
///
/// # Safety
/// Both images must be live; `out_db` must be writable.
#[no_mangle]
pub unsafe extern "C" fn od_psnr(a: *const OdImage, b: *const OdImage, max_value: f64, out_db: *mut f64) -> OdStatus {
    guard(|| {
        let (a, b) = (deref(a, "a")?, deref(b, "b")?);
        *out_ptr(out_db, "out_db")? = psnr(&a.0, &b.0, max_value)?;
        Ok(())
    })
}

/// Haar defocus score `Q_B` and the diagonal-band spread `σ_D`. Either
/// output pointer may be null.
///
/// # Safety
/// `image` must be live; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn od_defocus_score(image: *const OdImage, out_score: *mut f64, out_sigma: *mut f64) -> OdStatus {
    guard(|| {
        let img = deref(image, "image")?;
        let (q, s) = defocus_score(&img.0)?;
        if let Some(o) = out_score.as_mut() {
            *o = q;
        }
        if let Some(o) = out_sigma.as_mut() {
            *o = s;
        }
        Ok(())
    })
}

/// Message for the last failed call on this thread, or null if it succeeded.
/// The string stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn od_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn od_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
