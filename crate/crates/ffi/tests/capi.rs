use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use omnideblur::synth::{make_kernel, structured_image, synthesize, KernelSpec, NoiseSpec};
use omnideblur_ffi::*;

fn handle(w: usize, h: usize, data: &[f64]) -> *mut OdImage {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { od_image_new(w, h, data.as_ptr(), &mut out) }, OdStatus::Ok);
    out
}

fn last_error() -> String {
    let p = od_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn small_config() -> OdConfig {
    let mut c = std::mem::MaybeUninit::<OdConfig>::uninit();
    assert_eq!(unsafe { od_config_tuned(c.as_mut_ptr()) }, OdStatus::Ok);
    let mut c = unsafe { c.assume_init() };
    c.kernel_size = 7;
    c.fista_iters = 10;
    c.irls_outer = 3;
    c.em_iters = 2;
    c.seed = 3;
    c
}

#[test]
fn image_handles_expose_their_samples() {
    let data: Vec<f64> = (0..12).map(|i| i as f64 / 12.0).collect();
    let img = handle(4, 3, &data);
    unsafe {
        assert_eq!((od_image_width(img), od_image_height(img)), (4, 3));
        assert_eq!(std::slice::from_raw_parts(od_image_data(img), 12), &data[..]);
        od_image_free(img);
        od_image_free(ptr::null_mut());
        assert_eq!(od_image_width(ptr::null()), 0);
        assert!(od_image_data(ptr::null()).is_null());
    }
}

#[test]
fn null_and_invalid_arguments_report_status_and_message() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { od_image_new(2, 2, ptr::null(), &mut out) }, OdStatus::NullArgument);
    assert!(last_error().contains("data"));
    let data = [0.0; 3];
    assert_eq!(unsafe { od_image_new(0, 3, data.as_ptr(), &mut out) }, OdStatus::Dimension);
    let w = [0.5, 0.5];
    let mut k = ptr::null_mut();
    assert_ne!(unsafe { od_kernel_new(2, w.as_ptr(), &mut k) }, OdStatus::Ok);
    assert!(k.is_null());

    let mut c = small_config();
    c.n_thetas = 0;
    let img = handle(2, 2, &[0.0; 4]);
    assert_eq!(unsafe { od_estimate_kernel(img, &c, &mut k) }, OdStatus::InvalidConfig);
    assert!(last_error().contains("n_thetas"));
    c = small_config();
    c.kernel_size = 8;
    assert_eq!(unsafe { od_estimate_kernel(img, &c, &mut k) }, OdStatus::InvalidConfig);
    let mut q = 0.0;
    assert_eq!(unsafe { od_defocus_score(img, &mut q, ptr::null_mut()) }, OdStatus::Ok);
    assert!(od_last_error_message().is_null());
    unsafe { od_image_free(img) };
}

#[test]
fn config_presets_carry_the_solver_fields() {
    let mut d = std::mem::MaybeUninit::<OdConfig>::uninit();
    assert_eq!(unsafe { od_config_default(d.as_mut_ptr()) }, OdStatus::Ok);
    let d = unsafe { d.assume_init() };
    assert_eq!(d.n_thetas, 4);
    assert_eq!(&d.thetas[..4], &[0.0, 45.0, 90.0, 135.0]);
    assert_eq!(d.kernel_size % 2, 1);
    let t = small_config();
    assert!(t.normalize);
    assert_eq!(t.nonblind, OdNonblind::Sparse);
    assert_eq!(unsafe { od_config_default(ptr::null_mut()) }, OdStatus::NullArgument);
}

#[test]
fn metrics_match_hand_values() {
    let a = handle(4, 4, &[0.0; 16]);
    let b = handle(4, 4, &[1.0; 16]);
    let c = handle(2, 2, &[0.0; 4]);
    let mut db = 0.0;
    unsafe {
        assert_eq!(od_psnr(a, b, 255.0, &mut db), OdStatus::Ok);
        assert!((db - 48.1308).abs() < 1e-3);
        assert_eq!(od_psnr(a, a, 1.0, &mut db), OdStatus::Ok);
        assert_eq!(db, f64::INFINITY);
        assert_eq!(od_psnr(a, c, 1.0, &mut db), OdStatus::Dimension);
        let (mut q, mut s) = (0.0, -1.0);
        assert_eq!(od_defocus_score(b, &mut q, &mut s), OdStatus::Ok);
        assert_eq!((q, s), (1.0, 0.0));
        for h in [a, b, c] {
            od_image_free(h);
        }
    }
}

#[test]
fn deblur_returns_a_kernel_on_the_simplex_and_is_deterministic() {
    let x = structured_image(48, 48, 5).unwrap();
    let k = make_kernel(&KernelSpec::Gaussian { side: 7, sigma: 1.2 }).unwrap();
    let y = synthesize(&x, &k, &NoiseSpec::none()).unwrap();
    let img = handle(48, 48, y.data());
    let c = small_config();
    let run = || {
        let (mut out, mut ker) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(unsafe { od_deblur(img, &c, &mut out, &mut ker) }, OdStatus::Ok);
        unsafe {
            let side = od_kernel_side(ker);
            let w = std::slice::from_raw_parts(od_kernel_weights(ker), side * side).to_vec();
            let data = std::slice::from_raw_parts(od_image_data(out), 48 * 48).to_vec();
            od_image_free(out);
            od_kernel_free(ker);
            (side, w, data)
        }
    };
    let (side, w, data) = run();
    assert_eq!(side, 7);
    assert!(w.iter().all(|&v| v >= 0.0));
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(data.iter().all(|v| v.is_finite()));
    assert_eq!(run(), (side, w, data));
    unsafe { od_image_free(img) };
}

#[test]
fn deconvolve_with_the_true_kernel_improves_psnr() {
    let x = structured_image(40, 40, 9).unwrap();
    let kt = make_kernel(&KernelSpec::Gaussian { side: 5, sigma: 1.0 }).unwrap();
    let y = synthesize(&x, &kt, &NoiseSpec::none()).unwrap();
    let (sharp, blurred) = (handle(40, 40, x.data()), handle(40, 40, y.data()));
    let mut k = ptr::null_mut();
    let mut out = ptr::null_mut();
    let c = small_config();
    unsafe {
        assert_eq!(od_kernel_new(5, kt.weights().as_ptr(), &mut k), OdStatus::Ok);
        assert_eq!(od_deconvolve(blurred, k, &c, &mut out), OdStatus::Ok);
        let (mut before, mut after) = (0.0, 0.0);
        od_psnr(blurred, sharp, 1.0, &mut before);
        od_psnr(out, sharp, 1.0, &mut after);
        assert!(after > before, "{after} <= {before}");
        for h in [sharp, blurred, out] {
            od_image_free(h);
        }
        od_kernel_free(k);
    }
}

#[test]
fn files_round_trip_through_paths() {
    let dir = tempfile::tempdir().unwrap();
    let data: Vec<f64> = (0..64).map(|i| (i % 8) as f64 / 7.0).collect();
    let img = handle(8, 8, &data);
    let png = CString::new(dir.path().join("a.png").to_str().unwrap()).unwrap();
    let ktxt = CString::new(dir.path().join("k.txt").to_str().unwrap()).unwrap();
    let missing = CString::new(dir.path().join("none.png").to_str().unwrap()).unwrap();
    let w = [0.0, 0.25, 0.0, 0.25, 0.0, 0.25, 0.0, 0.25, 0.0];
    unsafe {
        assert_eq!(od_image_save(img, png.as_ptr()), OdStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(od_image_load(png.as_ptr(), &mut back), OdStatus::Ok);
        let got = std::slice::from_raw_parts(od_image_data(back), 64);
        assert!(got.iter().zip(&data).all(|(a, b)| (a - b).abs() < 1.0 / 255.0));
        assert_eq!(od_image_load(missing.as_ptr(), &mut back), OdStatus::Io);

        let mut k = ptr::null_mut();
        assert_eq!(od_kernel_new(3, w.as_ptr(), &mut k), OdStatus::Ok);
        assert_eq!(od_kernel_save(k, ktxt.as_ptr()), OdStatus::Ok);
        let mut k2 = ptr::null_mut();
        assert_eq!(od_kernel_load(ktxt.as_ptr(), &mut k2), OdStatus::Ok);
        assert_eq!(std::slice::from_raw_parts(od_kernel_weights(k2), 9), &w);
        od_kernel_free(k);
        od_kernel_free(k2);
        od_image_free(img);
        od_image_free(back);
    }
}

#[test]
fn version_matches_the_package() {
    let v = unsafe { CStr::from_ptr(od_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"omnideblur.h\"\n\
         int main(void) {\n\
           OdConfig c; OdImage *img = 0; OdKernel *k = 0;\n\
           if (od_config_tuned(&c) != OD_STATUS_OK) return 1;\n\
           c.nonblind = OD_NONBLIND_TIKHONOV;\n\
           (void)od_deblur(img, &c, &img, &k);\n\
           return c.n_thetas <= OD_MAX_THETAS ? 0 : 1;\n\
         }\n",
    )
    .unwrap();
    let mut ran = false;
    for (cc, lang) in [("cc", "c"), ("c++", "c++")] {
        let Ok(out) = Command::new(cc)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, "-I"])
            .arg(&header)
            .arg(&src)
            .output()
        else {
            continue;
        };
        ran = true;
        assert!(out.status.success(), "{cc}: {}", String::from_utf8_lossy(&out.stderr));
    }
    if !ran {
        eprintln!("no C compiler found; header check skipped");
    }
}

#[test]
fn c_program_links_and_runs_against_the_static_library() {
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().and_then(Path::parent).unwrap();
    let lib = lib_dir.join("libomnideblur_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("static library or C compiler unavailable; link check skipped");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    let bin = dir.path().join("smoke");
    std::fs::write(
        &src,
        r#"#include <math.h>
#include <stdio.h>
#include "omnideblur.h"
int main(void) {
  double px[64], one[64];
  for (int i = 0; i < 64; i++) { px[i] = (i % 8) / 7.0; one[i] = px[i] + 0.1; }
  OdImage *a = NULL, *b = NULL;
  if (od_image_new(8, 8, px, &a) != OD_STATUS_OK) return 2;
  if (od_image_new(8, 8, one, &b) != OD_STATUS_OK) return 3;
  double db = 0.0;
  if (od_psnr(a, b, 1.0, &db) != OD_STATUS_OK || fabs(db - 20.0) > 1e-9) return 4;
  if (od_image_new(0, 8, px, &a) != OD_STATUS_DIMENSION) return 5;
  if (od_last_error_message() == NULL) return 6;
  printf("%s %.3f\n", od_version(), db);
  od_image_free(a);
  od_image_free(b);
  return 0;
}
"#,
    )
    .unwrap();
    let out = Command::new("cc")
        .arg("-I")
        .arg(Path::new(env!("CARGO_MANIFEST_DIR")).join("include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "link: {}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    let text = String::from_utf8(run.stdout).unwrap();
    assert_eq!(text.trim(), format!("{} 20.000", env!("CARGO_PKG_VERSION")));
}
