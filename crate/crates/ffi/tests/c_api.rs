//! End-to-end use of the C ABI through its Rust declarations, plus a C
//! compile check of the generated header.

use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use lowlight::image::RgbImage;
use lowlight::net::{Checkpoint, NetParams, NetSpec};
use lowlight::raw::{synthesize_pair, write_llrw_file, Cfa, NoiseParams};
use lowlight::train::AdamState;
use lowlight_ffi::*;

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(ll_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn restore_enhance_and_score_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let clean = RgbImage::from_fn(16, 24, |y, x| [0.1 + 0.02 * y as f64, 0.3, 0.1 + 0.02 * x as f64]);
    let (raw, target) = synthesize_pair(&clean, Cfa::RGGB, 10.0, &NoiseParams::NONE, 0).unwrap();
    let raw_path = dir.path().join("frame.llrw");
    write_llrw_file(&raw_path, &raw).unwrap();
    let target_path = dir.path().join("target.png");
    lowlight::image::write_image(&target_path, &target, true).unwrap();
    let params = NetParams::build(NetSpec { depth: 2, base_width: 4, ..NetSpec::desk(&Cfa::RGGB) }, 1).unwrap();
    let ck = Checkpoint { adam: AdamState::for_net(&params), params, epoch: 0, seed: 1, manifest_hash: [0; 32] };
    let ck_path = dir.path().join("model.llck");
    ck.save(&ck_path).unwrap();

    unsafe {
        let (mut model, mut frame, mut pred, mut truth, mut bright) =
            (ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(ll_model_load(cstr(&ck_path).as_ptr(), &mut model), LlStatus::Ok, "{}", last_error());
        assert_eq!(ll_raw_load(cstr(&raw_path).as_ptr(), &mut frame), LlStatus::Ok, "{}", last_error());
        let mut exposure = 0.0;
        assert_eq!(ll_raw_exposure(frame, &mut exposure), LlStatus::Ok);
        assert_eq!(exposure, raw.exposure_s());

        assert_eq!(ll_restore(model, frame, 10.0, &mut pred), LlStatus::Ok, "{}", last_error());
        let (mut h, mut w) = (0, 0);
        assert_eq!(ll_image_size(pred, &mut h, &mut w), LlStatus::Ok);
        assert_eq!((h, w), (16, 24));
        let expected = lowlight::net::restore_frame(&ck.params, &raw, 10.0).unwrap();

        assert_eq!(ll_image_load(cstr(&target_path).as_ptr(), &mut truth), LlStatus::Ok);
        let mut db = 0.0;
        assert_eq!(ll_psnr(pred, truth, &mut db), LlStatus::Ok);
        assert_eq!(db, lowlight::loss::psnr(&expected, &lowlight::image::read_image(&target_path).unwrap()).unwrap());

        let mut before = 0.0;
        let mut after = 0.0;
        assert_eq!(ll_enhance(truth, 0.95, &mut bright), LlStatus::Ok);
        ll_image_mean_lightness(truth, &mut before);
        ll_image_mean_lightness(bright, &mut after);
        assert!(after > before, "{before} -> {after}");

        let out = dir.path().join("pred.png");
        assert_eq!(ll_image_save(pred, cstr(&out).as_ptr(), false), LlStatus::Ok);
        assert_eq!(lowlight::image::read_image(&out).unwrap().height(), 16);

        ll_image_free(bright);
        ll_image_free(truth);
        ll_image_free(pred);
        ll_raw_free(frame);
        ll_model_free(model);
    }
}

#[test]
fn errors_map_to_status_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("bogus.llck");
    std::fs::write(&bogus, b"not a checkpoint").unwrap();
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(ll_model_load(cstr(&bogus).as_ptr(), &mut model), LlStatus::Format);
        assert!(model.is_null());
        assert!(!last_error().is_empty());

        let a = RgbImage::from_fn(4, 4, |_, _| [0.2; 3]);
        let b = RgbImage::from_fn(4, 5, |_, _| [0.2; 3]);
        let (pa, pb) = (dir.path().join("a.png"), dir.path().join("b.png"));
        lowlight::image::write_image(&pa, &a, false).unwrap();
        lowlight::image::write_image(&pb, &b, false).unwrap();
        let (mut ha, mut hb) = (ptr::null_mut(), ptr::null_mut());
        ll_image_load(cstr(&pa).as_ptr(), &mut ha);
        ll_image_load(cstr(&pb).as_ptr(), &mut hb);
        let mut db = 0.0;
        assert_eq!(ll_psnr(ha, hb, &mut db), LlStatus::InvalidShape, "{}", last_error());
        assert_eq!(ll_enhance(ha, 2.0, &mut ptr::null_mut()), LlStatus::InvalidArgument);
        assert_eq!(ll_psnr(ha, ptr::null(), &mut db), LlStatus::NullPointer);
        ll_image_free(ha);
        ll_image_free(hb);
        ll_image_free(ptr::null_mut());
    }
    let v = unsafe { CStr::from_ptr(ll_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn generated_header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"lowlight.h\"\nint main(void) {\n  LlModel *m = 0;\n  LlStatus s = ll_model_load(\"x\", &m);\n  return s == LL_STATUS_OK ? 0 : 1;\n}\n",
    )
    .unwrap();
    let status = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&header)
        .arg(&src)
        .status()
        .expect("a C compiler (cc) is required for this test");
    assert!(status.success());
}
