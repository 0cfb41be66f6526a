//! C ABI for loading a trained checkpoint, restoring RAW frames, enhancing
//! contrast and scoring images.
//!
//! Every fallible function returns an [`LlStatus`]. On failure the message is
//! available from [`ll_last_error`] on the same thread until the next call.
//! Handles are opaque; each `*_load`/producer call hands ownership to the
//! caller, who releases it with the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use lowlight::contrast::{enhance_contrast, DehazeParams};
use lowlight::image::{read_image, write_image, RgbImage};
use lowlight::loss::psnr;
use lowlight::net::{restore_frame, Checkpoint, NetParams};
use lowlight::raw::{read_llrw_file, RawFrame};
use lowlight::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LlStatus {
    Ok = 0,
    InvalidArgument = 1,
    InvalidShape = 2,
    UnsupportedCfa = 3,
    Format = 4,
    Io = 5,
    State = 6,
    NullPointer = 7,
    Panic = 8,
}

/// Trained restoration network.
pub struct LlModel(NetParams);

/// Mosaicked sensor frame.
pub struct LlRaw(RawFrame);

/// Linear RGB image in [0, 1].
pub struct LlImage(RgbImage);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> LlStatus {
    match err {
        Error::InvalidArgument(_) => LlStatus::InvalidArgument,
        Error::InvalidShape(_) => LlStatus::InvalidShape,
        Error::UnsupportedCfa(_) => LlStatus::UnsupportedCfa,
        Error::Format { .. } => LlStatus::Format,
        Error::Io(_) => LlStatus::Io,
        Error::State(_) => LlStatus::State,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Runs `f`, translating errors and panics into a status and a message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LlStatus {
    set_error(String::new());
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LlStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            LlStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            LlStatus::Panic
        }
    }
}

/// # Safety
/// `p` is null or points to a live `T`.
unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    unsafe { p.as_ref() }.ok_or(Failure::Null(what))
}

/// # Safety
/// `p` is null or a NUL-terminated string.
unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null("path"));
    }
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure::Lib(Error::InvalidArgument("path is not UTF-8".into())))?;
    Ok(PathBuf::from(s))
}

/// # Safety
/// `out` is null or writable.
unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// # Safety
/// `p` is null or was produced by this library and not yet freed.
unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(unsafe { Box::from_raw(p) });
    }
}

/// Message of the last failed call on this thread; empty after success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn ll_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ll_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads the network weights from a checkpoint file.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ll_model_load(path: *const c_char, out: *mut *mut LlModel) -> LlStatus {
    guard(|| {
        let path = unsafe { path_arg(path) }?;
        let ck = Checkpoint::load(&path)?;
        unsafe { put(out, LlModel(ck.params)) }
    })
}

/// # Safety
/// `model` is null or came from [`ll_model_load`] and was not freed.
#[no_mangle]
pub unsafe extern "C" fn ll_model_free(model: *mut LlModel) {
    unsafe { free(model) }
}

/// Reads an LLRW raw frame.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ll_raw_load(path: *const c_char, out: *mut *mut LlRaw) -> LlStatus {
    guard(|| {
        let path = unsafe { path_arg(path) }?;
        let raw = read_llrw_file(&path)?;
        unsafe { put(out, LlRaw(raw)) }
    })
}

/// Writes the frame's exposure time in seconds to `seconds`.
///
/// # Safety
/// `raw` is a live handle; `seconds` is writable.
#[no_mangle]
pub unsafe extern "C" fn ll_raw_exposure(raw: *const LlRaw, seconds: *mut f64) -> LlStatus {
    guard(|| {
        let raw = unsafe { deref(raw, "raw") }?;
        if seconds.is_null() {
            return Err(Failure::Null("seconds"));
        }
        unsafe { *seconds = raw.0.exposure_s() };
        Ok(())
    })
}

/// # Safety
/// `raw` is null or came from [`ll_raw_load`] and was not freed.
#[no_mangle]
pub unsafe extern "C" fn ll_raw_free(raw: *mut LlRaw) {
    unsafe { free(raw) }
}

/// Restores a raw frame at the given amplification into an sRGB image.
///
/// # Safety
/// `model` and `raw` are live handles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ll_restore(
    model: *const LlModel,
    raw: *const LlRaw,
    amplification: f64,
    out: *mut *mut LlImage,
) -> LlStatus {
    guard(|| {
        let model = unsafe { deref(model, "model") }?;
        let raw = unsafe { deref(raw, "raw") }?;
        let img = restore_frame(&model.0, &raw.0, amplification)?;
        unsafe { put(out, LlImage(img)) }
    })
}

/// Reads a PNG or PPM image.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ll_image_load(path: *const c_char, out: *mut *mut LlImage) -> LlStatus {
    guard(|| {
        let path = unsafe { path_arg(path) }?;
        let img = read_image(&path)?;
        unsafe { put(out, LlImage(img)) }
    })
}

/// Writes an image; the format follows the file extension.
///
/// # Safety
/// `image` is a live handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ll_image_save(image: *const LlImage, path: *const c_char, sixteen_bit: bool) -> LlStatus {
    guard(|| {
        let image = unsafe { deref(image, "image") }?;
        let path = unsafe { path_arg(path) }?;
        write_image(&path, &image.0, sixteen_bit)?;
        Ok(())
    })
}

/// Writes the image extents.
///
/// # Safety
/// `image` is a live handle; `height` and `width` are writable.
#[no_mangle]
pub unsafe extern "C" fn ll_image_size(image: *const LlImage, height: *mut usize, width: *mut usize) -> LlStatus {
    guard(|| {
        let image = unsafe { deref(image, "image") }?;
        if height.is_null() || width.is_null() {
            return Err(Failure::Null("height/width"));
        }
        unsafe {
            *height = image.0.height();
            *width = image.0.width();
        }
        Ok(())
    })
}

/// Writes the mean lightness in [0, 1].
///
/// # Safety
/// `image` is a live handle; `lightness` is writable.
#[no_mangle]
pub unsafe extern "C" fn ll_image_mean_lightness(image: *const LlImage, lightness: *mut f64) -> LlStatus {
    guard(|| {
        let image = unsafe { deref(image, "image") }?;
        if lightness.is_null() {
            return Err(Failure::Null("lightness"));
        }
        unsafe { *lightness = image.0.mean_lightness() };
        Ok(())
    })
}

/// # Safety
/// `image` is null or came from this library and was not freed.
#[no_mangle]
pub unsafe extern "C" fn ll_image_free(image: *mut LlImage) {
    unsafe { free(image) }
}

/// Contrast enhancement with the default dehazing parameters and the given
/// haze-removal strength `omega` in [0, 1].
///
/// # Safety
/// `image` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ll_enhance(image: *const LlImage, omega: f64, out: *mut *mut LlImage) -> LlStatus {
    guard(|| {
        let image = unsafe { deref(image, "image") }?;
        let params = DehazeParams { omega, ..DehazeParams::default() };
        let img = enhance_contrast(&image.0, &params)?;
        unsafe { put(out, LlImage(img)) }
    })
}

/// Writes PSNR in dB between two images of equal size.
///
/// # Safety
/// `pred` and `target` are live handles; `db` is writable.
#[no_mangle]
pub unsafe extern "C" fn ll_psnr(pred: *const LlImage, target: *const LlImage, db: *mut f64) -> LlStatus {
    guard(|| {
        let pred = unsafe { deref(pred, "pred") }?;
        let target = unsafe { deref(target, "target") }?;
        if db.is_null() {
            return Err(Failure::Null("db"));
        }
        let value = psnr(&pred.0, &target.0)?;
        unsafe { *db = value };
        Ok(())
    })
}
