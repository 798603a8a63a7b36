//! C ABI over sirenlab.
//!
//! Every fallible call returns a status code and writes its result through an
//! out pointer. On failure `sirenlab_last_error` holds a message for the
//! calling thread. Handles are opaque and must be released with the matching
//! `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use sirenlab::codec::{DctCodec, RateDistortion};
use sirenlab::imaging::{center_crop_resize, load_image, synth, ImageTensor};
use sirenlab::predictors::{PsnrPredictor, Query, SavedModel};
use sirenlab::siren::{train, SirenConfig, TrainRecord};
use sirenlab::Error;

pub const SIRENLAB_OK: i32 = 0;
pub const SIRENLAB_ERR_NULL: i32 = 1;
pub const SIRENLAB_ERR_ARGUMENT: i32 = 2;
pub const SIRENLAB_ERR_IO: i32 = 3;
pub const SIRENLAB_ERR_FORMAT: i32 = 4;
pub const SIRENLAB_ERR_TRAINING: i32 = 5;
pub const SIRENLAB_ERR_DOMAIN: i32 = 6;
pub const SIRENLAB_ERR_PANIC: i32 = 7;

pub struct SirenlabImage(ImageTensor);
pub struct SirenlabConfig(SirenConfig);
pub struct SirenlabRecord(TrainRecord);
pub struct SirenlabModel(SavedModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn code_of(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Argument(_) | Error::Dimension(_) | Error::Range(_) => SIRENLAB_ERR_ARGUMENT,
        Error::Io { .. } => SIRENLAB_ERR_IO,
        Error::Decode { .. } | Error::Format(_) | Error::Json(_) | Error::Csv(_) => SIRENLAB_ERR_FORMAT,
        Error::Numeric { .. } | Error::Training(_) => SIRENLAB_ERR_TRAINING,
        _ => SIRENLAB_ERR_DOMAIN,
    }
}

struct Fail(i32, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(code_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SIRENLAB_ERR_NULL, format!("{what} is null"))
}

/// Runs `f`, turning errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SIRENLAB_OK,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            SIRENLAB_ERR_PANIC
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn write<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = value;
    Ok(())
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| Fail(SIRENLAB_ERR_ARGUMENT, "path is not UTF-8".into()))
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn sirenlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sirenlab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a PNG or PPM file. A nonzero `size` center-crops and resizes to a
/// `size` x `size` square.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sirenlab_image_load(path: *const c_char, size: usize, out: *mut *mut SirenlabImage) -> i32 {
    guard(|| {
        let img = load_image(path_arg(path)?)?;
        let img = if size > 0 { center_crop_resize(&img, size) } else { img };
        put(out, SirenlabImage(img))
    })
}

/// Synthetic dead-leaves test image.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sirenlab_image_synthetic(size: usize, seed: u64, out: *mut *mut SirenlabImage) -> i32 {
    guard(|| {
        if size == 0 {
            return Err(Fail(SIRENLAB_ERR_ARGUMENT, "size must be >= 1".into()));
        }
        put(out, SirenlabImage(synth::dead_leaves(size, seed)))
    })
}

/// Image from interleaved 8-bit RGB rows (`height * width * 3` bytes).
///
/// # Safety
/// `data` must point to `height * width * 3` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn sirenlab_image_from_rgb8(
    data: *const u8,
    height: usize,
    width: usize,
    out: *mut *mut SirenlabImage,
) -> i32 {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let len = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(3))
            .ok_or_else(|| Fail(SIRENLAB_ERR_ARGUMENT, "image too large".into()))?;
        let bytes = std::slice::from_raw_parts(data, len);
        put(out, SirenlabImage(ImageTensor::from_rgb8(height, width, bytes)?))
    })
}

/// # Safety
/// `img` must be a live image handle; `height` and `width` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sirenlab_image_dims(img: *const SirenlabImage, height: *mut usize, width: *mut usize) -> i32 {
    guard(|| {
        let img = &deref(img, "img")?.0;
        write(height, img.height)?;
        write(width, img.width)
    })
}

/// # Safety
/// `img` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sirenlab_image_free(img: *mut SirenlabImage) {
    free(img)
}

/// Training job with `omega0 = gamma * image_size` and default steps and
/// learning rate.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sirenlab_config_new(
    width: usize,
    depth: usize,
    gamma: f64,
    image_size: usize,
    seed: u64,
    out: *mut *mut SirenlabConfig,
) -> i32 {
    guard(|| {
        let cfg = SirenConfig::new(width, depth, gamma, image_size, seed);
        cfg.validate()?;
        put(out, SirenlabConfig(cfg))
    })
}

/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn sirenlab_config_set_steps(cfg: *mut SirenlabConfig, steps: usize) -> i32 {
    guard(|| {
        let c = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        c.0.steps = steps;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn sirenlab_config_set_learning_rate(cfg: *mut SirenlabConfig, lr: f64) -> i32 {
    guard(|| {
        let c = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        let next = c.0.clone().with_learning_rate(lr);
        next.validate()?;
        c.0 = next;
        Ok(())
    })
}

/// Parameter count and bits per pixel of the encoding.
///
/// # Safety
/// `cfg` must be a live config handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn sirenlab_config_size(cfg: *const SirenlabConfig, params: *mut usize, bpp: *mut f64) -> i32 {
    guard(|| {
        let c = &deref(cfg, "cfg")?.0;
        write(params, c.param_count())?;
        write(bpp, c.bpp())
    })
}

/// # Safety
/// `cfg` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sirenlab_config_free(cfg: *mut SirenlabConfig) {
    free(cfg)
}

/// Trains one SIREN on `img`. A run that diverges still yields a record.
///
/// # Safety
/// `cfg` and `img` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sirenlab_train(
    cfg: *const SirenlabConfig,
    img: *const SirenlabImage,
    out: *mut *mut SirenlabRecord,
) -> i32 {
    guard(|| {
        let outcome = train(&deref(cfg, "cfg")?.0, &deref(img, "img")?.0)?;
        put(out, SirenlabRecord(outcome.record))
    })
}

/// Best PSNR (dB) and the step it was reached at.
///
/// # Safety
/// `rec` must be a live record handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn sirenlab_record_best(rec: *const SirenlabRecord, psnr: *mut f64, step: *mut usize) -> i32 {
    guard(|| {
        let r = &deref(rec, "rec")?.0;
        write(psnr, r.max_psnr)?;
        write(step, r.argmax_step)
    })
}

/// Number of points on the PSNR curve; 0 for a NULL handle.
///
/// # Safety
/// `rec` must be NULL or a live record handle.
#[no_mangle]
pub unsafe extern "C" fn sirenlab_record_curve_len(rec: *const SirenlabRecord) -> usize {
    rec.as_ref().map_or(0, |r| r.0.loss_curve.len())
}

/// # Safety
/// `rec` must be a live record handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn sirenlab_record_curve_point(
    rec: *const SirenlabRecord,
    index: usize,
    step: *mut usize,
    psnr: *mut f64,
) -> i32 {
    guard(|| {
        let r = &deref(rec, "rec")?.0;
        let p = r
            .loss_curve
            .get(index)
            .ok_or_else(|| Fail(SIRENLAB_ERR_ARGUMENT, format!("index {index} past curve end {}", r.loss_curve.len())))?;
        write(step, p.step)?;
        write(psnr, p.psnr)
    })
}

/// Best PSNR seen up to and including `step`.
///
/// # Safety
/// `rec` must be a live record handle; `psnr` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sirenlab_record_psnr_until(rec: *const SirenlabRecord, step: usize, psnr: *mut f64) -> i32 {
    guard(|| {
        let r = &deref(rec, "rec")?.0;
        let v = r
            .max_psnr_until(step)
            .ok_or_else(|| Fail(SIRENLAB_ERR_ARGUMENT, format!("no curve point at or before step {step}")))?;
        write(psnr, v)
    })
}

/// # Safety
/// `rec` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sirenlab_record_free(rec: *mut SirenlabRecord) {
    free(rec)
}

/// PSNR of the DCT codec at compression `ratio` (24 bits per pixel / bpp).
///
/// # Safety
/// `img` must be a live image handle; `psnr` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sirenlab_codec_psnr(img: *const SirenlabImage, ratio: f64, psnr: *mut f64) -> i32 {
    guard(|| {
        let v = DctCodec::default().psnr_at_ratio(&deref(img, "img")?.0, ratio)?;
        write(psnr, v)
    })
}

/// Loads a model file written by one of the `fit-*` commands.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sirenlab_model_load(path: *const c_char, out: *mut *mut SirenlabModel) -> i32 {
    guard(|| put(out, SirenlabModel(SavedModel::load(path_arg(path)?)?)))
}

/// Kind of the model ("extrapolate", "proxy", "gp" or "mlp"), a static
/// string; NULL for a NULL handle.
///
/// # Safety
/// `model` must be NULL or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn sirenlab_model_kind(model: *const SirenlabModel) -> *const c_char {
    match model.as_ref().map(|m| m.0.kind_name()) {
        Some("extrapolate") => c"extrapolate".as_ptr(),
        Some("proxy") => c"proxy".as_ptr(),
        Some("gp") => c"gp".as_ptr(),
        Some("mlp") => c"mlp".as_ptr(),
        _ => ptr::null(),
    }
}

/// Predicted PSNR for a job. `cfg` and `img` may be NULL when the model does
/// not need them; `early_psnr` is NaN unless the model extrapolates from an
/// early step.
///
/// # Safety
/// `model` must be a live handle, `cfg` and `img` live or NULL, and `psnr`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sirenlab_model_predict(
    model: *const SirenlabModel,
    cfg: *const SirenlabConfig,
    img: *const SirenlabImage,
    early_psnr: f64,
    psnr: *mut f64,
) -> i32 {
    guard(|| {
        let m = &deref(model, "model")?.0;
        let q = Query {
            config: cfg.as_ref().map(|c| &c.0),
            image: img.as_ref().map(|i| &i.0),
            image_features: None,
            early_psnr: (!early_psnr.is_nan()).then_some(early_psnr),
        };
        write(psnr, m.predict(&q)?)
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sirenlab_model_free(model: *mut SirenlabModel) {
    free(model)
}
