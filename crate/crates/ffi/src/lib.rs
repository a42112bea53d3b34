//! C ABI over `segcam`.
//!
//! Models live behind an opaque `SxModel` handle. Every fallible call
//! returns an [`SxStatus`]; on failure a message for the calling thread is
//! available from [`sx_last_error_message`]. Output buffers are supplied by
//! the caller together with their length in elements; a short buffer gives
//! `SX_STATUS_BUFFER_TOO_SMALL` and the required length is reported through
//! [`sx_model_output_len`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use segcam::cam::{explain, Method};
use segcam::eval::pixel_entropy_map;
use segcam::pixels::PixelSet;
use segcam::segnet::{Model, NetworkConfig};
use segcam::{Error, Tensor};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    NonFinite = 4,
    Io = 5,
    Format = 6,
    UnknownLayer = 7,
    UnknownMethod = 8,
    ClassOutOfRange = 9,
    EmptyRegion = 10,
    DegenerateBaseline = 11,
    NoConvergence = 12,
    NotADistribution = 13,
    BufferTooSmall = 14,
    Internal = 15,
}

/// Opaque model handle.
pub struct SxModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("nul bytes removed")));
}

fn status_of(e: &Error) -> SxStatus {
    match e {
        Error::Shape { .. } => SxStatus::Shape,
        Error::NonFinite { .. } => SxStatus::NonFinite,
        Error::InvalidArgument(_) | Error::ConfigMismatch(_) => SxStatus::InvalidArgument,
        Error::UnknownLayer(_) => SxStatus::UnknownLayer,
        Error::ClassOutOfRange { .. } => SxStatus::ClassOutOfRange,
        Error::DegenerateBaseline { .. } => SxStatus::DegenerateBaseline,
        Error::NoConvergence { .. } => SxStatus::NoConvergence,
        Error::EmptyRegion(_) => SxStatus::EmptyRegion,
        Error::NotADistribution { .. } => SxStatus::NotADistribution,
        Error::Format { .. } => SxStatus::Format,
        Error::Io { .. } => SxStatus::Io,
        _ => SxStatus::Internal,
    }
}

/// Failure carried out of a call body.
struct Fail(SxStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn fail(status: SxStatus, msg: impl Into<String>) -> Fail {
    Fail(status, msg.into())
}

/// Runs `body`, converting errors and panics into a status.
fn guard(body: impl FnOnce() -> Result<(), Fail>) -> SxStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SxStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SxStatus::Internal
        }
    }
}

unsafe fn model_ref<'a>(model: *const SxModel) -> Result<&'a Model, Fail> {
    model.as_ref().map(|m| &m.model).ok_or_else(|| fail(SxStatus::NullPointer, "model handle is null"))
}

unsafe fn str_arg<'a>(s: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if s.is_null() {
        return Err(fail(SxStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(s).to_str().map_err(|_| fail(SxStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn input_slice<'a, T>(data: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if data.is_null() {
        return Err(fail(SxStatus::NullPointer, format!("{what} is null")));
    }
    Ok(slice::from_raw_parts(data, len))
}

unsafe fn output_slice<'a, T>(data: *mut T, len: usize, needed: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if data.is_null() {
        return Err(fail(SxStatus::NullPointer, format!("{what} is null")));
    }
    if len < needed {
        return Err(fail(SxStatus::BufferTooSmall, format!("{what} holds {len} elements, {needed} needed")));
    }
    Ok(slice::from_raw_parts_mut(data, needed))
}

fn image_tensor(model: &Model, image: &[f64]) -> Result<Tensor, Fail> {
    let c = model.config();
    Ok(Tensor::new(vec![c.input_channels, c.height, c.width], image.to_vec())?)
}

fn store_handle(out: *mut *mut SxModel, model: Model) -> Result<(), Fail> {
    if out.is_null() {
        return Err(fail(SxStatus::NullPointer, "output handle pointer is null"));
    }
    // SAFETY: checked non-null; the caller owns the slot.
    unsafe { *out = Box::into_raw(Box::new(SxModel { model })) };
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the full message length
/// excluding the terminator, or 0 when there is no error.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sx_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Human-readable name of a status code; unknown codes give "unknown status".
#[no_mangle]
pub extern "C" fn sx_status_name(status: i32) -> *const c_char {
    let s: &'static str = match status {
        0 => "ok\0",
        1 => "null pointer\0",
        2 => "invalid argument\0",
        3 => "shape mismatch\0",
        4 => "non-finite value\0",
        5 => "i/o error\0",
        6 => "malformed file\0",
        7 => "unknown layer\0",
        8 => "unknown method\0",
        9 => "class out of range\0",
        10 => "empty region\0",
        11 => "degenerate baseline score\0",
        12 => "no convergence\0",
        13 => "not a probability distribution\0",
        14 => "buffer too small\0",
        15 => "internal error\0",
        _ => "unknown status\0",
    };
    s.as_ptr().cast()
}

/// Loads a weight file written by `segcam train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn sx_model_load(path: *const c_char, out: *mut *mut SxModel) -> SxStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        store_handle(out, Model::load(path)?)
    })
}

/// Builds an untrained default network (3 × height × width input, two
/// classes) with seeded weights.
///
/// # Safety
/// `out` must be a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn sx_model_new(height: usize, width: usize, seed: u64, out: *mut *mut SxModel) -> SxStatus {
    guard(|| store_handle(out, Model::build(NetworkConfig { height, width, seed, ..Default::default() })?))
}

/// Writes the model to a weight file.
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sx_model_save(model: *const SxModel, path: *const c_char) -> SxStatus {
    guard(|| {
        let model = model_ref(model)?;
        Ok(model.save(str_arg(path, "path")?)?)
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sx_model_free(model: *mut SxModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input shape and class count of the model.
///
/// # Safety
/// `model` must be a live handle; the out pointers writable.
#[no_mangle]
pub unsafe extern "C" fn sx_model_shape(
    model: *const SxModel,
    channels: *mut usize,
    height: *mut usize,
    width: *mut usize,
    num_classes: *mut usize,
) -> SxStatus {
    guard(|| {
        let c = model_ref(model)?.config();
        for (slot, v) in [(channels, c.input_channels), (height, c.height), (width, c.width), (num_classes, c.num_classes)] {
            if slot.is_null() {
                return Err(fail(SxStatus::NullPointer, "shape output pointer is null"));
            }
            *slot = v;
        }
        Ok(())
    })
}

/// Elements needed for the outputs of [`sx_model_segment`] (`probs`) and
/// [`sx_model_explain`] (`saliency`, also the mask length).
///
/// # Safety
/// `model` must be a live handle; the out pointers writable.
#[no_mangle]
pub unsafe extern "C" fn sx_model_output_len(model: *const SxModel, probs: *mut usize, saliency: *mut usize) -> SxStatus {
    guard(|| {
        let c = model_ref(model)?.config();
        if probs.is_null() || saliency.is_null() {
            return Err(fail(SxStatus::NullPointer, "length output pointer is null"));
        }
        *probs = c.num_classes * c.height * c.width;
        *saliency = c.height * c.width;
        Ok(())
    })
}

/// Segments one `C × H × W` channels-first image.
///
/// Writes `L × H × W` class probabilities into `probs` and, unless `mask`
/// is null, the per-pixel argmax class into `mask` (`H × W`).
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn sx_model_segment(
    model: *const SxModel,
    image: *const f64,
    image_len: usize,
    probs: *mut f64,
    probs_len: usize,
    mask: *mut u8,
    mask_len: usize,
) -> SxStatus {
    guard(|| {
        let model = model_ref(model)?;
        let image = image_tensor(model, input_slice(image, image_len, "image")?)?;
        let out = model.forward(&image)?;
        output_slice(probs, probs_len, out.probabilities.numel(), "probs")?.copy_from_slice(out.probabilities.data());
        if !mask.is_null() {
            let m = output_slice(mask, mask_len, out.predicted_mask.len(), "mask")?;
            for (dst, &c) in m.iter_mut().zip(&out.predicted_mask) {
                *dst = c as u8;
            }
        }
        Ok(())
    })
}

/// Computes one saliency map (`H × W`, values in `[0, 1]`).
///
/// `method` is a method id such as `seg-grad-cam`. `region` is an `H × W`
/// byte mask of the explained pixels; null selects the pixels predicted as
/// `class`. `layer` null selects the default layer.
///
/// # Safety
/// Strings must be NUL-terminated; pointers valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn sx_model_explain(
    model: *const SxModel,
    image: *const f64,
    image_len: usize,
    method: *const c_char,
    class: usize,
    region: *const u8,
    region_len: usize,
    layer: *const c_char,
    saliency: *mut f64,
    saliency_len: usize,
) -> SxStatus {
    guard(|| {
        let model = model_ref(model)?;
        let image = image_tensor(model, input_slice(image, image_len, "image")?)?;
        let method_id = str_arg(method, "method")?;
        let method: Method = method_id
            .parse()
            .map_err(|_| fail(SxStatus::UnknownMethod, format!("unknown method `{method_id}`")))?;
        let layer = if layer.is_null() { model.config().default_layer() } else { str_arg(layer, "layer")? };
        let (h, w) = (model.config().height, model.config().width);
        if class >= model.num_classes() {
            return Err(Error::ClassOutOfRange { class, num_classes: model.num_classes() }.into());
        }
        let region = if region.is_null() {
            model.forward(&image)?.predicted_pixels(class)
        } else {
            let bytes = input_slice(region, region_len, "region")?;
            if bytes.len() != h * w {
                return Err(fail(SxStatus::Shape, format!("region has {} bytes, expected {}", bytes.len(), h * w)));
            }
            PixelSet::from_bitmap(h, w, &bytes.iter().map(|&b| b != 0).collect::<Vec<_>>())?
        };
        let out = output_slice(saliency, saliency_len, h * w, "saliency")?;
        let (map, _) = explain(model, &image, method, class, &region, layer)?;
        out.copy_from_slice(map.values.data());
        Ok(())
    })
}

/// Normalised per-pixel entropy of `L × H × W` probabilities into `out`
/// (`H × W`).
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn sx_pixel_entropy(
    probs: *const f64,
    num_classes: usize,
    height: usize,
    width: usize,
    out: *mut f64,
    out_len: usize,
) -> SxStatus {
    guard(|| {
        let n = num_classes
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| fail(SxStatus::InvalidArgument, "shape overflows"))?;
        let p = Tensor::new(vec![num_classes, height, width], input_slice(probs, n, "probs")?.to_vec())?;
        let e = pixel_entropy_map(&p)?;
        output_slice(out, out_len, height * width, "out")?.copy_from_slice(e.values.data());
        Ok(())
    })
}
