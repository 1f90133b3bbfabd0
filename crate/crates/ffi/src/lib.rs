//! C ABI over the `repvit` crate.
//!
//! Models are exposed as opaque `RvModel` handles. Every function returns an
//! [`RvStatus`]; on failure a message is available from
//! [`rv_last_error_message`] on the same thread until the next call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use repvit::{analyze, build, weights_io, Error, Form, Init, Model, ModelConfig, Tensor};

/// Opaque model handle.
pub struct RvModel {
    inner: Model,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RvStatus {
    Ok = 0,
    /// Null pointer, non-UTF-8 string or undersized output buffer.
    InvalidArgument = 1,
    Config = 2,
    /// Operation not valid in the model's current form.
    State = 3,
    /// File system error, malformed file or checkpoint integrity failure.
    Io = 4,
    Shape = 5,
    Domain = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> RvStatus {
    match err {
        Error::Shape(_) => RvStatus::Shape,
        Error::Domain(_) => RvStatus::Domain,
        Error::State(_) => RvStatus::State,
        Error::Config { .. } => RvStatus::Config,
        Error::Format { .. } | Error::Integrity(_) | Error::Io(_) => RvStatus::Io,
    }
}

struct Fail(RvStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: &str) -> Fail {
    Fail(RvStatus::InvalidArgument, msg.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RvStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RvStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            RvStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(&format!("{what} is not valid UTF-8")))
}

unsafe fn model_ref<'a>(m: *const RvModel) -> Result<&'a Model, Fail> {
    m.as_ref()
        .map(|m| &m.inner)
        .ok_or_else(|| invalid("model is null"))
}

unsafe fn model_mut<'a>(m: *mut RvModel) -> Result<&'a mut Model, Fail> {
    m.as_mut()
        .map(|m| &mut m.inner)
        .ok_or_else(|| invalid("model is null"))
}

unsafe fn put_model(out: *mut *mut RvModel, model: Model) -> Result<(), Fail> {
    if out.is_null() {
        return Err(invalid("out is null"));
    }
    *out = Box::into_raw(Box::new(RvModel { inner: model }));
    Ok(())
}

/// Builds a train-form model from config JSON. `seed` selects seeded uniform
/// initialization.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rv_model_from_config_json(
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut RvModel,
) -> RvStatus {
    guard(|| {
        let cfg = ModelConfig::from_json(str_arg(config_json, "config_json")?)?;
        put_model(out, build(&cfg, Init::SeededUniform(seed))?)
    })
}

/// Loads a `.rvck` checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rv_model_load(path: *const c_char, out: *mut *mut RvModel) -> RvStatus {
    guard(|| put_model(out, weights_io::load(str_arg(path, "path")?)?))
}

/// Writes the model to a `.rvck` checkpoint.
///
/// # Safety
/// `model` must come from this library and `path` be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rv_model_save(model: *const RvModel, path: *const c_char) -> RvStatus {
    guard(|| Ok(weights_io::save(model_ref(model)?, str_arg(path, "path")?)?))
}

/// Converts a train-form model to fused form in place. Fusing twice is a
/// `State` error.
///
/// # Safety
/// `model` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn rv_model_fuse(model: *mut RvModel) -> RvStatus {
    guard(|| Ok(model_mut(model)?.set_form(true)?))
}

/// # Safety
/// `model` must come from this library and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn rv_model_is_fused(model: *const RvModel, out: *mut bool) -> RvStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        *out = m.form() == Form::Fused;
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn rv_model_num_classes(model: *const RvModel, out: *mut usize) -> RvStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        *out = m.num_classes();
        Ok(())
    })
}

/// Runs the model on an NCHW batch and writes `n * num_classes` logits.
///
/// # Safety
/// `input` must hold `n*c*h*w` floats and `out` must have room for
/// `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn rv_model_forward(
    model: *const RvModel,
    input: *const f32,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    out: *mut f32,
    out_len: usize,
) -> RvStatus {
    guard(|| {
        let m = model_ref(model)?;
        let len = n
            .checked_mul(c)
            .and_then(|v| v.checked_mul(h))
            .and_then(|v| v.checked_mul(w))
            .ok_or_else(|| invalid("input dims overflow"))?;
        if input.is_null() && len > 0 {
            return Err(invalid("input is null"));
        }
        let data = if len == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(input, len).to_vec()
        };
        let logits = m.forward(&Tensor::new([n, c, h, w], data)?)?;
        let need = logits.data().len();
        if out_len < need {
            return Err(invalid(&format!(
                "out_len {out_len} is smaller than {need} logits"
            )));
        }
        if need > 0 {
            if out.is_null() {
                return Err(invalid("out is null"));
            }
            ptr::copy_nonoverlapping(logits.data().as_ptr(), out, need);
        }
        Ok(())
    })
}

/// Computes parameter and multiply-accumulate totals for a config at a
/// square input resolution.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out_params` and
/// `out_macs` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rv_analyze_config_json(
    config_json: *const c_char,
    resolution: usize,
    fused: bool,
    out_params: *mut u64,
    out_macs: *mut u64,
) -> RvStatus {
    guard(|| {
        let cfg = ModelConfig::from_json(str_arg(config_json, "config_json")?)?;
        if out_params.is_null() || out_macs.is_null() {
            return Err(invalid("output pointer is null"));
        }
        let form = if fused { Form::Fused } else { Form::Train };
        let r = analyze(&cfg, resolution, form)?;
        *out_params = r.total_params;
        *out_macs = r.total_macs;
        Ok(())
    })
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn rv_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rv_model_free(model: *mut RvModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
