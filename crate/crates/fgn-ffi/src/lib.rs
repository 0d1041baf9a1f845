//! C ABI over the core library: opaque model handles, status codes, and
//! flat-buffer prediction and attack entry points. The header is generated
//! into `include/fgn.h` at build time.

use std::ffi::CStr;
use std::os::raw::c_char;
use std::path::Path;
use std::ptr;

use fgn_core::attacks::fgsm;
use fgn_core::error::Error;
use fgn_core::eval::confidence;
use fgn_core::layers::Network;
use fgn_core::model_io::{load_model, save_model};

/// Opaque handle to a loaded network.
pub struct FgnModel {
    net: Network,
}

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FgnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NumericFailure = 3,
    IoFailure = 4,
    FormatError = 5,
}

fn status_of(e: &Error) -> FgnStatus {
    match e {
        Error::NonFinite { .. } | Error::Numeric(_) => FgnStatus::NumericFailure,
        Error::Io(_) => FgnStatus::IoFailure,
        Error::ModelFormat(_) | Error::Parse { .. } => FgnStatus::FormatError,
        _ => FgnStatus::InvalidArgument,
    }
}

unsafe fn path_from(ptr: *const c_char) -> Option<&'static Path> {
    if ptr.is_null() {
        return None;
    }
    CStr::from_ptr(ptr).to_str().ok().map(Path::new)
}

/// Load a model file. On success writes a handle the caller must release
/// with `fgn_model_free`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fgn_model_load(path: *const c_char, out: *mut *mut FgnModel) -> FgnStatus {
    if out.is_null() {
        return FgnStatus::NullPointer;
    }
    *out = ptr::null_mut();
    let Some(path) = path_from(path) else {
        return FgnStatus::NullPointer;
    };
    match load_model(path) {
        Ok(net) => {
            *out = Box::into_raw(Box::new(FgnModel { net }));
            FgnStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Save the model to a file.
///
/// # Safety
/// `model` must come from `fgn_model_load`; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fgn_model_save(model: *const FgnModel, path: *const c_char) -> FgnStatus {
    let Some(model) = model.as_ref() else {
        return FgnStatus::NullPointer;
    };
    let Some(path) = path_from(path) else {
        return FgnStatus::NullPointer;
    };
    match save_model(&model.net, path) {
        Ok(()) => FgnStatus::Ok,
        Err(e) => status_of(&e),
    }
}

/// Release a handle. A null pointer is a no-op.
///
/// # Safety
/// `model` must come from `fgn_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fgn_model_free(model: *mut FgnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input width of the first layer; 0 when it is not a dense layer.
///
/// # Safety
/// `model` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn fgn_model_input_dim(model: *const FgnModel) -> usize {
    model.as_ref().and_then(|m| m.net.in_dim()).unwrap_or(0)
}

/// Output width of the last layer; 0 when it is not a dense layer.
///
/// # Safety
/// `model` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn fgn_model_output_dim(model: *const FgnModel) -> usize {
    model.as_ref().and_then(|m| m.net.out_dim()).unwrap_or(0)
}

/// Run the network on `input[0..input_len]`, writing
/// `logits[0..logits_len]`. `logits_len` must match the output width.
///
/// # Safety
/// Both buffers must be valid for their stated lengths.
#[no_mangle]
pub unsafe extern "C" fn fgn_model_predict(
    model: *const FgnModel,
    input: *const f64,
    input_len: usize,
    logits: *mut f64,
    logits_len: usize,
) -> FgnStatus {
    let Some(model) = model.as_ref() else {
        return FgnStatus::NullPointer;
    };
    if input.is_null() || logits.is_null() {
        return FgnStatus::NullPointer;
    }
    let x = std::slice::from_raw_parts(input, input_len);
    match model.net.logits(x) {
        Ok(y) => {
            if y.len() != logits_len {
                return FgnStatus::InvalidArgument;
            }
            std::slice::from_raw_parts_mut(logits, logits_len).copy_from_slice(&y);
            FgnStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Predicted class and softmax confidence for one input.
///
/// # Safety
/// `input` must be valid for `input_len`; out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fgn_model_confidence(
    model: *const FgnModel,
    input: *const f64,
    input_len: usize,
    out_class: *mut usize,
    out_confidence: *mut f64,
) -> FgnStatus {
    let Some(model) = model.as_ref() else {
        return FgnStatus::NullPointer;
    };
    if input.is_null() || out_class.is_null() || out_confidence.is_null() {
        return FgnStatus::NullPointer;
    }
    let x = std::slice::from_raw_parts(input, input_len);
    let logits = match model.net.logits(x) {
        Ok(y) => y,
        Err(e) => return status_of(&e),
    };
    match confidence(&logits) {
        Ok((c, p)) => {
            *out_class = c;
            *out_confidence = p;
            FgnStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Fast gradient sign attack. Writes the adversarial input over
/// `adversarial[0..input_len]` and sets `out_success` to 1 when the attack
/// predicate holds.
///
/// # Safety
/// All buffers must be valid for `input_len`; out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fgn_model_fgsm(
    model: *const FgnModel,
    input: *const f64,
    input_len: usize,
    label: usize,
    epsilon: f64,
    adversarial: *mut f64,
    out_success: *mut u8,
) -> FgnStatus {
    let Some(model) = model.as_ref() else {
        return FgnStatus::NullPointer;
    };
    if input.is_null() || adversarial.is_null() || out_success.is_null() {
        return FgnStatus::NullPointer;
    }
    let x = std::slice::from_raw_parts(input, input_len);
    match fgsm(&model.net, x, label, epsilon) {
        Ok(out) => {
            std::slice::from_raw_parts_mut(adversarial, input_len)
                .copy_from_slice(&out.adversarial_input);
            *out_success = out.success as u8;
            FgnStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}
