//! C ABI over the ecoevo library.
//!
//! Conventions:
//! * every function returns an [`EcoStatus`]; anything but `Ok` leaves a
//!   message retrievable with [`eco_last_error`] (thread-local, valid until
//!   the next failing call on the same thread),
//! * handles are opaque and freed with their matching `_free` function,
//! * strings returned as `char*` out-parameters are freed with
//!   [`eco_string_free`]; `const char*` returns borrow from the handle (or
//!   are static) and must not be freed,
//! * panics never cross the boundary; they turn into `EcoStatus::Panic`.
//!
//! The generated header lands in `include/ecoevo.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use ecoevo::explain::forest_shap;
use ecoevo::forest::{load_model, Forest};
use ecoevo::pipeline::{run_pipeline, PipelineOptions};
use ecoevo::synth::{default_benchmark, generate};
use ecoevo::Error;

/// Outcome of an FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EcoStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// File could not be read or written.
    Io = 3,
    /// File contents could not be parsed.
    Parse = 4,
    /// An argument or configuration value is out of range.
    InvalidArgument = 5,
    /// A pipeline stage ran before the stage that produces its input.
    MissingInput = 6,
    /// A model file has the wrong format or version.
    ModelFormat = 7,
    /// A benchmark script asked for something impossible.
    InfeasibleScript = 8,
    /// An internal panic was caught at the boundary.
    Panic = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized: String = message.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> EcoStatus {
    match err {
        Error::Io { .. } => EcoStatus::Io,
        Error::Csv { .. } | Error::Json { .. } | Error::Parse { .. } => EcoStatus::Parse,
        Error::MissingMechanism { .. }
        | Error::InvalidConfig(_)
        | Error::EmptySnapshot
        | Error::InvalidArgument(_) => EcoStatus::InvalidArgument,
        Error::MissingInput { .. } => EcoStatus::MissingInput,
        Error::ModelFormat(_) => EcoStatus::ModelFormat,
        Error::InfeasibleDirective(_) => EcoStatus::InfeasibleScript,
    }
}

fn fail(err: &Error) -> EcoStatus {
    set_error(&err.to_string());
    status_of(err)
}

/// Runs `body` with panics confined to this call.
fn guarded(body: impl FnOnce() -> EcoStatus) -> EcoStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(&format!("internal panic: {message}"));
            EcoStatus::Panic
        }
    }
}

/// # Safety: `ptr` must be null or a NUL-terminated string.
unsafe fn utf8_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, EcoStatus> {
    if ptr.is_null() {
        set_error(&format!("{name} must not be null"));
        return Err(EcoStatus::NullArgument);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(s),
        Err(_) => {
            set_error(&format!("{name} is not valid UTF-8"));
            Err(EcoStatus::InvalidUtf8)
        }
    }
}

unsafe fn path_arg(ptr: *const c_char, name: &str) -> Result<PathBuf, EcoStatus> {
    Ok(Path::new(utf8_arg(ptr, name)?).to_path_buf())
}

/// Library version as a static string; never freed.
#[no_mangle]
pub extern "C" fn eco_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the last failing call on this thread. Never null; empty when
/// nothing failed yet. Valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn eco_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Frees a string an `eco_` function handed out through a `char**`.
///
/// # Safety
/// `ptr` must be null or a pointer obtained from this library.
#[no_mangle]
pub unsafe extern "C" fn eco_string_free(ptr: *mut c_char) {
    if !ptr.is_null() {
        drop(CString::from_raw(ptr));
    }
}

/// A loaded classification forest.
pub struct EcoForest {
    forest: Forest,
    class_names: Vec<CString>,
    feature_names: Vec<CString>,
}

/// Loads a model file written by the train stage.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn eco_forest_load(path: *const c_char, out: *mut *mut EcoForest) -> EcoStatus {
    guarded(|| {
        if out.is_null() {
            set_error("out must not be null");
            return EcoStatus::NullArgument;
        }
        let path = match path_arg(path, "path") {
            Ok(p) => p,
            Err(status) => return status,
        };
        match load_model(&path) {
            Ok(forest) => {
                let to_c = |names: &[String]| {
                    names
                        .iter()
                        .map(|n| CString::new(n.as_str()).unwrap_or_default())
                        .collect::<Vec<_>>()
                };
                let handle = EcoForest {
                    class_names: to_c(&forest.class_names),
                    feature_names: to_c(&forest.feature_names),
                    forest,
                };
                *out = Box::into_raw(Box::new(handle));
                EcoStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `forest` must be null or a pointer from [`eco_forest_load`]; it must not
/// be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn eco_forest_free(forest: *mut EcoForest) {
    if !forest.is_null() {
        drop(Box::from_raw(forest));
    }
}

/// Number of classes the model distinguishes; 0 for a null handle.
///
/// # Safety
/// `forest` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn eco_forest_n_classes(forest: *const EcoForest) -> usize {
    forest.as_ref().map_or(0, |f| f.forest.n_classes())
}

/// Number of input features the model expects; 0 for a null handle.
///
/// # Safety
/// `forest` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn eco_forest_n_features(forest: *const EcoForest) -> usize {
    forest.as_ref().map_or(0, |f| f.forest.n_features())
}

/// Name of class `index`, borrowed from the handle; null when out of range.
///
/// # Safety
/// `forest` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn eco_forest_class_name(forest: *const EcoForest, index: usize) -> *const c_char {
    forest
        .as_ref()
        .and_then(|f| f.class_names.get(index))
        .map_or(std::ptr::null(), |n| n.as_ptr())
}

/// Name of feature `index`, borrowed from the handle; null when out of range.
///
/// # Safety
/// `forest` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn eco_forest_feature_name(forest: *const EcoForest, index: usize) -> *const c_char {
    forest
        .as_ref()
        .and_then(|f| f.feature_names.get(index))
        .map_or(std::ptr::null(), |n| n.as_ptr())
}

/// Class probabilities for one input row. `x` holds `x_len` values which must
/// equal the model's feature count; `out` receives `out_len` values which
/// must equal the class count.
///
/// # Safety
/// All pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn eco_forest_predict_proba(
    forest: *const EcoForest,
    x: *const f64,
    x_len: usize,
    out: *mut f64,
    out_len: usize,
) -> EcoStatus {
    guarded(|| {
        let Some(handle) = forest.as_ref() else {
            set_error("forest must not be null");
            return EcoStatus::NullArgument;
        };
        if x.is_null() || out.is_null() {
            set_error("x and out must not be null");
            return EcoStatus::NullArgument;
        }
        if out_len != handle.forest.n_classes() {
            set_error(&format!(
                "out has room for {out_len} values, model has {} classes",
                handle.forest.n_classes()
            ));
            return EcoStatus::InvalidArgument;
        }
        let row = std::slice::from_raw_parts(x, x_len);
        match handle.forest.predict_proba(row) {
            Ok(proba) => {
                std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(proba.as_slice());
                EcoStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Per-feature attributions for one input row. `values` receives
/// `n_features * n_classes` numbers laid out feature-major
/// (`values[feature * n_classes + class]`); `base` receives `n_classes`
/// expected values. Attributions plus base sum to the predicted probability
/// per class.
///
/// # Safety
/// All pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn eco_forest_shap(
    forest: *const EcoForest,
    x: *const f64,
    x_len: usize,
    values: *mut f64,
    values_len: usize,
    base: *mut f64,
    base_len: usize,
) -> EcoStatus {
    guarded(|| {
        let Some(handle) = forest.as_ref() else {
            set_error("forest must not be null");
            return EcoStatus::NullArgument;
        };
        if x.is_null() || values.is_null() || base.is_null() {
            set_error("x, values and base must not be null");
            return EcoStatus::NullArgument;
        }
        let (d, k) = (handle.forest.n_features(), handle.forest.n_classes());
        if values_len != d * k || base_len != k {
            set_error(&format!(
                "values needs {} numbers and base {k}, got {values_len} and {base_len}",
                d * k
            ));
            return EcoStatus::InvalidArgument;
        }
        let row = std::slice::from_raw_parts(x, x_len);
        match forest_shap(&handle.forest, row) {
            Ok(sv) => {
                let values_out = std::slice::from_raw_parts_mut(values, values_len);
                for (f, per_class) in sv.values.iter().enumerate() {
                    values_out[f * k..(f + 1) * k].copy_from_slice(per_class);
                }
                std::slice::from_raw_parts_mut(base, base_len).copy_from_slice(&sv.base);
                EcoStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Runs the full staged pipeline. `options_json` is the pipeline options
/// document, e.g. `{"input":{"source":"synth"}}`. On success, when
/// `summary_json` is non-null it receives the run summary as JSON; free it
/// with [`eco_string_free`].
///
/// # Safety
/// `run_dir` and `options_json` must be NUL-terminated strings;
/// `summary_json` must be null or a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn eco_pipeline_run(
    run_dir: *const c_char,
    options_json: *const c_char,
    summary_json: *mut *mut c_char,
) -> EcoStatus {
    guarded(|| {
        let run = match path_arg(run_dir, "run_dir") {
            Ok(p) => p,
            Err(status) => return status,
        };
        let options_text = match utf8_arg(options_json, "options_json") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let options: PipelineOptions = match serde_json::from_str(options_text) {
            Ok(o) => o,
            Err(e) => {
                set_error(&format!("options_json: {e}"));
                return EcoStatus::Parse;
            }
        };
        match run_pipeline(&run, &options) {
            Ok(summary) => {
                if !summary_json.is_null() {
                    let text = serde_json::to_string(&summary).unwrap_or_default();
                    *summary_json = CString::new(text).unwrap_or_default().into_raw();
                }
                EcoStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Generates a synthetic benchmark into `dir`. `script_json` may be null for
/// the built-in benchmark script.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `script_json` null or likewise.
#[no_mangle]
pub unsafe extern "C" fn eco_synth_generate(dir: *const c_char, script_json: *const c_char) -> EcoStatus {
    guarded(|| {
        let dir = match path_arg(dir, "dir") {
            Ok(p) => p,
            Err(status) => return status,
        };
        let script = if script_json.is_null() {
            default_benchmark()
        } else {
            let text = match utf8_arg(script_json, "script_json") {
                Ok(s) => s,
                Err(status) => return status,
            };
            match serde_json::from_str(text) {
                Ok(s) => s,
                Err(e) => {
                    set_error(&format!("script_json: {e}"));
                    return EcoStatus::Parse;
                }
            }
        };
        match generate(&script, &dir) {
            Ok(_) => EcoStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}
