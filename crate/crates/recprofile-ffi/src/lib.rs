//! C ABI over the attribute-inference pipeline.
//!
//! Datasets cross the boundary as opaque [`RpDataset`] handles. Every
//! fallible call returns an [`RpStatus`]; on anything but `Ok` a
//! human-readable message is left for [`rp_last_error`]. Structured results
//! come back as JSON through `char **` out-parameters; every string handed
//! out that way is heap-allocated and must be released with
//! [`rp_string_free`].
//!
//! Scenario runs take the same flat `key = value` configuration text the
//! command-line tool reads, so the two front ends share one dialect and one
//! set of validation messages.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use recprofile::config::Config;
use recprofile::data::Dataset;
use recprofile::harness::run_scenario;
use recprofile::ingest::{generate_synthetic, load_dataset, save_dataset, SyntheticSpec};
use recprofile::Error;

/// Outcome of a call. Anything but `Ok` leaves a message for
/// [`rp_last_error`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RpStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// An argument or configuration value was rejected.
    InvalidArgument = 3,
    /// Configuration or input text failed to parse.
    ParseError = 4,
    /// A file could not be read or written.
    IoError = 5,
    /// A named artifact, key or attribute does not exist.
    Missing = 6,
    /// The pipeline itself failed (training, degenerate data, ...).
    Failed = 7,
    /// A panic was caught at the boundary; state may be inconsistent.
    Panic = 8,
}

/// In-memory interaction dataset. Opaque: create through
/// [`rp_dataset_synth`] or [`rp_dataset_open`], release with
/// [`rp_dataset_free`].
pub struct RpDataset {
    inner: Dataset,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    // NUL bytes cannot appear in a CString; replace rather than fail.
    let clean: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    let c = CString::new(clean).expect("NUL bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_for(e: &Error) -> RpStatus {
    match e {
        Error::Io { .. } => RpStatus::IoError,
        Error::Parse { .. } => RpStatus::ParseError,
        Error::InvalidArg(_) | Error::UnknownKey(_) => RpStatus::InvalidArgument,
        Error::Missing { .. } => RpStatus::Missing,
        Error::Dataset(_) | Error::Train(_) => RpStatus::Failed,
    }
}

fn fail(e: Error) -> RpStatus {
    set_last_error(&e.to_string());
    status_for(&e)
}

/// Reads a required C string argument.
///
/// # Safety
/// `p`, when non-null, must point to a NUL-terminated string valid for the
/// duration of the call.
unsafe fn required_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, RpStatus> {
    if p.is_null() {
        set_last_error(&format!("{what} must not be null"));
        return Err(RpStatus::NullArgument);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_last_error(&format!("{what} is not valid UTF-8"));
        RpStatus::InvalidUtf8
    })
}

/// Checks a required out-parameter and clears it.
///
/// # Safety
/// `out`, when non-null, must be valid for writes.
unsafe fn required_out<T>(out: *mut *mut T, what: &str) -> Result<(), RpStatus> {
    if out.is_null() {
        set_last_error(&format!("{what} must not be null"));
        return Err(RpStatus::NullArgument);
    }
    *out = ptr::null_mut();
    Ok(())
}

/// Hands a Rust string to the caller as a malloc'd C string.
///
/// # Safety
/// `out` must be valid for writes.
unsafe fn hand_out_string(s: String, out: *mut *mut c_char) -> RpStatus {
    match CString::new(s) {
        Ok(c) => {
            *out = c.into_raw();
            RpStatus::Ok
        }
        Err(_) => {
            set_last_error("result contained an interior NUL byte");
            RpStatus::Failed
        }
    }
}

fn guard(f: impl FnOnce() -> RpStatus) -> RpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_last_error("internal panic caught at the C boundary");
            RpStatus::Panic
        }
    }
}

/// The library version as a static string; never freed by the caller.
#[no_mangle]
pub extern "C" fn rp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// The message from the most recent failing call on this thread, empty when
/// nothing failed yet. The pointer stays valid until the next API call on
/// the same thread; do not free it.
#[no_mangle]
pub extern "C" fn rp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string produced by any `char **` out-parameter of this API.
/// Null is ignored.
///
/// # Safety
/// `s` must be null or a pointer previously handed out by this library and
/// not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Generates a synthetic clustered dataset: users and items both split into
/// `n_clusters` groups, each interaction staying inside the user's own
/// cluster with probability `cluster_affinity`, and the cluster planted as
/// the named user attribute.
///
/// # Safety
/// `attribute` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rp_dataset_synth(
    n_users: u64,
    n_items: u64,
    n_clusters: u64,
    cluster_affinity: f64,
    interactions_per_user: u64,
    attribute: *const c_char,
    seed: u64,
    out: *mut *mut RpDataset,
) -> RpStatus {
    guard(|| {
        let attribute = match required_str(attribute, "attribute") {
            Ok(s) => s.to_string(),
            Err(status) => return status,
        };
        if let Err(status) = required_out(out, "out") {
            return status;
        }
        let spec = SyntheticSpec {
            n_users: n_users as usize,
            n_items: n_items as usize,
            n_clusters: n_clusters as usize,
            attribute_name: attribute,
            cluster_affinity,
            interactions_per_user: interactions_per_user as usize,
        };
        match generate_synthetic(&spec, seed) {
            Ok(synth) => {
                *out = Box::into_raw(Box::new(RpDataset { inner: synth.dataset }));
                RpStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Opens a dataset directory written by [`rp_dataset_save`] (or the
/// command-line `ingest`/`synth` stages).
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rp_dataset_open(dir: *const c_char, out: *mut *mut RpDataset) -> RpStatus {
    guard(|| {
        let dir = match required_str(dir, "dir") {
            Ok(s) => PathBuf::from(s),
            Err(status) => return status,
        };
        if let Err(status) = required_out(out, "out") {
            return status;
        }
        match load_dataset(&dir) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(RpDataset { inner }));
                RpStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Writes the dataset as a directory of plain text files that
/// [`rp_dataset_open`] (and the command-line tool) can read back.
///
/// # Safety
/// `dataset` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rp_dataset_save(dataset: *const RpDataset, dir: *const c_char) -> RpStatus {
    guard(|| {
        let Some(handle) = dataset.as_ref() else {
            set_last_error("dataset must not be null");
            return RpStatus::NullArgument;
        };
        let dir = match required_str(dir, "dir") {
            Ok(s) => PathBuf::from(s),
            Err(status) => return status,
        };
        match save_dataset(&dir, &handle.inner) {
            Ok(()) => RpStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Releases a dataset handle. Null is ignored.
///
/// # Safety
/// `dataset` must be null or a live handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rp_dataset_free(dataset: *mut RpDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Number of users; 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rp_dataset_n_users(dataset: *const RpDataset) -> u64 {
    dataset.as_ref().map_or(0, |d| d.inner.n_users() as u64)
}

/// Number of items; 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rp_dataset_n_items(dataset: *const RpDataset) -> u64 {
    dataset.as_ref().map_or(0, |d| d.inner.n_items() as u64)
}

/// Number of stored interactions; 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rp_dataset_n_interactions(dataset: *const RpDataset) -> u64 {
    dataset.as_ref().map_or(0, |d| d.inner.interactions().len() as u64)
}

/// Describes the dataset as JSON: sizes, interaction density, and each
/// declared attribute with its label set.
///
/// # Safety
/// `dataset` must be a live handle and `out_json` valid for writes; free the
/// result with [`rp_string_free`].
#[no_mangle]
pub unsafe extern "C" fn rp_dataset_summary_json(
    dataset: *const RpDataset,
    out_json: *mut *mut c_char,
) -> RpStatus {
    guard(|| {
        let Some(handle) = dataset.as_ref() else {
            set_last_error("dataset must not be null");
            return RpStatus::NullArgument;
        };
        if let Err(status) = required_out(out_json, "out_json") {
            return status;
        }
        let ds = &handle.inner;
        let cells = (ds.n_users() * ds.n_items()) as f64;
        let summary = serde_json::json!({
            "users": ds.n_users(),
            "items": ds.n_items(),
            "interactions": ds.interactions().len(),
            "density": if cells > 0.0 { ds.interactions().len() as f64 / cells } else { 0.0 },
            "attributes": ds
                .attributes()
                .iter()
                .map(|col| serde_json::json!({ "name": col.name(), "labels": col.labels() }))
                .collect::<Vec<_>>(),
        });
        hand_out_string(summary.to_string(), out_json)
    })
}

/// Runs one analyst scenario against the dataset and returns the report as
/// JSON: metrics, per-user predictions with decoded labels, the surrogate
/// tournament and alignment residuals when those stages ran.
///
/// `config` uses the flat `key = value` dialect of the command-line tool and
/// must set at least `scenario` and `attribute`. `cache_dir` may be null;
/// when given, trained original models are reused across calls.
///
/// # Safety
/// `dataset` must be a live handle, `config` a NUL-terminated string,
/// `cache_dir` null or a NUL-terminated string, and `out_json` valid for
/// writes; free the result with [`rp_string_free`].
#[no_mangle]
pub unsafe extern "C" fn rp_scenario_run(
    dataset: *const RpDataset,
    config: *const c_char,
    cache_dir: *const c_char,
    out_json: *mut *mut c_char,
) -> RpStatus {
    guard(|| {
        let Some(handle) = dataset.as_ref() else {
            set_last_error("dataset must not be null");
            return RpStatus::NullArgument;
        };
        let config = match required_str(config, "config") {
            Ok(s) => s.to_string(),
            Err(status) => return status,
        };
        let cache: Option<PathBuf> = if cache_dir.is_null() {
            None
        } else {
            match required_str(cache_dir, "cache_dir") {
                Ok(s) => Some(PathBuf::from(s)),
                Err(status) => return status,
            }
        };
        if let Err(status) = required_out(out_json, "out_json") {
            return status;
        }
        match run_config(&handle.inner, &config, cache.as_deref()) {
            Ok(json) => hand_out_string(json, out_json),
            Err(e) => fail(e),
        }
    })
}

fn run_config(ds: &Dataset, config: &str, cache: Option<&Path>) -> Result<String, Error> {
    let cfg = Config::parse_str(config, Path::new("<config>"))?.scenario_config()?;
    let report = run_scenario(ds, &cfg, cache)?;
    let column = ds.attribute(&report.attribute);
    let label = |code: u32| -> String {
        column
            .filter(|col| (code as usize) < col.label_count())
            .map_or_else(|| code.to_string(), |col| col.label_of(code).to_string())
    };
    let json = serde_json::json!({
        "dataset": report.dataset,
        "scenario": report.scenario,
        "attribute": report.attribute,
        "alpha": report.alpha,
        "beta": report.beta,
        "method": report.method,
        "seed": report.seed,
        "n_train": report.n_train,
        "n_eval": report.n_eval,
        "accuracy": report.metrics.accuracy,
        "macro_f1": report.metrics.macro_f1,
        "runtime_s": report.runtime_s,
        "cooccurrence_fallback": report.cooccurrence_fallback,
        "single_class_truth": report.single_class_truth,
        "surrogate": report.surrogate.as_ref().map(|s| serde_json::json!({
            "chosen": s.chosen.to_string(),
            "rls": s.rls
                .iter()
                .map(|(kind, score)| serde_json::json!([kind.to_string(), score]))
                .collect::<Vec<_>>(),
        })),
        "alignment": report.alignment.as_ref().map(|a| serde_json::json!({
            "initial_train_res": a.initial_train_res,
            "train_res": a.train_res,
            "holdout_res": a.holdout_res,
        })),
        "predictions": report.predictions
            .iter()
            .map(|&(u, code, confidence)| {
                serde_json::json!([ds.user_id(u), label(code), confidence])
            })
            .collect::<Vec<_>>(),
    });
    Ok(json.to_string())
}
