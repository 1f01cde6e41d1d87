//! C ABI over the particle-cloud evaluation suite.
//!
//! Samples are opaque handles created by `cj_sample_read` or
//! `cj_toygen` and released with `cj_sample_free`. Every fallible call
//! returns a [`CjStatus`]; on failure `cj_last_error_message` holds a
//! thread-local description. Strings returned by the library are owned
//! by the caller and must be released with `cj_string_free`.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use libc::{c_char, c_double};

use cloudjudge::covmmd::CovMmdProtocol;
use cloudjudge::efp::EfpConfig;
use cloudjudge::emd::{emd, EmdConfig};
use cloudjudge::eval::{evaluate, report_to_json, EvalConfig, EvalError};
use cloudjudge::frechet::FrechetError;
use cloudjudge::io::IoError;
use cloudjudge::model::CloudSample;
use cloudjudge::toygen::{generate, ToyConfig};
use cloudjudge::w1::{W1Error, W1Protocol};

/// Call outcome. Nonzero values mirror the CLI exit-code families:
/// validation/input 2, numerical/solver 3, i/o 4.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CjStatus {
    CjOk = 0,
    CjInvalidArgument = 1,
    CjValidationError = 2,
    CjNumericalError = 3,
    CjIoError = 4,
    CjPanic = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let owned = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = owned);
}

/// Message describing the most recent failure on this thread. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cj_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// An opaque, immutable sample of particle clouds.
pub struct CjSample {
    inner: CloudSample,
}

fn io_status(err: &IoError) -> CjStatus {
    match err {
        IoError::Io { source, .. } if source.kind() != std::io::ErrorKind::NotFound => {
            CjStatus::CjIoError
        }
        _ => CjStatus::CjValidationError,
    }
}

fn eval_status(err: &EvalError) -> CjStatus {
    match err {
        EvalError::Emd(_) => CjStatus::CjNumericalError,
        EvalError::Frechet(FrechetError::NumericalFailure { .. }) => CjStatus::CjNumericalError,
        EvalError::W1(W1Error::DeterminismViolation) => CjStatus::CjNumericalError,
        _ => CjStatus::CjValidationError,
    }
}

fn guard(body: impl FnOnce() -> CjStatus) -> CjStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic in cloudjudge".to_string());
            set_error(&message);
            CjStatus::CjPanic
        }
    }
}

unsafe fn path_from(ptr: *const c_char) -> Option<PathBuf> {
    if ptr.is_null() {
        return None;
    }
    let s = unsafe { CStr::from_ptr(ptr) }.to_str().ok()?;
    Some(PathBuf::from(s))
}

/// Read a binary cloud file into a new sample handle.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid
/// pointer to receive the handle.
#[no_mangle]
pub unsafe extern "C" fn cj_sample_read(path: *const c_char, out: *mut *mut CjSample) -> CjStatus {
    guard(|| {
        if out.is_null() {
            set_error("out pointer is null");
            return CjStatus::CjInvalidArgument;
        }
        let Some(path) = (unsafe { path_from(path) }) else {
            set_error("path is null or not valid UTF-8");
            return CjStatus::CjInvalidArgument;
        };
        match cloudjudge::io::read_clouds(&path) {
            Ok(sample) => {
                unsafe { *out = Box::into_raw(Box::new(CjSample { inner: sample })) };
                CjStatus::CjOk
            }
            Err(err) => {
                set_error(&err.to_string());
                io_status(&err)
            }
        }
    })
}

/// Write a sample back to the binary cloud format.
///
/// # Safety
/// `sample` must be a live handle from this library; `path` a valid
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cj_sample_write(sample: *const CjSample, path: *const c_char) -> CjStatus {
    guard(|| {
        let Some(sample) = (unsafe { sample.as_ref() }) else {
            set_error("sample handle is null");
            return CjStatus::CjInvalidArgument;
        };
        let Some(path) = (unsafe { path_from(path) }) else {
            set_error("path is null or not valid UTF-8");
            return CjStatus::CjInvalidArgument;
        };
        match cloudjudge::io::write_clouds(&sample.inner, &path) {
            Ok(()) => CjStatus::CjOk,
            Err(err) => {
                set_error(&err.to_string());
                io_status(&err)
            }
        }
    })
}

/// Release a sample handle. Null is a no-op.
///
/// # Safety
/// `sample` must be a handle returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cj_sample_free(sample: *mut CjSample) {
    if !sample.is_null() {
        drop(unsafe { Box::from_raw(sample) });
    }
}

/// Number of clouds in a sample; zero for a null handle.
///
/// # Safety
/// `sample` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cj_sample_len(sample: *const CjSample) -> usize {
    unsafe { sample.as_ref() }.map_or(0, |s| s.inner.len())
}

/// Slot capacity of the clouds in a sample; zero for a null handle.
///
/// # Safety
/// `sample` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cj_sample_capacity(sample: *const CjSample) -> usize {
    unsafe { sample.as_ref() }.map_or(0, |s| s.inner.capacity())
}

/// Generate a seeded toy sample.
///
/// # Safety
/// `out` must be a valid pointer to receive the handle.
#[no_mangle]
pub unsafe extern "C" fn cj_toygen(
    n_jets: usize,
    max_particles: usize,
    split_prob: c_double,
    angle_scale: c_double,
    prongs: usize,
    seed: u64,
    out: *mut *mut CjSample,
) -> CjStatus {
    guard(|| {
        if out.is_null() {
            set_error("out pointer is null");
            return CjStatus::CjInvalidArgument;
        }
        let cfg =
            ToyConfig { n_jets, max_particles, split_prob, angle_scale, prongs, rng_seed: seed };
        match generate(&cfg) {
            Ok(sample) => {
                unsafe { *out = Box::into_raw(Box::new(CjSample { inner: sample })) };
                CjStatus::CjOk
            }
            Err(err) => {
                set_error(&err.to_string());
                CjStatus::CjValidationError
            }
        }
    })
}

/// Energy mover's distance between cloud `index_a` of one sample and
/// cloud `index_b` of another.
///
/// # Safety
/// Handles must be live; `out_distance` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cj_emd(
    a: *const CjSample,
    index_a: usize,
    b: *const CjSample,
    index_b: usize,
    radius: c_double,
    out_distance: *mut c_double,
) -> CjStatus {
    guard(|| {
        let (Some(a), Some(b)) = (unsafe { a.as_ref() }, unsafe { b.as_ref() }) else {
            set_error("sample handle is null");
            return CjStatus::CjInvalidArgument;
        };
        if out_distance.is_null() {
            set_error("out_distance pointer is null");
            return CjStatus::CjInvalidArgument;
        }
        if index_a >= a.inner.len() || index_b >= b.inner.len() {
            set_error("cloud index out of range");
            return CjStatus::CjInvalidArgument;
        }
        if radius.is_nan() || radius <= 0.0 {
            set_error("radius must be positive");
            return CjStatus::CjInvalidArgument;
        }
        match emd(&a.inner.clouds()[index_a], &b.inner.clouds()[index_b], &EmdConfig { radius }) {
            Ok((distance, _)) => {
                unsafe { *out_distance = distance };
                CjStatus::CjOk
            }
            Err(err) => {
                set_error(&err.to_string());
                CjStatus::CjNumericalError
            }
        }
    })
}

/// Evaluation constants for [`cj_evaluate_json`]; obtain defaults from
/// [`cj_eval_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CjEvalOptions {
    pub seed: u64,
    pub w1_batch_size: usize,
    pub w1_n_batches: usize,
    pub cov_subsample: usize,
    pub cov_n_batches: usize,
    pub emd_radius: c_double,
    pub efp_beta: c_double,
    pub frechet_samples: usize,
    /// Nonzero enables the Fréchet score (surrogate activations).
    pub enable_frechet: u8,
}

/// Fill `options` with the library defaults.
///
/// # Safety
/// `options` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cj_eval_options_default(options: *mut CjEvalOptions) -> CjStatus {
    guard(|| {
        let Some(options) = (unsafe { options.as_mut() }) else {
            set_error("options pointer is null");
            return CjStatus::CjInvalidArgument;
        };
        let cfg = EvalConfig::default();
        *options = CjEvalOptions {
            seed: cfg.seed,
            w1_batch_size: cfg.w1.batch_size,
            w1_n_batches: cfg.w1.n_batches,
            cov_subsample: cfg.cov.subsample,
            cov_n_batches: cfg.cov.n_batches,
            emd_radius: cfg.emd.radius,
            efp_beta: cfg.efp.beta,
            frechet_samples: cfg.frechet_samples,
            enable_frechet: 1,
        };
        CjStatus::CjOk
    })
}

/// Run the full metric suite and return the JSON report (including the
/// timing block) as a caller-owned string.
///
/// # Safety
/// Handles must be live, `options` and `out_json` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn cj_evaluate_json(
    real: *const CjSample,
    gen: *const CjSample,
    options: *const CjEvalOptions,
    out_json: *mut *mut c_char,
) -> CjStatus {
    guard(|| {
        let (Some(real), Some(gen)) = (unsafe { real.as_ref() }, unsafe { gen.as_ref() }) else {
            set_error("sample handle is null");
            return CjStatus::CjInvalidArgument;
        };
        let Some(options) = (unsafe { options.as_ref() }) else {
            set_error("options pointer is null");
            return CjStatus::CjInvalidArgument;
        };
        if out_json.is_null() {
            set_error("out_json pointer is null");
            return CjStatus::CjInvalidArgument;
        }
        let cfg = EvalConfig {
            w1: W1Protocol {
                batch_size: options.w1_batch_size,
                n_batches: options.w1_n_batches,
                rng_seed: options.seed,
            },
            cov: CovMmdProtocol {
                subsample: options.cov_subsample,
                n_batches: options.cov_n_batches,
                rng_seed: options.seed,
            },
            emd: EmdConfig { radius: options.emd_radius },
            efp: EfpConfig { beta: options.efp_beta, normalize_z: true },
            frechet_samples: options.frechet_samples,
            frechet_enabled: options.enable_frechet != 0,
            seed: options.seed,
        };
        match evaluate(&real.inner, &gen.inner, None, &cfg) {
            Ok((report, timings)) => {
                let json = report_to_json(&report, Some(&timings));
                let owned = CString::new(json).expect("report JSON has no NUL bytes");
                unsafe { *out_json = owned.into_raw() };
                CjStatus::CjOk
            }
            Err(err) => {
                set_error(&err.to_string());
                eval_status(&err)
            }
        }
    })
}

/// Release a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must originate from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cj_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}
