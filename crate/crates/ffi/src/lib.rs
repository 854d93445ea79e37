// Copyright 2026 The dplac Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! C ABI for the dplac simulator.
//!
//! Every function returns a [`DplacStatus`]. On failure the message is kept
//! per thread and can be read with [`dplac_last_error_message`]. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use dplac::accountant::{self, AccountantError, NoiseMultiplier, PrivacySpec};
use dplac::cli::config::RawConfig;
use dplac::cli::serialize_config;
use dplac::harness::{self, ExperimentConfig, ExperimentResult, HarnessError, RoundFlag};

/// Status code returned by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DplacStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    ConfigError = 4,
    RuntimeError = 5,
    OutOfRange = 6,
    Panic = 7,
}

/// Round had no sampled clients.
pub const DPLAC_FLAG_EMPTY_COHORT: u32 = 1;
/// A nonpositive loss held the threshold.
pub const DPLAC_FLAG_HELD_C: u32 = 2;
/// Round-1 voting fell back to the default threshold.
pub const DPLAC_FLAG_FALLBACK_C0: u32 = 4;
/// Round-1 loss histogram had no participants.
pub const DPLAC_FLAG_FALLBACK_V0: u32 = 8;

/// One row of the per-round log.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DplacRoundRecord {
    pub round: u64,
    pub cohort_size: u64,
    pub clip_threshold: f64,
    pub loss_estimate: f64,
    pub sigma: f64,
    pub accuracy: f64,
    pub loss: f64,
    /// Bitwise OR of the `DPLAC_FLAG_*` constants.
    pub flags: u32,
}

/// Parsed, validated experiment configuration.
pub struct DplacConfig {
    raw: RawConfig,
    config: ExperimentConfig,
}

/// Finished experiment.
pub struct DplacResult {
    config: ExperimentConfig,
    result: ExperimentResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(message));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(DplacStatus, String);

impl From<AccountantError> for Failure {
    fn from(e: AccountantError) -> Self {
        let status = match e {
            AccountantError::InvalidParameter(_) | AccountantError::ZeroNoise(_) => {
                DplacStatus::InvalidArgument
            }
            _ => DplacStatus::RuntimeError,
        };
        Failure(status, e.to_string())
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        let status = match e {
            HarnessError::Config(_) => DplacStatus::ConfigError,
            _ => DplacStatus::RuntimeError,
        };
        Failure(status, e.to_string())
    }
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> DplacStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DplacStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {message}"));
            DplacStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    Failure(DplacStatus::NullPointer, format!("{name} is NULL"))
}

unsafe fn read_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        Failure(
            DplacStatus::InvalidUtf8,
            format!("{name} is not valid UTF-8"),
        )
    })
}

unsafe fn out_ref<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(name))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn dplac_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dplac_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Smallest noise multiplier meeting `(epsilon, delta)` over `rounds`
/// rounds at sampling rate `q`.
///
/// # Safety
/// `out_z` must be NULL or point to writable memory for one `double`.
#[no_mangle]
pub unsafe extern "C" fn dplac_accountant_solve_z(
    epsilon: f64,
    delta: f64,
    q: f64,
    rounds: u64,
    out_z: *mut f64,
) -> DplacStatus {
    guard(|| {
        let out = out_ref(out_z, "out_z")?;
        let spec = PrivacySpec::new(epsilon, delta, q, rounds)?;
        *out = accountant::get_noise_multiplier(&spec)?.value();
        Ok(())
    })
}

/// Epsilon spent by noise multiplier `z`.
///
/// # Safety
/// `out_epsilon` must be NULL or point to writable memory for one `double`.
#[no_mangle]
pub unsafe extern "C" fn dplac_accountant_epsilon(
    z: f64,
    delta: f64,
    q: f64,
    rounds: u64,
    out_epsilon: *mut f64,
) -> DplacStatus {
    guard(|| {
        let out = out_ref(out_epsilon, "out_epsilon")?;
        PrivacySpec::new(1.0, delta, q, rounds)?;
        *out = accountant::epsilon_for(NoiseMultiplier::new(z)?, q, rounds, delta)?;
        Ok(())
    })
}

/// Parses `key=value` configuration text.
///
/// # Safety
/// `text` must be NULL or a NUL-terminated string; `out_config` must be NULL
/// or writable.
#[no_mangle]
pub unsafe extern "C" fn dplac_config_parse(
    text: *const c_char,
    out_config: *mut *mut DplacConfig,
) -> DplacStatus {
    guard(|| {
        let out = out_ref(out_config, "out_config")?;
        *out = ptr::null_mut();
        let text = read_str(text, "text")?;
        let raw =
            RawConfig::parse(text).map_err(|e| Failure(DplacStatus::ConfigError, e.to_string()))?;
        let config = raw
            .build()
            .map_err(|e| Failure(DplacStatus::ConfigError, e.to_string()))?;
        *out = Box::into_raw(Box::new(DplacConfig { raw, config }));
        Ok(())
    })
}

/// Sets one key. On failure the configuration is left unchanged.
///
/// # Safety
/// `config` must be NULL or a live handle; `key` and `value` must be NULL or
/// NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn dplac_config_set(
    config: *mut DplacConfig,
    key: *const c_char,
    value: *const c_char,
) -> DplacStatus {
    guard(|| {
        let cfg = out_ref(config, "config")?;
        let key = read_str(key, "key")?;
        let value = read_str(value, "value")?;
        let mut raw = cfg.raw.clone();
        let built = raw
            .set(key, value)
            .and_then(|()| raw.build())
            .map_err(|e| Failure(DplacStatus::ConfigError, e.to_string()))?;
        cfg.raw = raw;
        cfg.config = built;
        Ok(())
    })
}

/// Writes the full configuration, defaults included, as a newly allocated
/// string to be released with [`dplac_string_free`].
///
/// # Safety
/// `config` must be NULL or a live handle; `out_text` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn dplac_config_serialize(
    config: *const DplacConfig,
    out_text: *mut *mut c_char,
) -> DplacStatus {
    guard(|| {
        let out = out_ref(out_text, "out_text")?;
        let cfg = handle(config, "config")?;
        let text = serialize_config(&cfg.config);
        *out = CString::new(text)
            .expect("config text has no NUL")
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `text` must be NULL or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn dplac_string_free(text: *mut c_char) {
    if !text.is_null() {
        drop(CString::from_raw(text));
    }
}

/// # Safety
/// `config` must be NULL or a handle from [`dplac_config_parse`] that has not
/// been freed.
#[no_mangle]
pub unsafe extern "C" fn dplac_config_free(config: *mut DplacConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs the experiment on `workers` threads (0 picks the machine default).
///
/// # Safety
/// `config` must be NULL or a live handle; `out_result` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn dplac_run(
    config: *const DplacConfig,
    workers: u32,
    out_result: *mut *mut DplacResult,
) -> DplacStatus {
    guard(|| {
        let out = out_ref(out_result, "out_result")?;
        *out = ptr::null_mut();
        let cfg = handle(config, "config")?;
        let workers = if workers == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            workers as usize
        };
        let result = harness::run_experiment_with_workers(&cfg.config, workers)?;
        *out = Box::into_raw(Box::new(DplacResult {
            config: cfg.config.clone(),
            result,
        }));
        Ok(())
    })
}

/// Number of logged rounds, or 0 for a NULL handle.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dplac_result_num_rounds(result: *const DplacResult) -> usize {
    result.as_ref().map_or(0, |r| r.result.records.len())
}

fn flag_bits(flags: &[RoundFlag]) -> u32 {
    flags.iter().fold(0, |bits, f| {
        bits | match f {
            RoundFlag::EmptyCohort => DPLAC_FLAG_EMPTY_COHORT,
            RoundFlag::HeldC => DPLAC_FLAG_HELD_C,
            RoundFlag::FallbackC0 => DPLAC_FLAG_FALLBACK_C0,
            RoundFlag::FallbackV0 => DPLAC_FLAG_FALLBACK_V0,
        }
    })
}

/// Copies round `index` (zero-based) into `out_record`.
///
/// # Safety
/// `result` must be NULL or a live handle; `out_record` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn dplac_result_round(
    result: *const DplacResult,
    index: usize,
    out_record: *mut DplacRoundRecord,
) -> DplacStatus {
    guard(|| {
        let out = out_ref(out_record, "out_record")?;
        let r = handle(result, "result")?;
        let rec = r.result.records.get(index).ok_or_else(|| {
            Failure(
                DplacStatus::OutOfRange,
                format!(
                    "round index {index} out of range (have {})",
                    r.result.records.len()
                ),
            )
        })?;
        *out = DplacRoundRecord {
            round: rec.t,
            cohort_size: rec.cohort_ids.len() as u64,
            clip_threshold: rec.c,
            loss_estimate: rec.v,
            sigma: rec.sigma,
            accuracy: rec.eval_accuracy,
            loss: rec.eval_loss,
            flags: flag_bits(&rec.flags),
        };
        Ok(())
    })
}

/// Noise multiplier of the training mechanism.
///
/// # Safety
/// `result` must be NULL or a live handle; `out_z` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn dplac_result_noise_multiplier(
    result: *const DplacResult,
    out_z: *mut f64,
) -> DplacStatus {
    guard(|| {
        let out = out_ref(out_z, "out_z")?;
        *out = handle(result, "result")?.result.z.value();
        Ok(())
    })
}

/// Threshold used in round 1 (histogram estimate or configured value).
///
/// # Safety
/// `result` must be NULL or a live handle; `out_c0` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn dplac_result_initial_threshold(
    result: *const DplacResult,
    out_c0: *mut f64,
) -> DplacStatus {
    guard(|| {
        let out = out_ref(out_c0, "out_c0")?;
        *out = handle(result, "result")?.result.init.c0;
        Ok(())
    })
}

/// Number of model parameters, or 0 for a NULL handle.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dplac_result_num_params(result: *const DplacResult) -> usize {
    result
        .as_ref()
        .map_or(0, |r| r.result.final_model.params.dim())
}

/// Copies the final parameters into `buffer`, which must hold exactly
/// [`dplac_result_num_params`] values.
///
/// # Safety
/// `result` must be NULL or a live handle; `buffer` must be NULL or point to
/// `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dplac_result_params(
    result: *const DplacResult,
    buffer: *mut f64,
    len: usize,
) -> DplacStatus {
    guard(|| {
        let r = handle(result, "result")?;
        if buffer.is_null() {
            return Err(null("buffer"));
        }
        let params = r.result.final_model.params.as_slice();
        if len != params.len() {
            return Err(Failure(
                DplacStatus::InvalidArgument,
                format!("buffer holds {len} values, model has {}", params.len()),
            ));
        }
        std::slice::from_raw_parts_mut(buffer, len).copy_from_slice(params);
        Ok(())
    })
}

/// Writes `rounds.csv`, `summary.txt` and `model.bin` into `dir`.
///
/// # Safety
/// `result` must be NULL or a live handle; `dir` must be NULL or a
/// NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn dplac_result_write_outputs(
    result: *const DplacResult,
    dir: *const c_char,
) -> DplacStatus {
    guard(|| {
        let r = handle(result, "result")?;
        let dir = read_str(dir, "dir")?;
        harness::write_outputs(Path::new(dir), &r.config, &r.result)?;
        Ok(())
    })
}

/// # Safety
/// `result` must be NULL or a handle from [`dplac_run`] that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn dplac_result_free(result: *mut DplacResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}
