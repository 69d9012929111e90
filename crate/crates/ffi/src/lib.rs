//! C ABI over the `focc` core.
//!
//! Objects cross the boundary as opaque handles created by `*_new` and
//! released by the matching `*_free`. Every fallible call returns a
//! [`FoccStatus`]; on failure a message is kept per thread and can be copied
//! out with [`focc_last_error_message`]. Results are written through out
//! pointers only on success. Panics never unwind into the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use focc::autodiff::{Tape, Tensor};
use focc::check::{run_suite, Level};
use focc::config::RunConfig;
use focc::lattice::{self, LatticeVars, LocalProbTable};
use focc::streaming::{self, ContextSchedule, FoccTable};
use focc::training::token_error_rate;
use focc::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FoccStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    NonFinite = 4,
    InvalidConfig = 5,
    Io = 6,
    Diverged = 7,
    CheckFailed = 8,
    Panic = 9,
}

/// Local probability table of one utterance.
pub struct FoccProbTable {
    inner: LocalProbTable,
}

/// Chunked context schedule over a fixed number of frames.
pub struct FoccSchedule {
    inner: ContextSchedule,
}

/// Validated run configuration.
pub struct FoccRunConfig {
    inner: RunConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> FoccStatus {
    match err {
        Error::ShapeMismatch { .. } | Error::BadLength { .. } => FoccStatus::ShapeMismatch,
        Error::NonFinite { .. } | Error::LogOfNonPositive { .. } => FoccStatus::NonFinite,
        Error::InvalidConfig(_) | Error::Json(_) | Error::Checkpoint(_) => FoccStatus::InvalidConfig,
        Error::Io(_) => FoccStatus::Io,
        Error::Diverged { .. } => FoccStatus::Diverged,
        _ => FoccStatus::InvalidArgument,
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (FoccStatus, String)>) -> FoccStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FoccStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            FoccStatus::Panic
        }
    }
}

fn core(err: Error) -> (FoccStatus, String) {
    (status_of(&err), err.to_string())
}

fn null(what: &str) -> (FoccStatus, String) {
    (FoccStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], (FoccStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `ptr` must be null or valid for `len` writes.
unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], (FoccStatus, String)> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

/// Copies the calling thread's last error message into `buf` as a
/// NUL-terminated string, truncating to `len - 1` bytes. Returns the full
/// message length in bytes (excluding the terminator).
///
/// # Safety
/// `buf` must be null or valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn focc_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Static NUL-terminated version string.
#[no_mangle]
pub extern "C" fn focc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a table from row-major log-probabilities: `log_blank` is
/// `[frames, target_len + 1]`, `log_label` is `[frames, target_len + 1,
/// vocab]` and `target` holds `target_len` labels in `1..=vocab`. Each
/// `(t, u)` row of blank plus labels must sum to one.
///
/// # Safety
/// Array arguments must be valid for the lengths above; `out` must be valid
/// for one write.
#[no_mangle]
pub unsafe extern "C" fn focc_prob_table_new(
    frames: usize,
    target_len: usize,
    vocab: usize,
    log_blank: *const f64,
    log_label: *const f64,
    target: *const usize,
    out: *mut *mut FoccProbTable,
) -> FoccStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let u1 = target_len + 1;
        let blank = slice(log_blank, frames * u1, "log_blank")?;
        let label = slice(log_label, frames * u1 * vocab, "log_label")?;
        let target = slice(target, target_len, "target")?;
        let table = LocalProbTable::new(
            Tensor::with_log_zero(vec![frames, u1], blank.to_vec()).map_err(core)?,
            Tensor::with_log_zero(vec![frames, u1, vocab], label.to_vec()).map_err(core)?,
            target.to_vec(),
            vocab,
        )
        .map_err(core)?;
        *out = Box::into_raw(Box::new(FoccProbTable { inner: table }));
        Ok(())
    })
}

/// # Safety
/// `table` must be null or a handle from [`focc_prob_table_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn focc_prob_table_free(table: *mut FoccProbTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Log-likelihood `log P(y | x)` by the forward recursion.
///
/// # Safety
/// `table` must be a live handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn focc_likelihood(table: *const FoccProbTable, out: *mut f64) -> FoccStatus {
    guard(|| {
        let t = table.as_ref().ok_or_else(|| null("table"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = lattice::likelihood(&t.inner).map_err(core)?;
        Ok(())
    })
}

/// Log-likelihood by enumerating every alignment path. Exponential cost;
/// fails with `InvalidArgument` above an internal path limit.
///
/// # Safety
/// `table` must be a live handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn focc_oracle_likelihood(table: *const FoccProbTable, out: *mut f64) -> FoccStatus {
    guard(|| {
        let t = table.as_ref().ok_or_else(|| null("table"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = lattice::oracle_enumerate(&t.inner).map_err(core)?;
        Ok(())
    })
}

/// Log-likelihood and its gradient with respect to the log blank
/// probabilities (`[frames, target_len + 1]`) and the log probabilities of
/// emitting the next target label (`[frames, target_len]`).
///
/// # Safety
/// `table` must be a live handle; the gradient buffers must be valid for
/// the lengths above; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn focc_likelihood_grad(
    table: *const FoccProbTable,
    grad_log_blank: *mut f64,
    grad_log_emit: *mut f64,
    out: *mut f64,
) -> FoccStatus {
    guard(|| {
        let t = &table.as_ref().ok_or_else(|| null("table"))?.inner;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let (frames, u) = (t.frames(), t.target_len());
        let gb = slice_mut(grad_log_blank, frames * (u + 1), "grad_log_blank")?;
        let ge = slice_mut(grad_log_emit, frames * u, "grad_log_emit")?;
        let mut tape = Tape::new();
        let lat = LatticeVars::from_table(&mut tape, t, true);
        let ll = lattice::likelihood_var(&mut tape, &lat).map_err(core)?;
        let grads = tape.backward(ll).map_err(core)?;
        gb.copy_from_slice(grads.wrt(lat.log_blank).values());
        ge.copy_from_slice(grads.wrt(lat.log_emit).values());
        *out = tape.value(ll).values()[0];
        Ok(())
    })
}

/// Schedule with chunk size `chunk_size`, right context `right_context` and
/// `frames` frames.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn focc_schedule_new(
    chunk_size: usize,
    right_context: usize,
    frames: usize,
    out: *mut *mut FoccSchedule,
) -> FoccStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let s = ContextSchedule::new(chunk_size, right_context, frames).map_err(core)?;
        *out = Box::into_raw(Box::new(FoccSchedule { inner: s }));
        Ok(())
    })
}

/// # Safety
/// `schedule` must be null or a handle from [`focc_schedule_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn focc_schedule_free(schedule: *mut FoccSchedule) {
    if !schedule.is_null() {
        drop(Box::from_raw(schedule));
    }
}

/// Last visible input frame `e(t)` for 1-based frame `t`.
///
/// # Safety
/// `schedule` must be a live handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn focc_schedule_context_end(schedule: *const FoccSchedule, t: usize, out: *mut usize) -> FoccStatus {
    guard(|| {
        let s = &schedule.as_ref().ok_or_else(|| null("schedule"))?.inner;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if t == 0 || t > s.frames() {
            return Err((FoccStatus::InvalidArgument, format!("frame {t} outside 1..={}", s.frames())));
        }
        *out = s.end(t);
        Ok(())
    })
}

/// Writes 1 to `out` when frame `t` is a chunk boundary, else 0.
///
/// # Safety
/// `schedule` must be a live handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn focc_schedule_is_boundary(schedule: *const FoccSchedule, t: usize, out: *mut i32) -> FoccStatus {
    guard(|| {
        let s = &schedule.as_ref().ok_or_else(|| null("schedule"))?.inner;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = i32::from(s.is_boundary(t));
        Ok(())
    })
}

/// FoCC-weighted log-likelihood. `log_gamma` is `[frames, target_len + 1]`
/// row-major and must be zero on rows that are not chunk boundaries.
///
/// # Safety
/// Handles must be live; `log_gamma` valid for the length above; `out`
/// valid for one write.
#[no_mangle]
pub unsafe extern "C" fn focc_modified_likelihood(
    table: *const FoccProbTable,
    schedule: *const FoccSchedule,
    log_gamma: *const f64,
    out: *mut f64,
) -> FoccStatus {
    guard(|| {
        let t = &table.as_ref().ok_or_else(|| null("table"))?.inner;
        let s = &schedule.as_ref().ok_or_else(|| null("schedule"))?.inner;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if s.frames() != t.frames() {
            return Err((
                FoccStatus::ShapeMismatch,
                format!("schedule has {} frames, table has {}", s.frames(), t.frames()),
            ));
        }
        let u1 = t.target_len() + 1;
        let g = slice(log_gamma, t.frames() * u1, "log_gamma")?;
        let focc = FoccTable::new(s, Tensor::new(vec![t.frames(), u1], g.to_vec()).map_err(core)?).map_err(core)?;
        *out = streaming::modified_likelihood(t, s, &focc, true).map_err(core)?;
        Ok(())
    })
}

/// Token error rate of `hyp` against `reference`.
///
/// # Safety
/// Arrays must be valid for their lengths; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn focc_token_error_rate(
    hyp: *const usize,
    hyp_len: usize,
    reference: *const usize,
    ref_len: usize,
    out: *mut f64,
) -> FoccStatus {
    guard(|| {
        let h = slice(hyp, hyp_len, "hyp")?;
        let r = slice(reference, ref_len, "reference")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = token_error_rate(h, r);
        Ok(())
    })
}

/// Loads and validates a JSON run configuration.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn focc_run_config_load(path: *const c_char, out: *mut *mut FoccRunConfig) -> FoccStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (FoccStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let cfg = RunConfig::load(&PathBuf::from(path)).map_err(core)?;
        *out = Box::into_raw(Box::new(FoccRunConfig { inner: cfg }));
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a handle from [`focc_run_config_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn focc_run_config_free(config: *mut FoccRunConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Trains every seed of `config`, writing metrics and checkpoints to its
/// output directory, and stores the median test token error rate in `out`.
///
/// # Safety
/// `config` must be a live handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn focc_train(config: *const FoccRunConfig, out: *mut f64) -> FoccStatus {
    guard(|| {
        let cfg = &config.as_ref().ok_or_else(|| null("config"))?.inner;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let summary = focc::experiment::run(cfg, Some(&cfg.output_dir)).map_err(core)?;
        *out = summary.median_test_token_error_rate();
        Ok(())
    })
}

/// Runs the verification suites; `full` selects the full level. Returns
/// `CheckFailed` naming the failing properties when any fails.
#[no_mangle]
pub extern "C" fn focc_check(full: i32) -> FoccStatus {
    guard(|| {
        let report = run_suite(if full != 0 { Level::Full } else { Level::Fast }, None);
        if report.passed {
            Ok(())
        } else {
            Err((FoccStatus::CheckFailed, report.failing().join(", ")))
        }
    })
}
