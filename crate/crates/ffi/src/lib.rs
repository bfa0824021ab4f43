//! C ABI over the campaign runner and a few closed-form helpers.
//!
//! Conventions: every fallible call returns an [`SdStatus`]; on failure the
//! message is available from [`sd_last_error_message`] on the same thread.
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free`. Strings returned as `char *` are owned by the caller
//! and released with [`sd_string_free`]; `const char *` results borrow from
//! the handle they came from.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use superdiff::acceptance::{run_criterion, Scale};
use superdiff::campaign::{self, CampaignConfig, ExitStatus};
use superdiff::io::output_root;
use superdiff::superprocess::{poisson_tail_bound, poisson_tail_exact};
use superdiff::Error;

/// Status codes. The first four coincide with the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdStatus {
    Ok = 0,
    Internal = 1,
    Validation = 2,
    Inconclusive = 3,
    NullPointer = 4,
    InvalidUtf8 = 5,
    Panic = 6,
}

impl From<ExitStatus> for SdStatus {
    fn from(s: ExitStatus) -> Self {
        match s {
            ExitStatus::Success => SdStatus::Ok,
            ExitStatus::Internal => SdStatus::Internal,
            ExitStatus::Validation => SdStatus::Validation,
            ExitStatus::Inconclusive => SdStatus::Inconclusive,
        }
    }
}

/// A parsed, validated campaign configuration.
pub struct SdConfig {
    inner: CampaignConfig,
}

/// A finished run persisted on disk.
pub struct SdRun {
    status: SdStatus,
    directory: CString,
    digest: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Fail(SdStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(ExitStatus::for_error(&e).into(), e.to_string())
    }
}

/// Run `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SdStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SdStatus::Ok,
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
            set_error(format!("panic: {msg}"));
            SdStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(SdStatus::NullPointer, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SdStatus::InvalidUtf8, format!("`{name}` is not valid UTF-8")))
}

fn out_arg<T>(p: *mut T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail(SdStatus::NullPointer, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

fn owned(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail(SdStatus::Internal, "string contains NUL".into()))
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn sd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn sd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Release a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parse a JSON campaign configuration.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_config_parse(json: *const c_char, out: *mut *mut SdConfig) -> SdStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cfg = CampaignConfig::parse(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(SdConfig { inner: cfg }));
        Ok(())
    })
}

/// Default configuration for an experiment kind (e.g. "fk", "bbm").
///
/// # Safety
/// `kind` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_config_template(kind: *const c_char, out: *mut *mut SdConfig) -> SdStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = ptr::null_mut();
        let v = campaign::template(str_arg(kind, "kind")?)?;
        let cfg = CampaignConfig::from_value(v)?;
        *out = Box::into_raw(Box::new(SdConfig { inner: cfg }));
        Ok(())
    })
}

/// Canonical JSON of the configuration; free with `sd_string_free`.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_config_to_json(cfg: *const SdConfig, out: *mut *mut c_char) -> SdStatus {
    guard(|| {
        out_arg(out, "out")?;
        let cfg = cfg.as_ref().ok_or(Fail(SdStatus::NullPointer, "`cfg` is null".into()))?;
        *out = owned(cfg.inner.to_value().to_string())?;
        Ok(())
    })
}

/// Hex SHA-256 digest identifying the run; free with `sd_string_free`.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_config_digest(cfg: *const SdConfig, out: *mut *mut c_char) -> SdStatus {
    guard(|| {
        out_arg(out, "out")?;
        let cfg = cfg.as_ref().ok_or(Fail(SdStatus::NullPointer, "`cfg` is null".into()))?;
        *out = owned(cfg.inner.digest())?;
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from `sd_config_parse`/`sd_config_template` and not have
/// been freed. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn sd_config_free(cfg: *mut SdConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Execute the campaign and write its outputs under `output_root` (NULL
/// means the default root). On success `*out` holds the run; its status may
/// still be `SD_STATUS_INCONCLUSIVE`, which is also returned.
///
/// # Safety
/// `cfg` must be a live handle; `output_root` NULL or NUL-terminated; `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sd_run(cfg: *const SdConfig, output_root_dir: *const c_char, out: *mut *mut SdRun) -> SdStatus {
    let mut status = SdStatus::Ok;
    let code = guard(|| {
        out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cfg = cfg.as_ref().ok_or(Fail(SdStatus::NullPointer, "`cfg` is null".into()))?;
        let root: PathBuf = if output_root_dir.is_null() {
            output_root()
        } else {
            Path::new(str_arg(output_root_dir, "output_root")?).to_path_buf()
        };
        let (dir, st, manifest) = campaign::run(&cfg.inner, &root)?;
        status = st.into();
        let run = SdRun {
            status,
            directory: CString::new(dir.to_string_lossy().into_owned()).map_err(|_| Fail(SdStatus::Internal, "path contains NUL".into()))?,
            digest: CString::new(manifest.config_digest).map_err(|_| Fail(SdStatus::Internal, "digest contains NUL".into()))?,
        };
        *out = Box::into_raw(Box::new(run));
        Ok(())
    });
    if code == SdStatus::Ok {
        status
    } else {
        code
    }
}

/// # Safety
/// `run` must be a live handle or NULL (gives `SD_STATUS_NULL_POINTER`).
#[no_mangle]
pub unsafe extern "C" fn sd_run_status(run: *const SdRun) -> SdStatus {
    run.as_ref().map_or(SdStatus::NullPointer, |r| r.status)
}

/// Output directory; borrowed from the handle.
///
/// # Safety
/// `run` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn sd_run_directory(run: *const SdRun) -> *const c_char {
    run.as_ref().map_or(ptr::null(), |r| r.directory.as_ptr())
}

/// Config digest stamped into every output; borrowed from the handle.
///
/// # Safety
/// `run` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn sd_run_digest(run: *const SdRun) -> *const c_char {
    run.as_ref().map_or(ptr::null(), |r| r.digest.as_ptr())
}

/// # Safety
/// `run` must come from `sd_run` and not have been freed. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn sd_run_free(run: *mut SdRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Upper bound on P(Poisson(λ) ≥ kλ) (k > 1) or P(Poisson(λ) ≤ kλ) (k < 1).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_poisson_tail_bound(lambda: f64, k: f64, out: *mut f64) -> SdStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = poisson_tail_bound(lambda, k)?;
        Ok(())
    })
}

/// The exact tail that `sd_poisson_tail_bound` bounds.
#[no_mangle]
pub extern "C" fn sd_poisson_tail_exact(lambda: f64, k: f64) -> f64 {
    poisson_tail_exact(lambda, k)
}

/// Run one acceptance criterion (1–15). `full` selects the full-size
/// instance. `*pass` receives 1 or 0; `*line` (if not NULL) the report line,
/// to be freed with `sd_string_free`.
///
/// # Safety
/// `pass` must be writable; `line` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn sd_verify_criterion(id: u8, full: c_int, pass: *mut c_int, line: *mut *mut c_char) -> SdStatus {
    guard(|| {
        out_arg(pass, "pass")?;
        if !(1..=15).contains(&id) {
            return Err(Fail(SdStatus::Validation, format!("no criterion {id}")));
        }
        let r = run_criterion(id, if full != 0 { Scale::Full } else { Scale::Fast });
        *pass = r.pass as c_int;
        if !line.is_null() {
            *line = owned(r.line())?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_arguments_set_last_error() {
        let mut cfg = ptr::null_mut();
        let s = unsafe { sd_config_parse(ptr::null(), &mut cfg) };
        assert_eq!(s, SdStatus::NullPointer);
        assert!(cfg.is_null());
        let msg = unsafe { CStr::from_ptr(sd_last_error_message()) };
        assert!(msg.to_str().unwrap().contains("json"));
    }

    #[test]
    fn success_clears_last_error() {
        unsafe {
            let mut x = 0.0;
            assert_eq!(sd_poisson_tail_bound(-1.0, 2.0, &mut x), SdStatus::Validation);
            assert!(!sd_last_error_message().is_null());
            assert_eq!(sd_poisson_tail_bound(5.0, 2.0, &mut x), SdStatus::Ok);
            assert!(sd_last_error_message().is_null());
            assert!(x >= sd_poisson_tail_exact(5.0, 2.0));
        }
    }
}
