//! C ABI over the `nishilab` library.
//!
//! Objects cross the boundary as opaque pointers owned by the caller and
//! released with the matching `*_free` (which accept NULL). Every fallible
//! call returns an `NlStatus` and writes its result through an out pointer
//! only on success. The message of the last failure on the calling thread is
//! available from `nl_last_error_message`. Panics never unwind into C.
//!
//! Pointer arguments must be NULL or valid for the duration of the call;
//! strings are NUL-terminated UTF-8.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use nishilab::config::{ExperimentConfig, ModelBlock};
use nishilab::exact::ExactGibbs;
use nishilab::model::{DisorderRealization, Model, Provenance};
use nishilab::study::{self, Command, Overrides};
use nishilab::Error;

/// Outcome of a call. `NL_STATUS_OK` is zero.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    Capacity = 4,
    OffNishimori = 5,
    Unsupported = 6,
    Io = 7,
    Panic = 8,
}

/// Study selection for `nl_run_config`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NlCommand {
    Run = 0,
    Verify = 1,
    Scaling = 2,
    PhaseProxy = 3,
}

/// A lattice with its coupling families and parameters.
pub struct NlModel(Model);

/// One draw of the couplings of a model.
pub struct NlDisorder(DisorderRealization);

/// Exact Gibbs state of one realization at one temperature.
pub struct NlExact(ExactGibbs);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

type Failure = (NlStatus, String);

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> NlStatus {
    match e {
        Error::Config(_) | Error::Json(_) => NlStatus::InvalidConfig,
        Error::Capacity { .. } => NlStatus::Capacity,
        Error::OffNishimori(_) | Error::InconsistentNishimori { .. } | Error::DegenerateDensity(_) => {
            NlStatus::OffNishimori
        }
        Error::Unsupported(_) => NlStatus::Unsupported,
        Error::Io(_) => NlStatus::Io,
        _ => NlStatus::InvalidArgument,
    }
}

fn fail(e: Error) -> Failure {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> Failure {
    (NlStatus::NullPointer, format!("{what} is NULL"))
}

/// Runs `f` behind a panic barrier and records its error message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NlStatus::Ok,
        Ok(Err((status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {message}"));
            NlStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (NlStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    out.write(value);
    Ok(())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn nl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy of the last error message on this thread, or NULL. Release with
/// `nl_string_free`.
#[no_mangle]
pub extern "C" fn nl_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| {
        e.borrow()
            .as_ref()
            .map_or(std::ptr::null_mut(), |c| c.clone().into_raw())
    })
}

#[no_mangle]
pub unsafe extern "C" fn nl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a model from the JSON of a config `model` block.
#[no_mangle]
pub unsafe extern "C" fn nl_model_from_json(json: *const c_char, out: *mut *mut NlModel) -> NlStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let block: ModelBlock =
            serde_json::from_str(text).map_err(|e| (NlStatus::InvalidConfig, e.to_string()))?;
        let model = block.build().map_err(fail)?;
        write_out(out, Box::into_raw(Box::new(NlModel(model))))
    })
}

#[no_mangle]
pub unsafe extern "C" fn nl_model_free(model: *mut NlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[no_mangle]
pub unsafe extern "C" fn nl_model_num_sites(model: *const NlModel, out: *mut usize) -> NlStatus {
    guard(|| write_out(out, ref_arg(model, "model")?.0.num_sites()))
}

#[no_mangle]
pub unsafe extern "C" fn nl_model_beta(model: *const NlModel, out: *mut f64) -> NlStatus {
    guard(|| write_out(out, ref_arg(model, "model")?.0.beta()))
}

/// Common `mu_p / delta_p^2` of the random species.
#[no_mangle]
pub unsafe extern "C" fn nl_model_nishimori_beta(model: *const NlModel, out: *mut f64) -> NlStatus {
    guard(|| {
        let beta_n = ref_arg(model, "model")?
            .0
            .params()
            .nishimori_beta()
            .map_err(fail)?;
        write_out(out, beta_n)
    })
}

/// `|B_p|`, the number of ranges of the family with exponent `p`.
#[no_mangle]
pub unsafe extern "C" fn nl_model_family_size(model: *const NlModel, p: usize, out: *mut usize) -> NlStatus {
    guard(|| {
        let family = ref_arg(model, "model")?.0.family(p).map_err(fail)?;
        write_out(out, family.len())
    })
}

/// Realization `index` of the stream `seed`; identical across platforms.
#[no_mangle]
pub unsafe extern "C" fn nl_disorder_sample(
    model: *const NlModel,
    seed: u64,
    index: u64,
    out: *mut *mut NlDisorder,
) -> NlStatus {
    guard(|| {
        let d = ref_arg(model, "model")?
            .0
            .sample_disorder(Provenance::new(seed, index));
        write_out(out, Box::into_raw(Box::new(NlDisorder(d))))
    })
}

#[no_mangle]
pub unsafe extern "C" fn nl_disorder_free(disorder: *mut NlDisorder) {
    if !disorder.is_null() {
        drop(Box::from_raw(disorder));
    }
}

/// `H(sigma, J)` for `len == num_sites` spins of value +1 or -1.
#[no_mangle]
pub unsafe extern "C" fn nl_hamiltonian(
    model: *const NlModel,
    disorder: *const NlDisorder,
    spins: *const i8,
    len: usize,
    out: *mut f64,
) -> NlStatus {
    guard(|| {
        let model = &ref_arg(model, "model")?.0;
        let disorder = &ref_arg(disorder, "disorder")?.0;
        if spins.is_null() {
            return Err(null("spins"));
        }
        if len != model.num_sites() {
            return Err((
                NlStatus::InvalidArgument,
                format!("{len} spins for {} sites", model.num_sites()),
            ));
        }
        let spins = std::slice::from_raw_parts(spins, len);
        if spins.iter().any(|&s| s != 1 && s != -1) {
            return Err((NlStatus::InvalidArgument, "spins must be +1 or -1".into()));
        }
        disorder.check_against(model).map_err(fail)?;
        write_out(out, model.hamiltonian(spins, disorder))
    })
}

/// Enumerates the Gibbs state; fails with `NL_STATUS_CAPACITY` on large systems.
#[no_mangle]
pub unsafe extern "C" fn nl_exact_new(
    model: *const NlModel,
    disorder: *const NlDisorder,
    beta: f64,
    out: *mut *mut NlExact,
) -> NlStatus {
    guard(|| {
        let model = &ref_arg(model, "model")?.0;
        let disorder = &ref_arg(disorder, "disorder")?.0;
        let gibbs = ExactGibbs::new(model, disorder, beta).map_err(fail)?;
        write_out(out, Box::into_raw(Box::new(NlExact(gibbs))))
    })
}

#[no_mangle]
pub unsafe extern "C" fn nl_exact_free(exact: *mut NlExact) {
    if !exact.is_null() {
        drop(Box::from_raw(exact));
    }
}

#[no_mangle]
pub unsafe extern "C" fn nl_exact_log_partition(exact: *const NlExact, out: *mut f64) -> NlStatus {
    guard(|| write_out(out, ref_arg(exact, "exact")?.0.log_partition()))
}

#[no_mangle]
pub unsafe extern "C" fn nl_exact_mean_energy(exact: *const NlExact, out: *mut f64) -> NlStatus {
    guard(|| write_out(out, ref_arg(exact, "exact")?.0.mean_energy()))
}

/// `<sigma_X>` for the site set `X = sites[0..len]`.
#[no_mangle]
pub unsafe extern "C" fn nl_exact_correlation(
    exact: *const NlExact,
    sites: *const usize,
    len: usize,
    out: *mut f64,
) -> NlStatus {
    guard(|| {
        let gibbs = &ref_arg(exact, "exact")?.0;
        let sites = if len == 0 {
            &[][..]
        } else if sites.is_null() {
            return Err(null("sites"));
        } else {
            std::slice::from_raw_parts(sites, len)
        };
        write_out(out, gibbs.correlation(sites).map_err(fail)?)
    })
}

/// Runs a study from config JSON and writes its artifacts. `out_dir` may be
/// NULL to use the config's directory. `failed` receives the number of
/// failed checks; the call itself succeeds when the study ran.
#[no_mangle]
pub unsafe extern "C" fn nl_run_config(
    config_json: *const c_char,
    command: NlCommand,
    out_dir: *const c_char,
    failed: *mut usize,
) -> NlStatus {
    guard(|| {
        if failed.is_null() {
            return Err(null("failed"));
        }
        let config = ExperimentConfig::from_json(str_arg(config_json, "config_json")?).map_err(fail)?;
        let out = if out_dir.is_null() {
            None
        } else {
            Some(PathBuf::from(str_arg(out_dir, "out_dir")?))
        };
        let command = match command {
            NlCommand::Run => Command::Run,
            NlCommand::Verify => Command::Verify,
            NlCommand::Scaling => Command::Scaling,
            NlCommand::PhaseProxy => Command::PhaseProxy,
        };
        let overrides = Overrides {
            out,
            ..Overrides::default()
        };
        let outcome = study::execute(command, &config, &overrides).map_err(fail)?;
        write_out(failed, outcome.failed)
    })
}
