//! C ABI over `maryland_core`.
//!
//! Every fallible call returns an [`MlStatus`]; results go through out
//! pointers. On failure the message is kept per thread and can be read with
//! [`ml_last_error_message`]. Handles are opaque and freed by the matching
//! `*_free` function; freeing NULL is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use maryland_core::blockdiag::HomotopyOptions;
use maryland_core::movingblock::{example_by_name, verify_setup, ExampleSetup, MovingBlockRun};
use maryland_core::operator::build_h;
use maryland_core::perturbation::rs_series;
use maryland_core::{Error, FiniteOperator, FrequencyVector, LatticeBox, SamplingFunction};

/// Result codes of every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    /// A geometric or regularity hypothesis does not hold.
    HypothesisFailed = 4,
    /// Gap collapse, degenerate diagonal, lost branch and similar.
    Numerical = 5,
    Panic = 6,
}

/// A sampling function f.
pub struct MlSampling(SamplingFunction);

/// A finite-volume operator H(x) on a box.
pub struct MlOperator(FiniteOperator);

/// A library example: sampling function, frequency and blocks.
pub struct MlExample(ExampleSetup);

/// Moving-block families of an example built at one eps.
pub struct MlRun(MovingBlockRun);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MlStatus {
    match e {
        Error::InvalidSampling(_)
        | Error::InvalidFrequency(_)
        | Error::NearRational { .. }
        | Error::InvalidBox(_)
        | Error::FrameMismatch(_)
        | Error::InvalidInput(_)
        | Error::Manifest(_)
        | Error::Io(_) => MlStatus::InvalidArgument,
        Error::HypothesisViolation(_)
        | Error::Gen2Violation { .. }
        | Error::Gen3Violation { .. }
        | Error::Gen4Violation { .. }
        | Error::SeparationViolation { .. }
        | Error::CovarianceMismatch { .. } => MlStatus::HypothesisFailed,
        _ => MlStatus::Numerical,
    }
}

/// Runs `body`, recording the error message and mapping panics.
fn guard(body: impl FnOnce() -> Result<(), (MlStatus, String)>) -> MlStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MlStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside maryland".into());
            MlStatus::Panic
        }
    }
}

fn core<T>(r: maryland_core::Result<T>) -> Result<T, (MlStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (MlStatus, String) {
    (MlStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (MlStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (MlStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> Result<(), (MlStatus, String)> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ml_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Length in bytes of the last error message on this thread, excluding the
/// terminating NUL; 0 when the last call succeeded.
#[no_mangle]
pub extern "C" fn ml_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |c| c.as_bytes().len()))
}

/// Copies the last error message, NUL-terminated, into `buf`.
///
/// # Safety
/// `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ml_last_error_message(buf: *mut c_char, len: usize) -> MlStatus {
    if buf.is_null() {
        return MlStatus::NullPointer;
    }
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_ref().map_or(&[][..], |c| c.as_bytes());
        if bytes.len() + 1 > len {
            return MlStatus::BufferTooSmall;
        }
        ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, bytes.len());
        *buf.add(bytes.len()) = 0;
        MlStatus::Ok
    })
}

/// f(x) = scale * tan(pi x).
///
/// # Safety
/// `out` must be a valid pointer to write a handle to.
#[no_mangle]
pub unsafe extern "C" fn ml_sampling_tangent(scale: f64, out: *mut *mut MlSampling) -> MlStatus {
    guard(|| {
        let f = core(SamplingFunction::tangent(scale))?;
        write(out, Box::into_raw(Box::new(MlSampling(f))), "out")
    })
}

/// One flat piece `[left, left + length]` at `value` with tangent flanks.
/// Pass infinity for `e_reg` to skip the large-value regularity floor.
///
/// # Safety
/// `out` must be a valid pointer to write a handle to.
#[no_mangle]
pub unsafe extern "C" fn ml_sampling_single_flat(
    left: f64,
    length: f64,
    value: f64,
    scale: f64,
    e_reg: f64,
    out: *mut *mut MlSampling,
) -> MlStatus {
    guard(|| {
        let f = core(SamplingFunction::single_flat(left, length, value, scale, e_reg))?;
        write(out, Box::into_raw(Box::new(MlSampling(f))), "out")
    })
}

/// # Safety
/// `f` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ml_sampling_eval(f: *const MlSampling, x: f64, out: *mut f64) -> MlStatus {
    guard(|| {
        let f = handle(f, "f")?;
        write(out, core(f.0.eval(x))?, "out")
    })
}

/// # Safety
/// `f` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ml_sampling_free(f: *mut MlSampling) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// H(x) = eps * Laplacian + f(x + omega.n) on the box `[lo, hi]` in `dim`
/// dimensions.
///
/// # Safety
/// `omega`, `lo` and `hi` must each point to `dim` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ml_operator_build(
    f: *const MlSampling,
    omega: *const f64,
    lo: *const i64,
    hi: *const i64,
    dim: usize,
    eps: f64,
    x: f64,
    out: *mut *mut MlOperator,
) -> MlStatus {
    guard(|| {
        let f = handle(f, "f")?;
        let omega = core(FrequencyVector::unchecked(slice(omega, dim, "omega")?.to_vec()))?;
        let bx = core(LatticeBox::new(slice(lo, dim, "lo")?.to_vec(), slice(hi, dim, "hi")?.to_vec()))?;
        let h = core(build_h(&f.0, &omega, eps, x, &bx))?;
        write(out, Box::into_raw(Box::new(MlOperator(h))), "out")
    })
}

/// Number of sites of the operator's box; 0 for NULL.
///
/// # Safety
/// `op` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ml_operator_dim(op: *const MlOperator) -> usize {
    op.as_ref().map_or(0, |h| h.0.dim())
}

/// Sorted eigenvalues into `out`, which must hold `ml_operator_dim(op)` values.
///
/// # Safety
/// `op` must be a live handle and `out` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn ml_operator_eigenvalues(op: *const MlOperator, out: *mut f64, len: usize) -> MlStatus {
    guard(|| {
        let h = handle(op, "op")?;
        if len < h.0.dim() {
            return Err((MlStatus::BufferTooSmall, format!("need {} values, got {len}", h.0.dim())));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let vals = h.0.eigenvalues();
        ptr::copy_nonoverlapping(vals.as_ptr(), out, vals.len());
        Ok(())
    })
}

/// Rayleigh-Schrödinger energy through `order`, anchored at site `base`.
///
/// # Safety
/// `op` must be a live handle, `base` must point to `dim` values and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn ml_operator_series_energy(
    op: *const MlOperator,
    base: *const i64,
    dim: usize,
    order: usize,
    out: *mut f64,
) -> MlStatus {
    guard(|| {
        let h = handle(op, "op")?;
        let coeffs = core(rs_series(&h.0, slice(base, dim, "base")?, order))?;
        write(out, coeffs.energy_sum(h.0.eps()), "out")
    })
}

/// # Safety
/// `op` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ml_operator_free(op: *mut MlOperator) {
    if !op.is_null() {
        drop(Box::from_raw(op));
    }
}

/// Looks up a library example ("example1", "example5-k2", ...).
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ml_example_new(name: *const c_char, out: *mut *mut MlExample) -> MlStatus {
    guard(|| {
        if name.is_null() {
            return Err(null("name"));
        }
        let name = CStr::from_ptr(name)
            .to_str()
            .map_err(|e| (MlStatus::InvalidArgument, format!("name is not UTF-8: {e}")))?;
        let setup = core(example_by_name(name))?;
        write(out, Box::into_raw(Box::new(MlExample(setup))), "out")
    })
}

/// Runs the hypothesis checklist. `passed` receives whether every item holds;
/// the first failing item is reported as the last error.
///
/// # Safety
/// `ex` must be a live handle and `passed` writable.
#[no_mangle]
pub unsafe extern "C" fn ml_example_verify(ex: *const MlExample, eps: f64, grid_points: usize, passed: *mut bool) -> MlStatus {
    let mut failure = None;
    let status = guard(|| {
        let ex = handle(ex, "ex")?;
        let report = verify_setup(&ex.0, eps, grid_points, true);
        failure = report.first_failure().map(|i| format!("{} fails: {}", i.name, i.witness));
        write(passed, report.all_passed(), "passed")
    });
    if let Some(msg) = failure {
        set_error(msg);
    }
    status
}

/// Builds the moving-block families at `eps` on a `grid_points` phase grid.
///
/// # Safety
/// `ex` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ml_example_build(ex: *const MlExample, eps: f64, grid_points: usize, out: *mut *mut MlRun) -> MlStatus {
    guard(|| {
        let ex = handle(ex, "ex")?;
        let run = core(ex.0.build(eps, grid_points, &HomotopyOptions::default()))?;
        write(out, Box::into_raw(Box::new(MlRun(run))), "out")
    })
}

/// # Safety
/// `ex` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ml_example_free(ex: *mut MlExample) {
    if !ex.is_null() {
        drop(Box::from_raw(ex));
    }
}

/// Number of blocks in a run; 0 for NULL.
///
/// # Safety
/// `run` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ml_run_block_count(run: *const MlRun) -> usize {
    run.as_ref().map_or(0, |r| r.0.families.len())
}

/// Smallest singular-block eigenvalue gap of `block`, in units of eps.
///
/// # Safety
/// `run` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ml_run_separation(run: *const MlRun, block: usize, out: *mut f64) -> MlStatus {
    guard(|| {
        let r = handle(run, "run")?;
        let fam = r.0.families.get(block).ok_or_else(|| {
            (MlStatus::InvalidArgument, format!("block {block} out of range ({} blocks)", r.0.families.len()))
        })?;
        write(out, fam.separation, "out")
    })
}

/// f2'(y) after conjugation, at a phase `y` covered by one of the blocks.
///
/// # Safety
/// `run` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ml_run_f2_prime(run: *const MlRun, phase: f64, out: *mut f64) -> MlStatus {
    guard(|| {
        let r = handle(run, "run")?;
        write(out, core(r.0.f2_prime_at_phase(phase))?, "out")
    })
}

/// # Safety
/// `run` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ml_run_free(run: *mut MlRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_mapping() {
        assert_eq!(status_of(&Error::InvalidBox("x".into())), MlStatus::InvalidArgument);
        assert_eq!(status_of(&Error::Gen4Violation { first: "a".into(), second: "b".into() }), MlStatus::HypothesisFailed);
        assert_eq!(status_of(&Error::GapTooSmall { gap: 0.0 }), MlStatus::Numerical);
    }

    #[test]
    fn panics_are_contained() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, MlStatus::Panic);
        assert!(ml_last_error_length() > 0);
    }
}
