//! C ABI over the `nifm` library.
//!
//! Models and fields are opaque handles created by `*_load`/`*_new`
//! functions and released with the matching `*_free`. Every fallible call
//! returns an [`NifmStatus`]; on failure the message is kept per thread and
//! can be copied out with [`nifm_last_error`]. Arrays are row-major `f64`
//! with `n * dim` entries for positions.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use ndarray::ArrayView2;
use nifm::analysis::{ftle, FlowMapProvider};
use nifm::error::Error;
use nifm::field::{load_grid, AnalyticField, VectorField, VectorFieldSource};
use nifm::model::{load_checkpoint, NifmModel as Model, StepPolicy};
use nifm::oracle::{IntegratorSpec, Scheme};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NifmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    DimensionMismatch = 5,
    NonFinite = 6,
    Panic = 7,
}

/// A trained flow-map model.
pub struct NifmModel {
    inner: Model,
}

/// A vector field, analytic or gridded.
pub struct NifmField {
    inner: VectorFieldSource,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> NifmStatus {
    match e {
        Error::Io { .. } => NifmStatus::Io,
        Error::MalformedHeader(_)
        | Error::VersionMismatch { .. }
        | Error::BadMagic { .. }
        | Error::Truncated { .. }
        | Error::ShapeMismatch { .. }
        | Error::InvalidGrid(_)
        | Error::Json(_) => NifmStatus::Format,
        Error::DimensionMismatch { .. } | Error::UnsupportedDimension(_) => NifmStatus::DimensionMismatch,
        Error::NonFiniteState { .. } | Error::NonFiniteTensor(_) | Error::Diverged { .. } => NifmStatus::NonFinite,
        Error::InvalidArgument(_) | Error::InvalidDomain(_) | Error::Config(_) | Error::Infeasible(_) => {
            NifmStatus::InvalidArgument
        }
    }
}

struct Fail(NifmStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(NifmStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(NifmStatus::InvalidArgument, msg.into())
}

/// Runs `f`, records any failure and converts panics into `Panic`.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NifmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            NifmStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("panic: {msg}"));
            NifmStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

fn policy_from(code: u32) -> Result<StepPolicy, Fail> {
    StepPolicy::ALL
        .get(code as usize)
        .copied()
        .ok_or_else(|| invalid(format!("unknown step policy {code}")))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Version string of the library; static, never freed.
#[no_mangle]
pub extern "C" fn nifm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated and
/// always NUL-terminated when `len > 0`). Returns the full message length
/// without the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn nifm_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let bytes = e.borrow();
        let bytes = bytes.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Loads a checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nifm_model_load(path: *const c_char, out: *mut *mut NifmModel) -> NifmStatus {
    guard(|| {
        let path = path_arg(path)?;
        let model = load_checkpoint(&path)?;
        store(out, NifmModel { inner: model })
    })
}

/// # Safety
/// `model` must be null or a handle from [`nifm_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nifm_model_free(model: *mut NifmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Spatial dimension of the model (2 or 3), or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nifm_model_dim(model: *const NifmModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.dim())
}

/// Number of trainable parameters, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nifm_model_param_count(model: *const NifmModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.param_count())
}

/// Flow-map endpoints of `n` queries, composed according to `policy`
/// (0 sqrt, 1 full, 2 log, 3 single).
///
/// # Safety
/// `x` and `out` hold `n * dim` values; `t` and `tau` hold `n`.
#[no_mangle]
pub unsafe extern "C" fn nifm_model_flow_map(
    model: *const NifmModel,
    policy: u32,
    x: *const f64,
    t: *const f64,
    tau: *const f64,
    n: usize,
    out: *mut f64,
) -> NifmStatus {
    guard(|| {
        let m = &handle(model, "model")?.inner;
        let d = m.dim();
        let provider = FlowMapProvider::neural(m, policy_from(policy)?);
        evaluate(&provider, d, x, t, tau, n, out)
    })
}

/// Instantaneous velocity predicted by the model at `n` points.
///
/// # Safety
/// `x` and `out` hold `n * dim` values; `t` holds `n`.
#[no_mangle]
pub unsafe extern "C" fn nifm_model_velocity(
    model: *const NifmModel,
    x: *const f64,
    t: *const f64,
    n: usize,
    out: *mut f64,
) -> NifmStatus {
    guard(|| {
        let m = &handle(model, "model")?.inner;
        let d = m.dim();
        let xs = slice(x, n * d, "x")?;
        let ts = slice(t, n, "t")?;
        let out = slice_mut(out, n * d, "out")?;
        let xs = ArrayView2::from_shape((n, d), xs).map_err(|e| invalid(e.to_string()))?;
        let v = m.velocity_batch(xs, ts);
        out.iter_mut().zip(v.iter()).for_each(|(o, v)| *o = *v);
        Ok(())
    })
}

/// FTLE of a 2D model over its domain on an `nx * ny` node grid (x fastest).
///
/// # Safety
/// `out` must hold `nx * ny` values.
#[no_mangle]
pub unsafe extern "C" fn nifm_model_ftle(
    model: *const NifmModel,
    policy: u32,
    t0: f64,
    tau: f64,
    nx: usize,
    ny: usize,
    out: *mut f64,
) -> NifmStatus {
    guard(|| {
        let m = &handle(model, "model")?.inner;
        if m.dim() != 2 {
            return Err(Fail(NifmStatus::DimensionMismatch, "FTLE images need a 2D model".into()));
        }
        let out = slice_mut(out, nx * ny, "out")?;
        let grid = ftle(&FlowMapProvider::neural(m, policy_from(policy)?), t0, tau, &[nx, ny], None)?;
        out.iter_mut().zip(&grid.values).for_each(|(o, v)| *o = *v as f64);
        Ok(())
    })
}

/// Loads a gridded field file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nifm_field_load(path: *const c_char, out: *mut *mut NifmField) -> NifmStatus {
    guard(|| {
        let path = path_arg(path)?;
        let field = load_grid(&path)?;
        store(out, NifmField { inner: field.into() })
    })
}

/// The analytic double gyre on `[0,2]x[0,1]`, `t` in `[0,10]`, with
/// `time_nodes` nodes defining its temporal grid unit.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nifm_field_double_gyre(time_nodes: usize, out: *mut *mut NifmField) -> NifmStatus {
    guard(|| {
        if time_nodes < 2 {
            return Err(invalid("time_nodes must be at least 2"));
        }
        store(
            out,
            NifmField {
                inner: AnalyticField::double_gyre(time_nodes).into(),
            },
        )
    })
}

/// # Safety
/// `field` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nifm_field_free(field: *mut NifmField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// # Safety
/// `field` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nifm_field_dim(field: *const NifmField) -> usize {
    field.as_ref().map_or(0, |f| f.inner.dim())
}

/// Velocity at `n` points; gridded fields clamp to their domain.
///
/// # Safety
/// `x` and `out` hold `n * dim` values; `t` holds `n`.
#[no_mangle]
pub unsafe extern "C" fn nifm_field_sample(
    field: *const NifmField,
    x: *const f64,
    t: *const f64,
    n: usize,
    out: *mut f64,
) -> NifmStatus {
    guard(|| {
        let f = &handle(field, "field")?.inner;
        let d = f.dim();
        let xs = slice(x, n * d, "x")?;
        let ts = slice(t, n, "t")?;
        let out = slice_mut(out, n * d, "out")?;
        for i in 0..n {
            f.sample_into(&xs[i * d..(i + 1) * d], ts[i], &mut out[i * d..(i + 1) * d]);
        }
        Ok(())
    })
}

/// Reference RK4 endpoints with step `h` (`h <= 0` selects half a temporal
/// grid unit).
///
/// # Safety
/// `x` and `out` hold `n * dim` values; `t` and `tau` hold `n`.
#[no_mangle]
pub unsafe extern "C" fn nifm_field_integrate(
    field: *const NifmField,
    h: f64,
    x: *const f64,
    t: *const f64,
    tau: *const f64,
    n: usize,
    out: *mut f64,
) -> NifmStatus {
    guard(|| {
        let f = &handle(field, "field")?.inner;
        let spec = if h > 0.0 {
            IntegratorSpec::new(Scheme::Rk4, h)?
        } else {
            IntegratorSpec::default_for(f.grid_units())
        };
        let provider = FlowMapProvider::oracle(f, spec);
        evaluate(&provider, f.dim(), x, t, tau, n, out)
    })
}

unsafe fn evaluate(
    provider: &FlowMapProvider,
    d: usize,
    x: *const f64,
    t: *const f64,
    tau: *const f64,
    n: usize,
    out: *mut f64,
) -> Result<(), Fail> {
    let xs = slice(x, n * d, "x")?;
    let ts = slice(t, n, "t")?;
    let taus = slice(tau, n, "tau")?;
    let out = slice_mut(out, n * d, "out")?;
    if n == 0 {
        return Ok(());
    }
    let xs = ArrayView2::from_shape((n, d), xs).map_err(|e| invalid(e.to_string()))?;
    let end = provider.evaluate(xs, ts, taus)?;
    out.iter_mut().zip(end.iter()).for_each(|(o, v)| *o = *v);
    Ok(())
}
