//! C interface to the surrogate LQR optimizer.
//!
//! Systems and surrogate models are opaque heap handles released with the
//! matching `*_free` function. Every fallible call returns a [`PceStatus`];
//! the message for the most recent failure on the calling thread is
//! available from [`pce_last_error`]. Matrices are passed as row-major
//! `double` arrays. Weight pointers may be null to select identity weights.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DMatrix;
use pce_lqr::config::{Preset, RunConfig};
use pce_lqr::optimizer::{self, LineSearch, OptimizerConfig, Termination};
use pce_lqr::surrogate::{self, SurrogateModel};
use pce_lqr::system::ParametricSystem;
use pce_lqr::{validation, Error};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PceStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Inadmissible = 4,
    Numerical = 5,
    Panic = 6,
}

/// How an optimization run ended.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PceTermination {
    Converged = 0,
    MaxIters = 1,
    StepRejected = 2,
}

/// A parametric plant together with its LQR weights.
pub struct PceSystem {
    system: ParametricSystem,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

/// A Galerkin surrogate of fixed order built from a [`PceSystem`].
pub struct PceModel {
    model: SurrogateModel,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

/// Optimization settings. Obtain defaults from [`pce_optimizer_defaults`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PceOptimizerSettings {
    pub step_size: f64,
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Non-zero selects Armijo backtracking instead of a fixed step.
    pub armijo: i32,
}

/// Summary of an optimization run.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PceOptimizeResult {
    pub cost: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub termination: PceTermination,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(PceStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Inadmissible { .. } | Error::NotHurwitz { .. } | Error::Unstabilizable(_) => {
                PceStatus::Inadmissible
            }
            Error::Config(_) | Error::InvalidInterval { .. } | Error::NotPositiveDefinite(_) => {
                PceStatus::Config
            }
            Error::Dimension(_)
            | Error::ParameterDimension(_)
            | Error::NonFinite
            | Error::EmptyQuadrature => PceStatus::InvalidArgument,
            _ => PceStatus::Numerical,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PceStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PceStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PceStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PceStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be null or point to `rows * cols` readable doubles.
unsafe fn read_matrix(
    ptr: *const f64,
    rows: usize,
    cols: usize,
    what: &str,
) -> Result<DMatrix<f64>, Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    let data = std::slice::from_raw_parts(ptr, rows * cols);
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Failure(
            PceStatus::InvalidArgument,
            format!("{what} has non-finite entries"),
        ));
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

/// # Safety
/// `ptr` must point to `m.len()` writable doubles.
unsafe fn write_matrix(m: &DMatrix<f64>, ptr: *mut f64) {
    let out = std::slice::from_raw_parts_mut(ptr, m.len());
    for (i, v) in out.iter_mut().enumerate() {
        *v = m[(i / m.ncols(), i % m.ncols())];
    }
}

/// # Safety
/// See [`read_matrix`]; null selects the identity.
unsafe fn read_weight(ptr: *const f64, n: usize, what: &str) -> Result<DMatrix<f64>, Failure> {
    if ptr.is_null() {
        Ok(DMatrix::identity(n, n))
    } else {
        let m = read_matrix(ptr, n, n, what)?;
        pce_lqr::linalg::check_spd(&m, what, 1e-12)?;
        Ok(m)
    }
}

/// # Safety
/// `s` must be a valid NUL-terminated string.
unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Failure(PceStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pce_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pce_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a compiled-in plant (`"illustrative"`, `"mass-spring"` or
/// `"scalar"`) with identity weights.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pce_system_preset(
    name: *const c_char,
    out: *mut *mut PceSystem,
) -> PceStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let preset = Preset::parse(read_str(name, "name")?)?;
        let system = preset.system();
        let (nx, nu) = (system.nx(), system.nu());
        *out = Box::into_raw(Box::new(PceSystem {
            system,
            q: DMatrix::identity(nx, nx),
            r: DMatrix::identity(nu, nu),
        }));
        Ok(())
    })
}

/// Creates a plant and weights from a TOML run configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pce_system_from_toml(
    toml: *const c_char,
    out: *mut *mut PceSystem,
) -> PceStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let problem = RunConfig::from_toml_str(read_str(toml, "toml")?)?.build()?;
        *out = Box::into_raw(Box::new(PceSystem {
            system: problem.system,
            q: problem.q,
            r: problem.r,
        }));
        Ok(())
    })
}

/// Replaces the weights; null selects the identity.
///
/// # Safety
/// `sys` must be a live handle; `q` and `r` null or `nx*nx` / `nu*nu` doubles.
#[no_mangle]
pub unsafe extern "C" fn pce_system_set_weights(
    sys: *mut PceSystem,
    q: *const f64,
    r: *const f64,
) -> PceStatus {
    guard(|| {
        let sys = sys.as_mut().ok_or_else(|| null("sys"))?;
        let q = read_weight(q, sys.system.nx(), "Q")?;
        let r = read_weight(r, sys.system.nu(), "R")?;
        sys.q = q;
        sys.r = r;
        Ok(())
    })
}

/// Writes the state and input dimensions.
///
/// # Safety
/// `sys` must be a live handle; `nx` and `nu` writable.
#[no_mangle]
pub unsafe extern "C" fn pce_system_dims(
    sys: *const PceSystem,
    nx: *mut usize,
    nu: *mut usize,
) -> PceStatus {
    guard(|| {
        let sys = sys.as_ref().ok_or_else(|| null("sys"))?;
        if nx.is_null() || nu.is_null() {
            return Err(null("dimension output"));
        }
        *nx = sys.system.nx();
        *nu = sys.system.nu();
        Ok(())
    })
}

/// # Safety
/// `sys` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pce_system_free(sys: *mut PceSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// Nominal LQR gain at the interval midpoint, checked against the order
/// `order` surrogate. Writes `nu * nx` doubles to `k_out`.
///
/// # Safety
/// `sys` must be a live handle; `k_out` must hold `nu * nx` doubles.
#[no_mangle]
pub unsafe extern "C" fn pce_initial_gain(
    sys: *const PceSystem,
    order: usize,
    k_out: *mut f64,
) -> PceStatus {
    guard(|| {
        let sys = sys.as_ref().ok_or_else(|| null("sys"))?;
        if k_out.is_null() {
            return Err(null("k_out"));
        }
        let k = optimizer::initial_gain(&sys.system, &sys.q, &sys.r, order, None)?;
        write_matrix(&k, k_out);
        Ok(())
    })
}

/// Expected cost of `k` on the true plant by Gauss–Legendre quadrature
/// with `grid_order` nodes.
///
/// # Safety
/// `sys` must be a live handle, `k` hold `nu * nx` doubles, `cost` writable.
#[no_mangle]
pub unsafe extern "C" fn pce_true_cost(
    sys: *const PceSystem,
    k: *const f64,
    grid_order: usize,
    cost: *mut f64,
) -> PceStatus {
    guard(|| {
        let sys = sys.as_ref().ok_or_else(|| null("sys"))?;
        if cost.is_null() {
            return Err(null("cost"));
        }
        let k = read_matrix(k, sys.system.nu(), sys.system.nx(), "K")?;
        *cost = validation::true_cost(&sys.system, &k, &sys.q, &sys.r, grid_order)?.value;
        Ok(())
    })
}

/// Builds the surrogate of expansion order `order`.
///
/// # Safety
/// `sys` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pce_model_new(
    sys: *const PceSystem,
    order: usize,
    out: *mut *mut PceModel,
) -> PceStatus {
    guard(|| {
        let sys = sys.as_ref().ok_or_else(|| null("sys"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let model = surrogate::build_surrogate_auto(&sys.system, order)?;
        *out = Box::into_raw(Box::new(PceModel {
            model,
            q: sys.q.clone(),
            r: sys.r.clone(),
        }));
        Ok(())
    })
}

/// Size of the lifted state, `(order + 1) * nx`.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pce_model_lifted_dim(model: *const PceModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.lifted_dim())
}

/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pce_model_free(model: *mut PceModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Surrogate cost at `k` and, when `grad_out` is non-null, its gradient.
///
/// # Safety
/// `model` must be a live handle, `k` hold `nu * nx` doubles, `cost`
/// writable, and `grad_out` null or room for `nu * nx` doubles.
#[no_mangle]
pub unsafe extern "C" fn pce_evaluate(
    model: *const PceModel,
    k: *const f64,
    cost: *mut f64,
    grad_out: *mut f64,
) -> PceStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if cost.is_null() {
            return Err(null("cost"));
        }
        let k = read_matrix(k, m.model.nu(), m.model.nx(), "K")?;
        let ev = surrogate::evaluate(&m.model, &k, &m.q, &m.r)?;
        *cost = ev.cost;
        if !grad_out.is_null() {
            write_matrix(&ev.gradient, grad_out);
        }
        Ok(())
    })
}

/// Default settings: step 0.01, gradient tolerance 1e-3, 100000 iterations,
/// fixed step.
#[no_mangle]
pub extern "C" fn pce_optimizer_defaults() -> PceOptimizerSettings {
    let d = OptimizerConfig::default();
    PceOptimizerSettings {
        step_size: d.step_size,
        grad_tol: d.grad_tol,
        max_iters: d.max_iters,
        armijo: 0,
    }
}

/// Gradient descent from `k0`; writes the final gain to `k_out`.
///
/// # Safety
/// `model` must be a live handle, `settings` and `result` valid pointers,
/// `k0` and `k_out` each `nu * nx` doubles (they may alias).
#[no_mangle]
pub unsafe extern "C" fn pce_optimize(
    model: *const PceModel,
    k0: *const f64,
    settings: *const PceOptimizerSettings,
    k_out: *mut f64,
    result: *mut PceOptimizeResult,
) -> PceStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let s = settings.as_ref().ok_or_else(|| null("settings"))?;
        if k_out.is_null() || result.is_null() {
            return Err(null("output"));
        }
        let k0 = read_matrix(k0, m.model.nu(), m.model.nx(), "K0")?;
        let cfg = OptimizerConfig {
            step_size: s.step_size,
            grad_tol: s.grad_tol,
            max_iters: s.max_iters,
            line_search: if s.armijo != 0 {
                LineSearch::Armijo {
                    c: 1e-4,
                    shrink: 0.5,
                }
            } else {
                LineSearch::Fixed
            },
            record_every: s.max_iters.max(1),
        };
        let report = optimizer::optimize(&m.model, &k0, &m.q, &m.r, &cfg)?;
        write_matrix(&report.final_gain, k_out);
        *result = PceOptimizeResult {
            cost: report.final_cost,
            grad_norm: report.final_grad_norm,
            iterations: report.iterations,
            termination: match report.termination {
                Termination::Converged => PceTermination::Converged,
                Termination::MaxIters => PceTermination::MaxIters,
                Termination::StepRejected => PceTermination::StepRejected,
            },
        };
        Ok(())
    })
}
