//! C interface to the treediff toolkit.
//!
//! Every function returns a `TdStatus`. On failure a message describing the
//! error can be read with `td_last_error`; it stays valid until the next call
//! on the same thread. Output arrays are caller-allocated and their lengths
//! are checked against the model dimensions.
//!
//! Models are opaque handles created by `td_model_from_json` and released with
//! `td_model_free`. Node labels in the JSON are one-based and global (classes
//! first, then stations); array arguments use zero-based class order, station
//! order and activity order (the order of the `edges` array).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use treediff::det::offtree_counterexample;
use treediff::flow::{drift, lift_control, solve_psi};
use treediff::hjb::hamiltonian;
use treediff::io::ModelFile;
use treediff::model::ControlPoint;
use treediff::sim::{mc_cost, McConfig, Policy};
use treediff::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Structure = 4,
    Balance = 5,
    Numerical = 6,
    Panic = 7,
}

/// Opaque model handle.
pub struct TdModel {
    file: ModelFile,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let clean = msg.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).unwrap_or_default());
}

fn status_of(err: &Error) -> TdStatus {
    match err {
        Error::Json(_) => TdStatus::Parse,
        Error::Structure(_) => TdStatus::Structure,
        Error::Balance { .. } => TdStatus::Balance,
        Error::NotConverged { .. } => TdStatus::Numerical,
        Error::InvalidInput(_) | Error::GridMismatch(_) | Error::Io(_) => TdStatus::InvalidArgument,
    }
}

struct Fail(TdStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

type Step<T> = Result<T, Fail>;

fn guard(f: impl FnOnce() -> Step<()>) -> TdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TdStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            TdStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(TdStatus::NullPointer, format!("{what} is null"))
}

fn arg(msg: impl Into<String>) -> Fail {
    Fail(TdStatus::InvalidArgument, msg.into())
}

unsafe fn model_ref<'a>(model: *const TdModel) -> Step<&'a TdModel> {
    // SAFETY: the caller passes a handle from `td_model_from_json` or null.
    unsafe { model.as_ref() }.ok_or_else(|| null("model"))
}

unsafe fn input<'a>(data: *const f64, len: usize, what: &str) -> Step<&'a [f64]> {
    if data.is_null() {
        if len == 0 {
            return Ok(&[]);
        }
        return Err(null(what));
    }
    // SAFETY: the caller guarantees `len` readable doubles at `data`.
    Ok(unsafe { std::slice::from_raw_parts(data, len) })
}

unsafe fn output<'a>(data: *mut f64, len: usize, what: &str) -> Step<&'a mut [f64]> {
    if data.is_null() {
        return Err(null(what));
    }
    // SAFETY: the caller guarantees `len` writable doubles at `data`.
    Ok(unsafe { std::slice::from_raw_parts_mut(data, len) })
}

fn expect_len(what: &str, got: usize, want: usize) -> Step<()> {
    if got == want {
        Ok(())
    } else {
        Err(arg(format!("{what} has length {got}, expected {want}")))
    }
}

/// Message for the last failed call on this thread; empty after success.
#[no_mangle]
pub extern "C" fn td_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn td_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a model file. On success `*out` owns a new handle.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn td_model_from_json(
    json: *const c_char,
    out: *mut *mut TdModel,
) -> TdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if json.is_null() {
            return Err(null("json"));
        }
        // SAFETY: checked non-null; the caller guarantees NUL termination.
        let text = unsafe { CStr::from_ptr(json) }
            .to_str()
            .map_err(|_| Fail(TdStatus::Parse, "model text is not UTF-8".into()))?;
        let file = ModelFile::from_json_str(text)?;
        let handle = Box::into_raw(Box::new(TdModel { file }));
        // SAFETY: `out` is non-null and writable.
        unsafe { *out = handle };
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from `td_model_from_json` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn td_model_free(model: *mut TdModel) {
    if !model.is_null() {
        // SAFETY: ownership returns from the caller.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Dimensions of the model.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn td_model_dims(
    model: *const TdModel,
    classes: *mut usize,
    stations: *mut usize,
    edges: *mut usize,
) -> TdStatus {
    guard(|| {
        let m = &unsafe { model_ref(model) }?.file.model;
        if classes.is_null() || stations.is_null() || edges.is_null() {
            return Err(null("output"));
        }
        // SAFETY: checked non-null.
        unsafe {
            *classes = m.classes();
            *stations = m.stations();
            *edges = m.edge_count();
        }
        Ok(())
    })
}

/// Runs the full model validation: `*is_valid` receives 1 or 0 and
/// `*violations_out` the number of violations. The status is `Ok` in both
/// cases.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn td_model_validate(
    model: *const TdModel,
    is_valid: *mut i32,
    violations_out: *mut usize,
) -> TdStatus {
    guard(|| {
        let m = &unsafe { model_ref(model) }?.file.model;
        if is_valid.is_null() || violations_out.is_null() {
            return Err(null("output"));
        }
        let report = m.validate();
        // SAFETY: checked non-null.
        unsafe {
            *is_valid = i32::from(report.is_valid());
            *violations_out = report.violations.len();
        }
        Ok(())
    })
}

/// Edge flows with class totals `alpha` and station totals `beta`, written in
/// activity order.
///
/// # Safety
/// Arrays must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn td_solve_psi(
    model: *const TdModel,
    alpha: *const f64,
    n_alpha: usize,
    beta: *const f64,
    n_beta: usize,
    psi_out: *mut f64,
    n_psi: usize,
) -> TdStatus {
    guard(|| {
        let m = &unsafe { model_ref(model) }?.file.model;
        expect_len("alpha", n_alpha, m.classes())?;
        expect_len("beta", n_beta, m.stations())?;
        expect_len("psi", n_psi, m.edge_count())?;
        let alpha = unsafe { input(alpha, n_alpha, "alpha") }?;
        let beta = unsafe { input(beta, n_beta, "beta") }?;
        let out = unsafe { output(psi_out, n_psi, "psi") }?;
        let flows = solve_psi(m, alpha, beta)?;
        out.copy_from_slice(&flows.edge_values(m));
        Ok(())
    })
}

unsafe fn control(u: *const f64, n_u: usize, v: *const f64, n_v: usize) -> Step<ControlPoint> {
    let u = unsafe { input(u, n_u, "u") }?.to_vec();
    let v = unsafe { input(v, n_v, "v") }?.to_vec();
    Ok(ControlPoint::new(u, v)?)
}

/// Drift `b(x, U)`.
///
/// # Safety
/// Arrays must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn td_drift(
    model: *const TdModel,
    x: *const f64,
    n_x: usize,
    u: *const f64,
    n_u: usize,
    v: *const f64,
    n_v: usize,
    b_out: *mut f64,
    n_b: usize,
) -> TdStatus {
    guard(|| {
        let m = &unsafe { model_ref(model) }?.file.model;
        expect_len("x", n_x, m.classes())?;
        expect_len("b", n_b, m.classes())?;
        let x = unsafe { input(x, n_x, "x") }?;
        let c = unsafe { control(u, n_u, v, n_v) }?;
        let out = unsafe { output(b_out, n_b, "b") }?;
        out.copy_from_slice(&drift(m, x, &c)?);
        Ok(())
    })
}

/// Queue, idleness and edge flows of the state `x` under the control.
///
/// # Safety
/// Arrays must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn td_lift_control(
    model: *const TdModel,
    x: *const f64,
    n_x: usize,
    u: *const f64,
    n_u: usize,
    v: *const f64,
    n_v: usize,
    y_out: *mut f64,
    n_y: usize,
    z_out: *mut f64,
    n_z: usize,
    psi_out: *mut f64,
    n_psi: usize,
) -> TdStatus {
    guard(|| {
        let m = &unsafe { model_ref(model) }?.file.model;
        expect_len("x", n_x, m.classes())?;
        expect_len("y", n_y, m.classes())?;
        expect_len("z", n_z, m.stations())?;
        expect_len("psi", n_psi, m.edge_count())?;
        let x = unsafe { input(x, n_x, "x") }?;
        let c = unsafe { control(u, n_u, v, n_v) }?;
        let y = unsafe { output(y_out, n_y, "y") }?;
        let z = unsafe { output(z_out, n_z, "z") }?;
        let psi = unsafe { output(psi_out, n_psi, "psi") }?;
        let lift = lift_control(m, x, &c)?;
        y.copy_from_slice(&lift.y);
        z.copy_from_slice(&lift.z);
        psi.copy_from_slice(&lift.psi.edge_values(m));
        Ok(())
    })
}

/// `H(x, p)` for the model's cost section and a minimizing control.
///
/// # Safety
/// Arrays must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn td_hamiltonian(
    model: *const TdModel,
    x: *const f64,
    p: *const f64,
    n: usize,
    h_out: *mut f64,
    u_out: *mut f64,
    n_u: usize,
    v_out: *mut f64,
    n_v: usize,
) -> TdStatus {
    guard(|| {
        let file = &unsafe { model_ref(model) }?.file;
        let m = &file.model;
        let cost = file.require_cost()?;
        expect_len("x", n, m.classes())?;
        expect_len("u", n_u, m.classes())?;
        expect_len("v", n_v, m.stations())?;
        let x = unsafe { input(x, n, "x") }?;
        let p = unsafe { input(p, n, "p") }?;
        if h_out.is_null() {
            return Err(null("h"));
        }
        let u = unsafe { output(u_out, n_u, "u") }?;
        let v = unsafe { output(v_out, n_v, "v") }?;
        let (h, c) = hamiltonian(m, cost, x, p)?;
        // SAFETY: checked non-null.
        unsafe { *h_out = h };
        u.copy_from_slice(&c.u);
        v.copy_from_slice(&c.v);
        Ok(())
    })
}

/// Monte Carlo discounted cost of the static priority `(class, station)`
/// (zero-based) from `x0`.
///
/// # Safety
/// Arrays must hold the stated number of doubles; outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn td_mc_cost_static(
    model: *const TdModel,
    x0: *const f64,
    n_x: usize,
    class: usize,
    station: usize,
    n_paths: usize,
    dt: f64,
    seed: u64,
    mean_out: *mut f64,
    std_error_out: *mut f64,
) -> TdStatus {
    guard(|| {
        let file = &unsafe { model_ref(model) }?.file;
        let m = &file.model;
        let cost = file.require_cost()?;
        expect_len("x0", n_x, m.classes())?;
        let x0 = unsafe { input(x0, n_x, "x0") }?;
        if mean_out.is_null() || std_error_out.is_null() {
            return Err(null("output"));
        }
        let policy = Policy::StaticPriority { class, station };
        policy.check(m)?;
        let est = mc_cost(m, cost, x0, &policy, &McConfig::new(n_paths, dt, seed))?;
        // SAFETY: checked non-null.
        unsafe {
            *mean_out = est.mean;
            *std_error_out = est.std_error;
        }
        Ok(())
    })
}

/// Largest residual and `sup ||x||` of the non-tree counterexample.
///
/// # Safety
/// Outputs must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn td_counterexample(
    k: f64,
    dt: f64,
    horizon: f64,
    max_residual_out: *mut f64,
    sup_state_norm_out: *mut f64,
) -> TdStatus {
    guard(|| {
        if max_residual_out.is_null() || sup_state_norm_out.is_null() {
            return Err(null("output"));
        }
        let ex = offtree_counterexample(k, dt, horizon)?;
        // SAFETY: checked non-null.
        unsafe {
            *max_residual_out = ex.residuals.max();
            *sup_state_norm_out = ex.sup_state_norm;
        }
        Ok(())
    })
}
