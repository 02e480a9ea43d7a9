//! C ABI over the gaussmon library.
//!
//! Every fallible function returns a [`GmStatus`]. On failure a message is
//! stored per thread and can be read with [`gm_last_error_message`]. Output
//! pointers are written only on success. Panics are caught at the boundary
//! and reported as [`GmStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use gaussmon::dynamics::{integrate_riccati, CovTrajectory, TransientSolver};
use gaussmon::steady_state::{
    purity_interval, solve_strengths_for_purity, steady_state_covariance, zero_correlation_ratio,
};
use gaussmon::{
    build_system_matrices, DetectorConfig, Efficiencies, Error, OscillatorParams, SteadyStateSolution,
    SymMat2, SystemMatrices,
};

/// Status codes; the numeric values of 0, 2 and 3 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NumericalFailure = 3,
    Precondition = 4,
    Panic = 5,
}

/// Oscillator and detector parameters.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmParams {
    pub m: f64,
    pub omega: f64,
    pub hbar: f64,
    pub k_x: f64,
    pub k_p: f64,
    pub eta_x: f64,
    pub eta_p: f64,
}

/// Symmetric 2×2 covariance `[[v_x, c], [c, v_p]]`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmCovariance {
    pub v_x: f64,
    pub c: f64,
    pub v_p: f64,
}

/// Stationary solution. `gamma` is the relaxation matrix in row-major order.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmSteadyState {
    pub v_x_inf: f64,
    pub c_inf: f64,
    pub v_p_inf: f64,
    pub d_inf: f64,
    pub p_inf: f64,
    pub gamma: [f64; 4],
    pub sin_theta: f64,
    pub residual: f64,
}

/// Interval of attainable stationary purities.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmPurityInterval {
    pub lo: f64,
    pub hi: f64,
}

/// Opaque model handle: parameters plus the precomputed stationary solution.
pub struct GmModel {
    osc: OscillatorParams,
    sys: SystemMatrices,
    steady: SteadyStateSolution,
}

/// Opaque handle to an integrated covariance path.
pub struct GmCovTrajectory {
    inner: CovTrajectory,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> GmStatus {
    match e {
        Error::InvalidArgument { .. } | Error::OutOfRange { .. } => GmStatus::InvalidArgument,
        Error::Precondition(_) => GmStatus::Precondition,
        Error::Singular(_) | Error::NumericalFailure(_) => GmStatus::NumericalFailure,
    }
}

/// Runs `f`, recording error messages and converting panics.
fn guard<F: FnOnce() -> Result<(), (GmStatus, String)>>(f: F) -> GmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            GmStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            GmStatus::Panic
        }
    }
}

fn lib<T>(r: gaussmon::Result<T>) -> Result<T, (GmStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(name: &str) -> (GmStatus, String) {
    (GmStatus::NullPointer, format!("{name} is null"))
}

unsafe fn deref<'a, T>(p: *const T, name: &str) -> Result<&'a T, (GmStatus, String)> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, (GmStatus, String)> {
    p.as_mut().ok_or_else(|| null(name))
}

fn sym(c: &GmCovariance) -> SymMat2 {
    SymMat2::new(c.v_x, c.c, c.v_p)
}

fn cov(s: &SymMat2) -> GmCovariance {
    GmCovariance {
        v_x: s.xx,
        c: s.xp,
        v_p: s.pp,
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn gm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Validates `params`, solves the stationary problem and returns a new handle.
///
/// # Safety
/// `params` must point to a valid `GmParams`; `out_model` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gm_model_new(params: *const GmParams, out_model: *mut *mut GmModel) -> GmStatus {
    guard(|| {
        let p = deref(params, "params")?;
        let dst = out(out_model, "out_model")?;
        let osc = lib(OscillatorParams::new(p.m, p.omega, p.hbar))?;
        let det = lib(DetectorConfig::new(p.k_x, p.k_p, p.eta_x, p.eta_p))?;
        let sys = lib(build_system_matrices(&osc, &det))?;
        let steady = lib(steady_state_covariance(&osc, &det))?;
        *dst = Box::into_raw(Box::new(GmModel { osc, sys, steady }));
        Ok(())
    })
}

/// Releases a model handle; null is ignored.
///
/// # Safety
/// `model` must come from `gm_model_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gm_model_free(model: *mut GmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; `out_state` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gm_model_steady_state(model: *const GmModel, out_state: *mut GmSteadyState) -> GmStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let dst = out(out_state, "out_state")?;
        let s = &m.steady;
        *dst = GmSteadyState {
            v_x_inf: s.v_x_inf(),
            c_inf: s.c_inf(),
            v_p_inf: s.v_p_inf(),
            d_inf: s.d_inf,
            p_inf: s.p_inf,
            gamma: s.gamma_mat.row_major(),
            sin_theta: s.sin_theta,
            residual: s.residual,
        };
        Ok(())
    })
}

/// Closed-form covariance at time `t` from `sigma0`, which must dominate
/// the stationary covariance (`GM_STATUS_PRECONDITION` otherwise).
///
/// # Safety
/// `model` must be a live handle; `sigma0` readable; `out_sigma` writable.
#[no_mangle]
pub unsafe extern "C" fn gm_model_transient(
    model: *const GmModel,
    sigma0: *const GmCovariance,
    t: f64,
    out_sigma: *mut GmCovariance,
) -> GmStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let s0 = sym(deref(sigma0, "sigma0")?);
        let dst = out(out_sigma, "out_sigma")?;
        let solver = lib(TransientSolver::new(&s0, &m.steady, &m.sys))?;
        *dst = cov(&lib(solver.at(t))?);
        Ok(())
    })
}

/// RK4 integration of the Riccati equation on `[0, t_final]` with step `dt`.
///
/// # Safety
/// `model` must be a live handle; `sigma0` readable; `out_traj` writable.
#[no_mangle]
pub unsafe extern "C" fn gm_model_integrate(
    model: *const GmModel,
    sigma0: *const GmCovariance,
    t_final: f64,
    dt: f64,
    out_traj: *mut *mut GmCovTrajectory,
) -> GmStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let s0 = sym(deref(sigma0, "sigma0")?);
        let dst = out(out_traj, "out_traj")?;
        let inner = lib(integrate_riccati(&s0, &m.sys, t_final, dt))?;
        *dst = Box::into_raw(Box::new(GmCovTrajectory { inner }));
        Ok(())
    })
}

/// Reduced Planck constant the model was built with.
///
/// # Safety
/// `model` must be a live handle; `out_hbar` writable.
#[no_mangle]
pub unsafe extern "C" fn gm_model_hbar(model: *const GmModel, out_hbar: *mut f64) -> GmStatus {
    guard(|| {
        let m = deref(model, "model")?;
        *out(out_hbar, "out_hbar")? = m.osc.hbar;
        Ok(())
    })
}

/// Number of samples in a trajectory; 0 for null.
///
/// # Safety
/// `traj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gm_trajectory_len(traj: *const GmCovTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.inner.len())
}

/// Time and covariance of sample `index`.
///
/// # Safety
/// `traj` must be a live handle; `out_t` and `out_sigma` writable.
#[no_mangle]
pub unsafe extern "C" fn gm_trajectory_get(
    traj: *const GmCovTrajectory,
    index: usize,
    out_t: *mut f64,
    out_sigma: *mut GmCovariance,
) -> GmStatus {
    guard(|| {
        let t = &deref(traj, "traj")?.inner;
        let dt = out(out_t, "out_t")?;
        let ds = out(out_sigma, "out_sigma")?;
        if index >= t.len() {
            return Err((
                GmStatus::InvalidArgument,
                format!("index {index} out of range for trajectory of length {}", t.len()),
            ));
        }
        *dt = t.times[index];
        *ds = cov(&t.covs[index]);
        Ok(())
    })
}

/// Releases a trajectory handle; null is ignored.
///
/// # Safety
/// `traj` must come from `gm_model_integrate` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gm_trajectory_free(traj: *mut GmCovTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// `(√min η, √max η)`.
///
/// # Safety
/// `out_interval` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gm_purity_interval(eta_x: f64, eta_p: f64, out_interval: *mut GmPurityInterval) -> GmStatus {
    guard(|| {
        let dst = out(out_interval, "out_interval")?;
        let i = purity_interval(&lib(Efficiencies::new(eta_x, eta_p))?);
        *dst = GmPurityInterval { lo: i.lo, hi: i.hi };
        Ok(())
    })
}

/// Strength ratio at which the stationary correlation vanishes.
///
/// # Safety
/// `out_ratio` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gm_zero_correlation_ratio(
    m: f64,
    omega: f64,
    eta_x: f64,
    eta_p: f64,
    out_ratio: *mut f64,
) -> GmStatus {
    guard(|| {
        let dst = out(out_ratio, "out_ratio")?;
        // ħ does not enter the ratio
        let osc = lib(OscillatorParams::new(m, omega, 1.0))?;
        let eff = lib(Efficiencies::new(eta_x, eta_p))?;
        *dst = zero_correlation_ratio(&osc, &eff);
        Ok(())
    })
}

/// Strength product and ratio reaching `target_purity`. A nonpositive
/// `q_hint` selects the library default.
///
/// # Safety
/// `out_q` and `out_s` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gm_solve_strengths(
    target_purity: f64,
    m: f64,
    omega: f64,
    hbar: f64,
    eta_x: f64,
    eta_p: f64,
    q_hint: f64,
    out_q: *mut f64,
    out_s: *mut f64,
) -> GmStatus {
    guard(|| {
        let dq = out(out_q, "out_q")?;
        let ds = out(out_s, "out_s")?;
        let osc = lib(OscillatorParams::new(m, omega, hbar))?;
        let eff = lib(Efficiencies::new(eta_x, eta_p))?;
        let hint = (q_hint > 0.0).then_some(q_hint);
        let c = lib(solve_strengths_for_purity(target_purity, &osc, &eff, hint))?;
        *dq = c.q;
        *ds = c.s;
        Ok(())
    })
}
