//! Time evolution of the conditional covariance.
//!
//! The covariance follows the deterministic Riccati ODE
//! `Σ̇ = ΣA + AᵀΣ − ΣBBᵀΣ + Q`, independent of the measurement record.
//! [`integrate_riccati`] is the fixed-step numerical reference and
//! [`transient_covariance`] the closed form valid above the stationary point.

use std::io::{self, Write};

use crate::error::{ensure_finite, Error, Result};
use crate::linalg2::{is_positive_definite, mat_exp, solve_lyapunov, Mat2, SymMat2};
use crate::model::SystemMatrices;
use crate::output::{write_header, write_row};
use crate::steady_state::SteadyStateSolution;

/// Default integration step, in units where `ω = 1`.
pub const DEFAULT_DT: f64 = 1e-3;

/// Relative slack in the Robertson–Schrödinger check.
pub const UNCERTAINTY_TOL: f64 = 1e-9;

pub const CSV_HEADER: [&str; 6] = ["t", "v_x", "c", "v_p", "det", "purity"];

/// Sampled covariance path with its determinant and purity columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CovTrajectory {
    pub times: Vec<f64>,
    pub covs: Vec<SymMat2>,
    pub dets: Vec<f64>,
    pub purities: Vec<f64>,
}

impl CovTrajectory {
    fn with_capacity(n: usize) -> Self {
        CovTrajectory {
            times: Vec::with_capacity(n),
            covs: Vec::with_capacity(n),
            dets: Vec::with_capacity(n),
            purities: Vec::with_capacity(n),
        }
    }

    fn push(&mut self, t: f64, sigma: SymMat2, hbar: f64) {
        let det = sigma.det();
        self.times.push(t);
        self.covs.push(sigma);
        self.dets.push(det);
        self.purities.push(hbar / (2.0 * det.sqrt()));
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<(f64, SymMat2)> {
        Some((*self.times.last()?, *self.covs.last()?))
    }

    /// Writes `t, v_x, c, v_p, det, purity`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        write_header(w, &CSV_HEADER)?;
        for i in 0..self.len() {
            let s = self.covs[i];
            write_row(w, &[self.times[i], s.xx, s.xp, s.pp, self.dets[i], self.purities[i]])?;
        }
        Ok(())
    }
}

/// `ΣA + AᵀΣ − ΣBBᵀΣ + Q`, symmetrized.
pub fn riccati_rhs(sigma: &SymMat2, sys: &SystemMatrices) -> SymMat2 {
    let s = sigma.to_mat();
    let sa = s * sys.a;
    let out = sa + sa.transpose() - s * sys.bbt.to_mat() * s + sys.q.to_mat();
    out.symmetric_part()
}

/// One classical Runge–Kutta step of length `h`.
pub fn rk4_step(sigma: &SymMat2, sys: &SystemMatrices, h: f64) -> SymMat2 {
    let k1 = riccati_rhs(sigma, sys);
    let k2 = riccati_rhs(&(*sigma + k1.scale(0.5 * h)), sys);
    let k3 = riccati_rhs(&(*sigma + k2.scale(0.5 * h)), sys);
    let k4 = riccati_rhs(&(*sigma + k3.scale(h)), sys);
    *sigma + (k1 + k2.scale(2.0) + k3.scale(2.0) + k4).scale(h / 6.0)
}

/// Fixed-step RK4 on `[0, t_final]`, sampled at every step.
///
/// Grid points are `k·dt`; the last step is shortened to land on `t_final`.
pub fn integrate_riccati(
    sigma0: &SymMat2,
    sys: &SystemMatrices,
    t_final: f64,
    dt: f64,
) -> Result<CovTrajectory> {
    ensure_finite("t_final", &[t_final])?;
    ensure_finite("dt", &[dt])?;
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", "must be positive"));
    }
    if t_final < 0.0 {
        return Err(Error::invalid("t_final", "must be nonnegative"));
    }
    if !sigma0.is_finite() || !is_positive_definite(sigma0) {
        return Err(Error::invalid("sigma0", "must be positive definite"));
    }
    let full_steps = step_count(t_final, dt);
    let mut path = CovTrajectory::with_capacity(full_steps + 2);
    let mut sigma = *sigma0;
    path.push(0.0, sigma, sys.hbar);
    let mut t = 0.0;
    let mut k = 0usize;
    while t < t_final {
        k += 1;
        let next = if k > full_steps { t_final } else { (k as f64 * dt).min(t_final) };
        sigma = rk4_step(&sigma, sys, next - t);
        t = next;
        if !sigma.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "covariance became non-finite at t = {t}"
            )));
        }
        if !is_positive_definite(&sigma) {
            return Err(Error::NumericalFailure(format!(
                "covariance lost positive definiteness at t = {t}"
            )));
        }
        path.push(t, sigma, sys.hbar);
    }
    Ok(path)
}

/// Number of full `dt` steps that fit in `t_final` (tolerating round-off).
fn step_count(t_final: f64, dt: f64) -> usize {
    let n = (t_final / dt).round();
    if (n * dt - t_final).abs() <= 1e-9 * dt {
        n as usize
    } else {
        (t_final / dt).floor() as usize
    }
}

/// Closed-form transient for initial covariances above the stationary point,
/// or equal to it.
///
/// Holds the Lyapunov solution `ΓP + PΓᵀ + BBᵀ = 0` so the integral
/// `∫₀ᵗ e^{Γτ}BBᵀe^{Γᵀτ}dτ = P − e^{Γt}Pe^{Γᵀt}` costs one exponential per
/// evaluation.
#[derive(Debug, Clone, Copy)]
pub struct TransientSolver {
    sigma0: SymMat2,
    sigma_inf: SymMat2,
    gamma: Mat2,
    lyapunov: SymMat2,
    // None when Σ₀ = Σ∞ exactly, the fixed point
    y0_inv: Option<SymMat2>,
}

impl TransientSolver {
    pub fn new(sigma0: &SymMat2, ss: &SteadyStateSolution, sys: &SystemMatrices) -> Result<Self> {
        let excess = *sigma0 - ss.sigma_inf;
        if excess == SymMat2::ZERO {
            return Ok(TransientSolver {
                sigma0: *sigma0,
                sigma_inf: ss.sigma_inf,
                gamma: ss.gamma_mat,
                lyapunov: solve_lyapunov(&ss.gamma_mat, &sys.bbt)?,
                y0_inv: None,
            });
        }
        if !sigma0.is_finite() || !is_positive_definite(&excess) {
            return Err(Error::Precondition(
                "closed-form transient needs sigma0 - sigma_inf positive definite; \
                 use integrate_riccati for other initial states"
                    .into(),
            ));
        }
        let y0_inv = excess
            .inverse()
            .map_err(|e| Error::NumericalFailure(format!("inverting sigma0 - sigma_inf: {e}")))?;
        Ok(TransientSolver {
            sigma0: *sigma0,
            sigma_inf: ss.sigma_inf,
            gamma: ss.gamma_mat,
            lyapunov: solve_lyapunov(&ss.gamma_mat, &sys.bbt)?,
            y0_inv: Some(y0_inv),
        })
    }

    pub fn at(&self, t: f64) -> Result<SymMat2> {
        ensure_finite("t", &[t])?;
        if t < 0.0 {
            return Err(Error::invalid("t", "must be nonnegative"));
        }
        let Some(y0_inv) = self.y0_inv else {
            return Ok(self.sigma_inf);
        };
        if t == 0.0 {
            return Ok(self.sigma0);
        }
        let e = mat_exp(&self.gamma, t)?;
        let z = y0_inv + self.lyapunov - self.lyapunov.congruence(&e);
        let z_inv = z
            .inverse()
            .map_err(|err| Error::NumericalFailure(format!("transient inversion at t = {t}: {err}")))?;
        Ok(self.sigma_inf + z_inv.congruence(&e.transpose()))
    }
}

/// `Σ_t = Σ∞ + e^{Γᵀt}(Y₀⁻¹ + Z_t)⁻¹e^{Γt}` with `Y₀ = Σ₀ − Σ∞`.
pub fn transient_covariance(
    sigma0: &SymMat2,
    ss: &SteadyStateSolution,
    sys: &SystemMatrices,
    t: f64,
) -> Result<SymMat2> {
    TransientSolver::new(sigma0, ss, sys)?.at(t)
}

/// Rate of `det Σ_t`: `(ħ²/4)·tr(χBΣB) − tr(BΣB)·det Σ`.
pub fn determinant_rhs(sigma: &SymMat2, sys: &SystemMatrices) -> f64 {
    0.25 * sys.hbar * sys.hbar * sys.chi_weighted_trace(sigma) - sys.weighted_trace(sigma) * sigma.det()
}

/// Rate of the purity `p = ħ/(2√det Σ)`: `−(p/2)·(p²·tr(χBΣB) − tr(BΣB))`.
pub fn purity_rhs(p: f64, sigma: &SymMat2, sys: &SystemMatrices) -> f64 {
    -0.5 * p * (p * p * sys.chi_weighted_trace(sigma) - sys.weighted_trace(sigma))
}

/// Robertson–Schrödinger check `det Σ ≥ ħ²/4`, up to [`UNCERTAINTY_TOL`].
pub fn check_uncertainty(sigma: &SymMat2, hbar: f64) -> bool {
    sigma.det() >= 0.25 * hbar * hbar * (1.0 - UNCERTAINTY_TOL)
}
