//! Closed-form steady state of the covariance Riccati equation and the
//! purity analysis built on it.
//!
//! The stationary covariance is obtained by rescaling the algebraic Riccati
//! equation with the diagonal gain `B`, which turns it into the polar-type
//! factorization `(Σ̃ − Ãᵀ)(Σ̃ − Ãᵀ)ᵀ = Ω + ÃᵀÃ` with `Σ̃ = BΣB`,
//! `Ã = B⁻¹AB`, `Ω = BQB`. The orthogonal factor is a rotation by θ with
//! `sin θ = (α − β)/(γ + δ)` and `cos θ > 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg2::{is_positive_definite, sym_sqrt, Mat2, SymMat2};
use crate::model::{
    build_system_matrices, greek_params, DetectorConfig, Efficiencies, GreekParams,
    OscillatorParams, StrengthCoords, SystemMatrices,
};

/// Bound on the scaled algebraic Riccati residual accepted by the self-check.
pub const ARE_RESIDUAL_TOL: f64 = 1e-9;

/// Target accuracy of [`solve_strengths_for_purity`].
pub const PURITY_SOLVE_TOL: f64 = 1e-8;

/// Default strength product used by the purity solver.
pub const DEFAULT_Q_HINT: f64 = 1e-6;

/// Bracket on `ln s` scanned by the purity solver.
pub const LOG_RATIO_BRACKET: (f64, f64) = (-30.0, 30.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyStateSolution {
    pub sigma_inf: SymMat2,
    /// `Γ = A − BBᵀΣ∞`, the closed-loop drift governing relaxation.
    pub gamma_mat: Mat2,
    pub d_inf: f64,
    pub p_inf: f64,
    pub greeks: GreekParams,
    pub sin_theta: f64,
    /// Scaled residual of the algebraic Riccati equation, see [`are_residual`].
    pub residual: f64,
}

impl SteadyStateSolution {
    pub fn v_x_inf(&self) -> f64 {
        self.sigma_inf.xx
    }

    pub fn c_inf(&self) -> f64 {
        self.sigma_inf.xp
    }

    pub fn v_p_inf(&self) -> f64 {
        self.sigma_inf.pp
    }

    /// Normalized correlation coefficient `c∞ / √(v∞ˣ v∞ᵖ)`.
    pub fn correlation_coefficient(&self) -> f64 {
        self.sigma_inf.xp / (self.sigma_inf.xx * self.sigma_inf.pp).sqrt()
    }

    pub fn report(&self) -> SteadyStateReport {
        SteadyStateReport {
            v_x_inf: self.sigma_inf.xx,
            c_inf: self.sigma_inf.xp,
            v_p_inf: self.sigma_inf.pp,
            d_inf: self.d_inf,
            p_inf: self.p_inf,
            gamma_mat: self.gamma_mat.row_major(),
            sin_theta: self.sin_theta,
            residual: self.residual,
        }
    }
}

/// Flat JSON form of a [`SteadyStateSolution`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateReport {
    pub v_x_inf: f64,
    pub c_inf: f64,
    pub v_p_inf: f64,
    pub d_inf: f64,
    pub p_inf: f64,
    pub gamma_mat: [f64; 4],
    pub sin_theta: f64,
    pub residual: f64,
}

/// Open interval of attainable steady-state purities; a single point when
/// both efficiencies coincide.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PurityInterval {
    pub lo: f64,
    pub hi: f64,
}

impl PurityInterval {
    pub fn is_degenerate(&self) -> bool {
        self.lo == self.hi
    }

    /// Membership in the open interval, or equality for the degenerate case.
    pub fn contains(&self, p: f64) -> bool {
        if self.is_degenerate() {
            p == self.lo
        } else {
            p > self.lo && p < self.hi
        }
    }
}

/// Components of the algebraic Riccati residual `ΣA + AᵀΣ − ΣBBᵀΣ + Q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AreResidual {
    /// `‖R‖_max`.
    pub absolute: f64,
    /// `‖R‖_max / ‖Q‖_max`.
    pub q_relative: f64,
    /// `‖R‖_max` over the largest of `‖ΣA‖_max`, `‖ΣBBᵀΣ‖_max`, `‖Q‖_max`.
    pub scaled: f64,
}

pub fn are_residual(sigma: &SymMat2, sys: &SystemMatrices) -> AreResidual {
    let s = sigma.to_mat();
    let sa = s * sys.a;
    let quad = s * sys.bbt.to_mat() * s;
    let q = sys.q.to_mat();
    let r = sa + sa.transpose() - quad + q;
    let absolute = r.max_abs();
    let scale = sa.max_abs().max(quad.max_abs()).max(q.max_abs());
    AreResidual {
        absolute,
        q_relative: absolute / q.max_abs(),
        scaled: absolute / scale,
    }
}

/// Stationary covariance from the closed form, with a mandatory residual check.
pub fn steady_state_covariance(
    osc: &OscillatorParams,
    det: &DetectorConfig,
) -> Result<SteadyStateSolution> {
    let sys = build_system_matrices(osc, det)?;
    let g = greek_params(osc, det)?;
    let sigma = closed_form_sigma(osc, det, &g);
    assemble(osc, det, &sys, g, sigma)
}

/// Entries of Σ∞, evaluated without the cancellations of the textbook form.
///
/// `1 − sin²θ` is rewritten through `γ − β` and `δ − |α|`, and
/// `αγ + βδ` through `β²δ² − α²γ²`; both differences are then exact
/// expressions in the inputs.
fn closed_form_sigma(osc: &OscillatorParams, det: &DetectorConfig, g: &GreekParams) -> SymMat2 {
    let GreekParams { alpha, beta, gamma, delta } = *g;
    let abs_alpha = -alpha;
    let f = osc.uncertainty_floor() * det.k_x * det.k_p;
    let gamma_excess = f * det.eta_x / (gamma + beta);
    let delta_excess = f * det.eta_p / (delta + abs_alpha);
    let sum = gamma + delta;
    let cos_theta = ((gamma_excess + delta_excess) * (sum + beta + abs_alpha)).sqrt() / sum;

    let v_x = gamma / (det.eta_x * det.k_x) * cos_theta;
    let v_p = delta / (det.eta_p * det.k_p) * cos_theta;

    let m2 = osc.mass * osc.mass;
    let w4 = osc.omega.powi(4);
    let s = det.k_x / det.k_p;
    // β²η_p − α²η_x, whose sign decides the sign of c∞
    let split = det.eta_x * s / m2 - m2 * w4 * det.eta_p / s;
    let c = f * split
        / ((beta * delta + abs_alpha * gamma)
            * sum
            * (det.eta_x * det.eta_p * det.k_x * det.k_p).sqrt());
    SymMat2::new(v_x, c, v_p)
}

/// Σ∞ assembled as `B⁻¹(Ãᵀ + (Ω + ÃᵀÃ)^{1/2} U) B⁻¹` from matrix pieces.
///
/// An independent route to the same matrix as [`steady_state_covariance`].
pub fn steady_state_by_factorization(
    osc: &OscillatorParams,
    det: &DetectorConfig,
) -> Result<SymMat2> {
    let sys = build_system_matrices(osc, det)?;
    let b_inv = sys.b.inverse()?;
    let a_tilde = b_inv * sys.a * sys.b;
    let omega = sys.q.congruence(&sys.b);
    let inner = omega + (a_tilde.transpose() * a_tilde).symmetric_part();
    let root = sym_sqrt(&inner)?;
    let gamma = root.xx;
    let delta = root.pp;
    let sin_theta = (a_tilde.a12 - a_tilde.a21) / (gamma + delta);
    let cos_theta = (1.0 - sin_theta * sin_theta).sqrt();
    let u = Mat2::new(cos_theta, sin_theta, -sin_theta, cos_theta);
    let sigma_tilde = a_tilde.transpose() + root.to_mat() * u;
    Ok((b_inv * sigma_tilde * b_inv).symmetric_part())
}

fn assemble(
    osc: &OscillatorParams,
    det: &DetectorConfig,
    sys: &SystemMatrices,
    greeks: GreekParams,
    sigma: SymMat2,
) -> Result<SteadyStateSolution> {
    if !sigma.is_finite() {
        return Err(Error::NumericalFailure(format!(
            "steady-state covariance is not finite: {sigma:?}"
        )));
    }
    let residual = are_residual(&sigma, sys).scaled;
    if !(residual < ARE_RESIDUAL_TOL) {
        return Err(Error::NumericalFailure(format!(
            "algebraic Riccati residual {residual:e} exceeds {ARE_RESIDUAL_TOL:e}"
        )));
    }
    if !is_positive_definite(&sigma) {
        return Err(Error::NumericalFailure(format!(
            "steady-state covariance is not positive definite: {sigma:?}"
        )));
    }
    let gamma_mat = sys.a - sys.bbt.to_mat() * sigma.to_mat();
    if !gamma_mat.is_hurwitz() {
        return Err(Error::NumericalFailure(format!(
            "closed-loop drift is not Hurwitz: {gamma_mat:?}"
        )));
    }
    Ok(SteadyStateSolution {
        sigma_inf: sigma,
        gamma_mat,
        d_inf: steady_state_determinant(det, &sigma, osc.hbar),
        p_inf: steady_state_purity(det, &sigma, osc.hbar),
        sin_theta: greeks.sin_theta(),
        greeks,
        residual,
    })
}

/// `d∞ = (ħ²/4)·tr(χBΣB)/tr(BΣB)`.
pub fn steady_state_determinant(det: &DetectorConfig, sigma_inf: &SymMat2, hbar: f64) -> f64 {
    let x = det.k_x * sigma_inf.xx;
    let p = det.k_p * sigma_inf.pp;
    0.25 * hbar * hbar * (x + p) / (det.eta_x * x + det.eta_p * p)
}

/// `p∞ = √(tr(BΣB)/tr(χBΣB))`.
///
/// `hbar` drops out of the formula; it is accepted for symmetry with
/// [`steady_state_determinant`].
pub fn steady_state_purity(det: &DetectorConfig, sigma_inf: &SymMat2, _hbar: f64) -> f64 {
    let x = det.k_x * sigma_inf.xx;
    let p = det.k_p * sigma_inf.pp;
    ((det.eta_x * x + det.eta_p * p) / (x + p)).sqrt()
}

/// `(√min η, √max η)`.
pub fn purity_interval(eff: &Efficiencies) -> PurityInterval {
    PurityInterval {
        lo: eff.min().sqrt(),
        hi: eff.max().sqrt(),
    }
}

/// Steady-state purity as a function of the auxiliary scalars:
/// `√((γ + δ)/(γ/η_x + δ/η_p))`.
pub fn purity_from_greeks(g: &GreekParams, eff: &Efficiencies) -> f64 {
    ((g.gamma + g.delta) / (g.gamma / eff.eta_x + g.delta / eff.eta_p)).sqrt()
}

/// Left-hand side of `(1 − p²/η_x)γ(q,s) + (1 − p²/η_p)δ(q,s) = 0`.
pub fn purity_relation_residual(
    target_p: f64,
    coords: StrengthCoords,
    osc: &OscillatorParams,
    eff: &Efficiencies,
) -> Result<f64> {
    let det = DetectorConfig::from_coords(coords, *eff)?;
    let g = greek_params(osc, &det)?;
    let p2 = target_p * target_p;
    Ok((1.0 - p2 / eff.eta_x) * g.gamma + (1.0 - p2 / eff.eta_p) * g.delta)
}

/// Finds strengths reaching `target_p` by bisection on `ln s` at fixed `q`.
///
/// For any fixed `q` the purity is monotone in `s`, moving from `√η_p` as
/// `s → 0` to `√η_x` as `s → ∞`. The bracket signs are checked rather than
/// assumed.
pub fn solve_strengths_for_purity(
    target_p: f64,
    osc: &OscillatorParams,
    eff: &Efficiencies,
    q_hint: Option<f64>,
) -> Result<StrengthCoords> {
    osc.validate()?;
    eff.validate()?;
    let q = q_hint.unwrap_or(DEFAULT_Q_HINT);
    StrengthCoords::new(q, 1.0)?;
    let interval = purity_interval(eff);
    if interval.is_degenerate() {
        if (target_p - interval.lo).abs() <= 1e-12 {
            return StrengthCoords::new(q, 1.0);
        }
        return Err(Error::OutOfRange {
            value: target_p,
            lo: interval.lo,
            hi: interval.hi,
        });
    }
    if !interval.contains(target_p) {
        return Err(Error::OutOfRange {
            value: target_p,
            lo: interval.lo,
            hi: interval.hi,
        });
    }

    let gap = |log_s: f64| -> Result<f64> {
        let det = DetectorConfig::from_coords(StrengthCoords::new(q, log_s.exp())?, *eff)?;
        Ok(purity_from_greeks(&greek_params(osc, &det)?, eff) - target_p)
    };
    let (mut lo, mut hi) = LOG_RATIO_BRACKET;
    let (f_lo, f_hi) = (gap(lo)?, gap(hi)?);
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::NumericalFailure(format!(
            "purity bracket failed: p(s = e^{lo}) - target = {f_lo:e}, p(s = e^{hi}) - target = {f_hi:e}"
        )));
    }
    let lo_sign = f_lo.signum();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f_mid = gap(mid)?;
        if f_mid == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if f_mid.signum() == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let coords = StrengthCoords::new(q, (0.5 * (lo + hi)).exp())?;
    let check = steady_state_covariance(osc, &DetectorConfig::from_coords(coords, *eff)?)?;
    if (check.p_inf - target_p).abs() >= PURITY_SOLVE_TOL {
        return Err(Error::NumericalFailure(format!(
            "purity solve reached {} instead of {target_p}",
            check.p_inf
        )));
    }
    Ok(coords)
}

/// Strength ratio `m²ω²√(η_p/η_x)` at which the stationary correlation vanishes.
pub fn zero_correlation_ratio(osc: &OscillatorParams, eff: &Efficiencies) -> f64 {
    let mw = osc.mass * osc.omega;
    mw * mw * (eff.eta_p / eff.eta_x).sqrt()
}

/// Steady state at the zero-correlation ratio for strength product `q`.
///
/// Σ∞ takes the diagonal form `ħ/(2(η_xη_p)^{1/4})·diag(1/(mω), mω)` for every
/// `q`; `q` only enters through the relaxation matrix Γ.
pub fn zero_correlation_solution(
    osc: &OscillatorParams,
    eff: &Efficiencies,
    q: f64,
) -> Result<SteadyStateSolution> {
    osc.validate()?;
    eff.validate()?;
    let coords = StrengthCoords::new(q, zero_correlation_ratio(osc, eff))?;
    let det = DetectorConfig::from_coords(coords, *eff)?;
    let sys = build_system_matrices(osc, &det)?;
    let mw = osc.mass * osc.omega;
    let scale = osc.hbar / (2.0 * (eff.eta_x * eff.eta_p).powf(0.25));
    let sigma = SymMat2::diag(scale / mw, scale * mw);
    assemble(osc, &det, &sys, greek_params(osc, &det)?, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn canonical() -> OscillatorParams {
        OscillatorParams::canonical()
    }

    fn coords_det(q: f64, s: f64, eta_x: f64, eta_p: f64) -> DetectorConfig {
        DetectorConfig::from_coords(
            StrengthCoords::new(q, s).unwrap(),
            Efficiencies::new(eta_x, eta_p).unwrap(),
        )
        .unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn ideal_unit_point_is_vacuum() {
        let det = DetectorConfig::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let ss = steady_state_covariance(&canonical(), &det).unwrap();
        assert!((ss.sigma_inf - SymMat2::IDENTITY).max_abs() < 1e-15);
        assert!((ss.d_inf - 1.0).abs() < 1e-15);
        assert!((ss.p_inf - 1.0).abs() < 1e-15);
        assert!((ss.sin_theta + 0.5f64.sqrt()).abs() < 1e-15);
        assert!(ss.residual < 1e-15);
        assert_eq!(ss.gamma_mat, Mat2::new(-1.0, -1.0, 1.0, -1.0));
    }

    #[test]
    fn zero_correlation_point_of_the_reference_setup() {
        let ss = steady_state_covariance(&canonical(), &coords_det(1.0, 3.0, 0.1, 0.9)).unwrap();
        let expected = 2.0 / (2.0 * 0.09f64.powf(0.25));
        assert!(ss.c_inf().abs() < 1e-14);
        assert!((ss.v_x_inf() - expected).abs() < 1e-12);
        assert!((ss.v_p_inf() - expected).abs() < 1e-12);
        assert!((expected - 1.8257418583505538).abs() < 1e-12);
        assert!((ss.p_inf - 0.5477225575051661).abs() < 1e-12);
        assert!((ss.d_inf - 1.0 / 0.3).abs() < 1e-12);
        assert!(rel(ss.d_inf, ss.sigma_inf.det()) < 1e-12);
    }

    #[test]
    fn equal_efficiencies_fix_the_purity() {
        for (kx, kp) in [(0.01, 40.0), (1.0, 1.0), (300.0, 0.2)] {
            let det = DetectorConfig::new(kx, kp, 0.25, 0.25).unwrap();
            let ss = steady_state_covariance(&canonical(), &det).unwrap();
            assert!((ss.p_inf - 0.5).abs() < 1e-12);
            // χ = I/η factors out of the determinant
            assert!(rel(ss.d_inf, 1.0 / 0.25) < 1e-12);
            let det = DetectorConfig::new(kx, kp, 0.49, 0.49).unwrap();
            let purity = steady_state_purity(&det, &steady_state_covariance(&canonical(), &det).unwrap().sigma_inf, 2.0);
            assert!((purity - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn ideal_detectors_saturate_the_bound() {
        let osc = OscillatorParams::new(2.5, 0.3, 1.3).unwrap();
        let det = DetectorConfig::new(0.7, 4.0, 1.0, 1.0).unwrap();
        let ss = steady_state_covariance(&osc, &det).unwrap();
        assert!(rel(ss.d_inf, osc.uncertainty_floor()) < 1e-14);
        assert!((ss.p_inf - 1.0).abs() < 1e-14);
    }

    #[test]
    fn factorization_route_agrees() {
        let osc = OscillatorParams::new(0.8, 1.9, 2.0).unwrap();
        for det in [
            DetectorConfig::new(0.3, 2.0, 0.1, 0.9).unwrap(),
            DetectorConfig::new(5.0, 0.5, 0.7, 0.2).unwrap(),
            DetectorConfig::new(1.0, 1.0, 1.0, 1.0).unwrap(),
        ] {
            let closed = steady_state_covariance(&osc, &det).unwrap().sigma_inf;
            let fact = steady_state_by_factorization(&osc, &det).unwrap();
            assert!((closed - fact).max_abs() < 1e-12 * closed.max_abs(), "{closed:?} vs {fact:?}");
        }
    }

    #[test]
    fn interval_examples() {
        let i = purity_interval(&Efficiencies::new(0.1, 0.9).unwrap());
        assert!((i.lo - 0.31622776601683794).abs() < 1e-15);
        assert!((i.hi - 0.9486832980505138).abs() < 1e-15);
        assert!(!i.is_degenerate());
        assert!(i.contains(0.5) && !i.contains(i.lo) && !i.contains(0.95));
        let i = purity_interval(&Efficiencies::new(0.36, 0.36).unwrap());
        assert!(i.is_degenerate() && i.lo == 0.6);
        assert_eq!(purity_interval(&Efficiencies::new(1.0, 1.0).unwrap()), PurityInterval { lo: 1.0, hi: 1.0 });
        // label-symmetric
        assert_eq!(
            purity_interval(&Efficiencies::new(0.9, 0.1).unwrap()),
            purity_interval(&Efficiencies::new(0.1, 0.9).unwrap())
        );
    }

    #[test]
    fn relation_residual_vanishes_at_achieved_purity() {
        let eff = Efficiencies::new(0.1, 0.9).unwrap();
        for (q, s) in [(1.0, 3.0), (1e-3, 0.01), (50.0, 20.0), (0.2, 1e-4)] {
            let c = StrengthCoords::new(q, s).unwrap();
            let p = steady_state_covariance(&canonical(), &DetectorConfig::from_coords(c, eff).unwrap())
                .unwrap()
                .p_inf;
            let r = purity_relation_residual(p, c, &canonical(), &eff).unwrap();
            assert!(r.abs() < 1e-9, "residual {r:e} at q={q}, s={s}");
        }
    }

    #[test]
    fn relation_residual_identically_zero_for_equal_efficiencies() {
        let eff = Efficiencies::new(0.3, 0.3).unwrap();
        for (q, s) in [(1.0, 1.0), (1e-4, 30.0), (1e3, 1e-3)] {
            let r = purity_relation_residual(0.3f64.sqrt(), StrengthCoords::new(q, s).unwrap(), &canonical(), &eff).unwrap();
            assert!(r.abs() < 1e-12);
        }
    }

    #[test]
    fn relation_residual_keeps_sign_outside_interval() {
        let eff = Efficiencies::new(0.1, 0.9).unwrap();
        for target in [0.2, 0.97] {
            let mut signs = Vec::new();
            for i in -6..=6 {
                for j in -6..=6 {
                    let c = StrengthCoords::new(10f64.powi(i), 10f64.powi(j)).unwrap();
                    let r = purity_relation_residual(target, c, &canonical(), &eff).unwrap();
                    assert!(r.abs() > 0.0);
                    signs.push(r.signum());
                }
            }
            assert!(signs.windows(2).all(|w| w[0] == w[1]), "sign flips for target {target}");
        }
    }

    #[test]
    fn solver_hits_target_purity() {
        let eff = Efficiencies::new(0.1, 0.9).unwrap();
        for target in [0.9, 0.33, 0.6, 0.94] {
            let c = solve_strengths_for_purity(target, &canonical(), &eff, None).unwrap();
            let ss = steady_state_covariance(&canonical(), &DetectorConfig::from_coords(c, eff).unwrap()).unwrap();
            assert!((ss.p_inf - target).abs() < PURITY_SOLVE_TOL);
            assert_eq!(c.q, DEFAULT_Q_HINT);
        }
    }

    #[test]
    fn solver_degenerate_and_out_of_range() {
        let eff = Efficiencies::new(0.5, 0.5).unwrap();
        let c = solve_strengths_for_purity(0.5f64.sqrt(), &canonical(), &eff, Some(2.0)).unwrap();
        assert_eq!(c, StrengthCoords { q: 2.0, s: 1.0 });
        assert!(matches!(
            solve_strengths_for_purity(0.8, &canonical(), &eff, None),
            Err(Error::OutOfRange { .. })
        ));
        let eff = Efficiencies::new(0.1, 0.9).unwrap();
        assert!(matches!(
            solve_strengths_for_purity(0.2, &canonical(), &eff, None),
            Err(Error::OutOfRange { .. })
        ));
        assert!(matches!(
            solve_strengths_for_purity(0.9486832980505138, &canonical(), &eff, None),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn solver_bracket_failure_reports_endpoints() {
        // at huge q even ln s = ±30 cannot pull r = γ/δ far enough from √(η_x/η_p)
        let eff = Efficiencies::new(0.1, 0.9).unwrap();
        let err = solve_strengths_for_purity(0.948, &canonical(), &eff, Some(1e40)).unwrap_err();
        match err {
            Error::NumericalFailure(msg) => assert!(msg.contains("bracket"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn solver_at_geometric_mean_lands_on_zero_correlation() {
        let eff = Efficiencies::new(0.1, 0.9).unwrap();
        let target = (0.09f64).powf(0.25);
        let c = solve_strengths_for_purity(target, &canonical(), &eff, None).unwrap();
        assert!(rel(c.s, zero_correlation_ratio(&canonical(), &eff)) < 1e-6);
        let ss = steady_state_covariance(&canonical(), &DetectorConfig::from_coords(c, eff).unwrap()).unwrap();
        assert!(ss.correlation_coefficient().abs() < 1e-6);
    }

    #[test]
    fn zero_correlation_ratio_examples() {
        let eff = Efficiencies::new(0.1, 0.9).unwrap();
        assert!((zero_correlation_ratio(&canonical(), &eff) - 3.0).abs() < 1e-15);
        let sym = Efficiencies::new(0.4, 0.4).unwrap();
        assert_eq!(zero_correlation_ratio(&canonical(), &sym), 1.0);
        let osc = OscillatorParams::new(2.0, 3.0, 2.0).unwrap();
        assert_eq!(zero_correlation_ratio(&osc, &sym), 36.0);
    }

    #[test]
    fn zero_correlation_solution_examples() {
        let ideal = Efficiencies::new(1.0, 1.0).unwrap();
        let ss = zero_correlation_solution(&canonical(), &ideal, 1.0).unwrap();
        assert!((ss.sigma_inf - SymMat2::IDENTITY).max_abs() < 1e-15);
        assert!((ss.p_inf - 1.0).abs() < 1e-15);

        let a = zero_correlation_solution(&canonical(), &Efficiencies::new(0.1, 0.9).unwrap(), 1.0).unwrap();
        let b = zero_correlation_solution(&canonical(), &Efficiencies::new(0.9, 0.1).unwrap(), 1.0).unwrap();
        assert!((a.sigma_inf.xx - 1.8257418583505538).abs() < 1e-12);
        assert!((a.p_inf - 0.5477225575051661).abs() < 1e-12);
        assert!((a.p_inf - b.p_inf).abs() < 1e-15);
    }

    #[test]
    fn zero_correlation_matches_general_closed_form_across_q() {
        let osc = OscillatorParams::new(1.3, 0.7, 2.0).unwrap();
        let eff = Efficiencies::new(0.25, 0.8).unwrap();
        let s_zc = zero_correlation_ratio(&osc, &eff);
        for e in -6..=6 {
            let q = 10f64.powi(e);
            let zc = zero_correlation_solution(&osc, &eff, q).unwrap();
            let general = steady_state_covariance(&osc, &DetectorConfig::from_coords(StrengthCoords::new(q, s_zc).unwrap(), eff).unwrap()).unwrap();
            assert!(general.c_inf().abs() < 1e-10);
            assert!((zc.sigma_inf - general.sigma_inf).max_abs() < 1e-9 * zc.sigma_inf.max_abs());
            assert!((general.p_inf - 0.2f64.powf(0.25)).abs() < 1e-10);
            // correlation changes sign across the ratio
            let below = steady_state_covariance(&osc, &DetectorConfig::from_coords(StrengthCoords::new(q, 0.9 * s_zc).unwrap(), eff).unwrap()).unwrap();
            let above = steady_state_covariance(&osc, &DetectorConfig::from_coords(StrengthCoords::new(q, 1.1 * s_zc).unwrap(), eff).unwrap()).unwrap();
            assert!(below.c_inf() < 0.0 && above.c_inf() > 0.0);
        }
    }

    #[test]
    fn common_strength_scaling_keeps_the_zero_crossing() {
        let eff = Efficiencies::new(0.3, 0.6).unwrap();
        let s_zc = zero_correlation_ratio(&canonical(), &eff);
        for lambda in [1e-3, 0.5, 7.0, 1e3] {
            let det = DetectorConfig::new(lambda * s_zc, lambda, eff.eta_x, eff.eta_p).unwrap();
            assert!(steady_state_covariance(&canonical(), &det).unwrap().c_inf().abs() < 1e-12);
        }
    }

    #[test]
    fn report_serializes_expected_keys() {
        let ss = steady_state_covariance(&canonical(), &DetectorConfig::new(1.0, 2.0, 0.5, 0.6).unwrap()).unwrap();
        let v = serde_json::to_value(ss.report()).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["c_inf", "d_inf", "gamma_mat", "p_inf", "residual", "sin_theta", "v_p_inf", "v_x_inf"]);
        assert_eq!(v["gamma_mat"].as_array().unwrap().len(), 4);
    }

    fn log_uniform(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
        (lo.log10()..hi.log10()).prop_map(|e| 10f64.powf(e))
    }

    fn eta() -> impl Strategy<Value = f64> {
        (0.0..1.0f64).prop_map(|u| 1.0 - u)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn closed_form_invariants(
            m in log_uniform(1e-3, 1e3), w in log_uniform(1e-3, 1e3),
            kx in log_uniform(1e-3, 1e3), kp in log_uniform(1e-3, 1e3),
            ex in eta(), ep in eta(),
        ) {
            let osc = OscillatorParams::new(m, w, 2.0).unwrap();
            let det = DetectorConfig::new(kx, kp, ex, ep).unwrap();
            let ss = steady_state_covariance(&osc, &det).unwrap();
            prop_assert!(ss.residual < ARE_RESIDUAL_TOL);
            prop_assert!(is_positive_definite(&ss.sigma_inf));
            prop_assert!(ss.gamma_mat.is_hurwitz());
            prop_assert!(ss.sigma_inf.det() >= osc.uncertainty_floor() * (1.0 - 1e-12));
            prop_assert!(ss.sin_theta.abs() < 1.0);
            prop_assert!(ss.p_inf > 0.0 && ss.p_inf <= 1.0);
            let p_det = osc.hbar / (2.0 * ss.sigma_inf.det().sqrt());
            prop_assert!(rel(ss.p_inf, p_det) < 1e-9);
            prop_assert!(rel(ss.d_inf, ss.sigma_inf.det()) < 1e-9);
            let i = purity_interval(&det.efficiencies());
            if ex != ep {
                prop_assert!(ss.p_inf > i.lo && ss.p_inf < i.hi);
            }
        }

        #[test]
        fn well_scaled_residual_is_small_relative_to_q(
            m in log_uniform(0.1, 10.0), w in log_uniform(0.1, 10.0),
            kx in log_uniform(0.1, 10.0), kp in log_uniform(0.1, 10.0),
            ex in eta(), ep in eta(),
        ) {
            let osc = OscillatorParams::new(m, w, 2.0).unwrap();
            let det = DetectorConfig::new(kx, kp, ex, ep).unwrap();
            let sys = build_system_matrices(&osc, &det).unwrap();
            let ss = steady_state_covariance(&osc, &det).unwrap();
            prop_assert!(are_residual(&ss.sigma_inf, &sys).q_relative < 1e-9);
        }
    }
}
