//! Parameter sweeps over strength coordinates and the quasi-static
//! squeezing protocol with confidence-ellipse output.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::rk4_step;
use crate::error::{Error, Result};
use crate::linalg2::{is_positive_definite, SymMat2, Vec2};
use crate::model::{
    build_system_matrices, DetectorConfig, Efficiencies, OscillatorParams, StrengthCoords,
};
use crate::output::{fmt_f64, write_header, write_row};
use crate::steady_state::{steady_state_covariance, SteadyStateSolution};

/// Probability mass inside the one-sigma contour of a bivariate normal, `1 − e^{−1/2}`.
pub const DEFAULT_ELLIPSE_LEVEL: f64 = 0.393_469_340_287_366_6;

/// Default relative tolerance for the quasi-static tracking check.
pub const DEFAULT_SETTLE_CRITERION: f64 = 1e-4;

/// Settle time per protocol leg, in units of the slowest relaxation time `1/|max Re λ(Γ)|`.
pub const SETTLE_TIME_CONSTANTS: f64 = 10.0;

pub const SURFACE_CSV_HEADER: [&str; 7] = ["q", "s", "p_inf", "c_inf", "v_x_inf", "v_p_inf", "d_inf"];

pub const PROTOCOL_CSV_HEADER: [&str; 10] = [
    "step",
    "s",
    "q",
    "v_x_inf",
    "c_inf",
    "v_p_inf",
    "p_inf",
    "ellipse_a",
    "ellipse_b",
    "ellipse_theta",
];

/// `n` log-spaced points from `lo` to `hi` inclusive; endpoints are exact.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > 0.0 && lo.is_finite() && hi.is_finite()) {
        return Err(Error::invalid("grid", "endpoints must be finite positive numbers"));
    }
    match n {
        0 => Err(Error::invalid("grid", "must have at least one point")),
        1 => Ok(vec![lo]),
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            let mut v: Vec<f64> = (0..n)
                .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
                .collect();
            v[0] = lo;
            v[n - 1] = hi;
            Ok(v)
        }
    }
}

fn check_axis(field: &'static str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::invalid(field, "must be nonempty"));
    }
    if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::invalid(field, "entries must be finite positive numbers"));
    }
    if v.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(field, "must be strictly increasing"));
    }
    Ok(())
}

/// Rectangular grid in `(q, s)` with fixed oscillator and efficiencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub q_values: Vec<f64>,
    pub s_values: Vec<f64>,
    pub osc: OscillatorParams,
    pub eff: Efficiencies,
}

impl SweepGrid {
    pub fn new(
        q_values: Vec<f64>,
        s_values: Vec<f64>,
        osc: OscillatorParams,
        eff: Efficiencies,
    ) -> Result<Self> {
        let g = SweepGrid {
            q_values,
            s_values,
            osc,
            eff,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        check_axis("q_values", &self.q_values)?;
        check_axis("s_values", &self.s_values)?;
        self.osc.validate()?;
        self.eff.validate()
    }

    pub fn len(&self) -> usize {
        self.q_values.len() * self.s_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Full surface: 101 × 101 log-spaced points on `[1e−3, 1e3]²`.
    pub fn surface_preset(osc: OscillatorParams, eff: Efficiencies) -> Result<Self> {
        let axis = log_spaced(1e-3, 1e3, 101)?;
        SweepGrid::new(axis.clone(), axis, osc, eff)
    }

    /// Slices: 101 log-spaced `q` values against a handful of ratios that
    /// straddle the zero-correlation line.
    pub fn slices_preset(osc: OscillatorParams, eff: Efficiencies) -> Result<Self> {
        let q = log_spaced(1e-3, 1e3, 101)?;
        let s = vec![1e-3, 1e-2, 1e-1, 1.0, 3.0, 10.0, 100.0, 1e3];
        SweepGrid::new(q, s, osc, eff)
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRow {
    pub q: f64,
    pub s: f64,
    pub p_inf: f64,
    pub c_inf: f64,
    pub v_x_inf: f64,
    pub v_p_inf: f64,
    pub d_inf: f64,
}

fn annotate(e: Error, q: f64, s: f64) -> Error {
    match e {
        Error::NumericalFailure(m) => Error::NumericalFailure(format!("at q = {q}, s = {s}: {m}")),
        Error::Singular(m) => Error::Singular(format!("at q = {q}, s = {s}: {m}")),
        Error::Precondition(m) => Error::Precondition(format!("at q = {q}, s = {s}: {m}")),
        other => other,
    }
}

fn solve_at(osc: &OscillatorParams, eff: &Efficiencies, q: f64, s: f64) -> Result<SteadyStateSolution> {
    let det = DetectorConfig::from_coords(StrengthCoords::new(q, s)?, *eff)?;
    steady_state_covariance(osc, &det).map_err(|e| annotate(e, q, s))
}

/// Steady state at every grid point; rows ordered with `q` outer and `s` inner.
pub fn purity_surface(grid: &SweepGrid) -> Result<Vec<SurfaceRow>> {
    grid.validate()?;
    let ns = grid.s_values.len();
    (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let q = grid.q_values[idx / ns];
            let s = grid.s_values[idx % ns];
            let ss = solve_at(&grid.osc, &grid.eff, q, s)?;
            Ok(SurfaceRow {
                q,
                s,
                p_inf: ss.p_inf,
                c_inf: ss.c_inf(),
                v_x_inf: ss.v_x_inf(),
                v_p_inf: ss.v_p_inf(),
                d_inf: ss.d_inf,
            })
        })
        .collect()
}

pub fn write_surface_csv<W: Write>(rows: &[SurfaceRow], w: &mut W) -> io::Result<()> {
    write_header(w, &SURFACE_CSV_HEADER)?;
    for r in rows {
        write_row(w, &[r.q, r.s, r.p_inf, r.c_inf, r.v_x_inf, r.v_p_inf, r.d_inf])?;
    }
    Ok(())
}

/// Level curve of a bivariate normal density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseSpec {
    pub center: Vec2,
    /// Semi-axes, major first.
    pub semi_axes: [f64; 2],
    /// Angle of the major axis from the position axis, in `(−π/2, π/2]`.
    pub orientation: f64,
    pub level: f64,
}

impl EllipseSpec {
    /// Boundary point at parameter angle `phi`.
    pub fn boundary_point(&self, phi: f64) -> Vec2 {
        let (u, v) = (self.semi_axes[0] * phi.cos(), self.semi_axes[1] * phi.sin());
        let (c, s) = (self.orientation.cos(), self.orientation.sin());
        [self.center[0] + c * u - s * v, self.center[1] + s * u + c * v]
    }
}

/// Ellipse enclosing probability mass `level` of `N(center, sigma)`.
pub fn ellipse_from_covariance(sigma: &SymMat2, center: Vec2, level: f64) -> Result<EllipseSpec> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid("level", "must be in (0, 1)"));
    }
    if !sigma.is_finite() || !is_positive_definite(sigma) {
        return Err(Error::invalid("sigma", "must be positive definite"));
    }
    let [hi, lo] = sigma.eigenvalues();
    if !(lo > 0.0) {
        return Err(Error::invalid("sigma", "must be positive definite"));
    }
    let radius = (-2.0 * (-level).ln_1p()).sqrt();
    Ok(EllipseSpec {
        center,
        semi_axes: [radius * hi.sqrt(), radius * lo.sqrt()],
        orientation: sigma.leading_eigen_angle(),
        level,
    })
}

/// Slow variation of the strength ratio at fixed strength product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasiStaticProtocol {
    pub s_schedule: Vec<f64>,
    pub q_fixed: f64,
    pub settle_criterion: f64,
    pub level: f64,
}

impl QuasiStaticProtocol {
    pub fn new(s_schedule: Vec<f64>, q_fixed: f64) -> Result<Self> {
        let p = QuasiStaticProtocol {
            s_schedule,
            q_fixed,
            settle_criterion: DEFAULT_SETTLE_CRITERION,
            level: DEFAULT_ELLIPSE_LEVEL,
        };
        p.validate()?;
        Ok(p)
    }

    /// 21 log-spaced ratios from 3 down to 1e−4 at `q = 1`.
    pub fn squeezing_preset() -> Self {
        let mut s = log_spaced(1e-4, 3.0, 21).expect("static grid");
        s.reverse();
        QuasiStaticProtocol {
            s_schedule: s,
            q_fixed: 1.0,
            settle_criterion: DEFAULT_SETTLE_CRITERION,
            level: DEFAULT_ELLIPSE_LEVEL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.s_schedule.is_empty() {
            return Err(Error::invalid("s_schedule", "must be nonempty"));
        }
        if self.s_schedule.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("s_schedule", "entries must be finite positive numbers"));
        }
        if !(self.q_fixed.is_finite() && self.q_fixed > 0.0) {
            return Err(Error::invalid("q_fixed", "must be a finite positive number"));
        }
        if !(self.settle_criterion.is_finite() && self.settle_criterion > 0.0) {
            return Err(Error::invalid("settle_criterion", "must be a finite positive number"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::invalid("level", "must be in (0, 1)"));
        }
        Ok(())
    }
}

/// State of the protocol at one schedule point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolStep {
    pub step: usize,
    pub s: f64,
    pub q: f64,
    pub solution: SteadyStateSolution,
    pub ellipse: EllipseSpec,
}

/// Instantaneous steady state and its confidence ellipse at every schedule point.
pub fn run_quasi_static(
    protocol: &QuasiStaticProtocol,
    osc: &OscillatorParams,
    eff: &Efficiencies,
) -> Result<Vec<ProtocolStep>> {
    protocol.validate()?;
    osc.validate()?;
    eff.validate()?;
    let q = protocol.q_fixed;
    protocol
        .s_schedule
        .iter()
        .enumerate()
        .map(|(step, &s)| {
            let solution = solve_at(osc, eff, q, s)?;
            let ellipse = ellipse_from_covariance(&solution.sigma_inf, [0.0, 0.0], protocol.level)?;
            Ok(ProtocolStep {
                step,
                s,
                q,
                solution,
                ellipse,
            })
        })
        .collect()
}

pub fn write_protocol_csv<W: Write>(steps: &[ProtocolStep], w: &mut W) -> io::Result<()> {
    write_header(w, &PROTOCOL_CSV_HEADER)?;
    for st in steps {
        let ss = &st.solution;
        write_row(
            w,
            &[
                st.step as f64,
                st.s,
                st.q,
                ss.v_x_inf(),
                ss.c_inf(),
                ss.v_p_inf(),
                ss.p_inf,
                st.ellipse.semi_axes[0],
                st.ellipse.semi_axes[1],
                st.ellipse.orientation,
            ],
        )?;
    }
    Ok(())
}

/// Which correlation measure at the last schedule point lies closer to a
/// reference value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationComparison {
    pub target: f64,
    pub c_inf: f64,
    pub correlation_coefficient: f64,
    pub closer: CorrelationMeasure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMeasure {
    Covariance,
    Coefficient,
}

pub fn compare_final_correlation(steps: &[ProtocolStep], target: f64) -> Option<CorrelationComparison> {
    let last = steps.last()?;
    let c = last.solution.c_inf();
    let rho = last.solution.correlation_coefficient();
    let closer = if (c - target).abs() <= (rho - target).abs() {
        CorrelationMeasure::Covariance
    } else {
        CorrelationMeasure::Coefficient
    };
    Some(CorrelationComparison {
        target,
        c_inf: c,
        correlation_coefficient: rho,
        closer,
    })
}

/// Result of integrating the Riccati equation through the piecewise-constant schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingLeg {
    pub step: usize,
    pub settle_time: f64,
    /// `‖Σ_end − Σ∞‖_max / max(1, ‖Σ∞‖_max)` at the end of the leg.
    pub deviation: f64,
}

/// Starts at the steady state of the first schedule point and, for each
/// following point, holds the strengths fixed for
/// [`SETTLE_TIME_CONSTANTS`] relaxation times while integrating with RK4.
pub fn quasi_static_tracking(
    protocol: &QuasiStaticProtocol,
    osc: &OscillatorParams,
    eff: &Efficiencies,
) -> Result<Vec<TrackingLeg>> {
    let steps = run_quasi_static(protocol, osc, eff)?;
    let mut sigma = steps[0].solution.sigma_inf;
    let mut legs = Vec::with_capacity(steps.len());
    legs.push(TrackingLeg {
        step: 0,
        settle_time: 0.0,
        deviation: 0.0,
    });
    for st in &steps[1..] {
        let det = DetectorConfig::from_coords(StrengthCoords::new(st.q, st.s)?, *eff)?;
        let sys = build_system_matrices(osc, &det)?;
        let gamma = st.solution.gamma_mat;
        let slow = -gamma.spectral_abscissa();
        let fast = gamma.eigenvalues().iter().map(|(re, im)| re.hypot(*im)).fold(0.0, f64::max);
        // RK4 is stable for |hλ| < 2.78; a tenth of the fastest time scale
        // keeps the truncation error far below the criterion
        let h_max = 0.1 / fast.max(sys.bbt.max_abs() * sigma.max_abs()).max(osc.omega);
        let settle = SETTLE_TIME_CONSTANTS / slow;
        let n = (settle / h_max).ceil() as usize;
        let h = settle / n as f64;
        for _ in 0..n {
            sigma = rk4_step(&sigma, &sys, h);
        }
        if !sigma.is_finite() || !is_positive_definite(&sigma) {
            return Err(Error::NumericalFailure(format!(
                "tracking integration lost positive definiteness at step {}",
                st.step
            )));
        }
        let target = st.solution.sigma_inf;
        legs.push(TrackingLeg {
            step: st.step,
            settle_time: settle,
            deviation: (sigma - target).max_abs() / target.max_abs().max(1.0),
        });
    }
    Ok(legs)
}

/// SVG document with one stroke-only ellipse per protocol step, the first
/// drawn in black.
pub fn render_protocol_svg(steps: &[ProtocolStep]) -> String {
    const SIZE: f64 = 600.0;
    const MARGIN: f64 = 40.0;
    let extent = steps
        .iter()
        .map(|s| s.ellipse.semi_axes[0] + s.ellipse.center[0].abs().max(s.ellipse.center[1].abs()))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let scale = (SIZE / 2.0 - MARGIN) / extent;
    let mid = SIZE / 2.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r##"<g stroke="#999" stroke-width="0.5"><line x1="{MARGIN}" y1="{mid}" x2="{}" y2="{mid}"/><line x1="{mid}" y1="{MARGIN}" x2="{mid}" y2="{}"/></g>"##,
        SIZE - MARGIN,
        SIZE - MARGIN
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="12" font-family="sans-serif">x</text><text x="{}" y="{}" font-size="12" font-family="sans-serif">p</text>"#,
        SIZE - MARGIN + 5.0,
        mid + 4.0,
        mid - 4.0,
        MARGIN - 6.0
    );
    let n = steps.len().max(2) - 1;
    for st in steps {
        let e = &st.ellipse;
        let color = if st.step == 0 {
            "#000000".to_string()
        } else {
            let t = st.step as f64 / n as f64;
            format!("#{:02x}{:02x}{:02x}", (40.0 + 200.0 * t) as u8, 80, (220.0 - 180.0 * t) as u8)
        };
        let cx = mid + scale * e.center[0];
        let cy = mid - scale * e.center[1];
        // SVG y points down, so a positive phase-space angle rotates clockwise on screen
        let deg = -e.orientation * 180.0 / PI;
        let label = e.boundary_point(0.0);
        let _ = writeln!(
            out,
            r#"<g id="step-{}"><title>step {} s={} p_inf={}</title><ellipse cx="{}" cy="{}" rx="{}" ry="{}" transform="rotate({} {} {})" fill="none" stroke="{}" stroke-width="1"/><text x="{}" y="{}" font-size="9" font-family="sans-serif" fill="{}">{}</text></g>"#,
            st.step,
            st.step,
            fmt_f64(st.s),
            fmt_f64(st.solution.p_inf),
            cx,
            cy,
            scale * e.semi_axes[0],
            scale * e.semi_axes[1],
            deg,
            cx,
            cy,
            color,
            mid + scale * label[0] + 2.0,
            mid - scale * label[1],
            color,
            st.step
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::steady_state::zero_correlation_ratio;
    use proptest::prelude::*;

    fn fig_params() -> (OscillatorParams, Efficiencies) {
        (OscillatorParams::canonical(), Efficiencies::new(0.1, 0.9).unwrap())
    }

    #[test]
    fn log_spaced_endpoints_and_errors() {
        let v = log_spaced(1e-3, 1e3, 101).unwrap();
        assert_eq!(v.len(), 101);
        assert_eq!(v[0], 1e-3);
        assert_eq!(v[100], 1e3);
        assert!((v[50] - 1.0).abs() < 1e-12);
        assert!(log_spaced(0.0, 1.0, 3).is_err());
        assert!(log_spaced(1.0, 2.0, 0).is_err());
        assert_eq!(log_spaced(2.0, 5.0, 1).unwrap(), vec![2.0]);
    }

    #[test]
    fn grid_validation() {
        let (osc, eff) = fig_params();
        assert!(SweepGrid::new(vec![], vec![1.0], osc, eff).is_err());
        assert!(SweepGrid::new(vec![1.0, 1.0], vec![1.0], osc, eff).is_err());
        assert!(SweepGrid::new(vec![1.0], vec![-1.0], osc, eff).is_err());
        assert!(SweepGrid::new(vec![1.0, 2.0], vec![0.5], osc, eff).is_ok());
    }

    #[test]
    fn surface_within_purity_interval_and_row_order() {
        let (osc, eff) = fig_params();
        let grid = SweepGrid::new(log_spaced(1e-3, 1e3, 21).unwrap(), log_spaced(1e-3, 1e3, 17).unwrap(), osc, eff)
            .unwrap();
        let rows = purity_surface(&grid).unwrap();
        assert_eq!(rows.len(), 21 * 17);
        assert_eq!((rows[0].q, rows[0].s), (1e-3, 1e-3));
        assert_eq!((rows[1].q, rows[1].s), (1e-3, grid.s_values[1]));
        assert_eq!(rows[17].q, grid.q_values[1]);
        for r in &rows {
            assert!(r.p_inf > 0.1f64.sqrt() && r.p_inf < 0.9f64.sqrt(), "{r:?}");
        }
    }

    #[test]
    fn zero_correlation_line_is_flat_in_q() {
        let (osc, eff) = fig_params();
        let grid = SweepGrid::new(log_spaced(1e-3, 1e3, 31).unwrap(), vec![3.0], osc, eff).unwrap();
        for r in purity_surface(&grid).unwrap() {
            assert!((r.p_inf - 0.09f64.powf(0.25)).abs() < 1e-9);
            assert!(r.c_inf.abs() < 1e-9);
        }
    }

    #[test]
    fn equal_efficiencies_give_flat_surface() {
        let osc = OscillatorParams::canonical();
        let eff = Efficiencies::new(0.64, 0.64).unwrap();
        let grid = SweepGrid::new(log_spaced(1e-3, 1e3, 11).unwrap(), log_spaced(1e-3, 1e3, 11).unwrap(), osc, eff)
            .unwrap();
        for r in purity_surface(&grid).unwrap() {
            assert!((r.p_inf - 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn ellipse_examples() {
        let e = ellipse_from_covariance(&SymMat2::IDENTITY, [0.0, 0.0], DEFAULT_ELLIPSE_LEVEL).unwrap();
        assert!((e.semi_axes[0] - 1.0).abs() < 1e-12 && (e.semi_axes[1] - 1.0).abs() < 1e-12);
        let e = ellipse_from_covariance(&SymMat2::diag(4.0, 1.0), [0.0, 0.0], DEFAULT_ELLIPSE_LEVEL).unwrap();
        assert!((e.semi_axes[0] - 2.0).abs() < 1e-12 && (e.semi_axes[1] - 1.0).abs() < 1e-12);
        assert_eq!(e.orientation, 0.0);
        let e = ellipse_from_covariance(&SymMat2::diag(1.0, 4.0), [0.0, 0.0], DEFAULT_ELLIPSE_LEVEL).unwrap();
        assert!((e.orientation - PI / 2.0).abs() < 1e-12);
        assert!(ellipse_from_covariance(&SymMat2::new(1.0, 2.0, 1.0), [0.0, 0.0], 0.5).is_err());
        assert!(ellipse_from_covariance(&SymMat2::IDENTITY, [0.0, 0.0], 1.0).is_err());
        assert!(ellipse_from_covariance(&SymMat2::IDENTITY, [0.0, 0.0], 0.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn boundary_points_sit_on_the_level_curve(
            l1 in 0.01f64..10.0,
            l2 in 0.01f64..10.0,
            angle in -3.0f64..3.0,
            cx in -5.0f64..5.0,
            cp in -5.0f64..5.0,
            level in 0.01f64..0.99,
            phi in 0.0f64..6.3,
        ) {
            let (c, s) = (angle.cos(), angle.sin());
            let sigma = SymMat2::new(
                c * c * l1 + s * s * l2,
                c * s * (l1 - l2),
                s * s * l1 + c * c * l2,
            );
            let e = ellipse_from_covariance(&sigma, [cx, cp], level).unwrap();
            let b = e.boundary_point(phi);
            let d = sigma.mahalanobis_sq([b[0] - cx, b[1] - cp]).unwrap().sqrt();
            let expect = (-2.0 * (1.0 - level).ln()).sqrt();
            prop_assert!((d - expect).abs() < 1e-10 * expect.max(1.0), "{d} vs {expect}");
            prop_assert!(e.semi_axes[0] >= e.semi_axes[1] && e.semi_axes[1] > 0.0);
        }
    }

    #[test]
    fn squeezing_preset_reproduces_caption_values() {
        let (osc, eff) = fig_params();
        let protocol = QuasiStaticProtocol::squeezing_preset();
        assert_eq!(protocol.s_schedule.len(), 21);
        assert_eq!(protocol.s_schedule[0], 3.0);
        assert_eq!(protocol.s_schedule[20], 1e-4);
        let steps = run_quasi_static(&protocol, &osc, &eff).unwrap();
        assert!((steps[0].solution.p_inf - 0.5477).abs() < 1e-3);
        assert!(steps[0].solution.c_inf().abs() < 1e-10);
        let last = steps[20].solution.p_inf;
        assert!(last < 0.9f64.sqrt() && last > 0.9f64.sqrt() - 0.01, "{last}");
        for w in steps.windows(2) {
            assert!(w[1].solution.p_inf >= w[0].solution.p_inf);
            assert!(w[1].solution.c_inf() < 0.0);
        }
        let cmp = compare_final_correlation(&steps, -1.04).unwrap();
        assert_eq!(cmp.closer, CorrelationMeasure::Covariance);
        assert!((cmp.c_inf + 1.04).abs() < 0.01, "{cmp:?}");
        assert!(cmp.correlation_coefficient > -1.0);
    }

    #[test]
    fn equal_efficiency_protocol_is_flat() {
        let osc = OscillatorParams::canonical();
        let eff = Efficiencies::new(0.5, 0.5).unwrap();
        let steps = run_quasi_static(&QuasiStaticProtocol::squeezing_preset(), &osc, &eff).unwrap();
        for st in steps {
            assert!((st.solution.p_inf - 0.5f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn protocol_validation() {
        assert!(matches!(
            QuasiStaticProtocol::new(vec![], 1.0),
            Err(Error::InvalidArgument { field: "s_schedule", .. })
        ));
        assert!(QuasiStaticProtocol::new(vec![1.0, f64::NAN], 1.0).is_err());
        assert!(QuasiStaticProtocol::new(vec![1.0], 0.0).is_err());
    }

    #[test]
    fn slow_schedule_tracks_instantaneous_steady_state() {
        let (osc, eff) = fig_params();
        let protocol = QuasiStaticProtocol::squeezing_preset();
        let legs = quasi_static_tracking(&protocol, &osc, &eff).unwrap();
        assert_eq!(legs.len(), 21);
        for leg in &legs {
            assert!(leg.deviation < protocol.settle_criterion, "{leg:?}");
        }
    }

    #[test]
    fn protocol_csv_and_svg() {
        let (osc, eff) = fig_params();
        let steps = run_quasi_static(&QuasiStaticProtocol::squeezing_preset(), &osc, &eff).unwrap();
        let mut buf = Vec::new();
        write_protocol_csv(&steps, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "step,s,q,v_x_inf,c_inf,v_p_inf,p_inf,ellipse_a,ellipse_b,ellipse_theta\n"
        ));
        assert_eq!(text.lines().count(), 22);
        let svg = render_protocol_svg(&steps);
        assert_eq!(svg.matches("<ellipse").count(), 21);
        assert!(svg.contains(r##"stroke="#000000""##));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn zc_ratio_for_figure_parameters() {
        let (osc, eff) = fig_params();
        assert!((zero_correlation_ratio(&osc, &eff) - 3.0).abs() < 1e-15);
    }
}
