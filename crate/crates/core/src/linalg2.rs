//! Fixed-size 2×2 real matrix kernels.
//!
//! Everything in the crate lives in a two-dimensional phase space, so the
//! matrix exponential, Lyapunov solve and square root are written out in
//! closed form instead of going through a general dense library.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Phase-space vector `(x, p)`.
pub type Vec2 = [f64; 2];

/// Below this magnitude of the eigenvalue discriminant the exponential uses the
/// repeated-eigenvalue limit.
pub const EXP_REPEATED_THRESHOLD: f64 = 1e-12;

/// Largest negative eigenvalue (relative to the spectral scale) tolerated by [`sym_sqrt`].
pub const SQRT_NEGATIVE_TOL: f64 = 1e-12;

/// General 2×2 real matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat2 {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
}

/// Symmetric 2×2 matrix with the off-diagonal stored once.
///
/// Field names follow the phase-space covariance layout
/// `[[xx, xp], [xp, pp]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymMat2 {
    pub xx: f64,
    pub xp: f64,
    pub pp: f64,
}

impl Mat2 {
    pub const ZERO: Mat2 = Mat2::new(0.0, 0.0, 0.0, 0.0);
    pub const IDENTITY: Mat2 = Mat2::new(1.0, 0.0, 0.0, 1.0);

    pub const fn new(a11: f64, a12: f64, a21: f64, a22: f64) -> Self {
        Mat2 { a11, a12, a21, a22 }
    }

    pub const fn diag(d1: f64, d2: f64) -> Self {
        Mat2::new(d1, 0.0, 0.0, d2)
    }

    pub fn transpose(&self) -> Mat2 {
        Mat2::new(self.a11, self.a21, self.a12, self.a22)
    }

    pub fn trace(&self) -> f64 {
        self.a11 + self.a22
    }

    pub fn det(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a21
    }

    pub fn scale(&self, s: f64) -> Mat2 {
        Mat2::new(self.a11 * s, self.a12 * s, self.a21 * s, self.a22 * s)
    }

    pub fn apply(&self, v: Vec2) -> Vec2 {
        [
            self.a11 * v[0] + self.a12 * v[1],
            self.a21 * v[0] + self.a22 * v[1],
        ]
    }

    pub fn inverse(&self) -> Result<Mat2> {
        let det = self.det();
        let scale = self.max_abs();
        if det == 0.0 || !det.is_finite() || det.abs() <= f64::EPSILON * scale * scale {
            return Err(Error::Singular(format!("matrix determinant {det:e}")));
        }
        Ok(Mat2::new(self.a22, -self.a12, -self.a21, self.a11).scale(1.0 / det))
    }

    pub fn max_abs(&self) -> f64 {
        self.a11
            .abs()
            .max(self.a12.abs())
            .max(self.a21.abs())
            .max(self.a22.abs())
    }

    pub fn is_finite(&self) -> bool {
        self.a11.is_finite() && self.a12.is_finite() && self.a21.is_finite() && self.a22.is_finite()
    }

    /// Symmetric part `(M + Mᵀ)/2`.
    pub fn symmetric_part(&self) -> SymMat2 {
        SymMat2::new(self.a11, 0.5 * (self.a12 + self.a21), self.a22)
    }

    /// Eigenvalues as `(re, im)` pairs, the one with the larger real part first.
    pub fn eigenvalues(&self) -> [(f64, f64); 2] {
        let half_tr = 0.5 * self.trace();
        let disc = self.discriminant();
        if disc >= 0.0 {
            let r = disc.sqrt();
            [(half_tr + r, 0.0), (half_tr - r, 0.0)]
        } else {
            let r = (-disc).sqrt();
            [(half_tr, r), (half_tr, -r)]
        }
    }

    /// Largest real part over the spectrum.
    pub fn spectral_abscissa(&self) -> f64 {
        self.eigenvalues()[0].0
    }

    /// Both eigenvalues strictly in the open left half-plane.
    pub fn is_hurwitz(&self) -> bool {
        // trace < 0 and det > 0 is necessary and sufficient for 2×2 real matrices
        self.trace() < 0.0 && self.det() > 0.0
    }

    /// `(tr/2)² − det`, whose sign decides real versus complex eigenvalues.
    fn discriminant(&self) -> f64 {
        let d = 0.5 * (self.a11 - self.a22);
        d * d + self.a12 * self.a21
    }

    pub fn row_major(&self) -> [f64; 4] {
        [self.a11, self.a12, self.a21, self.a22]
    }
}

impl Mul for Mat2 {
    type Output = Mat2;

    fn mul(self, o: Mat2) -> Mat2 {
        Mat2::new(
            self.a11 * o.a11 + self.a12 * o.a21,
            self.a11 * o.a12 + self.a12 * o.a22,
            self.a21 * o.a11 + self.a22 * o.a21,
            self.a21 * o.a12 + self.a22 * o.a22,
        )
    }
}

impl Add for Mat2 {
    type Output = Mat2;

    fn add(self, o: Mat2) -> Mat2 {
        Mat2::new(self.a11 + o.a11, self.a12 + o.a12, self.a21 + o.a21, self.a22 + o.a22)
    }
}

impl Sub for Mat2 {
    type Output = Mat2;

    fn sub(self, o: Mat2) -> Mat2 {
        Mat2::new(self.a11 - o.a11, self.a12 - o.a12, self.a21 - o.a21, self.a22 - o.a22)
    }
}

impl Neg for Mat2 {
    type Output = Mat2;

    fn neg(self) -> Mat2 {
        self.scale(-1.0)
    }
}

impl SymMat2 {
    pub const ZERO: SymMat2 = SymMat2::new(0.0, 0.0, 0.0);
    pub const IDENTITY: SymMat2 = SymMat2::new(1.0, 0.0, 1.0);

    pub const fn new(xx: f64, xp: f64, pp: f64) -> Self {
        SymMat2 { xx, xp, pp }
    }

    pub const fn diag(xx: f64, pp: f64) -> Self {
        SymMat2::new(xx, 0.0, pp)
    }

    pub fn to_mat(&self) -> Mat2 {
        Mat2::new(self.xx, self.xp, self.xp, self.pp)
    }

    pub fn det(&self) -> f64 {
        self.xx * self.pp - self.xp * self.xp
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.pp
    }

    pub fn scale(&self, s: f64) -> SymMat2 {
        SymMat2::new(self.xx * s, self.xp * s, self.pp * s)
    }

    pub fn max_abs(&self) -> f64 {
        self.xx.abs().max(self.xp.abs()).max(self.pp.abs())
    }

    pub fn is_finite(&self) -> bool {
        self.xx.is_finite() && self.xp.is_finite() && self.pp.is_finite()
    }

    pub fn inverse(&self) -> Result<SymMat2> {
        let det = self.det();
        let scale = self.max_abs();
        if det == 0.0 || !det.is_finite() || det.abs() <= f64::EPSILON * scale * scale {
            return Err(Error::Singular(format!("symmetric matrix determinant {det:e}")));
        }
        Ok(SymMat2::new(self.pp / det, -self.xp / det, self.xx / det))
    }

    /// `M·S·Mᵀ`, which stays symmetric by construction.
    pub fn congruence(&self, m: &Mat2) -> SymMat2 {
        (*m * self.to_mat() * m.transpose()).symmetric_part()
    }

    /// Eigenvalues, larger first.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let mid = 0.5 * (self.xx + self.pp);
        let rad = (0.5 * (self.xx - self.pp)).hypot(self.xp);
        [mid + rad, mid - rad]
    }

    /// Angle in `(−π/2, π/2]` of the eigenvector belonging to the larger
    /// eigenvalue, with the first nonzero component taken positive.
    pub fn leading_eigen_angle(&self) -> f64 {
        let theta = 0.5 * (2.0 * self.xp).atan2(self.xx - self.pp);
        // atan2 returns (−π, π], halving lands in (−π/2, π/2]
        if theta <= -std::f64::consts::FRAC_PI_2 {
            theta + std::f64::consts::PI
        } else {
            theta
        }
    }

    /// Quadratic form `vᵀ S⁻¹ v`.
    pub fn mahalanobis_sq(&self, v: Vec2) -> Result<f64> {
        let inv = self.inverse()?;
        Ok(inv.xx * v[0] * v[0] + 2.0 * inv.xp * v[0] * v[1] + inv.pp * v[1] * v[1])
    }
}

impl Add for SymMat2 {
    type Output = SymMat2;

    fn add(self, o: SymMat2) -> SymMat2 {
        SymMat2::new(self.xx + o.xx, self.xp + o.xp, self.pp + o.pp)
    }
}

impl Sub for SymMat2 {
    type Output = SymMat2;

    fn sub(self, o: SymMat2) -> SymMat2 {
        SymMat2::new(self.xx - o.xx, self.xp - o.xp, self.pp - o.pp)
    }
}

impl From<SymMat2> for Mat2 {
    fn from(s: SymMat2) -> Mat2 {
        s.to_mat()
    }
}

/// `exp(m·t)` with the default repeated-eigenvalue threshold.
pub fn mat_exp(m: &Mat2, t: f64) -> Result<Mat2> {
    mat_exp_with_threshold(m, t, EXP_REPEATED_THRESHOLD)
}

/// `exp(m·t)` via Cayley–Hamilton.
///
/// Writing `M = m·t = s·I + N` with `s = tr(M)/2`, the traceless part obeys
/// `N² = disc·I`, so `exp(M) = e^s (c0·I + c1·N)` where `(c0, c1)` is
/// `(cosh r, sinh r / r)` for `disc = r² > 0`, `(cos r, sin r / r)` for
/// `disc = −r² < 0`, and the truncated series for `|disc|` below `threshold`.
pub fn mat_exp_with_threshold(m: &Mat2, t: f64, threshold: f64) -> Result<Mat2> {
    ensure_finite("t", &[t])?;
    if !m.is_finite() {
        return Err(Error::invalid("m", "must be finite"));
    }
    let mt = m.scale(t);
    let s = 0.5 * mt.trace();
    let n = mt - Mat2::IDENTITY.scale(s);
    let disc = mt.discriminant();

    let (c0, c1) = if disc.abs() < threshold {
        (
            (1.0 + disc / 2.0 + disc * disc / 24.0) * s.exp(),
            (1.0 + disc / 6.0 + disc * disc / 120.0) * s.exp(),
        )
    } else if disc > 0.0 {
        let r = disc.sqrt();
        if r < 1.0 {
            let es = s.exp();
            (es * r.cosh(), es * r.sinh() / r)
        } else {
            // combine exponents first so e^s·cosh(r) does not overflow when s ≪ 0 ≪ r
            let up = (s + r).exp();
            let down = (s - r).exp();
            (0.5 * (up + down), 0.5 * (up - down) / r)
        }
    } else {
        let r = (-disc).sqrt();
        let es = s.exp();
        (es * r.cos(), es * r.sin() / r)
    };

    let out = Mat2::IDENTITY.scale(c0) + n.scale(c1);
    if !out.is_finite() {
        return Err(Error::NumericalFailure(format!(
            "matrix exponential overflowed at t = {t}"
        )));
    }
    Ok(out)
}

/// Solves `g·P + P·gᵀ + rhs = 0` for symmetric `P`.
///
/// The unknowns `(P.xx, P.xp, P.pp)` satisfy a 3×3 linear system that is
/// nonsingular whenever `g` is Hurwitz.
pub fn solve_lyapunov(g: &Mat2, rhs: &SymMat2) -> Result<SymMat2> {
    if !g.is_finite() || !rhs.is_finite() {
        return Err(Error::invalid("g", "Lyapunov inputs must be finite"));
    }
    if !g.is_hurwitz() {
        return Err(Error::Singular(format!(
            "Lyapunov operator requires a Hurwitz matrix (trace {:e}, det {:e})",
            g.trace(),
            g.det()
        )));
    }
    let Mat2 { a11: a, a12: b, a21: c, a22: d } = *g;
    let lhs = [
        [2.0 * a, 2.0 * b, 0.0],
        [c, a + d, b],
        [0.0, 2.0 * c, 2.0 * d],
    ];
    let x = solve3(lhs, [-rhs.xx, -rhs.xp, -rhs.pp])
        .ok_or_else(|| Error::Singular("Lyapunov linear system is singular".into()))?;
    Ok(SymMat2::new(x[0], x[1], x[2]))
}

/// Gaussian elimination with partial pivoting.
fn solve3(mut m: [[f64; 3]; 3], mut v: [f64; 3]) -> Option<[f64; 3]> {
    let scale = m
        .iter()
        .flatten()
        .fold(0.0f64, |acc, x| acc.max(x.abs()));
    if scale == 0.0 {
        return None;
    }
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap_or(col);
        if m[pivot][col].abs() <= 1e-14 * scale {
            return None;
        }
        m.swap(col, pivot);
        v.swap(col, pivot);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            let pivot_row = m[col];
            for (dst, src) in m[row].iter_mut().zip(pivot_row).skip(col) {
                *dst -= f * src;
            }
            v[row] -= f * v[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let tail: f64 = (row + 1..3).map(|k| m[row][k] * x[k]).sum();
        x[row] = (v[row] - tail) / m[row][row];
    }
    Some(x)
}

/// Strict positive definiteness: `xx > 0` and `det > 0`.
pub fn is_positive_definite(s: &SymMat2) -> bool {
    s.xx > 0.0 && s.det() > 0.0
}

pub fn sym_sqrt(s: &SymMat2) -> Result<SymMat2> {
    sym_sqrt_with_tol(s, SQRT_NEGATIVE_TOL)
}

/// Principal square root of a positive semidefinite matrix.
///
/// Uses `√S = (S + √det(S)·I) / √(tr S + 2√det S)`.
pub fn sym_sqrt_with_tol(s: &SymMat2, tol: f64) -> Result<SymMat2> {
    if !s.is_finite() {
        return Err(Error::invalid("s", "must be finite"));
    }
    let [hi, lo] = s.eigenvalues();
    if lo < -tol * hi.abs().max(1.0) {
        return Err(Error::invalid(
            "s",
            format!("is not positive semidefinite (eigenvalue {lo:e})"),
        ));
    }
    if s.xx == s.pp && s.xp == 0.0 {
        let r = s.xx.max(0.0).sqrt();
        return Ok(SymMat2::diag(r, r));
    }
    let root_det = (hi.max(0.0) * lo.max(0.0)).sqrt();
    let denom = (s.trace() + 2.0 * root_det).sqrt();
    if denom == 0.0 {
        return Ok(SymMat2::ZERO);
    }
    Ok(SymMat2::new(
        (s.xx + root_det) / denom,
        s.xp / denom,
        (s.pp + root_det) / denom,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series_exp(m: &Mat2, t: f64) -> Mat2 {
        let mt = m.scale(t);
        let mut term = Mat2::IDENTITY;
        let mut sum = Mat2::IDENTITY;
        for k in 1..80 {
            term = (term * mt).scale(1.0 / k as f64);
            sum = sum + term;
        }
        sum
    }

    fn close(a: &Mat2, b: &Mat2, tol: f64) -> bool {
        (*a - *b).max_abs() <= tol
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(mat_exp(&Mat2::ZERO, 5.0).unwrap(), Mat2::IDENTITY);
    }

    #[test]
    fn exp_of_diagonal() {
        let e = mat_exp(&Mat2::diag(-1.0, -2.0), 1.0).unwrap();
        assert!(close(&e, &Mat2::diag((-1f64).exp(), (-2f64).exp()), 1e-15));
    }

    #[test]
    fn exp_of_rotation_generator_quarter_turn() {
        let g = Mat2::new(0.0, -1.0, 1.0, 0.0);
        let t = std::f64::consts::FRAC_PI_2;
        let oracle = series_exp(&g, t);
        assert!(close(&oracle, &Mat2::new(0.0, -1.0, 1.0, 0.0), 1e-12));
        assert!(close(&mat_exp(&g, t).unwrap(), &oracle, 1e-12));
    }

    #[test]
    fn exp_repeated_eigenvalue_branch() {
        // Jordan block: exp([[λ,1],[0,λ]]t) = e^{λt}[[1,t],[0,1]]
        let j = Mat2::new(-0.5, 1.0, 0.0, -0.5);
        let e = mat_exp(&j, 2.0).unwrap();
        let f = (-1.0f64).exp();
        assert!(close(&e, &Mat2::new(f, 2.0 * f, 0.0, f), 1e-15));
        assert!(close(&e, &series_exp(&j, 2.0), 1e-13));
    }

    #[test]
    fn exp_rejects_non_finite() {
        assert!(mat_exp(&Mat2::IDENTITY, f64::NAN).is_err());
        assert!(mat_exp(&Mat2::new(f64::INFINITY, 0.0, 0.0, 0.0), 1.0).is_err());
    }

    #[test]
    fn exp_large_stable_time_does_not_overflow() {
        let g = Mat2::new(-300.0, 0.0, 0.0, -1.0);
        let e = mat_exp(&g, 3.0).unwrap();
        assert!(e.is_finite());
        assert!((e.a22 - (-3.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn lyapunov_decoupled_cases() {
        let p = solve_lyapunov(&Mat2::diag(-1.0, -1.0), &SymMat2::IDENTITY).unwrap();
        assert!((p - SymMat2::diag(0.5, 0.5)).max_abs() < 1e-15);
        let p = solve_lyapunov(&Mat2::diag(-1.0, -2.0), &SymMat2::IDENTITY).unwrap();
        assert!((p - SymMat2::diag(0.5, 0.25)).max_abs() < 1e-15);
    }

    #[test]
    fn lyapunov_rejects_unstable() {
        let err = solve_lyapunov(&Mat2::diag(1.0, -1.0), &SymMat2::IDENTITY).unwrap_err();
        assert!(matches!(err, Error::Singular(_)));
        assert!(solve_lyapunov(&Mat2::new(0.0, -1.0, 1.0, 0.0), &SymMat2::IDENTITY).is_err());
    }

    #[test]
    fn positive_definite_examples() {
        assert!(is_positive_definite(&SymMat2::IDENTITY));
        assert!(!is_positive_definite(&SymMat2::diag(1.0, -1.0)));
        assert!(!is_positive_definite(&SymMat2::new(1.0, 2.0, 1.0)));
        assert!(!is_positive_definite(&SymMat2::ZERO));
    }

    #[test]
    fn sqrt_examples() {
        assert_eq!(sym_sqrt(&SymMat2::diag(4.0, 9.0)).unwrap(), SymMat2::diag(2.0, 3.0));
        assert_eq!(sym_sqrt(&SymMat2::IDENTITY).unwrap(), SymMat2::IDENTITY);
        assert_eq!(sym_sqrt(&SymMat2::ZERO).unwrap(), SymMat2::ZERO);
        assert!(sym_sqrt(&SymMat2::diag(1.0, -1e-3)).is_err());
    }

    #[test]
    fn leading_angle_convention() {
        assert_eq!(SymMat2::diag(4.0, 1.0).leading_eigen_angle(), 0.0);
        let vertical = SymMat2::diag(1.0, 4.0).leading_eigen_angle();
        assert!((vertical - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        let diag45 = SymMat2::new(2.0, 1.0, 2.0).leading_eigen_angle();
        assert!((diag45 - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
    }

    fn mat_strategy(bound: f64) -> impl Strategy<Value = Mat2> {
        prop::array::uniform4(-bound..bound).prop_map(|[a, b, c, d]| Mat2::new(a, b, c, d))
    }

    fn norm_bounded(bound: f64) -> impl Strategy<Value = Mat2> {
        mat_strategy(bound).prop_filter("spectral-ish norm bound", move |m| {
            // Frobenius norm dominates the operator norm
            (m.a11 * m.a11 + m.a12 * m.a12 + m.a21 * m.a21 + m.a22 * m.a22).sqrt() <= bound
        })
    }

    fn psd_strategy() -> impl Strategy<Value = SymMat2> {
        mat_strategy(2.0).prop_map(|l| (l * l.transpose()).symmetric_part())
    }

    fn hurwitz_strategy() -> impl Strategy<Value = Mat2> {
        mat_strategy(3.0).prop_filter("Hurwitz with margin", |g| {
            g.is_hurwitz() && g.spectral_abscissa() < -0.05
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn exp_semigroup(m in norm_bounded(5.0), t1 in 0.0..2.0f64, t2 in 0.0..2.0f64) {
            let lhs = mat_exp(&m, t1 + t2).unwrap();
            let rhs = mat_exp(&m, t1).unwrap() * mat_exp(&m, t2).unwrap();
            let scale = lhs.max_abs().max(1.0);
            prop_assert!((lhs - rhs).max_abs() <= 1e-10 * scale);
        }

        #[test]
        fn exp_matches_series(m in norm_bounded(3.0), t in 0.0..1.0f64) {
            let e = mat_exp(&m, t).unwrap();
            let s = series_exp(&m, t);
            prop_assert!((e - s).max_abs() <= 1e-11 * s.max_abs().max(1.0));
        }

        #[test]
        fn exp_derivative_by_central_difference(m in norm_bounded(5.0), t in 0.1..2.0f64) {
            let h = 1e-6;
            let fd = (mat_exp(&m, t + h).unwrap() - mat_exp(&m, t - h).unwrap()).scale(0.5 / h);
            let exact = m * mat_exp(&m, t).unwrap();
            let scale = exact.max_abs().max(mat_exp(&m, t).unwrap().max_abs());
            prop_assert!((fd - exact).max_abs() <= 1e-6 * scale.max(1.0));
        }

        #[test]
        fn lyapunov_residual(g in hurwitz_strategy(), rhs in psd_strategy()) {
            let p = solve_lyapunov(&g, &rhs).unwrap();
            let res = g * p.to_mat() + p.to_mat() * g.transpose() + rhs.to_mat();
            let scale = (g * p.to_mat()).max_abs().max(rhs.max_abs()).max(1.0);
            prop_assert!(res.max_abs() < 1e-12 * scale, "residual {:e}", res.max_abs());
        }

        #[test]
        fn sqrt_squares_back(s in psd_strategy()) {
            let r = sym_sqrt(&s).unwrap();
            let sq = r.to_mat() * r.to_mat();
            prop_assert!((sq - s.to_mat()).max_abs() <= 1e-12 * s.max_abs().max(1.0));
            prop_assert!(r.eigenvalues()[1] >= -1e-12);
        }

        #[test]
        fn sqrt_recovers_root_of_square(
            s in psd_strategy().prop_filter("well conditioned", |s| s.eigenvalues()[1] > 1e-3 * s.eigenvalues()[0])
        ) {
            let sq = (s.to_mat() * s.to_mat()).symmetric_part();
            let r = sym_sqrt(&sq).unwrap();
            prop_assert!((r - s).max_abs() <= 1e-9 * s.max_abs().max(1.0));
        }
    }
}
