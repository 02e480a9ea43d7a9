//! Physical parameters and the system matrices they induce.
//!
//! The library is unit-agnostic. All figures of the reference setup use the
//! nondimensionalization `m = ω = 1`, `ħ = 2`; see [`OscillatorParams::canonical`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg2::{Mat2, SymMat2};

/// Mass, angular frequency and reduced Planck constant of the oscillator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillatorParams {
    pub mass: f64,
    pub omega: f64,
    pub hbar: f64,
}

impl OscillatorParams {
    pub fn new(mass: f64, omega: f64, hbar: f64) -> Result<Self> {
        positive("m", mass)?;
        positive("omega", omega)?;
        positive("hbar", hbar)?;
        Ok(OscillatorParams { mass, omega, hbar })
    }

    /// `m = ω = 1`, `ħ = 2`.
    pub fn canonical() -> Self {
        OscillatorParams {
            mass: 1.0,
            omega: 1.0,
            hbar: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        OscillatorParams::new(self.mass, self.omega, self.hbar).map(|_| ())
    }

    /// `ħ²/4`, the Robertson–Schrödinger floor on `det Σ`.
    pub fn uncertainty_floor(&self) -> f64 {
        0.25 * self.hbar * self.hbar
    }
}

/// Detector efficiencies for the position and momentum channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Efficiencies {
    pub eta_x: f64,
    pub eta_p: f64,
}

impl Efficiencies {
    pub fn new(eta_x: f64, eta_p: f64) -> Result<Self> {
        efficiency("eta_x", eta_x)?;
        efficiency("eta_p", eta_p)?;
        Ok(Efficiencies { eta_x, eta_p })
    }

    pub fn validate(&self) -> Result<()> {
        Efficiencies::new(self.eta_x, self.eta_p).map(|_| ())
    }

    pub fn min(&self) -> f64 {
        self.eta_x.min(self.eta_p)
    }

    pub fn max(&self) -> f64 {
        self.eta_x.max(self.eta_p)
    }
}

/// Measurement strengths and efficiencies; the control knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub k_x: f64,
    pub k_p: f64,
    pub eta_x: f64,
    pub eta_p: f64,
}

impl DetectorConfig {
    pub fn new(k_x: f64, k_p: f64, eta_x: f64, eta_p: f64) -> Result<Self> {
        positive("k_x", k_x)?;
        positive("k_p", k_p)?;
        Efficiencies::new(eta_x, eta_p)?;
        Ok(DetectorConfig {
            k_x,
            k_p,
            eta_x,
            eta_p,
        })
    }

    pub fn from_coords(coords: StrengthCoords, eff: Efficiencies) -> Result<Self> {
        let (k_x, k_p) = strengths_from_coords(coords)?;
        DetectorConfig::new(k_x, k_p, eff.eta_x, eff.eta_p)
    }

    pub fn validate(&self) -> Result<()> {
        DetectorConfig::new(self.k_x, self.k_p, self.eta_x, self.eta_p).map(|_| ())
    }

    pub fn efficiencies(&self) -> Efficiencies {
        Efficiencies {
            eta_x: self.eta_x,
            eta_p: self.eta_p,
        }
    }

    pub fn coords(&self) -> StrengthCoords {
        StrengthCoords {
            q: self.k_x * self.k_p,
            s: self.k_x / self.k_p,
        }
    }
}

/// Drift `A`, noise gain `B`, diffusion `Q` and inverse-efficiency weight `χ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemMatrices {
    pub a: Mat2,
    pub b: Mat2,
    pub q: SymMat2,
    pub chi: SymMat2,
    /// `B·Bᵀ = diag(η_x k_x, η_p k_p)`, kept exact rather than squared from `B`.
    pub bbt: SymMat2,
    pub hbar: f64,
}

impl SystemMatrices {
    /// `ħ/(2√det Σ)`.
    pub fn purity_of(&self, sigma: &SymMat2) -> f64 {
        self.hbar / (2.0 * sigma.det().sqrt())
    }

    /// `tr(B Σ B)`.
    pub fn weighted_trace(&self, sigma: &SymMat2) -> f64 {
        let bb = self.bbt;
        bb.xx * sigma.xx + bb.pp * sigma.pp
    }

    /// `tr(χ B Σ B)`.
    pub fn chi_weighted_trace(&self, sigma: &SymMat2) -> f64 {
        let bb = self.bbt;
        self.chi.xx * bb.xx * sigma.xx + self.chi.pp * bb.pp * sigma.pp
    }
}

/// Auxiliary scalars of the rescaled Riccati equation.
///
/// `α` and `β` are the off-diagonal entries of `B⁻¹AB`; `γ` and `δ` are the
/// diagonal of `(BQB + ÃᵀÃ)^{1/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreekParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl GreekParams {
    /// `sin θ = (α − β)/(γ + δ)` of the rotation factor.
    pub fn sin_theta(&self) -> f64 {
        (self.alpha - self.beta) / (self.gamma + self.delta)
    }
}

/// Product/ratio coordinates `q = k_x k_p`, `s = k_x / k_p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrengthCoords {
    pub q: f64,
    pub s: f64,
}

impl StrengthCoords {
    pub fn new(q: f64, s: f64) -> Result<Self> {
        positive("q", q)?;
        positive("s", s)?;
        Ok(StrengthCoords { q, s })
    }

    pub fn from_strengths(k_x: f64, k_p: f64) -> Result<Self> {
        positive("k_x", k_x)?;
        positive("k_p", k_p)?;
        Ok(StrengthCoords {
            q: k_x * k_p,
            s: k_x / k_p,
        })
    }
}

/// Flat key-value parameter record used by files and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub m: f64,
    pub omega: f64,
    pub hbar: f64,
    pub k_x: f64,
    pub k_p: f64,
    pub eta_x: f64,
    pub eta_p: f64,
}

impl ParamSet {
    pub fn from_parts(osc: &OscillatorParams, det: &DetectorConfig) -> Self {
        ParamSet {
            m: osc.mass,
            omega: osc.omega,
            hbar: osc.hbar,
            k_x: det.k_x,
            k_p: det.k_p,
            eta_x: det.eta_x,
            eta_p: det.eta_p,
        }
    }

    pub fn split(&self) -> Result<(OscillatorParams, DetectorConfig)> {
        Ok((
            OscillatorParams::new(self.m, self.omega, self.hbar)?,
            DetectorConfig::new(self.k_x, self.k_p, self.eta_x, self.eta_p)?,
        ))
    }
}

pub fn build_system_matrices(osc: &OscillatorParams, det: &DetectorConfig) -> Result<SystemMatrices> {
    osc.validate()?;
    det.validate()?;
    let m = osc.mass;
    let w2 = osc.omega * osc.omega;
    let floor = osc.uncertainty_floor();
    Ok(SystemMatrices {
        a: Mat2::new(0.0, -m * w2, 1.0 / m, 0.0),
        b: Mat2::diag((det.eta_x * det.k_x).sqrt(), (det.eta_p * det.k_p).sqrt()),
        // momentum strength drives position diffusion and vice versa
        q: SymMat2::diag(floor * det.k_p, floor * det.k_x),
        chi: SymMat2::diag(1.0 / det.eta_x, 1.0 / det.eta_p),
        bbt: SymMat2::diag(det.eta_x * det.k_x, det.eta_p * det.k_p),
        hbar: osc.hbar,
    })
}

pub fn greek_params(osc: &OscillatorParams, det: &DetectorConfig) -> Result<GreekParams> {
    osc.validate()?;
    det.validate()?;
    let mw2 = osc.mass * osc.omega * osc.omega;
    let gain_x = det.eta_x * det.k_x;
    let gain_p = det.eta_p * det.k_p;
    let alpha = -mw2 * (gain_p / gain_x).sqrt();
    let beta = (gain_x / gain_p).sqrt() / osc.mass;
    let qh = osc.uncertainty_floor() * det.k_x * det.k_p;
    Ok(GreekParams {
        alpha,
        beta,
        gamma: (qh * det.eta_x + beta * beta).sqrt(),
        delta: (qh * det.eta_p + alpha * alpha).sqrt(),
    })
}

pub fn strengths_from_coords(c: StrengthCoords) -> Result<(f64, f64)> {
    positive("q", c.q)?;
    positive("s", c.s)?;
    Ok(((c.q * c.s).sqrt(), (c.q / c.s).sqrt()))
}

fn positive(field: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(field, "must be a finite positive number"))
    }
}

fn efficiency(field: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(field, "must be in (0, 1]"))
    }
}
