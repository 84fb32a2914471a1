//! Chip model: flux-qubit dispersion, dispersive resonator shifts and the
//! complex transmission of a feedline loaded with notch resonators.
//!
//! Units follow the field names: frequencies in Hz, rates (`kappa`, `gamma`)
//! and `omega` arguments in rad/s, flux in units of the flux quantum.

use std::collections::HashSet;
use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Relative tolerance on `|omega_q - omega_r| / omega_r` below which the raw
/// dispersive formula is refused.
pub const DEGENERACY_TOLERANCE: f64 = 1e-6;

/// Detuning, in units of the coupling, below which the feedline model uses
/// the exact two-mode hybridization instead of the dispersive shift.
pub const NORMAL_MODE_THRESHOLD: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QubitParams {
    /// Splitting at the symmetry point, Hz.
    pub gap_delta: f64,
    /// Slope of the energy bias with applied flux, Hz per flux quantum.
    pub flux_sensitivity: f64,
    /// Applied flux at which the energy bias vanishes.
    pub symmetry_flux: f64,
    /// Energy relaxation rate, rad/s.
    pub relaxation_rate_gamma: f64,
}

impl QubitParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gap_delta > 0.0 && self.gap_delta.is_finite()) {
            return Err(invalid(format!("gap_delta must be > 0, got {}", self.gap_delta)));
        }
        if !(self.relaxation_rate_gamma >= 0.0 && self.relaxation_rate_gamma.is_finite()) {
            return Err(invalid(format!(
                "relaxation_rate_gamma must be >= 0, got {}",
                self.relaxation_rate_gamma
            )));
        }
        if !self.symmetry_flux.is_finite() || !self.flux_sensitivity.is_finite() {
            return Err(invalid("symmetry_flux and flux_sensitivity must be finite"));
        }
        Ok(())
    }

    /// Energy bias in Hz at the given applied flux.
    pub fn epsilon(&self, applied_flux: f64) -> f64 {
        self.flux_sensitivity * (applied_flux - self.symmetry_flux)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonatorParams {
    /// Bare resonance frequency, Hz.
    pub bare_frequency: f64,
    /// Total energy decay rate, rad/s.
    pub total_linewidth_kappa: f64,
    /// Decay rate into the feedline, rad/s.
    pub external_linewidth: f64,
    /// Qubit-resonator coupling, Hz.
    pub coupling_g: f64,
}

impl ResonatorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.bare_frequency > 0.0 && self.bare_frequency.is_finite()) {
            return Err(invalid(format!(
                "bare_frequency must be > 0, got {}",
                self.bare_frequency
            )));
        }
        if !(self.external_linewidth > 0.0 && self.external_linewidth <= self.total_linewidth_kappa)
        {
            return Err(invalid(format!(
                "need 0 < external_linewidth ({}) <= total_linewidth_kappa ({})",
                self.external_linewidth, self.total_linewidth_kappa
            )));
        }
        if !(self.coupling_g >= 0.0 && self.coupling_g.is_finite()) {
            return Err(invalid(format!("coupling_g must be >= 0, got {}", self.coupling_g)));
        }
        Ok(())
    }

    pub fn omega_r(&self) -> f64 {
        TAU * self.bare_frequency
    }

    pub fn g_angular(&self) -> f64 {
        TAU * self.coupling_g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub id: u32,
    pub qubit: QubitParams,
    pub resonator: ResonatorParams,
}

impl DeviceRecord {
    pub fn validate(&self) -> Result<()> {
        self.qubit.validate()?;
        self.resonator.validate()
    }

    /// Qubit transition in rad/s at the given applied flux.
    pub fn omega_q(&self, applied_flux: f64) -> f64 {
        TAU * qubit_frequency(&self.qubit, applied_flux)
    }

    /// Resonator shift for a qubit held in `state` at its symmetry point.
    pub fn symmetry_point_shift(&self, state: QubitStateLabel) -> Result<f64> {
        if self.resonator.coupling_g == 0.0 {
            return Ok(0.0);
        }
        dispersive_shift(&self.resonator, self.omega_q(self.qubit.symmetry_flux), state)
    }
}

/// Validates a set of devices as one chip: each record valid, ids unique.
pub fn validate_chip(chip: &[DeviceRecord]) -> Result<()> {
    let mut seen = HashSet::new();
    for d in chip {
        d.validate()
            .map_err(|e| invalid(format!("device {}: {e}", d.id)))?;
        if !seen.insert(d.id) {
            return Err(invalid(format!("duplicate device id {}", d.id)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum QubitStateLabel {
    Ground,
    Excited,
}

impl QubitStateLabel {
    pub fn sigma_z(self) -> f64 {
        match self {
            QubitStateLabel::Ground => -1.0,
            QubitStateLabel::Excited => 1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            QubitStateLabel::Ground => QubitStateLabel::Excited,
            QubitStateLabel::Excited => QubitStateLabel::Ground,
        }
    }
}

impl TryFrom<i8> for QubitStateLabel {
    type Error = Error;

    fn try_from(v: i8) -> Result<Self> {
        match v {
            -1 => Ok(QubitStateLabel::Ground),
            1 => Ok(QubitStateLabel::Excited),
            other => Err(invalid(format!("sigma_z must be -1 or +1, got {other}"))),
        }
    }
}

impl From<QubitStateLabel> for i8 {
    fn from(s: QubitStateLabel) -> i8 {
        s.sigma_z() as i8
    }
}

/// Qubit transition frequency in Hz: `sqrt(delta^2 + epsilon^2)`.
pub fn qubit_frequency(q: &QubitParams, applied_flux: f64) -> f64 {
    q.gap_delta.hypot(q.epsilon(applied_flux))
}

/// Dispersive resonator shift `g^2 / (omega_q - omega_r) * sigma_z`, rad/s.
pub fn dispersive_shift(r: &ResonatorParams, omega_q: f64, state: QubitStateLabel) -> Result<f64> {
    let omega_r = r.omega_r();
    let detuning = omega_q - omega_r;
    let tolerance = DEGENERACY_TOLERANCE * omega_r;
    if detuning.abs() < tolerance {
        return Err(Error::DegenerateDetuning {
            detuning,
            tolerance,
        });
    }
    let g = r.g_angular();
    Ok(g * g / detuning * state.sigma_z())
}

/// Notch response `1 - (kappa_ext/2) / (i(omega - omega_r - shift) + kappa/2)`.
pub fn s21_single(r: &ResonatorParams, probe_omega: f64, shift: f64) -> Complex64 {
    notch(
        probe_omega - r.omega_r() - shift,
        r.external_linewidth,
        r.total_linewidth_kappa,
    )
}

fn notch(detuning: f64, kappa_ext: f64, kappa: f64) -> Complex64 {
    Complex64::new(1.0, 0.0) - notch_term(detuning, kappa_ext, kappa)
}

fn notch_term(detuning: f64, kappa_ext: f64, kappa: f64) -> Complex64 {
    Complex64::new(0.5 * kappa_ext, 0.0) / Complex64::new(0.5 * kappa, detuning)
}

/// One hybridized eigenmode of the resonator-qubit single-excitation block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalMode {
    /// Mode frequency, rad/s.
    pub omega: f64,
    /// Resonator participation in [0, 1].
    pub resonator_weight: f64,
}

/// Exact eigenmodes of `[[omega_r, g], [g, omega_q]]`, lower mode first.
pub fn normal_modes(r: &ResonatorParams, omega_q: f64) -> [NormalMode; 2] {
    let omega_r = r.omega_r();
    let g = r.g_angular();
    let mean = 0.5 * (omega_r + omega_q);
    let half_split = (0.5 * (omega_q - omega_r)).hypot(g);
    let mode = |omega: f64| {
        let d = omega - omega_r;
        let resonator_weight = if g == 0.0 {
            if d.abs() <= f64::EPSILON * omega_r { 1.0 } else { 0.0 }
        } else {
            g * g / (g * g + d * d)
        };
        NormalMode {
            omega,
            resonator_weight,
        }
    };
    [mode(mean - half_split), mode(mean + half_split)]
}

/// Transmission factor of one hybridized device with a definite qubit state.
/// The excited-state response mirrors the ground-state hybridization about
/// the bare resonator frequency so that its resonator-like branch carries the
/// opposite shift.
fn hybridized_factor(d: &DeviceRecord, probe_omega: f64, omega_q: f64, state: QubitStateLabel) -> Complex64 {
    let r = &d.resonator;
    let omega_r = r.omega_r();
    let effective_q = match state {
        QubitStateLabel::Ground => omega_q,
        QubitStateLabel::Excited => 2.0 * omega_r - omega_q,
    };
    let gamma = d.qubit.relaxation_rate_gamma;
    let mut s = Complex64::new(1.0, 0.0);
    for m in normal_modes(r, effective_q) {
        let w = m.resonator_weight;
        if w == 0.0 {
            continue;
        }
        let kappa_mode = w * r.total_linewidth_kappa + (1.0 - w) * gamma;
        s -= notch_term(probe_omega - m.omega, w * r.external_linewidth, kappa_mode);
    }
    s
}

fn uses_normal_modes(r: &ResonatorParams, omega_q: f64) -> bool {
    let g = r.g_angular();
    if g == 0.0 {
        return false;
    }
    let limit = (NORMAL_MODE_THRESHOLD * g).max(DEGENERACY_TOLERANCE * r.omega_r());
    (omega_q - r.omega_r()).abs() < limit
}

/// Transmission of a single device whose qubit has Bloch `z` expectation in
/// [-1, 1]. Dispersive region: shift `chi * z`. Near the anticrossing: the
/// population-weighted mixture of the two definite-state responses.
pub fn device_transmission(d: &DeviceRecord, probe_omega: f64, z: f64, applied_flux: f64) -> Complex64 {
    let r = &d.resonator;
    if r.coupling_g == 0.0 {
        return s21_single(r, probe_omega, 0.0);
    }
    let omega_q = d.omega_q(applied_flux);
    if uses_normal_modes(r, omega_q) {
        let p_excited = 0.5 * (1.0 + z.clamp(-1.0, 1.0));
        let mut s = Complex64::new(0.0, 0.0);
        if p_excited > 0.0 {
            s += hybridized_factor(d, probe_omega, omega_q, QubitStateLabel::Excited) * p_excited;
        }
        if p_excited < 1.0 {
            s += hybridized_factor(d, probe_omega, omega_q, QubitStateLabel::Ground) * (1.0 - p_excited);
        }
        s
    } else {
        let g = r.g_angular();
        let chi = g * g / (omega_q - r.omega_r());
        s21_single(r, probe_omega, chi * z)
    }
}

/// Composite transmission of every device on the line, definite qubit states.
pub fn s21_feedline(
    chip: &[DeviceRecord],
    probe_omega: f64,
    states: &[QubitStateLabel],
    fluxes: &[f64],
) -> Result<Complex64> {
    check_len("states", chip.len(), states.len())?;
    check_len("fluxes", chip.len(), fluxes.len())?;
    Ok(chip
        .iter()
        .zip(states)
        .zip(fluxes)
        .map(|((d, s), &f)| device_transmission(d, probe_omega, s.sigma_z(), f))
        .product())
}

/// Composite transmission with Bloch `z` expectation values instead of labels.
pub fn s21_feedline_mixed(
    chip: &[DeviceRecord],
    probe_omega: f64,
    z: &[f64],
    fluxes: &[f64],
) -> Result<Complex64> {
    check_len("z values", chip.len(), z.len())?;
    check_len("fluxes", chip.len(), fluxes.len())?;
    Ok(chip
        .iter()
        .zip(z)
        .zip(fluxes)
        .map(|((d, &z), &f)| device_transmission(d, probe_omega, z, f))
        .product())
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::LengthMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}
