//! Rotating-frame two-level dynamics: Rabi driving with relaxation, the
//! analytic saturation steady state, and the relaxation-induced telegraph
//! modulation of a readout resonator.
//!
//! Bloch equations integrated here, with `W` the Rabi rate and `d` the
//! drive-minus-qubit detuning (both rad/s), `g1 = gamma`,
//! `g2 = gamma / 2 + gamma_phi`:
//!
//! ```text
//! dx/dt = -d y - g2 x
//! dy/dt =  d x - W z - g2 y
//! dz/dt =  W y - g1 (z + 1)
//! ```
//!
//! `z = -1` is the ground state.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capacity::carson_bandwidth;
use crate::error::{invalid, Error, Result};
use crate::seed::item_rng;
use crate::trace::fft_plan;

/// Largest accepted `dt * rate` for one integrator step.
pub const MAX_STEP_PRODUCT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochState {
    pub const GROUND: BlochState = BlochState { x: 0.0, y: 0.0, z: -1.0 };
    pub const EXCITED: BlochState = BlochState { x: 0.0, y: 0.0, z: 1.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let s = BlochState { x, y, z };
        if !(s.norm() <= 1.0 + 1e-9) {
            return Err(invalid(format!("Bloch vector norm {} exceeds 1", s.norm())));
        }
        Ok(s)
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn excited_population(&self) -> f64 {
        0.5 * (1.0 + self.z)
    }

    fn axpy(self, h: f64, d: [f64; 3]) -> BlochState {
        BlochState {
            x: self.x + h * d[0],
            y: self.y + h * d[1],
            z: self.z + h * d[2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveSpec {
    /// Resonant Rabi frequency per unit drive amplitude, Hz.
    pub rabi_rate_per_unit_amplitude: f64,
    pub amplitude: f64,
    /// Drive frequency minus qubit frequency, Hz.
    pub detuning: f64,
    /// Seconds.
    pub duration: f64,
}

impl DriveSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration >= 0.0) {
            return Err(invalid("drive duration must be >= 0"));
        }
        if !(self.amplitude >= 0.0) {
            return Err(invalid("drive amplitude must be >= 0"));
        }
        if !self.rabi_rate_per_unit_amplitude.is_finite() || !self.detuning.is_finite() {
            return Err(invalid("drive rate and detuning must be finite"));
        }
        Ok(())
    }

    /// Resonant Rabi rate, rad/s.
    pub fn omega(&self) -> f64 {
        TAU * self.rabi_rate_per_unit_amplitude * self.amplitude
    }
}

/// Generalized Rabi frequency in Hz; equals the resonant rate when undetuned.
pub fn rabi_frequency(d: &DriveSpec) -> f64 {
    (d.rabi_rate_per_unit_amplitude * d.amplitude).hypot(d.detuning)
}

#[derive(Debug, Clone, Copy)]
struct BlochRates {
    omega: f64,
    detuning: f64,
    g1: f64,
    g2: f64,
}

impl BlochRates {
    fn derivative(&self, s: BlochState) -> [f64; 3] {
        [
            -self.detuning * s.y - self.g2 * s.x,
            self.detuning * s.x - self.omega * s.z - self.g2 * s.y,
            self.omega * s.y - self.g1 * (s.z + 1.0),
        ]
    }

    fn rk4(&self, s: BlochState, h: f64) -> BlochState {
        let k1 = self.derivative(s);
        let k2 = self.derivative(s.axpy(0.5 * h, k1));
        let k3 = self.derivative(s.axpy(0.5 * h, k2));
        let k4 = self.derivative(s.axpy(h, k3));
        let mut out = s;
        out.x += h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
        out.y += h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
        out.z += h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]);
        let n = out.norm();
        if n > 1.0 {
            out.x /= n;
            out.y /= n;
            out.z /= n;
        }
        out
    }
}

fn rates(d: &DriveSpec, gamma: f64, gamma_phi: f64) -> Result<BlochRates> {
    d.validate()?;
    if !(gamma >= 0.0 && gamma_phi >= 0.0) {
        return Err(invalid("relaxation rates must be >= 0"));
    }
    Ok(BlochRates {
        omega: d.omega(),
        detuning: TAU * d.detuning,
        g1: gamma,
        g2: 0.5 * gamma + gamma_phi,
    })
}

/// Integrates the Bloch equations over `d.duration` with classical RK4 at
/// fixed step `dt` (last step shortened to land on the duration).
pub fn evolve(state: BlochState, d: &DriveSpec, gamma: f64, gamma_phi: f64, dt: f64) -> Result<BlochState> {
    if !(dt > 0.0) {
        return Err(invalid("dt must be > 0"));
    }
    let r = rates(d, gamma, gamma_phi)?;
    let product = dt * (r.omega.hypot(r.detuning) + r.g1 + r.g2);
    if product > MAX_STEP_PRODUCT {
        return Err(Error::StepTooLarge { product });
    }
    let full = (d.duration / dt).floor() as usize;
    let mut s = state;
    for _ in 0..full {
        s = r.rk4(s, dt);
    }
    let rest = d.duration - full as f64 * dt;
    if rest > 1e-12 * dt {
        s = r.rk4(s, rest);
    }
    Ok(s)
}

/// Samples `evolve` at each duration in an increasing grid.
pub fn evolve_grid(
    state: BlochState,
    d: &DriveSpec,
    gamma: f64,
    gamma_phi: f64,
    dt: f64,
    durations: &[f64],
) -> Result<Vec<BlochState>> {
    let mut out = Vec::with_capacity(durations.len());
    let mut s = state;
    let mut t = 0.0;
    for &target in durations {
        if target < t {
            return Err(invalid("duration grid must be non-decreasing"));
        }
        let step = DriveSpec {
            duration: target - t,
            ..*d
        };
        s = evolve(s, &step, gamma, gamma_phi, dt)?;
        t = target;
        out.push(s);
    }
    Ok(out)
}

/// Steady state of the driven, damped Bloch equations in closed form.
pub fn steady_state(d: &DriveSpec, gamma: f64, gamma_phi: f64) -> Result<BlochState> {
    let r = rates(d, gamma, gamma_phi)?;
    if r.omega == 0.0 {
        return Ok(BlochState::GROUND);
    }
    if r.g1 == 0.0 {
        // undamped drive: time-averaged population saturates at one half
        return Ok(BlochState { x: 0.0, y: 0.0, z: 0.0 });
    }
    let l = r.detuning * r.detuning + r.g2 * r.g2;
    let z = -r.g1 * l / (r.g1 * l + r.omega * r.omega * r.g2);
    let y = -r.omega * z * r.g2 / l;
    let x = -r.detuning * y / r.g2;
    Ok(BlochState { x, y, z })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TelegraphSpectrum {
    /// Distance from the carrier, Hz, starting at 0.
    pub offsets: Vec<f64>,
    /// Fraction of total power at each offset; sums to 1.
    pub power: Vec<f64>,
    /// Half of the Carson bandwidth, rad/s.
    pub carson_half_width: f64,
    pub in_band_fraction: f64,
}

impl TelegraphSpectrum {
    pub fn out_of_band_fraction(&self) -> f64 {
        1.0 - self.in_band_fraction
    }
}

const TRAJECTORIES_PER_CHUNK: usize = 64;

/// Monte-Carlo spectrum of a carrier whose frequency follows the qubit:
/// `+shift` while excited and `-shift` while in the ground state. Each
/// trajectory starts excited or ground with equal probability and an
/// excited qubit relaxes once, after an exponential waiting time of rate
/// `gamma`. Trajectory `i` draws from seed stream `i`.
pub fn relaxation_telegraph_spectrum(
    gamma: f64,
    shift: f64,
    duration: f64,
    n_trajectories: usize,
    seed: u64,
) -> Result<TelegraphSpectrum> {
    if !(gamma > 0.0) {
        return Err(invalid("gamma must be > 0"));
    }
    if !(duration > 0.0) || n_trajectories == 0 {
        return Err(invalid("duration and n_trajectories must be positive"));
    }
    let shift = shift.abs();
    let half_width = 0.5 * carson_bandwidth(shift, gamma);
    let needed_rate = 8.0 * half_width / TAU;
    let n = ((duration * needed_rate).ceil() as usize).max(64).next_power_of_two();
    let fs = n as f64 / duration;
    let exp = Exp::new(gamma).map_err(|e| invalid(e.to_string()))?;

    let chunks: Vec<Vec<f64>> = (0..n_trajectories.div_ceil(TRAJECTORIES_PER_CHUNK))
        .into_par_iter()
        .map(|c| {
            let fft = fft_plan(n, false);
            let mut acc = vec![0.0; n];
            let mut buf = vec![Complex64::new(0.0, 0.0); n];
            let lo = c * TRAJECTORIES_PER_CHUNK;
            let hi = (lo + TRAJECTORIES_PER_CHUNK).min(n_trajectories);
            for i in lo..hi {
                let mut rng = item_rng(seed, i as u64);
                let excited: bool = rng.random();
                let jump = if excited { exp.sample(&mut rng) } else { 0.0 };
                for (k, b) in buf.iter_mut().enumerate() {
                    let t = k as f64 / fs;
                    let phase = if t < jump {
                        shift * t
                    } else {
                        shift * jump - shift * (t - jump)
                    };
                    *b = Complex64::from_polar(1.0, phase);
                }
                fft.process(&mut buf);
                for (a, b) in acc.iter_mut().zip(&buf) {
                    *a += b.norm_sqr();
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; n];
    for c in &chunks {
        for (t, v) in total.iter_mut().zip(c) {
            *t += v;
        }
    }

    let half = n / 2;
    let mut power = vec![0.0; half + 1];
    power[0] = total[0];
    for k in 1..half {
        power[k] = total[k] + total[n - k];
    }
    power[half] = total[half];
    let sum: f64 = power.iter().sum();
    power.iter_mut().for_each(|p| *p /= sum);
    let offsets: Vec<f64> = (0..=half).map(|k| k as f64 * fs / n as f64).collect();
    let limit = half_width / TAU * (1.0 + 1e-12);
    let in_band_fraction = offsets
        .iter()
        .zip(&power)
        .filter(|(f, _)| **f <= limit)
        .map(|(_, p)| p)
        .sum();
    Ok(TelegraphSpectrum {
        offsets,
        power,
        carson_half_width: half_width,
        in_band_fraction,
    })
}
