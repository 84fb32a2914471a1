//! Receive side: homodyne down-conversion, ADC model and DFT channelizer.

use std::collections::HashSet;
use std::f64::consts::{PI, TAU};
use std::io::Write;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::trace::{fft_plan, IQTrace, RfTrace};
use crate::tx::unit_phasor;

/// Largest carrier/LO disagreement still treated as homodyne, Hz.
pub const LO_MATCH_TOLERANCE_HZ: f64 = 1e-3;

pub const CSV_HEADER: &str = "channel_hz,amplitude,phase_rad,noise_std";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdcSpec {
    pub sample_rate: f64,
    pub bits: u32,
    pub full_scale: f64,
    pub analog_bandwidth: f64,
}

impl AdcSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0) {
            return Err(invalid("ADC sample_rate must be > 0"));
        }
        if !(1..=52).contains(&self.bits) {
            return Err(invalid(format!("ADC bits must be in 1..=52, got {}", self.bits)));
        }
        if !(self.full_scale > 0.0) {
            return Err(invalid("ADC full_scale must be > 0"));
        }
        if !(self.analog_bandwidth > 0.0 && self.analog_bandwidth <= 0.5 * self.sample_rate) {
            return Err(invalid(format!(
                "ADC analog_bandwidth {} must lie in (0, sample_rate/2]",
                self.analog_bandwidth
            )));
        }
        Ok(())
    }

    /// Spacing of the quantization grid.
    pub fn step(&self) -> f64 {
        2.0 * self.full_scale / 2f64.powi(self.bits as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToneMeasurement {
    pub channel_frequency: f64,
    pub amplitude: f64,
    /// Radians in (-pi, pi].
    pub phase: f64,
    /// Per-quadrature standard deviation of the channel estimate.
    pub noise_std: f64,
}

impl ToneMeasurement {
    pub fn complex(&self) -> Complex64 {
        Complex64::from_polar(self.amplitude, self.phase)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Rectangular,
    Hann,
}

impl Window {
    pub fn weights(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|k| 0.5 - 0.5 * (TAU * k as f64 / n as f64).cos())
                .collect(),
        }
    }

    /// Bins on either side of a channel excluded from the noise estimate.
    fn guard_bins(self) -> usize {
        match self {
            Window::Rectangular => 1,
            Window::Hann => 3,
        }
    }
}

/// Re-references an RF envelope to baseband and applies `exp(-i phase_offset)`.
pub fn downconvert(rf: &RfTrace, lo_frequency: f64, phase_offset: f64) -> Result<IQTrace> {
    if (rf.carrier - lo_frequency).abs() > LO_MATCH_TOLERANCE_HZ {
        return Err(Error::HeterodyneUnsupported {
            carrier: rf.carrier,
            lo: lo_frequency,
        });
    }
    Ok(rf.envelope.rotated(phase_offset))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub trace: IQTrace,
    /// Samples with at least one quadrature driven past full scale.
    pub clipped: usize,
}

impl Quantized {
    pub fn clip_fraction(&self) -> f64 {
        self.clipped as f64 / self.trace.len() as f64
    }
}

/// Adds seeded white Gaussian noise per quadrature without digitizing.
/// Draws match those of `adc_quantize` for the same seed.
pub fn add_noise(x: &IQTrace, noise_std: f64, seed: u64) -> Result<IQTrace> {
    if !(noise_std >= 0.0) {
        return Err(invalid("noise_std must be >= 0"));
    }
    if noise_std == 0.0 {
        return Ok(x.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise_std).map_err(|e| invalid(e.to_string()))?;
    let samples = x
        .samples()
        .iter()
        .map(|s| s + Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng)))
        .collect();
    x.with_samples(samples)
}

/// Adds seeded white Gaussian noise per quadrature, clips to full scale and
/// rounds onto the uniform grid of spacing `2 full_scale / 2^bits`.
pub fn adc_quantize(x: &IQTrace, adc: &AdcSpec, noise_std: f64, seed: u64) -> Result<Quantized> {
    adc.validate()?;
    if x.sample_rate() != adc.sample_rate {
        return Err(Error::TraceMismatch(format!(
            "trace sampled at {} Hz but ADC runs at {} Hz",
            x.sample_rate(),
            adc.sample_rate
        )));
    }
    if !(noise_std >= 0.0) {
        return Err(invalid("noise_std must be >= 0"));
    }
    let step = adc.step();
    let fs = adc.full_scale;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise_std).map_err(|e| invalid(e.to_string()))?;
    let mut clipped = 0;
    let quantize = |v: f64, hit: &mut bool| {
        let c = if v > fs {
            *hit = true;
            fs
        } else if v < -fs {
            *hit = true;
            -fs
        } else {
            v
        };
        (c / step).round() * step
    };
    let samples = x
        .samples()
        .iter()
        .map(|s| {
            let (ni, nq) = if noise_std > 0.0 {
                (normal.sample(&mut rng), normal.sample(&mut rng))
            } else {
                (0.0, 0.0)
            };
            let mut hit = false;
            let out = Complex64::new(quantize(s.re + ni, &mut hit), quantize(s.im + nq, &mut hit));
            if hit {
                clipped += 1;
            }
            out
        })
        .collect();
    Ok(Quantized {
        trace: x.with_samples(samples)?,
        clipped,
    })
}

/// Windowed DFT evaluated at each channel frequency, normalized so a
/// unit-amplitude bin-centered tone reads amplitude 1 with either window.
/// Phases are referenced to absolute time `start_time + n / sample_rate`.
pub fn channelize(x: &IQTrace, channels: &[f64], window: Window) -> Result<Vec<ToneMeasurement>> {
    let nyquist = x.nyquist();
    let mut seen = HashSet::new();
    for (index, &f) in channels.iter().enumerate() {
        if !(f.abs() <= nyquist) {
            return Err(Error::Nyquist {
                index,
                frequency: f,
                nyquist,
            });
        }
        if !seen.insert(f.to_bits()) {
            return Err(invalid(format!("duplicate channel frequency {f} Hz")));
        }
    }
    let n = x.len();
    let fs = x.sample_rate();
    let w = window.weights(n);
    let norm: f64 = w.iter().sum();
    let windowed: Vec<Complex64> = x.samples().iter().zip(&w).map(|(s, w)| s * w).collect();

    let noise_std = off_channel_noise(x, &windowed, channels, window, norm);

    Ok(channels
        .iter()
        .map(|&f| {
            let acc: Complex64 = windowed
                .iter()
                .enumerate()
                .map(|(k, s)| s * unit_phasor(-f, k, fs))
                .sum();
            let start = Complex64::from_polar(1.0, -TAU * (f * x.start_time()).fract());
            let v = acc * start / norm;
            let mut phase = v.arg();
            if phase <= -PI {
                phase += TAU;
            }
            ToneMeasurement {
                channel_frequency: f,
                amplitude: v.norm(),
                phase,
                noise_std,
            }
        })
        .collect())
}

fn off_channel_noise(x: &IQTrace, windowed: &[Complex64], channels: &[f64], window: Window, norm: f64) -> f64 {
    let n = windowed.len();
    let mut spec = windowed.to_vec();
    fft_plan(n, false).process(&mut spec);
    let bw = x.bin_width();
    let guard = window.guard_bins() as i64;
    let occupied: HashSet<usize> = channels
        .iter()
        .flat_map(|&f| {
            let centre = (f / bw).round() as i64;
            (centre - guard..=centre + guard).map(move |k| k.rem_euclid(n as i64) as usize)
        })
        .collect();
    let (sum, count) = spec
        .iter()
        .enumerate()
        .filter(|(k, _)| !occupied.contains(k))
        .fold((0.0, 0usize), |(s, c), (_, v)| (s + v.norm_sqr(), c + 1));
    if count == 0 {
        return 0.0;
    }
    (0.5 * sum / count as f64).sqrt() / norm
}

pub fn write_measurements_csv<W: Write>(mut w: W, rows: &[ToneMeasurement]) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.channel_frequency, r.amplitude, r.phase, r.noise_std)?;
    }
    Ok(())
}
