//! End-to-end readout: multi-tone probe, feedline, amplifier, homodyne
//! receiver, optional ADC and channelizer.
//!
//! The probe is a continuous comb observed over one integration window. The
//! feedline acts on it as a periodic steady state, so each DFT bin of the
//! transmitted envelope is multiplied by the composite transmission at its
//! absolute frequency.

use std::collections::HashMap;
use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::capacity::FrequencyPlan;
use crate::device::{s21_feedline_mixed, DeviceRecord};
use crate::error::{invalid, Error, Result};
use crate::rx::{add_noise, adc_quantize, channelize, downconvert, AdcSpec, ToneMeasurement, Window};
use crate::trace::{fft_plan, IQTrace, RfTrace};
use crate::tx::{synthesize_multitone, upconvert_ssb, PulseEnvelope, ToneSpec};

/// Reported in place of `-inf` when a channel does not respond at all.
pub const CROSSTALK_FLOOR_DB: f64 = -200.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutChain {
    /// Shared LO for up- and down-conversion, Hz.
    pub lo_frequency: f64,
    pub sample_rate: f64,
    /// Samples in one integration window.
    pub n_samples: usize,
    /// Per-tone probe amplitude at the mixer output.
    pub tone_amplitude: f64,
    /// Fixed homodyne phase, radians.
    pub phase_offset: f64,
    /// Net voltage gain of line attenuation plus amplifiers.
    pub gain: f64,
    pub window: Window,
    pub adc: Option<AdcSpec>,
    /// Per-quadrature noise referred to the ADC input.
    pub noise_std: f64,
}

impl Default for ReadoutChain {
    fn default() -> Self {
        ReadoutChain {
            lo_frequency: 9.675e9,
            sample_rate: 1e9,
            n_samples: 4000,
            tone_amplitude: 0.1,
            phase_offset: 0.0,
            gain: 1.0,
            window: Window::Rectangular,
            adc: None,
            noise_std: 0.0,
        }
    }
}

impl ReadoutChain {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(invalid("sample_rate must be > 0"));
        }
        if self.n_samples == 0 {
            return Err(invalid("n_samples must be > 0"));
        }
        if !(self.lo_frequency > 0.5 * self.sample_rate) {
            return Err(invalid(format!(
                "LO {} Hz must exceed half the sample rate",
                self.lo_frequency
            )));
        }
        if !(self.tone_amplitude > 0.0) || !(self.gain > 0.0) {
            return Err(invalid("tone_amplitude and gain must be > 0"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(invalid("noise_std must be >= 0"));
        }
        if let Some(adc) = &self.adc {
            adc.validate()?;
            if adc.sample_rate != self.sample_rate {
                return Err(invalid(format!(
                    "ADC sample rate {} differs from chain sample rate {}",
                    adc.sample_rate, self.sample_rate
                )));
            }
        }
        Ok(())
    }

    /// Same chain with the ADC and all noise removed.
    pub fn noise_free(&self) -> Self {
        ReadoutChain {
            adc: None,
            noise_std: 0.0,
            ..*self
        }
    }

    pub fn bin_width(&self) -> f64 {
        self.sample_rate / self.n_samples as f64
    }

    /// Nearest frequency on the DFT grid of the integration window.
    pub fn snap_to_bin(&self, frequency: f64) -> f64 {
        let bw = self.bin_width();
        self.lo_frequency + ((frequency - self.lo_frequency) / bw).round() * bw
    }

    /// Half-width of the usable band around the LO, Hz.
    pub fn usable_half_band(&self) -> f64 {
        let nyquist = 0.5 * self.sample_rate;
        self.adc.map_or(nyquist, |a| a.analog_bandwidth.min(nyquist))
    }

    /// Baseband offsets of absolute channel frequencies; channels outside the
    /// usable band make the plan infeasible for this chain.
    pub fn baseband_channels(&self, channels: &[f64]) -> Result<Vec<f64>> {
        let half = self.usable_half_band();
        channels
            .iter()
            .map(|&f| {
                let b = f - self.lo_frequency;
                if b.abs() < half {
                    Ok(b)
                } else {
                    Err(Error::Infeasible(format!(
                        "channel {f} Hz lies outside the acquisition band {} +/- {half} Hz",
                        self.lo_frequency
                    )))
                }
            })
            .collect()
    }

    /// Continuous probe comb at the given absolute frequencies.
    pub fn probe(&self, channels: &[f64]) -> Result<RfTrace> {
        self.validate()?;
        let tones: Vec<ToneSpec> = self
            .baseband_channels(channels)?
            .into_iter()
            .map(|f| ToneSpec::new(f, self.tone_amplitude, 0.0))
            .collect();
        let bb = synthesize_multitone(&tones, &PulseEnvelope::cw(), self.sample_rate, self.n_samples)?;
        upconvert_ssb(&bb, self.lo_frequency)
    }

    /// Applies a transfer function of absolute frequency (Hz) and the chain
    /// gain to every DFT bin of the envelope.
    pub fn propagate<F>(&self, rf: &RfTrace, transfer: F) -> Result<RfTrace>
    where
        F: Fn(f64) -> Complex64,
    {
        let n = rf.envelope.len();
        let mut spec = rf.envelope.samples().to_vec();
        fft_plan(n, false).process(&mut spec);
        let scale = self.gain / n as f64;
        for (k, v) in spec.iter_mut().enumerate() {
            *v *= transfer(rf.bin_frequency(k)) * scale;
        }
        fft_plan(n, true).process(&mut spec);
        Ok(RfTrace::new(rf.envelope.with_samples(spec)?, rf.carrier))
    }

    /// Down-converts and digitizes: the IQ record the channelizer sees.
    pub fn acquire(&self, rf: &RfTrace, noise_std: f64, seed: u64) -> Result<IQTrace> {
        let iq = downconvert(rf, self.lo_frequency, self.phase_offset)?;
        match &self.adc {
            Some(adc) => Ok(adc_quantize(&iq, adc, noise_std, seed)?.trace),
            None => add_noise(&iq, noise_std, seed),
        }
    }

    /// Acquires and channelizes. Reported channel frequencies are absolute.
    pub fn receive(&self, rf: &RfTrace, channels: &[f64], noise_std: f64, seed: u64) -> Result<Vec<ToneMeasurement>> {
        let baseband = self.baseband_channels(channels)?;
        let iq = self.acquire(rf, noise_std, seed)?;
        let mut out = channelize(&iq, &baseband, self.window)?;
        for (m, f) in out.iter_mut().zip(channels) {
            m.channel_frequency = *f;
        }
        Ok(out)
    }

    /// Full chain with the qubit state of every device given as Bloch `z`.
    pub fn measure(
        &self,
        chip: &[DeviceRecord],
        channels: &[f64],
        z: &[f64],
        fluxes: &[f64],
        noise_std: f64,
        seed: u64,
    ) -> Result<Vec<ToneMeasurement>> {
        let rf = self.probe(channels)?;
        self.measure_probe(&rf, chip, channels, z, fluxes, noise_std, seed)
    }

    /// `measure` with a probe comb built once by `probe(channels)`.
    #[allow(clippy::too_many_arguments)]
    pub fn measure_probe(
        &self,
        rf: &RfTrace,
        chip: &[DeviceRecord],
        channels: &[f64],
        z: &[f64],
        fluxes: &[f64],
        noise_std: f64,
        seed: u64,
    ) -> Result<Vec<ToneMeasurement>> {
        if z.len() != chip.len() {
            return Err(Error::LengthMismatch {
                what: "z values",
                expected: chip.len(),
                got: z.len(),
            });
        }
        if fluxes.len() != chip.len() {
            return Err(Error::LengthMismatch {
                what: "fluxes",
                expected: chip.len(),
                got: fluxes.len(),
            });
        }
        let out = self.propagate(rf, |f| {
            s21_feedline_mixed(chip, TAU * f, z, fluxes).unwrap_or(Complex64::new(0.0, 0.0))
        })?;
        self.receive(&out, channels, noise_std, seed)
    }
}

/// Index of each plan channel's device in `chip`.
pub fn plan_device_indices(chip: &[DeviceRecord], plan: &FrequencyPlan) -> Result<Vec<usize>> {
    let index: HashMap<u32, usize> = chip.iter().enumerate().map(|(i, d)| (d.id, i)).collect();
    let mut seen = std::collections::HashSet::new();
    plan.channels
        .iter()
        .map(|c| {
            let i = *index.get(&c.device_id).ok_or(Error::UnknownDevice(c.device_id))?;
            if !seen.insert(c.device_id) {
                return Err(invalid(format!("device {} has more than one channel", c.device_id)));
            }
            Ok(i)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrosstalkEntry {
    pub device_id: u32,
    pub channel_frequency: f64,
    pub delta_db: f64,
}

/// Flips the toggled device's qubit from ground to excited with every qubit
/// at its symmetry point, and reports for each other channel
/// `10 log10(|dS_channel| / |dS_toggled|)`, where `dS` is the change of the
/// complex channel reading. For a small dispersive toggle this ratio is the
/// squared Lorentzian amplitude response at the neighbour's offset, so the
/// figure equals the Lorentzian amplitude tail in dB. The chain runs without
/// ADC or noise.
pub fn measure_crosstalk(
    chip: &[DeviceRecord],
    plan: &FrequencyPlan,
    toggled_device: u32,
    chain: &ReadoutChain,
) -> Result<Vec<CrosstalkEntry>> {
    let indices = plan_device_indices(chip, plan)?;
    let own = plan
        .channels
        .iter()
        .position(|c| c.device_id == toggled_device)
        .ok_or(Error::UnknownDevice(toggled_device))?;
    let toggled_index = indices[own];
    let chain = chain.noise_free();
    let channels = plan.frequencies();
    let fluxes: Vec<f64> = chip.iter().map(|d| d.qubit.symmetry_flux).collect();
    let mut z = vec![-1.0; chip.len()];
    let before = chain.measure(chip, &channels, &z, &fluxes, 0.0, 0)?;
    z[toggled_index] = 1.0;
    let after = chain.measure(chip, &channels, &z, &fluxes, 0.0, 0)?;
    let change: Vec<f64> = before
        .iter()
        .zip(&after)
        .map(|(b, a)| (a.complex() - b.complex()).norm())
        .collect();
    let reference = change[own];
    Ok(plan
        .channels
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != own)
        .map(|(i, c)| {
            let ratio = if reference > 0.0 { change[i] / reference } else { 0.0 };
            let db = if ratio > 0.0 { 10.0 * ratio.log10() } else { f64::NEG_INFINITY };
            CrosstalkEntry {
                device_id: c.device_id,
                channel_frequency: c.frequency,
                delta_db: db.max(CROSSTALK_FLOOR_DB),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capacity::{adjacent_crosstalk, PlannedChannel, SpacingRule};
    use crate::device::{device_transmission, QubitParams, ResonatorParams};

    const KAPPA_HZ: f64 = 10e6;

    fn device(id: u32, f_r: f64, g: f64) -> DeviceRecord {
        loaded_device(id, f_r, g, 0.9)
    }

    fn loaded_device(id: u32, f_r: f64, g: f64, ext_ratio: f64) -> DeviceRecord {
        DeviceRecord {
            id,
            qubit: QubitParams {
                gap_delta: 5e9,
                flux_sensitivity: 1.5e12,
                symmetry_flux: 0.5,
                relaxation_rate_gamma: TAU * 0.1e6,
            },
            resonator: ResonatorParams {
                bare_frequency: f_r,
                total_linewidth_kappa: TAU * KAPPA_HZ,
                external_linewidth: TAU * ext_ratio * KAPPA_HZ,
                coupling_g: g,
            },
        }
    }

    fn pair(spacing_hz: f64, g: f64, ext_ratio: f64) -> (Vec<DeviceRecord>, FrequencyPlan, ReadoutChain) {
        let chain = ReadoutChain {
            n_samples: 10_000,
            ..ReadoutChain::default()
        };
        let f1 = chain.lo_frequency - 50e6;
        let chip = vec![loaded_device(1, f1, g, ext_ratio), loaded_device(2, f1 + spacing_hz, g, ext_ratio)];
        let channels = chip
            .iter()
            .map(|d| PlannedChannel {
                device_id: d.id,
                frequency: d.resonator.bare_frequency,
            })
            .collect();
        let plan = FrequencyPlan::new(f1 - 100e6, f1 + 200e6, channels, SpacingRule::FixedSpacing { spacing: None }).unwrap();
        (chip, plan, chain)
    }

    #[test]
    fn bin_centred_tone_reads_transmission_times_gain() {
        let chain = ReadoutChain {
            gain: 3.0,
            phase_offset: 0.4,
            ..ReadoutChain::default()
        };
        let d = device(1, 9.6e9, 20e6);
        let f = chain.snap_to_bin(9.6e9 + 2e6);
        let m = chain.measure(&[d], &[f], &[-1.0], &[0.5], 0.0, 0).unwrap();
        let expect = device_transmission(&d, TAU * f, -1.0, 0.5)
            * chain.tone_amplitude
            * chain.gain
            * Complex64::from_polar(1.0, -0.4);
        assert!((m[0].complex() - expect).norm() < 1e-12, "{:?} vs {expect}", m[0]);
        assert_eq!(m[0].channel_frequency, f);
    }

    #[test]
    fn out_of_band_channel_is_infeasible() {
        let chain = ReadoutChain::default();
        let err = chain.probe(&[chain.lo_frequency + 0.6e9]).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }

    #[test]
    fn weakly_loaded_crosstalk_matches_lorentzian_tail() {
        for multiple in [1.0, 1.5, 2.0, 5.0, 10.0] {
            let spacing = multiple * KAPPA_HZ;
            let (chip, plan, chain) = pair(spacing, 20e6, 0.05);
            let xt = measure_crosstalk(&chip, &plan, 1, &chain).unwrap();
            let analytic = adjacent_crosstalk(TAU * spacing, TAU * KAPPA_HZ);
            assert_eq!(xt.len(), 1);
            assert_eq!(xt[0].device_id, 2);
            assert!((xt[0].delta_db - analytic).abs() < 0.5, "{multiple}: {} vs {analytic}", xt[0].delta_db);
        }
    }

    #[test]
    fn loaded_crosstalk_includes_neighbour_notch_depth() {
        // On a shared line the toggled resonator's change at the neighbour's
        // tone passes through the neighbour's own notch.
        for multiple in [1.0, 3.0, 10.0] {
            let spacing = multiple * KAPPA_HZ;
            let (chip, plan, chain) = pair(spacing, 20e6, 0.9);
            let xt = measure_crosstalk(&chip, &plan, 1, &chain).unwrap();
            let [f1, f2] = [plan.channels[0].frequency, plan.channels[1].frequency];
            let n = &chip[1];
            let depth = device_transmission(n, TAU * f2, -1.0, 0.5).norm()
                / device_transmission(n, TAU * f1, -1.0, 0.5).norm();
            let oracle = adjacent_crosstalk(TAU * spacing, TAU * KAPPA_HZ) + 10.0 * depth.log10();
            assert!((xt[0].delta_db - oracle).abs() < 0.5, "{multiple}: {} vs {oracle}", xt[0].delta_db);
        }
    }

    #[test]
    fn raw_change_ratio_is_squared_tail() {
        // The plain 20 log10 of the change ratio doubles the tail in dB.
        let (chip, plan, chain) = pair(5.0 * KAPPA_HZ, 20e6, 0.05);
        let xt = measure_crosstalk(&chip, &plan, 1, &chain).unwrap();
        let raw_20log = 2.0 * xt[0].delta_db;
        assert!((raw_20log + 40.0).abs() < 1.0);
    }

    #[test]
    fn uncoupled_chip_hits_floor() {
        let (chip, plan, chain) = pair(5.0 * KAPPA_HZ, 0.0, 0.9);
        let xt = measure_crosstalk(&chip, &plan, 2, &chain).unwrap();
        assert_eq!(xt[0].delta_db, CROSSTALK_FLOOR_DB);
    }

    #[test]
    fn unknown_toggle_is_rejected() {
        let (chip, plan, chain) = pair(5.0 * KAPPA_HZ, 20e6, 0.9);
        assert!(matches!(
            measure_crosstalk(&chip, &plan, 9, &chain),
            Err(Error::UnknownDevice(9))
        ));
    }

    #[test]
    fn composite_probe_equals_separate_probes() {
        let chain = ReadoutChain::default();
        let chip: Vec<_> = (0..4)
            .map(|i| device(i + 1, 9.5e9 + 100e6 * i as f64, 40e6))
            .collect();
        let channels: Vec<f64> = chip.iter().map(|d| chain.snap_to_bin(d.resonator.bare_frequency)).collect();
        let z = [-1.0, 1.0, -1.0, 0.3];
        let fluxes = [0.5, 0.49, 0.5, 0.51];
        let all = chain.measure(&chip, &channels, &z, &fluxes, 0.0, 0).unwrap();
        for (i, &f) in channels.iter().enumerate() {
            let one = chain.measure(&chip, &[f], &z, &fluxes, 0.0, 0).unwrap();
            let rel = (one[0].complex() - all[i].complex()).norm() / one[0].amplitude;
            assert!(rel < 1e-9, "channel {i}: {rel}");
        }
    }
}
