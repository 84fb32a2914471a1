//! TOML run configuration. All frequencies and rates are ordinary
//! frequencies in Hz; conversion to angular rates happens here.

use std::f64::consts::TAU;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::capacity::{FrequencyPlan, PlannedChannel, SpacingRule};
use crate::chain::ReadoutChain;
use crate::device::{validate_chip, DeviceRecord, QubitParams, QubitStateLabel, ResonatorParams};
use crate::error::{Error, Result};
use crate::rx::{AdcSpec, Window};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Root seed used when none is given on the command line.
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub readout: ReadoutSection,
    #[serde(rename = "device")]
    pub devices: Vec<DeviceSection>,
    pub probe: ProbeSection,
    #[serde(default)]
    pub drive: DriveSection,
    #[serde(default)]
    pub flux_sweep: FluxSweepSection,
    #[serde(default)]
    pub spectroscopy: SpectroscopySection,
    #[serde(default)]
    pub rabi: RabiSection,
    #[serde(default)]
    pub plan: PlanSection,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutSection {
    pub lo_frequency: f64,
    pub sample_rate: f64,
    pub n_samples: usize,
    pub tone_amplitude: f64,
    #[serde(default)]
    pub phase_offset: f64,
    #[serde(default = "one")]
    pub gain: f64,
    #[serde(default)]
    pub window: Window,
    /// Per-quadrature noise of a single shot at the ADC input.
    #[serde(default)]
    pub noise_std: f64,
    /// Shots averaged per point; noise falls as `1/sqrt(averages)`.
    #[serde(default = "default_averages")]
    pub averages: u32,
    #[serde(default)]
    pub adc: Option<AdcSection>,
}

fn one() -> f64 {
    1.0
}

fn default_averages() -> u32 {
    1000
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdcSection {
    pub bits: u32,
    pub full_scale: f64,
    pub analog_bandwidth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSection {
    pub id: u32,
    pub resonator_hz: f64,
    pub kappa_hz: f64,
    pub kappa_ext_hz: f64,
    pub coupling_hz: f64,
    pub gap_hz: f64,
    pub flux_sensitivity_hz: f64,
    pub symmetry_flux: f64,
    pub gamma_hz: f64,
    /// Local flux added to the applied flux (field non-uniformity).
    #[serde(default)]
    pub flux_offset: f64,
}

impl DeviceSection {
    pub fn record(&self) -> DeviceRecord {
        DeviceRecord {
            id: self.id,
            qubit: QubitParams {
                gap_delta: self.gap_hz,
                flux_sensitivity: self.flux_sensitivity_hz,
                symmetry_flux: self.symmetry_flux,
                relaxation_rate_gamma: TAU * self.gamma_hz,
            },
            resonator: ResonatorParams {
                bare_frequency: self.resonator_hz,
                total_linewidth_kappa: TAU * self.kappa_hz,
                external_linewidth: TAU * self.kappa_ext_hz,
                coupling_g: self.coupling_hz,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    pub devices: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriveSection {
    /// Resonant Rabi frequency per unit drive amplitude, Hz.
    pub rabi_hz_per_amplitude: f64,
    /// Pure dephasing rate, Hz.
    pub dephasing_hz: f64,
    /// Frequencies the drive line can reach, Hz.
    pub band_low: f64,
    pub band_high: f64,
    /// Bloch integration step, s.
    pub time_step: f64,
}

impl Default for DriveSection {
    fn default() -> Self {
        DriveSection {
            rabi_hz_per_amplitude: 10e6,
            dephasing_hz: 0.05e6,
            band_low: 1e9,
            band_high: 8e9,
            time_step: 0.2e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FluxSweepSection {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl Default for FluxSweepSection {
    fn default() -> Self {
        FluxSweepSection {
            start: 0.49,
            stop: 0.51,
            points: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectroscopySection {
    pub devices: Vec<u32>,
    pub drive_start: f64,
    pub drive_stop: f64,
    pub drive_points: usize,
    /// Flux axis relative to each selected qubit's symmetry point.
    pub flux_start: f64,
    pub flux_stop: f64,
    pub flux_points: usize,
    pub drive_amplitude: f64,
}

impl Default for SpectroscopySection {
    fn default() -> Self {
        SpectroscopySection {
            devices: Vec::new(),
            drive_start: 3e9,
            drive_stop: 6e9,
            drive_points: 601,
            flux_start: -1e-3,
            flux_stop: 1e-3,
            flux_points: 21,
            drive_amplitude: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RabiSection {
    pub devices: Vec<u32>,
    /// One row per drive step; one amplitude per selected device.
    pub amplitudes: Vec<Vec<f64>>,
    pub duration_start: f64,
    pub duration_stop: f64,
    pub duration_points: usize,
    /// Overrides `readout.averages` when set.
    pub averages: Option<u32>,
}

impl Default for RabiSection {
    fn default() -> Self {
        RabiSection {
            devices: Vec::new(),
            amplitudes: Vec::new(),
            duration_start: 0.0,
            duration_stop: 1e-6,
            duration_points: 201,
            averages: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanSection {
    pub bandwidth_hz: f64,
    pub kappa_hz: f64,
    pub gamma_hz: f64,
    pub shift_hz: f64,
    pub crosstalk_limit_db: f64,
}

impl Default for PlanSection {
    fn default() -> Self {
        PlanSection {
            bandwidth_hz: 1e9,
            kappa_hz: 10e6,
            gamma_hz: 0.1e6,
            shift_hz: 2.5e6,
            crosstalk_limit_db: -20.0,
        }
    }
}

pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Everything an experiment needs, resolved from one configuration file.
#[derive(Debug, Clone)]
pub struct Setup {
    pub config: Config,
    pub chip: Vec<DeviceRecord>,
    /// Per-device local flux offsets, in chip order.
    pub flux_offsets: Vec<f64>,
    pub chain: ReadoutChain,
    /// Probe channels of the `[probe]` devices, sorted by frequency.
    pub plan: FrequencyPlan,
    pub config_hash: String,
}

impl Setup {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_config(config, config_hash(text))
    }

    pub fn from_config(config: Config, config_hash: String) -> Result<Self> {
        let cfg_err = |e: Error| match e {
            Error::InvalidParameter(m) => Error::Config(m),
            other => other,
        };
        let chip: Vec<DeviceRecord> = config.devices.iter().map(DeviceSection::record).collect();
        if chip.is_empty() {
            return Err(Error::Config("at least one [[device]] is required".into()));
        }
        validate_chip(&chip).map_err(cfg_err)?;
        let flux_offsets = config.devices.iter().map(|d| d.flux_offset).collect();
        let r = &config.readout;
        if r.averages == 0 {
            return Err(Error::Config("readout.averages must be >= 1".into()));
        }
        let chain = ReadoutChain {
            lo_frequency: r.lo_frequency,
            sample_rate: r.sample_rate,
            n_samples: r.n_samples,
            tone_amplitude: r.tone_amplitude,
            phase_offset: r.phase_offset,
            gain: r.gain,
            window: r.window,
            adc: r.adc.map(|a| AdcSpec {
                sample_rate: r.sample_rate,
                bits: a.bits,
                full_scale: a.full_scale,
                analog_bandwidth: a.analog_bandwidth,
            }),
            noise_std: r.noise_std,
        };
        chain.validate().map_err(cfg_err)?;
        let d = &config.drive;
        if !(d.time_step > 0.0 && d.band_high > d.band_low && d.dephasing_hz >= 0.0) {
            return Err(Error::Config("[drive] needs time_step > 0, band_high > band_low, dephasing_hz >= 0".into()));
        }
        let plan = probe_plan(&chip, &config.probe.devices, &chain)?;
        Ok(Setup {
            config,
            chip,
            flux_offsets,
            chain,
            plan,
            config_hash,
        })
    }

    pub fn device_index(&self, id: u32) -> Result<usize> {
        self.chip
            .iter()
            .position(|d| d.id == id)
            .ok_or(Error::UnknownDevice(id))
    }

    /// Per-shot noise divided down by the number of averaged shots.
    pub fn averaged_noise(&self, averages: u32) -> f64 {
        self.chain.noise_std / (averages.max(1) as f64).sqrt()
    }

    pub fn gamma_phi(&self) -> f64 {
        TAU * self.config.drive.dephasing_hz
    }
}

/// Probe tone of each listed device at its dressed ground-state resonance
/// with the qubit at the symmetry point, placed on the nearest DFT bin.
pub fn probe_plan(chip: &[DeviceRecord], ids: &[u32], chain: &ReadoutChain) -> Result<FrequencyPlan> {
    if ids.is_empty() {
        return Err(Error::Config("[probe] devices must not be empty".into()));
    }
    let mut channels = Vec::with_capacity(ids.len());
    for &id in ids {
        let d = chip.iter().find(|d| d.id == id).ok_or(Error::UnknownDevice(id))?;
        let shift = d.symmetry_point_shift(QubitStateLabel::Ground).unwrap_or(0.0);
        channels.push(PlannedChannel {
            device_id: id,
            frequency: chain.snap_to_bin(d.resonator.bare_frequency + shift / TAU),
        });
    }
    channels.sort_by(|a, b| a.frequency.total_cmp(&b.frequency));
    if channels.windows(2).any(|w| w[0].frequency == w[1].frequency) {
        return Err(Error::Infeasible("two probe tones fall on the same DFT bin".into()));
    }
    let half = chain.usable_half_band();
    chain.baseband_channels(&channels.iter().map(|c| c.frequency).collect::<Vec<_>>())?;
    FrequencyPlan::new(
        chain.lo_frequency - half,
        chain.lo_frequency + half,
        channels,
        SpacingRule::FixedSpacing { spacing: None },
    )
}
