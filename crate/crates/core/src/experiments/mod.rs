//! Experiment harness: flux sweep, two-tone spectroscopy and Rabi runs over
//! the full readout chain, plus their data files.
//!
//! Sweep points run in parallel. Point `i` draws its noise from
//! `child_seed(root, i)`, and results are merged in axis order, so output
//! does not depend on scheduling.

pub mod analysis;
pub mod config;
pub mod output;

use std::f64::consts::TAU;
use std::time::{SystemTime, UNIX_EPOCH};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capacity::PlannedChannel;
use crate::dynamics::{evolve_grid, steady_state, BlochState, DriveSpec};
use crate::error::{invalid, Error, Result};
use crate::fit::{fit_damped_sinusoid, linear_fit, LinearFit, RabiFit};
use crate::rx::ToneMeasurement;
use crate::seed::child_seed;

pub use config::{config_hash, Config, Setup};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub values: Vec<f64>,
}

impl Axis {
    pub fn new(name: &str, values: Vec<f64>) -> Self {
        Axis {
            name: name.to_string(),
            values,
        }
    }
}

/// `points` evenly spaced values from `start` to `stop` inclusive.
pub fn linspace(start: f64, stop: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..points)
            .map(|i| start + (stop - start) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMetadata {
    pub experiment: String,
    pub seed: u64,
    pub config_hash: String,
    /// Wall-clock bounds in Unix seconds. Kept in memory only so that data
    /// files stay byte-identical between runs.
    #[serde(skip)]
    pub started: Option<f64>,
    #[serde(skip)]
    pub finished: Option<f64>,
}

fn unix_now() -> Option<f64> {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .ok()
        .map(|d| d.as_secs_f64())
}

/// Measurements on a rectangular grid. `points` is row-major over `axes`
/// (first axis outermost); each point holds one reading per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub metadata: SweepMetadata,
    pub axes: Vec<Axis>,
    pub channels: Vec<PlannedChannel>,
    pub points: Vec<Vec<ToneMeasurement>>,
}

impl SweepResult {
    pub fn new(
        metadata: SweepMetadata,
        axes: Vec<Axis>,
        channels: Vec<PlannedChannel>,
        points: Vec<Vec<ToneMeasurement>>,
    ) -> Result<Self> {
        let r = SweepResult {
            metadata,
            axes,
            channels,
            points,
        };
        r.check_shape()?;
        Ok(r)
    }

    fn check_shape(&self) -> Result<()> {
        let expected: usize = self.axes.iter().map(|a| a.values.len()).product();
        if self.axes.is_empty() || self.points.len() != expected {
            return Err(Error::LengthMismatch {
                what: "sweep points",
                expected,
                got: self.points.len(),
            });
        }
        if let Some(row) = self.points.iter().find(|p| p.len() != self.channels.len()) {
            return Err(Error::LengthMismatch {
                what: "channels per point",
                expected: self.channels.len(),
                got: row.len(),
            });
        }
        Ok(())
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.values.len()).collect()
    }

    pub fn channel_index(&self, device_id: u32) -> Result<usize> {
        self.channels
            .iter()
            .position(|c| c.device_id == device_id)
            .ok_or(Error::UnknownDevice(device_id))
    }

    /// One device's readings across all points, in point order.
    pub fn device_trace(&self, device_id: u32) -> Result<Vec<ToneMeasurement>> {
        let c = self.channel_index(device_id)?;
        Ok(self.points.iter().map(|p| p[c]).collect())
    }

    /// Coordinates of point `i`, one value per axis.
    pub fn coordinates(&self, mut i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.axes.len()];
        for (k, axis) in self.axes.iter().enumerate().rev() {
            let n = axis.values.len();
            out[k] = axis.values[i % n];
            i /= n;
        }
        out
    }

    /// Extends the outer axis with another run of the same configuration.
    pub fn append(&mut self, other: SweepResult) -> Result<()> {
        if other.metadata.config_hash != self.metadata.config_hash {
            return Err(Error::ConfigHashMismatch {
                existing: self.metadata.config_hash.clone(),
                incoming: other.metadata.config_hash,
            });
        }
        let same_inner = self.axes.len() == other.axes.len()
            && self.axes[0].name == other.axes[0].name
            && self.axes[1..] == other.axes[1..];
        if other.metadata.experiment != self.metadata.experiment || !same_inner || other.channels != self.channels {
            return Err(invalid("appended run has a different experiment, axes or channel set"));
        }
        let mut other = other;
        self.axes[0].values.append(&mut other.axes[0].values);
        self.points.extend(other.points);
        self.metadata.finished = other.metadata.finished.or(self.metadata.finished);
        self.check_shape()
    }
}

fn metadata(setup: &Setup, experiment: &str, seed: u64) -> SweepMetadata {
    SweepMetadata {
        experiment: experiment.to_string(),
        seed,
        config_hash: setup.config_hash.clone(),
        started: unix_now(),
        finished: None,
    }
}

fn finish(mut m: SweepMetadata) -> SweepMetadata {
    m.finished = unix_now();
    m
}

/// Applied flux to every device when the uniform coil sets `applied`.
pub fn uniform_fluxes(setup: &Setup, applied: f64) -> Vec<f64> {
    setup.flux_offsets.iter().map(|o| applied + o).collect()
}

/// Fluxes with the selected devices held at `symmetry + offset` by their
/// local coils; the rest follow the uniform coil, which is set to put the
/// first selected device at `symmetry + offset`.
pub fn coil_fluxes(setup: &Setup, selected: &[usize], offset: f64) -> Vec<f64> {
    let mut fluxes = match selected.first() {
        Some(&i) => {
            let d = &setup.chip[i];
            uniform_fluxes(setup, d.qubit.symmetry_flux - setup.flux_offsets[i] + offset)
        }
        None => uniform_fluxes(setup, offset),
    };
    for &i in selected {
        fluxes[i] = setup.chip[i].qubit.symmetry_flux + offset;
    }
    fluxes
}

fn resolve(setup: &Setup, ids: &[u32]) -> Result<Vec<usize>> {
    let mut seen = std::collections::HashSet::new();
    ids.iter()
        .map(|&id| {
            if !seen.insert(id) {
                return Err(invalid(format!("device {id} listed twice")));
            }
            setup.device_index(id)
        })
        .collect()
}

/// Ground-state transmission of every probe channel while the uniform coil
/// sweeps the flux. All tones share one composite probe per point.
pub fn run_flux_sweep(setup: &Setup, flux_range: (f64, f64), points: usize, seed: u64) -> Result<SweepResult> {
    if points == 0 {
        return Err(invalid("flux sweep needs at least one point"));
    }
    let meta = metadata(setup, "flux_sweep", seed);
    let fluxes = linspace(flux_range.0, flux_range.1, points);
    let channels = setup.plan.frequencies();
    let rf = setup.chain.probe(&channels)?;
    let noise = setup.averaged_noise(setup.config.readout.averages);
    let z = vec![-1.0; setup.chip.len()];
    let rows = fluxes
        .par_iter()
        .enumerate()
        .map(|(i, &applied)| {
            let f = uniform_fluxes(setup, applied);
            setup
                .chain
                .measure_probe(&rf, &setup.chip, &channels, &z, &f, noise, child_seed(seed, i as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    SweepResult::new(
        finish(meta),
        vec![Axis::new("flux", fluxes)],
        setup.plan.channels.clone(),
        rows,
    )
}

/// Largest relative difference between composite-probe readings and
/// single-tone readings of each channel, noise-free, at the given fluxes.
pub fn multiplex_equivalence_error(setup: &Setup, fluxes: &[f64], z: &[f64]) -> Result<f64> {
    let chain = setup.chain.noise_free();
    let channels = setup.plan.frequencies();
    let all = chain.measure(&setup.chip, &channels, z, fluxes, 0.0, 0)?;
    let mut worst: f64 = 0.0;
    for (i, &f) in channels.iter().enumerate() {
        let one = chain.measure(&setup.chip, &[f], z, fluxes, 0.0, 0)?;
        let scale = one[0].amplitude.max(f64::MIN_POSITIVE);
        worst = worst.max((one[0].complex() - all[i].complex()).norm() / scale);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectroscopyRequest {
    pub device_ids: Vec<u32>,
    /// Hz: start, stop, points.
    pub drive: (f64, f64, usize),
    /// Flux relative to the symmetry points: start, stop, points.
    pub flux: (f64, f64, usize),
    pub drive_amplitude: f64,
}

/// Continuous drive on the shared line at each (flux, frequency) cell. Each
/// qubit sits in its driven steady state while all channels are read.
/// Axes: `flux_offset` (outer) and `drive_hz`.
pub fn run_spectroscopy(setup: &Setup, req: &SpectroscopyRequest, seed: u64) -> Result<SweepResult> {
    let selected = resolve(setup, &req.device_ids)?;
    let drive = &setup.config.drive;
    let (low, high) = (drive.band_low, drive.band_high);
    for f in [req.drive.0, req.drive.1] {
        if !(f >= low && f <= high) {
            return Err(Error::DriveOutOfBand { frequency: f, low, high });
        }
    }
    if req.drive.2 == 0 || req.flux.2 == 0 {
        return Err(invalid("spectroscopy axes need at least one point"));
    }
    if !(req.drive_amplitude >= 0.0) {
        return Err(invalid("drive amplitude must be >= 0"));
    }
    let meta = metadata(setup, "spectroscopy", seed);
    let drive_axis = linspace(req.drive.0, req.drive.1, req.drive.2);
    let flux_axis = linspace(req.flux.0, req.flux.1, req.flux.2);
    let channels = setup.plan.frequencies();
    let rf = setup.chain.probe(&channels)?;
    let noise = setup.averaged_noise(setup.config.readout.averages);
    let gamma_phi = setup.gamma_phi();
    let n_drive = drive_axis.len();
    let rows = (0..flux_axis.len() * n_drive)
        .into_par_iter()
        .map(|i| {
            let fluxes = coil_fluxes(setup, &selected, flux_axis[i / n_drive]);
            let f_drive = drive_axis[i % n_drive];
            let z = setup
                .chip
                .iter()
                .zip(&fluxes)
                .map(|(d, &flux)| {
                    let spec = DriveSpec {
                        rabi_rate_per_unit_amplitude: drive.rabi_hz_per_amplitude,
                        amplitude: req.drive_amplitude,
                        detuning: f_drive - d.omega_q(flux) / TAU,
                        duration: 0.0,
                    };
                    steady_state(&spec, d.qubit.relaxation_rate_gamma, gamma_phi).map(|s| s.z)
                })
                .collect::<Result<Vec<_>>>()?;
            setup
                .chain
                .measure_probe(&rf, &setup.chip, &channels, &z, &fluxes, noise, child_seed(seed, i as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    SweepResult::new(
        finish(meta),
        vec![Axis::new("flux_offset", flux_axis), Axis::new("drive_hz", drive_axis)],
        setup.plan.channels.clone(),
        rows,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RabiRequest {
    pub device_ids: Vec<u32>,
    /// One row per drive step, one amplitude per selected device.
    pub amplitudes: Vec<Vec<f64>>,
    /// Pulse durations, s, non-decreasing.
    pub durations: Vec<f64>,
    pub averages: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RabiTrace {
    pub step: usize,
    pub device_id: u32,
    pub drive_amplitude: f64,
    /// Resonant Rabi frequency fed to the simulation, Hz.
    pub drive_rabi_frequency: f64,
    /// Excited population inferred from the readout, one per duration.
    pub population: Vec<f64>,
    pub fit: RabiFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RabiScaling {
    pub device_id: u32,
    /// Fitted Rabi frequency against drive amplitude over valid fits.
    pub fit: Option<LinearFit>,
    pub valid_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RabiOutcome {
    pub sweep: SweepResult,
    pub traces: Vec<RabiTrace>,
    pub scaling: Vec<RabiScaling>,
}

/// Simultaneous Rabi experiment: each selected qubit, biased at its
/// symmetry point, gets its own resonant drive for each pulse duration and
/// all channels are then read at once. Axes: `drive_step` (outer) and
/// `duration_s`.
pub fn run_rabi(setup: &Setup, req: &RabiRequest, seed: u64) -> Result<RabiOutcome> {
    let selected = resolve(setup, &req.device_ids)?;
    if selected.is_empty() || req.amplitudes.is_empty() || req.durations.is_empty() {
        return Err(invalid("Rabi run needs devices, amplitudes and durations"));
    }
    for row in &req.amplitudes {
        if row.len() != selected.len() {
            return Err(Error::LengthMismatch {
                what: "amplitudes per drive step",
                expected: selected.len(),
                got: row.len(),
            });
        }
    }
    let channel_of: Vec<usize> = req
        .device_ids
        .iter()
        .map(|&id| {
            setup
                .plan
                .channels
                .iter()
                .position(|c| c.device_id == id)
                .ok_or_else(|| Error::Config(format!("Rabi device {id} is not probed")))
        })
        .collect::<Result<_>>()?;
    let meta = metadata(setup, "rabi", seed);
    let drive = &setup.config.drive;
    let gamma_phi = setup.gamma_phi();
    let fluxes = coil_fluxes(setup, &selected, 0.0);
    let n_dur = req.durations.len();

    // z(t) of every driven qubit for every step: [step][selected][duration].
    let z_traces = req
        .amplitudes
        .par_iter()
        .map(|row| {
            selected
                .iter()
                .zip(row)
                .map(|(&i, &amplitude)| {
                    let spec = DriveSpec {
                        rabi_rate_per_unit_amplitude: drive.rabi_hz_per_amplitude,
                        amplitude,
                        detuning: 0.0,
                        duration: 0.0,
                    };
                    let gamma = setup.chip[i].qubit.relaxation_rate_gamma;
                    evolve_grid(BlochState::GROUND, &spec, gamma, gamma_phi, drive.time_step, &req.durations)
                        .map(|v| v.into_iter().map(|s| s.z).collect::<Vec<_>>())
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let channels = setup.plan.frequencies();
    let rf = setup.chain.probe(&channels)?;
    let noise = setup.averaged_noise(req.averages);
    let rows = (0..req.amplitudes.len() * n_dur)
        .into_par_iter()
        .map(|i| {
            let (k, t) = (i / n_dur, i % n_dur);
            let mut z = vec![-1.0; setup.chip.len()];
            for (j, &di) in selected.iter().enumerate() {
                z[di] = z_traces[k][j][t];
            }
            setup
                .chain
                .measure_probe(&rf, &setup.chip, &channels, &z, &fluxes, noise, child_seed(seed, i as u64))
        })
        .collect::<Result<Vec<_>>>()?;

    // Readout calibration: noise-free ground and excited references.
    let quiet = setup.chain.noise_free();
    let ground = quiet.measure(&setup.chip, &channels, &vec![-1.0; setup.chip.len()], &fluxes, 0.0, 0)?;
    let mut traces = Vec::new();
    let mut references = Vec::new();
    for (&di, &c) in selected.iter().zip(&channel_of) {
        let mut z = vec![-1.0; setup.chip.len()];
        z[di] = 1.0;
        let excited = quiet.measure(&setup.chip, &channels, &z, &fluxes, 0.0, 0)?;
        references.push((ground[c].complex(), excited[c].complex()));
    }
    for (k, row) in req.amplitudes.iter().enumerate() {
        for (j, (&id, &c)) in req.device_ids.iter().zip(&channel_of).enumerate() {
            let (g, e) = references[j];
            let axis = e - g;
            let population: Vec<f64> = (0..n_dur)
                .map(|t| project(rows[k * n_dur + t][c].complex(), g, axis))
                .collect();
            let fit = fit_damped_sinusoid(
                &req.durations.iter().copied().zip(population.iter().copied()).collect::<Vec<_>>(),
            );
            traces.push(RabiTrace {
                step: k,
                device_id: id,
                drive_amplitude: row[j],
                drive_rabi_frequency: drive.rabi_hz_per_amplitude * row[j],
                population,
                fit,
            });
        }
    }
    let scaling = req
        .device_ids
        .iter()
        .map(|&id| {
            let (x, y): (Vec<f64>, Vec<f64>) = traces
                .iter()
                .filter(|t| t.device_id == id && t.fit.valid)
                .map(|t| (t.drive_amplitude, t.fit.frequency))
                .unzip();
            RabiScaling {
                device_id: id,
                valid_points: x.len(),
                fit: linear_fit(&x, &y),
            }
        })
        .collect();
    let sweep = SweepResult::new(
        finish(meta),
        vec![
            Axis::new("drive_step", (0..req.amplitudes.len()).map(|k| k as f64).collect()),
            Axis::new("duration_s", req.durations.clone()),
        ],
        setup.plan.channels.clone(),
        rows,
    )?;
    Ok(RabiOutcome { sweep, traces, scaling })
}

/// Position of `m` along the ground-to-excited readout axis, 0 at ground
/// and 1 at excited.
fn project(m: Complex64, ground: Complex64, axis: Complex64) -> f64 {
    let norm = axis.norm_sqr();
    if norm == 0.0 {
        return 0.0;
    }
    ((m - ground) * axis.conj()).re / norm
}
