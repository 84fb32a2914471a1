mod common;

use std::f64::consts::PI;

use fdm_readout::experiments::analysis::{anticrossing_fluxes, baseline, extract_ridge};
use fdm_readout::experiments::output::{append_sweep_csv, read_header, write_sweep_csv};
use fdm_readout::experiments::{
    config_hash, linspace, multiplex_equivalence_error, run_flux_sweep, run_rabi, run_spectroscopy, uniform_fluxes,
    RabiRequest, Setup, SpectroscopyRequest,
};
use fdm_readout::Error;

use common::*;

#[test]
fn config_hash_is_sha256_of_file() {
    let s = chip7();
    assert_eq!(s.config_hash, config_hash(&chip7_text()));
    assert_eq!(s.config_hash.len(), 64);
    assert_eq!(
        config_hash("abc"),
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    );
}

#[test]
fn chip7_has_seven_devices_and_six_probes() {
    let s = chip7();
    assert_eq!(s.chip.len(), 7);
    assert_eq!(s.plan.device_ids(), vec![1, 2, 3, 4, 5, 6]);
    for w in s.plan.channels.windows(2) {
        let spacing = w[1].frequency - w[0].frequency;
        assert!((spacing - 150e6).abs() <= s.chain.bin_width(), "{spacing}");
    }
}

#[test]
fn config_errors_are_config_errors() {
    let bad = chip7_text().replace("[probe]", "[probe]\nbogus = 1");
    assert!(matches!(Setup::from_toml(&bad), Err(Error::Config(_))));
    let bad = chip7_text().replace("kappa_ext_hz = 9.0e6", "kappa_ext_hz = 20.0e6");
    let e = Setup::from_toml(&bad).unwrap_err();
    assert_eq!(e.exit_code(), 2, "{e}");
    let unknown = chip7_text().replace("devices = [1, 2, 3, 4, 5, 6]", "devices = [1, 9]");
    assert!(matches!(Setup::from_toml(&unknown), Err(Error::UnknownDevice(9))));
}

#[test]
fn probe_outside_acquisition_band_is_infeasible() {
    let text = chip7_text().replace("devices = [1, 2, 3, 4, 5, 6]", "devices = [1, 2, 3, 4, 5, 6, 7]");
    let e = Setup::from_toml(&text).unwrap_err();
    assert!(matches!(e, Error::Infeasible(_)), "{e}");
    assert_eq!(e.exit_code(), 3);
}

#[test]
fn flux_sweep_features_sit_at_dispersion_crossings() {
    let s = chip7();
    let fs = &s.config.flux_sweep;
    let points = 251;
    let sweep = run_flux_sweep(&s, (fs.start, fs.stop), points, 11).unwrap();
    let step = (fs.stop - fs.start) / (points - 1) as f64;
    for c in &s.plan.channels {
        let i = s.device_index(c.device_id).unwrap();
        let d = &s.chip[i];
        let off = s.flux_offsets[i];
        let mismatch = |flux: f64| {
            qubit_hz(d.qubit.gap_delta, d.qubit.flux_sensitivity, d.qubit.symmetry_flux, flux + off)
                - d.resonator.bare_frequency
        };
        let centre = d.qubit.symmetry_flux - off;
        let oracle = [bisect(mismatch, fs.start, centre), bisect(mismatch, centre, fs.stop)];
        let found = anticrossing_fluxes(&sweep, c.device_id, 1e-4).unwrap();
        assert_eq!(found.len(), 2, "device {}: {found:?}", c.device_id);
        for (f, o) in found.iter().zip(oracle) {
            assert!((f - o).abs() <= step, "device {}: {f} vs {o}", c.device_id);
        }
        // Far from both crossings the trace is nearly flat compared with
        // the feature height.
        let amps: Vec<f64> = sweep.device_trace(c.device_id).unwrap().iter().map(|m| m.amplitude).collect();
        let height = amps.iter().cloned().fold(f64::MIN, f64::max) - baseline(&amps);
        let edge = points / 10;
        for side in [&amps[..edge], &amps[points - edge..]] {
            let spread = side.iter().cloned().fold(f64::MIN, f64::max) - side.iter().cloned().fold(f64::MAX, f64::min);
            assert!(spread < 0.2 * height, "device {}: {spread} vs {height}", c.device_id);
        }
    }
}

#[test]
fn uncoupled_device_trace_is_flat() {
    let text = quiet_text(&chip7_text()).replacen("coupling_hz = 50.0e6", "coupling_hz = 0.0", 1);
    let s = Setup::from_toml(&text).unwrap();
    let sweep = run_flux_sweep(&s, (0.49, 0.51), 60, 0).unwrap();
    let amps: Vec<f64> = sweep.device_trace(1).unwrap().iter().map(|m| m.amplitude).collect();
    let spread = amps.iter().cloned().fold(f64::MIN, f64::max) - amps.iter().cloned().fold(f64::MAX, f64::min);
    // Only neighbouring resonators, pulled near their own anticrossings,
    // move this channel through their tails.
    assert!(spread < 1e-2 * amps[0], "{spread}");
    assert!(anticrossing_fluxes(&sweep, 1, 1e-4).unwrap().is_empty());
}

#[test]
fn multiplexed_probe_matches_single_tones() {
    let s = chip7();
    for applied in [0.4935, 0.4947, 0.5, 0.5049] {
        let fluxes = uniform_fluxes(&s, applied);
        let err = multiplex_equivalence_error(&s, &fluxes, &[-1.0; 7]).unwrap();
        assert!(err < 1e-9, "{applied}: {err}");
    }
    let z = [-1.0, 1.0, 0.2, -0.5, 1.0, -1.0, 0.0];
    let err = multiplex_equivalence_error(&s, &uniform_fluxes(&s, 0.5), &z).unwrap();
    assert!(err < 1e-9, "{err}");
}

#[test]
fn sweeps_are_deterministic_and_seed_dependent() {
    let s = chip7();
    let csv = |seed| {
        let r = run_flux_sweep(&s, (0.495, 0.505), 40, seed).unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &r).unwrap();
        buf
    };
    assert_eq!(csv(5), csv(5));
    assert_ne!(csv(5), csv(6));
}

#[test]
fn append_refuses_other_configuration() {
    let s = chip7();
    let other = Setup::from_toml(&chip7_text().replace("seed = 20100", "seed = 7")).unwrap();
    let a = run_flux_sweep(&s, (0.49, 0.495), 5, 1).unwrap();
    let b = run_flux_sweep(&s, (0.4951, 0.50), 5, 1).unwrap();
    let c = run_flux_sweep(&other, (0.4951, 0.50), 5, 1).unwrap();

    let mut joined = a.clone();
    joined.append(b.clone()).unwrap();
    assert_eq!(joined.shape(), vec![10]);
    assert!(matches!(joined.append(c.clone()), Err(Error::ConfigHashMismatch { .. })));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    append_sweep_csv(&path, &a).unwrap();
    append_sweep_csv(&path, &b).unwrap();
    let rows = std::fs::read_to_string(&path).unwrap().lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(rows, 1 + 10 * 6);
    assert!(matches!(append_sweep_csv(&path, &c), Err(Error::ConfigHashMismatch { .. })));
    let header = read_header(&path).unwrap();
    assert!(header.contains(&("config_hash".to_string(), s.config_hash.clone())));
}

fn spectroscopy_request(s: &Setup, drive_points: usize, flux_points: usize, amplitude: f64) -> SpectroscopyRequest {
    let sp = &s.config.spectroscopy;
    SpectroscopyRequest {
        device_ids: sp.devices.clone(),
        drive: (sp.drive_start, sp.drive_stop, drive_points),
        flux: (sp.flux_start, sp.flux_stop, flux_points),
        drive_amplitude: amplitude,
    }
}

#[test]
fn spectroscopy_ridge_follows_dispersion() {
    let s = chip7();
    let req = spectroscopy_request(&s, 221, 5, 0.3);
    let step = (req.drive.1 - req.drive.0) / (req.drive.2 - 1) as f64;
    let map = run_spectroscopy(&s, &req, 2).unwrap();
    assert_eq!(map.shape(), vec![5, 221]);
    for &id in &req.device_ids {
        let d = &s.chip[s.device_index(id).unwrap()];
        for (offset, ridge) in extract_ridge(&map, id).unwrap() {
            let model = qubit_hz(d.qubit.gap_delta, d.qubit.flux_sensitivity, 0.0, offset);
            assert!((ridge - model).abs() <= step, "device {id} at {offset}: {ridge} vs {model}");
            if offset == 0.0 {
                assert!((ridge - d.qubit.gap_delta).abs() <= 0.5 * step);
            }
        }
    }
}

#[test]
fn spectroscopy_without_drive_is_uniform() {
    let s = chip7_quiet();
    let map = run_spectroscopy(&s, &spectroscopy_request(&s, 30, 3, 0.0), 0).unwrap();
    let n = 30;
    for &id in &s.config.spectroscopy.devices {
        let t = map.device_trace(id).unwrap();
        for row in t.chunks(n) {
            for m in row {
                assert!((m.complex() - row[0].complex()).norm() < 1e-12);
            }
        }
    }
}

#[test]
fn spectroscopy_rejects_out_of_band_drive() {
    let s = chip7();
    let mut req = spectroscopy_request(&s, 10, 2, 0.1);
    req.drive.1 = 9.0e9;
    assert!(matches!(run_spectroscopy(&s, &req, 0), Err(Error::DriveOutOfBand { .. })));
}

fn rabi_request(s: &Setup, amplitudes: Vec<Vec<f64>>, points: usize) -> RabiRequest {
    RabiRequest {
        device_ids: s.config.rabi.devices.clone(),
        amplitudes,
        durations: linspace(0.0, 1e-6, points),
        averages: s.config.readout.averages,
    }
}

#[test]
fn simultaneous_rabi_gives_distinct_linear_rates() {
    let s = chip7();
    let req = rabi_request(&s, s.config.rabi.amplitudes.clone(), 161);
    let out = run_rabi(&s, &req, 9).unwrap();
    assert_eq!(out.traces.len(), 5 * 3);
    let rate = s.config.drive.rabi_hz_per_amplitude;
    for k in 0..5 {
        let step: Vec<_> = out.traces.iter().filter(|t| t.step == k).collect();
        let freqs: Vec<f64> = step.iter().map(|t| t.fit.frequency).collect();
        assert!(freqs.windows(2).all(|w| (w[0] - w[1]).abs() > 1e5), "{freqs:?}");
        for t in step {
            assert!(t.fit.valid, "{t:?}");
            let expected = rate * t.drive_amplitude;
            assert!((t.fit.frequency - expected).abs() < 0.01 * expected, "{} vs {expected}", t.fit.frequency);
        }
    }
    for sc in &out.scaling {
        let f = sc.fit.unwrap();
        assert_eq!(sc.valid_points, 5);
        assert!(f.r_squared > 0.999, "{sc:?}");
        assert!((f.slope - rate).abs() < 0.01 * rate);
    }
}

#[test]
fn undriven_rabi_trace_is_rejected() {
    let s = chip7();
    let req = rabi_request(&s, vec![vec![0.0, 0.5, 0.0]], 101);
    let out = run_rabi(&s, &req, 1).unwrap();
    for t in &out.traces {
        if t.drive_amplitude == 0.0 {
            assert!(!t.fit.valid, "{:?}", t.fit);
            assert!(t.fit.diagnostic.as_deref().unwrap().starts_with("zero-amplitude"), "{:?}", t.fit);
            assert!(t.population.iter().all(|p| p.abs() < 0.05));
        } else {
            assert!(t.fit.valid);
        }
    }
}

#[test]
fn noise_free_rabi_population_follows_sin_squared() {
    // No decay: the inferred population is a monotone map of sin^2(pi f t).
    let text = quiet_text(&chip7_text())
        .replace("gamma_hz = 0.1e6", "gamma_hz = 0.0")
        .replace("dephasing_hz = 0.05e6", "dephasing_hz = 0.0");
    let s = Setup::from_toml(&text).unwrap();
    let req = rabi_request(&s, vec![vec![0.3, 0.4, 0.5]], 121);
    let out = run_rabi(&s, &req, 0).unwrap();
    for t in &out.traces {
        let f = t.drive_rabi_frequency;
        let truth: Vec<f64> = req.durations.iter().map(|&d| (PI * f * d).sin().powi(2)).collect();
        let max_err = truth
            .iter()
            .zip(&t.population)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        // Readout nonlinearity of the Lorentzian dip only.
        assert!(max_err < 0.02, "device {}: {max_err}", t.device_id);
        assert!((t.fit.frequency - f).abs() < 1e-3 * f);
    }
}

#[test]
fn rabi_needs_probed_devices() {
    let s = chip7();
    let mut req = rabi_request(&s, vec![vec![0.3, 0.3, 0.3]], 20);
    req.device_ids = vec![2, 3, 7];
    assert!(run_rabi(&s, &req, 0).is_err());
}
