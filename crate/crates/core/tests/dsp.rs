use num_complex::Complex64;

use fdm_readout::rx::{adc_quantize, channelize, downconvert, AdcSpec, Window};
use fdm_readout::trace::IQTrace;
use fdm_readout::tx::{synthesize_multitone, upconvert_ssb, PulseEnvelope, ToneSpec};

const FS: f64 = 1e9;

/// SNR of a full-scale bin-centred tone after quantization, from the DFT:
/// tone bin power against the power in every other bin.
fn quantized_snr_db(bits: u32) -> f64 {
    let n = 1 << 16;
    // Odd bin index: the tone visits every code pattern, so the error is
    // spread across the spectrum.
    let f = 4099.0 * FS / n as f64;
    let adc = AdcSpec {
        sample_rate: FS,
        bits,
        full_scale: 1.0,
        analog_bandwidth: 0.5 * FS,
    };
    let x = synthesize_multitone(&[ToneSpec::new(f, 1.0, 0.3)], &PulseEnvelope::cw(), FS, n).unwrap();
    let q = adc_quantize(&x, &adc, 0.0, 0).unwrap();
    assert_eq!(q.clipped, 0);
    let spec = q.trace.dft();
    let k = 4099;
    let signal = spec[k].norm_sqr();
    let noise: f64 = spec.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, v)| v.norm_sqr()).sum();
    10.0 * (signal / noise).log10()
}

#[test]
fn adc_snr_follows_bit_depth() {
    for bits in [8, 12, 16] {
        let snr = quantized_snr_db(bits);
        let ideal = 6.02 * bits as f64 + 1.76;
        assert!((snr - ideal).abs() < 0.5, "{bits} bits: {snr:.3} dB vs {ideal:.3} dB");
    }
}

#[test]
fn ssb_round_trip_recovers_every_tone() {
    let n = 4000;
    let bw = FS / n as f64;
    let tones: Vec<ToneSpec> = [-375e6, -225e6, -75e6, 75e6, 225e6, 375e6]
        .iter()
        .enumerate()
        .map(|(i, &f)| ToneSpec::new(f + bw * i as f64, 0.05 + 0.01 * i as f64, 0.4 * i as f64 - 1.0))
        .collect();
    let bb = synthesize_multitone(&tones, &PulseEnvelope::cw(), FS, n).unwrap();
    let rf = upconvert_ssb(&bb, 9.675e9).unwrap();
    let back = downconvert(&rf, 9.675e9, 0.0).unwrap();
    assert_eq!(back, bb);
    let freqs: Vec<f64> = tones.iter().map(|t| t.baseband_frequency).collect();
    for (m, t) in channelize(&back, &freqs, Window::Rectangular).unwrap().iter().zip(&tones) {
        let want = Complex64::from_polar(t.amplitude, t.phase);
        assert!((m.complex() - want).norm() < 1e-12, "{m:?}");
    }
}

#[test]
fn parseval_on_recorded_trace() {
    let x = IQTrace::new(
        (0..1024)
            .map(|k| Complex64::new((k as f64 * 0.37).sin(), (k as f64 * 0.11).cos() * 0.5))
            .collect(),
        FS,
        0.0,
    )
    .unwrap();
    let spectral: f64 = x.dft().iter().map(|v| v.norm_sqr()).sum::<f64>() / x.len() as f64;
    assert!((spectral - x.energy()).abs() < 1e-10 * x.energy());
}
