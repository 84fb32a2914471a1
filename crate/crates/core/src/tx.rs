//! Transmit side: multi-tone DAC synthesis, single-sideband up-conversion and
//! the directional coupler that merges probe and drive signals.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::trace::{IQTrace, RfTrace};

/// Probe repetition period used by the timed experiments, seconds.
pub const DEFAULT_REPETITION_PERIOD: f64 = 10e-6;
/// Flat-top integration window of one probe pulse, seconds.
pub const DEFAULT_PROBE_FLAT_TOP: f64 = 4e-6;
pub const DEFAULT_EDGE_TIME: f64 = 20e-9;
/// Complex DAC/ADC rate, samples per second.
pub const DEFAULT_SAMPLE_RATE: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToneSpec {
    /// Signed baseband frequency in Hz; the sign picks the sideband.
    pub baseband_frequency: f64,
    /// Fraction of DAC full scale.
    pub amplitude: f64,
    pub phase: f64,
}

impl ToneSpec {
    pub fn new(baseband_frequency: f64, amplitude: f64, phase: f64) -> Self {
        ToneSpec {
            baseband_frequency,
            amplitude,
            phase,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvelopeShape {
    Rectangular,
    RaisedCosineEdges,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseEnvelope {
    pub shape: EnvelopeShape,
    pub duration: f64,
    pub edge_time: f64,
    pub repetition_period: f64,
}

impl Default for PulseEnvelope {
    fn default() -> Self {
        PulseEnvelope {
            shape: EnvelopeShape::RaisedCosineEdges,
            duration: DEFAULT_PROBE_FLAT_TOP + 2.0 * DEFAULT_EDGE_TIME,
            edge_time: DEFAULT_EDGE_TIME,
            repetition_period: DEFAULT_REPETITION_PERIOD,
        }
    }
}

impl PulseEnvelope {
    /// Continuous-wave: unit envelope at every time.
    pub fn cw() -> Self {
        PulseEnvelope {
            shape: EnvelopeShape::Rectangular,
            duration: f64::INFINITY,
            edge_time: 0.0,
            repetition_period: f64::INFINITY,
        }
    }

    pub fn rectangular(duration: f64, repetition_period: f64) -> Self {
        PulseEnvelope {
            shape: EnvelopeShape::Rectangular,
            duration,
            edge_time: 0.0,
            repetition_period,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(invalid("pulse duration must be > 0"));
        }
        if !(self.edge_time >= 0.0 && self.edge_time <= 0.5 * self.duration) {
            return Err(invalid(format!(
                "edge_time {} must lie in [0, duration/2]",
                self.edge_time
            )));
        }
        if !(self.repetition_period >= self.duration) {
            return Err(invalid("repetition_period must be >= duration"));
        }
        Ok(())
    }

    pub fn value(&self, t: f64) -> f64 {
        let tt = if self.repetition_period.is_finite() {
            t.rem_euclid(self.repetition_period)
        } else {
            t
        };
        if tt < 0.0 || tt >= self.duration {
            return 0.0;
        }
        match self.shape {
            EnvelopeShape::Rectangular => 1.0,
            EnvelopeShape::RaisedCosineEdges => {
                let e = self.edge_time;
                if e == 0.0 {
                    1.0
                } else if tt < e {
                    0.5 * (1.0 - (PI * tt / e).cos())
                } else if tt > self.duration - e {
                    0.5 * (1.0 - (PI * (self.duration - tt) / e).cos())
                } else {
                    1.0
                }
            }
        }
    }
}

/// `exp(i 2 pi f n / fs)` with the cycle count reduced before the trig call.
pub(crate) fn unit_phasor(frequency: f64, n: usize, sample_rate: f64) -> Complex64 {
    let cycles = (frequency / sample_rate) * n as f64;
    let frac = cycles - cycles.round();
    Complex64::from_polar(1.0, TAU * frac)
}

/// Sum of tones times the envelope, sampled at `n / sample_rate`.
pub fn synthesize_multitone(
    tones: &[ToneSpec],
    envelope: &PulseEnvelope,
    sample_rate: f64,
    n_samples: usize,
) -> Result<IQTrace> {
    if n_samples == 0 {
        return Err(invalid("n_samples must be > 0"));
    }
    if !(sample_rate > 0.0) {
        return Err(invalid("sample_rate must be > 0"));
    }
    envelope.validate()?;
    let nyquist = 0.5 * sample_rate;
    for (index, t) in tones.iter().enumerate() {
        if !(t.baseband_frequency.abs() <= nyquist) {
            return Err(Error::Nyquist {
                index,
                frequency: t.baseband_frequency,
                nyquist,
            });
        }
        if !(t.amplitude >= 0.0) {
            return Err(invalid(format!("tone {index} has negative amplitude")));
        }
    }
    let samples = (0..n_samples)
        .map(|n| {
            let env = envelope.value(n as f64 / sample_rate);
            if env == 0.0 {
                return Complex64::new(0.0, 0.0);
            }
            let sum: Complex64 = tones
                .iter()
                .map(|t| {
                    unit_phasor(t.baseband_frequency, n, sample_rate)
                        * Complex64::from_polar(t.amplitude, t.phase)
                })
                .sum();
            sum * env
        })
        .collect();
    IQTrace::new(samples, sample_rate, 0.0)
}

/// Ideal IQ mixer: a baseband component at `f` lands only at `lo + f`.
/// The envelope is carried unchanged and tagged with the carrier.
pub fn upconvert_ssb(baseband: &IQTrace, lo_frequency: f64) -> Result<RfTrace> {
    if !(lo_frequency > baseband.nyquist()) {
        return Err(invalid(format!(
            "LO {lo_frequency} Hz must exceed the baseband span {} Hz",
            baseband.nyquist()
        )));
    }
    Ok(RfTrace::new(baseband.clone(), lo_frequency))
}

/// Pointwise weighted sum of equally shaped traces.
pub fn combine(inputs: &[(&IQTrace, f64)]) -> Result<IQTrace> {
    let (first, _) = inputs
        .first()
        .ok_or_else(|| invalid("combine needs at least one input"))?;
    for (i, (t, _)) in inputs.iter().enumerate().skip(1) {
        if t.len() != first.len() {
            return Err(Error::TraceMismatch(format!(
                "input {i} has {} samples, expected {}",
                t.len(),
                first.len()
            )));
        }
        if t.sample_rate() != first.sample_rate() {
            return Err(Error::TraceMismatch(format!(
                "input {i} sampled at {} Hz, expected {}",
                t.sample_rate(),
                first.sample_rate()
            )));
        }
    }
    let mut out = vec![Complex64::new(0.0, 0.0); first.len()];
    for (t, gain) in inputs {
        for (o, s) in out.iter_mut().zip(t.samples()) {
            *o += s * gain;
        }
    }
    first.with_samples(out)
}

/// Directional coupler on RF traces; all inputs must share the carrier.
pub fn combine_rf(inputs: &[(&RfTrace, f64)]) -> Result<RfTrace> {
    let carrier = inputs
        .first()
        .map(|(t, _)| t.carrier)
        .ok_or_else(|| invalid("combine needs at least one input"))?;
    if let Some((i, (t, _))) = inputs.iter().enumerate().find(|(_, (t, _))| t.carrier != carrier) {
        return Err(Error::TraceMismatch(format!(
            "input {i} at carrier {} Hz, expected {carrier}",
            t.carrier
        )));
    }
    let envs: Vec<(&IQTrace, f64)> = inputs.iter().map(|(t, g)| (&t.envelope, *g)).collect();
    Ok(RfTrace::new(combine(&envs)?, carrier))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FS: f64 = 1e9;
    const N: usize = 1000;

    fn bin(k: i64) -> f64 {
        k as f64 * FS / N as f64
    }

    /// Direct O(n^2) DFT, the oracle for bin magnitudes.
    fn direct_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(m, v)| {
                        let arg = -TAU * ((k * m) % n) as f64 / n as f64;
                        v * Complex64::from_polar(1.0, arg)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn empty_tone_list_is_silent() {
        let t = synthesize_multitone(&[], &PulseEnvelope::cw(), FS, 64).unwrap();
        assert!(t.samples().iter().all(|s| s.norm() == 0.0));
    }

    #[test]
    fn single_unit_tone_has_unit_modulus() {
        let t = synthesize_multitone(&[ToneSpec::new(123.4e6, 1.0, 0.3)], &PulseEnvelope::cw(), FS, 500).unwrap();
        for s in t.samples() {
            assert!((s.norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn nyquist_violation_names_tone() {
        let tones = [ToneSpec::new(1e6, 1.0, 0.0), ToneSpec::new(600e6, 1.0, 0.0)];
        match synthesize_multitone(&tones, &PulseEnvelope::cw(), FS, 16) {
            Err(Error::Nyquist { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bin_centered_tones_match_direct_dft() {
        let tones = [
            ToneSpec::new(bin(10), 0.5, 0.2),
            ToneSpec::new(bin(-37), 0.25, -1.0),
            ToneSpec::new(bin(150), 0.125, 2.5),
        ];
        let t = synthesize_multitone(&tones, &PulseEnvelope::cw(), FS, N).unwrap();
        let x = direct_dft(t.samples());
        let expected = |k: usize| match k {
            10 => 0.5,
            963 => 0.25,
            150 => 0.125,
            _ => 0.0,
        };
        for (k, v) in x.iter().enumerate() {
            assert!((v.norm() - expected(k) * N as f64).abs() < 1e-9, "bin {k}: {}", v.norm());
        }
    }

    #[test]
    fn ssb_places_tones_on_one_sideband() {
        let lo = 9.8e9;
        let n = 1000;
        for (f, expect) in [(100e6, 9.9e9), (-150e6, 9.65e9)] {
            let bb = synthesize_multitone(&[ToneSpec::new(f, 1.0, 0.0)], &PulseEnvelope::cw(), FS, n).unwrap();
            let rf = upconvert_ssb(&bb, lo).unwrap();
            let spec = rf.spectrum();
            let (peak_f, peak) = spec.iter().copied().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
            assert!((peak_f - expect).abs() < 1.0);
            assert!((peak - 1.0).abs() < 1e-12);
            let image = 2.0 * lo - expect;
            let image_mag = spec.iter().find(|(fr, _)| (fr - image).abs() < 1.0).unwrap().1;
            assert!(image_mag < 1e-12);
        }
    }

    #[test]
    fn upconvert_rejects_low_lo() {
        let bb = IQTrace::zeros(8, FS).unwrap();
        assert!(upconvert_ssb(&bb, 400e6).is_err());
    }

    #[test]
    fn combine_identity_and_cancellation() {
        let x = synthesize_multitone(&[ToneSpec::new(bin(3), 0.7, 1.0)], &PulseEnvelope::cw(), FS, N).unwrap();
        assert_eq!(combine(&[(&x, 1.0)]).unwrap(), x);
        let neg = x.scaled(Complex64::new(-1.0, 0.0));
        let z = combine(&[(&x, 1.0), (&neg, 1.0)]).unwrap();
        assert!(z.samples().iter().all(|s| s.norm() == 0.0));
        let short = IQTrace::zeros(N - 1, FS).unwrap();
        assert!(matches!(combine(&[(&x, 1.0), (&short, 1.0)]), Err(Error::TraceMismatch(_))));
    }

    #[test]
    fn combine_energy_on_disjoint_bins_is_additive() {
        let x = synthesize_multitone(&[ToneSpec::new(bin(5), 0.8, 0.0)], &PulseEnvelope::cw(), FS, N).unwrap();
        let y = synthesize_multitone(&[ToneSpec::new(bin(-90), 0.3, 1.2)], &PulseEnvelope::cw(), FS, N).unwrap();
        let (gx, gy) = (0.9, 0.4);
        let c = combine(&[(&x, gx), (&y, gy)]).unwrap();
        // Parseval oracle on the coupler output
        let dft_energy: f64 = direct_dft(c.samples()).iter().map(|v| v.norm_sqr()).sum::<f64>() / N as f64;
        let expected = gx * gx * x.energy() + gy * gy * y.energy();
        assert!((c.energy() - expected).abs() < 1e-9 * expected);
        assert!((dft_energy - expected).abs() < 1e-9 * expected);
    }

    #[test]
    fn combine_rf_checks_carrier() {
        let x = IQTrace::zeros(4, FS).unwrap();
        let a = RfTrace::new(x.clone(), 9e9);
        let b = RfTrace::new(x, 9.1e9);
        assert!(combine_rf(&[(&a, 1.0), (&b, 1.0)]).is_err());
        assert!(combine_rf(&[(&a, 1.0), (&a, 0.5)]).is_ok());
    }

    #[test]
    fn raised_cosine_edges() {
        let e = PulseEnvelope::default();
        e.validate().unwrap();
        assert_eq!(e.value(0.0), 0.0);
        assert!((e.value(10e-9) - 0.5).abs() < 1e-12);
        assert_eq!(e.value(1e-6), 1.0);
        assert_eq!(e.value(5e-6), 0.0);
        // periodic
        assert_eq!(e.value(10e-6 + 1e-6), 1.0);
        let bad = PulseEnvelope { edge_time: 3e-6, ..e };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn envelope_delay_is_a_phase_ramp() {
        let tones = [ToneSpec::new(bin(12), 0.6, 0.4), ToneSpec::new(bin(-40), 0.2, -0.3)];
        let x = synthesize_multitone(&tones, &PulseEnvelope::cw(), FS, N).unwrap();
        let m = 17;
        let mut shifted = x.samples().to_vec();
        shifted.rotate_right(m);
        let xs = x.with_samples(shifted).unwrap();
        let (a, b) = (x.dft(), xs.dft());
        for k in [12usize, N - 40] {
            let ramp = Complex64::from_polar(1.0, -TAU * (k * m) as f64 / N as f64);
            assert!((b[k] - a[k] * ramp).norm() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn parseval(
            tones in proptest::collection::vec((-499i64..499, 0.0f64..1.0, -3.0f64..3.0), 0..6),
            rc in any::<bool>(),
        ) {
            let tones: Vec<_> = tones.iter().map(|&(k, a, p)| ToneSpec::new(bin(k), a, p)).collect();
            let env = if rc {
                PulseEnvelope { duration: 600e-9, edge_time: 50e-9, repetition_period: 1e-6, shape: EnvelopeShape::RaisedCosineEdges }
            } else {
                PulseEnvelope::cw()
            };
            let t = synthesize_multitone(&tones, &env, FS, N).unwrap();
            let dft_energy: f64 = t.dft().iter().map(|v| v.norm_sqr()).sum::<f64>() / N as f64;
            prop_assert!((t.energy() - dft_energy).abs() <= 1e-9 * (1.0 + t.energy()));
        }

        #[test]
        fn synthesis_is_linear(
            a in proptest::collection::vec((-4e8f64..4e8, 0.0f64..1.0, -3.0f64..3.0), 0..4),
            b in proptest::collection::vec((-4e8f64..4e8, 0.0f64..1.0, -3.0f64..3.0), 0..4),
        ) {
            let ta: Vec<_> = a.iter().map(|&(f, m, p)| ToneSpec::new(f, m, p)).collect();
            let tb: Vec<_> = b.iter().map(|&(f, m, p)| ToneSpec::new(f, m, p)).collect();
            let all: Vec<_> = ta.iter().chain(&tb).copied().collect();
            let env = PulseEnvelope::cw();
            let xa = synthesize_multitone(&ta, &env, FS, 256).unwrap();
            let xb = synthesize_multitone(&tb, &env, FS, 256).unwrap();
            let xab = synthesize_multitone(&all, &env, FS, 256).unwrap();
            for ((s, p), q) in xab.samples().iter().zip(xa.samples()).zip(xb.samples()) {
                prop_assert!((s - p - q).norm() < 1e-12);
            }
        }
    }
}
