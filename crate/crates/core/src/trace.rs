//! Complex baseband traces and their on-disk dump format.
//!
//! Dump layout, all little-endian:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 8    | magic `b"FDMIQTR\0"`                    |
//! | 8      | 4    | version, `u32`, currently 1             |
//! | 12     | 4    | reserved, `u32`, written as 0           |
//! | 16     | 8    | sample rate in Hz, `f64`                |
//! | 24     | 8    | sample count `n`, `u64`                 |
//! | 32     | 16n  | interleaved I, Q pairs, `f64` each      |

use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Error, Result};

pub const TRACE_MAGIC: [u8; 8] = *b"FDMIQTR\0";
pub const TRACE_VERSION: u32 = 1;
pub const TRACE_HEADER_LEN: usize = 32;

/// Uniformly sampled complex series: real part is I, imaginary part is Q.
#[derive(Debug, Clone, PartialEq)]
pub struct IQTrace {
    samples: Vec<Complex64>,
    sample_rate: f64,
    start_time: f64,
}

impl IQTrace {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64, start_time: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(invalid("trace must be non-empty"));
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(invalid(format!("sample_rate must be > 0, got {sample_rate}")));
        }
        Ok(IQTrace {
            samples,
            sample_rate,
            start_time,
        })
    }

    pub fn zeros(n: usize, sample_rate: f64) -> Result<Self> {
        Self::new(vec![Complex64::new(0.0, 0.0); n], sample_rate, 0.0)
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [Complex64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, n: usize) -> f64 {
        self.start_time + n as f64 / self.sample_rate
    }

    pub fn nyquist(&self) -> f64 {
        0.5 * self.sample_rate
    }

    /// Frequency spacing of the trace's DFT bins.
    pub fn bin_width(&self) -> f64 {
        self.sample_rate / self.samples.len() as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }

    pub fn with_samples(&self, samples: Vec<Complex64>) -> Result<Self> {
        Self::new(samples, self.sample_rate, self.start_time)
    }

    pub fn scaled(&self, gain: Complex64) -> Self {
        IQTrace {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            ..self.clone()
        }
    }

    /// Multiplies every sample by `exp(-i phase)`.
    pub fn rotated(&self, phase: f64) -> Self {
        self.scaled(Complex64::from_polar(1.0, -phase))
    }

    /// Unnormalized forward DFT, bin `k` at frequency `k * bin_width` with
    /// the upper half wrapping to negative frequencies.
    pub fn dft(&self) -> Vec<Complex64> {
        let mut buf = self.samples.clone();
        fft_plan(buf.len(), false).process(&mut buf);
        buf
    }

    /// Signed frequency of DFT bin `k`.
    pub fn bin_frequency(&self, k: usize) -> f64 {
        let n = self.samples.len();
        let k = if k >= n.div_ceil(2) { k as f64 - n as f64 } else { k as f64 };
        k * self.bin_width()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = [0u8; TRACE_HEADER_LEN];
        header[0..8].copy_from_slice(&TRACE_MAGIC);
        header[8..12].copy_from_slice(&TRACE_VERSION.to_le_bytes());
        header[16..24].copy_from_slice(&self.sample_rate.to_le_bytes());
        header[24..32].copy_from_slice(&(self.samples.len() as u64).to_le_bytes());
        w.write_all(&header)?;
        let mut body = Vec::with_capacity(16 * self.samples.len());
        for s in &self.samples {
            body.extend_from_slice(&s.re.to_le_bytes());
            body.extend_from_slice(&s.im.to_le_bytes());
        }
        w.write_all(&body)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; TRACE_HEADER_LEN];
        r.read_exact(&mut header)?;
        if header[0..8] != TRACE_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
        if version != TRACE_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let sample_rate = f64::from_le_bytes(header[16..24].try_into().unwrap());
        let n = u64::from_le_bytes(header[24..32].try_into().unwrap()) as usize;
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() != 16 * n {
            return Err(Error::Format(format!(
                "expected {} payload bytes, found {}",
                16 * n,
                body.len()
            )));
        }
        let samples = body
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[0..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..16].try_into().unwrap()),
                )
            })
            .collect();
        Self::new(samples, sample_rate, 0.0)
    }
}

/// Complex envelope referenced to a carrier: the analytic RF signal is
/// `envelope(t) * exp(i 2 pi carrier t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RfTrace {
    pub envelope: IQTrace,
    pub carrier: f64,
}

impl RfTrace {
    pub fn new(envelope: IQTrace, carrier: f64) -> Self {
        RfTrace { envelope, carrier }
    }

    /// Absolute frequency of DFT bin `k`.
    pub fn bin_frequency(&self, k: usize) -> f64 {
        self.carrier + self.envelope.bin_frequency(k)
    }

    /// `(absolute frequency, |X_k| / n)` for every DFT bin.
    pub fn spectrum(&self) -> Vec<(f64, f64)> {
        let n = self.envelope.len() as f64;
        self.envelope
            .dft()
            .iter()
            .enumerate()
            .map(|(k, x)| (self.bin_frequency(k), x.norm() / n))
            .collect()
    }
}

pub(crate) fn fft_plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    }
}
