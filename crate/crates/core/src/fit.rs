//! Least-squares fit of `offset + A exp(-lambda t) cos(2 pi f t + phi)` and a
//! straight-line fit for frequency-versus-amplitude scaling.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix5, Vector5};
use serde::{Deserialize, Serialize};

pub const MIN_POINTS: usize = 8;
pub const MAX_ITERATIONS: usize = 200;
/// Minimum significance of an oscillation, applied twice: to the undamped
/// periodogram peak against the trace's scatter, and to the root-sum-square
/// of the fitted oscillation against the residual rms. For an undamped
/// sinusoid both reduce to the amplitude over its standard error.
pub const MIN_SIGNIFICANCE: f64 = 5.0;
/// Zero padding factor of the frequency scan used for the initial guess.
const SCAN_PADDING: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RabiFit {
    /// Hz.
    pub frequency: f64,
    /// Envelope decay rate, 1/s.
    pub decay_rate: f64,
    pub amplitude: f64,
    pub offset: f64,
    /// Radians.
    pub phase: f64,
    pub residual_rms: f64,
    pub valid: bool,
    pub diagnostic: Option<String>,
}

impl RabiFit {
    fn rejected(offset: f64, residual_rms: f64, why: &str) -> Self {
        RabiFit {
            frequency: 0.0,
            decay_rate: 0.0,
            amplitude: 0.0,
            offset,
            phase: 0.0,
            residual_rms,
            valid: false,
            diagnostic: Some(why.to_string()),
        }
    }
}

fn model(p: &Vector5<f64>, t: f64) -> f64 {
    p[0] + p[1] * (-p[2] * t).exp() * (TAU * p[3] * t + p[4]).cos()
}

fn gradient(p: &Vector5<f64>, t: f64) -> Vector5<f64> {
    let e = (-p[2] * t).exp();
    let arg = TAU * p[3] * t + p[4];
    let (s, c) = arg.sin_cos();
    Vector5::new(1.0, e * c, -t * p[1] * e * c, -TAU * t * p[1] * e * s, -p[1] * e * s)
}

fn cost(p: &Vector5<f64>, t: &[f64], y: &[f64]) -> f64 {
    t.iter().zip(y).map(|(&t, &y)| (y - model(p, t)).powi(2)).sum()
}

/// Strongest component of a direct DFT scan; ties go to the lower frequency.
fn dominant_frequency(t: &[f64], y: &[f64], mean: f64) -> (f64, f64, f64) {
    let n = t.len();
    let span = t[n - 1] - t[0];
    let df = 1.0 / (SCAN_PADDING as f64 * span);
    let f_max = 0.5 * (n - 1) as f64 / span;
    let mut best = (0.0, 0.0, 0.0);
    let mut k = 1;
    while k as f64 * df <= f_max {
        let f = k as f64 * df;
        let (mut re, mut im) = (0.0, 0.0);
        for (&t, &y) in t.iter().zip(y) {
            let (s, c) = (TAU * f * t).sin_cos();
            re += (y - mean) * c;
            im -= (y - mean) * s;
        }
        let power = re * re + im * im;
        if power > best.1 {
            best = (f, power, im.atan2(re));
        }
        k += 1;
    }
    let amplitude = 2.0 * best.1.sqrt() / n as f64;
    (best.0, amplitude, best.2)
}

fn wrap(phase: f64) -> f64 {
    let p = (phase + PI).rem_euclid(TAU) - PI;
    if p <= -PI { p + TAU } else { p }
}

/// Fits a damped sinusoid to `(t, value)` pairs sorted by time. Never fails:
/// unusable traces come back with `valid == false` and a diagnostic.
pub fn fit_damped_sinusoid(trace: &[(f64, f64)]) -> RabiFit {
    let n = trace.len();
    let t: Vec<f64> = trace.iter().map(|p| p.0).collect();
    let y: Vec<f64> = trace.iter().map(|p| p.1).collect();
    let mean = if n > 0 { y.iter().sum::<f64>() / n as f64 } else { 0.0 };
    let spread = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n.max(1) as f64).sqrt();
    if n < MIN_POINTS {
        return RabiFit::rejected(mean, spread, "too few points");
    }
    if t.windows(2).any(|w| !(w[1] > w[0])) || y.iter().any(|v| !v.is_finite()) {
        return RabiFit::rejected(mean, spread, "times must be increasing and values finite");
    }
    if spread <= 1e-12 * (1.0 + mean.abs()) {
        return RabiFit::rejected(mean, spread, "zero-amplitude: trace is flat");
    }

    let span = t[n - 1] - t[0];
    let (f0, a0, phi0) = dominant_frequency(&t, &y, mean);
    // Phase of the scan is referenced to t = 0, matching the model.
    let mut p = Vector5::new(mean, a0, 0.1 / span, f0, phi0);
    let mut c = cost(&p, &t, &y);
    let mut mu = 1e-3;
    let mut converged = false;
    for _ in 0..MAX_ITERATIONS {
        let mut jtj = Matrix5::zeros();
        let mut jtr = Vector5::zeros();
        for (&t, &y) in t.iter().zip(&y) {
            let g = gradient(&p, t);
            jtj += g * g.transpose();
            jtr += g * (y - model(&p, t));
        }
        let mut improved = false;
        while mu < 1e12 {
            let mut a = jtj;
            for i in 0..5 {
                a[(i, i)] += mu * jtj[(i, i)].max(1e-300);
            }
            let Some(step) = a.lu().solve(&jtr) else {
                mu *= 10.0;
                continue;
            };
            let candidate = p + step;
            let cc = cost(&candidate, &t, &y);
            if cc.is_finite() && cc <= c {
                let relative = (c - cc) / c.max(f64::MIN_POSITIVE);
                p = candidate;
                c = cc;
                mu = (mu / 3.0).max(1e-12);
                improved = true;
                if relative < 1e-14 || step.norm() <= 1e-12 * (p.norm() + 1e-12) {
                    converged = true;
                }
                break;
            }
            mu *= 10.0;
        }
        if !improved {
            // No downhill step at any damping: a stationary point.
            converged = true;
        }
        if converged {
            break;
        }
    }

    let residual_rms = (c / n as f64).sqrt();
    let (mut amplitude, mut frequency, mut phase) = (p[1], p[3], p[4]);
    if amplitude < 0.0 {
        amplitude = -amplitude;
        phase += PI;
    }
    if frequency < 0.0 {
        frequency = -frequency;
        phase = -phase;
    }
    let mut fit = RabiFit {
        frequency,
        decay_rate: p[2],
        amplitude,
        offset: p[0],
        phase: wrap(phase),
        residual_rms,
        valid: true,
        diagnostic: None,
    };
    let envelope: f64 = t.iter().map(|&t| (-fit.decay_rate * t).exp().powi(2)).sum();
    let fitted = amplitude * (0.5 * envelope).sqrt() / residual_rms.max(f64::MIN_POSITIVE);
    let scanned = a0 * (0.5 * n as f64).sqrt() / spread;
    let significance = fitted.min(scanned);
    let why = if !converged {
        Some("no convergence within the iteration limit")
    } else if !p.iter().all(|v| v.is_finite()) {
        Some("fit diverged")
    } else if significance < MIN_SIGNIFICANCE {
        Some("zero-amplitude: no significant oscillation")
    } else if frequency * span < 1.0 {
        Some("trace spans less than one period")
    } else {
        None
    };
    if let Some(why) = why {
        fit.valid = false;
        fit.diagnostic = Some(why.to_string());
    }
    fit
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y = slope x + intercept`. `None` for fewer than two
/// points or constant `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Some(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn grid(n: usize, dt: f64) -> Vec<f64> {
        (0..n).map(|i| i as f64 * dt).collect()
    }

    #[test]
    fn noiseless_sin_squared() {
        for f in [3.1e6, 7.7e6, 12.0e6] {
            let trace: Vec<_> = grid(120, 5e-9)
                .into_iter()
                .map(|t| (t, (PI * f * t).sin().powi(2)))
                .collect();
            let fit = fit_damped_sinusoid(&trace);
            assert!(fit.valid, "{fit:?}");
            assert!((fit.frequency - f).abs() / f < 1e-3, "{f}: {fit:?}");
            assert!((fit.amplitude - 0.5).abs() < 1e-6);
            assert!((fit.offset - 0.5).abs() < 1e-6);
            assert!(fit.residual_rms < 1e-8);
        }
    }

    #[test]
    fn damped_parameters_recovered() {
        let truth = Vector5::new(0.2, 0.7, 4e5, 5.5e6, 0.9);
        let trace: Vec<_> = grid(200, 4e-9).into_iter().map(|t| (t, model(&truth, t))).collect();
        let fit = fit_damped_sinusoid(&trace);
        assert!(fit.valid);
        assert!((fit.decay_rate - 4e5).abs() / 4e5 < 1e-6);
        assert!((fit.phase - 0.9).abs() < 1e-6);
    }

    #[test]
    fn constant_trace_is_rejected() {
        let trace: Vec<_> = grid(50, 1e-9).into_iter().map(|t| (t, 0.25)).collect();
        let fit = fit_damped_sinusoid(&trace);
        assert!(!fit.valid);
        assert!(fit.diagnostic.unwrap().starts_with("zero-amplitude"));
    }

    #[test]
    fn pure_noise_is_rejected() {
        let noise = Normal::new(0.0, 0.01).unwrap();
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let trace: Vec<_> = grid(101, 1e-8)
                .into_iter()
                .map(|t| (t, noise.sample(&mut rng)))
                .collect();
            let fit = fit_damped_sinusoid(&trace);
            assert!(!fit.valid, "seed {seed}: {fit:?}");
        }
    }

    #[test]
    fn short_trace_is_rejected() {
        let trace: Vec<_> = grid(7, 1e-8).into_iter().map(|t| (t, t.sin())).collect();
        assert_eq!(fit_damped_sinusoid(&trace).diagnostic.as_deref(), Some("too few points"));
    }

    #[test]
    fn snr_ten_within_two_percent() {
        // Amplitude 0.5 against noise 0.05.
        let f = 6e6;
        let sigma = 0.05;
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut worst: f64 = 0.0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let trace: Vec<_> = grid(150, 4e-9)
                .into_iter()
                .map(|t| (t, (PI * f * t).sin().powi(2) + noise.sample(&mut rng)))
                .collect();
            let fit = fit_damped_sinusoid(&trace);
            assert!(fit.valid);
            worst = worst.max((fit.frequency - f).abs() / f);
            // Residual of a 5-parameter fit: sigma * sqrt((n - 5) / n).
            let expected = sigma * (145.0f64 / 150.0).sqrt();
            assert!((fit.residual_rms - expected).abs() < 0.2 * expected, "{}", fit.residual_rms);
        }
        assert!(worst < 0.02, "{worst}");
    }

    #[test]
    fn deterministic() {
        let trace: Vec<_> = grid(64, 1e-8).into_iter().map(|t| (t, (3e6 * t).cos())).collect();
        assert_eq!(fit_damped_sinusoid(&trace), fit_damped_sinusoid(&trace));
    }

    #[test]
    fn line_fit() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [3.0, 5.0, 7.0, 9.0];
        let l = linear_fit(&x, &y).unwrap();
        assert!((l.slope - 2.0).abs() < 1e-12 && (l.intercept - 1.0).abs() < 1e-12);
        assert!((l.r_squared - 1.0).abs() < 1e-12);
        assert!(linear_fit(&[1.0, 1.0], &[0.0, 1.0]).is_none());
    }
}
