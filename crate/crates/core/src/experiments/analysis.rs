//! Feature extraction from sweep data.

use num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::experiments::SweepResult;

/// Fraction of the way from the baseline to the trace maximum a sample must
/// reach to belong to a feature.
pub const FEATURE_THRESHOLD: f64 = 0.5;

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

/// Median of a trace, the level of the far-detuned plateau when features
/// occupy a minority of the sweep.
pub fn baseline(values: &[f64]) -> f64 {
    median(values)
}

/// Indices of the peaks that rise above the baseline: contiguous runs above
/// `baseline + FEATURE_THRESHOLD * (max - baseline)`, one peak per run.
/// A trace whose maximum stays within `min_height` of its baseline has no
/// features.
pub fn find_features(values: &[f64], min_height: f64) -> Vec<usize> {
    if values.is_empty() {
        return Vec::new();
    }
    let base = median(values);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max - base > min_height) {
        return Vec::new();
    }
    let level = base + FEATURE_THRESHOLD * (max - base);
    let mut out = Vec::new();
    let mut run: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if v > level {
            match run {
                Some(best) if values[best] >= v => {}
                _ => run = Some(i),
            }
        } else if let Some(best) = run.take() {
            out.push(best);
        }
    }
    if let Some(best) = run {
        out.push(best);
    }
    out
}

/// Flux positions of the anticrossing features on one device's channel of a
/// flux sweep.
pub fn anticrossing_fluxes(sweep: &SweepResult, device_id: u32, min_height: f64) -> Result<Vec<f64>> {
    if sweep.axes.len() != 1 {
        return Err(invalid("anticrossing search needs a one-axis sweep"));
    }
    let amps: Vec<f64> = sweep.device_trace(device_id)?.iter().map(|m| m.amplitude).collect();
    Ok(find_features(&amps, min_height)
        .into_iter()
        .map(|i| sweep.axes[0].values[i])
        .collect())
}

/// For each outer-axis row of a two-axis sweep, the inner-axis value where a
/// device's reading departs most from the row's median reading.
pub fn extract_ridge(sweep: &SweepResult, device_id: u32) -> Result<Vec<(f64, f64)>> {
    if sweep.axes.len() != 2 {
        return Err(invalid("ridge extraction needs a two-axis sweep"));
    }
    let trace = sweep.device_trace(device_id)?;
    let inner = &sweep.axes[1].values;
    let n = inner.len();
    Ok(sweep.axes[0]
        .values
        .iter()
        .enumerate()
        .map(|(r, &outer)| {
            let row: Vec<Complex64> = trace[r * n..(r + 1) * n].iter().map(|m| m.complex()).collect();
            let centre = Complex64::new(
                median(&row.iter().map(|c| c.re).collect::<Vec<_>>()),
                median(&row.iter().map(|c| c.im).collect::<Vec<_>>()),
            );
            let mut best = 0;
            for (i, c) in row.iter().enumerate() {
                if (c - centre).norm() > (row[best] - centre).norm() {
                    best = i;
                }
            }
            (outer, inner[best])
        })
        .collect())
}
