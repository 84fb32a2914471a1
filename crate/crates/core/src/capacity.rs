//! Channel-capacity arithmetic: neighbour crosstalk from the Lorentzian tail,
//! the Carson bandwidth of relaxation-induced modulation, channel counts per
//! readout band, and uniform frequency plans with a self-audit.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Relative slack applied to exact-boundary comparisons.
const BOUNDARY_SLACK: f64 = 1e-9;

/// Extra bandwidth needed by relaxation-induced frequency modulation,
/// `2 (shift + 2 gamma)`, rad/s.
pub fn carson_bandwidth(shift: f64, gamma: f64) -> f64 {
    2.0 * (shift + 2.0 * gamma)
}

/// Lorentzian amplitude tail of one channel evaluated at its neighbour, dB.
pub fn adjacent_crosstalk(spacing: f64, kappa: f64) -> f64 {
    let half = 0.5 * kappa;
    20.0 * (half / spacing.hypot(half)).log10()
}

/// Smallest spacing (continuous) meeting `limit_db` under `adjacent_crosstalk`.
pub fn crosstalk_spacing(kappa: f64, limit_db: f64) -> f64 {
    0.5 * kappa * (10f64.powf(-limit_db / 10.0) - 1.0).max(0.0).sqrt()
}

/// Spacing snapped up to the half-kappa grid.
pub fn crosstalk_spacing_on_grid(kappa: f64, limit_db: f64) -> f64 {
    let unit = 0.5 * kappa;
    let steps = (crosstalk_spacing(kappa, limit_db) / unit - BOUNDARY_SLACK).ceil().max(1.0);
    steps * unit
}

/// Heuristic per-channel signal quality: dip depth times `sqrt(T kappa)`.
pub fn snr_proxy(kappa_ext: f64, kappa: f64, integration_time: f64) -> f64 {
    kappa_ext / kappa * (integration_time * kappa).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityQuery {
    /// Readout bandwidth, Hz.
    pub bandwidth: f64,
    /// rad/s.
    pub kappa: f64,
    /// rad/s.
    pub gamma: f64,
    /// rad/s.
    pub dispersive_shift: f64,
    /// dB, negative.
    pub crosstalk_limit: f64,
}

impl CapacityQuery {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0) {
            return Err(invalid("bandwidth must be > 0"));
        }
        if !(self.kappa > 0.0) {
            return Err(invalid("kappa must be > 0"));
        }
        if !(self.gamma >= 0.0 && self.dispersive_shift >= 0.0) {
            return Err(invalid("gamma and dispersive_shift must be >= 0"));
        }
        if !(self.crosstalk_limit < 0.0) {
            return Err(invalid("crosstalk_limit must be negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelCapacity {
    pub count: usize,
    /// Adopted spacing, rad/s.
    pub spacing: f64,
    /// Crosstalk-limited spacing on the half-kappa grid, rad/s.
    pub crosstalk_spacing: f64,
    /// rad/s.
    pub carson_spacing: f64,
}

impl ChannelCapacity {
    pub fn spacing_hz(&self) -> f64 {
        self.spacing / TAU
    }
}

pub fn max_channels(q: &CapacityQuery) -> Result<ChannelCapacity> {
    q.validate()?;
    let crosstalk = crosstalk_spacing_on_grid(q.kappa, q.crosstalk_limit);
    let carson = carson_bandwidth(q.dispersive_shift, q.gamma);
    let spacing = crosstalk.max(carson);
    let band = TAU * q.bandwidth;
    if spacing > band * (1.0 + BOUNDARY_SLACK) {
        return Err(Error::Infeasible(format!(
            "required spacing {:.6e} Hz exceeds bandwidth {:.6e} Hz",
            spacing / TAU,
            q.bandwidth
        )));
    }
    Ok(ChannelCapacity {
        count: (band / spacing + BOUNDARY_SLACK).floor() as usize,
        spacing,
        crosstalk_spacing: crosstalk,
        carson_spacing: carson,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpacingRule {
    /// Fixed spacing in Hz; `None` spreads the channels over the full band.
    FixedSpacing { spacing: Option<f64> },
    /// Spacing of `multiple * kappa`, kappa in rad/s.
    KappaMultiple { kappa: f64, multiple: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannedChannel {
    pub device_id: u32,
    /// Hz.
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyPlan {
    pub band_start: f64,
    pub band_stop: f64,
    pub channels: Vec<PlannedChannel>,
    pub spacing_rule: SpacingRule,
    /// Smallest distance from a channel to a band edge, Hz.
    pub guard: f64,
}

impl FrequencyPlan {
    /// Builds a plan from explicit channels, checking order and band.
    pub fn new(band_start: f64, band_stop: f64, channels: Vec<PlannedChannel>, spacing_rule: SpacingRule) -> Result<Self> {
        if !(band_stop > band_start) {
            return Err(invalid("band_stop must exceed band_start"));
        }
        if channels.is_empty() {
            return Err(invalid("plan needs at least one channel"));
        }
        let slack = BOUNDARY_SLACK * band_stop.abs().max(1.0);
        for w in channels.windows(2) {
            if !(w[1].frequency > w[0].frequency) {
                return Err(invalid("plan channels must be strictly increasing"));
            }
        }
        let first = channels[0].frequency;
        let last = channels[channels.len() - 1].frequency;
        if first < band_start - slack || last > band_stop + slack {
            return Err(Error::Infeasible(format!(
                "channels [{first}, {last}] Hz leave band [{band_start}, {band_stop}] Hz"
            )));
        }
        Ok(FrequencyPlan {
            band_start,
            band_stop,
            guard: (first - band_start).min(band_stop - last).max(0.0),
            channels,
            spacing_rule,
        })
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.channels.iter().map(|c| c.frequency).collect()
    }

    pub fn spacings(&self) -> Vec<f64> {
        self.channels
            .windows(2)
            .map(|w| w[1].frequency - w[0].frequency)
            .collect()
    }

    pub fn device_ids(&self) -> Vec<u32> {
        self.channels.iter().map(|c| c.device_id).collect()
    }

    /// Re-labels channels with the given device ids, in order.
    pub fn with_device_ids(mut self, ids: &[u32]) -> Result<Self> {
        if ids.len() != self.channels.len() {
            return Err(Error::LengthMismatch {
                what: "device ids",
                expected: self.channels.len(),
                got: ids.len(),
            });
        }
        for (c, &id) in self.channels.iter_mut().zip(ids) {
            c.device_id = id;
        }
        Ok(self)
    }

    pub fn audit(&self, kappa: f64, crosstalk_limit: f64, carson: f64) -> PlanAudit {
        let pairs: Vec<PairAudit> = self
            .channels
            .windows(2)
            .map(|w| {
                let spacing = w[1].frequency - w[0].frequency;
                PairAudit {
                    lower: w[0].device_id,
                    upper: w[1].device_id,
                    spacing,
                    crosstalk_db: adjacent_crosstalk(TAU * spacing, kappa),
                }
            })
            .collect();
        let carson_hz = carson / TAU;
        let margins = self
            .channels
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let left = if i > 0 { c.frequency - self.channels[i - 1].frequency } else { f64::INFINITY };
                let right = self.channels.get(i + 1).map_or(f64::INFINITY, |n| n.frequency - c.frequency);
                let nearest = left.min(right);
                let margin = if nearest.is_finite() { nearest - carson_hz } else { f64::INFINITY };
                (c.device_id, margin)
            })
            .collect::<Vec<_>>();
        let tolerance = BOUNDARY_SLACK * crosstalk_limit.abs();
        let passes = pairs.iter().all(|p| p.crosstalk_db <= crosstalk_limit + tolerance)
            && margins.iter().all(|(_, m)| *m >= 0.0);
        PlanAudit {
            kappa,
            crosstalk_limit,
            carson,
            pairs,
            carson_margins: margins,
            passes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairAudit {
    pub lower: u32,
    pub upper: u32,
    /// Hz.
    pub spacing: f64,
    pub crosstalk_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanAudit {
    pub kappa: f64,
    pub crosstalk_limit: f64,
    pub carson: f64,
    pub pairs: Vec<PairAudit>,
    /// Per channel: nearest-neighbour spacing minus Carson bandwidth, Hz.
    pub carson_margins: Vec<(u32, f64)>,
    pub passes: bool,
}

/// Uniform plan of `n` channels, labelled 1..=n, centred in the band.
pub fn generate_plan(n: usize, band_start: f64, band_stop: f64, rule: SpacingRule) -> Result<FrequencyPlan> {
    if n == 0 {
        return Err(invalid("need at least one channel"));
    }
    if !(band_stop > band_start) {
        return Err(invalid("band_stop must exceed band_start"));
    }
    let width = band_stop - band_start;
    let spacing = match rule {
        SpacingRule::FixedSpacing { spacing: None } => {
            if n == 1 { 0.0 } else { width / (n - 1) as f64 }
        }
        SpacingRule::FixedSpacing { spacing: Some(s) } => s,
        SpacingRule::KappaMultiple { kappa, multiple } => multiple * kappa / TAU,
    };
    if n > 1 && !(spacing > 0.0) {
        return Err(invalid("spacing must be > 0"));
    }
    let span = spacing * (n - 1) as f64;
    if span > width * (1.0 + BOUNDARY_SLACK) {
        return Err(Error::Infeasible(format!(
            "{n} channels at {spacing:.6e} Hz span {span:.6e} Hz, band is {width:.6e} Hz"
        )));
    }
    let first = 0.5 * (band_start + band_stop) - 0.5 * span;
    let channels = (0..n)
        .map(|i| PlannedChannel {
            device_id: i as u32 + 1,
            frequency: first + spacing * i as f64,
        })
        .collect();
    FrequencyPlan::new(band_start, band_stop, channels, rule)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sidebands {
    Single,
    Double,
}

/// RF band reachable around an LO with a complex acquisition of the given
/// analog bandwidth.
pub fn acquisition_band(lo_frequency: f64, analog_bandwidth: f64, sidebands: Sidebands) -> (f64, f64) {
    match sidebands {
        Sidebands::Single => (lo_frequency, lo_frequency + analog_bandwidth),
        Sidebands::Double => (lo_frequency - analog_bandwidth, lo_frequency + analog_bandwidth),
    }
}

/// Text report: channels, spacings, crosstalk per adjacent pair and Carson
/// margin per channel.
pub fn render_plan_report(plan: &FrequencyPlan, audit: &PlanAudit) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# frequency plan");
    let _ = writeln!(s, "band_start_hz = {}", plan.band_start);
    let _ = writeln!(s, "band_stop_hz = {}", plan.band_stop);
    let _ = writeln!(s, "guard_hz = {}", plan.guard);
    let _ = writeln!(s, "kappa_hz = {}", audit.kappa / TAU);
    let _ = writeln!(s, "crosstalk_limit_db = {}", audit.crosstalk_limit);
    let _ = writeln!(s, "carson_bandwidth_hz = {}", audit.carson / TAU);
    let _ = writeln!(s, "audit = {}", if audit.passes { "pass" } else { "fail" });
    let _ = writeln!(s);
    let _ = writeln!(s, "[channels]");
    let _ = writeln!(s, "device_id,frequency_hz,carson_margin_hz");
    for (c, (_, m)) in plan.channels.iter().zip(&audit.carson_margins) {
        let _ = writeln!(s, "{},{},{}", c.device_id, c.frequency, m);
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "[pairs]");
    let _ = writeln!(s, "lower_id,upper_id,spacing_hz,crosstalk_db");
    for p in &audit.pairs {
        let _ = writeln!(s, "{},{},{},{:.4}", p.lower, p.upper, p.spacing, p.crosstalk_db);
    }
    s
}
