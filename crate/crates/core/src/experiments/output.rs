//! Data files. CSV files open with a block of `# key: value` lines naming
//! the experiment, the SHA-256 of the configuration file and the root seed,
//! followed by one column-header line and the data rows. Floats are written
//! in shortest round-trip form so identical runs give identical bytes.

use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiments::{RabiOutcome, SweepMetadata, SweepResult};

/// Header block for a data file.
pub fn header_block(meta: &SweepMetadata) -> String {
    format!(
        "# experiment: {}\n# config_hash: {}\n# seed: {}\n",
        meta.experiment, meta.config_hash, meta.seed
    )
}

/// `# key: value` lines at the top of a CSV file.
pub fn read_header(path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        let Some(rest) = line.strip_prefix('#') else { break };
        if let Some((k, v)) = rest.split_once(':') {
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    Ok(out)
}

fn sweep_columns(sweep: &SweepResult) -> String {
    let mut cols: Vec<&str> = sweep.axes.iter().map(|a| a.name.as_str()).collect();
    cols.extend(["device_id", "channel_hz", "amplitude", "phase_rad", "noise_std"]);
    cols.join(",")
}

fn sweep_body(sweep: &SweepResult) -> String {
    let mut s = String::new();
    for (i, point) in sweep.points.iter().enumerate() {
        let coords = sweep.coordinates(i);
        for (c, m) in sweep.channels.iter().zip(point) {
            for v in &coords {
                let _ = write!(s, "{v},");
            }
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                c.device_id, m.channel_frequency, m.amplitude, m.phase, m.noise_std
            );
        }
    }
    s
}

/// Long-format CSV: one row per point and channel.
pub fn write_sweep_csv<W: Write>(mut w: W, sweep: &SweepResult) -> Result<()> {
    w.write_all(header_block(&sweep.metadata).as_bytes())?;
    writeln!(w, "{}", sweep_columns(sweep))?;
    w.write_all(sweep_body(sweep).as_bytes())?;
    Ok(())
}

pub fn write_json<W: Write, T: serde::Serialize>(w: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(w, value).map_err(|e| Error::Format(e.to_string()))
}

/// Appends a sweep's rows to an existing CSV written by `write_sweep_csv`,
/// or creates it. Refuses files from a different configuration, experiment
/// or column layout.
pub fn append_sweep_csv(path: &Path, sweep: &SweepResult) -> Result<()> {
    if !path.exists() {
        return write_sweep_csv(File::create(path)?, sweep);
    }
    let header = read_header(path)?;
    let get = |k: &str| header.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
    let existing = get("config_hash").unwrap_or("");
    if existing != sweep.metadata.config_hash {
        return Err(Error::ConfigHashMismatch {
            existing: existing.to_string(),
            incoming: sweep.metadata.config_hash.clone(),
        });
    }
    if get("experiment") != Some(sweep.metadata.experiment.as_str()) {
        return Err(Error::Format(format!(
            "{} holds a different experiment",
            path.display()
        )));
    }
    let columns = BufReader::new(File::open(path)?)
        .lines()
        .map_while(|l| l.ok())
        .find(|l| !l.starts_with('#'))
        .unwrap_or_default();
    if columns != sweep_columns(sweep) {
        return Err(Error::Format(format!("{} has columns `{columns}`", path.display())));
    }
    let mut f = OpenOptions::new().append(true).open(path)?;
    f.write_all(sweep_body(sweep).as_bytes())?;
    Ok(())
}

/// Generic table with the standard header block.
pub fn write_table<W: Write>(mut w: W, meta: &SweepMetadata, columns: &[&str], rows: &[Vec<String>]) -> Result<()> {
    w.write_all(header_block(meta).as_bytes())?;
    writeln!(w, "{}", columns.join(","))?;
    for r in rows {
        writeln!(w, "{}", r.join(","))?;
    }
    Ok(())
}

pub fn rabi_fit_rows(outcome: &RabiOutcome) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let cols = vec![
        "drive_step",
        "device_id",
        "drive_amplitude",
        "drive_rabi_hz",
        "frequency_hz",
        "decay_rate",
        "amplitude",
        "offset",
        "phase_rad",
        "residual_rms",
        "valid",
        "diagnostic",
    ];
    let rows = outcome
        .traces
        .iter()
        .map(|t| {
            let f = &t.fit;
            vec![
                t.step.to_string(),
                t.device_id.to_string(),
                t.drive_amplitude.to_string(),
                t.drive_rabi_frequency.to_string(),
                f.frequency.to_string(),
                f.decay_rate.to_string(),
                f.amplitude.to_string(),
                f.offset.to_string(),
                f.phase.to_string(),
                f.residual_rms.to_string(),
                f.valid.to_string(),
                f.diagnostic.clone().unwrap_or_default().replace(',', ";"),
            ]
        })
        .collect();
    (cols, rows)
}

pub fn rabi_population_rows(outcome: &RabiOutcome) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let durations = &outcome.sweep.axes[1].values;
    let rows = outcome
        .traces
        .iter()
        .flat_map(|t| {
            durations.iter().zip(&t.population).map(move |(d, p)| {
                vec![t.step.to_string(), d.to_string(), t.device_id.to_string(), p.to_string()]
            })
        })
        .collect();
    (vec!["drive_step", "duration_s", "device_id", "population"], rows)
}

pub fn rabi_scaling_rows(outcome: &RabiOutcome) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let rows = outcome
        .scaling
        .iter()
        .map(|s| {
            let (slope, intercept, r2) = s
                .fit
                .map_or(("nan".into(), "nan".into(), "nan".into()), |f| {
                    (f.slope.to_string(), f.intercept.to_string(), f.r_squared.to_string())
                });
            vec![s.device_id.to_string(), s.valid_points.to_string(), slope, intercept, r2]
        })
        .collect();
    (
        vec!["device_id", "valid_fits", "slope_hz_per_amplitude", "intercept_hz", "r_squared"],
        rows,
    )
}

fn id_list(sweep: &SweepResult) -> String {
    sweep
        .channels
        .iter()
        .map(|c| c.device_id.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// gnuplot script drawing each device's amplitude against flux.
pub fn gnuplot_flux_sweep(sweep: &SweepResult, csv_name: &str) -> String {
    format!(
        "set datafile separator ','\n\
         set datafile columnheaders\n\
         set xlabel 'applied flux (flux quanta)'\n\
         set ylabel '|S21| (arb.)'\n\
         ids = '{ids}'\n\
         plot for [id in ids] '{csv_name}' using 1:($2 == id+0 ? $4 : 1/0) with lines title 'device '.id\n\
         pause -1\n",
        ids = id_list(sweep)
    )
}

/// gnuplot script with one amplitude map per device.
pub fn gnuplot_spectroscopy(sweep: &SweepResult, csv_name: &str) -> String {
    let mut s = String::from(
        "set datafile separator ','\nset datafile columnheaders\n\
         set xlabel 'flux offset (flux quanta)'\nset ylabel 'drive frequency (Hz)'\n\
         set view map\n",
    );
    for c in &sweep.channels {
        let _ = writeln!(
            s,
            "set title 'device {id}'\nplot '{csv_name}' using 1:2:($3 == {id} ? $5 : 1/0) with image notitle\npause -1",
            id = c.device_id
        );
    }
    s
}

/// gnuplot script for inferred populations of each driven device.
pub fn gnuplot_rabi(outcome: &RabiOutcome, population_csv: &str) -> String {
    let mut ids: Vec<u32> = outcome.traces.iter().map(|t| t.device_id).collect();
    ids.dedup();
    let steps = outcome.sweep.axes[0].values.len();
    let mut s = String::from(
        "set datafile separator ','\nset datafile columnheaders\n\
         set xlabel 'pulse duration (s)'\nset ylabel 'excited population'\n",
    );
    for id in ids {
        let _ = writeln!(
            s,
            "set title 'device {id}'\nplot for [k=0:{last}] '{population_csv}' using 2:($3 == {id} && $1 == k ? $4 : 1/0) with linespoints title 'step '.k\npause -1",
            last = steps.saturating_sub(1)
        );
    }
    s
}
