use std::f64::consts::TAU;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use fdm_readout::capacity::{
    adjacent_crosstalk, generate_plan, max_channels, render_plan_report, CapacityQuery, ChannelCapacity,
    FrequencyPlan, PlanAudit, SpacingRule,
};
use fdm_readout::chain::{measure_crosstalk, CrosstalkEntry};
use fdm_readout::device::QubitStateLabel;
use fdm_readout::experiments::analysis::{anticrossing_fluxes, extract_ridge};
use fdm_readout::experiments::output::{
    append_sweep_csv, gnuplot_flux_sweep, gnuplot_rabi, gnuplot_spectroscopy, rabi_fit_rows, rabi_population_rows,
    rabi_scaling_rows, write_json, write_sweep_csv, write_table,
};
use fdm_readout::experiments::{
    coil_fluxes, linspace, run_flux_sweep, run_rabi, run_spectroscopy, RabiRequest, Setup, SpectroscopyRequest,
    SweepMetadata, SweepResult,
};
use fdm_readout::rx::{channelize, ToneMeasurement};
use fdm_readout::seed::child_seed;
use fdm_readout::trace::IQTrace;
use fdm_readout::{Error, Result};

#[derive(Parser)]
#[command(name = "fdm-readout", version, about = "Frequency-multiplexed qubit readout simulator")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "configs/chip7.cfg")]
    config: PathBuf,
    /// Root seed; defaults to the configuration's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Also write gnuplot scripts next to the data.
    #[arg(long, global = true)]
    emit_gnuplot: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Ground-state transmission of every probe tone against uniform flux.
    Sweep {
        #[arg(long)]
        start: Option<f64>,
        #[arg(long)]
        stop: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
        /// Append rows to an existing CSV from the same configuration.
        #[arg(long)]
        append: bool,
    },
    /// Two-tone spectroscopy map of the selected qubits.
    Spectroscopy {
        #[arg(long)]
        drive_points: Option<usize>,
        #[arg(long)]
        flux_points: Option<usize>,
        #[arg(long)]
        drive_amplitude: Option<f64>,
    },
    /// Simultaneous Rabi oscillations with damped-sinusoid fits.
    Rabi {
        #[arg(long)]
        duration_points: Option<usize>,
        #[arg(long)]
        averages: Option<u32>,
    },
    /// Channel capacity and a uniform frequency plan for the `[plan]` inputs,
    /// plus an audit of the configured probe plan.
    Plan,
    /// Channelize a recorded IQ trace, or simulate and record one readout.
    Channelize {
        /// Binary IQ trace to read instead of simulating.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Baseband channel frequencies in Hz; defaults to the probe plan.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        channels: Vec<f64>,
    },
    /// End-to-end crosstalk with each probed qubit toggled in turn.
    Crosstalk,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

struct Ctx {
    setup: Setup,
    seed: u64,
    common: Common,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.common.out.join(name)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.path(name))?))
    }

    fn meta(&self, experiment: &str) -> SweepMetadata {
        SweepMetadata {
            experiment: experiment.into(),
            seed: self.seed,
            config_hash: self.setup.config_hash.clone(),
            started: None,
            finished: None,
        }
    }

    fn table(&self, name: &str, meta: &SweepMetadata, cols: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = self.create(name)?;
        write_table(&mut w, meta, cols, rows)?;
        w.flush()?;
        println!("wrote {}", self.path(name).display());
        Ok(())
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut w = self.create(name)?;
        write_json(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        println!("wrote {}", self.path(name).display());
        Ok(())
    }

    fn sweep_csv(&self, name: &str, sweep: &SweepResult, append: bool) -> Result<()> {
        if append {
            append_sweep_csv(&self.path(name), sweep)?;
        } else {
            let mut w = self.create(name)?;
            write_sweep_csv(&mut w, sweep)?;
            w.flush()?;
        }
        println!("wrote {}", self.path(name).display());
        Ok(())
    }

    fn script(&self, name: &str, text: String) -> Result<()> {
        if self.common.emit_gnuplot {
            std::fs::write(self.path(name), text)?;
            println!("wrote {}", self.path(name).display());
        }
        Ok(())
    }
}

fn run(cli: Cli) -> Result<()> {
    let setup = Setup::load(&cli.common.config)?;
    let seed = cli.common.seed.unwrap_or(setup.config.seed);
    std::fs::create_dir_all(&cli.common.out)?;
    let ctx = Ctx {
        setup,
        seed,
        common: cli.common,
    };
    match cli.command {
        Command::Sweep {
            start,
            stop,
            points,
            append,
        } => sweep(&ctx, start, stop, points, append),
        Command::Spectroscopy {
            drive_points,
            flux_points,
            drive_amplitude,
        } => spectroscopy(&ctx, drive_points, flux_points, drive_amplitude),
        Command::Rabi {
            duration_points,
            averages,
        } => rabi(&ctx, duration_points, averages),
        Command::Plan => plan(&ctx),
        Command::Channelize { input, channels } => channelize_cmd(&ctx, input.as_deref(), &channels),
        Command::Crosstalk => crosstalk(&ctx),
    }
}

fn sweep(ctx: &Ctx, start: Option<f64>, stop: Option<f64>, points: Option<usize>, append: bool) -> Result<()> {
    let fs = &ctx.setup.config.flux_sweep;
    let range = (start.unwrap_or(fs.start), stop.unwrap_or(fs.stop));
    let points = points.unwrap_or(fs.points);
    let result = run_flux_sweep(&ctx.setup, range, points, ctx.seed)?;
    let noise_floor = 10.0 * ctx.setup.averaged_noise(ctx.setup.config.readout.averages) / (ctx.setup.chain.n_samples as f64).sqrt();
    let mut features = Vec::new();
    for c in &result.channels {
        let found = anticrossing_fluxes(&result, c.device_id, noise_floor.max(1e-9))?;
        println!("device {}: {} anticrossing features {:?}", c.device_id, found.len(), found);
        features.extend(found.into_iter().map(|f| vec![c.device_id.to_string(), f.to_string()]));
    }
    match ctx.common.format {
        Format::Csv => {
            ctx.sweep_csv("flux_sweep.csv", &result, append)?;
            ctx.table("flux_features.csv", &result.metadata, &["device_id", "flux"], &features)?;
        }
        Format::Json => {
            if append {
                return Err(Error::Config("--append works with --format csv only".into()));
            }
            ctx.json("flux_sweep.json", &result)?;
        }
    }
    ctx.script("flux_sweep.gp", gnuplot_flux_sweep(&result, "flux_sweep.csv"))
}

fn spectroscopy(ctx: &Ctx, drive_points: Option<usize>, flux_points: Option<usize>, amplitude: Option<f64>) -> Result<()> {
    let sp = &ctx.setup.config.spectroscopy;
    if sp.devices.is_empty() {
        return Err(Error::Config("[spectroscopy] devices is empty".into()));
    }
    let req = SpectroscopyRequest {
        device_ids: sp.devices.clone(),
        drive: (sp.drive_start, sp.drive_stop, drive_points.unwrap_or(sp.drive_points)),
        flux: (sp.flux_start, sp.flux_stop, flux_points.unwrap_or(sp.flux_points)),
        drive_amplitude: amplitude.unwrap_or(sp.drive_amplitude),
    };
    let result = run_spectroscopy(&ctx.setup, &req, ctx.seed)?;
    let mut ridge_rows = Vec::new();
    for &id in &req.device_ids {
        if result.channel_index(id).is_err() {
            continue;
        }
        for (flux, f) in extract_ridge(&result, id)? {
            ridge_rows.push(vec![id.to_string(), flux.to_string(), f.to_string()]);
        }
    }
    match ctx.common.format {
        Format::Csv => {
            ctx.sweep_csv("spectroscopy.csv", &result, false)?;
            ctx.table(
                "spectroscopy_ridge.csv",
                &result.metadata,
                &["device_id", "flux_offset", "ridge_hz"],
                &ridge_rows,
            )?;
        }
        Format::Json => ctx.json("spectroscopy.json", &result)?,
    }
    ctx.script("spectroscopy.gp", gnuplot_spectroscopy(&result, "spectroscopy.csv"))
}

fn rabi(ctx: &Ctx, duration_points: Option<usize>, averages: Option<u32>) -> Result<()> {
    let rb = &ctx.setup.config.rabi;
    if rb.devices.is_empty() || rb.amplitudes.is_empty() {
        return Err(Error::Config("[rabi] needs devices and amplitudes".into()));
    }
    let req = RabiRequest {
        device_ids: rb.devices.clone(),
        amplitudes: rb.amplitudes.clone(),
        durations: linspace(rb.duration_start, rb.duration_stop, duration_points.unwrap_or(rb.duration_points)),
        averages: averages
            .or(rb.averages)
            .unwrap_or(ctx.setup.config.readout.averages),
    };
    let outcome = run_rabi(&ctx.setup, &req, ctx.seed)?;
    for s in &outcome.scaling {
        match s.fit {
            Some(f) => println!(
                "device {}: {:.6e} Hz per unit amplitude, R^2 = {:.6} over {} fits",
                s.device_id, f.slope, f.r_squared, s.valid_points
            ),
            None => println!("device {}: too few valid fits for a slope", s.device_id),
        }
    }
    match ctx.common.format {
        Format::Csv => {
            let meta = &outcome.sweep.metadata;
            ctx.sweep_csv("rabi.csv", &outcome.sweep, false)?;
            let (cols, rows) = rabi_population_rows(&outcome);
            ctx.table("rabi_population.csv", meta, &cols, &rows)?;
            let (cols, rows) = rabi_fit_rows(&outcome);
            ctx.table("rabi_fits.csv", meta, &cols, &rows)?;
            let (cols, rows) = rabi_scaling_rows(&outcome);
            ctx.table("rabi_scaling.csv", meta, &cols, &rows)?;
        }
        Format::Json => ctx.json("rabi.json", &outcome)?,
    }
    ctx.script("rabi.gp", gnuplot_rabi(&outcome, "rabi_population.csv"))
}

#[derive(Serialize)]
struct PlanOutput {
    capacity: ChannelCapacity,
    plan: FrequencyPlan,
    audit: PlanAudit,
    probe_plan: FrequencyPlan,
    probe_audit: PlanAudit,
}

fn plan(ctx: &Ctx) -> Result<()> {
    let p = &ctx.setup.config.plan;
    let query = CapacityQuery {
        bandwidth: p.bandwidth_hz,
        kappa: TAU * p.kappa_hz,
        gamma: TAU * p.gamma_hz,
        dispersive_shift: TAU * p.shift_hz,
        crosstalk_limit: p.crosstalk_limit_db,
    };
    let capacity = max_channels(&query).map_err(|e| match e {
        Error::InvalidParameter(m) => Error::Config(m),
        other => other,
    })?;
    let carson = capacity.carson_spacing;
    let lo = ctx.setup.chain.lo_frequency;
    let generated = generate_plan(
        capacity.count,
        lo - 0.5 * p.bandwidth_hz,
        lo + 0.5 * p.bandwidth_hz,
        SpacingRule::KappaMultiple {
            kappa: query.kappa,
            multiple: capacity.spacing / query.kappa,
        },
    )?;
    let audit = generated.audit(query.kappa, p.crosstalk_limit_db, carson);
    let probe_plan = ctx.setup.plan.clone();
    let probe_audit = probe_plan.audit(query.kappa, p.crosstalk_limit_db, carson);
    println!(
        "{} channels in {:.6e} Hz at {:.6e} Hz spacing (crosstalk needs {:.6e} Hz, Carson {:.6e} Hz)",
        capacity.count,
        p.bandwidth_hz,
        capacity.spacing_hz(),
        capacity.crosstalk_spacing / TAU,
        capacity.carson_spacing / TAU
    );
    println!("probe plan audit: {}", if probe_audit.passes { "pass" } else { "fail" });
    match ctx.common.format {
        Format::Csv => {
            let meta = ctx.meta("plan");
            let mut text = String::from(&fdm_readout::experiments::output::header_block(&meta));
            text.push_str(&format!(
                "# channels: {}\n# spacing_hz: {}\n\n",
                capacity.count,
                capacity.spacing_hz()
            ));
            text.push_str(&render_plan_report(&generated, &audit));
            text.push_str("\n# configured probe plan\n");
            text.push_str(&render_plan_report(&probe_plan, &probe_audit));
            std::fs::write(ctx.path("plan.txt"), text)?;
            println!("wrote {}", ctx.path("plan.txt").display());
        }
        Format::Json => ctx.json(
            "plan.json",
            &PlanOutput {
                capacity,
                plan: generated,
                audit,
                probe_plan,
                probe_audit,
            },
        )?,
    }
    Ok(())
}

fn measurement_rows(rows: &[ToneMeasurement]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|m| {
            vec![
                m.channel_frequency.to_string(),
                m.amplitude.to_string(),
                m.phase.to_string(),
                m.noise_std.to_string(),
            ]
        })
        .collect()
}

fn channelize_cmd(ctx: &Ctx, input: Option<&Path>, channels: &[f64]) -> Result<()> {
    let setup = &ctx.setup;
    let chain = &setup.chain;
    let baseband = if channels.is_empty() {
        chain.baseband_channels(&setup.plan.frequencies())?
    } else {
        channels.to_vec()
    };
    let trace = match input {
        Some(path) => IQTrace::read_from(BufReader::new(File::open(path)?))?,
        None => {
            let rf = chain.probe(&setup.plan.frequencies())?;
            let all: Vec<usize> = (0..setup.chip.len()).collect();
            let fluxes = coil_fluxes(setup, &all, 0.0);
            let z = vec![QubitStateLabel::Ground.sigma_z(); setup.chip.len()];
            let out = chain.propagate(&rf, |f| {
                fdm_readout::device::s21_feedline_mixed(&setup.chip, TAU * f, &z, &fluxes)
                    .unwrap_or_default()
            })?;
            let noise = setup.averaged_noise(setup.config.readout.averages);
            let iq = chain.acquire(&out, noise, child_seed(ctx.seed, 0))?;
            let mut w = ctx.create("readout_trace.iq")?;
            iq.write_to(&mut w)?;
            w.flush()?;
            println!("wrote {}", ctx.path("readout_trace.iq").display());
            iq
        }
    };
    let measured = channelize(&trace, &baseband, chain.window)?;
    for m in &measured {
        println!(
            "{:+.6e} Hz: amplitude {:.6e}, phase {:+.6} rad",
            m.channel_frequency, m.amplitude, m.phase
        );
    }
    match ctx.common.format {
        Format::Csv => ctx.table(
            "channels.csv",
            &ctx.meta("channelize"),
            &["channel_hz", "amplitude", "phase_rad", "noise_std"],
            &measurement_rows(&measured),
        ),
        Format::Json => ctx.json("channels.json", &measured),
    }
}

#[derive(Serialize)]
struct CrosstalkRow {
    toggled_id: u32,
    #[serde(flatten)]
    entry: CrosstalkEntry,
    analytic_db: f64,
}

fn crosstalk(ctx: &Ctx) -> Result<()> {
    let setup = &ctx.setup;
    let mut rows = Vec::new();
    for c in &setup.plan.channels {
        let d = &setup.chip[setup.device_index(c.device_id)?];
        for e in measure_crosstalk(&setup.chip, &setup.plan, c.device_id, &setup.chain)? {
            let analytic = adjacent_crosstalk(TAU * (e.channel_frequency - c.frequency).abs(), d.resonator.total_linewidth_kappa);
            rows.push(CrosstalkRow {
                toggled_id: c.device_id,
                entry: e,
                analytic_db: analytic,
            });
        }
    }
    let worst = rows.iter().map(|r| r.entry.delta_db).fold(f64::NEG_INFINITY, f64::max);
    println!("worst channel crosstalk: {worst:.2} dB");
    match ctx.common.format {
        Format::Csv => {
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.toggled_id.to_string(),
                        r.entry.device_id.to_string(),
                        r.entry.channel_frequency.to_string(),
                        r.entry.delta_db.to_string(),
                        r.analytic_db.to_string(),
                    ]
                })
                .collect();
            ctx.table(
                "crosstalk.csv",
                &ctx.meta("crosstalk"),
                &["toggled_id", "device_id", "channel_hz", "delta_db", "analytic_db"],
                &table,
            )
        }
        Format::Json => ctx.json("crosstalk.json", &rows),
    }
}
