//! Command-line front end: run simulations, compare dumps, drive the
//! scaling benchmarks, and analyze probe series.
//!
//! Exit codes: 0 success, 1 usage/configuration error, 2 runtime error,
//! 3 unrecoverable failure at the minimum time step.

use clap::{Args, Parser, Subcommand};
use mppic::bench::{self, BenchCase, WeakFamily};
use mppic::probe::{spectrum, ProbeSeries};
use mppic::scheduler::{CouplingMode, RunOptions, Simulation, StepError};
use mppic::verify;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mppic", version, about = "MP-PIC fluidized-bed solver with equation-level task parallelism")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation from a config file.
    Run(RunArgs),
    /// Compare two state dumps and report matching-digits histograms.
    VerifyCompare(VerifyArgs),
    /// Strong/weak scaling benchmarks.
    Bench(BenchArgs),
    /// Frequency spectrum of a probe series CSV (columns: time,value).
    Spectrum(SpectrumArgs),
    /// Extract a probe series from a set of dumps.
    ProbeExtract(ProbeExtractArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file path.
    #[arg(long)]
    config: PathBuf,
    /// Override the [parallel] devices assignment, e.g. "234[1234]".
    #[arg(long)]
    devices: Option<String>,
    /// Override the coupling mode (explicit|implicit).
    #[arg(long)]
    coupling: Option<String>,
    /// Override the end time (s).
    #[arg(long)]
    until: Option<f64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    dump_a: PathBuf,
    dump_b: PathBuf,
    /// Histogram CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// strong | weak
    mode: String,
    /// bfs | bed
    #[arg(long, default_value = "bfs")]
    case: String,
    /// CSV output path.
    #[arg(long)]
    csv: PathBuf,
    /// Measured steps per point (one warmup step is always added).
    #[arg(long, default_value_t = 3)]
    steps: usize,
    /// Strong scaling: comma-separated worker counts.
    #[arg(long, default_value = "1,2,3,4")]
    workers: String,
    /// Weak scaling: comma-separated size scales.
    #[arg(long, default_value = "1,2,3")]
    scales: String,
    /// Weak scaling: family (cells | constant_parcels | variable_parcels).
    #[arg(long, default_value = "cells")]
    family: String,
    /// Weak scaling: fixed device assignment.
    #[arg(long, default_value = "234[1]")]
    devices: String,
    /// Coupling mode for the bed case.
    #[arg(long, default_value = "explicit")]
    coupling: String,
}

#[derive(Args)]
struct SpectrumArgs {
    /// CSV with a time column and a value column.
    series: PathBuf,
    /// Spectrum CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ProbeExtractArgs {
    /// Probe location "x,y,z" (m).
    #[arg(long)]
    point: String,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Dump files, ordered by time.
    dumps: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Help/version requests are success; anything else is usage.
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let code = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::VerifyCompare(args) => cmd_verify_compare(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Spectrum(args) => cmd_spectrum(args),
        Command::ProbeExtract(args) => cmd_probe_extract(args),
    };
    match code {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::DtMinFailure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

enum CliError {
    Usage(String),
    Runtime(String),
    DtMinFailure(String),
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let mut config =
        mppic::parse_config(&args.config).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(devices) = args.devices {
        config.parallel.devices = devices;
    }
    if let Some(coupling) = args.coupling {
        config.parallel.coupling = coupling
            .parse::<CouplingMode>()
            .map_err(CliError::Usage)?;
    }
    if let Some(until) = args.until {
        config.time.t_end = until;
    }
    if let Some(out) = args.out {
        config.output.dir = out;
    }
    mppic::parse_assignment(&config.parallel.devices, config.parallel.workers)
        .map_err(|e| CliError::Usage(e.to_string()))?;

    let out_dir = config.output.dir.clone();
    std::fs::create_dir_all(&out_dir).map_err(runtime)?;
    std::fs::write(out_dir.join("effective_config.cfg"), config.echo()).map_err(runtime)?;

    let mut sim = config.to_simulation().map_err(|e| CliError::Usage(e.to_string()))?;
    let opts = RunOptions {
        t_end: config.time.t_end,
        mean_discard: config.time.mean_discard,
        probe_points: config.output.probes.clone(),
        probe_interval: config.output.probe_interval,
        probe_quantity: config.output.probe_quantity,
        dump_every: config.output.dump_every,
        dump_dir: Some(out_dir.clone()),
    };
    let outputs = sim.run(&opts).map_err(|e| step_error_to_cli(&sim, e))?;

    // Residual log.
    let mut log = String::from("step,t,dt,outer_iters,converged,rejected,res_continuity,res_u,res_v,res_w\n");
    for s in &outputs.step_logs {
        log.push_str(&format!(
            "{},{:.9e},{:.9e},{},{},{},{:.6e},{:.6e},{:.6e},{:.6e}\n",
            s.step,
            s.t,
            s.dt,
            s.outer_iters,
            s.converged,
            s.rejected_attempts,
            s.final_residuals.continuity,
            s.final_residuals.u,
            s.final_residuals.v,
            s.final_residuals.w
        ));
    }
    std::fs::write(out_dir.join("residuals.csv"), log).map_err(runtime)?;

    // Probe series.
    for (i, sampler) in outputs.probes.iter().enumerate() {
        let mut csv = format!("time,{}\n", sampler.quantity);
        for (t, v) in sampler.series.times.iter().zip(sampler.series.values.iter()) {
            csv.push_str(&format!("{t:.9e},{v:.17e}\n"));
        }
        std::fs::write(out_dir.join(format!("probe_{i}.csv")), csv).map_err(runtime)?;
    }

    // Mean-field profile along the flow axis (cross-section averages and
    // center-line values), when any averaging window was accumulated.
    if !outputs.mean.is_empty() {
        let axis = profile_axis(&sim);
        let csv = profile_csv(&sim, &outputs.mean, axis);
        std::fs::write(out_dir.join("mean_profile.csv"), csv).map_err(runtime)?;
    }

    verify::dump_state(&sim, &out_dir.join("final.mpxd")).map_err(runtime)?;

    println!(
        "run complete: t = {:.6} s, {} steps, {} SIMPLE iterations, time/iteration = {:.3e} s",
        sim.time,
        sim.timing.steps,
        sim.timing.outer_iters,
        sim.timing.time_per_simple_iteration()
    );
    if sim.warnings.dt_min_accepts > 0 {
        eprintln!(
            "warning: {} step(s) accepted unconverged at dt_min",
            sim.warnings.dt_min_accepts
        );
    }
    Ok(())
}

fn step_error_to_cli(sim: &Simulation, e: StepError) -> CliError {
    if sim.timectl.dt <= sim.timectl.dt_min {
        CliError::DtMinFailure(format!("{e} (dt already at its floor)"))
    } else {
        CliError::Runtime(e.to_string())
    }
}

/// Flow axis for profiles: the axis carrying an inlet face, else z.
fn profile_axis(sim: &Simulation) -> usize {
    use mppic::grid::CellFlag;
    let grid = &sim.grid;
    let flags = &sim.flags;
    let probes = [
        (0usize, grid.idx(0, grid.ny / 2 + 1, grid.nz / 2 + 1)),
        (1, grid.idx(grid.nx / 2 + 1, 0, grid.nz / 2 + 1)),
        (2, grid.idx(grid.nx / 2 + 1, grid.ny / 2 + 1, 0)),
        (0, grid.idx(grid.nx + 1, grid.ny / 2 + 1, grid.nz / 2 + 1)),
        (1, grid.idx(grid.nx / 2 + 1, grid.ny + 1, grid.nz / 2 + 1)),
        (2, grid.idx(grid.nx / 2 + 1, grid.ny / 2 + 1, grid.nz + 1)),
    ];
    for (axis, idx) in probes {
        if flags.flag(idx) == CellFlag::Inlet {
            return axis;
        }
    }
    2
}

fn profile_csv(sim: &Simulation, mean: &mppic::scheduler::MeanFields, axis: usize) -> String {
    let grid = &sim.grid;
    let n = [grid.nx, grid.ny, grid.nz];
    let d = [grid.dx, grid.dy, grid.dz];
    let mut csv = String::from(
        "pos,mean_eps_g_xsec,mean_p_xsec,mean_speed_xsec,mean_eps_g_center,mean_p_center\n",
    );
    let (t1, t2) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    for layer in 1..=n[axis] {
        let mut count = 0usize;
        let mut eps_sum = 0.0;
        let mut p_sum = 0.0;
        let mut speed_sum = 0.0;
        for c2 in 1..=n[t2] {
            for c1 in 1..=n[t1] {
                let mut ijk = [0usize; 3];
                ijk[axis] = layer;
                ijk[t1] = c1;
                ijk[t2] = c2;
                let idx = grid.idx(ijk[0], ijk[1], ijk[2]);
                if !sim.flags.is_fluid(idx) {
                    continue;
                }
                eps_sum += mean.mean_eps_g(idx);
                p_sum += mean.mean_p(idx);
                speed_sum += mean.mean_speed(idx);
                count += 1;
            }
        }
        let mut center = [0usize; 3];
        center[axis] = layer;
        center[t1] = n[t1] / 2 + 1;
        center[t2] = n[t2] / 2 + 1;
        let cidx = grid.idx(center[0], center[1], center[2]);
        let pos = sim.grid.origin[axis] + (layer as f64 - 0.5) * d[axis];
        let k = count.max(1) as f64;
        csv.push_str(&format!(
            "{pos:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}\n",
            eps_sum / k,
            p_sum / k,
            speed_sum / k,
            mean.mean_eps_g(cidx),
            mean.mean_p(cidx),
        ));
    }
    csv
}

fn cmd_verify_compare(args: VerifyArgs) -> Result<(), CliError> {
    let report = verify::compare_dump_files(&args.dump_a, &args.dump_b).map_err(runtime)?;
    for line in report.summary_lines() {
        println!("{line}");
    }
    if let Some(out) = args.out {
        std::fs::write(&out, report.to_csv()).map_err(runtime)?;
        println!("histogram written to {}", out.display());
    }
    Ok(())
}

fn parse_list(s: &str) -> Result<Vec<usize>, CliError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("bad list entry {p:?}")))
        })
        .collect()
}

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    let case = match args.case.as_str() {
        "bfs" => BenchCase::Bfs,
        "bed" => BenchCase::Bed,
        other => return Err(CliError::Usage(format!("unknown case {other:?}"))),
    };
    let coupling = args
        .coupling
        .parse::<CouplingMode>()
        .map_err(CliError::Usage)?;
    match args.mode.as_str() {
        "strong" => {
            let workers = parse_list(&args.workers)?;
            let report = bench::strong_scaling(case, &workers, args.steps, coupling)
                .map_err(runtime)?;
            std::fs::write(&args.csv, report.to_csv()).map_err(runtime)?;
            println!("strong scaling written to {}", args.csv.display());
            for row in &report.rows {
                println!(
                    "  {} workers ({}): {:.3e} s/iteration, speedup {:.2}, equivalence {} digits",
                    row.workers,
                    row.assignment,
                    row.time_per_simple_iter_s,
                    row.speedup_vs_single,
                    row.equivalence_digits
                );
            }
            Ok(())
        }
        "weak" => {
            let scales = parse_list(&args.scales)?;
            let family = match args.family.as_str() {
                "cells" => WeakFamily::Cells,
                "constant_parcels" => WeakFamily::ConstantParcels,
                "variable_parcels" => WeakFamily::VariableParcels,
                other => return Err(CliError::Usage(format!("unknown family {other:?}"))),
            };
            let report = bench::weak_scaling(
                case,
                family,
                &scales,
                args.steps,
                &args.devices,
                coupling,
            )
            .map_err(runtime)?;
            std::fs::write(&args.csv, report.to_csv()).map_err(runtime)?;
            println!("weak scaling written to {}", args.csv.display());
            Ok(())
        }
        other => Err(CliError::Usage(format!("unknown bench mode {other:?}"))),
    }
}

fn read_series_csv(path: &Path) -> Result<ProbeSeries, CliError> {
    let text = std::fs::read_to_string(path).map_err(runtime)?;
    let mut series = ProbeSeries::default();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let (a, b) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""));
        match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
            (Ok(t), Ok(v)) => series.push(t, v),
            _ if i == 0 => continue, // header row
            _ => {
                return Err(CliError::Usage(format!(
                    "{}: line {} is not 'time,value'",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(series)
}

fn cmd_spectrum(args: SpectrumArgs) -> Result<(), CliError> {
    let series = read_series_csv(&args.series)?;
    let spec = spectrum(&series).map_err(runtime)?;
    println!("dominant frequency: {:.6} Hz", spec.dominant_hz);
    if let Some(out) = args.out {
        let mut csv = String::from("freq_hz,magnitude\n");
        for (f, m) in spec.freqs_hz.iter().zip(spec.magnitudes.iter()) {
            csv.push_str(&format!("{f:.9e},{m:.9e}\n"));
        }
        std::fs::write(&out, csv).map_err(runtime)?;
        println!("spectrum written to {}", out.display());
    }
    Ok(())
}

fn cmd_probe_extract(args: ProbeExtractArgs) -> Result<(), CliError> {
    let parts: Vec<&str> = args.point.split(',').collect();
    if parts.len() != 3 {
        return Err(CliError::Usage("point must be 'x,y,z'".into()));
    }
    let mut point = [0.0; 3];
    for (i, p) in parts.iter().enumerate() {
        point[i] = p
            .trim()
            .parse::<f64>()
            .map_err(|_| CliError::Usage(format!("bad coordinate {p:?}")))?;
    }
    if args.dumps.is_empty() {
        return Err(CliError::Usage("no dump files given".into()));
    }
    let mut csv = String::from("time,eps_g\n");
    for path in &args.dumps {
        let dump = verify::load_state(path).map_err(runtime)?;
        let grid = mppic::grid::GridSpec::new(
            [dump.nx as usize, dump.ny as usize, dump.nz as usize],
            [
                dump.spacing[0] * dump.nx as f64,
                dump.spacing[1] * dump.ny as f64,
                dump.spacing[2] * dump.nz as f64,
            ],
            dump.origin,
        )
        .map_err(runtime)?;
        let cell = mppic::grid::cell_of_point(point, &grid).map_err(runtime)?;
        let eps_g = dump.field("eps_g").expect("dump carries eps_g")[cell];
        csv.push_str(&format!("{:.9e},{:.17e}\n", dump.time, eps_g));
    }
    std::fs::write(&args.out, csv).map_err(runtime)?;
    println!("probe series written to {}", args.out.display());
    Ok(())
}
