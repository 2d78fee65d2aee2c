use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mfnet_cli::presets::preset;
use mfnet_cli::{exit_code, run_to_dir};
use mfnet_core::capacity::{iesh_g_capacity, iesh_s_capacity, CapacityOptions};
use mfnet_core::mfg::{pdhg_solve, MfgConfig};
use mfnet_core::reduction::reduce;
use mfnet_core::sim::simulate_massive;
use mfnet_core::wtm::{feasibility_check, mapel_solve};
use mfnet_core::{Error, MeanFieldWtm, NetworkConfig, Result};

#[derive(Parser)]
#[command(name = "mfnet", version, about = "Mean-field throughput analysis and power control experiments")]
struct Cli {
    /// Base RNG seed.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Monte Carlo trials (0 keeps the command's default).
    #[arg(long, global = true, default_value_t = 0)]
    trials: usize,
    /// Output directory (or file for single-result commands).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Larger sweeps, grids and trial counts.
    #[arg(long, global = true)]
    full: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a figure preset and write `<out>/<preset>.csv`.
    Run {
        preset: String,
        /// Override a base field, `field=value` (repeatable).
        #[arg(long = "set", value_name = "FIELD=VALUE")]
        set: Vec<String>,
        /// Replace the sweep values, comma separated; empty for one point.
        #[arg(long, value_name = "V1,V2,..")]
        sweep: Option<String>,
    },
    /// Solve a weighted throughput problem given as JSON.
    SolveWtm {
        path: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        delta: f64,
    },
    /// Solve a delay-constrained MFG problem given as JSON.
    Mfg { path: PathBuf },
    /// Transport capacity of a network config.
    Capacity {
        #[arg(value_enum)]
        mode: Mode,
        path: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        r_lo: f64,
        #[arg(long, default_value_t = 10.0)]
        r_hi: f64,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
    /// Monte Carlo check of the mean-field rate under the MAPEL policy.
    Simulate { path: PathBuf },
    /// List every invariant violation in a config file.
    Validate { path: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    IeshS,
    IeshG,
}

fn read(path: &Path) -> Result<String> {
    Ok(std::fs::read_to_string(path)?)
}

/// Write JSON to `--out` when given, else to stdout.
fn emit(out: &Option<PathBuf>, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => {
            let mut so = std::io::stdout().lock();
            writeln!(so, "{text}")?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<u8> {
    match cli.cmd {
        Cmd::Run { preset: name, set, sweep } => {
            let mut spec = preset(&name, cli.seed, cli.trials, cli.full)?;
            for kv in &set {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("expected field=value, got `{kv}`")))?;
                spec.set(k.trim(), v.trim())?;
            }
            if let Some(list) = sweep {
                spec.sweep.values = list
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Config(format!("sweep value `{s}`: {e}"))))
                    .collect::<Result<_>>()?;
            }
            let dir = cli.out.unwrap_or_else(|| PathBuf::from("results"));
            let (path, table) = run_to_dir(&spec, &dir)?;
            eprintln!("wrote {} ({} rows)", path.display(), table.rows.len());
            Ok(if table.flagged { 1 } else { 0 })
        }
        Cmd::SolveWtm { path, delta } => {
            let w = MeanFieldWtm::from_json_str(&read(&path)?)?;
            let feas = feasibility_check(&w)?;
            if !feas.feasible {
                emit(&cli.out, &feas)?;
                return Ok(1);
            }
            emit(&cli.out, &mapel_solve(&w, delta)?)?;
            Ok(0)
        }
        Cmd::Mfg { path } => {
            let cfg = MfgConfig::from_json_str(&read(&path)?)?;
            let sol = pdhg_solve(&cfg)?;
            let summary = serde_json::json!({
                "total_power": sol.total_power,
                "cleared_mass": sol.cleared_mass,
                "pde_residual": sol.pde_residual,
                "iterations": sol.iterations,
                "converged": sol.converged,
                "power_profile": sol.power_profile,
            });
            match &cli.out {
                Some(dir) => {
                    std::fs::create_dir_all(dir)?;
                    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
                    sol.grid.write_field_csv(std::fs::File::create(dir.join("rho.csv"))?, &sol.grid.rho)?;
                    sol.grid.write_field_csv(std::fs::File::create(dir.join("power.csv"))?, &sol.grid.p)?;
                }
                None => emit(&None, &summary)?,
            }
            Ok(if sol.converged { 0 } else { 1 })
        }
        Cmd::Capacity { mode, path, r_lo, r_hi, bins } => {
            let cfg = NetworkConfig::from_path(&path)?;
            let opts = CapacityOptions::new(r_lo, r_hi, bins);
            let res = match mode {
                Mode::IeshS => iesh_s_capacity(&cfg, &opts)?,
                Mode::IeshG => iesh_g_capacity(&cfg, &opts)?,
            };
            match &cli.out {
                Some(dir) => {
                    std::fs::create_dir_all(dir)?;
                    std::fs::write(dir.join("capacity.json"), serde_json::to_string_pretty(&res)? + "\n")?;
                    res.write_trace_csv(std::fs::File::create(dir.join("trace.csv"))?)?;
                }
                None => emit(&None, &res)?,
            }
            Ok(if res.feasible && res.non_unimodal == 0 { 0 } else { 1 })
        }
        Cmd::Simulate { path } => {
            let cfg = NetworkConfig::from_path(&path)?;
            cfg.validate()?;
            let red = reduce(&cfg)?;
            let sol = mapel_solve(&red.wtm, 0.01)?;
            let trials = if cli.trials > 0 { cli.trials } else if cli.full { 10_000 } else { 2_000 };
            let rep = simulate_massive(&cfg, &red, &sol.p, trials, cli.seed)?;
            let out = serde_json::json!({
                "predicted_rate": red.wtm.weighted_rate(&sol.p),
                "policy": sol.p,
                "report": rep,
            });
            emit(&cli.out, &out)?;
            Ok(0)
        }
        Cmd::Validate { path } => {
            let text = read(&path)?;
            let value: serde_json::Value = serde_json::from_str(&text)?;
            if value.get("arrival_pmf").is_some() {
                return match MfgConfig::from_json_str(&text) {
                    Ok(_) => Ok(0),
                    Err(e) => {
                        println!("{e}");
                        Ok(2)
                    }
                };
            }
            let cfg = NetworkConfig::from_json_str(&text)?;
            let v = cfg.violations();
            for x in &v {
                println!("{x}");
            }
            Ok(if v.is_empty() { 0 } else { 2 })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
