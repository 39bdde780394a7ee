use std::path::PathBuf;
use std::process::ExitCode;

use bdflow::cli::{self, CliError};
use bdflow::config::RunConfig;
use clap::{Parser, ValueEnum};
use log::debug;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Study {
    /// Successive grid and time-step halvings with observed orders.
    Convergence,
    /// Bitwise comparison of the general solver against the shallow-water presets.
    ShallowEq,
    /// Closed-form effective velocity along characteristics versus the grid value.
    Characteristics,
}

/// Radial compressible Navier-Stokes solver with density-dependent viscosity.
///
/// Exit status: 0 success, 1 I/O failure, 2 invalid configuration,
/// 3 step failure, 4 failed invariant check.
#[derive(Debug, Parser)]
#[command(name = "bdflow", version, about)]
struct Args {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted-key override such as `grid.n=1600`; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run a study instead of a single evolution.
    #[arg(long, value_enum)]
    study: Option<Study>,
}

fn execute(args: &Args) -> Result<bool, CliError> {
    let cfg = RunConfig::load(args.config.as_deref(), &args.overrides)?;
    let out = args.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    match args.study {
        None => {
            let report = cli::run(&cfg, &out)?;
            for c in &report.checks {
                println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            Ok(report.passed())
        }
        Some(Study::Characteristics) => {
            let report = cli::characteristics_study(&cfg, &out)?;
            println!(
                "characteristics: max gap {:.6e} over {} paths",
                report.characteristics.max_gap,
                report.characteristics.paths.len()
            );
            Ok(report.passed())
        }
        Some(Study::Convergence) => {
            let report = cli::convergence_study(&cfg, &out)?;
            let (or, ou) = (report.orders_rho(), report.orders_u());
            for (k, l) in report.levels.iter().enumerate() {
                let ord = |o: &[Option<f64>]| {
                    k.checked_sub(1)
                        .and_then(|j| o[j])
                        .map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
                };
                println!(
                    "level {k}: N = {}, dt = {:e}, order rho {}, order u {}",
                    l.n,
                    l.dt,
                    ord(&or),
                    ord(&ou)
                );
            }
            Ok(true)
        }
        Some(Study::ShallowEq) => {
            let reports = cli::shallow_study(&cfg, &out)?;
            for r in &reports {
                match r.first_mismatch {
                    None => println!("{}: {} records bitwise identical", r.variant.label(), r.records),
                    Some(k) => println!("{}: first differing record {k}", r.variant.label()),
                }
            }
            Ok(reports.iter().all(|r| r.first_mismatch.is_none()))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    debug!("{args:?}");
    match execute(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("bdflow: one or more checks failed");
            ExitCode::from(CliError::Check(String::new()).exit_code() as u8)
        }
        Err(e) => {
            eprintln!("bdflow: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
