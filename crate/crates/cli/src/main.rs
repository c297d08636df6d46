use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gtot_cli::scenario::{build_scenario, override_cutoff, EngineEntry};
use gtot_cli::{cmd_check, cmd_run, cmd_sweep, cmd_verify, exit, parse_scenario, CliError, CliResult, OUTPUT_DIR_ENV};
use gtot_core::Identity;

#[derive(Parser)]
#[command(name = "gtot", version, about = "Total equal-time correlators in dissipative multimode systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write CSV plus metadata.
    Run {
        file: PathBuf,
        /// Output CSV; defaults to the scenario's output file (or `<name>.csv`) in the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the exact engine's tolerance.
        #[arg(long)]
        tol: Option<f64>,
        /// Replace every bosonic cutoff.
        #[arg(long)]
        cutoff_override: Option<usize>,
        #[arg(long, env = OUTPUT_DIR_ENV, hide_env_values = true)]
        out_dir: Option<PathBuf>,
    },
    /// Report the symmetry conditions; exits 10 when conservation is not predicted.
    Check {
        file: PathBuf,
        /// Relative tolerance on ‖[H, N]‖.
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// Check a moment equation against finite differences of a simulation.
    Verify {
        file: PathBuf,
        /// One of eq15..eq20, absorber-n, absorber-j.
        #[arg(long)]
        identity: String,
    },
    /// Run one simulation per parameter value.
    Sweep {
        file: PathBuf,
        /// Dotted path of a numeric field, e.g. `terms.2.tau`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Vec<String>,
        #[arg(long, env = OUTPUT_DIR_ENV, hide_env_values = true)]
        out_dir: Option<PathBuf>,
    },
}

fn default_dir(dir: Option<PathBuf>) -> PathBuf {
    dir.unwrap_or_else(|| PathBuf::from("."))
}

fn run(command: Command) -> CliResult<i32> {
    match command {
        Command::Run { file, out, tol, cutoff_override, out_dir } => {
            let mut scenario = parse_scenario(&file)?;
            if tol.is_some() || cutoff_override.is_some() {
                let mut f = scenario.file.clone();
                if let Some(c) = cutoff_override {
                    override_cutoff(&mut f, c);
                }
                if let Some(t) = tol {
                    match &mut f.engine {
                        EngineEntry::Exact { tol, .. } => *tol = t,
                        EngineEntry::PositiveP { .. } => log::warn!("--tol has no effect on the positive-P engine"),
                    }
                }
                scenario = build_scenario(f)?;
            }
            let out = out.unwrap_or_else(|| {
                let name = scenario.file.output.file.clone().unwrap_or_else(|| format!("{}.csv", scenario.name()));
                default_dir(out_dir).join(name)
            });
            let result = cmd_run(&scenario, &out)?;
            for c in &result.conservation {
                println!(
                    "g_tot_{}: max_rel_dev {:e}, conserved {}{}",
                    c.m,
                    c.max_rel_dev,
                    c.conserved,
                    c.floor_breach.map(|t| format!(" (⟨N⟩ below floor from t = {t})")).unwrap_or_default()
                );
            }
            println!("wrote {}", out.display());
            Ok(exit::OK)
        }
        Command::Check { file, tol } => {
            let scenario = parse_scenario(&file)?;
            let (report, text) = cmd_check(&scenario, tol);
            print!("{text}");
            Ok(if report.predicted_conserved { exit::OK } else { exit::NOT_CONSERVED })
        }
        Command::Verify { file, identity } => {
            let scenario = parse_scenario(&file)?;
            let identity: Identity =
                identity.parse().map_err(|e: gtot_core::Error| CliError::Validation(e.to_string()))?;
            let report = cmd_verify(&scenario, identity)?;
            println!(
                "{}: max residual {:e} ({})",
                report.identity,
                report.residual,
                if report.passed { "pass" } else { "fail" }
            );
            Ok(if report.passed { exit::OK } else { exit::IDENTITY_FAILED })
        }
        Command::Sweep { file, param, values, out_dir } => {
            let scenario = parse_scenario(&file)?;
            let values: Vec<f64> = values
                .iter()
                .map(|v| v.trim())
                .filter(|v| !v.is_empty())
                .map(|v| v.parse().map_err(|_| CliError::Validation(format!("`{v}` is not a number"))))
                .collect::<CliResult<_>>()?;
            let dir = default_dir(out_dir);
            let rows = cmd_sweep(&scenario.file, &param, &values, &dir)?;
            for r in &rows {
                println!("{param} = {}: deviation {:?}, final N {:e}", r.value, r.deviation, r.final_n);
            }
            println!("wrote {}", Path::new(&dir).join("summary.csv").display());
            Ok(exit::OK)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
