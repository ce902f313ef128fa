use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cbdp::cli::{self, Noise, Spacing, SweepSpec};

#[derive(Parser)]
#[command(name = "cbdp", version, about = "Privacy parameters against capacity-bounded adversaries")]
struct Cli {
    /// Solver tolerance.
    #[arg(long, global = true, env = "CBDP_TOL", default_value_t = 1e-9)]
    tol: f64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mech {
    Laplace,
    Gaussian,
}

#[derive(Subcommand)]
enum Command {
    /// Print the table of KL and Rényi parameters as CSV.
    Table1 {
        #[arg(long, default_value_t = 1.0)]
        eps: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        /// Rényi order for the Rényi rows.
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
        /// Coordinates in the multivariate rows.
        #[arg(long, default_value_t = 2)]
        dim: usize,
    },
    /// Write Rényi curves over a grid of orders as CSV.
    Sweep {
        #[arg(long, value_enum)]
        mech: Mech,
        #[arg(long, required_if_eq("mech", "laplace"))]
        eps: Option<f64>,
        #[arg(long, required_if_eq("mech", "gaussian"))]
        sigma: Option<f64>,
        #[arg(long, default_value_t = 1.1)]
        alpha_min: f64,
        #[arg(long, default_value_t = 10.0)]
        alpha_max: f64,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        /// Comma-separated: lin, poly:K, unrestricted.
        #[arg(long, default_value = "lin,unrestricted")]
        classes: String,
        /// Comma-separated: exact, upper, lower.
        #[arg(long, default_value = "exact,upper,lower")]
        curves: String,
        /// Space the orders evenly instead of logarithmically.
        #[arg(long)]
        linear_grid: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a mechanism on each row of a CSV file.
    Mechanism {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Skip the noise (for testing).
        #[arg(long)]
        zero_noise: bool,
    },
    /// Evaluate a privacy-accounting pipeline and print the report as JSON.
    Accountant {
        #[arg(long)]
        pipeline: PathBuf,
    },
    /// Run a verification suite; prints JSON lines and a summary.
    Verify {
        /// table1, dpi, convexity, composition, pinsker, generalization,
        /// crossovers, duals or all.
        #[arg(long)]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        budget: usize,
    },
}

fn run(args: Cli) -> cbdp::Result<ExitCode> {
    let tol = args.tol;
    match args.command {
        Command::Table1 { eps, sigma, alpha, dim } => {
            print!("{}", cli::table1_csv(eps, sigma, alpha, dim)?);
        }
        Command::Sweep {
            mech,
            eps,
            sigma,
            alpha_min,
            alpha_max,
            steps,
            classes,
            curves,
            linear_grid,
            out,
        } => {
            let noise = match mech {
                Mech::Laplace => Noise::Laplace {
                    eps: eps.expect("required by clap"),
                },
                Mech::Gaussian => Noise::Gaussian {
                    sigma: sigma.expect("required by clap"),
                },
            };
            let spec = SweepSpec {
                noise,
                alpha_min,
                alpha_max,
                steps,
                classes: cli::parse_classes(&classes)?,
                curves: cli::parse_curves(&curves)?,
                spacing: if linear_grid { Spacing::Linear } else { Spacing::Log },
            };
            let csv = cli::sweep_csv(&cli::sweep(&spec, tol)?)?;
            std::fs::write(&out, csv).map_err(|e| cbdp::Error::Io(format!("{}: {e}", out.display())))?;
        }
        Command::Mechanism {
            config,
            data,
            seed,
            zero_noise,
        } => {
            print!("{}", cli::mechanism_csv(&config, &data, seed, zero_noise)?);
        }
        Command::Accountant { pipeline } => {
            let report = cli::accountant(&pipeline, tol)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Verify { suite, seed, budget } => {
            let results = cli::verify(&suite, seed, budget, tol)?;
            print!("{}", cli::json_lines(&results)?);
            eprint!("{}", cli::verify_summary(&results));
            if cli::any_failed(&results) {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
