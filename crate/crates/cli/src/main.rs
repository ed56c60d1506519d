use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rothe_core::harness::{self, cmd_run, cmd_study, cmd_validate, load_config, Overrides};

#[derive(Parser)]
#[command(name = "rothe", version, about = "Double-step Rothe scheme for second-order evolution inclusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output directory, overrides `output_dir` from the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Emit SVG plots.
    #[arg(long)]
    plots: bool,
    /// Inclusion residual tolerance, overrides `solver.tol_residual`.
    #[arg(long, value_name = "R")]
    tol: Option<f64>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            plots: self.plots,
            tol: self.tol,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the scheme once at the largest ladder level.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Convergence study over the ladder.
    Study {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Identity sweeps and scalar oracle checks.
    Validate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Instances per sweep.
        #[arg(long, default_value_t = 1000)]
        sweep: usize,
    },
}

fn fail(err: rothe_core::Error) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(harness::exit_code(&err) as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, common } => {
            let out = load_config(&config, &common.overrides()).and_then(|cfg| cmd_run(&cfg));
            match out {
                Ok(out) => {
                    print!("{}", out.report);
                    for f in &out.files {
                        println!("wrote {}", f.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Study { config, common } => {
            let out = load_config(&config, &common.overrides()).and_then(|cfg| cmd_study(&cfg));
            match out {
                Ok(out) => {
                    print!("{}", out.report.write_text());
                    for f in &out.files {
                        println!("wrote {}", f.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Validate { seed, sweep } => {
            let report = cmd_validate(seed, sweep);
            print!("{}", report.render());
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                eprintln!("validation failed");
                ExitCode::from(harness::EXIT_VALIDATION as u8)
            }
        }
    }
}
