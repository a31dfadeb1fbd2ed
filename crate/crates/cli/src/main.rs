use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use oss_cli::{
    check_outcome, cmd_check, cmd_list, cmd_run, format_check, format_run, run_json, run_outcome, Outcome, RunArgs,
};

#[derive(Parser)]
#[command(
    name = "oss",
    version,
    about = "Optimal steady-state controller checks and simulations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Robustness, solvability and spectrum checks without simulation.
    Check {
        /// Scenario file or bundled scenario name.
        path: String,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Simulate every run of a scenario and score its expectations.
    Run {
        path: String,
        /// Directory for CSV traces.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        h: Option<f64>,
        #[arg(long = "t-end")]
        t_end: Option<f64>,
        /// Also simulate every δ sample, in parallel.
        #[arg(long)]
        sweep: bool,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Names of the bundled scenarios.
    List,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::List => {
            for name in cmd_list() {
                println!("{name}");
            }
            Outcome::Pass
        }
        Command::Check { path, variant, json } => match cmd_check(&path, variant.as_deref()) {
            Ok(r) => {
                if json {
                    println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"));
                } else {
                    print!("{}", format_check(&r));
                }
                check_outcome(&r)
            }
            Err(e) => {
                eprintln!("error: {e}");
                Outcome::InputError
            }
        },
        Command::Run {
            path,
            out,
            h,
            t_end,
            sweep,
            variant,
            json,
        } => {
            let args = RunArgs {
                out,
                h,
                t_end,
                sweep,
                variant,
            };
            match cmd_run(&path, &args) {
                Ok(o) => {
                    if json {
                        println!(
                            "{}",
                            serde_json::to_string_pretty(&run_json(&o)).expect("report serializes")
                        );
                    } else {
                        print!("{}", format_run(&o));
                    }
                    run_outcome(&o.report)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    Outcome::InputError
                }
            }
        }
    };
    ExitCode::from(outcome.code())
}
