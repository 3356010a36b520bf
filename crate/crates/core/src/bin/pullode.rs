use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use pullode::experiment::{run_file, RunOptions, VERSION};

#[derive(Parser)]
#[command(name = "pullode", version = VERSION, about = "Trajectory distributions for ODEs with GP vector fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML or JSON config.
    Run {
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Monte Carlo with 5000 fields x 150 initial values.
        #[arg(long)]
        paper_scale: bool,
        /// Also write every sampled trajectory (`raw_h<h>.csv`).
        #[arg(long)]
        dump_raw: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            seed,
            out_dir,
            paper_scale,
            dump_raw,
        } => {
            let opts = RunOptions {
                seed,
                out_dir,
                paper_scale,
                dump_raw,
            };
            let report = run_file(&config, &opts).with_context(|| format!("running {}", config.display()))?;
            for r in &report.runs {
                log::info!(
                    "{:<16} h = {:<8} terminal std {:.6}  ({:.3} s)",
                    r.method.tag(),
                    r.h,
                    r.trajectory.last().map(|s| s.std()).unwrap_or(f64::NAN),
                    r.wall_seconds
                );
            }
            println!("wrote {} files to {}", report.files.len(), report.out_dir.display());
            Ok(())
        }
    }
}
