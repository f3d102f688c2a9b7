use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use slimeworld::cli_io::commands::{self, Failure, Overrides};

#[derive(Parser)]
#[command(name = "slimeworld", version, about = "Evolve and test slime-mold cellular automata")]
struct Cli {
    /// Log filter (overrides RUST_LOG), e.g. `info` or `slimeworld=debug`.
    #[arg(long, global = true)]
    log: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Common {
    /// Run configuration (JSON). Defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run NEAT evolution.
    Evolve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        generations: Option<usize>,
        /// Population size.
        #[arg(long)]
        pop: Option<usize>,
    },
    /// Run the intelligence-test battery on a genome.
    Test {
        genome: PathBuf,
        /// Battery definition (JSON); the standard battery when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Render one lifecycle of a genome to PPM frames.
    Render {
        genome: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        frame_every: Option<usize>,
    },
    /// Verify a trajectory log by hash and re-simulation.
    Replay {
        #[arg(value_name = "LOG")]
        trajectory: PathBuf,
    },
    /// Write the handcrafted baseline genome.
    ExportBaseline {
        #[arg(long, default_value = "baseline_genome.json")]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        k_hidden: usize,
    },
}

/// `--log` wins over `RUST_LOG`, which wins over the config's level.
fn init_logging(flag: Option<&str>, config_level: &str) {
    use tracing_subscriber::EnvFilter;
    let filter = match flag {
        Some(f) => EnvFilter::new(f),
        None => EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(config_level)),
    };
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

fn run(cli: Cli) -> Result<(), Failure> {
    let log = cli.log;
    match cli.command {
        Command::Evolve { common, generations, pop } => {
            let ov = Overrides { seed: common.seed, generations, pop, out: common.out, frame_every: None };
            let cfg = commands::resolve_config(common.config.as_deref(), &ov)?;
            init_logging(log.as_deref(), &cfg.io.log_level);
            let s = commands::cmd_evolve(&cfg)?;
            println!(
                "evolved {} generations, best fitness {}, output in {}",
                s.generations,
                s.best_fitness,
                s.output_dir.display()
            );
        }
        Command::Test { genome, config, seed, out } => {
            init_logging(log.as_deref(), "warn");
            let report = commands::cmd_test(&genome, config.as_deref(), seed, &out)?;
            for t in &report.tests {
                println!("{}: completed={} iq_component={}", t.name, t.completed, t.iq_component);
            }
            println!("IQ {}", report.iq);
        }
        Command::Render { genome, common, frame_every } => {
            let ov = Overrides { seed: common.seed, out: common.out, frame_every, ..Default::default() };
            let cfg = commands::resolve_config(common.config.as_deref(), &ov)?;
            init_logging(log.as_deref(), &cfg.io.log_level);
            let s = commands::cmd_render(&genome, &cfg)?;
            println!("wrote {} frames over {} steps{}", s.frames.len(), s.steps, if s.failed { " (fluid failure)" } else { "" });
        }
        Command::Replay { trajectory: path } => {
            init_logging(log.as_deref(), "warn");
            let s = commands::cmd_replay(&path)?;
            println!(
                "ok: {} steps, mass {} -> {} (peak {}, {} per step)",
                s.steps, s.initial_mass, s.final_mass, s.peak_mass, s.growth_rate
            );
        }
        Command::ExportBaseline { out, k_hidden } => {
            init_logging(log.as_deref(), "warn");
            commands::cmd_export_baseline(&out, k_hidden)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}
