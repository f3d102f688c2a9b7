//! The four subcommands plus baseline export, returning exit codes.

use std::path::{Path, PathBuf};

use crate::cppn::Genome;
use crate::error::Error;
use crate::exec::{self, Execution};
use crate::harness::{baseline_genome, Battery, IqReport};

use super::config::RunConfig;
use super::evolve::run_evolution;
use super::files::{atomic_write, log_csv, write_json, Checkpoint};
use super::render::{render, DisplayMax};
use super::trajectory::{self, Summary, TrajectoryLog};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

/// A failed command: what to print and the process exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn invalid(message: impl Into<String>) -> Self {
        Self { code: EXIT_INVALID, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self { code: EXIT_RUNTIME, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::invalid(e.to_string()),
            _ => Failure::runtime(e.to_string()),
        }
    }
}

type CmdResult<T> = std::result::Result<T, Failure>;

/// Command-line values that replace config fields.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub generations: Option<usize>,
    pub pop: Option<usize>,
    pub out: Option<PathBuf>,
    pub frame_every: Option<usize>,
}

/// Loads `path` (defaults when `None`), applies overrides and validates.
pub fn resolve_config(path: Option<&Path>, ov: &Overrides) -> CmdResult<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p).map_err(|e| Failure::invalid(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = ov.seed {
        cfg.evolution.seed = s;
    }
    if let Some(g) = ov.generations {
        cfg.evolution.generations = g;
    }
    if let Some(p) = ov.pop {
        cfg.evolution.population_size = p;
    }
    if let Some(o) = &ov.out {
        cfg.io.output_dir = o.clone();
    }
    if let Some(f) = ov.frame_every {
        cfg.io.frame_every = f;
    }
    cfg.validate().map_err(|e| Failure::invalid(format!("after command-line overrides: {e}")))?;
    if cfg.evolution.generations == 0 {
        return Err(Failure::invalid("evolution.generations must be >= 1"));
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> CmdResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::runtime(format!("cannot create output directory {}: {e}", dir.display())))
}

fn runtime<T>(r: crate::error::Result<T>) -> CmdResult<T> {
    r.map_err(|e| Failure::runtime(e.to_string()))
}

/// Reads a genome file; unreadable or malformed files are invalid input.
pub fn load_genome(path: &Path) -> CmdResult<Genome> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
    Genome::from_json(&text).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
}

fn check_dimensions(genome: &Genome, k_hidden: usize) -> CmdResult<()> {
    let (n_in, n_out) = Genome::io_sizes(k_hidden);
    if genome.k_hidden != k_hidden || genome.n_inputs != n_in || genome.n_outputs != n_out {
        return Err(Failure::invalid(format!(
            "genome has k_hidden={} ({} inputs, {} outputs) but the run expects k_hidden={k_hidden} ({n_in} inputs, {n_out} outputs)",
            genome.k_hidden, genome.n_inputs, genome.n_outputs
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct EvolveSummary {
    pub generations: usize,
    pub best_fitness: f64,
    pub output_dir: PathBuf,
}

/// Writes `resolved_config.json`, `log.csv` (rewritten after every
/// generation), `checkpoint.json`, `best_genome.json` and
/// `best_trajectory.json` into the output directory.
pub fn cmd_evolve(cfg: &RunConfig) -> CmdResult<EvolveSummary> {
    let out = cfg.io.output_dir.clone();
    create_dir(&out)?;
    runtime(write_json(&out.join("resolved_config.json"), cfg))?;
    let log_path = out.join("log.csv");
    let checkpoint_path = out.join("checkpoint.json");
    let mut rows = Vec::new();
    let every = cfg.io.checkpoint_every as u64;
    let last = cfg.evolution.generations as u64 - 1;
    let threads = exec::threads_from_env();
    let result = exec::with_threads(threads, || {
        run_evolution(cfg, Execution::Parallel, |stats, pop, _| {
            rows.push(stats.clone());
            atomic_write(&log_path, log_csv(&rows).as_bytes())?;
            if (pop.generation + 1) % every == 0 || pop.generation == last {
                write_json(&checkpoint_path, &Checkpoint::of(cfg, pop))?;
            }
            Ok(())
        })
    });
    let result = runtime(result)?;
    let champion = &result.champion;
    runtime(write_json(&out.join("best_genome.json"), &champion.genome))?;
    let log = runtime(trajectory::record(
        &champion.genome,
        &cfg.environment[0],
        &cfg.physics,
        &cfg.lifecycle,
        champion.seed,
    ))?;
    runtime(write_json(&out.join("best_trajectory.json"), &log))?;
    Ok(EvolveSummary { generations: result.rows.len(), best_fitness: champion.fitness, output_dir: out })
}

/// Runs `battery` (the standard one by default) on the genome at `genome`
/// and writes `test_report.json` into `out`.
pub fn cmd_test(genome: &Path, battery: Option<&Path>, seed: u64, out: &Path) -> CmdResult<IqReport> {
    let g = load_genome(genome)?;
    let battery = match battery {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::invalid(format!("{}: {e}", p.display())))?;
            let b: Battery = serde_json::from_str(&text)
                .map_err(|e| Failure::invalid(format!("{}:{}:{}: {e}", p.display(), e.line(), e.column())))?;
            b.lifecycle.validate().map_err(|e| Failure::invalid(e.to_string()))?;
            b.physics.validate().map_err(|e| Failure::invalid(e.to_string()))?;
            b
        }
        None => Battery::standard(),
    };
    check_dimensions(&g, battery.lifecycle.k_hidden)?;
    let mut report = runtime(battery.run(&g, seed))?;
    report.genome_id = Some(genome_id(&g));
    create_dir(out)?;
    runtime(write_json(&out.join("test_report.json"), &report))?;
    Ok(report)
}

/// First 16 hex digits of the SHA-256 of the genome's JSON.
pub fn genome_id(g: &Genome) -> String {
    use sha2::{Digest, Sha256};
    let json = serde_json::to_string(g).expect("genomes serialize");
    hex::encode(Sha256::digest(json.as_bytes()))[..16].to_string()
}

#[derive(Debug, Clone)]
pub struct RenderSummary {
    pub frames: Vec<PathBuf>,
    pub steps: usize,
    pub failed: bool,
}

/// One lifecycle of the genome at `genome` in the first configured
/// environment, with frames and a `trajectory.json` in the output directory.
pub fn cmd_render(genome: &Path, cfg: &RunConfig) -> CmdResult<RenderSummary> {
    let g = load_genome(genome)?;
    check_dimensions(&g, cfg.k_hidden())?;
    let out = cfg.io.output_dir.clone();
    create_dir(&out)?;
    let seed = cfg.evolution.seed;
    let r = runtime(render(
        &g,
        &cfg.environment[0],
        &cfg.physics,
        &cfg.lifecycle,
        seed,
        cfg.io.frame_every,
        &DisplayMax::default(),
        &out,
    ))?;
    runtime(write_json(&out.join("trajectory.json"), &r.log))?;
    Ok(RenderSummary { frames: r.frames, steps: r.log.mass_curve.len() - 1, failed: r.log.failed })
}

/// Checks the stored hash, then re-runs the lifecycle and checks again.
pub fn cmd_replay(log: &Path) -> CmdResult<Summary> {
    let text = std::fs::read_to_string(log).map_err(|e| Failure::invalid(format!("{}: {e}", log.display())))?;
    let t = TrajectoryLog::parse(&text).map_err(|e| Failure::invalid(format!("{}: {e}", log.display())))?;
    if !t.hash_matches() {
        return Err(Failure::runtime(format!("{}: trajectory hash does not match its data", log.display())));
    }
    if !runtime(t.resimulates())? {
        return Err(Failure::runtime(format!("{}: re-simulation produced a different trajectory", log.display())));
    }
    Ok(t.summary())
}

pub fn cmd_export_baseline(out: &Path, k_hidden: usize) -> CmdResult<()> {
    if k_hidden == 0 {
        return Err(Failure::invalid("the baseline needs k_hidden >= 1"));
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    runtime(write_json(out, &baseline_genome(k_hidden)))
}
