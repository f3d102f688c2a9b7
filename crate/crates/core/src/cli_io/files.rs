//! Atomic file writes, the generation log and checkpoints.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cppn::Genome;
use crate::error::Result;
use crate::neat::Population;

use super::config::RunConfig;

pub const LOG_SCHEMA_VERSION: u32 = 1;
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

pub const LOG_COLUMNS: [&str; 6] = [
    "generation",
    "best_fitness",
    "mean_fitness",
    "n_species",
    "best_genome_nodes",
    "best_genome_connections",
];

/// Writes `bytes` to a temporary file next to `path`, syncs it and renames
/// it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: u64,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub n_species: usize,
    pub best_genome_nodes: usize,
    pub best_genome_connections: usize,
}

/// The generation log as CSV text, headed by a schema comment line.
pub fn log_csv(rows: &[GenerationStats]) -> String {
    let mut s = format!("#schema_version={LOG_SCHEMA_VERSION}\n{}\n", LOG_COLUMNS.join(","));
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.generation, r.best_fitness, r.mean_fitness, r.n_species, r.best_genome_nodes, r.best_genome_connections
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryCounters {
    pub next_innovation: u64,
    pub next_node_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub config: RunConfig,
    pub generation: u64,
    pub registry: RegistryCounters,
    pub genomes: Vec<Genome>,
}

impl Checkpoint {
    pub fn of(config: &RunConfig, pop: &Population) -> Self {
        Self {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            config: config.clone(),
            generation: pop.generation,
            registry: RegistryCounters {
                next_innovation: pop.registry.next_innovation,
                next_node_id: pop.registry.next_node_id,
            },
            genomes: pop.members.clone(),
        }
    }
}
