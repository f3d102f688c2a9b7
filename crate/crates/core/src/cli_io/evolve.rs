//! The generational loop: evaluate, log, reproduce.

use crate::cppn::Genome;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::lifecycle::run_lifecycle;
use crate::neat::{init_population, next_generation, Population};
use crate::rng::{derive_seed, STREAM_EVALUATION};

use super::config::RunConfig;
use super::files::GenerationStats;

/// Lifecycle seed of member `index` in `generation`.
pub fn member_seed(run_seed: u64, generation: u64, index: usize) -> u64 {
    derive_seed(run_seed, &[STREAM_EVALUATION, generation, index as u64])
}

/// Mean fitness over the configured environments.
pub fn evaluate_genome(genome: &Genome, cfg: &RunConfig, seed: u64) -> Result<f64> {
    let n = cfg.environment.len();
    let mut total = 0.0;
    for (e, env) in cfg.environment.iter().enumerate() {
        let s = if n == 1 { seed } else { derive_seed(seed, &[e as u64]) };
        total += run_lifecycle(genome, env, &cfg.physics, &cfg.lifecycle, s)?.fitness;
    }
    Ok(total / n as f64)
}

/// Fitness of every member, in member order whatever `exec` is.
pub fn evaluate_population(pop: &Population, cfg: &RunConfig, exec: Execution) -> Result<Vec<f64>> {
    let run_seed = cfg.evolution.seed;
    exec::map(&pop.members, exec, |i, g| evaluate_genome(g, cfg, member_seed(run_seed, pop.generation, i)))
        .into_iter()
        .collect()
}

fn best_index(fitnesses: &[f64]) -> usize {
    let mut best = 0;
    for (i, &f) in fitnesses.iter().enumerate() {
        if f > fitnesses[best] {
            best = i;
        }
    }
    best
}

pub fn generation_stats(pop: &Population, fitnesses: &[f64]) -> GenerationStats {
    let b = best_index(fitnesses);
    let best = &pop.members[b];
    GenerationStats {
        generation: pop.generation,
        best_fitness: fitnesses[b],
        mean_fitness: fitnesses.iter().sum::<f64>() / fitnesses.len() as f64,
        n_species: pop.species.len(),
        best_genome_nodes: best.nodes.len(),
        best_genome_connections: best.enabled_connection_count(),
    }
}

#[derive(Debug, Clone)]
pub struct Champion {
    pub genome: Genome,
    pub fitness: f64,
    pub generation: u64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct EvolutionResult {
    pub rows: Vec<GenerationStats>,
    pub champion: Champion,
    /// The last evaluated population.
    pub population: Population,
}

/// Runs `cfg.evolution.generations` generations. `on_generation` sees each
/// evaluated population before it reproduces.
pub fn run_evolution(
    cfg: &RunConfig,
    exec: Execution,
    mut on_generation: impl FnMut(&GenerationStats, &Population, &[f64]) -> Result<()>,
) -> Result<EvolutionResult> {
    let generations = cfg.evolution.generations;
    if generations == 0 {
        return Err(Error::Config("evolution.generations must be >= 1".into()));
    }
    let mut pop = init_population(&cfg.evolution, cfg.k_hidden())?;
    let mut rows = Vec::with_capacity(generations);
    let mut champion: Option<Champion> = None;
    for g in 0..generations {
        let fitnesses = evaluate_population(&pop, cfg, exec)?;
        let stats = generation_stats(&pop, &fitnesses);
        tracing::info!(
            generation = stats.generation,
            best = stats.best_fitness,
            mean = stats.mean_fitness,
            species = stats.n_species,
            "generation evaluated"
        );
        let b = best_index(&fitnesses);
        if champion.as_ref().is_none_or(|c| fitnesses[b] > c.fitness) {
            champion = Some(Champion {
                genome: pop.members[b].clone(),
                fitness: fitnesses[b],
                generation: pop.generation,
                seed: member_seed(cfg.evolution.seed, pop.generation, b),
            });
        }
        on_generation(&stats, &pop, &fitnesses)?;
        rows.push(stats);
        if g + 1 < generations {
            pop = next_generation(&pop, &fitnesses, &cfg.evolution)?;
        }
    }
    Ok(EvolutionResult { rows, champion: champion.expect("at least one generation"), population: pop })
}
