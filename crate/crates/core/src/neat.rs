//! NEAT evolution of CPPN genomes: innovation tracking, speciation,
//! crossover, mutation and fitness-shared reproduction.

use std::collections::HashMap;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cppn::{Activation, ConnectionGene, Genome, NodeGene, NodeKind};
use crate::error::{Error, Result};
use crate::rng::{self, Rng, STREAM_INIT, STREAM_REPRODUCTION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub population_size: usize,
    pub generations: usize,
    /// Excess-gene coefficient.
    pub c1: f64,
    /// Disjoint-gene coefficient.
    pub c2: f64,
    /// Mean weight-difference coefficient.
    pub c3: f64,
    pub compatibility_threshold: f64,
    /// Per-gene probability of perturbing a weight (and per-node for biases).
    pub weight_mutation_rate: f64,
    pub weight_perturb_std: f64,
    pub add_node_rate: f64,
    pub add_connection_rate: f64,
    /// Probability of disabling one random enabled connection.
    pub disable_rate: f64,
    /// Probability that an offspring is produced by crossover.
    pub crossover_rate: f64,
    /// Elites copied unchanged per species.
    pub elitism: usize,
    pub survival_fraction: f64,
    pub stagnation_limit: u64,
    pub seed: u64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            population_size: 64,
            generations: 50,
            c1: 1.0,
            c2: 1.0,
            c3: 0.4,
            compatibility_threshold: 3.0,
            weight_mutation_rate: 0.8,
            weight_perturb_std: 0.5,
            add_node_rate: 0.03,
            add_connection_rate: 0.1,
            disable_rate: 0.01,
            crossover_rate: 0.75,
            elitism: 1,
            survival_fraction: 0.3,
            stagnation_limit: 15,
            seed: 0,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("evolution.{m}")));
        if self.population_size < 2 {
            return bad("population_size must be >= 2");
        }
        for (name, r) in [
            ("weight_mutation_rate", self.weight_mutation_rate),
            ("add_node_rate", self.add_node_rate),
            ("add_connection_rate", self.add_connection_rate),
            ("disable_rate", self.disable_rate),
            ("crossover_rate", self.crossover_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("evolution.{name} must lie in [0, 1], got {r}")));
            }
        }
        if !(self.survival_fraction > 0.0 && self.survival_fraction <= 1.0) {
            return bad("survival_fraction must lie in (0, 1]");
        }
        if !(self.weight_perturb_std >= 0.0 && self.weight_perturb_std.is_finite()) {
            return bad("weight_perturb_std must be >= 0");
        }
        for v in [self.c1, self.c2, self.c3, self.compatibility_threshold] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad("compatibility coefficients and threshold must be >= 0");
            }
        }
        Ok(())
    }
}

/// Structural-event bookkeeping. Counters are monotonic for the whole run;
/// the event caches are cleared at every generation boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnovationRegistry {
    pub next_innovation: u64,
    pub next_node_id: u32,
    #[serde(skip)]
    edges: HashMap<(u32, u32), u64>,
    #[serde(skip)]
    splits: HashMap<u64, u32>,
}

impl InnovationRegistry {
    pub fn new(next_innovation: u64, next_node_id: u32) -> Self {
        Self {
            next_innovation,
            next_node_id,
            edges: HashMap::new(),
            splits: HashMap::new(),
        }
    }

    pub fn new_generation(&mut self) {
        self.edges.clear();
        self.splits.clear();
    }

    /// Innovation number of the edge `from -> to` for this generation.
    pub fn edge(&mut self, from: u32, to: u32) -> u64 {
        let next = &mut self.next_innovation;
        *self.edges.entry((from, to)).or_insert_with(|| {
            let i = *next;
            *next += 1;
            i
        })
    }

    /// Node id created by splitting the connection with `innovation`.
    pub fn split(&mut self, innovation: u64) -> u32 {
        let next = &mut self.next_node_id;
        *self.splits.entry(innovation).or_insert_with(|| {
            let i = *next;
            *next += 1;
            i
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Species {
    pub id: u64,
    pub representative: Genome,
    /// Indices into [`Population::members`].
    pub members: Vec<usize>,
    pub best_fitness: f64,
    pub last_improved: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub members: Vec<Genome>,
    pub species: Vec<Species>,
    pub generation: u64,
    pub registry: InnovationRegistry,
    pub next_species_id: u64,
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_activation(rng: &mut Rng) -> Activation {
    Activation::ALL[rng.random_range(0..Activation::ALL.len())]
}

/// Minimal genome: every output fed only by the bias input.
fn minimal_genome(k_hidden: usize, rng: &mut Rng) -> Genome {
    let mut g = Genome::bare(k_hidden, Activation::Identity);
    let bias = g.bias_input();
    for o in 0..g.n_outputs {
        let id = g.output_id(o);
        g.node_mut(id).expect("output node").activation = random_activation(rng);
        g.insert_connection(ConnectionGene {
            innovation: o as u64,
            from: bias,
            to: id,
            weight: normal(rng),
            enabled: true,
        });
    }
    g
}

pub fn init_population(cfg: &EvolutionConfig, k_hidden: usize) -> Result<Population> {
    cfg.validate()?;
    let members: Vec<Genome> = (0..cfg.population_size)
        .map(|i| minimal_genome(k_hidden, &mut rng::stream(cfg.seed, &[STREAM_INIT, i as u64])))
        .collect();
    let (n_in, n_out) = Genome::io_sizes(k_hidden);
    let mut pop = Population {
        members,
        species: Vec::new(),
        generation: 0,
        registry: InnovationRegistry::new(n_out as u64, (n_in + n_out) as u32),
        next_species_id: 0,
    };
    speciate(&mut pop, cfg);
    Ok(pop)
}

pub fn compatibility_distance(a: &Genome, b: &Genome, cfg: &EvolutionConfig) -> f64 {
    let (ca, cb) = (&a.connections, &b.connections);
    let max_a = ca.last().map(|c| c.innovation);
    let max_b = cb.last().map(|c| c.innovation);
    let cutoff = match (max_a, max_b) {
        (Some(x), Some(y)) => x.min(y),
        _ => 0,
    };
    let (mut i, mut j) = (0, 0);
    let (mut excess, mut disjoint, mut matching) = (0usize, 0usize, 0usize);
    let mut weight_diff = 0.0;
    let unmatched = |innovation: u64, excess: &mut usize, disjoint: &mut usize| {
        if max_a.is_none() || max_b.is_none() || innovation > cutoff {
            *excess += 1;
        } else {
            *disjoint += 1;
        }
    };
    while i < ca.len() || j < cb.len() {
        match (ca.get(i), cb.get(j)) {
            (Some(x), Some(y)) if x.innovation == y.innovation => {
                matching += 1;
                weight_diff += (x.weight - y.weight).abs();
                i += 1;
                j += 1;
            }
            (Some(x), Some(y)) if x.innovation < y.innovation => {
                unmatched(x.innovation, &mut excess, &mut disjoint);
                i += 1;
            }
            (Some(_), Some(y)) => {
                unmatched(y.innovation, &mut excess, &mut disjoint);
                j += 1;
            }
            (Some(x), None) => {
                unmatched(x.innovation, &mut excess, &mut disjoint);
                i += 1;
            }
            (None, Some(y)) => {
                unmatched(y.innovation, &mut excess, &mut disjoint);
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    let ng = ca.len().max(cb.len()).max(1) as f64;
    let mean_w = if matching > 0 {
        weight_diff / matching as f64
    } else {
        0.0
    };
    cfg.c1 * excess as f64 / ng + cfg.c2 * disjoint as f64 / ng + cfg.c3 * mean_w
}

/// Assigns every member to the first compatible species, comparing against
/// the representatives carried over from the previous generation.
pub fn speciate(pop: &mut Population, cfg: &EvolutionConfig) {
    let mut species: Vec<Species> = std::mem::take(&mut pop.species)
        .into_iter()
        .map(|s| Species {
            members: Vec::new(),
            ..s
        })
        .collect();
    for (idx, genome) in pop.members.iter().enumerate() {
        let home = species.iter().position(|s| {
            compatibility_distance(genome, &s.representative, cfg) < cfg.compatibility_threshold
        });
        match home {
            Some(s) => species[s].members.push(idx),
            None => {
                species.push(Species {
                    id: pop.next_species_id,
                    representative: genome.clone(),
                    members: vec![idx],
                    best_fitness: f64::NEG_INFINITY,
                    last_improved: pop.generation,
                });
                pop.next_species_id += 1;
            }
        }
    }
    species.retain(|s| !s.members.is_empty());
    for s in &mut species {
        s.representative = pop.members[s.members[0]].clone();
    }
    pop.species = species;
}

/// Child of two parents; structure follows `fitter`.
pub fn crossover(fitter: &Genome, other: &Genome, rng: &mut Rng) -> Genome {
    let mut child = fitter.clone();
    for node in &mut child.nodes {
        if node.kind == NodeKind::Input {
            continue;
        }
        if let Some(o) = other.node(node.id) {
            if rng.random_bool(0.5) {
                node.bias = o.bias;
                node.activation = o.activation;
            }
        }
    }
    for conn in &mut child.connections {
        let partner = other.connection(conn.innovation);
        let mut disabled = !conn.enabled;
        if let Some(p) = partner {
            disabled |= !p.enabled;
            if rng.random_bool(0.5) {
                conn.weight = p.weight;
            }
        }
        conn.enabled = if disabled { !rng.random_bool(0.75) } else { true };
    }
    debug_assert!(child.validate().is_ok(), "crossover broke genome invariants");
    child
}

fn try_add_connection(g: &mut Genome, registry: &mut InnovationRegistry, rng: &mut Rng) {
    let sources: Vec<u32> = g
        .nodes
        .iter()
        .filter(|n| n.kind != NodeKind::Output)
        .map(|n| n.id)
        .collect();
    let targets: Vec<u32> = g
        .nodes
        .iter()
        .filter(|n| n.kind != NodeKind::Input)
        .map(|n| n.id)
        .collect();
    for _ in 0..20 {
        let from = sources[rng.random_range(0..sources.len())];
        let to = targets[rng.random_range(0..targets.len())];
        if from == to
            || g.connections.iter().any(|c| c.from == from && c.to == to)
            || g.creates_cycle(from, to)
        {
            continue;
        }
        let innovation = registry.edge(from, to);
        if g.connection(innovation).is_some() {
            continue;
        }
        let weight = normal(rng);
        g.insert_connection(ConnectionGene {
            innovation,
            from,
            to,
            weight,
            enabled: true,
        });
        return;
    }
}

fn try_add_node(g: &mut Genome, registry: &mut InnovationRegistry, rng: &mut Rng) {
    let enabled: Vec<usize> = (0..g.connections.len())
        .filter(|&i| g.connections[i].enabled)
        .collect();
    if enabled.is_empty() {
        return;
    }
    let pick = enabled[rng.random_range(0..enabled.len())];
    let (innovation, from, to, weight) = {
        let c = &g.connections[pick];
        (c.innovation, c.from, c.to, c.weight)
    };
    let node = registry.split(innovation);
    if g.has_node(node) {
        return;
    }
    let first = registry.edge(from, node);
    let second = registry.edge(node, to);
    if g.connection(first).is_some() || g.connection(second).is_some() {
        return;
    }
    let activation = random_activation(rng);
    g.connections[pick].enabled = false;
    g.insert_node(NodeGene {
        id: node,
        kind: NodeKind::Hidden,
        activation,
        bias: 0.0,
    });
    g.insert_connection(ConnectionGene {
        innovation: first,
        from,
        to: node,
        weight: 1.0,
        enabled: true,
    });
    g.insert_connection(ConnectionGene {
        innovation: second,
        from: node,
        to,
        weight,
        enabled: true,
    });
}

pub fn mutate(mut g: Genome, cfg: &EvolutionConfig, registry: &mut InnovationRegistry, rng: &mut Rng) -> Genome {
    if cfg.weight_mutation_rate > 0.0 {
        for c in &mut g.connections {
            if rng.random_bool(cfg.weight_mutation_rate) {
                c.weight += cfg.weight_perturb_std * normal(rng);
            }
        }
        for n in g.nodes.iter_mut().filter(|n| n.kind != NodeKind::Input) {
            if rng.random_bool(cfg.weight_mutation_rate) {
                n.bias += cfg.weight_perturb_std * normal(rng);
            }
        }
    }
    if cfg.add_connection_rate > 0.0 && rng.random_bool(cfg.add_connection_rate) {
        try_add_connection(&mut g, registry, rng);
    }
    if cfg.add_node_rate > 0.0 && rng.random_bool(cfg.add_node_rate) {
        try_add_node(&mut g, registry, rng);
    }
    if cfg.disable_rate > 0.0 && rng.random_bool(cfg.disable_rate) {
        let enabled: Vec<usize> = (0..g.connections.len())
            .filter(|&i| g.connections[i].enabled)
            .collect();
        if !enabled.is_empty() {
            let i = enabled[rng.random_range(0..enabled.len())];
            g.connections[i].enabled = false;
        }
    }
    debug_assert!(g.validate().is_ok(), "mutation broke genome invariants");
    g
}

/// Splits `total` into integer parts proportional to `weights` (largest
/// remainder; ties go to the earlier entry).
pub fn apportion(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() {
        return Vec::new();
    }
    if !(sum > 0.0) {
        let mut q = vec![0; weights.len()];
        q[0] = total;
        return q;
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = quota.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        quota[i] += 1;
    }
    quota
}

/// Offspring quotas per species from explicitly shared fitness.
///
/// Fitness is shifted so the population minimum is zero, then divided by
/// species size; each species' quota is proportional to its summed shared
/// fitness. When every shifted fitness is zero, quotas follow species sizes.
pub fn offspring_quotas(species: &[Species], fitnesses: &[f64], total: usize) -> Vec<usize> {
    let f_min = species
        .iter()
        .flat_map(|s| s.members.iter().map(|&m| fitnesses[m]))
        .fold(f64::INFINITY, f64::min);
    let shared: Vec<f64> = species
        .iter()
        .map(|s| {
            let n = s.members.len() as f64;
            s.members.iter().map(|&m| (fitnesses[m] - f_min) / n).sum()
        })
        .collect();
    if shared.iter().sum::<f64>() > 0.0 {
        apportion(&shared, total)
    } else {
        let sizes: Vec<f64> = species.iter().map(|s| s.members.len() as f64).collect();
        apportion(&sizes, total)
    }
}

/// Produces the next, already speciated, generation.
pub fn next_generation(pop: &Population, fitnesses: &[f64], cfg: &EvolutionConfig) -> Result<Population> {
    cfg.validate()?;
    if fitnesses.len() != pop.members.len() {
        return Err(Error::Config(format!(
            "expected {} fitness values, got {}",
            pop.members.len(),
            fitnesses.len()
        )));
    }
    if let Some((index, &value)) = fitnesses.iter().enumerate().find(|(_, f)| !f.is_finite()) {
        return Err(Error::NonFiniteFitness { index, value });
    }
    let generation = pop.generation;

    let mut species = pop.species.clone();
    for s in &mut species {
        let best = s.members.iter().map(|&m| fitnesses[m]).fold(f64::NEG_INFINITY, f64::max);
        if best > s.best_fitness {
            s.best_fitness = best;
            s.last_improved = generation;
        }
    }
    let alive: Vec<bool> = species
        .iter()
        .map(|s| generation.saturating_sub(s.last_improved) < cfg.stagnation_limit)
        .collect();
    if alive.iter().any(|&a| a) {
        let mut keep = alive.into_iter();
        species.retain(|_| keep.next().unwrap_or(false));
    } else {
        let best = species
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.best_fitness.total_cmp(&b.1.best_fitness).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        species = vec![species.swap_remove(best)];
    }

    let quotas = offspring_quotas(&species, fitnesses, cfg.population_size);
    let mut registry = pop.registry.clone();
    registry.new_generation();
    let mut members = Vec::with_capacity(cfg.population_size);
    let mut offspring = 0u64;
    for (s, &quota) in species.iter().zip(&quotas) {
        if quota == 0 {
            continue;
        }
        let mut ranked = s.members.clone();
        ranked.sort_by(|&a, &b| fitnesses[b].total_cmp(&fitnesses[a]).then(a.cmp(&b)));
        let elites = cfg.elitism.min(quota).min(ranked.len());
        members.extend(ranked[..elites].iter().map(|&m| pop.members[m].clone()));
        let pool_len = ((cfg.survival_fraction * ranked.len() as f64).ceil() as usize).clamp(1, ranked.len());
        let pool = &ranked[..pool_len];
        for _ in elites..quota {
            let mut rng = rng::stream(cfg.seed, &[STREAM_REPRODUCTION, generation, offspring]);
            offspring += 1;
            let a = pool[rng.random_range(0..pool.len())];
            let child = if pool.len() > 1 && rng.random_bool(cfg.crossover_rate) {
                let b = pool[rng.random_range(0..pool.len())];
                let (fitter, other) = if fitnesses[b] > fitnesses[a] { (b, a) } else { (a, b) };
                crossover(&pop.members[fitter], &pop.members[other], &mut rng)
            } else {
                pop.members[a].clone()
            };
            members.push(mutate(child, cfg, &mut registry, &mut rng));
        }
    }
    debug_assert_eq!(members.len(), cfg.population_size);

    let mut next = Population {
        members,
        species,
        generation: generation + 1,
        registry,
        next_species_id: pop.next_species_id,
    };
    speciate(&mut next, cfg);
    Ok(next)
}
