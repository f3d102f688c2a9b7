//! Intelligence tests (pathfinding, coordination) and the IQ aggregate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cppn::{Activation, ConnectionGene, Genome, NodeGene, NodeKind, Phenotype};
use crate::environments::{self, EnvKind, EnvSpec, Region};
use crate::error::{Error, Result};
use crate::lifecycle::{LifecycleConfig, PerturbationEvent, Simulation};
use crate::physics::PhysicsParams;
use crate::rng::{self, STREAM_LIFECYCLE};
use crate::substrate::{perception_index, CH_CHEMO, CH_HIDDEN, CH_MASS, CH_NUTRIENT, CH_RESERVOIR};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestScore {
    pub name: String,
    pub completed: bool,
    pub steps_to_completion: Option<usize>,
    /// Mean change of total mass per step.
    pub growth_rate: f64,
    pub metrics: BTreeMap<String, f64>,
    pub iq_component: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Goal-cell mass that counts as arrival.
    pub m_goal: f64,
    /// Redistribution index needed to pass the coordination test.
    pub theta_c: f64,
    /// Food removal time as a fraction of the lifespan.
    pub removal_fraction: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { m_goal: 0.1, theta_c: 0.2, removal_fraction: 1.0 / 3.0 }
    }
}

fn growth_rate(start: f64, end: f64, steps: usize) -> f64 {
    if steps == 0 {
        0.0
    } else {
        (end - start) / steps as f64
    }
}

fn prepare<'p>(
    phenotype: &'p Phenotype,
    env: &EnvSpec,
    physics: &PhysicsParams,
    cfg: &LifecycleConfig,
    seed: u64,
) -> Result<(Simulation<'p>, environments::GeneratedEnv, usize)> {
    let generated = environments::generate(env)?;
    let mut rng = rng::stream(seed, &[STREAM_LIFECYCLE]);
    let lifespan = cfg.draw_lifespan(&mut rng);
    let cfg = LifecycleConfig { perturbations: Vec::new(), ..cfg.clone() };
    let sim = Simulation::new(phenotype, &generated, physics, &cfg, Vec::new(), rng)?;
    Ok((sim, generated, lifespan))
}

/// Seeds the organism at the environment's start and runs until some goal
/// cell holds `m_goal` mass or the lifespan ends.
pub fn pathfinding_test(
    genome: &Genome,
    physics: &PhysicsParams,
    cfg: &LifecycleConfig,
    env: &EnvSpec,
    thresholds: &Thresholds,
    seed: u64,
) -> Result<TestScore> {
    let phenotype = Phenotype::compile(genome)?;
    let (mut sim, generated, lifespan) = prepare(&phenotype, env, physics, cfg, seed)?;
    let goal = generated
        .goal
        .ok_or_else(|| Error::Environment("pathfinding requires a goal region".into()))?;
    let shape = generated.statics.shape;
    let goal_cells: Vec<usize> = goal.indices(shape).collect();
    let reached = |sim: &Simulation| goal_cells.iter().any(|&i| sim.world().mass[i] >= thresholds.m_goal);

    let m0 = sim.world().total_mass();
    let mut completion = None;
    let mut failed = false;
    for t in 0..lifespan {
        match sim.step() {
            Ok(_) => {}
            Err(Error::Instability { .. }) | Err(Error::Cfl(_)) => {
                failed = true;
                break;
            }
            Err(e) => return Err(e),
        }
        if reached(&sim) {
            completion = Some(t + 1);
            break;
        }
    }
    let steps = sim.steps_done();
    let best_goal_mass = goal_cells.iter().map(|&i| sim.world().mass[i]).fold(0.0, f64::max);
    let mut metrics = BTreeMap::new();
    metrics.insert("lifespan".into(), lifespan as f64);
    metrics.insert("goal_mass".into(), best_goal_mass);
    metrics.insert("final_mass".into(), sim.world().total_mass());
    metrics.insert("failed".into(), if failed { 1.0 } else { 0.0 });
    let iq = match completion {
        Some(s) => (1.0 - s as f64 / lifespan as f64).clamp(0.0, 1.0),
        None => 0.0,
    };
    Ok(TestScore {
        name: "pathfinding".into(),
        completed: completion.is_some(),
        steps_to_completion: completion,
        growth_rate: growth_rate(m0, sim.world().total_mass(), steps),
        metrics,
        iq_component: iq,
    })
}

/// Runs a coordination arena, removes food cluster A after a fraction of
/// the lifespan and measures how much mass moved into cluster B's half.
pub fn coordination_test(
    genome: &Genome,
    physics: &PhysicsParams,
    cfg: &LifecycleConfig,
    env: &EnvSpec,
    thresholds: &Thresholds,
    seed: u64,
) -> Result<TestScore> {
    if !matches!(env.kind, EnvKind::CoordinationArena { .. }) {
        return Err(Error::Environment("coordination test requires a coordination arena".into()));
    }
    let phenotype = Phenotype::compile(genome)?;
    let (mut sim, generated, lifespan) = prepare(&phenotype, env, physics, cfg, seed)?;
    let a = generated.food_regions[0];
    let shape = generated.statics.shape;
    let half = shape.width / 2;
    let t_r = ((lifespan as f64 * thresholds.removal_fraction).floor() as usize).min(lifespan);

    let m0 = sim.world().total_mass();
    let mut at_removal = None;
    let mut failed = false;
    for t in 0..lifespan {
        if t == t_r {
            let w = sim.world();
            at_removal = Some((w.total_mass(), w.mass_in_columns(half..shape.width)));
            sim.apply(&PerturbationEvent::RemoveFood { region: a })?;
        }
        match sim.step() {
            Ok(_) => {}
            Err(Error::Instability { .. }) | Err(Error::Cfl(_)) => {
                failed = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let w = sim.world();
    let (m_end, b_end) = (w.total_mass(), w.mass_in_columns(half..shape.width));
    let (m_tr, b_tr) = at_removal.unwrap_or((m_end, b_end));
    let index = if m_tr > 0.0 { (b_end - b_tr) / m_tr } else { 0.0 };
    let recovery = if m_tr > 0.0 { m_end / m_tr } else { 0.0 };
    let mut metrics = BTreeMap::new();
    metrics.insert("redistribution_index".into(), index);
    metrics.insert("recovery_ratio".into(), recovery);
    metrics.insert("lifespan".into(), lifespan as f64);
    metrics.insert("removal_step".into(), t_r as f64);
    metrics.insert("failed".into(), if failed { 1.0 } else { 0.0 });
    let completed = index > thresholds.theta_c;
    Ok(TestScore {
        name: "coordination".into(),
        completed,
        steps_to_completion: completed.then_some(sim.steps_done()),
        growth_rate: growth_rate(m0, m_end, sim.steps_done()),
        metrics,
        iq_component: index.clamp(0.0, 1.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IqReport {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genome_id: Option<String>,
    pub tests: Vec<TestScore>,
    pub iq: f64,
}

/// Unweighted mean of the scores' IQ components.
pub fn iq_report(scores: Vec<TestScore>) -> Result<IqReport> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    let iq = scores.iter().map(|s| s.iq_component).sum::<f64>() / scores.len() as f64;
    Ok(IqReport { schema_version: REPORT_SCHEMA_VERSION, genome_id: None, tests: scores, iq })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Pathfinding,
    Coordination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatteryTest {
    pub kind: TestKind,
    pub env: EnvSpec,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

/// A list of tests sharing physics, lifecycle and thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Battery {
    #[serde(default)]
    pub physics: PhysicsParams,
    #[serde(default = "harness_lifecycle")]
    pub lifecycle: LifecycleConfig,
    #[serde(default)]
    pub thresholds: Thresholds,
    pub tests: Vec<BatteryTest>,
}

impl Battery {
    /// Corridor and detour pathfinding plus the coordination arena.
    pub fn standard() -> Self {
        Self {
            physics: PhysicsParams::default(),
            lifecycle: harness_lifecycle(),
            thresholds: Thresholds::default(),
            tests: vec![
                BatteryTest { kind: TestKind::Pathfinding, env: corridor_fixture(), seeds: vec![0] },
                BatteryTest { kind: TestKind::Pathfinding, env: detour_fixture(), seeds: vec![0] },
                BatteryTest { kind: TestKind::Coordination, env: coordination_fixture(), seeds: vec![0] },
            ],
        }
    }

    /// Runs every test for every seed (seed 0 when none are listed), in
    /// declaration order, offset by `base_seed`.
    pub fn run(&self, genome: &Genome, base_seed: u64) -> Result<IqReport> {
        let mut scores = Vec::new();
        for test in &self.tests {
            let seeds = if test.seeds.is_empty() { vec![0] } else { test.seeds.clone() };
            for s in seeds {
                let seed = base_seed.wrapping_add(s);
                let score = match test.kind {
                    TestKind::Pathfinding => {
                        pathfinding_test(genome, &self.physics, &self.lifecycle, &test.env, &self.thresholds, seed)?
                    }
                    TestKind::Coordination => {
                        let env = test.env.with_seed(test.env.seed.wrapping_add(s));
                        coordination_test(genome, &self.physics, &self.lifecycle, &env, &self.thresholds, seed)?
                    }
                };
                scores.push(score);
            }
        }
        iq_report(scores)
    }
}

/// Lifecycle settings used by the test fixtures.
pub fn harness_lifecycle() -> LifecycleConfig {
    LifecycleConfig { t_min: 300, t_max: 300, ..LifecycleConfig::default() }
}

/// A straight 3-wide corridor with the start at its closed end and rich food
/// 16 cells away at its mouth, which opens into an empty chamber.
pub fn corridor_fixture() -> EnvSpec {
    let mut env = EnvSpec::open_arena(33, 21, (0, 10));
    env.walls = vec![Region::new(0, 0, 17, 9), Region::new(0, 12, 17, 21)];
    env.goal = Some(Region::cell(16, 10));
    env.goal_food = 5.0;
    env
}

/// A 40x15 strip with one block in front of the start. The goal sits in the
/// upper corner behind the block, so the organism has to route around it
/// through one of the two 4-wide gaps.
pub fn detour_fixture() -> EnvSpec {
    let mut env = EnvSpec::open_arena(40, 15, (2, 7));
    env.walls = vec![Region::new(6, 4, 8, 11)];
    env.goal = Some(Region::new(12, 0, 14, 3));
    env.goal_food = 5.0;
    env
}

/// Two food clusters on either side of a central start.
pub fn coordination_fixture() -> EnvSpec {
    let mut env = EnvSpec::open_arena(24, 12, (12, 6));
    env.kind = EnvKind::CoordinationArena { separation: 6, cluster_radius: 1, amount: 5.0, jitter: 2 };
    env
}

/// Hand-set gains of the chemotaxis baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineGains {
    /// Weight from every neighbor's chemoattractant to the growth node.
    pub chemo_to_growth: f64,
    /// Weight from every neighbor's chemoattractant to the reservoir output.
    pub chemo_to_reservoir: f64,
    /// Weight from the cell's own nutrient to the growth node.
    pub nutrient_to_growth: f64,
    /// Cells heavier than this stop growing.
    pub growth_ceiling: f64,
    /// Cells heavier than this convert mass back into nutrient.
    pub conversion_floor: f64,
    pub conversion_rate: f64,
    /// Relative reservoir change per update of heavy cells while inflating
    /// and deflating.
    pub inflation: f64,
    pub deflation: f64,
    /// The same for cells lighter than `rim_mass`.
    pub rim_inflation: f64,
    pub rim_deflation: f64,
    pub rim_mass: f64,
    /// Fill fractions of the reservoir capacity at which the phase flips.
    pub full_at: f64,
    pub empty_at: f64,
    /// Gain of the phase-switch sigmoids.
    pub switch_gain: f64,
    /// Gain of the gates.
    pub gate: f64,
}

impl Default for BaselineGains {
    fn default() -> Self {
        Self {
            chemo_to_growth: 0.03,
            chemo_to_reservoir: 0.0,
            nutrient_to_growth: 0.5,
            growth_ceiling: 0.001,
            conversion_floor: 0.2,
            conversion_rate: 0.2,
            inflation: 0.1,
            deflation: 0.5,
            rim_inflation: 0.5,
            rim_deflation: 0.03,
            rim_mass: 1e-3,
            full_at: 0.9,
            empty_at: 0.01,
            switch_gain: 1e6,
            gate: 50.0,
        }
    }
}

/// The handcrafted chemotaxis genome with default gains.
pub fn baseline_genome(k_hidden: usize) -> Genome {
    baseline_genome_with(k_hidden, &BaselineGains::default())
}

struct Builder {
    genome: Genome,
    innovation: u64,
    next_node: u32,
}

impl Builder {
    fn link(&mut self, from: u32, to: u32, weight: f64) {
        if weight != 0.0 {
            let innovation = self.innovation;
            self.genome.insert_connection(ConnectionGene { innovation, from, to, weight, enabled: true });
            self.innovation += 1;
        }
    }

    fn node(&mut self, activation: Activation, bias: f64, inputs: &[(u32, f64)]) -> u32 {
        let id = self.next_node;
        self.next_node += 1;
        self.genome.insert_node(NodeGene { id, kind: NodeKind::Hidden, activation, bias });
        for &(from, w) in inputs {
            self.link(from, id, w);
        }
        id
    }

    fn bias(&mut self, id: u32, bias: f64) {
        self.genome.node_mut(id).expect("node exists").bias = bias;
    }
}

/// Builds a fixed CPPN that crawls toward food by pumping.
///
/// Hidden channel 0 holds a phase bit in {-1, 1}. Each cell inflates its
/// reservoir geometrically in one phase and deflates it in the other,
/// flipping when the reservoir is nearly full or nearly empty. The body
/// pumps out more fluid than it takes back, which carries nutrient to the
/// rim. Light cells grow from the nutrient that arrives, faster where the
/// surrounding chemoattractant is high. Heavy cells turn surplus mass into
/// nutrient.
///
/// Panics if `k_hidden` is 0.
pub fn baseline_genome_with(k_hidden: usize, gains: &BaselineGains) -> Genome {
    assert!(k_hidden >= 1, "the baseline needs a hidden channel");
    let genome = Genome::bare(k_hidden, Activation::Identity);
    let next_node = genome.nodes.last().map(|n| n.id + 1).unwrap_or(0);
    let out_phase = genome.output_id(0);
    let out_r = genome.output_id(k_hidden);
    let out_m = genome.output_id(k_hidden + 1);
    let mut b = Builder { genome, innovation: 0, next_node };
    let own = |ch: usize| perception_index(k_hidden, 0, 0, ch) as u32;
    let (m, r, n) = (own(CH_MASS), own(CH_RESERVOIR), own(CH_NUTRIENT));
    let phase = own(CH_HIDDEN);
    let g = gains.gate;

    // Phase switch: deflate once the reservoir is nearly full, inflate once
    // it is nearly empty. The thresholds scale with the cell's mass, so very
    // sharp sigmoids are needed for light cells. Hidden writes are clamped
    // to [-1, 1]; the phase starts at 0 and its bias pushes it to 1.
    let sharp = gains.switch_gain;
    let full = b.node(Activation::Sigmoid, 0.0, &[(r, sharp), (m, -sharp * gains.full_at)]);
    let empty = b.node(Activation::Sigmoid, 0.0, &[(r, -sharp), (m, sharp * gains.empty_at)]);
    b.bias(out_phase, 0.5);
    b.link(phase, out_phase, 2.0);
    b.link(full, out_phase, -4.0);
    b.link(empty, out_phase, 4.0);

    // Reservoir: grow by a fixed fraction of R while the phase is 1 and
    // shrink by another while it is -1. Since the injected fluid is the
    // relative change clamped to `rho_cap`, a slow inflation paired with a
    // fast deflation makes a cell a net source over one cycle and the
    // reverse makes it a net sink. Heavy cells act as sources and light
    // cells at the rim as sinks, so fluid runs from the body to the edge.
    let rim = b.node(Activation::Sigmoid, sharp * gains.rim_mass, &[(m, -sharp)]);
    let rates = [
        (gains.inflation, gains.deflation, -g, -g),
        (gains.rim_inflation, gains.rim_deflation, g, -2.0 * g),
    ];
    for (inflate, deflate, rim_w, bias) in rates {
        let up = b.node(Activation::Relu, bias, &[(r, 2.0 * inflate), (phase, g), (rim, rim_w)]);
        let down = b.node(Activation::Relu, bias, &[(r, 2.0 * deflate), (phase, -g), (rim, rim_w)]);
        b.link(up, out_r, 1.0);
        b.link(down, out_r, -1.0);
    }
    let kick = b.node(Activation::Relu, 0.0, &[(m, 2.0 * gains.empty_at), (r, -2.0)]);
    b.link(kick, out_r, 1.0);

    // Mass: grow while light, convert while heavy.
    let heavy = b.node(Activation::Relu, -gains.growth_ceiling, &[(m, 1.0)]);
    let mut grow_inputs = vec![(n, gains.nutrient_to_growth), (heavy, -g)];
    for dy in -1..=1 {
        for dx in -1..=1 {
            if dx == 0 && dy == 0 {
                continue;
            }
            let cn = perception_index(k_hidden, dx, dy, CH_CHEMO) as u32;
            grow_inputs.push((cn, gains.chemo_to_growth));
            b.link(cn, out_r, gains.chemo_to_reservoir);
        }
    }
    let grow = b.node(Activation::Relu, 0.0, &grow_inputs);
    b.link(grow, out_m, 1.0);
    let surplus = b.node(Activation::Relu, -gains.conversion_floor, &[(m, 1.0)]);
    b.link(surplus, out_m, -gains.conversion_rate);
    b.genome
}
