//! One organism's life: seeding, the per-step update pipeline, scheduled
//! perturbations and fitness.
//!
//! Each step runs, in order:
//! 1. active set: free cells whose 3x3 neighborhood holds a living cell,
//! 2. stochastic selection (one draw per active cell, row-major),
//! 3. perception and CPPN evaluation for every selected cell on the
//!    pre-step world,
//! 4. hidden-channel writes and the physics constraint layer,
//! 5. one fluid step driven by the capped reservoir pressure,
//! 6. nutrient advection by the resulting velocity,
//! 7. perturbations scheduled for this step.
//!
//! Unselected cells are frozen for the step apart from fluid transport.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::cppn::{Genome, Phenotype};
use crate::environments::{self, chemoattractant_field, ChemoParams, EnvSpec, GeneratedEnv, Region};
use crate::error::{Error, Result};
use crate::fluid::{advect_scalar, Lattice};
use crate::physics::{capped_pressure, constrain, CellState, PhysicsParams, UpdateProposal};
use crate::rng::{self, Rng, STREAM_LIFECYCLE, STREAM_PERTURBATION};
use crate::substrate::{perception_len, WorldState, DEFAULT_K_HIDDEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerturbationEvent {
    RemoveFood { region: Region },
    DegradeCells { region: Region, fraction: f64 },
    MoveObstacle { obstacle_id: u32, dx: i64, dy: i64 },
}

impl PerturbationEvent {
    pub fn label(&self) -> &'static str {
        match self {
            PerturbationEvent::RemoveFood { .. } => "remove_food",
            PerturbationEvent::DegradeCells { .. } => "degrade_cells",
            PerturbationEvent::MoveObstacle { .. } => "move_obstacle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledPerturbation {
    pub step: usize,
    pub event: PerturbationEvent,
}

/// Ranges for per-environment random perturbation schedules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomPerturbations {
    /// Events drawn per lifecycle.
    pub events: usize,
    pub max_degrade_fraction: f64,
    /// Side length of degraded squares.
    pub degrade_size: usize,
    pub max_shift: i64,
}

impl Default for RandomPerturbations {
    fn default() -> Self {
        Self {
            events: 0,
            max_degrade_fraction: 0.5,
            degrade_size: 4,
            max_shift: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LifecycleConfig {
    pub t_min: usize,
    pub t_max: usize,
    pub p_update: f64,
    /// Overrides the environment's start cell when set.
    pub seed_cell: Option<(usize, usize)>,
    pub seed_mass: f64,
    pub seed_nutrient: f64,
    pub n_env_evals: usize,
    pub k_hidden: usize,
    pub tau: f64,
    pub advection_substeps: usize,
    pub perturbations: Vec<ScheduledPerturbation>,
    pub random_perturbations: RandomPerturbations,
}

impl Default for LifecycleConfig {
    fn default() -> Self {
        Self {
            t_min: 300,
            t_max: 600,
            p_update: 0.5,
            seed_cell: None,
            seed_mass: 1.0,
            seed_nutrient: 1.0,
            n_env_evals: 1,
            k_hidden: DEFAULT_K_HIDDEN,
            tau: 0.8,
            advection_substeps: 1,
            perturbations: Vec::new(),
            random_perturbations: RandomPerturbations::default(),
        }
    }
}

impl LifecycleConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("lifecycle.{m}")));
        if self.t_min == 0 || self.t_min > self.t_max {
            return bad("requires 0 < t_min <= t_max");
        }
        if !(self.p_update > 0.0 && self.p_update <= 1.0) {
            return bad("p_update must lie in (0, 1]");
        }
        if self.n_env_evals == 0 {
            return bad("n_env_evals must be >= 1");
        }
        if self.k_hidden == 0 {
            return bad("k_hidden must be >= 1");
        }
        if !(self.tau > 0.5) {
            return bad("tau must exceed 0.5");
        }
        if self.advection_substeps == 0 {
            return bad("advection_substeps must be >= 1");
        }
        if !(self.seed_mass > 0.0 && self.seed_nutrient >= 0.0) {
            return bad("seed_mass must be > 0 and seed_nutrient >= 0");
        }
        for p in &self.perturbations {
            if let PerturbationEvent::DegradeCells { fraction, .. } = p.event {
                if !(0.0..=1.0).contains(&fraction) {
                    return bad("degrade fraction must lie in [0, 1]");
                }
            }
        }
        Ok(())
    }

    /// Lifespan drawn uniformly from `[t_min, t_max]`.
    pub fn draw_lifespan(&self, rng: &mut Rng) -> usize {
        rng.random_range(self.t_min..=self.t_max)
    }
}

/// Places the seed organism. Fails on obstacles and already inhabited worlds.
pub fn seed_organism(world: &mut WorldState, at: (usize, usize), mass: f64, nutrient: f64) -> Result<()> {
    let idx = world.shape.check(at.0 as i64, at.1 as i64)?;
    let (x, y) = at;
    if world.obstacle[idx] == 1 {
        return Err(Error::Seed { x, y, reason: "is an obstacle".into() });
    }
    if world.mass.iter().any(|&m| m > 0.0) {
        return Err(Error::Seed { x, y, reason: "world is already inhabited".into() });
    }
    world.clear_cell(idx);
    world.mass[idx] = mass;
    world.nutrient[idx] = nutrient;
    Ok(())
}

/// Applies one perturbation to the world (statics and dynamics). Returns the
/// previous obstacle field when the obstacle layout changed.
pub fn apply_perturbation(world: &mut WorldState, event: &PerturbationEvent, kappa: f64) -> Result<Option<Vec<u8>>> {
    let shape = world.shape;
    match event {
        PerturbationEvent::RemoveFood { region } => {
            region.check(shape)?;
            for i in region.indices(shape) {
                world.food[i] = 0.0;
            }
            Ok(None)
        }
        PerturbationEvent::DegradeCells { region, fraction } => {
            region.check(shape)?;
            if !(0.0..=1.0).contains(fraction) {
                return Err(Error::Perturbation(format!("degrade fraction {fraction} outside [0, 1]")));
            }
            let keep = 1.0 - fraction;
            for i in region.indices(shape) {
                world.mass[i] *= keep;
                world.nutrient[i] *= keep;
                world.reservoir[i] = (world.reservoir[i] * keep).min(kappa * world.mass[i]);
            }
            Ok(None)
        }
        PerturbationEvent::MoveObstacle { obstacle_id, dx, dy } => {
            let cells: Vec<usize> = (0..shape.cells())
                .filter(|&i| world.obstacle_label[i] == *obstacle_id && world.obstacle[i] == 1)
                .collect();
            if cells.is_empty() {
                return Err(Error::Perturbation(format!("no obstacle with id {obstacle_id}")));
            }
            let mut targets = Vec::with_capacity(cells.len());
            for &i in &cells {
                let (x, y) = shape.coords(i);
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                targets.push(shape.check(nx, ny).map_err(|_| {
                    Error::Perturbation(format!("obstacle {obstacle_id} would leave the grid"))
                })?);
            }
            let old = world.obstacle.clone();
            for &i in &cells {
                world.obstacle[i] = 0;
                world.obstacle_label[i] = 0;
            }
            for &t in &targets {
                world.obstacle[t] = 1;
                world.obstacle_label[t] = *obstacle_id;
                world.clear_cell(t);
            }
            Ok(Some(old))
        }
    }
}

/// Checks that every scheduled obstacle move stays on the grid, replaying
/// the moves on a copy of the statics.
pub fn validate_schedule(world: &WorldState, schedule: &[ScheduledPerturbation]) -> Result<()> {
    let mut probe = world.clone();
    let mut sorted: Vec<&ScheduledPerturbation> = schedule.iter().collect();
    sorted.sort_by_key(|p| p.step);
    for p in sorted {
        apply_perturbation(&mut probe, &p.event, f64::INFINITY)?;
    }
    Ok(())
}

fn random_schedule(
    env: &GeneratedEnv,
    cfg: &RandomPerturbations,
    lifespan: usize,
    rng: &mut Rng,
) -> Vec<ScheduledPerturbation> {
    let shape = env.statics.shape;
    let labels: Vec<u32> = {
        let mut l: Vec<u32> = env.statics.obstacle_label.iter().copied().filter(|&l| l > 0).collect();
        l.sort_unstable();
        l.dedup();
        l
    };
    let mut out = Vec::new();
    for _ in 0..cfg.events {
        let step = rng.random_range(0..lifespan.max(1));
        let kind = rng.random_range(0..3);
        let event = match kind {
            0 if !env.food_regions.is_empty() => PerturbationEvent::RemoveFood {
                region: env.food_regions[rng.random_range(0..env.food_regions.len())],
            },
            2 if !labels.is_empty() && cfg.max_shift > 0 => PerturbationEvent::MoveObstacle {
                obstacle_id: labels[rng.random_range(0..labels.len())],
                dx: rng.random_range(-cfg.max_shift..=cfg.max_shift),
                dy: rng.random_range(-cfg.max_shift..=cfg.max_shift),
            },
            _ => {
                let size = cfg.degrade_size.clamp(1, shape.width.min(shape.height));
                let x0 = rng.random_range(0..=shape.width - size);
                let y0 = rng.random_range(0..=shape.height - size);
                PerturbationEvent::DegradeCells {
                    region: Region::new(x0, y0, x0 + size, y0 + size),
                    fraction: rng.random_range(0.0..=cfg.max_degrade_fraction.clamp(0.0, 1.0)),
                }
            }
        };
        out.push(ScheduledPerturbation { step, event });
    }
    out
}

/// Compact per-step trajectory record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub total_mass: f64,
    pub total_nutrient: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<String>,
}

/// A running lifecycle.
pub struct Simulation<'p> {
    phenotype: &'p Phenotype,
    physics: PhysicsParams,
    p_update: f64,
    advection_substeps: usize,
    chemo: ChemoParams,
    world: WorldState,
    lattice: Lattice,
    rng: Rng,
    schedule: Vec<ScheduledPerturbation>,
    step: usize,
    // scratch
    active: Vec<bool>,
    selected: Vec<usize>,
    outputs: Vec<f64>,
    perception: Vec<f64>,
    eval_scratch: Vec<f64>,
    sources: Vec<f64>,
}

impl<'p> Simulation<'p> {
    /// Builds a world from `env`, seeds the organism and validates the schedule.
    pub fn new(
        phenotype: &'p Phenotype,
        env: &GeneratedEnv,
        physics: &PhysicsParams,
        cfg: &LifecycleConfig,
        schedule: Vec<ScheduledPerturbation>,
        rng: Rng,
    ) -> Result<Self> {
        physics.validate()?;
        cfg.validate()?;
        let k = cfg.k_hidden;
        if phenotype.n_inputs() != perception_len(k) + 1 || phenotype.n_outputs() != k + 2 {
            return Err(Error::InvalidGenome(format!(
                "genome dimensions {}x{} do not match k_hidden = {k}",
                phenotype.n_inputs(),
                phenotype.n_outputs()
            )));
        }
        let mut world = WorldState::new(env.statics.clone(), k)?;
        seed_organism(&mut world, cfg.seed_cell.unwrap_or(env.start), cfg.seed_mass, cfg.seed_nutrient)?;
        validate_schedule(&world, &schedule)?;
        let mut schedule = schedule;
        schedule.sort_by_key(|p| p.step);
        let lattice = Lattice::at_rest(world.shape, &world.obstacle, cfg.tau)?;
        let n = world.shape.cells();
        Ok(Self {
            phenotype,
            physics: *physics,
            p_update: cfg.p_update,
            advection_substeps: cfg.advection_substeps,
            chemo: env.chemo,
            world,
            lattice,
            rng,
            schedule,
            step: 0,
            active: vec![false; n],
            selected: Vec::new(),
            outputs: Vec::new(),
            perception: vec![0.0; perception_len(k) + 1],
            eval_scratch: Vec::new(),
            sources: vec![0.0; n],
        })
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn world_mut(&mut self) -> &mut WorldState {
        &mut self.world
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    /// Per-cell fluid sources injected on the last step.
    pub fn sources(&self) -> &[f64] {
        &self.sources
    }

    /// Number of completed steps.
    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Marks free cells within one cell (Chebyshev) of a living cell.
    fn compute_active(&mut self) {
        let shape = self.world.shape;
        let (w, h) = (shape.width, shape.height);
        let m_min = self.physics.m_min;
        self.active.iter_mut().for_each(|a| *a = false);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let m = self.world.mass[i];
                if !(m >= m_min && m > 0.0) {
                    continue;
                }
                for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        self.active[ny * w + nx] = true;
                    }
                }
            }
        }
        for (a, &o) in self.active.iter_mut().zip(&self.world.obstacle) {
            if o == 1 {
                *a = false;
            }
        }
    }

    /// Runs one full step, drawing the stochastic selection from the stream.
    pub fn step(&mut self) -> Result<StepRecord> {
        self.compute_active();
        let p = self.p_update;
        let mut selected = std::mem::take(&mut self.selected);
        selected.clear();
        for (i, &a) in self.active.iter().enumerate() {
            if a && self.rng.random::<f64>() < p {
                selected.push(i);
            }
        }
        let record = self.step_with_selection(&selected);
        self.selected = selected;
        record
    }

    /// Runs one step with an explicit set of selected cells (row-major
    /// indices). Cells that are obstacles are ignored.
    pub fn step_with_selection(&mut self, selected: &[usize]) -> Result<StepRecord> {
        let k = self.world.k_hidden;
        let n_out = k + 2;
        let shape = self.world.shape;
        let n = shape.cells();

        // perception + evaluation on the pre-step world
        self.outputs.clear();
        self.outputs.resize(selected.len() * n_out, 0.0);
        let bias_slot = self.perception.len() - 1;
        self.perception[bias_slot] = 1.0;
        for (s, &idx) in selected.iter().enumerate() {
            let (x, y) = shape.coords(idx);
            self.world.perceive_into(x, y, &mut self.perception[..bias_slot]);
            self.phenotype.evaluate_into(
                &self.perception,
                &mut self.eval_scratch,
                &mut self.outputs[s * n_out..(s + 1) * n_out],
            )?;
        }

        // writes + constraint layer
        self.sources.iter_mut().for_each(|v| *v = 0.0);
        for (s, &idx) in selected.iter().enumerate() {
            if self.world.obstacle[idx] == 1 {
                continue;
            }
            let out = &self.outputs[s * n_out..(s + 1) * n_out];
            for (kk, &v) in out[..k].iter().enumerate() {
                let v = if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
                self.world.hidden[kk * n + idx] = v;
            }
            let raw_r = if out[k].is_nan() { 0.0 } else { out[k] };
            let raw_m = if out[k + 1].is_nan() { 0.0 } else { out[k + 1] };
            let proposal = UpdateProposal::from_raw(raw_r, raw_m, &self.physics);
            let before = CellState {
                mass: self.world.mass[idx],
                reservoir: self.world.reservoir[idx],
                nutrient: self.world.nutrient[idx],
                food: self.world.food[idx],
                poison: self.world.poison[idx],
            };
            let (applied, after) = constrain(before, proposal, &self.physics);
            self.world.mass[idx] = after.mass;
            self.world.reservoir[idx] = after.reservoir;
            self.world.nutrient[idx] = after.nutrient;
            self.sources[idx] = capped_pressure(before.reservoir, applied.total_delta_r(), &self.physics);
        }

        // fluid + transport
        self.lattice.step(&self.world.obstacle, &self.sources)?;
        let macro_fields = self.lattice.macroscopic();
        let dt = 1.0 / self.advection_substeps as f64;
        for _ in 0..self.advection_substeps {
            self.world.nutrient = advect_scalar(
                shape,
                &self.world.nutrient,
                &macro_fields.ux,
                &macro_fields.uy,
                &self.world.obstacle,
                dt,
            )?;
        }

        // perturbations
        let mut label: Option<String> = None;
        while let Some(p) = self.schedule.first() {
            if p.step > self.step {
                break;
            }
            let p = self.schedule.remove(0);
            if p.step == self.step {
                self.apply(&p.event)?;
                label = Some(match label {
                    Some(l) => format!("{l}+{}", p.event.label()),
                    None => p.event.label().to_string(),
                });
            }
        }

        let record = StepRecord {
            step: self.step,
            total_mass: self.world.total_mass(),
            total_nutrient: self.world.total_nutrient(),
            perturbation: label,
        };
        self.step += 1;
        Ok(record)
    }

    /// Applies a perturbation now, keeping the fluid and chemoattractant
    /// consistent with the new statics.
    pub fn apply(&mut self, event: &PerturbationEvent) -> Result<()> {
        let changed = apply_perturbation(&mut self.world, event, self.physics.kappa)?;
        if let Some(old) = &changed {
            self.lattice.update_obstacles(old, &self.world.obstacle);
        }
        if changed.is_some() || matches!(event, PerturbationEvent::RemoveFood { .. }) {
            self.world.chemoattractant = chemoattractant_field(
                self.world.shape,
                &self.world.food,
                &self.world.obstacle,
                self.chemo.iterations(self.world.shape),
                self.chemo.decay,
            );
        }
        Ok(())
    }
}

/// Outcome of one environment evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvOutcome {
    pub env_seed: u64,
    pub fitness: f64,
    pub steps_run: usize,
    pub lifespan: usize,
    /// True when a fluid instability cut the life short.
    pub failed: bool,
    pub mass_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessRecord {
    pub fitness: f64,
    /// Total mass after each step, starting with the seeded state. With
    /// several environments this is the mean curve, shorter runs held at
    /// their final value.
    pub mass_curve: Vec<f64>,
    pub steps_run: usize,
    pub per_env: Vec<EnvOutcome>,
}

/// Everything a single environment run produced.
pub struct LifeRun {
    pub outcome: EnvOutcome,
    pub records: Vec<StepRecord>,
    pub final_world: WorldState,
}

/// Runs one complete lifecycle in an already generated environment.
pub fn run_single(
    phenotype: &Phenotype,
    env: &GeneratedEnv,
    physics: &PhysicsParams,
    cfg: &LifecycleConfig,
    seed: u64,
) -> Result<LifeRun> {
    run_observed(phenotype, env, physics, cfg, seed, |_, _| {})
}

/// [`run_single`], calling `observe(t, world)` on the seeded world (t = 0)
/// and after every completed step.
pub fn run_observed(
    phenotype: &Phenotype,
    env: &GeneratedEnv,
    physics: &PhysicsParams,
    cfg: &LifecycleConfig,
    seed: u64,
    mut observe: impl FnMut(usize, &WorldState),
) -> Result<LifeRun> {
    let mut rng = rng::stream(seed, &[STREAM_LIFECYCLE]);
    let lifespan = cfg.draw_lifespan(&mut rng);
    let mut schedule = cfg.perturbations.clone();
    if cfg.random_perturbations.events > 0 {
        let mut prng = rng::stream(seed, &[STREAM_PERTURBATION]);
        let mut world = WorldState::new(env.statics.clone(), cfg.k_hidden)?;
        world.mass.iter_mut().for_each(|m| *m = 0.0);
        for p in random_schedule(env, &cfg.random_perturbations, lifespan, &mut prng) {
            // keep only events that are valid on top of what is already scheduled
            let mut trial = schedule.clone();
            trial.push(p);
            if validate_schedule(&world, &trial).is_ok() {
                schedule = trial;
            }
        }
    }
    let mut sim = Simulation::new(phenotype, env, physics, cfg, schedule, rng)?;
    let mut mass_curve = Vec::with_capacity(lifespan + 1);
    mass_curve.push(sim.world().total_mass());
    observe(0, sim.world());
    let mut records = Vec::with_capacity(lifespan);
    let mut failed = false;
    for t in 1..=lifespan {
        match sim.step() {
            Ok(rec) => {
                mass_curve.push(rec.total_mass);
                records.push(rec);
                observe(t, sim.world());
            }
            Err(Error::Instability { .. }) | Err(Error::Cfl(_)) => {
                failed = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let outcome = EnvOutcome {
        env_seed: seed,
        fitness: *mass_curve.last().expect("non-empty curve"),
        steps_run: mass_curve.len() - 1,
        lifespan,
        failed,
        mass_curve,
    };
    Ok(LifeRun {
        outcome,
        records,
        final_world: sim.world,
    })
}

/// Generator and lifecycle seeds for environment evaluation `e`.
pub fn env_seeds(spec: &EnvSpec, run_seed: u64, e: usize, n: usize) -> (u64, u64) {
    if n == 1 {
        (spec.seed, run_seed)
    } else {
        (
            rng::derive_seed(spec.seed, &[e as u64 + 1]),
            rng::derive_seed(run_seed, &[e as u64 + 1]),
        )
    }
}

/// Evaluates a genome over `cfg.n_env_evals` environments and averages the
/// final total mass.
pub fn run_lifecycle(
    genome: &Genome,
    env: &EnvSpec,
    physics: &PhysicsParams,
    cfg: &LifecycleConfig,
    run_seed: u64,
) -> Result<FitnessRecord> {
    let phenotype = Phenotype::compile(genome)?;
    let n = cfg.n_env_evals;
    let mut per_env = Vec::with_capacity(n);
    for e in 0..n {
        let (env_seed, life_seed) = env_seeds(env, run_seed, e, n);
        let generated = environments::generate(&env.with_seed(env_seed))?;
        per_env.push(run_single(&phenotype, &generated, physics, cfg, life_seed)?.outcome);
    }
    Ok(combine(per_env))
}

/// Averages several environment outcomes into one record.
pub fn combine(per_env: Vec<EnvOutcome>) -> FitnessRecord {
    let len = per_env.iter().map(|o| o.mass_curve.len()).max().unwrap_or(1);
    let mut mass_curve = vec![0.0; len];
    for o in &per_env {
        let last = *o.mass_curve.last().unwrap_or(&0.0);
        for (t, slot) in mass_curve.iter_mut().enumerate() {
            *slot += o.mass_curve.get(t).copied().unwrap_or(last);
        }
    }
    let count = per_env.len().max(1) as f64;
    mass_curve.iter_mut().for_each(|v| *v /= count);
    if per_env.len() == 1 {
        mass_curve = per_env[0].mass_curve.clone();
    }
    FitnessRecord {
        fitness: *mass_curve.last().unwrap_or(&0.0),
        steps_run: per_env.iter().map(|o| o.steps_run).max().unwrap_or(0),
        mass_curve,
        per_env,
    }
}
