//! Hashed trajectory logs of single lifecycles, for replay checks.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cppn::{Genome, Phenotype};
use crate::environments::{self, EnvSpec};
use crate::error::{Error, Result};
use crate::lifecycle::{run_single, LifeRun, LifecycleConfig};
use crate::physics::PhysicsParams;
use crate::substrate::WorldState;

pub const TRAJECTORY_SCHEMA_VERSION: u32 = 1;

/// Dynamic fields of the last world state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalWorld {
    pub width: usize,
    pub height: usize,
    pub mass: Vec<f64>,
    pub reservoir: Vec<f64>,
    pub nutrient: Vec<f64>,
    pub hidden: Vec<f64>,
}

impl FinalWorld {
    pub fn of(w: &WorldState) -> Self {
        Self {
            width: w.shape.width,
            height: w.shape.height,
            mass: w.mass.clone(),
            reservoir: w.reservoir.clone(),
            nutrient: w.nutrient.clone(),
            hidden: w.hidden.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryLog {
    pub schema_version: u32,
    pub seed: u64,
    pub genome: Genome,
    pub environment: EnvSpec,
    pub physics: PhysicsParams,
    pub lifecycle: LifecycleConfig,
    pub failed: bool,
    pub mass_curve: Vec<f64>,
    pub final_world: FinalWorld,
    /// Hex SHA-256 of the mass curve followed by the final world, every
    /// value as little-endian f64 bytes.
    pub hash: String,
}

pub fn trajectory_hash(mass_curve: &[f64], world: &FinalWorld) -> String {
    let mut h = Sha256::new();
    let mut feed = |xs: &[f64]| xs.iter().for_each(|x| h.update(x.to_le_bytes()));
    feed(mass_curve);
    feed(&world.mass);
    feed(&world.reservoir);
    feed(&world.nutrient);
    feed(&world.hidden);
    hex::encode(h.finalize())
}

/// Runs one lifecycle of `genome` in `env` and records it.
pub fn record(
    genome: &Genome,
    env: &EnvSpec,
    physics: &PhysicsParams,
    lifecycle: &LifecycleConfig,
    seed: u64,
) -> Result<TrajectoryLog> {
    let phenotype = Phenotype::compile(genome)?;
    let generated = environments::generate(env)?;
    let run = run_single(&phenotype, &generated, physics, lifecycle, seed)?;
    Ok(from_run(genome, env, physics, lifecycle, seed, run))
}

/// Builds the log of a lifecycle that has already been run.
pub fn from_run(
    genome: &Genome,
    env: &EnvSpec,
    physics: &PhysicsParams,
    lifecycle: &LifecycleConfig,
    seed: u64,
    run: LifeRun,
) -> TrajectoryLog {
    let final_world = FinalWorld::of(&run.final_world);
    let mass_curve = run.outcome.mass_curve;
    TrajectoryLog {
        schema_version: TRAJECTORY_SCHEMA_VERSION,
        seed,
        genome: genome.clone(),
        environment: env.clone(),
        physics: *physics,
        lifecycle: lifecycle.clone(),
        failed: run.outcome.failed,
        hash: trajectory_hash(&mass_curve, &final_world),
        mass_curve,
        final_world,
    }
}

/// Summary numbers recomputed from a log.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub steps: usize,
    pub initial_mass: f64,
    pub final_mass: f64,
    pub peak_mass: f64,
    pub growth_rate: f64,
}

impl TrajectoryLog {
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(Error::Format("trajectory log is empty".into()));
        }
        let log: TrajectoryLog = serde_json::from_str(text)?;
        if log.mass_curve.is_empty() {
            return Err(Error::Format("trajectory log has an empty mass curve".into()));
        }
        Ok(log)
    }

    pub fn summary(&self) -> Summary {
        let first = self.mass_curve[0];
        let last = *self.mass_curve.last().expect("non-empty");
        let steps = self.mass_curve.len() - 1;
        Summary {
            steps,
            initial_mass: first,
            final_mass: last,
            peak_mass: self.mass_curve.iter().copied().fold(f64::MIN, f64::max),
            growth_rate: if steps == 0 { 0.0 } else { (last - first) / steps as f64 },
        }
    }

    /// True when the stored hash matches the stored data.
    pub fn hash_matches(&self) -> bool {
        trajectory_hash(&self.mass_curve, &self.final_world) == self.hash
    }

    /// Re-runs the recorded lifecycle and compares the resulting hash.
    pub fn resimulates(&self) -> Result<bool> {
        let again = record(&self.genome, &self.environment, &self.physics, &self.lifecycle, self.seed)?;
        Ok(again.hash == self.hash)
    }
}
