//! PPM (P6) frames of a lifecycle.
//!
//! Red is mass, green chemoattractant and blue reservoir, each quantized as
//! `round(255 * clamp(v / display_max, 0, 1))`. Obstacle cells are white.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cppn::{Genome, Phenotype};
use crate::environments::{self, EnvSpec};
use crate::error::Result;
use crate::lifecycle::{run_observed, LifecycleConfig};
use crate::physics::PhysicsParams;
use crate::substrate::WorldState;

use super::files::atomic_write;
use super::trajectory::{self, TrajectoryLog};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisplayMax {
    pub mass: f64,
    /// `None` scales by the largest chemoattractant value in the world.
    pub chemo: Option<f64>,
    pub reservoir: f64,
}

impl Default for DisplayMax {
    fn default() -> Self {
        Self { mass: 1.0, chemo: None, reservoir: 1.0 }
    }
}

pub fn quantize(value: f64, display_max: f64) -> u8 {
    if display_max <= 0.0 || !value.is_finite() {
        return 0;
    }
    (255.0 * (value / display_max).clamp(0.0, 1.0)).round() as u8
}

pub fn frame_ppm(world: &WorldState, display: &DisplayMax) -> Vec<u8> {
    let (w, h) = (world.shape.width, world.shape.height);
    let chemo_max = display
        .chemo
        .unwrap_or_else(|| world.chemoattractant.iter().copied().fold(0.0, f64::max));
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * w * h);
    for i in 0..w * h {
        if world.obstacle[i] == 1 {
            out.extend_from_slice(&[255, 255, 255]);
        } else {
            out.push(quantize(world.mass[i], display.mass));
            out.push(quantize(world.chemoattractant[i], chemo_max));
            out.push(quantize(world.reservoir[i], display.reservoir));
        }
    }
    out
}

pub fn frame_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("frame_{step:06}.ppm"))
}

/// Steps that get a frame: 0, every multiple of `every`, and the last.
pub fn frame_steps(steps_run: usize, every: usize) -> Vec<usize> {
    let every = every.max(1);
    let mut steps: Vec<usize> = (0..=steps_run).step_by(every).collect();
    if steps.last() != Some(&steps_run) {
        steps.push(steps_run);
    }
    steps
}

pub struct Rendered {
    pub frames: Vec<PathBuf>,
    pub log: TrajectoryLog,
}

/// Runs one lifecycle, writing frames into `dir` as it goes.
#[allow(clippy::too_many_arguments)]
pub fn render(
    genome: &Genome,
    env: &EnvSpec,
    physics: &PhysicsParams,
    lifecycle: &LifecycleConfig,
    seed: u64,
    every: usize,
    display: &DisplayMax,
    dir: &Path,
) -> Result<Rendered> {
    let every = every.max(1);
    let phenotype = Phenotype::compile(genome)?;
    let generated = environments::generate(env)?;
    let mut frames = Vec::new();
    let mut write_error = None;
    let run = run_observed(&phenotype, &generated, physics, lifecycle, seed, |t, world| {
        if t % every == 0 && write_error.is_none() {
            let path = frame_path(dir, t);
            match atomic_write(&path, &frame_ppm(world, display)) {
                Ok(()) => frames.push(path),
                Err(e) => write_error = Some(e),
            }
        }
    })?;
    if let Some(e) = write_error {
        return Err(e);
    }
    let last = run.outcome.steps_run;
    if last % every != 0 {
        let path = frame_path(dir, last);
        atomic_write(&path, &frame_ppm(&run.final_world, display))?;
        frames.push(path);
    }
    let log = trajectory::from_run(genome, env, physics, lifecycle, seed, run);
    Ok(Rendered { frames, log })
}
