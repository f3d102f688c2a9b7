//! Static-channel generators: arenas, obstacle fields, mazes, coordination
//! setups and deceptive chemoattractant.
//!
//! Connectivity everywhere in this module is 4-neighbor, matching the faces
//! through which nutrient is transported.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, STREAM_ENVIRONMENT};
use crate::substrate::{GridShape, StaticFields};

/// Half-open rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Region {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Region {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn cell(x: usize, y: usize) -> Self {
        Self::new(x, y, x + 1, y + 1)
    }

    pub fn whole(shape: GridShape) -> Self {
        Self::new(0, 0, shape.width, shape.height)
    }

    pub fn is_valid_in(&self, shape: GridShape) -> bool {
        self.x0 < self.x1 && self.y0 < self.y1 && self.x1 <= shape.width && self.y1 <= shape.height
    }

    pub fn check(&self, shape: GridShape) -> Result<()> {
        if self.is_valid_in(shape) {
            Ok(())
        } else {
            Err(Error::Environment(format!(
                "region {self:?} is empty or outside the {}x{} grid",
                shape.width, shape.height
            )))
        }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    /// Row-major cell indices covered by the region.
    pub fn indices(&self, shape: GridShape) -> impl Iterator<Item = usize> + '_ {
        let w = shape.width;
        (self.y0..self.y1).flat_map(move |y| (self.x0..self.x1).map(move |x| y * w + x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub region: Region,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvKind {
    OpenArena,
    /// Random single-cell obstacles covering roughly `density` of free space.
    ObstacleField { density: f64 },
    /// Recursive-backtracker maze with corridors `cell_size` wide.
    Maze { cell_size: usize },
    /// Two food clusters left (A) and right (B) of a centered seed.
    CoordinationArena {
        separation: usize,
        cluster_radius: usize,
        amount: f64,
        #[serde(default)]
        jitter: usize,
    },
    /// Adds a chemoattractant peak with no food under it.
    DeceptiveChemo { amplitude: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChemoParams {
    pub decay: f64,
    /// `None` means `2 * max(width, height)`.
    pub n_iters: Option<usize>,
}

impl Default for ChemoParams {
    fn default() -> Self {
        Self {
            decay: 0.9,
            n_iters: None,
        }
    }
}

impl ChemoParams {
    pub fn iterations(&self, shape: GridShape) -> usize {
        self.n_iters
            .unwrap_or(2 * shape.width.max(shape.height))
            .max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub width: usize,
    pub height: usize,
    /// Seed cell; mazes and coordination arenas choose their own.
    #[serde(default)]
    pub start: (usize, usize),
    #[serde(default)]
    pub food: Vec<Placement>,
    #[serde(default)]
    pub poison: Vec<Placement>,
    #[serde(default)]
    pub walls: Vec<Region>,
    /// Target region for pathfinding; mazes choose their own.
    #[serde(default)]
    pub goal: Option<Region>,
    /// Food placed on every free goal cell.
    #[serde(default)]
    pub goal_food: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub chemo: ChemoParams,
}

impl EnvSpec {
    pub fn open_arena(width: usize, height: usize, start: (usize, usize)) -> Self {
        Self {
            kind: EnvKind::OpenArena,
            width,
            height,
            start,
            food: Vec::new(),
            poison: Vec::new(),
            walls: Vec::new(),
            goal: None,
            goal_food: 0.0,
            seed: 0,
            chemo: ChemoParams::default(),
        }
    }

    pub fn shape(&self) -> Result<GridShape> {
        GridShape::new(self.width, self.height)
    }

    /// The same spec with its generator seed replaced.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.shape()?;
        for p in self.food.iter().chain(&self.poison) {
            p.region.check(shape)?;
            if !(p.amount.is_finite() && p.amount > 0.0) {
                return Err(Error::Environment(format!(
                    "placement amounts must be positive, got {}",
                    p.amount
                )));
            }
        }
        for r in &self.walls {
            r.check(shape)?;
        }
        if let Some(g) = &self.goal {
            g.check(shape)?;
        }
        if !(self.goal_food.is_finite() && self.goal_food >= 0.0) {
            return Err(Error::Environment("goal_food must be >= 0".into()));
        }
        if !(self.chemo.decay > 0.0 && self.chemo.decay < 1.0) {
            return Err(Error::Environment("chemo.decay must lie in (0, 1)".into()));
        }
        match self.kind {
            EnvKind::ObstacleField { density } if !(0.0..1.0).contains(&density) => {
                Err(Error::Environment("obstacle density must lie in [0, 1)".into()))
            }
            EnvKind::Maze { cell_size: 0 } => Err(Error::Environment("maze cell_size must be >= 1".into())),
            EnvKind::CoordinationArena { amount, .. } if !(amount > 0.0) => {
                Err(Error::Environment("cluster amount must be positive".into()))
            }
            _ => {
                if !shape.contains(self.start.0 as i64, self.start.1 as i64) {
                    return Err(Error::Environment("start lies outside the grid".into()));
                }
                Ok(())
            }
        }
    }
}

/// Output of [`generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedEnv {
    pub statics: StaticFields,
    pub start: (usize, usize),
    pub goal: Option<Region>,
    /// Food regions in placement order; for coordination arenas `[A, B]`.
    pub food_regions: Vec<Region>,
    pub chemo: ChemoParams,
    /// Location of the false chemoattractant peak, if any.
    pub decoy: Option<(usize, usize)>,
}

/// Iterated max-diffusion of food into a chemoattractant field.
///
/// `C = F` initially; each iteration every free cell becomes
/// `max(F, decay * mean of its 4 neighbors)`, where obstacle and off-grid
/// neighbors mirror the cell itself (zero flux). Obstacle cells hold 0.
pub fn chemoattractant_field(
    shape: GridShape,
    food: &[f64],
    obstacle: &[u8],
    n_iters: usize,
    decay: f64,
) -> Vec<f64> {
    let (w, h) = (shape.width, shape.height);
    let mut c: Vec<f64> = food
        .iter()
        .zip(obstacle)
        .map(|(&f, &o)| if o == 1 { 0.0 } else { f })
        .collect();
    let mut next = c.clone();
    for _ in 0..n_iters {
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if obstacle[i] == 1 {
                    next[i] = 0.0;
                    continue;
                }
                let mut sum = 0.0;
                for (dx, dy) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    sum += if shape.contains(nx, ny) && obstacle[ny as usize * w + nx as usize] == 0 {
                        c[ny as usize * w + nx as usize]
                    } else {
                        c[i]
                    };
                }
                next[i] = food[i].max(decay * sum / 4.0);
            }
        }
        std::mem::swap(&mut c, &mut next);
    }
    c
}

/// Cells 4-reachable from `start` through free space.
pub fn reachable_from(shape: GridShape, obstacle: &[u8], start: usize) -> Vec<bool> {
    let mut seen = vec![false; shape.cells()];
    if obstacle[start] == 1 {
        return seen;
    }
    let w = shape.width;
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        let mut push = |j: usize| {
            if !seen[j] && obstacle[j] == 0 {
                seen[j] = true;
                queue.push_back(j);
            }
        };
        if x > 0 {
            push(i - 1);
        }
        if x + 1 < w {
            push(i + 1);
        }
        if y > 0 {
            push(i - w);
        }
        if y + 1 < shape.height {
            push(i + w);
        }
    }
    seen
}

fn carve_maze(shape: GridShape, cell_size: usize, rng: &mut rng::Rng) -> (Vec<u8>, (usize, usize), Region) {
    let pitch = cell_size + 1;
    let cols = (shape.width + 1) / pitch;
    let rows = (shape.height + 1) / pitch;
    let mut obstacle = vec![1u8; shape.cells()];
    let mut open = |x0: usize, y0: usize, x1: usize, y1: usize| {
        for y in y0..y1.min(shape.height) {
            for x in x0..x1.min(shape.width) {
                obstacle[y * shape.width + x] = 0;
            }
        }
    };
    let origin = |c: usize, r: usize| (c * pitch, r * pitch);
    for r in 0..rows {
        for c in 0..cols {
            let (x, y) = origin(c, r);
            open(x, y, x + cell_size, y + cell_size);
        }
    }
    let mut visited = vec![false; cols * rows];
    let mut stack = vec![(0usize, 0usize)];
    visited[0] = true;
    while let Some(&(c, r)) = stack.last() {
        let mut options: Vec<(usize, usize)> = Vec::with_capacity(4);
        if c > 0 && !visited[r * cols + c - 1] {
            options.push((c - 1, r));
        }
        if c + 1 < cols && !visited[r * cols + c + 1] {
            options.push((c + 1, r));
        }
        if r > 0 && !visited[(r - 1) * cols + c] {
            options.push((c, r - 1));
        }
        if r + 1 < rows && !visited[(r + 1) * cols + c] {
            options.push((c, r + 1));
        }
        if options.is_empty() {
            stack.pop();
            continue;
        }
        let (nc, nr) = options[rng.random_range(0..options.len())];
        let (x, y) = origin(c, r);
        if nc != c {
            let wx = if nc > c { x + cell_size } else { x - 1 };
            open(wx, y, wx + 1, y + cell_size);
        } else {
            let wy = if nr > r { y + cell_size } else { y - 1 };
            open(x, wy, x + cell_size, wy + 1);
        }
        visited[nr * cols + nc] = true;
        stack.push((nc, nr));
    }
    let (gx, gy) = origin(cols - 1, rows - 1);
    (obstacle, (0, 0), Region::new(gx, gy, gx + cell_size, gy + cell_size))
}

fn place(field: &mut [f64], obstacle: &[u8], shape: GridShape, p: &Placement) -> Result<()> {
    let mut placed = false;
    for i in p.region.indices(shape) {
        if obstacle[i] == 0 {
            field[i] += p.amount;
            placed = true;
        }
    }
    if placed {
        Ok(())
    } else {
        Err(Error::Environment(format!(
            "placement region {:?} lies entirely inside obstacles",
            p.region
        )))
    }
}

fn all_food_reachable(shape: GridShape, obstacle: &[u8], food: &[f64], start: usize) -> bool {
    let seen = reachable_from(shape, obstacle, start);
    food.iter()
        .zip(&seen)
        .zip(obstacle)
        .all(|((&f, &s), &o)| f == 0.0 || o == 1 || s)
}

/// Builds the static channels described by `spec`. Deterministic in `spec`
/// (including its seed).
pub fn generate(spec: &EnvSpec) -> Result<GeneratedEnv> {
    spec.validate()?;
    let shape = spec.shape()?;
    let mut rng = rng::stream(spec.seed, &[STREAM_ENVIRONMENT]);
    let mut statics = StaticFields::empty(shape);
    let mut start = spec.start;
    let mut goal = spec.goal;
    let mut food_placements = spec.food.clone();

    match &spec.kind {
        EnvKind::Maze { cell_size } => {
            if shape.width < cell_size * 2 + 1 && shape.height < cell_size * 2 + 1 {
                return Err(Error::Environment("grid too small for a maze".into()));
            }
            let (obstacle, s, g) = carve_maze(shape, *cell_size, &mut rng);
            statics.obstacle = obstacle;
            start = s;
            goal = Some(g);
        }
        EnvKind::CoordinationArena {
            separation,
            cluster_radius,
            amount,
            jitter,
        } => {
            let (cx, cy) = (shape.width / 2, shape.height / 2);
            let r = *cluster_radius;
            if *separation < r + 1 || cx < separation + r || cx + separation + r >= shape.width {
                return Err(Error::Environment("coordination clusters do not fit the grid".into()));
            }
            let mut cluster = |x: usize| -> Result<Region> {
                let j = *jitter as i64;
                let dy = if j > 0 { rng.random_range(-j..=j) } else { 0 };
                let y = cy as i64 + dy;
                if y - (r as i64) < 0 || y + r as i64 >= shape.height as i64 {
                    return Err(Error::Environment("coordination cluster jitter leaves the grid".into()));
                }
                let y = y as usize;
                Ok(Region::new(x - r, y - r, x + r + 1, y + r + 1))
            };
            let a = cluster(cx - separation)?;
            let b = cluster(cx + separation)?;
            food_placements.insert(0, Placement { region: b, amount: *amount });
            food_placements.insert(0, Placement { region: a, amount: *amount });
            start = (cx, cy);
        }
        _ => {}
    }

    for r in &spec.walls {
        for i in r.indices(shape) {
            statics.obstacle[i] = 1;
        }
    }
    let start_idx = shape.index(start.0, start.1);
    if statics.obstacle[start_idx] == 1 {
        return Err(Error::Environment(format!("start {start:?} lies inside an obstacle")));
    }
    if let Some(g) = goal {
        if spec.goal_food > 0.0 {
            food_placements.push(Placement { region: g, amount: spec.goal_food });
        }
    }
    for p in &food_placements {
        place(&mut statics.food, &statics.obstacle, shape, p)?;
    }
    if !all_food_reachable(shape, &statics.obstacle, &statics.food, start_idx) {
        return Err(Error::Environment("some food is unreachable from the start".into()));
    }

    if let EnvKind::ObstacleField { density } = spec.kind {
        let mut candidates: Vec<usize> = (0..shape.cells())
            .filter(|&i| i != start_idx && statics.obstacle[i] == 0 && statics.food[i] == 0.0)
            .filter(|&i| {
                let (x, y) = shape.coords(i);
                goal.is_none_or(|g| !g.contains(x, y))
            })
            .collect();
        let target = (density * candidates.len() as f64).round() as usize;
        candidates.shuffle(&mut rng);
        let mut placed = 0;
        for i in candidates {
            if placed == target {
                break;
            }
            statics.obstacle[i] = 1;
            let ok = all_food_reachable(shape, &statics.obstacle, &statics.food, start_idx)
                && goal.is_none_or(|g| {
                    let seen = reachable_from(shape, &statics.obstacle, start_idx);
                    g.indices(shape).any(|j| seen[j])
                });
            if ok {
                placed += 1;
            } else {
                statics.obstacle[i] = 0;
            }
        }
    }

    for p in &spec.poison {
        place(&mut statics.poison, &statics.obstacle, shape, p)?;
    }

    if let Some(g) = goal {
        let seen = reachable_from(shape, &statics.obstacle, start_idx);
        if !g.indices(shape).any(|j| seen[j]) {
            return Err(Error::Environment("goal is unreachable from the start".into()));
        }
    }

    statics.chemoattractant = chemoattractant_field(
        shape,
        &statics.food,
        &statics.obstacle,
        spec.chemo.iterations(shape),
        spec.chemo.decay,
    );

    let mut decoy = None;
    if let EnvKind::DeceptiveChemo { amplitude } = spec.kind {
        let seen = reachable_from(shape, &statics.obstacle, start_idx);
        let food_cells: Vec<(usize, usize)> = (0..shape.cells())
            .filter(|&i| statics.food[i] > 0.0)
            .map(|i| shape.coords(i))
            .collect();
        let cheb = |a: (usize, usize), b: (usize, usize)| a.0.abs_diff(b.0).max(a.1.abs_diff(b.1));
        // The free cell farthest from all food (and not the start) hosts the decoy.
        let best = (0..shape.cells())
            .filter(|&i| seen[i] && i != start_idx && statics.food[i] == 0.0)
            .max_by_key(|&i| {
                let p = shape.coords(i);
                let d = food_cells.iter().map(|&f| cheb(p, f)).min().unwrap_or(usize::MAX);
                (d, std::cmp::Reverse(i))
            })
            .ok_or_else(|| Error::Environment("no free cell for the decoy".into()))?;
        let d = shape.coords(best);
        let c = &mut statics.chemoattractant;
        if amplitude <= c[best] {
            return Err(Error::Environment("decoy amplitude does not exceed the true gradient".into()));
        }
        for i in 0..shape.cells() {
            if seen[i] {
                let dist = cheb(shape.coords(i), d) as i32;
                c[i] = c[i].max(amplitude * spec.chemo.decay.powi(dist));
            }
        }
        decoy = Some(d);
    }

    statics.label_components();
    statics.validate()?;
    Ok(GeneratedEnv {
        statics,
        start,
        goal,
        food_regions: food_placements.iter().map(|p| p.region).collect(),
        chemo: spec.chemo,
        decoy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arena_with_food(x: usize, y: usize) -> EnvSpec {
        let mut s = EnvSpec::open_arena(12, 12, (1, 1));
        s.food.push(Placement { region: Region::cell(x, y), amount: 1.0 });
        s
    }

    #[test]
    fn open_arena_has_single_food_cell() {
        let g = generate(&arena_with_food(6, 6)).unwrap();
        assert!(g.statics.obstacle.iter().all(|&o| o == 0));
        let fed: Vec<usize> = (0..144).filter(|&i| g.statics.food[i] > 0.0).collect();
        assert_eq!(fed, vec![6 * 12 + 6]);
    }

    #[test]
    fn no_food_no_chemo() {
        let s = GridShape::new(5, 5).unwrap();
        let c = chemoattractant_field(s, &[0.0; 25], &[0; 25], 10, 0.9);
        assert!(c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn enclosure_blocks_chemo() {
        let s = GridShape::new(7, 7).unwrap();
        let mut obs = vec![0u8; 49];
        for y in 1..6 {
            for x in 1..6 {
                if x == 1 || x == 5 || y == 1 || y == 5 {
                    obs[y * 7 + x] = 1;
                }
            }
        }
        let mut food = vec![0.0; 49];
        food[3 * 7 + 3] = 1.0;
        let c = chemoattractant_field(s, &food, &obs, 30, 0.9);
        for y in 0..7 {
            for x in 0..7 {
                let inside = (2..5).contains(&x) && (2..5).contains(&y);
                if !inside {
                    assert_eq!(c[y * 7 + x], 0.0, "({x},{y})");
                } else {
                    assert!(c[y * 7 + x] > 0.0);
                }
            }
        }
    }

    #[test]
    fn unreachable_food_is_an_error() {
        let mut s = arena_with_food(6, 6);
        s.walls.push(Region::new(5, 5, 8, 6));
        s.walls.push(Region::new(5, 7, 8, 8));
        s.walls.push(Region::new(5, 6, 6, 7));
        s.walls.push(Region::new(7, 6, 8, 7));
        assert!(generate(&s).is_err());
        let mut s = arena_with_food(6, 6);
        s.walls.push(Region::new(6, 6, 7, 7));
        assert!(generate(&s).is_err(), "food entirely under a wall");
    }

    #[test]
    fn maze_is_connected_and_deterministic() {
        let spec = EnvSpec {
            kind: EnvKind::Maze { cell_size: 2 },
            seed: 11,
            ..EnvSpec::open_arena(20, 14, (0, 0))
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        let goal = a.goal.unwrap();
        let shape = a.statics.shape;
        let seen = reachable_from(shape, &a.statics.obstacle, shape.index(a.start.0, a.start.1));
        assert!(goal.indices(shape).all(|i| seen[i]));
        let c = generate(&spec.with_seed(12)).unwrap();
        assert_ne!(a.statics.obstacle, c.statics.obstacle);
    }

    #[test]
    fn obstacle_field_keeps_food_reachable() {
        let mut spec = arena_with_food(10, 10);
        spec.kind = EnvKind::ObstacleField { density: 0.35 };
        for seed in 0..5 {
            let g = generate(&spec.with_seed(seed)).unwrap();
            let shape = g.statics.shape;
            let n_obs = g.statics.obstacle.iter().filter(|&&o| o == 1).count();
            assert!(n_obs > 20);
            let seen = reachable_from(shape, &g.statics.obstacle, shape.index(1, 1));
            assert!(seen[10 * 12 + 10]);
            assert_eq!(g.statics.obstacle[shape.index(1, 1)], 0);
        }
    }

    #[test]
    fn deceptive_peak_has_no_food() {
        let mut spec = arena_with_food(2, 2);
        spec.start = (6, 6);
        spec.kind = EnvKind::DeceptiveChemo { amplitude: 1.0 };
        let g = generate(&spec).unwrap();
        let (dx, dy) = g.decoy.unwrap();
        let shape = g.statics.shape;
        let c = &g.statics.chemoattractant;
        let at = c[shape.index(dx, dy)];
        assert_eq!(g.statics.food[shape.index(dx, dy)], 0.0);
        for ny in dy.saturating_sub(1)..=(dy + 1).min(11) {
            for nx in dx.saturating_sub(1)..=(dx + 1).min(11) {
                if (nx, ny) != (dx, dy) {
                    assert!(c[shape.index(nx, ny)] < at);
                }
            }
        }
    }

    #[test]
    fn coordination_clusters_flank_the_start() {
        let spec = EnvSpec {
            kind: EnvKind::CoordinationArena { separation: 6, cluster_radius: 1, amount: 1.0, jitter: 2 },
            seed: 3,
            ..EnvSpec::open_arena(24, 16, (0, 0))
        };
        let g = generate(&spec).unwrap();
        assert_eq!(g.start, (12, 8));
        let (a, b) = (g.food_regions[0], g.food_regions[1]);
        assert!(a.x1 <= 12 && b.x0 >= 12);
    }
}
