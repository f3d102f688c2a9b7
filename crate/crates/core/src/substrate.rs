//! The grid world: channel storage, perception, and aggregate queries.
//!
//! All per-cell fields are stored channel-major as row-major `Vec<f64>`
//! (index `y * width + x`). Hidden channels live in one contiguous buffer
//! with channel `k` at `k * width * height`.
//!
//! Perception is the 3x3 neighborhood scanned row-major from `(x-1, y-1)` to
//! `(x+1, y+1)`; per neighbor the channels are, in order,
//! `[obstacle, poison, food, chemoattractant, mass, reservoir, nutrient, hidden_0..hidden_{K-1}]`.
//! Neighbors outside the grid read as obstacle cells (`O = 1`, everything else 0).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of non-hidden channels each cell exposes to perception.
pub const BASE_CHANNELS: usize = 7;
/// Default number of hidden signalling channels.
pub const DEFAULT_K_HIDDEN: usize = 4;

pub const CH_OBSTACLE: usize = 0;
pub const CH_POISON: usize = 1;
pub const CH_FOOD: usize = 2;
pub const CH_CHEMO: usize = 3;
pub const CH_MASS: usize = 4;
pub const CH_RESERVOIR: usize = 5;
pub const CH_NUTRIENT: usize = 6;
pub const CH_HIDDEN: usize = 7;

/// Channels per neighbor for `k_hidden` hidden channels.
pub fn channels(k_hidden: usize) -> usize {
    BASE_CHANNELS + k_hidden
}

/// Length of a perception vector for `k_hidden` hidden channels.
pub fn perception_len(k_hidden: usize) -> usize {
    9 * channels(k_hidden)
}

/// Index of `channel` of neighbor `(dx, dy)` (each in -1..=1) inside a perception vector.
pub fn perception_index(k_hidden: usize, dx: i64, dy: i64, channel: usize) -> usize {
    let neighbor = ((dy + 1) * 3 + (dx + 1)) as usize;
    neighbor * channels(k_hidden) + channel
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    pub width: usize,
    pub height: usize,
}

impl GridShape {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width < 3 || height < 3 {
            return Err(Error::GridTooSmall { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.width, idx / self.width)
    }

    #[inline]
    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn check(&self, x: i64, y: i64) -> Result<usize> {
        if self.contains(x, y) {
            Ok(self.index(x as usize, y as usize))
        } else {
            Err(Error::OutOfBounds {
                x,
                y,
                width: self.width,
                height: self.height,
            })
        }
    }
}

/// The environment-defined channels of a world.
///
/// `obstacle_label` tags every obstacle cell with the id of the rigid body it
/// belongs to (0 for free cells), which is what `MoveObstacle` translates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticFields {
    pub shape: GridShape,
    pub obstacle: Vec<u8>,
    pub obstacle_label: Vec<u32>,
    pub poison: Vec<f64>,
    pub food: Vec<f64>,
    pub chemoattractant: Vec<f64>,
}

impl StaticFields {
    pub fn empty(shape: GridShape) -> Self {
        let n = shape.cells();
        Self {
            shape,
            obstacle: vec![0; n],
            obstacle_label: vec![0; n],
            poison: vec![0.0; n],
            food: vec![0.0; n],
            chemoattractant: vec![0.0; n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.shape.cells();
        let lens = [
            ("obstacle", self.obstacle.len()),
            ("obstacle_label", self.obstacle_label.len()),
            ("poison", self.poison.len()),
            ("food", self.food.len()),
            ("chemoattractant", self.chemoattractant.len()),
        ];
        for (field, got) in lens {
            if got != n {
                return Err(Error::ShapeMismatch {
                    field: field.into(),
                    expected: n,
                    got,
                });
            }
        }
        for (name, f) in [
            ("poison", &self.poison),
            ("food", &self.food),
            ("chemoattractant", &self.chemoattractant),
        ] {
            if let Some(i) = f.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Invariant(format!(
                    "{name} at cell {i} is {} (must be finite and >= 0)",
                    f[i]
                )));
            }
        }
        if self.obstacle.iter().any(|&o| o > 1) {
            return Err(Error::Invariant("obstacle values must be 0 or 1".into()));
        }
        Ok(())
    }

    /// Assigns a distinct label to each 4-connected obstacle component that is
    /// still unlabeled.
    pub fn label_components(&mut self) {
        let GridShape { width, height } = self.shape;
        let mut next = self.obstacle_label.iter().copied().max().unwrap_or(0) + 1;
        let mut stack = Vec::new();
        for start in 0..self.shape.cells() {
            if self.obstacle[start] == 0 || self.obstacle_label[start] != 0 {
                continue;
            }
            self.obstacle_label[start] = next;
            stack.push(start);
            while let Some(i) = stack.pop() {
                let (x, y) = (i % width, i / width);
                let mut visit = |j: usize| {
                    if self.obstacle[j] == 1 && self.obstacle_label[j] == 0 {
                        self.obstacle_label[j] = next;
                        stack.push(j);
                    }
                };
                if x > 0 {
                    visit(i - 1);
                }
                if x + 1 < width {
                    visit(i + 1);
                }
                if y > 0 {
                    visit(i - width);
                }
                if y + 1 < height {
                    visit(i + width);
                }
            }
            next += 1;
        }
    }
}

/// The full simulation state of one world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub shape: GridShape,
    pub k_hidden: usize,
    pub obstacle: Vec<u8>,
    pub obstacle_label: Vec<u32>,
    pub poison: Vec<f64>,
    pub food: Vec<f64>,
    pub chemoattractant: Vec<f64>,
    pub mass: Vec<f64>,
    pub reservoir: Vec<f64>,
    pub nutrient: Vec<f64>,
    /// `k_hidden` channels, channel-major.
    pub hidden: Vec<f64>,
}

impl WorldState {
    pub fn new(statics: StaticFields, k_hidden: usize) -> Result<Self> {
        if k_hidden == 0 {
            return Err(Error::Config("k_hidden must be at least 1".into()));
        }
        GridShape::new(statics.shape.width, statics.shape.height)?;
        statics.validate()?;
        let n = statics.shape.cells();
        Ok(Self {
            shape: statics.shape,
            k_hidden,
            obstacle: statics.obstacle,
            obstacle_label: statics.obstacle_label,
            poison: statics.poison,
            food: statics.food,
            chemoattractant: statics.chemoattractant,
            mass: vec![0.0; n],
            reservoir: vec![0.0; n],
            nutrient: vec![0.0; n],
            hidden: vec![0.0; n * k_hidden],
        })
    }

    pub fn statics(&self) -> StaticFields {
        StaticFields {
            shape: self.shape,
            obstacle: self.obstacle.clone(),
            obstacle_label: self.obstacle_label.clone(),
            poison: self.poison.clone(),
            food: self.food.clone(),
            chemoattractant: self.chemoattractant.clone(),
        }
    }

    #[inline]
    pub fn hidden_at(&self, k: usize, idx: usize) -> f64 {
        self.hidden[k * self.shape.cells() + idx]
    }

    #[inline]
    pub fn set_hidden(&mut self, k: usize, idx: usize, value: f64) {
        let n = self.shape.cells();
        self.hidden[k * n + idx] = value;
    }

    #[inline]
    fn channel_at(&self, idx: usize, channel: usize) -> f64 {
        match channel {
            CH_OBSTACLE => self.obstacle[idx] as f64,
            CH_POISON => self.poison[idx],
            CH_FOOD => self.food[idx],
            CH_CHEMO => self.chemoattractant[idx],
            CH_MASS => self.mass[idx],
            CH_RESERVOIR => self.reservoir[idx],
            CH_NUTRIENT => self.nutrient[idx],
            k => self.hidden_at(k - CH_HIDDEN, idx),
        }
    }

    /// Writes the perception vector of `(x, y)` into `out`, which must have
    /// length [`perception_len`].
    pub fn perceive_into(&self, x: usize, y: usize, out: &mut [f64]) {
        let c = channels(self.k_hidden);
        debug_assert_eq!(out.len(), 9 * c);
        let n = self.shape.cells();
        let mut slot = 0;
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                let cell = &mut out[slot..slot + c];
                if self.shape.contains(nx, ny) {
                    let i = self.shape.index(nx as usize, ny as usize);
                    cell[CH_OBSTACLE] = self.obstacle[i] as f64;
                    cell[CH_POISON] = self.poison[i];
                    cell[CH_FOOD] = self.food[i];
                    cell[CH_CHEMO] = self.chemoattractant[i];
                    cell[CH_MASS] = self.mass[i];
                    cell[CH_RESERVOIR] = self.reservoir[i];
                    cell[CH_NUTRIENT] = self.nutrient[i];
                    for k in 0..self.k_hidden {
                        cell[CH_HIDDEN + k] = self.hidden[k * n + i];
                    }
                } else {
                    cell.fill(0.0);
                    cell[CH_OBSTACLE] = 1.0;
                }
                slot += c;
            }
        }
    }

    pub fn perception_vector(&self, x: usize, y: usize) -> Result<Vec<f64>> {
        self.shape.check(x as i64, y as i64)?;
        let mut out = vec![0.0; perception_len(self.k_hidden)];
        self.perceive_into(x, y, &mut out);
        Ok(out)
    }

    /// Reads one channel of one cell by the perception channel index.
    pub fn read(&self, x: usize, y: usize, channel: usize) -> f64 {
        self.channel_at(self.shape.index(x, y), channel)
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn total_nutrient(&self) -> f64 {
        self.nutrient.iter().sum()
    }

    pub fn total_reservoir(&self) -> f64 {
        self.reservoir.iter().sum()
    }

    /// Mass summed over cells whose x coordinate lies in `xs`.
    pub fn mass_in_columns(&self, xs: std::ops::Range<usize>) -> f64 {
        let w = self.shape.width;
        self.mass
            .iter()
            .enumerate()
            .filter(|(i, _)| xs.contains(&(i % w)))
            .map(|(_, m)| m)
            .sum()
    }

    /// Checks every world invariant; `kappa` is the reservoir capacity per unit mass.
    pub fn validate(&self, kappa: f64) -> Result<()> {
        let n = self.shape.cells();
        for (name, len) in [
            ("mass", self.mass.len()),
            ("reservoir", self.reservoir.len()),
            ("nutrient", self.nutrient.len()),
        ] {
            if len != n {
                return Err(Error::ShapeMismatch {
                    field: name.into(),
                    expected: n,
                    got: len,
                });
            }
        }
        if self.hidden.len() != n * self.k_hidden {
            return Err(Error::ShapeMismatch {
                field: "hidden".into(),
                expected: n * self.k_hidden,
                got: self.hidden.len(),
            });
        }
        self.statics().validate()?;
        let tol = 1e-12;
        for i in 0..n {
            let (m, r, nu) = (self.mass[i], self.reservoir[i], self.nutrient[i]);
            let (x, y) = self.shape.coords(i);
            if !(m.is_finite() && r.is_finite() && nu.is_finite()) {
                return Err(Error::Invariant(format!("non-finite dynamics at ({x}, {y})")));
            }
            if m < 0.0 || r < 0.0 || nu < 0.0 {
                return Err(Error::Invariant(format!(
                    "negative dynamics at ({x}, {y}): M={m} R={r} N={nu}"
                )));
            }
            if r > kappa * m * (1.0 + tol) + tol * f64::MIN_POSITIVE {
                return Err(Error::Invariant(format!(
                    "reservoir {r} exceeds capacity {} at ({x}, {y})",
                    kappa * m
                )));
            }
            if self.obstacle[i] == 1 {
                let hidden_zero = (0..self.k_hidden).all(|k| self.hidden_at(k, i) == 0.0);
                if m != 0.0 || r != 0.0 || nu != 0.0 || !hidden_zero {
                    return Err(Error::Invariant(format!(
                        "obstacle cell ({x}, {y}) carries dynamic state"
                    )));
                }
            }
            for k in 0..self.k_hidden {
                let h = self.hidden_at(k, i);
                if !(-1.0..=1.0).contains(&h) {
                    return Err(Error::Invariant(format!(
                        "hidden channel {k} at ({x}, {y}) is {h}, outside [-1, 1]"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Zeroes all dynamic and hidden state of cell `idx`.
    pub fn clear_cell(&mut self, idx: usize) {
        self.mass[idx] = 0.0;
        self.reservoir[idx] = 0.0;
        self.nutrient[idx] = 0.0;
        let n = self.shape.cells();
        for k in 0..self.k_hidden {
            self.hidden[k * n + idx] = 0.0;
        }
    }
}
