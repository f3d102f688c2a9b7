//! The constraint layer between a cell's desired update and the world.
//!
//! The CPPN proposes a reservoir change and a mass change; [`constrain`] turns
//! that into what the cell can actually afford:
//!
//! * movement cost: changing the reservoir by `dR` costs `alpha * |dR|` mass,
//! * growth cost: growing mass by `dM > 0` costs `beta * dM` nutrient,
//! * conversion: shrinking mass by `|dM|` yields `beta * |dM|` nutrient,
//! * uptake: a living cell on food `F` gains `gamma * F` nutrient per update,
//! * pressure: the applied reservoir change forces the fluid with
//!   `dR / max(v, v_min)`.
//!
//! With these rates the per-cell energy `N + beta * M` only ever grows through
//! uptake and only shrinks through poison and movement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsParams {
    /// Mass paid per unit of reservoir change.
    pub alpha: f64,
    /// Nutrient paid per unit of mass grown (and recovered per unit converted).
    pub beta: f64,
    /// Nutrient uptake per unit of food per update.
    pub gamma: f64,
    /// Maximum reservoir per unit of mass.
    pub kappa: f64,
    /// Floor on the reservoir size in the pressure denominator.
    pub v_min: f64,
    /// Cap on the magnitude of the per-cell fluid density source.
    pub rho_cap: f64,
    pub delta_r_max: f64,
    pub delta_m_max: f64,
    /// Mass decay per unit poison per update.
    pub poison_rate: f64,
    /// Cells below this mass are dead.
    pub m_min: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            beta: 1.0,
            gamma: 0.05,
            kappa: 1.0,
            v_min: 1e-3,
            rho_cap: 0.1,
            delta_r_max: 0.5,
            delta_m_max: 0.5,
            poison_rate: 0.2,
            m_min: 1e-4,
        }
    }
}

impl PhysicsParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("kappa", self.kappa),
            ("v_min", self.v_min),
            ("rho_cap", self.rho_cap),
            ("delta_r_max", self.delta_r_max),
            ("delta_m_max", self.delta_m_max),
            ("poison_rate", self.poison_rate),
            ("m_min", self.m_min),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("physics.{name} must be finite and >= 0, got {v}")));
            }
        }
        for (name, v) in [
            ("beta", self.beta),
            ("delta_r_max", self.delta_r_max),
            ("delta_m_max", self.delta_m_max),
            ("v_min", self.v_min),
        ] {
            if v <= 0.0 {
                return Err(Error::Config(format!("physics.{name} must be > 0")));
            }
        }
        Ok(())
    }
}

/// A cell's desired changes after squashing.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateProposal {
    pub delta_r_desired: f64,
    pub delta_m_desired: f64,
}

impl UpdateProposal {
    /// Squashes raw CPPN outputs into the per-step caps with `tanh`.
    pub fn from_raw(raw_delta_r: f64, raw_delta_m: f64, p: &PhysicsParams) -> Self {
        Self {
            delta_r_desired: p.delta_r_max * raw_delta_r.tanh(),
            delta_m_desired: p.delta_m_max * raw_delta_m.tanh(),
        }
    }
}

/// Dynamic state of one cell plus the statics the physics reads.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CellState {
    pub mass: f64,
    pub reservoir: f64,
    pub nutrient: f64,
    pub food: f64,
    pub poison: f64,
}

/// What the constraint layer actually did to a cell.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AppliedUpdate {
    /// Reservoir change that was paid for in mass.
    pub delta_r: f64,
    /// Net mass change from conversion and growth.
    pub delta_m: f64,
    /// Nutrient spent on growth.
    pub nutrient_spent: f64,
    /// Mass spent on reservoir movement.
    pub mass_spent: f64,
    /// Nutrient recovered by converting mass.
    pub nutrient_gained_conversion: f64,
    pub uptake: f64,
    pub poison_loss: f64,
    /// Unpaid reservoir shrinkage forced by lost capacity or death.
    pub reservoir_collapse: f64,
    pub died: bool,
}

impl AppliedUpdate {
    /// Total reservoir change, paid and forced; this is what drives the fluid.
    pub fn total_delta_r(&self) -> f64 {
        self.delta_r - self.reservoir_collapse
    }
}

pub fn uptake(food: f64, mass: f64, p: &PhysicsParams) -> f64 {
    if mass >= p.m_min && mass > 0.0 {
        p.gamma * food
    } else {
        0.0
    }
}

pub fn growth_cost(delta_m: f64, p: &PhysicsParams) -> f64 {
    p.beta * delta_m.max(0.0)
}

pub fn movement_cost(delta_r: f64, p: &PhysicsParams) -> f64 {
    p.alpha * delta_r.abs()
}

/// Density source produced by a reservoir change, before capping.
pub fn reservoir_pressure(v: f64, delta_r_applied: f64, p: &PhysicsParams) -> f64 {
    delta_r_applied / v.max(p.v_min)
}

/// [`reservoir_pressure`] limited to `[-rho_cap, rho_cap]`.
pub fn capped_pressure(v: f64, delta_r_applied: f64, p: &PhysicsParams) -> f64 {
    reservoir_pressure(v, delta_r_applied, p).clamp(-p.rho_cap, p.rho_cap)
}

pub fn convert_mass(delta_m_negative: f64, p: &PhysicsParams) -> Result<f64> {
    if delta_m_negative > 0.0 {
        return Err(Error::PositiveConversion(delta_m_negative));
    }
    Ok(p.beta * delta_m_negative.abs())
}

/// Largest reservoir change in the direction of `desired` that keeps
/// `alpha*|dR| <= M`, `R + dR >= 0` and `R + dR <= kappa*(M - alpha*|dR|)`.
/// Assumes `0 <= R <= kappa*M`.
fn feasible_delta_r(desired: f64, mass: f64, reservoir: f64, p: &PhysicsParams) -> f64 {
    let (a, k) = (p.alpha, p.kappa);
    let headroom = (k * mass - reservoir).max(0.0);
    let mut bound = desired.abs();
    if a > 0.0 {
        bound = bound.min(mass / a);
    }
    if desired > 0.0 {
        bound = bound.min(headroom / (1.0 + k * a));
        bound.max(0.0)
    } else if desired < 0.0 {
        bound = bound.min(reservoir);
        if k * a > 1.0 {
            bound = bound.min(headroom / (k * a - 1.0));
        }
        -bound.max(0.0)
    } else {
        0.0
    }
}

/// Applies the ordered constraint pipeline to one cell:
/// uptake, poison, conversion, growth, reservoir change, death check.
pub fn constrain(state: CellState, proposal: UpdateProposal, p: &PhysicsParams) -> (AppliedUpdate, CellState) {
    let mut s = state;
    let mut out = AppliedUpdate::default();

    // 1. uptake
    out.uptake = uptake(s.food, s.mass, p);
    s.nutrient += out.uptake;

    // 2. poison
    out.poison_loss = s.mass.min(p.poison_rate * s.poison);
    s.mass -= out.poison_loss;

    // 3. conversion of mass into nutrient
    if proposal.delta_m_desired < 0.0 {
        let removed = proposal.delta_m_desired.abs().min(s.mass);
        s.mass -= removed;
        out.nutrient_gained_conversion = p.beta * removed;
        s.nutrient += out.nutrient_gained_conversion;
        out.delta_m = -removed;
    }

    // 4. growth paid in nutrient
    if proposal.delta_m_desired > 0.0 {
        let grown = proposal.delta_m_desired.min(s.nutrient / p.beta).max(0.0);
        s.mass += grown;
        out.nutrient_spent = p.beta * grown;
        s.nutrient = (s.nutrient - out.nutrient_spent).max(0.0);
        out.delta_m = grown;
    }

    // Lost mass may have shrunk the reservoir's capacity.
    let capacity = p.kappa * s.mass;
    if s.reservoir > capacity {
        out.reservoir_collapse += s.reservoir - capacity;
        s.reservoir = capacity;
    }

    // 5. reservoir change paid in mass
    let dr = feasible_delta_r(proposal.delta_r_desired, s.mass, s.reservoir, p);
    out.delta_r = dr;
    out.mass_spent = movement_cost(dr, p);
    s.mass = (s.mass - out.mass_spent).max(0.0);
    s.reservoir = (s.reservoir + dr).max(0.0);
    let capacity = p.kappa * s.mass;
    if s.reservoir > capacity {
        // Rounding residue only.
        out.reservoir_collapse += s.reservoir - capacity;
        s.reservoir = capacity;
    }

    // 6. death keeps nutrient in place for the flow to carry away
    if s.mass < p.m_min && (state.mass >= p.m_min || s.reservoir > 0.0) {
        out.died = state.mass >= p.m_min;
        out.reservoir_collapse += s.reservoir;
        s.reservoir = 0.0;
    }

    (out, s)
}
