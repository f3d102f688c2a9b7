//! D2Q9 lattice-Boltzmann fluid with BGK collisions and bounce-back walls,
//! plus conservative donor-cell transport of a passive scalar.
//!
//! Direction order: `e0=(0,0) e1=(1,0) e2=(0,1) e3=(-1,0) e4=(0,-1)
//! e5=(1,1) e6=(-1,1) e7=(-1,-1) e8=(1,-1)`. Distributions are stored
//! cell-major (`f[cell * 9 + i]`) so each grid row is one contiguous chunk.

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::substrate::GridShape;

pub const Q: usize = 9;
pub const EX: [i64; Q] = [0, 1, 0, -1, 0, 1, -1, -1, 1];
pub const EY: [i64; Q] = [0, 0, 1, 0, -1, 1, 1, -1, -1];
pub const W: [f64; Q] = [
    4.0 / 9.0,
    1.0 / 9.0,
    1.0 / 9.0,
    1.0 / 9.0,
    1.0 / 9.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
];
pub const OPPOSITE: [usize; Q] = [0, 3, 4, 1, 2, 7, 8, 5, 6];

/// Velocities are forced to zero below this density.
pub const RHO_FLOOR: f64 = 1e-9;
/// Largest lattice speed tolerated before the run is declared unstable.
pub const MAX_SPEED: f64 = 0.3;
/// Most negative population tolerated.
pub const NEGATIVE_TOLERANCE: f64 = -1e-12;

pub fn equilibrium(rho: f64, ux: f64, uy: f64) -> [f64; Q] {
    let usq = ux * ux + uy * uy;
    let mut f = [0.0; Q];
    for i in 0..Q {
        let eu = EX[i] as f64 * ux + EY[i] as f64 * uy;
        f[i] = W[i] * rho * (1.0 + 3.0 * eu + 4.5 * eu * eu - 1.5 * usq);
    }
    f
}

/// Density and velocity of one cell's populations.
#[inline]
pub fn moments(f: &[f64]) -> (f64, f64, f64) {
    let mut rho = 0.0;
    let mut mx = 0.0;
    let mut my = 0.0;
    for i in 0..Q {
        rho += f[i];
        mx += f[i] * EX[i] as f64;
        my += f[i] * EY[i] as f64;
    }
    if rho < RHO_FLOOR {
        (rho, 0.0, 0.0)
    } else {
        (rho, mx / rho, my / rho)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroscopicFields {
    pub rho: Vec<f64>,
    pub ux: Vec<f64>,
    pub uy: Vec<f64>,
}

impl MacroscopicFields {
    pub fn zeros(n: usize) -> Self {
        Self {
            rho: vec![0.0; n],
            ux: vec![0.0; n],
            uy: vec![0.0; n],
        }
    }

    pub fn speed(&self, idx: usize) -> f64 {
        self.ux[idx].hypot(self.uy[idx])
    }
}

#[derive(Debug, Clone)]
pub struct Lattice {
    shape: GridShape,
    tau: f64,
    f: Vec<f64>,
    scratch: Vec<f64>,
    steps: u64,
    exec: Execution,
}

impl Lattice {
    /// A fluid at rest with unit density on every non-obstacle cell.
    pub fn at_rest(shape: GridShape, obstacles: &[u8], tau: f64) -> Result<Self> {
        let eq = equilibrium(1.0, 0.0, 0.0);
        let mut f = vec![0.0; shape.cells() * Q];
        for (cell, chunk) in f.chunks_mut(Q).enumerate() {
            if obstacles[cell] == 0 {
                chunk.copy_from_slice(&eq);
            }
        }
        Self::from_distributions(shape, f, tau)
    }

    pub fn from_distributions(shape: GridShape, f: Vec<f64>, tau: f64) -> Result<Self> {
        if !(tau > 0.5 && tau.is_finite()) {
            return Err(Error::Config(format!("tau must exceed 0.5, got {tau}")));
        }
        if f.len() != shape.cells() * Q {
            return Err(Error::ShapeMismatch {
                field: "distributions".into(),
                expected: shape.cells() * Q,
                got: f.len(),
            });
        }
        Ok(Self {
            shape,
            tau,
            scratch: vec![0.0; f.len()],
            f,
            steps: 0,
            exec: Execution::Sequential,
        })
    }

    /// Row-parallel stepping when `exec` is parallel; results are identical.
    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn distributions(&self) -> &[f64] {
        &self.f
    }

    pub fn cell(&self, idx: usize) -> &[f64] {
        &self.f[idx * Q..(idx + 1) * Q]
    }

    pub fn total_mass(&self) -> f64 {
        self.f.iter().sum()
    }

    pub fn macroscopic(&self) -> MacroscopicFields {
        let n = self.shape.cells();
        let mut m = MacroscopicFields::zeros(n);
        for cell in 0..n {
            let (rho, ux, uy) = moments(self.cell(cell));
            m.rho[cell] = rho;
            m.ux[cell] = ux;
            m.uy[cell] = uy;
        }
        m
    }

    /// One inject-collide-stream cycle. `sources` is a per-cell density
    /// increment distributed isotropically as `w_i * source`.
    pub fn step(&mut self, obstacles: &[u8], sources: &[f64]) -> Result<()> {
        let shape = self.shape;
        let n = shape.cells();
        if obstacles.len() != n || sources.len() != n {
            return Err(Error::ShapeMismatch {
                field: "fluid step inputs".into(),
                expected: n,
                got: obstacles.len().min(sources.len()),
            });
        }
        for (idx, (&s, &o)) in sources.iter().zip(obstacles).enumerate() {
            if !s.is_finite() || (o == 1 && s != 0.0) {
                let (x, y) = shape.coords(idx);
                return Err(Error::InvalidSource {
                    x,
                    y,
                    reason: if s.is_finite() {
                        "source on an obstacle cell".into()
                    } else {
                        format!("non-finite source {s}")
                    },
                });
            }
        }

        let width = shape.width;
        let omega = 1.0 / self.tau;
        let step = self.steps;
        let row_len = width * Q;

        // inject + collide, in place
        let failures = std::sync::Mutex::new(Vec::<(usize, Error)>::new());
        exec::for_each_chunk_mut(&mut self.f, row_len, self.exec, |y, row| {
            for x in 0..width {
                let idx = y * width + x;
                if obstacles[idx] == 1 {
                    continue;
                }
                let f = &mut row[x * Q..(x + 1) * Q];
                let src = sources[idx];
                if src != 0.0 {
                    for i in 0..Q {
                        f[i] += W[i] * src;
                    }
                }
                let (rho, ux, uy) = moments(f);
                let speed = ux.hypot(uy);
                let eq = equilibrium(rho, ux, uy);
                let mut bad = None;
                if !(speed <= MAX_SPEED) {
                    bad = Some(format!("speed {speed} exceeds {MAX_SPEED}"));
                }
                for i in 0..Q {
                    f[i] -= omega * (f[i] - eq[i]);
                    if bad.is_none() && !(f[i] >= NEGATIVE_TOLERANCE && f[i].is_finite()) {
                        bad = Some(format!("population f{i} = {}", f[i]));
                    }
                }
                if let Some(reason) = bad {
                    failures
                        .lock()
                        .expect("failure lock")
                        .push((idx, Error::Instability { step, x, y, reason }));
                    return;
                }
            }
        });
        let mut failures = failures.into_inner().expect("failure lock");
        if !failures.is_empty() {
            failures.sort_by_key(|(idx, _)| *idx);
            return Err(failures.swap_remove(0).1);
        }

        // stream with half-way bounce-back, pull form
        let post = &self.f;
        exec::for_each_chunk_mut(&mut self.scratch, row_len, self.exec, |y, row| {
            for x in 0..width {
                let idx = y * width + x;
                let out = &mut row[x * Q..(x + 1) * Q];
                if obstacles[idx] == 1 {
                    out.fill(0.0);
                    continue;
                }
                for i in 0..Q {
                    let sx = x as i64 - EX[i];
                    let sy = y as i64 - EY[i];
                    let open = shape.contains(sx, sy)
                        && obstacles[sy as usize * width + sx as usize] == 0;
                    out[i] = if open {
                        post[(sy as usize * width + sx as usize) * Q + i]
                    } else {
                        post[idx * Q + OPPOSITE[i]]
                    };
                }
            }
        });
        std::mem::swap(&mut self.f, &mut self.scratch);
        self.steps += 1;
        Ok(())
    }

    /// Re-initialises cells whose obstacle status changed: new walls are
    /// emptied, freed cells get fluid at rest with the mean fluid density.
    pub fn update_obstacles(&mut self, old: &[u8], new: &[u8]) {
        let n = self.shape.cells();
        let (mut sum, mut count) = (0.0, 0usize);
        for cell in 0..n {
            if old[cell] == 0 && new[cell] == 0 {
                sum += self.cell(cell).iter().sum::<f64>();
                count += 1;
            }
        }
        let rho = if count > 0 { sum / count as f64 } else { 1.0 };
        let eq = equilibrium(rho, 0.0, 0.0);
        for cell in 0..n {
            let f = &mut self.f[cell * Q..(cell + 1) * Q];
            match (old[cell], new[cell]) {
                (0, 1) => f.fill(0.0),
                (1, 0) => f.copy_from_slice(&eq),
                _ => {}
            }
        }
    }
}

/// One first-order upwind finite-volume step of `n` under velocity `(ux, uy)`.
///
/// Face velocities are the mean of the two adjacent cell velocities; faces
/// touching an obstacle or the grid edge carry no flux. Outgoing fluxes of a
/// cell are scaled down together when they would exceed its content, so the
/// field stays non-negative and the total is conserved.
pub fn advect_scalar(
    shape: GridShape,
    n: &[f64],
    ux: &[f64],
    uy: &[f64],
    obstacles: &[u8],
    dt: f64,
) -> Result<Vec<f64>> {
    let cells = shape.cells();
    let mut cfl: f64 = 0.0;
    for i in 0..cells {
        if obstacles[i] == 0 {
            cfl = cfl.max(ux[i].abs().max(uy[i].abs()) * dt);
        }
    }
    if !(cfl <= 0.5) {
        return Err(Error::Cfl(cfl));
    }
    let w = shape.width;
    // (donor, receiver, amount) for every open face.
    let mut fluxes: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * cells);
    let mut outflow = vec![0.0; cells];
    let mut face = |a: usize, b: usize, u_face: f64| {
        let courant = u_face * dt;
        let (donor, receiver, amount) = if courant > 0.0 {
            (a, b, courant * n[a])
        } else {
            (b, a, -courant * n[b])
        };
        if amount > 0.0 {
            outflow[donor] += amount;
            fluxes.push((donor, receiver, amount));
        }
    };
    for y in 0..shape.height {
        for x in 0..w {
            let a = y * w + x;
            if obstacles[a] == 1 {
                continue;
            }
            if x + 1 < w && obstacles[a + 1] == 0 {
                face(a, a + 1, 0.5 * (ux[a] + ux[a + 1]));
            }
            if y + 1 < shape.height && obstacles[a + w] == 0 {
                face(a, a + w, 0.5 * (uy[a] + uy[a + w]));
            }
        }
    }
    let scale: Vec<f64> = outflow
        .iter()
        .zip(n)
        .map(|(&out, &have)| if out > have { have / out } else { 1.0 })
        .collect();
    let mut next = n.to_vec();
    for (donor, receiver, amount) in fluxes {
        let moved = amount * scale[donor];
        next[donor] -= moved;
        next[receiver] += moved;
    }
    for v in &mut next {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(w: usize, h: usize) -> GridShape {
        GridShape::new(w, h).unwrap()
    }

    #[test]
    fn rest_equilibrium_is_weights() {
        let f = equilibrium(1.0, 0.0, 0.0);
        assert_eq!(f, W);
        assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_direction_moments() {
        let mut f = [0.0; Q];
        f[1] = 1.0;
        assert_eq!(moments(&f), (1.0, 1.0, 0.0));
    }

    #[test]
    fn rejects_unstable_tau() {
        let s = shape(4, 4);
        assert!(Lattice::at_rest(s, &[0; 16], 0.5).is_err());
    }

    #[test]
    fn source_on_obstacle_is_rejected() {
        let s = shape(4, 4);
        let mut obs = vec![0u8; 16];
        obs[5] = 1;
        let mut lat = Lattice::at_rest(s, &obs, 0.8).unwrap();
        let mut src = vec![0.0; 16];
        src[5] = 0.01;
        assert!(matches!(lat.step(&obs, &src), Err(Error::InvalidSource { .. })));
    }

    #[test]
    fn blowup_is_reported_with_location() {
        let s = shape(4, 4);
        let obs = vec![0u8; 16];
        let mut f = vec![0.0; 16 * Q];
        f[..Q].copy_from_slice(&W);
        f[5 * Q + 1] = 1.0; // u = (1, 0): far beyond the low-Mach limit
        let mut lat = Lattice::from_distributions(s, f, 0.8).unwrap();
        match lat.step(&obs, &[0.0; 16]) {
            Err(Error::Instability { x: 1, y: 1, step: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_velocity_leaves_scalar() {
        let s = shape(5, 5);
        let n: Vec<f64> = (0..25).map(|i| i as f64 * 0.1).collect();
        let z = vec![0.0; 25];
        assert_eq!(advect_scalar(s, &n, &z, &z, &[0; 25], 1.0).unwrap(), n);
    }

    #[test]
    fn cfl_violation_errors() {
        let s = shape(3, 3);
        let u = vec![0.6; 9];
        let z = vec![0.0; 9];
        assert!(matches!(advect_scalar(s, &z, &u, &z, &[0; 9], 1.0), Err(Error::Cfl(_))));
    }

    #[test]
    fn obstacles_block_flux() {
        let s = shape(3, 3);
        let mut obs = vec![0u8; 9];
        obs[4] = 1;
        let mut n = vec![0.0; 9];
        n[3] = 1.0;
        let u = vec![0.4; 9];
        let z = vec![0.0; 9];
        let out = advect_scalar(s, &n, &u, &z, &obs, 1.0).unwrap();
        assert_eq!(out[3], 1.0);
        assert_eq!(out[4], 0.0);
    }
}
