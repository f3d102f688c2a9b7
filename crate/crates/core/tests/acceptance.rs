//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero when any
//! criterion fails.

mod common;

use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rand::Rng as _;
use slimeworld::cli_io::RunConfig;
use slimeworld::cppn::{Genome, Phenotype};
use slimeworld::exec::Execution;
use slimeworld::fluid::{advect_scalar, equilibrium, Lattice, Q};
use slimeworld::harness::{
    baseline_genome, coordination_fixture, coordination_test, corridor_fixture, detour_fixture, harness_lifecycle,
    pathfinding_test, Thresholds,
};
use slimeworld::lifecycle::LifecycleConfig;
use slimeworld::neat::{crossover, init_population, mutate, next_generation, speciate, EvolutionConfig};
use slimeworld::physics::{constrain, CellState, PhysicsParams, UpdateProposal};
use slimeworld::substrate::GridShape;

const ENERGY_REL_TOL: f64 = 1e-9;
const CONSTRAIN_BUDGET: Duration = Duration::from_secs(1);
const LBM_DRIFT_TOL: f64 = 1e-12;
const LBM_BUDGET: Duration = Duration::from_secs(10);
const EQUILIBRIUM_TOL: f64 = 1e-12;
const ADVECTION_TOL: f64 = 1e-12;
const SPIKE_TOL: f64 = 0.05;
const CPPN_TOL: f64 = 1e-12;
const CORRIDOR_STEPS: usize = 143;
const DETOUR_STEPS: usize = 191;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, ok: String, bad: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(bad)
    }
}

fn energy(s: &CellState, p: &PhysicsParams) -> f64 {
    s.nutrient + p.beta * s.mass
}

fn c1_constraint_energy() -> Outcome {
    let p = PhysicsParams::default();
    let mut rng = common::rng(1);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let mass = rng.random_range(0.0..2.0);
        let state = CellState {
            mass,
            reservoir: rng.random_range(0.0..=p.kappa * mass),
            nutrient: rng.random_range(0.0..2.0),
            food: 0.0,
            poison: 0.0,
        };
        let proposal = UpdateProposal {
            delta_r_desired: rng.random_range(-p.delta_r_max..=p.delta_r_max),
            delta_m_desired: rng.random_range(-p.delta_m_max..=p.delta_m_max),
        };
        let (applied, next) = constrain(state, proposal, &p);
        let delta_e = energy(&next, &p) - energy(&state, &p);
        let expected = -p.beta * p.alpha * applied.delta_r.abs();
        let rel = (delta_e - expected).abs() / energy(&state, &p).abs().max(1.0);
        if next.mass < 0.0 || next.nutrient < 0.0 || next.reservoir < 0.0 {
            return Err(format!("negative state {next:?}"));
        }
        worst = worst.max(rel);
    }
    let elapsed = start.elapsed();
    check(
        worst <= ENERGY_REL_TOL && elapsed < CONSTRAIN_BUDGET,
        format!("max relative energy error {worst:.2e}, {elapsed:?}"),
        format!("max relative energy error {worst:.2e} (tol {ENERGY_REL_TOL:e}), {elapsed:?}"),
    )
}

fn c2_lbm_conservation() -> Outcome {
    let shape = GridShape::new(64, 64).unwrap();
    let n = shape.cells();
    let mut rng = common::rng(2);
    let mut f = Vec::with_capacity(n * Q);
    for _ in 0..n {
        let rho = rng.random_range(0.95..1.05);
        let eq = equilibrium(rho, rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03));
        f.extend_from_slice(&eq);
    }
    let obstacles = vec![0u8; n];
    let start = Instant::now();

    let mut lattice = Lattice::from_distributions(shape, f.clone(), 0.8).unwrap();
    let m0 = lattice.total_mass();
    let none = vec![0.0; n];
    for _ in 0..1000 {
        lattice.step(&obstacles, &none).map_err(|e| e.to_string())?;
    }
    let drift = (lattice.total_mass() - m0).abs() / m0;

    let mut lattice = Lattice::from_distributions(shape, f, 0.8).unwrap();
    let mut ledger: f64 = 0.0;
    for _ in 0..1000 {
        let sources: Vec<f64> = (0..n).map(|_| rng.random_range(-1e-4..1e-4)).collect();
        let before = lattice.total_mass();
        lattice.step(&obstacles, &sources).map_err(|e| e.to_string())?;
        let injected: f64 = sources.iter().sum();
        ledger = ledger.max((lattice.total_mass() - before - injected).abs() / before);
    }
    let elapsed = start.elapsed();
    check(
        drift < LBM_DRIFT_TOL && ledger < LBM_DRIFT_TOL && elapsed < LBM_BUDGET,
        format!("relative drift {drift:.2e}, injection ledger {ledger:.2e}, {elapsed:?}"),
        format!("relative drift {drift:.2e}, injection ledger {ledger:.2e} (tol {LBM_DRIFT_TOL:e}), {elapsed:?}"),
    )
}

fn c3_equilibrium_fixed_point() -> Outcome {
    let shape = GridShape::new(16, 16).unwrap();
    let n = shape.cells();
    let obstacles = vec![0u8; n];
    let initial: Vec<f64> = (0..n).flat_map(|_| equilibrium(1.0, 0.0, 0.0)).collect();
    let mut lattice = Lattice::from_distributions(shape, initial.clone(), 0.8).unwrap();
    for _ in 0..100 {
        lattice.step(&obstacles, &vec![0.0; n]).map_err(|e| e.to_string())?;
    }
    let worst = lattice
        .distributions()
        .iter()
        .zip(&initial)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    check(
        worst <= EQUILIBRIUM_TOL,
        format!("max deviation {worst:.2e} after 100 steps"),
        format!("max deviation {worst:.2e} (tol {EQUILIBRIUM_TOL:e})"),
    )
}

fn c4_advection() -> Outcome {
    let mut rng = common::rng(4);
    let mut worst: f64 = 0.0;
    for trial in 0..500 {
        let (w, h) = (rng.random_range(3..20), rng.random_range(3..20));
        let shape = GridShape::new(w, h).unwrap();
        let cells = shape.cells();
        let obstacles: Vec<u8> = (0..cells).map(|_| u8::from(rng.random_bool(0.15))).collect();
        let n: Vec<f64> = (0..cells)
            .map(|i| if obstacles[i] == 0 && rng.random_bool(0.7) { rng.random_range(0.0..3.0) } else { 0.0 })
            .collect();
        let ux: Vec<f64> = (0..cells).map(|_| rng.random_range(-0.5..0.5)).collect();
        let uy: Vec<f64> = (0..cells).map(|_| rng.random_range(-0.5..0.5)).collect();
        let next = advect_scalar(shape, &n, &ux, &uy, &obstacles, 1.0).map_err(|e| e.to_string())?;
        if let Some(v) = next.iter().find(|v| **v < 0.0) {
            return Err(format!("trial {trial}: negative value {v}"));
        }
        let (a, b): (f64, f64) = (n.iter().sum(), next.iter().sum());
        worst = worst.max((a - b).abs() / a.max(1.0));
    }

    // spike in the middle row of a 21x3 channel; uy = 0 keeps it there
    let shape = GridShape::new(21, 3).unwrap();
    let mut n = vec![0.0; 63];
    n[21 + 5] = 1.0;
    let mut reference = vec![0.0; 21];
    reference[5] = 1.0;
    let ux = vec![0.2; 63];
    let uy = vec![0.0; 63];
    let obstacles = vec![0u8; 63];
    for _ in 0..5 {
        n = advect_scalar(shape, &n, &ux, &uy, &obstacles, 1.0).map_err(|e| e.to_string())?;
        reference = common::donor_cell_1d(&reference, 0.2);
    }
    let n = &n[21..42];
    let com = common::center_of_mass(n);
    let ref_com = common::center_of_mass(&reference);
    let shift_err = (com - 6.0).abs().max((com - ref_com).abs());
    check(
        worst <= ADVECTION_TOL && shift_err <= SPIKE_TOL,
        format!("max mass error {worst:.2e}, spike centre {com:.4} (reference {ref_com:.4})"),
        format!("max mass error {worst:.2e}, spike centre {com:.4} vs reference {ref_com:.4}"),
    )
}

fn c5_cppn_oracle() -> Outcome {
    let mut rng = common::rng(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let g = common::random_genome(&mut rng, 1, 20 - 3);
        let ph = Phenotype::compile(&g).map_err(|e| e.to_string())?;
        for _ in 0..10 {
            let mut inputs: Vec<f64> = (0..g.n_inputs).map(|_| rng.random_range(-2.0..2.0)).collect();
            *inputs.last_mut().unwrap() = 1.0;
            let fast = ph.evaluate(&inputs).map_err(|e| e.to_string())?;
            let slow = common::recursive_eval(&g, &inputs);
            for (a, b) in fast.iter().zip(&slow) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    check(
        worst <= CPPN_TOL,
        format!("max deviation {worst:.2e} over 1000 evaluations"),
        format!("max deviation {worst:.2e} (tol {CPPN_TOL:e})"),
    )
}

fn invariant_violation(g: &Genome) -> Option<String> {
    if let Err(e) = g.validate() {
        return Some(e.to_string());
    }
    Phenotype::compile(g).err().map(|e| e.to_string())
}

fn c6_neat_invariants() -> Outcome {
    let cfg = EvolutionConfig {
        population_size: 40,
        add_node_rate: 0.3,
        add_connection_rate: 0.5,
        disable_rate: 0.1,
        ..EvolutionConfig::default()
    };
    let mut pop = init_population(&cfg, 1).map_err(|e| e.to_string())?;
    let mut rng = slimeworld::rng::stream(6, &[]);
    let mut genomes = pop.members.clone();
    for cycle in 0..200 {
        let a = rng.random_range(0..genomes.len());
        let b = rng.random_range(0..genomes.len());
        let child = crossover(&genomes[a], &genomes[b], &mut rng);
        let child = mutate(child, &cfg, &mut pop.registry, &mut rng);
        if let Some(e) = invariant_violation(&child) {
            return Err(format!("cycle {cycle}: {e}"));
        }
        genomes[a] = child;
    }

    pop.members = genomes;
    speciate(&mut pop, &cfg);
    let mut seen = vec![0usize; pop.members.len()];
    for s in &pop.species {
        for &m in &s.members {
            seen[m] += 1;
        }
    }
    if seen.iter().any(|&c| c != 1) {
        return Err("speciation is not a disjoint cover".into());
    }

    let mut pop = init_population(&cfg, 1).map_err(|e| e.to_string())?;
    for gen in 0..50 {
        let fitness: Vec<f64> = (0..pop.members.len()).map(|_| rng.random_range(0.0..10.0)).collect();
        pop = next_generation(&pop, &fitness, &cfg).map_err(|e| e.to_string())?;
        if pop.members.len() != cfg.population_size {
            return Err(format!("generation {gen}: population size {}", pop.members.len()));
        }
        if let Some(e) = pop.members.iter().find_map(invariant_violation) {
            return Err(format!("generation {gen}: {e}"));
        }
    }
    Ok(format!("200 cycles valid, {} species cover the population, size held for 50 generations", pop.species.len()))
}

fn run_bin(args: &[&str]) -> Result<i32, String> {
    let status = Command::new(env!("CARGO_BIN_EXE_slimeworld"))
        .args(args)
        .env("EINCASM_THREADS", "1")
        .env("RUST_LOG", "error")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status()
        .map_err(|e| e.to_string())?;
    Ok(status.code().unwrap_or(-1))
}

fn c7_determinism_and_replay() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = RunConfig::default();
    cfg.evolution.population_size = 8;
    cfg.evolution.generations = 3;
    cfg.lifecycle = LifecycleConfig { t_min: 20, t_max: 30, ..LifecycleConfig::default() };
    let config = dir.path().join("config.json");
    std::fs::write(&config, serde_json::to_string_pretty(&cfg).unwrap()).map_err(|e| e.to_string())?;
    let config = config.to_str().unwrap();
    let out = |name: &str| dir.path().join(name).to_str().unwrap().to_owned();
    for run in ["a", "b"] {
        let code = run_bin(&["evolve", "--config", config, "--seed", "11", "--out", &out(run)])?;
        if code != 0 {
            return Err(format!("evolve run {run} exited {code}"));
        }
    }
    let read = |p: String| std::fs::read(p).map_err(|e| e.to_string());
    let identical = read(out("a/log.csv"))? == read(out("b/log.csv"))?;

    let trajectory = out("a/best_trajectory.json");
    let replay_ok = run_bin(&["replay", &trajectory])?;

    let mut log: serde_json::Value =
        serde_json::from_slice(&read(trajectory.clone())?).map_err(|e| e.to_string())?;
    let slot = &mut log["mass_curve"][1];
    let bits = slot.as_f64().ok_or("mass_curve[1] missing")?.to_bits() ^ 1;
    *slot = serde_json::json!(f64::from_bits(bits));
    let tampered = out("tampered.json");
    std::fs::write(&tampered, serde_json::to_vec(&log).unwrap()).map_err(|e| e.to_string())?;
    let replay_bad = run_bin(&["replay", &tampered])?;

    check(
        identical && replay_ok == 0 && replay_bad == 1,
        "log.csv byte-identical across runs, replay exits 0, tampered log exits 1".into(),
        format!("identical={identical}, replay exit {replay_ok}, tampered exit {replay_bad}"),
    )
}

fn c8_evolution_improves() -> Outcome {
    let mut improved = 0;
    let mut detail = Vec::new();
    for seed in 0..5 {
        let mut cfg = RunConfig::default();
        cfg.evolution.seed = seed;
        cfg.evolution.population_size = 32;
        cfg.evolution.generations = 21;
        cfg.lifecycle = LifecycleConfig { t_min: 40, t_max: 40, ..LifecycleConfig::default() };
        let run = slimeworld::cli_io::evolve::run_evolution(&cfg, Execution::default(), |_, _, _| Ok(()))
            .map_err(|e| e.to_string())?;
        let (first, last) = (run.rows[0].best_fitness, run.rows[20].best_fitness);
        if last > first {
            improved += 1;
        }
        detail.push(format!("{first:.3}->{last:.3}"));
    }
    check(
        improved >= 4,
        format!("{improved}/5 seeds improved ({})", detail.join(", ")),
        format!("only {improved}/5 seeds improved ({})", detail.join(", ")),
    )
}

fn c9_pathfinding() -> Outcome {
    let g = baseline_genome(LifecycleConfig::default().k_hidden);
    let (p, lc, th) = (PhysicsParams::default(), harness_lifecycle(), Thresholds::default());
    let corridor = pathfinding_test(&g, &p, &lc, &corridor_fixture(), &th, 0).map_err(|e| e.to_string())?;
    let detour = pathfinding_test(&g, &p, &lc, &detour_fixture(), &th, 0).map_err(|e| e.to_string())?;
    let (a, b) = (corridor.steps_to_completion, detour.steps_to_completion);
    check(
        a == Some(CORRIDOR_STEPS) && b == Some(DETOUR_STEPS),
        format!("corridor in {a:?} steps, detour in {b:?} steps"),
        format!("corridor {a:?} (expected {CORRIDOR_STEPS}), detour {b:?} (expected {DETOUR_STEPS})"),
    )
}

fn c10_coordination() -> Outcome {
    let k = LifecycleConfig::default().k_hidden;
    let g = baseline_genome(k);
    let inert = Genome::bare(k, slimeworld::cppn::Activation::Identity);
    let (p, lc, th) = (PhysicsParams::default(), harness_lifecycle(), Thresholds::default());
    let mut positive = 0;
    let mut indices = Vec::new();
    for seed in 0..5u64 {
        let env = coordination_fixture().with_seed(seed);
        let score = coordination_test(&g, &p, &lc, &env, &th, seed).map_err(|e| e.to_string())?;
        let r = score.metrics["redistribution_index"];
        if r > 0.0 {
            positive += 1;
        }
        indices.push(format!("{r:.3}"));
        let control = coordination_test(&inert, &p, &lc, &env, &th, seed).map_err(|e| e.to_string())?;
        let rc = control.metrics["redistribution_index"];
        if rc != 0.0 {
            return Err(format!("inert genome scored {rc} on seed {seed}"));
        }
    }
    check(
        positive >= 3,
        format!("{positive}/5 seeds positive ({}), inert genome 0", indices.join(", ")),
        format!("only {positive}/5 seeds positive ({})", indices.join(", ")),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("constraint layer conserves energy", c1_constraint_energy),
        ("closed-box fluid conserves mass and injections", c2_lbm_conservation),
        ("rest equilibrium is a fixed point", c3_equilibrium_fixed_point),
        ("advection conserves and translates", c4_advection),
        ("compiled network matches recursive evaluation", c5_cppn_oracle),
        ("NEAT operators keep genomes valid", c6_neat_invariants),
        ("runs are deterministic and replayable", c7_determinism_and_replay),
        ("evolution improves fitness", c8_evolution_improves),
        ("baseline completes corridor and detour", c9_pathfinding),
        ("baseline redistributes in coordination arena", c10_coordination),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        match run() {
            Ok(msg) => println!("PASS {:>2} {name}: {msg} [{:.1?}]", i + 1, start.elapsed()),
            Err(msg) => {
                failures += 1;
                println!("FAIL {:>2} {name}: {msg} [{:.1?}]", i + 1, start.elapsed());
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
