#![allow(dead_code)]

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slimeworld::cppn::{Activation, ConnectionGene, Genome, NodeGene, NodeKind};

/// Definitional evaluator: a node's value is its activation applied to its
/// bias plus the weighted values of its enabled predecessors, in connection
/// order. Inputs are read directly.
pub fn recursive_eval(g: &Genome, inputs: &[f64]) -> Vec<f64> {
    fn value(g: &Genome, id: u32, inputs: &[f64], memo: &mut HashMap<u32, f64>) -> f64 {
        if let Some(&v) = memo.get(&id) {
            return v;
        }
        let node = g.nodes.iter().find(|n| n.id == id).expect("node exists");
        let v = if node.kind == NodeKind::Input {
            inputs[id as usize]
        } else {
            let mut sum = node.bias;
            for c in g.connections.iter().filter(|c| c.enabled && c.to == id) {
                sum += c.weight * value(g, c.from, inputs, memo);
            }
            node.activation.apply(sum)
        };
        memo.insert(id, v);
        v
    }
    let mut memo = HashMap::new();
    (0..g.n_outputs).map(|o| value(g, g.output_id(o), inputs, &mut memo)).collect()
}

/// A random valid genome with up to `max_hidden` hidden nodes and a random
/// set of acyclic connections.
pub fn random_genome(rng: &mut ChaCha8Rng, k_hidden: usize, max_hidden: usize) -> Genome {
    let act = |rng: &mut ChaCha8Rng| Activation::ALL[rng.random_range(0..Activation::ALL.len())];
    let mut g = Genome::bare(k_hidden, Activation::Identity);
    for n in g.nodes.iter_mut().filter(|n| n.kind == NodeKind::Output) {
        n.activation = act(rng);
        n.bias = rng.random_range(-1.0..1.0);
    }
    let first_hidden = g.nodes.iter().map(|n| n.id).max().unwrap() + 1;
    for id in first_hidden..first_hidden + rng.random_range(0..=max_hidden as u32) {
        g.insert_node(NodeGene { id, kind: NodeKind::Hidden, activation: act(rng), bias: rng.random_range(-1.0..1.0) });
    }
    let sources: Vec<u32> = g.nodes.iter().filter(|n| n.kind != NodeKind::Output).map(|n| n.id).collect();
    let targets: Vec<u32> = g.nodes.iter().filter(|n| n.kind != NodeKind::Input).map(|n| n.id).collect();
    let mut innovation = 0;
    for _ in 0..rng.random_range(1..60) {
        let from = sources[rng.random_range(0..sources.len())];
        let to = targets[rng.random_range(0..targets.len())];
        if from == to || g.connections.iter().any(|c| c.from == from && c.to == to) || g.creates_cycle(from, to) {
            continue;
        }
        g.insert_connection(ConnectionGene {
            innovation,
            from,
            to,
            weight: rng.random_range(-2.0..2.0),
            enabled: rng.random_bool(0.9),
        });
        innovation += 1;
    }
    g.validate().expect("generator emits valid genomes");
    g
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One donor-cell step of a 1-D periodic-free row under uniform Courant
/// number `c` in [0, 1): mass leaves each cell to its right neighbor, and
/// nothing crosses the two ends.
pub fn donor_cell_1d(n: &[f64], c: f64) -> Vec<f64> {
    let mut out = n.to_vec();
    for i in 0..n.len() - 1 {
        let moved = c * n[i];
        out[i] -= moved;
        out[i + 1] += moved;
    }
    out
}

pub fn center_of_mass(n: &[f64]) -> f64 {
    let total: f64 = n.iter().sum();
    n.iter().enumerate().map(|(i, v)| i as f64 * v).sum::<f64>() / total
}
