mod common;

use rand::Rng as _;
use slimeworld::cppn::{Activation, ConnectionGene, Genome, NodeGene, NodeKind, Phenotype};
use slimeworld::fluid::{advect_scalar, equilibrium, moments};
use slimeworld::physics::{capped_pressure, reservoir_pressure, PhysicsParams};
use slimeworld::substrate::GridShape;

fn link(innovation: u64, from: u32, to: u32, weight: f64) -> ConnectionGene {
    ConnectionGene { innovation, from, to, weight, enabled: true }
}

#[test]
fn hand_built_network() {
    // out0 = tanh(0.1 + 2*h), h = sigmoid(-0.5 + x0 - 3*x1), bias input weight 0.25 into out1
    let mut g = Genome::bare(1, Activation::Identity);
    let h = g.nodes.iter().map(|n| n.id).max().unwrap() + 1;
    g.insert_node(NodeGene { id: h, kind: NodeKind::Hidden, activation: Activation::Sigmoid, bias: -0.5 });
    let (o0, o1) = (g.output_id(0), g.output_id(1));
    {
        let n = g.node_mut(o0).unwrap();
        n.activation = Activation::Tanh;
        n.bias = 0.1;
    }
    g.insert_connection(link(0, 0, h, 1.0));
    g.insert_connection(link(1, 1, h, -3.0));
    g.insert_connection(link(2, h, o0, 2.0));
    g.insert_connection(link(3, g.bias_input(), o1, 0.25));
    let mut inputs = vec![0.0; g.n_inputs];
    inputs[0] = 0.7;
    inputs[1] = 0.2;
    *inputs.last_mut().unwrap() = 1.0;
    let out = Phenotype::compile(&g).unwrap().evaluate(&inputs).unwrap();
    let hidden = 1.0 / (1.0 + (-(-0.5 + 0.7 - 0.6f64)).exp());
    assert!((out[0] - (0.1 + 2.0 * hidden).tanh()).abs() < 1e-15);
    assert_eq!(out[1], 0.25);
    assert_eq!(out[2], 0.0);
}

#[test]
fn disabled_connections_are_ignored() {
    let mut g = Genome::bare(1, Activation::Identity);
    let o = g.output_id(0);
    g.insert_connection(link(0, 0, o, 5.0));
    g.connections[0].enabled = false;
    let mut inputs = vec![1.0; g.n_inputs];
    inputs[0] = 3.0;
    let out = Phenotype::compile(&g).unwrap().evaluate(&inputs).unwrap();
    assert_eq!(out[0], 0.0);
}

#[test]
fn compiled_matches_recursive_for_wider_hidden_state() {
    let mut rng = common::rng(77);
    for _ in 0..50 {
        let g = common::random_genome(&mut rng, 4, 12);
        let ph = Phenotype::compile(&g).unwrap();
        let mut inputs: Vec<f64> = (0..g.n_inputs).map(|_| rng.random_range(-3.0..3.0)).collect();
        *inputs.last_mut().unwrap() = 1.0;
        let fast = ph.evaluate(&inputs).unwrap();
        let slow = common::recursive_eval(&g, &inputs);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn equilibrium_reproduces_its_moments() {
    for &(rho, ux, uy) in &[(1.0, 0.0, 0.0), (0.9, 0.05, -0.02), (1.3, -0.1, 0.1)] {
        let f = equilibrium(rho, ux, uy);
        let (r, x, y) = moments(&f);
        assert!((r - rho).abs() < 1e-14);
        assert!((x - ux).abs() < 1e-14 && (y - uy).abs() < 1e-14);
    }
    let w = equilibrium(1.0, 0.0, 0.0);
    let expected = [4.0 / 9.0, 1.0 / 9.0, 1.0 / 36.0];
    assert!((w[0] - expected[0]).abs() < 1e-15);
    assert_eq!(w.iter().filter(|v| (**v - expected[1]).abs() < 1e-15).count(), 4);
    assert_eq!(w.iter().filter(|v| (**v - expected[2]).abs() < 1e-15).count(), 4);
}

#[test]
fn pressure_hand_values() {
    let p = PhysicsParams::default();
    assert!((reservoir_pressure(0.5, 0.01, &p) - 0.02).abs() < 1e-15);
    // the floor applies to an empty reservoir
    assert!((reservoir_pressure(0.0, 1e-5, &p) - 1e-2).abs() < 1e-15);
    assert_eq!(capped_pressure(0.0, 0.5, &p), p.rho_cap);
    assert_eq!(capped_pressure(0.0, -0.5, &p), -p.rho_cap);
}

#[test]
fn uniform_flow_matches_row_reference() {
    let shape = GridShape::new(12, 4).unwrap();
    let mut rng = common::rng(3);
    let mut n: Vec<f64> = (0..48).map(|_| rng.random_range(0.0..1.0)).collect();
    let mut rows: Vec<Vec<f64>> = n.chunks(12).map(<[f64]>::to_vec).collect();
    let (ux, uy, obstacles) = (vec![0.3; 48], vec![0.0; 48], vec![0u8; 48]);
    for _ in 0..4 {
        n = advect_scalar(shape, &n, &ux, &uy, &obstacles, 1.0).unwrap();
        rows = rows.iter().map(|r| common::donor_cell_1d(r, 0.3)).collect();
    }
    for (got, want) in n.chunks(12).zip(&rows) {
        for (a, b) in got.iter().zip(want) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }
}
