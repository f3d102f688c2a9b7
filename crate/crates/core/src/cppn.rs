//! CPPN genomes and their compiled feed-forward evaluators.
//!
//! A [`Genome`] has `n_inputs = 9 * (7 + K) + 1` input nodes (the last one is a
//! constant-1 bias input) and `n_outputs = K + 2` output nodes: `K` hidden
//! channel writes, then the raw reservoir change, then the raw mass change.
//! Inputs use ids `0..n_inputs`, outputs `n_inputs..n_inputs + n_outputs`;
//! hidden nodes get ids above that.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::substrate::perception_len;

pub const GENOME_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Sigmoid,
    Tanh,
    Sine,
    Gaussian,
    Absolute,
    Relu,
}

impl Activation {
    pub const ALL: [Activation; 7] = [
        Activation::Identity,
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::Sine,
        Activation::Gaussian,
        Activation::Absolute,
        Activation::Relu,
    ];

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
            Activation::Sine => x.sin(),
            Activation::Gaussian => (-x * x).exp(),
            Activation::Absolute => x.abs(),
            Activation::Relu => x.max(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Input,
    Hidden,
    Output,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeGene {
    pub id: u32,
    pub kind: NodeKind,
    pub activation: Activation,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionGene {
    pub innovation: u64,
    pub from: u32,
    pub to: u32,
    pub weight: f64,
    pub enabled: bool,
}

fn default_schema() -> u32 {
    GENOME_SCHEMA_VERSION
}

/// A NEAT-encoded CPPN. Nodes are kept sorted by id and connections by
/// innovation number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Genome {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub n_inputs: usize,
    pub n_outputs: usize,
    pub k_hidden: usize,
    pub nodes: Vec<NodeGene>,
    pub connections: Vec<ConnectionGene>,
}

impl Genome {
    pub fn io_sizes(k_hidden: usize) -> (usize, usize) {
        (perception_len(k_hidden) + 1, k_hidden + 2)
    }

    /// Inputs and outputs only, no connections. Outputs use `output_activation`
    /// and zero bias.
    pub fn bare(k_hidden: usize, output_activation: Activation) -> Self {
        let (n_inputs, n_outputs) = Self::io_sizes(k_hidden);
        let mut nodes = Vec::with_capacity(n_inputs + n_outputs);
        for id in 0..n_inputs {
            nodes.push(NodeGene {
                id: id as u32,
                kind: NodeKind::Input,
                activation: Activation::Identity,
                bias: 0.0,
            });
        }
        for o in 0..n_outputs {
            nodes.push(NodeGene {
                id: (n_inputs + o) as u32,
                kind: NodeKind::Output,
                activation: output_activation,
                bias: 0.0,
            });
        }
        Self {
            schema_version: GENOME_SCHEMA_VERSION,
            n_inputs,
            n_outputs,
            k_hidden,
            nodes,
            connections: Vec::new(),
        }
    }

    pub fn bias_input(&self) -> u32 {
        (self.n_inputs - 1) as u32
    }

    pub fn output_id(&self, o: usize) -> u32 {
        (self.n_inputs + o) as u32
    }

    pub fn node(&self, id: u32) -> Option<&NodeGene> {
        self.nodes
            .binary_search_by_key(&id, |n| n.id)
            .ok()
            .map(|i| &self.nodes[i])
    }

    pub fn node_mut(&mut self, id: u32) -> Option<&mut NodeGene> {
        match self.nodes.binary_search_by_key(&id, |n| n.id) {
            Ok(i) => Some(&mut self.nodes[i]),
            Err(_) => None,
        }
    }

    pub fn has_node(&self, id: u32) -> bool {
        self.node(id).is_some()
    }

    pub fn connection(&self, innovation: u64) -> Option<&ConnectionGene> {
        self.connections
            .binary_search_by_key(&innovation, |c| c.innovation)
            .ok()
            .map(|i| &self.connections[i])
    }

    /// Inserts a node keeping id order. Returns false if the id exists.
    pub fn insert_node(&mut self, node: NodeGene) -> bool {
        match self.nodes.binary_search_by_key(&node.id, |n| n.id) {
            Ok(_) => false,
            Err(pos) => {
                self.nodes.insert(pos, node);
                true
            }
        }
    }

    /// Inserts a connection keeping innovation order. Returns false if the
    /// innovation exists.
    pub fn insert_connection(&mut self, conn: ConnectionGene) -> bool {
        match self
            .connections
            .binary_search_by_key(&conn.innovation, |c| c.innovation)
        {
            Ok(_) => false,
            Err(pos) => {
                self.connections.insert(pos, conn);
                true
            }
        }
    }

    pub fn hidden_node_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Hidden).count()
    }

    pub fn enabled_connection_count(&self) -> usize {
        self.connections.iter().filter(|c| c.enabled).count()
    }

    /// True if adding `from -> to` would close a cycle over all connection
    /// genes (enabled or not), i.e. `to` already reaches `from`.
    pub fn creates_cycle(&self, from: u32, to: u32) -> bool {
        if from == to {
            return true;
        }
        let mut adj: HashMap<u32, Vec<u32>> = HashMap::new();
        for c in &self.connections {
            adj.entry(c.from).or_default().push(c.to);
        }
        let mut stack = vec![to];
        let mut seen = std::collections::HashSet::new();
        while let Some(n) = stack.pop() {
            if n == from {
                return true;
            }
            if seen.insert(n) {
                if let Some(next) = adj.get(&n) {
                    stack.extend(next.iter().copied());
                }
            }
        }
        false
    }

    /// Checks every structural invariant of the genome.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidGenome(m));
        let (ni, no) = Self::io_sizes(self.k_hidden);
        if self.n_inputs != ni || self.n_outputs != no {
            return bad(format!(
                "k_hidden={} requires {ni} inputs and {no} outputs, found {} and {}",
                self.k_hidden, self.n_inputs, self.n_outputs
            ));
        }
        if !self.nodes.windows(2).all(|w| w[0].id < w[1].id) {
            return bad("node ids must be unique and sorted".into());
        }
        if !self
            .connections
            .windows(2)
            .all(|w| w[0].innovation < w[1].innovation)
        {
            return bad("innovation numbers must be unique and sorted".into());
        }
        let io = self.n_inputs + self.n_outputs;
        for (i, node) in self.nodes.iter().take(io).enumerate() {
            let expected = if i < self.n_inputs {
                NodeKind::Input
            } else {
                NodeKind::Output
            };
            if node.id as usize != i || node.kind != expected {
                return bad(format!("node slot {i} must be {expected:?} with id {i}"));
            }
        }
        if self.nodes.len() < io {
            return bad("missing input or output nodes".into());
        }
        for node in &self.nodes {
            if !node.bias.is_finite() {
                return bad(format!("node {} has non-finite bias", node.id));
            }
            match node.kind {
                NodeKind::Input => {
                    if node.activation != Activation::Identity || node.bias != 0.0 {
                        return bad(format!("input node {} must be identity with zero bias", node.id));
                    }
                }
                NodeKind::Hidden if (node.id as usize) < io => {
                    return bad(format!("hidden node {} reuses an io id", node.id));
                }
                _ => {}
            }
        }
        let mut pairs = std::collections::HashSet::new();
        for c in &self.connections {
            let (Some(from), Some(to)) = (self.node(c.from), self.node(c.to)) else {
                return bad(format!("connection {} references a missing node", c.innovation));
            };
            if c.from == c.to || to.kind == NodeKind::Input || from.kind == NodeKind::Output {
                return bad(format!("connection {} has an illegal direction", c.innovation));
            }
            if !c.weight.is_finite() {
                return bad(format!("connection {} has non-finite weight", c.innovation));
            }
            if !pairs.insert((c.from, c.to)) {
                return bad(format!("duplicate edge {} -> {}", c.from, c.to));
            }
        }
        Phenotype::compile(self).map(|_| ())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let g: Genome = serde_json::from_str(text)?;
        g.validate()?;
        Ok(g)
    }
}

#[derive(Debug, Clone)]
struct PlanNode {
    slot: usize,
    activation: Activation,
    bias: f64,
    /// (source slot, weight), in innovation order.
    incoming: Vec<(usize, f64)>,
}

/// A topologically ordered evaluation plan over a genome's enabled subgraph.
#[derive(Debug, Clone)]
pub struct Phenotype {
    n_inputs: usize,
    n_outputs: usize,
    n_slots: usize,
    plan: Vec<PlanNode>,
    output_slots: Vec<usize>,
}

impl Phenotype {
    pub fn compile(genome: &Genome) -> Result<Self> {
        let slot_of: HashMap<u32, usize> = genome
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id, i))
            .collect();
        let n = genome.nodes.len();
        if genome.nodes.len() < genome.n_inputs
            || genome.nodes[..genome.n_inputs]
                .iter()
                .enumerate()
                .any(|(i, node)| node.id as usize != i || node.kind != NodeKind::Input)
        {
            return Err(Error::InvalidGenome("input nodes must occupy ids 0..n_inputs".into()));
        }
        let mut indegree = vec![0usize; n];
        let mut out_edges: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut incoming: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for c in genome.connections.iter().filter(|c| c.enabled) {
            let (Some(&a), Some(&b)) = (slot_of.get(&c.from), slot_of.get(&c.to)) else {
                return Err(Error::InvalidGenome(format!(
                    "connection {} references a missing node",
                    c.innovation
                )));
            };
            indegree[b] += 1;
            out_edges[a].push(b);
            incoming[b].push((a, c.weight));
        }
        // Kahn's algorithm; the ready set is ordered by slot so plans are canonical.
        let mut ready: std::collections::BTreeSet<usize> =
            (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(&i) = ready.iter().next() {
            ready.remove(&i);
            order.push(i);
            for &j in &out_edges[i] {
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    ready.insert(j);
                }
            }
        }
        if order.len() != n {
            let stuck = (0..n).find(|&i| indegree[i] > 0).unwrap_or(0);
            return Err(Error::Cycle(genome.nodes[stuck].id));
        }
        let plan = order
            .into_iter()
            .filter(|&i| genome.nodes[i].kind != NodeKind::Input)
            .map(|i| PlanNode {
                slot: i,
                activation: genome.nodes[i].activation,
                bias: genome.nodes[i].bias,
                incoming: std::mem::take(&mut incoming[i]),
            })
            .collect();
        let output_slots = (0..genome.n_outputs)
            .map(|o| {
                slot_of
                    .get(&genome.output_id(o))
                    .copied()
                    .ok_or_else(|| Error::InvalidGenome(format!("missing output node {o}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n_inputs: genome.n_inputs,
            n_outputs: genome.n_outputs,
            n_slots: n,
            plan,
            output_slots,
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    /// Number of enabled edges in the plan.
    pub fn edge_count(&self) -> usize {
        self.plan.iter().map(|p| p.incoming.len()).sum()
    }

    /// Allocation-free evaluation; `scratch` is resized as needed.
    pub fn evaluate_into(&self, inputs: &[f64], scratch: &mut Vec<f64>, out: &mut [f64]) -> Result<()> {
        if inputs.len() != self.n_inputs {
            return Err(Error::InputLength {
                expected: self.n_inputs,
                got: inputs.len(),
            });
        }
        scratch.clear();
        scratch.resize(self.n_slots, 0.0);
        // Input nodes occupy the first n_inputs slots (ids are sorted).
        scratch[..self.n_inputs].copy_from_slice(inputs);
        for node in &self.plan {
            let mut sum = node.bias;
            for &(src, w) in &node.incoming {
                sum += w * scratch[src];
            }
            scratch[node.slot] = node.activation.apply(sum);
        }
        for (o, &slot) in out.iter_mut().zip(&self.output_slots) {
            *o = scratch[slot];
        }
        Ok(())
    }

    pub fn evaluate(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        let mut scratch = Vec::new();
        let mut out = vec![0.0; self.n_outputs];
        self.evaluate_into(inputs, &mut scratch, &mut out)?;
        Ok(out)
    }
}
