//! Per-node counts of the 11 orbits of connected 4-node graphlets.

use crate::error::{Error, Result};
use crate::graph::LabeledGraph;

/// Orbits in count-vector order.
pub const ORBIT_NAMES: [&str; 11] = [
    "path-end",
    "path-middle",
    "star-leaf",
    "star-center",
    "cycle",
    "paw-tail",
    "paw-triangle",
    "paw-center",
    "diamond-rim",
    "diamond-chord",
    "clique",
];

/// Largest graph [`orbit_counts`] accepts; enumeration is quartic.
pub const MAX_ORBIT_NODES: usize = 64;

/// Orbit of a node with induced degree `deg` inside a connected 4-node
/// graphlet with `edges` edges and induced degrees `degrees`.
fn classify(edges: usize, degrees: [usize; 4], deg: usize) -> usize {
    let max = *degrees.iter().max().expect("four nodes");
    match (edges, max, deg) {
        (3, 2, 1) => 0,
        (3, 2, 2) => 1,
        (3, 3, 1) => 2,
        (3, 3, 3) => 3,
        (4, 2, _) => 4,
        (4, 3, 1) => 5,
        (4, 3, 2) => 6,
        (4, 3, 3) => 7,
        (5, _, 2) => 8,
        (5, _, 3) => 9,
        (6, _, _) => 10,
        _ => unreachable!("not a connected 4-node graphlet: {edges} edges, degrees {degrees:?}"),
    }
}

/// For every node, how often it occupies each orbit among the connected
/// induced 4-node subgraphs containing it.
pub fn orbit_counts(g: &LabeledGraph) -> Result<Vec<[u64; 11]>> {
    let n = g.num_nodes();
    if n > MAX_ORBIT_NODES {
        return Err(Error::Invalid(format!("orbit counting is capped at {MAX_ORBIT_NODES} nodes, got {n}")));
    }
    let mut adj = vec![0u64; n];
    for (i, j, _) in g.edges() {
        adj[i] |= 1 << j;
        adj[j] |= 1 << i;
    }
    let mut counts = vec![[0u64; 11]; n];
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                for d in c + 1..n {
                    let nodes = [a, b, c, d];
                    let mask: u64 = nodes.iter().map(|&v| 1u64 << v).sum();
                    let degrees = nodes.map(|v| (adj[v] & mask).count_ones() as usize);
                    if degrees.contains(&0) {
                        continue;
                    }
                    let edges = degrees.iter().sum::<usize>() / 2;
                    // with no isolated node, three or more edges cannot split into two pairs
                    if edges < 3 {
                        continue;
                    }
                    for (k, &v) in nodes.iter().enumerate() {
                        counts[v][classify(edges, degrees, degrees[k])] += 1;
                    }
                }
            }
        }
    }
    Ok(counts)
}
