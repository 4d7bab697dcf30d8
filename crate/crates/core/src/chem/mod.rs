//! Chemistry layer: alphabet profiles, valency rules, kekulized SMILES,
//! canonical strings, Morgan fingerprints and property scorers.

mod canon;
mod fingerprint;
mod scorer;
mod smiles;

pub use canon::{canonical_form, canonical_order};
pub use fingerprint::{morgan_fingerprint, tanimoto, Fingerprint};
pub use scorer::{longest_carbon_chain, score, ExternalScorer, Scorer};
pub use smiles::{parse_smiles, write_smiles, write_smiles_in_order};

use crate::error::{Error, Result};
use crate::graph::{Alphabet, LabeledGraph};

const BOND_SYMBOLS: [&str; 3] = ["-", "=", "#"];

fn molecule_alphabet(name: &str, atoms: &[(&str, u32)]) -> Alphabet {
    Alphabet::new(
        name,
        atoms.iter().map(|(s, _)| s.to_string()).collect(),
        BOND_SYMBOLS.iter().map(|s| s.to_string()).collect(),
        Some(atoms.iter().map(|&(_, v)| v).collect()),
    )
    .expect("static profile is well formed")
}

/// C, N, O, F.
pub fn qm9() -> Alphabet {
    molecule_alphabet("qm9", &[("C", 4), ("N", 3), ("O", 2), ("F", 1)])
}

pub fn zinc() -> Alphabet {
    molecule_alphabet(
        "zinc",
        &[("C", 4), ("N", 3), ("O", 2), ("F", 1), ("P", 5), ("S", 6), ("Cl", 1), ("Br", 1), ("I", 1)],
    )
}

pub fn moses() -> Alphabet {
    molecule_alphabet("moses", &[("C", 4), ("N", 3), ("S", 6), ("O", 2), ("F", 1), ("Cl", 1), ("Br", 1)])
}

/// Looks up a named profile: `qm9`, `zinc`, `moses` or `generic`
/// (one node type, one edge type, no valence table).
pub fn profile(name: &str) -> Result<Alphabet> {
    match name {
        "qm9" => Ok(qm9()),
        "zinc" => Ok(zinc()),
        "moses" => Ok(moses()),
        "generic" => Alphabet::generic(1, 1),
        other => Err(Error::Invalid(format!("unknown alphabet profile `{other}`"))),
    }
}

/// True iff every node's bond-order sum is within its type's capacity.
/// Alphabets without a valence table accept every graph.
pub fn check_valency(alphabet: &Alphabet, g: &LabeledGraph) -> bool {
    let Some(table) = alphabet.valence_table() else { return true };
    (0..g.num_nodes()).all(|i| g.valence_sum(i) <= table[g.node_type(i)])
}

/// Would adding edge `(i, j)` of type `b` keep both endpoints within valence?
/// The no-edge category is always accepted.
pub fn check_edge_addition(alphabet: &Alphabet, g: &LabeledGraph, i: usize, j: usize, b: usize) -> Result<bool> {
    if i >= g.num_nodes() || j >= g.num_nodes() || i == j {
        return Err(Error::Graph(format!("invalid endpoints ({i}, {j})")));
    }
    if g.edge(i, j).is_some() {
        return Err(Error::EdgeExists { i, j });
    }
    if b == alphabet.no_edge() {
        return Ok(true);
    }
    let Some(table) = alphabet.valence_table() else { return Ok(true) };
    let order = b as u32 + 1;
    Ok(g.valence_sum(i) + order <= table[g.node_type(i)] && g.valence_sum(j) + order <= table[g.node_type(j)])
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn carbon_star(center_bonds: &[usize]) -> LabeledGraph {
        let mut g = LabeledGraph::with_nodes(vec![0; center_bonds.len() + 1]);
        for (leaf, &b) in center_bonds.iter().enumerate() {
            g.add_edge(0, leaf + 1, b).unwrap();
        }
        g
    }

    #[test]
    fn valency_examples() {
        let a = qm9();
        assert!(check_valency(&a, &carbon_star(&[0, 0, 0, 0])));
        assert!(!check_valency(&a, &carbon_star(&[0, 0, 0, 1])));
        let o2 = LabeledGraph::from_edges(vec![2, 2], &[(0, 1, 1)]).unwrap();
        assert!(check_valency(&a, &o2));
    }

    #[test]
    fn edge_addition_examples() {
        let a = qm9();
        let cc = LabeledGraph::with_nodes(vec![0, 0]);
        assert!(check_edge_addition(&a, &cc, 0, 1, 0).unwrap());
        let co = LabeledGraph::with_nodes(vec![0, 2]);
        assert!(!check_edge_addition(&a, &co, 1, 0, 2).unwrap());
        let full = carbon_star(&[0, 0, 0, 0]);
        let mut g = full.clone();
        g.add_node(0);
        assert!(check_edge_addition(&a, &g, 5, 0, a.no_edge()).unwrap());
        assert!(matches!(check_edge_addition(&a, &full, 0, 1, 0), Err(Error::EdgeExists { .. })));
    }

    #[test]
    fn profiles_match_table_sizes() {
        assert_eq!(qm9().num_node_types(), 4);
        assert_eq!(zinc().num_node_types(), 9);
        assert_eq!(moses().num_node_types(), 7);
        assert_eq!(qm9().num_edge_types(), 3);
        assert!(profile("nope").is_err());
    }

    fn small_graph() -> impl Strategy<Value = (LabeledGraph, usize, usize, usize)> {
        (2usize..7)
            .prop_flat_map(|n| {
                (
                    proptest::collection::vec(0usize..4, n),
                    proptest::collection::vec((0..n, 0..n, 0usize..3), 0..10),
                    0..n,
                    0..n,
                    0usize..4,
                )
            })
            .prop_filter_map("distinct endpoints", |(types, edges, i, j, b)| {
                let mut g = LabeledGraph::with_nodes(types);
                for (u, v, t) in edges {
                    if u != v && g.edge(u, v).is_none() {
                        g.add_edge(u, v, t).unwrap();
                    }
                }
                (i != j && g.edge(i, j).is_none()).then_some((g, i, j, b))
            })
    }

    proptest! {
        #[test]
        fn edge_check_agrees_with_full_check((g, i, j, b) in small_graph()) {
            let a = qm9();
            prop_assume!(check_valency(&a, &g));
            let mut after = g.clone();
            if b != a.no_edge() {
                after.add_edge(i, j, b).unwrap();
            }
            prop_assert_eq!(check_edge_addition(&a, &g, i, j, b).unwrap(), check_valency(&a, &after));
        }
    }
}
