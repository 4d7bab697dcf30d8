//! Isomorphism-invariant molecule strings by colour refinement plus
//! individualization. Every tie left after refinement is explored and the
//! lexicographically smallest SMILES among the leaves wins.

use crate::graph::{Alphabet, LabeledGraph};

use super::smiles::write_smiles_in_order;

/// Leaves explored before the search commits to the first branch of each
/// remaining tie. Only highly symmetric graphs far beyond molecule sizes used
/// here get near it.
const LEAF_BUDGET: usize = 20_000;

pub fn canonical_form(g: &LabeledGraph, alphabet: &Alphabet) -> String {
    if g.is_empty() {
        return String::new();
    }
    let colors = refine(g, initial_colors(g));
    let mut best: Option<String> = None;
    let mut leaves = 0;
    search(g, alphabet, colors, &mut best, &mut leaves);
    best.unwrap_or_default()
}

/// A deterministic total order (rank per node) derived from refinement alone,
/// with remaining ties broken by node index. Used as the traversal order for
/// plain SMILES output; it is not isomorphism-invariant on its own.
pub fn canonical_order(g: &LabeledGraph) -> Vec<usize> {
    if g.is_empty() {
        return Vec::new();
    }
    let colors = refine(g, initial_colors(g));
    let mut idx: Vec<usize> = (0..g.num_nodes()).collect();
    idx.sort_by_key(|&i| (colors[i], i));
    let mut rank = vec![0; g.num_nodes()];
    for (r, &i) in idx.iter().enumerate() {
        rank[i] = r;
    }
    rank
}

fn initial_colors(g: &LabeledGraph) -> Vec<usize> {
    let keys: Vec<(usize, usize, u32)> =
        (0..g.num_nodes()).map(|i| (g.node_type(i), g.degree(i), g.valence_sum(i))).collect();
    dense_rank(&keys)
}

fn dense_rank<K: Ord + Clone>(keys: &[K]) -> Vec<usize> {
    let mut sorted = keys.to_vec();
    sorted.sort();
    sorted.dedup();
    keys.iter().map(|k| sorted.binary_search(k).expect("key present")).collect()
}

fn class_count(colors: &[usize]) -> usize {
    colors.iter().copied().max().map_or(0, |m| m + 1)
}

/// Iterated neighborhood refinement until the partition stops splitting.
fn refine(g: &LabeledGraph, mut colors: Vec<usize>) -> Vec<usize> {
    loop {
        let before = class_count(&colors);
        let keys: Vec<(usize, Vec<(usize, usize)>)> = (0..g.num_nodes())
            .map(|i| {
                let mut nb: Vec<(usize, usize)> = g.neighbors(i).iter().map(|&(j, t)| (t, colors[j])).collect();
                nb.sort_unstable();
                (colors[i], nb)
            })
            .collect();
        colors = dense_rank(&keys);
        if class_count(&colors) == before {
            return colors;
        }
    }
}

fn search(g: &LabeledGraph, alphabet: &Alphabet, colors: Vec<usize>, best: &mut Option<String>, leaves: &mut usize) {
    let n = g.num_nodes();
    if class_count(&colors) == n {
        *leaves += 1;
        let s = write_smiles_in_order(g, alphabet, &colors);
        if best.as_ref().is_none_or(|b| s < *b) {
            *best = Some(s);
        }
        return;
    }
    // first non-singleton cell
    let mut sizes = vec![0usize; class_count(&colors)];
    for &c in &colors {
        sizes[c] += 1;
    }
    let cell = sizes.iter().position(|&s| s > 1).expect("non-discrete partition");
    let members: Vec<usize> = (0..n).filter(|&i| colors[i] == cell).collect();
    for (k, &v) in members.iter().enumerate() {
        if k > 0 && *leaves >= LEAF_BUDGET {
            break;
        }
        let keys: Vec<(usize, bool)> = (0..n).map(|i| (colors[i], i != v)).collect();
        let split = refine(g, dense_rank(&keys));
        search(g, alphabet, split, best, leaves);
    }
}
