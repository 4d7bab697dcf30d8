//! Kekulized SMILES subset: atoms B C N O F P S Cl Br I (bare or bracketed,
//! hydrogen counts accepted and dropped), bonds `- = #`, branches, ring
//! closures `0-9` and `%nn`. Charges, isotopes, stereo marks, aromatic atoms
//! and `.` are rejected.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{Alphabet, LabeledGraph};

use super::canon::canonical_order;

const ELEMENTS: [&str; 10] = ["Cl", "Br", "B", "C", "N", "O", "F", "P", "S", "I"];

fn smiles_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Smiles { offset, reason: reason.into() }
}

fn bond_of(ch: u8) -> Option<usize> {
    match ch {
        b'-' => Some(0),
        b'=' => Some(1),
        b'#' => Some(2),
        _ => None,
    }
}

struct OpenRing {
    atom: usize,
    bond: Option<usize>,
    offset: usize,
}

pub fn parse_smiles(text: &str, alphabet: &Alphabet) -> Result<LabeledGraph> {
    let bytes = text.as_bytes();
    let mut g = LabeledGraph::new();
    let mut prev: Option<usize> = None;
    let mut bond: Option<(usize, usize)> = None; // (type, offset)
    let mut branches: Vec<(Option<usize>, usize)> = Vec::new();
    let mut rings: BTreeMap<u32, OpenRing> = BTreeMap::new();
    let mut pos = 0;

    if text.trim().is_empty() {
        return Err(smiles_err(0, "empty SMILES"));
    }

    while pos < bytes.len() {
        let ch = bytes[pos];
        if let Some(b) = bond_of(ch) {
            if bond.is_some() {
                return Err(smiles_err(pos, "two consecutive bond symbols"));
            }
            if prev.is_none() {
                return Err(smiles_err(pos, "bond without a preceding atom"));
            }
            bond = Some((b, pos));
            pos += 1;
            continue;
        }
        match ch {
            b'(' => {
                if prev.is_none() || bond.is_some() {
                    return Err(smiles_err(pos, "misplaced branch"));
                }
                branches.push((prev, pos));
                pos += 1;
            }
            b')' => {
                let Some((restore, _)) = branches.pop() else {
                    return Err(smiles_err(pos, "unbalanced `)`"));
                };
                if bond.is_some() {
                    return Err(smiles_err(pos, "dangling bond before `)`"));
                }
                prev = restore;
                pos += 1;
            }
            b'0'..=b'9' | b'%' => {
                let start = pos;
                let label = if ch == b'%' {
                    let digits = bytes.get(pos + 1..pos + 3).filter(|d| d.iter().all(u8::is_ascii_digit));
                    let Some(d) = digits else {
                        return Err(smiles_err(pos, "`%` must be followed by two digits"));
                    };
                    pos += 3;
                    u32::from(d[0] - b'0') * 10 + u32::from(d[1] - b'0')
                } else {
                    pos += 1;
                    u32::from(ch - b'0')
                };
                let Some(atom) = prev else {
                    return Err(smiles_err(start, "ring closure without an atom"));
                };
                let this_bond = bond.take().map(|(b, _)| b);
                match rings.remove(&label) {
                    Some(open) => {
                        let ty = match (open.bond, this_bond) {
                            (Some(a), Some(b)) if a != b => {
                                return Err(smiles_err(start, "conflicting ring-closure bonds"))
                            }
                            (a, b) => a.or(b).unwrap_or(0),
                        };
                        if open.atom == atom {
                            return Err(smiles_err(start, "ring closure onto the same atom"));
                        }
                        g.add_edge(open.atom, atom, ty).map_err(|e| smiles_err(start, e.to_string()))?;
                    }
                    None => {
                        rings.insert(label, OpenRing { atom, bond: this_bond, offset: start });
                    }
                }
            }
            b'[' => {
                let close = bytes[pos..]
                    .iter()
                    .position(|&c| c == b']')
                    .ok_or_else(|| smiles_err(pos, "unclosed bracket atom"))?;
                let inner = &text[pos + 1..pos + close];
                let node_type = bracket_atom(inner, pos + 1, alphabet)?;
                attach(&mut g, &mut prev, &mut bond, node_type, pos)?;
                pos += close + 1;
            }
            _ => {
                let symbol = ELEMENTS
                    .iter()
                    .find(|s| bytes[pos..].starts_with(s.as_bytes()))
                    .ok_or_else(|| smiles_err(pos, format!("unsupported token `{}`", ch as char)))?;
                let node_type = alphabet
                    .node_index(symbol)
                    .ok_or_else(|| smiles_err(pos, format!("element {symbol} not in alphabet `{}`", alphabet.name())))?;
                attach(&mut g, &mut prev, &mut bond, node_type, pos)?;
                pos += symbol.len();
            }
        }
    }
    if let Some((_, offset)) = bond {
        return Err(smiles_err(offset, "dangling bond at end of input"));
    }
    if let Some((_, offset)) = branches.pop() {
        return Err(smiles_err(offset, "unclosed branch"));
    }
    if let Some(open) = rings.values().next() {
        return Err(smiles_err(open.offset, "unclosed ring"));
    }
    Ok(g)
}

fn attach(
    g: &mut LabeledGraph,
    prev: &mut Option<usize>,
    bond: &mut Option<(usize, usize)>,
    node_type: usize,
    offset: usize,
) -> Result<()> {
    let atom = g.add_node(node_type);
    if let Some(p) = *prev {
        let ty = bond.take().map_or(0, |(b, _)| b);
        g.add_edge(p, atom, ty).map_err(|e| smiles_err(offset, e.to_string()))?;
    }
    *prev = Some(atom);
    Ok(())
}

fn bracket_atom(inner: &str, offset: usize, alphabet: &Alphabet) -> Result<usize> {
    let symbol = ELEMENTS
        .iter()
        .find(|s| inner.starts_with(**s))
        .ok_or_else(|| smiles_err(offset, format!("unsupported bracket atom `[{inner}]`")))?;
    let rest = &inner[symbol.len()..];
    let h_ok = match rest.as_bytes() {
        [] => true,
        [b'H'] => true,
        [b'H', d] => d.is_ascii_digit(),
        _ => false,
    };
    if !h_ok {
        return Err(smiles_err(offset + symbol.len(), format!("unsupported bracket content `{rest}`")));
    }
    alphabet
        .node_index(symbol)
        .ok_or_else(|| smiles_err(offset, format!("element {symbol} not in alphabet `{}`", alphabet.name())))
}

/// Canonical SMILES of `g`.
pub fn write_smiles(g: &LabeledGraph, alphabet: &Alphabet) -> String {
    let rank = canonical_order(g);
    write_smiles_in_order(g, alphabet, &rank)
}

/// SMILES with traversal priority `rank` (lower first): each component starts
/// at its lowest-ranked atom and neighbors are visited in rank order.
/// Components are joined with `.`.
pub fn write_smiles_in_order(g: &LabeledGraph, alphabet: &Alphabet, rank: &[usize]) -> String {
    let n = g.num_nodes();
    let mut by_rank: Vec<usize> = (0..n).collect();
    by_rank.sort_by_key(|&i| rank[i]);
    let sorted_neighbors: Vec<Vec<(usize, usize)>> = (0..n)
        .map(|i| {
            let mut list = g.neighbors(i).to_vec();
            list.sort_by_key(|&(j, _)| rank[j]);
            list
        })
        .collect();

    // Pass 1: spanning forest and ring-closure edges.
    let mut visited = vec![false; n];
    let mut preorder = vec![usize::MAX; n];
    let mut children: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut closures: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut roots = Vec::new();
    let mut counter = 0;
    for &root in &by_rank {
        if visited[root] {
            continue;
        }
        roots.push(root);
        let mut stack: Vec<(usize, Option<usize>, usize)> = vec![(root, None, 0)];
        visited[root] = true;
        preorder[root] = counter;
        counter += 1;
        while let Some(&mut (u, parent, ref mut next)) = stack.last_mut() {
            if *next == sorted_neighbors[u].len() {
                stack.pop();
                continue;
            }
            let (v, ty) = sorted_neighbors[u][*next];
            *next += 1;
            if Some(v) == parent {
                continue;
            }
            if visited[v] {
                // back edge to an ancestor; record once, from the descendant
                if preorder[v] < preorder[u] {
                    closures[u].push((v, ty));
                    closures[v].push((u, ty));
                }
                continue;
            }
            visited[v] = true;
            preorder[v] = counter;
            counter += 1;
            children[u].push((v, ty));
            stack.push((v, Some(u), 0));
        }
    }

    // Pass 2: emit.
    let mut out = String::new();
    let mut open_digits: BTreeMap<(usize, usize), u32> = BTreeMap::new();
    let mut free: Vec<u32> = Vec::new();
    let mut next_digit = 1;
    for (c, &root) in roots.iter().enumerate() {
        if c > 0 {
            out.push('.');
        }
        // (atom, incoming bond symbol, close-paren-after)
        enum Step {
            Atom(usize, Option<usize>),
            Open,
            Close,
        }
        let mut work = vec![Step::Atom(root, None)];
        while let Some(step) = work.pop() {
            match step {
                Step::Open => out.push('('),
                Step::Close => out.push(')'),
                Step::Atom(u, incoming) => {
                    if let Some(b) = incoming {
                        if b > 0 {
                            out.push_str(BOND_TEXT[b]);
                        }
                    }
                    out.push_str(&alphabet.node_symbols()[g.node_type(u)]);
                    let mut rings = closures[u].clone();
                    rings.sort_by_key(|&(v, _)| preorder[v]);
                    for (v, ty) in rings {
                        let key = (u.min(v), u.max(v));
                        if preorder[v] < preorder[u] {
                            let d = open_digits.remove(&key).expect("ring opened at ancestor");
                            push_ring_label(&mut out, d);
                            free.push(d);
                            free.sort_unstable_by(|a, b| b.cmp(a));
                        } else {
                            let d = free.pop().unwrap_or_else(|| {
                                next_digit += 1;
                                next_digit - 1
                            });
                            if ty > 0 {
                                out.push_str(BOND_TEXT[ty]);
                            }
                            push_ring_label(&mut out, d);
                            open_digits.insert(key, d);
                        }
                    }
                    let kids = &children[u];
                    // push in reverse so the first child is emitted first
                    for (idx, &(v, ty)) in kids.iter().enumerate().rev() {
                        if idx + 1 == kids.len() {
                            work.push(Step::Atom(v, Some(ty)));
                        } else {
                            work.push(Step::Close);
                            work.push(Step::Atom(v, Some(ty)));
                            work.push(Step::Open);
                        }
                    }
                }
            }
        }
    }
    out
}

const BOND_TEXT: [&str; 3] = ["-", "=", "#"];

fn push_ring_label(out: &mut String, d: u32) {
    if d < 10 {
        out.push(char::from(b'0' + d as u8));
    } else {
        out.push_str(&format!("%{d:02}"));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::{qm9, zinc};

    #[test]
    fn ethane() {
        let g = parse_smiles("CC", &qm9()).unwrap();
        assert_eq!(g, LabeledGraph::from_edges(vec![0, 0], &[(0, 1, 0)]).unwrap());
    }

    #[test]
    fn formic_acid_branch() {
        let g = parse_smiles("C(=O)O", &qm9()).unwrap();
        assert_eq!(g, LabeledGraph::from_edges(vec![0, 2, 2], &[(0, 1, 1), (0, 2, 0)]).unwrap());
    }

    #[test]
    fn cyclopropane_ring_closure() {
        let g = parse_smiles("C1CC1", &qm9()).unwrap();
        assert_eq!(g, LabeledGraph::from_edges(vec![0; 3], &[(0, 1, 0), (1, 2, 0), (0, 2, 0)]).unwrap());
    }

    #[test]
    fn ring_bond_and_percent_labels() {
        let a = qm9();
        let g = parse_smiles("C=1CC1", &a).unwrap();
        assert_eq!(g.edge(0, 2), Some(1));
        let g = parse_smiles("C%12CC%12", &a).unwrap();
        assert_eq!(g.num_edges(), 3);
        assert!(parse_smiles("C=1CC#1", &a).is_err());
    }

    #[test]
    fn brackets_and_halogens() {
        let z = zinc();
        let g = parse_smiles("[CH3]C(Cl)Br", &z).unwrap();
        assert_eq!(g.node_types(), &[0, 0, 6, 7]);
        assert!(parse_smiles("[NH4+]", &z).is_err());
        assert!(parse_smiles("[13C]", &z).is_err());
    }

    #[test]
    fn error_offsets() {
        let a = qm9();
        let offset = |s: &str| match parse_smiles(s, &a) {
            Err(Error::Smiles { offset, .. }) => offset,
            other => panic!("{s}: unexpected {other:?}"),
        };
        assert_eq!(offset("CCc"), 2);
        assert_eq!(offset("CC.C"), 2);
        assert_eq!(offset("C1CC"), 1);
        assert_eq!(offset("C(C"), 1);
        assert_eq!(offset("CC)"), 2);
        assert_eq!(offset("CCCl"), 2);
        assert_eq!(offset("C="), 1);
        assert_eq!(offset("C[C@H]C"), 3);
    }

    #[test]
    fn writer_round_trips() {
        let a = zinc();
        for s in ["CC", "C(=O)O", "C1CC1", "C1=CC=CC=C1", "CC12CC=C3C(C1)C32C", "C#N", "FC(F)(F)Cl", "C1CC2CCC1C2", "S(=O)(=O)(C)C"] {
            let g = parse_smiles(s, &a).unwrap();
            let identity: Vec<usize> = (0..g.num_nodes()).collect();
            let written = write_smiles_in_order(&g, &a, &identity);
            let back = parse_smiles(&written, &a).unwrap();
            assert_eq!(back, g, "{s} -> {written}");
        }
    }

    #[test]
    fn many_rings_use_percent_labels() {
        // a 4x4 grid has 9 independent cycles
        let mut edges = Vec::new();
        for r in 0..4 {
            for c in 0..4 {
                let v = r * 4 + c;
                if c < 3 {
                    edges.push((v, v + 1, 0));
                }
                if r < 3 {
                    edges.push((v, v + 4, 0));
                }
            }
        }
        let g = LabeledGraph::from_edges(vec![0; 16], &edges).unwrap();
        let a = qm9();
        let identity: Vec<usize> = (0..16).collect();
        let s = write_smiles_in_order(&g, &a, &identity);
        let back = parse_smiles(&s, &a).unwrap();
        assert_eq!(back.num_edges(), g.num_edges());
        assert_eq!(crate::chem::canonical_form(&back, &a), crate::chem::canonical_form(&g, &a));
    }
}
