//! ECFP-style circular fingerprints folded into a fixed-width bit vector.

use crate::graph::LabeledGraph;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(words: &[u64]) -> u64 {
    let mut h = FNV_OFFSET;
    for w in words {
        for byte in w.to_le_bytes() {
            h ^= u64::from(byte);
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fingerprint {
    words: Vec<u64>,
    width: usize,
    radius: usize,
}

impl Fingerprint {
    fn empty(width: usize, radius: usize) -> Self {
        Self { words: vec![0; width.div_ceil(64)], width, radius }
    }

    fn set(&mut self, hash: u64) {
        let bit = (hash % self.width as u64) as usize;
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn is_set(&self, bit: usize) -> bool {
        self.words[bit / 64] >> (bit % 64) & 1 == 1
    }
}

/// Atom invariants `(type, degree, valence sum)` hashed, then `radius`
/// rounds of folding in the sorted `(bond type, neighbor id)` list. Every
/// round's identifiers set a bit modulo `width`.
pub fn morgan_fingerprint(g: &LabeledGraph, radius: usize, width: usize) -> Fingerprint {
    assert!(width > 0, "fingerprint width must be positive");
    let mut fp = Fingerprint::empty(width, radius);
    let mut ids: Vec<u64> = (0..g.num_nodes())
        .map(|i| fnv1a(&[g.node_type(i) as u64, g.degree(i) as u64, u64::from(g.valence_sum(i))]))
        .collect();
    for &id in &ids {
        fp.set(id);
    }
    for round in 1..=radius {
        let next: Vec<u64> = (0..g.num_nodes())
            .map(|i| {
                let mut nb: Vec<(u64, u64)> = g.neighbors(i).iter().map(|&(j, t)| (t as u64, ids[j])).collect();
                nb.sort_unstable();
                let mut words = vec![round as u64, ids[i]];
                words.extend(nb.into_iter().flat_map(|(t, id)| [t, id]));
                fnv1a(&words)
            })
            .collect();
        ids = next;
        for &id in &ids {
            fp.set(id);
        }
    }
    fp
}

/// `|a & b| / |a | b|`, with two empty fingerprints scoring 1.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> f64 {
    assert_eq!(a.width, b.width, "fingerprint widths differ");
    let (mut both, mut either) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        both += (x & y).count_ones();
        either += (x | y).count_ones();
    }
    if either == 0 {
        1.0
    } else {
        f64::from(both) / f64::from(either)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::chem::{parse_smiles, qm9};

    fn fp(s: &str) -> Fingerprint {
        morgan_fingerprint(&parse_smiles(s, &qm9()).unwrap(), 2, 2048)
    }

    #[test]
    fn reflexive() {
        for s in ["C", "CCO", "C1CC1", "C(=O)O"] {
            assert_eq!(tanimoto(&fp(s), &fp(s)), 1.0);
        }
    }

    #[test]
    fn carbon_vs_oxygen() {
        assert!(tanimoto(&fp("C"), &fp("O")) < 1.0);
        assert_eq!(tanimoto(&fp("C"), &fp("O")), 0.0);
    }

    #[test]
    fn empty_pair_is_one() {
        let e = morgan_fingerprint(&LabeledGraph::new(), 2, 2048);
        assert_eq!(e.count_ones(), 0);
        assert_eq!(tanimoto(&e, &e), 1.0);
    }

    #[test]
    fn isomorphic_inputs_agree() {
        assert_eq!(fp("OC=O"), fp("C(=O)O"));
        assert_eq!(fp("CCCO"), fp("OCCC"));
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(a in "[CNO]{1,6}", b in "[CNO]{1,6}") {
            let (x, y) = (fp(&a), fp(&b));
            let s = tanimoto(&x, &y);
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert_eq!(s, tanimoto(&y, &x));
        }
    }
}
