//! Dataset loading and the synthetic two-community benchmark.

use std::path::Path;

use rand::Rng;

use crate::chem::parse_smiles;
use crate::error::{Error, Result};
use crate::graph::{read_edge_lists, Alphabet, LabeledGraph};

/// Parses one SMILES per line. Blank lines, `#` comments and a leading
/// `smiles` header are skipped; anything after the first whitespace is
/// ignored. Molecules must be connected.
pub fn parse_smiles_lines(text: &str, alphabet: &Alphabet) -> Result<Vec<LabeledGraph>> {
    let mut out = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let Some(token) = line.split_whitespace().next() else { continue };
        if token.starts_with('#') || (line_no == 0 && token.eq_ignore_ascii_case("smiles")) {
            continue;
        }
        let wrap = |reason: String| Error::Parse { line: line_no + 1, reason };
        let g = parse_smiles(token, alphabet).map_err(|e| wrap(e.to_string()))?;
        if !g.is_connected() {
            return Err(wrap(format!("`{token}` is not a single connected molecule")));
        }
        out.push(g);
    }
    Ok(out)
}

pub fn load_smiles_file(path: impl AsRef<Path>, alphabet: &Alphabet) -> Result<Vec<LabeledGraph>> {
    parse_smiles_lines(&std::fs::read_to_string(path)?, alphabet)
}

/// Edge-list blocks; returns the graphs and the alphabet their header names.
pub fn load_edge_list_file(path: impl AsRef<Path>) -> Result<(Vec<LabeledGraph>, Alphabet)> {
    let (graphs, k, c) = read_edge_lists(&std::fs::read_to_string(path)?)?;
    Ok((graphs, Alphabet::generic(k, c)?))
}

/// Parameters of the two-community generator.
#[derive(Clone, Debug, PartialEq)]
pub struct CommunityConfig {
    pub min_size: usize,
    pub max_size: usize,
    pub intra_p: f64,
    /// Edge probability of each cross-community node pair.
    pub inter_p: f64,
}

impl Default for CommunityConfig {
    fn default() -> Self {
        Self { min_size: 6, max_size: 10, intra_p: 0.7, inter_p: 0.05 }
    }
}

fn connected_er(size: usize, p: f64, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    loop {
        let mut g = LabeledGraph::with_nodes(vec![0; size]);
        for i in 0..size {
            for j in 0..i {
                if rng.gen_bool(p) {
                    g.add_edge(i, j, 0).expect("fresh pair");
                }
            }
        }
        if g.is_connected() {
            return g.edges().map(|(i, j, _)| (i, j)).collect();
        }
    }
}

/// `count` connected two-community graphs over the one-type alphabet.
/// Each community is an Erdős–Rényi graph redrawn until connected; cross
/// pairs are linked independently and one link is forced if none was drawn.
pub fn gen_community_small(count: usize, config: &CommunityConfig, rng: &mut impl Rng) -> Result<Vec<LabeledGraph>> {
    if config.min_size == 0 || config.min_size > config.max_size {
        return Err(Error::Invalid(format!("community sizes {}..={} are empty", config.min_size, config.max_size)));
    }
    for p in [config.intra_p, config.inter_p] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Invalid(format!("probability {p} outside [0, 1]")));
        }
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let a = rng.gen_range(config.min_size..=config.max_size);
        let b = rng.gen_range(config.min_size..=config.max_size);
        let mut g = LabeledGraph::with_nodes(vec![0; a + b]);
        for (i, j) in connected_er(a, config.intra_p, rng) {
            g.add_edge(i, j, 0)?;
        }
        for (i, j) in connected_er(b, config.intra_p, rng) {
            g.add_edge(a + i, a + j, 0)?;
        }
        let mut linked = false;
        for i in 0..a {
            for j in a..a + b {
                if rng.gen_bool(config.inter_p) {
                    g.add_edge(i, j, 0)?;
                    linked = true;
                }
            }
        }
        if !linked {
            let (i, j) = (rng.gen_range(0..a), rng.gen_range(a..a + b));
            g.add_edge(i, j, 0)?;
        }
        out.push(g);
    }
    Ok(out)
}
