//! Labeled undirected graphs, the BFS canonical ordering, and the token
//! sequence view used by the flow.

mod io;
mod sequence;

use std::collections::VecDeque;

pub use io::{read_edge_lists, write_edge_list};
pub use sequence::{from_sequence, to_sequence, GraphSequence, Token};

use crate::error::{Error, Result};

/// Node and edge vocabularies of a dataset.
///
/// Edge type `v` carries bond order `v + 1` when a valence table is present.
/// The extra category `num_edge_types()` stands for "no edge".
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alphabet {
    name: String,
    node_symbols: Vec<String>,
    edge_symbols: Vec<String>,
    max_valence: Option<Vec<u32>>,
}

impl Alphabet {
    pub fn new(
        name: impl Into<String>,
        node_symbols: Vec<String>,
        edge_symbols: Vec<String>,
        max_valence: Option<Vec<u32>>,
    ) -> Result<Self> {
        if node_symbols.is_empty() || edge_symbols.is_empty() {
            return Err(Error::Alphabet("need at least one node and one edge type".into()));
        }
        for symbols in [&node_symbols, &edge_symbols] {
            let mut sorted = symbols.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != symbols.len() {
                return Err(Error::Alphabet(format!("duplicate symbol in {symbols:?}")));
            }
        }
        if let Some(table) = &max_valence {
            if table.len() != node_symbols.len() {
                return Err(Error::Alphabet("valence table length differs from node types".into()));
            }
            if table.contains(&0) {
                return Err(Error::Alphabet("valence entries must be >= 1".into()));
            }
        }
        Ok(Self { name: name.into(), node_symbols, edge_symbols, max_valence })
    }

    /// Alphabet for unlabeled generic graphs with `k` node and `c` edge types
    /// and no valence constraint.
    pub fn generic(k: usize, c: usize) -> Result<Self> {
        let nodes = (0..k).map(|i| format!("n{i}")).collect();
        let edges = (0..c).map(|i| format!("e{i}")).collect();
        Self::new("generic", nodes, edges, None)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// `k`
    pub fn num_node_types(&self) -> usize {
        self.node_symbols.len()
    }

    /// `c`; the no-edge category has this index.
    pub fn num_edge_types(&self) -> usize {
        self.edge_symbols.len()
    }

    pub fn no_edge(&self) -> usize {
        self.edge_symbols.len()
    }

    pub fn node_symbols(&self) -> &[String] {
        &self.node_symbols
    }

    pub fn edge_symbols(&self) -> &[String] {
        &self.edge_symbols
    }

    pub fn node_index(&self, symbol: &str) -> Option<usize> {
        self.node_symbols.iter().position(|s| s == symbol)
    }

    pub fn max_valence(&self, node_type: usize) -> Option<u32> {
        self.max_valence.as_ref().map(|t| t[node_type])
    }

    pub fn valence_table(&self) -> Option<&[u32]> {
        self.max_valence.as_deref()
    }

    pub fn is_molecular(&self) -> bool {
        self.max_valence.is_some()
    }

    /// Checks every node and edge type of `g` is inside the vocabulary.
    pub fn validate(&self, g: &LabeledGraph) -> Result<()> {
        if let Some(t) = g.node_types().iter().find(|&&t| t >= self.num_node_types()) {
            return Err(Error::Graph(format!("node type {t} outside alphabet `{}`", self.name)));
        }
        if let Some((_, _, t)) = g.edges().find(|&(_, _, t)| t >= self.num_edge_types()) {
            return Err(Error::Graph(format!("edge type {t} outside alphabet `{}`", self.name)));
        }
        Ok(())
    }
}

/// Node-typed, edge-typed simple undirected graph.
///
/// Adjacency lists are kept sorted by neighbor index, so structural equality
/// is plain `==`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct LabeledGraph {
    node_types: Vec<usize>,
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl LabeledGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_nodes(node_types: Vec<usize>) -> Self {
        let adjacency = vec![Vec::new(); node_types.len()];
        Self { node_types, adjacency }
    }

    /// Builds a graph from node types and `(i, j, type)` edges.
    pub fn from_edges(node_types: Vec<usize>, edges: &[(usize, usize, usize)]) -> Result<Self> {
        let mut g = Self::with_nodes(node_types);
        for &(i, j, t) in edges {
            g.add_edge(i, j, t)?;
        }
        Ok(g)
    }

    pub fn num_nodes(&self) -> usize {
        self.node_types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_types.is_empty()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn node_types(&self) -> &[usize] {
        &self.node_types
    }

    pub fn node_type(&self, i: usize) -> usize {
        self.node_types[i]
    }

    pub fn add_node(&mut self, node_type: usize) -> usize {
        self.node_types.push(node_type);
        self.adjacency.push(Vec::new());
        self.node_types.len() - 1
    }

    pub fn add_edge(&mut self, i: usize, j: usize, edge_type: usize) -> Result<()> {
        let n = self.num_nodes();
        if i >= n || j >= n {
            return Err(Error::Graph(format!("edge ({i}, {j}) references missing node (n = {n})")));
        }
        if i == j {
            return Err(Error::Graph(format!("self-loop on node {i}")));
        }
        if self.edge(i, j).is_some() {
            return Err(Error::EdgeExists { i, j });
        }
        insert_sorted(&mut self.adjacency[i], (j, edge_type));
        insert_sorted(&mut self.adjacency[j], (i, edge_type));
        Ok(())
    }

    /// Drops the highest-indexed node together with its incident edges.
    pub fn pop_node(&mut self) -> Option<usize> {
        let t = self.node_types.pop()?;
        let last = self.node_types.len();
        self.adjacency.pop();
        for list in &mut self.adjacency {
            list.retain(|&(j, _)| j != last);
        }
        Some(t)
    }

    pub fn edge(&self, i: usize, j: usize) -> Option<usize> {
        let list = self.adjacency.get(i)?;
        list.binary_search_by_key(&j, |&(n, _)| n).ok().map(|p| list[p].1)
    }

    /// Neighbors of `i` with edge types, ascending by neighbor index.
    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    /// Sum of bond orders (`edge_type + 1`) incident to `i`.
    pub fn valence_sum(&self, i: usize) -> u32 {
        self.adjacency[i].iter().map(|&(_, t)| t as u32 + 1).sum()
    }

    /// All edges as `(i, j, type)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().filter(move |&&(j, _)| j > i).map(move |&(j, t)| (i, j, t)))
    }

    /// True iff the graph has a single connected component. The empty graph
    /// counts as connected.
    pub fn is_connected(&self) -> bool {
        self.is_empty() || self.reachable_from(0).iter().all(|&r| r)
    }

    fn reachable_from(&self, root: usize) -> Vec<bool> {
        let mut seen = vec![false; self.num_nodes()];
        let mut stack = vec![root];
        seen[root] = true;
        while let Some(u) = stack.pop() {
            for &(v, _) in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    }

    /// Breadth-first visit order from node 0, neighbors taken in ascending
    /// index order.
    pub fn bfs_order(&self) -> Result<Vec<usize>> {
        if self.is_empty() {
            return Err(Error::Graph("bfs_order of an empty graph".into()));
        }
        let n = self.num_nodes();
        let mut seen = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &(v, _) in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        if order.len() < n {
            let unreachable = (0..n).filter(|&i| !seen[i]).collect();
            return Err(Error::Disconnected { unreachable });
        }
        Ok(order)
    }

    /// Relabels nodes so that new node `p` is old node `order[p]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let n = self.num_nodes();
        let mut position = vec![usize::MAX; n];
        if order.len() != n {
            return Err(Error::Graph(format!("permutation of length {} for {n} nodes", order.len())));
        }
        for (p, &old) in order.iter().enumerate() {
            if old >= n || position[old] != usize::MAX {
                return Err(Error::Graph(format!("{order:?} is not a permutation")));
            }
            position[old] = p;
        }
        let mut g = Self::with_nodes(order.iter().map(|&o| self.node_types[o]).collect());
        for (i, j, t) in self.edges() {
            g.add_edge(position[i], position[j], t)?;
        }
        Ok(g)
    }

    /// The graph relabeled into BFS order.
    pub fn bfs_canonical(&self) -> Result<Self> {
        self.permuted(&self.bfs_order()?)
    }

    /// Sub-graph induced by the first `m` nodes.
    pub fn prefix(&self, m: usize) -> Self {
        let mut g = self.clone();
        while g.num_nodes() > m {
            g.pop_node();
        }
        g
    }

    /// Number of independent cycles, `|E| - |V| + components`.
    pub fn cycle_rank(&self) -> usize {
        let n = self.num_nodes();
        let mut seen = vec![false; n];
        let mut components = 0;
        for root in 0..n {
            if seen[root] {
                continue;
            }
            components += 1;
            let mut stack = vec![root];
            seen[root] = true;
            while let Some(u) = stack.pop() {
                for &(v, _) in &self.adjacency[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
        }
        self.num_edges() + components - n
    }
}

fn insert_sorted(list: &mut Vec<(usize, usize)>, item: (usize, usize)) {
    let pos = list.partition_point(|&(n, _)| n < item.0);
    list.insert(pos, item);
}
