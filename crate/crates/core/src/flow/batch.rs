//! Flattening token sequences into the distinct sub-graph states they are
//! conditioned on, and the block-diagonal union those states form.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::{from_sequence, Alphabet, GraphSequence, LabeledGraph, Token};
use crate::nn::{node_features, relation_operators, Segments, SparseMatrix, Tensor};

/// Position of one sequence token inside a [`TokenBatch`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Node(usize),
    Edge(usize),
}

/// Every token of a set of sequences together with its conditioning state.
///
/// A new state is only materialized when the graph actually changed, so the
/// no-edge decisions of one node share a state.
#[derive(Clone, Debug, Default)]
pub struct TokenBatch {
    pub states: Vec<LabeledGraph>,
    /// Conditioning state per node token.
    pub node_states: Vec<usize>,
    pub node_tokens: Vec<usize>,
    /// `(state, new node i, earlier node j)` per edge token.
    pub edge_queries: Vec<(usize, usize, usize)>,
    pub edge_tokens: Vec<usize>,
    /// Per sequence, its tokens in order.
    pub slots: Vec<Vec<Slot>>,
}

impl TokenBatch {
    pub fn from_sequences(sequences: &[&GraphSequence], alphabet: &Alphabet) -> Result<Self> {
        let mut batch = Self::default();
        for seq in sequences {
            if seq.no_edge() != alphabet.no_edge() {
                return Err(Error::Invalid(format!(
                    "sequence no-edge index {} does not match alphabet ({})",
                    seq.no_edge(),
                    alphabet.no_edge()
                )));
            }
            alphabet.validate(&from_sequence(seq)?)?;
            batch.push_tokens(LabeledGraph::new(), seq.tokens(), seq.no_edge());
        }
        Ok(batch)
    }

    /// Token runs that continue from a given graph, as recorded by the
    /// sampler. Each edge token must link the newest node to an earlier one.
    pub fn from_continuations(items: &[(&LabeledGraph, &[Token])], alphabet: &Alphabet) -> Result<Self> {
        let mut batch = Self::default();
        for &(start, tokens) in items {
            alphabet.validate(start)?;
            let mut g = start.clone();
            for (position, &token) in tokens.iter().enumerate() {
                let fail = |reason: String| Error::Sequence { position, reason };
                match token {
                    Token::Node(t) if t < alphabet.num_node_types() => {
                        g.add_node(t);
                    }
                    Token::Edge { i, j, ty } if ty <= alphabet.no_edge() => {
                        if g.num_nodes() == 0 || i != g.num_nodes() - 1 || j >= i {
                            return Err(fail(format!("edge ({i}, {j}) does not start at the newest node")));
                        }
                        if ty != alphabet.no_edge() {
                            g.add_edge(i, j, ty).map_err(|e| fail(e.to_string()))?;
                        }
                    }
                    other => return Err(fail(format!("{other:?} outside alphabet `{}`", alphabet.name()))),
                }
            }
            batch.push_tokens(start.clone(), tokens, alphabet.no_edge());
        }
        Ok(batch)
    }

    fn push_tokens(&mut self, start: LabeledGraph, tokens: &[Token], no_edge: usize) {
        let mut g = start;
        let mut current: Option<usize> = None;
        let mut slots = Vec::with_capacity(tokens.len());
        for &token in tokens {
            let state = *current.get_or_insert_with(|| {
                self.states.push(g.clone());
                self.states.len() - 1
            });
            match token {
                Token::Node(t) => {
                    slots.push(Slot::Node(self.node_tokens.len()));
                    self.node_states.push(state);
                    self.node_tokens.push(t);
                    g.add_node(t);
                    current = None;
                }
                Token::Edge { i, j, ty } => {
                    slots.push(Slot::Edge(self.edge_tokens.len()));
                    self.edge_queries.push((state, i, j));
                    self.edge_tokens.push(ty);
                    if ty != no_edge {
                        g.add_edge(i, j, ty).expect("validated tokens");
                        current = None;
                    }
                }
            }
        }
        self.slots.push(slots);
    }

    pub fn num_tokens(&self) -> usize {
        self.node_tokens.len() + self.edge_tokens.len()
    }
}

/// Block-diagonal union of states: one-hot features, per-relation
/// operators, and the row range of each state.
#[derive(Clone, Debug)]
pub struct StateUnion {
    pub features: Tensor,
    pub operators: Vec<Arc<SparseMatrix>>,
    pub segments: Segments,
    pub offsets: Vec<usize>,
}

impl StateUnion {
    pub fn new(states: &[&LabeledGraph], alphabet: &Alphabet) -> Self {
        let mut offsets = Vec::with_capacity(states.len());
        let mut segments = Vec::with_capacity(states.len());
        let mut at = 0;
        for g in states {
            offsets.push(at);
            segments.push(at..at + g.num_nodes());
            at += g.num_nodes();
        }
        Self {
            features: node_features(states, alphabet.num_node_types()),
            operators: relation_operators(states, alphabet.num_edge_types()),
            segments: segments.into(),
            offsets,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::to_sequence;

    #[test]
    fn states_are_shared_across_no_edge_decisions() {
        let a = Alphabet::generic(2, 1).unwrap();
        let g = LabeledGraph::from_edges(vec![0, 1, 0], &[(0, 1, 0), (1, 2, 0)]).unwrap();
        let seq = to_sequence(&g, &[0, 1, 2], a.no_edge()).unwrap();
        let b = TokenBatch::from_sequences(&[&seq], &a).unwrap();
        // the completed graph is never a conditioning state
        let sizes: Vec<(usize, usize)> = b.states.iter().map(|s| (s.num_nodes(), s.num_edges())).collect();
        assert_eq!(sizes, vec![(0, 0), (1, 0), (2, 0), (2, 1), (3, 1)]);
        assert_eq!(b.node_states, vec![0, 1, 3]);
        // (1,0) on state 2; (2,0) and (2,1) both on state 4
        assert_eq!(b.edge_queries, vec![(2, 1, 0), (4, 2, 0), (4, 2, 1)]);
        assert_eq!(b.num_tokens(), 6);
    }

    #[test]
    fn foreign_no_edge_index_is_rejected() {
        let a = Alphabet::generic(2, 1).unwrap();
        let seq = GraphSequence::new(vec![Token::Node(0)], 3);
        assert!(TokenBatch::from_sequences(&[&seq], &a).is_err());
    }

    #[test]
    fn continuations_start_from_the_given_graph() {
        let a = Alphabet::generic(2, 1).unwrap();
        let start = LabeledGraph::from_edges(vec![0, 1], &[(0, 1, 0)]).unwrap();
        let tokens = [Token::Node(1), Token::Edge { i: 2, j: 0, ty: 1 }, Token::Edge { i: 2, j: 1, ty: 0 }];
        let b = TokenBatch::from_continuations(&[(&start, &tokens[..])], &a).unwrap();
        assert_eq!(b.states[0], start);
        assert_eq!(b.edge_queries, vec![(1, 2, 0), (1, 2, 1)]);
        let bad = [Token::Node(0), Token::Edge { i: 2, j: 2, ty: 0 }];
        assert!(TokenBatch::from_continuations(&[(&start, &bad[..])], &a).is_err());
        let bad = [Token::Edge { i: 1, j: 0, ty: 0 }];
        assert!(TokenBatch::from_continuations(&[(&start, &bad[..])], &a).is_err());
    }
}
