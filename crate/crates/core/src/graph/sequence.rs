use crate::error::{Error, Result};

use super::LabeledGraph;

/// One generation decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Token {
    /// Type of the next node.
    Node(usize),
    /// Edge between the newest node `i` and an earlier node `j < i`; `ty`
    /// equal to the no-edge index means the pair stays unconnected.
    Edge { i: usize, j: usize, ty: usize },
}

/// Token stream `a_1, a_2, b_21, a_3, b_31, b_32, ...` with 0-based node
/// indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphSequence {
    tokens: Vec<Token>,
    no_edge: usize,
}

impl GraphSequence {
    /// Wraps raw tokens without checking the layout; `from_sequence`
    /// validates.
    pub fn new(tokens: Vec<Token>, no_edge: usize) -> Self {
        Self { tokens, no_edge }
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn no_edge(&self) -> usize {
        self.no_edge
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Serializes `g` under the node order `order` (`order[p]` is the original
/// index of sequence node `p`).
pub fn to_sequence(g: &LabeledGraph, order: &[usize], no_edge: usize) -> Result<GraphSequence> {
    let relabeled = g.permuted(order)?;
    let n = relabeled.num_nodes();
    let mut tokens = Vec::with_capacity(n + n * n.saturating_sub(1) / 2);
    for i in 0..n {
        tokens.push(Token::Node(relabeled.node_type(i)));
        for j in 0..i {
            let ty = relabeled.edge(i, j).unwrap_or(no_edge);
            tokens.push(Token::Edge { i, j, ty });
        }
    }
    Ok(GraphSequence { tokens, no_edge })
}

/// Rebuilds the graph a sequence describes, in sequence order.
pub fn from_sequence(s: &GraphSequence) -> Result<LabeledGraph> {
    let mut g = LabeledGraph::new();
    // (node index, next expected j) while inside an edge block
    let mut pending: Option<(usize, usize)> = None;
    for (position, token) in s.tokens.iter().enumerate() {
        let fail = |reason: String| Error::Sequence { position, reason };
        match *token {
            Token::Node(t) => {
                if let Some((i, j)) = pending {
                    if j < i {
                        return Err(fail(format!("node token before edge ({i}, {j})")));
                    }
                }
                let i = g.add_node(t);
                pending = Some((i, 0));
            }
            Token::Edge { i, j, ty } => {
                let Some((cur, next)) = pending else {
                    return Err(fail("edge token before any node".into()));
                };
                if i != cur || j != next || j >= i {
                    return Err(fail(format!("expected edge ({cur}, {next}), found ({i}, {j})")));
                }
                if ty > s.no_edge {
                    return Err(fail(format!("edge type {ty} beyond no-edge index {}", s.no_edge)));
                }
                if ty != s.no_edge {
                    g.add_edge(i, j, ty).map_err(|e| fail(e.to_string()))?;
                }
                pending = Some((cur, next + 1));
            }
        }
    }
    if let Some((i, j)) = pending {
        if j < i {
            return Err(Error::Sequence {
                position: s.tokens.len(),
                reason: format!("sequence ends before edge ({i}, {j})"),
            });
        }
    }
    Ok(g)
}
