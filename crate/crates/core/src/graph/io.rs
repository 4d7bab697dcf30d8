//! Whitespace-separated edge-list blocks:
//!
//! ```text
//! n k c
//! i type        (n lines)
//! i j type      (any number of lines)
//! ```
//!
//! Blocks are separated by blank lines.

use std::fmt::Write as _;

use crate::error::{Error, Result};

use super::LabeledGraph;

/// Reads every block in `text`. Returns the graphs with the `(k, c)` pair of
/// the last header seen; all headers must agree.
pub fn read_edge_lists(text: &str) -> Result<(Vec<LabeledGraph>, usize, usize)> {
    let mut graphs = Vec::new();
    let mut kc: Option<(usize, usize)> = None;
    let mut lines = text.lines().enumerate().peekable();
    loop {
        while lines.peek().is_some_and(|(_, l)| l.trim().is_empty()) {
            lines.next();
        }
        let Some((line_no, header)) = lines.next() else { break };
        let head = numbers(header, line_no)?;
        let [n, k, c] = head[..] else {
            return Err(parse_err(line_no, "header must be `n k c`"));
        };
        if let Some(prev) = kc {
            if prev != (k, c) {
                return Err(parse_err(line_no, "blocks disagree on k/c"));
            }
        }
        kc = Some((k, c));
        let mut types = vec![usize::MAX; n];
        for _ in 0..n {
            let (line_no, l) = lines.next().ok_or_else(|| parse_err(line_no, "missing node lines"))?;
            let [i, t] = numbers(l, line_no)?[..] else {
                return Err(parse_err(line_no, "node line must be `i type`"));
            };
            if i >= n || t >= k || types[i] != usize::MAX {
                return Err(parse_err(line_no, "bad node index or type"));
            }
            types[i] = t;
        }
        let mut g = LabeledGraph::with_nodes(types);
        while let Some((line_no, l)) = lines.next_if(|(_, l)| !l.trim().is_empty()) {
            let [i, j, t] = numbers(l, line_no)?[..] else {
                return Err(parse_err(line_no, "edge line must be `i j type`"));
            };
            if t >= c {
                return Err(parse_err(line_no, "edge type out of range"));
            }
            g.add_edge(i, j, t).map_err(|e| parse_err(line_no, &e.to_string()))?;
        }
        graphs.push(g);
    }
    let (k, c) = kc.unwrap_or((1, 1));
    Ok((graphs, k, c))
}

pub fn write_edge_list(g: &LabeledGraph, k: usize, c: usize) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {k} {c}", g.num_nodes());
    for (i, t) in g.node_types().iter().enumerate() {
        let _ = writeln!(out, "{i} {t}");
    }
    for (i, j, t) in g.edges() {
        let _ = writeln!(out, "{i} {j} {t}");
    }
    out
}

fn numbers(line: &str, line_no: usize) -> Result<Vec<usize>> {
    line.split_whitespace()
        .map(|tok| tok.parse().map_err(|_| parse_err(line_no, &format!("not an index: {tok:?}"))))
        .collect()
}

fn parse_err(line: usize, reason: &str) -> Error {
    Error::Parse { line: line + 1, reason: reason.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_multiple_blocks() {
        let text = "3 1 1\n0 0\n1 0\n2 0\n0 1 0\n1 2 0\n\n2 1 1\n0 0\n1 0\n0 1 0\n";
        let (graphs, k, c) = read_edge_lists(text).unwrap();
        assert_eq!((graphs.len(), k, c), (2, 1, 1));
        assert_eq!(graphs[0].num_edges(), 2);
        let round: String = graphs.iter().map(|g| write_edge_list(g, k, c)).collect::<Vec<_>>().join("\n");
        assert_eq!(round, text);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(read_edge_lists("2 1 1\n0 0\n").is_err());
        assert!(read_edge_lists("2 1 1\n0 0\n1 0\n0 1 3\n").is_err());
        assert!(read_edge_lists("2 1\n").is_err());
        assert!(read_edge_lists("2 1 1\n0 0\n1 5\n").is_err());
    }
}
