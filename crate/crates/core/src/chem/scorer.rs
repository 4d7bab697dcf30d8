//! Property scorers: two toy built-ins and a child process speaking a
//! line protocol (`<VERB> <smiles>` in, `<float>` or `ERR <msg>` out,
//! `QUIT` to stop).

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use crate::error::{Error, Result};
use crate::graph::{Alphabet, LabeledGraph};

use super::smiles::write_smiles;

pub enum Scorer {
    /// Node count.
    Atoms,
    /// Longest carbon chain minus ring count.
    PlogpProxy,
    External(ExternalScorer),
}

impl Scorer {
    /// `atoms` or `plogp-proxy`.
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "atoms" => Ok(Self::Atoms),
            "plogp-proxy" => Ok(Self::PlogpProxy),
            other => Err(Error::Invalid(format!("unknown scorer `{other}`"))),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Self::Atoms => "atoms",
            Self::PlogpProxy => "plogp-proxy",
            Self::External(_) => "external",
        }
    }

    /// Steric-strain penalty `R_ss`; 0 unless an external scorer supplies it.
    pub fn steric_strain(&mut self, g: &LabeledGraph, alphabet: &Alphabet) -> Result<f64> {
        match self {
            Self::External(ext) => ext.request("SS", &write_smiles(g, alphabet)),
            _ => Ok(0.0),
        }
    }

    /// Functional-group filter penalty `R_f`; 0 unless an external scorer
    /// supplies it.
    pub fn filter_penalty(&mut self, g: &LabeledGraph, alphabet: &Alphabet) -> Result<f64> {
        match self {
            Self::External(ext) => ext.request("FILTER", &write_smiles(g, alphabet)),
            _ => Ok(0.0),
        }
    }
}

pub fn score(g: &LabeledGraph, alphabet: &Alphabet, scorer: &mut Scorer) -> Result<f64> {
    match scorer {
        Scorer::Atoms => Ok(g.num_nodes() as f64),
        Scorer::PlogpProxy => {
            let carbon = alphabet.node_index("C");
            let chain = carbon.map_or(0, |c| longest_carbon_chain(g, c));
            Ok(chain as f64 - g.cycle_rank() as f64)
        }
        Scorer::External(ext) => {
            let verb = ext.verb.clone();
            ext.request(&verb, &write_smiles(g, alphabet))
        }
    }
}

/// Atoms on the longest simple path through nodes of type `carbon`.
pub fn longest_carbon_chain(g: &LabeledGraph, carbon: usize) -> usize {
    fn extend(g: &LabeledGraph, carbon: usize, u: usize, on_path: &mut [bool]) -> usize {
        let mut best = 0;
        for &(v, _) in g.neighbors(u) {
            if g.node_type(v) == carbon && !on_path[v] {
                on_path[v] = true;
                best = best.max(extend(g, carbon, v, on_path));
                on_path[v] = false;
            }
        }
        best + 1
    }
    let mut on_path = vec![false; g.num_nodes()];
    (0..g.num_nodes())
        .filter(|&u| g.node_type(u) == carbon)
        .map(|u| {
            on_path[u] = true;
            let len = extend(g, carbon, u, &mut on_path);
            on_path[u] = false;
            len
        })
        .max()
        .unwrap_or(0)
}

/// Scorer running as a child process. One request is in flight at a time.
pub struct ExternalScorer {
    child: Child,
    stdin: ChildStdin,
    replies: Receiver<String>,
    verb: String,
    timeout: Duration,
}

impl ExternalScorer {
    /// Starts `command` through `sh -c`; `verb` prefixes every score request.
    pub fn spawn(command: &str, verb: &str, timeout: Duration) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, replies) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self { child, stdin, replies, verb: verb.to_string(), timeout })
    }

    /// Sends `<verb> <smiles>` and parses the one-line reply.
    pub fn request(&mut self, verb: &str, smiles: &str) -> Result<f64> {
        let io_err = |e: std::io::Error| Error::Scorer { reason: format!("write failed: {e}"), raw: String::new() };
        writeln!(self.stdin, "{verb} {smiles}").map_err(io_err)?;
        self.stdin.flush().map_err(io_err)?;
        let raw = match self.replies.recv_timeout(self.timeout) {
            Ok(line) => line,
            Err(RecvTimeoutError::Timeout) => {
                return Err(Error::Scorer { reason: "timed out".into(), raw: String::new() })
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(Error::Scorer { reason: "scorer exited".into(), raw: String::new() })
            }
        };
        let reply = raw.trim();
        if let Some(msg) = reply.strip_prefix("ERR") {
            return Err(Error::Scorer { reason: msg.trim().to_string(), raw });
        }
        match reply.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(Error::Scorer { reason: "reply is not a finite float".into(), raw }),
        }
    }
}

impl Drop for ExternalScorer {
    fn drop(&mut self) {
        let _ = writeln!(self.stdin, "QUIT");
        let _ = self.stdin.flush();
        for _ in 0..20 {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(5));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
