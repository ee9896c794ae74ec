//! Plain-text edge lists.
//!
//! ```text
//! # nodes=3
//! 0 1
//! 1 2
//! ```
//!
//! The first line declares the node count. Every other non-empty line is
//! either a `#` comment or `u v` (decimal, 0-indexed). Undirected graphs
//! carry an extra `# undirected` marker line.

use std::io::{self, BufRead, Write};

use thiserror::Error;

use super::{Dag, GraphError, UndirectedGraph};

const UNDIRECTED_MARKER: &str = "# undirected";

#[derive(Debug, Error)]
pub enum ParseErrorKind {
    #[error("missing `# nodes=N` header")]
    MissingHeader,
    #[error("malformed header {0:?}")]
    BadHeader(String),
    #[error("expected `u v`, found {0:?}")]
    Malformed(String),
    #[error("node id {id} is not below the declared count {count}")]
    OutOfBounds { id: usize, count: usize },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    Duplicate(usize, usize),
    #[error("expected a {expected} edge list")]
    WrongKind { expected: &'static str },
    #[error("{0}")]
    Graph(GraphError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Error)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    /// 1-based; 0 when the error is not tied to a line.
    pub line: usize,
    pub kind: ParseErrorKind,
}

impl ParseError {
    fn at(line: usize, kind: ParseErrorKind) -> Self {
        Self { line, kind }
    }
}

pub fn write_dag<W: Write>(d: &Dag, mut out: W) -> io::Result<()> {
    writeln!(out, "# nodes={}", d.node_count())?;
    for &(u, v) in d.edges() {
        writeln!(out, "{u} {v}")?;
    }
    out.flush()
}

pub fn write_undirected<W: Write>(g: &UndirectedGraph, mut out: W) -> io::Result<()> {
    writeln!(out, "# nodes={}", g.node_count())?;
    writeln!(out, "{UNDIRECTED_MARKER}")?;
    for &(u, v) in g.edges() {
        writeln!(out, "{u} {v}")?;
    }
    out.flush()
}

struct Parsed {
    node_count: usize,
    undirected: bool,
    edges: Vec<(usize, usize)>,
}

fn parse<R: BufRead>(input: R) -> Result<Parsed, ParseError> {
    let mut node_count = None;
    let mut undirected = false;
    let mut edges = Vec::new();
    let mut seen = std::collections::HashMap::new();
    for (idx, line) in input.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| ParseError::at(lineno, e.into()))?;
        let text = line.trim();
        let Some(count) = node_count else {
            if text.is_empty() {
                continue;
            }
            let value = text
                .strip_prefix('#')
                .map(str::trim)
                .and_then(|rest| rest.strip_prefix("nodes="))
                .ok_or_else(|| ParseError::at(lineno, ParseErrorKind::MissingHeader))?;
            let count = value
                .trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| ParseError::at(lineno, ParseErrorKind::BadHeader(text.into())))?;
            node_count = Some(count);
            continue;
        };
        if text.is_empty() {
            continue;
        }
        if text.starts_with('#') {
            if text == UNDIRECTED_MARKER {
                undirected = true;
            }
            continue;
        }
        let mut fields = text.split_ascii_whitespace().map(str::parse::<usize>);
        let (u, v) = match (fields.next(), fields.next(), fields.next()) {
            (Some(Ok(u)), Some(Ok(v)), None) => (u, v),
            _ => return Err(ParseError::at(lineno, ParseErrorKind::Malformed(text.into()))),
        };
        for id in [u, v] {
            if id >= count {
                return Err(ParseError::at(lineno, ParseErrorKind::OutOfBounds { id, count }));
            }
        }
        if u == v {
            return Err(ParseError::at(lineno, ParseErrorKind::SelfLoop(u)));
        }
        let key = if undirected { (u.min(v), u.max(v)) } else { (u, v) };
        if seen.insert(key, lineno).is_some() {
            return Err(ParseError::at(lineno, ParseErrorKind::Duplicate(u, v)));
        }
        edges.push((u, v));
    }
    let node_count = node_count.ok_or_else(|| ParseError::at(0, ParseErrorKind::MissingHeader))?;
    Ok(Parsed { node_count, undirected, edges })
}

pub fn read_dag<R: BufRead>(input: R) -> Result<Dag, ParseError> {
    let parsed = parse(input)?;
    if parsed.undirected {
        return Err(ParseError::at(0, ParseErrorKind::WrongKind { expected: "directed" }));
    }
    Dag::new(parsed.node_count, parsed.edges).map_err(|e| ParseError::at(0, ParseErrorKind::Graph(e)))
}

pub fn read_undirected<R: BufRead>(input: R) -> Result<UndirectedGraph, ParseError> {
    let parsed = parse(input)?;
    if !parsed.undirected {
        return Err(ParseError::at(0, ParseErrorKind::WrongKind { expected: "undirected" }));
    }
    UndirectedGraph::new(parsed.node_count, parsed.edges).map_err(|e| ParseError::at(0, ParseErrorKind::Graph(e)))
}
