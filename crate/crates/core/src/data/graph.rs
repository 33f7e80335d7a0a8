//! Undirected communication graphs.
//!
//! Edge-list files hold one `i j` pair of 0-based node ids per line.
//! Optional directives: `nodes <m>` fixes the node count (default: largest id
//! plus one) and `rate <i> <λ>` sets node `i`'s activation rate. `#` starts a
//! comment.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphSpec {
    nodes: usize,
    edges: Vec<(usize, usize)>,
    rates: Option<Vec<f64>>,
    #[serde(skip)]
    incident: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    Path,
    Star,
    Ring,
    ErdosRenyi(f64),
}

impl GraphSpec {
    /// Normalises each edge to `i < j`, sorts, and rejects self-loops and
    /// duplicates. Connectivity is not required here.
    pub fn new(nodes: usize, edges: Vec<(usize, usize)>, rates: Option<Vec<f64>>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for &(a, b) in &edges {
            if a == b {
                return Err(Error::invalid(format!("self-loop at node {a}")));
            }
            if a.max(b) >= nodes {
                return Err(Error::invalid(format!("edge ({a}, {b}) references a node >= {nodes}")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(Error::invalid(format!("duplicate edge ({a}, {b})")));
            }
        }
        if let Some(r) = &rates {
            if r.len() != nodes || r.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::invalid("need one positive activation rate per node"));
            }
        }
        let edges: Vec<(usize, usize)> = seen.into_iter().collect();
        let mut incident = vec![Vec::new(); nodes];
        for (e, &(a, b)) in edges.iter().enumerate() {
            incident[a].push(e);
            incident[b].push(e);
        }
        Ok(GraphSpec { nodes, edges, rates, incident })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn rates(&self) -> Option<&[f64]> {
        self.rates.as_deref()
    }

    pub fn with_rates(self, rates: Vec<f64>) -> Result<Self> {
        GraphSpec::new(self.nodes, self.edges, Some(rates))
    }

    /// Indices into [`GraphSpec::edges`] of the edges touching node `i`, ascending.
    pub fn incident(&self, i: usize) -> &[usize] {
        &self.incident[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.incident[i].len()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.incident[i].iter().map(move |&e| {
            let (a, b) = self.edges[e];
            if a == i {
                b
            } else {
                a
            }
        })
    }

    pub fn is_connected(&self) -> bool {
        if self.nodes == 0 {
            return true;
        }
        let mut seen = vec![false; self.nodes];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for u in self.neighbors(v) {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn require_connected(&self) -> Result<()> {
        if self.is_connected() {
            Ok(())
        } else {
            Err(Error::invalid("graph is not connected"))
        }
    }
}

pub fn gen_graph(kind: GraphKind, m: usize, seed: u64) -> Result<GraphSpec> {
    if m < 2 {
        return Err(Error::invalid("graphs need at least two nodes"));
    }
    let edges = match kind {
        GraphKind::Path => (0..m - 1).map(|i| (i, i + 1)).collect(),
        GraphKind::Star => (1..m).map(|i| (0, i)).collect(),
        GraphKind::Ring => {
            let mut e: Vec<_> = (0..m - 1).map(|i| (i, i + 1)).collect();
            if m > 2 {
                e.push((0, m - 1));
            }
            e
        }
        GraphKind::ErdosRenyi(p) => {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::invalid(format!("edge probability must lie in (0, 1], got {p}")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            loop {
                let mut e = Vec::new();
                for i in 0..m {
                    for j in (i + 1)..m {
                        if rng.random::<f64>() < p {
                            e.push((i, j));
                        }
                    }
                }
                let g = GraphSpec::new(m, e, None)?;
                if g.is_connected() {
                    return Ok(g);
                }
            }
        }
    };
    GraphSpec::new(m, edges, None)
}

pub fn read_edge_list(path: impl AsRef<Path>) -> Result<GraphSpec> {
    let path = path.as_ref();
    let name = path.display().to_string();
    parse_edge_list(BufReader::new(File::open(path)?), &name)
}

pub fn parse_edge_list<R: BufRead>(reader: R, name: &str) -> Result<GraphSpec> {
    let err = |line: usize, message: String| Error::Parse { path: name.to_string(), line, message };
    let mut nodes: Option<usize> = None;
    let mut edges = Vec::new();
    let mut rates: Vec<(usize, f64)> = Vec::new();
    for (ln, line) in reader.lines().enumerate() {
        let line_no = ln + 1;
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let tok: Vec<&str> = body.split_whitespace().collect();
        let num = |s: &str| s.parse::<usize>().map_err(|_| err(line_no, format!("bad node id `{s}`")));
        match tok.as_slice() {
            ["nodes", m] => nodes = Some(num(m)?),
            ["rate", i, r] => {
                let r: f64 = r.parse().map_err(|_| err(line_no, format!("bad rate `{r}`")))?;
                rates.push((num(i)?, r));
            }
            [a, b] => edges.push((num(a)?, num(b)?)),
            _ => return Err(err(line_no, format!("expected `i j`, got `{body}`"))),
        }
    }
    let m = nodes.unwrap_or_else(|| edges.iter().map(|(a, b)| a.max(b) + 1).max().unwrap_or(0));
    let rates = if rates.is_empty() {
        None
    } else {
        let mut r = vec![1.0; m];
        for (i, v) in rates {
            if i >= m {
                return Err(Error::invalid(format!("rate for node {i} but graph has {m} nodes")));
            }
            r[i] = v;
        }
        Some(r)
    };
    GraphSpec::new(m, edges, rates)
}

pub fn write_edge_list<W: Write>(g: &GraphSpec, mut w: W) -> Result<()> {
    writeln!(w, "nodes {}", g.nodes)?;
    for (a, b) in &g.edges {
        writeln!(w, "{a} {b}")?;
    }
    if let Some(r) = &g.rates {
        for (i, v) in r.iter().enumerate() {
            writeln!(w, "rate {i} {v}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_shapes() {
        let p = gen_graph(GraphKind::Path, 3, 0).unwrap();
        assert_eq!(p.edges(), &[(0, 1), (1, 2)]);
        let s = gen_graph(GraphKind::Star, 4, 0).unwrap();
        assert_eq!(s.edges().len(), 3);
        assert!(s.edges().iter().all(|(a, _)| *a == 0));
        assert_eq!(s.degree(0), 3);
        let r = gen_graph(GraphKind::Ring, 5, 0).unwrap();
        assert_eq!(r.edges().len(), 5);
        assert!((0..5).all(|i| r.degree(i) == 2));
    }

    #[test]
    fn erdos_renyi_connected_and_stable() {
        let a = gen_graph(GraphKind::ErdosRenyi(0.2), 20, 3).unwrap();
        let b = gen_graph(GraphKind::ErdosRenyi(0.2), 20, 3).unwrap();
        assert!(a.is_connected());
        assert_eq!(a, b);
        assert!(!a.edges().is_empty());
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(GraphSpec::new(3, vec![(1, 1)], None).is_err());
        assert!(GraphSpec::new(3, vec![(0, 1), (1, 0)], None).is_err());
        assert!(GraphSpec::new(2, vec![(0, 2)], None).is_err());
        assert!(!GraphSpec::new(3, vec![(0, 1)], None).unwrap().is_connected());
    }

    #[test]
    fn edge_list_round_trip() {
        let g = gen_graph(GraphKind::Ring, 4, 0).unwrap().with_rates(vec![1.0, 2.0, 0.5, 3.0]).unwrap();
        let mut buf = Vec::new();
        write_edge_list(&g, &mut buf).unwrap();
        let back = parse_edge_list(buf.as_slice(), "mem").unwrap();
        assert_eq!(back, g);
        assert!(matches!(parse_edge_list("0 1\n0 x\n".as_bytes(), "mem"), Err(Error::Parse { line: 2, .. })));
    }
}
