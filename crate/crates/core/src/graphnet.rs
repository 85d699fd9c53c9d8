//! Random witness networks.
//!
//! Two constructions: a central generator that flips a coin per node pair,
//! and a localized one where every node picks its own peers and the graph is
//! assembled from everyone's picks.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::index;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("connection probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("graph needs at least one node")]
    Empty,
    #[error("selection references unknown node {0}")]
    UnknownNode(usize),
    #[error("duplicate selection for node {0}")]
    DuplicateOwner(usize),
    #[error("edge list parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Undirected simple graph over nodes `0..n`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Graph {
    adjacency: Vec<BTreeSet<usize>>,
}

impl Graph {
    pub fn empty(n: usize) -> Self {
        Graph {
            adjacency: vec![BTreeSet::new(); n],
        }
    }

    pub fn complete(n: usize) -> Self {
        let mut g = Graph::empty(n);
        for a in 0..n {
            for b in a + 1..n {
                g.connect(a, b);
            }
        }
        g
    }

    pub fn from_edges(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, GraphError> {
        let mut g = Graph::empty(n);
        for (a, b) in edges {
            if a >= n {
                return Err(GraphError::UnknownNode(a));
            }
            if b >= n {
                return Err(GraphError::UnknownNode(b));
            }
            g.connect(a, b);
        }
        Ok(g)
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(BTreeSet::len).sum::<usize>() / 2
    }

    /// Self-loops are ignored.
    pub fn connect(&mut self, a: usize, b: usize) {
        if a != b {
            self.adjacency[a].insert(b);
            self.adjacency[b].insert(a);
        }
    }

    pub fn disconnect(&mut self, a: usize, b: usize) {
        self.adjacency[a].remove(&b);
        self.adjacency[b].remove(&a);
    }

    pub fn is_connected(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].contains(&b)
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[v].iter().copied()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    /// Edges as (low, high) pairs in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(a, ns)| ns.range(a + 1..).map(move |&b| (a, b)))
    }

    /// `n=<count>` header followed by one `u v` line per edge.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("n={}\n", self.node_count());
        for (a, b) in self.edges() {
            let _ = writeln!(out, "{a} {b}");
        }
        out
    }

    /// Parses the edge-list format. Blank lines and `#` comments are skipped.
    pub fn from_edge_list(text: &str) -> Result<Self, GraphError> {
        let mut n = None;
        let mut edges = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: &str| GraphError::Parse {
                line: i + 1,
                reason: reason.to_string(),
            };
            if let Some(v) = line.strip_prefix("n=") {
                n = Some(
                    v.trim()
                        .parse::<usize>()
                        .map_err(|_| err("bad node count"))?,
                );
                continue;
            }
            let mut it = line.split_whitespace();
            let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
                return Err(err("expected `u v`"));
            };
            let a = a.parse::<usize>().map_err(|_| err("bad node id"))?;
            let b = b.parse::<usize>().map_err(|_| err("bad node id"))?;
            edges.push((a, b));
        }
        let n = n.ok_or(GraphError::Parse {
            line: 0,
            reason: "missing n=<count> header".into(),
        })?;
        Graph::from_edges(n, edges)
    }

    /// Connected components, each sorted, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.node_count();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for s in 0..n {
            if seen[s] {
                continue;
            }
            let mut comp = vec![s];
            seen[s] = true;
            let mut i = 0;
            while i < comp.len() {
                let v = comp[i];
                for w in self.neighbors(v) {
                    if !seen[w] {
                        seen[w] = true;
                        comp.push(w);
                    }
                }
                i += 1;
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }
}

/// Peers chosen by one node in the localized construction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectionVector {
    pub owner: usize,
    pub chosen: BTreeSet<usize>,
}

/// Central generator: for every pair, draw a fresh threshold in [0, 1) and
/// connect when `p` exceeds it.
pub fn random_network_central<R: Rng + ?Sized>(
    n: usize,
    p: f64,
    rng: &mut R,
) -> Result<Graph, GraphError> {
    if n == 0 {
        return Err(GraphError::Empty);
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(GraphError::Probability(p));
    }
    let mut g = Graph::empty(n);
    for a in 0..n {
        for b in a + 1..n {
            let threshold: f64 = rng.gen();
            if p > threshold {
                g.connect(a, b);
            } else if g.is_connected(a, b) {
                g.disconnect(a, b);
            }
        }
    }
    Ok(g)
}

/// Localized step run by `owner`: draw k uniformly from [0, n−1], then k
/// distinct peers uniformly without replacement.
pub fn local_selection<R: Rng + ?Sized>(owner: usize, n: usize, rng: &mut R) -> SelectionVector {
    assert!(n >= 2, "local selection needs at least two nodes");
    assert!(owner < n);
    let k = rng.gen_range(0..=n - 1);
    let chosen = index::sample(rng, n - 1, k)
        .into_iter()
        .map(|i| if i >= owner { i + 1 } else { i })
        .collect();
    SelectionVector { owner, chosen }
}

/// Union rule: {a, b} is an edge iff a chose b or b chose a.
pub fn assemble_from_selections(
    n: usize,
    selections: &[SelectionVector],
) -> Result<Graph, GraphError> {
    let mut g = Graph::empty(n);
    let mut owners = BTreeSet::new();
    for s in selections {
        if s.owner >= n {
            return Err(GraphError::UnknownNode(s.owner));
        }
        if !owners.insert(s.owner) {
            return Err(GraphError::DuplicateOwner(s.owner));
        }
        for &c in &s.chosen {
            if c >= n {
                return Err(GraphError::UnknownNode(c));
            }
            g.connect(s.owner, c);
        }
    }
    Ok(g)
}
