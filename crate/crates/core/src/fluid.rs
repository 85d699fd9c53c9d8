//! Asynchronous fluid communities.
//!
//! k fluids start on k distinct random nodes. Each superstep visits every
//! node in random order and moves it to the community with the largest summed
//! density over its closed neighbourhood, where a community's density is the
//! inverse of its size. A node already in an arg-max community stays put;
//! otherwise one of the arg-max communities is drawn uniformly. Densities are
//! updated immediately after each move.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use thiserror::Error;

use crate::graphnet::Graph;

pub type CommunityId = usize;

pub const DEFAULT_MAX_SUPERSTEPS: usize = 100;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FluidError {
    #[error("k = {k} must lie in 1..={nodes}")]
    BadK { k: usize, nodes: usize },
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("community {0} is empty")]
    EmptyCommunity(CommunityId),
    #[error("assignment parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommunityAssignment {
    membership: Vec<Option<CommunityId>>,
    sizes: Vec<usize>,
    pub k: usize,
    pub superstep_count: usize,
    pub converged: bool,
}

impl CommunityAssignment {
    pub fn unassigned(n: usize, k: usize) -> Self {
        CommunityAssignment {
            membership: vec![None; n],
            sizes: vec![0; k],
            k,
            superstep_count: 0,
            converged: false,
        }
    }

    pub fn community_of(&self, node: usize) -> Option<CommunityId> {
        self.membership[node]
    }

    pub fn membership(&self) -> &[Option<CommunityId>] {
        &self.membership
    }

    pub fn size(&self, c: CommunityId) -> usize {
        self.sizes[c]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn members(&self, c: CommunityId) -> BTreeSet<usize> {
        self.membership
            .iter()
            .enumerate()
            .filter(|(_, m)| **m == Some(c))
            .map(|(v, _)| v)
            .collect()
    }

    /// Moves `node` into `c` (or out of every community with `None`).
    pub fn assign(&mut self, node: usize, c: Option<CommunityId>) {
        if let Some(old) = self.membership[node] {
            self.sizes[old] -= 1;
        }
        if let Some(new) = c {
            self.sizes[new] += 1;
        }
        self.membership[node] = c;
    }

    pub fn density(&self, c: CommunityId) -> Result<f64, FluidError> {
        match self.sizes[c] {
            0 => Err(FluidError::EmptyCommunity(c)),
            s => Ok(1.0 / s as f64),
        }
    }

    /// `node community` lines (`-` for unassigned) then a summary line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (v, m) in self.membership.iter().enumerate() {
            match m {
                Some(c) => writeln!(out, "{v} {c}"),
                None => writeln!(out, "{v} -"),
            }
            .expect("string write");
        }
        writeln!(
            out,
            "k={} supersteps={} converged={}",
            self.k, self.superstep_count, self.converged
        )
        .expect("string write");
        out
    }

    pub fn from_text(text: &str) -> Result<Self, FluidError> {
        let mut membership = Vec::new();
        let mut summary = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |r: &str| FluidError::Parse {
                line: i + 1,
                reason: r.to_string(),
            };
            if line.starts_with("k=") {
                let mut k = None;
                let mut s = None;
                let mut conv = None;
                for part in line.split_whitespace() {
                    match part.split_once('=') {
                        Some(("k", v)) => k = v.parse::<usize>().ok(),
                        Some(("supersteps", v)) => s = v.parse::<usize>().ok(),
                        Some(("converged", v)) => conv = v.parse::<bool>().ok(),
                        _ => return Err(err("bad summary field")),
                    }
                }
                summary = Some((
                    k.ok_or_else(|| err("k"))?,
                    s.ok_or_else(|| err("supersteps"))?,
                    conv.ok_or_else(|| err("converged"))?,
                ));
                continue;
            }
            let (v, c) = line
                .split_once(' ')
                .ok_or_else(|| err("expected `node community`"))?;
            let v: usize = v.parse().map_err(|_| err("node"))?;
            if v != membership.len() {
                return Err(err("nodes must be listed in order"));
            }
            membership.push(match c.trim() {
                "-" => None,
                c => Some(c.parse::<usize>().map_err(|_| err("community"))?),
            });
        }
        let (k, superstep_count, converged) = summary.ok_or(FluidError::Parse {
            line: 0,
            reason: "missing summary line".into(),
        })?;
        let mut a = CommunityAssignment::unassigned(membership.len(), k);
        for (v, c) in membership.into_iter().enumerate() {
            if let Some(c) = c {
                if c >= k {
                    return Err(FluidError::Parse {
                        line: v + 1,
                        reason: "community id out of range".into(),
                    });
                }
            }
            a.assign(v, c);
        }
        a.superstep_count = superstep_count;
        a.converged = converged;
        Ok(a)
    }
}

/// Exact score m/s where m counts closed-neighbourhood members in the
/// community and s is its size. Compared by cross-multiplication.
#[derive(Clone, Copy, Debug)]
struct Score {
    hits: u64,
    size: u64,
}

impl Score {
    fn cmp(&self, other: &Score) -> Ordering {
        (self.hits * other.size).cmp(&(other.hits * self.size))
    }
}

/// Arg-max communities for `node`. Empty when no node in the closed
/// neighbourhood is assigned.
pub fn candidates(
    node: usize,
    assignment: &CommunityAssignment,
    graph: &Graph,
) -> Vec<CommunityId> {
    let mut hits = vec![0u64; assignment.k];
    let mut any = false;
    for w in std::iter::once(node).chain(graph.neighbors(node)) {
        if let Some(c) = assignment.community_of(w) {
            hits[c] += 1;
            any = true;
        }
    }
    if !any {
        return Vec::new();
    }
    let scores: Vec<Option<Score>> = hits
        .iter()
        .enumerate()
        .map(|(c, &h)| {
            (h > 0).then(|| Score {
                hits: h,
                size: assignment.size(c) as u64,
            })
        })
        .collect();
    let best = scores
        .iter()
        .flatten()
        .copied()
        .max_by(|a, b| a.cmp(b))
        .expect("at least one hit");
    scores
        .iter()
        .enumerate()
        .filter_map(|(c, s)| s.filter(|s| s.cmp(&best) == Ordering::Equal).map(|_| c))
        .collect()
}

/// One application of the update rule. Returns the node's next community,
/// or `None` if nothing in its closed neighbourhood is assigned yet.
pub fn update_rule<R: Rng + ?Sized>(
    node: usize,
    assignment: &CommunityAssignment,
    graph: &Graph,
    rng: &mut R,
) -> Option<CommunityId> {
    let cands = candidates(node, assignment, graph);
    if cands.is_empty() {
        return assignment.community_of(node);
    }
    match assignment.community_of(node) {
        Some(c) if cands.contains(&c) => Some(c),
        _ => cands.choose(rng).copied(),
    }
}

/// Hooks for inspecting a detection run step by step.
pub trait FluidObserver {
    fn before_update(&mut self, _node: usize, _assignment: &CommunityAssignment) {}
    fn after_update(
        &mut self,
        _node: usize,
        _chosen: Option<CommunityId>,
        _assignment: &CommunityAssignment,
    ) {
    }
    fn superstep_end(&mut self, _index: usize, _assignment: &CommunityAssignment) {}
}

struct NoObserver;
impl FluidObserver for NoObserver {}

pub fn detect_communities<R: Rng + ?Sized>(
    graph: &Graph,
    k: usize,
    rng: &mut R,
    max_supersteps: usize,
) -> Result<CommunityAssignment, FluidError> {
    detect_communities_observed(graph, k, rng, max_supersteps, &mut NoObserver)
}

pub fn detect_communities_observed<R: Rng + ?Sized, O: FluidObserver>(
    graph: &Graph,
    k: usize,
    rng: &mut R,
    max_supersteps: usize,
    observer: &mut O,
) -> Result<CommunityAssignment, FluidError> {
    let n = graph.node_count();
    if n == 0 {
        return Err(FluidError::EmptyGraph);
    }
    if k == 0 || k > n {
        return Err(FluidError::BadK { k, nodes: n });
    }
    let mut a = CommunityAssignment::unassigned(n, k);
    for (c, v) in index::sample(rng, n, k).into_iter().enumerate() {
        a.assign(v, Some(c));
    }
    let mut order: Vec<usize> = (0..n).collect();
    while a.superstep_count < max_supersteps {
        order.shuffle(rng);
        let mut changed = false;
        for &v in &order {
            observer.before_update(v, &a);
            let next = update_rule(v, &a, graph, rng);
            if next != a.community_of(v) {
                a.assign(v, next);
                changed = true;
            }
            observer.after_update(v, next, &a);
        }
        a.superstep_count += 1;
        observer.superstep_end(a.superstep_count, &a);
        if !changed {
            a.converged = true;
            break;
        }
    }
    Ok(a)
}

/// Members of the biggest community; ties go to the lowest id.
pub fn largest_community(assignment: &CommunityAssignment) -> BTreeSet<usize> {
    let best = (0..assignment.k)
        .max_by(|&a, &b| assignment.size(a).cmp(&assignment.size(b)).then(b.cmp(&a)));
    best.map(|c| assignment.members(c)).unwrap_or_default()
}

/// ceil(sqrt(n)), at least 1.
pub fn default_k(n: usize) -> usize {
    let mut k = (n as f64).sqrt().ceil() as usize;
    while k * k < n {
        k += 1;
    }
    while k > 1 && (k - 1) * (k - 1) >= n {
        k -= 1;
    }
    k.clamp(1, n.max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn two_cliques() -> Graph {
        let mut g = Graph::empty(10);
        for base in [0, 5] {
            for a in base..base + 5 {
                for b in a + 1..base + 5 {
                    g.connect(a, b);
                }
            }
        }
        g.connect(4, 5);
        g
    }

    #[test]
    fn density_values() {
        let mut a = CommunityAssignment::unassigned(8, 3);
        a.assign(0, Some(0));
        assert_eq!(a.density(0).unwrap(), 1.0);
        for v in 1..5 {
            a.assign(v, Some(1));
        }
        assert_eq!(a.density(1).unwrap(), 0.25);
        for v in 5..8 {
            a.assign(v, Some(2));
        }
        assert_eq!(a.density(2).unwrap(), 1.0 / 3.0);
        a.assign(0, None);
        assert_eq!(a.density(0), Err(FluidError::EmptyCommunity(0)));
    }

    #[test]
    fn isolated_node_keeps_its_community() {
        let g = Graph::empty(3);
        let mut a = CommunityAssignment::unassigned(3, 2);
        a.assign(0, Some(1));
        let mut r = stream(1, "t", 0);
        assert_eq!(update_rule(0, &a, &g, &mut r), Some(1));
        assert_eq!(update_rule(1, &a, &g, &mut r), None);
    }

    #[test]
    fn own_dense_community_beats_three_sparse_neighbours() {
        // Node 0 alone in Y (d=1.0); neighbours 1..3 in X which has 5
        // members (d=0.2). score(Y)=1.0 > score(X)=0.6.
        let g = Graph::from_edges(6, [(0, 1), (0, 2), (0, 3)]).unwrap();
        let mut a = CommunityAssignment::unassigned(6, 2);
        a.assign(0, Some(1));
        for v in 1..6 {
            a.assign(v, Some(0));
        }
        assert_eq!(candidates(0, &a, &g), vec![1]);
        let mut r = stream(1, "t", 0);
        assert_eq!(update_rule(0, &a, &g, &mut r), Some(1));
    }

    #[test]
    fn foreign_tie_samples_both() {
        // Node 0 unassigned, neighbours 1 (community 0) and 2 (community 1),
        // both singletons: tie at 1.0.
        let g = Graph::from_edges(3, [(0, 1), (0, 2)]).unwrap();
        let mut a = CommunityAssignment::unassigned(3, 2);
        a.assign(1, Some(0));
        a.assign(2, Some(1));
        let mut seen = BTreeSet::new();
        for s in 0..64 {
            let mut r = stream(s, "t", 0);
            seen.insert(update_rule(0, &a, &g, &mut r).unwrap());
        }
        assert_eq!(seen, [0, 1].into_iter().collect());
    }

    #[test]
    fn k_one_covers_connected_graph() {
        let g = two_cliques();
        let mut r = stream(3, "t", 0);
        let a = detect_communities(&g, 1, &mut r, DEFAULT_MAX_SUPERSTEPS).unwrap();
        assert!(a.converged);
        assert_eq!(largest_community(&a).len(), 10);
    }

    #[test]
    fn k_equals_n_is_a_fixed_point() {
        let g = two_cliques();
        let mut r = stream(4, "t", 0);
        let a = detect_communities(&g, 10, &mut r, DEFAULT_MAX_SUPERSTEPS).unwrap();
        assert!(a.converged);
        assert_eq!(a.superstep_count, 1);
        assert!(a.sizes().iter().all(|&s| s == 1));
    }

    #[test]
    fn two_cliques_split_along_the_bridge() {
        let g = two_cliques();
        let mut good = 0;
        for seed in 0..200 {
            let mut r = stream(seed, "cliques", 0);
            let a = detect_communities(&g, 2, &mut r, DEFAULT_MAX_SUPERSTEPS).unwrap();
            assert!(a.converged);
            // Interior nodes (not bridge endpoints 4 and 5) of each clique
            // share a label and the two cliques differ.
            let left = a.community_of(0);
            let right = a.community_of(9);
            let aligned = (0..4).all(|v| a.community_of(v) == left)
                && (6..10).all(|v| a.community_of(v) == right)
                && left != right;
            good += aligned as usize;
        }
        assert!(good >= 190, "aligned in {good}/200 seeds");
    }

    #[test]
    fn bad_k_is_rejected() {
        let g = Graph::empty(3);
        let mut r = stream(1, "t", 0);
        assert_eq!(
            detect_communities(&g, 4, &mut r, 10),
            Err(FluidError::BadK { k: 4, nodes: 3 })
        );
        assert_eq!(
            detect_communities(&g, 0, &mut r, 10),
            Err(FluidError::BadK { k: 0, nodes: 3 })
        );
        assert_eq!(
            detect_communities(&Graph::empty(0), 1, &mut r, 10),
            Err(FluidError::EmptyGraph)
        );
    }

    #[test]
    fn cap_flags_non_convergence() {
        let g = two_cliques();
        let mut r = stream(5, "t", 0);
        let a = detect_communities(&g, 2, &mut r, 0).unwrap();
        assert!(!a.converged);
        assert_eq!(a.superstep_count, 0);
    }

    #[test]
    fn largest_with_ties() {
        let mut a = CommunityAssignment::unassigned(10, 3);
        for (v, c) in [0, 0, 0, 1, 1, 1, 1, 1, 2, 2].into_iter().enumerate() {
            a.assign(v, Some(c));
        }
        assert_eq!(largest_community(&a), (3..8).collect());
        let mut t = CommunityAssignment::unassigned(8, 2);
        for (v, c) in [1, 1, 1, 1, 0, 0, 0, 0].into_iter().enumerate() {
            t.assign(v, Some(c));
        }
        assert_eq!(largest_community(&t), (4..8).collect());
    }

    #[test]
    fn converged_runs_are_fixed_points_and_deterministic() {
        for seed in 0..30 {
            let mut gr = stream(seed, "g", 0);
            let g = crate::graphnet::random_network_central(25, 0.2, &mut gr).unwrap();
            let mut r = stream(seed, "f", 0);
            let a = detect_communities(&g, 4, &mut r, DEFAULT_MAX_SUPERSTEPS).unwrap();
            let mut r2 = stream(seed, "f", 0);
            assert_eq!(
                detect_communities(&g, 4, &mut r2, DEFAULT_MAX_SUPERSTEPS).unwrap(),
                a
            );
            if a.converged {
                let mut rr = stream(seed, "again", 0);
                for v in 0..25 {
                    assert_eq!(update_rule(v, &a, &g, &mut rr), a.community_of(v));
                }
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let g = two_cliques();
        let mut r = stream(6, "t", 0);
        let a = detect_communities(&g, 3, &mut r, DEFAULT_MAX_SUPERSTEPS).unwrap();
        let text = a.to_text();
        assert!(text.ends_with(&format!(
            "k=3 supersteps={} converged=true\n",
            a.superstep_count
        )));
        assert_eq!(CommunityAssignment::from_text(&text).unwrap(), a);
    }

    #[test]
    fn default_k_is_ceil_sqrt() {
        assert_eq!(default_k(1), 1);
        assert_eq!(default_k(2), 2);
        assert_eq!(default_k(4), 2);
        assert_eq!(default_k(5), 3);
        assert_eq!(default_k(100), 10);
        assert_eq!(default_k(101), 11);
    }
}
