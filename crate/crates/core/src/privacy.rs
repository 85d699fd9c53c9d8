//! Stem/fluff relay for hiding where a transaction entered the network.
//!
//! A record first travels a short private "stem" of relays, each adding a
//! random delay and bundling decoy records, and the last relay broadcasts
//! it. An observer of the broadcast sees the last relay, not the origin.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::netsim::NodeId;
use crate::SimTime;

/// Log event names the relay protocol emits.
pub const EV_SUBMIT: &str = "submit";
pub const EV_STEM_HOP: &str = "stem_hop";
pub const EV_FLUFF: &str = "fluff";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelayParams {
    pub stem_length: usize,
    pub max_hop_delay: SimTime,
    pub batch_size: usize,
}

impl Default for RelayParams {
    fn default() -> Self {
        RelayParams {
            stem_length: 4,
            max_hop_delay: 200,
            batch_size: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemRoute {
    pub origin: NodeId,
    pub hops: Vec<NodeId>,
    /// Delay each hop waits before forwarding.
    pub delays: Vec<SimTime>,
    /// Too few relays were available, so the origin broadcasts itself.
    pub fallback: bool,
}

impl StemRoute {
    /// The node that performs the broadcast.
    pub fn fluff_node(&self) -> NodeId {
        self.hops.last().copied().unwrap_or(self.origin)
    }

    pub fn total_delay(&self) -> SimTime {
        self.delays.iter().sum()
    }

    /// The hop after `node`, or `None` if `node` is the fluff node.
    pub fn next_after(&self, node: NodeId) -> Option<NodeId> {
        if node == self.origin {
            return self.hops.first().copied();
        }
        let i = self.hops.iter().position(|&h| h == node)?;
        self.hops.get(i + 1).copied()
    }

    pub fn delay_at(&self, node: NodeId) -> SimTime {
        self.hops
            .iter()
            .position(|&h| h == node)
            .map_or(0, |i| self.delays[i])
    }
}

/// Draws a stem by walking uniformly over `peers`, never revisiting a node
/// or returning to the origin.
pub fn stem_route<R: Rng>(
    origin: NodeId,
    peers: &[NodeId],
    params: &RelayParams,
    rng: &mut R,
) -> StemRoute {
    let mut pool: Vec<NodeId> = peers
        .iter()
        .copied()
        .filter(|&p| p != origin)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if pool.len() < params.stem_length {
        return StemRoute {
            origin,
            hops: Vec::new(),
            delays: Vec::new(),
            fallback: params.stem_length > 0,
        };
    }
    let mut hops = Vec::with_capacity(params.stem_length);
    let mut delays = Vec::with_capacity(params.stem_length);
    for _ in 0..params.stem_length {
        let i = rng.gen_range(0..pool.len());
        hops.push(pool.swap_remove(i));
        delays.push(rng.gen_range(0..=params.max_hop_delay));
    }
    StemRoute {
        origin,
        hops,
        delays,
        fallback: false,
    }
}

/// Picks up to `batch_size` decoys from `pending`, skipping `own`.
pub fn pick_batch<T: Clone + PartialEq, R: Rng>(
    own: &T,
    pending: &[T],
    batch_size: usize,
    rng: &mut R,
) -> Vec<T> {
    let others: Vec<&T> = pending.iter().filter(|t| *t != own).collect();
    others
        .choose_multiple(rng, batch_size)
        .map(|t| (*t).clone())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Adversary {
    /// Sees only the broadcast phase.
    FluffOnly,
    /// Also sees every stem hop.
    FullVisibility,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Observation {
    pub origin: Option<NodeId>,
    /// Stem hops as (from, to) in log order.
    pub stem: Vec<(NodeId, NodeId)>,
    pub fluff: Option<NodeId>,
}

/// Groups submit, stem and fluff log events by transaction.
pub fn observations_from_log<S: AsRef<str>>(lines: &[S]) -> BTreeMap<String, Observation> {
    let mut out: BTreeMap<String, Observation> = BTreeMap::new();
    for line in lines {
        let Ok(v) = serde_json::from_str::<Value>(line.as_ref()) else {
            continue;
        };
        let (Some(ev), Some(tx), Some(node)) = (
            v["ev"].as_str(),
            v["tx"].as_str(),
            v["node"].as_u64().map(|n| n as NodeId),
        ) else {
            continue;
        };
        let o = out.entry(tx.to_string()).or_default();
        match ev {
            EV_SUBMIT => o.origin = Some(node),
            EV_STEM_HOP => {
                if let Some(to) = v["to"].as_u64() {
                    o.stem.push((node, to as NodeId));
                }
            }
            EV_FLUFF => {
                if o.fluff.is_none() {
                    o.fluff = Some(node);
                }
            }
            _ => {}
        }
    }
    out
}

/// The adversary's guess for where a transaction originated.
pub fn guess_origin(o: &Observation, adversary: Adversary) -> Option<NodeId> {
    match adversary {
        Adversary::FluffOnly => o.fluff,
        Adversary::FullVisibility => o.stem.first().map(|s| s.0).or(o.fluff),
    }
}

/// Fraction of broadcast transactions whose origin the adversary names
/// correctly. `None` when nothing was broadcast.
pub fn origin_inference_accuracy<S: AsRef<str>>(lines: &[S], adversary: Adversary) -> Option<f64> {
    let obs = observations_from_log(lines);
    let judged: Vec<bool> = obs
        .values()
        .filter(|o| o.origin.is_some() && o.fluff.is_some())
        .map(|o| guess_origin(o, adversary) == o.origin)
        .collect();
    if judged.is_empty() {
        return None;
    }
    Some(judged.iter().filter(|&&hit| hit).count() as f64 / judged.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use serde_json::json;

    fn line(ev: &str, node: usize, tx: &str, to: Option<usize>) -> String {
        let mut v = json!({"ev": ev, "node": node, "tx": tx, "t": 0});
        if let Some(to) = to {
            v["to"] = json!(to);
        }
        v.to_string()
    }

    /// Replays a route into the log shape the relay protocol writes.
    fn log_for(route: &StemRoute, tx: &str) -> Vec<String> {
        let mut out = vec![line(EV_SUBMIT, route.origin, tx, None)];
        let mut at = route.origin;
        for &h in &route.hops {
            out.push(line(EV_STEM_HOP, at, tx, Some(h)));
            at = h;
        }
        out.push(line(EV_FLUFF, at, tx, None));
        out
    }

    #[test]
    fn zero_length_stem_fluffs_immediately() {
        let p = RelayParams {
            stem_length: 0,
            ..Default::default()
        };
        let r = stem_route(3, &[0, 1, 2, 3], &p, &mut stream(1, "t", 0));
        assert!(r.hops.is_empty() && !r.fallback);
        assert_eq!(r.fluff_node(), 3);
        let acc = origin_inference_accuracy(&log_for(&r, "a"), Adversary::FluffOnly);
        assert_eq!(acc, Some(1.0));
    }

    #[test]
    fn stem_of_three_has_three_relays() {
        let p = RelayParams {
            stem_length: 3,
            ..Default::default()
        };
        let r = stem_route(0, &(0..10).collect::<Vec<_>>(), &p, &mut stream(2, "t", 0));
        let log = log_for(&r, "x");
        let hops = log.iter().filter(|l| l.contains(EV_STEM_HOP)).count();
        assert_eq!(hops, 3);
        assert!(log.last().unwrap().contains(EV_FLUFF));
        assert_eq!(r.next_after(0), Some(r.hops[0]));
        assert_eq!(r.next_after(r.hops[2]), None);
    }

    #[test]
    fn too_few_peers_falls_back() {
        let r = stem_route(
            0,
            &[0, 1, 2],
            &RelayParams::default(),
            &mut stream(3, "t", 0),
        );
        assert!(r.fallback);
        assert_eq!(r.fluff_node(), 0);
    }

    #[test]
    fn full_visibility_always_finds_origin() {
        let peers: Vec<usize> = (0..20).collect();
        let mut log = Vec::new();
        for i in 0..50 {
            let r = stem_route(
                i % 20,
                &peers,
                &RelayParams::default(),
                &mut stream(4, "t", i as u64),
            );
            log.extend(log_for(&r, &format!("tx{i}")));
        }
        assert_eq!(
            origin_inference_accuracy(&log, Adversary::FullVisibility),
            Some(1.0)
        );
        assert_eq!(
            origin_inference_accuracy(&log, Adversary::FluffOnly),
            Some(0.0)
        );
    }

    #[test]
    fn fluff_guess_stays_under_uniform_bound() {
        // The best fluff-only guess is no better than picking uniformly
        // among the other nodes.
        let n = 30;
        let peers: Vec<usize> = (0..n).collect();
        let p = RelayParams {
            stem_length: 1,
            ..Default::default()
        };
        let mut log = Vec::new();
        for i in 0..1_000u64 {
            let r = stem_route((i % n as u64) as usize, &peers, &p, &mut stream(5, "t", i));
            log.extend(log_for(&r, &format!("tx{i}")));
        }
        let acc = origin_inference_accuracy(&log, Adversary::FluffOnly).unwrap();
        assert!(acc <= 1.0 / (n - 1) as f64 + 0.02, "{acc}");
    }

    #[test]
    fn batch_excludes_own_and_caps_size() {
        let pending = vec![1, 2, 3, 4, 5, 6];
        let b = pick_batch(&3, &pending, 4, &mut stream(6, "t", 0));
        assert_eq!(b.len(), 4);
        assert!(!b.contains(&3));
        assert_eq!(pick_batch(&3, &[3, 1], 4, &mut stream(6, "t", 1)), vec![1]);
    }

    proptest! {
        #[test]
        fn routes_are_distinct_and_bounded(
            origin in 0usize..12,
            len in 0usize..8,
            seed in any::<u64>(),
        ) {
            let p = RelayParams { stem_length: len, max_hop_delay: 200, batch_size: 4 };
            let peers: Vec<usize> = (0..12).collect();
            let r = stem_route(origin, &peers, &p, &mut stream(seed, "t", 0));
            prop_assert_eq!(r.hops.len(), len);
            let set: BTreeSet<_> = r.hops.iter().collect();
            prop_assert_eq!(set.len(), len);
            prop_assert!(!r.hops.contains(&origin));
            prop_assert!(r.total_delay() <= len as SimTime * p.max_hop_delay);
            if len >= 1 {
                prop_assert_ne!(r.fluff_node(), origin);
            }
        }
    }
}
