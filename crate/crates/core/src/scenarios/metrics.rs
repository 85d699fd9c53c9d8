//! Post-run measurements.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::Value;

use crate::consensus::{Outcome, Subject};
use crate::crypto::{AccountId, Digest};
use crate::ledger::LedgerOp;
use crate::netsim::{HandshakeState, NodeId, Simulator};
use crate::privacy::{origin_inference_accuracy, Adversary};

use super::config::{AttackConfig, CorruptMode};
use super::{split_window, Node, Planned, World};

/// Chain slots holding more than one accepted record across honest ledgers.
pub(crate) fn conflicting_slots(nodes: &[Node]) -> usize {
    let mut slots: BTreeMap<(AccountId, u64), BTreeSet<Digest>> = BTreeMap::new();
    for n in nodes.iter().filter(|n| n.is_honest()) {
        for r in n.ledger.transfers_in_order() {
            slots
                .entry((r.sender, r.sender_seq))
                .or_default()
                .insert(r.tx_id);
        }
    }
    slots.values().filter(|s| s.len() > 1).count()
}

fn count(m: &mut BTreeMap<String, f64>, k: &str, v: impl Into<f64>) {
    m.insert(k.to_string(), v.into());
}

pub(crate) fn collect(
    w: &World,
    sim: &Simulator<Node>,
    planned: &[Planned],
    split_snapshot: Option<usize>,
) -> BTreeMap<String, f64> {
    let cfg = &w.cfg;
    let nodes = &sim.nodes;
    let honest: Vec<&Node> = nodes.iter().filter(|n| n.is_honest()).collect();
    let mut m = BTreeMap::new();

    // Payments, judged by the payee.
    let (mut accepted, mut rejected, mut unsigned, mut fw_accepted) = (0u32, 0u32, 0u32, 0u32);
    let workload: Vec<&Planned> = planned.iter().filter(|p| p.workload).collect();
    for p in &workload {
        let payee = &nodes[p.order.to];
        match payee.record.cosigned.get(&p.order.id) {
            Some(id) => match payee.outcome_of(id) {
                Outcome::Accepted => {
                    accepted += 1;
                    if w.topo.firewalled.contains(&p.order.to) {
                        fw_accepted += 1;
                    }
                }
                Outcome::Rejected => rejected += 1,
                Outcome::Pending => {}
            },
            None => unsigned += 1,
        }
    }
    let unfunded: u64 = nodes.iter().map(|n| n.record.unfunded).sum();
    count(&mut m, "orders", workload.len() as f64);
    count(&mut m, "tx_accepted", accepted);
    count(&mut m, "tx_rejected", rejected);
    count(
        &mut m,
        "tx_pending",
        workload.len() as f64 - accepted as f64 - rejected as f64,
    );
    count(&mut m, "tx_unsigned", unsigned);
    count(&mut m, "unfunded", unfunded as f64);

    // Double spends and invalid floods.
    count(
        &mut m,
        "conflicting_accepted",
        conflicting_slots(nodes) as f64,
    );
    if let Some(s) = split_snapshot {
        count(&mut m, "split_dual_accepted", s as f64);
    }
    let flood: Vec<Digest> = nodes
        .iter()
        .flat_map(|n| n.record.flood_records.iter().copied())
        .collect();
    let attempts: usize = cfg
        .attacks
        .iter()
        .map(|a| match a {
            AttackConfig::InvalidFlood { count, .. } => *count,
            _ => 0,
        })
        .sum();
    count(&mut m, "invalid_attempts", attempts as f64);
    count(&mut m, "invalid_records", flood.len() as f64);
    let invalid_accepted = flood
        .iter()
        .filter(|id| honest.iter().any(|n| n.ledger.contains(id)))
        .count();
    count(&mut m, "invalid_accepted", invalid_accepted as f64);
    let slashed = honest
        .iter()
        .filter(|n| n.ledger.slashed_total() > 0)
        .count();
    count(&mut m, "slashed_nodes", slashed as f64);

    // Blacklists.
    let corrupt = w.corrupt_witnesses();
    let honest_ids = w.honest_witnesses();
    let bl = |n: &Node, set: &BTreeSet<AccountId>| {
        set.iter().filter(|a| n.registry.is_blacklisted(a)).count()
    };
    count(&mut m, "corrupt_witnesses", corrupt.len() as f64);
    let corrupt_bl: Vec<usize> = honest.iter().map(|n| bl(n, &corrupt)).collect();
    count(
        &mut m,
        "corrupt_blacklisted_min",
        corrupt_bl.iter().min().copied().unwrap_or(0) as f64,
    );
    count(
        &mut m,
        "corrupt_blacklisted_max",
        corrupt_bl.iter().max().copied().unwrap_or(0) as f64,
    );
    let honest_bl = honest.iter().map(|n| bl(n, &honest_ids)).max().unwrap_or(0);
    count(&mut m, "honest_blacklisted_max", honest_bl as f64);

    // Compensation.
    let fraudsters: BTreeSet<AccountId> = cfg
        .corrupt
        .iter()
        .filter(|c| c.mode == CorruptMode::CompensationFraud)
        .map(|c| w.node_keys[c.node].account_id())
        .collect();
    let mut minted_slots = BTreeSet::new();
    let mut fraud_minted = BTreeSet::new();
    for n in &honest {
        for op in n.ledger.history() {
            if let LedgerOp::Mint {
                account, comp_id, ..
            } = op
            {
                minted_slots.insert(*comp_id);
                if fraudsters.contains(account) {
                    fraud_minted.insert(*comp_id);
                }
            }
        }
    }
    let fraud_claims: BTreeSet<Digest> = honest
        .iter()
        .flat_map(|n| n.subjects())
        .filter_map(|(s, _)| match s {
            Subject::Compensation(c) if fraudsters.contains(&c.witness) => Some(c.id()),
            _ => None,
        })
        .collect();
    let fraud_rejected_min = honest
        .iter()
        .map(|n| {
            fraud_claims
                .iter()
                .filter(|id| n.outcome_of(id) == Outcome::Rejected)
                .count()
        })
        .min()
        .unwrap_or(0);
    let fraudster_bl_min = honest.iter().map(|n| bl(n, &fraudsters)).min().unwrap_or(0);
    let below = honest
        .iter()
        .flat_map(|n| n.subjects())
        .filter(|(_, o)| *o == Outcome::Accepted)
        .filter_map(|(s, _)| match s {
            Subject::Compensation(c) => Some(c),
            _ => None,
        })
        .filter(|c| c.served_count() < cfg.compensation.threshold(c.kind))
        .count();
    count(&mut m, "below_threshold_minted", below as f64);
    count(
        &mut m,
        "comp_claims",
        nodes.iter().map(|n| n.record.claims).sum::<u64>() as f64,
    );
    count(
        &mut m,
        "comp_not_eligible",
        nodes.iter().map(|n| n.record.not_eligible).sum::<u64>() as f64,
    );
    count(&mut m, "comp_minted_slots", minted_slots.len() as f64);
    count(
        &mut m,
        "minted_max",
        honest
            .iter()
            .map(|n| n.ledger.minted_total())
            .max()
            .unwrap_or(0) as f64,
    );
    count(&mut m, "fraud_claims", fraud_claims.len() as f64);
    count(&mut m, "fraud_claims_minted", fraud_minted.len() as f64);
    count(
        &mut m,
        "fraud_claims_rejected_min",
        fraud_rejected_min as f64,
    );
    count(&mut m, "fraudster_blacklisted_min", fraudster_bl_min as f64);

    // Supply.
    let violations = honest
        .iter()
        .filter(|n| {
            let a = n.ledger.audit();
            !a.conserved() || a.genesis != w.genesis_total()
        })
        .count();
    count(&mut m, "conservation_violations", violations as f64);
    count(
        &mut m,
        "fees_collected_max",
        honest
            .iter()
            .map(|n| n.ledger.fees_collected())
            .max()
            .unwrap_or(0) as f64,
    );

    // Bridges.
    let bridged = w
        .topo
        .firewalled
        .iter()
        .filter(|&&f| sim.handshake_state(f) == HandshakeState::Bridged)
        .count();
    count(&mut m, "firewalled_nodes", w.topo.firewalled.len() as f64);
    count(&mut m, "bridged_nodes", bridged as f64);
    count(&mut m, "firewalled_accepted", fw_accepted);

    // Relay privacy.
    let lines = sim.log_lines();
    if let Some(a) = origin_inference_accuracy(lines, Adversary::FluffOnly) {
        count(&mut m, "origin_accuracy", a);
    }
    if let Some(a) = origin_inference_accuracy(lines, Adversary::FullVisibility) {
        count(&mut m, "origin_accuracy_full", a);
    }
    count(
        &mut m,
        "stem_fallbacks",
        nodes.iter().map(|n| n.record.stem_fallbacks).sum::<u64>() as f64,
    );

    // Log-derived counts.
    let split = split_window(cfg);
    let (mut split_a, mut split_b, mut across, mut post) = (0u32, 0u32, 0u32, BTreeSet::new());
    for line in lines {
        let Ok(v) = serde_json::from_str::<Value>(line) else {
            continue;
        };
        let t = v["t"].as_u64().unwrap_or(0);
        let node = v["node"].as_u64().map(|x| x as NodeId);
        match v["ev"].as_str() {
            Some("append") => {
                if let (Some((from, to, a, b)), Some(n)) = (&split, node) {
                    if t >= *from && t < *to && cfg.is_honest(n) {
                        if a.contains(&n) {
                            split_a += 1;
                        } else if b.contains(&n) {
                            split_b += 1;
                        }
                    }
                }
            }
            Some("deliver") => {
                if let Some((from, to, a, b)) = &split {
                    let (Some(x), Some(y)) = (v["from"].as_u64(), v["to"].as_u64()) else {
                        continue;
                    };
                    let (x, y) = (x as NodeId, y as NodeId);
                    let crosses =
                        (a.contains(&x) && b.contains(&y)) || (b.contains(&x) && a.contains(&y));
                    if t >= *from && t < *to && crosses {
                        across += 1;
                    }
                }
            }
            Some("post_partition_double_spend") => {
                if let Some(n) = node {
                    post.insert(n);
                }
            }
            _ => {}
        }
    }
    if split.is_some() {
        count(&mut m, "accepted_during_split_a", split_a);
        count(&mut m, "accepted_during_split_b", split_b);
        count(&mut m, "deliveries_across_partition", across);
    }
    count(&mut m, "post_partition_detected", post.len() as f64);

    let stats = sim.stats();
    count(&mut m, "messages_sent", stats.sent as f64);
    count(&mut m, "messages_delivered", stats.delivered as f64);
    m
}
