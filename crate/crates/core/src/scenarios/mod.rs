//! Named, reproducible experiments that wire every module together.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::consensus::Outcome;
use crate::crypto::{AccountId, Digest, KeyPair};
use crate::ledger::Amount;
use crate::netsim::{Fault, NodeId, SimError, Simulator, Topology};
use crate::rng::stream;
use crate::SimTime;

pub mod config;
mod metrics;
pub mod node;
mod report;

pub use config::{
    Assertion, AttackConfig, CorruptConfig, CorruptMode, FaultConfig, FaultKind, ScenarioConfig,
    WorkloadConfig,
};
pub use node::{Msg, Node, Order};
pub use report::{AssertionOutcome, ScenarioReport};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unknown scenario {0:?}")]
    Unknown(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Scenarios shipped with the crate, by name.
pub const BUILTIN: &[(&str, &str)] = &[
    ("baseline", include_str!("../../scenarios/baseline.toml")),
    (
        "double-spend",
        include_str!("../../scenarios/double-spend.toml"),
    ),
    ("sybil-99", include_str!("../../scenarios/sybil-99.toml")),
    (
        "partition-off",
        include_str!("../../scenarios/partition-off.toml"),
    ),
    (
        "partition-ratio",
        include_str!("../../scenarios/partition-ratio.toml"),
    ),
    (
        "partition-region",
        include_str!("../../scenarios/partition-region.toml"),
    ),
    (
        "witness-falsification",
        include_str!("../../scenarios/witness-falsification.toml"),
    ),
    (
        "compensation",
        include_str!("../../scenarios/compensation.toml"),
    ),
    (
        "compensation-fraud",
        include_str!("../../scenarios/compensation-fraud.toml"),
    ),
    (
        "wash-trading",
        include_str!("../../scenarios/wash-trading.toml"),
    ),
    (
        "firewalled-bridge",
        include_str!("../../scenarios/firewalled-bridge.toml"),
    ),
    (
        "stem-routed",
        include_str!("../../scenarios/stem-routed.toml"),
    ),
];

pub fn builtin(name: &str) -> Result<ScenarioConfig, ScenarioError> {
    let (_, text) = BUILTIN
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| ScenarioError::Unknown(name.to_string()))?;
    ScenarioConfig::from_toml(text)
}

pub fn builtin_names() -> impl Iterator<Item = &'static str> {
    BUILTIN.iter().map(|(n, _)| *n)
}

/// Key material derived from the master seed, so a run needs nothing but
/// its config.
pub fn derive_key(seed: u64, label: &str, node: NodeId, idx: u64) -> KeyPair {
    let d = Digest::of_parts(&[
        b"parchain/key/v1",
        &seed.to_be_bytes(),
        label.as_bytes(),
        &(node as u64).to_be_bytes(),
        &idx.to_be_bytes(),
    ]);
    KeyPair::from_secret(d.0)
}

/// Facts every node knows from the start.
pub struct World {
    pub cfg: ScenarioConfig,
    pub seed: u64,
    pub topo: Topology,
    pub node_keys: Vec<KeyPair>,
    pub genesis: Vec<(AccountId, Amount)>,
    pub genesis_keys: BTreeMap<NodeId, KeyPair>,
    pub witness_keys: BTreeMap<NodeId, Vec<KeyPair>>,
    pub witness_owner: BTreeMap<AccountId, NodeId>,
    /// The account double-spend attackers share.
    pub attack_key: Option<KeyPair>,
}

impl World {
    pub fn new(cfg: ScenarioConfig) -> Self {
        let seed = cfg.seed;
        let n = cfg.topology.nodes;
        let topo = cfg.topology.build();
        let node_keys: Vec<KeyPair> = (0..n).map(|i| derive_key(seed, "node", i, 0)).collect();
        let mut genesis = Vec::new();
        let mut genesis_keys = BTreeMap::new();
        for i in 0..n {
            if cfg.population.unfunded.contains(&i) {
                continue;
            }
            let k = derive_key(seed, "genesis", i, 0);
            genesis.push((k.account_id(), cfg.population.genesis_amount));
            genesis_keys.insert(i, k);
        }
        let needs_attack = cfg
            .attacks
            .iter()
            .any(|a| !matches!(a, AttackConfig::WashTrading { .. }));
        let attack_key = needs_attack.then(|| derive_key(seed, "attack", 0, 0));
        if let Some(k) = &attack_key {
            genesis.push((k.account_id(), cfg.population.genesis_amount));
        }
        let mut witness_keys: BTreeMap<NodeId, Vec<KeyPair>> = BTreeMap::new();
        let mut hosts = cfg.witness_nodes();
        hosts.extend(
            cfg.corrupt
                .iter()
                .filter(|c| c.mode == CorruptMode::SybilSpawner)
                .map(|c| c.node),
        );
        for &i in &hosts {
            let mut keys = vec![node_keys[i].clone()];
            if let Some(c) = cfg
                .corrupt
                .iter()
                .find(|c| c.node == i && c.mode == CorruptMode::SybilSpawner)
            {
                keys.extend((1..c.identities).map(|j| derive_key(seed, "sybil", i, j as u64)));
            }
            witness_keys.insert(i, keys);
        }
        let witness_owner = witness_keys
            .iter()
            .flat_map(|(n, ks)| ks.iter().map(move |k| (k.account_id(), *n)))
            .collect();
        World {
            cfg,
            seed,
            topo,
            node_keys,
            genesis,
            genesis_keys,
            witness_keys,
            witness_owner,
            attack_key,
        }
    }

    pub fn genesis_total(&self) -> Amount {
        self.genesis.iter().map(|(_, a)| a).sum()
    }

    pub fn corrupt_witnesses(&self) -> BTreeSet<AccountId> {
        self.witness_owner
            .iter()
            .filter(|(_, n)| !self.cfg.is_honest(**n))
            .map(|(a, _)| *a)
            .collect()
    }

    pub fn honest_witnesses(&self) -> BTreeSet<AccountId> {
        self.witness_owner
            .iter()
            .filter(|(_, n)| self.cfg.is_honest(**n))
            .map(|(a, _)| *a)
            .collect()
    }
}

/// Order ids used by attacks start here so workload ids stay dense.
const ATTACK_ORDERS: u64 = 1 << 32;

/// A workload order as scheduled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Planned {
    pub at: SimTime,
    pub from: NodeId,
    pub order: Order,
    pub workload: bool,
}

fn plan(w: &World) -> Vec<Planned> {
    let cfg = &w.cfg;
    let n = cfg.topology.nodes;
    let mut out = Vec::new();
    if let Some(wl) = &cfg.workload {
        let mut rng = stream(w.seed, "workload", 0);
        let senders: Vec<NodeId> = wl.senders.clone().unwrap_or_else(|| {
            (0..n)
                .filter(|i| w.genesis_keys.contains_key(i) && cfg.is_honest(*i))
                .collect()
        });
        let receivers: Vec<NodeId> = wl.receivers.clone().unwrap_or_else(|| (0..n).collect());
        for i in 0..wl.transactions {
            let from = senders[rng.gen_range(0..senders.len())];
            let choices: Vec<NodeId> = receivers.iter().copied().filter(|r| *r != from).collect();
            let to = choices[rng.gen_range(0..choices.len())];
            let amount = rng.gen_range(wl.amount_min..=wl.amount_max);
            out.push(Planned {
                at: wl.start + i as SimTime * wl.interval,
                from,
                order: Order {
                    id: i as u64,
                    to,
                    amount,
                    account: None,
                    stem: wl.stem,
                },
                workload: true,
            });
        }
    }
    let mut next = ATTACK_ORDERS;
    for a in &cfg.attacks {
        match a {
            AttackConfig::DoubleSpend {
                at,
                nodes,
                receivers,
                amount,
            } => {
                let account = w.attack_key.as_ref().map(|k| k.account_id());
                for (i, &to) in receivers.iter().enumerate() {
                    let from = if nodes.len() == 1 { nodes[0] } else { nodes[i] };
                    out.push(Planned {
                        at: *at,
                        from,
                        order: Order {
                            id: next,
                            to,
                            amount: *amount,
                            account,
                            stem: false,
                        },
                        workload: false,
                    });
                    next += 1;
                }
            }
            AttackConfig::WashTrading {
                nodes,
                start,
                count,
                interval,
                amount,
            } => {
                for i in 0..*count {
                    let (from, to) = if i % 2 == 0 {
                        (nodes[0], nodes[1])
                    } else {
                        (nodes[1], nodes[0])
                    };
                    out.push(Planned {
                        at: start + i as SimTime * interval,
                        from,
                        order: Order {
                            id: next,
                            to,
                            amount: *amount,
                            account: None,
                            stem: false,
                        },
                        workload: false,
                    });
                    next += 1;
                }
            }
            AttackConfig::InvalidFlood { .. } => {}
        }
    }
    out
}

/// The first partition and the heal that ends it.
pub(crate) fn split_window(
    cfg: &ScenarioConfig,
) -> Option<(SimTime, SimTime, BTreeSet<NodeId>, BTreeSet<NodeId>)> {
    let topo = cfg.topology.build();
    let p = cfg.faults.iter().find(|f| f.kind == FaultKind::Partition)?;
    let heal = cfg
        .faults
        .iter()
        .filter(|f| f.kind == FaultKind::Heal && f.at > p.at)
        .map(|f| f.at)
        .min()
        .unwrap_or(cfg.duration);
    let (a, b) = p.sides(&topo);
    Some((p.at, heal, a, b))
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport, ScenarioError> {
    cfg.validate()?;
    let world = Arc::new(World::new(cfg.clone()));
    let n = cfg.topology.nodes;
    let mut nodes: Vec<Node> = (0..n).map(|i| Node::new(world.clone(), i)).collect();
    if let Some(k) = &world.attack_key {
        for a in &cfg.attacks {
            if let AttackConfig::DoubleSpend { nodes: ns, .. } = a {
                for &i in ns {
                    nodes[i].grant_account(k.clone());
                }
            }
        }
    }
    let mut sim = Simulator::new(nodes, world.topo.clone(), cfg.network.clone(), world.seed);
    if cfg.clock_skew_max > 0 {
        let mut rng = stream(world.seed, "clock-skew", 0);
        sim.set_clock_offsets(
            (0..n)
                .map(|_| rng.gen_range(0..=cfg.clock_skew_max))
                .collect(),
        );
    }
    let planned = plan(&world);
    for p in &planned {
        sim.inject(p.at, p.from, Msg::Order(p.order.clone()))?;
    }
    for a in &cfg.attacks {
        if let AttackConfig::InvalidFlood {
            node,
            start,
            count,
            interval,
        } = a
        {
            for i in 0..*count {
                sim.inject(start + i as SimTime * interval, *node, Msg::Flood(i as u64))?;
            }
        }
    }
    let topo = world.topo.clone();
    for f in &cfg.faults {
        let fault = match f.kind {
            FaultKind::Partition => {
                let (a, b) = f.sides(&topo);
                Fault::Partition { a, b }
            }
            FaultKind::Heal => Fault::Heal,
        };
        sim.schedule_fault(f.at, fault)?;
    }
    let mut snapshot = None;
    if let Some((_, heal, _, _)) = split_window(cfg) {
        if heal < cfg.duration {
            sim.run_until(heal.saturating_sub(1))?;
            snapshot = Some(metrics::conflicting_slots(&sim.nodes));
        }
    }
    sim.run_until(cfg.duration)?;
    let metrics = metrics::collect(&world, &sim, &planned, snapshot);
    let decisions = decisions(&sim);
    Ok(ScenarioReport::new(
        cfg,
        metrics,
        decisions,
        sim.log_lines().to_vec(),
    ))
}

/// Every honest node's final outcome per subject.
fn decisions(sim: &Simulator<Node>) -> Vec<(NodeId, Digest, Outcome)> {
    let mut out = Vec::new();
    for (i, node) in sim.nodes.iter().enumerate() {
        if !node.is_honest() {
            continue;
        }
        for (id, o) in node.decisions() {
            out.push((i, id, o));
        }
    }
    out
}
