//! Scenario files.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::consensus::ConsensusParams;
use crate::crypto::Digest;
use crate::incentives::{CompensationParams, FeePolicy, DEFAULT_FEE_CAP, DEFAULT_FEE_RATE};
use crate::ledger::{Amount, FeeSide};
use crate::netsim::{NetConfig, NodeId, Region, Topology};
use crate::privacy::RelayParams;
use crate::SimTime;

use super::ScenarioError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub duration: SimTime,
    /// Per-node clock offsets are drawn from [0, clock_skew_max].
    #[serde(default)]
    pub clock_skew_max: SimTime,
    #[serde(default)]
    pub network: NetConfig,
    pub topology: TopologyConfig,
    #[serde(default)]
    pub consensus: ConsensusParams,
    #[serde(default)]
    pub fees: FeeConfig,
    #[serde(default)]
    pub compensation: CompensationParams,
    #[serde(default)]
    pub relay: RelayParams,
    #[serde(default)]
    pub population: PopulationConfig,
    #[serde(default)]
    pub corrupt: Vec<CorruptConfig>,
    #[serde(default)]
    pub workload: Option<WorkloadConfig>,
    #[serde(default, rename = "fault")]
    pub faults: Vec<FaultConfig>,
    #[serde(default, rename = "attack")]
    pub attacks: Vec<AttackConfig>,
    #[serde(default, rename = "assert")]
    pub assertions: Vec<Assertion>,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub nodes: usize,
    #[serde(default = "default_regions")]
    pub regions: usize,
    /// Explicit region per node; otherwise nodes are dealt round-robin.
    #[serde(default)]
    pub region_of: Option<Vec<Region>>,
    #[serde(default)]
    pub firewalled: Vec<NodeId>,
    #[serde(default)]
    pub bridges: Vec<NodeId>,
}

fn default_regions() -> usize {
    5
}

impl TopologyConfig {
    pub fn build(&self) -> Topology {
        let mut t = Topology::round_robin(self.nodes, self.regions);
        if let Some(r) = &self.region_of {
            t.regions = r.clone();
        }
        t.firewalled = self.firewalled.iter().copied().collect();
        t.bridges = self.bridges.clone();
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeeConfig {
    pub rate: f64,
    pub cap: Amount,
    pub side: FeeSide,
}

impl Default for FeeConfig {
    fn default() -> Self {
        FeeConfig {
            rate: DEFAULT_FEE_RATE,
            cap: DEFAULT_FEE_CAP,
            side: FeeSide::Sender,
        }
    }
}

impl FeeConfig {
    pub fn policy(&self) -> FeePolicy {
        FeePolicy::new(self.rate, self.cap)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    /// Nodes that host a witness identity. Defaults to every node that is
    /// not firewalled.
    pub witnesses: Option<Vec<NodeId>>,
    /// Endowment of each node's genesis account.
    pub genesis_amount: Amount,
    /// Nodes that start without a genesis account.
    pub unfunded: Vec<NodeId>,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            witnesses: None,
            genesis_amount: 1_000_000,
            unfunded: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptMode {
    /// Vouches for every subject it is asked about.
    FalseAccept,
    /// Rejects valid transfers with forged conflict evidence.
    FalseRejectFabricatedEvidence,
    /// Signs transfers without waiting for its previous one to settle.
    DoubleSpender,
    /// Claims compensation with one forged attachment.
    CompensationFraud,
    /// Hosts many witness identities that all vouch for anything.
    SybilSpawner,
    /// Pays back and forth between two long-lived accounts.
    WashTrader,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptConfig {
    pub node: NodeId,
    pub mode: CorruptMode,
    /// Witness identities hosted by a Sybil spawner.
    #[serde(default = "one")]
    pub identities: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    pub transactions: usize,
    pub start: SimTime,
    pub interval: SimTime,
    #[serde(default = "default_amount_min")]
    pub amount_min: Amount,
    #[serde(default = "default_amount_max")]
    pub amount_max: Amount,
    #[serde(default)]
    pub senders: Option<Vec<NodeId>>,
    #[serde(default)]
    pub receivers: Option<Vec<NodeId>>,
    /// Route every transfer through a stem before broadcasting it.
    #[serde(default)]
    pub stem: bool,
}

fn default_amount_min() -> Amount {
    10
}

fn default_amount_max() -> Amount {
    1_000
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    Partition,
    Heal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultConfig {
    pub at: SimTime,
    pub kind: FaultKind,
    /// Side A by node id.
    #[serde(default)]
    pub a: Vec<NodeId>,
    /// Side A by region; merged with `a`.
    #[serde(default)]
    pub a_regions: Vec<Region>,
    /// Side B; defaults to every node not on side A.
    #[serde(default)]
    pub b: Option<Vec<NodeId>>,
}

impl FaultConfig {
    pub fn sides(&self, topo: &Topology) -> (BTreeSet<NodeId>, BTreeSet<NodeId>) {
        let mut a: BTreeSet<NodeId> = self.a.iter().copied().collect();
        a.extend(
            topo.regions
                .iter()
                .enumerate()
                .filter(|(_, r)| self.a_regions.contains(r))
                .map(|(i, _)| i),
        );
        let b = match &self.b {
            Some(b) => b.iter().copied().collect(),
            None => (0..topo.regions.len()).filter(|i| !a.contains(i)).collect(),
        };
        (a, b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackConfig {
    /// Every attacker node pays from one shared account at the same
    /// moment. One node pays all receivers; otherwise node i pays
    /// receiver i.
    DoubleSpend {
        at: SimTime,
        nodes: Vec<NodeId>,
        receivers: Vec<NodeId>,
        #[serde(default = "default_amount_min")]
        amount: Amount,
    },
    /// Invalid transfers proposed by the attacker itself.
    InvalidFlood {
        node: NodeId,
        start: SimTime,
        count: usize,
        interval: SimTime,
    },
    /// Alternating payments between two nodes' accounts.
    WashTrading {
        nodes: [NodeId; 2],
        start: SimTime,
        count: usize,
        interval: SimTime,
        #[serde(default = "default_amount_min")]
        amount: Amount,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assertion {
    pub metric: String,
    pub op: String,
    pub value: f64,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Digest of the canonical serialized form.
    pub fn config_hash(&self) -> Digest {
        Digest::of(self.to_toml().as_bytes())
    }

    pub fn corrupt_mode(&self, node: NodeId) -> Option<CorruptMode> {
        self.corrupt.iter().find(|c| c.node == node).map(|c| c.mode)
    }

    pub fn is_honest(&self, node: NodeId) -> bool {
        self.corrupt_mode(node).is_none()
    }

    pub fn witness_nodes(&self) -> BTreeSet<NodeId> {
        match &self.population.witnesses {
            Some(w) => w.iter().copied().collect(),
            None => (0..self.topology.nodes)
                .filter(|n| !self.topology.firewalled.contains(n))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let n = self.topology.nodes;
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if n < 2 {
            return bad("need at least 2 nodes".into());
        }
        let in_range = |what: &str, ids: &mut dyn Iterator<Item = NodeId>| {
            for i in ids {
                if i >= n {
                    return Err(ScenarioError::Invalid(format!(
                        "{what} names node {i} of {n}"
                    )));
                }
            }
            Ok(())
        };
        in_range("firewalled", &mut self.topology.firewalled.iter().copied())?;
        in_range("bridges", &mut self.topology.bridges.iter().copied())?;
        in_range("corrupt", &mut self.corrupt.iter().map(|c| c.node))?;
        in_range("witnesses", &mut self.witness_nodes().into_iter())?;
        in_range("unfunded", &mut self.population.unfunded.iter().copied())?;
        if let Some(r) = &self.topology.region_of {
            if r.len() != n {
                return bad(format!("region_of lists {} nodes, expected {n}", r.len()));
            }
        }
        if !self.topology.firewalled.is_empty() && self.topology.bridges.is_empty() {
            return bad("firewalled nodes need at least one bridge".into());
        }
        if let Some(w) = &self.workload {
            if w.amount_min == 0 || w.amount_min > w.amount_max {
                return bad("workload amounts must satisfy 0 < amount_min <= amount_max".into());
            }
            for list in [&w.senders, &w.receivers].into_iter().flatten() {
                in_range("workload", &mut list.iter().copied())?;
            }
        }
        let topo = self.topology.build();
        for f in &self.faults {
            if f.kind == FaultKind::Partition {
                let (a, b) = f.sides(&topo);
                in_range("fault", &mut a.iter().chain(b.iter()).copied())?;
                if a.is_empty() || b.is_empty() {
                    return bad(format!("partition at {} has an empty side", f.at));
                }
                if let Some(x) = a.intersection(&b).next() {
                    return bad(format!("partition sides overlap on node {x}"));
                }
            }
        }
        for a in &self.attacks {
            match a {
                AttackConfig::DoubleSpend {
                    nodes, receivers, ..
                } => {
                    in_range("attack", &mut nodes.iter().chain(receivers.iter()).copied())?;
                    if nodes.is_empty() || (nodes.len() > 1 && nodes.len() != receivers.len()) {
                        return bad("double_spend needs one node or one node per receiver".into());
                    }
                    if receivers.len() < 2 && nodes.len() < 2 {
                        return bad("double_spend needs two payments".into());
                    }
                }
                AttackConfig::InvalidFlood { node, .. } => {
                    in_range("attack", &mut [*node].into_iter())?
                }
                AttackConfig::WashTrading { nodes, .. } => {
                    in_range("attack", &mut nodes.iter().copied())?;
                    if nodes[0] == nodes[1] {
                        return bad("wash_trading needs two distinct nodes".into());
                    }
                }
            }
        }
        for a in &self.assertions {
            if !["==", "!=", "<", "<=", ">", ">="].contains(&a.op.as_str()) {
                return bad(format!("unknown assertion operator {:?}", a.op));
            }
        }
        self.consensus.check().map_err(ScenarioError::Invalid)?;
        Ok(())
    }
}
