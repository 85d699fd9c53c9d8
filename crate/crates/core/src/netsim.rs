//! Deterministic discrete-event network.
//!
//! Node processes exchange messages over links with jittered latency.
//! The simulator also plays the network itself: partitions, firewalls,
//! bridge tethers, and each node's liveness pings and connectivity
//! monitoring. Events run in (time, sequence) order, so a config and a seed
//! fix the whole run.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::rng::{stream, StreamRng};
use crate::SimTime;

pub type NodeId = usize;
pub type Region = u16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("event at {at} is not after the current time {now}")]
    Past { at: SimTime, now: SimTime },
    #[error("partition sides overlap on node {0}")]
    Overlap(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub latency_base: SimTime,
    pub latency_jitter: SimTime,
    pub ping_interval: SimTime,
    pub ping_misses: u32,
    /// Length of the connectivity-ratio window.
    pub window: SimTime,
    pub ratio_rule: bool,
    pub ratio_threshold: f64,
    /// 1 disables the region rule.
    pub min_regions: usize,
    pub keepalive_interval: SimTime,
    pub handshake_timeout: SimTime,
    /// Log every delivery and drop, not only protocol events.
    pub log_deliveries: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            latency_base: 10,
            latency_jitter: 5,
            ping_interval: 1_000,
            ping_misses: 3,
            window: 5_000,
            ratio_rule: true,
            ratio_threshold: 0.5,
            min_regions: 3,
            keepalive_interval: 1_000,
            handshake_timeout: 500,
            log_deliveries: true,
        }
    }
}

/// Static facts about the network.
#[derive(Debug, Clone, Default)]
pub struct Topology {
    pub regions: Vec<Region>,
    pub firewalled: BTreeSet<NodeId>,
    pub bridges: Vec<NodeId>,
}

impl Topology {
    /// `n` nodes spread round-robin over `region_count` regions.
    pub fn round_robin(n: usize, region_count: usize) -> Self {
        Topology {
            regions: (0..n)
                .map(|i| (i % region_count.max(1)) as Region)
                .collect(),
            ..Default::default()
        }
    }
}

/// Something carried between nodes.
pub trait Payload: Clone {
    fn label(&self) -> &'static str;
}

/// A simulated node.
pub trait Process {
    type Msg: Payload;
    fn on_start(&mut self, _ctx: &mut Ctx<'_, Self::Msg>) {}
    /// Called for network deliveries and for the node's own timers, which
    /// arrive with `from == ctx.id()`.
    fn on_message(&mut self, ctx: &mut Ctx<'_, Self::Msg>, from: NodeId, msg: Self::Msg);
    /// A peer the node had given up on answers pings again.
    fn on_peer_up(&mut self, _ctx: &mut Ctx<'_, Self::Msg>, _peer: NodeId) {}
    fn on_delay_change(&mut self, _ctx: &mut Ctx<'_, Self::Msg>, _delayed: bool) {}
    /// A bridge acknowledged this firewalled node's outbound connection.
    fn on_tethered(&mut self, _ctx: &mut Ctx<'_, Self::Msg>, _bridge: NodeId) {}
}

/// A node's handle on the world while it handles one event.
pub struct Ctx<'a, M> {
    node: NodeId,
    now: SimTime,
    offset: SimTime,
    alive: &'a [bool],
    delayed: bool,
    sends: Vec<(NodeId, M)>,
    timers: Vec<(SimTime, M)>,
    notes: Vec<(String, Value)>,
}

impl<M> Ctx<'_, M> {
    pub fn id(&self) -> NodeId {
        self.node
    }

    /// This node's clock, which may be skewed against every other clock.
    pub fn local_now(&self) -> SimTime {
        self.now + self.offset
    }

    pub fn node_count(&self) -> usize {
        self.alive.len()
    }

    pub fn send(&mut self, to: NodeId, msg: M) {
        self.sends.push((to, msg));
    }

    /// Delivers `msg` back to this node after `delay` (at least 1 ms).
    pub fn after(&mut self, delay: SimTime, msg: M) {
        self.timers.push((delay.max(1), msg));
    }

    pub fn is_alive(&self, peer: NodeId) -> bool {
        self.alive[peer]
    }

    pub fn alive_peers(&self) -> Vec<NodeId> {
        (0..self.alive.len())
            .filter(|&p| p != self.node && self.alive[p])
            .collect()
    }

    /// Set while a partition defense holds new transactions back.
    pub fn is_delayed(&self) -> bool {
        self.delayed
    }

    /// Appends a protocol event to the run log.
    pub fn log(&mut self, event: &str, fields: Value) {
        self.notes.push((event.to_string(), fields));
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fault {
    Partition {
        a: BTreeSet<NodeId>,
        b: BTreeSet<NodeId>,
    },
    Heal,
}

#[derive(Debug, Clone)]
enum Envelope<M> {
    App(M),
    Relay { target: NodeId, msg: M },
    TestRequest,
    Probe,
    Tether,
    KeepAlive,
    KeepAliveAck,
}

impl<M: Payload> Envelope<M> {
    fn label(&self) -> &'static str {
        match self {
            Envelope::App(m) => m.label(),
            Envelope::Relay { .. } => "relay",
            Envelope::TestRequest => "test_request",
            Envelope::Probe => "probe",
            Envelope::Tether => "tether",
            Envelope::KeepAlive => "keepalive",
            Envelope::KeepAliveAck => "keepalive_ack",
        }
    }
}

#[derive(Debug, Clone)]
enum Ev<M> {
    Start,
    Deliver {
        hop_from: NodeId,
        origin: NodeId,
        to: NodeId,
        env: Envelope<M>,
    },
    Local {
        node: NodeId,
        msg: M,
    },
    PingTick,
    WindowTick,
    Fault(Fault),
    StartHandshake(NodeId),
    HandshakeTimeout(NodeId),
    KeepAliveTick(NodeId),
}

struct Scheduled<M> {
    at: SimTime,
    seq: u64,
    ev: Ev<M>,
}

impl<M> PartialEq for Scheduled<M> {
    fn eq(&self, o: &Self) -> bool {
        (self.at, self.seq) == (o.at, o.seq)
    }
}
impl<M> Eq for Scheduled<M> {}
impl<M> PartialOrd for Scheduled<M> {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl<M> Ord for Scheduled<M> {
    fn cmp(&self, o: &Self) -> Ordering {
        // Reversed: BinaryHeap pops the maximum.
        (o.at, o.seq).cmp(&(self.at, self.seq))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HandshakeState {
    NotAttempted,
    Pending,
    Direct,
    Tethering,
    Bridged,
    Isolated,
}

#[derive(Debug, Clone)]
struct Monitor {
    alive: Vec<bool>,
    misses: Vec<u32>,
    baseline: usize,
    warm: bool,
    ratio_flag: bool,
    region_flag: bool,
}

impl Monitor {
    fn delayed(&self) -> bool {
        self.ratio_flag || self.region_flag
    }
}

#[derive(Debug, Clone, Copy)]
struct Conn {
    opened: SimTime,
    last_ack: Option<SimTime>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct NetStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped_partition: u64,
    pub dropped_firewall: u64,
    pub dropped_no_route: u64,
    pub relayed: u64,
}

pub struct Simulator<P: Process> {
    pub nodes: Vec<P>,
    topo: Topology,
    cfg: NetConfig,
    now: SimTime,
    seq: u64,
    queue: BinaryHeap<Scheduled<P::Msg>>,
    partitions: Vec<(BTreeSet<NodeId>, BTreeSet<NodeId>)>,
    monitors: Vec<Monitor>,
    offsets: Vec<SimTime>,
    handshake: Vec<HandshakeState>,
    /// Outbound connections each node opened, keyed by bridge.
    conns: Vec<BTreeMap<NodeId, Conn>>,
    /// Bridge-side tethers: node → last keepalive time.
    tethers: Vec<BTreeMap<NodeId, SimTime>>,
    latency_rng: StreamRng,
    log: Vec<String>,
    stats: NetStats,
    started: bool,
}

impl<P: Process> Simulator<P> {
    pub fn new(nodes: Vec<P>, mut topo: Topology, cfg: NetConfig, seed: u64) -> Self {
        let n = nodes.len();
        topo.regions.resize(n, 0);
        let monitors = (0..n)
            .map(|i| Monitor {
                alive: (0..n).map(|j| j != i).collect(),
                misses: vec![0; n],
                baseline: n.saturating_sub(1),
                warm: false,
                ratio_flag: false,
                region_flag: false,
            })
            .collect();
        let mut sim = Simulator {
            nodes,
            topo,
            cfg,
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            partitions: Vec::new(),
            monitors,
            offsets: vec![0; n],
            handshake: vec![HandshakeState::NotAttempted; n],
            conns: vec![BTreeMap::new(); n],
            tethers: vec![BTreeMap::new(); n],
            latency_rng: stream(seed, "net-latency", 0),
            log: Vec::new(),
            stats: NetStats::default(),
            started: false,
        };
        sim.push(0, Ev::Start);
        sim
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn stats(&self) -> NetStats {
        self.stats
    }

    /// The ndjson event log.
    pub fn log_lines(&self) -> &[String] {
        &self.log
    }

    pub fn set_clock_offsets(&mut self, offsets: Vec<SimTime>) {
        let n = self.nodes.len();
        self.offsets = offsets;
        self.offsets.resize(n, 0);
    }

    fn push(&mut self, at: SimTime, ev: Ev<P::Msg>) {
        self.seq += 1;
        self.queue.push(Scheduled {
            at,
            seq: self.seq,
            ev,
        });
    }

    fn check_future(&self, at: SimTime) -> Result<(), SimError> {
        if at <= self.now && (self.started || at < self.now) {
            return Err(SimError::Past { at, now: self.now });
        }
        Ok(())
    }

    /// Hands `msg` to `node` at `at`, outside the network.
    pub fn inject(&mut self, at: SimTime, node: NodeId, msg: P::Msg) -> Result<(), SimError> {
        self.check_future(at)?;
        if node >= self.nodes.len() {
            return Err(SimError::UnknownNode(node));
        }
        self.push(at, Ev::Local { node, msg });
        Ok(())
    }

    pub fn schedule_fault(&mut self, at: SimTime, fault: Fault) -> Result<(), SimError> {
        self.check_future(at)?;
        if let Fault::Partition { a, b } = &fault {
            if let Some(x) = a.intersection(b).next() {
                return Err(SimError::Overlap(*x));
            }
        }
        self.push(at, Ev::Fault(fault));
        Ok(())
    }

    /// Cuts `a` off from `b` now.
    pub fn partition(&mut self, a: BTreeSet<NodeId>, b: BTreeSet<NodeId>) -> Result<(), SimError> {
        if let Some(x) = a.intersection(&b).next() {
            return Err(SimError::Overlap(*x));
        }
        self.apply_fault(Fault::Partition { a, b });
        Ok(())
    }

    pub fn heal(&mut self) {
        self.apply_fault(Fault::Heal);
    }

    pub fn active_partitions(&self) -> &[(BTreeSet<NodeId>, BTreeSet<NodeId>)] {
        &self.partitions
    }

    /// Whether a direct packet from `a` to `b` would cross an active cut.
    pub fn link_ok(&self, a: NodeId, b: NodeId) -> bool {
        self.partitions.iter().all(|(x, y)| {
            !((x.contains(&a) && y.contains(&b)) || (y.contains(&a) && x.contains(&b)))
        })
    }

    fn tether_live(&self, bridge: NodeId, node: NodeId) -> bool {
        let dead_after = self.cfg.keepalive_interval * self.cfg.ping_misses as SimTime;
        self.tethers[bridge]
            .get(&node)
            .is_some_and(|&t| self.now.saturating_sub(t) <= dead_after)
    }

    fn relay_bridge(&self, to: NodeId) -> Option<NodeId> {
        self.topo
            .bridges
            .iter()
            .copied()
            .find(|&b| self.tether_live(b, to) && self.conns[to].contains_key(&b))
    }

    /// Whether a message from `a` can currently reach `b`, via a bridge if
    /// `b` is firewalled.
    pub fn reachable(&self, a: NodeId, b: NodeId) -> bool {
        if !self.topo.firewalled.contains(&b) || self.conns[b].contains_key(&a) {
            return self.link_ok(a, b);
        }
        self.topo.bridges.iter().any(|&br| {
            br != a
                && self.conns[b].contains_key(&br)
                && self.tether_live(br, b)
                && self.link_ok(a, br)
                && self.link_ok(br, b)
        })
    }

    pub fn handshake_state(&self, node: NodeId) -> HandshakeState {
        self.handshake[node]
    }

    pub fn is_delayed(&self, node: NodeId) -> bool {
        self.monitors[node].delayed()
    }

    pub fn alive_peers(&self, node: NodeId) -> Vec<NodeId> {
        let m = &self.monitors[node];
        (0..self.nodes.len()).filter(|&p| m.alive[p]).collect()
    }

    /// Live peers over the window-start baseline, capped at 1.
    pub fn connectivity_ratio(&self, node: NodeId) -> f64 {
        let m = &self.monitors[node];
        let alive = m.alive.iter().filter(|&&a| a).count();
        if m.baseline == 0 {
            return 1.0;
        }
        (alive as f64 / m.baseline as f64).min(1.0)
    }

    /// Regions of the node itself and of every live peer.
    pub fn region_coverage(&self, node: NodeId) -> BTreeSet<Region> {
        let m = &self.monitors[node];
        std::iter::once(node)
            .chain((0..self.nodes.len()).filter(|&p| m.alive[p]))
            .map(|p| self.topo.regions[p])
            .collect()
    }

    fn note(&mut self, event: &str, fields: Value) {
        let mut m = Map::new();
        m.insert("t".into(), json!(self.now));
        m.insert("ev".into(), json!(event));
        if let Value::Object(f) = fields {
            m.extend(f);
        }
        self.log.push(Value::Object(m).to_string());
    }

    fn latency(&mut self) -> SimTime {
        let j = self.cfg.latency_jitter;
        let d = self.cfg.latency_base + self.latency_rng.gen_range(0..=2 * j);
        d.saturating_sub(j).max(1)
    }

    fn transmit(&mut self, hop_from: NodeId, origin: NodeId, to: NodeId, env: Envelope<P::Msg>) {
        self.stats.sent += 1;
        let at = self.now + self.latency();
        self.push(
            at,
            Ev::Deliver {
                hop_from,
                origin,
                to,
                env,
            },
        );
    }

    /// Application send: direct unless `to` sits behind a firewall, in
    /// which case the message goes through one of its bridges.
    fn app_send(&mut self, from: NodeId, to: NodeId, msg: P::Msg) {
        if to == from {
            let at = self.now + 1;
            self.push(at, Ev::Local { node: to, msg });
            return;
        }
        if !self.topo.firewalled.contains(&to) || self.conns[to].contains_key(&from) {
            self.transmit(from, from, to, Envelope::App(msg));
            return;
        }
        match self.relay_bridge(to) {
            Some(b) if b != from => {
                self.transmit(from, from, b, Envelope::Relay { target: to, msg })
            }
            _ => {
                self.stats.dropped_no_route += 1;
                if self.cfg.log_deliveries {
                    let label = msg.label();
                    self.note(
                        "drop",
                        json!({"from": from, "to": to, "msg": label, "why": "no_route"}),
                    );
                }
            }
        }
    }

    fn dispatch<F>(&mut self, node: NodeId, f: F)
    where
        F: FnOnce(&mut P, &mut Ctx<'_, P::Msg>),
    {
        let (sends, timers, notes) = {
            let mut ctx = Ctx {
                node,
                now: self.now,
                offset: self.offsets[node],
                alive: &self.monitors[node].alive,
                delayed: self.monitors[node].delayed(),
                sends: Vec::new(),
                timers: Vec::new(),
                notes: Vec::new(),
            };
            f(&mut self.nodes[node], &mut ctx);
            (ctx.sends, ctx.timers, ctx.notes)
        };
        for (event, fields) in notes {
            let mut m = Map::new();
            m.insert("node".into(), json!(node));
            if let Value::Object(f) = fields {
                m.extend(f);
            }
            self.note(&event, Value::Object(m));
        }
        for (to, msg) in sends {
            self.app_send(node, to, msg);
        }
        for (delay, msg) in timers {
            let at = self.now + delay;
            self.push(at, Ev::Local { node, msg });
        }
    }

    /// Runs every event due at or before `t_end`.
    pub fn run_until(&mut self, t_end: SimTime) -> Result<(), SimError> {
        if t_end < self.now {
            return Err(SimError::Past {
                at: t_end,
                now: self.now,
            });
        }
        while self.queue.peek().is_some_and(|e| e.at <= t_end) {
            let Scheduled { at, ev, .. } = self.queue.pop().expect("peeked");
            debug_assert!(at >= self.now);
            self.now = at;
            self.handle(ev);
        }
        self.now = t_end;
        Ok(())
    }

    fn handle(&mut self, ev: Ev<P::Msg>) {
        match ev {
            Ev::Start => self.start(),
            Ev::Deliver {
                hop_from,
                origin,
                to,
                env,
            } => self.deliver(hop_from, origin, to, env),
            Ev::Local { node, msg } => self.dispatch(node, |p, c| p.on_message(c, node, msg)),
            Ev::PingTick => self.ping_tick(),
            Ev::WindowTick => self.window_tick(),
            Ev::Fault(f) => self.apply_fault(f),
            Ev::StartHandshake(n) => self.start_handshake(n),
            Ev::HandshakeTimeout(n) => self.handshake_timeout(n),
            Ev::KeepAliveTick(n) => self.keepalive_tick(n),
        }
    }

    fn start(&mut self) {
        self.started = true;
        for i in 0..self.nodes.len() {
            self.dispatch(i, |p, c| p.on_start(c));
        }
        let (ping, window) = (self.cfg.ping_interval, self.cfg.window);
        self.push(self.now + ping, Ev::PingTick);
        self.push(self.now + window, Ev::WindowTick);
        if !self.topo.bridges.is_empty() {
            for i in 0..self.nodes.len() {
                if !self.topo.bridges.contains(&i) {
                    self.push(self.now + 1, Ev::StartHandshake(i));
                }
            }
        }
    }

    fn deliver(&mut self, hop_from: NodeId, origin: NodeId, to: NodeId, env: Envelope<P::Msg>) {
        let why = if !self.link_ok(hop_from, to) {
            self.stats.dropped_partition += 1;
            Some("partition")
        } else if self.topo.firewalled.contains(&to) && !self.conns[to].contains_key(&hop_from) {
            self.stats.dropped_firewall += 1;
            Some("firewall")
        } else {
            None
        };
        if self.cfg.log_deliveries {
            let label = env.label();
            match why {
                Some(w) => self.note(
                    "drop",
                    json!({"from": hop_from, "to": to, "msg": label, "why": w}),
                ),
                None => self.note(
                    "deliver",
                    json!({"from": hop_from, "to": to, "origin": origin, "msg": label}),
                ),
            }
        }
        if why.is_some() {
            return;
        }
        self.stats.delivered += 1;
        match env {
            Envelope::App(m) => self.dispatch(to, |p, c| p.on_message(c, origin, m)),
            Envelope::Relay { target, msg } => {
                if self.tether_live(to, target) {
                    self.stats.relayed += 1;
                    self.transmit(to, origin, target, Envelope::App(msg));
                } else {
                    self.stats.dropped_no_route += 1;
                }
            }
            Envelope::TestRequest => self.transmit(to, to, hop_from, Envelope::Probe),
            Envelope::Probe => {
                if self.handshake[to] == HandshakeState::Pending {
                    self.handshake[to] = HandshakeState::Direct;
                    self.note("handshake", json!({"node": to, "state": "direct"}));
                }
            }
            Envelope::Tether | Envelope::KeepAlive => {
                self.tethers[to].insert(hop_from, self.now);
                self.transmit(to, to, hop_from, Envelope::KeepAliveAck);
            }
            Envelope::KeepAliveAck => {
                let first = match self.conns[to].get_mut(&hop_from) {
                    Some(c) => c.last_ack.replace(self.now).is_none(),
                    None => return,
                };
                if first {
                    self.handshake[to] = HandshakeState::Bridged;
                    self.note(
                        "handshake",
                        json!({"node": to, "state": "bridged", "bridge": hop_from}),
                    );
                    self.dispatch(to, |p, c| p.on_tethered(c, hop_from));
                }
            }
        }
    }

    fn start_handshake(&mut self, n: NodeId) {
        self.handshake[n] = HandshakeState::Pending;
        self.conns[n].clear();
        for b in self.topo.bridges.clone() {
            self.transmit(n, n, b, Envelope::TestRequest);
        }
        let at = self.now + self.cfg.handshake_timeout.max(1);
        self.push(at, Ev::HandshakeTimeout(n));
    }

    fn handshake_timeout(&mut self, n: NodeId) {
        if self.handshake[n] != HandshakeState::Pending {
            return;
        }
        self.handshake[n] = HandshakeState::Tethering;
        for b in self.topo.bridges.clone() {
            self.conns[n].insert(
                b,
                Conn {
                    opened: self.now,
                    last_ack: None,
                },
            );
            self.transmit(n, n, b, Envelope::Tether);
        }
        let at = self.now + self.cfg.keepalive_interval.max(1);
        self.push(at, Ev::KeepAliveTick(n));
    }

    fn keepalive_tick(&mut self, n: NodeId) {
        let dead_after = self.cfg.keepalive_interval * self.cfg.ping_misses as SimTime;
        let dead: Vec<NodeId> = self.conns[n]
            .iter()
            .filter(|(_, c)| self.now.saturating_sub(c.last_ack.unwrap_or(c.opened)) > dead_after)
            .map(|(b, _)| *b)
            .collect();
        for b in &dead {
            self.conns[n].remove(b);
            self.note("tether_dead", json!({"node": n, "bridge": b}));
        }
        if self.conns[n].is_empty() {
            self.handshake[n] = HandshakeState::Isolated;
            self.note("handshake", json!({"node": n, "state": "isolated"}));
            self.push(self.now + 1, Ev::StartHandshake(n));
            return;
        }
        for b in self.conns[n].keys().copied().collect::<Vec<_>>() {
            self.transmit(n, n, b, Envelope::KeepAlive);
        }
        let at = self.now + self.cfg.keepalive_interval.max(1);
        self.push(at, Ev::KeepAliveTick(n));
    }

    fn ping_ok(&self, i: NodeId, j: NodeId) -> bool {
        self.reachable(i, j) && self.reachable(j, i)
    }

    fn ping_tick(&mut self) {
        let n = self.nodes.len();
        let mut ups = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let ok = self.ping_ok(i, j);
                let m = &mut self.monitors[i];
                if ok {
                    m.misses[j] = 0;
                    if !m.alive[j] {
                        m.alive[j] = true;
                        ups.push((i, j));
                    }
                } else {
                    m.misses[j] += 1;
                    if m.alive[j] && m.misses[j] >= self.cfg.ping_misses {
                        m.alive[j] = false;
                        if self.cfg.log_deliveries {
                            self.note("peer_down", json!({"node": i, "peer": j}));
                        }
                    }
                }
            }
        }
        for (i, j) in ups {
            if self.cfg.log_deliveries {
                self.note("peer_up", json!({"node": i, "peer": j}));
            }
            self.dispatch(i, |p, c| p.on_peer_up(c, j));
        }
        for i in 0..n {
            self.update_defenses(i);
        }
        let at = self.now + self.cfg.ping_interval.max(1);
        self.push(at, Ev::PingTick);
    }

    fn update_defenses(&mut self, i: NodeId) {
        if !self.monitors[i].warm {
            return;
        }
        let before = self.monitors[i].delayed();
        let ratio = self.connectivity_ratio(i);
        let coverage = self.region_coverage(i).len();
        let alive = self.monitors[i].alive.iter().filter(|&&a| a).count();
        let cfg = &self.cfg;
        let m = &mut self.monitors[i];
        if cfg.ratio_rule {
            if !m.ratio_flag && ratio < cfg.ratio_threshold {
                m.ratio_flag = true;
            } else if m.ratio_flag && ratio >= cfg.ratio_threshold {
                m.ratio_flag = false;
                m.baseline = alive;
            }
        }
        m.region_flag = cfg.min_regions > 1 && coverage < cfg.min_regions;
        let after = m.delayed();
        let (rf, gf) = (m.ratio_flag, m.region_flag);
        if before != after {
            self.note(
                if after { "delay_on" } else { "delay_off" },
                json!({"node": i, "ratio": (ratio * 1000.0).round() / 1000.0, "regions": coverage, "ratio_rule": rf, "region_rule": gf}),
            );
            self.dispatch(i, |p, c| p.on_delay_change(c, after));
        }
    }

    fn window_tick(&mut self) {
        for m in &mut self.monitors {
            m.warm = true;
            if !m.ratio_flag {
                m.baseline = m.alive.iter().filter(|&&a| a).count();
            }
        }
        let at = self.now + self.cfg.window.max(1);
        self.push(at, Ev::WindowTick);
    }

    fn apply_fault(&mut self, f: Fault) {
        match f {
            Fault::Partition { a, b } => {
                self.note(
                    "partition",
                    json!({"a": a.iter().collect::<Vec<_>>(), "b": b.iter().collect::<Vec<_>>()}),
                );
                self.partitions.push((a, b));
            }
            Fault::Heal => {
                self.note("heal", json!({}));
                self.partitions.clear();
            }
        }
    }
}
