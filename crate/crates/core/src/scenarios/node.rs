//! The protocol node run inside the simulator.
//!
//! Payments take three hops: the payer offers, the payee answers with a
//! fresh receiving account, the payer signs, and the payee co-signs and
//! proposes the record. The proposer broadcasts the proposal, selected
//! witnesses send it acceptances, anyone may broadcast a rejection, and once
//! the proposer's tally accepts it broadcasts the confirmed bundle that
//! every other node checks and tallies for itself.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use serde_json::json;

use crate::consensus::{
    apply_penalty, select_witnesses, tally, verify_report, witness_validate, Evidence,
    Falsification, Judged, LocalView, Offense, Outcome, ReportKind, Sanctions, Subject, Verdict,
    WitnessReport,
};
use crate::crypto::{self, AccountId, Digest, KeyPair, Signature};
use crate::incentives::{
    sign_compensation, validate_compensation, CompensationKind, IssueError, ServiceLog, TetherAck,
    WitnessRegistry, WitnessedRecord,
};
use crate::ledger::{
    validate_record, Amount, CreditSource, EvidenceKind, Ledger, LedgerError, TransactionRecord,
    TransferBody, Validation,
};
use crate::netsim::{Ctx, NodeId, Payload, Process};
use crate::privacy::{self, StemRoute, EV_FLUFF, EV_STEM_HOP, EV_SUBMIT};
use crate::rng::{stream, StreamRng};
use crate::SimTime;

use super::config::CorruptMode;
use super::World;

pub type OrderId = u64;

/// Proposal rounds before the proposer gives up on a subject.
const MAX_ROUNDS: u32 = 5;
/// Margin an honest wallet adds to the recipient spend delay.
const SPEND_MARGIN: SimTime = 1_000;
const FUNDS_RETRY: SimTime = 500;
const FUNDS_PATIENCE: SimTime = 60_000;
const RECHECK: SimTime = 500;
const RETALLY: SimTime = 1_000;
/// How far back a node reaches when re-announcing settled bundles.
const SYNC_HORIZON: SimTime = 300_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Order {
    pub id: OrderId,
    pub to: NodeId,
    pub amount: Amount,
    /// Spend from this account instead of choosing one.
    pub account: Option<AccountId>,
    pub stem: bool,
}

/// What a proposer broadcasts once it accepts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bundle {
    pub subject: Subject,
    pub round: u32,
    pub pool: Vec<AccountId>,
    pub selected: Vec<AccountId>,
    pub acceptances: Vec<WitnessReport>,
}

#[derive(Debug, Clone)]
pub enum Msg {
    Order(Order),
    Offer {
        order: OrderId,
        amount: Amount,
        stem: bool,
    },
    Invoice {
        order: OrderId,
        account: AccountId,
    },
    Signed {
        order: OrderId,
        body: TransferBody,
        sender_sig: Signature,
    },
    Stem {
        record: TransactionRecord,
        route: StemRoute,
        batch: Vec<TransactionRecord>,
    },
    Proposal {
        subject: Subject,
        initiator: NodeId,
        round: u32,
        pool: Vec<AccountId>,
        selected: Vec<AccountId>,
    },
    Report(Box<WitnessReport>),
    Confirmed(Box<Bundle>),
    Sync(Vec<Bundle>),
    Accusation {
        report: Box<WitnessReport>,
        proof: Vec<TransactionRecord>,
    },
    TetherAck(TetherAck),
    // Timers.
    Evaluate(Digest),
    Recheck(Digest),
    DayEnd(u64),
    RetryFunds,
    StemForward {
        record: TransactionRecord,
        route: StemRoute,
        batch: Vec<TransactionRecord>,
    },
    Flood(u64),
}

impl Payload for Msg {
    fn label(&self) -> &'static str {
        match self {
            Msg::Order(_) => "order",
            Msg::Offer { .. } => "offer",
            Msg::Invoice { .. } => "invoice",
            Msg::Signed { .. } => "signed",
            Msg::Stem { .. } => "stem",
            Msg::Proposal { .. } => "proposal",
            Msg::Report(r) => match r.kind {
                ReportKind::Acceptance => "acceptance",
                ReportKind::Rejection => "rejection",
            },
            Msg::Confirmed(_) => "confirmed",
            Msg::Sync(_) => "sync",
            Msg::Accusation { .. } => "accusation",
            Msg::TetherAck(_) => "tether_ack",
            Msg::Evaluate(_) => "evaluate",
            Msg::Recheck(_) => "recheck",
            Msg::DayEnd(_) => "day_end",
            Msg::RetryFunds => "retry_funds",
            Msg::StemForward { .. } => "stem_forward",
            Msg::Flood(_) => "flood",
        }
    }
}

#[derive(Debug, Clone)]
struct Item {
    subject: Subject,
    initiator: Option<NodeId>,
    round: u32,
    pool: Vec<AccountId>,
    selected: BTreeSet<AccountId>,
    selection_ok: Option<bool>,
    first_seen: SimTime,
    reports: Vec<WitnessReport>,
    outcome: Outcome,
    bundle: Option<Bundle>,
    decided_at: SimTime,
    /// Corrupt proposals confirm regardless of the tally.
    forced: bool,
    late_veto: bool,
}

struct Pay {
    order: OrderId,
    to: NodeId,
    receiver: AccountId,
    amount: Amount,
    account: Option<AccountId>,
    since: SimTime,
}

/// Everything the runner reads back after a run.
#[derive(Debug, Default, Clone)]
pub struct NodeRecord {
    /// Orders this node co-signed as payee.
    pub cosigned: BTreeMap<OrderId, Digest>,
    pub unfunded: u64,
    pub claims: u64,
    pub not_eligible: u64,
    pub stem_fallbacks: u64,
    /// Records produced by an invalid flood.
    pub flood_records: Vec<Digest>,
}

pub struct Node {
    w: Arc<World>,
    id: NodeId,
    mode: Option<CorruptMode>,
    key: KeyPair,
    witness_keys: Vec<KeyPair>,
    accounts: Vec<KeyPair>,
    next_account: u64,
    pub ledger: Ledger,
    pub registry: WitnessRegistry,
    pub sanctions: Sanctions,
    service: ServiceLog,
    items: BTreeMap<Digest, Item>,
    seen: BTreeMap<Digest, TransactionRecord>,
    /// Well-formed records by chain slot.
    slots: BTreeMap<(AccountId, u64), BTreeSet<Digest>>,
    conflicted: BTreeSet<(AccountId, u64)>,
    in_flight: BTreeMap<AccountId, Digest>,
    orders: BTreeMap<OrderId, Order>,
    invoices: BTreeMap<OrderId, (KeyPair, Amount, bool)>,
    waiting: VecDeque<Pay>,
    retry_armed: bool,
    deferred: Vec<Subject>,
    withheld: BTreeSet<Digest>,
    sent: BTreeSet<(Digest, AccountId, ReportKind, u32)>,
    accused: BTreeSet<AccountId>,
    tethered_to: BTreeSet<NodeId>,
    settled: Vec<(SimTime, Digest)>,
    boot: SimTime,
    rng: StreamRng,
    pub record: NodeRecord,
}

fn key_for(w: &World, id: &AccountId) -> Option<NodeId> {
    w.witness_owner.get(id).copied()
}

impl Node {
    pub(crate) fn new(w: Arc<World>, id: NodeId) -> Self {
        let cfg = &w.cfg;
        let mode = cfg.corrupt_mode(id);
        let mut ledger = Ledger::new(cfg.fees.policy(), cfg.fees.side);
        for (acct, amt) in &w.genesis {
            ledger
                .genesis(*acct, *amt)
                .expect("genesis accounts are distinct");
        }
        let mut registry = WitnessRegistry::new(cfg.compensation.idle_days);
        for wid in w.witness_owner.keys() {
            registry
                .register_witness(*wid, cfg.consensus.witness_stake, 0, 0)
                .expect("fresh registry");
        }
        let mut accounts = Vec::new();
        if let Some(k) = w.genesis_keys.get(&id) {
            accounts.push(k.clone());
        }
        Node {
            id,
            mode,
            key: w.node_keys[id].clone(),
            witness_keys: w.witness_keys.get(&id).cloned().unwrap_or_default(),
            accounts,
            next_account: 0,
            ledger,
            registry,
            sanctions: Sanctions::default(),
            service: ServiceLog::default(),
            items: BTreeMap::new(),
            seen: BTreeMap::new(),
            slots: BTreeMap::new(),
            conflicted: BTreeSet::new(),
            in_flight: BTreeMap::new(),
            orders: BTreeMap::new(),
            invoices: BTreeMap::new(),
            waiting: VecDeque::new(),
            retry_armed: false,
            deferred: Vec::new(),
            withheld: BTreeSet::new(),
            sent: BTreeSet::new(),
            accused: BTreeSet::new(),
            tethered_to: BTreeSet::new(),
            settled: Vec::new(),
            boot: 0,
            rng: stream(w.seed, "node", id as u64),
            record: NodeRecord::default(),
            w,
        }
    }

    pub fn is_honest(&self) -> bool {
        self.mode.is_none()
    }

    pub fn witness_ids(&self) -> Vec<AccountId> {
        self.witness_keys.iter().map(|k| k.account_id()).collect()
    }

    /// Final outcome per subject as this node sees it.
    pub fn decisions(&self) -> BTreeMap<Digest, Outcome> {
        self.items
            .iter()
            .map(|(id, it)| (*id, it.outcome))
            .collect()
    }

    pub fn subjects(&self) -> impl Iterator<Item = (&Subject, Outcome)> {
        self.items.values().map(|it| (&it.subject, it.outcome))
    }

    pub fn outcome_of(&self, id: &Digest) -> Outcome {
        self.items.get(id).map_or(Outcome::Pending, |i| i.outcome)
    }

    /// Shares the attacker's spending account with this node.
    pub(crate) fn grant_account(&mut self, key: KeyPair) {
        if !self.accounts.iter().any(|k| k == &key) {
            self.accounts.push(key);
        }
    }

    fn n(&self) -> usize {
        self.w.node_keys.len()
    }

    fn day(&self, ctx: &Ctx<'_, Msg>) -> u64 {
        self.w.cfg.compensation.day_of(ctx.local_now() - self.boot)
    }

    fn broadcast(&self, ctx: &mut Ctx<'_, Msg>, msg: Msg) {
        for p in 0..self.n() {
            if p != self.id {
                ctx.send(p, msg.clone());
            }
        }
    }

    fn fresh_account(&mut self) -> KeyPair {
        self.next_account += 1;
        super::derive_key(self.w.seed, "account", self.id, self.next_account)
    }

    // ---- payments ----

    fn on_order(&mut self, ctx: &mut Ctx<'_, Msg>, o: Order) {
        ctx.send(
            o.to,
            Msg::Offer {
                order: o.id,
                amount: o.amount,
                stem: o.stem,
            },
        );
        self.orders.insert(o.id, o);
    }

    fn on_offer(
        &mut self,
        ctx: &mut Ctx<'_, Msg>,
        from: NodeId,
        order: OrderId,
        amount: Amount,
        stem: bool,
    ) {
        let key = match (self.mode, self.accounts.first()) {
            (Some(CorruptMode::WashTrader), Some(k)) => k.clone(),
            _ => self.fresh_account(),
        };
        let account = key.account_id();
        self.invoices.insert(order, (key, amount, stem));
        ctx.send(from, Msg::Invoice { order, account });
    }

    fn spendable(&self, ctx: &Ctx<'_, Msg>, amount: Amount) -> Option<AccountId> {
        let now = ctx.local_now();
        let delay = self.w.cfg.consensus.recipient_spend_delay + SPEND_MARGIN;
        self.accounts.iter().map(|k| k.account_id()).find(|a| {
            !self.in_flight.contains_key(a)
                && !self.sanctions.is_flagged(a)
                && self.ledger.balance(a) >= amount + self.ledger.fee_for(amount)
                && match self.ledger.credit_source(a) {
                    Some(CreditSource::Genesis) => true,
                    Some(CreditSource::Transfer(id)) => self
                        .ledger
                        .accepted_at(&id)
                        .is_some_and(|t| now >= t + delay),
                    None => false,
                }
        })
    }

    fn on_invoice(&mut self, ctx: &mut Ctx<'_, Msg>, order: OrderId, receiver: AccountId) {
        let Some(o) = self.orders.remove(&order) else {
            return;
        };
        self.waiting.push_back(Pay {
            order,
            to: o.to,
            receiver,
            amount: o.amount,
            account: o.account,
            since: ctx.local_now(),
        });
        self.pay_waiting(ctx);
    }

    fn pay_waiting(&mut self, ctx: &mut Ctx<'_, Msg>) {
        let mut still = VecDeque::new();
        while let Some(p) = self.waiting.pop_front() {
            let account = match (self.mode, p.account) {
                (Some(CorruptMode::DoubleSpender), Some(a)) => Some(a),
                (_, Some(a)) if !self.in_flight.contains_key(&a) => Some(a),
                (_, Some(_)) => None,
                (_, None) => self.spendable(ctx, p.amount),
            };
            let Some(account) = account else {
                if ctx.local_now() >= p.since + FUNDS_PATIENCE {
                    self.record.unfunded += 1;
                    ctx.log("unfunded", json!({"order": p.order}));
                } else {
                    still.push_back(p);
                }
                continue;
            };
            let key = self
                .accounts
                .iter()
                .find(|k| k.account_id() == account)
                .expect("own account")
                .clone();
            let body = TransferBody {
                sender: account,
                receiver: p.receiver,
                amount: p.amount,
                sender_seq: self.ledger.chain_len(&account) + 1,
                prev_sender_hash: self.ledger.last_outgoing(&account),
            };
            let sender_sig = crypto::sign(&key, &body.canonical_bytes());
            if self.mode != Some(CorruptMode::DoubleSpender) {
                self.in_flight.insert(account, body.tx_id());
            }
            ctx.send(
                p.to,
                Msg::Signed {
                    order: p.order,
                    body,
                    sender_sig,
                },
            );
        }
        self.waiting = still;
        if !self.waiting.is_empty() && !self.retry_armed {
            self.retry_armed = true;
            ctx.after(FUNDS_RETRY, Msg::RetryFunds);
        }
    }

    fn on_signed(
        &mut self,
        ctx: &mut Ctx<'_, Msg>,
        order: OrderId,
        body: TransferBody,
        sender_sig: Signature,
    ) {
        let Some((key, amount, stem)) = self.invoices.remove(&order) else {
            return;
        };
        if body.receiver != key.account_id() || body.amount != amount {
            return;
        }
        let receiver_sig = crypto::sign(&key, &body.canonical_bytes());
        let record = TransactionRecord::from_parts(body, sender_sig, receiver_sig);
        self.record.cosigned.insert(order, record.tx_id);
        ctx.log(
            "cosign",
            json!({"order": order, "tx": record.tx_id.to_hex()}),
        );
        if self.mode == Some(CorruptMode::WashTrader) || !self.accounts.iter().any(|k| k == &key) {
            self.accounts.push(key);
        }
        if stem {
            self.start_stem(ctx, record);
        } else {
            self.initiate(ctx, Subject::Transfer(record));
        }
    }

    // ---- stem relay ----

    fn start_stem(&mut self, ctx: &mut Ctx<'_, Msg>, record: TransactionRecord) {
        let peers = ctx.alive_peers();
        let route = privacy::stem_route(self.id, &peers, &self.w.cfg.relay, &mut self.rng);
        let tx = record.tx_id.to_hex();
        ctx.log(EV_SUBMIT, json!({"tx": tx}));
        if route.fallback {
            self.record.stem_fallbacks += 1;
        }
        let Some(first) = route.next_after(self.id) else {
            ctx.log(EV_FLUFF, json!({"tx": tx}));
            self.initiate(ctx, Subject::Transfer(record));
            return;
        };
        let known: Vec<TransactionRecord> = self.ledger.transfers_in_order().cloned().collect();
        let batch =
            privacy::pick_batch(&record, &known, self.w.cfg.relay.batch_size, &mut self.rng);
        ctx.log(EV_STEM_HOP, json!({"tx": tx, "to": first}));
        ctx.send(
            first,
            Msg::Stem {
                record,
                route,
                batch,
            },
        );
    }

    fn on_stem(
        &mut self,
        ctx: &mut Ctx<'_, Msg>,
        record: TransactionRecord,
        route: StemRoute,
        batch: Vec<TransactionRecord>,
    ) {
        let delay = route.delay_at(self.id);
        if delay == 0 {
            self.stem_forward(ctx, record, route, batch);
        } else {
            ctx.after(
                delay,
                Msg::StemForward {
                    record,
                    route,
                    batch,
                },
            );
        }
    }

    fn stem_forward(
        &mut self,
        ctx: &mut Ctx<'_, Msg>,
        record: TransactionRecord,
        route: StemRoute,
        batch: Vec<TransactionRecord>,
    ) {
        let tx = record.tx_id.to_hex();
        match route.next_after(self.id) {
            Some(next) => {
                ctx.log(EV_STEM_HOP, json!({"tx": tx, "to": next}));
                ctx.send(
                    next,
                    Msg::Stem {
                        record,
                        route,
                        batch,
                    },
                );
            }
            None => {
                ctx.log(EV_FLUFF, json!({"tx": tx}));
                self.initiate(ctx, Subject::Transfer(record));
            }
        }
    }

    // ---- consensus ----

    fn ensure_item(&mut self, ctx: &mut Ctx<'_, Msg>, subject: &Subject) -> Digest {
        let id = subject.id();
        if !self.items.contains_key(&id) {
            let now = ctx.local_now();
            self.items.insert(
                id,
                Item {
                    subject: subject.clone(),
                    initiator: None,
                    round: 0,
                    pool: Vec::new(),
                    selected: BTreeSet::new(),
                    selection_ok: None,
                    first_seen: now,
                    reports: Vec::new(),
                    outcome: Outcome::Pending,
                    bundle: None,
                    decided_at: 0,
                    forced: false,
                    late_veto: false,
                },
            );
            ctx.after(self.w.cfg.consensus.waiting_period + 1, Msg::Evaluate(id));
            if let Subject::Transfer(r) = subject {
                self.note_record(ctx, r);
            }
        }
        id
    }

    /// Remembers a transfer by chain slot. Two well-formed records in one
    /// slot convict the sender.
    fn note_record(&mut self, ctx: &mut Ctx<'_, Msg>, r: &TransactionRecord) {
        if self.seen.contains_key(&r.tx_id) || !r.is_well_formed() {
            return;
        }
        self.seen.insert(r.tx_id, r.clone());
        let key = (r.sender, r.sender_seq);
        let slot = self.slots.entry(key).or_default();
        slot.insert(r.tx_id);
        if slot.len() < 2 || !self.conflicted.insert(key) {
            return;
        }
        let other = slot
            .iter()
            .find(|i| **i != r.tx_id)
            .copied()
            .expect("two records");
        let other = self.seen[&other].clone();
        let settled = self.ledger.contains(&other.tx_id) || self.ledger.contains(&r.tx_id);
        self.convict(ctx, other, r.clone(), settled);
        // Honest witnesses revisit every undecided record in the slot.
        let ids: Vec<Digest> = self.slots[&key].iter().copied().collect();
        for i in ids {
            if self
                .items
                .get(&i)
                .is_some_and(|it| it.outcome == Outcome::Pending)
            {
                self.witness_duties(ctx, i);
            }
        }
    }

    fn convict(
        &mut self,
        ctx: &mut Ctx<'_, Msg>,
        first: TransactionRecord,
        second: TransactionRecord,
        post_partition: bool,
    ) {
        let offender = first.sender;
        let offense = if post_partition {
            Offense::PostPartitionDoubleSpend { first, second }
        } else {
            Offense::SenderFraud { first, second }
        };
        if let Ok(out) = apply_penalty(
            &mut self.ledger,
            &mut self.registry,
            &mut self.sanctions,
            &offender,
            &offense,
            &self.w.cfg.consensus,
        ) {
            if out.fresh {
                let ev = if post_partition {
                    "post_partition_double_spend"
                } else {
                    "sender_fraud"
                };
                ctx.log(
                    ev,
                    json!({"sender": offender.short(), "slashed": out.slashed}),
                );
            }
        }
    }

    fn pending_conflict(&self, r: &TransactionRecord) -> Option<&TransactionRecord> {
        self.slots
            .get(&(r.sender, r.sender_seq))?
            .iter()
            .filter(|i| **i != r.tx_id)
            .find_map(|i| self.seen.get(i))
    }

    fn view<'a>(&'a self, subject: &'a Subject, first_seen: SimTime) -> LocalView<'a> {
        let (pending_conflict, fraud_proof) = match subject {
            Subject::Transfer(r) => (
                self.pending_conflict(r),
                self.sanctions.fraud_proof(&r.sender),
            ),
            Subject::Compensation(_) => (None, None),
        };
        LocalView {
            ledger: &self.ledger,
            registry: &self.registry,
            compensation: &self.w.cfg.compensation,
            recipient_spend_delay: self.w.cfg.consensus.recipient_spend_delay,
            first_seen,
            pending_conflict,
            fraud_proof,
        }
    }

    fn selection_key(id: &Digest, round: u32) -> Digest {
        Digest::of_parts(&[id.as_bytes(), &round.to_be_bytes()])
    }

    fn select(&self, id: &Digest, round: u32, pool: &[AccountId]) -> Option<BTreeSet<AccountId>> {
        let c = &self.w.cfg.consensus;
        select_witnesses(
            pool,
            c.community_k,
            c.witness_pool_size,
            self.w.seed,
            &Self::selection_key(id, round),
        )
        .ok()
    }

    fn initiate(&mut self, ctx: &mut Ctx<'_, Msg>, subject: Subject) {
        if ctx.is_delayed() {
            self.deferred.push(subject);
            return;
        }
        let id = self.ensure_item(ctx, &subject);
        let it = self.items.get_mut(&id).expect("just ensured");
        if it.initiator.is_some() {
            return;
        }
        it.initiator = Some(self.id);
        self.propose(ctx, id, 0);
    }

    fn propose(&mut self, ctx: &mut Ctx<'_, Msg>, id: Digest, round: u32) {
        let me = self.id;
        let pool: Vec<AccountId> = self
            .registry
            .available()
            .into_iter()
            .filter(|w| key_for(&self.w, w).is_some_and(|o| o == me || ctx.is_alive(o)))
            .collect();
        let selected = self.select(&id, round, &pool);
        let it = self.items.get_mut(&id).expect("proposed item exists");
        it.round = round;
        it.initiator = Some(me);
        match selected {
            Some(sel) => {
                it.pool = pool.clone();
                it.selected = sel.clone();
                it.selection_ok = Some(true);
                let msg = Msg::Proposal {
                    subject: it.subject.clone(),
                    initiator: me,
                    round,
                    pool,
                    selected: sel.into_iter().collect(),
                };
                ctx.log("propose", json!({"tx": id.to_hex(), "round": round}));
                self.broadcast(ctx, msg);
                self.witness_duties(ctx, id);
            }
            None => {
                it.pool.clear();
                it.selected.clear();
                ctx.log("unservable", json!({"tx": id.to_hex(), "round": round}));
            }
        }
        ctx.after(self.w.cfg.consensus.waiting_period + 1, Msg::Evaluate(id));
    }

    fn on_proposal(
        &mut self,
        ctx: &mut Ctx<'_, Msg>,
        subject: Subject,
        initiator: NodeId,
        round: u32,
        pool: Vec<AccountId>,
        selected: Vec<AccountId>,
    ) {
        let id = self.ensure_item(ctx, &subject);
        let it = self.items.get_mut(&id).expect("ensured");
        if it.initiator.is_none() || round > it.round {
            it.initiator = Some(initiator);
            it.round = round;
            it.pool = pool;
            it.selected = selected.into_iter().collect();
            it.selection_ok = None;
        }
        self.witness_duties(ctx, id);
    }

    /// Reports from every witness identity this node hosts.
    fn witness_duties(&mut self, ctx: &mut Ctx<'_, Msg>, id: Digest) {
        if self.witness_keys.is_empty() {
            return;
        }
        let Some(it) = self.items.get(&id) else {
            return;
        };
        if it.outcome != Outcome::Pending {
            return;
        }
        let (subject, round, initiator, first_seen) =
            (it.subject.clone(), it.round, it.initiator, it.first_seen);
        let selected = it.selected.clone();
        let mut out: Vec<(WitnessReport, bool)> = Vec::new();
        let mut recheck = false;
        let mut withhold = false;
        for k in &self.witness_keys {
            let wid = k.account_id();
            if !self.registry.is_available(&wid) && self.is_honest() {
                continue;
            }
            if self.sent.contains(&(id, wid, ReportKind::Rejection, 0)) {
                continue;
            }
            let chosen = selected.contains(&wid);
            let report = match self.mode {
                Some(CorruptMode::FalseAccept | CorruptMode::SybilSpawner) => {
                    if !chosen
                        || self
                            .sent
                            .contains(&(id, wid, ReportKind::Acceptance, round))
                    {
                        continue;
                    }
                    let ev = match &subject {
                        Subject::Transfer(r) => self.ledger.sender_excerpt(&r.sender),
                        Subject::Compensation(_) => Vec::new(),
                    };
                    WitnessReport::signed(
                        ReportKind::Acceptance,
                        subject.clone(),
                        Evidence::Excerpt(ev),
                        k,
                    )
                }
                Some(CorruptMode::FalseRejectFabricatedEvidence) => {
                    let Subject::Transfer(r) = &subject else {
                        continue;
                    };
                    let mut fake = r.clone();
                    fake.amount += 1;
                    fake.tx_id = fake.body().tx_id();
                    WitnessReport::signed(
                        ReportKind::Rejection,
                        subject.clone(),
                        Evidence::Invalidity(crate::ledger::InvalidityEvidence::with_conflict(
                            EvidenceKind::DoubleSpend,
                            fake,
                        )),
                        k,
                    )
                }
                _ => match witness_validate(k, &subject, &self.view(&subject, first_seen)) {
                    Some(r) => r,
                    None => {
                        recheck = true;
                        continue;
                    }
                },
            };
            match report.kind {
                ReportKind::Acceptance => {
                    if !chosen {
                        continue;
                    }
                    if ctx.is_delayed() {
                        withhold = true;
                        continue;
                    }
                    if self.sent.insert((id, wid, ReportKind::Acceptance, round)) {
                        out.push((report, false));
                    }
                }
                ReportKind::Rejection => {
                    if self.sent.insert((id, wid, ReportKind::Rejection, 0)) {
                        out.push((report, true));
                    }
                }
            }
        }
        if withhold {
            self.withheld.insert(id);
        }
        if recheck && ctx.local_now() < first_seen + 4 * self.w.cfg.consensus.waiting_period {
            ctx.after(RECHECK, Msg::Recheck(id));
        }
        for (report, flood) in out {
            if flood {
                self.broadcast(ctx, Msg::Report(Box::new(report.clone())));
                self.on_report(ctx, report);
            } else {
                match initiator {
                    Some(i) if i == self.id => self.on_report(ctx, report),
                    Some(i) => ctx.send(i, Msg::Report(Box::new(report))),
                    None => {}
                }
            }
        }
    }

    fn on_report(&mut self, ctx: &mut Ctx<'_, Msg>, report: WitnessReport) {
        let id = self.ensure_item(ctx, &report.proposed);
        if let Evidence::Invalidity(e) = &report.evidence {
            let mut proof: Vec<TransactionRecord> = e.conflicting_record.iter().cloned().collect();
            if e.kind == EvidenceKind::FraudulentSender {
                proof.extend(e.ledger_excerpt.iter().flatten().cloned());
            }
            for r in proof.iter().filter(|r| r.is_well_formed()) {
                self.note_record(ctx, r);
            }
        }
        let is_rejection = report.kind == ReportKind::Rejection;
        let it = self.items.get_mut(&id).expect("ensured");
        if !it.reports.contains(&report) {
            it.reports.push(report);
        }
        if is_rejection {
            self.evaluate(ctx, id);
        }
    }

    /// Whether an acceptance judged contrary proves the witness lied, as
    /// opposed to having simply seen the rival record later.
    fn acceptance_punishable(&self, report: &WitnessReport) -> bool {
        let Subject::Transfer(r) = &report.proposed else {
            return true;
        };
        if !r.is_well_formed() {
            return true;
        }
        if let Validation::Invalid(e) = validate_record(r, &self.ledger) {
            if e.kind == EvidenceKind::ReceiverReuse {
                return true;
            }
        }
        // Vouching for two records in one slot.
        let rivals = self
            .slots
            .get(&(r.sender, r.sender_seq))
            .into_iter()
            .flatten()
            .filter(|i| **i != r.tx_id);
        for rival in rivals {
            let vouched = self.items.get(rival).is_some_and(|it| {
                it.reports
                    .iter()
                    .any(|o| o.witness == report.witness && o.kind == ReportKind::Acceptance)
            });
            if vouched {
                return true;
            }
        }
        false
    }

    fn punish(
        &mut self,
        ctx: &mut Ctx<'_, Msg>,
        report: &WitnessReport,
        proof: Vec<TransactionRecord>,
    ) {
        if self.registry.is_blacklisted(&report.witness) {
            return;
        }
        let offense = Offense::WitnessFalsification {
            report: Box::new(report.clone()),
        };
        if let Ok(out) = apply_penalty(
            &mut self.ledger,
            &mut self.registry,
            &mut self.sanctions,
            &report.witness,
            &offense,
            &self.w.cfg.consensus,
        ) {
            if out.fresh {
                ctx.log(
                    "blacklist",
                    json!({"witness": report.witness.short(), "reason": "falsified_report"}),
                );
            }
        }
        if self.accused.insert(report.witness) {
            self.broadcast(
                ctx,
                Msg::Accusation {
                    report: Box::new(report.clone()),
                    proof,
                },
            );
        }
    }

    fn on_accusation(
        &mut self,
        ctx: &mut Ctx<'_, Msg>,
        report: WitnessReport,
        proof: Vec<TransactionRecord>,
    ) {
        for r in proof.iter().filter(|r| r.is_well_formed()) {
            self.note_record(ctx, r);
        }
        let id = self.ensure_item(ctx, &report.proposed);
        let it = self.items.get_mut(&id).expect("ensured");
        if !it.reports.contains(&report) {
            it.reports.push(report.clone());
        }
        let first_seen = it.first_seen;
        let subject = it.subject.clone();
        let guilty = match verify_report(&report, &self.view(&subject, first_seen)) {
            Verdict::Falsified(Falsification::FabricatedEvidence) => true,
            Verdict::Falsified(Falsification::ContraryEvidence) => {
                self.acceptance_punishable(&report)
            }
            _ => false,
        };
        if guilty && !self.registry.is_blacklisted(&report.witness) {
            self.accused.insert(report.witness);
            self.punish(ctx, &report, proof);
        }
    }

    fn selection_checks_out(&mut self, id: &Digest) -> bool {
        let it = &self.items[id];
        if let Some(ok) = it.selection_ok {
            return ok;
        }
        let pool_ok = !it.pool.is_empty()
            && it
                .pool
                .iter()
                .all(|w| self.registry.is_available(w) && !self.registry.is_blacklisted(w));
        let ok = pool_ok && self.select(id, it.round, &it.pool).as_ref() == Some(&it.selected);
        self.items.get_mut(id).expect("exists").selection_ok = Some(ok);
        ok
    }

    fn evaluate(&mut self, ctx: &mut Ctx<'_, Msg>, id: Digest) {
        let Some(it) = self.items.get(&id) else {
            return;
        };
        if it.forced {
            self.force_confirm(ctx, id);
            return;
        }
        let (subject, first_seen, reports) =
            (it.subject.clone(), it.first_seen, it.reports.clone());
        let view = self.view(&subject, first_seen);
        let mut per_witness: BTreeMap<AccountId, Judged> = BTreeMap::new();
        let mut guilty = Vec::new();
        for r in &reports {
            let verdict = verify_report(r, &view);
            let j = Judged {
                kind: r.kind,
                witness: r.witness,
                verdict,
            };
            if let Verdict::Falsified(f) = verdict {
                if f.attributable() {
                    guilty.push(r.clone());
                }
            }
            let slot = per_witness.entry(r.witness).or_insert(j);
            let better = |a: &Judged| match (a.kind, a.verdict.is_valid()) {
                (ReportKind::Rejection, true) => 2,
                (ReportKind::Acceptance, true) => 1,
                _ => 0,
            };
            if better(&j) > better(slot) {
                *slot = j;
            }
        }
        let vetoed_by_self: BTreeSet<AccountId> = per_witness
            .values()
            .filter(|j| j.kind == ReportKind::Rejection && j.verdict.is_valid())
            .map(|j| j.witness)
            .collect();
        for r in guilty {
            if vetoed_by_self.contains(&r.witness) && r.kind == ReportKind::Acceptance {
                continue;
            }
            let punishable = match r.kind {
                ReportKind::Acceptance => self.acceptance_punishable(&r),
                ReportKind::Rejection => true,
            };
            if punishable {
                let proof = match &subject {
                    Subject::Transfer(t) => self.pending_conflict(t).cloned().into_iter().collect(),
                    Subject::Compensation(_) => Vec::new(),
                };
                self.punish(ctx, &r, proof);
            }
        }
        let it = &self.items[&id];
        if it.outcome == Outcome::Rejected {
            return;
        }
        let is_initiator = it.initiator == Some(self.id);
        let selection_ok = is_initiator || self.selection_checks_out(&id);
        let it = &self.items[&id];
        let selected = if selection_ok {
            it.selected.clone()
        } else {
            BTreeSet::new()
        };
        let judged: Vec<Judged> = per_witness.into_values().collect();
        let c = &self.w.cfg.consensus;
        let min = c.min_acceptances_for(selected.len());
        let mut result = tally(
            &judged,
            &selected,
            min,
            first_seen,
            ctx.local_now(),
            c.waiting_period,
        );
        if selected.is_empty() && result.outcome == Outcome::Accepted {
            result.outcome = Outcome::Pending;
        }
        if it.outcome == Outcome::Accepted {
            if result.outcome == Outcome::Rejected && !it.late_veto {
                self.items.get_mut(&id).expect("exists").late_veto = true;
                ctx.log("late_veto", json!({"tx": id.to_hex()}));
            }
            return;
        }
        match result.outcome {
            Outcome::Accepted => {
                if ctx.is_delayed() {
                    return;
                }
                self.finalize(ctx, id, &judged);
            }
            Outcome::Rejected => self.reject(ctx, id),
            Outcome::Pending => {
                if is_initiator {
                    let now = ctx.local_now();
                    let it = &self.items[&id];
                    let per_round = 3 * c.waiting_period;
                    let next = it.round + 1;
                    if now >= first_seen + per_round * next as SimTime && next < MAX_ROUNDS {
                        self.propose(ctx, id, next);
                    } else if now < first_seen + per_round * MAX_ROUNDS as SimTime {
                        ctx.after(RETALLY, Msg::Evaluate(id));
                    }
                }
            }
        }
    }

    fn finalize(&mut self, ctx: &mut Ctx<'_, Msg>, id: Digest, judged: &[Judged]) {
        let now = ctx.local_now();
        let it = self.items[&id].clone();
        match &it.subject {
            Subject::Transfer(r) => match self.ledger.append(r, now) {
                Ok(_) => ctx.log("append", json!({"tx": id.to_hex()})),
                Err(LedgerError::Inconsistent { evidence, .. }) => {
                    if evidence.kind == EvidenceKind::DoubleSpend {
                        if let Some(first) = evidence.conflicting_record.clone() {
                            self.convict(ctx, first, r.clone(), true);
                            self.reject(ctx, id);
                            return;
                        }
                    }
                    ctx.log(
                        "append_deferred",
                        json!({"tx": id.to_hex(), "why": format!("{:?}", evidence.kind)}),
                    );
                    ctx.after(RETALLY, Msg::Evaluate(id));
                    return;
                }
                Err(e) => panic!("ledger refused a record: {e}"),
            },
            Subject::Compensation(c) => {
                if self.ledger.mint(c.witness, c.slot_id(), c.amount) {
                    ctx.log(
                        "mint",
                        json!({"witness": c.witness.short(), "amount": c.amount, "day": c.day_index, "kind": format!("{:?}", c.kind)}),
                    );
                }
            }
        }
        let acceptances: Vec<WitnessReport> = it
            .reports
            .iter()
            .filter(|r| {
                r.kind == ReportKind::Acceptance
                    && it.selected.contains(&r.witness)
                    && judged.iter().any(|j| {
                        j.witness == r.witness
                            && j.kind == ReportKind::Acceptance
                            && j.verdict.is_valid()
                    })
            })
            .cloned()
            .collect();
        let bundle = Bundle {
            subject: it.subject.clone(),
            round: it.round,
            pool: it.pool.clone(),
            selected: it.selected.iter().copied().collect(),
            acceptances,
        };
        let day = self.day(ctx);
        for a in &bundle.acceptances {
            self.registry.record_service(a.witness, day);
        }
        if let Subject::Transfer(r) = &it.subject {
            if self.in_flight.get(&r.sender) == Some(&id) {
                self.in_flight.remove(&r.sender);
            }
            for k in &self.witness_keys {
                let wid = k.account_id();
                if it.selected.contains(&wid)
                    && self
                        .sent
                        .contains(&(id, wid, ReportKind::Acceptance, it.round))
                {
                    self.service
                        .note_witnessed(day, WitnessedRecord::new(r.clone(), k));
                }
            }
        }
        let e = self.items.get_mut(&id).expect("exists");
        e.outcome = Outcome::Accepted;
        e.decided_at = now;
        e.bundle = Some(bundle.clone());
        self.settled.push((now, id));
        if it.initiator == Some(self.id) {
            self.broadcast(ctx, Msg::Confirmed(Box::new(bundle)));
        }
        if !self.waiting.is_empty() {
            self.pay_waiting(ctx);
        }
    }

    fn reject(&mut self, ctx: &mut Ctx<'_, Msg>, id: Digest) {
        let now = ctx.local_now();
        let it = self.items.get_mut(&id).expect("exists");
        if it.outcome != Outcome::Pending {
            return;
        }
        it.outcome = Outcome::Rejected;
        it.decided_at = now;
        let subject = it.subject.clone();
        ctx.log("reject", json!({"tx": id.to_hex()}));
        match &subject {
            Subject::Transfer(r) => {
                if self.in_flight.get(&r.sender) == Some(&id) {
                    self.in_flight.remove(&r.sender);
                    self.pay_waiting(ctx);
                }
            }
            Subject::Compensation(c) => {
                if let Err(fault) =
                    validate_compensation(c, &self.ledger, &self.registry, &self.w.cfg.compensation)
                {
                    let offense = Offense::CompensationFraud {
                        claim: Box::new(c.clone()),
                        fault,
                    };
                    if let Ok(out) = apply_penalty(
                        &mut self.ledger,
                        &mut self.registry,
                        &mut self.sanctions,
                        &c.witness,
                        &offense,
                        &self.w.cfg.consensus,
                    ) {
                        if out.fresh {
                            ctx.log(
                                "blacklist",
                                json!({"witness": c.witness.short(), "reason": "compensation_fraud"}),
                            );
                        }
                    }
                }
            }
        }
    }

    fn on_confirmed(&mut self, ctx: &mut Ctx<'_, Msg>, b: Bundle) {
        let id = self.ensure_item(ctx, &b.subject);
        if self.items[&id].outcome != Outcome::Pending {
            // Too late to matter for the decision, but the acceptances may
            // still convict a witness.
            let it = self.items.get_mut(&id).expect("ensured");
            for a in b.acceptances {
                if !it.reports.contains(&a) {
                    it.reports.push(a);
                }
            }
            self.evaluate(ctx, id);
            return;
        }
        if let Subject::Transfer(r) = &b.subject {
            if let Some(mine) = self.ledger.record_at(&r.sender, r.sender_seq) {
                if mine.tx_id != r.tx_id {
                    let first = mine.clone();
                    self.convict(ctx, first, r.clone(), true);
                    self.reject(ctx, id);
                    return;
                }
            }
        }
        let it = self.items.get_mut(&id).expect("ensured");
        if it.initiator.is_none() || b.round >= it.round {
            it.round = b.round;
            it.pool = b.pool;
            it.selected = b.selected.into_iter().collect();
            it.selection_ok = None;
        }
        for a in b.acceptances {
            if !it.reports.contains(&a) {
                it.reports.push(a);
            }
        }
        let ready = it.first_seen + self.w.cfg.consensus.waiting_period;
        let now = ctx.local_now();
        if now >= ready {
            self.evaluate(ctx, id);
        } else {
            ctx.after(ready - now + 1, Msg::Evaluate(id));
        }
    }

    fn on_peer_up(&mut self, ctx: &mut Ctx<'_, Msg>, peer: NodeId) {
        let now = ctx.local_now();
        let bundles: Vec<Bundle> = self
            .settled
            .iter()
            .filter(|(t, _)| now.saturating_sub(*t) <= SYNC_HORIZON)
            .filter_map(|(_, id)| self.items.get(id).and_then(|it| it.bundle.clone()))
            .collect();
        if !bundles.is_empty() {
            ctx.send(peer, Msg::Sync(bundles));
        }
    }

    fn on_delay_cleared(&mut self, ctx: &mut Ctx<'_, Msg>) {
        for s in std::mem::take(&mut self.deferred) {
            self.initiate(ctx, s);
        }
        for id in std::mem::take(&mut self.withheld) {
            self.witness_duties(ctx, id);
        }
        let pending: Vec<Digest> = self
            .items
            .iter()
            .filter(|(_, it)| it.outcome == Outcome::Pending)
            .map(|(id, _)| *id)
            .collect();
        for id in pending {
            self.evaluate(ctx, id);
        }
    }

    // ---- compensation ----

    fn on_day_end(&mut self, ctx: &mut Ctx<'_, Msg>, day: u64) {
        let params = self.w.cfg.compensation;
        ctx.after(params.day_length.max(1), Msg::DayEnd(day + 1));
        self.registry.prune_idle(day + 1);
        for &b in &self.tethered_to.clone() {
            let ack = TetherAck::new(self.w.node_keys[b].account_id(), day + 1, &self.key);
            ctx.send(b, Msg::TetherAck(ack));
        }
        let mut claims = Vec::new();
        let claims_witness = matches!(
            self.mode,
            None | Some(CorruptMode::CompensationFraud | CorruptMode::WashTrader)
        );
        if claims_witness && self.witness_keys.first().is_some_and(|k| k == &self.key) {
            claims.push(CompensationKind::Witness);
        }
        if self.w.topo.bridges.contains(&self.id) && self.is_honest() {
            claims.push(CompensationKind::Bridge);
        }
        for kind in claims {
            if self.registry.is_blacklisted(&self.key.account_id()) {
                continue;
            }
            match self
                .service
                .issue_compensation(&self.key, kind, day, &params)
            {
                Ok(mut claim) => {
                    if self.mode == Some(CorruptMode::CompensationFraud)
                        && !claim.attached.is_empty()
                    {
                        claim.attached[0].witness_sig = Signature::forged(self.key.public_key());
                        claim = sign_compensation(claim, &self.key);
                        ctx.log("fraud_claim", json!({"day": day}));
                    }
                    self.record.claims += 1;
                    ctx.log("claim", json!({"day": day, "kind": format!("{kind:?}"), "served": claim.served_count()}));
                    self.initiate(ctx, Subject::Compensation(claim));
                }
                Err(IssueError::NotEligible { served, required }) => {
                    self.record.not_eligible += 1;
                    ctx.log(
                        "comp_not_eligible",
                        json!({"day": day, "kind": format!("{kind:?}"), "served": served, "required": required}),
                    );
                }
                Err(IssueError::AlreadyIssued(_)) => {}
            }
        }
    }

    // ---- attacks ----

    fn on_flood(&mut self, ctx: &mut Ctx<'_, Msg>, i: u64) {
        let Some(src) = self.accounts.first().cloned() else {
            return;
        };
        let sender = src.account_id();
        let seq = self.ledger.chain_len(&sender) + 1;
        let prev = self.ledger.last_outgoing(&sender);
        let body = |to: AccountId, amount: Amount, sender_seq: u64| TransferBody {
            sender,
            receiver: to,
            amount,
            sender_seq,
            prev_sender_hash: prev,
        };
        let balance = self.ledger.balance(&sender);
        let mut records = Vec::new();
        match i % 5 {
            // Two records for one chain slot.
            0 => {
                for amount in [10, 11] {
                    let to = self.fresh_account();
                    records.push(body(to.account_id(), amount, seq).sign(&src, &to));
                }
            }
            // A gap in the sender chain.
            1 => {
                let to = self.fresh_account();
                records.push(body(to.account_id(), 10, seq + 1).sign(&src, &to));
            }
            2 => {
                let to = self.fresh_account();
                records.push(body(to.account_id(), balance + 1, seq).sign(&src, &to));
            }
            3 => {
                let to = self.fresh_account();
                let mut r = body(to.account_id(), 10, seq).sign(&src, &to);
                r.sender_sig = Signature::forged(r.sender_sig.public_key);
                records.push(r);
            }
            // Pays into an account that was already credited.
            _ => {
                let to = self.w.attack_key.clone().unwrap_or_else(|| src.clone());
                if to == src {
                    return;
                }
                records.push(body(to.account_id(), 10, seq).sign(&src, &to));
            }
        }
        for r in records {
            self.record.flood_records.push(r.tx_id);
            let id = self.ensure_item(ctx, &Subject::Transfer(r));
            let it = self.items.get_mut(&id).expect("ensured");
            it.forced = true;
            it.initiator = Some(self.id);
            let pool = self.registry.available();
            let sel = self.select(&id, 0, &pool).unwrap_or_default();
            let it = self.items.get_mut(&id).expect("ensured");
            it.pool = pool.clone();
            it.selected = sel.clone();
            let msg = Msg::Proposal {
                subject: it.subject.clone(),
                initiator: self.id,
                round: 0,
                pool,
                selected: sel.into_iter().collect(),
            };
            self.broadcast(ctx, msg);
            self.witness_duties(ctx, id);
        }
    }

    /// A corrupt proposer confirms with whatever acceptances it holds.
    fn force_confirm(&mut self, ctx: &mut Ctx<'_, Msg>, id: Digest) {
        let it = self.items.get_mut(&id).expect("exists");
        if it.bundle.is_some() {
            return;
        }
        let b = Bundle {
            subject: it.subject.clone(),
            round: it.round,
            pool: it.pool.clone(),
            selected: it.selected.iter().copied().collect(),
            acceptances: it
                .reports
                .iter()
                .filter(|r| r.kind == ReportKind::Acceptance)
                .cloned()
                .collect(),
        };
        it.bundle = Some(b.clone());
        ctx.log(
            "forced_confirm",
            json!({"tx": id.to_hex(), "acceptances": b.acceptances.len()}),
        );
        self.broadcast(ctx, Msg::Confirmed(Box::new(b)));
    }
}

impl Process for Node {
    type Msg = Msg;

    fn on_start(&mut self, ctx: &mut Ctx<'_, Msg>) {
        self.boot = ctx.local_now();
        let len = self.w.cfg.compensation.day_length.max(1);
        ctx.after(len, Msg::DayEnd(0));
    }

    fn on_message(&mut self, ctx: &mut Ctx<'_, Msg>, from: NodeId, msg: Msg) {
        match msg {
            Msg::Order(o) => self.on_order(ctx, o),
            Msg::Offer {
                order,
                amount,
                stem,
            } => self.on_offer(ctx, from, order, amount, stem),
            Msg::Invoice { order, account } => self.on_invoice(ctx, order, account),
            Msg::Signed {
                order,
                body,
                sender_sig,
            } => self.on_signed(ctx, order, body, sender_sig),
            Msg::Stem {
                record,
                route,
                batch,
            } => self.on_stem(ctx, record, route, batch),
            Msg::StemForward {
                record,
                route,
                batch,
            } => self.stem_forward(ctx, record, route, batch),
            Msg::Proposal {
                subject,
                initiator,
                round,
                pool,
                selected,
            } => self.on_proposal(ctx, subject, initiator, round, pool, selected),
            Msg::Report(r) => self.on_report(ctx, *r),
            Msg::Confirmed(b) => self.on_confirmed(ctx, *b),
            Msg::Sync(bs) => {
                for b in bs {
                    self.on_confirmed(ctx, b);
                }
            }
            Msg::Accusation { report, proof } => self.on_accusation(ctx, *report, proof),
            Msg::TetherAck(a) => {
                if a.bridge == self.key.account_id() {
                    self.service.note_tether_ack(a);
                }
            }
            Msg::Evaluate(id) => self.evaluate(ctx, id),
            Msg::Recheck(id) => self.witness_duties(ctx, id),
            Msg::DayEnd(d) => self.on_day_end(ctx, d),
            Msg::RetryFunds => {
                self.retry_armed = false;
                self.pay_waiting(ctx);
            }
            Msg::Flood(i) => self.on_flood(ctx, i),
        }
    }

    fn on_peer_up(&mut self, ctx: &mut Ctx<'_, Msg>, peer: NodeId) {
        Node::on_peer_up(self, ctx, peer);
    }

    fn on_delay_change(&mut self, ctx: &mut Ctx<'_, Msg>, delayed: bool) {
        if !delayed {
            self.on_delay_cleared(ctx);
        }
    }

    fn on_tethered(&mut self, ctx: &mut Ctx<'_, Msg>, bridge: NodeId) {
        if self.tethered_to.insert(bridge) {
            let ack = TetherAck::new(
                self.w.node_keys[bridge].account_id(),
                self.day(ctx),
                &self.key,
            );
            ctx.send(bridge, Msg::TetherAck(ack));
        }
    }
}
