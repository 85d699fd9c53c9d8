//! Fees, the witness registry, and daily compensation minting.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{self, AccountId, Digest, KeyPair, Signature};
use crate::ledger::{Amount, Ledger, TransactionRecord};
use crate::SimTime;

pub const DEFAULT_FEE_RATE: f64 = 0.001;
pub const DEFAULT_FEE_CAP: Amount = 100;
pub const DEFAULT_IDLE_DAYS: u64 = 7;
pub const DEFAULT_MIN_TRANSACTORS: usize = 10;
pub const DAY_MS: SimTime = 86_400_000;

/// Capped proportional fee. The rate is held in parts per million so every
/// fee is computed in integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeePolicy {
    pub rate_ppm: u64,
    pub cap: Amount,
}

impl Default for FeePolicy {
    fn default() -> Self {
        FeePolicy::new(DEFAULT_FEE_RATE, DEFAULT_FEE_CAP)
    }
}

impl FeePolicy {
    pub fn new(rate: f64, cap: Amount) -> Self {
        FeePolicy {
            rate_ppm: (rate.clamp(0.0, 1.0) * 1e6).round() as u64,
            cap,
        }
    }

    pub fn zero() -> Self {
        FeePolicy {
            rate_ppm: 0,
            cap: 0,
        }
    }

    pub fn rate(&self) -> f64 {
        self.rate_ppm as f64 / 1e6
    }

    /// min(floor(rate · amount), cap).
    pub fn fee(&self, amount: Amount) -> Amount {
        let raw = (amount as u128 * self.rate_ppm as u128) / 1_000_000;
        raw.min(self.cap as u128) as Amount
    }
}

pub fn compute_fee(amount: Amount, policy: &FeePolicy) -> Amount {
    policy.fee(amount)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("{0} is blacklisted")]
    Blacklisted(AccountId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Registration {
    pub registered_at: SimTime,
    pub day: u64,
    pub stake: Amount,
}

/// One node's view of which witnesses are available.
#[derive(Debug, Clone, Default)]
pub struct WitnessRegistry {
    available: BTreeMap<AccountId, Registration>,
    last_witnessed: BTreeMap<AccountId, u64>,
    blacklist: BTreeSet<AccountId>,
    forfeited: BTreeMap<AccountId, Amount>,
    pub idle_days: u64,
}

impl WitnessRegistry {
    pub fn new(idle_days: u64) -> Self {
        WitnessRegistry {
            idle_days,
            ..Default::default()
        }
    }

    pub fn register_witness(
        &mut self,
        node: AccountId,
        stake: Amount,
        now: SimTime,
        day: u64,
    ) -> Result<(), RegistryError> {
        if self.blacklist.contains(&node) {
            return Err(RegistryError::Blacklisted(node));
        }
        self.available.entry(node).or_insert(Registration {
            registered_at: now,
            day,
            stake,
        });
        Ok(())
    }

    pub fn record_service(&mut self, node: AccountId, day: u64) {
        let e = self.last_witnessed.entry(node).or_insert(day);
        *e = (*e).max(day);
    }

    /// Drops witnesses that have not served for `idle_days` whole days.
    pub fn prune_idle(&mut self, day: u64) -> Vec<AccountId> {
        let idle: Vec<AccountId> = self
            .available
            .iter()
            .filter(|(id, reg)| {
                let last = self
                    .last_witnessed
                    .get(id)
                    .copied()
                    .unwrap_or(reg.day)
                    .max(reg.day);
                day.saturating_sub(last) >= self.idle_days
            })
            .map(|(id, _)| *id)
            .collect();
        for id in &idle {
            self.available.remove(id);
        }
        idle
    }

    /// Bans `node` for good and forfeits its stake. Returns the forfeited
    /// stake on the first call, `None` if it was already banned.
    pub fn blacklist(&mut self, node: AccountId) -> Option<Amount> {
        if !self.blacklist.insert(node) {
            return None;
        }
        let stake = self.available.remove(&node).map(|r| r.stake).unwrap_or(0);
        self.forfeited.insert(node, stake);
        Some(stake)
    }

    pub fn is_blacklisted(&self, node: &AccountId) -> bool {
        self.blacklist.contains(node)
    }

    pub fn is_available(&self, node: &AccountId) -> bool {
        self.available.contains_key(node)
    }

    pub fn registration(&self, node: &AccountId) -> Option<&Registration> {
        self.available.get(node)
    }

    /// Available witnesses in id order.
    pub fn available(&self) -> Vec<AccountId> {
        self.available.keys().copied().collect()
    }

    pub fn blacklisted(&self) -> &BTreeSet<AccountId> {
        &self.blacklist
    }

    pub fn forfeited_total(&self) -> Amount {
        self.forfeited.values().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompensationKind {
    Witness,
    Bridge,
}

impl CompensationKind {
    fn tag(self) -> u8 {
        match self {
            CompensationKind::Witness => 1,
            CompensationKind::Bridge => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompensationParams {
    pub witness_daily_amount: Amount,
    pub min_transactors: usize,
    pub bridge_daily_amount: Amount,
    pub bridge_min_tethered: usize,
    pub day_length: SimTime,
    pub idle_days: u64,
}

impl Default for CompensationParams {
    fn default() -> Self {
        CompensationParams {
            witness_daily_amount: 50,
            min_transactors: DEFAULT_MIN_TRANSACTORS,
            bridge_daily_amount: 20,
            bridge_min_tethered: 2,
            day_length: DAY_MS,
            idle_days: DEFAULT_IDLE_DAYS,
        }
    }
}

impl CompensationParams {
    pub fn standard_amount(&self, kind: CompensationKind) -> Amount {
        match kind {
            CompensationKind::Witness => self.witness_daily_amount,
            CompensationKind::Bridge => self.bridge_daily_amount,
        }
    }

    pub fn threshold(&self, kind: CompensationKind) -> usize {
        match kind {
            CompensationKind::Witness => self.min_transactors,
            CompensationKind::Bridge => self.bridge_min_tethered,
        }
    }

    pub fn day_of(&self, elapsed: SimTime) -> u64 {
        elapsed / self.day_length.max(1)
    }
}

fn witnessed_message(tx_id: &Digest) -> Vec<u8> {
    [b"parchain/witnessed/v1".as_slice(), tx_id.as_bytes()].concat()
}

/// A transfer the witness vouched for, countersigned by it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WitnessedRecord {
    pub record: TransactionRecord,
    pub witness_sig: Signature,
}

impl WitnessedRecord {
    pub fn new(record: TransactionRecord, witness: &KeyPair) -> Self {
        let witness_sig = crypto::sign(witness, &witnessed_message(&record.tx_id));
        WitnessedRecord {
            record,
            witness_sig,
        }
    }

    /// sigS, sigR and sigW all check out and sigW belongs to `witness`.
    pub fn verify(&self, witness: &AccountId) -> bool {
        self.record.is_well_formed()
            && self.witness_sig.signer() == *witness
            && self
                .witness_sig
                .verify(&witnessed_message(&self.record.tx_id))
    }
}

fn tether_message(bridge: &AccountId, day: u64) -> Vec<u8> {
    [
        b"parchain/tether/v1".as_slice(),
        bridge.as_bytes(),
        &day.to_be_bytes(),
    ]
    .concat()
}

/// A firewalled node's signed statement that `bridge` served it on `day`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TetherAck {
    pub bridge: AccountId,
    pub day: u64,
    pub sig: Signature,
}

impl TetherAck {
    pub fn new(bridge: AccountId, day: u64, tethered: &KeyPair) -> Self {
        TetherAck {
            bridge,
            day,
            sig: crypto::sign(tethered, &tether_message(&bridge, day)),
        }
    }

    pub fn tethered(&self) -> AccountId {
        self.sig.signer()
    }

    pub fn verify(&self) -> bool {
        self.sig.verify(&tether_message(&self.bridge, self.day))
    }
}

/// A self-payable daily minting claim with its supporting records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompensationRecord {
    pub kind: CompensationKind,
    pub witness: AccountId,
    pub day_index: u64,
    pub amount: Amount,
    pub attached: Vec<WitnessedRecord>,
    pub tether_acks: Vec<TetherAck>,
    pub witness_sig: Signature,
}

fn put_sig(out: &mut Vec<u8>, s: &Signature) {
    out.extend_from_slice(&s.public_key.0);
    out.extend_from_slice(&s.bytes);
}

impl CompensationRecord {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = b"PCCR".to_vec();
        out.push(1);
        out.push(self.kind.tag());
        out.extend_from_slice(self.witness.as_bytes());
        out.extend_from_slice(&self.day_index.to_be_bytes());
        out.extend_from_slice(&self.amount.to_be_bytes());
        out.extend_from_slice(&(self.attached.len() as u32).to_be_bytes());
        for w in &self.attached {
            let enc = w.record.encode();
            out.extend_from_slice(&(enc.len() as u32).to_be_bytes());
            out.extend_from_slice(&enc);
            put_sig(&mut out, &w.witness_sig);
        }
        out.extend_from_slice(&(self.tether_acks.len() as u32).to_be_bytes());
        for a in &self.tether_acks {
            out.extend_from_slice(a.bridge.as_bytes());
            out.extend_from_slice(&a.day.to_be_bytes());
            put_sig(&mut out, &a.sig);
        }
        out
    }

    pub fn id(&self) -> Digest {
        Digest::of(&self.canonical_bytes())
    }

    /// One mint per (kind, witness, day); the ledger keys mints by this.
    pub fn slot_id(&self) -> Digest {
        slot_id(self.kind, &self.witness, self.day_index)
    }

    pub fn distinct_transactors(&self) -> BTreeSet<AccountId> {
        self.attached
            .iter()
            .flat_map(|w| [w.record.sender, w.record.receiver])
            .collect()
    }

    pub fn distinct_tethered(&self) -> BTreeSet<AccountId> {
        self.tether_acks.iter().map(|a| a.tethered()).collect()
    }

    pub fn served_count(&self) -> usize {
        match self.kind {
            CompensationKind::Witness => self.distinct_transactors().len(),
            CompensationKind::Bridge => self.distinct_tethered().len(),
        }
    }

    fn sign_with(mut self, key: &KeyPair) -> Self {
        self.witness_sig = crypto::sign(key, &self.canonical_bytes());
        self
    }
}

pub fn slot_id(kind: CompensationKind, witness: &AccountId, day: u64) -> Digest {
    Digest::of_parts(&[
        b"parchain/comp-slot/v1",
        &[kind.tag()],
        witness.as_bytes(),
        &day.to_be_bytes(),
    ])
}

#[derive(Debug, Clone, Copy, Error, PartialEq, Eq)]
pub enum IssueError {
    #[error("served {served} of the required {required}")]
    NotEligible { served: usize, required: usize },
    #[error("already issued for day {0}")]
    AlreadyIssued(u64),
}

/// What one witness (or bridge) did per day, and what it has claimed.
#[derive(Debug, Clone, Default)]
pub struct ServiceLog {
    witnessed: BTreeMap<u64, BTreeMap<Digest, WitnessedRecord>>,
    acks: BTreeMap<u64, BTreeMap<AccountId, TetherAck>>,
    issued: BTreeSet<(CompensationKind, u64)>,
}

impl ServiceLog {
    pub fn note_witnessed(&mut self, day: u64, record: WitnessedRecord) {
        self.witnessed
            .entry(day)
            .or_default()
            .insert(record.record.tx_id, record);
    }

    pub fn note_tether_ack(&mut self, ack: TetherAck) {
        if ack.verify() {
            self.acks
                .entry(ack.day)
                .or_default()
                .insert(ack.tethered(), ack);
        }
    }

    pub fn witnessed_on(&self, day: u64) -> impl Iterator<Item = &WitnessedRecord> {
        self.witnessed
            .get(&day)
            .into_iter()
            .flat_map(|m| m.values())
    }

    pub fn distinct_transactors(&self, day: u64) -> usize {
        self.witnessed_on(day)
            .flat_map(|w| [w.record.sender, w.record.receiver])
            .collect::<BTreeSet<_>>()
            .len()
    }

    pub fn has_issued(&self, kind: CompensationKind, day: u64) -> bool {
        self.issued.contains(&(kind, day))
    }

    /// Claims the day's compensation if the service threshold was met.
    pub fn issue_compensation(
        &mut self,
        key: &KeyPair,
        kind: CompensationKind,
        day: u64,
        params: &CompensationParams,
    ) -> Result<CompensationRecord, IssueError> {
        if self.issued.contains(&(kind, day)) {
            return Err(IssueError::AlreadyIssued(day));
        }
        let (attached, tether_acks): (Vec<WitnessedRecord>, Vec<TetherAck>) = match kind {
            CompensationKind::Witness => (self.witnessed_on(day).cloned().collect(), Vec::new()),
            CompensationKind::Bridge => (
                Vec::new(),
                self.acks
                    .get(&day)
                    .map(|m| m.values().cloned().collect())
                    .unwrap_or_default(),
            ),
        };
        let record = CompensationRecord {
            kind,
            witness: key.account_id(),
            day_index: day,
            amount: params.standard_amount(kind),
            attached,
            tether_acks,
            witness_sig: Signature::forged(key.public_key()),
        }
        .sign_with(key);
        let served = record.served_count();
        let required = params.threshold(kind);
        if served < required {
            return Err(IssueError::NotEligible { served, required });
        }
        self.issued.insert((kind, day));
        Ok(record)
    }
}

/// Signs an arbitrary (possibly dishonest) claim. Used to model fraud.
pub fn sign_compensation(record: CompensationRecord, key: &KeyPair) -> CompensationRecord {
    record.sign_with(key)
}

#[derive(Debug, Clone, Copy, Error, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompensationFault {
    #[error("claim signature does not verify")]
    BadClaimSignature,
    #[error("claimant is blacklisted")]
    Blacklisted,
    #[error("amount differs from the standard daily amount")]
    WrongAmount,
    #[error("an attached record fails signature checks")]
    ForgedAttachment,
    #[error("an attached record is listed twice")]
    DuplicateAttachment,
    #[error("an attached record is unknown to the ledger")]
    UnknownAttachment,
    #[error("a tether acknowledgement is invalid")]
    ForgedTetherAck,
    #[error("service below threshold")]
    BelowThreshold,
    #[error("compensation for this day was already minted")]
    AlreadyMinted,
}

impl CompensationFault {
    /// Faults anyone can confirm from the claim alone.
    pub fn is_self_evident(self) -> bool {
        !matches!(
            self,
            CompensationFault::UnknownAttachment
                | CompensationFault::AlreadyMinted
                | CompensationFault::Blacklisted
        )
    }
}

/// Checks a claim as a validating node would. `Ok` means accept.
pub fn validate_compensation(
    record: &CompensationRecord,
    ledger: &Ledger,
    registry: &WitnessRegistry,
    params: &CompensationParams,
) -> Result<(), CompensationFault> {
    if record.witness_sig.signer() != record.witness
        || !record.witness_sig.verify(&record.canonical_bytes())
    {
        return Err(CompensationFault::BadClaimSignature);
    }
    if record.amount != params.standard_amount(record.kind) {
        return Err(CompensationFault::WrongAmount);
    }
    let mut ids = BTreeSet::new();
    for w in &record.attached {
        if !w.verify(&record.witness) {
            return Err(CompensationFault::ForgedAttachment);
        }
        if !ids.insert(w.record.tx_id) {
            return Err(CompensationFault::DuplicateAttachment);
        }
    }
    for a in &record.tether_acks {
        if a.bridge != record.witness || a.day != record.day_index || !a.verify() {
            return Err(CompensationFault::ForgedTetherAck);
        }
    }
    if record.served_count() < params.threshold(record.kind) {
        return Err(CompensationFault::BelowThreshold);
    }
    if registry.is_blacklisted(&record.witness) {
        return Err(CompensationFault::Blacklisted);
    }
    for w in &record.attached {
        if ledger.record(&w.record.tx_id) != Some(&w.record) {
            return Err(CompensationFault::UnknownAttachment);
        }
    }
    if ledger.has_mint(&record.slot_id()) {
        return Err(CompensationFault::AlreadyMinted);
    }
    Ok(())
}
