//! Parallel-chains ledger.
//!
//! Every account owns a separate chain. Ordering lives inside each transfer
//! record: `sender_seq` counts the sender's outgoing records from 1 and
//! `prev_sender_hash` links to the tx id of the sender's previous outgoing
//! record (all zeros for the first). Receivers need no ordering field because
//! an account can be credited by a transfer only once (account spawning).

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{self, AccountId, Digest, KeyPair, PublicKey, Signature, SIGNATURE_LEN};
use crate::incentives::FeePolicy;
use crate::SimTime;

pub type Amount = u64;

const RECORD_MAGIC: &[u8; 4] = b"PCTX";
const RECORD_VERSION: u8 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("record truncated")]
    Truncated,
    #[error("bad magic or version")]
    BadHeader,
    #[error("field {0} has wrong length")]
    FieldLength(&'static str),
    #[error("trailing bytes after record")]
    Trailing,
    #[error("bad hex: {0}")]
    Hex(String),
    #[error("bad dump line {line}: {reason}")]
    DumpLine { line: usize, reason: String },
}

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("append of invalid record {tx_id:?}: {evidence}")]
    Inconsistent {
        tx_id: Digest,
        evidence: Box<InvalidityEvidence>,
    },
    #[error("account {0:?} already holds a credit")]
    AlreadySpawned(AccountId),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// The signed portion of a transfer.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TransferBody {
    pub sender: AccountId,
    pub receiver: AccountId,
    pub amount: Amount,
    pub sender_seq: u64,
    pub prev_sender_hash: Digest,
}

fn put_field(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(bytes);
}

impl TransferBody {
    /// Fixed field order, each field length-prefixed (u32 big-endian):
    /// magic "PCTX", version byte, sender, receiver, amount (u64 BE),
    /// sender_seq (u64 BE), prev_sender_hash.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + 5 * 4 + 32 * 3 + 16);
        out.extend_from_slice(RECORD_MAGIC);
        out.push(RECORD_VERSION);
        put_field(&mut out, self.sender.as_bytes());
        put_field(&mut out, self.receiver.as_bytes());
        put_field(&mut out, &self.amount.to_be_bytes());
        put_field(&mut out, &self.sender_seq.to_be_bytes());
        put_field(&mut out, self.prev_sender_hash.as_bytes());
        out
    }

    pub fn tx_id(&self) -> Digest {
        Digest::of(&self.canonical_bytes())
    }

    pub fn sign(self, sender: &KeyPair, receiver: &KeyPair) -> TransactionRecord {
        let bytes = self.canonical_bytes();
        let sender_sig = crypto::sign(sender, &bytes);
        let receiver_sig = crypto::sign(receiver, &bytes);
        TransactionRecord::from_parts(self, sender_sig, receiver_sig)
    }
}

/// A dual-signed transfer.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct TransactionRecord {
    pub tx_id: Digest,
    pub sender: AccountId,
    pub receiver: AccountId,
    pub amount: Amount,
    pub sender_seq: u64,
    pub prev_sender_hash: Digest,
    pub sender_sig: Signature,
    pub receiver_sig: Signature,
}

impl fmt::Debug for TransactionRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "tx {} {:?}#{} -> {:?} amt {}",
            self.tx_id.short(),
            self.sender,
            self.sender_seq,
            self.receiver,
            self.amount
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegrityFault {
    TxIdMismatch,
    SenderSignature,
    ReceiverSignature,
    SelfTransfer,
    ZeroAmount,
    ZeroSequence,
}

impl TransactionRecord {
    pub fn from_parts(body: TransferBody, sender_sig: Signature, receiver_sig: Signature) -> Self {
        TransactionRecord {
            tx_id: body.tx_id(),
            sender: body.sender,
            receiver: body.receiver,
            amount: body.amount,
            sender_seq: body.sender_seq,
            prev_sender_hash: body.prev_sender_hash,
            sender_sig,
            receiver_sig,
        }
    }

    pub fn body(&self) -> TransferBody {
        TransferBody {
            sender: self.sender,
            receiver: self.receiver,
            amount: self.amount,
            sender_seq: self.sender_seq,
            prev_sender_hash: self.prev_sender_hash,
        }
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        self.body().canonical_bytes()
    }

    /// Structural and cryptographic checks that need no ledger.
    pub fn check_integrity(&self) -> Result<(), IntegrityFault> {
        if self.amount == 0 {
            return Err(IntegrityFault::ZeroAmount);
        }
        if self.sender == self.receiver {
            return Err(IntegrityFault::SelfTransfer);
        }
        if self.sender_seq == 0 {
            return Err(IntegrityFault::ZeroSequence);
        }
        let bytes = self.canonical_bytes();
        if Digest::of(&bytes) != self.tx_id {
            return Err(IntegrityFault::TxIdMismatch);
        }
        if self.sender_sig.signer() != self.sender || !self.sender_sig.verify(&bytes) {
            return Err(IntegrityFault::SenderSignature);
        }
        if self.receiver_sig.signer() != self.receiver || !self.receiver_sig.verify(&bytes) {
            return Err(IntegrityFault::ReceiverSignature);
        }
        Ok(())
    }

    pub fn is_well_formed(&self) -> bool {
        self.check_integrity().is_ok()
    }

    /// Canonical bytes followed by both signatures, each encoded as a
    /// length-prefixed (public key || signature) field.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.canonical_bytes();
        for sig in [&self.sender_sig, &self.receiver_sig] {
            let mut f = Vec::with_capacity(96);
            f.extend_from_slice(&sig.public_key.0);
            f.extend_from_slice(&sig.bytes);
            put_field(&mut out, &f);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != RECORD_MAGIC || r.take(1)? != [RECORD_VERSION] {
            return Err(CodecError::BadHeader);
        }
        let sender = AccountId(Digest(r.field_array("sender")?));
        let receiver = AccountId(Digest(r.field_array("receiver")?));
        let amount = u64::from_be_bytes(r.field_array("amount")?);
        let sender_seq = u64::from_be_bytes(r.field_array("sender_seq")?);
        let prev_sender_hash = Digest(r.field_array("prev_sender_hash")?);
        let mut sigs = Vec::with_capacity(2);
        for name in ["sender_sig", "receiver_sig"] {
            let f: [u8; 96] = r.field_array(name)?;
            let mut bytes = [0u8; SIGNATURE_LEN];
            bytes.copy_from_slice(&f[32..]);
            sigs.push(Signature {
                public_key: PublicKey::from_slice(&f[..32])
                    .map_err(|_| CodecError::FieldLength(name))?,
                bytes,
            });
        }
        if r.pos != bytes.len() {
            return Err(CodecError::Trailing);
        }
        let body = TransferBody {
            sender,
            receiver,
            amount,
            sender_seq,
            prev_sender_hash,
        };
        Ok(TransactionRecord::from_parts(body, sigs[0], sigs[1]))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.encode())
    }

    pub fn from_hex(s: &str) -> Result<Self, CodecError> {
        let bytes = hex::decode(s.trim()).map_err(|e| CodecError::Hex(e.to_string()))?;
        Self::decode(&bytes)
    }
}

impl Serialize for TransactionRecord {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for TransactionRecord {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Self::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let end = self.pos.checked_add(n).ok_or(CodecError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(CodecError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn field_array<const N: usize>(&mut self, name: &'static str) -> Result<[u8; N], CodecError> {
        let len = u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize;
        if len != N {
            return Err(CodecError::FieldLength(name));
        }
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceKind {
    DoubleSpend,
    Overdraw,
    BadSignature,
    StaleSequence,
    ReceiverReuse,
    /// Spend of a credit still inside the recipient spend delay.
    ImmatureFunds,
    /// The sender was already caught double-spending; the excerpt holds the
    /// two records that prove it.
    FraudulentSender,
}

impl EvidenceKind {
    /// Evidence that convicts the sender on its own: two records both signed
    /// by the sender for the same chain position.
    pub fn proves_sender_fraud(self) -> bool {
        matches!(
            self,
            EvidenceKind::DoubleSpend | EvidenceKind::FraudulentSender
        )
    }
}

/// Why a proposed record is invalid, with the records needed to check it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvalidityEvidence {
    pub kind: EvidenceKind,
    pub conflicting_record: Option<TransactionRecord>,
    pub ledger_excerpt: Option<Vec<TransactionRecord>>,
}

impl fmt::Display for InvalidityEvidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.kind)?;
        if let Some(c) = &self.conflicting_record {
            write!(f, " conflicting {}", c.tx_id.short())?;
        }
        if let Some(x) = &self.ledger_excerpt {
            write!(f, " excerpt of {}", x.len())?;
        }
        Ok(())
    }
}

impl InvalidityEvidence {
    pub fn bare(kind: EvidenceKind) -> Self {
        InvalidityEvidence {
            kind,
            conflicting_record: None,
            ledger_excerpt: None,
        }
    }

    pub fn with_conflict(kind: EvidenceKind, record: TransactionRecord) -> Self {
        InvalidityEvidence {
            kind,
            conflicting_record: Some(record),
            ledger_excerpt: None,
        }
    }

    /// Checks that need nothing but the evidence and the proposal.
    /// `Some(true)` proves invalidity, `Some(false)` shows the evidence is
    /// fabricated, `None` means a ledger view is required.
    pub fn check_standalone(&self, proposed: &TransactionRecord) -> Option<bool> {
        match self.kind {
            EvidenceKind::BadSignature => Some(!proposed.is_well_formed()),
            EvidenceKind::DoubleSpend => {
                let c = self.conflicting_record.as_ref()?;
                Some(
                    c.is_well_formed()
                        && proposed.is_well_formed()
                        && c.sender == proposed.sender
                        && c.sender_seq == proposed.sender_seq
                        && c.tx_id != proposed.tx_id,
                )
            }
            EvidenceKind::ReceiverReuse => {
                let c = self.conflicting_record.as_ref()?;
                Some(
                    c.is_well_formed()
                        && c.receiver == proposed.receiver
                        && c.tx_id != proposed.tx_id,
                )
            }
            EvidenceKind::StaleSequence => {
                if proposed.sender_seq == 1 {
                    return Some(proposed.prev_sender_hash != Digest::ZERO);
                }
                let c = self.conflicting_record.as_ref()?;
                Some(
                    c.is_well_formed()
                        && c.sender == proposed.sender
                        && c.sender_seq + 1 == proposed.sender_seq
                        && c.tx_id != proposed.prev_sender_hash,
                )
            }
            EvidenceKind::FraudulentSender => {
                let pair = self.ledger_excerpt.as_deref()?;
                Some(proves_double_spend(pair) == Some(proposed.sender))
            }
            EvidenceKind::Overdraw | EvidenceKind::ImmatureFunds => None,
        }
    }

    /// Full check against a local ledger view. Self-verifying evidence is
    /// decided without the ledger; the rest consults it.
    pub fn confirm(&self, proposed: &TransactionRecord, local: &Ledger) -> bool {
        if let Some(v) = self.check_standalone(proposed) {
            return v;
        }
        match self.kind {
            EvidenceKind::ReceiverReuse => match local.credit_source(&proposed.receiver) {
                Some(CreditSource::Transfer(id)) => id != proposed.tx_id,
                Some(_) => true,
                None => false,
            },
            EvidenceKind::StaleSequence => {
                let len = local.chain_len(&proposed.sender);
                if proposed.sender_seq > len + 1 {
                    return true;
                }
                proposed.sender_seq == len + 1
                    && local.last_outgoing(&proposed.sender) != proposed.prev_sender_hash
            }
            EvidenceKind::Overdraw => {
                let need = local.required_debit(proposed);
                if local.knows(&proposed.sender) {
                    return local.balance(&proposed.sender) < need;
                }
                match excerpt_balance(
                    &proposed.sender,
                    proposed.sender_seq,
                    self.ledger_excerpt.as_deref().unwrap_or(&[]),
                    &local.fee_policy,
                    local.fee_side,
                ) {
                    Some(b) => b < need,
                    None => false,
                }
            }
            // Timing claims are judged by the consensus layer.
            EvidenceKind::ImmatureFunds => false,
            EvidenceKind::BadSignature
            | EvidenceKind::DoubleSpend
            | EvidenceKind::FraudulentSender => unreachable!(),
        }
    }
}

/// The double-spending account if `pair` is two distinct, fully signed
/// records for the same chain position.
pub fn proves_double_spend(pair: &[TransactionRecord]) -> Option<AccountId> {
    let [a, b] = pair else {
        return None;
    };
    (a.is_well_formed()
        && b.is_well_formed()
        && a.sender == b.sender
        && a.sender_seq == b.sender_seq
        && a.tx_id != b.tx_id)
        .then_some(a.sender)
}

/// Balance implied by an excerpt holding the sender's credit and every
/// outgoing record before `seq`. `None` if the excerpt is forged or has gaps.
fn excerpt_balance(
    sender: &AccountId,
    seq: u64,
    excerpt: &[TransactionRecord],
    policy: &FeePolicy,
    side: FeeSide,
) -> Option<Amount> {
    let mut credit: i128 = 0;
    let mut debit: i128 = 0;
    let mut seqs = Vec::new();
    for r in excerpt {
        if !r.is_well_formed() {
            return None;
        }
        let fee = policy.fee(r.amount);
        if r.receiver == *sender {
            credit += match side {
                FeeSide::Sender => r.amount,
                FeeSide::Receiver => r.amount - fee,
            } as i128;
        } else if r.sender == *sender {
            seqs.push(r.sender_seq);
            debit += match side {
                FeeSide::Sender => r.amount + fee,
                FeeSide::Receiver => r.amount,
            } as i128;
        }
    }
    seqs.sort_unstable();
    if seqs != (1..seq).collect::<Vec<_>>() {
        return None;
    }
    Some((credit - debit).max(0) as Amount)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Validation {
    Valid,
    Invalid(InvalidityEvidence),
}

impl Validation {
    pub fn is_valid(&self) -> bool {
        matches!(self, Validation::Valid)
    }

    pub fn evidence(&self) -> Option<&InvalidityEvidence> {
        match self {
            Validation::Valid => None,
            Validation::Invalid(e) => Some(e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeeSide {
    #[default]
    Sender,
    Receiver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CreditSource {
    Genesis,
    Transfer(Digest),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChainEntry {
    Genesis { amount: Amount },
    Outgoing { tx_id: Digest, debit: Amount },
    Incoming { tx_id: Digest, credit: Amount },
    Mint { comp_id: Digest, amount: Amount },
    Slash { amount: Amount },
}

#[derive(Debug, Clone)]
pub struct AccountChain {
    pub account: AccountId,
    pub entries: Vec<ChainEntry>,
    pub cached_balance: Amount,
    /// Outgoing tx ids; index `i` holds sender_seq `i + 1`.
    pub outgoing: Vec<Digest>,
}

impl AccountChain {
    fn new(account: AccountId) -> Self {
        AccountChain {
            account,
            entries: Vec::new(),
            cached_balance: 0,
            outgoing: Vec::new(),
        }
    }

    /// Balance recomputed from the entries.
    pub fn replay_balance(&self) -> Amount {
        let mut b: i128 = 0;
        for e in &self.entries {
            match e {
                ChainEntry::Genesis { amount } | ChainEntry::Mint { amount, .. } => {
                    b += *amount as i128
                }
                ChainEntry::Incoming { credit, .. } => b += *credit as i128,
                ChainEntry::Outgoing { debit, .. } => b -= *debit as i128,
                ChainEntry::Slash { amount } => b -= *amount as i128,
            }
        }
        b as Amount
    }
}

/// One mutation, in application order. Dumps replay these.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LedgerOp {
    Genesis {
        account: AccountId,
        amount: Amount,
    },
    Transfer(Digest),
    Mint {
        account: AccountId,
        comp_id: Digest,
        amount: Amount,
    },
    Slash {
        account: AccountId,
        amount: Amount,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppendOutcome {
    Appended,
    Duplicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SupplyAudit {
    pub balances: Amount,
    pub fee_sink: Amount,
    pub minted: Amount,
    pub genesis: Amount,
}

impl SupplyAudit {
    /// Σ balances + sink − minted = genesis, exactly.
    pub fn conserved(&self) -> bool {
        self.balances as i128 + self.fee_sink as i128 - self.minted as i128 == self.genesis as i128
    }
}

/// A node's view of all account chains.
#[derive(Debug, Clone)]
pub struct Ledger {
    chains: BTreeMap<AccountId, AccountChain>,
    spawned: BTreeMap<AccountId, CreditSource>,
    records: HashMap<Digest, TransactionRecord>,
    by_position: HashMap<(AccountId, u64), Digest>,
    accepted_at: HashMap<Digest, SimTime>,
    minted_ids: HashMap<Digest, AccountId>,
    history: Vec<LedgerOp>,
    pub fee_policy: FeePolicy,
    pub fee_side: FeeSide,
    genesis_total: Amount,
    fees_collected: Amount,
    slashed_total: Amount,
    minted_total: Amount,
}

impl Default for Ledger {
    fn default() -> Self {
        Ledger::new(FeePolicy::default(), FeeSide::Sender)
    }
}

impl Ledger {
    pub fn new(fee_policy: FeePolicy, fee_side: FeeSide) -> Self {
        Ledger {
            chains: BTreeMap::new(),
            spawned: BTreeMap::new(),
            records: HashMap::new(),
            by_position: HashMap::new(),
            accepted_at: HashMap::new(),
            minted_ids: HashMap::new(),
            history: Vec::new(),
            fee_policy,
            fee_side,
            genesis_total: 0,
            fees_collected: 0,
            slashed_total: 0,
            minted_total: 0,
        }
    }

    fn chain_mut(&mut self, account: AccountId) -> &mut AccountChain {
        self.chains
            .entry(account)
            .or_insert_with(|| AccountChain::new(account))
    }

    /// Endows a fresh account outside the dual-signature rule.
    pub fn genesis(&mut self, account: AccountId, amount: Amount) -> Result<(), LedgerError> {
        if self.spawned.contains_key(&account) {
            return Err(LedgerError::AlreadySpawned(account));
        }
        self.spawned.insert(account, CreditSource::Genesis);
        let c = self.chain_mut(account);
        c.entries.push(ChainEntry::Genesis { amount });
        c.cached_balance += amount;
        self.genesis_total += amount;
        self.history.push(LedgerOp::Genesis { account, amount });
        Ok(())
    }

    pub fn chain(&self, account: &AccountId) -> Option<&AccountChain> {
        self.chains.get(account)
    }

    pub fn chains(&self) -> impl Iterator<Item = &AccountChain> {
        self.chains.values()
    }

    pub fn knows(&self, account: &AccountId) -> bool {
        self.chains.contains_key(account)
    }

    pub fn balance(&self, account: &AccountId) -> Amount {
        self.chains.get(account).map_or(0, |c| c.cached_balance)
    }

    pub fn chain_len(&self, account: &AccountId) -> u64 {
        self.chains
            .get(account)
            .map_or(0, |c| c.outgoing.len() as u64)
    }

    pub fn last_outgoing(&self, account: &AccountId) -> Digest {
        self.chains
            .get(account)
            .and_then(|c| c.outgoing.last().copied())
            .unwrap_or(Digest::ZERO)
    }

    pub fn is_spawned(&self, account: &AccountId) -> bool {
        self.spawned.contains_key(account)
    }

    pub fn credit_source(&self, account: &AccountId) -> Option<CreditSource> {
        self.spawned.get(account).copied()
    }

    pub fn record(&self, tx_id: &Digest) -> Option<&TransactionRecord> {
        self.records.get(tx_id)
    }

    pub fn contains(&self, tx_id: &Digest) -> bool {
        self.records.contains_key(tx_id)
    }

    pub fn record_at(&self, sender: &AccountId, seq: u64) -> Option<&TransactionRecord> {
        self.by_position
            .get(&(*sender, seq))
            .and_then(|id| self.records.get(id))
    }

    pub fn accepted_at(&self, tx_id: &Digest) -> Option<SimTime> {
        self.accepted_at.get(tx_id).copied()
    }

    /// The transfer that spawned `account`, if it was funded by one.
    pub fn spawning_credit(&self, account: &AccountId) -> Option<&TransactionRecord> {
        match self.spawned.get(account) {
            Some(CreditSource::Transfer(id)) => self.records.get(id),
            _ => None,
        }
    }

    pub fn history(&self) -> &[LedgerOp] {
        &self.history
    }

    pub fn transfer_count(&self) -> usize {
        self.records.len()
    }

    /// Accepted transfers in acceptance order.
    pub fn transfers_in_order(&self) -> impl Iterator<Item = &TransactionRecord> {
        self.history.iter().filter_map(|op| match op {
            LedgerOp::Transfer(id) => self.records.get(id),
            _ => None,
        })
    }

    pub fn fee_for(&self, amount: Amount) -> Amount {
        self.fee_policy.fee(amount)
    }

    /// Total the sender's balance must cover.
    pub fn required_debit(&self, r: &TransactionRecord) -> Amount {
        match self.fee_side {
            FeeSide::Sender => r.amount + self.fee_for(r.amount),
            FeeSide::Receiver => r.amount,
        }
    }

    /// The sender's spawning credit followed by its outgoing records.
    pub fn sender_excerpt(&self, sender: &AccountId) -> Vec<TransactionRecord> {
        let mut out = Vec::new();
        if let Some(r) = self.spawning_credit(sender) {
            out.push(r.clone());
        }
        if let Some(c) = self.chains.get(sender) {
            out.extend(
                c.outgoing
                    .iter()
                    .filter_map(|id| self.records.get(id))
                    .cloned(),
            );
        }
        out
    }

    pub fn audit(&self) -> SupplyAudit {
        SupplyAudit {
            balances: self.chains.values().map(|c| c.cached_balance).sum(),
            fee_sink: self.fees_collected + self.slashed_total,
            minted: self.minted_total,
            genesis: self.genesis_total,
        }
    }

    pub fn fees_collected(&self) -> Amount {
        self.fees_collected
    }

    pub fn slashed_total(&self) -> Amount {
        self.slashed_total
    }

    pub fn minted_total(&self) -> Amount {
        self.minted_total
    }

    /// Reduces `account` by `fraction_ppm / 10⁶` of its balance (rounded
    /// down) into the sink. Returns the amount removed.
    pub fn slash(&mut self, account: &AccountId, fraction_ppm: u32) -> Amount {
        let Some(c) = self.chains.get_mut(account) else {
            return 0;
        };
        let amount = ((c.cached_balance as u128 * fraction_ppm.min(1_000_000) as u128) / 1_000_000)
            as Amount;
        if amount == 0 {
            return 0;
        }
        c.cached_balance -= amount;
        c.entries.push(ChainEntry::Slash { amount });
        self.slashed_total += amount;
        self.history.push(LedgerOp::Slash {
            account: *account,
            amount,
        });
        amount
    }

    /// Credits a minted amount with no matching debit. Idempotent per id.
    pub fn mint(&mut self, account: AccountId, comp_id: Digest, amount: Amount) -> bool {
        if self.minted_ids.contains_key(&comp_id) {
            return false;
        }
        self.minted_ids.insert(comp_id, account);
        let c = self.chain_mut(account);
        c.entries.push(ChainEntry::Mint { comp_id, amount });
        c.cached_balance += amount;
        self.minted_total += amount;
        self.history.push(LedgerOp::Mint {
            account,
            comp_id,
            amount,
        });
        true
    }

    pub fn has_mint(&self, comp_id: &Digest) -> bool {
        self.minted_ids.contains_key(comp_id)
    }

    pub fn append(
        &mut self,
        record: &TransactionRecord,
        now: SimTime,
    ) -> Result<AppendOutcome, LedgerError> {
        append_transaction(self, record, now)
    }

    /// Writes the history as text lines: `genesis <acct> <amt>`,
    /// `tx <record-hex>`, `mint <acct> <id> <amt>`, `slash <acct> <amt>`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for op in &self.history {
            let line = match op {
                LedgerOp::Genesis { account, amount } => format!("genesis {account} {amount}"),
                LedgerOp::Transfer(id) => format!("tx {}", self.records[id].to_hex()),
                LedgerOp::Mint {
                    account,
                    comp_id,
                    amount,
                } => format!("mint {account} {comp_id} {amount}"),
                LedgerOp::Slash { account, amount } => format!("slash {account} {amount}"),
            };
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    /// Rebuilds a ledger by replaying a dump. Transfers are re-validated.
    pub fn load(text: &str, fee_policy: FeePolicy, fee_side: FeeSide) -> Result<Self, LedgerError> {
        let mut l = Ledger::new(fee_policy, fee_side);
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: &str| CodecError::DumpLine {
                line: i + 1,
                reason: reason.to_string(),
            };
            let parts: Vec<&str> = line.split_whitespace().collect();
            let acct = |s: &str| s.parse::<AccountId>().map_err(|e| bad(&e.to_string()));
            let amt = |s: &str| s.parse::<Amount>().map_err(|e| bad(&e.to_string()));
            match parts.as_slice() {
                ["genesis", a, n] => l.genesis(acct(a)?, amt(n)?)?,
                ["tx", h] => {
                    let r = TransactionRecord::from_hex(h)?;
                    l.append(&r, 0)?;
                }
                ["mint", a, id, n] => {
                    let id: Digest = id.parse().map_err(|_| bad("comp id"))?;
                    l.mint(acct(a)?, id, amt(n)?);
                }
                ["slash", a, n] => {
                    let account = acct(a)?;
                    let amount = amt(n)?;
                    let c = l.chain_mut(account);
                    if c.cached_balance < amount {
                        return Err(bad("slash exceeds balance").into());
                    }
                    c.cached_balance -= amount;
                    c.entries.push(ChainEntry::Slash { amount });
                    l.slashed_total += amount;
                    l.history.push(LedgerOp::Slash { account, amount });
                }
                _ => return Err(bad("unknown line").into()),
            }
        }
        Ok(l)
    }
}

pub fn canonical_bytes(body: &TransferBody) -> Vec<u8> {
    body.canonical_bytes()
}

pub fn balance(ledger: &Ledger, account: &AccountId) -> Amount {
    ledger.balance(account)
}

/// Checks a proposal against a ledger view. Invalid proposals come back with
/// the smallest evidence a third party can check.
pub fn validate_record(record: &TransactionRecord, ledger: &Ledger) -> Validation {
    if ledger.contains(&record.tx_id) && ledger.record(&record.tx_id) == Some(record) {
        return Validation::Valid;
    }
    if record.check_integrity().is_err() {
        return Validation::Invalid(InvalidityEvidence::bare(EvidenceKind::BadSignature));
    }
    if let Some(e) = extract_double_spend_evidence(ledger, record) {
        return Validation::Invalid(e);
    }
    if ledger.is_spawned(&record.receiver) {
        let mut e = InvalidityEvidence::bare(EvidenceKind::ReceiverReuse);
        e.conflicting_record = ledger.spawning_credit(&record.receiver).cloned();
        return Validation::Invalid(e);
    }
    let len = ledger.chain_len(&record.sender);
    if record.sender_seq != len + 1 {
        let mut e = InvalidityEvidence::bare(EvidenceKind::StaleSequence);
        e.ledger_excerpt = Some(ledger.sender_excerpt(&record.sender));
        return Validation::Invalid(e);
    }
    if record.prev_sender_hash != ledger.last_outgoing(&record.sender) {
        let mut e = InvalidityEvidence::bare(EvidenceKind::StaleSequence);
        e.conflicting_record = ledger.record_at(&record.sender, len).cloned();
        return Validation::Invalid(e);
    }
    if ledger.balance(&record.sender) < ledger.required_debit(record) {
        let mut e = InvalidityEvidence::bare(EvidenceKind::Overdraw);
        e.ledger_excerpt = Some(ledger.sender_excerpt(&record.sender));
        return Validation::Invalid(e);
    }
    Validation::Valid
}

/// The stored record occupying the proposal's (sender, sender_seq) slot, if
/// it differs from the proposal.
pub fn extract_double_spend_evidence(
    ledger: &Ledger,
    proposed: &TransactionRecord,
) -> Option<InvalidityEvidence> {
    let prior = ledger.record_at(&proposed.sender, proposed.sender_seq)?;
    (prior.tx_id != proposed.tx_id)
        .then(|| InvalidityEvidence::with_conflict(EvidenceKind::DoubleSpend, prior.clone()))
}

/// Enters an accepted record into the sender and receiver chains.
/// Appending the same tx id twice is a no-op.
pub fn append_transaction(
    ledger: &mut Ledger,
    record: &TransactionRecord,
    now: SimTime,
) -> Result<AppendOutcome, LedgerError> {
    if ledger.contains(&record.tx_id) {
        return Ok(AppendOutcome::Duplicate);
    }
    if let Validation::Invalid(evidence) = validate_record(record, ledger) {
        return Err(LedgerError::Inconsistent {
            tx_id: record.tx_id,
            evidence: Box::new(evidence),
        });
    }
    let fee = ledger.fee_for(record.amount);
    let (debit, credit) = match ledger.fee_side {
        FeeSide::Sender => (record.amount + fee, record.amount),
        FeeSide::Receiver => (record.amount, record.amount - fee),
    };
    {
        let s = ledger.chain_mut(record.sender);
        s.entries.push(ChainEntry::Outgoing {
            tx_id: record.tx_id,
            debit,
        });
        s.cached_balance -= debit;
        s.outgoing.push(record.tx_id);
    }
    {
        let r = ledger.chain_mut(record.receiver);
        r.entries.push(ChainEntry::Incoming {
            tx_id: record.tx_id,
            credit,
        });
        r.cached_balance += credit;
    }
    ledger
        .spawned
        .insert(record.receiver, CreditSource::Transfer(record.tx_id));
    ledger
        .by_position
        .insert((record.sender, record.sender_seq), record.tx_id);
    ledger.records.insert(record.tx_id, record.clone());
    ledger.accepted_at.insert(record.tx_id, now);
    ledger.fees_collected += fee;
    ledger.history.push(LedgerOp::Transfer(record.tx_id));
    Ok(AppendOutcome::Appended)
}
