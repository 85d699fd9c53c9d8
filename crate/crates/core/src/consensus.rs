//! Veto-based consensus: witness selection, signed reports, report
//! verification, tallying, and penalties.
//!
//! A subject is accepted once enough selected witnesses vouch for it, the
//! local waiting period has passed, and nobody has produced a rejection
//! whose evidence checks out. A single valid rejection vetoes.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{self, AccountId, Digest, KeyPair, Signature};
use crate::fluid::{self, DEFAULT_MAX_SUPERSTEPS};
use crate::graphnet::{self, SelectionVector};
use crate::incentives::{
    validate_compensation, CompensationFault, CompensationParams, CompensationRecord,
    WitnessRegistry,
};
use crate::ledger::{
    proves_double_spend, validate_record, Amount, CreditSource, EvidenceKind, InvalidityEvidence,
    Ledger, TransactionRecord, Validation,
};
use crate::rng::stream_for;
use crate::SimTime;

/// Selection attempts before a subject is declared unservable.
const SELECTION_ATTEMPTS: u64 = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConsensusError {
    #[error("need at least 2 available witnesses, have {0}")]
    Unavailable(usize),
    #[error("penalty requested without proof")]
    Unproven,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ConsensusParams {
    /// Cap on how many available witnesses enter selection.
    pub witness_pool_size: Option<usize>,
    /// Defaults to ceil(2/3 of the selected set).
    pub min_acceptances: Option<usize>,
    pub waiting_period: SimTime,
    pub recipient_spend_delay: SimTime,
    pub slash_fraction: f64,
    /// Defaults to ceil(sqrt(available)).
    pub community_k: Option<usize>,
    pub witness_stake: Amount,
}

impl Default for ConsensusParams {
    fn default() -> Self {
        ConsensusParams {
            witness_pool_size: None,
            min_acceptances: None,
            waiting_period: 2_000,
            recipient_spend_delay: 5_000,
            slash_fraction: 1.0,
            community_k: None,
            witness_stake: 100,
        }
    }
}

impl ConsensusParams {
    pub fn min_acceptances_for(&self, selected: usize) -> usize {
        self.min_acceptances
            .unwrap_or_else(|| (2 * selected).div_ceil(3))
            .max(1)
    }

    pub fn slash_ppm(&self) -> u32 {
        (self.slash_fraction.clamp(0.0, 1.0) * 1e6).round() as u32
    }

    pub fn check(&self) -> Result<(), String> {
        if let (Some(q), Some(pool)) = (self.min_acceptances, self.witness_pool_size) {
            if q > pool {
                return Err(format!(
                    "min_acceptances {q} exceeds witness_pool_size {pool}"
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.slash_fraction) {
            return Err("slash_fraction must lie in [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NodeStatus {
    pub node: AccountId,
    pub witness_eligible: bool,
    pub blacklisted: bool,
    pub available_witness: bool,
}

impl NodeStatus {
    pub fn of(node: AccountId, registry: &WitnessRegistry) -> Self {
        let blacklisted = registry.is_blacklisted(&node);
        NodeStatus {
            node,
            witness_eligible: !blacklisted,
            blacklisted,
            available_witness: registry.is_available(&node),
        }
    }
}

/// Picks the witness set for `key` (a tx id or claim id).
///
/// Every available witness contributes a local selection drawn from its own
/// stream, the selections are merged into one random network, and the
/// largest fluid community wins. If that community is a single node the
/// draw is repeated on fresh streams.
pub fn select_witnesses(
    available: &[AccountId],
    k: Option<usize>,
    pool_size: Option<usize>,
    master_seed: u64,
    key: &Digest,
) -> Result<BTreeSet<AccountId>, ConsensusError> {
    let mut pool: Vec<AccountId> = available.to_vec();
    pool.sort();
    pool.dedup();
    if let Some(cap) = pool_size {
        if pool.len() > cap {
            let mut r = stream_for(master_seed, "witness-pool", key, 0);
            let mut picked: Vec<AccountId> = index::sample(&mut r, pool.len(), cap)
                .into_iter()
                .map(|i| pool[i])
                .collect();
            picked.sort();
            pool = picked;
        }
    }
    let n = pool.len();
    if n < 2 {
        return Err(ConsensusError::Unavailable(n));
    }
    let k = k.unwrap_or_else(|| fluid::default_k(n)).clamp(1, n - 1);
    for attempt in 0..SELECTION_ATTEMPTS {
        let selections: Vec<SelectionVector> = pool
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let wkey = Digest::of_parts(&[key.as_bytes(), w.as_bytes()]);
                let mut r = stream_for(master_seed, "witness-select", &wkey, attempt);
                graphnet::local_selection(i, n, &mut r)
            })
            .collect();
        let g =
            graphnet::assemble_from_selections(n, &selections).expect("selections index the pool");
        let mut r = stream_for(master_seed, "witness-fluid", key, attempt);
        let a = fluid::detect_communities(&g, k, &mut r, DEFAULT_MAX_SUPERSTEPS)
            .expect("k within bounds");
        let chosen = fluid::largest_community(&a);
        if chosen.len() >= 2 {
            return Ok(chosen.into_iter().map(|i| pool[i]).collect());
        }
    }
    Err(ConsensusError::Unavailable(n))
}

/// What a witness is asked to vouch for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Subject {
    Transfer(TransactionRecord),
    Compensation(CompensationRecord),
}

impl Subject {
    pub fn id(&self) -> Digest {
        match self {
            Subject::Transfer(r) => r.tx_id,
            Subject::Compensation(c) => c.id(),
        }
    }

    fn tag(&self) -> u8 {
        match self {
            Subject::Transfer(_) => 1,
            Subject::Compensation(_) => 2,
        }
    }

    pub fn as_transfer(&self) -> Option<&TransactionRecord> {
        match self {
            Subject::Transfer(r) => Some(r),
            Subject::Compensation(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Acceptance,
    Rejection,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Evidence {
    /// The sender's chain as the witness saw it.
    Excerpt(Vec<TransactionRecord>),
    Invalidity(InvalidityEvidence),
    Compensation(CompensationFault),
}

impl Evidence {
    pub fn digest(&self) -> Digest {
        Digest::of(&serde_json::to_vec(self).expect("evidence serializes"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WitnessReport {
    pub kind: ReportKind,
    pub proposed: Subject,
    pub evidence: Evidence,
    pub witness: AccountId,
    pub witness_sig: Signature,
}

impl WitnessReport {
    pub fn signed(kind: ReportKind, proposed: Subject, evidence: Evidence, key: &KeyPair) -> Self {
        let mut r = WitnessReport {
            kind,
            proposed,
            evidence,
            witness: key.account_id(),
            witness_sig: Signature::forged(key.public_key()),
        };
        r.witness_sig = crypto::sign(key, &r.canonical_bytes());
        r
    }

    pub fn subject_id(&self) -> Digest {
        self.proposed.id()
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = b"PCWR".to_vec();
        out.push(1);
        out.push(match self.kind {
            ReportKind::Acceptance => 1,
            ReportKind::Rejection => 2,
        });
        out.push(self.proposed.tag());
        out.extend_from_slice(self.proposed.id().as_bytes());
        out.extend_from_slice(self.evidence.digest().as_bytes());
        out.extend_from_slice(self.witness.as_bytes());
        out
    }

    pub fn signature_ok(&self) -> bool {
        self.witness_sig.signer() == self.witness
            && self.witness_sig.verify(&self.canonical_bytes())
    }
}

/// A verifying node's local knowledge.
#[derive(Clone, Copy)]
pub struct LocalView<'a> {
    pub ledger: &'a Ledger,
    pub registry: &'a WitnessRegistry,
    pub compensation: &'a CompensationParams,
    pub recipient_spend_delay: SimTime,
    /// Local time this node first saw the subject.
    pub first_seen: SimTime,
    /// Another record this node has seen for the same (sender, seq) slot.
    pub pending_conflict: Option<&'a TransactionRecord>,
    /// Two records proving the sender double-spent before.
    pub fraud_proof: Option<&'a [TransactionRecord]>,
}

/// True iff funds received at `accepted_at` may be spent at `now`.
pub fn recipient_spend_gate(accepted_at: SimTime, now: SimTime, params: &ConsensusParams) -> bool {
    now >= accepted_at.saturating_add(params.recipient_spend_delay)
}

/// The sender's own credit if it is still inside the spend delay as seen
/// from `first_seen`.
fn immature_credit<'a>(
    proposed: &TransactionRecord,
    ledger: &'a Ledger,
    first_seen: SimTime,
    delay: SimTime,
) -> Option<&'a TransactionRecord> {
    let Some(CreditSource::Transfer(id)) = ledger.credit_source(&proposed.sender) else {
        return None;
    };
    let at = ledger.accepted_at(&id)?;
    (first_seen < at.saturating_add(delay))
        .then(|| ledger.record(&id))
        .flatten()
}

/// A witness's judgement of a subject. `None` means the witness lacks the
/// history to judge (unknown sender, or earlier transfers not yet seen)
/// and stays silent for now.
pub fn witness_validate(
    key: &KeyPair,
    proposed: &Subject,
    view: &LocalView<'_>,
) -> Option<WitnessReport> {
    let sign = |kind, evidence| Some(WitnessReport::signed(kind, proposed.clone(), evidence, key));
    let reject = |e: InvalidityEvidence| sign(ReportKind::Rejection, Evidence::Invalidity(e));
    match proposed {
        Subject::Transfer(r) => {
            if let Some(pair) = view.fraud_proof {
                if proves_double_spend(pair) == Some(r.sender) && !view.ledger.contains(&r.tx_id) {
                    let mut e = InvalidityEvidence::bare(EvidenceKind::FraudulentSender);
                    e.ledger_excerpt = Some(pair.to_vec());
                    return reject(e);
                }
            }
            if let Some(c) = view.pending_conflict {
                let pair = [c.clone(), r.clone()];
                if proves_double_spend(&pair).is_some() && !view.ledger.contains(&r.tx_id) {
                    return reject(InvalidityEvidence::with_conflict(
                        EvidenceKind::DoubleSpend,
                        c.clone(),
                    ));
                }
            }
            match validate_record(r, view.ledger) {
                Validation::Invalid(e) => {
                    let lagging = match e.kind {
                        EvidenceKind::StaleSequence => {
                            r.sender_seq > view.ledger.chain_len(&r.sender) + 1
                        }
                        EvidenceKind::Overdraw => !view.ledger.knows(&r.sender),
                        _ => false,
                    };
                    if lagging {
                        None
                    } else {
                        reject(e)
                    }
                }
                Validation::Valid => {
                    if !view.ledger.contains(&r.tx_id) {
                        if let Some(credit) = immature_credit(
                            r,
                            view.ledger,
                            view.first_seen,
                            view.recipient_spend_delay,
                        ) {
                            return reject(InvalidityEvidence::with_conflict(
                                EvidenceKind::ImmatureFunds,
                                credit.clone(),
                            ));
                        }
                    }
                    sign(
                        ReportKind::Acceptance,
                        Evidence::Excerpt(view.ledger.sender_excerpt(&r.sender)),
                    )
                }
            }
        }
        Subject::Compensation(c) => {
            match validate_compensation(c, view.ledger, view.registry, view.compensation) {
                Ok(()) => sign(ReportKind::Acceptance, Evidence::Excerpt(Vec::new())),
                Err(f) => sign(ReportKind::Rejection, Evidence::Compensation(f)),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Falsification {
    /// The report signature does not verify; nobody can be blamed.
    BadSignature,
    /// Evidence contradicts itself or the subject.
    FabricatedEvidence,
    /// The verifier holds self-verifying proof of the opposite.
    ContraryEvidence,
    /// The verifier cannot confirm the claim from what it knows.
    Unconfirmed,
}

impl Falsification {
    /// Whether the falsification proves misconduct by the named witness.
    pub fn attributable(self) -> bool {
        matches!(
            self,
            Falsification::FabricatedEvidence | Falsification::ContraryEvidence
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Valid,
    Falsified(Falsification),
}

impl Verdict {
    pub fn is_valid(self) -> bool {
        self == Verdict::Valid
    }
}

/// Hard evidence the verifier itself holds against a transfer.
fn contrary_transfer_evidence(r: &TransactionRecord, view: &LocalView<'_>) -> bool {
    if view.ledger.contains(&r.tx_id) {
        return false;
    }
    if let Some(c) = view.pending_conflict {
        if proves_double_spend(&[c.clone(), r.clone()]).is_some() {
            return true;
        }
    }
    if let Some(pair) = view.fraud_proof {
        if proves_double_spend(pair) == Some(r.sender) {
            return true;
        }
    }
    match validate_record(r, view.ledger) {
        Validation::Invalid(e) => matches!(
            e.kind,
            EvidenceKind::DoubleSpend | EvidenceKind::BadSignature | EvidenceKind::ReceiverReuse
        ),
        Validation::Valid => false,
    }
}

pub fn verify_report(report: &WitnessReport, view: &LocalView<'_>) -> Verdict {
    use Falsification::*;
    if !report.signature_ok() {
        return Verdict::Falsified(BadSignature);
    }
    match (&report.proposed, report.kind, &report.evidence) {
        (Subject::Transfer(r), ReportKind::Rejection, Evidence::Invalidity(e)) => {
            if e.kind == EvidenceKind::ImmatureFunds {
                let credit_matches = e.conflicting_record.as_ref().is_some_and(|c| {
                    c.is_well_formed() && c.receiver == r.sender && c.tx_id != r.tx_id
                });
                if !credit_matches {
                    return Verdict::Falsified(FabricatedEvidence);
                }
                return match immature_credit(
                    r,
                    view.ledger,
                    view.first_seen,
                    view.recipient_spend_delay,
                ) {
                    Some(_) => Verdict::Valid,
                    None => Verdict::Falsified(Unconfirmed),
                };
            }
            match e.check_standalone(r) {
                Some(true) => Verdict::Valid,
                Some(false) => Verdict::Falsified(FabricatedEvidence),
                None if e.confirm(r, view.ledger) => Verdict::Valid,
                None => Verdict::Falsified(Unconfirmed),
            }
        }
        (Subject::Transfer(r), ReportKind::Acceptance, Evidence::Excerpt(_)) => {
            if contrary_transfer_evidence(r, view) {
                Verdict::Falsified(ContraryEvidence)
            } else {
                Verdict::Valid
            }
        }
        (Subject::Compensation(c), ReportKind::Rejection, Evidence::Compensation(claimed)) => {
            match validate_compensation(c, view.ledger, view.registry, view.compensation) {
                Err(_) => Verdict::Valid,
                Ok(()) if claimed.is_self_evident() => Verdict::Falsified(FabricatedEvidence),
                Ok(()) => Verdict::Falsified(Unconfirmed),
            }
        }
        (Subject::Compensation(c), ReportKind::Acceptance, Evidence::Excerpt(_)) => {
            match validate_compensation(c, view.ledger, view.registry, view.compensation) {
                Err(f) if f.is_self_evident() => Verdict::Falsified(ContraryEvidence),
                _ => Verdict::Valid,
            }
        }
        _ => Verdict::Falsified(FabricatedEvidence),
    }
}

/// Keeps the last report per witness. Witnesses that sent both an
/// acceptance and a rejection are returned separately as equivocators.
pub fn dedup_reports(reports: &[WitnessReport]) -> (Vec<WitnessReport>, BTreeSet<AccountId>) {
    let mut last: BTreeMap<AccountId, &WitnessReport> = BTreeMap::new();
    let mut kinds: BTreeMap<AccountId, BTreeSet<ReportKind>> = BTreeMap::new();
    for r in reports {
        last.insert(r.witness, r);
        kinds.entry(r.witness).or_default().insert(r.kind);
    }
    let equivocators = kinds
        .into_iter()
        .filter(|(_, k)| k.len() > 1)
        .map(|(w, _)| w)
        .collect();
    (last.into_values().cloned().collect(), equivocators)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Judged {
    pub kind: ReportKind,
    pub witness: AccountId,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Accepted,
    Rejected,
    Pending,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TallyResult {
    pub outcome: Outcome,
    pub acceptances: usize,
    pub rejections: usize,
    /// Witnesses whose reports were provably false.
    pub falsifiers: Vec<AccountId>,
}

/// Pure tally over already-verified, deduplicated reports.
///
/// Valid acceptances count only from `selected` witnesses; a valid
/// rejection from anyone vetoes.
pub fn tally(
    reports: &[Judged],
    selected: &BTreeSet<AccountId>,
    min_acceptances: usize,
    first_seen: SimTime,
    now: SimTime,
    waiting_period: SimTime,
) -> TallyResult {
    let mut acceptances = 0;
    let mut rejections = 0;
    let mut falsifiers = Vec::new();
    for r in reports {
        match r.verdict {
            Verdict::Valid => match r.kind {
                ReportKind::Acceptance if selected.contains(&r.witness) => acceptances += 1,
                ReportKind::Acceptance => {}
                ReportKind::Rejection => rejections += 1,
            },
            Verdict::Falsified(f) if f.attributable() => falsifiers.push(r.witness),
            Verdict::Falsified(_) => {}
        }
    }
    let waited = now >= first_seen.saturating_add(waiting_period);
    let outcome = if rejections > 0 {
        Outcome::Rejected
    } else if waited && acceptances >= min_acceptances {
        Outcome::Accepted
    } else {
        Outcome::Pending
    };
    TallyResult {
        outcome,
        acceptances,
        rejections,
        falsifiers,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Offense {
    SenderFraud {
        first: TransactionRecord,
        second: TransactionRecord,
    },
    WitnessFalsification {
        report: Box<WitnessReport>,
    },
    PostPartitionDoubleSpend {
        first: TransactionRecord,
        second: TransactionRecord,
    },
    /// A signed claim with a fault anyone can check from the claim alone.
    CompensationFraud {
        claim: Box<CompensationRecord>,
        fault: CompensationFault,
    },
}

/// Penalties a node has handed out.
#[derive(Debug, Clone, Default)]
pub struct Sanctions {
    flagged: BTreeMap<AccountId, [TransactionRecord; 2]>,
    punished_slots: BTreeSet<(AccountId, u64)>,
}

impl Sanctions {
    pub fn is_flagged(&self, sender: &AccountId) -> bool {
        self.flagged.contains_key(sender)
    }

    pub fn fraud_proof(&self, sender: &AccountId) -> Option<&[TransactionRecord]> {
        self.flagged.get(sender).map(|p| p.as_slice())
    }

    pub fn flagged(&self) -> impl Iterator<Item = &AccountId> {
        self.flagged.keys()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct PenaltyOutcome {
    pub slashed: Amount,
    pub forfeited: Amount,
    /// False when this offense was already punished.
    pub fresh: bool,
}

pub fn apply_penalty(
    ledger: &mut Ledger,
    registry: &mut WitnessRegistry,
    sanctions: &mut Sanctions,
    offender: &AccountId,
    offense: &Offense,
    params: &ConsensusParams,
) -> Result<PenaltyOutcome, ConsensusError> {
    match offense {
        Offense::SenderFraud { first, second }
        | Offense::PostPartitionDoubleSpend { first, second } => {
            let pair = [first.clone(), second.clone()];
            if proves_double_spend(&pair) != Some(*offender) {
                return Err(ConsensusError::Unproven);
            }
            sanctions.flagged.entry(*offender).or_insert(pair);
            if !sanctions
                .punished_slots
                .insert((*offender, first.sender_seq))
            {
                return Ok(PenaltyOutcome::default());
            }
            let ppm = match offense {
                Offense::SenderFraud { .. } => params.slash_ppm(),
                _ => 1_000_000,
            };
            Ok(PenaltyOutcome {
                slashed: ledger.slash(offender, ppm),
                forfeited: 0,
                fresh: true,
            })
        }
        Offense::WitnessFalsification { .. } | Offense::CompensationFraud { .. } => {
            let proven = match offense {
                Offense::WitnessFalsification { report } => {
                    report.witness == *offender && report.signature_ok()
                }
                Offense::CompensationFraud { claim, fault } => {
                    claim.witness == *offender
                        && fault.is_self_evident()
                        && *fault != CompensationFault::BadClaimSignature
                        && claim.witness_sig.signer() == *offender
                        && claim.witness_sig.verify(&claim.canonical_bytes())
                }
                _ => unreachable!(),
            };
            if !proven {
                return Err(ConsensusError::Unproven);
            }
            match registry.blacklist(*offender) {
                Some(stake) => Ok(PenaltyOutcome {
                    slashed: 0,
                    forfeited: stake,
                    fresh: true,
                }),
                None => Ok(PenaltyOutcome::default()),
            }
        }
    }
}

/// One consensus decision, as written to the metrics stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DecisionEvent {
    pub subject: Digest,
    pub outcome: Outcome,
    pub acceptances: usize,
    pub rejections: usize,
    pub decided_at: SimTime,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::generate_keypair;
    use crate::incentives::FeePolicy;
    use crate::ledger::testkit::*;
    use crate::ledger::FeeSide;
    use proptest::prelude::*;

    struct World {
        ledger: Ledger,
        registry: WitnessRegistry,
        comp: CompensationParams,
    }

    impl World {
        fn new() -> Self {
            World {
                ledger: no_fee_ledger(),
                registry: WitnessRegistry::default(),
                comp: CompensationParams::default(),
            }
        }

        fn view(&self) -> LocalView<'_> {
            LocalView {
                ledger: &self.ledger,
                registry: &self.registry,
                compensation: &self.comp,
                recipient_spend_delay: 5_000,
                first_seen: 1_000_000,
                pending_conflict: None,
                fraud_proof: None,
            }
        }
    }

    fn ids(n: u64) -> Vec<AccountId> {
        (0..n)
            .map(|i| generate_keypair(10_000 + i).account_id())
            .collect()
    }

    fn judged(kind: ReportKind, w: &AccountId, verdict: Verdict) -> Judged {
        Judged {
            kind,
            witness: *w,
            verdict,
        }
    }

    #[test]
    fn two_witnesses_are_both_selected() {
        let pool = ids(2);
        for s in 0..20 {
            let key = Digest::of(&[s as u8]);
            let chosen = select_witnesses(&pool, Some(1), None, 7, &key).unwrap();
            assert_eq!(chosen, pool.iter().copied().collect());
        }
    }

    #[test]
    fn too_few_witnesses() {
        assert_eq!(
            select_witnesses(&ids(1), None, None, 1, &Digest::ZERO),
            Err(ConsensusError::Unavailable(1))
        );
    }

    #[test]
    fn selection_is_unpredictable_across_subjects() {
        let pool = ids(50);
        let mut seen = std::collections::HashSet::new();
        let mut collisions = 0;
        for t in 0..100u64 {
            let key = Digest::of(&t.to_be_bytes());
            let set = select_witnesses(&pool, None, None, 3, &key).unwrap();
            assert!(set.len() >= 2 && set.iter().all(|w| pool.contains(w)));
            if !seen.insert(set) {
                collisions += 1;
            }
        }
        assert!(collisions < 5, "{collisions} repeated witness sets");
    }

    #[test]
    fn selection_is_deterministic_and_pool_capped() {
        let pool = ids(30);
        let key = Digest::of(b"tx");
        let a = select_witnesses(&pool, None, Some(10), 9, &key).unwrap();
        assert_eq!(a, select_witnesses(&pool, None, Some(10), 9, &key).unwrap());
        let mut reversed = pool.clone();
        reversed.reverse();
        assert_eq!(
            a,
            select_witnesses(&reversed, None, Some(10), 9, &key).unwrap()
        );
        assert!(a.len() <= 10);
    }

    #[test]
    fn tally_examples() {
        let w = ids(6);
        let sel: BTreeSet<_> = w.iter().copied().collect();
        let acc = |i: usize| judged(ReportKind::Acceptance, &w[i], Verdict::Valid);
        let three = [acc(0), acc(1), acc(2)];
        assert_eq!(
            tally(&three, &sel, 3, 0, 2_000, 2_000).outcome,
            Outcome::Accepted
        );
        assert_eq!(
            tally(&three, &sel, 3, 0, 1_999, 2_000).outcome,
            Outcome::Pending
        );

        let mut five_and_veto: Vec<_> = (0..5).map(acc).collect();
        five_and_veto.push(judged(ReportKind::Rejection, &w[5], Verdict::Valid));
        assert_eq!(
            tally(&five_and_veto, &sel, 3, 0, 10_000, 2_000).outcome,
            Outcome::Rejected
        );

        let two = [acc(0), acc(1)];
        assert_eq!(
            tally(&two, &sel, 3, 0, u64::MAX, 2_000).outcome,
            Outcome::Pending
        );

        let mut with_false = three.to_vec();
        with_false.push(judged(
            ReportKind::Rejection,
            &w[5],
            Verdict::Falsified(Falsification::FabricatedEvidence),
        ));
        let t = tally(&with_false, &sel, 3, 0, 2_000, 2_000);
        assert_eq!(t.outcome, Outcome::Accepted);
        assert_eq!(t.falsifiers, vec![w[5]]);
    }

    #[test]
    fn acceptances_from_unselected_witnesses_do_not_count() {
        let w = ids(4);
        let sel: BTreeSet<_> = w[..2].iter().copied().collect();
        let reports: Vec<_> = w
            .iter()
            .map(|x| judged(ReportKind::Acceptance, x, Verdict::Valid))
            .collect();
        assert_eq!(tally(&reports, &sel, 3, 0, 5_000, 0).acceptances, 2);
    }

    #[test]
    fn default_quorum_is_two_thirds() {
        let p = ConsensusParams::default();
        assert_eq!(p.min_acceptances_for(3), 2);
        assert_eq!(p.min_acceptances_for(6), 4);
        assert_eq!(p.min_acceptances_for(7), 5);
        assert_eq!(p.min_acceptances_for(1), 1);
    }

    #[test]
    fn spend_gate_boundary() {
        let p = ConsensusParams::default();
        assert!(!recipient_spend_gate(10, 10, &p));
        assert!(!recipient_spend_gate(10, 5_009, &p));
        assert!(recipient_spend_gate(10, 5_010, &p));
    }

    #[test]
    fn honest_witness_accepts_and_rejects_double_spend() {
        let mut world = World::new();
        let wkey = generate_keypair(500);
        let s = Wallet::new(1);
        world.ledger.genesis(s.id(), 100).unwrap();
        let first = s.draft(&generate_keypair(2), 10);
        let second = s.draft(&generate_keypair(3), 10);
        let rep =
            witness_validate(&wkey, &Subject::Transfer(first.clone()), &world.view()).unwrap();
        assert_eq!(rep.kind, ReportKind::Acceptance);
        assert!(rep.signature_ok());
        world.ledger.append(&first, 0).unwrap();
        let rep =
            witness_validate(&wkey, &Subject::Transfer(second.clone()), &world.view()).unwrap();
        assert_eq!(rep.kind, ReportKind::Rejection);
        match &rep.evidence {
            Evidence::Invalidity(e) => {
                assert_eq!(e.kind, EvidenceKind::DoubleSpend);
                assert_eq!(e.conflicting_record.as_ref(), Some(&first));
            }
            other => panic!("{other:?}"),
        }
        // Any node, even one that never saw `first`, confirms the veto.
        let blank = World::new();
        assert_eq!(verify_report(&rep, &blank.view()), Verdict::Valid);
    }

    #[test]
    fn fabricated_rejection_is_falsified() {
        let mut world = World::new();
        let liar = generate_keypair(666);
        let s = Wallet::new(1);
        world.ledger.genesis(s.id(), 100).unwrap();
        let tx = s.draft(&generate_keypair(2), 10);
        let mut fake = s.draft(&generate_keypair(3), 10);
        fake.sender_sig = Signature::forged(fake.sender_sig.public_key);
        let rep = WitnessReport::signed(
            ReportKind::Rejection,
            Subject::Transfer(tx),
            Evidence::Invalidity(InvalidityEvidence::with_conflict(
                EvidenceKind::DoubleSpend,
                fake,
            )),
            &liar,
        );
        let v = verify_report(&rep, &world.view());
        assert_eq!(v, Verdict::Falsified(Falsification::FabricatedEvidence));
    }

    #[test]
    fn false_acceptance_of_known_conflict_is_falsified() {
        let mut world = World::new();
        let corrupt = generate_keypair(666);
        let s = Wallet::new(1);
        world.ledger.genesis(s.id(), 100).unwrap();
        let first = s.draft(&generate_keypair(2), 10);
        let second = s.draft(&generate_keypair(3), 10);
        world.ledger.append(&first, 0).unwrap();
        let rep = WitnessReport::signed(
            ReportKind::Acceptance,
            Subject::Transfer(second.clone()),
            Evidence::Excerpt(vec![]),
            &corrupt,
        );
        assert_eq!(
            verify_report(&rep, &world.view()),
            Verdict::Falsified(Falsification::ContraryEvidence)
        );
        // Someone who only holds the rival proposal in its pending pool
        // also knows better.
        let mut pending_only = World::new();
        pending_only.ledger.genesis(s.id(), 100).unwrap();
        let mut v = pending_only.view();
        v.pending_conflict = Some(&first);
        assert_eq!(
            verify_report(&rep, &v),
            Verdict::Falsified(Falsification::ContraryEvidence)
        );
    }

    #[test]
    fn tampered_report_signature_is_unattributable() {
        let world = World::new();
        let w = generate_keypair(5);
        let s = Wallet::new(1);
        let tx = s.draft(&generate_keypair(2), 1);
        let mut rep = WitnessReport::signed(
            ReportKind::Acceptance,
            Subject::Transfer(tx),
            Evidence::Excerpt(vec![]),
            &w,
        );
        rep.kind = ReportKind::Rejection;
        let v = verify_report(&rep, &world.view());
        assert_eq!(v, Verdict::Falsified(Falsification::BadSignature));
        assert!(!Falsification::BadSignature.attributable());
    }

    #[test]
    fn forged_rival_is_rejected_for_its_signature() {
        let mut world = World::new();
        let w = generate_keypair(5);
        let s = Wallet::new(1);
        world.ledger.genesis(s.id(), 100).unwrap();
        let good = s.draft(&generate_keypair(2), 10);
        let mut forged = s.draft(&generate_keypair(3), 10);
        forged.sender_sig = Signature::forged(forged.sender_sig.public_key);
        let mut v = world.view();
        v.pending_conflict = Some(&good);
        let rep = witness_validate(&w, &Subject::Transfer(forged), &v).unwrap();
        assert_eq!(rep.kind, ReportKind::Rejection);
        assert!(matches!(
            &rep.evidence,
            Evidence::Invalidity(e) if e.kind == EvidenceKind::BadSignature
        ));
        assert_eq!(verify_report(&rep, &world.view()), Verdict::Valid);
    }

    #[test]
    fn lagging_witness_stays_silent() {
        let world = World::new();
        let w = generate_keypair(5);
        let s = Wallet::new(1);
        // Sender unknown to this witness.
        let tx = s.draft(&generate_keypair(2), 1);
        assert!(witness_validate(&w, &Subject::Transfer(tx), &world.view()).is_none());
    }

    #[test]
    fn immature_spend_is_vetoed() {
        let mut world = World::new();
        let w = generate_keypair(5);
        let mut a = Wallet::new(1);
        world.ledger.genesis(a.id(), 100).unwrap();
        let b_key = generate_keypair(2);
        let credit = a.pay(&b_key, 50);
        world.ledger.append(&credit, 10_000).unwrap();
        let b = Wallet {
            key: b_key,
            seq: 0,
            last: Digest::ZERO,
        };
        let early = b.draft(&generate_keypair(3), 10);
        let mut v = world.view();
        v.first_seen = 14_999;
        let rep = witness_validate(&w, &Subject::Transfer(early.clone()), &v).unwrap();
        assert_eq!(rep.kind, ReportKind::Rejection);
        assert_eq!(verify_report(&rep, &v), Verdict::Valid);
        v.first_seen = 15_000;
        let rep2 = witness_validate(&w, &Subject::Transfer(early), &v).unwrap();
        assert_eq!(rep2.kind, ReportKind::Acceptance);
        // A node that saw the spend only after maturity cannot confirm.
        assert_eq!(
            verify_report(&rep, &v),
            Verdict::Falsified(Falsification::Unconfirmed)
        );
    }

    #[test]
    fn flagged_sender_is_auto_rejected() {
        let mut world = World::new();
        let mut s = Wallet::new(1);
        world.ledger.genesis(s.id(), 100).unwrap();
        let a = s.draft(&generate_keypair(2), 10);
        let b = s.draft(&generate_keypair(3), 10);
        world.ledger.append(&a, 0).unwrap();
        s.seq = 1;
        s.last = a.tx_id;
        let later = s.draft(&generate_keypair(4), 1);
        let proof = [a, b];
        let mut v = world.view();
        v.fraud_proof = Some(&proof);
        let rep = witness_validate(&generate_keypair(9), &Subject::Transfer(later), &v).unwrap();
        assert_eq!(rep.kind, ReportKind::Rejection);
        assert_eq!(verify_report(&rep, &World::new().view()), Verdict::Valid);
    }

    #[test]
    fn dedup_keeps_last_and_flags_equivocation() {
        let w = generate_keypair(5);
        let s = Wallet::new(1);
        let tx = Subject::Transfer(s.draft(&generate_keypair(2), 1));
        let acc = WitnessReport::signed(
            ReportKind::Acceptance,
            tx.clone(),
            Evidence::Excerpt(vec![]),
            &w,
        );
        let rej = WitnessReport::signed(
            ReportKind::Rejection,
            tx,
            Evidence::Invalidity(InvalidityEvidence::bare(EvidenceKind::Overdraw)),
            &w,
        );
        let (kept, eq) = dedup_reports(&[acc.clone(), acc.clone()]);
        assert_eq!(kept, vec![acc.clone()]);
        assert!(eq.is_empty());
        let (kept, eq) = dedup_reports(&[acc, rej.clone()]);
        assert_eq!(kept, vec![rej]);
        assert_eq!(eq, [w.account_id()].into_iter().collect());
    }

    #[test]
    fn penalties() {
        let mut ledger = Ledger::new(FeePolicy::zero(), FeeSide::Sender);
        let mut registry = WitnessRegistry::default();
        let mut sanctions = Sanctions::default();
        let s = Wallet::new(1);
        ledger.genesis(s.id(), 100).unwrap();
        let a = s.draft(&generate_keypair(2), 10);
        let b = s.draft(&generate_keypair(3), 10);
        let mut half = ConsensusParams::default();
        half.slash_fraction = 0.5;
        let out = apply_penalty(
            &mut ledger,
            &mut registry,
            &mut sanctions,
            &s.id(),
            &Offense::SenderFraud {
                first: a.clone(),
                second: b.clone(),
            },
            &half,
        )
        .unwrap();
        assert_eq!(out.slashed, 50);
        assert_eq!(ledger.balance(&s.id()), 50);
        assert!(sanctions.is_flagged(&s.id()));
        // Same offense again is a no-op.
        let again = apply_penalty(
            &mut ledger,
            &mut registry,
            &mut sanctions,
            &s.id(),
            &Offense::SenderFraud {
                first: a.clone(),
                second: b.clone(),
            },
            &half,
        )
        .unwrap();
        assert!(!again.fresh);
        assert_eq!(ledger.balance(&s.id()), 50);

        let mut full_ledger = no_fee_ledger();
        full_ledger.genesis(s.id(), 100).unwrap();
        let out = apply_penalty(
            &mut full_ledger,
            &mut registry,
            &mut Sanctions::default(),
            &s.id(),
            &Offense::PostPartitionDoubleSpend {
                first: a.clone(),
                second: b,
            },
            &half,
        )
        .unwrap();
        assert_eq!(out.slashed, 100);
        assert_eq!(full_ledger.balance(&s.id()), 0);
        assert!(full_ledger.audit().conserved());

        // No proof, no penalty.
        assert_eq!(
            apply_penalty(
                &mut ledger,
                &mut registry,
                &mut sanctions,
                &s.id(),
                &Offense::SenderFraud {
                    first: a.clone(),
                    second: a.clone(),
                },
                &half,
            ),
            Err(ConsensusError::Unproven)
        );

        let w = generate_keypair(77);
        registry
            .register_witness(w.account_id(), 100, 0, 0)
            .unwrap();
        let rep = WitnessReport::signed(
            ReportKind::Acceptance,
            Subject::Transfer(a),
            Evidence::Excerpt(vec![]),
            &w,
        );
        let out = apply_penalty(
            &mut ledger,
            &mut registry,
            &mut sanctions,
            &w.account_id(),
            &Offense::WitnessFalsification {
                report: Box::new(rep),
            },
            &half,
        )
        .unwrap();
        assert_eq!(out.forfeited, 100);
        assert!(registry.is_blacklisted(&w.account_id()));
        assert!(!NodeStatus::of(w.account_id(), &registry).witness_eligible);
    }

    #[test]
    fn forged_claim_blacklists_claimant() {
        use crate::incentives::{sign_compensation, CompensationKind, WitnessedRecord};
        let w = generate_keypair(91);
        let mut ledger = no_fee_ledger();
        let mut registry = WitnessRegistry::default();
        let mut sanctions = Sanctions::default();
        registry
            .register_witness(w.account_id(), 100, 0, 0)
            .unwrap();
        let mut s = Wallet::new(92);
        ledger.genesis(s.id(), 1_000).unwrap();
        let r = s.pay(&generate_keypair(93), 5);
        let mut bad = WitnessedRecord::new(r, &w);
        bad.witness_sig = Signature::forged(w.public_key());
        let claim = sign_compensation(
            CompensationRecord {
                kind: CompensationKind::Witness,
                witness: w.account_id(),
                day_index: 0,
                amount: 50,
                attached: vec![bad],
                tether_acks: vec![],
                witness_sig: Signature::forged(w.public_key()),
            },
            &w,
        );
        let params = ConsensusParams::default();
        let offense = |fault| Offense::CompensationFraud {
            claim: Box::new(claim.clone()),
            fault,
        };
        assert_eq!(
            apply_penalty(
                &mut ledger,
                &mut registry,
                &mut sanctions,
                &w.account_id(),
                &offense(CompensationFault::UnknownAttachment),
                &params
            ),
            Err(ConsensusError::Unproven)
        );
        let out = apply_penalty(
            &mut ledger,
            &mut registry,
            &mut sanctions,
            &w.account_id(),
            &offense(CompensationFault::ForgedAttachment),
            &params,
        )
        .unwrap();
        assert_eq!(out.forfeited, 100);
        assert!(registry.is_blacklisted(&w.account_id()));
    }

    fn arb_judged() -> impl Strategy<Value = Vec<(bool, u8, u8)>> {
        prop::collection::vec((any::<bool>(), 0u8..8, 0u8..3), 0..12)
    }

    proptest! {
        #[test]
        fn adding_a_valid_rejection_never_accepts(reports in arb_judged(), now in 0u64..10_000, q in 1usize..6) {
            let w = ids(8);
            let sel: BTreeSet<_> = w[..6].iter().copied().collect();
            let base: Vec<Judged> = reports.iter().map(|(acc, i, v)| Judged {
                kind: if *acc { ReportKind::Acceptance } else { ReportKind::Rejection },
                witness: w[*i as usize],
                verdict: match v { 0 => Verdict::Valid, 1 => Verdict::Falsified(Falsification::FabricatedEvidence), _ => Verdict::Falsified(Falsification::Unconfirmed) },
            }).collect();
            let before = tally(&base, &sel, q, 0, now, 2_000);
            let mut more = base.clone();
            more.push(judged(ReportKind::Rejection, &w[7], Verdict::Valid));
            let after = tally(&more, &sel, q, 0, now, 2_000);
            prop_assert_eq!(after.outcome, Outcome::Rejected);
            if before.outcome == Outcome::Rejected {
                prop_assert_eq!(after.outcome, Outcome::Rejected);
            }
        }

        #[test]
        fn tally_ignores_report_order(reports in arb_judged(), now in 0u64..10_000) {
            let w = ids(8);
            let sel: BTreeSet<_> = w[..6].iter().copied().collect();
            let mut base: Vec<Judged> = reports.iter().map(|(acc, i, v)| Judged {
                kind: if *acc { ReportKind::Acceptance } else { ReportKind::Rejection },
                witness: w[*i as usize],
                verdict: if *v == 0 { Verdict::Valid } else { Verdict::Falsified(Falsification::ContraryEvidence) },
            }).collect();
            let a = tally(&base, &sel, 3, 0, now, 2_000);
            base.reverse();
            let b = tally(&base, &sel, 3, 0, now, 2_000);
            prop_assert_eq!(a.outcome, b.outcome);
            prop_assert_eq!(a.acceptances, b.acceptances);
        }
    }
}
