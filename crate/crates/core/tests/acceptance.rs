//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;

use parchain::consensus::{
    tally, verify_report, witness_validate, ConsensusParams, Evidence, Judged, LocalView, Outcome,
    ReportKind, Subject, WitnessReport,
};
use parchain::crypto::{generate_keypair, AccountId, KeyPair};
use parchain::fluid::{
    candidates, detect_communities_observed, CommunityAssignment, CommunityId, FluidObserver,
};
use parchain::gossip::{
    analytic_fraction, fit_growth_rate, max_deviation, mean_curve, simulate_gossip,
    time_to_fraction, GossipMode, GossipParams, Mixing, DEFAULT_HOP_CAP,
};
use parchain::graphnet::{random_network_central, Graph};
use parchain::incentives::{
    validate_compensation, CompensationKind, CompensationParams, FeePolicy, IssueError, ServiceLog,
    WitnessRegistry, WitnessedRecord,
};
use parchain::ledger::{
    EvidenceKind, FeeSide, InvalidityEvidence, Ledger, TransactionRecord, TransferBody,
};
use parchain::rng::stream;
use parchain::scenarios::{builtin, builtin_names, run_scenario, ScenarioReport};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- graphs

/// One representative per isomorphism class of simple graphs on `n` nodes,
/// as edge lists.
fn nonisomorphic_graphs(n: usize) -> Vec<Vec<(usize, usize)>> {
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .collect();
    let index: BTreeMap<(usize, usize), usize> =
        pairs.iter().enumerate().map(|(i, p)| (*p, i)).collect();
    let mut perms = Vec::new();
    permutations(&mut (0..n).collect(), 0, &mut perms);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for mask in 0u32..(1 << pairs.len()) {
        if seen.contains(&mask) {
            continue;
        }
        for p in &perms {
            let mut image = 0u32;
            for (i, &(a, b)) in pairs.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    let (x, y) = (p[a].min(p[b]), p[a].max(p[b]));
                    image |= 1 << index[&(x, y)];
                }
            }
            seen.insert(image);
        }
        out.push(
            pairs
                .iter()
                .enumerate()
                .filter(|(i, _)| mask >> i & 1 == 1)
                .map(|(_, e)| *e)
                .collect(),
        );
    }
    out
}

fn permutations(items: &mut Vec<usize>, at: usize, out: &mut Vec<Vec<usize>>) {
    if at == items.len() {
        out.push(items.clone());
        return;
    }
    for i in at..items.len() {
        items.swap(at, i);
        permutations(items, at + 1, out);
        items.swap(at, i);
    }
}

/// Scores every community by summing inverse sizes over the closed
/// neighbourhood, in floating point, and checks each decision against it.
struct Oracle<'a> {
    graph: &'a Graph,
    before: Option<CommunityId>,
    best: Vec<CommunityId>,
    decisions: usize,
    mismatches: Vec<String>,
}

impl FluidObserver for Oracle<'_> {
    fn before_update(&mut self, node: usize, a: &CommunityAssignment) {
        let mut score = vec![0.0f64; a.k];
        let mut touched = vec![false; a.k];
        let mut hood = vec![node];
        hood.extend(self.graph.neighbors(node));
        for w in hood {
            if let Some(c) = a.community_of(w) {
                score[c] += 1.0 / a.size(c) as f64;
                touched[c] = true;
            }
        }
        let top = (0..a.k)
            .filter(|&c| touched[c])
            .map(|c| score[c])
            .fold(f64::NEG_INFINITY, f64::max);
        self.best = (0..a.k)
            .filter(|&c| touched[c] && (score[c] - top).abs() < 1e-9)
            .collect();
        self.before = a.community_of(node);
        if candidates(node, a, self.graph) != self.best {
            self.mismatches.push(format!(
                "node {node}: candidates {:?} vs {:?}",
                candidates(node, a, self.graph),
                self.best
            ));
        }
    }

    fn after_update(&mut self, node: usize, chosen: Option<CommunityId>, _a: &CommunityAssignment) {
        self.decisions += 1;
        let ok = match self.before {
            _ if self.best.is_empty() => chosen == self.before,
            Some(c) if self.best.contains(&c) => chosen == Some(c),
            _ => chosen.is_some_and(|c| self.best.contains(&c)),
        };
        if !ok {
            self.mismatches.push(format!(
                "node {node}: chose {chosen:?} from {:?}, best {:?}",
                self.before, self.best
            ));
        }
    }
}

fn criterion_1() -> Check {
    let (mut graphs, mut runs, mut decisions) = (0, 0, 0);
    for n in 1..=6 {
        for edges in nonisomorphic_graphs(n) {
            graphs += 1;
            let g = Graph::from_edges(n, edges).map_err(|e| e.to_string())?;
            for k in 1..=n.min(3) {
                for seed in 0..4 {
                    let mut o = Oracle {
                        graph: &g,
                        before: None,
                        best: Vec::new(),
                        decisions: 0,
                        mismatches: Vec::new(),
                    };
                    let mut rng = stream(seed, "acceptance-fluid", (n * 10 + k) as u64);
                    detect_communities_observed(&g, k, &mut rng, 100, &mut o)
                        .map_err(|e| e.to_string())?;
                    ensure(o.mismatches.is_empty(), || {
                        format!("n={n} k={k} seed={seed}: {}", o.mismatches[0])
                    })?;
                    runs += 1;
                    decisions += o.decisions;
                }
            }
        }
    }
    ensure(graphs == 1 + 2 + 4 + 11 + 34 + 156, || {
        format!("enumerated {graphs} graph classes")
    })?;
    Ok(format!(
        "{graphs} graphs, {runs} runs, {decisions} decisions, 0 mismatches"
    ))
}

struct Emptiness {
    empty_at_boundary: usize,
    empty_mid_step: usize,
    boundaries: usize,
}

impl FluidObserver for Emptiness {
    fn after_update(
        &mut self,
        _node: usize,
        _chosen: Option<CommunityId>,
        a: &CommunityAssignment,
    ) {
        self.empty_mid_step += a.sizes().iter().filter(|&&s| s == 0).count();
    }

    fn superstep_end(&mut self, _index: usize, a: &CommunityAssignment) {
        self.boundaries += 1;
        self.empty_at_boundary += a.sizes().iter().filter(|&&s| s == 0).count();
    }
}

fn criterion_2() -> Check {
    let mut obs = Emptiness {
        empty_at_boundary: 0,
        empty_mid_step: 0,
        boundaries: 0,
    };
    for run in 0..1000u64 {
        let mut rng = stream(2, "acceptance-no-elimination", run);
        let n = rng.gen_range(1..=50);
        let p: f64 = rng.gen();
        let k = rng.gen_range(1..=n);
        let g = random_network_central(n, p, &mut rng).map_err(|e| e.to_string())?;
        let a = detect_communities_observed(&g, k, &mut rng, 100, &mut obs)
            .map_err(|e| e.to_string())?;
        ensure(a.sizes().iter().all(|&s| s > 0), || {
            format!("run {run}: final sizes {:?}", a.sizes())
        })?;
    }
    ensure(
        obs.empty_at_boundary == 0 && obs.empty_mid_step == 0,
        || {
            format!(
                "{} empty at boundaries, {} mid-step",
                obs.empty_at_boundary, obs.empty_mid_step
            )
        },
    )?;
    Ok(format!(
        "1000 runs, {} superstep boundaries, no empty community",
        obs.boundaries
    ))
}

// ---------------------------------------------------------------- gossip

fn gossip_mean(
    params: &GossipParams,
    runs: u64,
    label: &str,
) -> Result<parchain::gossip::CoverageCurve, String> {
    let curves = (0..runs)
        .map(|r| {
            let mut rng = stream(3, label, r);
            simulate_gossip(
                params,
                GossipMode::Continuous,
                Mixing::Homogeneous,
                None,
                &mut rng,
                DEFAULT_HOP_CAP,
            )
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    Ok(mean_curve(&curves))
}

fn criterion_3() -> Check {
    let params = GossipParams {
        n: 1000,
        w0_count: 10,
        fanout: 3,
        beta: 0.5,
    };
    let mean = gossip_mean(&params, 100, "acceptance-gossip")?;
    let dev = max_deviation(&mean, &params, 0.9);
    let rate = fit_growth_rate(&mean).map_err(|e| e.to_string())?;
    let rel = (rate - params.rate()).abs() / params.rate();
    let detail = format!(
        "max |w - model| = {dev:.4} (<= 0.05), growth rate {rate:.3} vs {:.3} ({:.1}%)",
        params.rate(),
        rel * 100.0
    );
    ensure(dev <= 0.05 && rel <= 0.15, || detail.clone())?;
    Ok(detail)
}

fn criterion_4() -> Check {
    let target = 1.0 - (-1.0f64).exp();
    let mut times = Vec::new();
    for fanout in [1, 2, 4, 8] {
        let params = GossipParams {
            n: 1000,
            w0_count: 10,
            fanout,
            beta: 0.5,
        };
        let mean = gossip_mean(&params, 20, "acceptance-sweep")?;
        let t = time_to_fraction(&mean, target)
            .ok_or_else(|| format!("rate {} never reached {target:.3}", params.rate()))?;
        times.push((params.rate(), t));
    }
    ensure(times.windows(2).all(|w| w[1].1 < w[0].1), || {
        format!("not strictly decreasing: {times:?}")
    })?;

    let params = GossipParams {
        n: 1000,
        w0_count: 10,
        fanout: 3,
        beta: 0.5,
    };
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..100 {
        let t = i as f64 * 0.1;
        let numeric =
            (analytic_fraction(t + h, &params) - analytic_fraction(t - h, &params)) / (2.0 * h);
        let w = analytic_fraction(t, &params);
        worst = worst.max((numeric - params.rate() * w * (1.0 - w)).abs());
    }
    ensure(worst <= 1e-6, || format!("logistic ODE residual {worst:e}"))?;
    let shown: Vec<String> = times.iter().map(|(r, t)| format!("{r}:{t:.2}")).collect();
    Ok(format!(
        "time to 1-1/e by rate [{}], ODE residual {worst:.1e}",
        shown.join(" ")
    ))
}

fn criterion_5() -> Check {
    let (n, p) = (100, 0.1);
    let pairs = (n * (n - 1) / 2) as f64;
    let (mu, sigma) = (pairs * p, (pairs * p * (1.0 - p)).sqrt());
    let mut within = 0;
    for d in 0..100 {
        let mut rng = stream(5, "acceptance-random-network", d);
        let g = random_network_central(n, p, &mut rng).map_err(|e| e.to_string())?;
        if (g.edge_count() as f64 - mu).abs() <= 3.0 * sigma {
            within += 1;
        }
    }
    ensure(within >= 99, || {
        format!("{within}/100 draws within 3 sigma of {mu}")
    })?;
    let mut rng = stream(5, "acceptance-extremes", 0);
    for _ in 0..10 {
        let empty = random_network_central(n, 0.0, &mut rng).map_err(|e| e.to_string())?;
        let full = random_network_central(n, 1.0, &mut rng).map_err(|e| e.to_string())?;
        ensure(
            empty.edge_count() == 0 && full.edge_count() == n * (n - 1) / 2,
            || {
                format!(
                    "p=0 gave {} edges, p=1 gave {}",
                    empty.edge_count(),
                    full.edge_count()
                )
            },
        )?;
    }
    let mut rng = stream(5, "acceptance-consecutive", 0);
    let mut seen = HashSet::new();
    for d in 0..1000 {
        let g = random_network_central(n, p, &mut rng).map_err(|e| e.to_string())?;
        let edges: Vec<(usize, usize)> = g.edges().collect();
        ensure(seen.insert(edges), || {
            format!("draw {d} repeats an earlier edge set")
        })?;
    }
    Ok(format!(
        "{within}/100 within 3 sigma of {mu}, p in {{0,1}} exact, 1000 distinct draws"
    ))
}

// ---------------------------------------------------------------- consensus

#[derive(Clone, Copy, Debug)]
enum Corrupt {
    Accept,
    FabricatedReject,
    Silent,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Knows {
    /// A is already in the ledger; only B is proposed.
    SettledA,
    /// Both records are pending when judged.
    Both,
    /// A judged before B arrived.
    AFirst,
}

struct Setup {
    a: TransactionRecord,
    b: TransactionRecord,
    genesis: Ledger,
    settled: Ledger,
    registry: WitnessRegistry,
    comp: CompensationParams,
    params: ConsensusParams,
}

impl Setup {
    fn new() -> Self {
        let sender = generate_keypair(60_000);
        let pay = |to: &KeyPair| {
            TransferBody {
                sender: sender.account_id(),
                receiver: to.account_id(),
                amount: 40,
                sender_seq: 1,
                prev_sender_hash: Default::default(),
            }
            .sign(&sender, to)
        };
        let (a, b) = (
            pay(&generate_keypair(60_001)),
            pay(&generate_keypair(60_002)),
        );
        let mut genesis = Ledger::new(FeePolicy::zero(), FeeSide::Sender);
        genesis.genesis(sender.account_id(), 50).expect("genesis");
        let mut settled = genesis.clone();
        settled.append(&a, 0).expect("append");
        Setup {
            a,
            b,
            genesis,
            settled,
            registry: WitnessRegistry::default(),
            comp: CompensationParams::default(),
            params: ConsensusParams::default(),
        }
    }

    fn view<'a>(&'a self, settled: bool, conflict: Option<&'a TransactionRecord>) -> LocalView<'a> {
        LocalView {
            ledger: if settled {
                &self.settled
            } else {
                &self.genesis
            },
            registry: &self.registry,
            compensation: &self.comp,
            recipient_spend_delay: 0,
            first_seen: 0,
            pending_conflict: conflict,
            fraud_proof: None,
        }
    }

    fn other(&self, r: &TransactionRecord) -> &TransactionRecord {
        if r.tx_id == self.a.tx_id {
            &self.b
        } else {
            &self.a
        }
    }

    fn honest_report(
        &self,
        key: &KeyPair,
        r: &TransactionRecord,
        knows: Knows,
    ) -> Option<WitnessReport> {
        let subject = Subject::Transfer(r.clone());
        let view = match knows {
            Knows::SettledA => self.view(true, None),
            Knows::Both => self.view(false, Some(self.other(r))),
            Knows::AFirst if r.tx_id == self.a.tx_id => self.view(false, None),
            Knows::AFirst => self.view(false, Some(&self.a)),
        };
        witness_validate(key, &subject, &view)
    }

    fn corrupt_report(
        &self,
        key: &KeyPair,
        r: &TransactionRecord,
        how: Corrupt,
    ) -> Option<WitnessReport> {
        let subject = Subject::Transfer(r.clone());
        match how {
            Corrupt::Accept => Some(WitnessReport::signed(
                ReportKind::Acceptance,
                subject,
                Evidence::Excerpt(Vec::new()),
                key,
            )),
            Corrupt::FabricatedReject => {
                let mut fake = r.clone();
                fake.amount += 1;
                fake.tx_id = fake.body().tx_id();
                let e = InvalidityEvidence::with_conflict(EvidenceKind::DoubleSpend, fake);
                Some(WitnessReport::signed(
                    ReportKind::Rejection,
                    subject,
                    Evidence::Invalidity(e),
                    key,
                ))
            }
            Corrupt::Silent => None,
        }
    }
}

/// What a bystander that already holds some of the records decides.
#[derive(Clone, Copy, Debug)]
enum Verifier {
    Fresh,
    HoldsA,
    HoldsB,
    SettledA,
}

fn decide(
    s: &Setup,
    v: Verifier,
    r: &TransactionRecord,
    reports: &[WitnessReport],
    selected: &BTreeSet<AccountId>,
) -> Outcome {
    let view = match v {
        Verifier::Fresh => s.view(false, None),
        Verifier::HoldsA if r.tx_id != s.a.tx_id => s.view(false, Some(&s.a)),
        Verifier::HoldsB if r.tx_id != s.b.tx_id => s.view(false, Some(&s.b)),
        Verifier::HoldsA | Verifier::HoldsB => s.view(false, None),
        Verifier::SettledA => s.view(true, None),
    };
    let judged: Vec<Judged> = reports
        .iter()
        .map(|rep| Judged {
            kind: rep.kind,
            witness: rep.witness,
            verdict: verify_report(rep, &view),
        })
        .collect();
    let q = s.params.min_acceptances_for(selected.len());
    tally(
        &judged,
        selected,
        q,
        0,
        s.params.waiting_period,
        s.params.waiting_period,
    )
    .outcome
}

fn enumerate_one_honest() -> Check {
    let s = Setup::new();
    let keys: Vec<KeyPair> = (0..4).map(|i| generate_keypair(61_000 + i)).collect();
    let strategies = [Corrupt::Accept, Corrupt::FabricatedReject, Corrupt::Silent];
    let verifiers = [
        Verifier::Fresh,
        Verifier::HoldsA,
        Verifier::HoldsB,
        Verifier::SettledA,
    ];
    let mut cases = 0usize;
    for m in 1..=4usize {
        for honest in 0..m {
            for knows in [Knows::SettledA, Knows::Both, Knows::AFirst] {
                let proposed: Vec<&TransactionRecord> = match knows {
                    Knows::SettledA => vec![&s.b],
                    _ => vec![&s.a, &s.b],
                };
                for plan in 0..3usize.pow(m as u32 - 1) {
                    let mut strategy = Vec::new();
                    let mut code = plan;
                    for _ in 1..m {
                        strategy.push(strategies[code % 3]);
                        code /= 3;
                    }
                    let reports: Vec<Vec<WitnessReport>> = proposed
                        .iter()
                        .map(|r| {
                            let mut corrupt = strategy.iter();
                            (0..m)
                                .filter_map(|w| match w == honest {
                                    true => s.honest_report(&keys[w], r, knows),
                                    false => s.corrupt_report(
                                        &keys[w],
                                        r,
                                        *corrupt.next().expect("strategy"),
                                    ),
                                })
                                .collect()
                        })
                        .collect();
                    for subset in 0..1usize << m {
                        if subset >> honest & 1 == 0 {
                            continue;
                        }
                        let selected: BTreeSet<AccountId> = (0..m)
                            .filter(|w| subset >> w & 1 == 1)
                            .map(|w| keys[w].account_id())
                            .collect();
                        let mut accepted = BTreeSet::new();
                        if knows == Knows::SettledA {
                            accepted.insert(s.a.tx_id);
                        }
                        for v in verifiers {
                            for (r, reps) in proposed.iter().zip(&reports) {
                                if decide(&s, v, r, reps, &selected) == Outcome::Accepted {
                                    accepted.insert(r.tx_id);
                                }
                            }
                            cases += 1;
                        }
                        ensure(accepted.len() <= 1, || {
                            format!("both records accepted: m={m} honest={honest} {knows:?} {strategy:?} subset={subset:b}")
                        })?;
                    }
                }
            }
        }
    }
    Ok(format!("{cases} enumerated cases, no dual acceptance"))
}

// ---------------------------------------------------------------- scenarios

struct Suite {
    reports: BTreeMap<&'static str, ScenarioReport>,
}

impl Suite {
    fn run() -> Result<Self, String> {
        let mut reports = BTreeMap::new();
        for name in builtin_names() {
            let cfg = builtin(name).map_err(|e| e.to_string())?;
            let r = run_scenario(&cfg).map_err(|e| format!("{name}: {e}"))?;
            reports.insert(name, r);
        }
        Ok(Suite { reports })
    }

    fn metric(&self, scenario: &str, metric: &str) -> Result<f64, String> {
        self.reports
            .get(scenario)
            .ok_or_else(|| format!("no scenario {scenario}"))?
            .metric(metric)
            .ok_or_else(|| format!("{scenario} has no metric {metric}"))
    }
}

fn criterion_6(suite: &Suite) -> Check {
    let enumerated = enumerate_one_honest()?;
    let attempts = suite.metric("sybil-99", "invalid_attempts")?;
    let invalid = suite.metric("sybil-99", "invalid_accepted")?;
    let corrupt = suite.metric("sybil-99", "corrupt_witnesses")?;
    ensure(
        corrupt == 99.0 && attempts >= 1000.0 && invalid == 0.0,
        || {
            format!(
                "sybil-99: {corrupt} corrupt witnesses, {invalid} of {attempts} invalid accepted"
            )
        },
    )?;
    Ok(format!(
        "{enumerated}; sybil-99 accepted {invalid} of {attempts} invalid"
    ))
}

fn criterion_7(suite: &Suite) -> Check {
    let dual = suite.metric("partition-off", "split_dual_accepted")?;
    let detected = suite.metric("partition-off", "post_partition_detected")?;
    let slashed = suite.metric("partition-off", "slashed_nodes")?;
    ensure(dual >= 1.0 && detected >= 1.0 && slashed >= 1.0, || {
        format!("defenses off: dual={dual} detected={detected} slashed={slashed}")
    })?;
    let minority = suite.metric("partition-ratio", "accepted_during_split_b")?;
    let majority = suite.metric("partition-ratio", "accepted_during_split_a")?;
    ensure(minority == 0.0 && majority >= 1.0, || {
        format!("ratio rule: minority {minority}, majority {majority}")
    })?;
    let isolated = suite.metric("partition-region", "accepted_during_split_a")?;
    let rest = suite.metric("partition-region", "accepted_during_split_b")?;
    ensure(isolated == 0.0 && rest >= 1.0, || {
        format!("region rule: isolated {isolated}, rest {rest}")
    })?;
    Ok(format!(
        "off: {dual} dual, detected on {detected} nodes, slashed on {slashed}; ratio: minority {minority} (majority {majority}); regions: isolated {isolated} (rest {rest})"
    ))
}

fn criterion_8(suite: &Suite) -> Check {
    for name in suite.reports.keys() {
        let v = suite.metric(name, "conservation_violations")?;
        ensure(v == 0.0, || format!("{name}: {v} nodes break conservation"))?;
    }
    Ok(format!(
        "{} scenarios conserve supply on every honest node",
        suite.reports.len()
    ))
}

fn chain_claim(transactors: usize, params: &CompensationParams) -> (bool, bool) {
    let witness = generate_keypair(70_000);
    let mut ledger = Ledger::new(FeePolicy::zero(), FeeSide::Sender);
    let keys: Vec<KeyPair> = (0..transactors as u64)
        .map(|i| generate_keypair(70_001 + i))
        .collect();
    ledger
        .genesis(keys[0].account_id(), 10_000)
        .expect("genesis");
    let mut log = ServiceLog::default();
    for (i, pair) in keys.windows(2).enumerate() {
        let r = TransferBody {
            sender: pair[0].account_id(),
            receiver: pair[1].account_id(),
            amount: 10_000 - 100 * (i as u64 + 1),
            sender_seq: 1,
            prev_sender_hash: Default::default(),
        }
        .sign(&pair[0], &pair[1]);
        ledger.append(&r, 0).expect("append");
        log.note_witnessed(0, WitnessedRecord::new(r, &witness));
    }
    match log.issue_compensation(&witness, CompensationKind::Witness, 0, params) {
        Ok(claim) => (
            true,
            validate_compensation(&claim, &ledger, &WitnessRegistry::default(), params).is_ok(),
        ),
        Err(IssueError::NotEligible { .. }) => (false, false),
        Err(e) => panic!("unexpected {e}"),
    }
}

fn criterion_9(suite: &Suite) -> Check {
    let params = CompensationParams::default();
    for t in 2..=12 {
        let (issued, valid) = chain_claim(t, &params);
        ensure(issued == (t >= 10) && valid == (t >= 10), || {
            format!("{t} transactors: issued={issued} valid={valid}")
        })?;
    }
    let (a, b) = (generate_keypair(71_000), generate_keypair(71_001));
    let witness = generate_keypair(71_002);
    let mut log = ServiceLog::default();
    for i in 0..100u64 {
        let (from, to) = if i % 2 == 0 { (&a, &b) } else { (&b, &a) };
        let r = TransferBody {
            sender: from.account_id(),
            receiver: to.account_id(),
            amount: 1,
            sender_seq: i / 2 + 1,
            prev_sender_hash: Default::default(),
        }
        .sign(from, to);
        log.note_witnessed(0, WitnessedRecord::new(r, &witness));
    }
    let wash = log.issue_compensation(&witness, CompensationKind::Witness, 0, &params);
    ensure(
        wash == Err(IssueError::NotEligible {
            served: 2,
            required: 10,
        }),
        || format!("wash claim gave {wash:?}"),
    )?;

    let below = suite.metric("compensation", "below_threshold_minted")?;
    let minted = suite.metric("compensation", "comp_minted_slots")?;
    ensure(below == 0.0 && minted >= 1.0, || {
        format!("compensation: {minted} minted, {below} below threshold")
    })?;
    let not_eligible = suite.metric("wash-trading", "comp_not_eligible")?;
    let wash_minted = suite.metric("wash-trading", "comp_minted_slots")?;
    ensure(not_eligible >= 1.0 && wash_minted == 0.0, || {
        format!("wash-trading: {not_eligible} not eligible, {wash_minted} minted")
    })?;
    let claims = suite.metric("compensation-fraud", "fraud_claims")?;
    let fraud_minted = suite.metric("compensation-fraud", "fraud_claims_minted")?;
    let rejected_everywhere = suite.metric("compensation-fraud", "fraud_claims_rejected_min")?;
    let blacklisted = suite.metric("compensation-fraud", "fraudster_blacklisted_min")?;
    ensure(
        claims >= 1.0 && fraud_minted == 0.0 && rejected_everywhere == claims && blacklisted == 1.0,
        || {
            format!("fraud: {claims} claims, {fraud_minted} minted, {rejected_everywhere} rejected by all, blacklisted {blacklisted}")
        },
    )?;
    Ok(format!(
        "eligible iff >= 10 transactors (2..=12 checked); wash claim served 2; scenario minted {minted}, wash {not_eligible} not eligible; {claims} forged claims rejected by every node, claimant blacklisted"
    ))
}

fn criterion_10(suite: &Suite) -> Check {
    let mut compared = 0;
    for (name, first) in &suite.reports {
        let cfg = builtin(name).map_err(|e| e.to_string())?;
        let again = run_scenario(&cfg).map_err(|e| e.to_string())?;
        ensure(
            first.to_toml() == again.to_toml()
                && first.metrics_csv() == again.metrics_csv()
                && first.events_ndjson() == again.events_ndjson(),
            || format!("{name}: replay differs"),
        )?;
        for skew in [1_500, 40_000] {
            let mut skewed = cfg.clone();
            skewed.clock_skew_max = skew;
            let r = run_scenario(&skewed).map_err(|e| e.to_string())?;
            ensure(r.decisions == first.decisions, || {
                let changed = r
                    .decisions
                    .iter()
                    .zip(&first.decisions)
                    .filter(|(a, b)| a != b)
                    .count();
                format!(
                    "{name}: skew up to {skew} changes {changed} of {} decisions",
                    first.decisions.len()
                )
            })?;
            compared += first.decisions.len();
        }
    }
    Ok(format!("{} scenarios replay byte-identically; {compared} decisions unchanged under two skew levels", suite.reports.len()))
}

// ---------------------------------------------------------------- driver

fn report(n: usize, budget: Duration, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let result = f();
    let took = start.elapsed();
    let slow = took > budget;
    let (tag, detail) = match (&result, slow) {
        (Ok(d), false) => ("PASS", d.clone()),
        (Ok(d), true) => ("FAIL", format!("{d}; took longer than {budget:?}")),
        (Err(e), _) => ("FAIL", e.clone()),
    };
    println!(
        "criterion {n:>2}: {tag} [{:.1}s] {detail}",
        took.as_secs_f64()
    );
    tag == "PASS"
}

fn main() -> ExitCode {
    let min = Duration::from_secs(60);
    let mut ok = true;
    ok &= report(1, min, criterion_1);
    ok &= report(2, min, criterion_2);
    ok &= report(3, 2 * min, criterion_3);
    ok &= report(4, 2 * min, criterion_4);
    ok &= report(5, min, criterion_5);

    let start = Instant::now();
    let suite = match Suite::run() {
        Ok(s) => s,
        Err(e) => {
            println!("scenario suite failed to run: {e}");
            return ExitCode::FAILURE;
        }
    };
    println!(
        "ran {} scenarios in {:.1}s",
        suite.reports.len(),
        start.elapsed().as_secs_f64()
    );
    ok &= report(6, 2 * min, || criterion_6(&suite));
    ok &= report(7, min, || criterion_7(&suite));
    ok &= report(8, min, || criterion_8(&suite));
    ok &= report(9, min, || criterion_9(&suite));
    ok &= report(10, 2 * min, || criterion_10(&suite));
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
