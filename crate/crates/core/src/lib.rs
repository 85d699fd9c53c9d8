//! Simulator and reference implementation of a parallel-chains payment
//! network: dual-signed per-account ledgers, witness quorums picked by
//! fluid community detection, veto-based consensus, epidemic report
//! gossip, and the partition, Sybil and privacy defenses around them.

pub mod consensus;
pub mod crypto;
pub mod fluid;
pub mod gossip;
pub mod graphnet;
pub mod incentives;
pub mod ledger;
pub mod netsim;
pub mod privacy;
pub mod rng;
pub mod scenarios;

/// Simulated time in milliseconds.
pub type SimTime = u64;
