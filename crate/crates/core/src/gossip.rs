//! Epidemic spreading of witness reports and its logistic model.
//!
//! Under homogeneous mixing the informed fraction follows
//! `w(t) = w0·e^{βft} / (1 − w0 + w0·e^{βft})`, the solution of
//! `dw/dt = βf·w(1 − w)` with `w(0) = w0`.

use std::fmt::Write as _;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphnet::Graph;

pub const DEFAULT_HOP_CAP: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum GossipError {
    #[error("need 1 <= w0_count <= n, got w0_count={w0_count} n={n}")]
    BadSeedCount { w0_count: usize, n: usize },
    #[error("fanout must be at least 1")]
    ZeroFanout,
    #[error("beta must lie in [0, 1], got {0}")]
    BadBeta(f64),
    #[error("beta * fanout must be positive")]
    ZeroRate,
    #[error("need at least 3 samples with w < 0.3, have {0}")]
    InsufficientSamples(usize),
    #[error("topology has {got} nodes, expected {want}")]
    TopologySize { got: usize, want: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GossipParams {
    pub n: usize,
    pub w0_count: usize,
    pub fanout: usize,
    pub beta: f64,
}

impl GossipParams {
    pub fn validate(&self) -> Result<(), GossipError> {
        if self.w0_count == 0 || self.w0_count > self.n {
            return Err(GossipError::BadSeedCount {
                w0_count: self.w0_count,
                n: self.n,
            });
        }
        if self.fanout == 0 {
            return Err(GossipError::ZeroFanout);
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(GossipError::BadBeta(self.beta));
        }
        Ok(())
    }

    pub fn w0(&self) -> f64 {
        self.w0_count as f64 / self.n as f64
    }

    /// β·f.
    pub fn rate(&self) -> f64 {
        self.beta * self.fanout as f64
    }
}

pub fn analytic_fraction(t: f64, params: &GossipParams) -> f64 {
    let w0 = params.w0();
    if w0 >= 1.0 {
        return 1.0;
    }
    // Written in terms of e^{-rt} so large t does not overflow.
    let decay = (-params.rate() * t).exp();
    w0 / (w0 + (1.0 - w0) * decay)
}

/// τ = 1/(βf).
pub fn characteristic_time(params: &GossipParams) -> Result<f64, GossipError> {
    let r = params.rate();
    if r <= 0.0 {
        return Err(GossipError::ZeroRate);
    }
    Ok(1.0 / r)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageCurve {
    /// (time, informed fraction), one sample per hop starting at t = 0.
    pub samples: Vec<(f64, f64)>,
    /// Spreading stopped before everyone was informed.
    pub plateaued: bool,
    pub pushes: u64,
    /// Pushes that landed on an already-informed node.
    pub wasted_pushes: u64,
}

impl CoverageCurve {
    pub fn final_fraction(&self) -> f64 {
        self.samples.last().map(|s| s.1).unwrap_or(0.0)
    }

    pub fn is_monotone(&self) -> bool {
        self.samples.windows(2).all(|w| w[1].1 >= w[0].1)
    }

    /// CSV with the model curve alongside.
    pub fn to_csv(&self, params: &GossipParams) -> String {
        let mut out = String::from("t,w_empirical,w_analytic\n");
        for &(t, w) in &self.samples {
            writeln!(out, "{t},{w:.6},{:.6}", analytic_fraction(t, params)).expect("string write");
        }
        out
    }
}

/// How pushes are timed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GossipMode {
    /// Every holder pushes to `fanout` distinct peers once per hop, and new
    /// holders start pushing on the next hop.
    Synchronous,
    /// Each holder pushes at rate `fanout` per unit time to one random
    /// peer; the process is sampled at unit hops.
    #[default]
    Continuous,
}

/// Who a holder may push to.
#[derive(Debug, Clone, Copy)]
pub enum Mixing<'a> {
    Homogeneous,
    Topology(&'a Graph),
}

struct Spread<'a> {
    n: usize,
    informed: Vec<bool>,
    holders: Vec<usize>,
    mixing: Mixing<'a>,
    pushes: u64,
    wasted: u64,
}

impl Spread<'_> {
    fn fraction(&self) -> f64 {
        self.holders.len() as f64 / self.n as f64
    }

    fn push<R: Rng + ?Sized>(&mut self, to: usize, beta: f64, rng: &mut R, fresh: &mut Vec<usize>) {
        self.pushes += 1;
        if self.informed[to] {
            self.wasted += 1;
            return;
        }
        if rng.gen::<f64>() < beta {
            self.informed[to] = true;
            fresh.push(to);
        }
    }

    fn random_peer<R: Rng + ?Sized>(&self, from: usize, rng: &mut R) -> Option<usize> {
        match self.mixing {
            Mixing::Homogeneous => {
                if self.n < 2 {
                    return None;
                }
                let i = rng.gen_range(0..self.n - 1);
                Some(if i >= from { i + 1 } else { i })
            }
            Mixing::Topology(g) => {
                let d = g.degree(from);
                (d > 0).then(|| {
                    g.neighbors(from)
                        .nth(rng.gen_range(0..d))
                        .expect("index < degree")
                })
            }
        }
    }

    fn peers<R: Rng + ?Sized>(&self, from: usize, k: usize, rng: &mut R) -> Vec<usize> {
        match self.mixing {
            Mixing::Homogeneous => {
                let k = k.min(self.n - 1);
                index::sample(rng, self.n - 1, k)
                    .into_iter()
                    .map(|i| if i >= from { i + 1 } else { i })
                    .collect()
            }
            Mixing::Topology(g) => {
                let nb: Vec<usize> = g.neighbors(from).collect();
                let k = k.min(nb.len());
                index::sample(rng, nb.len(), k)
                    .into_iter()
                    .map(|i| nb[i])
                    .collect()
            }
        }
    }

    /// Whether any uninformed node can still be reached.
    fn can_grow(&self, beta: f64) -> bool {
        if beta <= 0.0 || self.holders.len() == self.n {
            return false;
        }
        match self.mixing {
            Mixing::Homogeneous => true,
            Mixing::Topology(g) => self
                .holders
                .iter()
                .any(|&h| g.neighbors(h).any(|v| !self.informed[v])),
        }
    }
}

/// Simulates one spreading run. `seeds` defaults to the first `w0_count`
/// nodes; under homogeneous mixing the labels are exchangeable.
pub fn simulate_gossip<R: Rng + ?Sized>(
    params: &GossipParams,
    mode: GossipMode,
    mixing: Mixing<'_>,
    seeds: Option<&[usize]>,
    rng: &mut R,
    hop_cap: usize,
) -> Result<CoverageCurve, GossipError> {
    params.validate()?;
    if let Mixing::Topology(g) = mixing {
        if g.node_count() != params.n {
            return Err(GossipError::TopologySize {
                got: g.node_count(),
                want: params.n,
            });
        }
    }
    let mut s = Spread {
        n: params.n,
        informed: vec![false; params.n],
        holders: Vec::new(),
        mixing,
        pushes: 0,
        wasted: 0,
    };
    let default_seeds: Vec<usize> = (0..params.w0_count).collect();
    for &v in seeds.unwrap_or(&default_seeds) {
        if !s.informed[v] {
            s.informed[v] = true;
            s.holders.push(v);
        }
    }
    let mut samples = vec![(0.0, s.fraction())];
    let mut hop = 0usize;
    // Continuous mode carries the time of the next push across hops.
    let mut clock = 0.0f64;
    while s.can_grow(params.beta) && hop < hop_cap {
        hop += 1;
        let mut fresh = Vec::new();
        match mode {
            GossipMode::Synchronous => {
                for i in 0..s.holders.len() {
                    let h = s.holders[i];
                    for to in s.peers(h, params.fanout, rng) {
                        s.push(to, params.beta, rng, &mut fresh);
                    }
                }
                s.holders.extend(fresh);
            }
            GossipMode::Continuous => {
                let end = hop as f64;
                loop {
                    let total_rate = s.holders.len() as f64 * params.fanout as f64;
                    clock += Exp::new(total_rate).expect("positive rate").sample(rng);
                    if clock > end {
                        // Memorylessness: restart the wait from the boundary.
                        clock = end;
                        break;
                    }
                    let h = s.holders[rng.gen_range(0..s.holders.len())];
                    if let Some(to) = s.random_peer(h, rng) {
                        s.push(to, params.beta, rng, &mut fresh);
                        s.holders.append(&mut fresh);
                    }
                    if s.holders.len() == s.n {
                        break;
                    }
                }
            }
        }
        samples.push((hop as f64, s.fraction()));
    }
    Ok(CoverageCurve {
        plateaued: s.holders.len() < s.n,
        samples,
        pushes: s.pushes,
        wasted_pushes: s.wasted,
    })
}

/// Pointwise mean of several curves, each padded with its final value.
pub fn mean_curve(curves: &[CoverageCurve]) -> CoverageCurve {
    let len = curves.iter().map(|c| c.samples.len()).max().unwrap_or(0);
    let samples = (0..len)
        .map(|i| {
            let sum: f64 = curves
                .iter()
                .map(|c| c.samples.get(i).or(c.samples.last()).map_or(0.0, |s| s.1))
                .sum();
            (i as f64, sum / curves.len() as f64)
        })
        .collect();
    CoverageCurve {
        samples,
        plateaued: curves.iter().any(|c| c.plateaued),
        pushes: curves.iter().map(|c| c.pushes).sum(),
        wasted_pushes: curves.iter().map(|c| c.wasted_pushes).sum(),
    }
}

/// Least-squares slope of logit(w) against t over samples with 0 < w < 0.3.
pub fn fit_growth_rate(curve: &CoverageCurve) -> Result<f64, GossipError> {
    let pts: Vec<(f64, f64)> = curve
        .samples
        .iter()
        .filter(|(_, w)| *w > 0.0 && *w < 0.3)
        .map(|&(t, w)| (t, (w / (1.0 - w)).ln()))
        .collect();
    if pts.len() < 3 {
        return Err(GossipError::InsufficientSamples(pts.len()));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    Ok(sxy / sxx)
}

/// First time the curve reaches `target`, interpolating linearly between
/// samples.
pub fn time_to_fraction(curve: &CoverageCurve, target: f64) -> Option<f64> {
    let s = &curve.samples;
    if s.first()?.1 >= target {
        return Some(s[0].0);
    }
    s.windows(2).find(|w| w[1].1 >= target).map(|w| {
        let ((t0, w0), (t1, w1)) = (w[0], w[1]);
        t0 + (t1 - t0) * (target - w0) / (w1 - w0)
    })
}

/// Largest |empirical − model| over samples whose empirical fraction lies
/// in [w0, upper].
pub fn max_deviation(curve: &CoverageCurve, params: &GossipParams, upper: f64) -> f64 {
    curve
        .samples
        .iter()
        .filter(|(_, w)| *w >= params.w0() && *w <= upper)
        .map(|&(t, w)| (w - analytic_fraction(t, params)).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn p(n: usize, w0: usize, f: usize, beta: f64) -> GossipParams {
        GossipParams {
            n,
            w0_count: w0,
            fanout: f,
            beta,
        }
    }

    #[test]
    fn analytic_examples() {
        let q = p(100, 50, 1, 1.0);
        assert_eq!(analytic_fraction(0.0, &q), 0.5);
        assert!((analytic_fraction(3f64.ln(), &q) - 0.75).abs() < 1e-12);
        assert!(analytic_fraction(1e6, &q) > 1.0 - 1e-12);
        let r = p(1000, 10, 3, 0.5);
        assert!((analytic_fraction(0.0, &r) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn analytic_is_monotone() {
        let q = p(1000, 10, 3, 0.5);
        let mut last = 0.0;
        for i in 0..1000 {
            let w = analytic_fraction(i as f64 * 0.01, &q);
            assert!(w >= last);
            last = w;
        }
    }

    #[test]
    fn characteristic_time_examples() {
        assert_eq!(characteristic_time(&p(10, 1, 2, 1.0)).unwrap(), 0.5);
        assert_eq!(characteristic_time(&p(10, 1, 4, 0.25)).unwrap(), 1.0);
        let a = characteristic_time(&p(10, 1, 3, 0.5)).unwrap();
        let b = characteristic_time(&p(10, 1, 6, 0.5)).unwrap();
        assert!((a - 2.0 * b).abs() < 1e-12);
        assert_eq!(
            characteristic_time(&p(10, 1, 3, 0.0)),
            Err(GossipError::ZeroRate)
        );
    }

    #[test]
    fn everyone_starts_informed() {
        let q = p(20, 20, 2, 0.5);
        let mut r = stream(1, "g", 0);
        for mode in [GossipMode::Synchronous, GossipMode::Continuous] {
            let c = simulate_gossip(&q, mode, Mixing::Homogeneous, None, &mut r, 100).unwrap();
            assert!(c.samples.iter().all(|s| s.1 == 1.0));
            assert!(!c.plateaued);
        }
    }

    #[test]
    fn full_fanout_covers_in_one_hop() {
        let q = p(50, 1, 49, 1.0);
        let mut r = stream(2, "g", 0);
        let c = simulate_gossip(
            &q,
            GossipMode::Synchronous,
            Mixing::Homogeneous,
            None,
            &mut r,
            100,
        )
        .unwrap();
        assert_eq!(c.samples, vec![(0.0, 0.02), (1.0, 1.0)]);
    }

    #[test]
    fn disconnected_topology_plateaus() {
        let g = Graph::from_edges(6, [(0, 1), (1, 2), (3, 4), (4, 5)]).unwrap();
        let q = p(6, 1, 2, 1.0);
        let mut r = stream(3, "g", 0);
        for mode in [GossipMode::Synchronous, GossipMode::Continuous] {
            let c = simulate_gossip(&q, mode, Mixing::Topology(&g), None, &mut r, 1000).unwrap();
            assert!(c.plateaued);
            assert_eq!(c.final_fraction(), 0.5);
            assert!(c.is_monotone());
        }
    }

    #[test]
    fn zero_beta_is_flat() {
        let q = p(100, 5, 3, 0.0);
        let mut r = stream(3, "g", 0);
        let c = simulate_gossip(
            &q,
            GossipMode::Continuous,
            Mixing::Homogeneous,
            None,
            &mut r,
            10,
        )
        .unwrap();
        assert!(c.plateaued);
        let flat = CoverageCurve {
            samples: (0..6).map(|t| (t as f64, 0.05)).collect(),
            plateaued: true,
            pushes: 0,
            wasted_pushes: 0,
        };
        assert_eq!(fit_growth_rate(&flat).unwrap(), 0.0);
    }

    #[test]
    fn fit_recovers_model_rate() {
        let q = p(10_000, 1, 2, 0.4);
        let curve = CoverageCurve {
            samples: (0..40)
                .map(|i| {
                    let t = i as f64 * 0.25;
                    (t, analytic_fraction(t, &q))
                })
                .collect(),
            plateaued: false,
            pushes: 0,
            wasted_pushes: 0,
        };
        assert!((fit_growth_rate(&curve).unwrap() - 0.8).abs() < 1e-9);
        let short = CoverageCurve {
            samples: curve.samples[..2].to_vec(),
            ..curve.clone()
        };
        assert_eq!(
            fit_growth_rate(&short),
            Err(GossipError::InsufficientSamples(2))
        );
    }

    #[test]
    fn runs_are_monotone_and_complete() {
        let q = p(300, 3, 2, 0.7);
        for seed in 0..10 {
            for mode in [GossipMode::Synchronous, GossipMode::Continuous] {
                let mut r = stream(seed, "g", 0);
                let c =
                    simulate_gossip(&q, mode, Mixing::Homogeneous, None, &mut r, DEFAULT_HOP_CAP)
                        .unwrap();
                assert!(c.is_monotone());
                assert!(!c.plateaued);
                assert_eq!(c.final_fraction(), 1.0);
                assert!(c.wasted_pushes <= c.pushes);
            }
        }
    }

    #[test]
    fn interpolated_crossing() {
        let c = CoverageCurve {
            samples: vec![(0.0, 0.1), (1.0, 0.5), (2.0, 0.9)],
            plateaued: false,
            pushes: 0,
            wasted_pushes: 0,
        };
        assert_eq!(time_to_fraction(&c, 0.7), Some(1.5));
        assert_eq!(time_to_fraction(&c, 0.05), Some(0.0));
        assert_eq!(time_to_fraction(&c, 0.95), None);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let q = p(10, 1, 9, 1.0);
        let mut r = stream(1, "g", 0);
        let c = simulate_gossip(
            &q,
            GossipMode::Synchronous,
            Mixing::Homogeneous,
            None,
            &mut r,
            10,
        )
        .unwrap();
        let csv = c.to_csv(&q);
        assert!(csv.starts_with("t,w_empirical,w_analytic\n0,0.100000,0.100000\n"));
        assert_eq!(csv.lines().count(), c.samples.len() + 1);
    }

    #[test]
    fn bad_params() {
        assert!(p(10, 0, 1, 0.5).validate().is_err());
        assert!(p(10, 11, 1, 0.5).validate().is_err());
        assert!(p(10, 1, 0, 0.5).validate().is_err());
        assert!(p(10, 1, 1, 1.5).validate().is_err());
    }
}
