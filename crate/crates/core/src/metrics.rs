//! Plug-in Shannon entropies and interaction metrics over discrete
//! `(s, a, s')` windows.
//!
//! All quantities are in bits. Probabilities are maximum-likelihood
//! frequencies with no bias correction. Counting is done on sorted keys so
//! that summation order, and therefore every floating-point result, is a
//! pure function of the input multiset.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque discrete symbol code.
pub type Symbol = u64;

/// Default threshold (bits) for the agency predicates.
pub const DEFAULT_AGENCY_EPSILON: f64 = 1e-6;

/// Floating-point slack used when clamping quantities that are
/// non-negative in exact arithmetic.
const CLAMP_SLACK: f64 = 1e-9;

/// One discrete transition sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub s: Symbol,
    pub a: Symbol,
    pub sp: Symbol,
}

impl Triple {
    pub fn new(s: Symbol, a: Symbol, sp: Symbol) -> Self {
        Self { s, a, sp }
    }
}

/// Empirical distribution over symbols. Zero-count symbols are never stored.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SymbolDistribution {
    counts: BTreeMap<Symbol, u64>,
    total: u64,
}

impl SymbolDistribution {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_symbols<I: IntoIterator<Item = Symbol>>(symbols: I) -> Self {
        let mut dist = Self::new();
        for s in symbols {
            dist.add(s, 1);
        }
        dist
    }

    pub fn add(&mut self, symbol: Symbol, count: u64) {
        if count == 0 {
            return;
        }
        *self.counts.entry(symbol).or_insert(0) += count;
        self.total += count;
    }

    /// Adds every count of `other` into `self` (multiset union).
    pub fn merge(&mut self, other: &SymbolDistribution) {
        for (&s, &c) in &other.counts {
            self.add(s, c);
        }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn support_size(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, symbol: Symbol) -> u64 {
        self.counts.get(&symbol).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Symbol, u64)> + '_ {
        self.counts.iter().map(|(&s, &c)| (s, c))
    }

    pub fn probability(&self, symbol: Symbol) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.count(symbol) as f64 / self.total as f64
        }
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }
}

/// Shannon entropy in bits, `-Σ p log₂ p` with `0·log 0 = 0`.
pub fn shannon_entropy(dist: &SymbolDistribution) -> Result<f64> {
    if dist.is_empty() {
        return Err(Error::domain("entropy of an empty distribution"));
    }
    Ok(entropy_from_counts(
        dist.counts.values().copied(),
        dist.total,
    ))
}

/// Entropy from a list of positive counts summing to `total`.
pub(crate) fn entropy_from_counts<I: IntoIterator<Item = u64>>(counts: I, total: u64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    let mut acc = 0.0;
    for c in counts {
        if c > 0 {
            let c = c as f64;
            acc += c * c.log2();
        }
    }
    (n.log2() - acc / n).max(0.0)
}

/// Entropy of the multiset of keys, after sorting in place.
fn entropy_of_keys<K: Ord + Copy>(keys: &mut [(K, u64)]) -> f64 {
    keys.sort_unstable_by_key(|&(k, _)| k);
    let total: u64 = keys.iter().map(|&(_, c)| c).sum();
    let mut counts = Vec::new();
    let mut i = 0;
    while i < keys.len() {
        let key = keys[i].0;
        let mut c = 0;
        while i < keys.len() && keys[i].0 == key {
            c += keys[i].1;
            i += 1;
        }
        counts.push(c);
    }
    entropy_from_counts(counts, total)
}

/// Aggregated counts of distinct triples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointCounts {
    cells: Vec<(Triple, u64)>,
    total: u64,
}

impl JointCounts {
    pub fn from_triples(window: &[Triple]) -> Result<Self> {
        if window.is_empty() {
            return Err(Error::domain("empty window"));
        }
        let mut sorted = window.to_vec();
        sorted.sort_unstable();
        let mut cells: Vec<(Triple, u64)> = Vec::new();
        for t in sorted {
            match cells.last_mut() {
                Some((last, c)) if *last == t => *c += 1,
                _ => cells.push((t, 1)),
            }
        }
        Ok(Self {
            cells,
            total: window.len() as u64,
        })
    }

    /// Builds a joint table from `(triple, count)` cells; zero counts are dropped.
    pub fn from_cells<I: IntoIterator<Item = (Triple, u64)>>(cells: I) -> Result<Self> {
        let mut map: BTreeMap<Triple, u64> = BTreeMap::new();
        for (t, c) in cells {
            if c > 0 {
                *map.entry(t).or_insert(0) += c;
            }
        }
        let total = map.values().sum();
        if total == 0 {
            return Err(Error::domain("joint table with zero total count"));
        }
        Ok(Self {
            cells: map.into_iter().collect(),
            total,
        })
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    fn project<K: Ord + Copy>(&self, f: impl Fn(&Triple) -> K) -> f64 {
        let mut keys: Vec<(K, u64)> = self.cells.iter().map(|(t, c)| (f(t), *c)).collect();
        entropy_of_keys(&mut keys)
    }

    /// All marginal and joint entropies needed by the interaction metrics.
    pub fn entropies(&self) -> EntropyProfile {
        EntropyProfile {
            h_s: self.project(|t| t.s),
            h_a: self.project(|t| t.a),
            h_sp: self.project(|t| t.sp),
            h_sa: self.project(|t| (t.s, t.a)),
            h_ssp: self.project(|t| (t.s, t.sp)),
            h_sasp: self.project(|t| *t),
        }
    }
}

/// Marginal and joint entropies of a `(S, A, S')` window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyProfile {
    pub h_s: f64,
    pub h_a: f64,
    pub h_sp: f64,
    pub h_sa: f64,
    pub h_ssp: f64,
    pub h_sasp: f64,
}

impl EntropyProfile {
    /// Total capacity `H(S) + H(A) + H(S')`.
    pub fn capacity(&self) -> f64 {
        self.h_s + self.h_a + self.h_sp
    }

    /// `MI(S,A;S') = H(S,A) + H(S') − H(S,A,S')`, unclamped.
    pub fn mi_raw(&self) -> f64 {
        self.h_sa + self.h_sp - self.h_sasp
    }

    pub fn chain_rule(&self) -> ChainRule {
        ChainRule {
            mi_s_sp: self.h_s + self.h_sp - self.h_ssp,
            mi_a_sp_given_s: self.h_sa + self.h_ssp - self.h_s - self.h_sasp,
        }
    }

    /// `H(A|S)`.
    pub fn action_given_state(&self) -> f64 {
        self.h_sa - self.h_s
    }

    /// Derives the interaction metrics. With `clamp` set, quantities that
    /// are non-negative for a genuine joint distribution are clamped at 0.
    pub fn metrics(&self, clamp: bool) -> InteractionMetrics {
        let capacity = self.capacity();
        let mi_raw = self.mi_raw();
        let (mi, h_f, h_b) = if capacity <= 0.0 {
            (0.0, 0.0, 0.0)
        } else if clamp {
            (
                clamp_small(mi_raw),
                clamp_small(self.h_sasp - self.h_sa),
                clamp_small(self.h_sasp - self.h_sp),
            )
        } else {
            (mi_raw, self.h_sasp - self.h_sa, self.h_sasp - self.h_sp)
        };
        let p = if capacity > 0.0 { mi / capacity } else { 0.0 };
        InteractionMetrics {
            window_index: 0,
            t_start: 0,
            t_end: 0,
            h_s: self.h_s,
            h_a: self.h_a,
            h_sp: self.h_sp,
            h_sa: self.h_sa,
            h_ssp: self.h_ssp,
            h_sasp: self.h_sasp,
            mi,
            mi_raw,
            capacity,
            p,
            h_f,
            h_b,
            dh: h_f - h_b,
        }
    }
}

fn clamp_small(x: f64) -> f64 {
    if x < 0.0 && x > -CLAMP_SLACK {
        0.0
    } else {
        x.max(0.0)
    }
}

/// Per-window interaction metrics, all in bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionMetrics {
    pub window_index: usize,
    pub t_start: usize,
    pub t_end: usize,
    pub h_s: f64,
    pub h_a: f64,
    pub h_sp: f64,
    pub h_sa: f64,
    pub h_ssp: f64,
    /// `H(S, A, S')`.
    pub h_sasp: f64,
    pub mi: f64,
    /// MI before clamping; kept for debugging cancellation.
    pub mi_raw: f64,
    pub capacity: f64,
    pub p: f64,
    pub h_f: f64,
    pub h_b: f64,
    pub dh: f64,
}

impl InteractionMetrics {
    pub fn with_window(mut self, index: usize, t_start: usize, t_end: usize) -> Self {
        self.window_index = index;
        self.t_start = t_start;
        self.t_end = t_end;
        self
    }

    /// Value of a named detector metric.
    pub fn get(&self, metric: crate::detector::Metric) -> Option<f64> {
        use crate::detector::Metric;
        match metric {
            Metric::P => Some(self.p),
            Metric::Hf => Some(self.h_f),
            Metric::Hb => Some(self.h_b),
            Metric::DH => Some(self.dh),
            Metric::Reward => None,
        }
    }
}

/// Computes every interaction metric of a window of triples.
pub fn interaction_metrics(window: &[Triple]) -> Result<InteractionMetrics> {
    Ok(JointCounts::from_triples(window)?.entropies().metrics(true))
}

/// Chain-rule split `MI(S,A;S') = MI(S;S') + MI(A;S'|S)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainRule {
    pub mi_s_sp: f64,
    pub mi_a_sp_given_s: f64,
}

pub fn chain_rule_decompose(window: &[Triple]) -> Result<ChainRule> {
    Ok(JointCounts::from_triples(window)?.entropies().chain_rule())
}

/// The three agency conditions evaluated on one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgencyPredicates {
    /// `H(A|S) > ε`.
    pub choice: bool,
    /// `MI(A;S'|S) > ε`.
    pub effect: bool,
    /// `|ΔH| > ε`.
    pub asymmetry: bool,
}

pub fn agency_predicates(window: &[Triple], epsilon: f64) -> Result<AgencyPredicates> {
    let profile = JointCounts::from_triples(window)?.entropies();
    Ok(predicates_from_profile(&profile, epsilon))
}

pub(crate) fn predicates_from_profile(profile: &EntropyProfile, epsilon: f64) -> AgencyPredicates {
    let metrics = profile.metrics(true);
    AgencyPredicates {
        choice: profile.action_given_state() > epsilon,
        effect: profile.chain_rule().mi_a_sp_given_s > epsilon,
        asymmetry: metrics.dh.abs() > epsilon,
    }
}
