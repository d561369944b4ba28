//! Sliding-window segmentation and per-window metric series.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{interaction_metrics, InteractionMetrics, Symbol, Triple};

/// Window width `W` and stride `δ`, both in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub width: usize,
    pub stride: usize,
}

impl WindowSpec {
    pub fn new(width: usize, stride: usize) -> Result<Self> {
        let spec = Self { width, stride };
        spec.validate()?;
        Ok(spec)
    }

    /// W = 300, δ = 75.
    pub fn pendulum() -> Self {
        Self {
            width: 300,
            stride: 75,
        }
    }

    /// W = 300, δ = 50.
    pub fn agent() -> Self {
        Self {
            width: 300,
            stride: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.stride > self.width {
            return Err(Error::invalid(format!(
                "window stride must satisfy 1 <= stride <= width (got width {}, stride {})",
                self.width, self.stride
            )));
        }
        Ok(())
    }

    /// `floor((n − W)/δ) + 1`; the trailing partial window is discarded.
    pub fn count(&self, n: usize) -> Result<usize> {
        self.validate()?;
        if n < self.width {
            return Err(Error::StreamTooShort {
                len: n,
                width: self.width,
            });
        }
        Ok((n - self.width) / self.stride + 1)
    }

    pub fn range(&self, index: usize) -> Range<usize> {
        let start = index * self.stride;
        start..start + self.width
    }

    /// Index of the first window containing sample `onset` or any later sample.
    pub fn first_window_after(&self, onset: usize) -> usize {
        if onset < self.width {
            0
        } else {
            (onset - self.width) / self.stride + 1
        }
    }

    /// Number of windows that end at or before sample `onset`.
    pub fn windows_before(&self, onset: usize) -> usize {
        self.first_window_after(onset)
    }
}

/// Index ranges of every full window over a stream of length `n`.
pub fn sliding_windows(n: usize, spec: &WindowSpec) -> Result<Vec<Range<usize>>> {
    let count = spec.count(n)?;
    Ok((0..count).map(|i| spec.range(i)).collect())
}

/// Ordered per-window metrics of one stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub spec: WindowSpec,
    pub windows: Vec<InteractionMetrics>,
}

impl MetricSeries {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn values(&self, f: impl Fn(&InteractionMetrics) -> f64) -> Vec<f64> {
        self.windows.iter().map(f).collect()
    }
}

/// Computes metrics for every window of `triples`. Windows are evaluated in
/// parallel; the output order follows the window index.
pub fn metric_series(triples: &[Triple], spec: &WindowSpec) -> Result<MetricSeries> {
    let ranges = sliding_windows(triples.len(), spec)?;
    let windows = ranges
        .into_par_iter()
        .enumerate()
        .map(|(i, r)| {
            interaction_metrics(&triples[r.clone()]).map(|m| m.with_window(i, r.start, r.end))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricSeries {
        spec: *spec,
        windows,
    })
}

/// Extremes of the P bound and the entropy identities over a set of
/// windows. Residuals are absolute, in bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowAudit {
    pub windows: usize,
    pub min_p: f64,
    pub max_p: f64,
    /// `|MI(S;S') + MI(A;S'|S) − MI(S,A;S')|`.
    pub max_chain_residual: f64,
    /// `|ΔH − (H(S') − H(S,A))|`.
    pub max_dh_residual: f64,
}

impl Default for WindowAudit {
    fn default() -> Self {
        Self {
            windows: 0,
            min_p: f64::INFINITY,
            max_p: f64::NEG_INFINITY,
            max_chain_residual: 0.0,
            max_dh_residual: 0.0,
        }
    }
}

impl WindowAudit {
    pub fn of(series: &MetricSeries) -> Self {
        let mut a = Self::default();
        series.windows.iter().for_each(|m| a.observe(m));
        a
    }

    pub fn observe(&mut self, m: &InteractionMetrics) {
        let mi_s_sp = m.h_s + m.h_sp - m.h_ssp;
        let mi_a_sp_s = m.h_sa + m.h_ssp - m.h_s - m.h_sasp;
        self.windows += 1;
        self.min_p = self.min_p.min(m.p);
        self.max_p = self.max_p.max(m.p);
        self.max_chain_residual = self
            .max_chain_residual
            .max((mi_s_sp + mi_a_sp_s - m.mi_raw).abs());
        self.max_dh_residual = self.max_dh_residual.max((m.dh - (m.h_sp - m.h_sa)).abs());
    }

    pub fn merge(&mut self, other: &WindowAudit) {
        self.windows += other.windows;
        self.min_p = self.min_p.min(other.min_p);
        self.max_p = self.max_p.max(other.max_p);
        self.max_chain_residual = self.max_chain_residual.max(other.max_chain_residual);
        self.max_dh_residual = self.max_dh_residual.max(other.max_dh_residual);
    }

    /// `P ∈ [0, 0.5 + tol]` and both residuals within `tol`.
    pub fn holds(&self, tol: f64) -> bool {
        self.windows > 0
            && self.min_p >= 0.0
            && self.max_p <= 0.5 + tol
            && self.max_chain_residual <= tol
            && self.max_dh_residual <= tol
    }
}

/// Builds `(s_t, a_t, s_{t+1})` triples from a state sequence. Without
/// actions every triple carries the constant action symbol 0.
pub fn transitions(states: &[Symbol], actions: Option<&[Symbol]>) -> Result<Vec<Triple>> {
    if states.len() < 2 {
        return Err(Error::invalid(
            "need at least two states to form a transition",
        ));
    }
    if let Some(a) = actions {
        if a.len() < states.len() - 1 {
            return Err(Error::invalid(format!(
                "{} actions for {} transitions",
                a.len(),
                states.len() - 1
            )));
        }
    }
    Ok(states
        .windows(2)
        .enumerate()
        .map(|(t, w)| Triple::new(w[0], actions.map_or(0, |a| a[t]), w[1]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_counts() {
        let spec = WindowSpec::agent();
        assert_eq!(spec.count(50_000).unwrap(), 995);
        assert_eq!(spec.count(300).unwrap(), 1);
        assert_eq!(spec.count(300 + 50 - 1).unwrap(), 1);
        assert_eq!(spec.count(350).unwrap(), 2);
        let err = spec.count(299).unwrap_err();
        assert!(matches!(
            err,
            Error::StreamTooShort {
                len: 299,
                width: 300
            }
        ));
        assert!(WindowSpec::new(10, 11).is_err());
        assert!(WindowSpec::new(10, 0).is_err());
    }

    #[test]
    fn window_ranges_follow_stride() {
        let spec = WindowSpec::new(4, 2).unwrap();
        let r = sliding_windows(9, &spec).unwrap();
        assert_eq!(r, vec![0..4, 2..6, 4..8]);
    }

    #[test]
    fn onset_window_bookkeeping() {
        let spec = WindowSpec::agent();
        assert_eq!(spec.first_window_after(14_000), 275);
        let r = spec.range(274);
        assert!(r.end <= 14_000);
        assert!(spec.range(275).end > 14_000);
        assert_eq!(spec.first_window_after(10), 0);
    }

    #[test]
    fn constant_stream_is_degenerate_everywhere() {
        let triples = vec![Triple::new(3, 0, 3); 40];
        let s = metric_series(&triples, &WindowSpec::new(10, 5).unwrap()).unwrap();
        assert_eq!(s.len(), 7);
        assert!(s.windows.iter().all(|m| m.p == 0.0));
    }

    #[test]
    fn series_entries_match_independent_windows() {
        let triples: Vec<Triple> = (0..200u64)
            .map(|t| Triple::new(t * 7 % 5, t % 3, (t * 7 + 7) % 5))
            .collect();
        let spec = WindowSpec::new(30, 7).unwrap();
        let s = metric_series(&triples, &spec).unwrap();
        for m in &s.windows {
            let again = interaction_metrics(&triples[m.t_start..m.t_end]).unwrap();
            assert_eq!(again.p.to_bits(), m.p.to_bits());
            assert_eq!(again.dh.to_bits(), m.dh.to_bits());
            assert_eq!(m.t_start, m.window_index * spec.stride);
        }
    }

    #[test]
    fn transitions_shift_states() {
        let t = transitions(&[1, 2, 3], None).unwrap();
        assert_eq!(t, vec![Triple::new(1, 0, 2), Triple::new(2, 0, 3)]);
        let t = transitions(&[1, 2, 3], Some(&[5, 6])).unwrap();
        assert_eq!(t[1], Triple::new(2, 6, 3));
        assert!(transitions(&[1], None).is_err());
    }
}
