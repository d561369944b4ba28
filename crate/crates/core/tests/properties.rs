use std::f64::consts::TAU;

use bipred::detector::{detect, ensemble_detect, fit_baseline, Metric, Tracks, IDT_METRICS};
use bipred::discretize::{circular_bin, compose_symbols};
use bipred::metrics::{interaction_metrics, JointCounts, Triple};
use bipred::windowing::{metric_series, WindowAudit, WindowSpec};
use proptest::prelude::*;

const TOL: f64 = 1e-9;

fn joint_table() -> impl Strategy<Value = Vec<(Triple, u64)>> {
    (1u64..=6, 1u64..=6, 1u64..=6).prop_flat_map(|(ns, na, nsp)| {
        let n = (ns * na * nsp) as usize;
        prop::collection::vec(0u64..20, n).prop_filter_map("zero table", move |counts| {
            if counts.iter().all(|&c| c == 0) {
                return None;
            }
            let mut cells = Vec::with_capacity(n);
            let mut i = 0;
            for s in 0..ns {
                for a in 0..na {
                    for sp in 0..nsp {
                        cells.push((Triple::new(s, a, sp), counts[i]));
                        i += 1;
                    }
                }
            }
            Some(cells)
        })
    })
}

fn stream(max_sym: u64, len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Triple>> {
    prop::collection::vec((0..max_sym, 0..max_sym, 0..max_sym), len).prop_map(|v| {
        v.into_iter()
            .map(|(s, a, sp)| Triple::new(s, a, sp))
            .collect()
    })
}

proptest! {
    #[test]
    fn p_is_bounded_and_identities_hold(cells in joint_table()) {
        let profile = JointCounts::from_cells(cells).unwrap().entropies();
        let m = profile.metrics(true);
        prop_assert!(m.p >= 0.0 && m.p <= 0.5 + TOL, "P = {}", m.p);
        for h in [m.h_s, m.h_a, m.h_sp, m.h_sa, m.h_sasp, m.h_f, m.h_b] {
            prop_assert!(h >= -TOL);
        }
        prop_assert!((m.dh - (m.h_sp - m.h_sa)).abs() < TOL);
        let cr = profile.chain_rule();
        prop_assert!((cr.mi_s_sp + cr.mi_a_sp_given_s - m.mi_raw).abs() < TOL);
        prop_assert!(m.mi <= (m.h_s + m.h_a).min(m.h_sp) + TOL);
        let mut audit = WindowAudit::default();
        audit.observe(&m);
        prop_assert!(audit.holds(TOL));
    }

    #[test]
    fn metrics_are_invariant_under_relabeling(w in stream(5, 1..80), offset in 1u64..1000, flip in any::<bool>()) {
        // Bijective renaming of each alphabet separately.
        let rename = |x: u64| if flip { 4 - x + offset } else { x * 7 + offset };
        let relabeled: Vec<Triple> = w.iter().map(|t| Triple::new(rename(t.s), (t.a + 3) * 11, rename(t.sp) + 500)).collect();
        let a = interaction_metrics(&w).unwrap();
        let b = interaction_metrics(&relabeled).unwrap();
        for (x, y) in [(a.p, b.p), (a.h_f, b.h_f), (a.h_b, b.h_b), (a.dh, b.dh), (a.capacity, b.capacity)] {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_ignore_order_within_a_window(w in stream(4, 2..60), rot in 0usize..60) {
        let mut shifted = w.clone();
        let r = rot % w.len();
        shifted.rotate_left(r);
        let a = interaction_metrics(&w).unwrap();
        let b = interaction_metrics(&shifted).unwrap();
        prop_assert_eq!(a.p.to_bits(), b.p.to_bits());
        prop_assert_eq!(a.dh.to_bits(), b.dh.to_bits());
    }

    #[test]
    fn shifting_the_stream_by_the_stride_shifts_the_series(w in stream(3, 40..120), width in 5usize..20, stride in 1usize..6) {
        let spec = WindowSpec::new(width, stride).unwrap();
        prop_assume!(w.len() >= width + stride);
        let full = metric_series(&w, &spec).unwrap();
        let tail = metric_series(&w[stride..], &spec).unwrap();
        prop_assert_eq!(full.len(), tail.len() + 1);
        for (i, m) in tail.windows.iter().enumerate() {
            prop_assert_eq!(m.p.to_bits(), full.windows[i + 1].p.to_bits());
            prop_assert_eq!(m.dh.to_bits(), full.windows[i + 1].dh.to_bits());
        }
        // Any single window recomputed alone matches its series entry.
        let j = full.len() / 2;
        let r = spec.range(j);
        prop_assert_eq!(interaction_metrics(&w[r]).unwrap().p.to_bits(), full.windows[j].p.to_bits());
    }

    #[test]
    fn circular_bin_ignores_full_turns(angles in prop::collection::vec(-10.0f64..10.0, 1..50), n in -5i32..5, k in 2u32..32) {
        let shifted: Vec<f64> = angles.iter().map(|a| a + f64::from(n) * TAU).collect();
        let a = circular_bin(&angles, k, 0.0);
        let b = circular_bin(&shifted, k, 0.0);
        // Values within rounding of an arc edge may fall either side.
        for ((x, y), theta) in a.iter().zip(&b).zip(&angles) {
            let pos = theta.rem_euclid(TAU) / TAU * f64::from(k);
            let near_edge = (pos - pos.round()).abs() < 1e-9;
            prop_assert!(x == y || near_edge);
        }
    }

    #[test]
    fn compose_is_injective(codes in prop::collection::vec((0u32..3, 0u32..5, 0u32..2), 1..60)) {
        let (a, rest): (Vec<u32>, Vec<(u32, u32)>) = codes.iter().map(|&(x, y, z)| (x, (y, z))).unzip();
        let (b, c): (Vec<u32>, Vec<u32>) = rest.into_iter().unzip();
        let s = compose_symbols(&[(&a, 3), (&b, 5), (&c, 2)]).unwrap();
        prop_assert_eq!(s.alphabet_size, 30);
        for i in 0..codes.len() {
            for j in 0..codes.len() {
                prop_assert_eq!(codes[i] == codes[j], s.symbols[i] == s.symbols[j]);
            }
            prop_assert!(s.symbols[i] < 30);
        }
    }

    #[test]
    fn detection_is_monotone_in_k(
        noise in prop::collection::vec(-1.0f64..1.0, 120),
        shift in 0.0f64..3.0,
        slope in 0.0f64..0.1,
    ) {
        let onset = 60;
        let mut tracks = Tracks::new();
        for (mi, metric) in IDT_METRICS.iter().enumerate() {
            let v: Vec<f64> = noise
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    let drift = if i >= onset { shift + slope * (i - onset) as f64 } else { 0.0 };
                    x * (1.0 + mi as f64 * 0.3) + drift
                })
                .collect();
            tracks.insert(*metric, v).unwrap();
        }
        let base = fit_baseline(&tracks, 0..onset, 0.5).unwrap();
        let strict = detect(&tracks, &base, 3.0, onset).unwrap();
        let loose = detect(&tracks, &base, 2.0, onset).unwrap();
        for (s, l) in strict.iter().zip(&loose) {
            prop_assert_eq!(s.metric, l.metric);
            if let Some(ls) = s.latency_windows {
                prop_assert!(l.latency_windows.is_some_and(|ll| ll <= ls));
            }
        }
        let e = ensemble_detect(&strict);
        for s in &strict {
            if s.detected() && IDT_METRICS.contains(&s.metric) {
                prop_assert!(e.detected && e.latency_windows <= s.latency_windows);
            }
        }
        prop_assert!(strict.iter().all(|ev| ev.metric != Metric::Reward));
    }
}
