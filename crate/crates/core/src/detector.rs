//! Baseline calibration and k-sigma drift detection.
//!
//! A baseline is fitted on pre-onset windows; each metric is then scanned
//! from the onset window for the first two-sided excursion `|z| > k`. The
//! ensemble verdict is the union over the four interaction components.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::discretize::mean_std;
use crate::error::{Error, Result};
use crate::windowing::MetricSeries;

/// Default detection multiplier.
pub const DEFAULT_K: f64 = 3.0;
/// Default coefficient-of-variation ceiling for a stable reward baseline.
pub const DEFAULT_STABILITY_CV: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    P,
    #[serde(rename = "H_f")]
    Hf,
    #[serde(rename = "H_b")]
    Hb,
    #[serde(rename = "dH")]
    DH,
    #[serde(rename = "reward")]
    Reward,
}

/// The components whose union forms the ensemble (IDT) detector.
pub const IDT_METRICS: [Metric; 4] = [Metric::P, Metric::Hf, Metric::Hb, Metric::DH];

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::P => "P",
            Metric::Hf => "H_f",
            Metric::Hb => "H_b",
            Metric::DH => "dH",
            Metric::Reward => "reward",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-window values of each tracked metric, all of equal length.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tracks {
    tracks: BTreeMap<Metric, Vec<f64>>,
    len: usize,
}

impl Tracks {
    pub fn new() -> Self {
        Self::default()
    }

    /// The four interaction components of a series, plus an optional reward track.
    pub fn from_series(series: &MetricSeries, reward: Option<Vec<f64>>) -> Result<Self> {
        let mut t = Self::new();
        t.insert(Metric::P, series.values(|m| m.p))?;
        t.insert(Metric::Hf, series.values(|m| m.h_f))?;
        t.insert(Metric::Hb, series.values(|m| m.h_b))?;
        t.insert(Metric::DH, series.values(|m| m.dh))?;
        if let Some(r) = reward {
            t.insert(Metric::Reward, r)?;
        }
        Ok(t)
    }

    pub fn insert(&mut self, metric: Metric, values: Vec<f64>) -> Result<()> {
        if !self.tracks.is_empty() && values.len() != self.len {
            return Err(Error::invalid(format!(
                "track {metric} has {} windows, expected {}",
                values.len(),
                self.len
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "track {metric} contains non-finite values"
            )));
        }
        self.len = values.len();
        self.tracks.insert(metric, values);
        Ok(())
    }

    pub fn get(&self, metric: Metric) -> Option<&[f64]> {
        self.tracks.get(&metric).map(Vec::as_slice)
    }

    pub fn metrics(&self) -> impl Iterator<Item = Metric> + '_ {
        self.tracks.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub metric: Metric,
    pub mean: f64,
    pub std: f64,
}

/// A constant track yields a std of a few ulps; treat it as exactly zero.
fn flush_rounding(mean: f64, std: f64) -> f64 {
    if std <= 1e-12 * mean.abs().max(1.0) {
        0.0
    } else {
        std
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub stats: Vec<MetricStats>,
    pub n_windows: usize,
    /// False when the reward track's coefficient of variation exceeds the threshold.
    pub stable: bool,
    pub reward_cv: Option<f64>,
}

impl BaselineModel {
    pub fn stats(&self, metric: Metric) -> Option<&MetricStats> {
        self.stats.iter().find(|s| s.metric == metric)
    }
}

/// Sample mean and std of every track over `range`.
pub fn fit_baseline(
    tracks: &Tracks,
    range: Range<usize>,
    stability_cv: f64,
) -> Result<BaselineModel> {
    if range.end > tracks.len() || range.start >= range.end {
        return Err(Error::invalid(format!(
            "baseline range {range:?} outside series of {} windows",
            tracks.len()
        )));
    }
    if range.len() < 2 {
        return Err(Error::invalid("baseline needs at least 2 windows"));
    }
    let stats: Vec<MetricStats> = tracks
        .tracks
        .iter()
        .map(|(&metric, values)| {
            let (mean, std) = mean_std(&values[range.clone()]);
            MetricStats {
                metric,
                mean,
                std: flush_rounding(mean, std),
            }
        })
        .collect();
    let reward_cv = stats.iter().find(|s| s.metric == Metric::Reward).map(|s| {
        if s.mean == 0.0 {
            f64::INFINITY
        } else {
            s.std / s.mean.abs()
        }
    });
    let stable = reward_cv.is_none_or(|cv| cv <= stability_cv);
    Ok(BaselineModel {
        stats,
        n_windows: range.len(),
        stable,
        reward_cv: reward_cv.filter(|v| v.is_finite()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Above,
    Below,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub metric: Metric,
    pub first_crossing_window: Option<usize>,
    pub latency_windows: Option<usize>,
    pub direction: Option<Direction>,
    pub z_at_crossing: Option<f64>,
    /// Why detection was not attempted on this metric.
    pub suppressed: Option<String>,
}

impl DetectionEvent {
    pub fn detected(&self) -> bool {
        self.first_crossing_window.is_some()
    }
}

/// Scans each baseline metric from `onset_window` for the first `|z| > k`.
pub fn detect(
    tracks: &Tracks,
    baseline: &BaselineModel,
    k: f64,
    onset_window: usize,
) -> Result<Vec<DetectionEvent>> {
    if onset_window >= tracks.len() {
        return Err(Error::invalid(format!(
            "onset window {onset_window} beyond series of {} windows",
            tracks.len()
        )));
    }
    baseline
        .stats
        .iter()
        .map(|st| {
            let values = tracks.get(st.metric).ok_or_else(|| {
                Error::invalid(format!("no track for baseline metric {}", st.metric))
            })?;
            Ok(scan(st, values, k, onset_window))
        })
        .collect()
}

fn scan(st: &MetricStats, values: &[f64], k: f64, onset_window: usize) -> DetectionEvent {
    let mut event = DetectionEvent {
        metric: st.metric,
        first_crossing_window: None,
        latency_windows: None,
        direction: None,
        z_at_crossing: None,
        suppressed: None,
    };
    if !(st.std > 0.0) {
        event.suppressed = Some("zero baseline variance".into());
        return event;
    }
    for (w, &v) in values.iter().enumerate().skip(onset_window) {
        let z = (v - st.mean) / st.std;
        if z.abs() > k {
            event.first_crossing_window = Some(w);
            event.latency_windows = Some(w - onset_window);
            event.direction = Some(if z > 0.0 {
                Direction::Above
            } else {
                Direction::Below
            });
            event.z_at_crossing = Some(z);
            break;
        }
    }
    event
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleVerdict {
    pub detected: bool,
    pub latency_windows: Option<usize>,
}

/// Union over the IDT components; latency is the earliest component latency.
pub fn ensemble_detect(events: &[DetectionEvent]) -> EnsembleVerdict {
    let latency = events
        .iter()
        .filter(|e| IDT_METRICS.contains(&e.metric))
        .filter_map(|e| e.latency_windows)
        .min();
    EnsembleVerdict {
        detected: latency.is_some(),
        latency_windows: latency,
    }
}

/// `(μ_post − μ_pre) / σ_pre`; `None` when `σ_pre` is zero or undefined.
pub fn cohens_d(pre: &[f64], post: &[f64]) -> Option<f64> {
    if pre.len() < 2 || post.is_empty() {
        return None;
    }
    let (mu_pre, sd_pre) = mean_std(pre);
    if !(sd_pre > 0.0) {
        return None;
    }
    let mu_post = post.iter().sum::<f64>() / post.len() as f64;
    Some((mu_post - mu_pre) / sd_pre)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSize {
    pub metric: Metric,
    pub cohens_d: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub k: f64,
    pub onset_window: usize,
    pub baseline: BaselineModel,
    pub events: Vec<DetectionEvent>,
    pub ensemble: EnsembleVerdict,
    pub effect_sizes: Vec<EffectSize>,
}

impl DetectionReport {
    pub fn event(&self, metric: Metric) -> Option<&DetectionEvent> {
        self.events.iter().find(|e| e.metric == metric)
    }
}

/// Detector settings shared by every experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorSettings {
    pub k: f64,
    pub stability_cv: f64,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            stability_cv: DEFAULT_STABILITY_CV,
        }
    }
}

/// Fits the baseline on `baseline_range`, detects from `onset_window`, and
/// computes effect sizes (baseline vs all post-onset windows).
pub fn build_report(
    tracks: &Tracks,
    baseline_range: Range<usize>,
    onset_window: usize,
    settings: &DetectorSettings,
) -> Result<DetectionReport> {
    if baseline_range.end > onset_window {
        return Err(Error::invalid(
            "baseline range must precede the onset window",
        ));
    }
    let baseline = fit_baseline(tracks, baseline_range.clone(), settings.stability_cv)?;
    let events = detect(tracks, &baseline, settings.k, onset_window)?;
    let ensemble = ensemble_detect(&events);
    let effect_sizes = tracks
        .metrics()
        .map(|m| {
            let v = tracks.get(m).unwrap_or_default();
            EffectSize {
                metric: m,
                cohens_d: cohens_d(&v[baseline_range.clone()], &v[onset_window..]),
            }
        })
        .collect();
    Ok(DetectionReport {
        k: settings.k,
        onset_window,
        baseline,
        events,
        ensemble,
        effect_sizes,
    })
}

/// Streaming detector: the first `baseline_windows` pushes calibrate, later
/// pushes are scanned. One writer per stream; snapshots are plain clones.
#[derive(Debug, Clone)]
pub struct OnlineDetector {
    k: f64,
    baseline_windows: usize,
    history: Vec<BTreeMap<Metric, f64>>,
    baseline: Option<Vec<MetricStats>>,
    events: BTreeMap<Metric, DetectionEvent>,
}

impl OnlineDetector {
    pub fn new(k: f64, baseline_windows: usize) -> Result<Self> {
        if baseline_windows < 2 {
            return Err(Error::invalid("baseline needs at least 2 windows"));
        }
        Ok(Self {
            k,
            baseline_windows,
            history: Vec::new(),
            baseline: None,
            events: BTreeMap::new(),
        })
    }

    /// Feeds one window's metric values; returns events that fired on this window.
    pub fn push(&mut self, values: &[(Metric, f64)]) -> Vec<DetectionEvent> {
        let index = self.history.len();
        self.history.push(values.iter().copied().collect());
        if index + 1 == self.baseline_windows {
            let metrics: Vec<Metric> = self.history[0].keys().copied().collect();
            let stats = metrics
                .into_iter()
                .map(|metric| {
                    let v: Vec<f64> = self
                        .history
                        .iter()
                        .filter_map(|h| h.get(&metric).copied())
                        .collect();
                    let (mean, std) = mean_std(&v);
                    MetricStats {
                        metric,
                        mean,
                        std: flush_rounding(mean, std),
                    }
                })
                .collect();
            self.baseline = Some(stats);
            return Vec::new();
        }
        let Some(stats) = &self.baseline else {
            return Vec::new();
        };
        let mut fired = Vec::new();
        for st in stats {
            if self.events.contains_key(&st.metric) || !(st.std > 0.0) {
                continue;
            }
            if let Some(&v) = self.history[index].get(&st.metric) {
                let z = (v - st.mean) / st.std;
                if z.abs() > self.k {
                    let e = DetectionEvent {
                        metric: st.metric,
                        first_crossing_window: Some(index),
                        latency_windows: Some(index - self.baseline_windows),
                        direction: Some(if z > 0.0 {
                            Direction::Above
                        } else {
                            Direction::Below
                        }),
                        z_at_crossing: Some(z),
                        suppressed: None,
                    };
                    self.events.insert(st.metric, e.clone());
                    fired.push(e);
                }
            }
        }
        fired
    }

    pub fn events(&self) -> Vec<DetectionEvent> {
        self.events.values().cloned().collect()
    }

    pub fn windows_seen(&self) -> usize {
        self.history.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn single(metric: Metric, values: Vec<f64>) -> Tracks {
        let mut t = Tracks::new();
        t.insert(metric, values).unwrap();
        t
    }

    fn noisy(n: usize, seed: u64, mean: f64, sd: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(mean, sd).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn constant_metric_is_suppressed() {
        let t = single(Metric::P, vec![0.4; 20]);
        let b = fit_baseline(&t, 0..10, DEFAULT_STABILITY_CV).unwrap();
        assert_eq!(b.stats(Metric::P).unwrap().std, 0.0);
        let e = detect(&t, &b, 3.0, 10).unwrap();
        assert!(e[0].suppressed.is_some());
        assert!(!e[0].detected());
    }

    #[test]
    fn gaussian_baseline_recovers_generator() {
        let t = single(Metric::P, noisy(4000, 1, 0.3, 0.02));
        let b = fit_baseline(&t, 0..4000, DEFAULT_STABILITY_CV).unwrap();
        let s = b.stats(Metric::P).unwrap();
        // 4 standard errors.
        assert!((s.mean - 0.3).abs() < 4.0 * 0.02 / 4000f64.sqrt());
        assert!((s.std - 0.02).abs() < 4.0 * 0.02 / (2.0 * 4000f64).sqrt());
    }

    #[test]
    fn unstable_reward_baseline_is_flagged() {
        let mut r = noisy(100, 2, 1.0, 0.1);
        r.extend(noisy(100, 3, 1.0, 1.5));
        let t = single(Metric::Reward, r);
        assert!(
            !fit_baseline(&t, 0..200, DEFAULT_STABILITY_CV)
                .unwrap()
                .stable
        );
        assert!(
            fit_baseline(&t, 0..100, DEFAULT_STABILITY_CV)
                .unwrap()
                .stable
        );
    }

    #[test]
    fn baseline_range_is_checked() {
        let t = single(Metric::P, vec![0.1, 0.2, 0.3]);
        assert!(fit_baseline(&t, 0..4, 0.5).is_err());
        assert!(fit_baseline(&t, 1..2, 0.5).is_err());
        let b = fit_baseline(&t, 0..2, 0.5).unwrap();
        assert!(detect(&t, &b, 3.0, 3).is_err());
    }

    #[test]
    fn jump_at_onset_has_zero_latency() {
        let mut v = noisy(50, 4, 0.0, 1.0);
        let sd = fit_baseline(&single(Metric::DH, v.clone()), 0..30, 0.5)
            .unwrap()
            .stats[0]
            .std;
        for x in v.iter_mut().skip(30) {
            *x += 10.0 * sd;
        }
        let t = single(Metric::DH, v);
        let b = fit_baseline(&t, 0..30, 0.5).unwrap();
        let e = detect(&t, &b, 3.0, 30).unwrap();
        assert_eq!(e[0].latency_windows, Some(0));
        assert_eq!(e[0].direction, Some(Direction::Above));
    }

    #[test]
    fn no_change_is_never_detected() {
        let v: Vec<f64> = (0..60)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let t = single(Metric::P, v);
        let b = fit_baseline(&t, 0..30, 0.5).unwrap();
        let e = detect(&t, &b, 3.0, 30).unwrap();
        assert_eq!(e[0].latency_windows, None);
        let json = serde_json::to_string(&e[0]).unwrap();
        assert!(json.contains("\"latency_windows\":null"));
    }

    #[test]
    fn linear_drift_latency() {
        // Baseline alternates ±1 (σ = 1.017 for 30 windows); drift crosses 3σ
        // once the ramp exceeds 3σ, which happens 42 windows after onset.
        let n_base = 30usize;
        let base: Vec<f64> = (0..n_base)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let (_, sd) = mean_std(&base);
        let slope = 3.0 * sd / 42.5;
        let mut v = base.clone();
        v.extend((0..100).map(|j| slope * j as f64));
        let t = single(Metric::P, v);
        let b = fit_baseline(&t, 0..n_base, 0.5).unwrap();
        let e = detect(&t, &b, 3.0, n_base).unwrap();
        assert_eq!(e[0].latency_windows, Some(43));
        let slope = 3.0 * sd / 41.5;
        let mut v = base;
        v.extend((0..100).map(|j| slope * j as f64));
        let t = single(Metric::P, v);
        let e = detect(&t, &b, 3.0, n_base).unwrap();
        assert_eq!(e[0].latency_windows, Some(42));
    }

    fn event(metric: Metric, latency: Option<usize>) -> DetectionEvent {
        DetectionEvent {
            metric,
            first_crossing_window: latency,
            latency_windows: latency,
            direction: None,
            z_at_crossing: None,
            suppressed: None,
        }
    }

    #[test]
    fn ensemble_union() {
        let only_dh = [
            event(Metric::P, None),
            event(Metric::Hf, None),
            event(Metric::Hb, None),
            event(Metric::DH, Some(67)),
        ];
        assert_eq!(
            ensemble_detect(&only_dh),
            EnsembleVerdict {
                detected: true,
                latency_windows: Some(67)
            }
        );
        let none = [event(Metric::P, None), event(Metric::Reward, Some(3))];
        assert!(!ensemble_detect(&none).detected);
        let two = [event(Metric::P, Some(74)), event(Metric::Hf, Some(69))];
        assert_eq!(ensemble_detect(&two).latency_windows, Some(69));
    }

    #[test]
    fn cohens_d_examples() {
        let pre = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(cohens_d(&pre, &pre), Some(0.0));
        let (_, sd) = mean_std(&pre);
        let post: Vec<f64> = pre.iter().map(|x| x + sd).collect();
        assert!((cohens_d(&pre, &post).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cohens_d(&[2.0, 2.0], &[3.0]), None);
    }

    #[test]
    fn cohens_d_monte_carlo_shift() {
        let pre = noisy(20_000, 9, 0.0, 1.0);
        let post = noisy(20_000, 10, 2.5, 1.0);
        let d = cohens_d(&pre, &post).unwrap();
        assert!((d - 2.5).abs() < 0.05, "d = {d}");
    }

    #[test]
    fn online_matches_batch() {
        let mut v = noisy(120, 11, 0.0, 1.0);
        for x in v.iter_mut().skip(80) {
            *x += 4.0;
        }
        let t = single(Metric::Hb, v.clone());
        let b = fit_baseline(&t, 0..40, 0.5).unwrap();
        let batch = detect(&t, &b, 3.0, 40).unwrap();
        let mut online = OnlineDetector::new(3.0, 40).unwrap();
        for x in &v {
            online.push(&[(Metric::Hb, *x)]);
        }
        assert_eq!(online.events(), batch);
        assert_eq!(online.windows_seen(), 120);
    }
}
