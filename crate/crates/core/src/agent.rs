//! Synthetic discrete agent/environment harness.
//!
//! A random ergodic MDP with Dirichlet transition kernels stands in for a
//! continuous-control environment. A softmax policy over the reward table
//! drives rollouts; perturbations switch on at a fixed step and the interaction
//! metrics are compared against a per-window reward comparator.

use std::collections::BTreeMap;
use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{
    build_report, DetectionReport, DetectorSettings, Metric, Tracks, IDT_METRICS,
};
use crate::discretize::mean_std;
use crate::error::{Error, Result};
use crate::metrics::{predicates_from_profile, JointCounts, Symbol, Triple};
use crate::windowing::{metric_series, MetricSeries, WindowAudit, WindowSpec};

const ROW_TOL: f64 = 1e-12;

// Independent ChaCha streams drawn from one seed.
const STREAM_ENV: u64 = 0;
const STREAM_ROLLOUT: u64 = 1;
const STREAM_PERTURB: u64 = 2;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub n_states: usize,
    pub n_actions: usize,
    /// Dirichlet concentration of each kernel row; small values give sparse rows.
    pub kernel_alpha: f64,
    /// Std of the Gaussian noise added to every per-step reward.
    pub reward_noise: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n_states: 27,
            n_actions: 9,
            kernel_alpha: 0.2,
            reward_noise: 0.5,
        }
    }
}

/// Tabular MDP: `T(s'|s,a)` stored row-major as `(s·|A| + a)·|S| + s'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEnv {
    pub n_states: usize,
    pub n_actions: usize,
    pub kernel: Vec<f64>,
    /// `r(s,a)` stored as `s·|A| + a`.
    pub reward: Vec<f64>,
    pub reward_noise: f64,
}

impl SyntheticEnv {
    /// Draws kernels from `Dirichlet(alpha)` and rewards from `U(0, 1)`.
    pub fn generate(cfg: &EnvConfig, seed: u64) -> Result<Self> {
        if cfg.n_states < 2 || cfg.n_actions < 1 {
            return Err(Error::invalid(
                "environment needs at least 2 states and 1 action",
            ));
        }
        if !(cfg.kernel_alpha > 0.0) || !(cfg.reward_noise >= 0.0) {
            return Err(Error::invalid(
                "kernel_alpha must be > 0 and reward_noise >= 0",
            ));
        }
        let mut rng = stream_rng(seed, STREAM_ENV);
        let gamma = Gamma::new(cfg.kernel_alpha, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
        let (ns, na) = (cfg.n_states, cfg.n_actions);
        let mut kernel = Vec::with_capacity(ns * na * ns);
        for _ in 0..ns * na {
            let mut row: Vec<f64> = (0..ns).map(|_| gamma.sample(&mut rng)).collect();
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter_mut().for_each(|p| *p /= total);
            } else {
                row.fill(1.0 / ns as f64);
            }
            kernel.extend(row);
        }
        let reward = (0..ns * na).map(|_| rng.random::<f64>()).collect();
        Self::from_parts(ns, na, kernel, reward, cfg.reward_noise)
    }

    pub fn from_parts(
        n_states: usize,
        n_actions: usize,
        kernel: Vec<f64>,
        reward: Vec<f64>,
        reward_noise: f64,
    ) -> Result<Self> {
        if kernel.len() != n_states * n_actions * n_states || reward.len() != n_states * n_actions {
            return Err(Error::invalid("kernel or reward table has the wrong shape"));
        }
        check_rows(&kernel, n_states, "transition kernel")?;
        Ok(Self {
            n_states,
            n_actions,
            kernel,
            reward,
            reward_noise,
        })
    }

    pub fn kernel_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.kernel[start..start + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    /// Same environment with every row replaced by its action average, so
    /// the next state no longer depends on the action.
    pub fn action_independent(&self) -> Self {
        let mut out = self.clone();
        for s in 0..self.n_states {
            let mut avg = vec![0.0; self.n_states];
            for a in 0..self.n_actions {
                for (m, p) in avg.iter_mut().zip(self.kernel_row(s, a)) {
                    *m += p / self.n_actions as f64;
                }
            }
            for a in 0..self.n_actions {
                let start = (s * self.n_actions + a) * self.n_states;
                out.kernel[start..start + self.n_states].copy_from_slice(&avg);
            }
        }
        out
    }

    /// Kernel with every row raised to `1/(1+m)` and renormalized; `m > 0`
    /// flattens the dynamics.
    fn flattened(&self, magnitude: f64) -> Vec<f64> {
        let power = 1.0 / (1.0 + magnitude);
        let mut kernel = self.kernel.clone();
        for row in kernel.chunks_mut(self.n_states) {
            row.iter_mut().for_each(|p| *p = p.powf(power));
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= total);
        }
        kernel
    }
}

fn check_rows(table: &[f64], width: usize, what: &str) -> Result<()> {
    for (i, row) in table.chunks(width).enumerate() {
        let total: f64 = row.iter().sum();
        if row.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > ROW_TOL {
            return Err(Error::invalid(format!(
                "{what} row {i} is not a probability vector"
            )));
        }
    }
    Ok(())
}

fn row_entropy(row: &[f64]) -> f64 {
    -row.iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.log2())
        .sum::<f64>()
}

/// `π(a|s)` stored as `s·|A| + a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticPolicy {
    pub n_states: usize,
    pub n_actions: usize,
    pub probs: Vec<f64>,
}

impl StochasticPolicy {
    pub fn from_probs(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(Error::invalid("policy table has the wrong shape"));
        }
        check_rows(&probs, n_actions, "policy")?;
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    /// `π(a|s) ∝ exp(r(s,a)/τ)`.
    pub fn softmax(env: &SyntheticEnv, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::invalid("softmax temperature must be > 0"));
        }
        let mut probs = Vec::with_capacity(env.n_states * env.n_actions);
        for s in 0..env.n_states {
            let logits: Vec<f64> = (0..env.n_actions)
                .map(|a| env.reward(s, a) / temperature)
                .collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = w.iter().sum();
            probs.extend(w.iter().map(|x| x / total));
        }
        Self::from_probs(env.n_states, env.n_actions, probs)
    }

    /// Greedy on the reward table (ties to the lowest action).
    pub fn deterministic(env: &SyntheticEnv) -> Result<Self> {
        let mut probs = vec![0.0; env.n_states * env.n_actions];
        for s in 0..env.n_states {
            let best = (0..env.n_actions)
                .max_by(|&x, &y| {
                    env.reward(s, x)
                        .total_cmp(&env.reward(s, y))
                        .then(y.cmp(&x))
                })
                .unwrap_or(0);
            probs[s * env.n_actions + best] = 1.0;
        }
        Self::from_probs(env.n_states, env.n_actions, probs)
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// True when some state has positive action entropy.
    pub fn has_choice(&self) -> bool {
        (0..self.n_states).any(|s| row_entropy(self.row(s)) > 0.0)
    }
}

/// Policy families: a high-entropy softmax and a sharper, more exploitative one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Soft,
    Sharp,
}

impl PolicyKind {
    pub fn temperature(self) -> f64 {
        match self {
            PolicyKind::Soft => 0.25,
            PolicyKind::Sharp => 0.1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Soft => "soft",
            PolicyKind::Sharp => "sharp",
        }
    }

    pub fn build(self, env: &SyntheticEnv) -> Result<StochasticPolicy> {
        StochasticPolicy::softmax(env, self.temperature())
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    /// With probability `m` the executed action is uniform; the recorded
    /// action is still the one the policy emitted.
    ActionNoise,
    /// With probability `m` the observation is replaced by a uniform state.
    /// The policy acts on the corrupted observation.
    ObservationNoise,
    /// With probability `m` the next state is drawn under an independent
    /// resample of the policy's action. The state chain and expected reward
    /// are unchanged; only the action's influence on the outcome weakens.
    ExternalBias,
    /// Kernel rows raised to `1/(1+m)` and renormalized.
    GravityLike,
}

pub const PERTURBATION_KINDS: [PerturbationKind; 4] = [
    PerturbationKind::ActionNoise,
    PerturbationKind::ObservationNoise,
    PerturbationKind::ExternalBias,
    PerturbationKind::GravityLike,
];

impl PerturbationKind {
    pub fn name(self) -> &'static str {
        match self {
            PerturbationKind::ActionNoise => "action_noise",
            PerturbationKind::ObservationNoise => "observation_noise",
            PerturbationKind::ExternalBias => "external_bias",
            PerturbationKind::GravityLike => "gravity_like",
        }
    }

    /// Leaves the expected per-step reward unchanged.
    pub fn reward_preserving(self) -> bool {
        matches!(self, PerturbationKind::ExternalBias)
    }

    fn index(self) -> u64 {
        PERTURBATION_KINDS
            .iter()
            .position(|k| *k == self)
            .unwrap_or(0) as u64
    }
}

impl fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub magnitude: f64,
    pub onset_step: usize,
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.magnitude >= 0.0) || !self.magnitude.is_finite() {
            return Err(Error::invalid(
                "perturbation magnitude must be finite and >= 0",
            ));
        }
        let probability_like = !matches!(self.kind, PerturbationKind::GravityLike);
        if probability_like && self.magnitude > 1.0 {
            return Err(Error::invalid(format!(
                "{} magnitude is a probability (<= 1)",
                self.kind
            )));
        }
        Ok(())
    }
}

/// One recorded step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Symbol,
    pub a: Symbol,
    pub sp: Symbol,
    pub r: f64,
}

impl Transition {
    pub fn triple(&self) -> Triple {
        Triple::new(self.s, self.a, self.sp)
    }
}

fn weighted_rows(table: &[f64], width: usize) -> Result<Vec<WeightedIndex<f64>>> {
    table
        .chunks(width)
        .map(|row| {
            WeightedIndex::new(row).map_err(|e| Error::invalid(format!("bad probability row: {e}")))
        })
        .collect()
}

/// Simulates `steps` transitions. The main stream draws exactly one policy
/// sample, one transition sample and one reward-noise sample per step; all
/// perturbation randomness comes from a separate stream, so a zero-magnitude
/// perturbation reproduces the unperturbed stream exactly and every
/// perturbation shares the same pre-onset history.
pub fn rollout(
    env: &SyntheticEnv,
    policy: &StochasticPolicy,
    steps: usize,
    perturbation: Option<&PerturbationSpec>,
    seed: u64,
) -> Result<Vec<Transition>> {
    if policy.n_states != env.n_states || policy.n_actions != env.n_actions {
        return Err(Error::invalid("policy and environment alphabets differ"));
    }
    if let Some(p) = perturbation {
        p.validate()?;
    }
    let (ns, na) = (env.n_states, env.n_actions);
    let kernel = weighted_rows(&env.kernel, ns)?;
    let pi = weighted_rows(&policy.probs, na)?;
    let flat = match perturbation {
        Some(p) if p.kind == PerturbationKind::GravityLike => {
            Some(weighted_rows(&env.flattened(p.magnitude), ns)?)
        }
        _ => None,
    };

    let mut rng = stream_rng(seed, STREAM_ROLLOUT);
    let mut prng = stream_rng(
        seed,
        STREAM_PERTURB + perturbation.map_or(0, |p| p.kind.index()),
    );

    let mut state = rng.random_range(0..ns);
    let mut obs = state;
    let mut out = Vec::with_capacity(steps);
    for t in 0..steps {
        let active = perturbation.filter(|p| t >= p.onset_step);
        let a = pi[obs].sample(&mut rng);
        let mut executed = a;
        let mut row = state * na + a;
        if let Some(p) = active {
            match p.kind {
                PerturbationKind::ActionNoise => {
                    if prng.random::<f64>() < p.magnitude {
                        executed = prng.random_range(0..na);
                        row = state * na + executed;
                    }
                }
                PerturbationKind::ExternalBias => {
                    if prng.random::<f64>() < p.magnitude {
                        row = state * na + pi[state].sample(&mut prng);
                    }
                }
                PerturbationKind::ObservationNoise | PerturbationKind::GravityLike => {}
            }
        }
        let next = match (&flat, active) {
            (Some(f), Some(_)) => f[row].sample(&mut rng),
            _ => kernel[row].sample(&mut rng),
        };
        let noise: f64 = rng.sample(StandardNormal);
        let r = env.reward(state, executed) + env.reward_noise * noise;
        let mut next_obs = next;
        if let Some(p) = active {
            if p.kind == PerturbationKind::ObservationNoise && prng.random::<f64>() < p.magnitude {
                next_obs = prng.random_range(0..ns);
            }
        }
        out.push(Transition {
            s: obs as Symbol,
            a: a as Symbol,
            sp: next_obs as Symbol,
            r,
        });
        state = next;
        obs = next_obs;
    }
    Ok(out)
}

/// How the reward comparator turns per-step rewards into a window track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RewardMode {
    /// Mean reward over the window's own steps.
    #[default]
    PerWindow,
    /// Mean reward of the most recent episode completed by the window's end
    /// (the first episode before any completes).
    PerEpisode { episode_length: usize },
}

pub fn reward_track(
    records: &[Transition],
    spec: &WindowSpec,
    mode: RewardMode,
) -> Result<Vec<f64>> {
    let n = spec.count(records.len())?;
    match mode {
        RewardMode::PerWindow => Ok((0..n)
            .map(|i| {
                let r = spec.range(i);
                records[r].iter().map(|t| t.r).sum::<f64>() / spec.width as f64
            })
            .collect()),
        RewardMode::PerEpisode { episode_length } => {
            if episode_length == 0 || episode_length > records.len() {
                return Err(Error::invalid(
                    "episode length must be in 1..=stream length",
                ));
            }
            let returns: Vec<f64> = records
                .chunks_exact(episode_length)
                .map(|ep| ep.iter().map(|t| t.r).sum::<f64>() / episode_length as f64)
                .collect();
            Ok((0..n)
                .map(|i| {
                    let done = spec.range(i).end / episode_length;
                    returns[done.max(1) - 1]
                })
                .collect())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialConfig {
    pub env: EnvConfig,
    pub steps: usize,
    pub onset_step: usize,
    pub window: WindowSpec,
    pub detector: DetectorSettings,
    pub reward_mode: RewardMode,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            steps: 50_000,
            onset_step: 14_000,
            window: WindowSpec::agent(),
            detector: DetectorSettings::default(),
            reward_mode: RewardMode::PerWindow,
        }
    }
}

/// Minimum number of baseline windows for a detection trial.
pub const MIN_BASELINE_WINDOWS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRun {
    pub series: MetricSeries,
    pub reward: Vec<f64>,
    pub report: DetectionReport,
}

/// Rolls out, windows, fits the baseline on every window ending at or before
/// the onset, and detects from the first window that sees the onset.
pub fn run_detection_trial(
    env: &SyntheticEnv,
    policy: &StochasticPolicy,
    perturbation: Option<&PerturbationSpec>,
    cfg: &TrialConfig,
    seed: u64,
) -> Result<TrialRun> {
    let onset = perturbation.map_or(cfg.onset_step, |p| p.onset_step);
    let onset_window = cfg.window.first_window_after(onset);
    if onset_window < MIN_BASELINE_WINDOWS {
        return Err(Error::invalid(format!(
            "onset leaves {onset_window} baseline windows; need {MIN_BASELINE_WINDOWS}"
        )));
    }
    let records = rollout(env, policy, cfg.steps, perturbation, seed)?;
    let triples: Vec<Triple> = records.iter().map(Transition::triple).collect();
    let series = metric_series(&triples, &cfg.window)?;
    if onset_window >= series.len() {
        return Err(Error::invalid("onset falls after the last window"));
    }
    let reward = reward_track(&records, &cfg.window, cfg.reward_mode)?;
    let tracks = Tracks::from_series(&series, Some(reward.clone()))?;
    let report = build_report(&tracks, 0..onset_window, onset_window, &cfg.detector)?;
    Ok(TrialRun {
        series,
        reward,
        report,
    })
}

/// Agency and intelligence condition table for one stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgencyAudit {
    pub choice: bool,
    pub effect: bool,
    pub asymmetry: bool,
    /// The synthetic policy is fixed, so it does not learn.
    pub learning: bool,
    pub self_monitoring: bool,
    pub adaptation: bool,
    pub h_a_given_s: f64,
    pub mi_a_sp_given_s: f64,
    pub dh: f64,
}

/// Evaluates the agency predicates over the whole stream as one window.
/// Self-monitoring and adaptation are structurally absent.
pub fn agency_audit(records: &[Transition], epsilon: f64) -> Result<AgencyAudit> {
    let triples: Vec<Triple> = records.iter().map(Transition::triple).collect();
    let profile = JointCounts::from_triples(&triples)?.entropies();
    let preds = predicates_from_profile(&profile, epsilon);
    let m = profile.metrics(true);
    Ok(AgencyAudit {
        choice: preds.choice,
        effect: preds.effect,
        asymmetry: preds.asymmetry,
        learning: false,
        self_monitoring: false,
        adaptation: false,
        h_a_given_s: profile.action_given_state(),
        mi_a_sp_given_s: profile.chain_rule().mi_a_sp_given_s,
        dh: m.dh,
    })
}

/// Mean P and ΔH over the pre-onset windows of an unperturbed rollout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineSignature {
    pub seed: u64,
    pub policy: PolicyKind,
    pub mean_p: f64,
    pub mean_dh: f64,
    pub windows: usize,
}

pub fn baseline_signature(
    policy: PolicyKind,
    cfg: &TrialConfig,
    seed: u64,
) -> Result<BaselineSignature> {
    let env = SyntheticEnv::generate(&cfg.env, seed)?;
    let pi = policy.build(&env)?;
    let records = rollout(&env, &pi, cfg.onset_step, None, seed)?;
    let triples: Vec<Triple> = records.iter().map(Transition::triple).collect();
    let series = metric_series(&triples, &cfg.window)?;
    let (mean_p, _) = mean_std(&series.values(|m| m.p));
    let (mean_dh, _) = mean_std(&series.values(|m| m.dh));
    Ok(BaselineSignature {
        seed,
        policy,
        mean_p,
        mean_dh,
        windows: series.len(),
    })
}

/// Perturbation kinds × magnitudes × policies × seeds. An unperturbed
/// control is run per policy and seed when `null_control` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialGrid {
    pub kinds: Vec<PerturbationKind>,
    pub magnitudes: Vec<f64>,
    pub policies: Vec<PolicyKind>,
    pub seeds: Vec<u64>,
    pub null_control: bool,
}

impl Default for TrialGrid {
    fn default() -> Self {
        Self {
            kinds: PERTURBATION_KINDS.to_vec(),
            magnitudes: vec![0.1, 0.3],
            policies: vec![PolicyKind::Soft, PolicyKind::Sharp],
            seeds: (1..=20).collect(),
            null_control: true,
        }
    }
}

/// Flat per-trial outcome. `kind = None` marks a null control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub policy: PolicyKind,
    pub kind: Option<PerturbationKind>,
    pub magnitude: f64,
    pub seed: u64,
    pub stable: bool,
    pub ensemble_detected: bool,
    pub ensemble_latency: Option<usize>,
    pub reward_detected: bool,
    pub reward_latency: Option<usize>,
    pub metric_latency: BTreeMap<Metric, Option<usize>>,
    pub cohens_d: BTreeMap<Metric, Option<f64>>,
    pub audit: WindowAudit,
}

impl TrialRecord {
    fn from_report(
        policy: PolicyKind,
        kind: Option<PerturbationKind>,
        magnitude: f64,
        seed: u64,
        report: &DetectionReport,
        audit: WindowAudit,
    ) -> Self {
        let reward = report.event(Metric::Reward);
        Self {
            policy,
            kind,
            magnitude,
            seed,
            stable: report.baseline.stable,
            ensemble_detected: report.ensemble.detected,
            ensemble_latency: report.ensemble.latency_windows,
            reward_detected: reward.is_some_and(|e| e.detected()),
            reward_latency: reward.and_then(|e| e.latency_windows),
            metric_latency: report
                .events
                .iter()
                .map(|e| (e.metric, e.latency_windows))
                .collect(),
            cohens_d: report
                .effect_sizes
                .iter()
                .map(|e| (e.metric, e.cohens_d))
                .collect(),
            audit,
        }
    }

    pub fn reward_preserving(&self) -> bool {
        self.kind.is_some_and(|k| k.reward_preserving())
    }
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Detection statistics over a set of stable trials. Medians are taken
/// over detected trials only; `None` when nothing was detected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub trials: usize,
    pub excluded: usize,
    pub ensemble_rate: f64,
    pub reward_rate: f64,
    pub median_ensemble_latency: Option<f64>,
    pub median_reward_latency: Option<f64>,
    pub metric_rate: BTreeMap<Metric, f64>,
    /// Trials detected by the ensemble but not by reward.
    pub idt_only: usize,
    /// Trials detected by reward but not by the ensemble.
    pub reward_only: usize,
}

pub fn summarize<'a>(records: impl IntoIterator<Item = &'a TrialRecord>) -> DetectionSummary {
    let all: Vec<&TrialRecord> = records.into_iter().collect();
    let stable: Vec<&TrialRecord> = all.iter().copied().filter(|r| r.stable).collect();
    let n = stable.len();
    let rate = |count: usize| if n == 0 { 0.0 } else { count as f64 / n as f64 };
    let mut ens_lat: Vec<f64> = stable
        .iter()
        .filter_map(|r| r.ensemble_latency)
        .map(|l| l as f64)
        .collect();
    let mut rew_lat: Vec<f64> = stable
        .iter()
        .filter_map(|r| r.reward_latency)
        .map(|l| l as f64)
        .collect();
    let metric_rate = IDT_METRICS
        .iter()
        .chain([Metric::Reward].iter())
        .map(|&m| {
            let c = stable
                .iter()
                .filter(|r| r.metric_latency.get(&m).copied().flatten().is_some())
                .count();
            (m, rate(c))
        })
        .collect();
    DetectionSummary {
        trials: n,
        excluded: all.len() - n,
        ensemble_rate: rate(stable.iter().filter(|r| r.ensemble_detected).count()),
        reward_rate: rate(stable.iter().filter(|r| r.reward_detected).count()),
        median_ensemble_latency: median(&mut ens_lat),
        median_reward_latency: median(&mut rew_lat),
        metric_rate,
        idt_only: stable
            .iter()
            .filter(|r| r.ensemble_detected && !r.reward_detected)
            .count(),
        reward_only: stable
            .iter()
            .filter(|r| !r.ensemble_detected && r.reward_detected)
            .count(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    /// All perturbed trials.
    pub pooled: DetectionSummary,
    pub per_policy: BTreeMap<String, DetectionSummary>,
    pub per_kind: BTreeMap<String, DetectionSummary>,
    /// Unperturbed controls; every detection here is a false positive.
    pub null_control: Option<DetectionSummary>,
}

pub fn summarize_grid(records: &[TrialRecord]) -> GridSummary {
    let perturbed: Vec<&TrialRecord> = records.iter().filter(|r| r.kind.is_some()).collect();
    let mut policies: Vec<PolicyKind> = perturbed.iter().map(|r| r.policy).collect();
    policies.sort();
    policies.dedup();
    let mut kinds: Vec<PerturbationKind> = perturbed.iter().filter_map(|r| r.kind).collect();
    kinds.sort();
    kinds.dedup();
    let controls: Vec<&TrialRecord> = records.iter().filter(|r| r.kind.is_none()).collect();
    GridSummary {
        pooled: summarize(perturbed.iter().copied()),
        per_policy: policies
            .iter()
            .map(|p| {
                (
                    p.name().to_string(),
                    summarize(perturbed.iter().copied().filter(|r| r.policy == *p)),
                )
            })
            .collect(),
        per_kind: kinds
            .iter()
            .map(|k| {
                (
                    k.name().to_string(),
                    summarize(perturbed.iter().copied().filter(|r| r.kind == Some(*k))),
                )
            })
            .collect(),
        null_control: (!controls.is_empty()).then(|| summarize(controls)),
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    policy: PolicyKind,
    seed: u64,
    perturbation: Option<(PerturbationKind, f64)>,
}

/// Runs every trial of the grid in parallel; records come back in grid order
/// (policy, seed, then controls followed by kind × magnitude).
pub fn run_trial_grid(grid: &TrialGrid, cfg: &TrialConfig) -> Result<Vec<TrialRecord>> {
    if grid.seeds.is_empty() || grid.policies.is_empty() {
        return Err(Error::invalid(
            "trial grid needs at least one seed and one policy",
        ));
    }
    let mut cells = Vec::new();
    for &policy in &grid.policies {
        for &seed in &grid.seeds {
            if grid.null_control {
                cells.push(Cell {
                    policy,
                    seed,
                    perturbation: None,
                });
            }
            for &kind in &grid.kinds {
                for &m in &grid.magnitudes {
                    cells.push(Cell {
                        policy,
                        seed,
                        perturbation: Some((kind, m)),
                    });
                }
            }
        }
    }
    cells
        .into_par_iter()
        .map(|c| {
            let env = SyntheticEnv::generate(&cfg.env, c.seed)?;
            let pi = c.policy.build(&env)?;
            let spec = c.perturbation.map(|(kind, magnitude)| PerturbationSpec {
                kind,
                magnitude,
                onset_step: cfg.onset_step,
            });
            let run = run_detection_trial(&env, &pi, spec.as_ref(), cfg, c.seed)?;
            let (kind, magnitude) = c.perturbation.map_or((None, 0.0), |(k, m)| (Some(k), m));
            Ok(TrialRecord::from_report(
                c.policy,
                kind,
                magnitude,
                c.seed,
                &run.report,
                WindowAudit::of(&run.series),
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_env() -> SyntheticEnv {
        SyntheticEnv::generate(
            &EnvConfig {
                n_states: 5,
                n_actions: 3,
                ..EnvConfig::default()
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn generated_rows_are_distributions() {
        let env = SyntheticEnv::generate(&EnvConfig::default(), 11).unwrap();
        for s in 0..env.n_states {
            for a in 0..env.n_actions {
                let total: f64 = env.kernel_row(s, a).iter().sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
        let pi = PolicyKind::Soft.build(&env).unwrap();
        assert!(pi.has_choice());
        assert!(!StochasticPolicy::deterministic(&env).unwrap().has_choice());
    }

    #[test]
    fn bad_tables_are_rejected() {
        assert!(
            SyntheticEnv::from_parts(2, 1, vec![0.5, 0.4, 1.0, 0.0], vec![0.0; 2], 0.0).is_err()
        );
        assert!(StochasticPolicy::from_probs(1, 2, vec![1.2, -0.2]).is_err());
        assert!(PerturbationSpec {
            kind: PerturbationKind::ActionNoise,
            magnitude: 1.5,
            onset_step: 0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn rollout_is_deterministic() {
        let env = small_env();
        let pi = PolicyKind::Soft.build(&env).unwrap();
        let a = rollout(&env, &pi, 500, None, 9).unwrap();
        let b = rollout(&env, &pi, 500, None, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, rollout(&env, &pi, 500, None, 10).unwrap());
        for w in a.windows(2) {
            assert_eq!(w[0].sp, w[1].s);
        }
    }

    #[test]
    fn zero_magnitude_matches_unperturbed_stream() {
        let env = small_env();
        let pi = PolicyKind::Soft.build(&env).unwrap();
        let base = rollout(&env, &pi, 800, None, 4).unwrap();
        for kind in PERTURBATION_KINDS {
            let spec = PerturbationSpec {
                kind,
                magnitude: 0.0,
                onset_step: 100,
            };
            assert_eq!(
                rollout(&env, &pi, 800, Some(&spec), 4).unwrap(),
                base,
                "{kind}"
            );
        }
    }

    #[test]
    fn perturbation_only_changes_post_onset_steps() {
        let env = small_env();
        let pi = PolicyKind::Soft.build(&env).unwrap();
        let base = rollout(&env, &pi, 800, None, 4).unwrap();
        for kind in PERTURBATION_KINDS {
            let spec = PerturbationSpec {
                kind,
                magnitude: 0.5,
                onset_step: 300,
            };
            let pert = rollout(&env, &pi, 800, Some(&spec), 4).unwrap();
            assert_eq!(pert[..300], base[..300], "{kind}");
            assert_ne!(pert[300..], base[300..], "{kind}");
        }
    }

    #[test]
    fn agency_audit_predicates() {
        let env = SyntheticEnv::generate(&EnvConfig::default(), 5).unwrap();
        let pi = PolicyKind::Soft.build(&env).unwrap();
        let audit = agency_audit(&rollout(&env, &pi, 20_000, None, 5).unwrap(), 1e-6).unwrap();
        assert!(audit.choice && audit.effect && audit.asymmetry);
        assert!(!audit.learning && !audit.self_monitoring && !audit.adaptation);

        let det = StochasticPolicy::deterministic(&env).unwrap();
        let audit = agency_audit(&rollout(&env, &det, 20_000, None, 5).unwrap(), 1e-6).unwrap();
        assert!(!audit.choice);

        // The plug-in estimate of MI(A;S'|S) is biased upward on finite data,
        // so "effect false" needs the exact kernel: compare against the
        // action-dependent environment on the same budget.
        let blind = env.action_independent();
        let with = agency_audit(&rollout(&env, &pi, 20_000, None, 5).unwrap(), 1e-6).unwrap();
        let without = agency_audit(&rollout(&blind, &pi, 20_000, None, 5).unwrap(), 1e-6).unwrap();
        assert!(without.mi_a_sp_given_s < 0.25 * with.mi_a_sp_given_s);
    }

    #[test]
    fn action_independent_kernel_has_no_effect_exactly() {
        // Exact joint from the stationary cells: MI(A;S'|S) = 0.
        let env = small_env().action_independent();
        let pi = PolicyKind::Soft.build(&env).unwrap();
        let mut cells = Vec::new();
        for s in 0..env.n_states {
            for a in 0..env.n_actions {
                for (sp, p) in env.kernel_row(s, a).iter().enumerate() {
                    let w = (1e9 * pi.row(s)[a] * p).round() as u64;
                    if w > 0 {
                        cells.push((Triple::new(s as u64, a as u64, sp as u64), w));
                    }
                }
            }
        }
        let profile = JointCounts::from_cells(cells).unwrap().entropies();
        assert!(profile.chain_rule().mi_a_sp_given_s < 1e-6);
    }

    #[test]
    fn reward_tracks() {
        let recs: Vec<Transition> = (0..1000)
            .map(|t| Transition {
                s: 0,
                a: 0,
                sp: 0,
                r: if t < 500 { 1.0 } else { 3.0 },
            })
            .collect();
        let spec = WindowSpec::new(100, 100).unwrap();
        let w = reward_track(&recs, &spec, RewardMode::PerWindow).unwrap();
        assert_eq!(w[0], 1.0);
        assert_eq!(w[9], 3.0);
        let e = reward_track(
            &recs,
            &spec,
            RewardMode::PerEpisode {
                episode_length: 500,
            },
        )
        .unwrap();
        assert_eq!(e[0], 1.0);
        assert_eq!(e[5], 1.0);
        assert_eq!(e[9], 3.0);
    }

    #[test]
    fn external_bias_preserves_reward_and_state_chain() {
        // Long run: state occupancy and mean reward match the unperturbed
        // process within sampling error.
        let env = SyntheticEnv::generate(&EnvConfig::default(), 8).unwrap();
        let pi = PolicyKind::Soft.build(&env).unwrap();
        let spec = PerturbationSpec {
            kind: PerturbationKind::ExternalBias,
            magnitude: 1.0,
            onset_step: 0,
        };
        let n = 200_000;
        let base = rollout(&env, &pi, n, None, 1).unwrap();
        let pert = rollout(&env, &pi, n, Some(&spec), 2).unwrap();
        let mean = |v: &[Transition]| v.iter().map(|t| t.r).sum::<f64>() / v.len() as f64;
        assert!((mean(&base) - mean(&pert)).abs() < 0.01);
    }

    #[test]
    fn trial_rejects_short_baseline() {
        let env = small_env();
        let pi = PolicyKind::Soft.build(&env).unwrap();
        let cfg = TrialConfig {
            steps: 2000,
            onset_step: 500,
            ..TrialConfig::default()
        };
        assert!(run_detection_trial(&env, &pi, None, &cfg, 1).is_err());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }
}
