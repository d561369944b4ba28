//! End-to-end experiments. Each returns its results in memory and can write
//! them as CSV/JSON artifacts; identical configs give identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{
    baseline_signature, run_trial_grid, summarize_grid, BaselineSignature, GridSummary, PolicyKind,
    TrialConfig, TrialGrid, TrialRecord,
};
use crate::detector::{
    build_report, DetectionReport, DetectorSettings, Metric, Tracks, IDT_METRICS,
};
use crate::dialogue::{
    analyze_transcript, generate_synthetic_transcript, DialogueAnalysis, DialogueConfig,
    GeneratorConfig, Profile, Transcript,
};
use crate::discretize::{discretize, mean_std, DiscretizationConfig};
use crate::error::{Error, Result};
use crate::io::{self, fmt6, StreamDiscretization};
use crate::metrics::InteractionMetrics;
use crate::pendulum::{
    batch_setups, batch_simulate, ftle, BatchConfig, FtleConfig, IntegrateOptions, Tolerances,
    Trajectory,
};
use crate::quantum::{canonical_states, quantum_p, random_separable_diagonal, QuantumP};
use crate::windowing::{metric_series, transitions, MetricSeries, WindowAudit, WindowSpec};

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (mx, sx) = mean_std(x);
    let (my, sy) = mean_std(y);
    if !(sx > 0.0 && sy > 0.0) {
        return None;
    }
    let cov = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / (x.len() as f64 - 1.0);
    Some(cov / (sx * sy))
}

fn opt(x: Option<impl ToString>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

fn opt6(x: Option<f64>) -> String {
    x.map_or_else(String::new, fmt6)
}

fn write_metrics(path: &Path, series: &MetricSeries) -> Result<()> {
    io::write_metric_csv(io::create(path)?, series)
}

// ---------------------------------------------------------------------------
// Pendulum

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PendulumConfig {
    pub batch: BatchConfig,
    pub discretization: DiscretizationConfig,
    pub window: WindowSpec,
    pub sample_dt: f64,
    pub tolerances: Tolerances,
    pub ftle_delta0: f64,
    pub ftle_renorm_interval: f64,
    /// Also write every run's trajectory CSV.
    pub write_trajectories: bool,
}

impl Default for PendulumConfig {
    fn default() -> Self {
        let f = FtleConfig::default();
        Self {
            batch: BatchConfig::default(),
            discretization: DiscretizationConfig::pendulum(),
            window: WindowSpec::pendulum(),
            sample_dt: 1e-3,
            tolerances: Tolerances::default(),
            ftle_delta0: f.delta0,
            ftle_renorm_interval: f.renorm_interval,
            write_trajectories: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendulumRunSummary {
    pub run: usize,
    pub seed: u64,
    pub m1: f64,
    pub m2: f64,
    pub theta1_0: f64,
    pub theta2_0: f64,
    pub omega1_0: f64,
    pub omega2_0: f64,
    pub energy_0: f64,
    pub max_energy_drift: f64,
    pub valid: bool,
    pub windows: usize,
    pub mean_p: f64,
    pub std_p: f64,
    pub mean_h_f: f64,
    pub mean_h_b: f64,
    pub mean_dh: f64,
    pub std_dh: f64,
    pub ftle: f64,
}

/// Batch statistics over valid runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendulumSummary {
    pub runs: usize,
    pub valid_runs: usize,
    pub mean_p: f64,
    pub std_p: f64,
    pub min_p: f64,
    pub max_p: f64,
    pub mean_dh: f64,
    /// Spread of the per-run mean ΔH.
    pub std_dh_runs: f64,
    /// Spread of ΔH over every window of every valid run.
    pub std_dh_windows: f64,
    pub max_energy_drift: f64,
    pub mean_ftle: f64,
    pub std_ftle: f64,
    pub corr_ftle_p: Option<f64>,
    pub audit: WindowAudit,
}

#[derive(Debug, Clone)]
pub struct PendulumResult {
    pub runs: Vec<PendulumRunSummary>,
    pub series: Vec<MetricSeries>,
    pub summary: PendulumSummary,
    pub trajectories: Vec<Trajectory>,
}

pub fn run_pendulum(cfg: &PendulumConfig) -> Result<PendulumResult> {
    cfg.window.validate()?;
    let opts = IntegrateOptions {
        tolerances: cfg.tolerances,
        sample_dt: cfg.sample_dt,
    };
    let batch = batch_simulate(&cfg.batch, &opts)?;
    let setups = batch_setups(&cfg.batch);
    let ftle_cfg = FtleConfig {
        horizon: cfg.batch.duration,
        delta0: cfg.ftle_delta0,
        renorm_interval: cfg.ftle_renorm_interval,
        tolerances: cfg.tolerances,
    };
    let per_run: Vec<(MetricSeries, f64)> = batch
        .trajectories
        .par_iter()
        .zip(&setups)
        .map(|(traj, setup)| {
            let symbols = discretize(&cfg.discretization, &traj.dims())?
                .series
                .symbols;
            let series = metric_series(&transitions(&symbols, None)?, &cfg.window)?;
            let lambda = ftle(&setup.params, setup.initial, &ftle_cfg)?;
            Ok((series, lambda))
        })
        .collect::<Result<_>>()?;

    let mut runs = Vec::with_capacity(setups.len());
    let mut series_out = Vec::with_capacity(setups.len());
    for ((traj, setup), (series, lambda)) in batch.trajectories.iter().zip(&setups).zip(per_run) {
        let (mean_p, std_p) = mean_std(&series.values(|m| m.p));
        let (mean_dh, std_dh) = mean_std(&series.values(|m| m.dh));
        runs.push(PendulumRunSummary {
            run: setup.run,
            seed: setup.seed,
            m1: setup.params.m1,
            m2: setup.params.m2,
            theta1_0: setup.initial.theta1,
            theta2_0: setup.initial.theta2,
            omega1_0: setup.initial.omega1,
            omega2_0: setup.initial.omega2,
            energy_0: traj.energy[0],
            max_energy_drift: traj.max_energy_drift,
            valid: traj.valid,
            windows: series.len(),
            mean_p,
            std_p,
            mean_h_f: mean_std(&series.values(|m| m.h_f)).0,
            mean_h_b: mean_std(&series.values(|m| m.h_b)).0,
            mean_dh,
            std_dh,
            ftle: lambda,
        });
        series_out.push(series);
    }

    let valid: Vec<usize> = (0..runs.len()).filter(|&i| runs[i].valid).collect();
    if valid.is_empty() {
        return Err(Error::domain("no run passed the energy audit"));
    }
    let ps: Vec<f64> = valid.iter().map(|&i| runs[i].mean_p).collect();
    let dhs: Vec<f64> = valid.iter().map(|&i| runs[i].mean_dh).collect();
    let fts: Vec<f64> = valid.iter().map(|&i| runs[i].ftle).collect();
    let all_dh: Vec<f64> = valid
        .iter()
        .flat_map(|&i| series_out[i].values(|m| m.dh))
        .collect();
    let mut audit = WindowAudit::default();
    for s in &series_out {
        audit.merge(&WindowAudit::of(s));
    }
    let (mean_p, std_p) = mean_std(&ps);
    let (mean_dh, std_dh_runs) = mean_std(&dhs);
    let (mean_ftle, std_ftle) = mean_std(&fts);
    let summary = PendulumSummary {
        runs: runs.len(),
        valid_runs: valid.len(),
        mean_p,
        std_p,
        min_p: ps.iter().copied().fold(f64::INFINITY, f64::min),
        max_p: ps.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean_dh,
        std_dh_runs,
        std_dh_windows: mean_std(&all_dh).1,
        max_energy_drift: valid
            .iter()
            .map(|&i| runs[i].max_energy_drift)
            .fold(0.0, f64::max),
        mean_ftle,
        std_ftle,
        corr_ftle_p: pearson(&fts, &ps),
        audit,
    };
    Ok(PendulumResult {
        runs,
        series: series_out,
        summary,
        trajectories: batch.trajectories,
    })
}

impl PendulumResult {
    /// `pendulum_runs.csv`, `pendulum_summary.csv`, `pendulum_summary.json`
    /// and `metrics/pendulum_run_NNN.csv`.
    pub fn write(&self, dir: &Path, with_trajectories: bool) -> Result<()> {
        let metrics_dir = dir.join("metrics");
        fs::create_dir_all(&metrics_dir)?;
        let header = [
            "run",
            "seed",
            "m1",
            "m2",
            "theta1_0",
            "theta2_0",
            "omega1_0",
            "omega2_0",
            "E0",
            "max_energy_drift",
            "valid",
            "windows",
            "mean_P",
            "std_P",
            "mean_H_f",
            "mean_H_b",
            "mean_dH",
            "std_dH",
            "FTLE",
        ];
        let rows: Vec<Vec<String>> = self
            .runs
            .iter()
            .map(|r| {
                vec![
                    r.run.to_string(),
                    r.seed.to_string(),
                    r.m1.to_string(),
                    r.m2.to_string(),
                    fmt6(r.theta1_0),
                    fmt6(r.theta2_0),
                    fmt6(r.omega1_0),
                    fmt6(r.omega2_0),
                    fmt6(r.energy_0),
                    format!("{:.3e}", r.max_energy_drift),
                    r.valid.to_string(),
                    r.windows.to_string(),
                    fmt6(r.mean_p),
                    fmt6(r.std_p),
                    fmt6(r.mean_h_f),
                    fmt6(r.mean_h_b),
                    format!("{:.6e}", r.mean_dh),
                    format!("{:.6e}", r.std_dh),
                    fmt6(r.ftle),
                ]
            })
            .collect();
        io::write_table(io::create(&dir.join("pendulum_runs.csv"))?, &header, &rows)?;

        let s = &self.summary;
        let stats: Vec<Vec<String>> = [
            ("runs", s.runs.to_string()),
            ("valid_runs", s.valid_runs.to_string()),
            ("mean_P", fmt6(s.mean_p)),
            ("std_P", fmt6(s.std_p)),
            ("min_P", fmt6(s.min_p)),
            ("max_P", fmt6(s.max_p)),
            ("mean_dH", format!("{:.6e}", s.mean_dh)),
            ("std_dH_runs", format!("{:.6e}", s.std_dh_runs)),
            ("std_dH_windows", format!("{:.6e}", s.std_dh_windows)),
            ("max_energy_drift", format!("{:.3e}", s.max_energy_drift)),
            ("mean_FTLE", fmt6(s.mean_ftle)),
            ("std_FTLE", fmt6(s.std_ftle)),
            ("corr_FTLE_P", opt6(s.corr_ftle_p)),
        ]
        .into_iter()
        .map(|(k, v)| vec![k.to_string(), v])
        .collect();
        io::write_table(
            io::create(&dir.join("pendulum_summary.csv"))?,
            &["statistic", "value"],
            &stats,
        )?;
        io::write_json(&dir.join("pendulum_summary.json"), &self.summary)?;

        for (r, series) in self.runs.iter().zip(&self.series) {
            write_metrics(
                &metrics_dir.join(format!("pendulum_run_{:03}.csv", r.run)),
                series,
            )?;
        }
        if with_trajectories {
            let traj_dir = dir.join("trajectories");
            fs::create_dir_all(&traj_dir)?;
            for (r, t) in self.runs.iter().zip(&self.trajectories) {
                io::write_trajectory_csv(
                    io::create(&traj_dir.join(format!("pendulum_run_{:03}.csv", r.run)))?,
                    t,
                )?;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Agent

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub trial: TrialConfig,
    pub grid: TrialGrid,
}

/// Across-seed statistics of the unperturbed baseline for one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureSummary {
    pub policy: PolicyKind,
    pub seeds: usize,
    pub mean_p: f64,
    pub std_p: f64,
    pub mean_dh: f64,
    pub std_dh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentResult {
    pub signatures: Vec<BaselineSignature>,
    pub signature_summary: Vec<SignatureSummary>,
    pub records: Vec<TrialRecord>,
    pub summary: GridSummary,
    /// Stable reward-preserving trials detected by the ensemble only.
    pub reward_preserving_idt_only: usize,
    pub audit: WindowAudit,
}

pub fn run_agent(cfg: &AgentConfig) -> Result<AgentResult> {
    if cfg.grid.seeds.is_empty() {
        return Err(Error::invalid("agent experiment needs at least one seed"));
    }
    let cells: Vec<(PolicyKind, u64)> = cfg
        .grid
        .policies
        .iter()
        .flat_map(|&p| cfg.grid.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let signatures = cells
        .par_iter()
        .map(|&(p, s)| baseline_signature(p, &cfg.trial, s))
        .collect::<Result<Vec<_>>>()?;
    let signature_summary = cfg
        .grid
        .policies
        .iter()
        .map(|&policy| {
            let sig: Vec<&BaselineSignature> =
                signatures.iter().filter(|s| s.policy == policy).collect();
            let (mean_p, std_p) = mean_std(&sig.iter().map(|s| s.mean_p).collect::<Vec<_>>());
            let (mean_dh, std_dh) = mean_std(&sig.iter().map(|s| s.mean_dh).collect::<Vec<_>>());
            SignatureSummary {
                policy,
                seeds: sig.len(),
                mean_p,
                std_p,
                mean_dh,
                std_dh,
            }
        })
        .collect();
    let records = run_trial_grid(&cfg.grid, &cfg.trial)?;
    let summary = summarize_grid(&records);
    let mut audit = WindowAudit::default();
    for r in &records {
        audit.merge(&r.audit);
    }
    let reward_preserving_idt_only = records
        .iter()
        .filter(|r| r.stable && r.reward_preserving() && r.ensemble_detected && !r.reward_detected)
        .count();
    Ok(AgentResult {
        signatures,
        signature_summary,
        records,
        summary,
        reward_preserving_idt_only,
        audit,
    })
}

const TRACKED: [Metric; 5] = [
    Metric::P,
    Metric::Hf,
    Metric::Hb,
    Metric::DH,
    Metric::Reward,
];

impl AgentResult {
    /// `agent_trials.csv`, `agent_signatures.csv` and `agent_report.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut header: Vec<String> = [
            "policy",
            "kind",
            "magnitude",
            "seed",
            "stable",
            "ensemble_detected",
            "ensemble_latency",
            "reward_detected",
            "reward_latency",
        ]
        .map(String::from)
        .to_vec();
        header.extend(TRACKED.iter().map(|m| format!("latency_{}", m.name())));
        header.extend(TRACKED.iter().map(|m| format!("d_{}", m.name())));
        let rows: Vec<Vec<String>> = self
            .records
            .iter()
            .map(|r| {
                let mut row = vec![
                    r.policy.name().to_string(),
                    r.kind.map_or("none", |k| k.name()).to_string(),
                    r.magnitude.to_string(),
                    r.seed.to_string(),
                    r.stable.to_string(),
                    r.ensemble_detected.to_string(),
                    opt(r.ensemble_latency),
                    r.reward_detected.to_string(),
                    opt(r.reward_latency),
                ];
                row.extend(
                    TRACKED
                        .iter()
                        .map(|m| opt(r.metric_latency.get(m).copied().flatten())),
                );
                row.extend(
                    TRACKED
                        .iter()
                        .map(|m| opt6(r.cohens_d.get(m).copied().flatten())),
                );
                row
            })
            .collect();
        let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
        io::write_table(
            io::create(&dir.join("agent_trials.csv"))?,
            &header_ref,
            &rows,
        )?;

        let sig_rows: Vec<Vec<String>> = self
            .signatures
            .iter()
            .map(|s| {
                vec![
                    s.policy.name().to_string(),
                    s.seed.to_string(),
                    s.windows.to_string(),
                    fmt6(s.mean_p),
                    fmt6(s.mean_dh),
                ]
            })
            .collect();
        io::write_table(
            io::create(&dir.join("agent_signatures.csv"))?,
            &["policy", "seed", "windows", "mean_P", "mean_dH"],
            &sig_rows,
        )?;

        #[derive(Serialize)]
        struct Report<'a> {
            signature_summary: &'a [SignatureSummary],
            summary: &'a GridSummary,
            reward_preserving_idt_only: usize,
            audit: &'a WindowAudit,
        }
        io::write_json(
            &dir.join("agent_report.json"),
            &Report {
                signature_summary: &self.signature_summary,
                summary: &self.summary,
                reward_preserving_idt_only: self.reward_preserving_idt_only,
                audit: &self.audit,
            },
        )
    }
}

// ---------------------------------------------------------------------------
// Dialogue

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DialogueExperimentConfig {
    pub analysis: DialogueConfig,
    pub generator: GeneratorConfig,
    /// Injected profiles of the synthetic corpus.
    pub profiles: Vec<Profile>,
    /// Seeds per injected profile.
    pub seeds: Vec<u64>,
    /// Seeds of the coherent controls, checked at the generator's injection turns.
    pub control_seeds: Vec<u64>,
}

impl Default for DialogueExperimentConfig {
    fn default() -> Self {
        Self {
            analysis: DialogueConfig::default(),
            generator: GeneratorConfig::default(),
            profiles: vec![
                Profile::Contradiction,
                Profile::TopicShift,
                Profile::NonSequitur,
            ],
            seeds: (1..=10).collect(),
            control_seeds: (1..=30).collect(),
        }
    }
}

/// One transcript to analyze. Controls are checked at `check_turns`;
/// otherwise the transcript's own injection labels are used.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub id: String,
    pub transcript: Transcript,
    pub control: bool,
    pub check_turns: Option<Vec<usize>>,
}

pub fn synthetic_corpus(cfg: &DialogueExperimentConfig) -> Result<Vec<CorpusEntry>> {
    if cfg.seeds.is_empty() && cfg.control_seeds.is_empty() {
        return Err(Error::invalid("dialogue corpus needs at least one seed"));
    }
    let mut out = Vec::new();
    for &profile in &cfg.profiles {
        for &seed in &cfg.seeds {
            out.push(CorpusEntry {
                id: format!("{}_{seed}", profile.name()),
                transcript: generate_synthetic_transcript(profile, seed, &cfg.generator)?,
                control: false,
                check_turns: None,
            });
        }
    }
    for &seed in &cfg.control_seeds {
        out.push(CorpusEntry {
            id: format!("coherent_{seed}"),
            transcript: generate_synthetic_transcript(Profile::Coherent, seed, &cfg.generator)?,
            control: true,
            check_turns: Some(cfg.generator.injection_turns.clone()),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptResult {
    pub id: String,
    pub control: bool,
    pub analysis: DialogueAnalysis,
}

impl TranscriptResult {
    /// Any checked turn flagged.
    pub fn flagged(&self) -> bool {
        self.analysis
            .detection
            .as_ref()
            .is_some_and(|d| d.checks.iter().any(|c| c.detected))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueSummary {
    pub injections: usize,
    pub detected: usize,
    pub detection_rate: Option<f64>,
    /// Per label `profile` (or `unlabeled`): (detected, injections).
    pub per_profile: BTreeMap<String, (usize, usize)>,
    pub controls: usize,
    pub flagged_controls: usize,
    pub false_positive_rate: Option<f64>,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueResult {
    pub transcripts: Vec<TranscriptResult>,
    pub summary: DialogueSummary,
}

pub fn run_dialogue(corpus: &[CorpusEntry], cfg: &DialogueConfig) -> Result<DialogueResult> {
    let transcripts = corpus
        .par_iter()
        .map(|e| {
            Ok(TranscriptResult {
                id: e.id.clone(),
                control: e.control,
                analysis: analyze_transcript(&e.transcript, e.check_turns.as_deref(), cfg)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut per_profile: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let (mut injections, mut detected, mut controls, mut flagged_controls, mut skipped) =
        (0, 0, 0, 0, 0);
    for (entry, r) in corpus.iter().zip(&transcripts) {
        if r.analysis.detection.is_none() {
            skipped += 1;
        }
        if r.control {
            controls += 1;
            flagged_controls += usize::from(r.flagged());
            continue;
        }
        let label = entry
            .transcript
            .labels
            .get("profile")
            .cloned()
            .unwrap_or_else(|| "unlabeled".into());
        let slot = per_profile.entry(label).or_default();
        if let Some(d) = &r.analysis.detection {
            for c in &d.checks {
                injections += 1;
                slot.1 += 1;
                if c.detected {
                    detected += 1;
                    slot.0 += 1;
                }
            }
        }
    }
    let rate = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    Ok(DialogueResult {
        transcripts,
        summary: DialogueSummary {
            injections,
            detected,
            detection_rate: rate(detected, injections),
            per_profile,
            controls,
            flagged_controls,
            false_positive_rate: rate(flagged_controls, controls),
            skipped,
        },
    })
}

impl DialogueResult {
    /// `dialogue_metrics.csv` and `dialogue_report.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let header = [
            "transcript",
            "turn",
            "H_S",
            "H_A",
            "H_Sp",
            "H_SA",
            "H_SASp",
            "MI",
            "C",
            "P",
            "H_f",
            "H_b",
            "dH",
        ];
        let mut rows = Vec::new();
        for t in &self.transcripts {
            for (i, m) in t.analysis.metrics.iter().enumerate() {
                let mut row = vec![t.id.clone(), (i + 1).to_string()];
                match m {
                    Some(m) => row.extend(
                        [
                            m.h_s, m.h_a, m.h_sp, m.h_sa, m.h_sasp, m.mi, m.capacity, m.p, m.h_f,
                            m.h_b, m.dh,
                        ]
                        .map(fmt6),
                    ),
                    None => row.extend(std::iter::repeat_n(String::new(), 11)),
                }
                rows.push(row);
            }
        }
        io::write_table(
            io::create(&dir.join("dialogue_metrics.csv"))?,
            &header,
            &rows,
        )?;

        #[derive(Serialize)]
        struct Entry<'a> {
            id: &'a str,
            control: bool,
            flagged: bool,
            detection: &'a Option<crate::dialogue::DialogueDetection>,
            skipped: &'a Option<String>,
        }
        #[derive(Serialize)]
        struct Report<'a> {
            summary: &'a DialogueSummary,
            transcripts: Vec<Entry<'a>>,
        }
        io::write_json(
            &dir.join("dialogue_report.json"),
            &Report {
                summary: &self.summary,
                transcripts: self
                    .transcripts
                    .iter()
                    .map(|t| Entry {
                        id: &t.id,
                        control: t.control,
                        flagged: t.flagged(),
                        detection: &t.analysis.detection,
                        skipped: &t.analysis.skipped,
                    })
                    .collect(),
            },
        )
    }
}

// ---------------------------------------------------------------------------
// Quantum

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantumConfig {
    pub random_states: usize,
    pub seed: u64,
    /// Largest local dimension of the random states.
    pub max_local_dim: usize,
}

impl Default for QuantumConfig {
    fn default() -> Self {
        Self {
            random_states: 1000,
            seed: 7,
            max_local_dim: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantumRow {
    pub state: String,
    pub d_a: usize,
    pub d_b: usize,
    pub values: QuantumP,
    pub expected: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantumResult {
    pub canonical: Vec<QuantumRow>,
    pub random_states: usize,
    pub random_max_p: f64,
    /// Random separable-diagonal states with `P > 0.5 + 1e-9`.
    pub random_violations: usize,
}

pub const CLASSICAL_TOL: f64 = 1e-9;

pub fn run_quantum(cfg: &QuantumConfig) -> Result<QuantumResult> {
    if cfg.max_local_dim < 2 || cfg.max_local_dim > 4 {
        return Err(Error::invalid("max_local_dim must be 2..=4"));
    }
    let canonical = canonical_states()
        .into_iter()
        .map(|(name, rho, expected)| {
            Ok(QuantumRow {
                state: name.to_string(),
                d_a: 2,
                d_b: 2,
                values: quantum_p(&rho, 2, 2)?,
                expected: Some(expected),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut max_p = f64::NEG_INFINITY;
    let mut violations = 0;
    for _ in 0..cfg.random_states {
        use rand::Rng;
        let da = rng.random_range(2..=cfg.max_local_dim);
        let db = rng.random_range(2..=cfg.max_local_dim);
        let q = quantum_p(&random_separable_diagonal(da, db, &mut rng)?, da, db)?;
        max_p = max_p.max(q.p);
        violations += usize::from(q.p > 0.5 + CLASSICAL_TOL);
    }
    Ok(QuantumResult {
        canonical,
        random_states: cfg.random_states,
        random_max_p: max_p,
        random_violations: violations,
    })
}

impl QuantumResult {
    pub fn table_rows(&self) -> Vec<Vec<String>> {
        let mut rows: Vec<Vec<String>> = self
            .canonical
            .iter()
            .map(|r| {
                vec![
                    r.state.clone(),
                    r.d_a.to_string(),
                    r.d_b.to_string(),
                    fmt6(r.values.s_a),
                    fmt6(r.values.s_b),
                    fmt6(r.values.s_ab),
                    fmt6(r.values.mutual_information),
                    fmt6(r.values.p),
                    opt6(r.expected),
                ]
            })
            .collect();
        rows.push(vec![
            format!("random_separable_diagonal_max_of_{}", self.random_states),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            fmt6(self.random_max_p),
            String::new(),
        ]);
        rows
    }

    pub const HEADER: [&'static str; 9] = [
        "state", "d_A", "d_B", "S_A", "S_B", "S_AB", "MI", "P", "expected",
    ];

    /// `quantum_bound.csv` and `quantum_report.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        io::write_table(
            io::create(&dir.join("quantum_bound.csv"))?,
            &Self::HEADER,
            &self.table_rows(),
        )?;
        io::write_json(&dir.join("quantum_report.json"), self)
    }
}

// ---------------------------------------------------------------------------
// Analyze

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub discretization: Option<StreamDiscretization>,
    /// `None` evaluates the whole stream as one window.
    pub window: Option<WindowSpec>,
    /// Windows `0..n` form the detection baseline; detection runs from `n`.
    pub baseline_windows: Option<usize>,
    pub detector: DetectorSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeSummary {
    pub kind: io::StreamKind,
    pub passive: bool,
    pub transitions: usize,
    pub windows: usize,
    pub mean: BTreeMap<Metric, f64>,
    pub audit: WindowAudit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeResult {
    pub series: MetricSeries,
    pub summary: AnalyzeSummary,
    pub report: Option<DetectionReport>,
}

pub fn run_analyze(stream: &io::LoadedStream, cfg: &AnalyzeConfig) -> Result<AnalyzeResult> {
    let n = stream.triples.len();
    let spec = match cfg.window {
        Some(w) => w,
        None => WindowSpec::new(n, n.max(1))?,
    };
    let series = metric_series(&stream.triples, &spec)?;
    let rewards: Option<Vec<f64>> = stream.rewards.iter().copied().collect();
    let report = match cfg.baseline_windows {
        None => None,
        Some(b) => {
            if b < 2 || b >= series.len() {
                return Err(Error::invalid(format!(
                    "baseline of {b} windows needs at least 2 and fewer than the {} windows in the stream",
                    series.len()
                )));
            }
            let reward_track = rewards.map(|r| {
                series
                    .windows
                    .iter()
                    .map(|m| mean_std(&r[m.t_start..m.t_end]).0)
                    .collect::<Vec<_>>()
            });
            let tracks = Tracks::from_series(&series, reward_track)?;
            Some(build_report(&tracks, 0..b, b, &cfg.detector)?)
        }
    };
    let mean = IDT_METRICS
        .iter()
        .map(|&m| {
            (
                m,
                mean_std(&series.values(|w: &InteractionMetrics| w.get(m).unwrap_or(f64::NAN))).0,
            )
        })
        .collect();
    Ok(AnalyzeResult {
        summary: AnalyzeSummary {
            kind: stream.kind,
            passive: stream.passive,
            transitions: n,
            windows: series.len(),
            mean,
            audit: WindowAudit::of(&series),
        },
        series,
        report,
    })
}

impl AnalyzeResult {
    /// `metrics.csv`, `summary.json` and, with a baseline, `report.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_metrics(&dir.join("metrics.csv"), &self.series)?;
        io::write_json(&dir.join("summary.json"), &self.summary)?;
        if let Some(r) = &self.report {
            io::write_json(&dir.join("report.json"), r)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_none());
    }

    #[test]
    fn quantum_small_run() {
        let r = run_quantum(&QuantumConfig {
            random_states: 50,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(r.random_violations, 0);
        assert!((r.canonical[0].values.p - 1.0).abs() < 1e-10);
    }
}
