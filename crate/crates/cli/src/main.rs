use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bipred::agent::{PerturbationKind, PolicyKind, RewardMode};
use bipred::config::{Experiment, RunConfig};
use bipred::detector::Metric;
use bipred::dialogue::{JointMode, Profile};
use bipred::experiments::{
    run_agent, run_analyze, run_dialogue, run_pendulum, run_quantum, synthetic_corpus, CorpusEntry,
    QuantumResult,
};
use bipred::io::{self, fmt6, StreamDiscretization};
use bipred::windowing::WindowSpec;
use bipred::Error;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

/// Interaction-metric experiments: P, H_f, H_b and ΔH over symbol streams.
#[derive(Debug, Parser)]
#[command(name = "bipred", version)]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for artifacts.
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a double-pendulum batch and compute per-window metrics and FTLE.
    SimulatePendulum(PendulumArgs),
    /// Run the synthetic-agent perturbation grid and compare detectors.
    RunAgentTrials(AgentArgs),
    /// Per-turn metrics and injection detection over transcripts.
    AnalyzeDialogue(DialogueArgs),
    /// Quantum P for canonical and random separable states.
    QuantumVerify(QuantumArgs),
    /// Metrics over a JSONL transition stream.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
struct PendulumArgs {
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Seconds per run.
    #[arg(long)]
    duration: Option<f64>,
    /// Initial angular velocities are drawn from ±omega_max rad/s.
    #[arg(long)]
    omega_max: Option<f64>,
    #[arg(long)]
    bins: Option<u32>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    /// Also write every trajectory as CSV.
    #[arg(long)]
    trajectories: bool,
}

#[derive(Debug, Args)]
struct AgentArgs {
    /// Seeds as a list or range, e.g. `1-20` or `1,4,9`.
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<Seeds>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    onset: Option<usize>,
    #[arg(long)]
    k: Option<f64>,
    /// Comma-separated perturbation kinds.
    #[arg(long, value_delimiter = ',')]
    kinds: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    magnitudes: Option<Vec<f64>>,
    /// Comma-separated policies (soft, sharp).
    #[arg(long, value_delimiter = ',')]
    policies: Option<Vec<String>>,
    /// Use the mean reward of the last completed episode of this length.
    #[arg(long)]
    episode_length: Option<usize>,
    /// Skip the unperturbed control runs.
    #[arg(long)]
    no_null_control: bool,
}

#[derive(Debug, Args)]
struct DialogueArgs {
    /// Transcript JSONL files. Without any, a synthetic corpus is generated.
    transcripts: Vec<PathBuf>,
    /// Turns to test instead of the transcripts' injection labels.
    #[arg(long, value_delimiter = ',')]
    check_turns: Option<Vec<usize>>,
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<Seeds>,
    #[arg(long, value_parser = parse_seeds)]
    control_seeds: Option<Seeds>,
    /// Comma-separated injected profiles of the synthetic corpus.
    #[arg(long, value_delimiter = ',')]
    profiles: Option<Vec<String>>,
    #[arg(long)]
    k: Option<f64>,
    /// `equal_weight` or `merged_counts`.
    #[arg(long)]
    joint_mode: Option<String>,
    /// Also write the synthetic transcripts as JSONL.
    #[arg(long)]
    export_transcripts: bool,
}

#[derive(Debug, Args)]
struct QuantumArgs {
    #[arg(long)]
    random_states: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// JSONL stream: {"t", "s", "a", "sp", "r"} per line.
    input: PathBuf,
    /// Bins per dimension for continuous vectors.
    #[arg(long)]
    bins: Option<u32>,
    /// Window width; without it the whole stream is one window.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    /// Windows before this index form the detection baseline.
    #[arg(long)]
    baseline_windows: Option<usize>,
    #[arg(long)]
    k: Option<f64>,
}

/// Seed list parsed from `1-20` or `1,4,9` style arguments.
#[derive(Debug, Clone)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: u64 = a.trim().parse().map_err(|e| format!("{part}: {e}"))?;
                let b: u64 = b.trim().parse().map_err(|e| format!("{part}: {e}"))?;
                if b < a {
                    return Err(format!("empty seed range {part}"));
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|e| format!("{part}: {e}"))?),
        }
    }
    if out.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(Seeds(out))
}

fn parse_name<T: DeserializeOwned>(what: &str, s: &str) -> Result<T, Failure> {
    serde_json::from_value(serde_json::Value::String(s.trim().to_string()))
        .map_err(|_| Failure::Usage(format!("unknown {what} {s:?}")))
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { 2 } else { 1 })
        }
    }
}

/// Caps rayon's pool at `BIPRED_THREADS` when set.
fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("BIPRED_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("BIPRED_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn window_override(
    base: WindowSpec,
    width: Option<usize>,
    stride: Option<usize>,
) -> Result<WindowSpec, Failure> {
    WindowSpec::new(width.unwrap_or(base.width), stride.unwrap_or(base.stride))
        .map_err(|e| Failure::Usage(e.to_string()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            Error::Io(io) => Failure::Usage(format!("cannot read config {}: {io}", p.display())),
            other => Failure::Usage(other.to_string()),
        })?,
        None => RunConfig::default(),
    };
    if let Some(o) = &cli.out {
        cfg.output_dir = Some(o.clone());
    }
    let out = cfg.output_dir();
    let experiment = match &cli.command {
        Command::SimulatePendulum(_) => Experiment::Pendulum,
        Command::RunAgentTrials(_) => Experiment::Agent,
        Command::AnalyzeDialogue(_) => Experiment::Dialogue,
        Command::QuantumVerify(_) => Experiment::Quantum,
        Command::Analyze(_) => Experiment::Analyze,
    };
    match cli.command {
        Command::SimulatePendulum(a) => {
            let p = &mut cfg.pendulum;
            if let Some(v) = a.runs {
                p.batch.runs = v;
            }
            if let Some(v) = a.seed {
                p.batch.seed = v;
            }
            if let Some(v) = a.duration {
                p.batch.duration = v;
            }
            if let Some(v) = a.omega_max {
                p.batch.omega_max = v;
            }
            if let Some(v) = a.bins {
                p.discretization.bins_per_dim = v;
            }
            p.window = window_override(p.window, a.window, a.stride)?;
            p.write_trajectories |= a.trajectories;
            cfg.validate(experiment)
                .map_err(|e| Failure::Usage(e.to_string()))?;
            let r = run_pendulum(&cfg.pendulum)?;
            r.write(&out, cfg.pendulum.write_trajectories)?;
            let s = &r.summary;
            println!(
                "runs={} valid={} mean_P={} std_P={} mean_dH={:.3e} std_dH_windows={:.3e} max_drift={:.2e} corr_FTLE_P={}",
                s.runs,
                s.valid_runs,
                fmt6(s.mean_p),
                fmt6(s.std_p),
                s.mean_dh,
                s.std_dh_windows,
                s.max_energy_drift,
                s.corr_ftle_p.map_or("n/a".into(), fmt6)
            );
        }
        Command::RunAgentTrials(a) => {
            let ag = &mut cfg.agent;
            if let Some(v) = a.seeds {
                ag.grid.seeds = v.0;
            }
            if let Some(v) = a.steps {
                ag.trial.steps = v;
            }
            if let Some(v) = a.onset {
                ag.trial.onset_step = v;
            }
            if let Some(v) = a.k {
                ag.trial.detector.k = v;
            }
            if let Some(v) = a.kinds {
                ag.grid.kinds = v
                    .iter()
                    .map(|s| parse_name::<PerturbationKind>("perturbation kind", s))
                    .collect::<Result<_, _>>()?;
            }
            if let Some(v) = a.magnitudes {
                ag.grid.magnitudes = v;
            }
            if let Some(v) = a.policies {
                ag.grid.policies = v
                    .iter()
                    .map(|s| parse_name::<PolicyKind>("policy", s))
                    .collect::<Result<_, _>>()?;
            }
            if let Some(n) = a.episode_length {
                ag.trial.reward_mode = RewardMode::PerEpisode { episode_length: n };
            }
            if a.no_null_control {
                ag.grid.null_control = false;
            }
            cfg.validate(experiment)
                .map_err(|e| Failure::Usage(e.to_string()))?;
            let r = run_agent(&cfg.agent)?;
            r.write(&out)?;
            for s in &r.signature_summary {
                println!(
                    "baseline {}: P={}±{} dH={}±{} over {} seeds",
                    s.policy.name(),
                    fmt6(s.mean_p),
                    fmt6(s.std_p),
                    fmt6(s.mean_dh),
                    fmt6(s.std_dh),
                    s.seeds
                );
            }
            let p = &r.summary.pooled;
            println!(
                "trials={} ensemble_rate={} reward_rate={} median_latency ensemble={} reward={} reward_preserving_idt_only={}",
                p.trials,
                fmt6(p.ensemble_rate),
                fmt6(p.reward_rate),
                p.median_ensemble_latency.map_or("n/a".into(), |x| x.to_string()),
                p.median_reward_latency.map_or("n/a".into(), |x| x.to_string()),
                r.reward_preserving_idt_only
            );
            if let Some(n) = &r.summary.null_control {
                println!(
                    "null_control ensemble_rate={} reward_rate={}",
                    fmt6(n.ensemble_rate),
                    fmt6(n.reward_rate)
                );
            }
        }
        Command::AnalyzeDialogue(a) => {
            let d = &mut cfg.dialogue;
            if let Some(v) = a.seeds {
                d.seeds = v.0;
            }
            if let Some(v) = a.control_seeds {
                d.control_seeds = v.0;
            }
            if let Some(v) = a.profiles {
                d.profiles = v
                    .iter()
                    .map(|s| Profile::parse(s.trim()).map_err(|e| Failure::Usage(e.to_string())))
                    .collect::<Result<_, _>>()?;
            }
            if let Some(v) = a.k {
                d.analysis.k = v;
            }
            if let Some(v) = &a.joint_mode {
                d.analysis.joint_mode = parse_name::<JointMode>("joint mode", v)?;
            }
            cfg.validate(experiment)
                .map_err(|e| Failure::Usage(e.to_string()))?;
            let corpus: Vec<CorpusEntry> = if a.transcripts.is_empty() {
                synthetic_corpus(&cfg.dialogue)?
            } else {
                a.transcripts
                    .iter()
                    .map(|p| {
                        Ok(CorpusEntry {
                            id: p.file_stem().map_or_else(
                                || p.display().to_string(),
                                |s| s.to_string_lossy().into(),
                            ),
                            transcript: io::load_transcript(p)?,
                            control: false,
                            check_turns: a.check_turns.clone(),
                        })
                    })
                    .collect::<Result<_, Error>>()?
            };
            let r = run_dialogue(&corpus, &cfg.dialogue.analysis)?;
            r.write(&out)?;
            if a.export_transcripts {
                let dir = out.join("transcripts");
                std::fs::create_dir_all(&dir).map_err(Error::from)?;
                for e in &corpus {
                    io::write_transcript_jsonl(
                        io::create(&dir.join(format!("{}.jsonl", e.id)))?,
                        &e.transcript,
                    )?;
                }
            }
            let s = &r.summary;
            for (profile, (hit, n)) in &s.per_profile {
                println!("{profile}: detected {hit}/{n}");
            }
            println!(
                "injections detected {}/{} controls flagged {}/{} skipped {}",
                s.detected, s.injections, s.flagged_controls, s.controls, s.skipped
            );
        }
        Command::QuantumVerify(a) => {
            if let Some(v) = a.random_states {
                cfg.quantum.random_states = v;
            }
            if let Some(v) = a.seed {
                cfg.quantum.seed = v;
            }
            cfg.validate(experiment)
                .map_err(|e| Failure::Usage(e.to_string()))?;
            let r = run_quantum(&cfg.quantum)?;
            r.write(&out)?;
            print_table(&QuantumResult::HEADER, &r.table_rows());
            println!(
                "random separable-diagonal violations of P <= 0.5: {}",
                r.random_violations
            );
        }
        Command::Analyze(a) => {
            let an = &mut cfg.analyze;
            if let Some(b) = a.bins {
                let disc = an
                    .discretization
                    .get_or_insert_with(StreamDiscretization::none);
                for c in [&mut disc.observation, &mut disc.action]
                    .into_iter()
                    .flatten()
                {
                    c.bins_per_dim = b;
                }
                disc.default_bins = Some(b);
            }
            if a.window.is_some() || a.stride.is_some() {
                let width = a.window.or(an.window.map(|w| w.width)).ok_or_else(|| {
                    Failure::Usage("--stride needs --window or a configured window".into())
                })?;
                let stride = a.stride.or(an.window.map(|w| w.stride)).unwrap_or(width);
                an.window = Some(
                    WindowSpec::new(width, stride).map_err(|e| Failure::Usage(e.to_string()))?,
                );
            }
            if let Some(v) = a.baseline_windows {
                an.baseline_windows = Some(v);
            }
            if let Some(v) = a.k {
                an.detector.k = v;
            }
            cfg.validate(experiment)
                .map_err(|e| Failure::Usage(e.to_string()))?;
            let disc = cfg
                .analyze
                .discretization
                .clone()
                .unwrap_or_else(StreamDiscretization::none);
            let stream = load_stream(&a.input, &disc)?;
            let r = run_analyze(&stream, &cfg.analyze)?;
            r.write(&out)?;
            let mean = |m: Metric| r.summary.mean.get(&m).copied().unwrap_or(f64::NAN);
            println!(
                "transitions={} windows={} P={:.4} H_f={:.4} H_b={:.4} dH={:.4}",
                r.summary.transitions,
                r.summary.windows,
                mean(Metric::P),
                mean(Metric::Hf),
                mean(Metric::Hb),
                mean(Metric::DH)
            );
            if let Some(rep) = &r.report {
                println!(
                    "ensemble detected={} latency={}",
                    rep.ensemble.detected,
                    rep.ensemble
                        .latency_windows
                        .map_or("n/a".into(), |l| l.to_string())
                );
            }
        }
    }
    Ok(())
}

fn load_stream(path: &Path, disc: &StreamDiscretization) -> Result<io::LoadedStream, Failure> {
    io::load_transition_stream(path, disc).map_err(|e| match e {
        Error::Io(err) if err.kind() == std::io::ErrorKind::NotFound => {
            Failure::Usage(format!("cannot open {}: {err}", path.display()))
        }
        other => Failure::Run(other),
    })
}

fn print_table(header: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    println!("{}", line(header.to_vec()));
    for r in rows {
        println!("{}", line(r.iter().map(String::as_str).collect()));
    }
}
