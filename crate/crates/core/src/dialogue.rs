//! Token-bag interaction metrics over multi-turn transcripts.
//!
//! For turn `t`: `S` is every token of turns before `t` (most recent
//! `context_cap` tokens), `A` is the response at `t`, and `S'` is the prompt
//! of turn `t + 1`. Joint entropies are entropies of merged token bags, so
//! mutual information here measures vocabulary overlap. It is reported
//! unclamped and can be negative when bags share no tokens.
//!
//! Bags are merged either by summing counts or, by default, as an
//! equal-weight mixture of the normalized bags. With summed counts the
//! response's weight shrinks as the context grows to thousands of tokens,
//! and the per-turn metrics stop reflecting the current turn.

use std::collections::{BTreeMap, VecDeque};

use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{Metric, IDT_METRICS};
use crate::discretize::mean_std;
use crate::error::{Error, Result};
use crate::metrics::{shannon_entropy, Symbol, SymbolDistribution};

pub type Token = Symbol;

/// Turn numbers are 1-based throughout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub prompt: Vec<Token>,
    pub response: Vec<Token>,
    pub injected: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Transcript {
    pub turns: Vec<Turn>,
    /// Free-form labels, e.g. the generating profile.
    pub labels: BTreeMap<String, String>,
}

impl Transcript {
    pub fn injection_turns(&self) -> Vec<usize> {
        self.turns
            .iter()
            .enumerate()
            .filter(|(_, t)| t.injected)
            .map(|(i, _)| i + 1)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.turns.is_empty() {
            return Err(Error::invalid("transcript has no turns"));
        }
        Ok(())
    }
}

/// Whitespace tokenizer with a vocabulary assigned in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Tokenizer {
    vocab: BTreeMap<String, Token>,
}

impl Tokenizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn encode(&mut self, text: &str) -> Vec<Token> {
        text.split_whitespace()
            .map(|w| {
                let next = self.vocab.len() as Token;
                *self.vocab.entry(w.to_string()).or_insert(next)
            })
            .collect()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnMetrics {
    pub turn: usize,
    pub h_s: f64,
    pub h_a: f64,
    pub h_sp: f64,
    pub h_sa: f64,
    pub h_sasp: f64,
    /// `H(S) + H(A) − H(S,A)`.
    pub mi_s_a: f64,
    /// `H(S,A) + H(S') − H(S,A,S')`, unclamped.
    pub mi: f64,
    pub capacity: f64,
    pub p: f64,
    pub h_f: f64,
    pub h_b: f64,
    pub dh: f64,
}

impl TurnMetrics {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::P => Some(self.p),
            Metric::Hf => Some(self.h_f),
            Metric::Hb => Some(self.h_b),
            Metric::DH => Some(self.dh),
            Metric::Reward => None,
        }
    }
}

/// How the joint entropy of several token bags is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum JointMode {
    /// Entropy of the bag with counts summed; long texts dominate.
    MergedCounts,
    /// Entropy of the equal-weight mixture of the normalized bags.
    #[default]
    EqualWeight,
}

/// Entropy (bits) of the equal-weight mixture of non-empty bags.
pub fn mixture_entropy(bags: &[&SymbolDistribution]) -> f64 {
    let mut p: BTreeMap<Symbol, f64> = BTreeMap::new();
    let w = 1.0 / bags.len() as f64;
    for b in bags {
        let n = b.total() as f64;
        for (sym, c) in b.iter() {
            *p.entry(sym).or_insert(0.0) += w * c as f64 / n;
        }
    }
    -p.values()
        .filter(|q| **q > 0.0)
        .map(|q| q * q.log2())
        .sum::<f64>()
}

/// Metrics from three token bags; `None` if any bag is empty.
pub fn bag_metrics(
    turn: usize,
    s: &SymbolDistribution,
    a: &SymbolDistribution,
    sp: &SymbolDistribution,
    mode: JointMode,
) -> Option<TurnMetrics> {
    if s.is_empty() || a.is_empty() || sp.is_empty() {
        return None;
    }
    let h = |d: &SymbolDistribution| shannon_entropy(d).unwrap_or(0.0);
    let (h_sa, h_sasp) = match mode {
        JointMode::MergedCounts => {
            let mut sa = s.clone();
            sa.merge(a);
            let mut sasp = sa.clone();
            sasp.merge(sp);
            (h(&sa), h(&sasp))
        }
        JointMode::EqualWeight => (mixture_entropy(&[s, a]), mixture_entropy(&[s, a, sp])),
    };
    let (h_s, h_a, h_sp) = (h(s), h(a), h(sp));
    let capacity = h_s + h_a + h_sp;
    let mi = h_sa + h_sp - h_sasp;
    let h_f = h_sasp - h_sa;
    let h_b = h_sasp - h_sp;
    Some(TurnMetrics {
        turn,
        h_s,
        h_a,
        h_sp,
        h_sa,
        h_sasp,
        mi_s_a: h_s + h_a - h_sa,
        mi,
        capacity,
        p: if capacity > 0.0 { mi / capacity } else { 0.0 },
        h_f,
        h_b,
        dh: h_f - h_b,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DialogueConfig {
    /// Most recent context tokens kept in `S`.
    pub context_cap: usize,
    /// Early turns left out of the baseline while the context fills.
    pub warmup_turns: usize,
    /// Turns required before the first checked turn.
    pub min_baseline_turns: usize,
    pub k: f64,
    /// Metrics whose excursion counts as a detection.
    pub flag_metrics: Vec<Metric>,
    pub joint_mode: JointMode,
}

impl Default for DialogueConfig {
    fn default() -> Self {
        Self {
            context_cap: 4096,
            warmup_turns: 10,
            min_baseline_turns: 30,
            k: 3.0,
            flag_metrics: vec![Metric::P, Metric::Hb],
            joint_mode: JointMode::default(),
        }
    }
}

/// Metrics for every turn; `None` where a bag is empty or there is no next
/// prompt.
pub fn turn_series(transcript: &Transcript, cfg: &DialogueConfig) -> Vec<Option<TurnMetrics>> {
    let mut context: VecDeque<Token> = VecDeque::new();
    let mut out = Vec::with_capacity(transcript.turns.len());
    for (i, turn) in transcript.turns.iter().enumerate() {
        let next = transcript.turns.get(i + 1);
        let m = next.and_then(|n| {
            let s = SymbolDistribution::from_symbols(context.iter().copied());
            let a = SymbolDistribution::from_symbols(turn.response.iter().copied());
            let sp = SymbolDistribution::from_symbols(n.prompt.iter().copied());
            bag_metrics(i + 1, &s, &a, &sp, cfg.joint_mode)
        });
        out.push(m);
        context.extend(turn.prompt.iter().chain(&turn.response).copied());
        while context.len() > cfg.context_cap {
            context.pop_front();
        }
    }
    out
}

/// Metrics of one turn (1-based).
pub fn turn_metrics(
    transcript: &Transcript,
    turn: usize,
    cfg: &DialogueConfig,
) -> Result<Option<TurnMetrics>> {
    if turn == 0 || turn > transcript.turns.len() {
        return Err(Error::invalid(format!(
            "turn {turn} outside transcript of {} turns",
            transcript.turns.len()
        )));
    }
    let mut sub = transcript.clone();
    sub.turns.truncate(turn + 1);
    Ok(turn_series(&sub, cfg)[turn - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnBaseline {
    pub metric: Metric,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionCheck {
    pub turn: usize,
    pub z: BTreeMap<Metric, Option<f64>>,
    /// Flag metrics with `|z| > k`.
    pub flagged: Vec<Metric>,
    pub detected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueDetection {
    pub k: f64,
    /// Inclusive 1-based turn range used for the baseline.
    pub baseline_turns: (usize, usize),
    pub baseline: Vec<TurnBaseline>,
    pub checks: Vec<InjectionCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueAnalysis {
    pub metrics: Vec<Option<TurnMetrics>>,
    pub detection: Option<DialogueDetection>,
    pub skipped: Option<String>,
}

/// Computes the per-turn series and, when `check_turns` (or else the
/// transcript's injection turns) leave enough baseline, tests each checked
/// turn against the pre-injection baseline. The turn right before the first
/// check is left out of the baseline because its `S'` is the checked prompt.
pub fn analyze_transcript(
    transcript: &Transcript,
    check_turns: Option<&[usize]>,
    cfg: &DialogueConfig,
) -> Result<DialogueAnalysis> {
    transcript.validate()?;
    let metrics = turn_series(transcript, cfg);
    let checks: Vec<usize> =
        check_turns.map_or_else(|| transcript.injection_turns(), <[usize]>::to_vec);
    let Some(&first) = checks.iter().min() else {
        return Ok(DialogueAnalysis {
            metrics,
            detection: None,
            skipped: Some("no injection turns to check".into()),
        });
    };
    if first <= cfg.min_baseline_turns {
        return Ok(DialogueAnalysis {
            metrics,
            detection: None,
            skipped: Some(format!(
                "first checked turn {first} leaves fewer than {} baseline turns",
                cfg.min_baseline_turns
            )),
        });
    }
    let (b_start, b_end) = (cfg.warmup_turns + 1, first - 2);
    if b_end < b_start + 1 {
        return Ok(DialogueAnalysis {
            metrics,
            detection: None,
            skipped: Some("warm-up leaves fewer than 2 baseline turns".into()),
        });
    }
    let baseline: Vec<TurnBaseline> = IDT_METRICS
        .iter()
        .map(|&metric| {
            let vals: Vec<f64> = metrics[b_start - 1..b_end]
                .iter()
                .flatten()
                .filter_map(|m| m.get(metric))
                .collect();
            let (mean, std) = if vals.len() >= 2 {
                mean_std(&vals)
            } else {
                (f64::NAN, 0.0)
            };
            TurnBaseline { metric, mean, std }
        })
        .collect();
    let checks = checks
        .iter()
        .map(|&turn| {
            let m = metrics.get(turn.wrapping_sub(1)).copied().flatten();
            let z: BTreeMap<Metric, Option<f64>> = baseline
                .iter()
                .map(|b| {
                    let z = m
                        .and_then(|m| m.get(b.metric))
                        .filter(|_| b.std > 0.0)
                        .map(|v| (v - b.mean) / b.std);
                    (b.metric, z)
                })
                .collect();
            let flagged: Vec<Metric> = cfg
                .flag_metrics
                .iter()
                .copied()
                .filter(|f| z.get(f).copied().flatten().is_some_and(|z| z.abs() > cfg.k))
                .collect();
            InjectionCheck {
                turn,
                detected: !flagged.is_empty(),
                z,
                flagged,
            }
        })
        .collect();
    Ok(DialogueAnalysis {
        metrics,
        detection: Some(DialogueDetection {
            k: cfg.k,
            baseline_turns: (b_start, b_end),
            baseline,
            checks,
        }),
        skipped: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Coherent,
    Contradiction,
    TopicShift,
    NonSequitur,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Coherent => "coherent",
            Profile::Contradiction => "contradiction",
            Profile::TopicShift => "topic_shift",
            Profile::NonSequitur => "non_sequitur",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "coherent" => Ok(Profile::Coherent),
            "contradiction" => Ok(Profile::Contradiction),
            "topic_shift" => Ok(Profile::TopicShift),
            "non_sequitur" => Ok(Profile::NonSequitur),
            other => Err(Error::invalid(format!(
                "unknown transcript profile {other:?}"
            ))),
        }
    }
}

pub const INJECTION_TURNS: [usize; 5] = [31, 46, 61, 76, 91];

/// Synthetic transcript generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub turns: usize,
    pub injection_turns: Vec<usize>,
    /// Message length range, inclusive.
    pub min_len: usize,
    pub max_len: usize,
    pub topic_vocab: usize,
    pub function_vocab: usize,
    /// Probability a token echoes one from the previous message.
    pub echo: f64,
    /// Probability a fresh token is a function word.
    pub function_rate: f64,
    /// Length multiplier of the student's reply to an injected prompt.
    pub reply_scale: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            turns: 100,
            injection_turns: INJECTION_TURNS.to_vec(),
            min_len: 35,
            max_len: 45,
            topic_vocab: 200,
            function_vocab: 40,
            echo: 0.25,
            function_rate: 0.4,
            reply_scale: 3.0,
        }
    }
}

// Disjoint token-id ranges.
const FUNCTION_BASE: Token = 0;
const TOPIC_BASE: Token = 1_000;
const MARKER_BASE: Token = 10_000;
const MARKERS: Token = 8;
const SHIFT_BASE: Token = 20_000;
const RANDOM_BASE: Token = 30_000;
const RANDOM_POOL: Token = 5_000;

/// Zipf-weighted sampler over a contiguous id range.
struct Zipf {
    base: Token,
    dist: rand::distr::weighted::WeightedIndex<f64>,
}

impl Zipf {
    fn new(base: Token, size: usize) -> Result<Self> {
        let w: Vec<f64> = (1..=size).map(|r| 1.0 / r as f64).collect();
        let dist = rand::distr::weighted::WeightedIndex::new(w)
            .map_err(|e| Error::invalid(e.to_string()))?;
        Ok(Self { base, dist })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Token {
        self.base + self.dist.sample(rng) as Token
    }
}

struct Speaker<'a> {
    cfg: &'a GeneratorConfig,
    function: Zipf,
    topic: Zipf,
}

impl Speaker<'_> {
    /// One message: echo the previous message, else a function or topic word.
    fn message(&self, rng: &mut ChaCha8Rng, previous: &[Token], topic: &Zipf) -> Vec<Token> {
        let len = rng.random_range(self.cfg.min_len..=self.cfg.max_len);
        (0..len)
            .map(|_| {
                if !previous.is_empty() && rng.random::<f64>() < self.cfg.echo {
                    previous[rng.random_range(0..previous.len())]
                } else if rng.random::<f64>() < self.cfg.function_rate {
                    self.function.sample(rng)
                } else {
                    topic.sample(rng)
                }
            })
            .collect()
    }

    fn len(&self, rng: &mut ChaCha8Rng) -> usize {
        rng.random_range(self.cfg.min_len..=self.cfg.max_len)
    }

    fn reply_len(&self, rng: &mut ChaCha8Rng) -> usize {
        ((self.len(rng) as f64 * self.cfg.reply_scale).round() as usize).max(1)
    }
}

/// Deterministic synthetic transcript. Coherent turns draw Zipf-weighted
/// words from one topic vocabulary plus echoes of the previous message.
/// An injected turn replaces the teacher prompt:
///
/// - contradiction: topic words mixed with a few negation markers
/// - topic_shift: a message from an unrelated topic vocabulary
/// - non_sequitur: words drawn uniformly from a large unrelated pool
///
/// The student's reply to an injection is confused: `reply_scale` times
/// longer, half echoes of the injected prompt and half words drawn
/// uniformly from the prompt's vocabulary. The next teacher prompt returns
/// to the topic. A coherent profile carries no injections.
pub fn generate_synthetic_transcript(
    profile: Profile,
    seed: u64,
    cfg: &GeneratorConfig,
) -> Result<Transcript> {
    if cfg.turns == 0 || cfg.min_len == 0 || cfg.min_len > cfg.max_len {
        return Err(Error::invalid(
            "generator needs turns >= 1 and 1 <= min_len <= max_len",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let speaker = Speaker {
        cfg,
        function: Zipf::new(FUNCTION_BASE, cfg.function_vocab)?,
        topic: Zipf::new(TOPIC_BASE, cfg.topic_vocab)?,
    };
    let shift = Zipf::new(SHIFT_BASE, cfg.topic_vocab)?;
    let inject = profile != Profile::Coherent;
    let mut turns = Vec::with_capacity(cfg.turns);
    let mut last: Vec<Token> = Vec::new();
    for t in 1..=cfg.turns {
        let injected = inject && cfg.injection_turns.contains(&t);
        let (prompt, response) = if !injected {
            let prompt = speaker.message(&mut rng, &last, &speaker.topic);
            let response = speaker.message(&mut rng, &prompt, &speaker.topic);
            (prompt, response)
        } else {
            let n = speaker.len(&mut rng);
            let (prompt, pool): (Vec<Token>, (Token, Token)) = match profile {
                Profile::Contradiction => {
                    let prompt = (0..n)
                        .map(|_| {
                            if rng.random::<f64>() < 0.5 {
                                MARKER_BASE + rng.random_range(0..MARKERS)
                            } else {
                                speaker.topic.sample(&mut rng)
                            }
                        })
                        .collect();
                    (prompt, (TOPIC_BASE, cfg.topic_vocab as Token))
                }
                Profile::TopicShift => (
                    speaker.message(&mut rng, &[], &shift),
                    (SHIFT_BASE, cfg.topic_vocab as Token),
                ),
                Profile::NonSequitur => (
                    (0..n)
                        .map(|_| RANDOM_BASE + rng.random_range(0..RANDOM_POOL))
                        .collect(),
                    (RANDOM_BASE, RANDOM_POOL),
                ),
                Profile::Coherent => unreachable!("coherent transcripts carry no injections"),
            };
            let m = speaker.reply_len(&mut rng);
            let response = (0..m)
                .map(|_| {
                    if rng.random::<f64>() < 0.5 {
                        prompt[rng.random_range(0..prompt.len())]
                    } else {
                        pool.0 + rng.random_range(0..pool.1)
                    }
                })
                .collect();
            (prompt, response)
        };
        // After an injection the teacher returns to the topic without echoing.
        last = if injected {
            Vec::new()
        } else {
            response.clone()
        };
        turns.push(Turn {
            prompt,
            response,
            injected,
        });
    }
    let mut labels = BTreeMap::new();
    labels.insert("profile".to_string(), profile.name().to_string());
    labels.insert("seed".to_string(), seed.to_string());
    Ok(Transcript { turns, labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bag(tokens: &[Token]) -> SymbolDistribution {
        SymbolDistribution::from_symbols(tokens.iter().copied())
    }

    #[test]
    fn matched_composition_gives_full_overlap() {
        // S = {a,a,b,b}, A = {a,b}: the merged bag keeps the composition, so
        // H(S,A) = H(S) and MI(S;A) = H(A) = 1.
        for mode in [JointMode::MergedCounts, JointMode::EqualWeight] {
            let m =
                bag_metrics(1, &bag(&[0, 0, 1, 1]), &bag(&[0, 1]), &bag(&[0, 1]), mode).unwrap();
            assert!((m.mi_s_a - 1.0).abs() < 1e-12);
            assert!((m.mi_s_a - m.h_a).abs() < 1e-12);
        }
    }

    #[test]
    fn disjoint_vocabulary_raises_joint_entropy() {
        let s = bag(&[0, 1, 2, 3, 0, 1, 2, 3]);
        let sp = bag(&[0, 1, 2, 3]);
        let a = bag(&[10, 11, 12, 13]);
        let disjoint = bag_metrics(1, &s, &a, &sp, JointMode::MergedCounts).unwrap();
        assert!(disjoint.h_sa > disjoint.h_s && disjoint.h_sa > disjoint.h_a);
        // Hand values: S+A has 4 symbols at 1/6 and 4 at 1/12; adding S'
        // gives 4 at 3/16 and 4 at 1/16.
        let h_sa = 4.0 / 6.0 * 6f64.log2() + 4.0 / 12.0 * 12f64.log2();
        let h_sasp = 0.75 * (16.0f64 / 3.0).log2() + 0.25 * 4.0;
        assert!((disjoint.h_sa - h_sa).abs() < 1e-12);
        assert!((disjoint.mi - (h_sa + 2.0 - h_sasp)).abs() < 1e-12);
        // A disjoint response of equal entropy does not by itself lower P:
        // MI grows with H(S,A) while C is unchanged.
        let matched =
            bag_metrics(1, &s, &bag(&[0, 1, 2, 3]), &sp, JointMode::MergedCounts).unwrap();
        assert!((matched.mi - 2.0).abs() < 1e-12);
        assert!(disjoint.p > matched.p);
        // A disjoint response with higher entropy raises C and lowers P.
        let wide = bag(&(10..26).collect::<Vec<_>>());
        let spread = bag_metrics(1, &s, &wide, &sp, JointMode::EqualWeight).unwrap();
        let base = bag_metrics(1, &s, &bag(&[0, 1, 2, 3]), &sp, JointMode::EqualWeight).unwrap();
        assert!(spread.p < base.p);
    }

    #[test]
    fn mixture_entropy_examples() {
        let a = bag(&[0, 1]);
        assert!((mixture_entropy(&[&a, &a]) - 1.0).abs() < 1e-12);
        // Disjoint bags of equal entropy: one extra bit for the component.
        let b = bag(&[2, 3, 2, 3]);
        assert!((mixture_entropy(&[&a, &b]) - 2.0).abs() < 1e-12);
        // Equal weights ignore bag sizes; summed counts do not.
        let big = bag(&[0; 30]);
        let m = bag_metrics(1, &big, &bag(&[5]), &bag(&[0]), JointMode::EqualWeight).unwrap();
        assert!((m.h_sa - 1.0).abs() < 1e-12);
        let m = bag_metrics(1, &big, &bag(&[5]), &bag(&[0]), JointMode::MergedCounts).unwrap();
        assert!(m.h_sa < 0.25);
    }

    #[test]
    fn single_repeated_token_is_degenerate() {
        let m = bag_metrics(
            1,
            &bag(&[7, 7, 7]),
            &bag(&[7]),
            &bag(&[7, 7]),
            JointMode::MergedCounts,
        )
        .unwrap();
        assert_eq!(
            (m.h_s, m.h_a, m.h_sp, m.capacity, m.p),
            (0.0, 0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn empty_bag_gives_null() {
        assert!(bag_metrics(
            1,
            &bag(&[]),
            &bag(&[1]),
            &bag(&[1]),
            JointMode::MergedCounts
        )
        .is_none());
    }

    #[test]
    fn context_uses_prior_turns_only() {
        let tr = Transcript {
            turns: vec![
                Turn {
                    prompt: vec![1, 2],
                    response: vec![3, 4],
                    injected: false,
                },
                Turn {
                    prompt: vec![5],
                    response: vec![6, 6],
                    injected: false,
                },
                Turn {
                    prompt: vec![7, 8],
                    response: vec![9],
                    injected: false,
                },
            ],
            labels: BTreeMap::new(),
        };
        let cfg = DialogueConfig::default();
        let series = turn_series(&tr, &cfg);
        assert!(series[0].is_none(), "turn 1 has no prior context");
        let m = series[1].unwrap();
        assert!((m.h_s - 2.0).abs() < 1e-12);
        assert_eq!(m.h_a, 0.0);
        assert!((m.h_sp - 1.0).abs() < 1e-12);
        assert!(series[2].is_none(), "last turn has no next prompt");
        // Cap of 1 keeps only the most recent token (4).
        let capped = DialogueConfig {
            context_cap: 1,
            ..DialogueConfig::default()
        };
        assert_eq!(turn_series(&tr, &capped)[1].unwrap().h_s, 0.0);
        assert_eq!(turn_metrics(&tr, 2, &cfg).unwrap(), series[1]);
        assert!(turn_metrics(&tr, 4, &cfg).is_err());
    }

    #[test]
    fn tokenizer_is_first_seen_order() {
        let mut t = Tokenizer::new();
        assert_eq!(t.encode("b a b"), vec![0, 1, 0]);
        assert_eq!(t.encode(" c  a"), vec![2, 1]);
        assert_eq!(t.vocab_size(), 3);
    }

    #[test]
    fn generator_labels_and_determinism() {
        let cfg = GeneratorConfig::default();
        let a = generate_synthetic_transcript(Profile::NonSequitur, 3, &cfg).unwrap();
        assert_eq!(
            a,
            generate_synthetic_transcript(Profile::NonSequitur, 3, &cfg).unwrap()
        );
        assert_ne!(
            a,
            generate_synthetic_transcript(Profile::NonSequitur, 4, &cfg).unwrap()
        );
        assert_eq!(a.injection_turns(), INJECTION_TURNS.to_vec());
        let c = generate_synthetic_transcript(Profile::Coherent, 3, &cfg).unwrap();
        assert!(c.injection_turns().is_empty());
        assert_eq!(c.turns.len(), 100);
    }

    #[test]
    fn short_baseline_skips_detection() {
        let cfg = GeneratorConfig {
            injection_turns: vec![12],
            ..GeneratorConfig::default()
        };
        let t = generate_synthetic_transcript(Profile::TopicShift, 1, &cfg).unwrap();
        let a = analyze_transcript(&t, None, &DialogueConfig::default()).unwrap();
        assert!(a.detection.is_none());
        assert!(a.skipped.is_some());
    }
}
