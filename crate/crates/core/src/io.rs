//! File formats: JSONL transition streams, metric and trajectory CSVs,
//! JSON reports and JSONL transcripts.
//!
//! Floats in metric CSVs are written with 6 decimals; trajectory CSVs and
//! JSONL exports use the shortest round-trip representation so they reload
//! exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dialogue::{Token, Tokenizer, Transcript, Turn};
use crate::discretize::{discretize, DimGroup, DiscretizationConfig, Normalization};
use crate::error::{Error, Result};
use crate::metrics::{Symbol, Triple};
use crate::pendulum::Trajectory;
use crate::windowing::MetricSeries;

pub const METRIC_COLUMNS: [&str; 12] = [
    "window_index",
    "t_start",
    "t_end",
    "H_S",
    "H_A",
    "H_Sp",
    "MI",
    "C",
    "P",
    "H_f",
    "H_b",
    "dH",
];

pub const TRAJECTORY_COLUMNS: [&str; 6] = ["t", "theta1", "theta2", "omega1", "omega2", "E"];

/// `{:.6}` without the `-0.000000` artifact.
pub fn fmt6(x: f64) -> String {
    let s = format!("{x:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

fn parse_err(line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        line,
        reason: reason.into(),
    }
}

// ---------------------------------------------------------------------------
// Transition streams

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Field {
    Symbol(u64),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub t: i64,
    pub s: Field,
    pub a: Option<Field>,
    pub sp: Field,
    #[serde(default)]
    pub r: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamKind {
    Discrete,
    Continuous,
}

/// A loaded stream reduced to symbol triples.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedStream {
    pub kind: StreamKind,
    pub passive: bool,
    pub t: Vec<i64>,
    pub triples: Vec<Triple>,
    pub rewards: Vec<Option<f64>>,
}

/// Discretization applied to continuous streams. `observation` must cover
/// the state vector's dimensions; `action` the action vector's. Without a
/// profile each vector is one z-scored group with `default_bins` bins per
/// dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct StreamDiscretization {
    pub observation: Option<DiscretizationConfig>,
    pub action: Option<DiscretizationConfig>,
    pub default_bins: Option<u32>,
}

impl StreamDiscretization {
    pub fn none() -> Self {
        Self::default()
    }
}

fn single_group(n_dims: usize, bins: u32) -> DiscretizationConfig {
    DiscretizationConfig {
        bins_per_dim: bins,
        normalization: Normalization::Zscore,
        circular_dims: Vec::new(),
        circular_origin: 0.0,
        groups: vec![DimGroup {
            name: "all".into(),
            dims: (0..n_dims).collect(),
        }],
    }
}

/// Default bins per dimension for continuous streams without a profile.
pub const DEFAULT_STREAM_BINS: u32 = 3;

pub fn read_transition_records<R: BufRead>(reader: R) -> Result<Vec<(usize, TransitionRecord)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TransitionRecord = serde_json::from_str(&line).map_err(|e| {
            parse_err(
                line_no,
                format!("{e}; expected {{\"t\": int, \"s\": int|[numbers], \"a\": int|[numbers]|null, \"sp\": int|[numbers], \"r\": number|null}}"),
            )
        })?;
        out.push((line_no, rec));
    }
    Ok(out)
}

pub fn load_transition_stream(path: &Path, disc: &StreamDiscretization) -> Result<LoadedStream> {
    let reader = BufReader::new(File::open(path)?);
    transitions_from_records(&read_transition_records(reader)?, disc)
}

fn vector_of(line: usize, name: &str, f: &Field, len: &mut Option<usize>) -> Result<Vec<f64>> {
    let v = match f {
        Field::Vector(v) => v.clone(),
        Field::Symbol(_) => {
            return Err(parse_err(
                line,
                format!("'{name}' is an integer in a continuous stream"),
            ))
        }
    };
    if v.is_empty() {
        return Err(parse_err(line, format!("'{name}' is an empty vector")));
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(parse_err(line, format!("'{name}'[{i}] is not finite")));
    }
    match len {
        Some(n) if *n != v.len() => Err(parse_err(
            line,
            format!("'{name}' has {} components, expected {n}", v.len()),
        )),
        _ => {
            *len = Some(v.len());
            Ok(v)
        }
    }
}

fn transpose(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    (0..d)
        .map(|j| rows.iter().map(|r| r[j]).collect())
        .collect()
}

pub fn transitions_from_records(
    records: &[(usize, TransitionRecord)],
    disc: &StreamDiscretization,
) -> Result<LoadedStream> {
    let Some((_, first)) = records.first() else {
        return Err(Error::invalid("transition stream is empty"));
    };
    let kind = match first.s {
        Field::Symbol(_) => StreamKind::Discrete,
        Field::Vector(_) => StreamKind::Continuous,
    };
    let passive = first.a.is_none();
    let mut prev_t: Option<i64> = None;
    for (line, rec) in records {
        for (name, f) in [
            ("s", Some(&rec.s)),
            ("sp", Some(&rec.sp)),
            ("a", rec.a.as_ref()),
        ] {
            let Some(f) = f else { continue };
            let this = match f {
                Field::Symbol(_) => StreamKind::Discrete,
                Field::Vector(_) => StreamKind::Continuous,
            };
            if this != kind {
                return Err(parse_err(
                    *line,
                    format!("'{name}' mixes discrete and continuous records"),
                ));
            }
        }
        if rec.a.is_none() != passive {
            return Err(parse_err(
                *line,
                "'a' is null on some records but not others",
            ));
        }
        if let Some(p) = prev_t {
            if rec.t <= p {
                return Err(parse_err(
                    *line,
                    format!("t = {} does not increase (previous {p})", rec.t),
                ));
            }
        }
        if let Some(r) = rec.r {
            if !r.is_finite() {
                return Err(parse_err(*line, "'r' is not finite"));
            }
        }
        prev_t = Some(rec.t);
    }
    let t: Vec<i64> = records.iter().map(|(_, r)| r.t).collect();
    let rewards: Vec<Option<f64>> = records.iter().map(|(_, r)| r.r).collect();

    let triples = match kind {
        StreamKind::Discrete => records
            .iter()
            .map(|(_, r)| {
                let sym = |f: &Field| match f {
                    Field::Symbol(x) => *x,
                    Field::Vector(_) => unreachable!("kind checked above"),
                };
                Triple::new(sym(&r.s), r.a.as_ref().map_or(0, sym), sym(&r.sp))
            })
            .collect(),
        StreamKind::Continuous => continuous_triples(records, disc, passive)?,
    };
    Ok(LoadedStream {
        kind,
        passive,
        t,
        triples,
        rewards,
    })
}

fn continuous_triples(
    records: &[(usize, TransitionRecord)],
    disc: &StreamDiscretization,
    passive: bool,
) -> Result<Vec<Triple>> {
    let mut obs_len = None;
    let mut act_len = None;
    let mut s_rows = Vec::with_capacity(records.len());
    let mut sp_rows = Vec::with_capacity(records.len());
    let mut a_rows = Vec::with_capacity(records.len());
    for (line, r) in records {
        s_rows.push(vector_of(*line, "s", &r.s, &mut obs_len)?);
        sp_rows.push(vector_of(*line, "sp", &r.sp, &mut obs_len)?);
        if let Some(a) = &r.a {
            a_rows.push(vector_of(*line, "a", a, &mut act_len)?);
        }
    }
    let n = records.len();
    let obs_cfg = disc.observation.clone().unwrap_or_else(|| {
        single_group(
            obs_len.unwrap_or(0),
            disc.default_bins.unwrap_or(DEFAULT_STREAM_BINS),
        )
    });

    // A chained stream (sp_t == s_{t+1}) is binned as one state series so it
    // matches discretizing the underlying trajectory directly.
    let chained = (0..n - 1).all(|i| sp_rows[i] == s_rows[i + 1]);
    let (s_sym, sp_sym): (Vec<Symbol>, Vec<Symbol>) = if chained {
        let mut states = s_rows.clone();
        states.push(sp_rows[n - 1].clone());
        let sym = discretize(&obs_cfg, &transpose(&states))?.series.symbols;
        (sym[..n].to_vec(), sym[1..].to_vec())
    } else {
        let mut stacked = s_rows;
        stacked.extend(sp_rows);
        let sym = discretize(&obs_cfg, &transpose(&stacked))?.series.symbols;
        (sym[..n].to_vec(), sym[n..].to_vec())
    };
    let a_sym: Vec<Symbol> = if passive {
        vec![0; n]
    } else {
        let act_cfg = disc
            .action
            .clone()
            .unwrap_or_else(|| single_group(act_len.unwrap_or(0), obs_cfg.bins_per_dim));
        discretize(&act_cfg, &transpose(&a_rows))?.series.symbols
    };
    Ok((0..n)
        .map(|i| Triple::new(s_sym[i], a_sym[i], sp_sym[i]))
        .collect())
}

pub fn write_transition_jsonl<W: Write>(mut w: W, records: &[TransitionRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Passive export of a trajectory: `s = x_t`, `sp = x_{t+1}`, `a = null`.
pub fn trajectory_transitions(traj: &Trajectory) -> Vec<TransitionRecord> {
    traj.states
        .windows(2)
        .enumerate()
        .map(|(i, w)| TransitionRecord {
            t: i as i64,
            s: Field::Vector(w[0].to_array().to_vec()),
            a: None,
            sp: Field::Vector(w[1].to_array().to_vec()),
            r: None,
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Metric CSV

/// One row of a metric CSV as read back.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub window_index: usize,
    pub t_start: usize,
    pub t_end: usize,
    #[serde(rename = "H_S")]
    pub h_s: f64,
    #[serde(rename = "H_A")]
    pub h_a: f64,
    #[serde(rename = "H_Sp")]
    pub h_sp: f64,
    #[serde(rename = "MI")]
    pub mi: f64,
    #[serde(rename = "C")]
    pub capacity: f64,
    #[serde(rename = "P")]
    pub p: f64,
    #[serde(rename = "H_f")]
    pub h_f: f64,
    #[serde(rename = "H_b")]
    pub h_b: f64,
    #[serde(rename = "dH")]
    pub dh: f64,
}

pub fn write_metric_csv<W: Write>(w: W, series: &MetricSeries) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(METRIC_COLUMNS)?;
    for m in &series.windows {
        let mut rec = vec![
            m.window_index.to_string(),
            m.t_start.to_string(),
            m.t_end.to_string(),
        ];
        rec.extend(
            [
                m.h_s, m.h_a, m.h_sp, m.mi, m.capacity, m.p, m.h_f, m.h_b, m.dh,
            ]
            .map(fmt6),
        );
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_metric_csv<R: std::io::Read>(r: R) -> Result<Vec<MetricRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(METRIC_COLUMNS) {
        return Err(parse_err(
            1,
            format!(
                "unexpected metric CSV header: {}",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    rdr.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| parse_err(i + 2, e.to_string())))
        .collect()
}

// ---------------------------------------------------------------------------
// Trajectory CSV

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub omega1: f64,
    pub omega2: f64,
    #[serde(rename = "E")]
    pub energy: f64,
}

pub fn write_trajectory_csv<W: Write>(w: W, traj: &Trajectory) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRAJECTORY_COLUMNS)?;
    for ((t, s), e) in traj.times().zip(&traj.states).zip(&traj.energy) {
        out.write_record([t, s.theta1, s.theta2, s.omega1, s.omega2, *e].map(|x| x.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trajectory_csv<R: std::io::Read>(r: R) -> Result<Vec<TrajectoryRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(TRAJECTORY_COLUMNS) {
        return Err(parse_err(1, "unexpected trajectory CSV header"));
    }
    rdr.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| parse_err(i + 2, e.to_string())))
        .collect()
}

// ---------------------------------------------------------------------------
// Generic artifacts

/// Pretty JSON with a trailing newline. Non-finite floats become `null`.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Writes a CSV with a header row; every row must match the header length.
pub fn write_table<W: Write>(w: W, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header)?;
    for r in rows {
        out.write_record(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

// ---------------------------------------------------------------------------
// Transcripts

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Utterance {
    Tokens(Vec<Token>),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn: usize,
    pub prompt: Utterance,
    pub response: Utterance,
    #[serde(default)]
    pub injected: bool,
}

/// Reads one transcript per file. Turns must be numbered 1, 2, … in order.
/// Text utterances are tokenized on whitespace with a per-file vocabulary;
/// a file must not mix text and token-id utterances.
pub fn read_transcript_jsonl<R: BufRead>(reader: R) -> Result<Transcript> {
    let mut tok = Tokenizer::new();
    let mut text_mode: Option<bool> = None;
    let mut turns = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TurnRecord = serde_json::from_str(&line).map_err(|e| {
            parse_err(
                line_no,
                format!("{e}; expected {{\"turn\": int, \"prompt\": str|[ints], \"response\": str|[ints], \"injected\": bool}}"),
            )
        })?;
        if rec.turn != turns.len() + 1 {
            return Err(parse_err(
                line_no,
                format!(
                    "turn {} out of sequence, expected {}",
                    rec.turn,
                    turns.len() + 1
                ),
            ));
        }
        let mut encode = |u: Utterance| -> Result<Vec<Token>> {
            let is_text = matches!(u, Utterance::Text(_));
            if *text_mode.get_or_insert(is_text) != is_text {
                return Err(parse_err(
                    line_no,
                    "file mixes text and token-id utterances",
                ));
            }
            Ok(match u {
                Utterance::Tokens(t) => t,
                Utterance::Text(s) => tok.encode(&s),
            })
        };
        let prompt = encode(rec.prompt)?;
        let response = encode(rec.response)?;
        turns.push(Turn {
            prompt,
            response,
            injected: rec.injected,
        });
    }
    if turns.is_empty() {
        return Err(Error::invalid("transcript file has no turns"));
    }
    Ok(Transcript {
        turns,
        labels: Default::default(),
    })
}

pub fn load_transcript(path: &Path) -> Result<Transcript> {
    read_transcript_jsonl(BufReader::new(File::open(path)?))
}

pub fn write_transcript_jsonl<W: Write>(mut w: W, transcript: &Transcript) -> Result<()> {
    for (i, t) in transcript.turns.iter().enumerate() {
        let rec = TurnRecord {
            turn: i + 1,
            prompt: Utterance::Tokens(t.prompt.clone()),
            response: Utterance::Tokens(t.response.clone()),
            injected: t.injected,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
