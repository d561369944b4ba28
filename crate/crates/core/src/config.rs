//! Run configuration file. Every section is optional and falls back to
//! the defaults; unknown keys are rejected. Command-line flags are applied
//! on top of the loaded values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{
    AgentConfig, AnalyzeConfig, DialogueExperimentConfig, PendulumConfig, QuantumConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: Option<PathBuf>,
    pub pendulum: PendulumConfig,
    pub agent: AgentConfig,
    pub dialogue: DialogueExperimentConfig,
    pub quantum: QuantumConfig,
    pub analyze: AnalyzeConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Pendulum,
    Agent,
    Dialogue,
    Quantum,
    Analyze,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            reason: format!("config: {e}"),
        })
    }

    /// Checks the section used by `experiment`.
    pub fn validate(&self, experiment: Experiment) -> Result<()> {
        match experiment {
            Experiment::Pendulum => {
                let p = &self.pendulum;
                p.window.validate()?;
                p.discretization.validate(4)?;
                if p.batch.runs == 0 {
                    return Err(Error::invalid("pendulum.batch.runs must be positive"));
                }
                if !(p.batch.duration > 0.0 && p.sample_dt > 0.0 && p.batch.omega_max >= 0.0) {
                    return Err(Error::invalid(
                        "pendulum duration and sample_dt must be positive",
                    ));
                }
            }
            Experiment::Agent => {
                let a = &self.agent;
                a.trial.window.validate()?;
                if a.grid.seeds.is_empty() || a.grid.policies.is_empty() {
                    return Err(Error::invalid(
                        "agent.grid needs at least one seed and one policy",
                    ));
                }
                if a.trial.onset_step >= a.trial.steps {
                    return Err(Error::invalid("agent.trial.onset_step must be below steps"));
                }
            }
            Experiment::Dialogue => {
                let d = &self.dialogue;
                if d.seeds.is_empty() && d.control_seeds.is_empty() {
                    return Err(Error::invalid("dialogue needs seeds or control_seeds"));
                }
                if !(d.analysis.k > 0.0) || d.analysis.flag_metrics.is_empty() {
                    return Err(Error::invalid(
                        "dialogue.analysis needs k > 0 and a flag metric",
                    ));
                }
            }
            Experiment::Quantum => {
                if self.quantum.random_states == 0 {
                    return Err(Error::invalid("quantum.random_states must be positive"));
                }
            }
            Experiment::Analyze => {
                if let Some(w) = &self.analyze.window {
                    w.validate()?;
                }
            }
        }
        let k = match experiment {
            Experiment::Agent => self.agent.trial.detector.k,
            Experiment::Analyze => self.analyze.detector.k,
            _ => 1.0,
        };
        if !(k > 0.0) {
            return Err(Error::invalid("detector k must be positive"));
        }
        Ok(())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}
