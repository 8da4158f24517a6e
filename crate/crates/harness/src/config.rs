//! Experiment configuration files.
//!
//! JSON, versioned by `schema_version`; unknown fields are rejected. Every
//! field round-trips through serialization unchanged.

use std::path::{Path, PathBuf};

use robust_stream::adversary::{ProbeSchedule, SuffixSwitchConfig};
use robust_stream::asa::{default_grid_exponent, AsaConfig, CopyCount, Eps0Setting, GridSpec};
use robust_stream::asbi::AsbiConfig;
use robust_stream::F2Params;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Asa,
    Asbi,
    Attack,
    ObliviousBaseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub mode: Mode,
    pub trials: usize,
    pub base_seed: u64,
    pub out_dir: PathBuf,
    /// Worker cap; `ROBUST_STREAM_THREADS` lowers it further.
    #[serde(default)]
    pub threads: Option<usize>,
    /// Per-trial CSV transcripts; summary files are always written.
    #[serde(default = "yes")]
    pub write_transcripts: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asa: Option<AsaSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asbi: Option<AsbiSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oblivious: Option<ObliviousSection>,
}

fn yes() -> bool {
    true
}

fn default_beta() -> f64 {
    0.1
}

/// Explicit sketch shape: `groups` means of `group_size` counters of
/// `width_bits` bits. Absent, the shape follows from `alpha`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SketchShape {
    pub group_size: usize,
    pub groups: usize,
    pub width_bits: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Copies {
    Fixed(usize),
    Formula { c_k: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Eps0 {
    Fixed(f64),
    Derived {
        epsilon: f64,
        #[serde(default)]
        delta: Option<f64>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub exponent: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum AsaAdversarySpec {
    Oblivious { delete_prob: f64 },
    /// Script text in the line format of `ScriptedAdversary`.
    Scripted { script: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsaSection {
    pub stream_len: usize,
    pub query_budget: usize,
    pub eta: u64,
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub domain: u32,
    pub copies: Copies,
    pub eps0: Eps0,
    #[serde(default)]
    pub sketch: Option<SketchShape>,
    /// Defaults to ratio `alpha / 4` and the smallest integer exponent `c`
    /// with `n^c >= 4 m^2`.
    #[serde(default)]
    pub grid: Option<Grid>,
    pub adversary: AsaAdversarySpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AsbiAlgorithmSpec {
    Robust,
    /// One F2 sketch, seeded like the robust algorithm's first answer copy.
    Unprotected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Never,
    AfterProbes,
    At(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum AsbiAdversarySpec {
    Oblivious {
        delete_prob: f64,
    },
    SuffixSwitch {
        probes_per_round: usize,
        /// Relative drift that triggers an interruption; absent = never.
        #[serde(default)]
        threshold: Option<f64>,
        schedule: Schedule,
        gain: f64,
        max_weight: u32,
    },
    Scripted {
        script: String,
    },
}

impl AsbiAdversarySpec {
    /// The probe-and-amplify attacker with its tuned defaults.
    pub fn suffix_switch() -> Self {
        let d = SuffixSwitchConfig::scheduled(2, 1);
        AsbiAdversarySpec::SuffixSwitch {
            probes_per_round: d.probes_per_round,
            threshold: None,
            schedule: Schedule::AfterProbes,
            gain: d.gain,
            max_weight: d.max_weight,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsbiSection {
    pub stream_len: usize,
    pub interruptions: usize,
    pub alpha: f64,
    pub domain: u32,
    #[serde(default)]
    pub sketch: Option<SketchShape>,
    pub algorithm: AsbiAlgorithmSpec,
    pub adversary: AsbiAdversarySpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerSpec {
    /// Levelled ℓ0 sampler, about `log^2 n` words.
    Levelled,
    /// Reference sampler holding the whole support.
    Exact,
    /// Always answers the first element of `Y`.
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    pub t: usize,
    pub domain: u32,
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub repetitions: Option<usize>,
    /// Hand a random advice bit to samplers that ask for one.
    #[serde(default)]
    pub advice: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObliviousSection {
    pub stream_len: usize,
    pub domain: u32,
    pub alpha: f64,
    pub delete_prob: f64,
    #[serde(default)]
    pub sketch: Option<SketchShape>,
    /// When set, every trial sees the same stream drawn from this seed and
    /// only the sketch seed varies.
    #[serde(default)]
    pub stream_seed: Option<u64>,
}

fn sketch_params(shape: Option<SketchShape>, alpha: f64) -> Result<F2Params, HarnessError> {
    let params = match shape {
        Some(s) => F2Params::with_shape(s.group_size, s.groups, s.width_bits),
        None => F2Params::for_accuracy(alpha),
    };
    params.map_err(|e| HarnessError::Config(e.to_string()))
}

fn check_prob(name: &str, p: f64) -> Result<(), HarnessError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(HarnessError::Config(format!("{name} = {p} outside [0, 1]")))
    }
}

impl AsaSection {
    pub fn engine_config(&self) -> Result<AsaConfig, HarnessError> {
        let grid = self.grid.unwrap_or(Grid {
            exponent: default_grid_exponent(self.domain, self.stream_len),
            ratio: self.alpha / 4.0,
        });
        let config = AsaConfig {
            stream_len: self.stream_len,
            query_budget: self.query_budget,
            eta: self.eta,
            alpha: self.alpha,
            beta: self.beta,
            domain: self.domain,
            sketch: sketch_params(self.sketch, self.alpha)?,
            copies: match self.copies {
                Copies::Fixed(k) => CopyCount::Fixed(k),
                Copies::Formula { c_k } => CopyCount::Formula { c_k },
            },
            eps0: match self.eps0 {
                Eps0::Fixed(e) => Eps0Setting::Fixed(e),
                Eps0::Derived { epsilon, delta } => Eps0Setting::Derived { epsilon, delta },
            },
            grid: GridSpec {
                exponent: grid.exponent,
                ratio: grid.ratio,
            },
        };
        config
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if let AsaAdversarySpec::Oblivious { delete_prob } = self.adversary {
            check_prob("delete_prob", delete_prob)?;
        }
        Ok(config)
    }
}

impl AsbiSection {
    pub fn engine_config(&self) -> Result<AsbiConfig, HarnessError> {
        let config = AsbiConfig {
            interruptions: self.interruptions,
            stream_len: self.stream_len,
            alpha: self.alpha,
            beta: F2Params::BETA_SINGLE,
            domain: self.domain,
            sketch: sketch_params(self.sketch, self.alpha)?,
        };
        config
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        match &self.adversary {
            AsbiAdversarySpec::Oblivious { delete_prob } => check_prob("delete_prob", *delete_prob)?,
            AsbiAdversarySpec::SuffixSwitch {
                probes_per_round,
                gain,
                ..
            } => {
                if *probes_per_round == 0 || !(gain.is_finite() && *gain > 0.0) {
                    return Err(HarnessError::Config(
                        "suffix_switch needs probes_per_round >= 1 and gain > 0".into(),
                    ));
                }
            }
            AsbiAdversarySpec::Scripted { .. } => {}
        }
        Ok(config)
    }

    pub fn suffix_switch_config(&self) -> Option<SuffixSwitchConfig> {
        match &self.adversary {
            AsbiAdversarySpec::SuffixSwitch {
                probes_per_round,
                threshold,
                schedule,
                gain,
                max_weight,
            } => Some(SuffixSwitchConfig {
                domain: self.domain,
                interruptions: self.interruptions,
                probes_per_round: *probes_per_round,
                threshold: threshold.unwrap_or(f64::INFINITY),
                schedule: match schedule {
                    Schedule::Never => ProbeSchedule::Never,
                    Schedule::AfterProbes => ProbeSchedule::AfterProbes,
                    Schedule::At(steps) => ProbeSchedule::At(steps.clone()),
                },
                gain: *gain,
                max_weight: *max_weight,
            }),
            _ => None,
        }
    }
}

impl AttackSection {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.t == 0 {
            return Err(HarnessError::Config("attack needs t >= 1".into()));
        }
        if (self.domain as usize) < 4 * self.t {
            return Err(HarnessError::Config(format!(
                "attack domain {} below 4t = {}",
                self.domain,
                4 * self.t
            )));
        }
        if self.repetitions == Some(0) {
            return Err(HarnessError::Config("repetitions must be positive".into()));
        }
        Ok(())
    }
}

impl ObliviousSection {
    pub fn params(&self) -> Result<F2Params, HarnessError> {
        if self.domain == 0 {
            return Err(HarnessError::Config("domain must be non-empty".into()));
        }
        check_prob("delete_prob", self.delete_prob)?;
        sketch_params(self.sketch, self.alpha)
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let config: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Schema version, presence of the section the mode needs, and the
    /// engine-level checks of that section.
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(HarnessError::Config(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.threads == Some(0) {
            return Err(HarnessError::Config("threads must be positive".into()));
        }
        let missing = |name: &str| HarnessError::Config(format!("mode needs a `{name}` section"));
        match self.mode {
            Mode::Asa => self.asa.as_ref().ok_or_else(|| missing("asa"))?.engine_config().map(drop),
            Mode::Asbi => self.asbi.as_ref().ok_or_else(|| missing("asbi"))?.engine_config().map(drop),
            Mode::Attack => self.attack.as_ref().ok_or_else(|| missing("attack"))?.validate(),
            Mode::ObliviousBaseline => self
                .oblivious
                .as_ref()
                .ok_or_else(|| missing("oblivious"))?
                .params()
                .map(drop),
        }
    }
}
