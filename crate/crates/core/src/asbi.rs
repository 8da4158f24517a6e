//! Streaming with bounded interruptions: sketch switching over `2R` copies.
//!
//! [`RobustInterruptions`] feeds every update to `R` answer/check pairs and
//! listens only to pair `r`. While the answer copy agrees with its check copy
//! to within `2 alpha`, the answer estimate is emitted. On disagreement the
//! check estimate is emitted, the pair is retired for good and `r` advances;
//! running out of pairs is a FAIL, after which the engine refuses input.

use std::io::{self, Write};

use thiserror::Error;

use crate::adversary::AsbiAdversary;
use crate::game::{fmt_float, GameError};
use crate::seed::SketchSeed;
use crate::sketch::{F2Params, LinearSketch, SketchError, StreamUpdate};
use crate::truth::{relative_error, FrequencyVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AsbiError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("step after FAIL")]
    AfterFail,
    #[error(transparent)]
    Sketch(#[from] SketchError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AsbiConfig {
    /// `R`
    pub interruptions: usize,
    /// `m`
    pub stream_len: usize,
    pub alpha: f64,
    pub beta: f64,
    pub domain: u32,
    pub sketch: F2Params,
}

impl AsbiConfig {
    /// Copies sized for `alpha` with the default per-copy failure rate.
    pub fn new(interruptions: usize, stream_len: usize, alpha: f64, domain: u32) -> Result<Self, AsbiError> {
        let config = Self {
            interruptions,
            stream_len,
            alpha,
            beta: F2Params::BETA_SINGLE,
            domain,
            sketch: F2Params::for_accuracy(alpha)?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), AsbiError> {
        let bad = |msg: String| Err(AsbiError::InvalidConfig(msg));
        if self.interruptions < 1 {
            return bad("R must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha = {} must be positive", self.alpha));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad(format!("beta = {} outside (0, 1)", self.beta));
        }
        if self.domain == 0 {
            return bad("domain must be non-empty".into());
        }
        Ok(())
    }

    /// `2 R s` bits of vector state.
    pub fn space_bits(&self) -> usize {
        2 * self.interruptions * self.sketch.vector_bits()
    }
}

/// One response of an interruption-game algorithm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AsbiOutput {
    pub response: f64,
    pub switched: bool,
    pub failed: bool,
}

/// Anything that can play the streaming side of the interruption game.
pub trait AsbiAlgorithm {
    fn step(&mut self, u: StreamUpdate) -> Result<AsbiOutput, AsbiError>;

    /// 1-based index of the pair currently answering.
    fn active_pair(&self) -> usize {
        1
    }

    fn space_bits(&self) -> usize;
}

/// Whether `answer` lies in `(1 ± 2 alpha) * check`, as `|a - c| <= 2 alpha |c|`.
pub fn agrees(answer: f64, check: f64, alpha: f64) -> bool {
    (answer - check).abs() <= 2.0 * alpha * check.abs()
}

pub struct RobustInterruptions {
    config: AsbiConfig,
    answer: Vec<LinearSketch>,
    check: Vec<LinearSketch>,
    r: usize,
    time: usize,
    failed: bool,
    switch_times: Vec<usize>,
    perturbation: Option<(usize, f64)>,
}

impl RobustInterruptions {
    pub fn new(config: AsbiConfig, master: SketchSeed) -> Result<Self, AsbiError> {
        config.validate()?;
        let bank = |label: &str| {
            (0..config.interruptions)
                .map(|j| LinearSketch::new(config.sketch, config.domain, master.child(label).child(j)))
                .collect::<Result<Vec<_>, _>>()
        };
        let answer = bank("answer")?;
        let check = bank("check")?;
        Ok(Self {
            config,
            answer,
            check,
            r: 1,
            time: 0,
            failed: false,
            switch_times: Vec::new(),
            perturbation: None,
        })
    }

    pub fn config(&self) -> &AsbiConfig {
        &self.config
    }

    pub fn answer_copies(&self) -> &[LinearSketch] {
        &self.answer
    }

    pub fn check_copies(&self) -> &[LinearSketch] {
        &self.check
    }

    pub fn is_failed(&self) -> bool {
        self.failed
    }

    /// Times `p_1 < p_2 < ...` at which `r` advanced.
    pub fn switch_times(&self) -> &[usize] {
        &self.switch_times
    }

    /// Test hook: scales the answer estimate of the live pair by `factor` at
    /// time `step` (1-based).
    pub fn inject_answer_scale(&mut self, step: usize, factor: f64) {
        self.perturbation = Some((step, factor));
    }
}

impl AsbiAlgorithm for RobustInterruptions {
    fn step(&mut self, u: StreamUpdate) -> Result<AsbiOutput, AsbiError> {
        if self.failed {
            return Err(AsbiError::AfterFail);
        }
        for copy in self.answer.iter_mut().chain(self.check.iter_mut()) {
            copy.update(u)?;
        }
        self.time += 1;
        let idx = self.r - 1;
        let mut z_answer = self.answer[idx].estimate();
        if let Some((at, factor)) = self.perturbation {
            if at == self.time {
                z_answer *= factor;
            }
        }
        let z_check = self.check[idx].estimate();
        if agrees(z_answer, z_check, self.config.alpha) {
            return Ok(AsbiOutput {
                response: z_answer,
                switched: false,
                failed: false,
            });
        }
        self.r += 1;
        self.switch_times.push(self.time);
        self.failed = self.r > self.config.interruptions;
        Ok(AsbiOutput {
            response: z_check,
            switched: true,
            failed: self.failed,
        })
    }

    fn active_pair(&self) -> usize {
        self.r
    }

    fn space_bits(&self) -> usize {
        self.config.space_bits()
    }
}

/// A single F2 sketch answering every step, with no protection.
pub struct UnprotectedSketch {
    sketch: LinearSketch,
}

impl UnprotectedSketch {
    pub fn new(params: F2Params, domain: u32, seed: SketchSeed) -> Result<Self, AsbiError> {
        Ok(Self {
            sketch: LinearSketch::new(params, domain, seed)?,
        })
    }
}

impl AsbiAlgorithm for UnprotectedSketch {
    fn step(&mut self, u: StreamUpdate) -> Result<AsbiOutput, AsbiError> {
        self.sketch.update(u)?;
        Ok(AsbiOutput {
            response: self.sketch.estimate(),
            switched: false,
            failed: false,
        })
    }

    fn space_bits(&self) -> usize {
        self.sketch.vector_bits()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AsbiStep {
    pub step: usize,
    pub update: StreamUpdate,
    pub response: f64,
    pub truth: i64,
    pub rel_err: f64,
    pub pair: usize,
    pub switched: bool,
    pub interrupted: bool,
    pub failed: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AsbiTranscript {
    pub steps: Vec<AsbiStep>,
    pub interruption_times: Vec<usize>,
    pub switch_times: Vec<usize>,
    pub failed: bool,
    pub max_rel_err: f64,
}

impl AsbiTranscript {
    pub const CSV_HEADER: &'static str = "step,response,truth,rel_err,r,switched,interrupted,failed";

    pub fn switches(&self) -> usize {
        self.switch_times.len()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for s in &self.steps {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                s.step,
                fmt_float(s.response),
                s.truth,
                fmt_float(s.rel_err),
                s.pair,
                s.switched as u8,
                s.interrupted as u8,
                s.failed as u8,
            )?;
        }
        Ok(())
    }
}

/// Drives one interruption game of `stream_len` steps with budget `R`.
///
/// The algorithm never learns when an interruption happens. The game ends
/// early at FAIL.
pub fn run_asbi_game<G, A>(
    config: &AsbiConfig,
    algo: &mut G,
    adversary: &mut A,
) -> Result<AsbiTranscript, GameError>
where
    G: AsbiAlgorithm + ?Sized,
    A: AsbiAdversary + ?Sized,
{
    let m = config.stream_len;
    let mut stream = adversary.commit(m);
    if stream.len() != m {
        return Err(GameError::Protocol(format!(
            "committed stream has {} updates, expected {m}",
            stream.len()
        )));
    }
    let mut truth = FrequencyVector::new(config.domain);
    let mut transcript = AsbiTranscript::default();
    for i in 0..m {
        let u = stream[i];
        if u.item == 0 || u.item > config.domain {
            return Err(GameError::Protocol(format!(
                "step {}: item {} outside domain",
                i + 1,
                u.item
            )));
        }
        let pair = algo.active_pair();
        let out = algo.step(u)?;
        truth.apply(&u);
        let f2 = truth.f2();
        let rel_err = relative_error(out.response, f2 as f64);
        transcript.max_rel_err = transcript.max_rel_err.max(rel_err);
        if out.switched {
            transcript.switch_times.push(i + 1);
        }
        let mut record = AsbiStep {
            step: i + 1,
            update: u,
            response: out.response,
            truth: f2,
            rel_err,
            pair,
            switched: out.switched,
            interrupted: false,
            failed: out.failed,
        };
        if out.failed {
            transcript.failed = true;
            transcript.steps.push(record);
            break;
        }
        if let Some(suffix) = adversary.react(i + 1, out.response) {
            if transcript.interruption_times.len() >= config.interruptions {
                return Err(GameError::Protocol(format!(
                    "step {}: interruption budget {} exhausted",
                    i + 1,
                    config.interruptions
                )));
            }
            if i + 1 == m {
                return Err(GameError::Protocol("interruption at the final step".into()));
            }
            if suffix.len() != m - i - 1 {
                return Err(GameError::Protocol(format!(
                    "step {}: suffix has {} updates, expected {}",
                    i + 1,
                    suffix.len(),
                    m - i - 1
                )));
            }
            stream.truncate(i + 1);
            stream.extend(suffix);
            record.interrupted = true;
            transcript.interruption_times.push(i + 1);
        }
        transcript.steps.push(record);
    }
    Ok(transcript)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction() {
        let config = AsbiConfig::new(3, 100, 0.5, 64).unwrap();
        let algo = RobustInterruptions::new(config.clone(), SketchSeed::new(1)).unwrap();
        assert_eq!(algo.answer_copies().len() + algo.check_copies().len(), 6);
        assert!(algo
            .answer_copies()
            .iter()
            .chain(algo.check_copies())
            .all(LinearSketch::is_zero));
        let mut seeds: Vec<_> = algo
            .answer_copies()
            .iter()
            .chain(algo.check_copies())
            .map(|s| s.seed().key())
            .collect();
        seeds.sort();
        seeds.dedup();
        assert_eq!(seeds.len(), 6);
        assert_eq!(algo.active_pair(), 1);
        assert_eq!(algo.space_bits(), 6 * config.sketch.vector_bits());
    }

    #[test]
    fn agreement_interval() {
        assert!(agrees(0.0, 0.0, 0.1));
        assert!(!agrees(1.0, 0.0, 0.1));
        assert!(agrees(12.0, 10.0, 0.1));
        assert!(!agrees(12.1, 10.0, 0.1));
        assert!(agrees(-12.0, -10.0, 0.1));
        assert!(agrees(8.0, 10.0, 0.1));
    }

    #[test]
    fn rejects_zero_budget() {
        assert!(AsbiConfig::new(0, 10, 0.5, 8).is_err());
    }

    #[test]
    fn forced_switch_and_fail() {
        let config = AsbiConfig::new(1, 50, 0.3, 16).unwrap();
        let mut algo = RobustInterruptions::new(config, SketchSeed::new(3)).unwrap();
        algo.inject_answer_scale(5, 4.0);
        for i in 1..5u32 {
            assert!(!algo.step(StreamUpdate::insert(i)).unwrap().switched);
        }
        let out = algo.step(StreamUpdate::insert(9)).unwrap();
        assert!(out.switched && out.failed);
        assert!(algo.is_failed());
        assert_eq!(algo.step(StreamUpdate::insert(1)), Err(AsbiError::AfterFail));
    }
}
