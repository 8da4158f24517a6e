//! Streaming with advice: the copy-bank wrapper and its game loop.
//!
//! [`RobustAdvice`] keeps three banks of `k` linear sketches:
//!
//! * `active` copies answer queries, always through the private median;
//! * `next` copies start empty at the beginning of an outer loop and see every
//!   update of that loop;
//! * `shadow` copies share the seeds of `next` but never see updates. Their
//!   vector segments are rebuilt bit by bit from advice: every `eta`-th query
//!   emits an [`AdvicePredicate`] asking for one bit of the state a `next`
//!   seed would have after the first `t` updates, where `t` is the start of
//!   the current outer loop.
//!
//! After `eta * k * s` queries all `k * s` bits have arrived and
//! `active_j = next_j + shadow_j`, which by linearity is exactly the state of
//! a fresh copy run over the whole prefix. A new `next`/`shadow` bank is then
//! drawn with fresh seeds.

use std::io::{self, Write};

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::adversary::AsaAdversary;
use crate::dp::{self, DpError, PrivacyBudget, ValueGrid};
use crate::game::{fmt_opt_float, GameError};
use crate::seed::SketchSeed;
use crate::sketch::{F2Params, LinearSketch, SketchError, StreamUpdate};
use crate::truth::{relative_error, FrequencyVector};

/// Largest copy count the engine will allocate.
pub const MAX_COPIES: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AsaError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("query budget of {0} exceeded")]
    QueryBudgetExceeded(usize),
    #[error("an advice request is outstanding")]
    AdvicePending,
    #[error("no advice request is outstanding")]
    NoAdvicePending,
    #[error("prefix length {prefix} exceeds stored stream of {stored} updates")]
    PrefixOutOfRange { prefix: usize, stored: usize },
    #[error("algorithm already failed")]
    Failed,
    #[error(transparent)]
    Sketch(#[from] SketchError),
    #[error(transparent)]
    Dp(#[from] DpError),
}

/// How `k` is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CopyCount {
    /// `ceil(c_k * eta * s * ln(m/beta) * ln^2(m/(beta*alpha)))`.
    Formula { c_k: f64 },
    Fixed(usize),
}

/// How `eps0` is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Eps0Setting {
    /// `eps0 = epsilon / sqrt(8 eta k s ln(1/delta))`; `delta` defaults to
    /// `epsilon * beta / (2m)`.
    Derived { epsilon: f64, delta: Option<f64> },
    Fixed(f64),
}

/// Grid of private-median outputs: ratio `1 + ratio` over `[n^-c, n^c]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub exponent: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AsaConfig {
    /// `m`
    pub stream_len: usize,
    /// `T`
    pub query_budget: usize,
    pub eta: u64,
    pub alpha: f64,
    pub beta: f64,
    pub domain: u32,
    pub sketch: F2Params,
    pub copies: CopyCount,
    pub eps0: Eps0Setting,
    pub grid: GridSpec,
}

/// Smallest integer `c` with `n^c >= 4 m^2`, enough headroom for any F2
/// estimate on a stream of length `m`.
pub fn default_grid_exponent(domain: u32, stream_len: usize) -> f64 {
    let target = (4.0 * (stream_len.max(1) as f64).powi(2)).ln();
    (target / (domain.max(2) as f64).ln()).ceil().max(1.0)
}

/// `c_k * eta * s * ln(m/beta) * ln^2(m/(beta*alpha))`.
pub fn theoretical_copy_count(eta: u64, s: u64, m: u64, beta: f64, alpha: f64, c_k: f64) -> f64 {
    let a = (m as f64 / beta).ln();
    let b = (m as f64 / (beta * alpha)).ln();
    c_k * eta as f64 * s as f64 * a * b * b
}

impl AsaConfig {
    /// Desk-scale configuration with explicit `k` and `eps0`, sketches sized
    /// for `alpha`, grid ratio `alpha / 4`.
    pub fn with_overrides(
        stream_len: usize,
        query_budget: usize,
        eta: u64,
        alpha: f64,
        domain: u32,
        k: usize,
        eps0: f64,
    ) -> Result<Self, AsaError> {
        let config = Self {
            stream_len,
            query_budget,
            eta,
            alpha,
            beta: 0.1,
            domain,
            sketch: F2Params::for_accuracy(alpha)?,
            copies: CopyCount::Fixed(k),
            eps0: Eps0Setting::Fixed(eps0),
            grid: GridSpec {
                exponent: default_grid_exponent(domain, stream_len),
                ratio: alpha / 4.0,
            },
        };
        config.validate()?;
        Ok(config)
    }

    pub fn vector_bits(&self) -> usize {
        self.sketch.vector_bits()
    }

    pub fn validate(&self) -> Result<(), AsaError> {
        let bad = |msg: String| Err(AsaError::InvalidConfig(msg));
        if self.query_budget > self.stream_len {
            return bad(format!("T = {} exceeds m = {}", self.query_budget, self.stream_len));
        }
        if self.eta < 1 {
            return bad("eta must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha = {} outside (0, 1)", self.alpha));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad(format!("beta = {} outside (0, 1)", self.beta));
        }
        if self.domain == 0 {
            return bad("domain must be non-empty".into());
        }
        if !(self.grid.ratio > 0.0 && self.grid.exponent > 0.0) {
            return bad("grid ratio and exponent must be positive".into());
        }
        let k = self.copy_count()?;
        if k == 0 || k > MAX_COPIES {
            return bad(format!("k = {k} outside [1, {MAX_COPIES}]"));
        }
        let eps0 = self.resolved_eps0()?;
        if eps0.is_nan() || eps0 <= 0.0 {
            return bad(format!("eps0 = {eps0} must be positive"));
        }
        Ok(())
    }

    pub fn copy_count(&self) -> Result<usize, AsaError> {
        match self.copies {
            CopyCount::Fixed(k) => Ok(k),
            CopyCount::Formula { c_k } => {
                let k = theoretical_copy_count(
                    self.eta,
                    self.vector_bits() as u64,
                    self.stream_len as u64,
                    self.beta,
                    self.alpha,
                    c_k,
                )
                .ceil();
                if !k.is_finite() || k > MAX_COPIES as f64 {
                    return Err(AsaError::InvalidConfig(format!(
                        "formula k = {k:.3e} exceeds desk scale; override k"
                    )));
                }
                Ok(k.max(1.0) as usize)
            }
        }
    }

    pub fn resolved_eps0(&self) -> Result<f64, AsaError> {
        match self.eps0 {
            Eps0Setting::Fixed(e) => Ok(e),
            Eps0Setting::Derived { epsilon, delta } => {
                let delta = delta.unwrap_or_else(|| {
                    PrivacyBudget::default_delta(epsilon, self.beta, self.stream_len as u64)
                });
                Ok(dp::derive_eps0(
                    epsilon,
                    delta,
                    self.eta,
                    self.copy_count()? as u64,
                    self.vector_bits() as u64,
                )?)
            }
        }
    }

    /// Queries per outer loop, `eta * k * s`.
    pub fn queries_per_loop(&self) -> Result<u64, AsaError> {
        Ok(self.eta * self.copy_count()? as u64 * self.vector_bits() as u64)
    }
}

/// One-bit function of a stream prefix: bit `bit_index` of the vector
/// segment of a fresh sketch seeded with `copy_seed` after `prefix_len`
/// updates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdvicePredicate {
    pub copy_seed: SketchSeed,
    pub copy_index: usize,
    pub prefix_len: usize,
    pub bit_index: usize,
    pub params: F2Params,
    pub domain: u32,
}

impl AdvicePredicate {
    /// One pass over `prefix` using the space of a single sketch.
    pub fn evaluate(&self, prefix: &[StreamUpdate]) -> Result<bool, SketchError> {
        let mut sketch = LinearSketch::new(self.params, self.domain, self.copy_seed.clone())?;
        for u in prefix {
            sketch.update(*u)?;
        }
        sketch.bit(self.bit_index)
    }
}

/// Exact predicate evaluation over the stored stream.
#[derive(Clone, Debug, Default)]
pub struct AdviceOracle {
    stream: Vec<StreamUpdate>,
    evaluations: u64,
}

impl AdviceOracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, u: StreamUpdate) {
        self.stream.push(u);
    }

    pub fn stream(&self) -> &[StreamUpdate] {
        &self.stream
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    pub fn eval(&mut self, p: &AdvicePredicate) -> Result<bool, AsaError> {
        if p.prefix_len > self.stream.len() {
            return Err(AsaError::PrefixOutOfRange {
                prefix: p.prefix_len,
                stored: self.stream.len(),
            });
        }
        self.evaluations += 1;
        Ok(p.evaluate(&self.stream[..p.prefix_len])?)
    }
}

/// Result of feeding one update.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeedOutcome {
    pub response: Option<f64>,
    pub advice: Option<AdvicePredicate>,
}

/// The advice wrapper around `k` linear F2 sketches.
pub struct RobustAdvice {
    config: AsaConfig,
    k: usize,
    eps0: f64,
    vector_bits: usize,
    master: SketchSeed,
    grid: ValueGrid,
    noise: ChaCha8Rng,
    active: Vec<LinearSketch>,
    next: Vec<LinearSketch>,
    shadow: Vec<LinearSketch>,
    time: usize,
    queries: usize,
    loop_index: usize,
    loop_start: usize,
    bits_absorbed: usize,
    pending: Option<AdvicePredicate>,
    boundaries: Vec<usize>,
    failed: bool,
    estimates: Vec<f64>,
}

impl RobustAdvice {
    pub fn new(config: AsaConfig, master: SketchSeed) -> Result<Self, AsaError> {
        config.validate()?;
        let k = config.copy_count()?;
        let eps0 = config.resolved_eps0()?;
        let grid = ValueGrid::geometric(config.domain.max(2), config.grid.exponent, config.grid.ratio)?;
        let active = (0..k)
            .map(|j| {
                LinearSketch::new(
                    config.sketch,
                    config.domain,
                    master.child("active").child(j),
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut algo = Self {
            vector_bits: config.vector_bits(),
            noise: master.child("private-median").rng(),
            config,
            k,
            eps0,
            master,
            grid,
            active,
            next: Vec::new(),
            shadow: Vec::new(),
            time: 0,
            queries: 0,
            loop_index: 0,
            loop_start: 0,
            bits_absorbed: 0,
            pending: None,
            boundaries: Vec::new(),
            failed: false,
            estimates: Vec::with_capacity(k),
        };
        algo.start_outer_loop()?;
        Ok(algo)
    }

    /// Draws the `next` bank and its zeroed `shadow` twin.
    fn start_outer_loop(&mut self) -> Result<(), AsaError> {
        let bank = self.master.child("loop").child(self.loop_index);
        self.next = (0..self.k)
            .map(|j| LinearSketch::new(self.config.sketch, self.config.domain, bank.child(j)))
            .collect::<Result<Vec<_>, _>>()?;
        self.shadow = self.next.clone();
        self.loop_start = self.time;
        self.bits_absorbed = 0;
        Ok(())
    }

    pub fn config(&self) -> &AsaConfig {
        &self.config
    }

    pub fn copies(&self) -> usize {
        self.k
    }

    pub fn eps0(&self) -> f64 {
        self.eps0
    }

    pub fn grid(&self) -> &ValueGrid {
        &self.grid
    }

    pub fn active(&self) -> &[LinearSketch] {
        &self.active
    }

    pub fn next_bank(&self) -> &[LinearSketch] {
        &self.next
    }

    pub fn shadow_bank(&self) -> &[LinearSketch] {
        &self.shadow
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn queries(&self) -> usize {
        self.queries
    }

    pub fn outer_loop(&self) -> usize {
        self.loop_index
    }

    pub fn loop_start(&self) -> usize {
        self.loop_start
    }

    /// Times at which an outer loop closed and the active bank was rebuilt.
    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn pending(&self) -> Option<&AdvicePredicate> {
        self.pending.as_ref()
    }

    /// Vector-segment bits held by all three banks.
    pub fn space_bits(&self) -> usize {
        3 * self.k * self.vector_bits
    }

    /// Inner-loop step. Queries are answered from the active bank before the
    /// advice request (if any) is emitted.
    pub fn feed(&mut self, u: StreamUpdate) -> Result<FeedOutcome, AsaError> {
        if self.failed {
            return Err(AsaError::Failed);
        }
        if self.pending.is_some() {
            return Err(AsaError::AdvicePending);
        }
        if u.query && self.queries >= self.config.query_budget {
            return Err(AsaError::QueryBudgetExceeded(self.config.query_budget));
        }
        for sketch in self.active.iter_mut().chain(self.next.iter_mut()) {
            if let Err(e) = sketch.update(u) {
                self.failed = true;
                return Err(e.into());
            }
        }
        self.time += 1;
        if !u.query {
            return Ok(FeedOutcome::default());
        }
        self.queries += 1;
        let response = self.respond()?;
        let mut outcome = FeedOutcome {
            response: Some(response),
            advice: None,
        };
        if (self.queries as u64).is_multiple_of(self.config.eta) {
            let copy_index = self.bits_absorbed / self.vector_bits;
            let predicate = AdvicePredicate {
                copy_seed: self.next[copy_index].seed().clone(),
                copy_index,
                prefix_len: self.loop_start,
                bit_index: self.bits_absorbed % self.vector_bits,
                params: self.config.sketch,
                domain: self.config.domain,
            };
            self.pending = Some(predicate.clone());
            outcome.advice = Some(predicate);
        }
        Ok(outcome)
    }

    /// The only place per-copy estimates are read: they go straight into the
    /// private median.
    fn respond(&mut self) -> Result<f64, AsaError> {
        self.estimates.clear();
        for sketch in &mut self.active {
            self.estimates.push(sketch.estimate());
        }
        Ok(dp::private_med(&self.estimates, &self.grid, self.eps0, &mut self.noise)?)
    }

    /// Writes the advice bit into its shadow copy. Returns the boundary time
    /// when this bit closes the outer loop.
    pub fn absorb(&mut self, bit: bool) -> Result<Option<usize>, AsaError> {
        let predicate = self.pending.take().ok_or(AsaError::NoAdvicePending)?;
        self.shadow[predicate.copy_index].set_bit(predicate.bit_index, bit)?;
        self.bits_absorbed += 1;
        if self.bits_absorbed < self.k * self.vector_bits {
            return Ok(None);
        }
        let next = std::mem::take(&mut self.next);
        let shadow = std::mem::take(&mut self.shadow);
        self.active = next
            .into_iter()
            .zip(&shadow)
            .map(|(mut n, s)| n.merge_from(s).map(|_| n))
            .collect::<Result<Vec<_>, _>>()?;
        self.boundaries.push(self.time);
        self.loop_index += 1;
        self.start_outer_loop()?;
        Ok(Some(self.time))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AsaStep {
    pub step: usize,
    pub update: StreamUpdate,
    pub response: Option<f64>,
    pub truth: i64,
    pub rel_err: Option<f64>,
    pub advice_bit: Option<bool>,
    pub outer_loop: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AsaTranscript {
    pub steps: Vec<AsaStep>,
    pub boundaries: Vec<usize>,
    pub queries: usize,
    pub advice_bits_used: usize,
    pub max_rel_err: f64,
}

impl AsaTranscript {
    pub const CSV_HEADER: &'static str =
        "step,item,delta,query_flag,response,truth,rel_err,advice_bit,outer_loop_index";

    pub fn responses(&self) -> impl Iterator<Item = (f64, i64)> + '_ {
        self.steps.iter().filter_map(|s| s.response.map(|r| (r, s.truth)))
    }

    /// Whether every response lies in `(1 ± tol) * F2`.
    pub fn all_within(&self, tol: f64) -> bool {
        self.responses()
            .all(|(z, f)| (z - f as f64).abs() <= tol * f as f64)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for s in &self.steps {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                s.step,
                s.update.item,
                s.update.delta,
                s.update.query as u8,
                fmt_opt_float(s.response),
                s.truth,
                fmt_opt_float(s.rel_err),
                s.advice_bit.map(|b| (b as u8).to_string()).unwrap_or_default(),
                s.outer_loop,
            )?;
        }
        Ok(())
    }
}

/// Drives one ASA game. `on_boundary` runs after each outer loop closes.
pub fn run_asa_game_observed<A, F>(
    algo: &mut RobustAdvice,
    adversary: &mut A,
    oracle: &mut AdviceOracle,
    mut on_boundary: F,
) -> Result<AsaTranscript, GameError>
where
    A: AsaAdversary + ?Sized,
    F: FnMut(&RobustAdvice, &AdviceOracle),
{
    let m = algo.config().stream_len;
    let mut truth = FrequencyVector::new(algo.config().domain);
    let mut transcript = AsaTranscript::default();
    for step in 1..=m {
        let Some(u) = adversary.next_update() else {
            break;
        };
        if u.item == 0 || u.item > algo.config().domain {
            return Err(GameError::Protocol(format!(
                "step {step}: item {} outside domain",
                u.item
            )));
        }
        oracle.push(u);
        truth.apply(&u);
        let outer_loop = algo.outer_loop();
        let outcome = algo.feed(u).map_err(|e| match e {
            AsaError::QueryBudgetExceeded(t) => {
                GameError::Protocol(format!("step {step}: query budget {t} exceeded"))
            }
            other => GameError::Asa(other),
        })?;
        let f2 = truth.f2();
        let rel_err = outcome.response.map(|z| relative_error(z, f2 as f64));
        if let Some(z) = outcome.response {
            transcript.queries += 1;
            transcript.max_rel_err = transcript.max_rel_err.max(rel_err.unwrap_or(0.0));
            adversary.observe(z);
        }
        let mut advice_bit = None;
        if let Some(p) = outcome.advice {
            let bit = oracle.eval(&p)?;
            advice_bit = Some(bit);
            transcript.advice_bits_used += 1;
            if algo.absorb(bit)?.is_some() {
                on_boundary(algo, oracle);
            }
        }
        transcript.steps.push(AsaStep {
            step,
            update: u,
            response: outcome.response,
            truth: f2,
            rel_err,
            advice_bit,
            outer_loop,
        });
    }
    transcript.boundaries = algo.boundaries().to_vec();
    Ok(transcript)
}

pub fn run_asa_game<A: AsaAdversary + ?Sized>(
    algo: &mut RobustAdvice,
    adversary: &mut A,
    oracle: &mut AdviceOracle,
) -> Result<AsaTranscript, GameError> {
    run_asa_game_observed(algo, adversary, oracle, |_, _| {})
}

/// Replays `prefix` through a fresh sketch with `seed`.
pub fn replay(
    params: F2Params,
    domain: u32,
    seed: &SketchSeed,
    prefix: &[StreamUpdate],
) -> Result<LinearSketch, SketchError> {
    let mut s = LinearSketch::new(params, domain, seed.clone())?;
    for u in prefix {
        s.update(*u)?;
    }
    Ok(s)
}
