//! Seeded trial batches and their metrics.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use robust_stream::adversary::{
    j0_attack, AsbiAdversary, FixedAnswerSampler, ObliviousAdversary, ObliviousParams, Script,
    ScriptedAdversary, SuffixSwitchAdversary,
};
use robust_stream::asa::{run_asa_game, AdviceOracle, AsaError, RobustAdvice};
use robust_stream::asbi::{run_asbi_game, AsbiAlgorithm, RobustInterruptions, UnprotectedSketch};
use robust_stream::batch::{run_trials, Execution};
use robust_stream::game::{fmt_float, GameError};
use robust_stream::sketch::{ExactSupportSampler, J0Sampler, L0Sampler};
use robust_stream::truth::{relative_error, FrequencyVector};
use robust_stream::{F2Params, LinearSketch, SketchSeed, StreamUpdate};
use serde::{Serialize, Serializer};

use crate::config::{
    AsaAdversarySpec, AsaSection, AsbiAdversarySpec, AsbiAlgorithmSpec, AsbiSection, AttackSection,
    ExperimentConfig, Mode, ObliviousSection, SamplerSpec, SCHEMA_VERSION,
};
use crate::HarnessError;

pub const THREADS_ENV: &str = "ROBUST_STREAM_THREADS";

/// JSON has no infinity; non-finite values are written as strings.
fn float<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else {
        s.serialize_str(&x.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialMetrics {
    pub trial: usize,
    #[serde(serialize_with = "float")]
    pub max_rel_err: f64,
    /// All responses within tolerance (attack mode: attack succeeded).
    pub within: bool,
    /// FAIL (ASBI) or support violation (attack).
    pub failed: bool,
    pub queries: usize,
    pub advice_bits_used: usize,
    pub outer_loops_closed: usize,
    pub switches_used: usize,
    pub interruptions_used: usize,
    /// Copies that left `(1 ± alpha) F2` at some step, out of `copies_checked`.
    pub copy_failures: usize,
    pub copies_checked: usize,
    pub violation_step: Option<usize>,
    pub space_bits: usize,
}

impl TrialMetrics {
    fn new(trial: usize) -> Self {
        Self {
            trial,
            max_rel_err: 0.0,
            within: true,
            failed: false,
            queries: 0,
            advice_bits_used: 0,
            outer_loops_closed: 0,
            switches_used: 0,
            interruptions_used: 0,
            copy_failures: 0,
            copies_checked: 0,
            violation_step: None,
            space_bits: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Stat {
    #[serde(serialize_with = "float")]
    pub mean: f64,
    #[serde(serialize_with = "float")]
    pub min: f64,
    #[serde(serialize_with = "float")]
    pub max: f64,
}

impl Stat {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.collect();
        if v.is_empty() {
            return Self::default();
        }
        Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsSummary {
    pub schema_version: u32,
    pub mode: Mode,
    pub trials: usize,
    pub base_seed: u64,
    pub tolerance: f64,
    pub fraction_within: f64,
    pub fail_rate: f64,
    pub max_rel_err: Stat,
    pub advice_bits_used: Stat,
    pub switches_used: Stat,
    pub interruptions_used: Stat,
    /// Measured per-copy failure rate, when copies were checked.
    pub copy_failure_rate: Option<f64>,
    /// Vector-segment bits across the live copies of one trial.
    pub space_proxy_bits: usize,
    pub per_trial: Vec<TrialMetrics>,
}

impl MetricsSummary {
    fn aggregate(config: &ExperimentConfig, tolerance: f64, per_trial: Vec<TrialMetrics>) -> Self {
        let n = per_trial.len();
        let rate = |f: &dyn Fn(&TrialMetrics) -> bool| {
            if n == 0 {
                0.0
            } else {
                per_trial.iter().filter(|t| f(t)).count() as f64 / n as f64
            }
        };
        let checked: usize = per_trial.iter().map(|t| t.copies_checked).sum();
        let failures: usize = per_trial.iter().map(|t| t.copy_failures).sum();
        Self {
            schema_version: SCHEMA_VERSION,
            mode: config.mode,
            trials: n,
            base_seed: config.base_seed,
            tolerance,
            fraction_within: rate(&|t| t.within),
            fail_rate: rate(&|t| t.failed),
            max_rel_err: Stat::of(per_trial.iter().map(|t| t.max_rel_err)),
            advice_bits_used: Stat::of(per_trial.iter().map(|t| t.advice_bits_used as f64)),
            switches_used: Stat::of(per_trial.iter().map(|t| t.switches_used as f64)),
            interruptions_used: Stat::of(per_trial.iter().map(|t| t.interruptions_used as f64)),
            copy_failure_rate: (checked > 0).then(|| failures as f64 / checked as f64),
            space_proxy_bits: per_trial.first().map_or(0, |t| t.space_bits),
            per_trial,
        }
    }
}

/// Summary plus wall-clock per trial, kept apart so that the summary is a
/// pure function of the configuration.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub summary: MetricsSummary,
    pub wall_clock_ms: Vec<f64>,
}

#[derive(Serialize)]
struct Timing<'a> {
    trials: usize,
    wall_clock_ms: &'a [f64],
    total_ms: f64,
}

pub fn trial_seed(base_seed: u64, trial: usize) -> SketchSeed {
    SketchSeed::new(base_seed).child("trial").child(trial)
}

pub fn transcript_path(out_dir: &Path, trial: usize) -> std::path::PathBuf {
    out_dir.join(format!("trial_{trial:05}.csv"))
}

/// Worker cap: the smaller of the configured count and `ROBUST_STREAM_THREADS`.
pub fn effective_threads(configured: Option<usize>) -> Option<usize> {
    let env = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0);
    match (configured, env) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> HarnessError {
    HarnessError::Io(format!("{}: {e}", path.display()))
}

fn game_err(e: GameError) -> HarnessError {
    match e {
        GameError::Asa(AsaError::InvalidConfig(m)) => HarnessError::Config(m),
        other => HarnessError::Protocol(other.to_string()),
    }
}

fn config_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(e.to_string())
}

fn write_file(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    write(&mut w).and_then(|_| w.flush()).map_err(|e| io_err(path, e))
}

/// Whether a sketch with `seed` leaves `(1 ± alpha) F2` at any step of `stream`.
pub fn copy_fails(
    params: F2Params,
    domain: u32,
    seed: SketchSeed,
    stream: &[StreamUpdate],
    alpha: f64,
) -> Result<bool, HarnessError> {
    let mut sketch = LinearSketch::new(params, domain, seed).map_err(config_err)?;
    let mut truth = FrequencyVector::new(domain);
    for u in stream {
        sketch.update(*u).map_err(|e| HarnessError::Protocol(e.to_string()))?;
        truth.apply(u);
        if relative_error(sketch.estimate(), truth.f2() as f64) > alpha {
            return Ok(true);
        }
    }
    Ok(false)
}

enum Plan {
    Asa(AsaSection, Option<Arc<Script>>),
    Asbi(AsbiSection, Option<Arc<Script>>, bool),
    Attack(AttackSection),
    Oblivious(ObliviousSection),
}

/// Runs every trial and writes `summary.json`, `timing.json` and (unless
/// disabled) one CSV transcript per trial into `out_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Experiment, HarnessError> {
    run_experiment_with(config, Execution::Parallel)
}

pub fn run_experiment_with(config: &ExperimentConfig, execution: Execution) -> Result<Experiment, HarnessError> {
    config.validate()?;
    let parse = |text: &str| Script::parse(text).map(Arc::new).map_err(config_err);
    let (plan, tolerance) = match config.mode {
        Mode::Asa => {
            let s = config.asa.clone().expect("validated");
            let script = match &s.adversary {
                AsaAdversarySpec::Scripted { script } => Some(parse(script)?),
                _ => None,
            };
            let tol = s.alpha;
            (Plan::Asa(s, script), tol)
        }
        Mode::Asbi => {
            let s = config.asbi.clone().expect("validated");
            let script = match &s.adversary {
                AsbiAdversarySpec::Scripted { script } => Some(parse(script)?),
                _ => None,
            };
            let tol = 5.0 * s.alpha;
            let check = s.algorithm == AsbiAlgorithmSpec::Robust
                && matches!(s.adversary, AsbiAdversarySpec::Oblivious { .. });
            (Plan::Asbi(s, script, check), tol)
        }
        Mode::Attack => (Plan::Attack(config.attack.clone().expect("validated")), 0.0),
        Mode::ObliviousBaseline => {
            let s = config.oblivious.clone().expect("validated");
            let tol = s.alpha;
            (Plan::Oblivious(s), tol)
        }
    };
    let out_dir = config.out_dir.as_path();
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let csv = config.write_transcripts.then_some(out_dir);
    let results = run_trials(config.trials, execution, effective_threads(config.threads), |i| {
        let start = Instant::now();
        let seed = trial_seed(config.base_seed, i);
        let metrics = match &plan {
            Plan::Asa(s, script) => asa_trial(s, script.as_ref(), i, &seed, csv),
            Plan::Asbi(s, script, check) => asbi_trial(s, script.as_ref(), *check, i, &seed, csv),
            Plan::Attack(s) => attack_trial(s, i, &seed, csv),
            Plan::Oblivious(s) => oblivious_trial(s, i, &seed, csv),
        };
        metrics.map(|m| (m, start.elapsed().as_secs_f64() * 1e3))
    });
    let mut per_trial = Vec::with_capacity(results.len());
    let mut wall_clock_ms = Vec::with_capacity(results.len());
    for r in results {
        let (m, ms) = r?;
        per_trial.push(m);
        wall_clock_ms.push(ms);
    }
    let summary = MetricsSummary::aggregate(config, tolerance, per_trial);
    let path = out_dir.join("summary.json");
    write_file(&path, |w| {
        serde_json::to_writer_pretty(&mut *w, &summary)?;
        writeln!(w)
    })?;
    let path = out_dir.join("timing.json");
    write_file(&path, |w| {
        let timing = Timing {
            trials: wall_clock_ms.len(),
            wall_clock_ms: &wall_clock_ms,
            total_ms: wall_clock_ms.iter().sum(),
        };
        serde_json::to_writer_pretty(&mut *w, &timing)?;
        writeln!(w)
    })?;
    Ok(Experiment {
        summary,
        wall_clock_ms,
    })
}

fn asa_trial(
    s: &AsaSection,
    script: Option<&Arc<Script>>,
    trial: usize,
    seed: &SketchSeed,
    csv: Option<&Path>,
) -> Result<TrialMetrics, HarnessError> {
    let engine = s.engine_config()?;
    let mut algo = RobustAdvice::new(engine, seed.child("algorithm")).map_err(config_err)?;
    let mut oracle = AdviceOracle::new();
    let adv_seed = seed.child("adversary");
    let transcript = match (&s.adversary, script) {
        (AsaAdversarySpec::Scripted { .. }, Some(script)) => {
            let mut adv = ScriptedAdversary::reseeded(script.clone(), s.domain, &adv_seed)
                .map_err(config_err)?
                .with_query_budget(s.query_budget);
            run_asa_game(&mut algo, &mut adv, &mut oracle)
        }
        (AsaAdversarySpec::Oblivious { delete_prob }, _) => {
            let params = ObliviousParams {
                domain: s.domain,
                length: s.stream_len,
                delete_prob: *delete_prob,
                queries: s.query_budget,
            };
            run_asa_game(&mut algo, &mut ObliviousAdversary::new(params, adv_seed), &mut oracle)
        }
        _ => unreachable!("script parsed up front"),
    }
    .map_err(game_err)?;
    if let Some(dir) = csv {
        write_file(&transcript_path(dir, trial), |w| transcript.write_csv(w))?;
    }
    let mut m = TrialMetrics::new(trial);
    m.max_rel_err = transcript.max_rel_err;
    m.within = transcript.all_within(s.alpha);
    m.queries = transcript.queries;
    m.advice_bits_used = transcript.advice_bits_used;
    m.outer_loops_closed = transcript.boundaries.len();
    m.space_bits = algo.space_bits();
    Ok(m)
}

fn asbi_trial(
    s: &AsbiSection,
    script: Option<&Arc<Script>>,
    check_copies: bool,
    trial: usize,
    seed: &SketchSeed,
    csv: Option<&Path>,
) -> Result<TrialMetrics, HarnessError> {
    let engine = s.engine_config()?;
    let adv_seed = seed.child("adversary");
    let mut adversary: Box<dyn AsbiAdversary> = match &s.adversary {
        AsbiAdversarySpec::Oblivious { delete_prob } => Box::new(ObliviousAdversary::new(
            ObliviousParams {
                domain: s.domain,
                length: s.stream_len,
                delete_prob: *delete_prob,
                queries: 0,
            },
            adv_seed,
        )),
        AsbiAdversarySpec::SuffixSwitch { .. } => Box::new(SuffixSwitchAdversary::new(
            s.suffix_switch_config().expect("suffix-switch section"),
            &adv_seed,
        )),
        AsbiAdversarySpec::Scripted { .. } => Box::new(
            ScriptedAdversary::reseeded(script.expect("script parsed up front").clone(), s.domain, &adv_seed)
                .map_err(config_err)?
                .with_interruption_budget(s.interruptions),
        ),
    };
    let algo_seed = seed.child("algorithm");
    let mut m = TrialMetrics::new(trial);
    let transcript = match s.algorithm {
        AsbiAlgorithmSpec::Robust => {
            let mut algo = RobustInterruptions::new(engine.clone(), algo_seed).map_err(config_err)?;
            let t = run_asbi_game(&engine, &mut algo, &mut *adversary).map_err(game_err)?;
            m.space_bits = algo.space_bits();
            if check_copies {
                let stream: Vec<StreamUpdate> = t.steps.iter().map(|st| st.update).collect();
                for copy in algo.answer_copies().iter().chain(algo.check_copies()) {
                    m.copies_checked += 1;
                    m.copy_failures +=
                        copy_fails(engine.sketch, s.domain, copy.seed().clone(), &stream, s.alpha)? as usize;
                }
            }
            t
        }
        AsbiAlgorithmSpec::Unprotected => {
            let mut algo = UnprotectedSketch::new(engine.sketch, s.domain, algo_seed.child("answer").child(0))
                .map_err(config_err)?;
            m.space_bits = algo.space_bits();
            run_asbi_game(&engine, &mut algo, &mut *adversary).map_err(game_err)?
        }
    };
    if let Some(dir) = csv {
        write_file(&transcript_path(dir, trial), |w| transcript.write_csv(w))?;
    }
    m.max_rel_err = transcript
        .steps
        .iter()
        .filter(|st| !st.failed)
        .map(|st| st.rel_err)
        .fold(0.0, f64::max);
    m.within = m.max_rel_err <= 5.0 * s.alpha;
    m.failed = transcript.failed;
    m.queries = transcript.steps.len();
    m.switches_used = transcript.switches();
    m.interruptions_used = transcript.interruption_times.len();
    Ok(m)
}

fn attack_trial(
    s: &AttackSection,
    trial: usize,
    seed: &SketchSeed,
    csv: Option<&Path>,
) -> Result<TrialMetrics, HarnessError> {
    let y: Vec<u32> = rand::seq::index::sample(&mut seed.child("targets").rng(), s.domain as usize, s.t)
        .into_iter()
        .map(|i| i as u32 + 1)
        .collect();
    let (mut sampler, space_bits): (Box<dyn J0Sampler>, usize) = match s.sampler {
        SamplerSpec::Levelled => {
            let reps = s.repetitions.unwrap_or(L0Sampler::DEFAULT_REPETITIONS);
            let sampler = L0Sampler::with_repetitions(s.domain, reps, seed.child("sampler"));
            let bits = sampler.space_words() * 64;
            (Box::new(sampler), bits)
        }
        SamplerSpec::Exact => (Box::new(ExactSupportSampler::new()), 32 * s.t),
        SamplerSpec::Fixed => (Box::new(FixedAnswerSampler(y[0])), 32),
    };
    let mut advice_rng = seed.child("advice").rng();
    let outcome = j0_attack(
        &mut *sampler,
        s.t,
        &y,
        s.domain,
        s.advice.then_some(&mut advice_rng),
    )
    .map_err(config_err)?;
    if let Some(dir) = csv {
        write_file(&transcript_path(dir, trial), |w| {
            writeln!(w, "query,answer,live")?;
            for (i, q) in outcome.queries.iter().enumerate() {
                let answer = q.answer.map(|a| a.to_string()).unwrap_or_default();
                writeln!(w, "{},{},{}", i + 1, answer, q.live as u8)?;
            }
            Ok(())
        })?;
    }
    let mut m = TrialMetrics::new(trial);
    m.within = outcome.success;
    m.failed = outcome.violation_step.is_some();
    m.violation_step = outcome.violation_step;
    m.queries = outcome.queries.len();
    m.space_bits = space_bits;
    Ok(m)
}

fn oblivious_trial(
    s: &ObliviousSection,
    trial: usize,
    seed: &SketchSeed,
    csv: Option<&Path>,
) -> Result<TrialMetrics, HarnessError> {
    let params = s.params()?;
    let stream_seed = match s.stream_seed {
        Some(fixed) => SketchSeed::new(fixed),
        None => seed.child("stream"),
    };
    let adv = ObliviousAdversary::new(
        ObliviousParams {
            domain: s.domain,
            length: s.stream_len,
            delete_prob: s.delete_prob,
            queries: 0,
        },
        stream_seed,
    );
    let mut sketch = LinearSketch::new(params, s.domain, seed.child("sketch")).map_err(config_err)?;
    let mut truth = FrequencyVector::new(s.domain);
    let mut m = TrialMetrics::new(trial);
    let mut rows = csv.map(|_| String::from("step,item,delta,estimate,truth,rel_err\n"));
    for (i, u) in adv.stream().iter().enumerate() {
        sketch.update(*u).map_err(|e| HarnessError::Protocol(e.to_string()))?;
        truth.apply(u);
        let z = sketch.estimate();
        let err = relative_error(z, truth.f2() as f64);
        m.max_rel_err = m.max_rel_err.max(err);
        if let Some(rows) = rows.as_mut() {
            rows.push_str(&format!(
                "{},{},{},{},{},{}\n",
                i + 1,
                u.item,
                u.delta,
                fmt_float(z),
                truth.f2(),
                fmt_float(err)
            ));
        }
    }
    if let (Some(dir), Some(rows)) = (csv, rows) {
        write_file(&transcript_path(dir, trial), |w| w.write_all(rows.as_bytes()))?;
    }
    m.within = m.max_rel_err <= s.alpha;
    m.queries = adv.stream().len();
    m.space_bits = sketch.vector_bits();
    Ok(m)
}
