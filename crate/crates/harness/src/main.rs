use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use robust_stream_harness::config::{AttackSection, SamplerSpec, SCHEMA_VERSION};
use robust_stream_harness::report::{desk_asa, desk_asbi};
use robust_stream_harness::{run_experiment, space_report, ExperimentConfig, HarnessError, Mode};

#[derive(Parser)]
#[command(name = "robust-stream", version, about = "Adversarial streaming games and sketches")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Theoretical vs desk-scale parameters and measured space.
    SpaceReport {
        /// Take the ASA and ASBI sections from this config instead of the
        /// built-in desk configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Support-recovery attack on a J0 sampler.
    Attack {
        #[arg(long, default_value_t = 64)]
        t: usize,
        #[arg(long, default_value_t = 4096)]
        domain: u32,
        #[arg(long, value_enum, default_value_t = Sampler::Levelled)]
        sampler: Sampler,
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long)]
        advice: bool,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "attack-out")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Sampler {
    Levelled,
    Exact,
    Fixed,
}

fn print_summary(summary: &robust_stream_harness::MetricsSummary) {
    println!(
        "trials={} within={:.4} fail_rate={:.4} max_rel_err(mean={:.4}, max={:.4}) advice_bits(mean={:.1}) switches(mean={:.3}) space_bits={}",
        summary.trials,
        summary.fraction_within,
        summary.fail_rate,
        summary.max_rel_err.mean,
        summary.max_rel_err.max,
        summary.advice_bits_used.mean,
        summary.switches_used.mean,
        summary.space_proxy_bits
    );
}

fn execute(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run {
            config,
            trials,
            seed,
            out,
        } => {
            let mut config = ExperimentConfig::load(&config)?;
            if let Some(t) = trials {
                config.trials = t;
            }
            if let Some(s) = seed {
                config.base_seed = s;
            }
            if let Some(o) = out {
                config.out_dir = o;
            }
            let experiment = run_experiment(&config)?;
            print_summary(&experiment.summary);
        }
        Command::SpaceReport { config, json } => {
            let (mut asa, mut asbi) = (desk_asa(), desk_asbi());
            if let Some(path) = config {
                let c = ExperimentConfig::load(&path)?;
                if let Some(s) = &c.asa {
                    asa = s.engine_config()?;
                }
                if let Some(s) = &c.asbi {
                    asbi = s.engine_config()?;
                }
            }
            let report = space_report(&asa, &asbi)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else {
                print!("{}", report.to_table());
            }
        }
        Command::Attack {
            t,
            domain,
            sampler,
            repetitions,
            advice,
            trials,
            seed,
            out,
        } => {
            let config = ExperimentConfig {
                schema_version: SCHEMA_VERSION,
                mode: Mode::Attack,
                trials,
                base_seed: seed,
                out_dir: out,
                threads: None,
                write_transcripts: true,
                asa: None,
                asbi: None,
                attack: Some(AttackSection {
                    t,
                    domain,
                    sampler: match sampler {
                        Sampler::Levelled => SamplerSpec::Levelled,
                        Sampler::Exact => SamplerSpec::Exact,
                        Sampler::Fixed => SamplerSpec::Fixed,
                    },
                    repetitions,
                    advice,
                }),
                oblivious: None,
            };
            let experiment = run_experiment(&config)?;
            let s = &experiment.summary;
            let early = s
                .per_trial
                .iter()
                .filter(|m| m.violation_step.is_some_and(|v| v < t))
                .count();
            println!(
                "trials={} success_rate={:.4} violation_rate={:.4} violation_before_T={:.4} space_bits={}",
                s.trials,
                s.fraction_within,
                s.fail_rate,
                if s.trials == 0 { 0.0 } else { early as f64 / s.trials as f64 },
                s.space_proxy_bits
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
