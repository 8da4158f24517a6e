use std::fs;
use std::path::Path;
use std::process::Command;

use proptest::prelude::*;
use robust_stream::batch::Execution;
use robust_stream_harness::config::{
    AsaAdversarySpec, AsaSection, AsbiAdversarySpec, AsbiAlgorithmSpec, AsbiSection, AttackSection, Copies,
    Eps0, Grid, ObliviousSection, SamplerSpec, Schedule, SketchShape, SCHEMA_VERSION,
};
use robust_stream_harness::run::run_experiment_with;
use robust_stream_harness::{run_experiment, ExperimentConfig, Mode};

fn base(mode: Mode, trials: usize, out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        mode,
        trials,
        base_seed: 42,
        out_dir: out.to_path_buf(),
        threads: None,
        write_transcripts: true,
        asa: None,
        asbi: None,
        attack: None,
        oblivious: None,
    }
}

fn asbi_section(r: usize, adversary: AsbiAdversarySpec) -> AsbiSection {
    AsbiSection {
        stream_len: 1500,
        interruptions: r,
        alpha: 0.3,
        domain: 512,
        sketch: None,
        algorithm: AsbiAlgorithmSpec::Robust,
        adversary,
    }
}

fn shape() -> impl Strategy<Value = Option<SketchShape>> {
    prop::option::of((1usize..64, 1usize..8, 8u32..=32).prop_map(|(group_size, groups, width_bits)| SketchShape {
        group_size,
        groups,
        width_bits,
    }))
}

fn asa_section() -> impl Strategy<Value = AsaSection> {
    (
        (100usize..5000, 0usize..100, 1u64..5, 0.1f64..1.0, 2u32..1000),
        (1usize..50, 0.01f64..2.0, any::<bool>(), shape(), any::<bool>()),
    )
        .prop_map(|((stream_len, query_budget, eta, alpha, domain), (k, eps0, derived, sketch, scripted))| AsaSection {
            stream_len,
            query_budget,
            eta,
            alpha,
            beta: 0.1,
            domain,
            copies: Copies::Fixed(k),
            eps0: if derived {
                Eps0::Derived {
                    epsilon: eps0,
                    delta: None,
                }
            } else {
                Eps0::Fixed(eps0)
            },
            sketch,
            grid: Some(Grid {
                exponent: 3.0,
                ratio: alpha / 4.0,
            }),
            adversary: if scripted {
                AsaAdversarySpec::Scripted {
                    script: "label a\nins rand q\ngoto a\n".into(),
                }
            } else {
                AsaAdversarySpec::Oblivious { delete_prob: alpha / 2.0 }
            },
        })
}

fn asbi_adversary() -> impl Strategy<Value = AsbiAdversarySpec> {
    prop_oneof![
        (0.0f64..1.0).prop_map(|delete_prob| AsbiAdversarySpec::Oblivious { delete_prob }),
        (
            1usize..500,
            prop::option::of(0.01f64..1.0),
            prop::collection::vec(1usize..1000, 0..4),
            0.1f64..2.0,
            1u32..5
        )
            .prop_map(|(probes_per_round, threshold, at, gain, max_weight)| AsbiAdversarySpec::SuffixSwitch {
                probes_per_round,
                threshold,
                schedule: if at.is_empty() { Schedule::AfterProbes } else { Schedule::At(at) },
                gain,
                max_weight,
            }),
    ]
}

fn config() -> impl Strategy<Value = ExperimentConfig> {
    let head = (0usize..50, any::<u64>(), prop::option::of(1usize..16), any::<bool>());
    let asbi = (1usize..8, 0.05f64..1.0, shape(), any::<bool>(), asbi_adversary()).prop_map(
        |(r, alpha, sketch, unprotected, adversary)| AsbiSection {
            stream_len: 3000,
            interruptions: r,
            alpha,
            domain: 4096,
            sketch,
            algorithm: if unprotected { AsbiAlgorithmSpec::Unprotected } else { AsbiAlgorithmSpec::Robust },
            adversary,
        },
    );
    let attack = (1usize..100, prop::option::of(1usize..8), any::<bool>()).prop_map(|(t, repetitions, advice)| AttackSection {
        t,
        domain: 4 * t as u32 + 7,
        sampler: SamplerSpec::Levelled,
        repetitions,
        advice,
    });
    let oblivious = (1usize..10_000, 0.05f64..1.0, prop::option::of(any::<u64>())).prop_map(|(stream_len, alpha, stream_seed)| ObliviousSection {
        stream_len,
        domain: 100,
        alpha,
        delete_prob: 0.25,
        sketch: None,
        stream_seed,
    });
    (head, prop_oneof![
        asa_section().prop_map(|s| (Mode::Asa, Some(s), None, None, None)),
        asbi.prop_map(|s| (Mode::Asbi, None, Some(s), None, None)),
        attack.prop_map(|s| (Mode::Attack, None, None, Some(s), None)),
        oblivious.prop_map(|s| (Mode::ObliviousBaseline, None, None, None, Some(s))),
    ])
        .prop_map(|((trials, base_seed, threads, write_transcripts), (mode, asa, asbi, attack, oblivious))| ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            mode,
            trials,
            base_seed,
            out_dir: "out".into(),
            threads,
            write_transcripts,
            asa,
            asbi,
            attack,
            oblivious,
        })
}

proptest! {
    #[test]
    fn config_round_trips(c in config()) {
        prop_assert!(c.validate().is_ok(), "{:?}", c.validate());
        let back = ExperimentConfig::parse(&c.to_json()).unwrap();
        prop_assert_eq!(back, c);
    }
}

#[test]
fn zero_trials_give_an_empty_summary() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = base(Mode::Asbi, 0, dir.path());
    config.asbi = Some(asbi_section(2, AsbiAdversarySpec::Oblivious { delete_prob: 0.0 }));
    let s = run_experiment(&config).unwrap().summary;
    assert_eq!((s.trials, s.per_trial.len()), (0, 0));
    assert_eq!(s.fraction_within, 0.0);
    assert!(dir.path().join("summary.json").exists());
}

fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "timing.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn same_seed_same_bytes_across_schedules() {
    let run = |execution, threads| {
        let dir = tempfile::tempdir().unwrap();
        let mut config = base(Mode::Asbi, 6, dir.path());
        config.threads = threads;
        config.asbi = Some(asbi_section(3, AsbiAdversarySpec::suffix_switch()));
        run_experiment_with(&config, execution).unwrap();
        outputs(dir.path())
    };
    let reference = run(Execution::Sequential, None);
    assert_eq!(reference.len(), 7, "six transcripts plus the summary");
    assert_eq!(run(Execution::Parallel, None), reference);
    assert_eq!(run(Execution::Parallel, Some(2)), reference);
}

#[test]
fn oblivious_interruption_runs_rarely_switch() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = base(Mode::Asbi, 20, dir.path());
    config.write_transcripts = false;
    config.asbi = Some(asbi_section(2, AsbiAdversarySpec::Oblivious { delete_prob: 0.0 }));
    let s = run_experiment(&config).unwrap().summary;
    assert!(s.switches_used.mean < 0.5, "mean switches {}", s.switches_used.mean);
    assert_eq!(s.interruptions_used.max, 0.0);
    assert_eq!(s.copy_failure_rate.map(|r| r <= 0.1), Some(true));
}

#[test]
fn attack_transcripts_list_every_query() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = base(Mode::Attack, 3, dir.path());
    config.attack = Some(AttackSection {
        t: 16,
        domain: 256,
        sampler: SamplerSpec::Exact,
        repetitions: None,
        advice: false,
    });
    let s = run_experiment(&config).unwrap().summary;
    assert_eq!(s.fraction_within, 1.0);
    let csv = fs::read_to_string(dir.path().join("trial_00002.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("query,answer,live"));
    assert_eq!(lines.count(), 16);
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_robust-stream")).args(args).output().unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut config = base(Mode::Asbi, 2, &out);
    config.asbi = Some(asbi_section(2, AsbiAdversarySpec::Oblivious { delete_prob: 0.1 }));
    let good = dir.path().join("good.json");
    fs::write(&good, config.to_json()).unwrap();
    let ok = cli(&["run", "--config", good.to_str().unwrap(), "--trials", "3"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(out.join("trial_00002.csv").exists());

    let bad = dir.path().join("bad.json");
    fs::write(&bad, config.to_json().replace("\"trials\"", "\"trails\"")).unwrap();
    assert_eq!(cli(&["run", "--config", bad.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(cli(&["run", "--config", "/nonexistent/c.json"]).status.code(), Some(1));
    assert_eq!(cli(&["frobnicate"]).status.code(), Some(1));

    // A script whose items exceed the domain is rejected as configuration.
    let mut scripted = config.clone();
    scripted.asbi.as_mut().unwrap().adversary = AsbiAdversarySpec::Scripted { script: "ins 9999\n".into() };
    fs::write(&good, scripted.to_json()).unwrap();
    assert_eq!(cli(&["run", "--config", good.to_str().unwrap()]).status.code(), Some(1));

    // A script that runs dry commits a short stream: protocol violation.
    scripted.asbi.as_mut().unwrap().adversary = AsbiAdversarySpec::Scripted { script: "ins 1\n".into() };
    fs::write(&good, scripted.to_json()).unwrap();
    assert_eq!(cli(&["run", "--config", good.to_str().unwrap()]).status.code(), Some(2));

    // Output directory below a regular file.
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    fs::write(&good, config.to_json()).unwrap();
    let io = cli(&["run", "--config", good.to_str().unwrap(), "--out", blocker.join("x").to_str().unwrap()]);
    assert_eq!(io.status.code(), Some(3));

    let report = cli(&["space-report"]);
    assert_eq!(report.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&report.stdout).contains("exceeds desk scale"));
}
