use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use passive_opt::cli::{prepare, CliError, DelaySpec, GraphSpec, RunConfig, Scenario};
use passive_opt::dynamics::CompensatorParams;
use passive_opt::engine::Mode;

const QUICK: &str = r#"{"duration": 2.0, "reference_duration": 1.0, "log_every": 50}"#;

fn bin(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_passive-opt"));
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn diagnostics(out: &Path) -> String {
    fs::read_to_string(out.join("diagnostics.txt")).unwrap()
}

fn config_message(r: Result<impl Sized, CliError>) -> String {
    match r {
        Err(e @ CliError::Config(_)) => e.to_string(),
        Err(e) => panic!("expected a config error, got {e}"),
        Ok(_) => panic!("expected a config error"),
    }
}

#[test]
fn seed_only_config_fills_defaults() {
    let cfg = RunConfig::from_json(r#"{"seed": 11}"#)
        .unwrap()
        .normalize(None, None, None);
    assert_eq!(cfg.seed, 11);
    assert_eq!(cfg.step, 1e-3);
    assert_eq!(cfg.graph, GraphSpec::Ring { n: 5, weight: 4.0 });
    assert_eq!(cfg.compensator, CompensatorParams::phase_lead_default());
    assert_eq!(cfg.compensator.b(), &[0.0, 5.0]);
    assert_eq!(cfg.compensator.c(), &[1.0, 10.0]);
    assert_eq!(cfg.eta, 1.0);
    assert_eq!(cfg.initial.lambda, 0.01);
    assert_eq!(cfg.instance.seed, Some(11));
    assert_eq!(
        cfg.delays,
        DelaySpec::Uniform {
            min: 0.2,
            max: 0.3,
            seed: Some(11)
        }
    );
    let text = cfg.to_json();
    assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
}

#[test]
fn unknown_keys_are_rejected_with_their_path() {
    let msg = config_message(RunConfig::from_json(r#"{"sead": 1}"#));
    assert!(msg.contains("sead"), "{msg}");
    let msg = config_message(RunConfig::from_json(
        r#"{"initial": {"lambda": 0.1, "nu": 1}}"#,
    ));
    assert!(msg.contains("initial") && msg.contains("nu"), "{msg}");
    let msg = config_message(RunConfig::from_json(
        r#"{"delays": {"type": "constant", "value": 0.3, "seed": 1}}"#,
    ));
    assert!(msg.contains("delays") && msg.contains("seed"), "{msg}");
    let msg = config_message(RunConfig::from_json(r#"{"step": "fast"}"#));
    assert!(msg.contains("step"), "{msg}");
    assert!(RunConfig::from_json(r#"{"seed": 1} trailing"#).is_err());
}

#[test]
fn nonpositive_step_is_named() {
    for step in [0.0, -1e-3] {
        let cfg = RunConfig::default().normalize(None, None, Some(step));
        let msg = config_message(prepare(cfg, Scenario::NoDelay));
        assert!(msg.contains("step"), "{msg}");
    }
}

#[test]
fn short_delay_names_the_edge() {
    let cfg = RunConfig {
        delays: DelaySpec::Constant { value: 1e-4 },
        ..Default::default()
    };
    let msg = config_message(prepare(cfg.clone(), Scenario::Scattering));
    assert!(msg.contains("edge 0->1"), "{msg}");
    // delays are not used without a delayed link
    assert!(prepare(cfg, Scenario::NoDelay).is_ok());
}

#[test]
fn bad_compensator_is_a_config_error() {
    let msg = config_message(RunConfig::from_json(
        r#"{"compensator": {"b": [1, 5], "c": [1, 10]}}"#,
    ));
    assert!(msg.contains("compensator"), "{msg}");
}

#[test]
fn scenarios_share_the_problem() {
    let cfg = RunConfig::default().normalize(None, Some(1.0), None);
    let runs: Vec<_> = [
        Scenario::NoDelay,
        Scenario::NaiveDelay,
        Scenario::Scattering,
        Scenario::NoCompensator,
    ]
    .into_iter()
    .map(|s| prepare(cfg.clone(), s).unwrap())
    .collect();
    for p in &runs[1..] {
        assert_eq!(p.instance, runs[0].instance);
        assert_eq!(p.sim.delays, runs[0].sim.delays);
        assert_eq!(p.sim.step, runs[0].sim.step);
        assert_eq!(p.sim.initial, runs[0].sim.initial);
        assert_eq!(p.problem.net().weights(), runs[0].problem.net().weights());
    }
    let modes: Vec<_> = runs.iter().map(|p| p.sim.mode).collect();
    assert_eq!(
        modes,
        [
            Mode::NoDelay,
            Mode::NaiveDelay,
            Mode::Scattering,
            Mode::NoDelay
        ]
    );
    assert!(runs[3].sim.compensator(0).is_integrator());
    assert!(!runs[0].sim.compensator(0).is_integrator());
}

#[test]
fn seed_override_replaces_every_seed() {
    let cfg = RunConfig::from_json(r#"{"seed": 1, "instance": {"seed": 2}, "delays": {"type": "uniform", "min": 0.2, "max": 0.3, "seed": 3}}"#)
        .unwrap();
    let kept = cfg.clone().normalize(None, None, None);
    assert_eq!(kept.instance.seed, Some(2));
    let replaced = cfg.normalize(Some(9), None, None);
    assert_eq!(replaced.instance.seed, Some(9));
    assert!(matches!(
        replaced.delays,
        DelaySpec::Uniform { seed: Some(9), .. }
    ));
}

#[test]
fn run_writes_outputs_and_normalized_config_reproduces_it() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "quick.json", QUICK);
    let first = dir.path().join("first");
    let out = bin(&["--scenario", "scattering"], Some(&config), &first);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in ["trajectory.csv", "diagnostics.txt", "config.normalized"] {
        assert!(first.join(f).is_file(), "{f}");
    }
    let diag = diagnostics(&first);
    assert!(diag.contains("scenario: scattering"));
    assert!(diag.contains("verdict: "));
    assert!(diag.contains("lyapunov_vbar: samples 21"));
    assert!(diag.contains("passivity.agent.corrected"));
    assert!(diag.contains("oracle.assignment: "));

    let second = dir.path().join("second");
    let out = bin(
        &["--scenario", "scattering"],
        Some(&first.join("config.normalized")),
        &second,
    );
    assert!(out.status.success());
    assert_eq!(
        fs::read(first.join("trajectory.csv")).unwrap(),
        fs::read(second.join("trajectory.csv")).unwrap()
    );
    assert_eq!(
        fs::read_to_string(first.join("config.normalized")).unwrap(),
        fs::read_to_string(second.join("config.normalized")).unwrap()
    );
}

#[test]
fn command_line_overrides_are_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "quick.json", QUICK);
    let out_dir = dir.path().join("o");
    let out = bin(
        &["--seed", "7", "--duration", "0.5", "--step", "0.002"],
        Some(&config),
        &out_dir,
    );
    assert!(out.status.success());
    let echoed =
        RunConfig::from_json(&fs::read_to_string(out_dir.join("config.normalized")).unwrap())
            .unwrap();
    assert_eq!((echoed.seed, echoed.duration, echoed.step), (7, 0.5, 0.002));
    assert_eq!(echoed.instance.seed, Some(7));
    assert!(diagnostics(&out_dir).contains("steps_completed: 250"));
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", r#"{"step": 0}"#);
    let out = bin(&[], Some(&bad), &dir.path().join("o"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("step"));

    let bad = write(
        dir.path(),
        "short.json",
        r#"{"delays": {"type": "constant", "value": 0.0001}}"#,
    );
    let out = bin(
        &["--scenario", "naive_delay"],
        Some(&bad),
        &dir.path().join("o"),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("edge"));

    let out = bin(&["--scenario", "warp"], None, &dir.path().join("o"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergence_exit_code_depends_on_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "tight.json",
        r#"{"duration": 1.0, "reference_duration": 0.5, "divergence_bound": 0.5}"#,
    );
    let out = bin(
        &["--scenario", "no_delay"],
        Some(&config),
        &dir.path().join("a"),
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(diagnostics(&dir.path().join("a")).contains("verdict: diverged"));

    let out = bin(
        &["--scenario", "naive_delay"],
        Some(&config),
        &dir.path().join("b"),
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(diagnostics(&dir.path().join("b")).contains("verdict: diverged"));
}

#[test]
fn explicit_graph_and_csv_instance() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "pos.csv",
        "kind,id,px,py\nrobot,0,0,0\nrobot,1,10,0\nrobot,2,0,10\ntarget,0,0,11\ntarget,1,1,0\ntarget,2,11,1\n",
    );
    let config = write(
        dir.path(),
        "c.json",
        r#"{
            "graph": {"type": "matrix", "weights": [[0, 2, 2], [2, 0, 2], [2, 2, 0]]},
            "instance": {"csv": "pos.csv"},
            "duration": 0.5, "reference_duration": 0.5
        }"#,
    );
    let cfg = RunConfig::load(&config)
        .unwrap()
        .normalize(None, None, None);
    assert_eq!(cfg.instance.seed, None);
    let p = prepare(cfg, Scenario::NoDelay).unwrap();
    assert_eq!(p.instance.n_robots(), 3);
    assert_eq!(p.oracle.unwrap().best.perm, vec![1, 2, 0]);

    let out = bin(&[], Some(&config), &dir.path().join("o"));
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let mismatched = write(
        dir.path(),
        "m.json",
        r#"{"graph": {"type": "ring", "n": 4, "weight": 1}}"#,
    );
    let msg = config_message(prepare(
        RunConfig::load(&mismatched).unwrap(),
        Scenario::NoDelay,
    ));
    assert!(msg.contains("problem"), "{msg}");
}
