//! Configuration schema and the scenario runner behind the `passive-opt` binary.
//!
//! A run reads one JSON config (every key optional, unknown keys rejected),
//! applies command-line overrides, and writes three files to the output
//! directory: `trajectory.csv`, `diagnostics.txt` and `config.normalized`,
//! the fully defaulted config that reproduces the run when read back.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::{CompensatorParams, InitialValues};
use crate::engine::diagnostics::{
    check_monotone, LyapunovMonitor, MonotonicityReport, PassivityMonitor, PassivityReport,
    RateCheck, ReferencePoint,
};
use crate::engine::verdict::{classify, last_quartile_swings, Verdict};
use crate::engine::{simulate, simulate_observed, EdgeDelays, Mode, SimConfig, TrajectoryLog};
use crate::graph::Network;
use crate::matching::{
    build_distributed_problem, enumerate_assignments, extract_assignment, unique_instance,
    MatchingInstance, OracleResult, MAX_ORACLE_SIZE,
};
use crate::problem::{DistributedProblem, KktResidual};

/// Smallest cost gap between the best and second-best assignment accepted
/// for generated instances.
pub const INSTANCE_MIN_GAP: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("writing trajectory: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Run(#[from] crate::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

fn config_error(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Delay-free exchange with the phase-lead compensator.
    NoDelay,
    /// Raw states sent through the delayed links.
    NaiveDelay,
    /// Wave variables through the delayed links.
    Scattering,
    /// Delay-free exchange with a pure integrator (m = 1).
    NoCompensator,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::NoDelay => "no_delay",
            Scenario::NaiveDelay => "naive_delay",
            Scenario::Scattering => "scattering",
            Scenario::NoCompensator => "no_compensator",
        }
    }

    pub fn mode(&self) -> Mode {
        match self {
            Scenario::NoDelay | Scenario::NoCompensator => Mode::NoDelay,
            Scenario::NaiveDelay => Mode::NaiveDelay,
            Scenario::Scattering => Mode::Scattering,
        }
    }
}

#[derive(Debug, Clone, Parser)]
#[command(
    name = "passive-opt",
    version,
    about = "Distributed primal-dual optimization over delayed networks"
)]
pub struct Args {
    /// JSON config; all keys are optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "no_delay")]
    pub scenario: Scenario,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Replaces the top-level seed and any instance or delay seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Simulated seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Euler step in seconds.
    #[arg(long)]
    pub step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    Ring { n: usize, weight: f64 },
    Matrix { weights: Vec<Vec<f64>> },
}

impl Default for GraphSpec {
    fn default() -> Self {
        GraphSpec::Ring { n: 5, weight: 4.0 }
    }
}

impl GraphSpec {
    pub fn build(&self) -> crate::Result<Network> {
        match self {
            GraphSpec::Ring { n, weight } => Network::ring(*n, *weight),
            GraphSpec::Matrix { weights } => {
                let n = weights.len();
                if let Some(row) = weights.iter().find(|r| r.len() != n) {
                    return Err(crate::Error::InvalidGraph(format!(
                        "weight matrix has {n} rows but a row of length {}",
                        row.len()
                    )));
                }
                Network::from_weights(DMatrix::from_fn(n, n, |i, j| weights[i][j]))
            }
        }
    }
}

/// Either a CSV file of positions or a seeded uniform draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InstanceSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    /// Defaults to the top-level seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub n: usize,
    /// Side length of the square the positions are drawn from.
    pub area: f64,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self {
            csv: None,
            seed: None,
            n: 5,
            area: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DelaySpec {
    Constant {
        value: f64,
    },
    /// Every directed edge draws its own delay; seed defaults to the top-level seed.
    Uniform {
        min: f64,
        max: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

impl Default for DelaySpec {
    fn default() -> Self {
        DelaySpec::Uniform {
            min: 0.2,
            max: 0.3,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub graph: GraphSpec,
    pub instance: InstanceSpec,
    pub delays: DelaySpec,
    pub step: f64,
    pub duration: f64,
    pub eta: f64,
    pub compensator: CompensatorParams,
    pub initial: InitialValues,
    pub log_every: usize,
    pub log_edges: bool,
    pub divergence_bound: f64,
    pub parallel: bool,
    /// KKT tolerance for the `converged` verdict.
    pub tolerance: f64,
    /// Length of the delay-free run whose end state is the diagnostics reference.
    pub reference_duration: f64,
    /// Sampling period of the Lyapunov function, in seconds.
    pub lyapunov_interval: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 4,
            graph: GraphSpec::default(),
            instance: InstanceSpec::default(),
            delays: DelaySpec::default(),
            step: 1e-3,
            duration: 200.0,
            eta: 1.0,
            compensator: CompensatorParams::phase_lead_default(),
            initial: InitialValues::default(),
            log_every: 1000,
            log_edges: true,
            divergence_bound: 1e9,
            parallel: false,
            tolerance: 1e-2,
            reference_duration: 200.0,
            lyapunov_interval: 0.1,
        }
    }
}

impl RunConfig {
    /// Parses JSON text, reporting the path of the offending field on error.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let mut de = serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path = e.path().to_string();
            config_error(format!("config field `{path}`: {}", e.into_inner()))
        })?;
        de.end().map_err(|e| config_error(format!("config: {e}")))?;
        Ok(cfg)
    }

    /// Reads a config file. A relative instance CSV path is taken relative to
    /// the config file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| config_error(format!("reading config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(csv) = &cfg.instance.csv {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.instance.csv = Some(dir.join(csv));
                }
            }
        }
        Ok(cfg)
    }

    /// Applies command-line overrides and makes every seed explicit.
    pub fn normalize(
        mut self,
        seed: Option<u64>,
        duration: Option<f64>,
        step: Option<f64>,
    ) -> Self {
        if let Some(s) = seed {
            self.seed = s;
            self.instance.seed = None;
            if let DelaySpec::Uniform { seed, .. } = &mut self.delays {
                *seed = None;
            }
        }
        if let Some(d) = duration {
            self.duration = d;
        }
        if let Some(h) = step {
            self.step = h;
        }
        if self.instance.csv.is_none() {
            self.instance.seed.get_or_insert(self.seed);
        }
        if let DelaySpec::Uniform { seed, .. } = &mut self.delays {
            seed.get_or_insert(self.seed);
        }
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Everything a run needs, built and validated from a normalized config.
#[derive(Clone)]
pub struct Prepared {
    pub config: RunConfig,
    pub scenario: Scenario,
    pub instance: MatchingInstance,
    pub problem: DistributedProblem,
    pub sim: SimConfig,
    pub oracle: Option<OracleResult>,
}

pub fn prepare(config: RunConfig, scenario: Scenario) -> Result<Prepared, CliError> {
    if !(config.tolerance > 0.0) {
        return Err(config_error(format!(
            "tolerance must be positive, got {}",
            config.tolerance
        )));
    }
    if !(config.reference_duration >= 0.0) || !config.reference_duration.is_finite() {
        return Err(config_error(format!(
            "reference_duration must be nonnegative, got {}",
            config.reference_duration
        )));
    }
    if !(config.lyapunov_interval > 0.0) {
        return Err(config_error(format!(
            "lyapunov_interval must be positive, got {}",
            config.lyapunov_interval
        )));
    }
    let net = config
        .graph
        .build()
        .map_err(|e| config_error(format!("graph: {e}")))?;
    let instance = match &config.instance.csv {
        Some(path) => MatchingInstance::read_csv_path(path)
            .map_err(|e| config_error(format!("instance csv {}: {e:#}", path.display())))?,
        None => {
            let spec = &config.instance;
            let seed = spec.seed.unwrap_or(config.seed);
            if spec.n <= MAX_ORACLE_SIZE {
                unique_instance(seed, spec.n, spec.area, INSTANCE_MIN_GAP)
                    .map_err(|e| config_error(format!("instance: {e}")))?
                    .0
            } else {
                use rand_chacha::rand_core::SeedableRng;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                MatchingInstance::random(spec.n, spec.area, &mut rng)
                    .map_err(|e| config_error(format!("instance: {e}")))?
            }
        }
    };
    let oracle = if instance.n_robots() <= MAX_ORACLE_SIZE {
        Some(enumerate_assignments(&instance).map_err(|e| config_error(format!("instance: {e}")))?)
    } else {
        None
    };
    let problem = build_distributed_problem(&instance, &net)
        .map_err(|e| config_error(format!("problem: {e}")))?;

    let mut sim = SimConfig::new(scenario.mode(), config.duration);
    sim.step = config.step;
    sim.eta = config.eta;
    sim.compensators = vec![match scenario {
        Scenario::NoCompensator => CompensatorParams::integrator(),
        _ => config.compensator.clone(),
    }];
    sim.initial = config.initial;
    sim.log_every = config.log_every;
    sim.log_edges = config.log_edges;
    sim.divergence_bound = config.divergence_bound;
    sim.parallel = config.parallel;
    sim.delays = match &config.delays {
        DelaySpec::Constant { value } => EdgeDelays::constant(&net, *value),
        DelaySpec::Uniform { min, max, seed } => {
            EdgeDelays::uniform(&net, *min, *max, seed.unwrap_or(config.seed))
                .map_err(config_error)?
        }
    };
    sim.validate(&net).map_err(config_error)?;
    Ok(Prepared {
        config,
        scenario,
        instance,
        problem,
        sim,
        oracle,
    })
}

/// Delay-free phase-lead run of the same problem; its end state anchors the
/// storage functions.
pub fn reference_run(prepared: &Prepared) -> Result<TrajectoryLog, CliError> {
    let mut cfg = prepared.sim.clone();
    cfg.mode = Mode::NoDelay;
    cfg.compensators = vec![prepared.config.compensator.clone()];
    cfg.duration = prepared.config.reference_duration;
    cfg.log_every = usize::MAX;
    cfg.log_edges = false;
    Ok(simulate(&prepared.problem, &cfg)?)
}

/// Results of one scenario run, as summarized in `diagnostics.txt`.
pub struct Report {
    pub scenario: Scenario,
    pub verdict: Verdict,
    pub tolerance: f64,
    pub log: TrajectoryLog,
    pub reference: ReferencePoint,
    pub reference_kkt: KktResidual,
    pub lyapunov_name: &'static str,
    pub lyapunov: Option<MonotonicityReport>,
    pub lyapunov_error: Option<String>,
    pub passivity: PassivityReport,
    pub oracle: Option<OracleResult>,
    /// Assignment read from each agent's final estimate.
    pub assignments: Vec<Result<Vec<usize>, String>>,
    /// `sum_i f_i(x_i)` at the final state.
    pub objective: f64,
}

impl Report {
    pub fn assignments_match_oracle(&self) -> bool {
        match &self.oracle {
            Some(o) => self
                .assignments
                .iter()
                .all(|a| a.as_ref().ok() == Some(&o.best.perm)),
            None => false,
        }
    }

    pub fn exit_code(&self) -> u8 {
        if self.verdict == Verdict::Diverged && self.scenario != Scenario::NaiveDelay {
            3
        } else {
            0
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let log = &self.log;
        let _ = writeln!(s, "scenario: {}", self.scenario.name());
        let _ = writeln!(s, "mode: {}", log.mode.name());
        let _ = writeln!(s, "verdict: {}", self.verdict);
        let _ = writeln!(s, "tolerance: {}", self.tolerance);
        let _ = writeln!(s, "final_time: {}", log.final_time);
        let _ = writeln!(s, "steps_completed: {}", log.steps_completed);
        match &log.abort {
            Some(a) => {
                let _ = writeln!(s, "abort: {a}");
            }
            None => {
                let _ = writeln!(s, "abort: none");
            }
        }
        if let Some(last) = log.last_sample() {
            let _ = writeln!(s, "consensus_error: {:e}", last.consensus_error);
            for (name, v) in last.kkt.fields() {
                let _ = writeln!(s, "kkt.{name}: {v:e}");
            }
            let _ = writeln!(s, "kkt.max: {:e}", last.kkt.max());
        }
        for sw in last_quartile_swings(log) {
            let _ = writeln!(
                s,
                "last_quartile.{}: min {:e} max {:e} range/min {:e}",
                sw.field,
                sw.min,
                sw.max,
                sw.ratio()
            );
        }
        let _ = writeln!(s, "reference.kkt.max: {:e}", self.reference_kkt.max());
        match (&self.lyapunov, &self.lyapunov_error) {
            (_, Some(e)) => {
                let _ = writeln!(s, "{}: error {e}", self.lyapunov_name);
            }
            (Some(m), None) => {
                let _ = writeln!(
                    s,
                    "{}: samples {} max_increase {:e} at {} slack {:e} monotone {}",
                    self.lyapunov_name,
                    m.samples,
                    m.max_increase,
                    m.at,
                    m.slack,
                    if m.holds { "yes" } else { "no" }
                );
            }
            (None, None) => {}
        }
        let rate = |s: &mut String, name: &str, r: &RateCheck| {
            for (kind, v) in [("raw", &r.raw), ("corrected", &r.corrected)] {
                let _ = writeln!(
                    s,
                    "passivity.{name}.{kind}: worst {:e} agent {} t {}",
                    v.worst, v.agent, v.t
                );
            }
        };
        rate(&mut s, "compensator", &self.passivity.compensator);
        rate(&mut s, "dual", &self.passivity.dual);
        if let Some(a) = &self.passivity.agent {
            rate(&mut s, "agent", a);
        }
        if let Some(e) = &self.passivity.error {
            let _ = writeln!(s, "passivity.error: {e}");
        }
        if let Some(o) = &self.oracle {
            let _ = writeln!(s, "oracle.assignment: {:?}", o.best.perm);
            let _ = writeln!(s, "oracle.cost: {}", o.best.cost);
            let _ = writeln!(s, "oracle.gap: {:e}", o.gap());
        }
        for (i, a) in self.assignments.iter().enumerate() {
            match a {
                Ok(p) => {
                    let _ = writeln!(s, "agent{i}.assignment: {p:?}");
                }
                Err(e) => {
                    let _ = writeln!(s, "agent{i}.assignment: none ({e})");
                }
            }
        }
        if self.oracle.is_some() {
            let verdict = if self.assignments_match_oracle() {
                "yes"
            } else {
                "no"
            };
            let _ = writeln!(s, "assignment_matches_oracle: {verdict}");
        }
        let _ = writeln!(s, "objective_sum: {}", self.objective);
        s
    }
}

/// Runs the scenario with Lyapunov and passivity monitors attached.
pub fn execute(prepared: &Prepared) -> Result<Report, CliError> {
    let ref_log = reference_run(prepared)?;
    let reference = ReferencePoint::from_states(Mode::NoDelay, &ref_log.final_states);
    let reference_kkt = reference.kkt(&prepared.problem)?;
    let prob = &prepared.problem;
    let sim = &prepared.sim;

    let mut lyap = LyapunovMonitor::new(prob, sim, &reference, prepared.config.lyapunov_interval)?;
    let mut pass = PassivityMonitor::new(prob, sim, &reference)?;
    let mut log = simulate_observed(prob, sim, &mut [&mut lyap, &mut pass])?;

    let lyapunov_name = lyap.name();
    let lyapunov_error = lyap.error.as_ref().map(|e| e.to_string());
    let lyapunov = lyap.series.first().map(|&(_, v0)| {
        let slack = 1e-3 * sim.step * (1.0 + v0.abs());
        check_monotone(&lyap.series, slack)
    });
    let series = std::mem::take(&mut lyap.series);
    log.add_series(lyapunov_name, series);
    let passivity = std::mem::take(&mut pass.report);
    drop((lyap, pass));

    let n = prepared.instance.n_robots();
    let assignments = log
        .final_states
        .iter()
        .map(|s| extract_assignment(s.x(), n).map_err(|e| e.to_string()))
        .collect();
    let finals: Vec<_> = log.final_states.iter().map(|s| s.x().clone()).collect();
    let objective = prob.objective_value(&finals);
    let verdict = classify(&log, prepared.config.tolerance);
    Ok(Report {
        scenario: prepared.scenario,
        verdict,
        tolerance: prepared.config.tolerance,
        log,
        reference,
        reference_kkt,
        lyapunov_name,
        lyapunov,
        lyapunov_error,
        passivity,
        oracle: prepared.oracle.clone(),
        assignments,
        objective,
    })
}

/// Writes `trajectory.csv`, `diagnostics.txt` and `config.normalized` into `out`.
pub fn write_outputs(out: &Path, config: &RunConfig, report: &Report) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.normalized"), config.to_json() + "\n")?;
    let file = fs::File::create(out.join("trajectory.csv"))?;
    let mut writer = BufWriter::new(file);
    report.log.write_csv(&mut writer)?;
    writer.flush()?;
    fs::write(out.join("diagnostics.txt"), report.render())?;
    Ok(())
}

/// Entry point used by the binary. Returns the process exit code.
pub fn run(args: &Args) -> Result<u8, CliError> {
    let config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let config = config.normalize(args.seed, args.duration, args.step);
    let prepared = prepare(config, args.scenario)?;
    let report = execute(&prepared)?;
    write_outputs(&args.out, &prepared.config, &report)?;
    println!("scenario {}: {}", args.scenario.name(), report.verdict);
    if let Some(a) = &report.log.abort {
        println!("aborted: {a}");
    }
    println!("outputs written to {}", args.out.display());
    Ok(report.exit_code())
}
