use std::io::Write;

use nalgebra::DVector;
use serde::Serialize;

use crate::dynamics::AgentState;
use crate::engine::config::Mode;
use crate::problem::KktResidual;

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSample {
    pub x: DVector<f64>,
    pub xi: DVector<f64>,
    pub lambda: DVector<f64>,
    pub mu: DVector<f64>,
    pub rho: Vec<DVector<f64>>,
    pub nu: DVector<f64>,
    pub zeta: DVector<f64>,
}

/// Signals at the end of edge `peer -> agent` held by `agent`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSample {
    pub agent: usize,
    pub peer: usize,
    pub r: DVector<f64>,
    pub p: DVector<f64>,
    pub s_in: Option<DVector<f64>>,
    pub s_out: Option<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub step: usize,
    pub t: f64,
    pub agents: Vec<AgentSample>,
    pub edges: Vec<EdgeSample>,
    pub kkt: KktResidual,
    pub consensus_error: f64,
}

/// Why a run stopped before its configured duration.
#[derive(Debug, Clone, PartialEq)]
pub enum Abort {
    LambdaGuard {
        step: usize,
        t: f64,
        agent: usize,
        component: usize,
        value: f64,
    },
    NonFinite {
        step: usize,
        t: f64,
    },
    Diverged {
        step: usize,
        t: f64,
        magnitude: f64,
    },
}

impl std::fmt::Display for Abort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Abort::LambdaGuard {
                step,
                t,
                agent,
                component,
                value,
            } => write!(
                f,
                "lambda guard at step {step} (t = {t}): agent {agent} component {component} -> {value}"
            ),
            Abort::NonFinite { step, t } => write!(f, "non-finite state at step {step} (t = {t})"),
            Abort::Diverged { step, t, magnitude } => {
                write!(f, "state magnitude {magnitude:e} exceeded the bound at step {step} (t = {t})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub mode: Mode,
    pub step_size: f64,
    pub samples: Vec<Sample>,
    /// States at the last simulated instant (before the failing step on abort).
    pub final_states: Vec<AgentState>,
    pub final_time: f64,
    pub steps_completed: usize,
    pub abort: Option<Abort>,
    /// Extra global time series, e.g. Lyapunov values.
    pub series: Vec<(String, Vec<(f64, f64)>)>,
}

#[derive(Serialize)]
struct Row<'a> {
    t: f64,
    entity_kind: &'a str,
    entity_id: &'a str,
    variable: &'a str,
    component_index: usize,
    value: f64,
}

impl TrajectoryLog {
    pub fn last_sample(&self) -> Option<&Sample> {
        self.samples.last()
    }

    pub fn kkt_series(&self) -> Vec<(f64, f64)> {
        self.samples.iter().map(|s| (s.t, s.kkt.max())).collect()
    }

    pub fn add_series(&mut self, name: impl Into<String>, series: Vec<(f64, f64)>) {
        self.series.push((name.into(), series));
    }

    /// Long-format CSV: `t, entity_kind, entity_id, variable, component_index, value`.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        fn emit<W: Write>(
            w: &mut csv::Writer<W>,
            t: f64,
            kind: &str,
            id: &str,
            var: &str,
            v: &DVector<f64>,
        ) -> csv::Result<()> {
            for (c, &value) in v.iter().enumerate() {
                w.serialize(Row {
                    t,
                    entity_kind: kind,
                    entity_id: id,
                    variable: var,
                    component_index: c,
                    value,
                })?;
            }
            Ok(())
        }
        for s in &self.samples {
            for (i, a) in s.agents.iter().enumerate() {
                let id = i.to_string();
                emit(&mut w, s.t, "agent", &id, "x", &a.x)?;
                emit(&mut w, s.t, "agent", &id, "xi", &a.xi)?;
                emit(&mut w, s.t, "agent", &id, "lambda", &a.lambda)?;
                emit(&mut w, s.t, "agent", &id, "mu", &a.mu)?;
                for (k, rho) in a.rho.iter().enumerate() {
                    emit(&mut w, s.t, "agent", &id, &format!("rho{}", k + 1), rho)?;
                }
                emit(&mut w, s.t, "agent", &id, "nu", &a.nu)?;
                emit(&mut w, s.t, "agent", &id, "zeta", &a.zeta)?;
            }
            for e in &s.edges {
                let id = format!("{}<-{}", e.agent, e.peer);
                emit(&mut w, s.t, "edge", &id, "r", &e.r)?;
                emit(&mut w, s.t, "edge", &id, "p", &e.p)?;
                if let Some(v) = &e.s_in {
                    emit(&mut w, s.t, "edge", &id, "s_in", v)?;
                }
                if let Some(v) = &e.s_out {
                    emit(&mut w, s.t, "edge", &id, "s_out", v)?;
                }
            }
            let globals = [
                ("consensus_error", s.consensus_error),
                ("kkt_consensus", s.kkt.consensus),
                ("kkt_stationarity", s.kkt.stationarity),
                ("kkt_primal_eq", s.kkt.primal_eq),
                ("kkt_primal_ineq", s.kkt.primal_ineq),
                ("kkt_comp_slack", s.kkt.comp_slack),
            ];
            for (name, value) in globals {
                w.serialize(Row {
                    t: s.t,
                    entity_kind: "global",
                    entity_id: "all",
                    variable: name,
                    component_index: 0,
                    value,
                })?;
            }
        }
        for (name, series) in &self.series {
            for &(t, value) in series {
                w.serialize(Row {
                    t,
                    entity_kind: "global",
                    entity_id: "all",
                    variable: name,
                    component_index: 0,
                    value,
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
