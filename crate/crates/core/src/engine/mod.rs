//! Synchronous fixed-step simulation of all agents and channels.
//!
//! Each step runs in a fixed order: every channel end reads its delayed
//! input, every agent evaluates its derivative from time-`t` values, the
//! outgoing waves (or raw states) are pushed, and the Euler updates are
//! committed together.

pub mod config;
pub mod diagnostics;
pub mod log;
pub mod verdict;

use nalgebra::DVector;
use rayon::prelude::*;

pub use config::{EdgeDelays, Mode, SimConfig};
pub use log::{Abort, AgentSample, EdgeSample, Sample, TrajectoryLog};
pub use verdict::{classify, Verdict};

use crate::dynamics::{self, AgentDerivative, AgentState, NeighborSignal};
use crate::error::{Error, Result};
use crate::problem::{
    kkt_residual, laplacian_apply, DistributedProblem, KktResidual, PrimalDualPoint,
};
use crate::scattering::{stack, ChannelEnd, CouplingMatrix, DelayLine, Recovered};

#[derive(Debug, Clone)]
enum LinkKind {
    Direct,
    Naive(DelayLine),
    Scattering(ChannelEnd),
}

#[derive(Debug, Clone)]
struct Link {
    peer: usize,
    weight: f64,
    coupling: CouplingMatrix,
    /// Position of the reverse link in `links[peer]`.
    reverse: usize,
    kind: LinkKind,
}

/// What agent `i` uses from neighbor `peer` at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSignal {
    pub peer: usize,
    pub weight: f64,
    pub r_x: DVector<f64>,
    pub r_xi: DVector<f64>,
    /// `E_ij (r_ij - [x_i; xi_i])`.
    pub p: DVector<f64>,
    /// Incoming and outgoing waves (scattering mode only).
    pub s_in: Option<DVector<f64>>,
    pub s_out: Option<DVector<f64>>,
}

impl EdgeSignal {
    pub fn r(&self) -> DVector<f64> {
        stack(&self.r_x, &self.r_xi)
    }
}

/// Everything observers may inspect at one grid point.
pub struct StepView<'a> {
    pub step: usize,
    pub t: f64,
    pub h: f64,
    pub states: &'a [AgentState],
    pub derivs: &'a [AgentDerivative],
    pub signals: &'a [Vec<EdgeSignal>],
    /// States at `t + h`; `None` at the final instant.
    pub next: Option<&'a [AgentState]>,
}

/// Hook called at every grid point, after the step has been committed.
pub trait Observer {
    fn observe(&mut self, view: &StepView<'_>);
}

/// Stepwise simulator. Most callers want [`simulate`].
pub struct Simulator<'a> {
    prob: &'a DistributedProblem,
    cfg: &'a SimConfig,
    states: Vec<AgentState>,
    links: Vec<Vec<Link>>,
}

impl<'a> Simulator<'a> {
    pub fn new(prob: &'a DistributedProblem, cfg: &'a SimConfig) -> Result<Self> {
        let net = prob.net();
        cfg.validate(net)?;
        let n = prob.dim();
        let states = prob
            .locals()
            .iter()
            .enumerate()
            .map(|(i, local)| AgentState::initial(local, cfg.compensator(i), &cfg.initial))
            .collect();
        let neighbors: Vec<Vec<(usize, f64)>> = (0..prob.n_agents())
            .map(|i| net.neighbors(i))
            .collect::<Result<_>>()?;
        let mut links = Vec::with_capacity(neighbors.len());
        for (i, nbrs) in neighbors.iter().enumerate() {
            let mut row = Vec::with_capacity(nbrs.len());
            for &(j, a) in nbrs {
                let coupling = CouplingMatrix::new(a, n)?;
                let reverse = neighbors[j]
                    .iter()
                    .position(|&(k, _)| k == i)
                    .expect("undirected graph");
                // the line at i for peer j carries what j sent, delayed by T_ji
                let delay = || cfg.delays.get(j, i).expect("validated");
                let kind = match cfg.mode {
                    Mode::NoDelay => LinkKind::Direct,
                    Mode::NaiveDelay => LinkKind::Naive(DelayLine::new(delay(), cfg.step, 2 * n)?),
                    Mode::Scattering => LinkKind::Scattering(ChannelEnd::new(
                        cfg.eta,
                        coupling,
                        DelayLine::new(delay(), cfg.step, 2 * n)?,
                    )?),
                };
                row.push(Link {
                    peer: j,
                    weight: a,
                    coupling,
                    reverse,
                    kind,
                });
            }
            links.push(row);
        }
        Ok(Self {
            prob,
            cfg,
            states,
            links,
        })
    }

    pub fn states(&self) -> &[AgentState] {
        &self.states
    }

    /// Delay of the line feeding agent `agent` from `peer`, in steps.
    pub fn line_len(&self, agent: usize, peer: usize) -> Option<usize> {
        self.links[agent]
            .iter()
            .find(|l| l.peer == peer)
            .and_then(|l| match &l.kind {
                LinkKind::Direct => None,
                LinkKind::Naive(line) => Some(line.len()),
                LinkKind::Scattering(end) => Some(end.inbound.len()),
            })
    }

    /// Reads every channel at the current instant without side effects.
    pub fn signals(&self) -> Result<Vec<Vec<EdgeSignal>>> {
        let n = self.prob.dim();
        self.links
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let own = &self.states[i];
                row.iter()
                    .map(|link| {
                        let peer = &self.states[link.peer];
                        let (r, s_in, s_out, p) = match &link.kind {
                            LinkKind::Direct => (stack(peer.x(), peer.xi()), None, None, None),
                            LinkKind::Naive(line) => (line.peek().clone(), None, None, None),
                            LinkKind::Scattering(end) => {
                                let s_in = end.inbound.peek().clone();
                                let Recovered { r, p } = end.recover(&s_in, own.x(), own.xi())?;
                                let s_out = end.outgoing_wave(&Recovered {
                                    r: r.clone(),
                                    p: p.clone(),
                                });
                                (r, Some(s_in), Some(s_out), Some(p))
                            }
                        };
                        let p = p.unwrap_or_else(|| {
                            link.coupling.apply(&(&r - stack(own.x(), own.xi())))
                        });
                        Ok(EdgeSignal {
                            peer: link.peer,
                            weight: link.weight,
                            r_x: r.rows(0, n).into_owned(),
                            r_xi: r.rows(n, n).into_owned(),
                            p,
                            s_in,
                            s_out,
                        })
                    })
                    .collect()
            })
            .collect()
    }

    pub fn derivatives(&self, signals: &[Vec<EdgeSignal>]) -> Result<Vec<AgentDerivative>> {
        let one = |i: usize| {
            let received: Vec<NeighborSignal<'_>> = signals[i]
                .iter()
                .map(|s| NeighborSignal {
                    x: &s.r_x,
                    xi: &s.r_xi,
                    weight: s.weight,
                })
                .collect();
            dynamics::derivatives(
                &self.prob.locals()[i],
                &self.states[i],
                self.cfg.compensator(i),
                &received,
            )
        };
        if self.cfg.parallel {
            (0..self.states.len()).into_par_iter().map(one).collect()
        } else {
            (0..self.states.len()).map(one).collect()
        }
    }

    /// Integrated states at `t + h`, or the index and error of the first failing agent.
    pub fn integrate(
        &self,
        derivs: &[AgentDerivative],
    ) -> std::result::Result<Vec<AgentState>, (usize, Error)> {
        self.states
            .iter()
            .zip(derivs)
            .enumerate()
            .map(|(i, (s, d))| dynamics::euler_step(s, d, self.cfg.step).map_err(|e| (i, e)))
            .collect()
    }

    /// Pushes this instant's outgoing data into the channels and commits `next`.
    pub fn commit(&mut self, signals: &[Vec<EdgeSignal>], next: Vec<AgentState>) {
        let mut outgoing: Vec<(usize, usize, DVector<f64>)> = Vec::new();
        for (i, row) in self.links.iter_mut().enumerate() {
            for (link, sig) in row.iter_mut().zip(&signals[i]) {
                match &mut link.kind {
                    LinkKind::Direct => {}
                    LinkKind::Naive(line) => {
                        let peer = &self.states[link.peer];
                        line.push_pop(stack(peer.x(), peer.xi()));
                    }
                    LinkKind::Scattering(_) => {
                        let s_out = sig.s_out.clone().expect("scattering signal carries a wave");
                        outgoing.push((link.peer, link.reverse, s_out));
                    }
                }
            }
        }
        for (peer, reverse, s_out) in outgoing {
            if let LinkKind::Scattering(end) = &mut self.links[peer][reverse].kind {
                end.inbound.push_pop(s_out);
            }
        }
        self.states = next;
    }
}

/// `||(L ⊗ I) x||_inf`.
pub fn consensus_error(prob: &DistributedProblem, states: &[AgentState]) -> f64 {
    let xs: Vec<DVector<f64>> = states.iter().map(|s| s.x().clone()).collect();
    laplacian_apply(prob.net(), &xs)
        .iter()
        .map(|v| v.amax())
        .fold(0.0, f64::max)
}

/// Primal-dual point implied by agent states under `mode`.
///
/// Through the wave channels the received `r^xi` settles at the midpoint
/// `(xi_i + xi_j) / 2`, so the consensus multiplier is `xi / 2` there.
pub fn multiplier_estimate(mode: Mode, states: &[AgentState]) -> PrimalDualPoint {
    let scale = if mode == Mode::Scattering { 0.5 } else { 1.0 };
    PrimalDualPoint {
        x: states.iter().map(|s| s.x().clone()).collect(),
        xi: states.iter().map(|s| s.xi() * scale).collect(),
        lambda: states.iter().map(|s| s.lambda().clone()).collect(),
        mu: states.iter().map(|s| s.mu().clone()).collect(),
    }
}

pub fn state_kkt(
    prob: &DistributedProblem,
    mode: Mode,
    states: &[AgentState],
) -> Result<KktResidual> {
    kkt_residual(prob, &multiplier_estimate(mode, states))
}

fn make_sample(
    prob: &DistributedProblem,
    cfg: &SimConfig,
    step: usize,
    t: f64,
    states: &[AgentState],
    derivs: &[AgentDerivative],
    signals: &[Vec<EdgeSignal>],
) -> Result<Sample> {
    let agents = states
        .iter()
        .zip(derivs)
        .zip(prob.locals())
        .map(|((s, d), local)| AgentSample {
            x: s.x().clone(),
            xi: s.xi().clone(),
            lambda: s.lambda().clone(),
            mu: s.mu().clone(),
            rho: s.rho().to_vec(),
            nu: d.nu.clone(),
            zeta: dynamics::constraint_force(local, s),
        })
        .collect();
    let edges = if cfg.log_edges {
        signals
            .iter()
            .enumerate()
            .flat_map(|(i, row)| {
                row.iter().map(move |sig| EdgeSample {
                    agent: i,
                    peer: sig.peer,
                    r: sig.r(),
                    p: sig.p.clone(),
                    s_in: sig.s_in.clone(),
                    s_out: sig.s_out.clone(),
                })
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(Sample {
        step,
        t,
        agents,
        edges,
        kkt: state_kkt(prob, cfg.mode, states)?,
        consensus_error: consensus_error(prob, states),
    })
}

pub fn simulate(prob: &DistributedProblem, cfg: &SimConfig) -> Result<TrajectoryLog> {
    simulate_observed(prob, cfg, &mut [])
}

/// Runs the configured duration, feeding every grid point to `observers`.
///
/// Guard trips (lambda sign, non-finite values, magnitude above the
/// divergence bound) end the run early and are reported in `abort`.
pub fn simulate_observed(
    prob: &DistributedProblem,
    cfg: &SimConfig,
    observers: &mut [&mut dyn Observer],
) -> Result<TrajectoryLog> {
    let mut sim = Simulator::new(prob, cfg)?;
    let steps = cfg.steps();
    let h = cfg.step;
    let mut log = TrajectoryLog {
        mode: cfg.mode,
        step_size: h,
        samples: Vec::new(),
        final_states: Vec::new(),
        final_time: 0.0,
        steps_completed: 0,
        abort: None,
        series: Vec::new(),
    };
    for k in 0..=steps {
        let t = k as f64 * h;
        let signals = sim.signals()?;
        let derivs = sim.derivatives(&signals)?;
        if k % cfg.log_every == 0 || k == steps {
            log.samples.push(make_sample(
                prob,
                cfg,
                k,
                t,
                sim.states(),
                &derivs,
                &signals,
            )?);
        }
        if k == steps {
            let view = StepView {
                step: k,
                t,
                h,
                states: sim.states(),
                derivs: &derivs,
                signals: &signals,
                next: None,
            };
            for o in observers.iter_mut() {
                o.observe(&view);
            }
            break;
        }
        let next = match sim.integrate(&derivs) {
            Ok(next) => next,
            Err((agent, Error::LambdaGuard { component, value })) => {
                log.abort = Some(Abort::LambdaGuard {
                    step: k,
                    t,
                    agent,
                    component,
                    value,
                });
                break;
            }
            Err((_, e)) => return Err(e),
        };
        let view = StepView {
            step: k,
            t,
            h,
            states: sim.states(),
            derivs: &derivs,
            signals: &signals,
            next: Some(&next),
        };
        for o in observers.iter_mut() {
            o.observe(&view);
        }
        if next.iter().any(|s| !s.is_finite()) {
            log.abort = Some(Abort::NonFinite {
                step: k + 1,
                t: t + h,
            });
            break;
        }
        let magnitude = next.iter().map(|s| s.max_abs()).fold(0.0, f64::max);
        if magnitude > cfg.divergence_bound {
            log.abort = Some(Abort::Diverged {
                step: k + 1,
                t: t + h,
                magnitude,
            });
            break;
        }
        sim.commit(&signals, next);
        log.steps_completed = k + 1;
    }
    log.final_time = log.steps_completed as f64 * h;
    log.final_states = sim.states().to_vec();
    Ok(log)
}
