//! Lyapunov and passivity diagnostics evaluated along simulated runs.
//!
//! All storage functions are measured against a [`ReferencePoint`], a
//! numerical member of the generalized KKT set, normally the end state of a
//! converged delay-free run.

use nalgebra::DVector;

use crate::dynamics::{self, AgentState, CompensatorParams};
use crate::engine::config::{Mode, SimConfig};
use crate::engine::{multiplier_estimate, Observer, StepView};
use crate::error::{check_dim, Error, Result};
use crate::problem::{kkt_residual, DistributedProblem, KktResidual, PrimalDualPoint};
use crate::scattering::stack;

/// A fixed point `(x*, xi*, lambda*, mu*)` with `x*_i = z*` for every agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePoint {
    pub z: DVector<f64>,
    pub xi: Vec<DVector<f64>>,
    pub lambda: Vec<DVector<f64>>,
    pub mu: Vec<DVector<f64>>,
}

/// Equilibrium quantities of the channel on edge `(i, j)` seen from `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeReference {
    /// `a_ij [xi_i* - xi_j*; 0]`
    pub p: DVector<f64>,
    /// `[z*; xi_i* + xi_j*]`
    pub r: DVector<f64>,
    /// `(p* - eta r*) / sqrt(2 eta)`
    pub gamma: DVector<f64>,
    /// `(p* + eta r*) / sqrt(2 eta)`
    pub delta: DVector<f64>,
}

impl ReferencePoint {
    /// Takes `z*` as the agents' mean estimate and the multipliers as they are.
    /// States from a scattering run have their `xi` halved first.
    pub fn from_states(mode: Mode, states: &[AgentState]) -> Self {
        let point = multiplier_estimate(mode, states);
        let mut z = DVector::zeros(point.x[0].len());
        for x in &point.x {
            z += x;
        }
        z /= point.x.len() as f64;
        Self {
            z,
            xi: point.xi,
            lambda: point.lambda,
            mu: point.mu,
        }
    }

    pub fn as_point(&self) -> PrimalDualPoint {
        PrimalDualPoint {
            x: vec![self.z.clone(); self.xi.len()],
            xi: self.xi.clone(),
            lambda: self.lambda.clone(),
            mu: self.mu.clone(),
        }
    }

    pub fn kkt(&self, prob: &DistributedProblem) -> Result<KktResidual> {
        kkt_residual(prob, &self.as_point())
    }

    pub fn edge(&self, i: usize, j: usize, weight: f64, eta: f64) -> EdgeReference {
        let n = self.z.len();
        let p = stack(&((&self.xi[i] - &self.xi[j]) * weight), &DVector::zeros(n));
        let r = stack(&self.z, &(&self.xi[i] + &self.xi[j]));
        let scale = 1.0 / (2.0 * eta).sqrt();
        let gamma = (&p - &r * eta) * scale;
        let delta = (&p + &r * eta) * scale;
        EdgeReference { p, r, gamma, delta }
    }
}

/// `V = sum S^g_i + sum S^c_i + |xi - xi*|^2 / 2`.
pub fn lyapunov_v(
    prob: &DistributedProblem,
    states: &[AgentState],
    reference: &ReferencePoint,
    cfg: &SimConfig,
) -> Result<f64> {
    check_dim("agent states", prob.n_agents(), states.len())?;
    let mut v = 0.0;
    for (i, s) in states.iter().enumerate() {
        v += dynamics::compensator_storage(s, cfg.compensator(i), &reference.z);
        v += dynamics::dual_storage(s, &reference.lambda[i], &reference.mu[i])?;
        v += 0.5 * (s.xi() - &reference.xi[i]).norm_squared();
    }
    Ok(v)
}

/// `S_i = S^c_i + S^g_i + |xi_i - 2 xi_i*|^2 / 2` for agents behind wave channels.
pub fn agent_storage(
    state: &AgentState,
    comp: &CompensatorParams,
    reference: &ReferencePoint,
    i: usize,
) -> Result<f64> {
    Ok(dynamics::compensator_storage(state, comp, &reference.z)
        + dynamics::dual_storage(state, &reference.lambda[i], &reference.mu[i])?
        + 0.5 * (state.xi() - &reference.xi[i] * 2.0).norm_squared())
}

/// Running storage of every wave channel, integrated by the rectangle rule.
#[derive(Debug, Clone)]
pub struct WaveStorage {
    edges: Vec<WaveEdge>,
    h: f64,
}

#[derive(Debug, Clone)]
struct WaveEdge {
    i: usize,
    j: usize,
    gamma: DVector<f64>,
    delta: DVector<f64>,
    /// Discretized `T_ij` and `T_ji`.
    t_ij: f64,
    t_ji: f64,
    integral: f64,
}

impl WaveStorage {
    /// Delays are rounded to whole steps as the channels do.
    pub fn new(
        prob: &DistributedProblem,
        cfg: &SimConfig,
        reference: &ReferencePoint,
    ) -> Result<Self> {
        let h = cfg.step;
        let mut edges = Vec::new();
        for (i, j, a) in prob.net().edges() {
            let steps = |from, to| -> Result<f64> {
                let t = cfg.delays.get(from, to).ok_or_else(|| {
                    Error::InvalidConfig(format!("missing delay for edge {from}->{to}"))
                })?;
                Ok((t / h).round() * h)
            };
            let er = reference.edge(i, j, a, cfg.eta);
            edges.push(WaveEdge {
                i,
                j,
                gamma: er.gamma,
                delta: er.delta,
                t_ij: steps(i, j)?,
                t_ji: steps(j, i)?,
                integral: 0.0,
            });
        }
        Ok(Self { edges, h })
    }

    fn wave<'a>(
        view: &'a StepView<'_>,
        agent: usize,
        peer: usize,
    ) -> (&'a DVector<f64>, &'a DVector<f64>) {
        let sig = view.signals[agent]
            .iter()
            .find(|s| s.peer == peer)
            .expect("edge present in signals");
        (
            sig.s_in.as_ref().expect("scattering mode"),
            sig.s_out.as_ref().expect("scattering mode"),
        )
    }

    /// Adds one rectangle of width `h` using the waves at `view.t`.
    pub fn accumulate(&mut self, view: &StepView<'_>) {
        for e in &mut self.edges {
            let (in_ij, out_ij) = Self::wave(view, e.i, e.j);
            let (in_ji, out_ji) = Self::wave(view, e.j, e.i);
            let integrand = (out_ij + &e.gamma).norm_squared() - (in_ji + &e.gamma).norm_squared()
                + (out_ji - &e.delta).norm_squared()
                - (in_ij - &e.delta).norm_squared();
            e.integral += integrand * self.h;
        }
    }

    /// `V_ij = integral / 2 + T_ij |gamma*|^2 / 2 + T_ji |delta*|^2 / 2`, summed over edges.
    pub fn total(&self) -> f64 {
        self.edges
            .iter()
            .map(|e| {
                0.5 * e.integral
                    + 0.5 * e.t_ij * e.gamma.norm_squared()
                    + 0.5 * e.t_ji * e.delta.norm_squared()
            })
            .sum()
    }
}

/// `V_bar = sum S_i + sum V_ij`.
pub fn lyapunov_vbar(
    prob: &DistributedProblem,
    states: &[AgentState],
    reference: &ReferencePoint,
    cfg: &SimConfig,
    waves: &WaveStorage,
) -> Result<f64> {
    check_dim("agent states", prob.n_agents(), states.len())?;
    let mut v = waves.total();
    for (i, s) in states.iter().enumerate() {
        v += agent_storage(s, cfg.compensator(i), reference, i)?;
    }
    Ok(v)
}

/// Samples `V` (delay-free modes) or `V_bar` (scattering) on a coarse grid.
pub struct LyapunovMonitor<'a> {
    prob: &'a DistributedProblem,
    cfg: &'a SimConfig,
    reference: &'a ReferencePoint,
    every: usize,
    waves: Option<WaveStorage>,
    pub series: Vec<(f64, f64)>,
    pub error: Option<Error>,
}

impl<'a> LyapunovMonitor<'a> {
    /// `interval` is the sampling period in seconds.
    pub fn new(
        prob: &'a DistributedProblem,
        cfg: &'a SimConfig,
        reference: &'a ReferencePoint,
        interval: f64,
    ) -> Result<Self> {
        let waves = match cfg.mode {
            Mode::Scattering => Some(WaveStorage::new(prob, cfg, reference)?),
            _ => None,
        };
        Ok(Self {
            prob,
            cfg,
            reference,
            every: ((interval / cfg.step).round() as usize).max(1),
            waves,
            series: Vec::new(),
            error: None,
        })
    }

    pub fn name(&self) -> &'static str {
        if self.waves.is_some() {
            "lyapunov_vbar"
        } else {
            "lyapunov_v"
        }
    }
}

impl Observer for LyapunovMonitor<'_> {
    fn observe(&mut self, view: &StepView<'_>) {
        if self.error.is_some() {
            return;
        }
        if view.step.is_multiple_of(self.every) || view.next.is_none() {
            let value = match &self.waves {
                Some(w) => lyapunov_vbar(self.prob, view.states, self.reference, self.cfg, w),
                None => lyapunov_v(self.prob, view.states, self.reference, self.cfg),
            };
            match value {
                Ok(v) => self.series.push((view.t, v)),
                Err(e) => self.error = Some(e),
            }
        }
        if let Some(w) = &mut self.waves {
            if view.next.is_some() {
                w.accumulate(view);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityReport {
    pub samples: usize,
    pub slack: f64,
    /// Largest `V[k+1] - V[k]` and the time it starts at.
    pub max_increase: f64,
    pub at: f64,
    pub holds: bool,
}

/// Non-increase test with per-sample allowance `slack`.
pub fn check_monotone(series: &[(f64, f64)], slack: f64) -> MonotonicityReport {
    let mut max_increase = f64::NEG_INFINITY;
    let mut at = 0.0;
    for w in series.windows(2) {
        let d = w[1].1 - w[0].1;
        if d > max_increase {
            max_increase = d;
            at = w[0].0;
        }
    }
    MonotonicityReport {
        samples: series.len(),
        slack,
        max_increase,
        at,
        holds: series.len() < 2 || max_increase <= slack,
    }
}

/// Worst normalized excess of one storage-rate inequality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    /// `max (dS/h - supply) / (1 + |S|)` over steps.
    pub worst: f64,
    pub agent: usize,
    pub t: f64,
}

impl Default for Violation {
    fn default() -> Self {
        Self {
            worst: f64::NEG_INFINITY,
            agent: 0,
            t: 0.0,
        }
    }
}

impl Violation {
    fn update(&mut self, excess: f64, agent: usize, t: f64) {
        if excess > self.worst {
            *self = Self {
                worst: excess,
                agent,
                t,
            };
        }
    }

    pub fn holds(&self, tol: f64) -> bool {
        self.worst <= tol
    }
}

/// Raw and curvature-corrected results for one storage-rate inequality.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RateCheck {
    /// Plain forward difference `(S(t + h) - S(t)) / h` against the supply at `t`.
    pub raw: Violation,
    /// Same, after removing the second-order remainder of `S` along the
    /// Euler increment, so only the first-order rate is compared.
    pub corrected: Violation,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PassivityReport {
    /// Compensator and primal dynamics: supply `(x - z*)^T (phi - phi*)`.
    pub compensator: RateCheck,
    /// Multiplier dynamics: supply `(zeta - zeta*)^T (x - z*)`.
    pub dual: RateCheck,
    /// Whole agent behind wave channels: supply `sum_j rbar^T pbar` (scattering only).
    pub agent: Option<RateCheck>,
    pub steps: usize,
    pub error: Option<Error>,
}

impl PassivityReport {
    /// True when every corrected check is within `tol`.
    pub fn holds(&self, tol: f64) -> bool {
        self.error.is_none()
            && self.compensator.corrected.holds(tol)
            && self.dual.corrected.holds(tol)
            && self.agent.is_none_or(|a| a.corrected.holds(tol))
    }

    pub fn worst_raw(&self) -> f64 {
        let mut w = self.compensator.raw.worst.max(self.dual.raw.worst);
        if let Some(a) = &self.agent {
            w = w.max(a.raw.worst);
        }
        w
    }

    pub fn worst_corrected(&self) -> f64 {
        let mut w = self
            .compensator
            .corrected
            .worst
            .max(self.dual.corrected.worst);
        if let Some(a) = &self.agent {
            w = w.max(a.corrected.worst);
        }
        w
    }
}

/// `S(y) - S(x) - grad S(x)^T (y - x)` for the compensator storage.
fn compensator_remainder(before: &AgentState, after: &AgentState, comp: &CompensatorParams) -> f64 {
    before
        .rho()
        .iter()
        .zip(after.rho())
        .zip(comp.c())
        .map(|((r0, r1), &c)| (r1 - r0).norm_squared() / (2.0 * c))
        .sum()
}

/// Second-order remainder of the multiplier storage along `before -> after`.
fn dual_remainder(before: &AgentState, after: &AgentState, lambda_star: &DVector<f64>) -> f64 {
    let mut r = 0.5 * (after.mu() - before.mu()).norm_squared();
    for ((&l0, &l1), &ls) in before
        .lambda()
        .iter()
        .zip(after.lambda().iter())
        .zip(lambda_star.iter())
    {
        let d = l1 - l0;
        r += 0.25 * d * d;
        if ls != 0.0 {
            r -= 0.5 * ls * ls * ((l1 / l0).ln() - d / l0);
        }
    }
    r
}

/// Per-agent storage values and supply rates at one instant.
#[derive(Debug, Clone)]
struct StorageSnapshot {
    compensator: f64,
    dual: f64,
    agent: f64,
    compensator_supply: f64,
    dual_supply: f64,
    agent_supply: f64,
}

/// Finite-difference checks of the per-agent storage-rate inequalities.
///
/// Each step `[t, t + h]` yields a forward-difference rate of every storage,
/// compared with the supply rate at `t`. The raw difference carries an
/// `O(h |x'|^2)` curvature term from the Euler step, which is reported but
/// also removed exactly in the corrected variant.
pub struct PassivityMonitor<'a> {
    prob: &'a DistributedProblem,
    cfg: &'a SimConfig,
    reference: &'a ReferencePoint,
    edge_refs: Vec<Vec<EdgeReference>>,
    pub report: PassivityReport,
}

impl<'a> PassivityMonitor<'a> {
    pub fn new(
        prob: &'a DistributedProblem,
        cfg: &'a SimConfig,
        reference: &'a ReferencePoint,
    ) -> Result<Self> {
        let edge_refs = (0..prob.n_agents())
            .map(|i| {
                Ok(prob
                    .net()
                    .neighbors(i)?
                    .into_iter()
                    .map(|(j, a)| reference.edge(i, j, a, cfg.eta))
                    .collect())
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            prob,
            cfg,
            reference,
            edge_refs,
            report: PassivityReport {
                agent: (cfg.mode == Mode::Scattering).then(RateCheck::default),
                ..Default::default()
            },
        })
    }

    fn storages(&self, i: usize, s: &AgentState) -> Result<(f64, f64, f64)> {
        let comp = self.cfg.compensator(i);
        Ok((
            dynamics::compensator_storage(s, comp, &self.reference.z),
            dynamics::dual_storage(s, &self.reference.lambda[i], &self.reference.mu[i])?,
            agent_storage(s, comp, self.reference, i)?,
        ))
    }

    fn snapshot(&self, view: &StepView<'_>, i: usize) -> Result<StorageSnapshot> {
        let z = &self.reference.z;
        let local = &self.prob.locals()[i];
        let s = &view.states[i];
        let xbar = s.x() - z;
        let phi = &view.derivs[i].nu + local.objective().gradient(s.x());
        let phi_star = local.objective().gradient(z);
        let zeta = dynamics::constraint_force(local, s);
        let zeta_star = local.constraint_force(z, &self.reference.lambda[i], &self.reference.mu[i]);
        let mut agent_supply = 0.0;
        for (sig, er) in view.signals[i].iter().zip(&self.edge_refs[i]) {
            agent_supply += (sig.r() - &er.r).dot(&(&sig.p - &er.p));
        }
        let (compensator, dual, agent) = self.storages(i, s)?;
        Ok(StorageSnapshot {
            compensator,
            dual,
            agent,
            compensator_supply: xbar.dot(&(phi - phi_star)),
            dual_supply: (zeta - zeta_star).dot(&xbar),
            agent_supply,
        })
    }

    fn check_step(&mut self, view: &StepView<'_>, next: &[AgentState]) -> Result<()> {
        let h = view.h;
        let t = view.t;
        for (i, s1) in next.iter().enumerate() {
            let now = self.snapshot(view, i)?;
            let (comp1, dual1, agent1) = self.storages(i, s1)?;
            let s0 = &view.states[i];
            let comp_rem = compensator_remainder(s0, s1, self.cfg.compensator(i));
            let dual_rem = dual_remainder(s0, s1, &self.reference.lambda[i]);
            let xi_rem = 0.5 * (s1.xi() - s0.xi()).norm_squared();

            let check =
                |c: &mut RateCheck, before: f64, after: f64, remainder: f64, supply: f64| {
                    let scale = 1.0 + before.abs().max(after.abs());
                    c.raw.update(((after - before) / h - supply) / scale, i, t);
                    c.corrected
                        .update(((after - before - remainder) / h - supply) / scale, i, t);
                };
            check(
                &mut self.report.compensator,
                now.compensator,
                comp1,
                comp_rem,
                now.compensator_supply,
            );
            check(
                &mut self.report.dual,
                now.dual,
                dual1,
                dual_rem,
                now.dual_supply,
            );
            if let Some(a) = &mut self.report.agent {
                check(
                    a,
                    now.agent,
                    agent1,
                    comp_rem + dual_rem + xi_rem,
                    now.agent_supply,
                );
            }
        }
        self.report.steps += 1;
        Ok(())
    }
}

impl Observer for PassivityMonitor<'_> {
    fn observe(&mut self, view: &StepView<'_>) {
        if self.report.error.is_some() {
            return;
        }
        if let Some(next) = view.next {
            if let Err(e) = self.check_step(view, next) {
                self.report.error = Some(e);
            }
        }
    }
}
