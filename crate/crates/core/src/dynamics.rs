//! Per-agent primal-dual dynamics with phase-lead compensation.
//!
//! The primal integrator is replaced by `M(s) = sum_k c_k / (s + b_k)` with
//! `b_1 = 0`, realized as `m` first-order stages `rho_k` whose sum is the
//! primal estimate `x`. Multipliers follow `lambda' = 2 lambda g(x)` and
//! `mu' = h(x)`, so `lambda` keeps its sign along the continuous flow.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::problem::LocalProblem;

/// Stage poles `b_k` and gains `c_k` of the compensator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCompensator", into = "RawCompensator")]
pub struct CompensatorParams {
    b: Vec<f64>,
    c: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCompensator {
    b: Vec<f64>,
    c: Vec<f64>,
}

impl TryFrom<RawCompensator> for CompensatorParams {
    type Error = Error;
    fn try_from(raw: RawCompensator) -> Result<Self> {
        if raw.b == [0.0] && raw.c == [1.0] {
            return Ok(Self::integrator());
        }
        Self::new(raw.b, raw.c)
    }
}

impl From<CompensatorParams> for RawCompensator {
    fn from(p: CompensatorParams) -> Self {
        Self { b: p.b, c: p.c }
    }
}

impl CompensatorParams {
    /// Phase-lead compensator: `m >= 2`, `0 = b_1 < b_2 < ... < b_m`, `c_k > 0`.
    pub fn new(b: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        if b.len() != c.len() {
            return Err(Error::InvalidCompensator(format!(
                "b has {} stages but c has {}",
                b.len(),
                c.len()
            )));
        }
        if b.len() < 2 {
            return Err(Error::InvalidCompensator(
                "phase lead needs at least two stages; use the integrator mode for m = 1".into(),
            ));
        }
        if b[0] != 0.0 {
            return Err(Error::InvalidCompensator("b_1 must be 0".into()));
        }
        if b.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(Error::InvalidCompensator(
                "b must be strictly increasing".into(),
            ));
        }
        if c.iter().any(|&ck| !(ck > 0.0) || !ck.is_finite()) {
            return Err(Error::InvalidCompensator(
                "every c_k must be positive".into(),
            ));
        }
        Ok(Self { b, c })
    }

    /// `m = 2`, `b = (0, 5)`, `c = (1, 10)`.
    pub fn phase_lead_default() -> Self {
        Self {
            b: vec![0.0, 5.0],
            c: vec![1.0, 10.0],
        }
    }

    /// Plain integrator `1/s`: the uncompensated primal-dual flow.
    pub fn integrator() -> Self {
        Self {
            b: vec![0.0],
            c: vec![1.0],
        }
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn is_integrator(&self) -> bool {
        self.b.len() == 1
    }
}

/// Scalar initial values broadcast over every component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialValues {
    pub x: f64,
    pub xi: f64,
    pub lambda: f64,
    pub mu: f64,
}

impl Default for InitialValues {
    fn default() -> Self {
        Self {
            x: 0.0,
            xi: 0.0,
            lambda: 0.01,
            mu: 0.0,
        }
    }
}

/// State of one agent. `x` is always the sum of the `rho` stages.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    rho: Vec<DVector<f64>>,
    xi: DVector<f64>,
    lambda: DVector<f64>,
    mu: DVector<f64>,
    x: DVector<f64>,
}

fn stage_sum(rho: &[DVector<f64>]) -> DVector<f64> {
    let mut x = rho[0].clone();
    for r in &rho[1..] {
        x += r;
    }
    x
}

impl AgentState {
    pub fn new(
        rho: Vec<DVector<f64>>,
        xi: DVector<f64>,
        lambda: DVector<f64>,
        mu: DVector<f64>,
    ) -> Result<Self> {
        if rho.is_empty() {
            return Err(Error::InvalidCompensator(
                "state needs at least one stage".into(),
            ));
        }
        let n = xi.len();
        for r in &rho {
            check_dim("rho stage", n, r.len())?;
        }
        let x = stage_sum(&rho);
        Ok(Self {
            rho,
            xi,
            lambda,
            mu,
            x,
        })
    }

    /// Constant initial state; `rho_1` carries `x` and the other stages start at zero.
    pub fn initial(local: &LocalProblem, comp: &CompensatorParams, init: &InitialValues) -> Self {
        let n = local.dim();
        let mut rho = vec![DVector::zeros(n); comp.stages()];
        rho[0] = DVector::from_element(n, init.x);
        Self::new(
            rho,
            DVector::from_element(n, init.xi),
            DVector::from_element(local.n_inequalities(), init.lambda),
            DVector::from_element(local.n_equalities(), init.mu),
        )
        .expect("dimensions consistent by construction")
    }

    pub fn rho(&self) -> &[DVector<f64>] {
        &self.rho
    }

    pub fn xi(&self) -> &DVector<f64> {
        &self.xi
    }

    pub fn lambda(&self) -> &DVector<f64> {
        &self.lambda
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = self.xi.amax();
        for r in &self.rho {
            m = m.max(r.amax());
        }
        if !self.lambda.is_empty() {
            m = m.max(self.lambda.amax());
        }
        if !self.mu.is_empty() {
            m = m.max(self.mu.amax());
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.rho.iter().all(|r| r.iter().all(|v| v.is_finite()))
            && self.xi.iter().all(|v| v.is_finite())
            && self.lambda.iter().all(|v| v.is_finite())
            && self.mu.iter().all(|v| v.is_finite())
    }

    fn check(&self, local: &LocalProblem, comp: &CompensatorParams) -> Result<()> {
        check_dim("compensator stages", comp.stages(), self.rho.len())?;
        check_dim("xi", local.dim(), self.xi.len())?;
        check_dim("lambda", local.n_inequalities(), self.lambda.len())?;
        check_dim("mu", local.n_equalities(), self.mu.len())
    }
}

/// What agent `i` holds about neighbor `j`: `(r_ij^x, r_ij^xi)` and `a_ij`.
#[derive(Debug, Clone, Copy)]
pub struct NeighborSignal<'a> {
    pub x: &'a DVector<f64>,
    pub xi: &'a DVector<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentDerivative {
    pub rho_dot: Vec<DVector<f64>>,
    pub xi_dot: DVector<f64>,
    pub lambda_dot: DVector<f64>,
    pub mu_dot: DVector<f64>,
    /// Compensator input, kept for diagnostics.
    pub nu: DVector<f64>,
}

/// `zeta_i = sum lambda_k^2 grad g_k(x) + sum mu_k grad h_k(x)`.
pub fn constraint_force(local: &LocalProblem, state: &AgentState) -> DVector<f64> {
    local.constraint_force(&state.x, &state.lambda, &state.mu)
}

/// `sum_j a_ij (r_ij^x - x_i)`, shared by `nu` and `xi'`.
fn consensus_pull(state: &AgentState, received: &[NeighborSignal<'_>]) -> Result<DVector<f64>> {
    let mut acc = DVector::zeros(state.x.len());
    for r in received {
        check_dim("received x", state.x.len(), r.x.len())?;
        acc.axpy(r.weight, &(r.x - &state.x), 1.0);
    }
    Ok(acc)
}

fn dual_pull(state: &AgentState, received: &[NeighborSignal<'_>]) -> Result<DVector<f64>> {
    let mut acc = DVector::zeros(state.xi.len());
    for r in received {
        check_dim("received xi", state.xi.len(), r.xi.len())?;
        acc.axpy(r.weight, &(r.xi - &state.xi), 1.0);
    }
    Ok(acc)
}

/// `nu_i = -grad f - zeta + sum a_ij (r^x - x_i) - sum a_ij (r^xi - xi_i)`.
pub fn compute_nu(
    local: &LocalProblem,
    state: &AgentState,
    received: &[NeighborSignal<'_>],
) -> Result<DVector<f64>> {
    check_dim("x", local.dim(), state.x.len())?;
    let pull = consensus_pull(state, received)?;
    let dual = dual_pull(state, received)?;
    Ok(pull - dual - local.objective().gradient(&state.x) - constraint_force(local, state))
}

pub fn derivatives(
    local: &LocalProblem,
    state: &AgentState,
    comp: &CompensatorParams,
    received: &[NeighborSignal<'_>],
) -> Result<AgentDerivative> {
    state.check(local, comp)?;
    let pull = consensus_pull(state, received)?;
    let dual = dual_pull(state, received)?;
    let nu = &pull - dual - local.objective().gradient(&state.x) - constraint_force(local, state);
    let rho_dot = state
        .rho
        .iter()
        .zip(comp.b().iter().zip(comp.c()))
        .map(|(rho, (&b, &c))| &nu * c - rho * b)
        .collect();
    let g = local.inequality_values(&state.x);
    let lambda_dot = state.lambda.component_mul(&g) * 2.0;
    let mu_dot = local.equality_values(&state.x);
    Ok(AgentDerivative {
        rho_dot,
        xi_dot: pull,
        lambda_dot,
        mu_dot,
        nu,
    })
}

/// Explicit Euler update. Fails if a positive `lambda` would reach zero or
/// below, which only happens when `1 + 2 h g <= 0`.
pub fn euler_step(state: &AgentState, deriv: &AgentDerivative, h: f64) -> Result<AgentState> {
    if !(h > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "step size must be positive, got {h}"
        )));
    }
    check_dim("rho_dot stages", state.rho.len(), deriv.rho_dot.len())?;
    let rho: Vec<DVector<f64>> = state
        .rho
        .iter()
        .zip(&deriv.rho_dot)
        .map(|(r, d)| r + d * h)
        .collect();
    let lambda = &state.lambda + &deriv.lambda_dot * h;
    for (k, (&old, &new)) in state.lambda.iter().zip(lambda.iter()).enumerate() {
        if old > 0.0 && new <= 0.0 {
            return Err(Error::LambdaGuard {
                component: k,
                value: new,
            });
        }
    }
    let x = stage_sum(&rho);
    Ok(AgentState {
        rho,
        xi: &state.xi + &deriv.xi_dot * h,
        lambda,
        mu: &state.mu + &deriv.mu_dot * h,
        x,
    })
}

/// `S^c = |rho_1 - z*|^2 / (2 c_1) + sum_{k>=2} |rho_k|^2 / (2 c_k)`.
pub fn compensator_storage(
    state: &AgentState,
    comp: &CompensatorParams,
    z_star: &DVector<f64>,
) -> f64 {
    let c = comp.c();
    let mut s = (&state.rho[0] - z_star).norm_squared() / (2.0 * c[0]);
    for (rho, &ck) in state.rho.iter().zip(c).skip(1) {
        s += rho.norm_squared() / (2.0 * ck);
    }
    s
}

/// `S^g = sum [ (l^2 - l*^2)/4 - l*^2 (ln l - ln l*)/2 ] + |mu - mu*|^2 / 2`.
///
/// The log term is dropped for components with `l* = 0`.
pub fn dual_storage(
    state: &AgentState,
    lambda_star: &DVector<f64>,
    mu_star: &DVector<f64>,
) -> Result<f64> {
    check_dim("lambda*", state.lambda.len(), lambda_star.len())?;
    check_dim("mu*", state.mu.len(), mu_star.len())?;
    let mut s = 0.0;
    for (k, (&l, &ls)) in state.lambda.iter().zip(lambda_star.iter()).enumerate() {
        s += 0.25 * (l * l - ls * ls);
        if ls != 0.0 {
            if !(l > 0.0) {
                return Err(Error::UndefinedStorage(format!(
                    "lambda component {k} is {l} while the reference is {ls}"
                )));
            }
            s -= 0.5 * ls * ls * (l.ln() - ls.ln());
        }
    }
    s += 0.5 * (&state.mu - mu_star).norm_squared();
    Ok(s)
}
