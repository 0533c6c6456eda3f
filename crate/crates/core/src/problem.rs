//! Local convex programs, the generalized Lagrangian and KKT residuals.
//!
//! Every agent `i` holds an objective `f_i`, convex inequalities `g_i(x) <= 0`
//! and affine equalities `h_i(x) = 0` over a shared decision space of
//! dimension `n`. The inequality multipliers enter the Lagrangian squared,
//! so no projection is needed to keep the effective multiplier nonnegative.
//!
//! Slater's condition and the existence of a finite optimum are assumed,
//! not checked. Only first derivatives are ever evaluated.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_dim, Error, Result};
use crate::graph::Network;

/// A real-valued function of an `n`-vector with an analytic gradient.
///
/// Implementations must be free of interior mutability so one instance can be
/// evaluated from several threads at once.
pub trait ScalarFunction: Debug + Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn is_affine(&self) -> bool;
    fn declared_convex(&self) -> bool;
}

pub type SharedFunction = Arc<dyn ScalarFunction>;

/// `c^T x + d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    c: DVector<f64>,
    d: f64,
}

impl Affine {
    pub fn coefficients(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn offset(&self) -> f64 {
        self.d
    }
}

impl ScalarFunction for Affine {
    fn dim(&self) -> usize {
        self.c.len()
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        self.c.dot(x) + self.d
    }
    fn gradient(&self, _x: &DVector<f64>) -> DVector<f64> {
        self.c.clone()
    }
    fn is_affine(&self) -> bool {
        true
    }
    fn declared_convex(&self) -> bool {
        true
    }
}

/// `1/2 x^T Q x + c^T x + d` with `Q` symmetric positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    q: DMatrix<f64>,
    c: DVector<f64>,
    d: f64,
}

impl ScalarFunction for Quadratic {
    fn dim(&self) -> usize {
        self.c.len()
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x) + self.d
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.q * x + &self.c
    }
    fn is_affine(&self) -> bool {
        false
    }
    fn declared_convex(&self) -> bool {
        true
    }
}

pub fn make_affine(c: DVector<f64>, d: f64) -> SharedFunction {
    Arc::new(Affine { c, d })
}

pub fn make_quadratic(q: DMatrix<f64>, c: DVector<f64>, d: f64) -> Result<SharedFunction> {
    let n = c.len();
    if q.nrows() != n || q.ncols() != n {
        return Err(Error::InvalidFunction(format!(
            "Q is {}x{} but c has length {n}",
            q.nrows(),
            q.ncols()
        )));
    }
    let scale = 1.0 + q.amax();
    if (&q - q.transpose()).amax() > 1e-12 * scale {
        return Err(Error::InvalidFunction("Q is not symmetric".into()));
    }
    if n > 0 {
        let min_eig = SymmetricEigen::new(q.clone()).eigenvalues.min();
        if min_eig < -1e-10 * scale {
            return Err(Error::InvalidFunction(format!(
                "Q is not positive semidefinite (min eigenvalue {min_eig})"
            )));
        }
    }
    Ok(Arc::new(Quadratic { q, c, d }))
}

/// `-x_k`, so that `g(x) <= 0` encodes `x_k >= 0`.
pub fn make_linear_nonneg_bound(dim: usize, k: usize) -> Result<SharedFunction> {
    if k >= dim {
        return Err(Error::InvalidFunction(format!(
            "bound index {k} out of range for dimension {dim}"
        )));
    }
    let mut c = DVector::zeros(dim);
    c[k] = -1.0;
    Ok(make_affine(c, 0.0))
}

/// One agent's share of the problem.
#[derive(Debug, Clone)]
pub struct LocalProblem {
    objective: SharedFunction,
    inequalities: Vec<SharedFunction>,
    equalities: Vec<SharedFunction>,
    dim: usize,
}

impl LocalProblem {
    pub fn new(
        objective: SharedFunction,
        inequalities: Vec<SharedFunction>,
        equalities: Vec<SharedFunction>,
    ) -> Result<Self> {
        let dim = objective.dim();
        if !objective.declared_convex() {
            return Err(Error::InvalidProblem("objective must be convex".into()));
        }
        for (k, g) in inequalities.iter().enumerate() {
            check_dim("inequality dimension", dim, g.dim())?;
            if !g.declared_convex() {
                return Err(Error::InvalidProblem(format!(
                    "inequality {k} is not convex"
                )));
            }
        }
        for (k, h) in equalities.iter().enumerate() {
            check_dim("equality dimension", dim, h.dim())?;
            if !h.is_affine() {
                return Err(Error::InvalidProblem(format!("equality {k} is not affine")));
            }
        }
        Ok(Self {
            objective,
            inequalities,
            equalities,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn objective(&self) -> &SharedFunction {
        &self.objective
    }

    pub fn inequalities(&self) -> &[SharedFunction] {
        &self.inequalities
    }

    pub fn equalities(&self) -> &[SharedFunction] {
        &self.equalities
    }

    pub fn n_inequalities(&self) -> usize {
        self.inequalities.len()
    }

    pub fn n_equalities(&self) -> usize {
        self.equalities.len()
    }

    /// `sum_k lambda_k^2 grad g_k(x) + sum_k mu_k grad h_k(x)`.
    pub fn constraint_force(
        &self,
        x: &DVector<f64>,
        lambda: &DVector<f64>,
        mu: &DVector<f64>,
    ) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for (g, &l) in self.inequalities.iter().zip(lambda.iter()) {
            if l != 0.0 {
                out.axpy(l * l, &g.gradient(x), 1.0);
            }
        }
        for (h, &m) in self.equalities.iter().zip(mu.iter()) {
            if m != 0.0 {
                out.axpy(m, &h.gradient(x), 1.0);
            }
        }
        out
    }

    pub fn inequality_values(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.inequalities.len(),
            self.inequalities.iter().map(|g| g.value(x)),
        )
    }

    pub fn equality_values(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.equalities.len(),
            self.equalities.iter().map(|h| h.value(x)),
        )
    }
}

/// The network together with one local problem per agent.
#[derive(Debug, Clone)]
pub struct DistributedProblem {
    net: Network,
    locals: Vec<LocalProblem>,
}

impl DistributedProblem {
    pub fn new(net: Network, locals: Vec<LocalProblem>) -> Result<Self> {
        check_dim("number of local problems", net.n_agents(), locals.len())?;
        let dim = locals[0].dim();
        for l in &locals {
            check_dim("local problem dimension", dim, l.dim())?;
        }
        Ok(Self { net, locals })
    }

    pub fn net(&self) -> &Network {
        &self.net
    }

    pub fn locals(&self) -> &[LocalProblem] {
        &self.locals
    }

    pub fn n_agents(&self) -> usize {
        self.locals.len()
    }

    pub fn dim(&self) -> usize {
        self.locals[0].dim()
    }

    /// `sum_i f_i(x_i)`.
    pub fn objective_value(&self, x: &[DVector<f64>]) -> f64 {
        self.locals
            .iter()
            .zip(x)
            .map(|(l, xi)| l.objective().value(xi))
            .sum()
    }
}

/// Per-agent primal and multiplier values `(x_i, xi_i, lambda_i, mu_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDualPoint {
    pub x: Vec<DVector<f64>>,
    pub xi: Vec<DVector<f64>>,
    pub lambda: Vec<DVector<f64>>,
    pub mu: Vec<DVector<f64>>,
}

impl PrimalDualPoint {
    pub fn zeros(prob: &DistributedProblem) -> Self {
        let n = prob.dim();
        let agents = prob.n_agents();
        Self {
            x: vec![DVector::zeros(n); agents],
            xi: vec![DVector::zeros(n); agents],
            lambda: prob
                .locals()
                .iter()
                .map(|l| DVector::zeros(l.n_inequalities()))
                .collect(),
            mu: prob
                .locals()
                .iter()
                .map(|l| DVector::zeros(l.n_equalities()))
                .collect(),
        }
    }

    /// Splits stacked `col(x_1, ..., x_N)`-style vectors into agent blocks.
    pub fn from_stacked(
        prob: &DistributedProblem,
        x: &DVector<f64>,
        xi: &DVector<f64>,
        lambda: &DVector<f64>,
        mu: &DVector<f64>,
    ) -> Result<Self> {
        let n = prob.dim();
        let agents = prob.n_agents();
        check_dim("stacked x", n * agents, x.len())?;
        check_dim("stacked xi", n * agents, xi.len())?;
        let n_ineq: usize = prob.locals().iter().map(|l| l.n_inequalities()).sum();
        let n_eq: usize = prob.locals().iter().map(|l| l.n_equalities()).sum();
        check_dim("stacked lambda", n_ineq, lambda.len())?;
        check_dim("stacked mu", n_eq, mu.len())?;
        let (mut lo, mut mo) = (0, 0);
        let mut point = Self::zeros(prob);
        for (i, local) in prob.locals().iter().enumerate() {
            point.x[i] = x.rows(i * n, n).into_owned();
            point.xi[i] = xi.rows(i * n, n).into_owned();
            point.lambda[i] = lambda.rows(lo, local.n_inequalities()).into_owned();
            point.mu[i] = mu.rows(mo, local.n_equalities()).into_owned();
            lo += local.n_inequalities();
            mo += local.n_equalities();
        }
        Ok(point)
    }

    fn validate(&self, prob: &DistributedProblem) -> Result<()> {
        let agents = prob.n_agents();
        check_dim("x blocks", agents, self.x.len())?;
        check_dim("xi blocks", agents, self.xi.len())?;
        check_dim("lambda blocks", agents, self.lambda.len())?;
        check_dim("mu blocks", agents, self.mu.len())?;
        for (i, local) in prob.locals().iter().enumerate() {
            check_dim("x_i", local.dim(), self.x[i].len())?;
            check_dim("xi_i", local.dim(), self.xi[i].len())?;
            check_dim("lambda_i", local.n_inequalities(), self.lambda[i].len())?;
            check_dim("mu_i", local.n_equalities(), self.mu[i].len())?;
        }
        Ok(())
    }
}

/// `(L ⊗ I_n) x` applied block-wise: `sum_j a_ij (v_i - v_j)`.
pub fn laplacian_apply(net: &Network, v: &[DVector<f64>]) -> Vec<DVector<f64>> {
    (0..net.n_agents())
        .map(|i| {
            let mut acc = DVector::zeros(v[i].len());
            for (j, a) in net.neighbors(i).expect("index in range") {
                acc += (&v[i] - &v[j]) * a;
            }
            acc
        })
        .collect()
}

/// `sum f_i(x_i) + sum lambda_i^2 g_i(x_i) + sum mu_i h_i(x_i) - xi^T L x + 1/2 x^T L x`.
pub fn generalized_lagrangian(prob: &DistributedProblem, point: &PrimalDualPoint) -> Result<f64> {
    point.validate(prob)?;
    let lx = laplacian_apply(prob.net(), &point.x);
    let mut value = 0.0;
    for (i, local) in prob.locals().iter().enumerate() {
        let x = &point.x[i];
        value += local.objective().value(x);
        for (g, l) in local.inequalities().iter().zip(point.lambda[i].iter()) {
            value += l * l * g.value(x);
        }
        for (h, m) in local.equalities().iter().zip(point.mu[i].iter()) {
            value += m * h.value(x);
        }
        value += -point.xi[i].dot(&lx[i]) + 0.5 * x.dot(&lx[i]);
    }
    Ok(value)
}

/// Infinity-norm violations of the generalized KKT conditions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResidual {
    /// `||L x||_inf`
    pub consensus: f64,
    /// `||grad f_i + lambda_i^2 grad g_i + mu_i grad h_i + sum_j a_ij (xi_j - xi_i)||_inf`
    pub stationarity: f64,
    pub primal_eq: f64,
    pub primal_ineq: f64,
    pub comp_slack: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.consensus
            .max(self.stationarity)
            .max(self.primal_eq)
            .max(self.primal_ineq)
            .max(self.comp_slack)
    }

    pub fn within(&self, tol: f64) -> bool {
        self.max() <= tol
    }

    /// Named fields in a fixed order, as used in logs and reports.
    pub fn fields(&self) -> [(&'static str, f64); 5] {
        [
            ("consensus", self.consensus),
            ("stationarity", self.stationarity),
            ("primal_eq", self.primal_eq),
            ("primal_ineq", self.primal_ineq),
            ("comp_slack", self.comp_slack),
        ]
    }
}

pub fn kkt_residual(prob: &DistributedProblem, point: &PrimalDualPoint) -> Result<KktResidual> {
    point.validate(prob)?;
    let net = prob.net();
    let lx = laplacian_apply(net, &point.x);
    let lxi = laplacian_apply(net, &point.xi);
    let mut r = KktResidual {
        consensus: lx.iter().map(|v| v.amax()).fold(0.0, f64::max),
        ..Default::default()
    };
    for (i, local) in prob.locals().iter().enumerate() {
        let x = &point.x[i];
        // sum_j a_ij (xi_j - xi_i) = -(L xi)_i
        let station = local.objective().gradient(x)
            + local.constraint_force(x, &point.lambda[i], &point.mu[i])
            - &lxi[i];
        r.stationarity = r.stationarity.max(station.amax());
        for h in local.equalities() {
            r.primal_eq = r.primal_eq.max(h.value(x).abs());
        }
        for (g, l) in local.inequalities().iter().zip(point.lambda[i].iter()) {
            let gv = g.value(x);
            r.primal_ineq = r.primal_ineq.max(gv);
            r.comp_slack = r.comp_slack.max((l * l * gv).abs());
        }
    }
    Ok(r)
}
