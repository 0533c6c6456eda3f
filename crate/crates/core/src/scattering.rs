//! Wave-variable channels between neighboring agents.
//!
//! Each directed edge `i -> j` carries `s = (-p + eta r) / sqrt(2 eta)`
//! through a constant delay. The receiver closes the loop algebraically:
//! given the incoming wave and its own `(x_i, xi_i)` it solves for the
//! signal `r_ij` and effort `p_ij = E_ij (r_ij - [x_i; xi_i])`.

use nalgebra::DVector;

use crate::error::{check_dim, Error, Result};

/// `E = [[a, -a], [a, 0]] ⊗ I_n` acting on stacked `[x; xi]` vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingMatrix {
    weight: f64,
    dim: usize,
}

impl CouplingMatrix {
    pub fn new(weight: f64, dim: usize) -> Result<Self> {
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(Error::InvalidChannel(format!(
                "edge weight {weight} must be nonnegative"
            )));
        }
        Ok(Self { weight, dim })
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let n = self.dim;
        let a = self.weight;
        let mut out = DVector::zeros(2 * n);
        for k in 0..n {
            out[k] = a * (v[k] - v[n + k]);
            out[n + k] = a * v[k];
        }
        out
    }
}

fn split(v: &DVector<f64>, n: usize) -> (DVector<f64>, DVector<f64>) {
    (v.rows(0, n).into_owned(), v.rows(n, n).into_owned())
}

/// Stacks `[top; bottom]`.
pub fn stack(top: &DVector<f64>, bottom: &DVector<f64>) -> DVector<f64> {
    let n = top.len();
    let mut out = DVector::zeros(n + bottom.len());
    out.rows_mut(0, n).copy_from(top);
    out.rows_mut(n, bottom.len()).copy_from(bottom);
    out
}

/// Fixed-length FIFO of wave (or state) samples.
///
/// A call made at step `k` returns what was pushed at step `k - len`, or
/// zeros while `k < len`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayLine {
    buffer: Vec<DVector<f64>>,
    cursor: usize,
}

impl DelayLine {
    /// Buffer of `round(delay / step)` samples; at least one is required.
    pub fn new(delay: f64, step: f64, width: usize) -> Result<Self> {
        if !(step > 0.0) || !(delay >= 0.0) || !delay.is_finite() {
            return Err(Error::InvalidChannel(format!(
                "invalid delay {delay} for step {step}"
            )));
        }
        let len = (delay / step).round() as usize;
        if len == 0 {
            return Err(Error::InvalidChannel(format!(
                "delay {delay} is shorter than one step of {step}"
            )));
        }
        Ok(Self::with_len(len, width))
    }

    pub fn with_len(len: usize, width: usize) -> Self {
        assert!(len >= 1, "delay line needs at least one slot");
        Self {
            buffer: vec![DVector::zeros(width); len],
            cursor: 0,
        }
    }

    /// Delay in steps.
    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    /// Oldest sample, i.e. what the next `push_pop` will return.
    pub fn peek(&self) -> &DVector<f64> {
        &self.buffer[self.cursor]
    }

    pub fn push_pop(&mut self, sample: DVector<f64>) -> DVector<f64> {
        let out = std::mem::replace(&mut self.buffer[self.cursor], sample);
        self.cursor = (self.cursor + 1) % self.buffer.len();
        out
    }
}

/// Receiving side of one directed edge `j -> i`, owned by agent `i`.
#[derive(Debug, Clone)]
pub struct ChannelEnd {
    eta: f64,
    coupling: CouplingMatrix,
    /// Inverse of `[[a + eta, -a], [a, eta]]`, per component.
    inv: [[f64; 2]; 2],
    pub inbound: DelayLine,
}

/// Recovered signal and effort at a channel end.
#[derive(Debug, Clone, PartialEq)]
pub struct Recovered {
    pub r: DVector<f64>,
    pub p: DVector<f64>,
}

impl ChannelEnd {
    pub fn new(eta: f64, coupling: CouplingMatrix, inbound: DelayLine) -> Result<Self> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::InvalidChannel(format!(
                "eta must be positive, got {eta}"
            )));
        }
        let a = coupling.weight();
        let det = (a + eta) * eta + a * a;
        if !(det > 0.0) {
            return Err(Error::InvalidChannel("E + eta I is singular".into()));
        }
        let inv = [[eta / det, a / det], [-a / det, (a + eta) / det]];
        Ok(Self {
            eta,
            coupling,
            inv,
            inbound,
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn coupling(&self) -> &CouplingMatrix {
        &self.coupling
    }

    /// Solves `(E + eta I) r = sqrt(2 eta) s_in + E [x; xi]`, then `p = E (r - [x; xi])`.
    pub fn recover(
        &self,
        s_in: &DVector<f64>,
        x: &DVector<f64>,
        xi: &DVector<f64>,
    ) -> Result<Recovered> {
        let n = self.coupling.dim();
        check_dim("incoming wave", 2 * n, s_in.len())?;
        check_dim("local x", n, x.len())?;
        check_dim("local xi", n, xi.len())?;
        let local = stack(x, xi);
        let rhs = s_in * (2.0 * self.eta).sqrt() + self.coupling.apply(&local);
        let mut r = DVector::zeros(2 * n);
        for k in 0..n {
            let (u, w) = (rhs[k], rhs[n + k]);
            r[k] = self.inv[0][0] * u + self.inv[0][1] * w;
            r[n + k] = self.inv[1][0] * u + self.inv[1][1] * w;
        }
        let p = self.coupling.apply(&(&r - &local));
        Ok(Recovered { r, p })
    }

    /// `s_out = (-p + eta r) / sqrt(2 eta)`.
    pub fn outgoing_wave(&self, rec: &Recovered) -> DVector<f64> {
        (&rec.r * self.eta - &rec.p) / (2.0 * self.eta).sqrt()
    }

    /// `s_in = (p + eta r) / sqrt(2 eta)`; the receive-side identity.
    pub fn incoming_wave(&self, rec: &Recovered) -> DVector<f64> {
        (&rec.r * self.eta + &rec.p) / (2.0 * self.eta).sqrt()
    }

    /// Splits a stacked `r` into its `(r^x, r^xi)` halves.
    pub fn split_signal(&self, r: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        split(r, self.coupling.dim())
    }
}

/// Raw-state exchange for the delay-free and naive-delay baselines.
///
/// With no line the neighbor's current `[x_j; xi_j]` is returned; with a
/// line, the value pushed `len` steps ago (zeros before that).
pub fn direct_exchange(
    line: Option<&mut DelayLine>,
    neighbor_x: &DVector<f64>,
    neighbor_xi: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    match line {
        None => (neighbor_x.clone(), neighbor_xi.clone()),
        Some(line) => {
            let n = neighbor_x.len();
            let out = line.push_pop(stack(neighbor_x, neighbor_xi));
            split(&out, n)
        }
    }
}
