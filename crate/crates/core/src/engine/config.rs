use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{CompensatorParams, InitialValues};
use crate::error::{Error, Result};
use crate::graph::Network;

/// How neighbors' information reaches an agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Current neighbor states, no delay.
    NoDelay,
    /// Neighbor states delayed by `T_ji`.
    NaiveDelay,
    /// Wave variables through delayed channels.
    Scattering,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::NoDelay => "no_delay",
            Mode::NaiveDelay => "naive_delay",
            Mode::Scattering => "scattering",
        }
    }

    pub fn uses_delays(&self) -> bool {
        !matches!(self, Mode::NoDelay)
    }
}

/// Constant delay `T_ij` of every directed edge `i -> j`, in seconds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EdgeDelays {
    delays: BTreeMap<(usize, usize), f64>,
}

impl EdgeDelays {
    pub fn constant(net: &Network, delay: f64) -> Self {
        let mut delays = BTreeMap::new();
        for (i, j, _) in net.edges() {
            delays.insert((i, j), delay);
            delays.insert((j, i), delay);
        }
        Self { delays }
    }

    /// Independent uniform draws in `[min, max]`, `T_ij` then `T_ji` for each
    /// edge in lexicographic order.
    pub fn uniform(net: &Network, min: f64, max: f64, seed: u64) -> Result<Self> {
        if !(min <= max) || !min.is_finite() || !max.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "bad delay range [{min}, {max}]"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut delays = BTreeMap::new();
        for (i, j, _) in net.edges() {
            let mut draw = || {
                if min == max {
                    min
                } else {
                    rng.gen_range(min..=max)
                }
            };
            let forward = draw();
            let backward = draw();
            delays.insert((i, j), forward);
            delays.insert((j, i), backward);
        }
        Ok(Self { delays })
    }

    pub fn from_map(net: &Network, delays: BTreeMap<(usize, usize), f64>) -> Result<Self> {
        for (i, j, _) in net.edges() {
            for key in [(i, j), (j, i)] {
                if !delays.contains_key(&key) {
                    return Err(Error::InvalidConfig(format!(
                        "missing delay for edge {}->{}",
                        key.0, key.1
                    )));
                }
            }
        }
        for &(i, j) in delays.keys() {
            if i >= net.n_agents() || j >= net.n_agents() || net.weight(i, j) == 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "delay given for non-edge {i}->{j}"
                )));
            }
        }
        Ok(Self { delays })
    }

    /// Delay from `from` to `to`.
    pub fn get(&self, from: usize, to: usize) -> Option<f64> {
        self.delays.get(&(from, to)).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.delays.iter().map(|(&k, &v)| (k, v))
    }

    pub fn min(&self) -> Option<f64> {
        self.delays.values().copied().reduce(f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub step: f64,
    pub duration: f64,
    pub mode: Mode,
    /// One entry shared by all agents, or one per agent.
    pub compensators: Vec<CompensatorParams>,
    pub eta: f64,
    pub delays: EdgeDelays,
    pub initial: InitialValues,
    /// Record every `log_every`-th step (plus the first and last).
    pub log_every: usize,
    /// Abort when any state magnitude exceeds this.
    pub divergence_bound: f64,
    /// Record per-edge signals in the log.
    pub log_edges: bool,
    /// Compute agent derivatives on the rayon pool.
    pub parallel: bool,
}

impl SimConfig {
    /// The matching-benchmark defaults: `h = 1e-3`, `m = 2`, `b_2 = 5`,
    /// `c = (1, 10)`, `eta = 1`, `lambda(0) = 0.01`.
    pub fn new(mode: Mode, duration: f64) -> Self {
        Self {
            step: 1e-3,
            duration,
            mode,
            compensators: vec![CompensatorParams::phase_lead_default()],
            eta: 1.0,
            delays: EdgeDelays::default(),
            initial: InitialValues::default(),
            log_every: 1000,
            divergence_bound: 1e9,
            log_edges: true,
            parallel: false,
        }
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.step).round() as usize
    }

    pub fn compensator(&self, agent: usize) -> &CompensatorParams {
        if self.compensators.len() == 1 {
            &self.compensators[0]
        } else {
            &self.compensators[agent]
        }
    }

    pub fn validate(&self, net: &Network) -> Result<()> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "step must be positive, got {}",
                self.step
            )));
        }
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "duration must be nonnegative, got {}",
                self.duration
            )));
        }
        if self.log_every == 0 {
            return Err(Error::InvalidConfig("log_every must be at least 1".into()));
        }
        if !(self.eta > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        if !(self.initial.lambda > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "initial lambda must be positive, got {}",
                self.initial.lambda
            )));
        }
        let n = net.n_agents();
        if self.compensators.len() != 1 && self.compensators.len() != n {
            return Err(Error::InvalidConfig(format!(
                "{} compensators for {n} agents",
                self.compensators.len()
            )));
        }
        if self.mode.uses_delays() {
            for (i, j, _) in net.edges() {
                for (from, to) in [(i, j), (j, i)] {
                    let t = self.delays.get(from, to).ok_or_else(|| {
                        Error::InvalidConfig(format!("missing delay for edge {from}->{to}"))
                    })?;
                    if (t / self.step).round() < 1.0 {
                        return Err(Error::InvalidConfig(format!(
                            "delay {t} of edge {from}->{to} is shorter than the step {}",
                            self.step
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}
