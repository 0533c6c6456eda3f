//! Classification of a finished run from its logged KKT residuals.

use std::fmt;

use serde::Serialize;

use crate::engine::log::TrajectoryLog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Converged,
    Oscillating,
    NotConverged,
    Diverged,
}

impl Verdict {
    pub fn name(&self) -> &'static str {
        match self {
            Verdict::Converged => "converged",
            Verdict::Oscillating => "oscillating",
            Verdict::NotConverged => "not_converged",
            Verdict::Diverged => "diverged",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Swing of one KKT field over the last quarter of the run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Swing {
    pub field: &'static str,
    pub min: f64,
    pub max: f64,
}

impl Swing {
    /// `(max - min) / min`; infinite when the field touches zero while moving.
    pub fn ratio(&self) -> f64 {
        let range = self.max - self.min;
        if range == 0.0 {
            0.0
        } else {
            range / self.min
        }
    }
}

/// Per-field swings over the logged samples with `t >= 3/4` of the final time.
pub fn last_quartile_swings(log: &TrajectoryLog) -> Vec<Swing> {
    let cutoff = 0.75 * log.final_time;
    let tail: Vec<_> = log.samples.iter().filter(|s| s.t >= cutoff).collect();
    let Some(first) = tail.first() else {
        return Vec::new();
    };
    first
        .kkt
        .fields()
        .iter()
        .enumerate()
        .map(|(idx, &(field, _))| {
            let values = tail.iter().map(|s| s.kkt.fields()[idx].1);
            let (min, max) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
            Swing { field, min, max }
        })
        .collect()
}

/// `diverged` if the run aborted, `converged` if every final KKT field is
/// within `tol`, `oscillating` if some field's last-quartile range exceeds
/// ten times its last-quartile minimum, otherwise `not_converged`.
pub fn classify(log: &TrajectoryLog, tol: f64) -> Verdict {
    if log.abort.is_some() {
        return Verdict::Diverged;
    }
    match log.last_sample() {
        None => Verdict::NotConverged,
        Some(s) if s.kkt.within(tol) => Verdict::Converged,
        Some(_) => {
            let swings = last_quartile_swings(log);
            if swings.iter().any(|s| s.ratio() > 10.0) {
                Verdict::Oscillating
            } else {
                Verdict::NotConverged
            }
        }
    }
}
