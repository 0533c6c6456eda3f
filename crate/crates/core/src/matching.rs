//! Robot-to-target matching benchmark and its exhaustive oracle.
//!
//! The assignment LP `min sum_lk z_lk |w_l - q_k|` over doubly stochastic
//! `z` is split across `N` agents: agent `l` owns the cost of row `l`, the
//! row-`l` and column-`l` sum constraints and nonnegativity of row `l`.
//! Every agent estimates the full `N*M` vector, indexed `l * M + k`.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Network;
use crate::problem::{make_affine, make_linear_nonneg_bound, DistributedProblem, LocalProblem};

/// Largest size the permutation oracle accepts.
pub const MAX_ORACLE_SIZE: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct MatchingInstance {
    robots: Vec<[f64; 2]>,
    targets: Vec<[f64; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PositionRow {
    kind: String,
    id: usize,
    px: f64,
    py: f64,
}

impl MatchingInstance {
    pub fn new(robots: Vec<[f64; 2]>, targets: Vec<[f64; 2]>) -> Result<Self> {
        if robots.is_empty() || targets.is_empty() {
            return Err(Error::Matching(
                "need at least one robot and one target".into(),
            ));
        }
        if robots
            .iter()
            .chain(&targets)
            .any(|p| !p[0].is_finite() || !p[1].is_finite())
        {
            return Err(Error::Matching("positions must be finite".into()));
        }
        Ok(Self { robots, targets })
    }

    /// `n` robots and `n` targets uniform in `[0, area]^2`.
    pub fn random<R: Rng>(n: usize, area: f64, rng: &mut R) -> Result<Self> {
        if !(area > 0.0) {
            return Err(Error::Matching(format!(
                "area must be positive, got {area}"
            )));
        }
        let mut draw = || [rng.gen_range(0.0..area), rng.gen_range(0.0..area)];
        let robots = (0..n).map(|_| draw()).collect();
        let targets = (0..n).map(|_| draw()).collect();
        Self::new(robots, targets)
    }

    pub fn robots(&self) -> &[[f64; 2]] {
        &self.robots
    }

    pub fn targets(&self) -> &[[f64; 2]] {
        &self.targets
    }

    pub fn n_robots(&self) -> usize {
        self.robots.len()
    }

    pub fn n_targets(&self) -> usize {
        self.targets.len()
    }

    pub fn distance(&self, l: usize, k: usize) -> f64 {
        let (w, q) = (self.robots[l], self.targets[k]);
        (w[0] - q[0]).hypot(w[1] - q[1])
    }

    pub fn distances(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_robots(), self.n_targets(), |l, k| {
            self.distance(l, k)
        })
    }

    /// Reads rows `kind,id,px,py` with `kind` in `{robot, target}`.
    pub fn read_csv<R: Read>(reader: R) -> anyhow::Result<Self> {
        let mut robots = Vec::new();
        let mut targets = Vec::new();
        for row in csv::Reader::from_reader(reader).deserialize() {
            let row: PositionRow = row?;
            let list = match row.kind.as_str() {
                "robot" => &mut robots,
                "target" => &mut targets,
                other => anyhow::bail!("unknown kind {other:?}; expected robot or target"),
            };
            list.push((row.id, [row.px, row.py]));
        }
        let order = |mut v: Vec<(usize, [f64; 2])>, what: &str| -> anyhow::Result<Vec<[f64; 2]>> {
            v.sort_by_key(|(id, _)| *id);
            for (expected, (id, _)) in v.iter().enumerate() {
                anyhow::ensure!(
                    *id == expected,
                    "{what} ids must be 0..n without gaps, found {id}"
                );
            }
            Ok(v.into_iter().map(|(_, p)| p).collect())
        };
        Ok(Self::new(
            order(robots, "robot")?,
            order(targets, "target")?,
        )?)
    }

    pub fn read_csv_path(path: &Path) -> anyhow::Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| anyhow::anyhow!("cannot open instance {}: {e}", path.display()))?;
        Self::read_csv(file)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for (kind, list) in [("robot", &self.robots), ("target", &self.targets)] {
            for (id, p) in list.iter().enumerate() {
                w.serialize(PositionRow {
                    kind: kind.to_string(),
                    id,
                    px: p[0],
                    py: p[1],
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Index of `z_lk` in the stacked decision vector.
pub fn var_index(n_targets: usize, l: usize, k: usize) -> usize {
    l * n_targets + k
}

pub fn build_distributed_problem(
    inst: &MatchingInstance,
    net: &Network,
) -> Result<DistributedProblem> {
    let n = inst.n_robots();
    let m = inst.n_targets();
    if n != m {
        return Err(Error::Matching(format!(
            "need as many robots as targets, got {n} and {m}"
        )));
    }
    if net.n_agents() != n {
        return Err(Error::Matching(format!(
            "network has {} agents for {n} robots",
            net.n_agents()
        )));
    }
    let dim = n * m;
    let mut locals = Vec::with_capacity(n);
    for l in 0..n {
        let mut cost = DVector::zeros(dim);
        let mut row = DVector::zeros(dim);
        let mut col = DVector::zeros(dim);
        for k in 0..m {
            cost[var_index(m, l, k)] = inst.distance(l, k);
            row[var_index(m, l, k)] = 1.0;
        }
        for j in 0..n {
            col[var_index(m, j, l)] = 1.0;
        }
        let inequalities = (0..m)
            .map(|k| make_linear_nonneg_bound(dim, var_index(m, l, k)))
            .collect::<Result<Vec<_>>>()?;
        locals.push(LocalProblem::new(
            make_affine(cost, 0.0),
            inequalities,
            vec![make_affine(row, -1.0), make_affine(col, -1.0)],
        )?);
    }
    DistributedProblem::new(net.clone(), locals)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `perm[l]` is the target matched to robot `l`.
    pub perm: Vec<usize>,
    pub cost: f64,
}

/// Best and runner-up assignment costs found by full enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub best: Assignment,
    /// `None` when `N = 1`.
    pub runner_up_cost: Option<f64>,
}

impl OracleResult {
    pub fn gap(&self) -> f64 {
        self.runner_up_cost
            .map_or(f64::INFINITY, |c| c - self.best.cost)
    }
}

/// Advances `perm` to the next permutation in lexicographic order.
fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

pub fn assignment_cost(inst: &MatchingInstance, perm: &[usize]) -> f64 {
    perm.iter()
        .enumerate()
        .map(|(l, &k)| inst.distance(l, k))
        .sum()
}

pub fn enumerate_assignments(inst: &MatchingInstance) -> Result<OracleResult> {
    let n = inst.n_robots();
    if n != inst.n_targets() {
        return Err(Error::Matching("oracle needs a square instance".into()));
    }
    if n > MAX_ORACLE_SIZE {
        return Err(Error::Matching(format!(
            "oracle enumerates n! permutations; n = {n} exceeds {MAX_ORACLE_SIZE}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = Assignment {
        cost: assignment_cost(inst, &perm),
        perm: perm.clone(),
    };
    let mut runner_up: Option<f64> = None;
    while next_permutation(&mut perm) {
        let cost = assignment_cost(inst, &perm);
        if cost < best.cost {
            runner_up = Some(best.cost);
            best = Assignment {
                perm: perm.clone(),
                cost,
            };
        } else if runner_up.is_none_or(|r| cost < r) {
            runner_up = Some(cost);
        }
    }
    Ok(OracleResult {
        best,
        runner_up_cost: runner_up,
    })
}

/// Globally optimal permutation; ties go to the lexicographically smallest.
pub fn brute_force_optimal(inst: &MatchingInstance) -> Result<Assignment> {
    enumerate_assignments(inst).map(|r| r.best)
}

/// Samples instances from `seed` until the optimum beats the runner-up by
/// more than `min_gap`. Returns the instance and the number of draws used.
pub fn unique_instance(
    seed: u64,
    n: usize,
    area: f64,
    min_gap: f64,
) -> Result<(MatchingInstance, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 1..=1000 {
        let inst = MatchingInstance::random(n, area, &mut rng)?;
        if enumerate_assignments(&inst)?.gap() > min_gap {
            return Ok((inst, attempt));
        }
    }
    Err(Error::Matching(
        "no instance with a unique optimum in 1000 draws".into(),
    ))
}

/// Reads an assignment from one agent's estimate by row-wise argmax.
///
/// Fails when two rows pick the same column or a chosen entry is below 1/2.
pub fn extract_assignment(x: &DVector<f64>, n: usize) -> Result<Vec<usize>> {
    if n == 0 || x.len() != n * n {
        return Err(Error::Matching(format!(
            "estimate of length {} is not {n}x{n}",
            x.len()
        )));
    }
    let mut perm = Vec::with_capacity(n);
    let mut taken = vec![false; n];
    for l in 0..n {
        let mut best_k = 0;
        for k in 1..n {
            if x[var_index(n, l, k)] > x[var_index(n, l, best_k)] {
                best_k = k;
            }
        }
        let v = x[var_index(n, l, best_k)];
        if !(v >= 0.5) {
            return Err(Error::Matching(format!(
                "row {l} has no entry above 1/2 (max {v})"
            )));
        }
        if taken[best_k] {
            return Err(Error::Matching(format!("column {best_k} chosen twice")));
        }
        taken[best_k] = true;
        perm.push(best_k);
    }
    Ok(perm)
}

/// Permutation matrix of `perm`, flattened row-major.
pub fn permutation_vector(perm: &[usize]) -> DVector<f64> {
    let n = perm.len();
    let mut v = DVector::zeros(n * n);
    for (l, &k) in perm.iter().enumerate() {
        v[var_index(n, l, k)] = 1.0;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{kkt_residual, PrimalDualPoint};

    #[test]
    fn single_robot_problem() {
        let inst = MatchingInstance::new(vec![[0.0, 0.0]], vec![[3.0, 4.0]]).unwrap();
        let prob = build_distributed_problem(&inst, &Network::ring(1, 4.0).unwrap()).unwrap();
        let local = &prob.locals()[0];
        assert_eq!(local.n_inequalities(), 1);
        assert_eq!(local.n_equalities(), 2);
        let one = DVector::from_element(1, 1.0);
        assert_eq!(local.objective().value(&one), 5.0);
        assert_eq!(local.equality_values(&one), DVector::from_element(2, 0.0));
        assert_eq!(
            local.inequality_values(&one),
            DVector::from_element(1, -1.0)
        );
        let best = brute_force_optimal(&inst).unwrap();
        assert_eq!(
            best,
            Assignment {
                perm: vec![0],
                cost: 5.0
            }
        );
    }

    #[test]
    fn identity_is_optimal_for_coincident_positions() {
        let inst =
            MatchingInstance::new(vec![[0.0, 0.0], [1.0, 0.0]], vec![[0.0, 0.0], [1.0, 0.0]])
                .unwrap();
        assert_eq!(
            inst.distances(),
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])
        );
        let best = brute_force_optimal(&inst).unwrap();
        assert_eq!(best.perm, vec![0, 1]);
        assert_eq!(best.cost, 0.0);

        // the identity permutation matrix is a KKT point of the distributed LP
        let net = Network::ring(2, 1.0).unwrap();
        let prob = build_distributed_problem(&inst, &net).unwrap();
        let mut p = PrimalDualPoint::zeros(&prob);
        p.x = vec![permutation_vector(&best.perm); 2];
        let r = kkt_residual(&prob, &p).unwrap();
        assert_eq!(r.consensus, 0.0);
        assert_eq!(r.primal_eq, 0.0);
        assert_eq!(r.primal_ineq, 0.0);
    }

    #[test]
    fn rejects_unbalanced_and_mismatched() {
        let inst = MatchingInstance::new(vec![[0.0, 0.0]], vec![[0.0, 0.0], [1.0, 1.0]]).unwrap();
        assert!(build_distributed_problem(&inst, &Network::ring(1, 1.0).unwrap()).is_err());
        assert!(brute_force_optimal(&inst).is_err());
        let sq = MatchingInstance::new(vec![[0.0, 0.0]; 2], vec![[1.0, 1.0]; 2]).unwrap();
        assert!(build_distributed_problem(&sq, &Network::ring(3, 1.0).unwrap()).is_err());
        let big = MatchingInstance::new(vec![[0.0, 0.0]; 10], vec![[1.0, 1.0]; 10]).unwrap();
        assert!(brute_force_optimal(&big).is_err());
    }

    #[test]
    fn lexicographic_tie_break() {
        // all assignments cost the same
        let inst = MatchingInstance::new(vec![[0.0, 0.0]; 3], vec![[1.0, 0.0]; 3]).unwrap();
        let r = enumerate_assignments(&inst).unwrap();
        assert_eq!(r.best.perm, vec![0, 1, 2]);
        assert_eq!(r.gap(), 0.0);
    }

    #[test]
    fn permutation_enumeration_is_complete() {
        let mut perm: Vec<usize> = (0..5).collect();
        let mut count = 1;
        while next_permutation(&mut perm) {
            count += 1;
        }
        assert_eq!(count, 120);
        assert_eq!(perm, vec![4, 3, 2, 1, 0]);
    }

    /// Independent re-scan: recursive enumeration of all permutations.
    fn min_by_recursion(inst: &MatchingInstance) -> f64 {
        fn go(inst: &MatchingInstance, l: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            let n = used.len();
            if l == n {
                *best = best.min(acc);
                return;
            }
            for k in 0..n {
                if !used[k] {
                    used[k] = true;
                    go(inst, l + 1, used, acc + inst.distance(l, k), best);
                    used[k] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        go(inst, 0, &mut vec![false; inst.n_robots()], 0.0, &mut best);
        best
    }

    #[test]
    fn oracle_is_optimal_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..100 {
            let n = 1 + trial % 6;
            let inst = MatchingInstance::random(n, 100.0, &mut rng).unwrap();
            let best = brute_force_optimal(&inst).unwrap();
            assert_eq!(assignment_cost(&inst, &best.perm), best.cost);
            let rescan = min_by_recursion(&inst);
            assert!(best.cost <= rescan, "{} > {}", best.cost, rescan);
            assert!((best.cost - rescan).abs() < 1e-9);
        }
    }

    #[test]
    fn extraction_cases() {
        let perm = vec![2, 0, 1];
        assert_eq!(
            extract_assignment(&permutation_vector(&perm), 3).unwrap(),
            perm
        );
        let flat = DVector::from_element(9, 1.0 / 3.0);
        assert!(extract_assignment(&flat, 3).is_err());
        // argmax ties resolve to the lowest column and then collide
        let mut v = DVector::zeros(4);
        v[0] = 0.9;
        v[2] = 0.9;
        assert!(extract_assignment(&v, 2).is_err());
        assert!(extract_assignment(&DVector::zeros(3), 2).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let inst = MatchingInstance::random(4, 100.0, &mut rng).unwrap();
        let mut buf = Vec::new();
        inst.write_csv(&mut buf).unwrap();
        assert_eq!(MatchingInstance::read_csv(buf.as_slice()).unwrap(), inst);
        let bad = "kind,id,px,py\nrobot,0,1,2\ndrone,0,1,2\n";
        assert!(MatchingInstance::read_csv(bad.as_bytes()).is_err());
    }

    #[test]
    fn unique_instance_has_a_gap() {
        let (inst, _) = unique_instance(1, 5, 100.0, 1e-6).unwrap();
        assert!(enumerate_assignments(&inst).unwrap().gap() > 1e-6);
    }
}
