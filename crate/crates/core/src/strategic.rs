//! Finite-horizon strategic measures on finite models.
//!
//! A strategic measure of horizon `N` is stored as a sparse table over
//! trajectories `((x_0,a_0), ..., (x_N,a_N))` carrying positive mass. Action
//! entries are indices into the admissible list of the state; an index past
//! the end of that list denotes an inadmissible pair, which only hand-built
//! tables can contain.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::criteria::{push_forward, stage_marginals, MarginalSequence};
use crate::error::{Error, Result};
use crate::mdp::{FiniteMdp, PROB_TOL};
use crate::policy::{uniform_row, HistoryPolicy, Kernel, MarkovPolicy, Policy};
use crate::scalar::Scalar;

/// Default cap on the number of table entries.
pub const TABLE_CAP: usize = 1 << 26;

pub type Trajectory = Vec<(usize, usize)>;

#[derive(Debug, Clone, PartialEq)]
pub struct StrategicMeasure<T = f64> {
    pub horizon: usize,
    pub p0: Vec<T>,
    pub joint: BTreeMap<Trajectory, T>,
}

impl<T: Scalar> StrategicMeasure<T> {
    /// Wraps a hand-built table; zero entries are dropped.
    pub fn from_table(horizon: usize, p0: Vec<T>, joint: impl IntoIterator<Item = (Trajectory, T)>) -> Self {
        let joint = joint.into_iter().filter(|(_, p)| !p.is_zero()).collect();
        StrategicMeasure { horizon, p0, joint }
    }

    pub fn total_mass(&self) -> T {
        self.joint.values().fold(T::zero(), |a, p| a + p.clone())
    }

    /// Marginal of `(x_n, a_n)` over the admissible pairs of `mdp`;
    /// inadmissible entries are dropped.
    pub fn stage_marginal(&self, n: usize, mdp: &FiniteMdp<T>) -> Vec<Vec<T>> {
        let mut out: Vec<Vec<T>> = (0..mdp.n_states()).map(|x| vec![T::zero(); mdp.n_actions(x)]).collect();
        for (path, p) in &self.joint {
            let (x, a) = path[n];
            if x < out.len() && a < out[x].len() {
                out[x][a] = out[x][a].clone() + p.clone();
            }
        }
        out
    }

    /// Mass of each trajectory prefix of `len` pairs.
    pub fn prefix_masses(&self, len: usize) -> BTreeMap<&[(usize, usize)], T> {
        let mut out: BTreeMap<&[(usize, usize)], T> = BTreeMap::new();
        for (path, p) in &self.joint {
            let e = out.entry(&path[..len]).or_insert_with(T::zero);
            *e = e.clone() + p.clone();
        }
        out
    }
}

/// Exact joint law of `((x_0,a_0), ..., (x_N,a_N))` under `policy` from
/// `p0`, by forward recursion.
pub fn strategic_measure<T: Scalar>(
    mdp: &FiniteMdp<T>,
    policy: &Policy<T>,
    p0: &[T],
    horizon: usize,
) -> Result<StrategicMeasure<T>> {
    strategic_measure_capped(mdp, policy, p0, horizon, TABLE_CAP)
}

pub fn strategic_measure_capped<T: Scalar>(
    mdp: &FiniteMdp<T>,
    policy: &Policy<T>,
    p0: &[T],
    horizon: usize,
    cap: usize,
) -> Result<StrategicMeasure<T>> {
    let n = mdp.n_states();
    if p0.len() != n {
        return Err(Error::DimensionMismatch { what: "initial distribution", expected: n, found: p0.len() });
    }
    policy.validate(mdp)?;
    let decide = |past: &[(usize, usize)], x: usize| -> Result<Vec<T>> {
        let dist = policy.action_dist(past, x, mdp.n_actions(x)).into_owned();
        crate::policy::check_action_dist(&dist, mdp.n_actions(x), x)?;
        Ok(dist)
    };
    let mut level: Vec<(Trajectory, T)> = Vec::new();
    for (x, px) in p0.iter().enumerate() {
        if px.is_zero() {
            continue;
        }
        for (a, w) in decide(&[], x)?.into_iter().enumerate() {
            if !w.is_zero() {
                level.push((vec![(x, a)], px.clone() * w));
            }
        }
    }
    for _ in 0..horizon {
        let mut next = Vec::new();
        for (path, p) in &level {
            let &(x, a) = path.last().expect("nonempty path");
            for (y, q) in mdp.row(x, a) {
                let py = p.clone() * q.clone();
                for (b, w) in decide(path, *y)?.into_iter().enumerate() {
                    if w.is_zero() {
                        continue;
                    }
                    if next.len() >= cap {
                        return Err(Error::TableTooLarge { entries: next.len() + 1, cap });
                    }
                    let mut longer = path.clone();
                    longer.push((*y, b));
                    next.push((longer, py.clone() * w));
                }
            }
        }
        level = next;
    }
    if level.len() > cap {
        return Err(Error::TableTooLarge { entries: level.len(), cap });
    }
    let mut joint = BTreeMap::new();
    for (path, p) in level {
        let e = joint.entry(path).or_insert_with(T::zero);
        *e = e.clone() + p;
    }
    Ok(StrategicMeasure { horizon, p0: p0.to_vec(), joint })
}

/// Outcome of the characterization test, with the first failure found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Characterization {
    pub total_mass_ok: bool,
    pub admissible: bool,
    pub initial_law_ok: bool,
    pub kernel_consistent: bool,
    pub failure: Option<String>,
}

impl Characterization {
    pub fn holds(&self) -> bool {
        self.total_mass_ok && self.admissible && self.initial_law_ok && self.kernel_consistent
    }
}

/// A table is the strategic measure of some policy iff it has mass one,
/// charges only admissible pairs, has `p0` as the law of `x_0`, and the law
/// of each next state given the past factors through `q`:
/// `p(h_n, x_{n+1} = y) = p(h_n) q(y | x_n, a_n)`.
pub fn check_characterization<T: Scalar>(p: &StrategicMeasure<T>, mdp: &FiniteMdp<T>) -> Characterization {
    let mut report = Characterization {
        total_mass_ok: true,
        admissible: true,
        initial_law_ok: true,
        kernel_consistent: true,
        failure: None,
    };
    let close = |a: &T, b: &T| (a.clone() - b.clone()).near_zero(PROB_TOL);
    let n = mdp.n_states();
    if !close(&p.total_mass(), &T::one()) {
        report.total_mass_ok = false;
        report.failure = Some(format!("total mass {}", p.total_mass()));
        return report;
    }
    for (path, m) in &p.joint {
        if *m < T::zero() || path.len() != p.horizon + 1 {
            report.total_mass_ok = false;
            report.failure = Some(format!("malformed entry {:?}", path));
            return report;
        }
        if let Some((stage, &(x, a))) = path.iter().enumerate().find(|(_, (x, a))| *x >= n || *a >= mdp.n_actions(*x)) {
            report.admissible = false;
            report.failure = Some(format!("inadmissible pair ({}, {}) at stage {}", x, a, stage));
            return report;
        }
    }
    if p.p0.len() != n {
        report.initial_law_ok = false;
        report.failure = Some("initial distribution has the wrong length".into());
        return report;
    }
    let mut x0 = vec![T::zero(); n];
    for (path, m) in &p.joint {
        x0[path[0].0] = x0[path[0].0].clone() + m.clone();
    }
    if let Some(x) = (0..n).find(|&x| !close(&x0[x], &p.p0[x])) {
        report.initial_law_ok = false;
        report.failure = Some(format!("law of x_0 differs from p0 at state {}", x));
        return report;
    }
    for len in 1..=p.horizon {
        let heads = p.prefix_masses(len);
        let mut next: HashMap<(&[(usize, usize)], usize), T> = HashMap::new();
        for (path, m) in &p.joint {
            let e = next.entry((&path[..len], path[len].0)).or_insert_with(T::zero);
            *e = e.clone() + m.clone();
        }
        for (head, mass) in &heads {
            let &(x, a) = head.last().expect("nonempty prefix");
            for y in 0..n {
                let got = next.get(&(*head, y)).cloned().unwrap_or_else(T::zero);
                let want = mass.clone() * mdp.prob(x, a, y);
                if !close(&got, &want) {
                    report.kernel_consistent = false;
                    report.failure = Some(format!(
                        "after {:?} the next state {} has mass {} instead of {}",
                        head, y, got, want
                    ));
                    return report;
                }
            }
        }
    }
    report
}

/// A history policy whose strategic measure from `p.p0` is `p`, for any
/// table passing [`check_characterization`]. Each decision is the
/// conditional law of the action given the past and the current state;
/// histories without mass get the uniform kernel.
pub fn extract_policy<T: Scalar>(p: &StrategicMeasure<T>, mdp: &FiniteMdp<T>) -> Result<HistoryPolicy<T>> {
    let check = check_characterization(p, mdp);
    if !check.holds() {
        return Err(Error::InvalidArgument(format!(
            "table is not a strategic measure: {}",
            check.failure.unwrap_or_default()
        )));
    }
    let mut table: HashMap<(Vec<(usize, usize)>, usize), Vec<T>> = HashMap::new();
    for len in 1..=p.horizon + 1 {
        for (prefix, m) in p.prefix_masses(len) {
            let (past, &(x, a)) = (&prefix[..len - 1], prefix.last().expect("nonempty prefix"));
            let row = table
                .entry((past.to_vec(), x))
                .or_insert_with(|| vec![T::zero(); mdp.n_actions(x)]);
            row[a] = row[a].clone() + m;
        }
    }
    for row in table.values_mut() {
        let s = crate::scalar::sum(row);
        row.iter_mut().for_each(|v| *v = v.clone() / s.clone());
    }
    let counts = (0..mdp.n_states()).map(|x| mdp.n_actions(x)).collect();
    Ok(HistoryPolicy::from_table(p.horizon, counts, table))
}

/// `gamma(x,a) = rho2(a|x) rho1(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelDecomposition<T = f64> {
    pub rho1: Vec<T>,
    pub rho2: Kernel<T>,
}

impl<T: Scalar> KernelDecomposition<T> {
    pub fn recompose(&self) -> Vec<Vec<T>> {
        self.rho1
            .iter()
            .zip(&self.rho2.rows)
            .map(|(m, row)| row.iter().map(|p| m.clone() * p.clone()).collect())
            .collect()
    }
}

/// State marginal and action conditional of a joint law on pairs; states
/// without mass get the uniform kernel.
pub fn decompose_joint<T: Scalar>(gamma: &[Vec<T>]) -> Result<KernelDecomposition<T>> {
    if gamma.iter().flatten().any(|v| *v < T::zero()) {
        return Err(Error::InvalidArgument("joint law has a negative entry".into()));
    }
    let total = gamma.iter().flatten().fold(T::zero(), |a, v| a + v.clone());
    if !(total - T::one()).near_zero(PROB_TOL) {
        return Err(Error::InvalidArgument("joint law does not sum to 1".into()));
    }
    let rho1: Vec<T> = gamma.iter().map(|r| crate::scalar::sum(r)).collect();
    let rows = gamma
        .iter()
        .zip(&rho1)
        .map(|(r, m)| {
            if m.is_zero() {
                uniform_row(r.len())
            } else {
                r.iter().map(|v| v.clone() / m.clone()).collect()
            }
        })
        .collect();
    Ok(KernelDecomposition { rho1, rho2: Kernel::new(rows) })
}

/// Markov policy with the same `(x_n, a_n)` marginals as `policy` at every
/// stage up to `horizon`: stage `n` uses the conditional law of `a_n` given
/// `x_n`. After `horizon` the uniform kernel is used.
pub fn markovize<T: Scalar>(
    mdp: &FiniteMdp<T>,
    policy: &Policy<T>,
    p0: &[T],
    horizon: usize,
) -> Result<MarkovPolicy<T>> {
    let seq = stage_marginals(mdp, policy, p0, horizon + 1)?;
    let prefix = seq
        .gamma
        .iter()
        .map(|g| decompose_joint(g).map(|d| d.rho2))
        .collect::<Result<Vec<_>>>()?;
    Ok(MarkovPolicy::eventually_stationary(prefix, Kernel::uniform(mdp)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction<T = f64> {
    pub kernel: Kernel<T>,
    /// Largest entrywise gap between the marginals the kernel induces and
    /// the input, over all input stages.
    pub mismatch: f64,
    /// The kernel reproduces every input stage (exactly for rationals,
    /// within `1e-12` for floats).
    pub reproduces: bool,
}

/// Stationary kernel read off the geometric average of the input marginals,
/// `sum_{k<L} 2^{-k-1} gamma_k` renormalized over the prefix, and how well
/// it reproduces them.
pub fn semi_stationary_reconstruct<T: Scalar>(
    mdp: &FiniteMdp<T>,
    gammas: &MarginalSequence<T>,
) -> Result<Reconstruction<T>> {
    if gammas.is_empty() {
        return Err(Error::InvalidArgument("empty marginal sequence".into()));
    }
    gammas.check_consistency(mdp)?;
    let mut avg: Vec<Vec<T>> = gammas.gamma[0].iter().map(|r| vec![T::zero(); r.len()]).collect();
    let mut weight = T::one();
    let half = T::from_ratio(1, 2);
    let mut total = T::zero();
    for g in &gammas.gamma {
        weight = weight * half.clone();
        total = total + weight.clone();
        for (u, v) in avg.iter_mut().flatten().zip(g.iter().flatten()) {
            *u = u.clone() + weight.clone() * v.clone();
        }
    }
    avg.iter_mut().flatten().for_each(|v| *v = v.clone() / total.clone());
    let kernel = decompose_joint(&avg)?.rho2;
    let mut d = gammas.p0.clone();
    let mut worst = T::zero();
    for g in &gammas.gamma {
        let induced: Vec<Vec<T>> = d
            .iter()
            .zip(&kernel.rows)
            .map(|(m, row)| row.iter().map(|p| m.clone() * p.clone()).collect())
            .collect();
        for (u, v) in induced.iter().flatten().zip(g.iter().flatten()) {
            let gap = (u.clone() - v.clone()).abs();
            if gap > worst {
                worst = gap;
            }
        }
        d = push_forward(mdp, &induced);
    }
    Ok(Reconstruction { kernel, mismatch: worst.to_f64(), reproduces: worst.near_zero(PROB_TOL) })
}
